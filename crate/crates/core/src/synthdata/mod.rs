//! Synthetic base distributions and the augmentation channels that turn a
//! base sample into a pair of correlated views.

mod channels;
mod sources;

pub use channels::{
    augment_pair, channels, AugmentationChannel, Augmenter, BitFlip, ChannelKind, ComponentResample, GaussianMix,
    Jitter, PairBatch,
};
pub use sources::{
    sample_gmm, sample_laplace, sample_sparse_binary, sources, DataKind, DataSource, DataSpec, Dataset, GmmSource,
    LaplaceSource, SparseBinarySource, DEFAULT_DENSITY, DEFAULT_GMM_COMPONENTS, GMM_MEAN_SCALE,
};
