use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use ndarray::{Array2, ArrayViewMut1};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::sources::{DataKind, Dataset};
use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::rng::{self, tag, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    GaussianMix,
    BitFlip,
    ComponentResample,
}

impl ChannelKind {
    pub fn name(self) -> &'static str {
        match self {
            ChannelKind::GaussianMix => "gaussian_mix",
            ChannelKind::BitFlip => "bit_flip",
            ChannelKind::ComponentResample => "component_resample",
        }
    }
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ChannelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_mix" | "gaussian" => Ok(ChannelKind::GaussianMix),
            "bit_flip" => Ok(ChannelKind::BitFlip),
            "component_resample" => Ok(ChannelKind::ComponentResample),
            other => Err(Error::UnknownStrategy {
                family: "augmentation channel",
                name: other.to_string(),
                known: channels().names().join(", "),
            }),
        }
    }
}

/// Per-view perturbation applied after the channel's main transform, in the
/// order: additive Gaussian noise, coordinate dropout, multiplicative scaling
/// by `exp(N(0, log_scale_std²))` (one factor per view).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub noise_std: f64,
    pub dropout_p: f64,
    pub log_scale_std: f64,
}

impl Jitter {
    pub const OFF: Jitter = Jitter {
        noise_std: 0.0,
        dropout_p: 0.0,
        log_scale_std: 0.0,
    };

    /// Light jitter used with the Laplace experiments.
    pub const LIGHT: Jitter = Jitter {
        noise_std: 0.2,
        dropout_p: 0.1,
        log_scale_std: 0.1,
    };

    pub fn is_off(&self) -> bool {
        self.noise_std == 0.0 && self.dropout_p == 0.0 && self.log_scale_std == 0.0
    }

    fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0) || !(self.log_scale_std >= 0.0) {
            return Err(Error::invalid("jitter", "standard deviations must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.dropout_p) {
            return Err(Error::invalid("jitter.dropout_p", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Dropout and scaling; the additive noise is folded in by the channels.
    fn apply_tail(&self, rng: &mut Rng, mut out: ArrayViewMut1<f64>) {
        if self.dropout_p > 0.0 {
            for x in out.iter_mut() {
                if rng.random::<f64>() < self.dropout_p {
                    *x = 0.0;
                }
            }
        }
        if self.log_scale_std > 0.0 {
            let g: f64 = StandardNormal.sample(rng);
            let s = (self.log_scale_std * g).exp();
            out.mapv_inplace(|x| x * s);
        }
    }
}

impl Default for Jitter {
    fn default() -> Self {
        Jitter::OFF
    }
}

/// Parameters of an augmentation channel `A(· | x0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationChannel {
    pub kind: ChannelKind,
    /// Mixing coefficient `A` of the Gaussian channel.
    #[serde(default)]
    pub mix_coefficient: f64,
    #[serde(default)]
    pub jitter: Jitter,
    /// Probability that a zero entry flips to one (bit_flip only).
    #[serde(default)]
    pub flip_fraction: f64,
}

impl AugmentationChannel {
    pub fn gaussian_mix(a: f64) -> Self {
        Self {
            kind: ChannelKind::GaussianMix,
            mix_coefficient: a,
            jitter: Jitter::OFF,
            flip_fraction: 0.0,
        }
    }

    pub fn bit_flip(flip_fraction: f64) -> Self {
        Self {
            kind: ChannelKind::BitFlip,
            mix_coefficient: 0.0,
            jitter: Jitter::OFF,
            flip_fraction,
        }
    }

    pub fn component_resample() -> Self {
        Self {
            kind: ChannelKind::ComponentResample,
            mix_coefficient: 0.0,
            jitter: Jitter::OFF,
            flip_fraction: 0.0,
        }
    }

    pub fn with_jitter(mut self, jitter: Jitter) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mix_coefficient) {
            return Err(Error::invalid("mix_coefficient", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.flip_fraction) {
            return Err(Error::invalid("flip_fraction", "must lie in [0, 1]"));
        }
        self.jitter.validate()
    }

    pub fn augmenter(&self) -> Result<&'static dyn Augmenter> {
        channels().get(self.kind.name())
    }

    /// Draws one view of `dataset` row `row` into `out`.
    pub fn view_into(&self, dataset: &Dataset, row: usize, rng: &mut Rng, out: ArrayViewMut1<f64>) -> Result<()> {
        let aug = self.augmenter()?;
        if !aug.compatible(dataset.kind()) {
            return Err(incompatible(self.kind, dataset.kind()));
        }
        aug.view(dataset, row, self, rng, out);
        Ok(())
    }
}

fn incompatible(channel: ChannelKind, data: DataKind) -> Error {
    Error::invalid("channel", format!("channel `{channel}` cannot augment `{data}` data"))
}

/// One augmentation strategy. Implementations must draw all randomness from
/// the supplied generator.
pub trait Augmenter: Send + Sync {
    fn kind(&self) -> ChannelKind;
    fn compatible(&self, data: DataKind) -> bool;
    fn view(
        &self,
        dataset: &Dataset,
        row: usize,
        channel: &AugmentationChannel,
        rng: &mut Rng,
        out: ArrayViewMut1<f64>,
    );
}

/// `x = A x0 + sqrt(1 - A²) ε` followed by jitter.
pub struct GaussianMix;

impl Augmenter for GaussianMix {
    fn kind(&self) -> ChannelKind {
        ChannelKind::GaussianMix
    }

    fn compatible(&self, _data: DataKind) -> bool {
        true
    }

    fn view(
        &self,
        dataset: &Dataset,
        row: usize,
        channel: &AugmentationChannel,
        rng: &mut Rng,
        mut out: ArrayViewMut1<f64>,
    ) {
        let a = channel.mix_coefficient;
        // The mixing noise and the additive jitter noise are independent
        // centred Gaussians applied back to back, so one draw with the summed
        // variance has the same law.
        let sd = ((1.0 - a * a) + channel.jitter.noise_std.powi(2)).sqrt();
        let base = dataset.row(row);
        if sd == 0.0 {
            out.zip_mut_with(&base, |o, &x| *o = a * x);
        } else {
            out.zip_mut_with(&base, |o, &x| {
                let e: f64 = StandardNormal.sample(rng);
                *o = a * x + sd * e;
            });
        }
        channel.jitter.apply_tail(rng, out);
    }
}

/// Each zero entry independently becomes one with probability `flip_fraction`.
pub struct BitFlip;

impl Augmenter for BitFlip {
    fn kind(&self) -> ChannelKind {
        ChannelKind::BitFlip
    }

    fn compatible(&self, data: DataKind) -> bool {
        data == DataKind::SparseBinary
    }

    fn view(
        &self,
        dataset: &Dataset,
        row: usize,
        channel: &AugmentationChannel,
        rng: &mut Rng,
        mut out: ArrayViewMut1<f64>,
    ) {
        let p = channel.flip_fraction;
        let noise = channel.jitter.noise_std;
        out.zip_mut_with(&dataset.row(row), |o, &x| {
            *o = if x == 0.0 && p > 0.0 && rng.random::<f64>() < p {
                1.0
            } else {
                x
            };
            if noise > 0.0 {
                let e: f64 = StandardNormal.sample(rng);
                *o += noise * e;
            }
        });
        channel.jitter.apply_tail(rng, out);
    }
}

/// Both views are fresh draws from the base row's mixture component.
pub struct ComponentResample;

impl Augmenter for ComponentResample {
    fn kind(&self) -> ChannelKind {
        ChannelKind::ComponentResample
    }

    fn compatible(&self, data: DataKind) -> bool {
        data == DataKind::Gmm
    }

    fn view(
        &self,
        dataset: &Dataset,
        row: usize,
        channel: &AugmentationChannel,
        rng: &mut Rng,
        mut out: ArrayViewMut1<f64>,
    ) {
        // Invariant of gmm datasets: both fields are populated.
        let means = dataset.gmm_means.as_ref().expect("gmm dataset without means");
        let c = dataset.components.as_ref().expect("gmm dataset without components")[row];
        let sd = (1.0 + channel.jitter.noise_std.powi(2)).sqrt();
        out.zip_mut_with(&means.row(c), |o, &m| {
            let e: f64 = StandardNormal.sample(rng);
            *o = m + sd * e;
        });
        channel.jitter.apply_tail(rng, out);
    }
}

pub fn channels() -> &'static Registry<dyn Augmenter> {
    static REG: OnceLock<Registry<dyn Augmenter>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut reg: Registry<dyn Augmenter> = Registry::new("augmentation channel");
        reg.register("gaussian_mix", Box::new(GaussianMix))
            .register("bit_flip", Box::new(BitFlip))
            .register("component_resample", Box::new(ComponentResample));
        reg
    })
}

/// Two views for every listed base row.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub view_a: Array2<f64>,
    pub view_b: Array2<f64>,
    pub base_ids: Vec<usize>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.base_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base_ids.is_empty()
    }
}

/// Generates a positive pair for each id in `batch_ids`.
///
/// Row `i` of the batch draws view a and view b from two substreams keyed by
/// `(seed, i)`, so the result is a pure function of the arguments and the two
/// views are conditionally independent given the base row.
pub fn augment_pair(
    dataset: &Dataset,
    channel: &AugmentationChannel,
    batch_ids: &[usize],
    seed: u64,
) -> Result<PairBatch> {
    channel.validate()?;
    let aug = channel.augmenter()?;
    if !aug.compatible(dataset.kind()) {
        return Err(incompatible(channel.kind, dataset.kind()));
    }
    if let Some(&bad) = batch_ids.iter().find(|&&id| id >= dataset.n()) {
        return Err(Error::invalid(
            "batch_ids",
            format!("row {bad} out of range for {} rows", dataset.n()),
        ));
    }
    let d = dataset.d_data();
    let mut view_a = Array2::zeros((batch_ids.len(), d));
    let mut view_b = Array2::zeros((batch_ids.len(), d));
    for (i, &id) in batch_ids.iter().enumerate() {
        let mut ra = rng::stream(seed, &[tag::AUGMENT, i as u64, 0]);
        aug.view(dataset, id, channel, &mut ra, view_a.row_mut(i));
        let mut rb = rng::stream(seed, &[tag::AUGMENT, i as u64, 1]);
        aug.view(dataset, id, channel, &mut rb, view_b.row_mut(i));
    }
    Ok(PairBatch {
        view_a,
        view_b,
        base_ids: batch_ids.to_vec(),
    })
}
