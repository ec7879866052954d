use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use ndarray::{Array2, ArrayView1};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::rng::{self, tag, Rng};

/// Default number of mixture components.
pub const DEFAULT_GMM_COMPONENTS: usize = 25;
/// Component means are i.i.d. standard normal entries times this factor.
pub const GMM_MEAN_SCALE: f64 = 3.0;
/// Bernoulli rate of the sparse binary source when none is given.
pub const DEFAULT_DENSITY: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Laplace,
    Gmm,
    SparseBinary,
}

impl DataKind {
    pub fn name(self) -> &'static str {
        match self {
            DataKind::Laplace => "laplace",
            DataKind::Gmm => "gmm",
            DataKind::SparseBinary => "sparse_binary",
        }
    }
}

impl fmt::Display for DataKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DataKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "laplace" => Ok(DataKind::Laplace),
            "gmm" => Ok(DataKind::Gmm),
            "sparse_binary" | "binary" => Ok(DataKind::SparseBinary),
            other => Err(Error::UnknownStrategy {
                family: "data source",
                name: other.to_string(),
                known: sources().names().join(", "),
            }),
        }
    }
}

/// Everything needed to regenerate a dataset bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub kind: DataKind,
    pub n: usize,
    pub d_data: usize,
    pub seed: u64,
    #[serde(default = "default_components")]
    pub components: usize,
    #[serde(default = "default_density")]
    pub density: f64,
}

fn default_components() -> usize {
    DEFAULT_GMM_COMPONENTS
}

fn default_density() -> f64 {
    DEFAULT_DENSITY
}

impl DataSpec {
    pub fn new(kind: DataKind, n: usize, d_data: usize, seed: u64) -> Self {
        Self {
            kind,
            n,
            d_data,
            seed,
            components: DEFAULT_GMM_COMPONENTS,
            density: DEFAULT_DENSITY,
        }
    }

    pub fn generate(&self) -> Result<Dataset> {
        sources().get(self.kind.name())?.generate(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Array2<f64>,
    pub spec: DataSpec,
    /// Component means, `k × d_data` (gmm only).
    pub gmm_means: Option<Array2<f64>>,
    /// Component index of every row (gmm only).
    pub components: Option<Vec<usize>>,
}

impl Dataset {
    pub fn kind(&self) -> DataKind {
        self.spec.kind
    }

    pub fn seed(&self) -> u64 {
        self.spec.seed
    }

    pub fn n(&self) -> usize {
        self.samples.nrows()
    }

    pub fn d_data(&self) -> usize {
        self.samples.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.samples.row(i)
    }

    /// Copies the listed rows into a new dataset with the same metadata.
    pub fn select(&self, ids: &[usize]) -> Dataset {
        let samples = self.samples.select(ndarray::Axis(0), ids);
        let components = self.components.as_ref().map(|c| ids.iter().map(|&i| c[i]).collect());
        let mut spec = self.spec.clone();
        spec.n = ids.len();
        Dataset {
            samples,
            spec,
            gmm_means: self.gmm_means.clone(),
            components,
        }
    }
}

/// A base distribution `p_base` that can be sampled deterministically.
pub trait DataSource: Send + Sync {
    fn kind(&self) -> DataKind;
    fn generate(&self, spec: &DataSpec) -> Result<Dataset>;
}

fn check_shape(n: usize, d_data: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("n", "sample count must be at least 1"));
    }
    if d_data == 0 {
        return Err(Error::invalid("d_data", "dimension must be at least 1"));
    }
    Ok(())
}

/// Inverse-CDF draw from Laplace(0, 1).
pub(crate) fn laplace_draw(rng: &mut Rng) -> f64 {
    // u in (-1/2, 1/2); the open endpoint keeps the log finite.
    let u: f64 = rng.random::<f64>() - 0.5;
    let mag = -(1.0 - 2.0 * u.abs()).ln();
    if u < 0.0 {
        -mag
    } else {
        mag
    }
}

pub struct LaplaceSource;

impl DataSource for LaplaceSource {
    fn kind(&self) -> DataKind {
        DataKind::Laplace
    }

    fn generate(&self, spec: &DataSpec) -> Result<Dataset> {
        check_shape(spec.n, spec.d_data)?;
        let mut rng = rng::stream(spec.seed, &[tag::DATA]);
        let mut samples = Array2::zeros((spec.n, spec.d_data));
        samples.iter_mut().for_each(|x| *x = laplace_draw(&mut rng));
        Ok(Dataset {
            samples,
            spec: spec.clone(),
            gmm_means: None,
            components: None,
        })
    }
}

pub struct GmmSource;

impl GmmSource {
    /// The fixed component means for a given seed.
    pub fn means(k: usize, d_data: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng::stream(seed, &[tag::GMM_MEANS]);
        Array2::from_shape_simple_fn((k, d_data), || {
            let e: f64 = StandardNormal.sample(&mut rng);
            GMM_MEAN_SCALE * e
        })
    }
}

impl DataSource for GmmSource {
    fn kind(&self) -> DataKind {
        DataKind::Gmm
    }

    fn generate(&self, spec: &DataSpec) -> Result<Dataset> {
        check_shape(spec.n, spec.d_data)?;
        let k = spec.components;
        if k == 0 {
            return Err(Error::invalid("k", "mixture needs at least one component"));
        }
        let means = Self::means(k, spec.d_data, spec.seed);
        let mut assign_rng = rng::stream(spec.seed, &[tag::GMM_ASSIGN]);
        let components: Vec<usize> = (0..spec.n).map(|_| assign_rng.random_range(0..k)).collect();
        let mut rng = rng::stream(spec.seed, &[tag::DATA]);
        let mut samples = Array2::zeros((spec.n, spec.d_data));
        for (mut row, &c) in samples.rows_mut().into_iter().zip(&components) {
            for (x, &m) in row.iter_mut().zip(means.row(c)) {
                let e: f64 = StandardNormal.sample(&mut rng);
                *x = m + e;
            }
        }
        Ok(Dataset {
            samples,
            spec: spec.clone(),
            gmm_means: Some(means),
            components: Some(components),
        })
    }
}

pub struct SparseBinarySource;

impl DataSource for SparseBinarySource {
    fn kind(&self) -> DataKind {
        DataKind::SparseBinary
    }

    fn generate(&self, spec: &DataSpec) -> Result<Dataset> {
        check_shape(spec.n, spec.d_data)?;
        if !(spec.density > 0.0 && spec.density < 1.0) {
            return Err(Error::invalid(
                "density",
                format!("must lie in (0, 1), got {}", spec.density),
            ));
        }
        let mut rng = rng::stream(spec.seed, &[tag::DATA]);
        let mut samples = Array2::zeros((spec.n, spec.d_data));
        samples
            .iter_mut()
            .for_each(|x| *x = if rng.random::<f64>() < spec.density { 1.0 } else { 0.0 });
        Ok(Dataset {
            samples,
            spec: spec.clone(),
            gmm_means: None,
            components: None,
        })
    }
}

/// All registered base distributions, keyed by name.
pub fn sources() -> &'static Registry<dyn DataSource> {
    static REG: OnceLock<Registry<dyn DataSource>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut reg: Registry<dyn DataSource> = Registry::new("data source");
        reg.register("laplace", Box::new(LaplaceSource))
            .register("gmm", Box::new(GmmSource))
            .register("sparse_binary", Box::new(SparseBinarySource));
        reg
    })
}

pub fn sample_laplace(n: usize, d_data: usize, seed: u64) -> Result<Dataset> {
    DataSpec::new(DataKind::Laplace, n, d_data, seed).generate()
}

pub fn sample_gmm(n: usize, d_data: usize, k: usize, seed: u64) -> Result<Dataset> {
    let mut spec = DataSpec::new(DataKind::Gmm, n, d_data, seed);
    spec.components = k;
    spec.generate()
}

pub fn sample_sparse_binary(n: usize, d_data: usize, density: f64, seed: u64) -> Result<Dataset> {
    let mut spec = DataSpec::new(DataKind::SparseBinary, n, d_data, seed);
    spec.density = density;
    spec.generate()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussdiag::dagostino_pearson;

    fn column_moments(ds: &Dataset, j: usize) -> (f64, f64) {
        let col = ds.samples.column(j);
        let n = col.len() as f64;
        let mean = col.sum() / n;
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }

    #[test]
    fn laplace_moments() {
        let ds = sample_laplace(100_000, 4, 1).unwrap();
        for j in 0..4 {
            let (mean, var) = column_moments(&ds, j);
            assert!(mean.abs() < 0.03, "mean {mean}");
            assert!((var - 2.0).abs() < 0.1, "var {var}");
        }
    }

    #[test]
    fn laplace_is_deterministic() {
        let a = sample_laplace(50, 7, 11).unwrap();
        let b = sample_laplace(50, 7, 11).unwrap();
        assert_eq!(a.samples, b.samples);
        let c = sample_laplace(50, 7, 12).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn zero_sizes_rejected() {
        assert!(matches!(
            sample_laplace(0, 4, 1),
            Err(Error::InvalidArgument { arg: "n", .. })
        ));
        assert!(matches!(
            sample_laplace(4, 0, 1),
            Err(Error::InvalidArgument { arg: "d_data", .. })
        ));
        assert!(sample_gmm(4, 4, 0, 1).is_err());
    }

    #[test]
    fn single_component_gmm_is_normal_around_its_mean() {
        let ds = sample_gmm(10_000, 3, 1, 5).unwrap();
        let means = ds.gmm_means.as_ref().unwrap();
        for j in 0..3 {
            let col: Vec<f64> = ds.samples.column(j).iter().map(|x| x - means[[0, j]]).collect();
            let p = dagostino_pearson(&col).unwrap();
            assert!(p > 0.05, "coordinate {j}: p = {p}");
        }
    }

    #[test]
    fn default_gmm_configuration_accepted() {
        let ds = sample_gmm(10_000, 1024, 25, 3).unwrap();
        assert_eq!(ds.samples.dim(), (10_000, 1024));
        assert_eq!(ds.gmm_means.as_ref().unwrap().dim(), (25, 1024));
    }

    #[test]
    fn gmm_component_frequencies_are_multinomial() {
        let n = 100_000;
        let k = 25;
        let ds = sample_gmm(n, 2, k, 9).unwrap();
        let mut counts = vec![0usize; k];
        for &c in ds.components.as_ref().unwrap() {
            counts[c] += 1;
        }
        let p = 1.0 / k as f64;
        let expected = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for (c, &count) in counts.iter().enumerate() {
            assert!(
                (count as f64 - expected).abs() <= 3.0 * sigma,
                "component {c}: {count} vs {expected} ± {}",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn sparse_binary_support_and_rate() {
        let ds = sample_sparse_binary(1_000, 1_000, 0.5, 2).unwrap();
        assert!(ds.samples.iter().all(|&x| x == 0.0 || x == 1.0));
        let frac = ds.samples.sum() / 1e6;
        assert!((frac - 0.5).abs() < 0.002, "fraction {frac}");
        let ds = sample_sparse_binary(10, 1024, DEFAULT_DENSITY, 2).unwrap();
        assert_eq!(ds.d_data(), 1024);
    }

    #[test]
    fn sparse_binary_density_range() {
        for bad in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(sample_sparse_binary(4, 4, bad, 1).is_err(), "density {bad}");
        }
    }

    #[test]
    fn registry_covers_every_kind() {
        for kind in [DataKind::Laplace, DataKind::Gmm, DataKind::SparseBinary] {
            let src = sources().get(kind.name()).unwrap();
            assert_eq!(src.kind(), kind);
            assert_eq!(kind.name().parse::<DataKind>().unwrap(), kind);
        }
    }
}
