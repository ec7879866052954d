//! Augmentation mildness: the squared maximal correlation between a view and
//! its base sample, exactly for the Gaussian channel and from samples via a
//! binned singular value decomposition otherwise.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::rng::{self, tag};
use crate::synthdata::{AugmentationChannel, ChannelKind, Dataset};

pub const DEFAULT_BINS: usize = 32;
const JACKKNIFE_GROUPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HgrMethod {
    AnalyticGaussian,
    BinnedSvd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HgrEstimate {
    pub eta2: f64,
    pub method: HgrMethod,
    /// Bins actually used after merging empty quantile cells (binned only).
    pub bins: Option<usize>,
    pub stderr: f64,
    /// Amount removed when forcing the estimate into `[0, 1]`.
    pub clipped: f64,
    /// Coordinate that attained the maximum, for multivariate inputs.
    pub coordinate: Option<usize>,
}

pub fn eta2_gaussian(a: f64) -> Result<f64> {
    if !(a.abs() <= 1.0) {
        return Err(Error::invalid("a", format!("|A| must be <= 1, got {a}")));
    }
    Ok(a * a)
}

/// Squared second singular value of `diag(p)^{-1/2} P diag(q)^{-1/2}` for a
/// joint probability table, with the amount clipped to stay in `[0, 1]`.
pub fn eta2_from_joint(joint: ArrayView2<'_, f64>) -> Result<(f64, f64)> {
    let (r, c) = joint.dim();
    if r < 1 || c < 1 {
        return Err(Error::invalid("joint", "table must be non-empty"));
    }
    if joint.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid("joint", "entries must be finite and non-negative"));
    }
    let total: f64 = joint.sum();
    if !(total > 0.0) {
        return Err(Error::invalid("joint", "table has zero mass"));
    }
    let p: Vec<f64> = joint.rows().into_iter().map(|row| row.sum() / total).collect();
    let q: Vec<f64> = joint.columns().into_iter().map(|col| col.sum() / total).collect();
    if p.iter().chain(&q).any(|&m| m == 0.0) {
        return Err(Error::invalid("joint", "every row and column needs positive mass"));
    }
    if r < 2 || c < 2 {
        return Ok((0.0, 0.0));
    }
    let normalized = DMatrix::from_fn(r, c, |i, j| joint[[i, j]] / total / (p[i] * q[j]).sqrt());
    let mut sv: Vec<f64> = normalized.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let raw = sv[1] * sv[1];
    let eta2 = raw.clamp(0.0, 1.0);
    Ok((eta2, (raw - eta2).abs()))
}

/// Assigns quantile-bin labels. Tied values always share a bin, placed by
/// their mid-rank; bins left empty by ties are dropped. Returns the labels
/// and the number of distinct bins.
fn quantile_labels(x: &[f64], bins: usize) -> (Vec<usize>, usize) {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut raw = vec![0usize; n];
    let mut lo = 0;
    while lo < n {
        let mut hi = lo + 1;
        while hi < n && x[order[hi]] == x[order[lo]] {
            hi += 1;
        }
        let bin = ((bins * (lo + hi)) / (2 * n)).min(bins - 1);
        for &i in &order[lo..hi] {
            raw[i] = bin;
        }
        lo = hi;
    }
    let mut used = vec![false; bins];
    for &b in &raw {
        used[b] = true;
    }
    let mut remap = vec![0usize; bins];
    let mut next = 0;
    for (b, &u) in used.iter().enumerate() {
        if u {
            remap[b] = next;
            next += 1;
        }
    }
    if next < bins {
        log::warn!("quantile binning merged {} empty bins", bins - next);
    }
    (raw.into_iter().map(|b| remap[b]).collect(), next)
}

fn eta2_from_labels(
    a: &[usize],
    b: &[usize],
    ra: usize,
    rb: usize,
    skip: Option<(usize, usize)>,
) -> Result<(f64, f64)> {
    let mut counts = Array2::<f64>::zeros((ra, rb));
    for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
        if skip.is_some_and(|(lo, hi)| (lo..hi).contains(&i)) {
            continue;
        }
        counts[[x, y]] += 1.0;
    }
    let keep_rows: Vec<usize> = (0..ra).filter(|&i| counts.row(i).sum() > 0.0).collect();
    let keep_cols: Vec<usize> = (0..rb).filter(|&j| counts.column(j).sum() > 0.0).collect();
    let table = Array2::from_shape_fn((keep_rows.len(), keep_cols.len()), |(i, j)| {
        counts[[keep_rows[i], keep_cols[j]]]
    });
    eta2_from_joint(table.view())
}

/// Binned estimate of η₂ between scalar samples `x` and `x0`, with a
/// delete-a-group jackknife standard error.
pub fn eta2_binned(x: &[f64], x0: &[f64], bins: usize) -> Result<HgrEstimate> {
    let n = x.len();
    if x0.len() != n {
        return Err(Error::invalid("x0", "must have the same length as x"));
    }
    if bins < 2 {
        return Err(Error::invalid("bins", "need at least two bins"));
    }
    if n < 10 * bins * bins {
        return Err(Error::invalid(
            "x",
            format!("need at least {} samples for {bins} bins, got {n}", 10 * bins * bins),
        ));
    }
    if x.iter().chain(x0).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("eta2_binned input".into()));
    }
    let (la, ra) = quantile_labels(x, bins);
    let (lb, rb) = quantile_labels(x0, bins);
    let (eta2, clipped) = eta2_from_labels(&la, &lb, ra, rb, None)?;

    let groups = JACKKNIFE_GROUPS;
    let leave_out: Vec<f64> = (0..groups)
        .map(|g| eta2_from_labels(&la, &lb, ra, rb, Some((g * n / groups, (g + 1) * n / groups))).map(|r| r.0))
        .collect::<Result<_>>()?;
    let mean = leave_out.iter().sum::<f64>() / groups as f64;
    let spread: f64 = leave_out.iter().map(|v| (v - mean).powi(2)).sum();
    let stderr = ((groups - 1) as f64 / groups as f64 * spread).sqrt();

    Ok(HgrEstimate {
        eta2,
        method: HgrMethod::BinnedSvd,
        bins: Some(ra.max(rb)),
        stderr,
        clipped,
        coordinate: None,
    })
}

/// Per-coordinate binned estimates for paired matrices, reduced by the
/// maximum. The result is a lower bound on the multivariate value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateEta2 {
    pub per_coordinate: Vec<f64>,
    pub best: HgrEstimate,
}

pub fn eta2_per_coordinate(
    views: ArrayView2<'_, f64>,
    bases: ArrayView2<'_, f64>,
    bins: usize,
    coordinates: Option<&[usize]>,
) -> Result<CoordinateEta2> {
    if views.dim() != bases.dim() {
        return Err(Error::invalid("bases", "must have the same shape as views"));
    }
    let all: Vec<usize> = (0..views.ncols()).collect();
    let coords = coordinates.unwrap_or(&all);
    if coords.is_empty() || coords.iter().any(|&c| c >= views.ncols()) {
        return Err(Error::invalid("coordinates", "must be non-empty and in range"));
    }
    let mut per_coordinate = Vec::with_capacity(coords.len());
    let mut best: Option<HgrEstimate> = None;
    for &c in coords {
        let x = views.column(c).to_vec();
        let x0 = bases.column(c).to_vec();
        // A constant coordinate carries no information about the base.
        if x0.iter().all(|&v| v == x0[0]) || x.iter().all(|&v| v == x[0]) {
            per_coordinate.push(0.0);
            continue;
        }
        let mut est = eta2_binned(&x, &x0, bins)?;
        est.coordinate = Some(c);
        per_coordinate.push(est.eta2);
        if best.as_ref().is_none_or(|b| est.eta2 > b.eta2) {
            best = Some(est);
        }
    }
    let best = best.ok_or_else(|| Error::Degenerate("every coordinate is constant".into()))?;
    Ok(CoordinateEta2 { per_coordinate, best })
}

/// Ceiling `η₂ + (1 − η₂)‖m‖²` on the expected alignment.
pub fn alignment_bound(eta2: f64, mean_vector: ArrayView1<'_, f64>) -> Result<f64> {
    if !(0.0..=1.0).contains(&eta2) {
        return Err(Error::invalid("eta2", format!("must lie in [0, 1], got {eta2}")));
    }
    Ok(eta2 + (1.0 - eta2) * mean_vector.dot(&mean_vector))
}

/// Settings for estimating the mildness of a channel on a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MildnessRequest {
    pub samples: usize,
    pub bins: usize,
    /// Upper bound on the number of coordinates examined; evenly spaced.
    pub max_coordinates: usize,
    pub seed: u64,
}

impl Default for MildnessRequest {
    fn default() -> Self {
        Self {
            samples: 20_000,
            bins: DEFAULT_BINS,
            max_coordinates: 64,
            seed: 0,
        }
    }
}

/// A strategy that estimates η₂ for a channel acting on a dataset.
pub trait MildnessEstimator: Send + Sync {
    fn method(&self) -> HgrMethod;
    fn estimate(
        &self,
        dataset: &Dataset,
        channel: &AugmentationChannel,
        request: &MildnessRequest,
    ) -> Result<HgrEstimate>;
}

/// `η₂ = A²`, exact for a Gaussian base under the jitter-free mixing channel.
pub struct AnalyticGaussian;

impl MildnessEstimator for AnalyticGaussian {
    fn method(&self) -> HgrMethod {
        HgrMethod::AnalyticGaussian
    }

    fn estimate(
        &self,
        _dataset: &Dataset,
        channel: &AugmentationChannel,
        _request: &MildnessRequest,
    ) -> Result<HgrEstimate> {
        if channel.kind != ChannelKind::GaussianMix || !channel.jitter.is_off() {
            return Err(Error::invalid(
                "channel",
                "the analytic value needs a gaussian_mix channel without jitter",
            ));
        }
        Ok(HgrEstimate {
            eta2: eta2_gaussian(channel.mix_coefficient)?,
            method: HgrMethod::AnalyticGaussian,
            bins: None,
            stderr: 0.0,
            clipped: 0.0,
            coordinate: None,
        })
    }
}

/// Draws one view per sampled base row and reduces per-coordinate binned
/// estimates by their maximum.
pub struct BinnedSvd;

impl MildnessEstimator for BinnedSvd {
    fn method(&self) -> HgrMethod {
        HgrMethod::BinnedSvd
    }

    fn estimate(
        &self,
        dataset: &Dataset,
        channel: &AugmentationChannel,
        request: &MildnessRequest,
    ) -> Result<HgrEstimate> {
        channel.validate()?;
        if request.samples == 0 || request.max_coordinates == 0 {
            return Err(Error::invalid(
                "request",
                "samples and max_coordinates must be positive",
            ));
        }
        let n = request.samples;
        let d = dataset.d_data();
        let mut pick = rng::stream(request.seed, &[tag::SUBSAMPLE]);
        let ids: Vec<usize> = if n <= dataset.n() {
            rand::seq::index::sample(&mut pick, dataset.n(), n).into_vec()
        } else {
            use rand::Rng as _;
            (0..n).map(|_| pick.random_range(0..dataset.n())).collect()
        };
        let mut views = Array2::zeros((n, d));
        let mut bases = Array2::zeros((n, d));
        for (i, &id) in ids.iter().enumerate() {
            let mut r = rng::stream(request.seed, &[tag::AUGMENT, i as u64]);
            channel.view_into(dataset, id, &mut r, views.row_mut(i))?;
            bases.row_mut(i).assign(&dataset.row(id));
        }
        let step = d.div_ceil(request.max_coordinates);
        let coords: Vec<usize> = (0..d).step_by(step).collect();
        Ok(eta2_per_coordinate(views.view(), bases.view(), request.bins, Some(&coords))?.best)
    }
}

pub fn mildness_estimators() -> &'static Registry<dyn MildnessEstimator> {
    static REG: OnceLock<Registry<dyn MildnessEstimator>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut reg: Registry<dyn MildnessEstimator> = Registry::new("mildness estimator");
        reg.register("analytic_gaussian", Box::new(AnalyticGaussian))
            .register("binned_svd", Box::new(BinnedSvd));
        reg
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{sample_laplace, sample_sparse_binary};
    use ndarray::{array, Array1};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_pair(n: usize, a: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut r = rng::stream(seed, &[]);
        let x0: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
        let x = x0
            .iter()
            .map(|&b| {
                let e: f64 = StandardNormal.sample(&mut r);
                a * b + (1.0 - a * a).sqrt() * e
            })
            .collect();
        (x, x0)
    }

    #[test]
    fn analytic_values() {
        assert_eq!(eta2_gaussian(0.0).unwrap(), 0.0);
        assert_eq!(eta2_gaussian(1.0).unwrap(), 1.0);
        assert!((eta2_gaussian(0.6).unwrap() - 0.36).abs() < 1e-15);
        assert!(eta2_gaussian(1.1).is_err());
    }

    #[test]
    fn binary_symmetric_channel_exact() {
        // Brute force: for ±1-valued variables every zero-mean function is a
        // multiple of the identity, so ρ_m is the Pearson correlation 1 − 2p.
        for p in [0.05, 0.2, 0.35] {
            let joint = array![[0.5 * (1.0 - p), 0.5 * p], [0.5 * p, 0.5 * (1.0 - p)]];
            let (eta2, _) = eta2_from_joint(joint.view()).unwrap();
            let pearson = (1.0 - p) - p;
            assert!((eta2 - pearson * pearson).abs() < 1e-9);
            assert!((eta2 - (1.0 - 2.0 * p).powi(2)).abs() < 1e-9);
        }
    }

    #[test]
    fn independent_and_identical() {
        let (x, mut x0) = gaussian_pair(100_000, 0.9, 1);
        let same = eta2_binned(&x, &x, 16).unwrap();
        assert!(same.eta2 > 0.95);
        x0.shuffle(&mut rng::stream(2, &[]));
        let indep = eta2_binned(&x, &x0, 16).unwrap();
        assert!(indep.eta2 < 0.01, "{indep:?}");
    }

    #[test]
    fn gaussian_channel_calibration() {
        for (i, a) in [0.2, 0.5, 0.6, 0.8].into_iter().enumerate() {
            let (x, x0) = gaussian_pair(100_000, a, 10 + i as u64);
            let est = eta2_binned(&x, &x0, 32).unwrap();
            assert!((est.eta2 - a * a).abs() < 0.05, "A={a}: {est:?}");
            assert!(est.stderr > 0.0 && est.stderr < 0.02);
        }
    }

    #[test]
    fn too_few_samples_rejected() {
        let (x, x0) = gaussian_pair(1000, 0.5, 3);
        assert!(eta2_binned(&x, &x0, 32).is_err());
        assert!(eta2_binned(&x, &x0, 8).is_ok());
    }

    #[test]
    fn ties_merge_bins() {
        let ds = sample_sparse_binary(20_000, 4, 0.1, 4).unwrap();
        let x0 = ds.samples.column(0).to_vec();
        let est = eta2_binned(&x0, &x0, 8).unwrap();
        assert_eq!(est.bins, Some(2));
        assert!((est.eta2 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bound_arithmetic() {
        let m = Array1::from(vec![0.3, 0.4]);
        assert!((alignment_bound(1.0, m.view()).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(alignment_bound(0.3, Array1::zeros(3).view()).unwrap(), 0.3);
        let m = Array1::from(vec![0.5, 0.0]);
        assert!((alignment_bound(0.36, m.view()).unwrap() - 0.52).abs() < 1e-12);
        assert!(alignment_bound(1.5, m.view()).is_err());
    }

    #[test]
    fn data_processing_inequality() {
        // Chain X0 → X → Y with Gaussian links of strength a and b.
        let n = 100_000;
        let (x, x0) = gaussian_pair(n, 0.8, 5);
        let mut r = rng::stream(6, &[]);
        let y: Vec<f64> = x
            .iter()
            .map(|&v| {
                let e: f64 = StandardNormal.sample(&mut r);
                0.7 * v + (1.0 - 0.49f64).sqrt() * e
            })
            .collect();
        let rho = |a: &[f64], b: &[f64]| eta2_binned(a, b, 32).unwrap().eta2.sqrt();
        assert!(rho(&x0, &y) <= rho(&x0, &x) * rho(&x, &y) + 0.05);
    }

    #[test]
    fn registry_strategies() {
        let reg = mildness_estimators();
        assert_eq!(reg.names(), vec!["analytic_gaussian", "binned_svd"]);
        let ds = sample_laplace(30_000, 8, 7).unwrap();
        let ch = AugmentationChannel::gaussian_mix(0.7);
        let exact = reg
            .get("analytic_gaussian")
            .unwrap()
            .estimate(&ds, &ch, &MildnessRequest::default())
            .unwrap();
        assert!((exact.eta2 - 0.49).abs() < 1e-15);
        let binned = reg
            .get("binned_svd")
            .unwrap()
            .estimate(&ds, &ch, &MildnessRequest::default())
            .unwrap();
        assert!(binned.eta2 > 0.3 && binned.eta2 < 0.8, "{binned:?}");
        let jittered = ch.with_jitter(crate::synthdata::Jitter::LIGHT);
        assert!(reg
            .get("analytic_gaussian")
            .unwrap()
            .estimate(&ds, &jittered, &MildnessRequest::default())
            .is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]
        #[test]
        fn monotone_invariance_and_range(seed in 0u64..500, a in 0.1f64..0.9) {
            let (x, x0) = gaussian_pair(20_000, a, seed);
            let base = eta2_binned(&x, &x0, 16).unwrap();
            prop_assert!((0.0..=1.0).contains(&base.eta2));
            let warped: Vec<f64> = x.iter().map(|v| v.powi(3) + 2.0 * v).collect();
            let exp0: Vec<f64> = x0.iter().map(|v| v.exp()).collect();
            let moved = eta2_binned(&warped, &exp0, 16).unwrap();
            prop_assert!((base.eta2 - moved.eta2).abs() < 0.02);
        }
    }
}
