//! Sampling on the unit sphere, scaled low-dimensional projections and their
//! distance to the Gaussian limit, plus quadrature for von Mises-Fisher laws.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Beta, ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::stats::{ks_sorted, normal_cdf, simpson};

const UNIT_TOL: f64 = 1e-9;
const QUADRATURE_INTERVALS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SphereLaw {
    Uniform,
    Vmf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SphereSample {
    pub points: Array2<f64>,
    pub law: SphereLaw,
    pub kappa: f64,
    pub direction: Option<Array1<f64>>,
}

impl SphereSample {
    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }
}

fn normalize_rows(points: &mut Array2<f64>) {
    for mut row in points.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row.mapv_inplace(|x| x / norm);
    }
}

pub fn sample_uniform_sphere(n: usize, d: usize, seed: u64) -> Result<SphereSample> {
    if d < 2 {
        return Err(Error::invalid("d", "the sphere needs dimension at least 2"));
    }
    let mut r = rng::stream(seed, &[tag::SPHERE]);
    let mut points = Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(&mut r));
    normalize_rows(&mut points);
    Ok(SphereSample {
        points,
        law: SphereLaw::Uniform,
        kappa: 0.0,
        direction: None,
    })
}

/// Draws from vMF(direction, kappa) with Wood's rejection scheme for the
/// cosine to the mean direction.
pub fn sample_vmf(n: usize, d: usize, kappa: f64, direction: ArrayView1<'_, f64>, seed: u64) -> Result<SphereSample> {
    if d < 2 {
        return Err(Error::invalid("d", "the sphere needs dimension at least 2"));
    }
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(Error::invalid("kappa", "must be finite and >= 0"));
    }
    if direction.len() != d || (direction.dot(&direction).sqrt() - 1.0).abs() > UNIT_TOL {
        return Err(Error::invalid("direction", "must be a unit vector of length d"));
    }
    let m = (d - 1) as f64;
    let b = m / (2.0 * kappa + (4.0 * kappa * kappa + m * m).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + m * (1.0 - x0 * x0).ln();
    let beta = Beta::new(m / 2.0, m / 2.0).map_err(|e| Error::Degenerate(e.to_string()))?;

    let mut r = rng::stream(seed, &[tag::SPHERE, 1]);
    let mut points = Array2::zeros((n, d));
    let mut tangent = Array1::<f64>::zeros(d);
    for mut row in points.rows_mut() {
        let w = loop {
            let z: f64 = beta.sample(&mut r);
            let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
            let u: f64 = r.random();
            if kappa * w + m * (1.0 - x0 * w).ln() - c >= u.ln() {
                break w;
            }
        };
        let tangent_norm = loop {
            tangent.mapv_inplace(|_| StandardNormal.sample(&mut r));
            let along = tangent.dot(&direction);
            tangent.scaled_add(-along, &direction);
            let norm = tangent.dot(&tangent).sqrt();
            if norm > 1e-12 {
                break norm;
            }
        };
        let sine = (1.0 - w * w).max(0.0).sqrt();
        row.assign(&direction);
        row.mapv_inplace(|x| x * w);
        row.scaled_add(sine / tangent_norm, &tangent);
        let norm = row.dot(&row).sqrt();
        row.mapv_inplace(|x| x / norm);
    }
    Ok(SphereSample {
        points,
        law: SphereLaw::Vmf,
        kappa,
        direction: Some(direction.to_owned()),
    })
}

fn check_projection_dims(k: usize, d: usize) -> Result<()> {
    if k == 0 || k + 4 > d {
        return Err(Error::invalid("k", format!("need 1 <= k <= d - 4, got k={k}, d={d}")));
    }
    Ok(())
}

/// First `k` coordinates of every row, scaled by `√d`.
pub fn project_scaled(points: ArrayView2<'_, f64>, k: usize) -> Result<Array2<f64>> {
    let d = points.ncols();
    check_projection_dims(k, d)?;
    Ok(points.slice(s![.., ..k]).mapv(|x| x * (d as f64).sqrt()))
}

/// Total-variation rate `2(k+3)/(d−k−3)` for a `k`-dim scaled projection.
pub fn tv_rate_bound(k: usize, d: usize) -> Result<f64> {
    check_projection_dims(k, d)?;
    Ok(2.0 * (k + 3) as f64 / (d - k - 3) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussDistance {
    /// Largest per-coordinate Kolmogorov-Smirnov distance to N(0, 1).
    pub ks: f64,
    /// Histogram total variation on the fixed grid; only for `k ≤ 2`.
    pub tv_hist: Option<f64>,
}

pub const HIST_BINS: usize = 100;
pub const HIST_RANGE: (f64, f64) = (-5.0, 5.0);

fn bin_of(x: f64) -> Option<usize> {
    let (lo, hi) = HIST_RANGE;
    if !(lo..hi).contains(&x) {
        return None;
    }
    Some((((x - lo) / (hi - lo)) * HIST_BINS as f64) as usize).map(|b| b.min(HIST_BINS - 1))
}

fn gauss_bin_masses() -> Vec<f64> {
    let (lo, hi) = HIST_RANGE;
    let width = (hi - lo) / HIST_BINS as f64;
    (0..HIST_BINS)
        .map(|b| {
            let left = lo + b as f64 * width;
            normal_cdf(left + width) - normal_cdf(left)
        })
        .collect()
}

fn histogram_tv(projected: ArrayView2<'_, f64>) -> f64 {
    let n = projected.nrows() as f64;
    let masses = gauss_bin_masses();
    let inside: f64 = masses.iter().sum();
    match projected.ncols() {
        1 => {
            let mut counts = vec![0usize; HIST_BINS];
            let mut outside = 0usize;
            for &x in projected.column(0) {
                match bin_of(x) {
                    Some(b) => counts[b] += 1,
                    None => outside += 1,
                }
            }
            let body: f64 = counts
                .iter()
                .zip(&masses)
                .map(|(&c, &p)| (c as f64 / n - p).abs())
                .sum();
            0.5 * (body + (outside as f64 / n - (1.0 - inside)).abs())
        }
        _ => {
            let mut counts = vec![0usize; HIST_BINS * HIST_BINS];
            let mut outside = 0usize;
            for row in projected.rows() {
                match (bin_of(row[0]), bin_of(row[1])) {
                    (Some(a), Some(b)) => counts[a * HIST_BINS + b] += 1,
                    _ => outside += 1,
                }
            }
            let mut body = 0.0;
            for (a, pa) in masses.iter().enumerate() {
                for (b, pb) in masses.iter().enumerate() {
                    body += (counts[a * HIST_BINS + b] as f64 / n - pa * pb).abs();
                }
            }
            0.5 * (body + (outside as f64 / n - (1.0 - inside * inside)).abs())
        }
    }
}

pub fn empirical_gauss_distance(projected: ArrayView2<'_, f64>) -> Result<GaussDistance> {
    let (n, k) = projected.dim();
    if n == 0 || k == 0 {
        return Err(Error::invalid("projected", "needs at least one row and one column"));
    }
    if n < 1000 {
        log::warn!("gauss distance from only {n} rows is unstable");
    }
    let ks = projected
        .columns()
        .into_iter()
        .map(|col| {
            let mut v = col.to_vec();
            v.sort_by(f64::total_cmp);
            ks_sorted(&v, normal_cdf)
        })
        .fold(0.0, f64::max);
    let tv_hist = (k <= 2).then(|| histogram_tv(projected));
    Ok(GaussDistance { ks, tv_hist })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_left: f64,
    pub bin_right: f64,
    pub count: u64,
}

/// Counts on the fixed grid used by the TV surrogate.
pub fn histogram(values: impl IntoIterator<Item = f64>) -> Vec<HistogramBin> {
    let (lo, hi) = HIST_RANGE;
    let width = (hi - lo) / HIST_BINS as f64;
    let mut bins: Vec<HistogramBin> = (0..HIST_BINS)
        .map(|b| HistogramBin {
            bin_left: lo + b as f64 * width,
            bin_right: lo + (b + 1) as f64 * width,
            count: 0,
        })
        .collect();
    for b in values.into_iter().filter_map(bin_of) {
        bins[b].count += 1;
    }
    bins
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltPoint {
    pub d: usize,
    pub ks: f64,
    pub tv_hist: Option<f64>,
    pub tv_bound: f64,
}

/// Draws `n` scaled `k`-dim projections of uniform points for every `d` in
/// `dims` without materializing the full rows.
///
/// A uniform point is `g/‖g‖` with `g` standard normal, so its first `k`
/// coordinates need only `g₁..g_k` and `‖g‖²`, where the remaining squared
/// norm is χ² with `d − k` degrees of freedom. The χ² parts are nested across
/// the sorted `dims` so all dimensions share one draw of `g₁..g_k`. For
/// `k = 1` the first coordinate is stratified over normal quantiles.
pub fn clt_projections(dims: &[usize], k: usize, n: usize, seed: u64) -> Result<Vec<Array2<f64>>> {
    if dims.is_empty() || n == 0 {
        return Err(Error::invalid("dims", "need at least one dimension and one row"));
    }
    for &d in dims {
        check_projection_dims(k, d)?;
    }
    let mut order: Vec<usize> = (0..dims.len()).collect();
    order.sort_by_key(|&i| dims[i]);

    let mut r = rng::stream(seed, &[tag::SPHERE, 2]);
    let mut head = Array2::<f64>::zeros((n, k));
    if k == 1 {
        let normal = Normal::standard();
        let mut col: Vec<f64> = (0..n)
            .map(|i| {
                let u: f64 = r.random();
                normal.inverse_cdf((i as f64 + u) / n as f64)
            })
            .collect();
        col.shuffle(&mut r);
        head.column_mut(0).assign(&Array1::from(col));
    } else {
        head.mapv_inplace(|_| StandardNormal.sample(&mut r));
    }
    let mut sq: Vec<f64> = head.rows().into_iter().map(|row| row.dot(&row)).collect();

    let mut out = vec![Array2::zeros((0, 0)); dims.len()];
    let mut dof_done = k;
    for &i in &order {
        let d = dims[i];
        if d > dof_done {
            let chi = ChiSquared::new((d - dof_done) as f64).map_err(|e| Error::Degenerate(e.to_string()))?;
            for s in sq.iter_mut() {
                *s += chi.sample(&mut r);
            }
            dof_done = d;
        }
        let mut proj = head.clone();
        for (mut row, &s) in proj.rows_mut().into_iter().zip(&sq) {
            let scale = (d as f64 / s).sqrt();
            row.mapv_inplace(|x| x * scale);
        }
        out[i] = proj;
    }
    Ok(out)
}

pub fn clt_study(dims: &[usize], k: usize, n: usize, seed: u64) -> Result<Vec<CltPoint>> {
    let projections = clt_projections(dims, k, n, seed)?;
    dims.iter()
        .zip(projections)
        .map(|(&d, proj)| {
            let dist = empirical_gauss_distance(proj.view())?;
            Ok(CltPoint {
                d,
                ks: dist.ks,
                tv_hist: dist.tv_hist,
                tv_bound: tv_rate_bound(k, d)?,
            })
        })
        .collect()
}

/// Log of `∫₀^π factor(cos θ) exp(log_g(cos θ)) sin^{d−2} θ dθ`, shifted by
/// the largest log-integrand before exponentiating.
fn log_polar_integral(d: usize, log_g: impl Fn(f64) -> f64, factor: impl Fn(f64) -> f64) -> f64 {
    let power = (d - 2) as f64;
    let log_w = |theta: f64| {
        let base = log_g(theta.cos());
        if power == 0.0 {
            base
        } else {
            base + power * theta.sin().ln()
        }
    };
    let steps = QUADRATURE_INTERVALS;
    let h = std::f64::consts::PI / steps as f64;
    let shift = (0..=steps)
        .map(|i| log_w(i as f64 * h))
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    let integral = simpson(
        |theta| {
            let lw = log_w(theta);
            if lw.is_finite() {
                factor(theta.cos()) * (lw - shift).exp()
            } else {
                0.0
            }
        },
        0.0,
        std::f64::consts::PI,
        steps,
    );
    shift + integral.ln()
}

/// `log E[exp(α ⟨u, e⟩)]` for `u` uniform on the sphere in `ℝ^d`.
pub fn log_mgf_uniform(d: usize, alpha: f64) -> f64 {
    log_polar_integral(d, |t| alpha * t, |_| 1.0) - log_polar_integral(d, |_| 0.0, |_| 1.0)
}

/// Mean resultant length `E⟨u, direction⟩` of vMF(κ) in `ℝ^d`.
pub fn vmf_mean_resultant(d: usize, kappa: f64) -> f64 {
    let log_num_pos = log_polar_integral(d, |t| kappa * t, |t| t.max(0.0));
    let log_num_neg = log_polar_integral(d, |t| kappa * t, |t| (-t).max(0.0));
    let log_den = log_polar_integral(d, |t| kappa * t, |_| 1.0);
    (log_num_pos - log_den).exp() - (log_num_neg - log_den).exp()
}

/// `KL(vMF(κ) ‖ uniform) = κ E[t] − log E_σ[exp(κ t)]`.
pub fn vmf_kl_to_uniform(d: usize, kappa: f64) -> f64 {
    kappa * vmf_mean_resultant(d, kappa) - log_mgf_uniform(d, kappa)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlRatioPoint {
    pub d: usize,
    pub kappa: f64,
    pub kl: f64,
    pub mean_norm: f64,
    /// `KL / ((d − 1) ‖m‖²)`.
    pub ratio: f64,
}

/// Evaluates the KL-to-mean-norm ratio over a grid of vMF laws.
pub fn kl_mean_ratio_grid(dims: &[usize], kappas: &[f64]) -> Result<Vec<KlRatioPoint>> {
    let mut out = Vec::with_capacity(dims.len() * kappas.len());
    for &d in dims {
        if d < 2 {
            return Err(Error::invalid("dims", "the sphere needs dimension at least 2"));
        }
        for &kappa in kappas {
            if !(kappa > 0.0) {
                return Err(Error::invalid("kappas", "concentrations must be positive"));
            }
            let mean_norm = vmf_mean_resultant(d, kappa);
            let kl = vmf_kl_to_uniform(d, kappa);
            out.push(KlRatioPoint {
                d,
                kappa,
                kl,
                mean_norm,
                ratio: kl / ((d - 1) as f64 * mean_norm * mean_norm),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_two_sample, mean};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn e1(d: usize) -> Array1<f64> {
        let mut v = Array1::zeros(d);
        v[0] = 1.0;
        v
    }

    #[test]
    fn uniform_moments() {
        let s = sample_uniform_sphere(100_000, 16, 1).unwrap();
        for row in s.points.rows() {
            assert!((row.dot(&row) - 1.0).abs() < 1e-9);
        }
        let m = s.points.mean_axis(ndarray::Axis(0)).unwrap();
        assert!(m.dot(&m).sqrt() < 0.02);
        for col in s.points.columns() {
            let second = col.mapv(|x| x * x).mean().unwrap();
            assert!((second - 1.0 / 16.0).abs() < 0.005);
        }
        let half = 50_000;
        let dots: Vec<f64> = (0..half)
            .map(|i| s.points.row(i).dot(&s.points.row(i + half)))
            .collect();
        assert!(mean(&dots).abs() < 0.01);
        assert!(sample_uniform_sphere(10, 1, 1).is_err());
    }

    #[test]
    fn vmf_zero_kappa_is_uniform() {
        let d = 8;
        let a = sample_vmf(100_000, d, 0.0, e1(d).view(), 3).unwrap();
        let b = sample_uniform_sphere(100_000, d, 4).unwrap();
        for j in 0..d {
            let ks = ks_two_sample(&a.points.column(j).to_vec(), &b.points.column(j).to_vec());
            assert!(ks < 0.02, "coordinate {j}: {ks}");
        }
    }

    #[test]
    fn vmf_concentrates() {
        let d = 8;
        let dir = Array1::from_elem(d, 1.0 / (d as f64).sqrt());
        let s = sample_vmf(5000, d, 1e4, dir.view(), 5).unwrap();
        let m = s.points.mean_axis(ndarray::Axis(0)).unwrap();
        let norm = m.dot(&m).sqrt();
        assert!(norm > 0.99);
        assert!((m.dot(&dir) / norm).min(1.0).acos() < 0.05);
    }

    #[test]
    fn vmf_mean_matches_quadrature() {
        let (d, kappa) = (16, 5.0);
        let s = sample_vmf(100_000, d, kappa, e1(d).view(), 6).unwrap();
        let empirical = s.points.column(0).mean().unwrap();
        let oracle = vmf_mean_resultant(d, kappa);
        assert!((empirical - oracle).abs() < 0.01, "{empirical} vs {oracle}");
    }

    #[test]
    fn quadrature_matches_bessel_ratio_in_three_dims() {
        // d = 3: mean resultant is coth κ − 1/κ and the MGF is sinh α / α.
        for kappa in [0.5f64, 2.0, 10.0] {
            let a = vmf_mean_resultant(3, kappa);
            assert!((a - (1.0 / kappa.tanh() - 1.0 / kappa)).abs() < 1e-8);
            let mgf = log_mgf_uniform(3, kappa);
            assert!((mgf - (kappa.sinh() / kappa).ln()).abs() < 1e-8);
        }
        // d = 2: the MGF is I₀(α); check against a direct series.
        let alpha: f64 = 1.5;
        let mut term = 1.0;
        let mut i0 = 1.0;
        for m in 1..30 {
            term *= (alpha / 2.0).powi(2) / (m * m) as f64;
            i0 += term;
        }
        assert!((log_mgf_uniform(2, alpha) - i0.ln()).abs() < 1e-8);
    }

    #[test]
    fn vmf_rejects_bad_direction() {
        let dir = Array1::from_elem(4, 1.0);
        assert!(sample_vmf(10, 4, 1.0, dir.view(), 0).is_err());
        assert!(sample_vmf(10, 4, -1.0, e1(4).view(), 0).is_err());
    }

    #[test]
    fn projection_moments() {
        let s = sample_uniform_sphere(100_000, 512, 7).unwrap();
        let p1 = project_scaled(s.points.view(), 1).unwrap();
        let var = p1.column(0).mapv(|x| x * x).mean().unwrap() - p1.column(0).mean().unwrap().powi(2);
        assert!((var - 1.0).abs() < 0.03);
        let p2 = project_scaled(s.points.view(), 2).unwrap();
        let cov = (&p2.column(0) * &p2.column(1)).mean().unwrap();
        assert!(cov.abs() < 0.02);
        assert!(project_scaled(s.points.view(), 512).is_err());
        assert!(project_scaled(s.points.view(), 509).is_err());
        assert!(project_scaled(s.points.view(), 508).is_ok());
    }

    #[test]
    fn rate_bound_values() {
        assert_eq!(tv_rate_bound(1, 8).unwrap(), 2.0);
        assert!((tv_rate_bound(1, 804).unwrap() - 0.01).abs() < 1e-15);
        let seq: Vec<f64> = (8..100).map(|d| tv_rate_bound(1, d).unwrap()).collect();
        assert!(seq.windows(2).all(|w| w[1] < w[0]));
        assert!(tv_rate_bound(0, 8).is_err());
        assert!(tv_rate_bound(5, 8).is_err());
    }

    #[test]
    fn gaussian_input_is_close() {
        let mut r = rng::stream(8, &[]);
        let g = Array2::from_shape_simple_fn((100_000, 1), || StandardNormal.sample(&mut r));
        let dist = empirical_gauss_distance(g.view()).unwrap();
        assert!(dist.ks < 0.01);
        assert!(dist.tv_hist.unwrap() < 0.03);
    }

    #[test]
    fn projection_improves_with_dimension() {
        let small = sample_uniform_sphere(100_000, 16, 9).unwrap();
        let large = sample_uniform_sphere(100_000, 512, 10).unwrap();
        let ks_small = empirical_gauss_distance(project_scaled(small.points.view(), 1).unwrap().view())
            .unwrap()
            .ks;
        let ks_large = empirical_gauss_distance(project_scaled(large.points.view(), 1).unwrap().view())
            .unwrap()
            .ks;
        assert!(ks_large < ks_small, "{ks_large} vs {ks_small}");
    }

    #[test]
    fn histogram_tv_within_rate_bound() {
        let proj = clt_projections(&[512], 1, 1_000_000, 11).unwrap().remove(0);
        let tv = empirical_gauss_distance(proj.view()).unwrap().tv_hist.unwrap();
        assert!(tv <= tv_rate_bound(1, 512).unwrap() + 0.01, "{tv}");
    }

    #[test]
    fn shortcut_projection_matches_direct_route() {
        for k in [1, 2] {
            let fast = clt_projections(&[16], k, 50_000, 12).unwrap().remove(0);
            let s = sample_uniform_sphere(50_000, 16, 13).unwrap();
            let direct = project_scaled(s.points.view(), k).unwrap();
            for j in 0..k {
                let ks = ks_two_sample(&fast.column(j).to_vec(), &direct.column(j).to_vec());
                assert!(ks < 0.015, "k={k} column {j}: {ks}");
            }
        }
    }

    #[test]
    fn clt_trend_over_dimensions() {
        let study = clt_study(&[8, 32, 128, 512], 1, 50_000, 14).unwrap();
        assert!(study.windows(2).all(|w| w[1].ks < w[0].ks), "{study:?}");
    }

    #[test]
    fn slutsky_radius_perturbation() {
        let (n, d, r0) = (50_000, 256, 2.0);
        let s = sample_uniform_sphere(n, d, 15).unwrap();
        let base = project_scaled(s.points.view(), 1).unwrap();
        let mut r = rng::stream(16, &[]);
        let radii: Vec<f64> = (0..n)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut r);
                r0 * (1.0 + 0.01 * e / (d as f64).sqrt())
            })
            .collect();
        let mut scaled = base.clone();
        for (x, radius) in scaled.iter_mut().zip(&radii) {
            *x *= radius;
        }
        // Distance to N(0, r0²) is measured after standardizing by r0.
        scaled.mapv_inplace(|x| x / r0);
        let ks_base = empirical_gauss_distance(base.view()).unwrap().ks;
        let ks_scaled = empirical_gauss_distance(scaled.view()).unwrap().ks;
        assert!((ks_base - ks_scaled).abs() < 0.01);
    }

    #[test]
    fn kl_ratio_positive_on_grid() {
        let grid = kl_mean_ratio_grid(&[8, 32, 128], &[0.5, 1.0, 2.0, 5.0]).unwrap();
        for p in &grid {
            assert!(p.kl > 0.0 && p.ratio > 0.0, "{p:?}");
        }
        // Small-κ limit: KL ≈ κ²/(2d), ‖m‖ ≈ κ/d, ratio ≈ d/(2(d−1)).
        let p = kl_mean_ratio_grid(&[32], &[1e-2]).unwrap()[0];
        assert!((p.ratio - 32.0 / 62.0).abs() < 1e-3, "{p:?}");
    }

    #[test]
    fn histogram_grid() {
        let bins = histogram([-5.0, -4.95, 0.0, 4.99, 5.0, 7.0]);
        assert_eq!(bins.len(), HIST_BINS);
        assert_eq!(bins[0].count, 2);
        assert_eq!(bins[50].count, 1);
        assert_eq!(bins[99].count, 1);
    }

    fn random_orthogonal(d: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng::stream(seed, &[]);
        let m = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut r));
        m.qr().q()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn rotation_leaves_statistics_unchanged(seed in 0u64..1000, d in 8usize..24) {
            let n = 20_000;
            let s = sample_uniform_sphere(n, d, seed).unwrap();
            let q = random_orthogonal(d, seed + 1);
            let q = Array2::from_shape_fn((d, d), |(i, j)| q[(i, j)]);
            let rotated = s.points.dot(&q);
            let a = empirical_gauss_distance(project_scaled(s.points.view(), 1).unwrap().view()).unwrap();
            let b = empirical_gauss_distance(project_scaled(rotated.view(), 1).unwrap().view()).unwrap();
            // Both are draws of the same law; KS noise at n = 2e4 is about 0.006.
            prop_assert!((a.ks - b.ks).abs() < 0.02);
            let mean_a = s.points.mean_axis(ndarray::Axis(0)).unwrap();
            let mean_b = rotated.mean_axis(ndarray::Axis(0)).unwrap();
            prop_assert!((mean_a.dot(&mean_a) - mean_b.dot(&mean_b)).abs() < 1e-10);
        }
    }
}
