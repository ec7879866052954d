use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;

use super::consistency::centered_infonce;
use super::entropy::entropy_estimate;
use super::infonce::{alignment_term, check_unit_rows};
use super::uniformity::uniformity_potential;
use crate::error::{Error, Result};

/// Temperature and regularization weights.
///
/// `alpha` is stored alongside `tau` as `1/tau`; construct through
/// [`LossParams::new`] to keep the two consistent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    /// Radius of the constraint ball; `f64::INFINITY` means all of ℝ^d.
    pub ball_radius: f64,
}

impl LossParams {
    pub fn new(tau: f64, beta: f64, lambda: f64) -> Result<Self> {
        let p = Self {
            tau,
            alpha: 1.0 / tau,
            beta,
            lambda,
            ball_radius: f64::INFINITY,
        };
        p.validate()?;
        Ok(p)
    }

    /// Plain InfoNCE (β = 0).
    pub fn plain(tau: f64) -> Result<Self> {
        Self::new(tau, 0.0, 1.0)
    }

    pub fn with_ball(mut self, radius: f64) -> Result<Self> {
        self.ball_radius = radius;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid("tau", "must be a positive finite number"));
        }
        if self.alpha != 1.0 / self.tau {
            return Err(Error::invalid("alpha", "must equal 1/tau"));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::invalid("beta", "must be >= 0"));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::invalid("lambda", "must be > 0"));
        }
        if !(self.ball_radius > 0.0) {
            return Err(Error::invalid("ball_radius", "must be > 0"));
        }
        Ok(())
    }
}

/// One evaluation of the objective and its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub infonce: f64,
    pub alignment: f64,
    pub uniformity_potential: f64,
    /// NaN when the estimate was not needed and not computable.
    pub entropy_estimate: f64,
    pub mean_sq_norm: f64,
    pub regularized_j: f64,
    /// `KL(ρ ‖ γ_λ^B)` via the entropy form, when the estimate exists.
    pub kl_to_gaussian: Option<f64>,
}

impl LossReport {
    /// `Φ − α·alignment + β(−H + λ E‖Z‖²)` recomputed from the stored parts.
    pub fn recompose(&self, params: &LossParams) -> f64 {
        let base = self.uniformity_potential - params.alpha * self.alignment;
        if params.beta == 0.0 {
            base
        } else {
            base + params.beta * (-self.entropy_estimate + params.lambda * self.mean_sq_norm)
        }
    }
}

/// `log ∫_B exp(−λ‖z‖²) dz`; for a ball of radius `R` this is the Gaussian
/// integral times `P(χ²_d ≤ 2λR²)`.
pub fn log_partition_ball(d: usize, lambda: f64, radius: f64) -> f64 {
    let full = d as f64 / 2.0 * (std::f64::consts::PI / lambda).ln();
    if radius.is_infinite() {
        full
    } else {
        full + gamma_lr(d as f64 / 2.0, lambda * radius * radius).ln()
    }
}

/// Evaluates the regularized objective on normalized pairs `(u, v)` and the
/// raw embeddings `z` of the `u` side.
pub fn regularized_objective(
    u: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
    z: ArrayView2<'_, f64>,
    params: &LossParams,
) -> Result<LossReport> {
    params.validate()?;
    check_unit_rows(u, "u")?;
    if z.nrows() != u.nrows() || z.ncols() != u.ncols() {
        return Err(Error::invalid("z", "raw embeddings must match the shape of u"));
    }
    let sq: Vec<f64> = z.rows().into_iter().map(|r| r.dot(&r)).collect();
    if params.ball_radius.is_finite() {
        let r2 = params.ball_radius * params.ball_radius;
        if let Some(i) = sq.iter().position(|&s| s > r2) {
            return Err(Error::invalid("z", format!("row {i} lies outside the constraint ball")));
        }
    }
    let infonce = centered_infonce(u, v, params.tau)? + (u.nrows() as f64).ln();
    let alignment = alignment_term(u, v)?;
    let phi = uniformity_potential(u, params.alpha)?;
    let mean_sq_norm = crate::stats::pairwise_sum(&sq) / sq.len() as f64;
    let entropy = match entropy_estimate(z) {
        Ok(h) => h,
        Err(e) if params.beta > 0.0 => return Err(e),
        Err(_) => f64::NAN,
    };
    let kl = entropy.is_finite().then(|| {
        -entropy + params.lambda * mean_sq_norm + log_partition_ball(z.ncols(), params.lambda, params.ball_radius)
    });
    let mut report = LossReport {
        infonce,
        alignment,
        uniformity_potential: phi,
        entropy_estimate: entropy,
        mean_sq_norm,
        regularized_j: 0.0,
        kl_to_gaussian: kl,
    };
    report.regularized_j = report.recompose(params);
    Ok(report)
}

/// Plateau surrogate `Φ̂(u) − α(1 − η₂)‖mean row‖²`.
pub fn surrogate_jq(u: ArrayView2<'_, f64>, alpha: f64, eta2: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&eta2) {
        return Err(Error::invalid("eta2", format!("must lie in [0, 1], got {eta2}")));
    }
    let phi = uniformity_potential(u, alpha)?;
    let m = u.mean_axis(ndarray::Axis(0)).expect("non-empty");
    Ok(phi - alpha * (1.0 - eta2) * m.dot(&m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::spherestats::sample_uniform_sphere;
    use ndarray::Array2;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn alpha_tracks_tau() {
        let p = LossParams::new(0.1, 0.0, 1.0).unwrap();
        assert_eq!(p.alpha * p.tau, 1.0);
        assert!(LossParams::new(0.0, 0.0, 1.0).is_err());
        assert!(LossParams::new(0.1, -1.0, 1.0).is_err());
        assert!(LossParams::new(0.1, 0.1, 0.0).is_err());
    }

    #[test]
    fn beta_zero_is_plain_decomposition() {
        let u = sample_uniform_sphere(300, 8, 1).unwrap().points;
        let v = sample_uniform_sphere(300, 8, 2).unwrap().points;
        let p = LossParams::plain(0.5).unwrap();
        let r = regularized_objective(u.view(), v.view(), u.view(), &p).unwrap();
        assert_eq!(r.regularized_j, r.uniformity_potential - p.alpha * r.alignment);
        assert!((r.mean_sq_norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn report_recomposes() {
        let u = sample_uniform_sphere(200, 4, 3).unwrap().points;
        let v = sample_uniform_sphere(200, 4, 4).unwrap().points;
        let z = &u * 2.0;
        let p = LossParams::new(0.2, 0.3, 0.7).unwrap();
        let r = regularized_objective(u.view(), v.view(), z.view(), &p).unwrap();
        let parts =
            r.uniformity_potential - p.alpha * r.alignment + p.beta * (-r.entropy_estimate + p.lambda * r.mean_sq_norm);
        assert!((r.regularized_j - parts).abs() < 1e-9);
    }

    #[test]
    fn optimal_gaussian_regularizer_value() {
        // z ~ N(0, (2λ)⁻¹ I): −H + λE‖Z‖² = −(d/2) log(π/λ), i.e. KL = 0.
        let (d, n, lambda) = (8usize, 50_000usize, 0.5f64);
        let sd = (1.0 / (2.0 * lambda)).sqrt();
        let mut r = rng::stream(5, &[1]);
        let z = Array2::from_shape_simple_fn((n, d), || {
            let e: f64 = StandardNormal.sample(&mut r);
            sd * e
        });
        let u = crate::encoder::EmbeddingBatch::from_raw(z.clone()).normalized;
        let p = LossParams::new(1.0, 1.0, lambda).unwrap();
        let report = regularized_objective(u.view(), u.view(), z.view(), &p).unwrap();
        let reg = -report.entropy_estimate + lambda * report.mean_sq_norm;
        let analytic = -(d as f64) / 2.0 * (std::f64::consts::PI / lambda).ln();
        assert!((reg - analytic).abs() < 0.1, "{reg} vs {analytic}");
        assert!(report.kl_to_gaussian.unwrap().abs() < 0.1);
    }

    #[test]
    fn outside_ball_rejected() {
        let u = sample_uniform_sphere(20, 3, 1).unwrap().points;
        let z = &u * 3.0;
        let p = LossParams::new(0.5, 0.1, 1.0).unwrap().with_ball(2.0).unwrap();
        assert!(regularized_objective(u.view(), u.view(), z.view(), &p).is_err());
        let p = p.with_ball(3.5).unwrap();
        assert!(regularized_objective(u.view(), u.view(), z.view(), &p).is_ok());
    }

    #[test]
    fn ball_partition_approaches_full_space() {
        let full = log_partition_ball(4, 1.0, f64::INFINITY);
        let big = log_partition_ball(4, 1.0, 50.0);
        assert!((full - big).abs() < 1e-12);
        assert!(log_partition_ball(4, 1.0, 0.5) < full);
    }

    #[test]
    fn surrogate_cases() {
        let e1 = Array2::from_shape_fn((6, 3), |(_, j)| if j == 0 { 1.0 } else { 0.0 });
        let v = surrogate_jq(e1.view(), 5.0, 0.3).unwrap();
        assert!((v - (5.0 - 5.0 * 0.7)).abs() < 1e-12);
        let u = sample_uniform_sphere(500, 16, 9).unwrap().points;
        let phi = uniformity_potential(u.view(), 5.0).unwrap();
        assert_eq!(surrogate_jq(u.view(), 5.0, 1.0).unwrap(), phi);
        let near = surrogate_jq(u.view(), 5.0, 0.0).unwrap();
        assert!((near - phi).abs() < 5.0 * 0.01, "{near} vs {phi}");
        assert!(surrogate_jq(u.view(), 5.0, 1.5).is_err());
    }
}
