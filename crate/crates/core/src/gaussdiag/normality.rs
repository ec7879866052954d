use std::sync::OnceLock;

use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::registry::Registry;

/// Critical value of the adjusted Anderson-Darling statistic at the 5% level
/// when mean and variance are estimated.
pub const AD_CRITICAL_5PCT: f64 = 0.752;
pub const DP_ALPHA: f64 = 0.05;

pub const AD_MIN_SAMPLES: usize = 8;
pub const DP_MIN_SAMPLES: usize = 20;

/// `ln Φ(z)` that stays accurate deep in the lower tail.
fn ln_normal_cdf(z: f64) -> f64 {
    (0.5 * erfc(-z / std::f64::consts::SQRT_2)).ln()
}

/// Adjusted Anderson-Darling statistic `A²(1 + 0.75/n + 2.25/n²)` against a
/// normal law with estimated mean and variance.
///
/// Constant input returns `+∞`, which callers treat as a degenerate
/// coordinate.
pub fn anderson_darling(x: &[f64]) -> Result<f64> {
    let n = x.len();
    if n < AD_MIN_SAMPLES {
        return Err(Error::invalid("x", format!("needs at least {AD_MIN_SAMPLES} samples")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("anderson_darling input".into()));
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    if !(var > 0.0) {
        return Ok(f64::INFINITY);
    }
    let sd = var.sqrt();
    let mut z: Vec<f64> = x.iter().map(|v| (v - mean) / sd).collect();
    z.sort_by(f64::total_cmp);
    let s: f64 = (0..n)
        .map(|i| {
            let lower = ln_normal_cdf(z[i]);
            let upper = ln_normal_cdf(-z[n - 1 - i]);
            (2 * i + 1) as f64 * (lower + upper)
        })
        .sum();
    let a2 = -nf - s / nf;
    Ok(a2 * (1.0 + 0.75 / nf + 2.25 / (nf * nf)))
}

fn central_moments(x: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    (m2 / n, m3 / n, m4 / n)
}

fn skewness_z(b1: f64, n: f64) -> f64 {
    let y = b1 * ((n + 1.0) * (n + 3.0) / (6.0 * (n - 2.0))).sqrt();
    let beta2 =
        3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0) / ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
    let w2 = -1.0 + (2.0 * (beta2 - 1.0)).sqrt();
    let delta = 1.0 / (0.5 * w2.ln()).sqrt();
    let alpha = (2.0 / (w2 - 1.0)).sqrt();
    let y = if y == 0.0 { 1.0 } else { y };
    let r = y / alpha;
    delta * (r + (r * r + 1.0).sqrt()).ln()
}

fn kurtosis_z(b2: f64, n: f64) -> f64 {
    let expected = 3.0 * (n - 1.0) / (n + 1.0);
    let var = 24.0 * n * (n - 2.0) * (n - 3.0) / ((n + 1.0).powi(2) * (n + 3.0) * (n + 5.0));
    let x = (b2 - expected) / var.sqrt();
    let root_beta1 = 6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0))
        * (6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0))).sqrt();
    let a = 6.0 + 8.0 / root_beta1 * (2.0 / root_beta1 + (1.0 + 4.0 / (root_beta1 * root_beta1)).sqrt());
    let term1 = 1.0 - 2.0 / (9.0 * a);
    let denom = 1.0 + x * (2.0 / (a - 4.0)).sqrt();
    let term2 = denom.signum() * ((1.0 - 2.0 / a) / denom.abs()).cbrt();
    (term1 - term2) / (2.0 / (9.0 * a)).sqrt()
}

/// D'Agostino-Pearson omnibus test: returns the p-value of `K²` under a χ²
/// law with two degrees of freedom.
pub fn dagostino_pearson(x: &[f64]) -> Result<f64> {
    let n = x.len();
    if n < DP_MIN_SAMPLES {
        return Err(Error::invalid("x", format!("needs at least {DP_MIN_SAMPLES} samples")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("dagostino_pearson input".into()));
    }
    let (m2, m3, m4) = central_moments(x);
    if !(m2 > 0.0) {
        return Err(Error::Degenerate("zero variance in dagostino_pearson".into()));
    }
    let nf = n as f64;
    let zs = skewness_z(m3 / m2.powf(1.5), nf);
    let zk = kurtosis_z(m4 / (m2 * m2), nf);
    let k2 = zs * zs + zk * zk;
    Ok((-k2 / 2.0).exp().clamp(0.0, 1.0))
}

/// A per-coordinate normality test with a pass rule.
pub trait NormalityTest: Send + Sync {
    fn name(&self) -> &'static str;
    fn min_samples(&self) -> usize;
    fn statistic(&self, x: &[f64]) -> Result<f64>;
    /// True when `statistic` fails to reject normality.
    fn passes(&self, statistic: f64) -> bool;
}

pub struct AndersonDarling {
    pub critical: f64,
}

impl NormalityTest for AndersonDarling {
    fn name(&self) -> &'static str {
        "anderson_darling"
    }
    fn min_samples(&self) -> usize {
        AD_MIN_SAMPLES
    }
    fn statistic(&self, x: &[f64]) -> Result<f64> {
        anderson_darling(x)
    }
    fn passes(&self, statistic: f64) -> bool {
        statistic < self.critical
    }
}

pub struct DagostinoPearson {
    pub alpha: f64,
}

impl NormalityTest for DagostinoPearson {
    fn name(&self) -> &'static str {
        "dagostino_pearson"
    }
    fn min_samples(&self) -> usize {
        DP_MIN_SAMPLES
    }
    fn statistic(&self, x: &[f64]) -> Result<f64> {
        dagostino_pearson(x)
    }
    fn passes(&self, statistic: f64) -> bool {
        statistic > self.alpha
    }
}

pub fn normality_tests() -> &'static Registry<dyn NormalityTest> {
    static REG: OnceLock<Registry<dyn NormalityTest>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut reg: Registry<dyn NormalityTest> = Registry::new("normality test");
        reg.register(
            "anderson_darling",
            Box::new(AndersonDarling {
                critical: AD_CRITICAL_5PCT,
            }),
        )
        .register("dagostino_pearson", Box::new(DagostinoPearson { alpha: DP_ALPHA }));
        reg
    })
}
