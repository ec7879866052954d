use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::normality::{anderson_darling, dagostino_pearson, AD_CRITICAL_5PCT, DP_ALPHA};
use crate::error::{Error, Result};
use crate::stats::{mean, pairwise_sum, variance};

pub const MAX_NEGATIVE_PAIRS: usize = 1_000_000;
pub const MIN_REPORT_ROWS: usize = 20;

/// Population standard deviation of the row norms over their mean.
pub fn cv_norms(z: ArrayView2<'_, f64>) -> Result<f64> {
    if z.nrows() < 2 {
        return Err(Error::invalid("z", "needs at least two rows"));
    }
    let norms: Vec<f64> = z.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let m = mean(&norms);
    if !(m > 0.0) {
        return Err(Error::Degenerate("mean row norm is zero".into()));
    }
    Ok(variance(&norms).sqrt() / m)
}

/// Thresholds behind the Gaussian verdict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerdictRule {
    pub ad_critical: f64,
    pub dp_alpha: f64,
    pub pass_floor: f64,
}

impl Default for VerdictRule {
    fn default() -> Self {
        Self {
            ad_critical: AD_CRITICAL_5PCT,
            dp_alpha: DP_ALPHA,
            pass_floor: 0.85,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub n: usize,
    pub dim: usize,
    pub cv: f64,
    pub mean_norm: f64,
    pub ad_avg: f64,
    pub ad_pass_fraction: f64,
    pub dp_avg_p: f64,
    pub dp_pass_fraction: f64,
    pub alignment_mean: Option<f64>,
    pub alignment_stderr: Option<f64>,
    pub neg_cos_mean: f64,
    pub neg_cos_std: f64,
    pub neg_abs_cos_mean: f64,
    pub negative_pairs: usize,
    pub mean_vector_norm: f64,
    pub eta2: Option<f64>,
    pub plateau_residual: Option<f64>,
    /// Coordinates with zero variance; they count as failures for both tests.
    pub degenerate_coordinates: usize,
    pub gaussian_verdict: bool,
}

impl DiagnosticsReport {
    pub fn verdict(&self, rule: &VerdictRule) -> bool {
        self.degenerate_coordinates < self.dim
            && self.ad_avg < rule.ad_critical
            && self.dp_avg_p > rule.dp_alpha
            && self.ad_pass_fraction >= rule.pass_floor
            && self.dp_pass_fraction >= rule.pass_floor
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NegativeCosines {
    pub mean: f64,
    pub std: f64,
    pub abs_mean: f64,
    pub pairs: usize,
}

/// Cosine statistics over ordered pairs `i ≠ j` of unit rows; when there are
/// more than `max_pairs` pairs, every `stride`-th pair in row-major order is
/// used.
pub fn negative_cosines(u: ArrayView2<'_, f64>, max_pairs: usize) -> Result<NegativeCosines> {
    let n = u.nrows();
    if n < 2 || max_pairs == 0 {
        return Err(Error::invalid(
            "u",
            "needs at least two rows and a positive pair budget",
        ));
    }
    let total = n * (n - 1);
    let stride = total.div_ceil(max_pairs);
    let cosines: Vec<f64> = (0..total)
        .step_by(stride)
        .map(|p| {
            let i = p / (n - 1);
            let r = p % (n - 1);
            let j = if r >= i { r + 1 } else { r };
            u.row(i).dot(&u.row(j))
        })
        .collect();
    let abs: Vec<f64> = cosines.iter().map(|c| c.abs()).collect();
    Ok(NegativeCosines {
        mean: mean(&cosines),
        std: variance(&cosines).sqrt(),
        abs_mean: mean(&abs),
        pairs: cosines.len(),
    })
}

/// Per-coordinate normality results for the columns of `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateTests {
    pub ad: Vec<f64>,
    pub dp: Vec<f64>,
    pub degenerate: Vec<bool>,
}

pub fn coordinate_tests(z: ArrayView2<'_, f64>) -> Result<CoordinateTests> {
    let d = z.ncols();
    let mut out = CoordinateTests {
        ad: Vec::with_capacity(d),
        dp: Vec::with_capacity(d),
        degenerate: Vec::with_capacity(d),
    };
    for col in z.columns() {
        let x = col.to_vec();
        let ad = anderson_darling(&x)?;
        let (dp, degenerate) = match dagostino_pearson(&x) {
            Ok(p) => (p, false),
            Err(Error::Degenerate(_)) => (0.0, true),
            Err(e) => return Err(e),
        };
        out.ad.push(ad);
        out.dp.push(dp);
        out.degenerate.push(degenerate || ad.is_infinite());
    }
    Ok(out)
}

/// Optional inputs that fill the alignment fields of the report.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReportExtras<'a> {
    pub eta2: Option<f64>,
    pub pairs: Option<(ArrayView2<'a, f64>, ArrayView2<'a, f64>)>,
}

pub fn coordinate_report(
    z: ArrayView2<'_, f64>,
    normalized: ArrayView2<'_, f64>,
    extras: ReportExtras<'_>,
    rule: &VerdictRule,
) -> Result<DiagnosticsReport> {
    let (n, dim) = z.dim();
    if n < MIN_REPORT_ROWS {
        return Err(Error::invalid("z", format!("needs at least {MIN_REPORT_ROWS} rows")));
    }
    if normalized.dim() != z.dim() {
        return Err(Error::invalid("normalized", "must have the same shape as z"));
    }
    if let Some(eta2) = extras.eta2 {
        if !(0.0..=1.0).contains(&eta2) {
            return Err(Error::invalid("eta2", "must lie in [0, 1]"));
        }
    }
    let norms: Vec<f64> = z.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let mean_norm = mean(&norms);
    let cv = if mean_norm > 0.0 {
        variance(&norms).sqrt() / mean_norm
    } else {
        f64::NAN
    };

    let tests = coordinate_tests(z)?;
    let ad_pass = tests
        .ad
        .iter()
        .zip(&tests.degenerate)
        .filter(|(&a, &deg)| !deg && a < rule.ad_critical)
        .count();
    let dp_pass = tests
        .dp
        .iter()
        .zip(&tests.degenerate)
        .filter(|(&p, &deg)| !deg && p > rule.dp_alpha)
        .count();
    let degenerate_coordinates = tests.degenerate.iter().filter(|&&d| d).count();

    let neg = negative_cosines(normalized, MAX_NEGATIVE_PAIRS)?;
    let m = normalized.mean_axis(Axis(0)).expect("non-empty");

    let (alignment_mean, alignment_stderr) = match extras.pairs {
        Some((u, v)) => {
            if u.dim() != v.dim() || u.nrows() < 2 {
                return Err(Error::invalid("pairs", "views must share a shape with >= 2 rows"));
            }
            let dots: Vec<f64> = u.rows().into_iter().zip(v.rows()).map(|(a, b)| a.dot(&b)).collect();
            (Some(mean(&dots)), Some(crate::stats::std_error(&dots)))
        }
        None => (None, None),
    };
    let plateau_residual = alignment_mean.zip(extras.eta2).map(|(a, e)| a - e);

    let mut report = DiagnosticsReport {
        n,
        dim,
        cv,
        mean_norm,
        ad_avg: pairwise_sum(&tests.ad) / dim as f64,
        ad_pass_fraction: ad_pass as f64 / dim as f64,
        dp_avg_p: pairwise_sum(&tests.dp) / dim as f64,
        dp_pass_fraction: dp_pass as f64 / dim as f64,
        alignment_mean,
        alignment_stderr,
        neg_cos_mean: neg.mean,
        neg_cos_std: neg.std,
        neg_abs_cos_mean: neg.abs_mean,
        negative_pairs: neg.pairs,
        mean_vector_norm: m.dot(&m).sqrt(),
        eta2: extras.eta2,
        plateau_residual,
        degenerate_coordinates,
        gaussian_verdict: false,
    };
    report.gaussian_verdict = report.verdict(rule);
    Ok(report)
}
