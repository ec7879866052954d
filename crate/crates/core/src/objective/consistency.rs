use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::infonce::check_unit_rows;
use crate::error::{Error, Result};
use crate::stats::{ols_slope, pairwise_sum};

const BLOCK_ROWS: usize = 512;

/// `L_N − log N` for paired unit rows, evaluated in row blocks so that large
/// `N` never materializes the full similarity matrix.
pub fn centered_infonce(u: ArrayView2<'_, f64>, v: ArrayView2<'_, f64>, tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid("tau", "must be a positive finite number"));
    }
    if u.dim() != v.dim() || u.nrows() == 0 {
        return Err(Error::invalid("v", "u and v must be non-empty with equal shapes"));
    }
    check_unit_rows(u, "u")?;
    check_unit_rows(v, "v")?;
    let alpha = 1.0 / tau;
    let n = u.nrows();
    let log_n = (n as f64).ln();
    let mut terms = Vec::with_capacity(n);
    for start in (0..n).step_by(BLOCK_ROWS) {
        let end = (start + BLOCK_ROWS).min(n);
        let sims = u.slice(s![start..end, ..]).dot(&v.t());
        for (offset, row) in sims.rows().into_iter().enumerate() {
            let m = alpha * row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let sum: f64 = row.iter().map(|&g| (alpha * g - m).exp()).sum();
            terms.push(m + sum.ln() - log_n - alpha * row[start + offset]);
        }
    }
    Ok(pairwise_sum(&terms) / n as f64)
}

/// Gap statistics at one batch size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub batch_size: usize,
    /// Root mean square of `(L_N − log N) − L_pop` over repetitions.
    pub rms_gap: f64,
    pub mean_gap: f64,
    pub repetitions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapStudy {
    pub population_size: usize,
    pub population_value: f64,
    pub points: Vec<GapPoint>,
    /// Least-squares slope of `log rms_gap` against `log N`.
    pub slope: f64,
}

/// Measures how fast the centered batch loss approaches its large-sample
/// value. `sampler(n, seed)` must return `n` fresh normalized pairs drawn
/// from a fixed encoder and channel.
pub fn population_gap_study<F>(
    mut sampler: F,
    tau: f64,
    batch_sizes: &[usize],
    repetitions: usize,
    population_size: usize,
    seed: u64,
) -> Result<GapStudy>
where
    F: FnMut(usize, u64) -> Result<(Array2<f64>, Array2<f64>)>,
{
    if batch_sizes.len() < 2 {
        return Err(Error::invalid("batch_sizes", "need at least two batch sizes"));
    }
    if repetitions == 0 {
        return Err(Error::invalid("repetitions", "must be positive"));
    }
    if batch_sizes.iter().any(|&n| n == 0 || n >= population_size) {
        return Err(Error::invalid(
            "batch_sizes",
            "every batch size must be positive and below the population size",
        ));
    }
    let (pu, pv) = sampler(population_size, crate::rng::derive_seed(seed, &[0]))?;
    let population_value = centered_infonce(pu.view(), pv.view(), tau)?;
    drop((pu, pv));

    let mut points = Vec::with_capacity(batch_sizes.len());
    for (bi, &n) in batch_sizes.iter().enumerate() {
        let mut gaps = Vec::with_capacity(repetitions);
        for rep in 0..repetitions {
            let (u, v) = sampler(n, crate::rng::derive_seed(seed, &[1, bi as u64, rep as u64]))?;
            gaps.push(centered_infonce(u.view(), v.view(), tau)? - population_value);
        }
        let sq: Vec<f64> = gaps.iter().map(|g| g * g).collect();
        points.push(GapPoint {
            batch_size: n,
            rms_gap: (pairwise_sum(&sq) / repetitions as f64).sqrt(),
            mean_gap: pairwise_sum(&gaps) / repetitions as f64,
            repetitions,
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.batch_size as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.rms_gap.ln()).collect();
    Ok(GapStudy {
        population_size,
        population_value,
        slope: ols_slope(&xs, &ys),
        points,
    })
}
