use ndarray::{s, ArrayView2};

use super::infonce::check_unit_rows;
use crate::error::{Error, Result};
use crate::stats::pairwise_sum;

const BLOCK_ROWS: usize = 512;

/// Per-anchor terms `log((1/N) Σ_j exp(α ⟨u_i, u_j⟩))`, self-term included.
pub fn uniformity_terms(u: ArrayView2<'_, f64>, alpha: f64) -> Result<Vec<f64>> {
    let n = u.nrows();
    if n < 2 {
        return Err(Error::invalid("u", "uniformity potential needs at least two rows"));
    }
    check_unit_rows(u, "u")?;
    let log_n = (n as f64).ln();
    let mut terms = Vec::with_capacity(n);
    for start in (0..n).step_by(BLOCK_ROWS) {
        let end = (start + BLOCK_ROWS).min(n);
        let gram = u.slice(s![start..end, ..]).dot(&u.t());
        for row in gram.rows() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b)) * alpha;
            let sum: f64 = row.iter().map(|&g| (alpha * g - m).exp()).sum();
            terms.push(m + sum.ln() - log_n);
        }
    }
    Ok(terms)
}

/// Plug-in estimate of `E_u log E_v exp(α u·v)` over the empirical measure.
pub fn uniformity_potential(u: ArrayView2<'_, f64>, alpha: f64) -> Result<f64> {
    let terms = uniformity_terms(u, alpha)?;
    Ok(pairwise_sum(&terms) / terms.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spherestats::{log_mgf_uniform, sample_uniform_sphere, sample_vmf};
    use ndarray::{array, Array1, Array2};

    #[test]
    fn identical_rows_give_alpha() {
        let u = Array2::from_shape_fn((5, 3), |(_, j)| if j == 0 { 1.0 } else { 0.0 });
        let phi = uniformity_potential(u.view(), 4.0).unwrap();
        assert!((phi - 4.0).abs() < 1e-12);
    }

    #[test]
    fn antipodal_pair_closed_form() {
        let u = array![[1.0, 0.0], [-1.0, 0.0]];
        let a: f64 = 2.5;
        let phi = uniformity_potential(u.view(), a).unwrap();
        let expected = ((a.exp() + (-a).exp()) / 2.0).ln();
        assert!((phi - expected).abs() < 1e-12);
    }

    #[test]
    fn single_row_rejected() {
        assert!(uniformity_potential(array![[1.0, 0.0]].view(), 1.0).is_err());
    }

    #[test]
    fn uniform_beats_tilted_and_approaches_population_value() {
        let (d, alpha, n) = (32, 10.0, 4000);
        let uni = sample_uniform_sphere(n, d, 1).unwrap().points;
        let phi_uni = uniformity_potential(uni.view(), alpha).unwrap();
        let mut dir = Array1::zeros(d);
        dir[0] = 1.0;
        let tilted = sample_vmf(n, d, 5.0, dir.view(), 2).unwrap().points;
        let phi_vmf = uniformity_potential(tilted.view(), alpha).unwrap();
        assert!(phi_uni < phi_vmf, "{phi_uni} vs {phi_vmf}");
        // The self-term adds roughly exp(α)/N inside the log.
        let pop = log_mgf_uniform(d, alpha);
        let with_self = (pop.exp() + (alpha.exp() - pop.exp()) / n as f64).ln();
        assert!((phi_uni - with_self).abs() < 0.05, "{phi_uni} vs {with_self}");
    }
}
