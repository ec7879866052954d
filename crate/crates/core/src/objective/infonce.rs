use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::stats::pairwise_sum;

const UNIT_TOL: f64 = 1e-6;

pub fn check_unit_rows(m: ArrayView2<'_, f64>, arg: &'static str) -> Result<()> {
    for (i, row) in m.rows().into_iter().enumerate() {
        let n = row.dot(&row).sqrt();
        if !((n - 1.0).abs() <= UNIT_TOL) {
            return Err(Error::invalid(arg, format!("row {i} has norm {n}, expected 1")));
        }
    }
    Ok(())
}

fn check_pair(u: ArrayView2<'_, f64>, v: ArrayView2<'_, f64>) -> Result<()> {
    if u.nrows() == 0 {
        return Err(Error::invalid("u", "batch must contain at least one pair"));
    }
    if u.dim() != v.dim() {
        return Err(Error::invalid(
            "v",
            format!("shape {:?} differs from u {:?}", v.dim(), u.dim()),
        ));
    }
    check_unit_rows(u, "u")?;
    check_unit_rows(v, "v")
}

/// Row-wise softmax of `u vᵀ / τ` and the per-row losses `-log p_ii`.
fn softmax_rows(u: ArrayView2<'_, f64>, v: ArrayView2<'_, f64>, tau: f64) -> (Array2<f64>, Array1<f64>) {
    let mut logits = u.dot(&v.t());
    logits.mapv_inplace(|s| s / tau);
    let mut losses = Array1::zeros(u.nrows());
    for (i, mut row) in logits.rows_mut().into_iter().enumerate() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let pos = row[i];
        row.mapv_inplace(|s| (s - m).exp());
        let z = row.sum();
        row.mapv_inplace(|e| e / z);
        losses[i] = m + z.ln() - pos;
    }
    (logits, losses)
}

/// Empirical InfoNCE: mean over anchors of `-log softmax_i(⟨u_i, v_·⟩/τ)`.
pub fn infonce_loss(u: ArrayView2<'_, f64>, v: ArrayView2<'_, f64>, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    check_pair(u, v)?;
    let (_, losses) = softmax_rows(u, v, tau);
    Ok(pairwise_sum(losses.as_slice().expect("contiguous")) / u.nrows() as f64)
}

/// Loss together with gradients with respect to the rows of `u` and `v`,
/// treated as free vectors.
pub fn infonce_with_grad(
    u: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
    tau: f64,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    check_tau(tau)?;
    check_pair(u, v)?;
    let n = u.nrows();
    let (mut p, losses) = softmax_rows(u, v, tau);
    // dL/ds_ij = (p_ij - δ_ij) / N, and s = u vᵀ / τ.
    for i in 0..n {
        p[[i, i]] -= 1.0;
    }
    p.mapv_inplace(|x| x / (n as f64 * tau));
    let grad_u = p.dot(&v);
    let grad_v = p.t().dot(&u);
    let loss = pairwise_sum(losses.as_slice().expect("contiguous")) / n as f64;
    Ok((loss, grad_u, grad_v))
}

pub fn infonce_grad(u: ArrayView2<'_, f64>, v: ArrayView2<'_, f64>, tau: f64) -> Result<(Array2<f64>, Array2<f64>)> {
    infonce_with_grad(u, v, tau).map(|(_, gu, gv)| (gu, gv))
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid("tau", format!("temperature must be > 0, got {tau}")));
    }
    Ok(())
}

/// `(1/N) Σ ⟨u_i, v_i⟩`.
pub fn alignment_term(u: ArrayView2<'_, f64>, v: ArrayView2<'_, f64>) -> Result<f64> {
    check_pair(u, v)?;
    let dots: Vec<f64> = (&u * &v).sum_axis(Axis(1)).to_vec();
    Ok(pairwise_sum(&dots) / dots.len() as f64)
}
