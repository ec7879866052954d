use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::stats::pearson;
use crate::synthdata::{DataKind, Dataset};

const RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Whitened {
    pub data: Array2<f64>,
    /// Set when the covariance was near singular and a ridge was added.
    pub ridge_applied: bool,
}

fn sample_covariance(centered: &Array2<f64>) -> DMatrix<f64> {
    let n = centered.nrows() as f64;
    let cov = centered.t().dot(centered) / (n - 1.0);
    let d = cov.nrows();
    DMatrix::from_fn(d, d, |i, j| 0.5 * (cov[[i, j]] + cov[[j, i]]))
}

/// ZCA whitening: centre, then multiply by the inverse symmetric square root
/// of the sample covariance.
pub fn whiten(z: ArrayView2<'_, f64>) -> Result<Whitened> {
    let (n, d) = z.dim();
    if d == 0 || n < 2 {
        return Err(Error::invalid("z", "needs at least two rows and one column"));
    }
    if d > n {
        return Err(Error::invalid("z", format!("dimension {d} exceeds row count {n}")));
    }
    let mean = z.mean_axis(Axis(0)).expect("non-empty");
    let centered = &z - &mean;
    let mut cov = sample_covariance(&centered);
    let eig = SymmetricEigen::new(cov.clone());
    let max_ev = eig.eigenvalues.max();
    let ridge_applied = eig.eigenvalues.min() <= 1e-12 * max_ev.max(f64::MIN_POSITIVE);
    let eig = if ridge_applied {
        log::warn!("covariance is near singular; adding ridge {RIDGE}");
        for i in 0..d {
            cov[(i, i)] += RIDGE;
        }
        SymmetricEigen::new(cov)
    } else {
        eig
    };
    let scales = eig.eigenvalues.map(|ev| 1.0 / ev.max(RIDGE).sqrt());
    let q = &eig.eigenvectors;
    let inv_sqrt = q * DMatrix::from_diagonal(&scales) * q.transpose();
    let w = Array2::from_shape_fn((d, d), |(i, j)| inv_sqrt[(i, j)]);
    Ok(Whitened {
        data: centered.dot(&w),
        ridge_applied,
    })
}

/// Correlation between per-row Laplace(0, 1) log-likelihoods of the inputs
/// and per-row Gaussian log-likelihoods of `z` under a fitted diagonal model.
pub fn likelihood_correlation(inputs: &Dataset, z: ArrayView2<'_, f64>) -> Result<f64> {
    if inputs.kind() != DataKind::Laplace {
        return Err(Error::invalid("inputs", "likelihood correlation needs Laplace inputs"));
    }
    if inputs.n() != z.nrows() || z.nrows() < 2 {
        return Err(Error::invalid("z", "row count must match the inputs and be >= 2"));
    }
    let d_data = inputs.d_data() as f64;
    let laplace: Vec<f64> = inputs
        .samples
        .rows()
        .into_iter()
        .map(|r| -r.fold(0.0, |a, &x| a + x.abs()) - d_data * std::f64::consts::LN_2)
        .collect();

    let mean = z.mean_axis(Axis(0)).expect("non-empty");
    let var = z.var_axis(Axis(0), 0.0);
    if var.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Degenerate("a coordinate of z has zero variance".into()));
    }
    let log_norm: f64 = var.iter().map(|v| -0.5 * (2.0 * std::f64::consts::PI * v).ln()).sum();
    let gauss: Vec<f64> = z
        .rows()
        .into_iter()
        .map(|r| {
            let quad: f64 = r
                .iter()
                .zip(mean.iter().zip(var.iter()))
                .map(|(&x, (&m, &v))| (x - m) * (x - m) / v)
                .sum();
            log_norm - 0.5 * quad
        })
        .collect();
    Ok(pearson(&laplace, &gauss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EmbeddingBatch;
    use crate::gaussdiag::negative_cosines;
    use crate::rng;
    use crate::synthdata::{sample_gmm, sample_laplace};
    use rand::seq::SliceRandom;
    use rand_distr::{Distribution, StandardNormal};

    fn covariance(x: &Array2<f64>) -> Array2<f64> {
        let m = x.mean_axis(Axis(0)).unwrap();
        let c = x - &m;
        c.t().dot(&c) / (x.nrows() as f64 - 1.0)
    }

    #[test]
    fn output_covariance_is_identity() {
        let mut r = rng::stream(1, &[]);
        let base = Array2::from_shape_simple_fn((2000, 5), || StandardNormal.sample(&mut r));
        let mix = Array2::from_shape_fn((5, 5), |(i, j)| if i <= j { 1.0 + (i * j) as f64 } else { 0.2 });
        let z = base.dot(&mix);
        let w = whiten(z.view()).unwrap();
        assert!(!w.ridge_applied);
        let c = covariance(&w.data);
        for ((i, j), v) in c.indexed_iter() {
            let target = if i == j { 1.0 } else { 0.0 };
            assert!((v - target).abs() < 1e-6);
        }
    }

    #[test]
    fn white_input_is_fixed_point() {
        let mut r = rng::stream(2, &[]);
        let base = Array2::from_shape_simple_fn((500, 4), || StandardNormal.sample(&mut r));
        let once = whiten(base.view()).unwrap().data;
        let twice = whiten(once.view()).unwrap().data;
        let diff = (&once - &twice).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b));
        assert!(diff < 1e-6, "{diff}");
    }

    #[test]
    fn singular_covariance_gets_ridge() {
        let z = Array2::from_shape_fn((50, 3), |(i, j)| if j == 2 { 0.0 } else { (i * (j + 1)) as f64 % 7.0 });
        assert!(whiten(z.view()).unwrap().ridge_applied);
        assert!(whiten(Array2::<f64>::zeros((3, 5)).view()).is_err());
    }

    #[test]
    fn whitening_isotropizes_anisotropic_embeddings() {
        let mut r = rng::stream(3, &[]);
        let z = Array2::from_shape_fn((3000, 10), |(_, j)| {
            let e: f64 = StandardNormal.sample(&mut r);
            e * ((j + 1) as f64).sqrt() + 0.5
        });
        let before = negative_cosines(EmbeddingBatch::from_raw(z.clone()).normalized.view(), 200_000).unwrap();
        let w = whiten(z.view()).unwrap().data;
        let after = negative_cosines(EmbeddingBatch::from_raw(w).normalized.view(), 200_000).unwrap();
        assert!(
            after.abs_mean < before.abs_mean,
            "{} vs {}",
            after.abs_mean,
            before.abs_mean
        );
    }

    #[test]
    fn likelihood_correlation_cases() {
        let data = sample_laplace(10_000, 16, 4).unwrap();
        // For one Laplace coordinate corr(|x|, x²) = 4/√20 = 2/√5; sums of
        // independent coordinates keep that value.
        let rho = likelihood_correlation(&data, data.samples.view()).unwrap();
        assert!((rho - 2.0 / 5f64.sqrt()).abs() < 0.02, "{rho}");

        let mut order: Vec<usize> = (0..10_000).collect();
        order.shuffle(&mut rng::stream(5, &[]));
        let shuffled = data.select(&order).samples;
        assert!(likelihood_correlation(&data, shuffled.view()).unwrap().abs() < 0.05);

        let constant = Array2::from_elem((10_000, 3), 1.0);
        assert!(likelihood_correlation(&data, constant.view()).is_err());
        let gmm = sample_gmm(100, 4, 3, 1).unwrap();
        assert!(likelihood_correlation(&gmm, gmm.samples.view()).is_err());
    }
}
