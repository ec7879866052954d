//! Kozachenko-Leonenko differential entropy estimate.

use ndarray::{s, Array2, ArrayView2, Axis};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::stats::pairwise_sum;

/// Neighbour order used by the estimator.
pub const KL_NEIGHBORS: usize = 3;

/// Dimensions up to this use the k-d tree; above it brute force is faster.
const TREE_MAX_DIM: usize = 12;
const LEAF_SIZE: usize = 16;
const DUPLICATE_JITTER: f64 = 1e-12;

/// `log` of the volume of the unit ball in `d` dimensions.
fn log_unit_ball_volume(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    h * std::f64::consts::PI.ln() - ln_gamma(h + 1.0)
}

struct KdTree<'a> {
    points: ArrayView2<'a, f64>,
    index: Vec<usize>,
    nodes: Vec<Node>,
}

enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

impl<'a> KdTree<'a> {
    fn build(points: ArrayView2<'a, f64>) -> Self {
        let mut tree = KdTree {
            points,
            index: (0..points.nrows()).collect(),
            nodes: Vec::new(),
        };
        tree.build_node(0, points.nrows());
        tree
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let d = self.points.ncols();
        let dim = (0..d)
            .map(|j| {
                let (lo, hi) =
                    self.index[start..end]
                        .iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                            let v = self.points[[i, j]];
                            (lo.min(v), hi.max(v))
                        });
                (j, hi - lo)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(j, _)| j)
            .unwrap_or(0);
        let mid = start + (end - start) / 2;
        let pts = self.points;
        self.index[start..end].select_nth_unstable_by(mid - start, |&a, &b| pts[[a, dim]].total_cmp(&pts[[b, dim]]));
        let value = pts[[self.index[mid], dim]];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split {
            dim,
            value,
            left,
            right,
        };
        id
    }

    /// Squared distances and indices of the `k` nearest neighbours of row
    /// `q`, excluding `q` itself, ascending.
    fn knn(&self, q: usize, k: usize) -> Vec<(f64, usize)> {
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        self.search(0, q, k, &mut best);
        best
    }

    fn search(&self, node: usize, q: usize, k: usize, best: &mut Vec<(f64, usize)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                let qp = self.points.row(q);
                for &i in &self.index[start..end] {
                    if i == q {
                        continue;
                    }
                    let d2: f64 = qp.iter().zip(self.points.row(i)).map(|(a, b)| (a - b) * (a - b)).sum();
                    if best.len() < k || d2 < best[best.len() - 1].0 {
                        let pos = best.partition_point(|e| e.0 <= d2);
                        best.insert(pos, (d2, i));
                        best.truncate(k);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = self.points[[q, dim]] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, best);
                if best.len() < k || diff * diff < best[best.len() - 1].0 {
                    self.search(far, q, k, best);
                }
            }
        }
    }
}

/// Brute-force k-NN via blocked Gram products.
fn knn_brute(z: ArrayView2<'_, f64>, k: usize) -> Vec<Vec<(f64, usize)>> {
    let n = z.nrows();
    let sq: Vec<f64> = z.rows().into_iter().map(|r| r.dot(&r)).collect();
    let mut out = Vec::with_capacity(n);
    for start in (0..n).step_by(256) {
        let end = (start + 256).min(n);
        let gram = z.slice(s![start..end, ..]).dot(&z.t());
        for (bi, row) in gram.axis_iter(Axis(0)).enumerate() {
            let i = start + bi;
            let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
            for (j, &g) in row.iter().enumerate() {
                if j == i {
                    continue;
                }
                let d2 = (sq[i] + sq[j] - 2.0 * g).max(0.0);
                if best.len() < k || d2 < best[best.len() - 1].0 {
                    let pos = best.partition_point(|e| e.0 <= d2);
                    best.insert(pos, (d2, j));
                    best.truncate(k);
                }
            }
            out.push(best);
        }
    }
    // Recompute the kept distances directly; the Gram identity loses
    // precision for close points.
    for (i, best) in out.iter_mut().enumerate() {
        for e in best.iter_mut() {
            e.0 = z.row(i).iter().zip(z.row(e.1)).map(|(a, b)| (a - b) * (a - b)).sum();
        }
        best.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    out
}

/// For every row, the index of and Euclidean distance to its `k`-th nearest
/// neighbour.
pub fn knn_distances(z: ArrayView2<'_, f64>, k: usize) -> Vec<(f64, usize)> {
    let lists = if z.ncols() <= TREE_MAX_DIM {
        let tree = KdTree::build(z);
        (0..z.nrows()).map(|i| tree.knn(i, k)).collect::<Vec<_>>()
    } else {
        knn_brute(z, k)
    };
    lists
        .into_iter()
        .map(|l| {
            let (d2, j) = l[k - 1];
            (d2.sqrt(), j)
        })
        .collect()
}

fn check_rows(z: ArrayView2<'_, f64>, min_rows: usize) -> Result<()> {
    if z.nrows() < min_rows {
        return Err(Error::invalid(
            "z",
            format!("need at least {min_rows} rows, got {}", z.nrows()),
        ));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("entropy input".into()));
    }
    Ok(())
}

/// Replaces `z` by a copy with duplicate rows nudged apart when needed.
fn dejitter(z: ArrayView2<'_, f64>) -> Option<Array2<f64>> {
    let dists = knn_distances(z, 1);
    if dists.iter().all(|(d, _)| *d > 0.0) {
        return None;
    }
    log::warn!("entropy estimate: duplicate rows present, adding {DUPLICATE_JITTER:e} jitter");
    let mut out = z.to_owned();
    let mut rng = crate::rng::stream(0, &[crate::rng::tag::JITTER]);
    use rand_distr::{Distribution, StandardNormal};
    out.iter_mut().for_each(|v| {
        let e: f64 = StandardNormal.sample(&mut rng);
        *v += DUPLICATE_JITTER * e;
    });
    Some(out)
}

fn kl_from_distances(n: usize, d: usize, dists: &[(f64, usize)]) -> f64 {
    let logs: Vec<f64> = dists.iter().map(|(r, _)| r.ln()).collect();
    digamma(n as f64) - digamma(KL_NEIGHBORS as f64)
        + log_unit_ball_volume(d)
        + d as f64 * pairwise_sum(&logs) / n as f64
}

/// Kozachenko-Leonenko estimate with `k = 3` neighbours:
/// `ψ(n) − ψ(k) + log V_d + (d/n) Σ log ε_i`.
pub fn entropy_estimate(z: ArrayView2<'_, f64>) -> Result<f64> {
    let (n, d) = z.dim();
    check_rows(z, d + 2)?;
    let jittered = dejitter(z);
    let z = jittered.as_ref().map(|m| m.view()).unwrap_or(z);
    let dists = knn_distances(z, KL_NEIGHBORS);
    Ok(kl_from_distances(n, d, &dists))
}

/// The estimate and its gradient with respect to every row of `z`, holding
/// the neighbour assignment fixed (the estimator is piecewise smooth).
pub fn entropy_with_grad(z: ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>)> {
    let (n, d) = z.dim();
    check_rows(z, KL_NEIGHBORS + 1)?;
    let dists = knn_distances(z, KL_NEIGHBORS);
    let mut grad = Array2::zeros((n, d));
    let scale = d as f64 / n as f64;
    for (i, &(r, j)) in dists.iter().enumerate() {
        if r == 0.0 {
            continue;
        }
        // ∂ log‖z_i − z_j‖ = (z_i − z_j)/‖z_i − z_j‖².
        let diff = &z.row(i) - &z.row(j);
        let g = diff.mapv(|v| v * scale / (r * r));
        grad.row_mut(i).scaled_add(1.0, &g);
        grad.row_mut(j).scaled_add(-1.0, &g);
    }
    let value = if dists.iter().any(|(r, _)| *r == 0.0) {
        f64::NEG_INFINITY
    } else {
        kl_from_distances(n, d, &dists)
    };
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut r = rng::stream(seed, &[77]);
        Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(&mut r))
    }

    #[test]
    fn tree_and_brute_force_agree() {
        let z = randn(500, 3, 1);
        let tree = KdTree::build(z.view());
        let brute = knn_brute(z.view(), 3);
        for i in 0..500 {
            let t = tree.knn(i, 3);
            for (a, b) in t.iter().zip(&brute[i]) {
                assert!((a.0 - b.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gaussian_entropy() {
        let d = 4;
        let z = randn(50_000, d, 2);
        let h = entropy_estimate(z.view()).unwrap();
        let exact = d as f64 / 2.0 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        assert!((exact - 5.6758).abs() < 1e-4);
        assert!((h - exact).abs() < 0.1, "{h} vs {exact}");
        let h2 = entropy_estimate((&z * 2.0).view()).unwrap();
        assert!((h2 - h - d as f64 * 2f64.ln()).abs() < 0.05);
    }

    #[test]
    fn unit_square_entropy_is_zero() {
        let mut r = rng::stream(3, &[78]);
        let z = Array2::from_shape_simple_fn((50_000, 2), || r.random::<f64>());
        let h = entropy_estimate(z.view()).unwrap();
        assert!(h.abs() < 0.05, "{h}");
    }

    #[test]
    fn duplicates_are_jittered_not_fatal() {
        let mut z = randn(200, 2, 4);
        let first = z.row(0).to_owned();
        z.row_mut(1).assign(&first);
        assert!(entropy_estimate(z.view()).unwrap().is_finite());
    }

    #[test]
    fn too_few_rows_rejected() {
        assert!(entropy_estimate(randn(5, 4, 1).view()).is_err());
    }

    #[test]
    fn gradient_matches_finite_difference_locally() {
        let z = randn(40, 3, 5);
        let (h0, g) = entropy_with_grad(z.view()).unwrap();
        assert!((h0 - entropy_estimate(z.view()).unwrap()).abs() < 1e-12);
        let eps = 1e-7;
        for (i, j) in [(0, 0), (7, 2), (23, 1)] {
            let mut zp = z.clone();
            zp[[i, j]] += eps;
            let mut zm = z.clone();
            zm[[i, j]] -= eps;
            let fd = (entropy_with_grad(zp.view()).unwrap().0 - entropy_with_grad(zm.view()).unwrap().0) / (2.0 * eps);
            assert!((fd - g[[i, j]]).abs() < 1e-5, "({i},{j}): {fd} vs {}", g[[i, j]]);
        }
    }
}
