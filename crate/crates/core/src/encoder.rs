//! Linear and two-layer ReLU encoders with analytic gradients.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// Inputs whose nonzero fraction is below this use the sparse kernels.
const SPARSE_DENSITY: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    None,
    Relu,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn d_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub layers: Vec<Layer>,
    pub activation: Activation,
    pub seed: u64,
}

/// Raw encoder outputs together with their unit-normalized rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub raw: Array2<f64>,
    pub normalized: Array2<f64>,
    /// Direction assigned to rows whose raw norm is zero.
    pub fallback: Array1<f64>,
}

impl EmbeddingBatch {
    /// Normalizes every row of `raw`; zero rows map to the first basis vector.
    pub fn from_raw(raw: Array2<f64>) -> Self {
        let d = raw.ncols();
        let mut fallback = Array1::zeros(d);
        if d > 0 {
            fallback[0] = 1.0;
        }
        let mut normalized = raw.clone();
        for mut row in normalized.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row.mapv_inplace(|x| x / norm);
            } else {
                row.assign(&fallback);
            }
        }
        Self {
            raw,
            normalized,
            fallback,
        }
    }

    pub fn norms(&self) -> Vec<f64> {
        self.raw.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect()
    }

    pub fn n(&self) -> usize {
        self.raw.nrows()
    }

    pub fn dim(&self) -> usize {
        self.raw.ncols()
    }
}

/// Parameter gradients, laid out like [`Encoder::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(enc: &Encoder) -> Self {
        Self {
            layers: enc
                .layers
                .iter()
                .map(|l| Layer {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, g| m.max(g.abs()))
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    input_sparse: bool,
    /// Pre-activation of the hidden layer (two-layer encoders only).
    hidden_pre: Option<Array2<f64>>,
    pub embeddings: EmbeddingBatch,
}

fn nonzero_fraction(x: ArrayView2<'_, f64>) -> f64 {
    if x.is_empty() {
        return 1.0;
    }
    x.iter().filter(|v| **v != 0.0).count() as f64 / x.len() as f64
}

/// `x Wᵀ + b` for row-major `x`.
fn affine(x: ArrayView2<'_, f64>, layer: &Layer, sparse: bool) -> Array2<f64> {
    let mut out = if sparse {
        let wt = layer.weights.t().as_standard_layout().into_owned();
        let mut out = Array2::zeros((x.nrows(), layer.d_out()));
        for (xi, mut oi) in x.rows().into_iter().zip(out.rows_mut()) {
            for (j, &v) in xi.iter().enumerate() {
                if v != 0.0 {
                    oi.scaled_add(v, &wt.row(j));
                }
            }
        }
        out
    } else {
        x.dot(&layer.weights.t())
    };
    out += &layer.bias;
    out
}

/// `gᵀ x`, the weight gradient of an affine layer.
fn weight_grad(g: ArrayView2<'_, f64>, x: ArrayView2<'_, f64>, sparse: bool) -> Array2<f64> {
    if sparse {
        let mut acc_t: Array2<f64> = Array2::zeros((x.ncols(), g.ncols()));
        for (xi, gi) in x.rows().into_iter().zip(g.rows()) {
            for (j, &v) in xi.iter().enumerate() {
                if v != 0.0 {
                    acc_t.row_mut(j).scaled_add(v, &gi);
                }
            }
        }
        acc_t.reversed_axes().as_standard_layout().into_owned()
    } else {
        g.t().dot(&x)
    }
}

impl Encoder {
    /// Fresh encoder with weights i.i.d. uniform on `±1/√fan_in` and zero
    /// biases. `dims` lists layer widths from input to output, so a linear
    /// encoder is `[d_in, d]` and an MLP is `[d_in, hidden, d]`.
    pub fn init(dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.len() > 3 {
            return Err(Error::invalid("dims", "encoders have one or two layers"));
        }
        if dims.contains(&0) {
            return Err(Error::invalid("dims", "layer widths must be positive"));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(li, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut r = rng::stream(seed, &[tag::INIT, li as u64]);
                Layer {
                    weights: Array2::from_shape_simple_fn((fan_out, fan_in), || r.random_range(-bound..bound)),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self {
            layers,
            activation,
            seed,
        })
    }

    pub fn linear(d_in: usize, d_out: usize, seed: u64) -> Result<Self> {
        Self::init(&[d_in, d_out], Activation::None, seed)
    }

    pub fn mlp(d_in: usize, hidden: usize, d_out: usize, seed: u64) -> Result<Self> {
        Self::init(&[d_in, hidden, d_out], Activation::Relu, seed)
    }

    /// Builds an encoder from explicit layers after checking shapes.
    pub fn from_layers(layers: Vec<Layer>, activation: Activation, seed: u64) -> Result<Self> {
        let enc = Self {
            layers,
            activation,
            seed,
        };
        enc.validate()?;
        Ok(enc)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() || self.layers.len() > 2 {
            return Err(Error::invalid("layers", "encoders have one or two layers"));
        }
        for l in &self.layers {
            if l.bias.len() != l.d_out() {
                return Err(Error::invalid("bias", "length must equal layer output width"));
            }
        }
        if self.layers.len() == 2 && self.layers[1].d_in() != self.layers[0].d_out() {
            return Err(Error::invalid("layers", "consecutive layer shapes do not compose"));
        }
        Ok(())
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().map(Layer::d_out).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn check_input(&self, batch: ArrayView2<'_, f64>) -> Result<()> {
        if batch.ncols() != self.d_in() {
            return Err(Error::invalid(
                "batch",
                format!("expected {} columns, got {}", self.d_in(), batch.ncols()),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, batch: ArrayView2<'_, f64>) -> Result<EmbeddingBatch> {
        Ok(self.forward_trace(batch)?.embeddings)
    }

    pub fn forward_trace(&self, batch: ArrayView2<'_, f64>) -> Result<Trace> {
        self.check_input(batch)?;
        let sparse = nonzero_fraction(batch) < SPARSE_DENSITY;
        let first = affine(batch, &self.layers[0], sparse);
        let (raw, hidden_pre) = match self.layers.get(1) {
            None => (first, None),
            Some(second) => {
                let act = self.activate(&first);
                (affine(act.view(), second, false), Some(first))
            }
        };
        Ok(Trace {
            input_sparse: sparse,
            hidden_pre,
            embeddings: EmbeddingBatch::from_raw(raw),
        })
    }

    fn activate(&self, pre: &Array2<f64>) -> Array2<f64> {
        match self.activation {
            Activation::None => pre.clone(),
            Activation::Relu => pre.mapv(|v| v.max(0.0)),
        }
    }

    /// Gradients of `Σ_rows ⟨upstream, raw⟩` with respect to every parameter.
    pub fn backward(&self, batch: ArrayView2<'_, f64>, upstream_grad_raw: ArrayView2<'_, f64>) -> Result<Gradients> {
        let trace = self.forward_trace(batch)?;
        self.backward_trace(batch, &trace, upstream_grad_raw)
    }

    /// Backward pass reusing the values recorded by [`Encoder::forward_trace`].
    pub fn backward_trace(
        &self,
        batch: ArrayView2<'_, f64>,
        trace: &Trace,
        upstream_grad_raw: ArrayView2<'_, f64>,
    ) -> Result<Gradients> {
        self.check_input(batch)?;
        if upstream_grad_raw.dim() != (batch.nrows(), self.d_out()) {
            return Err(Error::invalid(
                "upstream_grad_raw",
                format!(
                    "expected shape {:?}, got {:?}",
                    (batch.nrows(), self.d_out()),
                    upstream_grad_raw.dim()
                ),
            ));
        }
        let g = upstream_grad_raw;
        match (&self.layers[..], &trace.hidden_pre) {
            ([_], _) => Ok(Gradients {
                layers: vec![Layer {
                    weights: weight_grad(g, batch, trace.input_sparse),
                    bias: g.sum_axis(Axis(0)),
                }],
            }),
            ([first, second], Some(pre)) => {
                let act = self.activate(pre);
                let top = Layer {
                    weights: g.t().dot(&act),
                    bias: g.sum_axis(Axis(0)),
                };
                let mut g_hidden = g.dot(&second.weights);
                if self.activation == Activation::Relu {
                    // Subgradient 0 at exactly 0.
                    g_hidden.zip_mut_with(pre, |gh, &p| {
                        if p <= 0.0 {
                            *gh = 0.0
                        }
                    });
                }
                let bottom = Layer {
                    weights: weight_grad(g_hidden.view(), batch, trace.input_sparse),
                    bias: g_hidden.sum_axis(Axis(0)),
                };
                debug_assert_eq!(bottom.weights.dim(), first.weights.dim());
                Ok(Gradients {
                    layers: vec![bottom, top],
                })
            }
            _ => Err(Error::invalid("trace", "trace does not match encoder depth")),
        }
    }

    /// Flattened parameters: per layer, weights row-major then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::invalid(
                "params",
                format!("expected {} values, got {}", self.param_count(), flat.len()),
            ));
        }
        let mut off = 0;
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = flat[off];
                off += 1;
            }
        }
        Ok(())
    }

    /// Layer widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.d_in())
            .chain(self.layers.iter().map(Layer::d_out))
            .collect()
    }

    /// Copy of the last layer scaled by `c` (used for scale-invariance checks).
    pub fn scale_last_layer(&self, c: f64) -> Encoder {
        let mut e = self.clone();
        if let Some(l) = e.layers.last_mut() {
            l.weights.mapv_inplace(|w| w * c);
            l.bias.mapv_inplace(|b| b * c);
        }
        e
    }
}

/// Pulls a gradient with respect to `u = z/‖z‖` back to `z`:
/// `(I − u uᵀ) g / ‖z‖`.
pub fn grad_through_normalization(
    raw_row: ArrayView1<'_, f64>,
    upstream_grad_u: ArrayView1<'_, f64>,
) -> Result<Array1<f64>> {
    if raw_row.len() != upstream_grad_u.len() {
        return Err(Error::invalid("upstream_grad_u", "length differs from raw row"));
    }
    let norm = raw_row.dot(&raw_row).sqrt();
    if norm == 0.0 {
        return Err(Error::Degenerate(
            "normalization is not differentiable at the zero vector".into(),
        ));
    }
    let radial = raw_row.dot(&upstream_grad_u) / norm;
    Ok((&upstream_grad_u - &(&raw_row * (radial / norm))) / norm)
}

/// Row-wise [`grad_through_normalization`]; rows with zero norm get a zero
/// gradient (the fallback direction is constant).
pub fn grad_through_normalization_rows(raw: ArrayView2<'_, f64>, upstream: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros(raw.raw_dim());
    for ((z, g), mut o) in raw.rows().into_iter().zip(upstream.rows()).zip(out.rows_mut()) {
        if let Ok(v) = grad_through_normalization(z, g) {
            o.assign(&v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut r = rng::stream(seed, &[1234]);
        Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut r))
    }

    #[test]
    fn identity_encoder_passes_input_through() {
        let layer = Layer {
            weights: Array2::eye(3),
            bias: Array1::zeros(3),
        };
        let enc = Encoder::from_layers(vec![layer], Activation::None, 0).unwrap();
        let x = randn(5, 3, 1);
        let out = enc.forward(x.view()).unwrap();
        assert_eq!(out.raw, x);
    }

    #[test]
    fn zero_encoder_falls_back_to_first_basis_vector() {
        let layer = Layer {
            weights: Array2::zeros((4, 3)),
            bias: Array1::zeros(4),
        };
        let enc = Encoder::from_layers(vec![layer], Activation::None, 0).unwrap();
        let out = enc.forward(randn(6, 3, 2).view()).unwrap();
        for row in out.normalized.rows() {
            assert_eq!(row, array![1.0, 0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn scaling_map_normalizes() {
        let layer = Layer {
            weights: array![[2.0, 0.0], [0.0, 2.0]],
            bias: Array1::zeros(2),
        };
        let enc = Encoder::from_layers(vec![layer], Activation::None, 0).unwrap();
        let out = enc.forward(array![[1.0, 0.0]].view()).unwrap();
        assert_eq!(out.raw, array![[2.0, 0.0]]);
        assert_eq!(out.normalized, array![[1.0, 0.0]]);
    }

    #[test]
    fn normalized_rows_are_unit() {
        let enc = Encoder::mlp(7, 9, 5, 3).unwrap();
        let out = enc.forward(randn(40, 7, 4).view()).unwrap();
        for row in out.normalized.rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let enc = Encoder::linear(4, 2, 0).unwrap();
        assert!(enc.forward(randn(3, 5, 0).view()).is_err());
        let x = randn(3, 4, 0);
        assert!(enc.backward(x.view(), Array2::zeros((3, 3)).view()).is_err());
        assert!(Encoder::init(&[4], Activation::None, 0).is_err());
        assert!(Encoder::init(&[4, 3, 2, 1], Activation::Relu, 0).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let enc = Encoder::mlp(5, 6, 4, 1).unwrap();
        let x = randn(8, 5, 2);
        let g = enc.backward(x.view(), Array2::zeros((8, 4)).view()).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn scalar_chain_rule() {
        let layer = Layer {
            weights: array![[0.7]],
            bias: array![0.0],
        };
        let enc = Encoder::from_layers(vec![layer], Activation::None, 0).unwrap();
        let g = enc.backward(array![[1.5]].view(), array![[-2.0]].view()).unwrap();
        assert_eq!(g.layers[0].weights[[0, 0]], -3.0);
        assert_eq!(g.layers[0].bias[0], -2.0);
    }

    fn objective(enc: &Encoder, x: &Array2<f64>, up: &Array2<f64>) -> f64 {
        (&enc.forward(x.view()).unwrap().raw * up).sum()
    }

    fn check_fd(enc: &Encoder, x: &Array2<f64>, up: &Array2<f64>) -> f64 {
        let g = enc.backward(x.view(), up.view()).unwrap();
        let analytic: Vec<f64> = g.iter().copied().collect();
        let base = enc.flat_params();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (i, &a) in analytic.iter().enumerate() {
            let mut p = base.clone();
            p[i] += h;
            let mut e = enc.clone();
            e.set_flat_params(&p).unwrap();
            let fp = objective(&e, x, up);
            p[i] -= 2.0 * h;
            e.set_flat_params(&p).unwrap();
            let fm = objective(&e, x, up);
            let fd = (fp - fm) / (2.0 * h);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        worst
    }

    #[test]
    fn mlp_gradient_matches_finite_difference() {
        let enc = Encoder::mlp(5, 6, 4, 11).unwrap();
        let x = randn(8, 5, 12);
        let up = randn(8, 4, 13);
        let worst = check_fd(&enc, &x, &up);
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn gradients_match_finite_difference_across_configurations() {
        for trial in 0..20u64 {
            let enc = if trial % 2 == 0 {
                Encoder::linear(4, 3, trial).unwrap()
            } else {
                let mut e = Encoder::mlp(4, 5, 3, trial).unwrap();
                // Non-zero biases exercise every branch of the backward pass.
                e.layers[0].bias = Array1::from_elem(5, 0.1);
                e
            };
            let x = randn(6, 4, 100 + trial);
            let up = randn(6, 3, 200 + trial);
            let worst = check_fd(&enc, &x, &up);
            assert!(worst < 1e-4, "trial {trial}: {worst}");
        }
    }

    #[test]
    fn sparse_and_dense_paths_agree() {
        let enc = Encoder::mlp(200, 8, 4, 5).unwrap();
        let mut x = Array2::zeros((10, 200));
        for i in 0..10 {
            x[[i, (i * 37) % 200]] = 1.0;
            x[[i, (i * 11 + 3) % 200]] = 1.0;
        }
        let up = randn(10, 4, 6);
        let trace = enc.forward_trace(x.view()).unwrap();
        assert!(trace.input_sparse);
        let g_sparse = enc.backward_trace(x.view(), &trace, up.view()).unwrap();
        let dense_raw = {
            let h = x.dot(&enc.layers[0].weights.t()) + &enc.layers[0].bias;
            h.mapv(|v: f64| v.max(0.0)).dot(&enc.layers[1].weights.t()) + &enc.layers[1].bias
        };
        let diff = (&trace.embeddings.raw - &dense_raw).mapv(f64::abs).sum();
        assert!(diff < 1e-12);
        let mut dense_trace = trace.clone();
        dense_trace.input_sparse = false;
        let g_dense = enc.backward_trace(x.view(), &dense_trace, up.view()).unwrap();
        for (a, b) in g_sparse.iter().zip(g_dense.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn positive_scaling_leaves_directions_unchanged() {
        let enc = Encoder::mlp(6, 7, 5, 8).unwrap();
        let x = randn(30, 6, 9);
        let a = enc.forward(x.view()).unwrap();
        for c in [0.5, 3.0, 1e3] {
            let b = enc.scale_last_layer(c).forward(x.view()).unwrap();
            let diff = (&a.normalized - &b.normalized)
                .mapv(f64::abs)
                .fold(0.0f64, |m, &v| m.max(v));
            assert!(diff < 1e-12, "c = {c}: {diff}");
        }
    }

    #[test]
    fn normalization_gradient_projects_out_radial_part() {
        let z = array![3.0, 4.0];
        let out = grad_through_normalization(z.view(), array![0.6, 0.8].view()).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-15));
        let z = array![1.0, 0.0, 0.0];
        let g = array![0.0, 2.0, -1.0];
        let out = grad_through_normalization(z.view(), g.view()).unwrap();
        assert_eq!(out, g);
        assert!(grad_through_normalization(array![0.0, 0.0].view(), array![1.0, 0.0].view()).is_err());
    }

    #[test]
    fn normalization_gradient_matches_finite_difference() {
        let z = randn(1, 6, 31).row(0).to_owned();
        let g = randn(1, 6, 32).row(0).to_owned();
        let f = |v: &Array1<f64>| v.dot(&g) / v.dot(v).sqrt();
        let analytic = grad_through_normalization(z.view(), g.view()).unwrap();
        let h = 1e-6;
        for i in 0..6 {
            let mut p = z.clone();
            p[i] += h;
            let mut m = z.clone();
            m[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!((fd - analytic[i]).abs() < 1e-5, "{i}: {fd} vs {}", analytic[i]);
        }
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let a = Encoder::linear(16, 4, 3).unwrap();
        let b = Encoder::linear(16, 4, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.layers[0].weights.iter().all(|w| w.abs() <= 0.25));
        assert!(a.layers[0].bias.iter().all(|&b| b == 0.0));
    }
}
