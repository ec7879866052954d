//! Adam training of encoders on augmented pairs, with held-out evaluation.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::encoder::{grad_through_normalization_rows, EmbeddingBatch, Encoder, Gradients};
use crate::error::{Error, Result};
use crate::gaussdiag::{coordinate_report, DiagnosticsReport, ReportExtras, VerdictRule};
use crate::objective::{entropy_with_grad, infonce_with_grad, regularized_objective, LossParams, LossReport};
use crate::rng::{self, derive_seed, tag};
use crate::synthdata::{augment_pair, AugmentationChannel, Dataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub tau: f64,
    pub beta: f64,
    pub lambda: f64,
    pub seed: u64,
    pub eval_every: usize,
    /// Fraction of rows used for training; the rest is held out.
    pub train_fraction: f64,
    /// Cap on held-out rows used per evaluation.
    pub eval_rows: usize,
    /// Mildness reported alongside evaluations, when known.
    pub eta2: Option<f64>,
    pub verdict: VerdictRule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            weight_decay: 1e-4,
            batch_size: 128,
            epochs: 150,
            tau: 0.1,
            beta: 0.0,
            lambda: 1.0,
            seed: 0,
            eval_every: 10,
            train_fraction: 0.8,
            eval_rows: 5000,
            eta2: None,
            verdict: VerdictRule::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("lr", "must be positive"));
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::invalid("adam_betas", "both betas must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::invalid("adam_eps", "must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight_decay", "must be >= 0"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid(
                "batch_size",
                "InfoNCE needs at least two rows per batch",
            ));
        }
        if self.eval_every == 0 {
            return Err(Error::invalid("eval_every", "must be positive"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid("train_fraction", "must lie in (0, 1)"));
        }
        if self.eval_rows < 2 {
            return Err(Error::invalid("eval_rows", "must be at least 2"));
        }
        if let Some(e) = self.eta2 {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::invalid("eta2", "must lie in [0, 1]"));
            }
        }
        self.loss_params().map(|_| ())
    }

    pub fn loss_params(&self) -> Result<LossParams> {
        LossParams::new(self.tau, self.beta, self.lambda)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: usize) -> Self {
        Self {
            m: vec![0.0; params],
            v: vec![0.0; params],
            t: 0,
        }
    }
}

/// One Adam update with decoupled weight decay.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, config: &TrainConfig) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::invalid("grads", "parameter, gradient and state sizes differ"));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i}")));
    }
    let (b1, b2) = config.adam_betas;
    state.t += 1;
    let c1 = 1.0 - b1.powf(state.t as f64);
    let c2 = 1.0 - b2.powf(state.t as f64);
    let decay = 1.0 - config.lr * config.weight_decay;
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p = *p * decay - config.lr * m_hat / (v_hat.sqrt() + config.adam_eps);
    }
    Ok(())
}

/// Loss of one batch of positive pairs and its parameter gradient.
///
/// The InfoNCE term uses the normalized embeddings of both views. When
/// `beta > 0` the regularizer `−H + λ E‖z‖²` is evaluated on the raw
/// embeddings of each view and averaged over the two views.
pub fn batch_loss_and_grad(
    encoder: &Encoder,
    view_a: ArrayView2<'_, f64>,
    view_b: ArrayView2<'_, f64>,
    params: &LossParams,
) -> Result<(f64, Gradients)> {
    let ta = encoder.forward_trace(view_a)?;
    let tb = encoder.forward_trace(view_b)?;
    let (ea, eb) = (&ta.embeddings, &tb.embeddings);
    let (mut loss, gu, gv) = infonce_with_grad(ea.normalized.view(), eb.normalized.view(), params.tau)?;
    let mut up_a = grad_through_normalization_rows(ea.raw.view(), gu.view());
    let mut up_b = grad_through_normalization_rows(eb.raw.view(), gv.view());
    if params.beta > 0.0 {
        for (raw, up) in [(&ea.raw, &mut up_a), (&eb.raw, &mut up_b)] {
            let n = raw.nrows() as f64;
            let (h, gh) = entropy_with_grad(raw.view())?;
            let msn = raw.iter().map(|x| x * x).sum::<f64>() / n;
            let w = 0.5 * params.beta;
            loss += w * (-h + params.lambda * msn);
            up.scaled_add(-w, &gh);
            up.scaled_add(w * 2.0 * params.lambda / n, raw);
        }
    }
    let mut grads = encoder.backward_trace(view_a, &ta, up_a.view())?;
    grads.add_assign(&encoder.backward_trace(view_b, &tb, up_b.view())?);
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub epoch: usize,
    /// Mean training batch loss over the epoch; absent before training.
    pub train_loss: Option<f64>,
    pub loss: LossReport,
    pub diagnostics: DiagnosticsReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EvalRecord>,
}

impl TrainHistory {
    pub fn first(&self) -> Option<&EvalRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&EvalRecord> {
        self.records.last()
    }

    pub fn at_epoch(&self, epoch: usize) -> Option<&EvalRecord> {
        self.records.iter().find(|r| r.epoch == epoch)
    }
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub encoder: Encoder,
    pub adam: AdamState,
    pub epochs_done: usize,
    pub history: TrainHistory,
}

impl TrainState {
    pub fn fresh(encoder: Encoder) -> Self {
        let adam = AdamState::new(encoder.param_count());
        Self {
            encoder,
            adam,
            epochs_done: 0,
            history: TrainHistory::default(),
        }
    }
}

/// Deterministic train/held-out split of the dataset rows.
pub fn split_rows(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng::stream(seed, &[tag::SPLIT]));
    let cut = ((n as f64) * train_fraction).round() as usize;
    let eval = ids.split_off(cut.min(n));
    (ids, eval)
}

/// Evaluates the objective on a fixed augmented pair of the held-out rows
/// and the diagnostics on the embeddings of the clean held-out rows.
pub fn evaluate(
    encoder: &Encoder,
    dataset: &Dataset,
    channel: &AugmentationChannel,
    eval_ids: &[usize],
    config: &TrainConfig,
) -> Result<(LossReport, DiagnosticsReport)> {
    let ids = &eval_ids[..eval_ids.len().min(config.eval_rows)];
    let pair = augment_pair(dataset, channel, ids, derive_seed(config.seed, &[tag::EVAL]))?;
    let a = encoder.forward(pair.view_a.view())?;
    let b = encoder.forward(pair.view_b.view())?;
    let clean = encoder.forward(dataset.select(ids).samples.view())?;
    let params = config.loss_params()?;
    let loss = regularized_objective(a.normalized.view(), b.normalized.view(), a.raw.view(), &params)?;
    let extras = ReportExtras {
        eta2: config.eta2,
        pairs: Some((a.normalized.view(), b.normalized.view())),
    };
    let diagnostics = coordinate_report(clean.raw.view(), clean.normalized.view(), extras, &config.verdict)?;
    Ok((loss, diagnostics))
}

/// Trains from `state` until `config.epochs` epochs are done, calling
/// `on_eval` after every evaluation.
pub fn train_from(
    dataset: &Dataset,
    channel: &AugmentationChannel,
    mut state: TrainState,
    config: &TrainConfig,
    mut on_eval: impl FnMut(&EvalRecord) -> Result<()>,
) -> Result<TrainState> {
    config.validate()?;
    channel.validate()?;
    if state.encoder.d_in() != dataset.d_data() {
        return Err(Error::invalid("encoder", "input width differs from the data dimension"));
    }
    let params = config.loss_params()?;
    let (train_ids, eval_ids) = split_rows(dataset.n(), config.train_fraction, config.seed);
    let n = config.batch_size;
    if train_ids.len() < n {
        return Err(Error::invalid("batch_size", "larger than the training split"));
    }
    if eval_ids.len() < crate::gaussdiag::MIN_REPORT_ROWS.max(state.encoder.d_out() + 2) {
        return Err(Error::invalid("dataset", "held-out split too small for evaluation"));
    }
    if config.beta > 0.0 && n < state.encoder.d_out() + 2 {
        return Err(Error::invalid(
            "batch_size",
            "the entropy term needs batch_size >= d + 2",
        ));
    }

    let mut record = |state: &mut TrainState, train_loss: Option<f64>| -> Result<()> {
        let (loss, diagnostics) = evaluate(&state.encoder, dataset, channel, &eval_ids, config)?;
        let rec = EvalRecord {
            epoch: state.epochs_done,
            train_loss,
            loss,
            diagnostics,
        };
        on_eval(&rec)?;
        state.history.records.push(rec);
        Ok(())
    };

    if state.epochs_done == 0 && state.history.records.is_empty() {
        record(&mut state, None)?;
    }
    let steps = train_ids.len() / n;
    let mut flat = state.encoder.flat_params();
    while state.epochs_done < config.epochs {
        let epoch = state.epochs_done + 1;
        let mut order = train_ids.clone();
        order.shuffle(&mut rng::stream(config.seed, &[tag::SHUFFLE, epoch as u64]));
        let mut losses = Vec::with_capacity(steps);
        for step in 0..steps {
            let batch = &order[step * n..(step + 1) * n];
            let seed = derive_seed(config.seed, &[tag::AUGMENT, epoch as u64, step as u64]);
            let pair = augment_pair(dataset, channel, batch, seed)?;
            let outcome = batch_loss_and_grad(&state.encoder, pair.view_a.view(), pair.view_b.view(), &params)
                .and_then(|(loss, grads)| {
                    if !loss.is_finite() {
                        return Err(Error::NonFinite("batch loss".into()));
                    }
                    let g: Vec<f64> = grads.iter().copied().collect();
                    let mut next = flat.clone();
                    let mut adam = state.adam.clone();
                    adam_step(&mut next, &g, &mut adam, config)?;
                    if next.iter().any(|p| !p.is_finite()) {
                        return Err(Error::NonFinite("parameters after update".into()));
                    }
                    Ok((loss, next, adam))
                });
            match outcome {
                Ok((loss, next, adam)) => {
                    flat = next;
                    state.adam = adam;
                    state.encoder.set_flat_params(&flat)?;
                    losses.push(loss);
                }
                Err(e) => {
                    return Err(Error::Divergence {
                        epoch,
                        step,
                        reason: e.to_string(),
                        last_good: Box::new(state.encoder.clone()),
                    })
                }
            }
        }
        state.epochs_done = epoch;
        if epoch % config.eval_every == 0 || epoch == config.epochs {
            let mean = crate::stats::mean(&losses);
            record(&mut state, Some(mean))?;
        }
    }
    Ok(state)
}

/// Trains a fresh run and returns the final encoder and history.
pub fn train(
    dataset: &Dataset,
    channel: &AugmentationChannel,
    encoder: Encoder,
    config: &TrainConfig,
) -> Result<(Encoder, TrainHistory)> {
    let state = train_from(dataset, channel, TrainState::fresh(encoder), config, |_| Ok(()))?;
    Ok((state.encoder, state.history))
}

/// Embeddings used by [`evaluate`]: the clean held-out rows and the fixed
/// augmented pair, together with the base rows.
#[derive(Debug, Clone, PartialEq)]
pub struct HeldOut {
    pub clean: EmbeddingBatch,
    pub view_a: EmbeddingBatch,
    pub view_b: EmbeddingBatch,
    pub base: Array2<f64>,
}

pub fn held_out_embeddings(
    encoder: &Encoder,
    dataset: &Dataset,
    channel: &AugmentationChannel,
    config: &TrainConfig,
) -> Result<HeldOut> {
    let (_, eval_ids) = split_rows(dataset.n(), config.train_fraction, config.seed);
    let ids = &eval_ids[..eval_ids.len().min(config.eval_rows)];
    let pair = augment_pair(dataset, channel, ids, derive_seed(config.seed, &[tag::EVAL]))?;
    let base = dataset.select(ids).samples;
    Ok(HeldOut {
        clean: encoder.forward(base.view())?,
        view_a: encoder.forward(pair.view_a.view())?,
        view_b: encoder.forward(pair.view_b.view())?,
        base,
    })
}
