use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{info, warn};
use ncelab::encoder::EmbeddingBatch;
use ncelab::gaussdiag::{coordinate_report, DiagnosticsReport, ReportExtras, VerdictRule};
use ncelab::hgr::{mildness_estimators, HgrEstimate, MildnessRequest};
use ncelab::io::{load_checkpoint, save_checkpoint, EmbeddingFile, Provenance};
use ncelab::rng::derive_seed;
use ncelab::spherestats::{clt_study, histogram};
use ncelab::synthdata::{ChannelKind, DataSpec, Dataset};
use ncelab::trainer::{held_out_embeddings, train_from, EvalRecord, TrainState};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::output::{
    create_dir, radius_histogram, sha256_file, standardized_coordinates, write_csv, write_histogram, write_json,
    JsonLines,
};

fn provenance(cfg: &ExperimentConfig, seed: u64) -> Provenance {
    Provenance {
        config_hash: cfg.hash(),
        seed,
    }
}

#[derive(Serialize)]
struct DatasetMeta<'a> {
    spec: &'a DataSpec,
    rows: usize,
    columns: usize,
    payload_bytes: usize,
    file: &'a Path,
}

pub fn gen(cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    let spec = cfg.data_spec();
    let dataset = spec.generate()?;
    create_dir(&cfg.out)?;
    let path = cfg.out.join("data.nceg");
    EmbeddingFile::new(dataset.samples, false).save(&path)?;
    let meta = DatasetMeta {
        spec: &spec,
        rows: spec.n,
        columns: spec.d_data,
        payload_bytes: spec.n * spec.d_data * 8,
        file: Path::new("data.nceg"),
    };
    write_json(&cfg.out.join("data.json"), &provenance(cfg, spec.seed), &meta)?;
    info!("wrote {} ({}×{})", path.display(), spec.n, spec.d_data);
    Ok(path)
}

/// One point of the dimension × batch-size grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub dim: usize,
    pub batch_size: usize,
}

impl Cell {
    pub fn dir_name(&self) -> String {
        format!("d{}_n{}", self.dim, self.batch_size)
    }

    /// Seed of the cell; depends only on the master seed and the cell itself,
    /// so serial and parallel sweeps agree.
    pub fn seed(&self, master: u64) -> u64 {
        derive_seed(master, &[self.dim as u64, self.batch_size as u64])
    }
}

pub fn grid(cfg: &ExperimentConfig) -> Vec<Cell> {
    cfg.dims
        .iter()
        .flat_map(|&dim| cfg.batch_sizes.iter().map(move |&batch_size| Cell { dim, batch_size }))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
struct CellReport<'a> {
    dim: usize,
    batch_size: usize,
    epochs: usize,
    uniformity_potential: f64,
    infonce: f64,
    diagnostics: &'a DiagnosticsReport,
}

#[derive(Debug, Clone)]
struct CellSummary {
    cell: Cell,
    seed: u64,
    last: EvalRecord,
}

const CHECKPOINT: &str = "checkpoint.ncek";

fn run_cell(cfg: &ExperimentConfig, dataset: &Dataset, cell: Cell, resume: bool) -> CliResult<CellSummary> {
    let dir = cfg.out.join(cell.dir_name());
    create_dir(&dir)?;
    let seed = cell.seed(cfg.seed);
    let prov = provenance(cfg, seed);
    let tc = cfg.train_config(seed, cell.batch_size);
    let channel = cfg.channel_spec();
    let ckpt = dir.join(CHECKPOINT);

    let resumed = resume && ckpt.exists();
    let state = if resumed {
        let (state, header) = load_checkpoint(&ckpt)?;
        if state.encoder.dims() != cfg.fresh_encoder(cell.dim, 0)?.dims() {
            return Err(CliError::Usage(format!(
                "{}: checkpoint shape {:?} does not match the configured encoder",
                ckpt.display(),
                state.encoder.dims()
            )));
        }
        if header.provenance.as_ref().map(|p| p.seed) != Some(seed) {
            warn!("{}: checkpoint was written under a different seed", ckpt.display());
        }
        info!("{}: resuming after epoch {}", cell.dir_name(), state.epochs_done);
        state
    } else {
        TrainState::fresh(cfg.fresh_encoder(cell.dim, seed)?)
    };

    let mut history = JsonLines::open(&dir.join("history.jsonl"), resumed)?;
    let mut sink_err = None;
    let outcome = train_from(dataset, &channel, state, &tc, |rec| {
        info!(
            "{} epoch {:>4}: loss {:.4} cv {:.4} ad {:.3} dp {:.3}",
            cell.dir_name(),
            rec.epoch,
            rec.loss.infonce,
            rec.diagnostics.cv,
            rec.diagnostics.ad_avg,
            rec.diagnostics.dp_avg_p
        );
        if let Err(e) = history.push(&prov, rec) {
            sink_err = Some(e);
        }
        Ok(())
    });
    if let Some(e) = sink_err {
        return Err(e);
    }
    let state = match outcome {
        Ok(state) => state,
        Err(ncelab::Error::Divergence {
            epoch,
            step,
            reason,
            last_good,
        }) => {
            let mut state = TrainState::fresh(*last_good.clone());
            state.epochs_done = epoch;
            save_checkpoint(&dir.join("diverged.ncek"), &state, Some(&prov))?;
            return Err(ncelab::Error::Divergence {
                epoch,
                step,
                reason,
                last_good,
            }
            .into());
        }
        Err(e) => return Err(e.into()),
    };
    save_checkpoint(&ckpt, &state, Some(&prov))?;
    let last = state
        .history
        .last()
        .cloned()
        .ok_or_else(|| CliError::Usage("training produced no evaluation".into()))?;
    let report = CellReport {
        dim: cell.dim,
        batch_size: cell.batch_size,
        epochs: state.epochs_done,
        uniformity_potential: last.loss.uniformity_potential,
        infonce: last.loss.infonce,
        diagnostics: &last.diagnostics,
    };
    write_json(&dir.join("report.json"), &prov, &report)?;
    let held = held_out_embeddings(&state.encoder, dataset, &channel, &tc)?;
    write_histogram(&dir.join("norms.csv"), &prov, &radius_histogram(&held.clean.norms()))?;
    write_histogram(
        &dir.join("coords.csv"),
        &prov,
        &histogram(standardized_coordinates(held.clean.raw.view())),
    )?;
    Ok(CellSummary { cell, seed, last })
}

pub fn train(cfg: &ExperimentConfig, resume: bool, jobs: usize) -> CliResult<()> {
    create_dir(&cfg.out)?;
    write_json(&cfg.out.join("config.json"), &provenance(cfg, cfg.seed), cfg)?;
    let dataset = cfg.data_spec().generate()?;
    let cells = grid(cfg);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<CliResult<CellSummary>>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, cells.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&cell) = cells.get(i) else { break };
                let r = run_cell(cfg, &dataset, cell, resume);
                results.lock().expect("result lock")[i] = Some(r);
            });
        }
    });
    let mut summaries = Vec::with_capacity(cells.len());
    for r in results.into_inner().expect("result lock") {
        summaries.push(r.expect("every cell ran")?);
    }
    let prov = provenance(cfg, cfg.seed);
    write_csv(
        &cfg.out.join("cv_vs_batch.csv"),
        &prov,
        &[
            "cell_seed",
            "dim",
            "batch_size",
            "epoch",
            "cv",
            "mean_norm",
            "ad_avg",
            "ad_pass_fraction",
            "dp_avg_p",
            "dp_pass_fraction",
            "alignment_mean",
            "uniformity_potential",
            "gaussian_verdict",
        ],
        summaries.iter().map(|s| {
            let d = &s.last.diagnostics;
            vec![
                s.seed.to_string(),
                s.cell.dim.to_string(),
                s.cell.batch_size.to_string(),
                s.last.epoch.to_string(),
                d.cv.to_string(),
                d.mean_norm.to_string(),
                d.ad_avg.to_string(),
                d.ad_pass_fraction.to_string(),
                d.dp_avg_p.to_string(),
                d.dp_pass_fraction.to_string(),
                d.alignment_mean.map(|a| a.to_string()).unwrap_or_default(),
                s.last.loss.uniformity_potential.to_string(),
                d.gaussian_verdict.to_string(),
            ]
        }),
    )?;
    Ok(())
}

pub enum DiagnoseInput<'a> {
    Embeddings(&'a Path),
    Checkpoint(&'a Path),
}

#[derive(Serialize)]
struct DiagnoseReport<'a> {
    input: &'a Path,
    input_sha256: String,
    normalized_rows: bool,
    #[serde(flatten)]
    report: &'a DiagnosticsReport,
}

pub fn diagnose(
    cfg: &ExperimentConfig,
    input: DiagnoseInput<'_>,
    use_normalized: bool,
) -> CliResult<DiagnosticsReport> {
    let rule = VerdictRule {
        pass_floor: cfg.pass_floor,
        ..VerdictRule::default()
    };
    let (path, seed, batch, pairs) = match input {
        DiagnoseInput::Embeddings(path) => {
            let file = EmbeddingFile::load(path)?;
            (path, cfg.seed, EmbeddingBatch::from_raw(file.data), None)
        }
        DiagnoseInput::Checkpoint(path) => {
            let (state, header) = load_checkpoint(path)?;
            let seed = header.provenance.as_ref().map_or(cfg.seed, |p| p.seed);
            let dataset = cfg.data_spec().generate()?;
            if dataset.d_data() != state.encoder.d_in() {
                return Err(CliError::Usage(format!(
                    "checkpoint expects {} input columns but the configured data has {}",
                    state.encoder.d_in(),
                    dataset.d_data()
                )));
            }
            let tc = cfg.train_config(seed, cfg.batch_sizes[0]);
            let held = held_out_embeddings(&state.encoder, &dataset, &cfg.channel_spec(), &tc)?;
            (
                path,
                seed,
                held.clean,
                Some((held.view_a.normalized, held.view_b.normalized)),
            )
        }
    };
    let z = if use_normalized {
        batch.normalized.view()
    } else {
        batch.raw.view()
    };
    let extras = ReportExtras {
        eta2: cfg.eta2,
        pairs: pairs.as_ref().map(|(a, b)| (a.view(), b.view())),
    };
    let report = coordinate_report(z, batch.normalized.view(), extras, &rule)?;

    create_dir(&cfg.out)?;
    let prov = provenance(cfg, seed);
    let body = DiagnoseReport {
        input: path,
        input_sha256: sha256_file(path)?,
        normalized_rows: use_normalized,
        report: &report,
    };
    write_json(&cfg.out.join("report.json"), &prov, &body)?;
    write_histogram(&cfg.out.join("norms.csv"), &prov, &radius_histogram(&batch.norms()))?;
    write_histogram(
        &cfg.out.join("coords.csv"),
        &prov,
        &histogram(standardized_coordinates(z)),
    )?;
    Ok(report)
}

pub fn clt(cfg: &ExperimentConfig) -> CliResult<()> {
    let points = clt_study(&cfg.clt_dims, cfg.clt_k, cfg.clt_n, cfg.seed)?;
    create_dir(&cfg.out)?;
    write_csv(
        &cfg.out.join("clt.csv"),
        &provenance(cfg, cfg.seed),
        &["k", "n", "d", "ks", "tv_hist", "tv_bound"],
        points.iter().map(|p| {
            vec![
                cfg.clt_k.to_string(),
                cfg.clt_n.to_string(),
                p.d.to_string(),
                p.ks.to_string(),
                p.tv_hist.map(|t| t.to_string()).unwrap_or_default(),
                p.tv_bound.to_string(),
            ]
        }),
    )
}

#[derive(Serialize)]
struct HgrReport<'a> {
    channel: &'a ncelab::synthdata::AugmentationChannel,
    data: &'a DataSpec,
    samples: usize,
    #[serde(flatten)]
    estimate: &'a HgrEstimate,
}

pub fn hgr(cfg: &ExperimentConfig) -> CliResult<HgrEstimate> {
    if cfg.channel.is_none() {
        return Err(CliError::Usage(
            "hgr needs a channel (--channel or `channel = ...`)".into(),
        ));
    }
    let channel = cfg.channel_spec();
    let method = match cfg.hgr_method.as_str() {
        "auto" if channel.kind == ChannelKind::GaussianMix && channel.jitter.is_off() => "analytic_gaussian",
        "auto" => "binned_svd",
        other => other,
    };
    let spec = cfg.data_spec();
    let dataset = spec.generate()?;
    let request = MildnessRequest {
        samples: cfg.hgr_samples,
        bins: cfg.hgr_bins,
        seed: cfg.seed,
        ..MildnessRequest::default()
    };
    let estimate = mildness_estimators()
        .get(method)?
        .estimate(&dataset, &channel, &request)?;
    create_dir(&cfg.out)?;
    let body = HgrReport {
        channel: &channel,
        data: &spec,
        samples: cfg.hgr_samples,
        estimate: &estimate,
    };
    write_json(&cfg.out.join("hgr.json"), &provenance(cfg, cfg.seed), &body)?;
    Ok(estimate)
}
