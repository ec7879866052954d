//! Flat experiment configuration.
//!
//! Grammar: one `key = value` pair per line, `#` starts a comment. Values are
//! integers, floats, booleans, double-quoted strings or flat arrays of
//! numbers (`dims = [32, 64]`). Tables and nested arrays are rejected.
//! Command-line `--set key=value` pairs use the same value syntax and are
//! applied after the file.

use std::path::{Path, PathBuf};

use ncelab::encoder::{Activation, Encoder};
use ncelab::gaussdiag::VerdictRule;
use ncelab::synthdata::{
    AugmentationChannel, ChannelKind, DataKind, DataSpec, Jitter, DEFAULT_DENSITY, DEFAULT_GMM_COMPONENTS,
};
use ncelab::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JitterPreset {
    Off,
    Light,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataKind,
    pub n: usize,
    pub d_data: usize,
    pub data_seed: u64,
    pub components: usize,
    pub density: f64,

    /// Defaults to the natural channel of `data`.
    pub channel: Option<ChannelKind>,
    pub mix: f64,
    pub jitter: JitterPreset,
    pub flip_fraction: f64,

    pub encoder: EncoderKind,
    pub hidden: usize,
    pub dims: Vec<usize>,
    pub batch_sizes: Vec<usize>,

    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub tau: f64,
    pub beta: f64,
    pub lambda: f64,
    pub seed: u64,
    pub eval_every: usize,
    pub train_fraction: f64,
    pub eval_rows: usize,
    pub eta2: Option<f64>,
    pub pass_floor: f64,

    /// `auto`, `analytic_gaussian` or `binned_svd`.
    pub hgr_method: String,
    pub hgr_samples: usize,
    pub hgr_bins: usize,

    pub clt_k: usize,
    pub clt_dims: Vec<usize>,
    pub clt_n: usize,

    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            data: DataKind::Laplace,
            n: 10_000,
            d_data: 1024,
            data_seed: 1,
            components: DEFAULT_GMM_COMPONENTS,
            density: DEFAULT_DENSITY,
            channel: None,
            mix: 0.6,
            jitter: JitterPreset::Off,
            flip_fraction: 0.001,
            encoder: EncoderKind::Linear,
            hidden: 512,
            dims: vec![64],
            batch_sizes: vec![t.batch_size],
            lr: t.lr,
            adam_beta1: t.adam_betas.0,
            adam_beta2: t.adam_betas.1,
            adam_eps: t.adam_eps,
            weight_decay: t.weight_decay,
            epochs: t.epochs,
            tau: t.tau,
            beta: t.beta,
            lambda: t.lambda,
            seed: t.seed,
            eval_every: t.eval_every,
            train_fraction: t.train_fraction,
            eval_rows: t.eval_rows,
            eta2: None,
            pass_floor: t.verdict.pass_floor,
            hgr_method: "auto".into(),
            hgr_samples: 20_000,
            hgr_bins: ncelab::hgr::DEFAULT_BINS,
            clt_k: 1,
            clt_dims: vec![16, 64, 256, 1024],
            clt_n: 1_000_000,
            out: PathBuf::from("runs"),
        }
    }
}

/// Parses `key = value` overrides into a TOML table entry.
fn parse_override(raw: &str) -> CliResult<(String, toml::Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override `{raw}` is not of the form key=value")))?;
    let key = key.trim();
    let value = value.trim();
    let parsed: toml::Table = toml::from_str(&format!("v = {value}"))
        .or_else(|_| toml::from_str(&format!("v = {}", toml::Value::String(value.to_string()))))
        .map_err(|e| CliError::Usage(format!("bad value for `{key}`: {e}")))?;
    Ok((key.to_string(), parsed["v"].clone()))
}

fn check_flat(table: &toml::Table) -> CliResult<()> {
    for (k, v) in table {
        let nested = match v {
            toml::Value::Table(_) => true,
            toml::Value::Array(items) => items
                .iter()
                .any(|i| matches!(i, toml::Value::Array(_) | toml::Value::Table(_))),
            _ => false,
        };
        if nested {
            return Err(CliError::Usage(format!("key `{k}`: only flat values are allowed")));
        }
    }
    Ok(())
}

impl ExperimentConfig {
    /// Reads the optional config file, applies overrides and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for raw in overrides {
            let (k, v) = parse_override(raw)?;
            table.insert(k, v);
        }
        check_flat(&table)?;
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let usage = |m: &str| Err(CliError::Usage(m.to_string()));
        if self.n == 0 || self.d_data == 0 {
            return usage("n and d_data must be at least 1");
        }
        if self.dims.is_empty() || self.batch_sizes.is_empty() {
            return usage("dims and batch_sizes must be non-empty");
        }
        if self.dims.contains(&0) || self.batch_sizes.contains(&0) {
            return usage("grid entries must be positive");
        }
        if self.clt_dims.is_empty() {
            return usage("clt_dims must be non-empty");
        }
        if !["auto", "analytic_gaussian", "binned_svd"].contains(&self.hgr_method.as_str()) {
            return usage("hgr_method must be auto, analytic_gaussian or binned_svd");
        }
        self.channel_spec().validate()?;
        self.train_config(0, self.batch_sizes[0]).validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the resolved configuration,
    /// excluding the output directory.
    pub fn hash(&self) -> String {
        let canonical = ExperimentConfig {
            out: PathBuf::new(),
            ..self.clone()
        };
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn data_spec(&self) -> DataSpec {
        DataSpec {
            components: self.components,
            density: self.density,
            ..DataSpec::new(self.data, self.n, self.d_data, self.data_seed)
        }
    }

    pub fn channel_kind(&self) -> ChannelKind {
        self.channel.unwrap_or(match self.data {
            DataKind::Laplace => ChannelKind::GaussianMix,
            DataKind::Gmm => ChannelKind::ComponentResample,
            DataKind::SparseBinary => ChannelKind::BitFlip,
        })
    }

    pub fn channel_spec(&self) -> AugmentationChannel {
        let base = match self.channel_kind() {
            ChannelKind::GaussianMix => AugmentationChannel::gaussian_mix(self.mix),
            ChannelKind::BitFlip => AugmentationChannel::bit_flip(self.flip_fraction),
            ChannelKind::ComponentResample => AugmentationChannel::component_resample(),
        };
        base.with_jitter(match self.jitter {
            JitterPreset::Off => Jitter::OFF,
            JitterPreset::Light => Jitter::LIGHT,
        })
    }

    pub fn train_config(&self, cell_seed: u64, batch_size: usize) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            adam_betas: (self.adam_beta1, self.adam_beta2),
            adam_eps: self.adam_eps,
            weight_decay: self.weight_decay,
            batch_size,
            epochs: self.epochs,
            tau: self.tau,
            beta: self.beta,
            lambda: self.lambda,
            seed: cell_seed,
            eval_every: self.eval_every,
            train_fraction: self.train_fraction,
            eval_rows: self.eval_rows,
            eta2: self.eta2,
            verdict: VerdictRule {
                pass_floor: self.pass_floor,
                ..VerdictRule::default()
            },
        }
    }

    pub fn fresh_encoder(&self, d: usize, seed: u64) -> ncelab::Result<Encoder> {
        match self.encoder {
            EncoderKind::Linear => Encoder::init(&[self.d_data, d], Activation::None, seed),
            EncoderKind::Mlp => Encoder::init(&[self.d_data, self.hidden, d], Activation::Relu, seed),
        }
    }
}
