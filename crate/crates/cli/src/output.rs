//! Artifact writers. Every JSON object and every CSV row carries the config
//! hash and seed of the run that produced it.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use ncelab::io::Provenance;
use ncelab::spherestats::HistogramBin;
use serde::Serialize;

use crate::error::{CliError, CliResult};

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    config_hash: &'a str,
    seed: u64,
    #[serde(flatten)]
    body: &'a T,
}

fn stamped<'a, T: Serialize>(prov: &'a Provenance, body: &'a T) -> Stamped<'a, T> {
    Stamped {
        config_hash: &prov.config_hash,
        seed: prov.seed,
        body,
    }
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, prov: &Provenance, body: &T) -> CliResult<()> {
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, &stamped(prov, body))?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}

/// Appends one JSON object per line.
pub struct JsonLines {
    path: std::path::PathBuf,
    out: BufWriter<File>,
}

impl JsonLines {
    pub fn open(path: &Path, append: bool) -> CliResult<Self> {
        let f = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(|e| CliError::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(f),
        })
    }

    pub fn push<T: Serialize>(&mut self, prov: &Provenance, body: &T) -> CliResult<()> {
        serde_json::to_writer(&mut self.out, &stamped(prov, body))?;
        self.out
            .write_all(b"\n")
            .and_then(|_| self.out.flush())
            .map_err(|e| CliError::io(&self.path, e))
    }
}

/// CSV with a header row; `config_hash` and `seed` lead every row.
pub fn write_csv(
    path: &Path,
    prov: &Provenance,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut head = vec!["config_hash", "seed"];
    head.extend_from_slice(header);
    w.write_record(&head)?;
    let seed = prov.seed.to_string();
    for row in rows {
        let mut rec = vec![prov.config_hash.clone(), seed.clone()];
        rec.extend(row);
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_histogram(path: &Path, prov: &Provenance, bins: &[HistogramBin]) -> CliResult<()> {
    write_csv(
        path,
        prov,
        &["bin_left", "bin_right", "count"],
        bins.iter()
            .map(|b| vec![b.bin_left.to_string(), b.bin_right.to_string(), b.count.to_string()]),
    )
}

pub const RADIUS_BINS: usize = 100;
pub const RADIUS_MAX: f64 = 2.0;

/// Histogram of `‖z‖ / mean ‖z‖` on `[0, 2)`; larger ratios land in the
/// last bin.
pub fn radius_histogram(norms: &[f64]) -> Vec<HistogramBin> {
    let mean = norms.iter().sum::<f64>() / norms.len().max(1) as f64;
    let width = RADIUS_MAX / RADIUS_BINS as f64;
    let mut bins: Vec<HistogramBin> = (0..RADIUS_BINS)
        .map(|b| HistogramBin {
            bin_left: b as f64 * width,
            bin_right: (b + 1) as f64 * width,
            count: 0,
        })
        .collect();
    if mean > 0.0 {
        for r in norms {
            let b = ((r / mean) / width) as usize;
            bins[b.min(RADIUS_BINS - 1)].count += 1;
        }
    }
    bins
}

/// Every coordinate standardized by its own mean and standard deviation,
/// pooled; constant coordinates are skipped.
pub fn standardized_coordinates(z: ndarray::ArrayView2<'_, f64>) -> Vec<f64> {
    let n = z.nrows() as f64;
    let mut out = Vec::with_capacity(z.len());
    for col in z.columns() {
        let mean = col.sum() / n;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if sd > 0.0 {
            out.extend(col.iter().map(|v| (v - mean) / sd));
        }
    }
    out
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    use sha2::{Digest, Sha256};
    let mut f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut h = Sha256::new();
    std::io::copy(&mut f, &mut h).map_err(|e| CliError::io(path, e))?;
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prov() -> Provenance {
        Provenance {
            config_hash: "h".into(),
            seed: 3,
        }
    }

    #[test]
    fn radius_histogram_counts_everything() {
        let norms = [1.0, 1.0, 0.5, 1.5, 9.0];
        let bins = radius_histogram(&norms);
        assert_eq!(bins.iter().map(|b| b.count).sum::<u64>(), 5);
        assert_eq!(bins[RADIUS_BINS - 1].count, 1);
    }

    #[test]
    fn csv_rows_are_stamped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        write_csv(&p, &prov(), &["a"], [vec!["1".into()], vec!["2".into()]]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "config_hash,seed,a\nh,3,1\nh,3,2\n");
    }

    #[test]
    fn json_is_stamped() {
        #[derive(Serialize)]
        struct Body {
            x: f64,
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.json");
        write_json(&p, &prov(), &Body { x: 0.5 }).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(v["config_hash"], "h");
        assert_eq!(v["seed"], 3);
        assert_eq!(v["x"], 0.5);
    }
}
