//! Experiment execution: runs, sweeps and their on-disk artifacts.
//!
//! A run directory holds
//! - `metrics.csv`: one row per iteration, `t,return,g_0..,violation,mu_0..,x,y,e,metric_source`
//! - `timing.csv`: `t,elapsed_ms`, kept apart so `metrics.csv` is reproducible byte for byte
//! - `policy.csv`: final policy checkpoint
//! - `q_tables.csv`: last critics, `channel,agent,cell,value`
//! - `manifest.json`: config echo, content hash, generator and wall-clock times

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Purpose, GENERATOR_ID};
use crate::train::{tail_mean, train_with, IterRecord, TrainState};

/// Fraction of iterations averaged for "final" summaries.
pub const FINAL_FRACTION: f64 = 0.1;
pub const QUARTER: f64 = 0.25;

/// Git-style blob hash: `sha256("blob <len>\0" || content)`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

pub fn metrics_header(n: usize) -> String {
    let mut cols = vec!["t".to_string(), "return".to_string()];
    cols.extend((0..n).map(|i| format!("g_{i}")));
    cols.push("violation".into());
    cols.extend((0..n).map(|i| format!("mu_{i}")));
    cols.extend(["x", "y", "e", "metric_source"].map(String::from));
    cols.join(",")
}

pub fn metrics_row(r: &IterRecord) -> String {
    let mut cols = vec![r.t.to_string(), r.ret.to_string()];
    cols.extend(r.g.iter().map(f64::to_string));
    cols.push(r.violation.to_string());
    cols.extend(r.mu.iter().map(f64::to_string));
    cols.extend([r.metrics.x, r.metrics.y, r.metrics.e].map(|v| v.to_string()));
    cols.push(r.source.as_str().into());
    cols.join(",")
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub config_toml: String,
    pub config_hash: String,
    pub metrics_hash: String,
    pub seed: u64,
    pub generator: String,
    pub crate_version: String,
    pub started_unix_s: f64,
    pub wall_clock_s: f64,
    pub iterations_completed: usize,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out: PathBuf,
    pub state: TrainState,
    pub final_return: f64,
    pub final_violation: f64,
    pub quarter_return: f64,
    pub quarter_violation: f64,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Executes one run into `out`. Metrics are streamed so an aborted run keeps
/// the rows of completed iterations.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    let cmdp = cfg.build_env()?;
    let utilities = cfg.build_utilities(&cmdp)?;
    let tcfg = cfg.train_config();
    std::fs::create_dir_all(out)?;
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let clock = Instant::now();
    let n = cmdp.n();

    let mut metrics = Vec::new();
    writeln!(metrics, "{}", metrics_header(n))?;
    let mut timing = create(&out.join("timing.csv"))?;
    writeln!(timing, "t,elapsed_ms")?;
    let mut metrics_file = create(&out.join("metrics.csv"))?;
    metrics_file.write_all(&metrics)?;

    let result = train_with(&cmdp, &utilities, &tcfg, |_, rec| {
        let row = metrics_row(rec);
        writeln!(metrics_file, "{row}")?;
        writeln!(metrics, "{row}")?;
        writeln!(timing, "{},{:.3}", rec.t, rec.elapsed_ms)?;
        Ok(())
    });
    metrics_file.flush()?;
    timing.flush()?;

    let (state, err) = match result {
        Ok(s) => (Some(s), None),
        Err(e) => (None, Some(e)),
    };
    let completed = metrics.iter().filter(|&&b| b == b'\n').count() - 1;

    let config_toml = cfg.to_toml();
    let manifest = Manifest {
        config_hash: content_hash(config_toml.as_bytes()),
        config_toml,
        metrics_hash: content_hash(&metrics),
        seed: cfg.seed,
        generator: GENERATOR_ID.into(),
        crate_version: env!("CARGO_PKG_VERSION").into(),
        started_unix_s: started,
        wall_clock_s: clock.elapsed().as_secs_f64(),
        iterations_completed: completed,
    };
    let mut mf = create(&out.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut mf, &manifest).map_err(std::io::Error::from)?;
    writeln!(mf)?;
    mf.flush()?;

    if let Some(e) = err {
        return Err(e);
    }
    let state = state.expect("state present on success");

    let mut pf = create(&out.join("policy.csv"))?;
    state.policy.write_checkpoint(&mut pf)?;
    pf.flush()?;

    let mut qf = create(&out.join("q_tables.csv"))?;
    writeln!(qf, "channel,agent,cell,value")?;
    for (channel, tables) in [("f", state.q_f.iter().collect::<Vec<_>>()), ("g", state.q_g.iter().flatten().collect())] {
        for t in tables {
            for (cell, v) in t.entries() {
                if v != 0.0 || t.is_dense() {
                    writeln!(qf, "{channel},{},{cell},{v}", t.agent)?;
                }
            }
        }
    }
    qf.flush()?;

    let h = &state.history;
    Ok(RunSummary {
        out: out.to_path_buf(),
        final_return: tail_mean(h, FINAL_FRACTION, |r| r.ret),
        final_violation: tail_mean(h, FINAL_FRACTION, |r| r.violation),
        quarter_return: tail_mean(h, QUARTER, |r| r.ret),
        quarter_violation: tail_mean(h, QUARTER, |r| r.violation),
        state,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Kappa,
    EtaMu,
    Threshold,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kappa" => Ok(Self::Kappa),
            "eta_mu" => Ok(Self::EtaMu),
            "threshold" => Ok(Self::Threshold),
            _ => Err(Error::config("--axis", format!("unknown axis `{s}`, expected kappa, eta_mu or threshold"))),
        }
    }
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Kappa => "kappa",
            Self::EtaMu => "eta_mu",
            Self::Threshold => "threshold",
        }
    }

    /// Copy of `base` with the axis set to `value`.
    pub fn apply(&self, base: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut c = base.clone();
        match self {
            Self::Kappa => {
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(Error::config("--values", format!("kappa must be a nonnegative integer, got {value}")));
                }
                c.kappa = value as usize;
            }
            Self::EtaMu => c.eta_mu = value,
            Self::Threshold => match &mut c.constraint {
                Some(u) => u.threshold = Some(value),
                None => return Err(Error::config("constraint", "threshold sweep needs a constraint")),
            },
        }
        c.validate()?;
        Ok(c)
    }
}

pub fn parse_values(text: &str) -> Result<Vec<f64>> {
    let vals: Vec<f64> = text
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| Error::config("--values", format!("`{t}` is not a number"))))
        .collect::<Result<_>>()?;
    if vals.is_empty() {
        return Err(Error::config("--values", "empty value list"));
    }
    Ok(vals)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub replicate: usize,
    pub seed: u64,
    pub final_return: f64,
    pub final_violation: f64,
    pub quarter_return: f64,
    pub quarter_violation: f64,
}

/// Runs every `(value, replicate)` pair. Replicate `r` uses the seed derived
/// from the base seed and `r`, shared across values. Writes `summary.csv`.
pub fn sweep(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
    replicates: usize,
    out: &Path,
    parallel: bool,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::config("--values", "empty value list"));
    }
    if replicates == 0 {
        return Err(Error::config("--replicates", "must be at least 1"));
    }
    let mut jobs = Vec::new();
    for &v in values {
        let cfg = axis.apply(base, v)?;
        for r in 0..replicates {
            let mut c = cfg.clone();
            c.seed = derive_seed(base.seed, Purpose::Sweep, r as u64);
            let dir = out.join(format!("{}={}", axis.name(), v)).join(format!("rep{r}"));
            jobs.push((v, r, c, dir));
        }
    }
    let exec = |(v, r, c, dir): &(f64, usize, ExperimentConfig, PathBuf)| -> Result<SweepRow> {
        let s = run(c, dir)?;
        Ok(SweepRow {
            value: *v,
            replicate: *r,
            seed: c.seed,
            final_return: s.final_return,
            final_violation: s.final_violation,
            quarter_return: s.quarter_return,
            quarter_violation: s.quarter_violation,
        })
    };
    let rows: Vec<SweepRow> = if parallel {
        let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(jobs.len()).max(1);
        let chunk = jobs.len().div_ceil(workers);
        let results: Vec<Result<Vec<SweepRow>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .chunks(chunk)
                .map(|part| scope.spawn(move || part.iter().map(exec).collect::<Result<Vec<_>>>()))
                .collect();
            handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
        });
        let mut rows = Vec::with_capacity(jobs.len());
        for r in results {
            rows.extend(r?);
        }
        rows
    } else {
        jobs.iter().map(exec).collect::<Result<_>>()?
    };
    std::fs::create_dir_all(out)?;
    let mut f = create(&out.join("summary.csv"))?;
    writeln!(f, "{}", summary_header(axis))?;
    for r in &rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            r.value, r.replicate, r.seed, r.final_return, r.final_violation, r.quarter_return, r.quarter_violation
        )?;
    }
    for &v in values {
        let of = |g: fn(&SweepRow) -> f64| median(rows.iter().filter(|r| r.value == v).map(g).collect());
        writeln!(
            f,
            "{v},median,,{},{},{},{}",
            of(|r| r.final_return),
            of(|r| r.final_violation),
            of(|r| r.quarter_return),
            of(|r| r.quarter_violation)
        )?;
    }
    f.flush()?;
    Ok(rows)
}

pub fn summary_header(axis: SweepAxis) -> String {
    format!(
        "{},replicate,seed,final_return,final_violation,final_quarter_return,final_quarter_violation",
        axis.name()
    )
}

pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}
