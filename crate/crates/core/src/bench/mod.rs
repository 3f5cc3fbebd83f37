//! Parameter sweeps, timing records and the derived metrics built on them.

mod csv;
mod fit;

pub use csv::{
    parse_fits_csv, parse_records_csv, write_fits_csv, write_records_csv, CsvError, FIT_COLUMNS,
    RECORD_COLUMNS,
};
pub use fit::{
    fit_latency, latency_probe, scaling_report, FitError, FitRow, LatencyFit, ScalingReport,
    SlopeFit,
};

use std::time::Duration;

use thiserror::Error;

use crate::nodeset::Domain;
use crate::partition::parse_grid;
use crate::rbffd::ApproxConfig;
use crate::solver::{dt_max, run, Discretization, RunOptions, RunOutcome, TransportKind};
use crate::transport::NetModel;

#[derive(Debug, Error, PartialEq)]
pub enum SpecError {
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {value}")]
    BadValue { key: String, value: String },
    #[error("`{0}` must not be empty")]
    Empty(&'static str),
    #[error("repetitions must be at least 1")]
    NoRepetitions,
}

/// A grid of configurations to run, each repeated `reps` times.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub dim: usize,
    pub mixed: bool,
    pub m: Vec<usize>,
    pub h: Vec<f64>,
    /// Support sizes; `None` means the default `2M + 1` for each `m`.
    pub n: Vec<Option<usize>>,
    pub grids: Vec<Vec<usize>>,
    pub transport: TransportKind,
    pub net: NetModel,
    pub reps: usize,
    pub alpha: f64,
    pub max_steps: u64,
    pub report_interval: u64,
    pub residual_tol: Option<f64>,
    pub rng_seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            dim: 2,
            mixed: false,
            m: vec![2],
            h: vec![0.05],
            n: vec![None],
            grids: vec![vec![1, 1]],
            transport: TransportKind::Inproc,
            net: NetModel::disabled(),
            reps: 5,
            alpha: 0.3,
            max_steps: 1000,
            report_interval: 100,
            residual_tol: None,
            rng_seed: 1,
        }
    }
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, SpecError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse().map_err(|_| SpecError::BadValue {
                key: key.into(),
                value: s.into(),
            })
        })
        .collect()
}

fn one<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, SpecError> {
    value.trim().parse().map_err(|_| SpecError::BadValue {
        key: key.into(),
        value: value.into(),
    })
}

impl SweepSpec {
    /// Applies one `key=value` setting. List values are comma separated.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), SpecError> {
        let bad = || SpecError::BadValue {
            key: key.into(),
            value: value.into(),
        };
        match key {
            "dim" => self.dim = one(key, value)?,
            "mixed" | "mixed_bc" => self.mixed = one(key, value)?,
            "m" => self.m = list(key, value)?,
            "h" => self.h = list(key, value)?,
            "n" | "n_support" => {
                self.n = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        if s == "auto" {
                            Ok(None)
                        } else {
                            one(key, s).map(Some)
                        }
                    })
                    .collect::<Result<_, _>>()?
            }
            "grid" | "grids" => {
                self.grids = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|g| parse_grid(g).map_err(|_| bad()))
                    .collect::<Result<_, _>>()?
            }
            "transport" => {
                self.transport = match value.trim() {
                    "inproc" => TransportKind::Inproc,
                    "tcp" => TransportKind::Tcp,
                    _ => return Err(bad()),
                }
            }
            "latency" | "simulate_latency" => {
                let l: f64 = one(key, value)?;
                let b = if self.net.enabled {
                    self.net.bandwidth
                } else {
                    1e9
                };
                self.net = NetModel::simulated(l, b).map_err(|_| bad())?;
            }
            "bandwidth" | "simulate_bandwidth" => {
                let b: f64 = one(key, value)?;
                let l = if self.net.enabled {
                    self.net.latency
                } else {
                    0.0
                };
                self.net = NetModel::simulated(l, b).map_err(|_| bad())?;
            }
            "reps" | "repetitions" => self.reps = one(key, value)?,
            "alpha" => self.alpha = one(key, value)?,
            "max_steps" => self.max_steps = one(key, value)?,
            "report_interval" => self.report_interval = one(key, value)?,
            "residual_tol" => {
                self.residual_tol = if value.trim() == "none" {
                    None
                } else {
                    Some(one(key, value)?)
                }
            }
            "rng_seed" | "seed" => self.rng_seed = one(key, value)?,
            _ => return Err(SpecError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Reads `key = value` lines over the defaults; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, SpecError> {
        let mut spec = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or(SpecError::Syntax { line: i + 1 })?;
            spec.set(&k.trim().replace('-', "_"), v.trim())?;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if self.m.is_empty() {
            return Err(SpecError::Empty("m"));
        }
        if self.h.is_empty() {
            return Err(SpecError::Empty("h"));
        }
        if self.n.is_empty() {
            return Err(SpecError::Empty("n"));
        }
        if self.grids.is_empty() {
            return Err(SpecError::Empty("grid"));
        }
        if self.reps == 0 {
            return Err(SpecError::NoRepetitions);
        }
        Ok(())
    }

    /// Every `(h, m, n, grid)` combination, in that nesting order.
    pub fn configurations(&self) -> Vec<(f64, usize, Option<usize>, Vec<usize>)> {
        let mut out = Vec::new();
        for &h in &self.h {
            for &m in &self.m {
                for &n in &self.n {
                    for g in &self.grids {
                        out.push((h, m, n, g.clone()));
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    Rep,
    Mean,
}

impl RowKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RowKind::Rep => "rep",
            RowKind::Mean => "mean",
        }
    }
}

/// One benchmark row. Times are seconds per step.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub run_id: String,
    pub d: usize,
    pub h: f64,
    pub n_nodes: usize,
    pub m: usize,
    pub n: usize,
    pub p: usize,
    pub t_compute: f64,
    pub t_comm: f64,
    pub t_ws: f64,
    /// Nodes per second per worker, `N / (p t_ws)`.
    pub throughput: f64,
    pub error: f64,
    pub dt_max: f64,
    pub alpha: f64,
    /// Wall seconds per unit of simulated time, `t_ws / (alpha dt_max)`.
    pub t_t_over_t: f64,
    pub bytes_per_step: f64,
    pub max_message_bytes: f64,
    pub steps: u64,
    pub residual: f64,
    /// Standard deviation of `t_ws` over repetitions (aggregate rows only).
    pub t_ws_std: f64,
    pub status: String,
    pub kind: RowKind,
}

impl BenchRecord {
    /// Builds a row from timing means; derived columns follow from them.
    #[allow(clippy::too_many_arguments)]
    pub fn from_times(
        run_id: String,
        d: usize,
        h: f64,
        n_nodes: usize,
        m: usize,
        n: usize,
        p: usize,
        t_compute: f64,
        t_comm: f64,
        alpha: f64,
    ) -> Self {
        let t_ws = t_compute + t_comm;
        let dt_max = dt_max(h, d);
        Self {
            run_id,
            d,
            h,
            n_nodes,
            m,
            n,
            p,
            t_compute,
            t_comm,
            t_ws,
            throughput: if t_ws > 0.0 {
                n_nodes as f64 / (p as f64 * t_ws)
            } else {
                0.0
            },
            error: f64::NAN,
            dt_max,
            alpha,
            t_t_over_t: t_ws / (alpha * dt_max),
            bytes_per_step: 0.0,
            max_message_bytes: 0.0,
            steps: 0,
            residual: f64::NAN,
            t_ws_std: 0.0,
            status: "ok".into(),
            kind: RowKind::Rep,
        }
    }

    pub fn ok(&self) -> bool {
        self.status == "ok"
    }

    /// Row for one finished run.
    pub fn from_outcome<T: crate::Real>(
        run_id: String,
        disc: &Discretization<T>,
        out: &RunOutcome<T>,
        alpha: f64,
    ) -> Self {
        let cfg = disc.stencils.config;
        let mut r = Self::from_times(
            run_id,
            disc.nodes.dim(),
            disc.nodes.h().as_f64(),
            disc.nodes.len(),
            cfg.order(),
            cfg.support_size(),
            out.workers.len(),
            out.compute_per_step(),
            out.comm_per_step(),
            alpha,
        );
        r.error = out.error.as_f64();
        r.bytes_per_step = out.bytes_per_step();
        r.max_message_bytes = out.max_message_bytes();
        r.steps = out.steps;
        r.residual = out.residual().unwrap_or(f64::NAN);
        r
    }

    fn failed(
        run_id: String,
        spec: &SweepSpec,
        h: f64,
        m: usize,
        n: usize,
        p: usize,
        why: &str,
    ) -> Self {
        let mut r = Self::from_times(run_id, spec.dim, h, 0, m, n, p, 0.0, 0.0, spec.alpha);
        r.status = format!("error: {}", sanitize(why));
        r
    }
}

/// Keeps free text safe inside one CSV field.
pub(crate) fn sanitize(s: &str) -> String {
    s.replace([',', '\n', '\r', '"'], " ")
}

/// Mean row over the successful repetitions of one configuration.
pub fn aggregate(run_id: String, reps: &[BenchRecord]) -> Option<BenchRecord> {
    let good: Vec<&BenchRecord> = reps.iter().filter(|r| r.ok()).collect();
    let first = reps.first()?;
    let k = good.len() as f64;
    let mean = |f: &dyn Fn(&BenchRecord) -> f64| {
        if good.is_empty() {
            0.0
        } else {
            good.iter().map(|r| f(r)).sum::<f64>() / k
        }
    };
    let base = good.first().copied().unwrap_or(first);
    let mut row = BenchRecord::from_times(
        run_id,
        base.d,
        base.h,
        base.n_nodes,
        base.m,
        base.n,
        base.p,
        mean(&|r| r.t_compute),
        mean(&|r| r.t_comm),
        base.alpha,
    );
    row.error = if good.is_empty() {
        f64::NAN
    } else {
        mean(&|r| r.error)
    };
    row.bytes_per_step = mean(&|r| r.bytes_per_step);
    row.max_message_bytes = mean(&|r| r.max_message_bytes);
    row.steps = base.steps;
    row.residual = if good.is_empty() {
        f64::NAN
    } else {
        mean(&|r| r.residual)
    };
    row.t_ws_std = if good.len() > 1 {
        let mu = row.t_ws;
        (good.iter().map(|r| (r.t_ws - mu).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    if good.len() != reps.len() {
        row.status = format!(
            "error: {} of {} repetitions failed",
            reps.len() - good.len(),
            reps.len()
        );
    }
    row.kind = RowKind::Mean;
    Some(row)
}

/// Runs every configuration `reps` times, sequentially, and appends a mean
/// row after each configuration's repetitions. Failed runs become rows with
/// an `error:` status; the sweep carries on. `progress` sees every row.
pub fn run_sweep(
    spec: &SweepSpec,
    mut progress: impl FnMut(&BenchRecord),
) -> Result<Vec<BenchRecord>, SpecError> {
    spec.validate()?;
    let mut rows = Vec::new();
    for (ci, (h, m, n, grid)) in spec.configurations().into_iter().enumerate() {
        let p: usize = grid.iter().product();
        let prepared = Domain::<f64>::new(spec.dim, spec.mixed)
            .map_err(|e| e.to_string())
            .and_then(|domain| {
                let mut cfg = ApproxConfig::new(spec.dim, m).map_err(|e| e.to_string())?;
                if let Some(n) = n {
                    cfg = cfg.with_support_size(n).map_err(|e| e.to_string())?;
                }
                Discretization::generate(domain, h, spec.rng_seed, &cfg).map_err(|e| e.to_string())
            });
        let n_eff = match (&prepared, n) {
            (Ok(d), _) => d.stencils.config.support_size(),
            (Err(_), Some(n)) => n,
            (Err(_), None) => 0,
        };
        let mut reps = Vec::with_capacity(spec.reps);
        for rep in 0..spec.reps {
            let id = format!("c{ci}-r{rep}");
            let row = match &prepared {
                Ok(disc) => {
                    let opts = RunOptions {
                        grid: grid.clone(),
                        alpha: spec.alpha,
                        max_steps: spec.max_steps,
                        report_interval: spec.report_interval,
                        residual_tol: spec.residual_tol,
                        transport: spec.transport,
                        net: spec.net,
                        timeout: Duration::from_secs(120),
                    };
                    match run(disc, &opts) {
                        Ok(out) => BenchRecord::from_outcome(id, disc, &out, spec.alpha),
                        Err(e) => BenchRecord::failed(id, spec, h, m, n_eff, p, &e.to_string()),
                    }
                }
                Err(e) => BenchRecord::failed(id, spec, h, m, n_eff, p, e),
            };
            progress(&row);
            reps.push(row);
        }
        let mean = aggregate(format!("c{ci}-mean"), &reps).expect("at least one repetition");
        progress(&mean);
        rows.extend(reps);
        rows.push(mean);
    }
    Ok(rows)
}
