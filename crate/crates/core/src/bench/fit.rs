use std::time::Duration;

use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use super::{BenchRecord, RowKind};
use crate::partition::PeerList;
use crate::solver::TransportKind;
use crate::transport::{inproc, tcp, NetModel, TransportError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least {need} distinct points, got {got}")]
    InsufficientPoints { need: usize, got: usize },
    #[error("message sizes span a factor of {0:.3e}; at least 1e3 is needed")]
    NarrowSpread(f64),
    #[error("records vary in more than one factor: {0:?}")]
    MixedFactors(Vec<&'static str>),
    #[error("records vary in none of p, n, N")]
    NoFactor,
    #[error("singular fit")]
    Singular,
}

/// One fitted quantity, as written to the fits CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct FitRow {
    pub name: String,
    pub estimate: f64,
    /// 95% confidence half-width; NaN when not available.
    pub half_width: f64,
    /// Theoretical value; NaN when there is none.
    pub expected: f64,
    pub residual: f64,
    pub points: usize,
}

/// `t = latency + bytes / bandwidth`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatencyFit {
    pub latency: f64,
    pub inv_bandwidth: f64,
    pub bandwidth: f64,
    /// RMS relative residual.
    pub residual: f64,
    pub points: usize,
}

impl LatencyFit {
    pub fn rows(&self) -> Vec<FitRow> {
        let row = |name: &str, estimate| FitRow {
            name: name.into(),
            estimate,
            half_width: f64::NAN,
            expected: f64::NAN,
            residual: self.residual,
            points: self.points,
        };
        vec![
            row("latency", self.latency),
            row("inv_bandwidth", self.inv_bandwidth),
            row("bandwidth", self.bandwidth),
        ]
    }
}

/// Least-squares fit of `(bytes, seconds)` pairs to the link model.
///
/// Residuals are taken relative to each measured time, so points several
/// orders of magnitude apart weigh alike. Needs at least four distinct sizes
/// spanning three orders of magnitude.
pub fn fit_latency(points: &[(f64, f64)]) -> Result<LatencyFit, FitError> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|(d, t)| d.is_finite() && t.is_finite())
        .collect();
    let mut sizes: Vec<f64> = pts.iter().map(|p| p.0).collect();
    sizes.sort_by(f64::total_cmp);
    sizes.dedup();
    if sizes.len() < 4 {
        return Err(FitError::InsufficientPoints {
            need: 4,
            got: sizes.len(),
        });
    }
    let smallest = sizes.iter().copied().find(|&d| d > 0.0).unwrap_or(0.0);
    let spread = if smallest > 0.0 {
        sizes[sizes.len() - 1] / smallest
    } else {
        0.0
    };
    if spread < 1e3 {
        return Err(FitError::NarrowSpread(spread));
    }
    // weighted normal equations for t = a + b D
    let (mut sw, mut swd, mut swdd, mut swt, mut swdt) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(d, t) in &pts {
        let w = if t > 0.0 { 1.0 / (t * t) } else { 1.0 };
        sw += w;
        swd += w * d;
        swdd += w * d * d;
        swt += w * t;
        swdt += w * d * t;
    }
    let det = sw * swdd - swd * swd;
    if det.abs() <= f64::EPSILON * sw * swdd {
        return Err(FitError::Singular);
    }
    let a = (swdd * swt - swd * swdt) / det;
    let b = (sw * swdt - swd * swt) / det;
    let residual = (pts
        .iter()
        .map(|&(d, t)| {
            let r = t - a - b * d;
            if t > 0.0 {
                (r / t).powi(2)
            } else {
                r * r
            }
        })
        .sum::<f64>()
        / pts.len() as f64)
        .sqrt();
    Ok(LatencyFit {
        latency: a,
        inv_bandwidth: b,
        bandwidth: 1.0 / b,
        residual,
        points: pts.len(),
    })
}

/// Times two-worker exchanges of `bytes` each way (rounded to whole values),
/// `reps` times per size; returns `(bytes, mean seconds)` per size.
pub fn latency_probe(
    net: NetModel,
    transport: TransportKind,
    bytes: &[usize],
    reps: usize,
) -> Result<Vec<(f64, f64)>, TransportError> {
    let timeout = Duration::from_secs(30);
    let mut out = Vec::with_capacity(bytes.len());
    for &b in bytes {
        let values = b / 8;
        let slots: Vec<usize> = (0..values).collect();
        let to1 = [PeerList {
            peer: 1,
            nodes: slots.clone(),
        }];
        let to0 = [PeerList {
            peer: 0,
            nodes: slots,
        }];
        let lists = [(0, &to1[..], &to1[..]), (1, &to0[..], &to0[..])];
        let eps = match transport {
            TransportKind::Inproc => inproc::endpoints(&lists, net, timeout)?,
            TransportKind::Tcp => tcp::loopback_endpoints(&lists, net, timeout)?,
        };
        let times = std::thread::scope(|s| {
            let hs: Vec<_> = eps
                .into_iter()
                .map(|mut ep| {
                    s.spawn(move || -> Result<f64, TransportError> {
                        let mut field = vec![ep.id() as f64; values];
                        let mut total = 0.0;
                        for step in 0..reps.max(1) as u64 {
                            total += ep.exchange(step, &mut field)?.elapsed;
                        }
                        Ok(total / reps.max(1) as f64)
                    })
                })
                .collect();
            hs.into_iter()
                .map(|h| h.join().expect("probe worker panicked"))
                .collect::<Result<Vec<f64>, _>>()
        })?;
        out.push(((values * 8) as f64, times[0]));
    }
    Ok(out)
}

/// Log-log regression `ln y = intercept + slope ln x`.
#[derive(Clone, Debug, PartialEq)]
pub struct SlopeFit {
    pub name: String,
    pub slope: f64,
    pub intercept: f64,
    pub half_width: f64,
    pub expected: f64,
    pub points: usize,
    pub residual: f64,
}

impl SlopeFit {
    /// Fits the positive pairs of `xy`; needs three distinct `x`.
    pub fn fit(name: &str, expected: f64, xy: &[(f64, f64)]) -> Result<Self, FitError> {
        let pts: Vec<(f64, f64)> = xy
            .iter()
            .filter(|(x, y)| *x > 0.0 && *y > 0.0)
            .map(|&(x, y)| (x.ln(), y.ln()))
            .collect();
        let mut xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        if xs.len() < 3 {
            return Err(FitError::InsufficientPoints {
                need: 3,
                got: xs.len(),
            });
        }
        let k = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let ssr: f64 = pts
            .iter()
            .map(|p| (p.1 - intercept - slope * p.0).powi(2))
            .sum();
        let dof = k - 2.0;
        let se = (ssr / dof / sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, dof)
            .map_err(|_| FitError::Singular)?
            .inverse_cdf(0.975);
        Ok(Self {
            name: name.into(),
            slope,
            intercept,
            half_width: t * se,
            expected,
            points: pts.len(),
            residual: (ssr / k).sqrt(),
        })
    }

    pub fn row(&self) -> FitRow {
        FitRow {
            name: self.name.clone(),
            estimate: self.slope,
            half_width: self.half_width,
            expected: self.expected,
            residual: self.residual,
            points: self.points,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingReport {
    /// `"p"`, `"n"` or `"N"`.
    pub factor: &'static str,
    pub fits: Vec<SlopeFit>,
}

impl ScalingReport {
    pub fn rows(&self) -> Vec<FitRow> {
        self.fits.iter().map(SlopeFit::row).collect()
    }

    pub fn get(&self, name: &str) -> Option<&SlopeFit> {
        self.fits.iter().find(|f| f.name == name)
    }
}

/// Scaling slopes over records that differ in exactly one of `p`, `n` and
/// `N`. Aggregate rows are used when present; failed rows are ignored, and
/// rows without communication are left out of the ratio fits.
pub fn scaling_report(records: &[BenchRecord]) -> Result<ScalingReport, FitError> {
    let has_mean = records.iter().any(|r| r.kind == RowKind::Mean);
    let rows: Vec<&BenchRecord> = records
        .iter()
        .filter(|r| r.ok() && (!has_mean || r.kind == RowKind::Mean))
        .collect();
    let first = rows
        .first()
        .ok_or(FitError::InsufficientPoints { need: 3, got: 0 })?;
    let varies = |f: &dyn Fn(&BenchRecord) -> f64| rows.iter().any(|r| f(r) != f(first));
    let mut factors = Vec::new();
    if varies(&|r| r.p as f64) {
        factors.push("p");
    }
    if varies(&|r| r.n as f64) {
        factors.push("n");
    }
    if varies(&|r| r.n_nodes as f64) {
        factors.push("N");
    }
    if varies(&|r| r.d as f64) {
        factors.push("d");
    }
    let factor = match factors.as_slice() {
        [] => return Err(FitError::NoFactor),
        [f] if *f != "d" => *f,
        _ => return Err(FitError::MixedFactors(factors)),
    };
    let d = first.d as f64;
    let ratio = |r: &&BenchRecord| {
        if r.t_comm > 0.0 && r.t_compute > 0.0 {
            r.t_comm / r.t_compute
        } else {
            0.0
        }
    };
    let fits = match factor {
        "n" => vec![
            SlopeFit::fit(
                "t_compute~n",
                1.0,
                &rows
                    .iter()
                    .map(|r| (r.n as f64, r.t_compute))
                    .collect::<Vec<_>>(),
            )?,
            SlopeFit::fit(
                "t_comm/t_compute~n",
                1.0 / d - 1.0,
                &rows
                    .iter()
                    .map(|r| (r.n as f64, ratio(r)))
                    .collect::<Vec<_>>(),
            )?,
        ],
        _ => {
            let load = |r: &&BenchRecord| r.n_nodes as f64 / r.p as f64;
            vec![
                SlopeFit::fit(
                    "t_comm/t_compute~N/p",
                    -1.0 / d,
                    &rows.iter().map(|r| (load(r), ratio(r))).collect::<Vec<_>>(),
                )?,
                SlopeFit::fit(
                    "t_compute~N/p",
                    1.0,
                    &rows
                        .iter()
                        .map(|r| (load(r), r.t_compute))
                        .collect::<Vec<_>>(),
                )?,
            ]
        }
    };
    Ok(ScalingReport { factor, fits })
}
