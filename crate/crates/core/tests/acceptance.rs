//! End-to-end acceptance criteria. Every criterion runs, in order, and prints
//! one PASS/FAIL line; the test fails if any criterion does.
//!
//! Run with `cargo test -p rbfdd --test acceptance -- --nocapture` to see
//! details as they arrive; the PASS/FAIL lines are written unbuffered and show
//! up either way.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rbfdd::bench::{
    fit_latency, latency_probe, run_sweep, scaling_report, BenchRecord, RowKind, SweepSpec,
};
use rbfdd::nodeset::Domain;
use rbfdd::rbffd::{apply_stencil, monomial_exponents, stencil_weights, ApproxConfig, Operator};
use rbfdd::solver::{run, Discretization, RunOptions, RunOutcome, TransportKind};
use rbfdd::transport::NetModel;

type Verdict = Result<String, String>;

fn say(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn dirichlet(h: f64, m: usize) -> Discretization<f64> {
    let cfg = ApproxConfig::new(2, m).unwrap();
    Discretization::generate(Domain::unit(2).unwrap(), h, 1, &cfg).unwrap()
}

/// Runs to a tight residual so the discretization error dominates.
fn converge(disc: &Discretization<f64>) -> Result<RunOutcome<f64>, String> {
    let opts = RunOptions {
        max_steps: 1_000_000,
        residual_tol: Some(1e-11),
        ..RunOptions::new(disc.nodes.dim())
    };
    let out = run(disc, &opts).map_err(|e| e.to_string())?;
    if !out.converged {
        return Err(format!("no convergence within {} steps", out.steps));
    }
    Ok(out)
}

/// Least-squares slope of `ln y` against `ln x`.
fn loglog_slope(xy: &[(f64, f64)]) -> f64 {
    let k = xy.len() as f64;
    let pts: Vec<(f64, f64)> = xy.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn means(rows: &[BenchRecord]) -> Result<Vec<&BenchRecord>, String> {
    let m: Vec<&BenchRecord> = rows.iter().filter(|r| r.kind == RowKind::Mean).collect();
    match m.iter().find(|r| !r.ok()) {
        Some(bad) => Err(format!("{}: {}", bad.run_id, bad.status)),
        None => Ok(m),
    }
}

// ---- criterion 1 ----------------------------------------------------------

fn monomial(e: &[u32], p: &[f64]) -> f64 {
    e.iter().zip(p).map(|(&k, &x)| x.powi(k as i32)).product()
}

/// Analytic value of `op` applied to `(x - c)^e` at `c`.
fn exact_at_center(e: &[u32], op: &Operator<f64>) -> f64 {
    let total: u32 = e.iter().sum();
    match op {
        Operator::Laplacian => {
            if total == 2 {
                e.iter().map(|&k| if k == 2 { 2.0 } else { 0.0 }).sum()
            } else {
                0.0
            }
        }
        Operator::NormalDerivative(dir) => {
            if total == 1 {
                e.iter()
                    .zip(dir)
                    .map(|(&k, &v)| if k == 1 { v } else { 0.0 })
                    .sum()
            } else {
                0.0
            }
        }
    }
}

fn scattered_support(rng: &mut ChaCha8Rng, center: &[f64], n: usize, h: f64) -> Vec<f64> {
    let mut pts = center.to_vec();
    let radius = h * (n as f64).sqrt() * 0.7;
    while pts.len() < n * center.len() {
        let cand: Vec<f64> = center
            .iter()
            .map(|&c| c + radius * (2.0 * rng.random::<f64>() - 1.0))
            .collect();
        if pts.chunks(center.len()).all(|q| {
            q.iter()
                .zip(&cand)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                > (0.3 * h).powi(2)
        }) {
            pts.extend(cand);
        }
    }
    pts
}

fn worst_relative_error(
    center: &[f64],
    pts: &[f64],
    cfg: &ApproxConfig,
    op: &Operator<f64>,
) -> f64 {
    let d = center.len();
    let w = stencil_weights(center, pts, cfg, op, 0).unwrap();
    let support: Vec<usize> = (0..pts.len() / d).collect();
    let exps = monomial_exponents(cfg.order(), d);
    let scale = exps
        .iter()
        .map(|e| exact_at_center(e, op).abs())
        .fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    for e in &exps {
        let vals: Vec<f64> = pts
            .chunks(d)
            .map(|q| {
                monomial(
                    e,
                    &q.iter().zip(center).map(|(a, b)| a - b).collect::<Vec<_>>(),
                )
            })
            .collect();
        let got = apply_stencil(&w, &support, &vals).unwrap();
        worst = worst.max((got - exact_at_center(e, op)).abs() / scale);
    }
    worst
}

fn c1_stencil_exactness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut sizes = Vec::new();
    for m in [2usize, 4, 6] {
        let cfg = ApproxConfig::new(2, m).unwrap();
        sizes.push(cfg.support_size());
        for _ in 0..200 {
            let h = 10f64.powf(-1.0 - 2.0 * rng.random::<f64>());
            let c = [rng.random::<f64>(), rng.random::<f64>()];
            let pts = scattered_support(&mut rng, &c, cfg.support_size(), h);
            worst = worst.max(worst_relative_error(&c, &pts, &cfg, &Operator::Laplacian));
            for axis in 0..2 {
                let mut dir = vec![0.0; 2];
                dir[axis] = 1.0;
                worst = worst.max(worst_relative_error(
                    &c,
                    &pts,
                    &cfg,
                    &Operator::NormalDerivative(dir),
                ));
            }
        }
    }
    check(
        sizes == [13, 31, 57] && worst <= 1e-8,
        format!("n = {sizes:?}, worst relative error {worst:.2e} (limit 1e-8)"),
    )
}

// ---- criterion 2 ----------------------------------------------------------

fn c2_serial_equals_distributed() -> Verdict {
    let disc = dirichlet(0.05, 2);
    let opts = |grid: Vec<usize>| RunOptions {
        grid,
        max_steps: 2000,
        residual_tol: None,
        ..RunOptions::new(2)
    };
    let serial = run(&disc, &opts(vec![1, 1])).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for grid in [[2, 1], [2, 2], [3, 3], [4, 4]] {
        let part = run(&disc, &opts(grid.to_vec())).map_err(|e| e.to_string())?;
        if part.steps != 2000 {
            return Err(format!("{grid:?} stopped after {} steps", part.steps));
        }
        let diff = serial
            .u
            .iter()
            .zip(&part.u)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(diff);
    }
    check(
        worst <= 1e-12,
        format!(
            "N = {}, max |u_1 - u_p| = {worst:.2e} (limit 1e-12)",
            disc.nodes.len()
        ),
    )
}

// ---- criteria 3 and 4 -----------------------------------------------------

struct Errors {
    /// `(m, h, e)`
    table: Vec<(usize, f64, f64)>,
}

impl Errors {
    fn get(&self, m: usize, h: f64) -> f64 {
        self.table
            .iter()
            .find(|r| r.0 == m && r.1 == h)
            .map(|r| r.2)
            .unwrap()
    }
}

fn c3_convergence_order(errors: &mut Errors) -> Verdict {
    let hs = [0.05, 0.025, 0.0125];
    let mut detail = Vec::new();
    let mut ok = true;
    for (m, need) in [(2usize, 1.5), (4, 3.5)] {
        let mut xy = Vec::new();
        for &h in &hs {
            let out = converge(&dirichlet(h, m))?;
            errors.table.push((m, h, out.error));
            xy.push((h, out.error));
        }
        let slope = loglog_slope(&xy);
        ok &= slope >= need;
        let es: Vec<String> = xy.iter().map(|p| format!("{:.2e}", p.1)).collect();
        detail.push(format!(
            "m={m}: e = [{}], slope {slope:.2} (need >= {need})",
            es.join(", ")
        ));
    }
    check(ok, detail.join("; "))
}

fn c4_accuracy_ordering(errors: &Errors) -> Verdict {
    let h = 0.025;
    let e6 = converge(&dirichlet(h, 6))?.error;
    let (e2, e4) = (errors.get(2, h), errors.get(4, h));
    let (r42, r64) = (e2 / e4, e4 / e6);
    check(
        r42 >= 4.0 && r64 >= 4.0,
        format!("e(2) = {e2:.2e}, e(4) = {e4:.2e}, e(6) = {e6:.2e}; ratios {r42:.1} and {r64:.1} (need >= 4)"),
    )
}

// ---- criteria 5 and 6 -----------------------------------------------------

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol
}

fn c5_support_size_scaling() -> Verdict {
    let spec = SweepSpec::parse(
        "h = 0.0045\nm = 2\nn = 13, 25, 37, 57\ngrid = 2x2\nlatency = 0\nbandwidth = 1e9\nmax_steps = 1000\nreps = 5\n",
    )
    .map_err(|e| e.to_string())?;
    let rows = run_sweep(&spec, |_| {}).map_err(|e| e.to_string())?;
    let report = scaling_report(&rows).map_err(|e| e.to_string())?;
    let ratio = report
        .get("t_comm/t_compute~n")
        .ok_or("missing ratio fit")?;
    let tc = report.get("t_compute~n").ok_or("missing compute fit")?;
    check(
        within(ratio.slope, -0.5, 0.15) && within(tc.slope, 1.0, 0.2),
        format!(
            "N = {}, slope t_c/t_CPU vs n = {:.3} ± {:.3} (want -0.5 ± 0.15), slope t_compute vs n = {:.3} ± {:.3} (want 1.0 ± 0.2)",
            means(&rows)?[0].n_nodes,
            ratio.slope,
            ratio.half_width,
            tc.slope,
            tc.half_width
        ),
    )
}

fn c6_strong_scaling_ratio() -> Verdict {
    let spec = SweepSpec::parse(
        "h = 0.0045\nm = 2\ngrid = 1x1, 2x2, 3x3, 4x4\nlatency = 0\nbandwidth = 1e9\nmax_steps = 500\nreps = 5\n",
    )
    .map_err(|e| e.to_string())?;
    let rows = run_sweep(&spec, |_| {}).map_err(|e| e.to_string())?;
    let report = scaling_report(&rows).map_err(|e| e.to_string())?;
    let ratio = report
        .get("t_comm/t_compute~N/p")
        .ok_or("missing ratio fit")?;
    check(
        within(ratio.slope, -0.5, 0.15),
        format!(
            "N = {}, slope t_c/t_CPU vs N/p = {:.3} ± {:.3} over {} points (want -0.5 ± 0.15)",
            means(&rows)?[0].n_nodes,
            ratio.slope,
            ratio.half_width,
            ratio.points
        ),
    )
}

// ---- criterion 7 ----------------------------------------------------------

fn c7_latency_recovery() -> Verdict {
    let net = NetModel::simulated(0.21e-3, 1e9).map_err(|e| e.to_string())?;
    let sizes = [8, 64, 512, 4_096, 32_768, 262_144, 2_097_152];
    let pts = latency_probe(net, TransportKind::Tcp, &sizes, 5).map_err(|e| e.to_string())?;
    let fit = fit_latency(&pts).map_err(|e| e.to_string())?;
    let (el, eb) = (fit.latency / 0.21e-3 - 1.0, fit.bandwidth / 1e9 - 1.0);
    check(
        el.abs() <= 0.1 && eb.abs() <= 0.1,
        format!(
            "lambda = {:.4e} s ({:+.1}%), B = {:.4e} B/s ({:+.1}%)",
            fit.latency,
            100.0 * el,
            fit.bandwidth,
            100.0 * eb
        ),
    )
}

// ---- criterion 8 ----------------------------------------------------------

fn c8_mixed_boundary(errors: &Errors) -> Verdict {
    let cfg = ApproxConfig::new(2, 4).unwrap();
    let disc = Discretization::generate(Domain::mixed(2).unwrap(), 0.025, 1, &cfg)
        .map_err(|e| e.to_string())?;
    let out = converge(&disc)?;
    let full = errors.get(4, 0.025);
    let ratio = out.error / full;
    check(
        ratio <= 3.0,
        format!("mixed e = {:.2e} after {} steps, full-domain e = {full:.2e}, ratio {ratio:.2} (limit 3)", out.error, out.steps),
    )
}

// ---- criterion 9 ----------------------------------------------------------

fn c9_stability() -> Verdict {
    let mut runs = 0;
    let mut configs: Vec<(usize, bool, f64, usize)> = Vec::new();
    for mixed in [false, true] {
        for h in [0.05, 0.025, 0.0125] {
            for m in [2, 4, 6] {
                configs.push((2, mixed, h, m));
            }
        }
        for m in [2, 4] {
            configs.push((3, mixed, 0.1, m));
        }
        configs.push((1, mixed, 0.01, 2));
    }
    for (dim, mixed, h, m) in configs {
        let cfg = ApproxConfig::new(dim, m).map_err(|e| e.to_string())?;
        let domain = Domain::new(dim, mixed).map_err(|e| e.to_string())?;
        let disc = Discretization::generate(domain, h, 1, &cfg).map_err(|e| e.to_string())?;
        let grid = if dim == 2 { vec![2, 2] } else { vec![1; dim] };
        let opts = RunOptions {
            grid,
            max_steps: 10_000,
            report_interval: 100,
            residual_tol: None,
            ..RunOptions::new(dim)
        };
        let label = format!("d={dim} mixed={mixed} h={h} m={m}");
        let out = run(&disc, &opts).map_err(|e| format!("{label}: {e}"))?;
        let finite =
            out.u.iter().all(|v| v.is_finite()) && out.history.iter().all(|(_, r)| r.is_finite());
        if !finite || out.steps != 10_000 {
            return Err(format!(
                "{label}: non-finite values or early stop at {}",
                out.steps
            ));
        }
        runs += 1;
    }
    Ok(format!(
        "{runs} configurations, 10^4 steps each at alpha = 0.3, all values finite"
    ))
}

// ---- driver ---------------------------------------------------------------

#[test]
fn acceptance() {
    let mut errors = Errors { table: Vec::new() };
    let mut failed = Vec::new();
    let mut record = |id: u32, name: &str, budget: Duration, f: &mut dyn FnMut() -> Verdict| {
        let start = Instant::now();
        let verdict = f();
        let took = start.elapsed();
        let (pass, detail) = match verdict {
            Ok(d) if took <= budget => (true, d),
            Ok(d) => (
                false,
                format!(
                    "{d}; took {:.0} s, budget {} s",
                    took.as_secs_f64(),
                    budget.as_secs()
                ),
            ),
            Err(d) => (false, d),
        };
        say(&format!(
            "{} criterion {id} ({name}) [{:.1} s]: {detail}",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        ));
        if !pass {
            failed.push(id);
        }
    };
    let min = |m: u64| Duration::from_secs(60 * m);
    record(
        1,
        "stencil exactness",
        Duration::from_secs(10),
        &mut c1_stencil_exactness,
    );
    record(
        2,
        "serial equals distributed",
        min(2),
        &mut c2_serial_equals_distributed,
    );
    record(3, "convergence order", min(10), &mut || {
        c3_convergence_order(&mut errors)
    });
    record(4, "accuracy ordering", min(10), &mut || {
        c4_accuracy_ordering(&errors)
    });
    record(
        5,
        "support-size scaling",
        min(10),
        &mut c5_support_size_scaling,
    );
    record(
        6,
        "strong-scaling ratio",
        min(15),
        &mut c6_strong_scaling_ratio,
    );
    record(
        7,
        "latency-model recovery",
        min(5),
        &mut c7_latency_recovery,
    );
    record(8, "mixed-boundary validity", min(10), &mut || {
        c8_mixed_boundary(&errors)
    });
    record(9, "stability", min(10), &mut c9_stability);
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
