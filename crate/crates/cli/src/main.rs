use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rbfdd::bench::{
    fit_latency, latency_probe, parse_records_csv, run_sweep, scaling_report, write_fits_csv,
    write_records_csv, BenchRecord, RowKind, SweepSpec,
};
use rbfdd::nodeset::{write_nodes_csv, Domain};
use rbfdd::partition::parse_grid;
use rbfdd::rbffd::ApproxConfig;
use rbfdd::solver::remote::{serve, serve_worker};
use rbfdd::solver::{run, Discretization, RunOptions, RunOutcome, TransportKind};
use rbfdd::transport::NetModel;

#[derive(Parser)]
#[command(
    name = "rbfdd",
    version,
    about = "RBF-FD Poisson solver with domain decomposition"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem and report its error and timings.
    Solve(SolveArgs),
    /// Join a `solve --listen` root as one worker process.
    Worker {
        /// Root address, e.g. 127.0.0.1:7000.
        #[arg(long)]
        connect: String,
        /// Seconds to wait for the root and for each message.
        #[arg(long, default_value_t = 60.0)]
        timeout: f64,
    },
    /// Run a parameter sweep and write a records CSV.
    Sweep(SweepArgs),
    /// Fit latency and bandwidth from records or from a probe.
    FitLatency(FitLatencyArgs),
    /// Fit scaling slopes over records that vary in one factor.
    ReportScaling {
        /// Records CSV produced by `sweep`.
        #[arg(long)]
        records: PathBuf,
        /// Fits CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportArg {
    Inproc,
    Tcp,
}

impl From<TransportArg> for TransportKind {
    fn from(t: TransportArg) -> Self {
        match t {
            TransportArg::Inproc => TransportKind::Inproc,
            TransportArg::Tcp => TransportKind::Tcp,
        }
    }
}

#[derive(Args)]
struct NetArgs {
    #[arg(long, value_enum, default_value = "inproc")]
    transport: TransportArg,
    /// Model each message as taking this many seconds plus size / bandwidth.
    #[arg(long)]
    simulate_latency: Option<f64>,
    /// Bytes per second for the simulated link (default 1e9 when only a latency is given).
    #[arg(long)]
    simulate_bandwidth: Option<f64>,
}

impl NetArgs {
    fn model(&self) -> Result<NetModel> {
        Ok(match (self.simulate_latency, self.simulate_bandwidth) {
            (None, None) => NetModel::disabled(),
            (l, b) => NetModel::simulated(l.unwrap_or(0.0), b.unwrap_or(1e9))?,
        })
    }
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 0.05)]
    h: f64,
    #[arg(long, default_value_t = 1)]
    rng_seed: u64,
    /// Quarter domain with Neumann conditions on the inner faces.
    #[arg(long)]
    mixed_bc: bool,
    /// Augmentation order (even).
    #[arg(long, default_value_t = 2)]
    m: usize,
    /// Support size; defaults to 2M + 1.
    #[arg(long)]
    n_support: Option<usize>,
    #[arg(long, default_value_t = 0.3)]
    alpha: f64,
    #[arg(long, default_value_t = 100_000)]
    max_steps: u64,
    /// Stop once the mean residual drops below this fraction of mean |f|; 0 disables.
    #[arg(long, default_value_t = RunOptions::DEFAULT_RESIDUAL_TOL)]
    residual_tol: f64,
    #[arg(long, default_value_t = 100)]
    report_interval: u64,
    /// Subdomains per axis, e.g. 2x2.
    #[arg(long, value_parser = grid_arg)]
    grid: Option<Grid>,
    #[command(flatten)]
    net: NetArgs,
    /// Serve worker processes on this address instead of running threads.
    #[arg(long)]
    listen: Option<String>,
    /// Seconds before a silent peer counts as lost.
    #[arg(long, default_value_t = 60.0)]
    timeout: f64,
    /// Write the partition plan as JSON.
    #[arg(long)]
    dump_plan: Option<PathBuf>,
    /// Write the final field (`x..,u,u_exact,abs_err`).
    #[arg(long)]
    solution: Option<PathBuf>,
    /// Write Laplacian stencils (`center,neighbor,weight_lap`).
    #[arg(long)]
    stencils: Option<PathBuf>,
    /// Write the node set.
    #[arg(long)]
    nodes: Option<PathBuf>,
    /// Write a one-row records CSV.
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// `key = value` file; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    mixed_bc: bool,
    /// Comma-separated list.
    #[arg(long)]
    h: Option<String>,
    /// Comma-separated list.
    #[arg(long)]
    m: Option<String>,
    /// Comma-separated list; `auto` means 2M + 1.
    #[arg(long)]
    n_support: Option<String>,
    /// Comma-separated grids, e.g. 1x1,2x2.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long, value_enum)]
    transport: Option<TransportArg>,
    #[arg(long)]
    simulate_latency: Option<f64>,
    #[arg(long)]
    simulate_bandwidth: Option<f64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    report_interval: Option<u64>,
    /// A number or `none`.
    #[arg(long)]
    residual_tol: Option<String>,
    #[arg(long)]
    rng_seed: Option<u64>,
    /// Records CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print each row to stderr as it finishes.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct FitLatencyArgs {
    /// Fit `t_comm` against `max_message_bytes` of the repetition rows.
    #[arg(long, conflicts_with = "probe")]
    records: Option<PathBuf>,
    /// Time synthetic two-worker exchanges instead.
    #[arg(long)]
    probe: bool,
    #[command(flatten)]
    net: NetArgs,
    /// Probe message sizes in bytes, comma separated.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "8,64,512,4096,32768,262144,2097152"
    )]
    sizes: Vec<usize>,
    /// Exchanges per probe size.
    #[arg(long, default_value_t = 20)]
    reps: usize,
    /// Fits CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone)]
struct Grid(Vec<usize>);

fn grid_arg(s: &str) -> Result<Grid, String> {
    parse_grid(s).map(Grid).map_err(|e| e.to_string())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// File when given, stdout otherwise.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn solve(a: &SolveArgs) -> Result<bool> {
    let domain = Domain::<f64>::new(a.dim, a.mixed_bc)?;
    let mut cfg = ApproxConfig::new(a.dim, a.m)?;
    if let Some(n) = a.n_support {
        cfg = cfg.with_support_size(n)?;
    }
    let disc = Discretization::generate(domain, a.h, a.rng_seed, &cfg)?;
    let opts = RunOptions {
        grid: a
            .grid
            .as_ref()
            .map_or_else(|| vec![1; a.dim], |g| g.0.clone()),
        alpha: a.alpha,
        max_steps: a.max_steps,
        report_interval: a.report_interval,
        residual_tol: (a.residual_tol > 0.0).then_some(a.residual_tol),
        transport: a.net.transport.into(),
        net: a.net.model()?,
        timeout: Duration::from_secs_f64(a.timeout),
    };
    eprintln!(
        "N = {} ({} interior), n = {}, grid {:?}",
        disc.nodes.len(),
        disc.nodes.interior_count(),
        cfg.support_size(),
        opts.grid
    );
    if let Some(path) = &a.nodes {
        write_nodes_csv(&disc.nodes, create(path)?)?;
    }
    if let Some(path) = &a.stencils {
        disc.stencils.write_laplacian_csv(create(path)?)?;
    }
    let out: RunOutcome<f64> = match &a.listen {
        Some(addr) => {
            let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
            eprintln!(
                "waiting for {} workers on {}",
                opts.grid.iter().product::<usize>(),
                listener.local_addr()?
            );
            serve(&listener, &disc, &opts)?
        }
        None => run(&disc, &opts)?,
    };
    if let Some(path) = &a.dump_plan {
        let mut w = create(path)?;
        serde_json::to_writer_pretty(&mut w, &out.plan.summary())?;
        writeln!(w)?;
    }
    if let Some(path) = &a.solution {
        let mut w = create(path)?;
        disc.write_solution_csv(&out.u, &mut w)?;
        w.flush()?;
    }
    let record = BenchRecord::from_outcome("solve".into(), &disc, &out, a.alpha);
    if let Some(path) = &a.records {
        write_records_csv(create(path)?, std::slice::from_ref(&record))?;
    }
    println!(
        "steps {} converged {} error {:.6e} residual {:.3e} t_compute {:.3e} s t_comm {:.3e} s",
        out.steps,
        out.converged,
        out.error,
        out.residual().unwrap_or(f64::NAN),
        record.t_compute,
        record.t_comm
    );
    Ok(true)
}

fn sweep(a: &SweepArgs) -> Result<bool> {
    let mut spec = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            SweepSpec::parse(&text)?
        }
        None => SweepSpec::default(),
    };
    let mut set = |k: &str, v: Option<String>| -> Result<()> {
        if let Some(v) = v {
            spec.set(k, &v)?;
        }
        Ok(())
    };
    set("dim", a.dim.map(|v| v.to_string()))?;
    set("mixed", a.mixed_bc.then(|| "true".into()))?;
    set("h", a.h.clone())?;
    set("m", a.m.clone())?;
    set("n", a.n_support.clone())?;
    set("grid", a.grid.clone())?;
    set(
        "transport",
        a.transport.map(|t| match t {
            TransportArg::Inproc => "inproc".into(),
            TransportArg::Tcp => "tcp".into(),
        }),
    )?;
    set("latency", a.simulate_latency.map(|v| v.to_string()))?;
    set("bandwidth", a.simulate_bandwidth.map(|v| v.to_string()))?;
    set("reps", a.reps.map(|v| v.to_string()))?;
    set("alpha", a.alpha.map(|v| v.to_string()))?;
    set("max_steps", a.max_steps.map(|v| v.to_string()))?;
    set("report_interval", a.report_interval.map(|v| v.to_string()))?;
    set("residual_tol", a.residual_tol.clone())?;
    set("rng_seed", a.rng_seed.map(|v| v.to_string()))?;
    spec.validate()?;

    let verbose = a.verbose;
    let rows = run_sweep(&spec, |r| {
        if verbose {
            eprintln!(
                "{} h={} m={} n={} p={} t_ws={:.3e} e={:.3e} {}",
                r.run_id, r.h, r.m, r.n, r.p, r.t_ws, r.error, r.status
            );
        }
    })?;
    write_records_csv(sink(a.out.as_deref())?, &rows)?;
    let failed: Vec<&BenchRecord> = rows
        .iter()
        .filter(|r| r.kind == RowKind::Rep && !r.ok())
        .collect();
    for r in &failed {
        eprintln!("{}: {}", r.run_id, r.status);
    }
    Ok(failed.is_empty())
}

fn read_records(path: &Path) -> Result<Vec<BenchRecord>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(parse_records_csv(BufReader::new(file))?)
}

fn fit_latency_cmd(a: &FitLatencyArgs) -> Result<bool> {
    let points = match (&a.records, a.probe) {
        (Some(path), _) => read_records(path)?
            .iter()
            .filter(|r| r.ok() && r.kind == RowKind::Rep && r.p > 1)
            .map(|r| (r.max_message_bytes, r.t_comm))
            .collect::<Vec<_>>(),
        (None, true) => latency_probe(a.net.model()?, a.net.transport.into(), &a.sizes, a.reps)?,
        (None, false) => bail!("give either --records or --probe"),
    };
    let fit = fit_latency(&points)?;
    eprintln!(
        "latency {:.6e} s, bandwidth {:.6e} B/s over {} points",
        fit.latency, fit.bandwidth, fit.points
    );
    write_fits_csv(sink(a.out.as_deref())?, &fit.rows())?;
    Ok(true)
}

fn report_scaling(records: &Path, out: Option<&Path>) -> Result<bool> {
    let report = scaling_report(&read_records(records)?)?;
    for f in &report.fits {
        eprintln!(
            "{}: slope {:.4} ± {:.4} (expected {:.4}, {} points)",
            f.name, f.slope, f.half_width, f.expected, f.points
        );
    }
    write_fits_csv(sink(out)?, &report.rows())?;
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(a) => solve(a),
        Command::Worker { connect, timeout } => {
            serve_worker(connect.as_str(), Duration::from_secs_f64(*timeout))
                .map(|id| {
                    eprintln!("worker {id} done");
                    true
                })
                .map_err(Into::into)
        }
        Command::Sweep(a) => sweep(a),
        Command::FitLatency(a) => fit_latency_cmd(a),
        Command::ReportScaling { records, out } => report_scaling(records, out.as_deref()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
