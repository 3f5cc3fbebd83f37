use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::kernels::{enforce_neumann, jacobi_step, solution_error};
use super::{Discretization, SolverError, TimeStep};
use crate::partition::{assign_owners, build_exchange_maps, localize, LocalPlan, PartitionPlan};
use crate::scalar::Real;
use crate::transport::{
    inproc, tcp, thread_cpu_time, Endpoint, NetModel, StepTiming, SyncBarrier, TransportError,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransportKind {
    Inproc,
    Tcp,
}

/// When the iteration ends: after `max_steps`, or earlier once the reduced
/// mean residual drops to `threshold` (checked every `report_interval` steps).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub max_steps: u64,
    pub report_interval: u64,
    pub threshold: Option<f64>,
}

/// Per-worker loop parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub stop: StopRule,
    pub timeout: Duration,
}

/// What a worker is handed before it starts iterating.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct WorkerSetup<T: Real> {
    pub plan: LocalPlan<T>,
    /// `f` at the center of each Laplacian row.
    pub rhs: Vec<T>,
    pub dt: T,
    pub config: LoopConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct WorkerOutput<T: Real> {
    pub id: usize,
    /// Final values of owned nodes, in the plan's owned order.
    pub owned: Vec<T>,
    pub timings: Vec<StepTiming>,
    pub steps: u64,
    pub bytes_sent: usize,
    pub max_message_bytes: usize,
}

/// Coordination with the root, apart from the halo exchange itself.
pub trait Control {
    fn barrier(&mut self) -> Result<(), TransportError>;
    /// Sends the local residual sum; the answer says whether to stop.
    fn report(&mut self, step: u64, residual_sum: f64, rows: usize)
        -> Result<bool, TransportError>;
}

/// Iterates one subdomain until the root says stop or `max_steps` is reached.
pub fn run_worker<T: Real>(
    setup: &WorkerSetup<T>,
    endpoint: &mut Endpoint,
    control: &mut dyn Control,
) -> Result<WorkerOutput<T>, SolverError> {
    let plan = &setup.plan;
    let id = plan.id;
    let stop = setup.config.stop;
    let interval = stop.report_interval.max(1);
    let mut u = vec![T::zero(); plan.map.len()];
    let mut scratch = Vec::new();
    let mut timings = Vec::with_capacity(stop.max_steps.min(1 << 20) as usize);
    let (mut bytes_sent, mut max_msg) = (0usize, 0usize);
    let transport = |source| SolverError::Transport { worker: id, source };

    let mut step = 0u64;
    while step < stop.max_steps {
        let t0 = thread_cpu_time();
        enforce_neumann(&mut u, &plan.neumann);
        let res = jacobi_step(
            &mut u,
            &plan.laplacian,
            &setup.rhs,
            setup.dt,
            &mut scratch,
            step,
        )?;
        let t_compute = (thread_cpu_time() - t0).as_secs_f64();

        control.barrier().map_err(transport)?;
        let stats = endpoint.exchange(step, &mut u).map_err(transport)?;
        bytes_sent += stats.bytes_sent;
        max_msg = max_msg.max(stats.max_message_bytes);
        timings.push(StepTiming {
            step,
            subdomain: id,
            t_compute,
            t_comm: stats.elapsed,
        });
        step += 1;

        if step.is_multiple_of(interval) || step == stop.max_steps {
            let verdict = control
                .report(step, res.as_f64(), plan.laplacian.rows())
                .map_err(transport)?;
            if verdict {
                break;
            }
        }
    }
    // Neumann values consistent with the final interior field
    enforce_neumann(&mut u, &plan.neumann);
    Ok(WorkerOutput {
        id,
        owned: u[..plan.map.n_owned()].to_vec(),
        timings,
        steps: step,
        bytes_sent,
        max_message_bytes: max_msg,
    })
}

/// Options for [`run`].
#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub grid: Vec<usize>,
    pub alpha: f64,
    pub max_steps: u64,
    pub report_interval: u64,
    /// Stop once the mean residual is at most `tol * mean |f|`.
    pub residual_tol: Option<f64>,
    pub transport: TransportKind,
    pub net: NetModel,
    pub timeout: Duration,
}

impl RunOptions {
    pub const DEFAULT_RESIDUAL_TOL: f64 = 1e-8;

    pub fn new(dim: usize) -> Self {
        Self {
            grid: vec![1; dim],
            alpha: TimeStep::<f64>::DEFAULT_ALPHA,
            max_steps: 10_000,
            report_interval: 100,
            residual_tol: Some(Self::DEFAULT_RESIDUAL_TOL),
            transport: TransportKind::Inproc,
            net: NetModel::disabled(),
            timeout: Duration::from_secs(60),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome<T: Real> {
    /// Final field over all nodes in global order.
    pub u: Vec<T>,
    /// Mean `|u - u_exact|` over all nodes.
    pub error: T,
    pub steps: u64,
    pub dt: T,
    /// `(step, mean residual)` at each report.
    pub history: Vec<(u64, f64)>,
    pub converged: bool,
    pub plan: PartitionPlan,
    /// Sorted by worker id.
    pub workers: Vec<WorkerOutput<T>>,
}

impl<T: Real> RunOutcome<T> {
    pub fn residual(&self) -> Option<f64> {
        self.history.last().map(|&(_, r)| r)
    }

    fn per_step_mean(&self, pick: impl Fn(&StepTiming) -> f64) -> f64 {
        let means: Vec<f64> = self
            .workers
            .iter()
            .filter(|w| !w.timings.is_empty())
            .map(|w| w.timings.iter().map(&pick).sum::<f64>() / w.timings.len() as f64)
            .collect();
        if means.is_empty() {
            0.0
        } else {
            means.iter().sum::<f64>() / means.len() as f64
        }
    }

    /// Mean over workers of the per-step compute time.
    pub fn compute_per_step(&self) -> f64 {
        self.per_step_mean(|t| t.t_compute)
    }

    /// Mean over workers of the per-step exchange time.
    pub fn comm_per_step(&self) -> f64 {
        self.per_step_mean(|t| t.t_comm)
    }

    /// Mean over workers of bytes sent per step.
    pub fn bytes_per_step(&self) -> f64 {
        if self.workers.is_empty() || self.steps == 0 {
            return 0.0;
        }
        let total: f64 = self
            .workers
            .iter()
            .map(|w| w.bytes_sent as f64 / w.steps.max(1) as f64)
            .sum();
        total / self.workers.len() as f64
    }

    /// Mean over workers of each worker's largest message.
    pub fn max_message_bytes(&self) -> f64 {
        if self.workers.is_empty() {
            return 0.0;
        }
        self.workers
            .iter()
            .map(|w| w.max_message_bytes as f64)
            .sum::<f64>()
            / self.workers.len() as f64
    }
}

/// Residual reduction and stop decisions at the root. Reports are summed in
/// worker order, so the result does not depend on arrival order.
pub(crate) struct Reducer {
    workers: usize,
    threshold: Option<f64>,
    pending: BTreeMap<u64, Vec<Option<(f64, usize)>>>,
    pub history: Vec<(u64, f64)>,
    pub converged: bool,
}

impl Reducer {
    pub fn new(workers: usize, threshold: Option<f64>) -> Self {
        Self {
            workers,
            threshold,
            pending: BTreeMap::new(),
            history: Vec::new(),
            converged: false,
        }
    }

    /// Returns the verdict once every worker has reported `step`.
    pub fn report(&mut self, step: u64, worker: usize, sum: f64, rows: usize) -> Option<bool> {
        let slots = self
            .pending
            .entry(step)
            .or_insert_with(|| vec![None; self.workers]);
        slots[worker] = Some((sum, rows));
        if slots.iter().any(Option::is_none) {
            return None;
        }
        let slots = self.pending.remove(&step).expect("entry exists");
        let (sum, rows) = slots
            .into_iter()
            .flatten()
            .fold((0.0, 0), |(s, r), (x, n)| (s + x, r + n));
        let mean = if rows == 0 { 0.0 } else { sum / rows as f64 };
        self.history.push((step, mean));
        let stop = self.threshold.is_some_and(|t| mean <= t);
        self.converged |= stop;
        Some(stop)
    }
}

/// Partition, local plans and per-worker set-up for a run.
pub(crate) fn prepare<T: Real>(
    disc: &Discretization<T>,
    opts: &RunOptions,
) -> Result<(PartitionPlan, Vec<WorkerSetup<T>>, T), SolverError> {
    let nodes = &disc.nodes;
    let dt = TimeStep::new(nodes.h(), nodes.dim(), T::lit(opts.alpha))?.dt();
    let owners = assign_owners(nodes, &opts.grid)?;
    let plan = build_exchange_maps(nodes, &disc.stencils, &owners, &opts.grid)?;
    let threshold = opts.residual_tol.map(|t| t * disc.mean_abs_rhs());
    let config = LoopConfig {
        stop: StopRule {
            max_steps: opts.max_steps,
            report_interval: opts.report_interval,
            threshold,
        },
        timeout: opts.timeout,
    };
    let setups = (0..plan.len())
        .map(|id| {
            let local = localize(&plan, id, nodes, &disc.stencils)?;
            let rhs = local
                .laplacian
                .centers
                .iter()
                .map(|&c| disc.spec.rhs(nodes.point(local.map.to_global(c))))
                .collect();
            Ok(WorkerSetup {
                plan: local,
                rhs,
                dt,
                config,
            })
        })
        .collect::<Result<Vec<_>, SolverError>>()?;
    Ok((plan, setups, dt))
}

/// Scatters worker outputs into a global field and computes the error.
pub(crate) fn assemble<T: Real>(
    disc: &Discretization<T>,
    plan: PartitionPlan,
    mut workers: Vec<WorkerOutput<T>>,
    reducer: Reducer,
    dt: T,
) -> RunOutcome<T> {
    workers.sort_by_key(|w| w.id);
    let mut u = vec![T::zero(); disc.nodes.len()];
    for w in &workers {
        for (&g, &v) in plan.subdomains[w.id].owned.iter().zip(&w.owned) {
            u[g] = v;
        }
    }
    let error = solution_error(&u, &disc.nodes, &disc.spec);
    let steps = workers.iter().map(|w| w.steps).max().unwrap_or(0);
    RunOutcome {
        u,
        error,
        steps,
        dt,
        history: reducer.history,
        converged: reducer.converged,
        plan,
        workers,
    }
}

enum Event<T: Real> {
    Report {
        worker: usize,
        step: u64,
        sum: f64,
        rows: usize,
    },
    Done(WorkerOutput<T>),
    Failed(SolverError),
}

/// [`Control`] for workers running as threads of the root process.
pub struct InprocControl<T: Real> {
    id: usize,
    barrier: Arc<SyncBarrier>,
    to_root: Sender<Event<T>>,
    verdicts: Receiver<bool>,
    timeout: Duration,
}

impl<T: Real> Control for InprocControl<T> {
    fn barrier(&mut self) -> Result<(), TransportError> {
        self.barrier.wait(self.id)
    }

    fn report(&mut self, step: u64, sum: f64, rows: usize) -> Result<bool, TransportError> {
        self.to_root
            .send(Event::Report {
                worker: self.id,
                step,
                sum,
                rows,
            })
            .map_err(|_| TransportError::Aborted("root gone".into()))?;
        match self.verdicts.recv_timeout(self.timeout) {
            Ok(v) => Ok(v),
            Err(RecvTimeoutError::Timeout) => Err(TransportError::Timeout {
                from: usize::MAX,
                to: self.id,
            }),
            Err(RecvTimeoutError::Disconnected) => {
                Err(TransportError::Aborted("run aborted".into()))
            }
        }
    }
}

/// Solves on `opts.grid` subdomains, one thread per subdomain, and gathers
/// the result.
pub fn run<T: Real>(
    disc: &Discretization<T>,
    opts: &RunOptions,
) -> Result<RunOutcome<T>, SolverError> {
    let (plan, setups, dt) = prepare(disc, opts)?;
    let p = setups.len();
    let lists: Vec<_> = setups
        .iter()
        .map(|s| (s.plan.id, &s.plan.sends[..], &s.plan.recvs[..]))
        .collect();
    let root_err = |source| SolverError::Transport {
        worker: usize::MAX,
        source,
    };
    let endpoints = match opts.transport {
        TransportKind::Inproc => inproc::endpoints(&lists, opts.net, opts.timeout),
        TransportKind::Tcp => tcp::loopback_endpoints(&lists, opts.net, opts.timeout),
    }
    .map_err(root_err)?;

    let barrier = Arc::new(SyncBarrier::new(p, opts.timeout));
    let (tx, rx) = channel::<Event<T>>();
    let mut verdict_tx: Vec<Option<Sender<bool>>> = Vec::with_capacity(p);
    let mut controls = Vec::with_capacity(p);
    for id in 0..p {
        let (vtx, vrx) = channel();
        verdict_tx.push(Some(vtx));
        controls.push(InprocControl {
            id,
            barrier: Arc::clone(&barrier),
            to_root: tx.clone(),
            verdicts: vrx,
            timeout: opts.timeout,
        });
    }
    drop(tx);

    let mut reducer = Reducer::new(p, setups.first().and_then(|s| s.config.stop.threshold));
    let mut outputs = Vec::with_capacity(p);
    let mut failure: Option<SolverError> = None;

    std::thread::scope(|scope| {
        for ((setup, mut ep), mut ctl) in setups.iter().zip(endpoints).zip(controls) {
            scope.spawn(move || {
                let id = setup.plan.id;
                let result =
                    catch_unwind(AssertUnwindSafe(|| run_worker(setup, &mut ep, &mut ctl)))
                        .unwrap_or(Err(SolverError::WorkerPanic(id)));
                let event = match result {
                    Ok(out) => Event::Done(out),
                    Err(e) => Event::Failed(e),
                };
                let _ = ctl.to_root.send(event);
                // dropping the endpoint here unblocks peers waiting on us
            });
        }

        let mut finished = 0;
        while finished < p {
            match rx.recv_timeout(opts.timeout * 2) {
                Ok(Event::Report {
                    worker,
                    step,
                    sum,
                    rows,
                }) => {
                    if let Some(stop) = reducer.report(step, worker, sum, rows) {
                        for v in verdict_tx.iter().flatten() {
                            let _ = v.send(stop);
                        }
                    }
                }
                Ok(Event::Done(out)) => {
                    finished += 1;
                    outputs.push(out);
                }
                Ok(Event::Failed(e)) => {
                    finished += 1;
                    if failure.is_none() {
                        failure = Some(e);
                        barrier.abort("a worker failed");
                        verdict_tx.iter_mut().for_each(|v| *v = None);
                    }
                }
                Err(_) => {
                    failure.get_or_insert(root_err(TransportError::Timeout {
                        from: usize::MAX,
                        to: usize::MAX,
                    }));
                    barrier.abort("root timed out");
                    verdict_tx.iter_mut().for_each(|v| *v = None);
                    break;
                }
            }
        }
    });

    if let Some(e) = failure {
        return Err(e);
    }
    Ok(assemble(disc, plan, outputs, reducer, dt))
}
