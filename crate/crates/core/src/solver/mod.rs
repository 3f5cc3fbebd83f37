//! Explicit Jacobi iteration for the Poisson test problem
//! `lap u = f`, `u = prod_i sin(pi x_i)`, `f = -pi^2 d u`.
//!
//! The kernels in [`kernels`] work on one subdomain's local field; [`run`]
//! drives a set of workers (threads, or processes via [`remote`]) and gathers
//! the solution at the root.

pub mod kernels;
pub mod remote;
mod run;

pub use kernels::{enforce_neumann, jacobi_step, residual, solution_error};
pub use run::{
    run, run_worker, Control, InprocControl, LoopConfig, RunOptions, RunOutcome, StopRule,
    TransportKind, WorkerOutput, WorkerSetup,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nodeset::{Domain, NodeSet, NodeSetError};
use crate::partition::PartitionError;
use crate::rbffd::{ApproxConfig, StencilError, StencilSet};
use crate::scalar::Real;
use crate::transport::TransportError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("non-finite value at step {step} (node {node})")]
    Divergence { step: u64, node: usize },
    #[error("Neumann node {node} has a negligible own weight")]
    UnusableBoundaryStencil { node: usize },
    #[error("time step factor {0} must lie in (0, 1)")]
    InvalidAlpha(f64),
    #[error("worker {worker}: {source}")]
    Transport {
        worker: usize,
        source: TransportError,
    },
    #[error("nodes: {0}")]
    Nodes(String),
    #[error("stencils: {0}")]
    Stencils(String),
    #[error("partition: {0}")]
    Partition(String),
    #[error("worker {0} panicked")]
    WorkerPanic(usize),
    #[error("remote: {0}")]
    Remote(String),
}

impl From<NodeSetError> for SolverError {
    fn from(e: NodeSetError) -> Self {
        Self::Nodes(e.to_string())
    }
}

impl From<StencilError> for SolverError {
    fn from(e: StencilError) -> Self {
        Self::Stencils(e.to_string())
    }
}

impl From<PartitionError> for SolverError {
    fn from(e: PartitionError) -> Self {
        Self::Partition(e.to_string())
    }
}

/// Analytic solution and source of the test problem on a given domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ProblemSpec<T: Real> {
    pub domain: Domain<T>,
}

impl<T: Real> ProblemSpec<T> {
    pub fn new(domain: Domain<T>) -> Self {
        Self { domain }
    }

    /// `prod_i sin(pi x_i)`.
    pub fn exact(&self, x: &[T]) -> T {
        x.iter()
            .fold(T::one(), |acc, &xi| acc * (T::PI() * xi).sin())
    }

    /// `-pi^2 d u(x)`.
    pub fn rhs(&self, x: &[T]) -> T {
        -T::PI() * T::PI() * T::from_usize_lossy(x.len()) * self.exact(x)
    }

    /// Prescribed normal derivative on Neumann faces.
    pub fn neumann_flux(&self, _x: &[T]) -> T {
        T::zero()
    }
}

/// `dt_max = h^2 / (2 d)`.
pub fn dt_max<T: Real>(h: T, d: usize) -> T {
    h * h / T::from_usize_lossy(2 * d)
}

/// `dt = alpha * dt_max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TimeStep<T: Real> {
    pub dt_max: T,
    pub alpha: T,
}

impl<T: Real> TimeStep<T> {
    pub const DEFAULT_ALPHA: f64 = 0.3;

    pub fn new(h: T, d: usize, alpha: T) -> Result<Self, SolverError> {
        if !(alpha > T::zero() && alpha < T::one()) {
            return Err(SolverError::InvalidAlpha(alpha.as_f64()));
        }
        Ok(Self {
            dt_max: dt_max(h, d),
            alpha,
        })
    }

    pub fn dt(&self) -> T {
        self.alpha * self.dt_max
    }
}

/// Values over one worker's owned + halo nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct FieldState<T: Real> {
    pub values: Vec<T>,
    pub step: u64,
    pub dt: T,
}

impl<T: Real> FieldState<T> {
    pub fn zeros(len: usize, dt: T) -> Self {
        Self {
            values: vec![T::zero(); len],
            step: 0,
            dt,
        }
    }

    pub fn time(&self) -> T {
        T::lit(self.step as f64) * self.dt
    }
}

/// Nodes, stencils and problem definition shared by every worker.
#[derive(Clone, Debug)]
pub struct Discretization<T: Real> {
    pub nodes: NodeSet<T>,
    pub stencils: StencilSet<T>,
    pub spec: ProblemSpec<T>,
}

impl<T: Real> Discretization<T> {
    pub fn generate(
        domain: Domain<T>,
        h: T,
        rng_seed: u64,
        cfg: &ApproxConfig,
    ) -> Result<Self, SolverError> {
        let nodes = NodeSet::generate(domain, h, rng_seed)?;
        Self::from_nodes(nodes, cfg)
    }

    pub fn from_nodes(nodes: NodeSet<T>, cfg: &ApproxConfig) -> Result<Self, SolverError> {
        let stencils = StencilSet::build(&nodes, cfg)?;
        for (i, st) in stencils.normal.iter().enumerate() {
            if let Some(st) = st {
                kernels::check_boundary_weight(i, &st.support, &st.weights)?;
            }
        }
        let spec = ProblemSpec::new(*nodes.domain());
        Ok(Self {
            nodes,
            stencils,
            spec,
        })
    }

    /// `f(x_i)` for every node.
    pub fn rhs_values(&self) -> Vec<T> {
        (0..self.nodes.len())
            .map(|i| self.spec.rhs(self.nodes.point(i)))
            .collect()
    }

    pub fn exact_values(&self) -> Vec<T> {
        (0..self.nodes.len())
            .map(|i| self.spec.exact(self.nodes.point(i)))
            .collect()
    }

    /// Mean `|f|` over interior nodes; the scale of the residual tolerance.
    pub fn mean_abs_rhs(&self) -> f64 {
        let (sum, n) = (0..self.nodes.len())
            .filter(|&i| self.nodes.is_interior(i))
            .fold((0.0, 0usize), |(s, n), i| {
                (s + self.spec.rhs(self.nodes.point(i)).as_f64().abs(), n + 1)
            });
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Solution dump: `x0,...,x{d-1},u,u_exact,abs_err`.
    pub fn write_solution_csv<W: std::io::Write>(&self, u: &[T], mut w: W) -> std::io::Result<()> {
        let d = self.nodes.dim();
        let cols: Vec<String> = (0..d).map(|a| format!("x{a}")).collect();
        writeln!(w, "{},u,u_exact,abs_err", cols.join(","))?;
        for (i, &ui) in u.iter().enumerate().take(self.nodes.len()) {
            let p = self.nodes.point(i);
            let exact = self.spec.exact(p);
            for &x in p {
                write!(w, "{:.16e},", x.as_f64())?;
            }
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e}",
                ui.as_f64(),
                exact.as_f64(),
                (ui - exact).abs().as_f64()
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_limits() {
        assert!((dt_max(0.1f64, 2) - 0.0025).abs() < 1e-18);
        assert_eq!(dt_max(1.0f64, 1), 0.5);
        let ts = TimeStep::new(0.1f64, 2, 0.3).unwrap();
        assert!((ts.dt() - 0.3 * 0.0025).abs() < 1e-18);
        assert_eq!(
            TimeStep::new(0.1f64, 2, 1.0),
            Err(SolverError::InvalidAlpha(1.0))
        );
        assert!(TimeStep::new(0.1f64, 2, 0.0).is_err());
    }

    #[test]
    fn source_matches_finite_difference_laplacian() {
        let spec = ProblemSpec::new(Domain::<f64>::unit(2).unwrap());
        let e = 1e-4;
        for p in [[0.3, 0.4], [0.77, 0.12], [0.5, 0.5]] {
            let mut lap = 0.0;
            for a in 0..2 {
                let mut hi = p;
                let mut lo = p;
                hi[a] += e;
                lo[a] -= e;
                lap += (spec.exact(&hi) - 2.0 * spec.exact(&p) + spec.exact(&lo)) / (e * e);
            }
            assert!(
                (lap - spec.rhs(&p)).abs() < 1e-5,
                "{lap} vs {}",
                spec.rhs(&p)
            );
        }
    }

    #[test]
    fn field_time() {
        let mut f = FieldState::zeros(3, 0.5f64);
        f.step = 4;
        assert_eq!(f.time(), 2.0);
    }
}
