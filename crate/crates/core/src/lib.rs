//! Meshless Poisson solver on scattered nodes with RBF-FD stencils, regular
//! grid domain decomposition and halo-exchanging workers.

pub mod bench;
pub mod nodeset;
pub mod partition;
pub mod rbffd;
pub mod scalar;
pub mod solver;
pub mod transport;

pub use scalar::Real;

pub type Domain64 = nodeset::Domain<f64>;
pub type Domain32 = nodeset::Domain<f32>;
pub type NodeSet64 = nodeset::NodeSet<f64>;
pub type NodeSet32 = nodeset::NodeSet<f32>;
pub type StencilSet64 = rbffd::StencilSet<f64>;
pub type StencilSet32 = rbffd::StencilSet<f32>;
pub type Discretization64 = solver::Discretization<f64>;
pub type Discretization32 = solver::Discretization<f32>;
pub type RunOutcome64 = solver::RunOutcome<f64>;
pub type RunOutcome32 = solver::RunOutcome<f32>;
