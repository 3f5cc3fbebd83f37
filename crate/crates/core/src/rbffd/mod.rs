//! RBF-FD stencil weights.
//!
//! For a center `x_c` with support `x_1..x_n` the weights `w` of a linear
//! operator `L` solve the saddle system
//!
//! ```text
//! [ A   P ] [ w      ]   [ L phi ]
//! [ P^T 0 ] [ lambda ] = [ L p   ]
//! ```
//!
//! with `A_ij = phi(|x_i - x_j|)` a polyharmonic spline and `P` the monomials
//! of total degree `<= m`. The system is assembled in local coordinates
//! `(x - x_c) / s`, `s` being the support radius, so its conditioning does not
//! depend on the node spacing; the weights are rescaled by `s^-order`
//! afterwards.

mod basis;
mod dense;

pub use basis::{
    monomial_count, monomial_directional_at_origin, monomial_exponents,
    monomial_laplacian_at_origin, monomial_value, phs, phs_directional, phs_laplacian,
};
pub use dense::{norm1, Lu};

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nodeset::{KdTree, NodeSet, NodeSetError};
use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum StencilError {
    #[error("augmentation order {0} must be even")]
    OddOrder(usize),
    #[error("PHS exponent {0} must be one of 3, 5, 7")]
    InvalidExponent(i32),
    #[error("support size {n} is smaller than the {monomials} augmentation monomials")]
    SupportTooSmall { n: usize, monomials: usize },
    #[error("degenerate support at node {center} (condition estimate {cond:e})")]
    DegenerateSupport { center: usize, cond: f64 },
    #[error("weights ({weights}) and support ({support}) lengths differ")]
    LengthMismatch { weights: usize, support: usize },
    #[error("support index {index} outside a field of {len} values")]
    IndexOutOfRange { index: usize, len: usize },
    #[error(transparent)]
    Nodes(#[from] NodeSetError),
}

/// Approximation parameters: augmentation order `m`, PHS exponent and support
/// size `n` (default `2M + 1` with `M = C(m + d, d)`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApproxConfig {
    dim: usize,
    m: usize,
    phs_exponent: i32,
    support_size: usize,
}

impl ApproxConfig {
    pub fn new(dim: usize, m: usize) -> Result<Self, StencilError> {
        if !m.is_multiple_of(2) {
            return Err(StencilError::OddOrder(m));
        }
        let monomials = monomial_count(m, dim);
        Ok(Self {
            dim,
            m,
            phs_exponent: 3,
            support_size: 2 * monomials + 1,
        })
    }

    pub fn with_support_size(mut self, n: usize) -> Result<Self, StencilError> {
        if n < self.monomials() {
            return Err(StencilError::SupportTooSmall {
                n,
                monomials: self.monomials(),
            });
        }
        self.support_size = n;
        Ok(self)
    }

    pub fn with_phs_exponent(mut self, k: i32) -> Result<Self, StencilError> {
        if ![3, 5, 7].contains(&k) {
            return Err(StencilError::InvalidExponent(k));
        }
        self.phs_exponent = k;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.m
    }

    pub fn phs_exponent(&self) -> i32 {
        self.phs_exponent
    }

    pub fn support_size(&self) -> usize {
        self.support_size
    }

    pub fn monomials(&self) -> usize {
        monomial_count(self.m, self.dim)
    }
}

/// Linear operator evaluated at the stencil center.
#[derive(Clone, Debug, PartialEq)]
pub enum Operator<T: Real> {
    Laplacian,
    /// Derivative along the given (unit) direction.
    NormalDerivative(Vec<T>),
}

impl<T: Real> Operator<T> {
    /// Power of length in the operator's units.
    fn order(&self) -> i32 {
        match self {
            Operator::Laplacian => 2,
            Operator::NormalDerivative(_) => 1,
        }
    }
}

/// Support indices (center first) and matching weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Stencil<T: Real> {
    pub support: Vec<usize>,
    pub weights: Vec<T>,
}

impl<T: Real> Stencil<T> {
    pub fn apply(&self, field: &[T]) -> Result<T, StencilError> {
        apply_stencil(&self.weights, &self.support, field)
    }

    /// Weight attached to node `index`, if it is in the support.
    pub fn weight_of(&self, index: usize) -> Option<T> {
        self.support
            .iter()
            .position(|&s| s == index)
            .map(|p| self.weights[p])
    }
}

/// `sum_i w_i u(support_i)`.
pub fn apply_stencil<T: Real>(
    weights: &[T],
    support: &[usize],
    field: &[T],
) -> Result<T, StencilError> {
    if weights.len() != support.len() {
        return Err(StencilError::LengthMismatch {
            weights: weights.len(),
            support: support.len(),
        });
    }
    let mut acc = T::zero();
    for (&w, &j) in weights.iter().zip(support) {
        let u = *field.get(j).ok_or(StencilError::IndexOutOfRange {
            index: j,
            len: field.len(),
        })?;
        acc += w * u;
    }
    Ok(acc)
}

/// Weights of `op` at `center` over explicit support points (flat, `dim`
/// coordinates each).
///
/// `label` only names the center in the degenerate-support error.
pub fn stencil_weights<T: Real>(
    center: &[T],
    support: &[T],
    cfg: &ApproxConfig,
    op: &Operator<T>,
    label: usize,
) -> Result<Vec<T>, StencilError> {
    let d = center.len();
    let n = support.len() / d;
    let exps = monomial_exponents(cfg.order(), d);
    let big_m = exps.len();
    if n < big_m {
        return Err(StencilError::SupportTooSmall {
            n,
            monomials: big_m,
        });
    }
    let k = cfg.phs_exponent();

    let mut local = Vec::with_capacity(n * d);
    for j in 0..n {
        for a in 0..d {
            local.push(support[j * d + a] - center[a]);
        }
    }
    let scale = (0..n)
        .map(|j| local[j * d..(j + 1) * d].iter().map(|&v| v * v).sum::<T>())
        .fold(T::zero(), T::max)
        .sqrt();
    if !(scale > T::zero()) {
        return Err(StencilError::DegenerateSupport {
            center: label,
            cond: f64::INFINITY,
        });
    }
    let inv = scale.recip();
    local.iter_mut().for_each(|v| *v *= inv);
    let y = |j: usize| &local[j * d..(j + 1) * d];

    let size = n + big_m;
    let mut mat = vec![T::zero(); size * size];
    for i in 0..n {
        for j in i + 1..n {
            let r = crate::scalar::dist2(y(i), y(j)).sqrt();
            let v = phs(r, k);
            mat[i * size + j] = v;
            mat[j * size + i] = v;
        }
        for (c, e) in exps.iter().enumerate() {
            let p = monomial_value(e, y(i));
            mat[i * size + n + c] = p;
            mat[(n + c) * size + i] = p;
        }
    }

    let mut rhs = vec![T::zero(); size];
    match op {
        Operator::Laplacian => {
            for j in 0..n {
                let r = y(j).iter().map(|&v| v * v).sum::<T>().sqrt();
                rhs[j] = phs_laplacian(r, k, d);
            }
            for (c, e) in exps.iter().enumerate() {
                rhs[n + c] = monomial_laplacian_at_origin(e);
            }
        }
        Operator::NormalDerivative(dir) => {
            for j in 0..n {
                let offset: Vec<T> = y(j).iter().map(|&v| -v).collect();
                rhs[j] = phs_directional(&offset, dir, k);
            }
            for (c, e) in exps.iter().enumerate() {
                rhs[n + c] = monomial_directional_at_origin(e, dir);
            }
        }
    }

    let a_norm = norm1(&mat, size);
    let lu = Lu::factor(mat, size).map_err(|_| StencilError::DegenerateSupport {
        center: label,
        cond: f64::INFINITY,
    })?;
    let cond = (a_norm * lu.inverse_norm1_estimate()).as_f64();
    if !cond.is_finite() || cond > T::COND_LIMIT {
        return Err(StencilError::DegenerateSupport {
            center: label,
            cond,
        });
    }
    let sol = lu.solve(&rhs);
    let unscale = scale.powi(op.order()).recip();
    Ok(sol[..n].iter().map(|&w| w * unscale).collect())
}

/// Stencil for node `center`, its support being the `n` nearest nodes.
pub fn build_stencil<T: Real>(
    nodes: &NodeSet<T>,
    tree: &KdTree<T>,
    center: usize,
    cfg: &ApproxConfig,
    op: &Operator<T>,
) -> Result<Stencil<T>, StencilError> {
    let support = tree.nearest(nodes.point(center), cfg.support_size())?;
    stencil_on(nodes, center, support, cfg, op)
}

/// Normal-derivative stencil for a Neumann node: the node itself plus its
/// `n - 1` nearest nodes that are either not Neumann nodes or Neumann nodes of
/// lower [rank](NodeSet::neumann_rank) (face nodes for an edge or corner).
///
/// Plain nearest-node supports couple neighbouring Neumann nodes through
/// one-sided weights, and both the resulting boundary update and the
/// eliminated operator turn out unstable. With ranked supports the boundary
/// values follow explicitly from interior and Dirichlet values, faces first.
pub fn build_neumann_stencil<T: Real>(
    nodes: &NodeSet<T>,
    tree: &KdTree<T>,
    center: usize,
    cfg: &ApproxConfig,
) -> Result<Stencil<T>, StencilError> {
    let dir = nodes
        .normal(center)
        .ok_or(StencilError::IndexOutOfRange {
            index: center,
            len: nodes.len(),
        })?
        .to_vec();
    let mut support = vec![center];
    let rank = nodes.neumann_rank(center);
    support.extend(
        tree.nearest_filtered(nodes.point(center), cfg.support_size() - 1, |j| {
            j != center && nodes.neumann_rank(j) < rank
        })?,
    );
    stencil_on(
        nodes,
        center,
        support,
        cfg,
        &Operator::NormalDerivative(dir),
    )
}

fn stencil_on<T: Real>(
    nodes: &NodeSet<T>,
    center: usize,
    support: Vec<usize>,
    cfg: &ApproxConfig,
    op: &Operator<T>,
) -> Result<Stencil<T>, StencilError> {
    let x = nodes.point(center);
    let mut pts = Vec::with_capacity(support.len() * nodes.dim());
    for &j in &support {
        pts.extend_from_slice(nodes.point(j));
    }
    let weights = stencil_weights(x, &pts, cfg, op, center)?;
    Ok(Stencil { support, weights })
}

/// Laplacian stencils on interior nodes and normal-derivative stencils (see
/// [`build_neumann_stencil`]) on Neumann boundary nodes. Dirichlet nodes are frozen and get neither.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct StencilSet<T: Real> {
    pub config: ApproxConfig,
    pub laplacian: Vec<Option<Stencil<T>>>,
    pub normal: Vec<Option<Stencil<T>>>,
}

impl<T: Real> StencilSet<T> {
    pub fn build(nodes: &NodeSet<T>, cfg: &ApproxConfig) -> Result<Self, StencilError> {
        if cfg.support_size() > nodes.len() {
            return Err(NodeSetError::InsufficientNodes {
                k: cfg.support_size(),
                available: nodes.len(),
            }
            .into());
        }
        let tree = nodes.spatial_index();
        let mut laplacian = vec![None; nodes.len()];
        let mut normal = vec![None; nodes.len()];
        for i in 0..nodes.len() {
            if nodes.is_interior(i) {
                laplacian[i] = Some(build_stencil(nodes, &tree, i, cfg, &Operator::Laplacian)?);
            } else if nodes.is_neumann(i) {
                normal[i] = Some(build_neumann_stencil(nodes, &tree, i, cfg)?);
            }
        }
        Ok(Self {
            config: *cfg,
            laplacian,
            normal,
        })
    }

    pub fn len(&self) -> usize {
        self.laplacian.len()
    }

    pub fn is_empty(&self) -> bool {
        self.laplacian.is_empty()
    }

    /// Every support of node `i`'s stencils (Laplacian or normal).
    pub fn support_of(&self, i: usize) -> Option<&[usize]> {
        self.laplacian[i]
            .as_ref()
            .or(self.normal[i].as_ref())
            .map(|s| s.support.as_slice())
    }

    /// Debug dump: `center,neighbor,weight_lap` for every Laplacian stencil.
    pub fn write_laplacian_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "center,neighbor,weight_lap")?;
        for (c, s) in self.laplacian.iter().enumerate() {
            if let Some(s) = s {
                for (&j, &wt) in s.support.iter().zip(&s.weights) {
                    writeln!(w, "{c},{j},{:.16e}", wt.as_f64())?;
                }
            }
        }
        Ok(())
    }
}
