//! Scattered discretizations of the unit cube (and its half-side corner for the
//! mixed boundary condition variant).
//!
//! A [`NodeSet`] is built in two passes: [`discretize_boundary`] lays a regular
//! lattice over every face, then [`fill_interior`] grows a quasi-uniform
//! interior from those seeds by Poisson-disc expansion. The result is immutable
//! and shared by reference between stencil construction and every worker.

mod csv;
mod kdtree;
mod sampling;

pub use self::csv::{read_nodes_csv, write_nodes_csv};
pub use kdtree::KdTree;
pub use sampling::{discretize_boundary, fill_interior, BoundaryNode, CANDIDATE_FACTOR};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum NodeSetError {
    #[error("dimension {0} is not supported (expected 1, 2 or 3)")]
    InvalidDimension(usize),
    #[error("spacing {h} must lie in (0, {side})")]
    InvalidSpacing { h: f64, side: f64 },
    #[error("requested {k} neighbours but the node set only has {available} nodes")]
    InsufficientNodes { k: usize, available: usize },
    #[error("node {index} lies outside the domain")]
    OutsideDomain { index: usize },
    #[error("node set CSV: {0}")]
    Csv(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for NodeSetError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

/// Boundary condition attached to a face (and to the nodes lying on it).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BcKind {
    Dirichlet,
    Neumann,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Interior,
    Boundary,
}

/// Axis-aligned cube `[0, side]^dim` with a boundary condition on every face.
///
/// The full problem uses `side = 1` with Dirichlet faces everywhere. The mixed
/// variant keeps only the corner cube `[0, 1/2]^dim`; its faces at `x_i = 0`
/// are part of the original boundary (Dirichlet) and the faces at
/// `x_i = 1/2` cut through the original interior (Neumann).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Domain<T: Real> {
    dim: usize,
    side: T,
    mixed: bool,
}

impl<T: Real> Domain<T> {
    pub fn unit(dim: usize) -> Result<Self, NodeSetError> {
        Self::new(dim, false)
    }

    pub fn mixed(dim: usize) -> Result<Self, NodeSetError> {
        Self::new(dim, true)
    }

    pub fn new(dim: usize, mixed: bool) -> Result<Self, NodeSetError> {
        if !(1..=3).contains(&dim) {
            return Err(NodeSetError::InvalidDimension(dim));
        }
        let side = if mixed { T::lit(0.5) } else { T::one() };
        Ok(Self { dim, side, mixed })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn side(&self) -> T {
        self.side
    }

    #[inline]
    pub fn is_mixed(&self) -> bool {
        self.mixed
    }

    /// Condition on the face `x_axis = 0` (`upper == false`) or `x_axis = side`.
    pub fn face_bc(&self, _axis: usize, upper: bool) -> BcKind {
        if self.mixed && upper {
            BcKind::Neumann
        } else {
            BcKind::Dirichlet
        }
    }

    /// Closed-cube membership.
    pub fn contains(&self, p: &[T]) -> bool {
        p.iter().all(|&x| x >= T::zero() && x <= self.side)
    }

    /// Open-cube membership.
    pub fn contains_strictly(&self, p: &[T]) -> bool {
        p.iter().all(|&x| x > T::zero() && x < self.side)
    }

    /// Faces the point lies on, as `(axis, upper)` pairs.
    pub fn faces_at(&self, p: &[T]) -> Vec<(usize, bool)> {
        let mut faces = Vec::new();
        for (axis, &x) in p.iter().enumerate() {
            if x == T::zero() {
                faces.push((axis, false));
            }
            if x == self.side {
                faces.push((axis, true));
            }
        }
        faces
    }

    /// Condition of a boundary point. A point shared by a Dirichlet face and a
    /// Neumann face is Dirichlet.
    pub fn bc_at(&self, p: &[T]) -> Option<BcKind> {
        let faces = self.faces_at(p);
        if faces.is_empty() {
            return None;
        }
        if faces
            .iter()
            .any(|&(a, up)| self.face_bc(a, up) == BcKind::Dirichlet)
        {
            Some(BcKind::Dirichlet)
        } else {
            Some(BcKind::Neumann)
        }
    }

    /// Unit outward normal at a boundary point: normalized sum of the normals
    /// of every face containing it.
    pub fn normal_at(&self, p: &[T]) -> Option<Vec<T>> {
        let faces = self.faces_at(p);
        if faces.is_empty() {
            return None;
        }
        let mut n = vec![T::zero(); self.dim];
        for (axis, upper) in faces {
            n[axis] += if upper { T::one() } else { -T::one() };
        }
        let norm = n.iter().map(|&v| v * v).sum::<T>().sqrt();
        if norm == T::zero() {
            // Only possible when side == 0, which the constructor rules out.
            return None;
        }
        Some(n.into_iter().map(|v| v / norm).collect())
    }
}

/// Immutable discretization of a [`Domain`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct NodeSet<T: Real> {
    domain: Domain<T>,
    h: T,
    coords: Vec<T>,
    kinds: Vec<NodeKind>,
    normals: Vec<T>,
    bcs: Vec<Option<BcKind>>,
}

impl<T: Real> NodeSet<T> {
    /// Boundary lattice plus Poisson-disc interior.
    pub fn generate(domain: Domain<T>, h: T, rng_seed: u64) -> Result<Self, NodeSetError> {
        let seeds = discretize_boundary(&domain, h)?;
        Ok(fill_interior(&domain, &seeds, h, rng_seed))
    }

    /// Assembles a node set from raw positions and kinds; normals and boundary
    /// conditions are recomputed from the domain.
    pub fn from_parts(
        domain: Domain<T>,
        h: T,
        coords: Vec<T>,
        kinds: Vec<NodeKind>,
    ) -> Result<Self, NodeSetError> {
        let dim = domain.dim();
        if coords.len() != kinds.len() * dim {
            return Err(NodeSetError::Csv(format!(
                "{} coordinates do not match {} nodes in {dim}-D",
                coords.len(),
                kinds.len()
            )));
        }
        let mut normals = vec![T::zero(); coords.len()];
        let mut bcs = Vec::with_capacity(kinds.len());
        for (i, kind) in kinds.iter().enumerate() {
            let p = &coords[i * dim..(i + 1) * dim];
            if !domain.contains(p) {
                return Err(NodeSetError::OutsideDomain { index: i });
            }
            match kind {
                NodeKind::Interior => bcs.push(None),
                NodeKind::Boundary => {
                    let n = domain.normal_at(p).ok_or(NodeSetError::Csv(format!(
                        "boundary node {i} is not on a face"
                    )))?;
                    normals[i * dim..(i + 1) * dim].copy_from_slice(&n);
                    bcs.push(domain.bc_at(p));
                }
            }
        }
        Ok(Self {
            domain,
            h,
            coords,
            kinds,
            normals,
            bcs,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    #[inline]
    pub fn domain(&self) -> &Domain<T> {
        &self.domain
    }

    /// Target internodal spacing.
    #[inline]
    pub fn h(&self) -> T {
        self.h
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[T] {
        let d = self.dim();
        &self.coords[i * d..(i + 1) * d]
    }

    /// Flat `len() * dim()` coordinate array.
    #[inline]
    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    #[inline]
    pub fn kind(&self, i: usize) -> NodeKind {
        self.kinds[i]
    }

    #[inline]
    pub fn bc(&self, i: usize) -> Option<BcKind> {
        self.bcs[i]
    }

    pub fn normal(&self, i: usize) -> Option<&[T]> {
        match self.kinds[i] {
            NodeKind::Interior => None,
            NodeKind::Boundary => {
                let d = self.dim();
                Some(&self.normals[i * d..(i + 1) * d])
            }
        }
    }

    pub fn is_interior(&self, i: usize) -> bool {
        self.kinds[i] == NodeKind::Interior
    }

    pub fn is_neumann(&self, i: usize) -> bool {
        self.bcs[i] == Some(BcKind::Neumann)
    }

    /// Number of faces a Neumann node lies on (1 on a face, 2 on an edge, ...);
    /// 0 for every other node.
    pub fn neumann_rank(&self, i: usize) -> usize {
        if self.is_neumann(i) {
            self.domain.faces_at(self.point(i)).len()
        } else {
            0
        }
    }

    pub fn is_dirichlet(&self, i: usize) -> bool {
        self.bcs[i] == Some(BcKind::Dirichlet)
    }

    pub fn interior_count(&self) -> usize {
        self.kinds
            .iter()
            .filter(|k| **k == NodeKind::Interior)
            .count()
    }

    pub fn boundary_count(&self) -> usize {
        self.len() - self.interior_count()
    }

    pub fn spatial_index(&self) -> KdTree<T> {
        KdTree::build(self.dim(), &self.coords)
    }

    /// Exact `k` nearest nodes to `query`, nearest first, ties by lower index.
    pub fn nearest_neighbors(&self, query: &[T], k: usize) -> Result<Vec<usize>, NodeSetError> {
        self.spatial_index().nearest(query, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn domain_rejects_bad_dimension() {
        assert_eq!(
            Domain::<f64>::unit(0),
            Err(NodeSetError::InvalidDimension(0))
        );
        assert_eq!(
            Domain::<f64>::unit(4),
            Err(NodeSetError::InvalidDimension(4))
        );
    }

    #[test]
    fn mixed_faces() {
        let d = Domain::<f64>::mixed(2).unwrap();
        assert_eq!(d.side(), 0.5);
        assert_eq!(d.face_bc(0, false), BcKind::Dirichlet);
        assert_eq!(d.face_bc(1, true), BcKind::Neumann);
        assert_eq!(d.bc_at(&[0.5, 0.2]), Some(BcKind::Neumann));
        assert_eq!(d.bc_at(&[0.5, 0.5]), Some(BcKind::Neumann));
        assert_eq!(d.bc_at(&[0.0, 0.5]), Some(BcKind::Dirichlet));
        assert_eq!(d.bc_at(&[0.2, 0.3]), None);
    }

    #[test]
    fn corner_normal_is_normalized_sum() {
        let d = Domain::<f64>::unit(2).unwrap();
        let n = d.normal_at(&[1.0, 0.0]).unwrap();
        let s = 0.5f64.sqrt();
        assert!((n[0] - s).abs() < 1e-15 && (n[1] + s).abs() < 1e-15);
        assert_eq!(d.normal_at(&[0.0, 0.3]).unwrap(), vec![-1.0, 0.0]);
    }

    #[test]
    fn from_parts_rejects_outside() {
        let d = Domain::<f64>::unit(1).unwrap();
        let err = NodeSet::from_parts(
            d,
            0.5,
            vec![0.0, 1.5],
            vec![NodeKind::Boundary, NodeKind::Interior],
        );
        assert_eq!(err, Err(NodeSetError::OutsideDomain { index: 1 }));
    }
}
