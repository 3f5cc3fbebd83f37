//! Regular-grid domain decomposition and halo exchange maps.
//!
//! [`build_exchange_maps`] plays the root's set-up role: from the global
//! stencils it decides, for every subdomain, which foreign node values it has
//! to receive each step (its halo) and from whom. The halo covers
//!
//! 1. the supports of owned interior nodes,
//! 2. the supports of every Neumann node the subdomain enforces locally:
//!    its own Neumann nodes and any Neumann node appearing in the supports
//!    of (1).
//!
//! Rule 2 lets a worker recompute exterior Neumann values itself instead of
//! waiting for a second exchange.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nodeset::NodeSet;
use crate::rbffd::{Stencil, StencilSet};
use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum PartitionError {
    #[error("grid has {got} axes but the nodes are {dim}-dimensional")]
    GridDimension { got: usize, dim: usize },
    #[error("grid axis {axis} has zero subdivisions")]
    EmptyAxis { axis: usize },
    #[error("node {node} has no valid owner")]
    Unowned { node: usize },
    #[error("interior node {node} has no Laplacian stencil")]
    MissingStencil { node: usize },
    #[error("subdomain {subdomain}: support node {node} is neither owned nor in the halo")]
    ClosureViolation { subdomain: usize, node: usize },
    #[error("no subdomain {0}")]
    UnknownSubdomain(usize),
    #[error("cannot parse grid `{0}` (expected e.g. 4x4)")]
    BadGrid(String),
}

/// Parses `PxQ[xR]`.
pub fn parse_grid(s: &str) -> Result<Vec<usize>, PartitionError> {
    let axes: Result<Vec<usize>, _> = s
        .split(['x', 'X'])
        .map(|t| t.trim().parse::<usize>())
        .collect();
    match axes {
        Ok(a) if !a.is_empty() && a.iter().all(|&v| v > 0) => Ok(a),
        _ => Err(PartitionError::BadGrid(s.to_string())),
    }
}

/// Subdivision-cell owner of every node. Cells are half-open
/// `[k w, (k + 1) w)` per axis except the last, which is closed on top; the
/// cell tuple is flattened row-major (axis 0 slowest).
pub fn assign_owners<T: Real>(
    nodes: &NodeSet<T>,
    grid: &[usize],
) -> Result<Vec<usize>, PartitionError> {
    let dim = nodes.dim();
    if grid.len() != dim {
        return Err(PartitionError::GridDimension {
            got: grid.len(),
            dim,
        });
    }
    if let Some(axis) = grid.iter().position(|&g| g == 0) {
        return Err(PartitionError::EmptyAxis { axis });
    }
    let side = nodes.domain().side();
    let edge = |k: usize, g: usize| side * T::from_usize_lossy(k) / T::from_usize_lossy(g);
    Ok((0..nodes.len())
        .map(|i| {
            nodes
                .point(i)
                .iter()
                .zip(grid)
                .fold(0usize, |acc, (&x, &g)| {
                    let mut k = (x * T::from_usize_lossy(g) / side)
                        .floor()
                        .to_usize()
                        .unwrap_or(0)
                        .min(g - 1);
                    if k > 0 && x < edge(k, g) {
                        k -= 1;
                    } else if k + 1 < g && x >= edge(k + 1, g) {
                        k += 1;
                    }
                    acc * g + k
                })
        })
        .collect())
}

/// Nodes one subdomain sends to (or receives from) one peer, sorted by global
/// index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerList {
    pub peer: usize,
    pub nodes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubdomainPlan {
    pub id: usize,
    /// Owned nodes, sorted by global index.
    pub owned: Vec<usize>,
    /// Non-owned nodes whose values arrive every step, sorted.
    pub halo: Vec<usize>,
    /// Neumann nodes (owned or halo) whose values this subdomain computes.
    pub neumann: Vec<usize>,
    pub sends: Vec<PeerList>,
    pub recvs: Vec<PeerList>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub grid: Vec<usize>,
    pub owner: Vec<usize>,
    pub subdomains: Vec<SubdomainPlan>,
}

/// Computes halos and matched send/receive lists for every subdomain.
pub fn build_exchange_maps<T: Real>(
    nodes: &NodeSet<T>,
    stencils: &StencilSet<T>,
    owners: &[usize],
    grid: &[usize],
) -> Result<PartitionPlan, PartitionError> {
    let count: usize = grid.iter().product();
    let n = nodes.len();
    if owners.len() != n {
        return Err(PartitionError::Unowned {
            node: owners.len().min(n),
        });
    }
    if let Some(node) = owners.iter().position(|&o| o >= count) {
        return Err(PartitionError::Unowned { node });
    }

    let mut owned: Vec<Vec<usize>> = vec![Vec::new(); count];
    for (i, &o) in owners.iter().enumerate() {
        owned[o].push(i);
    }

    // stamp[j] == s + 1 marks node j as already collected for subdomain s
    let mut stamp = vec![0usize; n];
    let mut neumann_stamp = vec![0usize; n];
    let mut subdomains = Vec::with_capacity(count);
    for (s, mine) in owned.iter().enumerate() {
        let tag = s + 1;
        let mut needed = Vec::new();
        let mut neumann = Vec::new();
        let mut take = |j: usize, needed: &mut Vec<usize>| -> Result<(), PartitionError> {
            if j >= n {
                return Err(PartitionError::Unowned { node: j });
            }
            if stamp[j] != tag {
                stamp[j] = tag;
                needed.push(j);
            }
            Ok(())
        };
        for &i in mine {
            take(i, &mut needed)?;
            if nodes.is_neumann(i) && neumann_stamp[i] != tag {
                neumann_stamp[i] = tag;
                neumann.push(i);
            }
            if !nodes.is_interior(i) {
                continue;
            }
            let st = stencils.laplacian[i]
                .as_ref()
                .ok_or(PartitionError::MissingStencil { node: i })?;
            for &j in &st.support {
                take(j, &mut needed)?;
                if j < n && nodes.is_neumann(j) && neumann_stamp[j] != tag {
                    neumann_stamp[j] = tag;
                    neumann.push(j);
                }
            }
        }
        // Neumann nodes enforced here, closed under their own supports
        let mut next = 0;
        while next < neumann.len() {
            let b = neumann[next];
            next += 1;
            if let Some(st) = stencils.normal[b].as_ref() {
                for &j in &st.support {
                    take(j, &mut needed)?;
                    if j < n && nodes.is_neumann(j) && neumann_stamp[j] != tag {
                        neumann_stamp[j] = tag;
                        neumann.push(j);
                    }
                }
            }
        }
        let mut halo: Vec<usize> = needed.into_iter().filter(|&j| owners[j] != s).collect();
        halo.sort_unstable();
        neumann.sort_unstable();

        let mut recvs: Vec<PeerList> = Vec::new();
        for &j in &halo {
            let peer = owners[j];
            match recvs.iter_mut().find(|p| p.peer == peer) {
                Some(p) => p.nodes.push(j),
                None => recvs.push(PeerList {
                    peer,
                    nodes: vec![j],
                }),
            }
        }
        recvs.sort_by_key(|p| p.peer);
        subdomains.push(SubdomainPlan {
            id: s,
            owned: mine.clone(),
            halo,
            neumann,
            sends: Vec::new(),
            recvs,
        });
    }

    // mirror every receive list into the owner's send list
    let mut sends: Vec<Vec<PeerList>> = vec![Vec::new(); count];
    for sd in &subdomains {
        for r in &sd.recvs {
            sends[r.peer].push(PeerList {
                peer: sd.id,
                nodes: r.nodes.clone(),
            });
        }
    }
    for (sd, mut s) in subdomains.iter_mut().zip(sends) {
        s.sort_by_key(|p| p.peer);
        sd.sends = s;
    }
    Ok(PartitionPlan {
        grid: grid.to_vec(),
        owner: owners.to_vec(),
        subdomains,
    })
}

impl PartitionPlan {
    pub fn len(&self) -> usize {
        self.subdomains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subdomains.is_empty()
    }

    pub fn summary(&self) -> PlanSummary {
        PlanSummary {
            grid: self.grid.clone(),
            subdomains: self
                .subdomains
                .iter()
                .map(|s| SubdomainSummary {
                    id: s.id,
                    owned: s.owned.len(),
                    halo: s.halo.len(),
                    neumann: s.neumann.len(),
                    messages: s.sends.iter().map(|p| (p.peer, p.nodes.len())).collect(),
                })
                .collect(),
        }
    }
}

/// Counts only; what `--dump-plan` writes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub grid: Vec<usize>,
    pub subdomains: Vec<SubdomainSummary>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubdomainSummary {
    pub id: usize,
    pub owned: usize,
    pub halo: usize,
    pub neumann: usize,
    /// `(peer, values sent per step)`.
    pub messages: Vec<(usize, usize)>,
}

/// Local numbering of one subdomain: owned nodes first, then halo nodes, both
/// in ascending global order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalIndexMap {
    local_to_global: Vec<usize>,
    n_owned: usize,
}

impl LocalIndexMap {
    pub fn new(owned: &[usize], halo: &[usize]) -> Self {
        let mut local_to_global = owned.to_vec();
        local_to_global.extend_from_slice(halo);
        Self {
            local_to_global,
            n_owned: owned.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.local_to_global.len()
    }

    pub fn is_empty(&self) -> bool {
        self.local_to_global.is_empty()
    }

    pub fn n_owned(&self) -> usize {
        self.n_owned
    }

    pub fn to_global(&self, local: usize) -> usize {
        self.local_to_global[local]
    }

    pub fn globals(&self) -> &[usize] {
        &self.local_to_global
    }

    pub fn to_local(&self, global: usize) -> Option<usize> {
        let (owned, halo) = self.local_to_global.split_at(self.n_owned);
        owned
            .binary_search(&global)
            .ok()
            .or_else(|| halo.binary_search(&global).ok().map(|p| p + self.n_owned))
    }
}

/// Stencils in compressed-row form over local indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LocalStencils<T: Real> {
    /// Local index of each row's center.
    pub centers: Vec<usize>,
    pub offsets: Vec<usize>,
    pub columns: Vec<usize>,
    pub weights: Vec<T>,
    /// Common row length when every row has the same one.
    #[serde(default)]
    pub width: Option<usize>,
}

impl<T: Real> Default for LocalStencils<T> {
    fn default() -> Self {
        Self {
            centers: Vec::new(),
            offsets: vec![0],
            columns: Vec::new(),
            weights: Vec::new(),
            width: None,
        }
    }
}

impl<T: Real> LocalStencils<T> {
    pub fn rows(&self) -> usize {
        self.centers.len()
    }

    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[T]) {
        let (a, b) = (self.offsets[r], self.offsets[r + 1]);
        (&self.columns[a..b], &self.weights[a..b])
    }

    fn push(
        &mut self,
        subdomain: usize,
        map: &LocalIndexMap,
        center: usize,
        st: &Stencil<T>,
    ) -> Result<(), PartitionError> {
        let c = map
            .to_local(center)
            .ok_or(PartitionError::ClosureViolation {
                subdomain,
                node: center,
            })?;
        for &g in &st.support {
            let l = map
                .to_local(g)
                .ok_or(PartitionError::ClosureViolation { subdomain, node: g })?;
            self.columns.push(l);
        }
        self.weights.extend_from_slice(&st.weights);
        let len = st.support.len();
        self.width = match (self.centers.is_empty(), self.width) {
            (true, _) => Some(len),
            (false, Some(w)) if w == len => Some(w),
            _ => None,
        };
        self.centers.push(c);
        self.offsets.push(self.columns.len());
        Ok(())
    }
}

/// Everything a worker needs about its subdomain, in local indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LocalPlan<T: Real> {
    pub id: usize,
    pub map: LocalIndexMap,
    /// Laplacian rows of owned interior nodes.
    pub laplacian: LocalStencils<T>,
    /// Normal-derivative rows of locally enforced Neumann nodes.
    pub neumann: LocalStencils<T>,
    pub sends: Vec<PeerList>,
    pub recvs: Vec<PeerList>,
}

impl<T: Real> LocalPlan<T> {
    pub fn peers(&self) -> impl Iterator<Item = usize> + '_ {
        let mut ids: Vec<usize> = self
            .sends
            .iter()
            .chain(&self.recvs)
            .map(|p| p.peer)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids.into_iter()
    }
}

/// Re-indexes one subdomain's stencils and exchange lists to local indices.
pub fn localize<T: Real>(
    plan: &PartitionPlan,
    id: usize,
    nodes: &NodeSet<T>,
    stencils: &StencilSet<T>,
) -> Result<LocalPlan<T>, PartitionError> {
    let sd = plan
        .subdomains
        .get(id)
        .ok_or(PartitionError::UnknownSubdomain(id))?;
    let map = LocalIndexMap::new(&sd.owned, &sd.halo);
    let mut laplacian = LocalStencils::default();
    for &i in &sd.owned {
        if nodes.is_interior(i) {
            let st = stencils.laplacian[i]
                .as_ref()
                .ok_or(PartitionError::MissingStencil { node: i })?;
            laplacian.push(id, &map, i, st)?;
        }
    }
    // lower ranks first, so edge and corner rows see updated face values
    let mut order = sd.neumann.clone();
    order.sort_by_key(|&b| (nodes.neumann_rank(b), b));
    let mut neumann = LocalStencils::default();
    for &b in &order {
        if let Some(st) = stencils.normal[b].as_ref() {
            neumann.push(id, &map, b, st)?;
        }
    }
    let relabel = |lists: &[PeerList]| -> Result<Vec<PeerList>, PartitionError> {
        lists
            .iter()
            .map(|p| {
                let nodes = p
                    .nodes
                    .iter()
                    .map(|&g| {
                        map.to_local(g).ok_or(PartitionError::ClosureViolation {
                            subdomain: id,
                            node: g,
                        })
                    })
                    .collect::<Result<_, _>>()?;
                Ok(PeerList {
                    peer: p.peer,
                    nodes,
                })
            })
            .collect()
    };
    let sends = relabel(&sd.sends)?;
    let recvs = relabel(&sd.recvs)?;
    Ok(LocalPlan {
        id,
        map,
        laplacian,
        neumann,
        sends,
        recvs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nodeset::{Domain, NodeKind};

    fn grid_nodes(points: &[[f64; 2]]) -> NodeSet<f64> {
        let coords = points.iter().flatten().copied().collect();
        let kinds = vec![NodeKind::Interior; points.len()];
        NodeSet::from_parts(Domain::unit(2).unwrap(), 0.1, coords, kinds).unwrap()
    }

    #[test]
    fn owner_examples() {
        let nodes = grid_nodes(&[
            [0.1, 0.2],
            [1.0 / 3.0, 0.5],
            [1.0, 1.0],
            [0.0, 0.0],
            [0.999, 0.0],
        ]);
        let owners = assign_owners(&nodes, &[3, 3]).unwrap();
        assert_eq!(owners[0], 0);
        assert_eq!(owners[1], 3 + 1, "x = 1/3 falls in the second column");
        assert_eq!(owners[2], 8);
        assert_eq!(owners[3], 0);
        assert_eq!(owners[4], 6);
    }

    #[test]
    fn owner_errors() {
        let nodes = grid_nodes(&[[0.1, 0.2]]);
        assert_eq!(
            assign_owners(&nodes, &[2]),
            Err(PartitionError::GridDimension { got: 1, dim: 2 })
        );
        assert_eq!(
            assign_owners(&nodes, &[2, 0]),
            Err(PartitionError::EmptyAxis { axis: 1 })
        );
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("4x4").unwrap(), vec![4, 4]);
        assert_eq!(parse_grid("2x1x3").unwrap(), vec![2, 1, 3]);
        assert!(parse_grid("2x0").is_err());
        assert!(parse_grid("two").is_err());
    }

    #[test]
    fn local_map_round_trip() {
        let map = LocalIndexMap::new(&[2, 5, 9], &[1, 7]);
        assert_eq!(map.n_owned(), 3);
        for l in 0..map.len() {
            assert_eq!(map.to_local(map.to_global(l)), Some(l));
        }
        assert_eq!(map.to_local(3), None);
    }
}
