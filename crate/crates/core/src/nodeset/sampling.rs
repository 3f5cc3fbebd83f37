use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{BcKind, Domain, NodeKind, NodeSet, NodeSetError};
use crate::scalar::{dist2, Real};

/// Candidates per expansion point are `CANDIDATE_FACTOR * d * (d + 1)`.
pub const CANDIDATE_FACTOR: usize = 2;

/// Relative slack on the proximity test: a candidate is rejected when an
/// existing node is closer than `h * (1 - PROXIMITY_SLACK)`.
const PROXIMITY_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryNode<T: Real> {
    pub position: Vec<T>,
    pub normal: Vec<T>,
    pub bc: BcKind,
}

/// Regular lattice on every face of the cube.
///
/// Each edge is split into `k = floor(side / h)` segments so the lattice
/// spacing `side / k` never drops below `h`. Points on several faces (edges,
/// corners) are emitted once, in lexicographic lattice order.
pub fn discretize_boundary<T: Real>(
    domain: &Domain<T>,
    h: T,
) -> Result<Vec<BoundaryNode<T>>, NodeSetError> {
    let side = domain.side();
    if !(h > T::zero()) || h >= side || !h.is_finite() {
        return Err(NodeSetError::InvalidSpacing {
            h: h.as_f64(),
            side: side.as_f64(),
        });
    }
    let dim = domain.dim();
    let k = (side / h + T::lit(1e-9))
        .floor()
        .to_usize()
        .unwrap_or(1)
        .max(1);
    let coord = |i: usize| -> T {
        if i == k {
            side
        } else {
            side * T::from_usize_lossy(i) / T::from_usize_lossy(k)
        }
    };

    let mut out = Vec::new();
    let mut idx = vec![0usize; dim];
    loop {
        if idx.iter().any(|&i| i == 0 || i == k) {
            let position: Vec<T> = idx.iter().map(|&i| coord(i)).collect();
            let normal = domain
                .normal_at(&position)
                .expect("lattice point on a face");
            let bc = domain.bc_at(&position).expect("lattice point on a face");
            out.push(BoundaryNode {
                position,
                normal,
                bc,
            });
        }
        // odometer, last axis fastest
        let mut axis = dim;
        loop {
            if axis == 0 {
                return Ok(out);
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] <= k {
                break;
            }
            idx[axis] = 0;
        }
    }
}

/// Uniform-cell hash used for the proximity test during sampling.
struct CellGrid {
    dim: usize,
    cell: f64,
    per_axis: usize,
    buckets: Vec<Vec<u32>>,
}

impl CellGrid {
    fn new(dim: usize, side: f64, cell: f64) -> Self {
        let per_axis = ((side / cell).ceil() as usize).max(1) + 1;
        let buckets = vec![Vec::new(); per_axis.pow(dim as u32)];
        Self {
            dim,
            cell,
            per_axis,
            buckets,
        }
    }

    fn cell_of(&self, p: &[f64]) -> Vec<usize> {
        p.iter()
            .map(|&x| ((x / self.cell).floor().max(0.0) as usize).min(self.per_axis - 1))
            .collect()
    }

    fn flat(&self, c: &[usize]) -> usize {
        c.iter().fold(0, |acc, &ci| acc * self.per_axis + ci)
    }

    fn insert(&mut self, p: &[f64], id: u32) {
        let c = self.cell_of(p);
        let f = self.flat(&c);
        self.buckets[f].push(id);
    }

    /// Calls `visit` with every id stored in the 3^d block around `p`; stops
    /// early when `visit` returns `true`.
    fn any_near(&self, p: &[f64], mut visit: impl FnMut(u32) -> bool) -> bool {
        let c = self.cell_of(p);
        let mut offs = vec![-1i64; self.dim];
        loop {
            let mut ok = true;
            let mut cc = [0usize; 3];
            for a in 0..self.dim {
                let v = c[a] as i64 + offs[a];
                if v < 0 || v >= self.per_axis as i64 {
                    ok = false;
                    break;
                }
                cc[a] = v as usize;
            }
            if ok {
                let f = self.flat(&cc[..self.dim]);
                if self.buckets[f].iter().any(|&id| visit(id)) {
                    return true;
                }
            }
            let mut a = self.dim;
            loop {
                if a == 0 {
                    return false;
                }
                a -= 1;
                offs[a] += 1;
                if offs[a] <= 1 {
                    break;
                }
                offs[a] = -1;
            }
        }
    }
}

/// Grows a quasi-uniform interior from boundary seeds by Poisson-disc
/// expansion.
///
/// Points are processed in FIFO order starting with the seeds. Around each one
/// `2 d (d + 1)` candidates are placed at distance `h` in uniformly random
/// directions; a candidate is accepted when it lies strictly inside the cube
/// and no accepted node is closer than `h`. Accepted candidates join the queue.
/// The output is a pure function of `(domain, seeds, h, rng_seed)`.
pub fn fill_interior<T: Real>(
    domain: &Domain<T>,
    seeds: &[BoundaryNode<T>],
    h: T,
    rng_seed: u64,
) -> NodeSet<T> {
    let dim = domain.dim();
    let hf = h.as_f64();
    let min_d2 = {
        let r = hf * (1.0 - PROXIMITY_SLACK);
        T::lit(r * r)
    };
    let side = domain.side().as_f64();
    let mut grid = CellGrid::new(dim, side, hf);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let mut coords: Vec<T> = Vec::with_capacity(seeds.len() * dim);
    let mut kinds = Vec::with_capacity(seeds.len());
    let mut queue = VecDeque::with_capacity(seeds.len());
    for s in seeds {
        let id = kinds.len() as u32;
        coords.extend_from_slice(&s.position);
        kinds.push(NodeKind::Boundary);
        grid.insert(&to_f64(&s.position), id);
        queue.push_back(id as usize);
    }

    // the unit "sphere" in 1-D is {-1, +1}: take both instead of sampling it
    let candidates = if dim == 1 {
        2
    } else {
        CANDIDATE_FACTOR * dim * (dim + 1)
    };
    let mut dir = vec![0.0f64; dim];
    let mut cand = vec![T::zero(); dim];
    while let Some(center) = queue.pop_front() {
        for k in 0..candidates {
            if dim == 1 {
                dir[0] = if k == 0 { -1.0 } else { 1.0 };
            } else {
                random_direction(&mut rng, &mut dir);
            }
            for a in 0..dim {
                cand[a] = coords[center * dim + a] + h * T::lit(dir[a]);
            }
            if !domain.contains_strictly(&cand) {
                continue;
            }
            let cf = to_f64(&cand);
            let too_close = grid.any_near(&cf, |id| {
                let j = id as usize;
                dist2(&coords[j * dim..(j + 1) * dim], &cand) < min_d2
            });
            if too_close {
                continue;
            }
            let id = kinds.len() as u32;
            coords.extend_from_slice(&cand);
            kinds.push(NodeKind::Interior);
            grid.insert(&cf, id);
            queue.push_back(id as usize);
        }
    }

    NodeSet::from_parts(*domain, h, coords, kinds).expect("sampled nodes lie in the domain")
}

fn to_f64<T: Real>(p: &[T]) -> Vec<f64> {
    p.iter().map(|v| v.as_f64()).collect()
}

fn random_direction(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    loop {
        let mut n2 = 0.0;
        for v in out.iter_mut() {
            *v = rng.sample(StandardNormal);
            n2 += *v * *v;
        }
        if n2 > 1e-24 {
            let inv = n2.sqrt().recip();
            out.iter_mut().for_each(|v| *v *= inv);
            return;
        }
    }
}
