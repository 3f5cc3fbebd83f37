//! Per-subdomain operations on local fields.

use super::{ProblemSpec, SolverError};
use crate::nodeset::NodeSet;
use crate::partition::LocalStencils;
use crate::scalar::Real;

/// Rejects Neumann stencils whose own weight is negligible.
pub fn check_boundary_weight<T: Real>(
    node: usize,
    support: &[usize],
    weights: &[T],
) -> Result<(), SolverError> {
    let own = support
        .iter()
        .position(|&s| s == node)
        .map(|p| weights[p].abs())
        .unwrap_or_else(T::zero);
    let max = weights.iter().fold(T::zero(), |m, w| m.max(w.abs()));
    if !(own >= T::lit(1e-12) * max) || own == T::zero() {
        return Err(SolverError::UnusableBoundaryStencil { node });
    }
    Ok(())
}

/// Sets every Neumann node in `rows` so its normal derivative stencil yields
/// zero flux: `u_b = -(sum_{i != b} w_i u_i) / w_b`.
///
/// Rows are applied in order and in place. A row may reference the Neumann
/// centers of earlier rows (faces before edges before corners) but never a
/// later one, so the result is the same as solving the boundary relations
/// exactly for the given interior values.
pub fn enforce_neumann<T: Real>(values: &mut [T], rows: &LocalStencils<T>) {
    for r in 0..rows.rows() {
        let center = rows.centers[r];
        let (cols, ws) = rows.row(r);
        let mut off = T::zero();
        let mut own = T::zero();
        for (&c, &w) in cols.iter().zip(ws) {
            if c == center {
                own = w;
            } else {
                off += w * values[c];
            }
        }
        // flux g = 0
        values[center] = -off / own;
    }
}

/// One explicit step on the owned interior rows,
/// `u_i <- u_i + dt (sum_j w_ij u_j - f_i)`, reading only the incoming field.
///
/// `rhs[r]` is `f` at row `r`'s center. Returns `sum_i |lap u_i - f_i|` over
/// the rows (the residual of the incoming field). `next` is scratch space.
pub fn jacobi_step<T: Real>(
    values: &mut [T],
    rows: &LocalStencils<T>,
    rhs: &[T],
    dt: T,
    next: &mut Vec<T>,
    step: u64,
) -> Result<T, SolverError> {
    next.clear();
    let mut res_sum = T::zero();
    let mut update = |lap: T, r: usize, next: &mut Vec<T>| {
        let res = lap - rhs[r];
        res_sum += res.abs();
        next.push(values[rows.centers[r]] + dt * res);
    };
    match rows.width {
        // fixed stride: no per-row offset lookups
        Some(w) if w > 0 && rows.columns.len() == w * rows.rows() => {
            for (r, (cols, ws)) in rows
                .columns
                .chunks_exact(w)
                .zip(rows.weights.chunks_exact(w))
                .enumerate()
            {
                let lap = cols
                    .iter()
                    .zip(ws)
                    .fold(T::zero(), |acc, (&c, &w)| acc + w * values[c]);
                update(lap, r, next);
            }
        }
        _ => {
            for r in 0..rows.rows() {
                let (cols, ws) = rows.row(r);
                let lap = cols
                    .iter()
                    .zip(ws)
                    .fold(T::zero(), |acc, (&c, &w)| acc + w * values[c]);
                update(lap, r, next);
            }
        }
    }
    for (r, &v) in next.iter().enumerate() {
        if !v.is_finite() {
            return Err(SolverError::Divergence {
                step,
                node: rows.centers[r],
            });
        }
        values[rows.centers[r]] = v;
    }
    Ok(res_sum)
}

/// `(sum |lap u - f|, rows)` without modifying the field.
pub fn residual<T: Real>(values: &[T], rows: &LocalStencils<T>, rhs: &[T]) -> (T, usize) {
    let mut sum = T::zero();
    for r in 0..rows.rows() {
        let (cols, ws) = rows.row(r);
        let lap = cols
            .iter()
            .zip(ws)
            .fold(T::zero(), |acc, (&c, &w)| acc + w * values[c]);
        sum += (lap - rhs[r]).abs();
    }
    (sum, rows.rows())
}

/// Mean absolute error against the analytic solution over all nodes.
pub fn solution_error<T: Real>(u: &[T], nodes: &NodeSet<T>, spec: &ProblemSpec<T>) -> T {
    if nodes.is_empty() {
        return T::zero();
    }
    let sum = (0..nodes.len()).fold(T::zero(), |acc, i| {
        acc + (u[i] - spec.exact(nodes.point(i))).abs()
    });
    sum / T::from_usize_lossy(nodes.len())
}
