use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::NodeSetError;
use crate::scalar::{dist2, Real};

const LEAF_SIZE: usize = 8;

/// Static k-d tree over a flat coordinate array.
///
/// The tree is implicit: `order` is permuted so that every range
/// `[lo, hi)` larger than a leaf has its splitting point at the midpoint and
/// the two halves on either side. The split axis cycles with depth.
#[derive(Clone, Debug)]
pub struct KdTree<T: Real> {
    dim: usize,
    coords: Vec<T>,
    order: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
struct Candidate<T> {
    d2: T,
    index: usize,
}

impl<T: Real> PartialEq for Candidate<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T: Real> Eq for Candidate<T> {}
impl<T: Real> PartialOrd for Candidate<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Real> Ord for Candidate<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .partial_cmp(&other.d2)
            .unwrap_or(Ordering::Equal)
            .then(self.index.cmp(&other.index))
    }
}

impl<T: Real> KdTree<T> {
    pub fn build(dim: usize, coords: &[T]) -> Self {
        assert!(dim > 0 && coords.len().is_multiple_of(dim));
        let n = coords.len() / dim;
        let mut tree = Self {
            dim,
            coords: coords.to_vec(),
            order: (0..n).collect(),
        };
        tree.build_range(0, n, 0);
        tree
    }

    fn build_range(&mut self, lo: usize, hi: usize, depth: usize) {
        if hi - lo <= LEAF_SIZE {
            return;
        }
        let axis = depth % self.dim;
        let mid = lo + (hi - lo) / 2;
        let (dim, coords) = (self.dim, &self.coords);
        self.order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
            coords[a * dim + axis]
                .partial_cmp(&coords[b * dim + axis])
                .unwrap_or(Ordering::Equal)
        });
        self.build_range(lo, mid, depth + 1);
        self.build_range(mid + 1, hi, depth + 1);
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    #[inline]
    fn point(&self, i: usize) -> &[T] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// Exact `k` nearest points to `query` sorted by distance, ties broken by
    /// the lower index.
    pub fn nearest(&self, query: &[T], k: usize) -> Result<Vec<usize>, NodeSetError> {
        Ok(self
            .nearest_with_dist2(query, k)?
            .into_iter()
            .map(|(i, _)| i)
            .collect())
    }

    /// The `k` nearest points among those accepted by `keep`, same ordering
    /// as [`nearest`](Self::nearest).
    pub fn nearest_filtered(
        &self,
        query: &[T],
        k: usize,
        keep: impl Fn(usize) -> bool,
    ) -> Result<Vec<usize>, NodeSetError> {
        let mut want = k.min(self.len());
        loop {
            let found: Vec<usize> = self
                .nearest(query, want)?
                .into_iter()
                .filter(|&i| keep(i))
                .collect();
            if found.len() >= k {
                return Ok(found[..k].to_vec());
            }
            if want == self.len() {
                return Err(NodeSetError::InsufficientNodes {
                    k,
                    available: found.len(),
                });
            }
            want = (want * 2).min(self.len());
        }
    }

    /// Same as [`nearest`](Self::nearest) but also returns squared distances.
    pub fn nearest_with_dist2(
        &self,
        query: &[T],
        k: usize,
    ) -> Result<Vec<(usize, T)>, NodeSetError> {
        if k > self.len() {
            return Err(NodeSetError::InsufficientNodes {
                k,
                available: self.len(),
            });
        }
        assert_eq!(query.len(), self.dim, "query dimension mismatch");
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(query, k, 0, self.len(), 0, &mut heap);
        let mut out: Vec<_> = heap.into_vec();
        out.sort_unstable();
        Ok(out.into_iter().map(|c| (c.index, c.d2)).collect())
    }

    fn offer(&self, query: &[T], k: usize, index: usize, heap: &mut BinaryHeap<Candidate<T>>) {
        let c = Candidate {
            d2: dist2(self.point(index), query),
            index,
        };
        if heap.len() < k {
            heap.push(c);
        } else if c < *heap.peek().expect("non-empty heap") {
            heap.pop();
            heap.push(c);
        }
    }

    fn search(
        &self,
        query: &[T],
        k: usize,
        lo: usize,
        hi: usize,
        depth: usize,
        heap: &mut BinaryHeap<Candidate<T>>,
    ) {
        if hi - lo <= LEAF_SIZE {
            for &i in &self.order[lo..hi] {
                self.offer(query, k, i, heap);
            }
            return;
        }
        let axis = depth % self.dim;
        let mid = lo + (hi - lo) / 2;
        let split = self.order[mid];
        self.offer(query, k, split, heap);
        let diff = query[axis] - self.coords[split * self.dim + axis];
        let (near, far) = if diff < T::zero() {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(query, k, near.0, near.1, depth + 1, heap);
        // `<=` keeps equidistant points reachable for the index tie-break.
        if heap.len() < k || diff * diff <= heap.peek().expect("non-empty heap").d2 {
            self.search(query, k, far.0, far.1, depth + 1, heap);
        }
    }
}
