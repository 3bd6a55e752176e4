//! Dense dilated k-nearest-neighbour graphs over feature maps.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::ops::spatial::avgpool2d;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Neighbour table `(batch, node, k)` of candidate-node ids.
///
/// Query nodes are the pixels of the input grid. Candidates are the pixels
/// of the same grid, or of its `reduction x reduction` mean-pooled version
/// when `reduction > 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborGraph {
    pub batch: usize,
    pub query_hw: (usize, usize),
    pub cand_hw: (usize, usize),
    pub k: usize,
    pub dilation: usize,
    pub reduction: usize,
    indices: Vec<u32>,
}

impl NeighborGraph {
    pub fn num_nodes(&self) -> usize {
        self.query_hw.0 * self.query_hw.1
    }

    pub fn num_candidates(&self) -> usize {
        self.cand_hw.0 * self.cand_hw.1
    }

    #[inline]
    pub fn neighbors(&self, batch: usize, node: usize) -> &[u32] {
        let start = (batch * self.num_nodes() + node) * self.k;
        &self.indices[start..start + self.k]
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    /// Builds a graph from an explicit table; used for tests and fixtures.
    pub fn from_table(
        batch: usize,
        query_hw: (usize, usize),
        cand_hw: (usize, usize),
        k: usize,
        indices: Vec<u32>,
    ) -> Result<Self> {
        let n = query_hw.0 * query_hw.1;
        let m = cand_hw.0 * cand_hw.1;
        if indices.len() != batch * n * k || indices.iter().any(|&i| i as usize >= m) {
            return Err(Error::InvalidArgument(format!(
                "neighbour table of {} entries for batch={batch} nodes={n} k={k} candidates={m}",
                indices.len()
            )));
        }
        Ok(NeighborGraph {
            batch,
            query_hw,
            cand_hw,
            k,
            dilation: 1,
            reduction: 1,
            indices,
        })
    }

    /// CSV rows `batch,node,slot,neighbor` with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("batch,node,slot,neighbor\n");
        for b in 0..self.batch {
            for node in 0..self.num_nodes() {
                for (slot, &nb) in self.neighbors(b, node).iter().enumerate() {
                    s.push_str(&format!("{b},{node},{slot},{nb}\n"));
                }
            }
        }
        s
    }
}

/// Normalised pixel-centre coordinates `((row + 0.5) / h, (col + 0.5) / w)`.
pub fn relative_position(h: usize, w: usize) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            out.push([(r as f64 + 0.5) / h as f64, (c as f64 + 0.5) / w as f64]);
        }
    }
    out
}

/// Node-major `(feature ++ relpos)` vectors for one batch item.
fn node_vectors<T: Scalar>(t: &Tensor<T>, b: usize) -> Vec<T> {
    let [_, c, h, w] = t.shape().0;
    let pos = relative_position(h, w);
    let d = c + 2;
    let mut v = vec![T::zero(); h * w * d];
    for ch in 0..c {
        for (i, &x) in t.plane(b, ch).iter().enumerate() {
            v[i * d + ch] = x;
        }
    }
    for (i, p) in pos.iter().enumerate() {
        v[i * d + c] = T::lit(p[0]);
        v[i * d + c + 1] = T::lit(p[1]);
    }
    v
}

#[inline]
fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

/// Sorts `(distance, candidate)` ascending with index tie-break.
#[inline]
fn by_dist_then_index<T: Scalar>(a: &(T, u32), b: &(T, u32)) -> Ordering {
    a.0.partial_cmp(&b.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
}

/// Dilated KNN: for every node, candidates are sorted by squared Euclidean
/// distance over `feature ++ relpos` and the entries at sorted positions
/// `0, d, 2d, .., (k-1)d` are kept. With `reduction == 1` position 0 is the
/// node itself.
pub fn build_knn_graph<T: Scalar>(
    features: &Tensor<T>,
    k: usize,
    dilation: usize,
    reduction: usize,
) -> Result<NeighborGraph> {
    if k == 0 || dilation == 0 || reduction == 0 {
        return Err(Error::InvalidArgument(format!(
            "k, dilation and reduction must be >= 1 (k={k}, dilation={dilation}, reduction={reduction})"
        )));
    }
    if !features.is_finite() {
        return Err(Error::InvalidArgument(
            "graph features contain NaN or Inf".into(),
        ));
    }
    let [n, _, h, w] = features.shape().0;
    let pooled;
    let cands = if reduction > 1 {
        pooled = avgpool2d(features, reduction)?;
        &pooled
    } else {
        features
    };
    let (ch, cw) = (cands.shape().h(), cands.shape().w());
    let m = ch * cw;
    if k * dilation > m {
        return Err(Error::GraphTooSmall {
            k,
            dilation,
            candidates: m,
        });
    }
    let depth = features.shape().c() + 2;
    let keep = (k - 1) * dilation + 1;
    let mut indices = Vec::with_capacity(n * h * w * k);
    let mut scratch: Vec<(T, u32)> = Vec::with_capacity(m);
    for b in 0..n {
        let q = node_vectors(features, b);
        let cv = if reduction > 1 {
            node_vectors(cands, b)
        } else {
            q.clone()
        };
        for i in 0..h * w {
            let qi = &q[i * depth..(i + 1) * depth];
            scratch.clear();
            scratch
                .extend((0..m).map(|j| (sq_dist(qi, &cv[j * depth..(j + 1) * depth]), j as u32)));
            if keep < m {
                scratch.select_nth_unstable_by(keep - 1, by_dist_then_index);
            }
            scratch[..keep].sort_unstable_by(by_dist_then_index);
            indices.extend(scratch[..keep].iter().step_by(dilation).map(|&(_, j)| j));
        }
    }
    Ok(NeighborGraph {
        batch: n,
        query_hw: (h, w),
        cand_hw: (ch, cw),
        k,
        dilation,
        reduction,
        indices,
    })
}
