//! Neighbour gathers used by the graph convolutions.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

use super::knn::NeighborGraph;

fn check_cand<T: Scalar>(cand: &Tensor<T>, g: &NeighborGraph, op: &'static str) -> Result<()> {
    let [n, _, h, w] = cand.shape().0;
    if n != g.batch || (h, w) != g.cand_hw {
        return Err(shape_err(
            op,
            format!(
                "candidates {:?} do not match graph (batch {}, grid {:?})",
                cand.shape(),
                g.batch,
                g.cand_hw
            ),
        ));
    }
    Ok(())
}

/// `out[b, c, i] = max_j cand[b, c, nbr(i, j)]`, returning the winning
/// candidate per output element (first on ties).
pub fn gather_max<T: Scalar>(cand: &Tensor<T>, g: &NeighborGraph) -> Result<(Tensor<T>, Vec<u32>)> {
    check_cand(cand, g, "gather_max")?;
    let [n, c, _, _] = cand.shape().0;
    let nodes = g.num_nodes();
    let mut out = Vec::with_capacity(n * c * nodes);
    let mut arg = Vec::with_capacity(n * c * nodes);
    for b in 0..n {
        for ch in 0..c {
            let cp = cand.plane(b, ch);
            for i in 0..nodes {
                let nb = g.neighbors(b, i);
                let mut best = nb[0];
                let mut bv = cp[best as usize];
                for &j in &nb[1..] {
                    let v = cp[j as usize];
                    if v > bv {
                        bv = v;
                        best = j;
                    }
                }
                out.push(bv);
                arg.push(best);
            }
        }
    }
    let (h, w) = g.query_hw;
    Ok((Tensor::from_vec(Shape::new(n, c, h, w), out)?, arg))
}

pub fn gather_max_backward<T: Scalar>(gout: &Tensor<T>, cand: Shape, arg: &[u32]) -> Tensor<T> {
    let [n, c, _, _] = cand.0;
    let m = cand.plane();
    let nodes = gout.shape().plane();
    let mut gc = vec![T::zero(); cand.numel()];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * m;
            let obase = (b * c + ch) * nodes;
            for i in 0..nodes {
                gc[base + arg[obase + i] as usize] += gout.data()[obase + i];
            }
        }
    }
    Tensor::from_vec(cand, gc).expect("gather grad shape")
}

/// `out[b, c, i] = sum_j cand[b, c, nbr(i, j)]`.
pub fn gather_sum<T: Scalar>(cand: &Tensor<T>, g: &NeighborGraph) -> Result<Tensor<T>> {
    check_cand(cand, g, "gather_sum")?;
    let [n, c, _, _] = cand.shape().0;
    let nodes = g.num_nodes();
    let mut out = Vec::with_capacity(n * c * nodes);
    for b in 0..n {
        for ch in 0..c {
            let cp = cand.plane(b, ch);
            for i in 0..nodes {
                let mut s = T::zero();
                for &j in g.neighbors(b, i) {
                    s += cp[j as usize];
                }
                out.push(s);
            }
        }
    }
    let (h, w) = g.query_hw;
    Tensor::from_vec(Shape::new(n, c, h, w), out)
}

pub fn gather_sum_backward<T: Scalar>(
    gout: &Tensor<T>,
    cand: Shape,
    g: &NeighborGraph,
) -> Tensor<T> {
    let [n, c, _, _] = cand.0;
    let m = cand.plane();
    let nodes = g.num_nodes();
    let mut gc = vec![T::zero(); cand.numel()];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * m;
            let obase = (b * c + ch) * nodes;
            for i in 0..nodes {
                let gv = gout.data()[obase + i];
                for &j in g.neighbors(b, i) {
                    gc[base + j as usize] += gv;
                }
            }
        }
    }
    Tensor::from_vec(cand, gc).expect("gather grad shape")
}

/// Per-edge features `[x_i ; cand_j - x_i]` laid out as `(n, 2C, nodes, k)`.
pub fn edge_features<T: Scalar>(
    x: &Tensor<T>,
    cand: &Tensor<T>,
    g: &NeighborGraph,
) -> Result<Tensor<T>> {
    check_cand(cand, g, "edge_features")?;
    let [n, c, h, w] = x.shape().0;
    if cand.shape().c() != c || (h, w) != g.query_hw {
        return Err(shape_err(
            "edge_features",
            format!("queries {:?} vs candidates {:?}", x.shape(), cand.shape()),
        ));
    }
    let nodes = h * w;
    let k = g.k;
    let mut out = vec![T::zero(); n * 2 * c * nodes * k];
    for b in 0..n {
        for ch in 0..c {
            let xp = x.plane(b, ch);
            let cp = cand.plane(b, ch);
            let self_base = ((b * 2 * c) + ch) * nodes * k;
            let rel_base = ((b * 2 * c) + c + ch) * nodes * k;
            for i in 0..nodes {
                let xi = xp[i];
                for (s, &j) in g.neighbors(b, i).iter().enumerate() {
                    out[self_base + i * k + s] = xi;
                    out[rel_base + i * k + s] = cp[j as usize] - xi;
                }
            }
        }
    }
    Tensor::from_vec(Shape::new(n, 2 * c, nodes, k), out)
}

pub fn edge_features_backward<T: Scalar>(
    gout: &Tensor<T>,
    x: Shape,
    cand: Shape,
    g: &NeighborGraph,
) -> (Tensor<T>, Tensor<T>) {
    let [n, c, _, _] = x.0;
    let nodes = x.plane();
    let m = cand.plane();
    let k = g.k;
    let gd = gout.data();
    let mut gx = vec![T::zero(); x.numel()];
    let mut gc = vec![T::zero(); cand.numel()];
    for b in 0..n {
        for ch in 0..c {
            let self_base = ((b * 2 * c) + ch) * nodes * k;
            let rel_base = ((b * 2 * c) + c + ch) * nodes * k;
            let xb = (b * c + ch) * nodes;
            let cb = (b * c + ch) * m;
            for i in 0..nodes {
                let mut acc = T::zero();
                for (s, &j) in g.neighbors(b, i).iter().enumerate() {
                    let gs = gd[self_base + i * k + s];
                    let gr = gd[rel_base + i * k + s];
                    acc += gs - gr;
                    gc[cb + j as usize] += gr;
                }
                gx[xb + i] += acc;
            }
        }
    }
    (
        Tensor::from_vec(x, gx).expect("edge grad shape"),
        Tensor::from_vec(cand, gc).expect("edge grad shape"),
    )
}

/// Max over the last axis: `(n, c, h, w) -> (n, c, h, 1)`.
pub fn max_last_axis<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let [n, c, h, w] = x.shape().0;
    let mut out = Vec::with_capacity(n * c * h);
    let mut arg = Vec::with_capacity(n * c * h);
    for row in x.data().chunks_exact(w) {
        let mut best = 0;
        for (j, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = j;
            }
        }
        out.push(row[best]);
        arg.push(best as u32);
    }
    (
        Tensor::from_vec(Shape::new(n, c, h, 1), out).expect("max shape"),
        arg,
    )
}

pub fn max_last_axis_backward<T: Scalar>(gout: &Tensor<T>, input: Shape, arg: &[u32]) -> Tensor<T> {
    let w = input.w();
    let mut g = vec![T::zero(); input.numel()];
    for (r, (&gv, &a)) in gout.data().iter().zip(arg).enumerate() {
        g[r * w + a as usize] = gv;
    }
    Tensor::from_vec(input, g).expect("max grad shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_graph() -> NeighborGraph {
        // nodes 0..3 on a 1x3 grid, two neighbours each
        NeighborGraph::from_table(1, (1, 3), (1, 3), 2, vec![0, 1, 1, 0, 2, 1]).unwrap()
    }

    #[test]
    fn gather_max_and_sum_follow_table() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 3), vec![0.0, 1.0, 10.0]).unwrap();
        let g = line_graph();
        let (mx, arg) = gather_max(&x, &g).unwrap();
        assert_eq!(mx.data(), &[1.0, 1.0, 10.0]);
        assert_eq!(arg, vec![1, 1, 2]);
        assert_eq!(gather_sum(&x, &g).unwrap().data(), &[1.0, 1.0, 11.0]);
    }

    #[test]
    fn edge_features_layout() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 3), vec![0.0, 1.0, 10.0]).unwrap();
        let e = edge_features(&x, &x, &line_graph()).unwrap();
        assert_eq!(e.shape(), Shape::new(1, 2, 3, 2));
        assert_eq!(e.plane(0, 0), &[0.0, 0.0, 1.0, 1.0, 10.0, 10.0]);
        assert_eq!(e.plane(0, 1), &[0.0, 1.0, 0.0, -1.0, 0.0, -9.0]);
        let (m, _) = max_last_axis(&e);
        assert_eq!(m.shape(), Shape::new(1, 2, 3, 1));
        assert_eq!(m.plane(0, 1), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn wrong_candidate_grid_is_rejected() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 1, 2, 2));
        assert!(gather_max(&x, &line_graph()).is_err());
    }
}
