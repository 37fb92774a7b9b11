//! Graph convolution, graph attention, global self-attention and LSTM cells.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graphbuild::Edge;
use crate::tensor::{CsrMatrix, NeighborLists, Tape, Var};

fn check_edges(n_nodes: usize, edges: &[Edge]) -> Result<()> {
    for e in edges {
        if e.u >= n_nodes || e.v >= n_nodes {
            return Err(Error::Index {
                what: "edge endpoint",
                index: e.u.max(e.v),
                bound: n_nodes,
            });
        }
        if e.u == e.v {
            return Err(Error::Data(format!("self-edge on node {}", e.u)));
        }
    }
    Ok(())
}

/// Block-diagonal `D̃^-1/2 (A_w + I) D̃^-1/2` repeated for `blocks` snapshots.
pub fn gcn_adjacency(n_nodes: usize, edges: &[Edge], blocks: usize) -> Result<CsrMatrix> {
    check_edges(n_nodes, edges)?;
    let mut adj: Vec<Vec<(usize, f64)>> = (0..n_nodes).map(|v| vec![(v, 1.0)]).collect();
    for e in edges {
        adj[e.u].push((e.v, e.weight));
        adj[e.v].push((e.u, e.weight));
    }
    let degree: Vec<f64> = adj.iter().map(|r| r.iter().map(|&(_, w)| w).sum()).collect();
    if let Some(v) = degree.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::Numeric(format!("node {v} has non-positive degree {}", degree[v])));
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut rows = Vec::with_capacity(n_nodes * blocks);
    for b in 0..blocks {
        let off = b * n_nodes;
        for (v, list) in adj.iter().enumerate() {
            let mut row: Vec<(usize, f64)> = list
                .iter()
                .map(|&(u, w)| (off + u, w * inv_sqrt[u] * inv_sqrt[v]))
                .collect();
            row.sort_by_key(|&(u, _)| u);
            rows.push(row);
        }
    }
    Ok(CsrMatrix::from_rows(n_nodes * blocks, rows))
}

/// Neighborhoods with self-loops and `ln w` logit offsets, repeated per snapshot.
pub fn gat_neighbors(n_nodes: usize, edges: &[Edge], blocks: usize) -> Result<NeighborLists> {
    check_edges(n_nodes, edges)?;
    let mut lists: Vec<Vec<(usize, f64)>> = (0..n_nodes).map(|v| vec![(v, 0.0)]).collect();
    for e in edges {
        if !(e.weight > 0.0) {
            return Err(Error::NonpositiveWeight {
                u: e.u,
                v: e.v,
                weight: e.weight,
            });
        }
        lists[e.v].push((e.u, e.weight.ln()));
        lists[e.u].push((e.v, e.weight.ln()));
    }
    let mut all = Vec::with_capacity(n_nodes * blocks);
    for b in 0..blocks {
        let off = b * n_nodes;
        all.extend(
            lists
                .iter()
                .map(|l| l.iter().map(|&(u, lw)| (off + u, lw)).collect::<Vec<_>>()),
        );
    }
    Ok(NeighborLists::from_lists(all))
}

/// `Â·X·W + b`.
pub fn gcn_layer(tape: &mut Tape, adj: &Arc<CsrMatrix>, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    let agg = tape.spmm(adj, xw)?;
    tape.add_bias(agg, b)
}

/// Single-head neighborhood attention over `W·x`, plus bias.
pub fn gat_layer(
    tape: &mut Tape,
    nbrs: &Arc<NeighborLists>,
    x: Var,
    w: Var,
    b: Var,
    att_src: Var,
    att_dst: Var,
) -> Result<Var> {
    let h = tape.matmul(x, w)?;
    let agg = tape.graph_attention(h, att_src, att_dst, nbrs)?;
    tape.add_bias(agg, b)
}

/// Output and row-stochastic attention matrix of one global attention head.
pub struct AttentionOutput {
    pub output: Var,
    pub weights: Var,
}

/// `softmax(QKᵀ/√d)·V·W_O` over every row of `h`.
pub fn st_self_attention(
    tape: &mut Tape,
    h: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
) -> Result<AttentionOutput> {
    let q = tape.matmul(h, wq)?;
    let k = tape.matmul(h, wk)?;
    let v = tape.matmul(h, wv)?;
    let d = tape.value(k).cols() as f64;
    let scores = tape.matmul_nt(q, k)?;
    let scores = tape.scale(scores, 1.0 / d.sqrt());
    let weights = tape.softmax_rows(scores);
    let mixed = tape.matmul(weights, v)?;
    let output = tape.matmul(mixed, wo)?;
    Ok(AttentionOutput { output, weights })
}

/// One LSTM step on row vectors; gate columns are ordered `i, f, g, o`.
pub fn lstm_cell(
    tape: &mut Tape,
    x: Var,
    h: Var,
    c: Var,
    wx: Var,
    wh: Var,
    b: Var,
) -> Result<(Var, Var)> {
    let hidden = tape.value(c).cols();
    if tape.value(wx).cols() != 4 * hidden {
        return Err(Error::Dimension {
            op: "lstm_cell",
            left: tape.value(wx).shape.clone(),
            right: tape.value(c).shape.clone(),
        });
    }
    let gx = tape.matmul(x, wx)?;
    let gh = tape.matmul(h, wh)?;
    let gates = tape.add(gx, gh)?;
    let gates = tape.add_bias(gates, b)?;
    let gate = |tape: &mut Tape, k: usize| tape.slice_cols(gates, k * hidden, (k + 1) * hidden);
    let i = gate(tape, 0)?;
    let f = gate(tape, 1)?;
    let g = gate(tape, 2)?;
    let o = gate(tape, 3)?;
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let g = tape.tanh(g);
    let o = tape.sigmoid(o);
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c_next = tape.add(keep, write)?;
    let squashed = tape.tanh(c_next);
    let h_next = tape.mul(o, squashed)?;
    Ok((h_next, c_next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use crate::tensor::gradcheck::{max_gradient_error, random_tensor};
    use crate::tensor::Tensor;

    fn edge(u: usize, v: usize, weight: f64) -> Edge {
        Edge { u, v, weight }
    }

    #[test]
    fn gcn_without_edges_is_identity() {
        let mut rng = Stream::new(1);
        let x = random_tensor(&[5, 3], &mut rng);
        let adj = Arc::new(gcn_adjacency(5, &[], 1).unwrap());
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let w = tape.constant(Tensor::eye(3));
        let b = tape.constant(Tensor::zeros(&[3]));
        let out = gcn_layer(&mut tape, &adj, xv, w, b).unwrap();
        assert_eq!(tape.value(out).data, x.data);
    }

    #[test]
    fn gcn_two_nodes_average() {
        let x = Tensor::from_rows(&[vec![1.0, 4.0], vec![3.0, -2.0]]).unwrap();
        let adj = Arc::new(gcn_adjacency(2, &[edge(0, 1, 1.0)], 1).unwrap());
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let w = tape.constant(Tensor::eye(2));
        let b = tape.constant(Tensor::zeros(&[2]));
        let out = gcn_layer(&mut tape, &adj, xv, w, b).unwrap();
        let row0 = tape.value(out).row(0).to_vec();
        assert!((row0[0] - 2.0).abs() < 1e-12);
        assert!((row0[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gcn_permutation_equivariant() {
        let mut rng = Stream::new(2);
        let x = random_tensor(&[4, 3], &mut rng);
        let w = random_tensor(&[3, 2], &mut rng);
        let b = random_tensor(&[2], &mut rng);
        let edges = vec![edge(0, 1, 0.5), edge(1, 3, 2.0), edge(0, 2, 1.5)];
        let perm = [2, 0, 3, 1];
        let px = Tensor::from_rows(
            &(0..4)
                .map(|new| {
                    let old = perm.iter().position(|&p| p == new).unwrap();
                    x.row(old).to_vec()
                })
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let pedges: Vec<Edge> = edges.iter().map(|e| edge(perm[e.u], perm[e.v], e.weight)).collect();
        let run = |x: &Tensor, edges: &[Edge]| {
            let adj = Arc::new(gcn_adjacency(4, edges, 1).unwrap());
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let wv = tape.constant(w.clone());
            let bv = tape.constant(b.clone());
            let out = gcn_layer(&mut tape, &adj, xv, wv, bv).unwrap();
            tape.value(out).clone()
        };
        let a = run(&x, &edges);
        let p = run(&px, &pedges);
        for old in 0..4 {
            for c in 0..2 {
                assert!((a.get(old, c) - p.get(perm[old], c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gat_without_edges_projects() {
        let mut rng = Stream::new(3);
        let x = random_tensor(&[3, 2], &mut rng);
        let w = random_tensor(&[2, 4], &mut rng);
        let nbrs = Arc::new(gat_neighbors(3, &[], 1).unwrap());
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.constant(w.clone());
        let b = tape.constant(Tensor::zeros(&[4]));
        let a1 = tape.constant(random_tensor(&[4, 1], &mut rng));
        let a2 = tape.constant(random_tensor(&[4, 1], &mut rng));
        let out = gat_layer(&mut tape, &nbrs, xv, wv, b, a1, a2).unwrap();
        let mut t2 = Tape::new();
        let xv = t2.constant(x);
        let wv = t2.constant(w);
        let expect = t2.matmul(xv, wv).unwrap();
        assert_eq!(tape.value(out).data, t2.value(expect).data);
    }

    #[test]
    fn gat_identical_neighbors_uniform() {
        let x = Tensor::filled(&[4, 2], 0.7);
        let edges = vec![edge(0, 1, 1.0), edge(0, 2, 1.0), edge(0, 3, 1.0)];
        let nbrs = Arc::new(gat_neighbors(4, &edges, 1).unwrap());
        let mut rng = Stream::new(4);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let w = tape.constant(random_tensor(&[2, 3], &mut rng));
        let a1 = tape.constant(random_tensor(&[3, 1], &mut rng));
        let a2 = tape.constant(random_tensor(&[3, 1], &mut rng));
        let h = tape.matmul(xv, w).unwrap();
        let out = tape.graph_attention(h, a1, a2, &nbrs).unwrap();
        let alpha = tape.attention_coefficients(out).unwrap();
        let r = nbrs.range(0);
        for k in r.clone() {
            assert!((alpha[k] - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn gat_rejects_nonpositive_weight() {
        assert!(matches!(
            gat_neighbors(3, &[edge(0, 1, -0.5)], 1),
            Err(Error::NonpositiveWeight { .. })
        ));
    }

    #[test]
    fn gat_gradients_match_differences() {
        let mut rng = Stream::new(5);
        let edges = vec![edge(0, 1, 0.8), edge(1, 2, 1.3), edge(2, 3, 0.4), edge(0, 3, 2.0)];
        let nbrs = Arc::new(gat_neighbors(4, &edges, 1).unwrap());
        let inputs = vec![
            random_tensor(&[4, 3], &mut rng),
            random_tensor(&[3, 2], &mut rng),
            random_tensor(&[2], &mut rng),
            random_tensor(&[2, 1], &mut rng),
            random_tensor(&[2, 1], &mut rng),
        ];
        let err = max_gradient_error(&inputs, 1e-5, 1e-3, |t, v| {
            let out = gat_layer(t, &nbrs, v[0], v[1], v[2], v[3], v[4]).unwrap();
            let sq = t.mul(out, out).unwrap();
            t.sum(sq)
        });
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn attention_zero_queries_average_values() {
        let mut rng = Stream::new(6);
        let h = random_tensor(&[5, 4], &mut rng);
        let mut tape = Tape::new();
        let hv = tape.constant(h);
        let z = tape.constant(Tensor::zeros(&[4, 4]));
        let wv = tape.constant(random_tensor(&[4, 4], &mut rng));
        let wo = tape.constant(random_tensor(&[4, 4], &mut rng));
        let att = st_self_attention(&mut tape, hv, z, z, wv, wo).unwrap();
        let v = tape.matmul(hv, wv).unwrap();
        let vo = tape.matmul(v, wo).unwrap();
        let mean = tape.mean_rows(vo);
        let out = tape.value(att.output);
        for r in 0..5 {
            for c in 0..4 {
                assert!((out.get(r, c) - tape.value(mean).data[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_rows_are_distributions_and_equivariant() {
        let mut rng = Stream::new(7);
        let h = random_tensor(&[6, 4], &mut rng);
        let ws: Vec<Tensor> = (0..4).map(|_| random_tensor(&[4, 4], &mut rng)).collect();
        let perm = [3, 5, 0, 1, 4, 2];
        let ph = Tensor::from_rows(&perm.iter().map(|&o| h.row(o).to_vec()).collect::<Vec<_>>()).unwrap();
        let run = |h: &Tensor| {
            let mut tape = Tape::new();
            let hv = tape.constant(h.clone());
            let w: Vec<Var> = ws.iter().map(|w| tape.constant(w.clone())).collect();
            let att = st_self_attention(&mut tape, hv, w[0], w[1], w[2], w[3]).unwrap();
            (tape.value(att.output).clone(), tape.value(att.weights).clone())
        };
        let (out, weights) = run(&h);
        for r in 0..6 {
            let s: f64 = weights.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let (pout, _) = run(&ph);
        for (new, &old) in perm.iter().enumerate() {
            for c in 0..4 {
                assert!((pout.get(new, c) - out.get(old, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lstm_zero_parameters_closed_form() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(1, 2, vec![0.3, -1.0]).unwrap());
        let h = tape.constant(Tensor::matrix(1, 3, vec![0.1, 0.2, 0.3]).unwrap());
        let c = tape.constant(Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]).unwrap());
        let wx = tape.constant(Tensor::zeros(&[2, 12]));
        let wh = tape.constant(Tensor::zeros(&[3, 12]));
        let b = tape.constant(Tensor::zeros(&[12]));
        let (h2, c2) = lstm_cell(&mut tape, x, h, c, wx, wh, b).unwrap();
        for (k, &c0) in [1.0, -2.0, 0.5].iter().enumerate() {
            assert!((tape.data(c2)[k] - 0.5 * c0).abs() < 1e-15);
            assert!((tape.data(h2)[k] - 0.5 * (0.5 * c0 as f64).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn lstm_gradients_match_differences() {
        let mut rng = Stream::new(8);
        let inputs = vec![
            random_tensor(&[1, 2], &mut rng),
            random_tensor(&[1, 3], &mut rng),
            random_tensor(&[1, 3], &mut rng),
            random_tensor(&[2, 12], &mut rng),
            random_tensor(&[3, 12], &mut rng),
            random_tensor(&[12], &mut rng),
        ];
        let err = max_gradient_error(&inputs, 1e-5, 1e-3, |t, v| {
            let (h, c) = lstm_cell(t, v[0], v[1], v[2], v[3], v[4], v[5]).unwrap();
            let hc = t.mul(h, c).unwrap();
            let s = t.sum(hc);
            let hs = t.sum(h);
            t.add(s, hs).unwrap()
        });
        assert!(err < 1e-5, "{err}");
    }
}
