use std::sync::Arc;

use proptest::prelude::*;

use super::gradcheck::{max_gradient_error, random_tensor, rel_err};
use super::*;
use crate::rng::Stream;

const H: f64 = 1e-5;
const FLOOR: f64 = 1e-3;

/// `Σ w ⊙ x` with fixed pseudo-random weights, so every gradient entry is nontrivial.
fn weighted_sum(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let shape = tape.value(x).shape.clone();
    let w = random_tensor(&shape, &mut Stream::new(seed));
    let w = tape.constant(w);
    let p = tape.mul(x, w).unwrap();
    tape.sum(p)
}

fn mat(rows: usize, cols: usize, data: &[f64]) -> Tensor {
    Tensor::matrix(rows, cols, data.to_vec()).unwrap()
}

#[test]
fn matmul_identity_and_dot() {
    let mut tape = Tape::new();
    let i2 = tape.constant(Tensor::eye(2));
    let m = tape.constant(mat(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    let p = tape.matmul(i2, m).unwrap();
    assert_eq!(tape.data(p), &[1.0, 2.0, 3.0, 4.0]);

    let a = tape.constant(mat(1, 2, &[1.0, 2.0]));
    let b = tape.constant(mat(2, 1, &[3.0, 4.0]));
    let p = tape.matmul(a, b).unwrap();
    assert_eq!(tape.data(p), &[11.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    let err = tape.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]"), "{msg}");
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = Stream::new(11);
    let a = random_tensor(&[3, 3], &mut rng);
    let b = random_tensor(&[3, 3], &mut rng);
    let err = max_gradient_error(&[a, b], H, FLOOR, |t, v| {
        let p = t.matmul(v[0], v[1]).unwrap();
        t.sum(p)
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(mat(2, 3, &[0.0, 0.0, 0.0, 1000.0, 0.0, -5.0]));
    let y = tape.softmax_rows(x);
    let d = tape.data(y);
    for v in &d[..3] {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    assert_eq!(d[3], 1.0);
    assert!(d[4] >= 0.0 && d[4] < 1e-300);
    assert!(tape.value(y).is_finite());
}

#[test]
fn softmax_gradient_matches_finite_differences() {
    let x = random_tensor(&[2, 4], &mut Stream::new(5));
    let err = max_gradient_error(&[x], H, FLOOR, |t, v| {
        let y = t.softmax_rows(v[0]);
        weighted_sum(t, y, 99)
    });
    assert!(err < 1e-6, "{err}");
}

fn silu_oracle(x: f64) -> (f64, f64) {
    let s = 1.0 / (1.0 + (-x).exp());
    (x * s, s * (1.0 + x * (1.0 - s)))
}

#[test]
fn silu_examples() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::new(vec![3], vec![0.0, 20.0, -1.0]).unwrap());
    let y = tape.silu(x);
    assert_eq!(tape.data(y)[0], 0.0);
    assert!((tape.data(y)[1] - 20.0).abs() < 1e-7);
    let (v, g) = silu_oracle(-1.0);
    assert!((tape.data(y)[2] - v).abs() < 1e-15);
    let s = tape.sum(y);
    tape.backward(s).unwrap();
    assert!((tape.grad(x).unwrap()[2] - g).abs() < 1e-15);
}

#[test]
fn dropout_modes() {
    let mut rng = Stream::new(1);
    let mut tape = Tape::new();
    let x = tape.constant(random_tensor(&[4, 5], &mut rng));
    let y = tape.dropout(x, 0.2, false, &mut rng).unwrap();
    assert_eq!(tape.data(y), tape.data(x));
    let y = tape.dropout(x, 0.0, true, &mut rng).unwrap();
    assert_eq!(tape.data(y), tape.data(x));
    assert!(tape.dropout(x, 1.0, true, &mut rng).is_err());
    assert!(tape.dropout(x, -0.1, true, &mut rng).is_err());
}

#[test]
fn dropout_zero_fraction_concentrates() {
    let mut rng = Stream::new(2024);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::filled(&[100_000], 1.0));
    let y = tape.dropout(x, 0.2, true, &mut rng).unwrap();
    let zeros = tape.data(y).iter().filter(|&&v| v == 0.0).count();
    let frac = zeros as f64 / 100_000.0;
    assert!((frac - 0.2).abs() < 0.01, "{frac}");
    for &v in tape.data(y) {
        assert!(v == 0.0 || (v - 1.25).abs() < 1e-15);
    }
}

#[test]
fn cross_entropy_examples() {
    let mut tape = Tape::new();
    let l = tape.constant(mat(1, 2, &[0.3, 0.3]));
    let ce = tape.cross_entropy(l, &[1]).unwrap();
    assert!((tape.value(ce).item() - 2f64.ln()).abs() < 1e-15);

    let l = tape.constant(mat(1, 2, &[10.0, -10.0]));
    let ce = tape.cross_entropy(l, &[0]).unwrap();
    let oracle = (-20f64).exp().ln_1p();
    assert!(rel_err(tape.value(ce).item(), oracle, 0.0) < 1e-12);
    assert!((tape.value(ce).item() - 2.061e-9).abs() < 1e-12);

    assert!(matches!(tape.cross_entropy(l, &[2]), Err(crate::Error::Index { .. })));
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let x = random_tensor(&[3, 4], &mut Stream::new(8));
    let err = max_gradient_error(&[x], H, FLOOR, |t, v| t.cross_entropy(v[0], &[0, 3, 1]).unwrap());
    assert!(err < 1e-6, "{err}");
}

#[test]
fn backward_simple_cases() {
    let mut tape = Tape::new();
    let x = tape.param(mat(2, 2, &[1.0, -2.0, 3.0, 0.5]));
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0; 4]);

    let mut tape = Tape::new();
    let x = tape.param(mat(2, 2, &[1.0, -2.0, 3.0, 0.5]));
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[2.0, -4.0, 6.0, 1.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::zeros(&[2, 2]));
    assert!(matches!(tape.backward(x), Err(crate::Error::Contract(_))));
}

#[test]
fn backward_twice_accumulates_double() {
    let mut rng = Stream::new(4);
    let mut tape = Tape::new();
    let a = tape.param(random_tensor(&[3, 2], &mut rng));
    let b = tape.param(random_tensor(&[2, 3], &mut rng));
    let p = tape.matmul(a, b).unwrap();
    let y = tape.silu(p);
    let s = weighted_sum(&mut tape, y, 3);
    tape.backward(s).unwrap();
    let once = tape.grad(a).unwrap().to_vec();
    tape.backward(s).unwrap();
    for (g2, g1) in tape.grad(a).unwrap().iter().zip(&once) {
        assert_eq!(*g2, 2.0 * g1);
    }
    tape.zero_grad();
    assert!(tape.grad(a).unwrap().iter().all(|&g| g == 0.0));
}

#[test]
fn fan_out_accumulates() {
    // y = x + x·x, dy/dx = 1 + 2x
    let mut tape = Tape::new();
    let x = tape.param(Tensor::new(vec![2], vec![3.0, -1.0]).unwrap());
    let sq = tape.mul(x, x).unwrap();
    let y = tape.add(x, sq).unwrap();
    let s = tape.sum(y);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[7.0, -1.0]);
}

fn ring_graph(n: usize) -> (Arc<CsrMatrix>, Arc<NeighborLists>) {
    let mut rows = vec![Vec::new(); n];
    let mut lists = vec![Vec::new(); n];
    for v in 0..n {
        let u = (v + 1) % n;
        let w = 0.3 + 0.1 * v as f64;
        rows[v].push((u, w));
        rows[u].push((v, w));
        lists[v].push((u, w.ln()));
        lists[u].push((v, w.ln()));
    }
    for (v, l) in lists.iter_mut().enumerate() {
        l.push((v, 0.0));
        rows[v].push((v, 1.0));
    }
    (
        Arc::new(CsrMatrix::from_rows(n, rows)),
        Arc::new(NeighborLists::from_lists(lists)),
    )
}

#[derive(Debug, Clone, Copy)]
enum Prim {
    MatMul,
    MatMulNT,
    Add,
    AddBias,
    Mul,
    MulCol,
    Scale,
    Silu,
    Sigmoid,
    Tanh,
    Dropout,
    Softmax,
    MeanRows,
    Mean,
    Entropy,
    SliceRows,
    SliceCols,
    Concat,
    SpMM,
    Gat,
    CrossEntropy,
}

const PRIMS: [Prim; 21] = [
    Prim::MatMul,
    Prim::MatMulNT,
    Prim::Add,
    Prim::AddBias,
    Prim::Mul,
    Prim::MulCol,
    Prim::Scale,
    Prim::Silu,
    Prim::Sigmoid,
    Prim::Tanh,
    Prim::Dropout,
    Prim::Softmax,
    Prim::MeanRows,
    Prim::Mean,
    Prim::Entropy,
    Prim::SliceRows,
    Prim::SliceCols,
    Prim::Concat,
    Prim::SpMM,
    Prim::Gat,
    Prim::CrossEntropy,
];

fn check_primitive(prim: Prim, seed: u64) -> f64 {
    let mut rng = Stream::new(seed);
    let m = 4;
    let n = 3;
    let x = random_tensor(&[m, n], &mut rng);
    let y = random_tensor(&[m, n], &mut rng);
    let (adj, nbrs) = ring_graph(m);
    let inputs: Vec<Tensor> = match prim {
        Prim::MatMul => vec![x, random_tensor(&[n, 5], &mut rng)],
        Prim::MatMulNT => vec![x, random_tensor(&[5, n], &mut rng)],
        Prim::AddBias => vec![x, random_tensor(&[n], &mut rng)],
        Prim::MulCol => vec![x, random_tensor(&[m, 1], &mut rng)],
        Prim::Add | Prim::Mul | Prim::Concat => vec![x, y],
        Prim::Gat => vec![x, random_tensor(&[n, 1], &mut rng), random_tensor(&[n, 1], &mut rng)],
        _ => vec![x],
    };
    max_gradient_error(&inputs, H, FLOOR, |t, v| {
        let out = match prim {
            Prim::MatMul => t.matmul(v[0], v[1]).unwrap(),
            Prim::MatMulNT => t.matmul_nt(v[0], v[1]).unwrap(),
            Prim::Add => t.add(v[0], v[1]).unwrap(),
            Prim::AddBias => t.add_bias(v[0], v[1]).unwrap(),
            Prim::Mul => t.mul(v[0], v[1]).unwrap(),
            Prim::MulCol => t.mul_col(v[0], v[1]).unwrap(),
            Prim::Scale => t.scale(v[0], -1.7),
            Prim::Silu => t.silu(v[0]),
            Prim::Sigmoid => t.sigmoid(v[0]),
            Prim::Tanh => t.tanh(v[0]),
            Prim::Dropout => t.dropout(v[0], 0.3, true, &mut Stream::new(77)).unwrap(),
            Prim::Softmax => t.softmax_rows(v[0]),
            Prim::MeanRows => t.mean_rows(v[0]),
            Prim::Mean => return t.mean(v[0]),
            Prim::Entropy => return t.logit_entropy_mean(v[0]),
            Prim::SliceRows => t.slice_rows(v[0], 1, 3).unwrap(),
            Prim::SliceCols => t.slice_cols(v[0], 1, 3).unwrap(),
            Prim::Concat => t.concat_rows(&[v[1], v[0]]).unwrap(),
            Prim::SpMM => t.spmm(&adj, v[0]).unwrap(),
            Prim::Gat => t.graph_attention(v[0], v[1], v[2], &nbrs).unwrap(),
            Prim::CrossEntropy => return t.cross_entropy(v[0], &[2, 0, 1, 1]).unwrap(),
        };
        weighted_sum(t, out, 1234)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn every_primitive_matches_finite_differences(seed in any::<u64>()) {
        for prim in PRIMS {
            let err = check_primitive(prim, seed);
            prop_assert!(err < 1e-6, "{:?}: relative error {}", prim, err);
        }
    }

    #[test]
    fn softmax_rows_are_distributions(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..9) {
        let mut tape = Tape::new();
        let mut rng = Stream::new(seed);
        let mut x = random_tensor(&[rows, cols], &mut rng);
        x.data.iter_mut().for_each(|v| *v *= 50.0);
        let x = tape.constant(x);
        let y = tape.softmax_rows(x);
        for row in tape.data(y).chunks(cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p > 0.0));
        }
    }
}

#[test]
fn stochastic_ops_are_deterministic_per_seed() {
    let run = || {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::filled(&[50], 1.0));
        let y = tape.dropout(x, 0.5, true, &mut Stream::new(9)).unwrap();
        tape.data(y).to_vec()
    };
    assert_eq!(run(), run());
}

#[test]
fn gat_without_edges_is_identity_weighting() {
    let mut rng = Stream::new(12);
    let mut tape = Tape::new();
    let h = tape.constant(random_tensor(&[3, 2], &mut rng));
    let a = tape.constant(random_tensor(&[2, 1], &mut rng));
    let b = tape.constant(random_tensor(&[2, 1], &mut rng));
    let nbrs = Arc::new(NeighborLists::from_lists((0..3).map(|v| vec![(v, 0.0)]).collect()));
    let out = tape.graph_attention(h, a, b, &nbrs).unwrap();
    assert_eq!(tape.data(out), tape.data(h));
    assert_eq!(tape.attention_coefficients(out).unwrap(), &[1.0, 1.0, 1.0]);
}
