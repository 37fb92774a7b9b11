//! Learned node masks over all (snapshot, node) pairs and attention readouts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax, forward, predict, predict_with_attention, Aggregator, ModelConfig, ParamVars, PreparedGraph};
use crate::rng::Stream;
use crate::tensor::{sigmoid, Adam, AdamConfig, ModelParams, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub steps: usize,
    pub lr_mask: f64,
    pub sparsity_weight: f64,
    pub entropy_weight: f64,
    pub seed: u64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            steps: 300,
            lr_mask: 0.05,
            sparsity_weight: 0.05,
            entropy_weight: 0.1,
            seed: 0,
        }
    }
}

impl ExplainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("explain.steps must be at least 1".into()));
        }
        if !(self.lr_mask > 0.0) {
            return Err(Error::Config("explain.lr_mask must be positive".into()));
        }
        if !(self.sparsity_weight >= 0.0 && self.entropy_weight >= 0.0) {
            return Err(Error::Config("explain weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMap {
    /// `[T × N]`, each entry in `[0, 1]`.
    pub scores: Tensor,
    pub instance_id: String,
    /// Hex checksum of the explained parameters.
    pub checkpoint_id: String,
}

/// Evaluation logits with node features scaled row-wise by `σ(mask_logits)`.
pub fn masked_logits(
    params: &ModelParams,
    cfg: &ModelConfig,
    prep: &PreparedGraph,
    mask_logits: &[f64],
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let p = ParamVars::bind(&mut tape, params, false);
    let x = tape.constant(prep.features.clone());
    let m = tape.constant(Tensor::matrix(mask_logits.len(), 1, mask_logits.to_vec())?);
    let s = tape.sigmoid(m);
    let xm = tape.mul_col(x, s)?;
    let mut rng = Stream::new(0);
    let out = forward(&mut tape, prep, &p, xm, cfg, false, &mut rng)?;
    Ok(tape.data(out.logits).to_vec())
}

/// Optimizes a sigmoid node mask that keeps the model's own prediction.
///
/// Loss: cross-entropy to the unmasked predicted class, plus
/// `sparsity_weight · mean(σ(m))` and `entropy_weight · mean(H(σ(m)))`.
pub fn explain_instance(
    params: &ModelParams,
    cfg: &ModelConfig,
    prep: &PreparedGraph,
    instance_id: &str,
    ecfg: &ExplainConfig,
) -> Result<ImportanceMap> {
    ecfg.validate()?;
    let base = predict(params, cfg, prep)?;
    let target = argmax(&base);
    let rows = prep.n_rows();
    let mut identity = Tape::new();
    let p = ParamVars::bind(&mut identity, params, false);
    let x = identity.constant(prep.features.clone());
    let ones = identity.constant(Tensor::filled(&[rows, 1], 1.0));
    let xm = identity.mul_col(x, ones)?;
    let out = forward(&mut identity, prep, &p, xm, cfg, false, &mut Stream::new(0))?;
    if argmax(identity.data(out.logits)) != target {
        return Err(Error::Internal("all-ones mask changed the prediction".into()));
    }

    let mut rng = Stream::new(ecfg.seed);
    let init: Vec<f64> = (0..rows).map(|_| 0.1 * rng.normal()).collect();
    let mut mask = ModelParams::new();
    mask.insert("mask", Tensor::matrix(rows, 1, init)?);
    let mut adam = Adam::new(AdamConfig {
        lr: ecfg.lr_mask,
        ..AdamConfig::default()
    });
    for _ in 0..ecfg.steps {
        let mut tape = Tape::new();
        let p = ParamVars::bind(&mut tape, params, false);
        let x = tape.constant(prep.features.clone());
        let m = tape.param(mask.require("mask")?.clone());
        let s = tape.sigmoid(m);
        let xm = tape.mul_col(x, s)?;
        let out = forward(&mut tape, prep, &p, xm, cfg, false, &mut rng)?;
        let ce = tape.cross_entropy(out.logits, &[target])?;
        let size = tape.mean(s);
        let size = tape.scale(size, ecfg.sparsity_weight);
        let ent = tape.logit_entropy_mean(m);
        let ent = tape.scale(ent, ecfg.entropy_weight);
        let loss = tape.add(ce, size)?;
        let loss = tape.add(loss, ent)?;
        if !tape.value(loss).item().is_finite() {
            return Err(Error::Numeric("explainer loss is not finite".into()));
        }
        tape.backward(loss)?;
        let grad = tape.grad(m).expect("mask is a parameter").to_vec();
        adam.step(&mut mask, &[("mask".to_string(), grad)].into_iter().collect())?;
    }
    let scores: Vec<f64> = mask.require("mask")?.data.iter().map(|&v| sigmoid(v)).collect();
    Ok(ImportanceMap {
        scores: Tensor::matrix(prep.n_snapshots, prep.n_nodes, scores)?,
        instance_id: instance_id.to_string(),
        checkpoint_id: format!("{:016x}", params.checksum()),
    })
}

/// Elementwise mean of importance maps.
pub fn aggregate_importance(maps: &[ImportanceMap]) -> Result<Tensor> {
    let first = maps.first().ok_or_else(|| Error::Data("no importance maps to aggregate".into()))?;
    let mut acc = vec![0.0; first.scores.numel()];
    for m in maps {
        if m.scores.shape != first.scores.shape {
            return Err(Error::Dimension {
                op: "aggregate_importance",
                left: first.scores.shape.clone(),
                right: m.scores.shape.clone(),
            });
        }
        for (a, v) in acc.iter_mut().zip(&m.scores.data) {
            *a += v;
        }
    }
    let n = maps.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Tensor::new(first.scores.shape.clone(), acc)
}

/// Attention paid by query node `(t, j)` to every node, as a `[T × N]` grid.
pub fn attention_heatmap(
    params: &ModelParams,
    cfg: &ModelConfig,
    prep: &PreparedGraph,
    query: (usize, usize),
) -> Result<Tensor> {
    if cfg.aggregator != Aggregator::Attention {
        return Err(Error::Unsupported("attention heatmaps need the attention aggregator".into()));
    }
    let (t, j) = query;
    if t >= prep.n_snapshots || j >= prep.n_nodes {
        return Err(Error::Index {
            what: "query node",
            index: t * prep.n_nodes + j,
            bound: prep.n_rows(),
        });
    }
    let (_, att) = predict_with_attention(params, cfg, prep)?;
    let row = att.row(t * prep.n_nodes + j).to_vec();
    Tensor::matrix(prep.n_snapshots, prep.n_nodes, row)
}

/// Mean over nodes of the population variance across snapshots.
pub fn temporal_variance(grid: &Tensor) -> f64 {
    let (t, n) = (grid.rows(), grid.cols());
    let mut total = 0.0;
    for j in 0..n {
        let mean = (0..t).map(|i| grid.get(i, j)).sum::<f64>() / t as f64;
        total += (0..t).map(|i| (grid.get(i, j) - mean).powi(2)).sum::<f64>() / t as f64;
    }
    total / n as f64
}

pub fn write_importance_csv(path: &Path, scores: &Tensor) -> Result<()> {
    let mut s = String::from("t,roi,score\n");
    for t in 0..scores.rows() {
        for (r, v) in scores.row(t).iter().enumerate() {
            s.push_str(&format!("{t},{r},{v:?}\n"));
        }
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Plain (P2) PGM, values min-max scaled to 0..=255; a constant image is all 0.
pub fn pgm_string(width: usize, height: usize, values: &[f64]) -> Result<String> {
    if values.len() != width * height {
        return Err(Error::Dimension {
            op: "pgm",
            left: vec![height, width],
            right: vec![values.len()],
        });
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut s = format!("P2\n{width} {height}\n255\n");
    for row in values.chunks(width) {
        let line: Vec<String> = row
            .iter()
            .map(|&v| {
                let g = if span > 0.0 { ((v - lo) / span * 255.0).round() } else { 0.0 };
                (g as u8).to_string()
            })
            .collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    Ok(s)
}

pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    let s = pgm_string(width, height, values)?;
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// One snapshot's node scores laid out on a near-square grid, padded with the minimum.
pub fn node_grid(values: &[f64]) -> (usize, usize, Vec<f64>) {
    let n = values.len();
    let width = (n as f64).sqrt().ceil().max(1.0) as usize;
    let height = n.div_ceil(width);
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut out = values.to_vec();
    out.resize(width * height, if lo.is_finite() { lo } else { 0.0 });
    (width, height, out)
}

/// Writes `heatmap_t{k}.pgm` for every snapshot row of `scores`.
pub fn write_snapshot_heatmaps(dir: &Path, scores: &Tensor) -> Result<()> {
    for t in 0..scores.rows() {
        let (w, h, grid) = node_grid(scores.row(t));
        write_pgm(&dir.join(format!("heatmap_t{t}.pgm")), w, h, &grid)?;
    }
    Ok(())
}

/// Cell-level recovery of a planted `[T × N]` mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub planted_mean: f64,
    pub other_mean: f64,
    /// Share of planted cells among the top `top_fraction` scores.
    pub top_precision: f64,
}

pub fn recovery(scores: &Tensor, planted: impl Fn(usize, usize) -> bool, top_fraction: f64) -> Recovery {
    let (t, n) = (scores.rows(), scores.cols());
    let mut cells: Vec<(f64, bool)> = Vec::with_capacity(t * n);
    for i in 0..t {
        for j in 0..n {
            cells.push((scores.get(i, j), planted(i, j)));
        }
    }
    let mean = |want: bool| {
        let v: Vec<f64> = cells.iter().filter(|c| c.1 == want).map(|c| c.0).collect();
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let mut order: Vec<usize> = (0..cells.len()).collect();
    order.sort_by(|&a, &b| cells[b].0.total_cmp(&cells[a].0).then(a.cmp(&b)));
    let k = ((top_fraction * cells.len() as f64).round() as usize).max(1);
    let hits = order[..k].iter().filter(|&&i| cells[i].1).count();
    Recovery {
        planted_mean: mean(true),
        other_mean: mean(false),
        top_precision: hits as f64 / k as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphbuild::{Edge, GraphInstance};
    use crate::model::{init_params, PeMode};
    use crate::synth::gen_pe_sim;

    fn toy() -> (ModelConfig, ModelParams, PreparedGraph) {
        let cfg = ModelConfig {
            d_model: 8,
            ..ModelConfig::default()
        };
        let mut rng = Stream::new(3);
        let g = GraphInstance {
            snapshots: (0..3)
                .map(|_| Tensor::matrix(5, 4, (0..20).map(|_| rng.normal()).collect()).unwrap())
                .collect(),
            edges: vec![Edge { u: 0, v: 2, weight: 0.7 }],
            class_label: 1,
            subject_id: "s".into(),
            instance_id: "s_a00".into(),
            degenerate_features: 0,
        };
        let params = init_params(&cfg, 4, 8).unwrap();
        let prep = PreparedGraph::new(&g, &cfg).unwrap();
        (cfg, params, prep)
    }

    #[test]
    fn identity_and_empty_masks() {
        let (cfg, params, prep) = toy();
        let base = predict(&params, &cfg, &prep).unwrap();
        let ones = masked_logits(&params, &cfg, &prep, &vec![1e3; 15]).unwrap();
        assert_eq!(base, ones);
        let zeros = masked_logits(&params, &cfg, &prep, &vec![-1e3; 15]).unwrap();
        let mut blank = prep.clone();
        blank.features.data.iter_mut().for_each(|x| *x = 0.0);
        let expect = predict(&params, &cfg, &blank).unwrap();
        for (a, b) in zeros.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn explanation_bounded_and_params_untouched() {
        let (cfg, params, prep) = toy();
        let before = params.checksum();
        let ecfg = ExplainConfig {
            steps: 20,
            ..ExplainConfig::default()
        };
        let map = explain_instance(&params, &cfg, &prep, "s_a00", &ecfg).unwrap();
        assert_eq!(map.scores.shape, vec![3, 5]);
        assert!(map.scores.data.iter().all(|&s| (0.0..=1.0).contains(&s)));
        assert_eq!(params.checksum(), before);
        assert_eq!(map, explain_instance(&params, &cfg, &prep, "s_a00", &ecfg).unwrap());
    }

    #[test]
    fn sparsity_weight_shrinks_mask() {
        let (cfg, params, prep) = toy();
        let sizes: Vec<f64> = [0.0, 0.5, 5.0]
            .iter()
            .map(|&w| {
                let ecfg = ExplainConfig {
                    sparsity_weight: w,
                    ..ExplainConfig::default()
                };
                let m = explain_instance(&params, &cfg, &prep, "s", &ecfg).unwrap();
                m.scores.data.iter().sum::<f64>() / 15.0
            })
            .collect();
        assert!(sizes[0] > sizes[1] && sizes[1] > sizes[2], "{sizes:?}");
    }

    fn constant_map(v: f64) -> ImportanceMap {
        ImportanceMap {
            scores: Tensor::filled(&[2, 3], v),
            instance_id: String::new(),
            checkpoint_id: String::new(),
        }
    }

    #[test]
    fn aggregation_examples() {
        let one = constant_map(0.3);
        assert_eq!(aggregate_importance(&[one.clone()]).unwrap(), one.scores);
        let mean = aggregate_importance(&[constant_map(0.2), constant_map(0.6)]).unwrap();
        assert!(mean.data.iter().all(|v| (v - 0.4).abs() < 1e-15));
        let mut a = constant_map(0.1);
        a.scores.data[2] = 0.9;
        let b = constant_map(0.5);
        assert_eq!(
            aggregate_importance(&[a.clone(), b.clone()]).unwrap(),
            aggregate_importance(&[b, a]).unwrap()
        );
        let odd = ImportanceMap {
            scores: Tensor::zeros(&[3, 2]),
            ..constant_map(0.0)
        };
        assert!(aggregate_importance(&[constant_map(0.1), odd]).is_err());
    }

    #[test]
    fn heatmap_rows_and_uniform_case() {
        let g = gen_pe_sim(0);
        for pe_mode in [PeMode::None, PeMode::St2d] {
            let cfg = ModelConfig {
                pe_mode,
                ..ModelConfig::default()
            };
            let prep = PreparedGraph::new(&g, &cfg).unwrap();
            let mut params = init_params(&cfg, 1, 5).unwrap();
            let grid = attention_heatmap(&params, &cfg, &prep, (6, 42)).unwrap();
            assert_eq!(grid.shape, vec![12, 84]);
            assert!((grid.data.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            if pe_mode == PeMode::None {
                for name in ["attn_wq", "attn_wk"] {
                    params.get_mut(name).unwrap().data.iter_mut().for_each(|x| *x = 0.0);
                }
                let grid = attention_heatmap(&params, &cfg, &prep, (0, 0)).unwrap();
                assert!(grid.data.iter().all(|v| (v - 1.0 / 1008.0).abs() < 1e-15));
            }
        }
        let lstm = ModelConfig {
            aggregator: Aggregator::Lstm,
            ..ModelConfig::default()
        };
        let prep = PreparedGraph::new(&g, &lstm).unwrap();
        let params = init_params(&lstm, 1, 5).unwrap();
        assert!(matches!(
            attention_heatmap(&params, &lstm, &prep, (0, 0)),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn pgm_scaling() {
        let s = pgm_string(3, 1, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s, "P2\n3 1\n255\n0 128 255\n");
        let s = pgm_string(2, 1, &[4.0, 4.0]).unwrap();
        assert_eq!(s, "P2\n2 1\n255\n0 0\n");
        assert!(pgm_string(2, 2, &[1.0]).is_err());
        let (w, h, grid) = node_grid(&[0.5; 84]);
        assert_eq!((w, h, grid.len()), (10, 9, 90));
    }

    #[test]
    fn recovery_statistics() {
        let scores = Tensor::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let r = recovery(&scores, |i, j| i == j, 0.5);
        assert!((r.planted_mean - 0.85).abs() < 1e-15);
        assert!((r.other_mean - 0.15).abs() < 1e-15);
        assert_eq!(r.top_precision, 1.0);
        assert!(temporal_variance(&Tensor::filled(&[3, 4], 0.2)) < 1e-30);
        let v = temporal_variance(&Tensor::from_rows(&[vec![0.0], vec![2.0]]).unwrap());
        assert_eq!(v, 1.0);
    }
}
