//! STNAGNN classifier and its GNN-LSTM ablation.
//!
//! All snapshots of an instance are stacked snapshot-major into one
//! `[T·N × d]` matrix so the graph convolutions run once over a
//! block-diagonal adjacency and the global attention sees every
//! (snapshot, node) pair.

mod layers;
mod pe;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use layers::{
    gat_layer, gat_neighbors, gcn_adjacency, gcn_layer, lstm_cell, st_self_attention, AttentionOutput,
};
pub use pe::{positional_encoding, raster_pe, PeConfig};

use crate::error::{Error, Result};
use crate::graphbuild::GraphInstance;
use crate::rng::Stream;
use crate::tensor::{CsrMatrix, ModelParams, NeighborLists, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backbone {
    #[serde(rename = "gcn", alias = "GCN")]
    Gcn,
    #[serde(rename = "gat", alias = "GAT")]
    Gat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeMode {
    None,
    Raster1d,
    St2d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    Attention,
    Lstm,
}

macro_rules! text_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $name),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($name => Ok($ty::$variant),)+
                    _ => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($ty), " '{}'"), s
                    ))),
                }
            }
        }
    };
}

text_enum!(Backbone { Gcn => "gcn", Gat => "gat" });
text_enum!(PeMode { None => "none", Raster1d => "raster1d", St2d => "st2d" });
text_enum!(Aggregator { Attention => "attention", Lstm => "lstm" });

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: Backbone,
    pub pe_mode: PeMode,
    pub d_model: usize,
    pub n_conv_layers: usize,
    pub dropout: f64,
    pub n_classes: usize,
    pub aggregator: Aggregator,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: Backbone::Gcn,
            pe_mode: PeMode::St2d,
            d_model: 32,
            n_conv_layers: 2,
            dropout: 0.2,
            n_classes: 2,
            aggregator: Aggregator::Attention,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_conv_layers != 2 {
            return Err(Error::Config(format!(
                "n_conv_layers must be 2, got {}",
                self.n_conv_layers
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.d_model == 0 || self.d_model % 2 != 0 {
            return Err(Error::Config(format!(
                "d_model must be a positive even number, got {}",
                self.d_model
            )));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("n_classes must be at least 2".into()));
        }
        Ok(())
    }

    pub fn d_ff(&self) -> usize {
        2 * self.d_model
    }
}

fn glorot(rows: usize, cols: usize, rng: &mut Stream) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.uniform_range(-a, a)).collect();
    Tensor::matrix(rows, cols, data).expect("positive shape")
}

/// Parameter names and shapes for a model reading `d_in` input features.
pub fn param_shapes(cfg: &ModelConfig, d_in: usize) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_model;
    let mut out = vec![
        ("in_w".to_string(), vec![d_in, d]),
        ("in_b".to_string(), vec![d]),
    ];
    for l in 1..=2 {
        out.push((format!("conv{l}_w"), vec![d, d]));
        out.push((format!("conv{l}_b"), vec![d]));
        if cfg.backbone == Backbone::Gat {
            out.push((format!("conv{l}_att_src"), vec![d, 1]));
            out.push((format!("conv{l}_att_dst"), vec![d, 1]));
        }
    }
    match cfg.aggregator {
        Aggregator::Attention => {
            for name in ["attn_wq", "attn_wk", "attn_wv", "attn_wo"] {
                out.push((name.into(), vec![d, d]));
            }
            out.push(("ff1_w".into(), vec![d, cfg.d_ff()]));
            out.push(("ff1_b".into(), vec![cfg.d_ff()]));
            out.push(("ff2_w".into(), vec![cfg.d_ff(), d]));
            out.push(("ff2_b".into(), vec![d]));
        }
        Aggregator::Lstm => {
            out.push(("lstm_wx".into(), vec![d, 4 * d]));
            out.push(("lstm_wh".into(), vec![d, 4 * d]));
            out.push(("lstm_b".into(), vec![4 * d]));
        }
    }
    out.push(("head_w".into(), vec![d, cfg.n_classes]));
    out.push(("head_b".into(), vec![cfg.n_classes]));
    out
}

/// Glorot-uniform weights and zero biases.
pub fn init_params(cfg: &ModelConfig, d_in: usize, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    if d_in == 0 {
        return Err(Error::Config("input feature width must be positive".into()));
    }
    let mut rng = Stream::new(seed);
    let mut params = ModelParams::new();
    for (name, shape) in param_shapes(cfg, d_in) {
        let t = if shape.len() == 1 {
            Tensor::zeros(&shape)
        } else {
            glorot(shape[0], shape[1], &mut rng)
        };
        params.insert(&name, t);
    }
    Ok(params)
}

/// Checks that `params` holds exactly the tensors `cfg` needs; returns `d_in`.
pub fn check_params(cfg: &ModelConfig, params: &ModelParams) -> Result<usize> {
    cfg.validate()?;
    let d_in = params.require("in_w")?.rows();
    let expected = param_shapes(cfg, d_in);
    if expected.len() != params.len() {
        return Err(Error::Config(format!(
            "checkpoint has {} tensors, configuration needs {}",
            params.len(),
            expected.len()
        )));
    }
    for (name, shape) in expected {
        let t = params.require(&name)?;
        if t.shape != shape {
            return Err(Error::Dimension {
                op: "checkpoint",
                left: shape,
                right: t.shape.clone(),
            });
        }
    }
    Ok(d_in)
}

/// Parameter tensors placed on a tape.
pub struct ParamVars(BTreeMap<String, Var>);

impl ParamVars {
    /// `trainable` leaves accumulate gradients; otherwise they are constants.
    pub fn bind(tape: &mut Tape, params: &ModelParams, trainable: bool) -> Self {
        let vars = params
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        ParamVars(vars)
    }

    pub fn from_map(vars: BTreeMap<String, Var>) -> Self {
        ParamVars(vars)
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter '{name}'")))
    }

    /// Gradients of every bound parameter, keyed by name.
    pub fn grads(&self, tape: &Tape) -> BTreeMap<String, Vec<f64>> {
        self.0
            .iter()
            .filter_map(|(name, &v)| tape.grad(v).map(|g| (name.clone(), g.to_vec())))
            .collect()
    }
}

/// Model-ready view of one graph instance.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub n_snapshots: usize,
    pub n_nodes: usize,
    /// Snapshot-major `[T·N × d_in]`.
    pub features: Tensor,
    pub gcn: Option<Arc<CsrMatrix>>,
    pub gat: Option<Arc<NeighborLists>>,
    /// `[T·N × d_model]`, absent for `pe_mode = none` and for the LSTM aggregator.
    pub pe: Option<Tensor>,
    pub class_label: usize,
}

/// Stacked encoding rows for a `T × N` grid.
pub fn encoding_matrix(mode: PeMode, d_model: usize, n_nodes: usize, n_snapshots: usize) -> Result<Option<Tensor>> {
    let cfg = PeConfig::new(d_model, n_nodes, n_snapshots);
    let t = match mode {
        PeMode::None => return Ok(None),
        PeMode::St2d => positional_encoding(&cfg)?,
        PeMode::Raster1d => raster_pe(&cfg)?,
    };
    Ok(Some(Tensor::matrix(n_snapshots * n_nodes, d_model, t.data)?))
}

impl PreparedGraph {
    pub fn new(g: &GraphInstance, cfg: &ModelConfig) -> Result<Self> {
        g.validate()?;
        let (t, n, d_in) = (g.n_snapshots(), g.n_nodes(), g.feature_dim());
        let mut data = Vec::with_capacity(t * n * d_in);
        for s in &g.snapshots {
            data.extend_from_slice(&s.data);
        }
        let features = Tensor::matrix(t * n, d_in, data)?;
        let (gcn, gat) = match cfg.backbone {
            Backbone::Gcn => (Some(Arc::new(gcn_adjacency(n, &g.edges, t)?)), None),
            Backbone::Gat => (None, Some(Arc::new(gat_neighbors(n, &g.edges, t)?))),
        };
        let pe = match cfg.aggregator {
            Aggregator::Attention => encoding_matrix(cfg.pe_mode, cfg.d_model, n, t)?,
            Aggregator::Lstm => None,
        };
        Ok(PreparedGraph {
            n_snapshots: t,
            n_nodes: n,
            features,
            gcn,
            gat,
            pe,
            class_label: g.class_label,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_snapshots * self.n_nodes
    }
}

/// Result of one forward pass.
pub struct Forward {
    /// `[1 × K]`.
    pub logits: Var,
    /// `[T·N × T·N]` global attention, for the attention aggregator.
    pub attention: Option<Var>,
}

fn conv(tape: &mut Tape, prep: &PreparedGraph, p: &ParamVars, layer: usize, x: Var) -> Result<Var> {
    let w = p.get(&format!("conv{layer}_w"))?;
    let b = p.get(&format!("conv{layer}_b"))?;
    match (&prep.gcn, &prep.gat) {
        (Some(adj), _) => gcn_layer(tape, adj, x, w, b),
        (None, Some(nbrs)) => {
            let src = p.get(&format!("conv{layer}_att_src"))?;
            let dst = p.get(&format!("conv{layer}_att_dst"))?;
            gat_layer(tape, nbrs, x, w, b, src, dst)
        }
        (None, None) => Err(Error::Internal("prepared graph has no adjacency".into())),
    }
}

fn linear(tape: &mut Tape, p: &ParamVars, x: Var, w: &str, b: &str) -> Result<Var> {
    let w = p.get(w)?;
    let b = p.get(b)?;
    let xw = tape.matmul(x, w)?;
    tape.add_bias(xw, b)
}

/// Input projection and the two convolutions, each followed by SiLU and dropout.
fn encode(
    tape: &mut Tape,
    prep: &PreparedGraph,
    p: &ParamVars,
    x: Var,
    cfg: &ModelConfig,
    training: bool,
    rng: &mut Stream,
) -> Result<Var> {
    if tape.value(x).rows() != prep.n_rows() {
        return Err(Error::Dimension {
            op: "forward",
            left: vec![prep.n_rows()],
            right: tape.value(x).shape.clone(),
        });
    }
    let mut h = linear(tape, p, x, "in_w", "in_b")?;
    for layer in 1..=cfg.n_conv_layers {
        h = conv(tape, prep, p, layer, h)?;
        h = tape.silu(h);
        h = tape.dropout(h, cfg.dropout, training, rng)?;
    }
    Ok(h)
}

/// STNAGNN forward pass on node features `x` (`[T·N × d_in]`).
pub fn stnagnn_forward(
    tape: &mut Tape,
    prep: &PreparedGraph,
    p: &ParamVars,
    x: Var,
    cfg: &ModelConfig,
    training: bool,
    rng: &mut Stream,
) -> Result<Forward> {
    if cfg.aggregator != Aggregator::Attention {
        return Err(Error::Config("stnagnn_forward needs the attention aggregator".into()));
    }
    let mut z = encode(tape, prep, p, x, cfg, training, rng)?;
    if let Some(pe) = &prep.pe {
        if pe.cols() != cfg.d_model {
            return Err(Error::Dimension {
                op: "positional encoding",
                left: pe.shape.clone(),
                right: vec![prep.n_rows(), cfg.d_model],
            });
        }
        let pe = tape.constant(pe.clone());
        z = tape.add(z, pe)?;
    }
    let att = st_self_attention(
        tape,
        z,
        p.get("attn_wq")?,
        p.get("attn_wk")?,
        p.get("attn_wv")?,
        p.get("attn_wo")?,
    )?;
    let r = tape.add(z, att.output)?;
    let f = linear(tape, p, r, "ff1_w", "ff1_b")?;
    let f = tape.silu(f);
    let f = tape.dropout(f, cfg.dropout, training, rng)?;
    let f = linear(tape, p, f, "ff2_w", "ff2_b")?;
    let y = tape.add(r, f)?;
    let pooled = tape.mean_rows(y);
    let logits = linear(tape, p, pooled, "head_w", "head_b")?;
    Ok(Forward {
        logits,
        attention: Some(att.weights),
    })
}

/// GNN-LSTM forward: per-snapshot mean pooling, an LSTM over time, then the head.
pub fn gnn_lstm_forward(
    tape: &mut Tape,
    prep: &PreparedGraph,
    p: &ParamVars,
    x: Var,
    cfg: &ModelConfig,
    training: bool,
    rng: &mut Stream,
) -> Result<Forward> {
    if cfg.aggregator != Aggregator::Lstm {
        return Err(Error::Config("gnn_lstm_forward needs the lstm aggregator".into()));
    }
    let z = encode(tape, prep, p, x, cfg, training, rng)?;
    let d = cfg.d_model;
    let mut h = tape.constant(Tensor::zeros(&[1, d]));
    let mut c = tape.constant(Tensor::zeros(&[1, d]));
    let (wx, wh, b) = (p.get("lstm_wx")?, p.get("lstm_wh")?, p.get("lstm_b")?);
    let n = prep.n_nodes;
    for t in 0..prep.n_snapshots {
        let snap = tape.slice_rows(z, t * n, (t + 1) * n)?;
        let pooled = tape.mean_rows(snap);
        (h, c) = lstm_cell(tape, pooled, h, c, wx, wh, b)?;
    }
    let logits = linear(tape, p, h, "head_w", "head_b")?;
    Ok(Forward {
        logits,
        attention: None,
    })
}

/// Dispatches on `cfg.aggregator`.
pub fn forward(
    tape: &mut Tape,
    prep: &PreparedGraph,
    p: &ParamVars,
    x: Var,
    cfg: &ModelConfig,
    training: bool,
    rng: &mut Stream,
) -> Result<Forward> {
    match cfg.aggregator {
        Aggregator::Attention => stnagnn_forward(tape, prep, p, x, cfg, training, rng),
        Aggregator::Lstm => gnn_lstm_forward(tape, prep, p, x, cfg, training, rng),
    }
}

/// Evaluation-mode logits.
pub fn predict(params: &ModelParams, cfg: &ModelConfig, prep: &PreparedGraph) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let p = ParamVars::bind(&mut tape, params, false);
    let x = tape.constant(prep.features.clone());
    let mut rng = Stream::new(0);
    let out = forward(&mut tape, prep, &p, x, cfg, false, &mut rng)?;
    let logits = tape.data(out.logits).to_vec();
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    Ok(logits)
}

/// Evaluation-mode logits and the full attention matrix.
pub fn predict_with_attention(
    params: &ModelParams,
    cfg: &ModelConfig,
    prep: &PreparedGraph,
) -> Result<(Vec<f64>, Tensor)> {
    let mut tape = Tape::new();
    let p = ParamVars::bind(&mut tape, params, false);
    let x = tape.constant(prep.features.clone());
    let mut rng = Stream::new(0);
    let out = stnagnn_forward(&mut tape, prep, &p, x, cfg, false, &mut rng)?;
    let att = out
        .attention
        .ok_or_else(|| Error::Internal("attention matrix not recorded".into()))?;
    Ok((tape.data(out.logits).to_vec(), tape.value(att).clone()))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
