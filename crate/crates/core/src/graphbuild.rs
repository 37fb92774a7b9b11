//! Time series to graph snapshots.
//!
//! A [`TimeSeriesInstance`] is cut into `T` windows. Each window yields a
//! Pearson correlation matrix whose rows become node features, and one edge
//! set, shared by all snapshots, is taken from the strongest partial
//! correlations over a condition-selected subset of frames.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Stimulus condition of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "BIOL")]
    Biol,
    #[serde(rename = "SCRAM")]
    Scram,
    #[serde(rename = "NONE")]
    None,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Biol => "BIOL",
            Condition::Scram => "SCRAM",
            Condition::None => "NONE",
        })
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "BIOL" => Ok(Condition::Biol),
            "SCRAM" => Ok(Condition::Scram),
            "NONE" => Ok(Condition::None),
            other => Err(Error::Data(format!("unknown condition label '{other}'"))),
        }
    }
}

/// Frames used to estimate the shared edge set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeSource {
    #[serde(rename = "BIOL")]
    Biol,
    #[serde(rename = "SCRAM")]
    Scram,
    #[serde(rename = "ALL")]
    All,
}

impl FromStr for EdgeSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "BIOL" => Ok(EdgeSource::Biol),
            "SCRAM" => Ok(EdgeSource::Scram),
            "ALL" => Ok(EdgeSource::All),
            other => Err(Error::Config(format!("unknown edge source '{other}'"))),
        }
    }
}

impl fmt::Display for EdgeSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdgeSource::Biol => "BIOL",
            EdgeSource::Scram => "SCRAM",
            EdgeSource::All => "ALL",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowMode {
    /// Windows follow contiguous condition blocks.
    Aligned,
    /// `⌊frames/T⌋` frames per window, remainder to the earliest windows.
    Equal,
}

/// How upper-triangle values are ranked before sparsification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ranking {
    #[default]
    Signed,
    Absolute,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesInstance {
    /// `[frames × n_roi]`
    pub series: Tensor,
    pub condition: Vec<Condition>,
    pub class_label: usize,
    pub subject_id: String,
    pub instance_id: String,
}

impl TimeSeriesInstance {
    pub fn frames(&self) -> usize {
        self.series.rows()
    }

    pub fn n_roi(&self) -> usize {
        self.series.cols()
    }

    pub fn validate(&self, windows: usize) -> Result<()> {
        if self.series.shape.len() != 2 {
            return Err(Error::Data(format!(
                "{}: series must be 2-D, got {:?}",
                self.instance_id, self.series.shape
            )));
        }
        if self.n_roi() < 2 {
            return Err(Error::Data(format!("{}: need at least 2 ROIs", self.instance_id)));
        }
        if self.condition.len() != self.frames() {
            return Err(Error::Data(format!(
                "{}: {} condition labels for {} frames",
                self.instance_id,
                self.condition.len(),
                self.frames()
            )));
        }
        if self.frames() < 2 * windows {
            return Err(Error::TooShort {
                frames: self.frames(),
                windows,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphInstance {
    /// `T` node-feature matrices, each `[N × d]`.
    pub snapshots: Vec<Tensor>,
    /// Shared by every snapshot; `u < v`, `weight > 0`.
    pub edges: Vec<Edge>,
    pub class_label: usize,
    pub subject_id: String,
    pub instance_id: String,
    /// Count of (window, ROI) pairs with zero variance.
    pub degenerate_features: usize,
}

impl GraphInstance {
    pub fn n_snapshots(&self) -> usize {
        self.snapshots.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.snapshots.first().map_or(0, Tensor::rows)
    }

    pub fn feature_dim(&self) -> usize {
        self.snapshots.first().map_or(0, Tensor::cols)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, d) = (self.n_nodes(), self.feature_dim());
        if self.snapshots.is_empty() || n == 0 {
            return Err(Error::Data(format!("{}: no snapshots", self.instance_id)));
        }
        if self.snapshots.iter().any(|s| s.rows() != n || s.cols() != d) {
            return Err(Error::Data(format!(
                "{}: snapshots differ in shape",
                self.instance_id
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for e in &self.edges {
            if e.u >= e.v || e.v >= n || !(e.weight > 0.0) || !seen.insert((e.u, e.v)) {
                return Err(Error::Data(format!(
                    "{}: invalid edge ({}, {}, {})",
                    self.instance_id, e.u, e.v, e.weight
                )));
            }
        }
        Ok(())
    }

    /// Writes `edges.csv` and `features_t<k>.csv` (k zero-based) into `dir`.
    pub fn export(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut edges = String::from("u,v,weight\n");
        for e in &self.edges {
            edges.push_str(&format!("{},{},{:?}\n", e.u, e.v, e.weight));
        }
        let path = dir.join("edges.csv");
        std::fs::write(&path, edges).map_err(|e| Error::io(&path, e))?;
        for (k, snap) in self.snapshots.iter().enumerate() {
            let path = dir.join(format!("features_t{k}.csv"));
            crate::dataset::write_matrix_csv(&path, snap)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub windows: usize,
    pub edge_source: EdgeSource,
    pub fraction: f64,
    pub ridge_scale: f64,
    pub ranking: Ranking,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            windows: 12,
            edge_source: EdgeSource::Biol,
            fraction: 0.05,
            ridge_scale: 1e-3,
            ranking: Ranking::Signed,
        }
    }
}

/// Contiguous runs of identical condition labels.
pub fn condition_blocks(condition: &[Condition]) -> Vec<Range<usize>> {
    let mut blocks = Vec::new();
    let mut start = 0;
    for i in 1..=condition.len() {
        if i == condition.len() || condition[i] != condition[start] {
            blocks.push(start..i);
            start = i;
        }
    }
    blocks
}

/// Equal-length partition of `frames` into `windows` ranges.
pub fn equal_windows(frames: usize, windows: usize) -> Vec<Range<usize>> {
    let base = frames / windows;
    let extra = frames % windows;
    let mut out = Vec::with_capacity(windows);
    let mut start = 0;
    for w in 0..windows {
        let len = base + usize::from(w < extra);
        out.push(start..start + len);
        start += len;
    }
    out
}

pub fn window_truncate(
    condition: &[Condition],
    windows: usize,
    mode: WindowMode,
) -> Result<Vec<Range<usize>>> {
    if windows < 2 {
        return Err(Error::Parameter(format!("need at least 2 windows, got {windows}")));
    }
    let frames = condition.len();
    if frames < 2 * windows {
        return Err(Error::TooShort { frames, windows });
    }
    match mode {
        WindowMode::Equal => Ok(equal_windows(frames, windows)),
        WindowMode::Aligned => {
            let blocks = condition_blocks(condition);
            if blocks.len() != windows {
                return Err(Error::Alignment {
                    found: blocks.len(),
                    expected: windows,
                });
            }
            Ok(blocks)
        }
    }
}

/// Per-window Pearson matrices plus the count of zero-variance (window, ROI) pairs.
#[derive(Debug, Clone)]
pub struct PearsonFeatures {
    pub matrices: Vec<Tensor>,
    pub degenerate: usize,
}

/// Pearson correlation between the columns of `series[frames]`.
///
/// A zero-variance column correlates 0 with everything else; its diagonal
/// entry stays 1. Returns the matrix and the number of such columns.
pub fn pearson_matrix(series: &Tensor, frames: Range<usize>) -> Result<(Tensor, usize)> {
    let n = series.cols();
    let len = frames.len();
    if len < 2 {
        return Err(Error::Parameter(format!(
            "window {frames:?} has fewer than 2 frames"
        )));
    }
    let mut centered = vec![0.0; n * len];
    let mut norms = vec![0.0; n];
    let mut degenerate = vec![false; n];
    for roi in 0..n {
        let col = &mut centered[roi * len..(roi + 1) * len];
        let mut scale: f64 = 0.0;
        for (dst, f) in col.iter_mut().zip(frames.clone()) {
            *dst = series.get(f, roi);
            scale = scale.max(dst.abs());
        }
        let mean = col.iter().sum::<f64>() / len as f64;
        col.iter_mut().for_each(|x| *x -= mean);
        let ss: f64 = col.iter().map(|x| x * x).sum();
        let tiny = 1e-12 * scale;
        if ss <= tiny * tiny * len as f64 {
            degenerate[roi] = true;
        }
        norms[roi] = ss.sqrt();
    }
    let mut out = vec![0.0; n * n];
    for a in 0..n {
        out[a * n + a] = 1.0;
        if degenerate[a] {
            continue;
        }
        let ca = &centered[a * len..(a + 1) * len];
        for b in (a + 1)..n {
            if degenerate[b] {
                continue;
            }
            let cb = &centered[b * len..(b + 1) * len];
            let cov: f64 = ca.iter().zip(cb).map(|(x, y)| x * y).sum();
            let r = cov / (norms[a] * norms[b]);
            out[a * n + b] = r;
            out[b * n + a] = r;
        }
    }
    let count = degenerate.iter().filter(|&&d| d).count();
    Ok((Tensor::matrix(n, n, out)?, count))
}

pub fn pearson_features(series: &Tensor, windows: &[Range<usize>]) -> Result<PearsonFeatures> {
    let mut matrices = Vec::with_capacity(windows.len());
    let mut degenerate = 0;
    for w in windows {
        let (m, d) = pearson_matrix(series, w.clone())?;
        matrices.push(m);
        degenerate += d;
    }
    Ok(PearsonFeatures {
        matrices,
        degenerate,
    })
}

/// Partial correlations from a ridge-regularized sample covariance.
///
/// `S' = S + λI` with `λ = ridge_scale · trace(S)/N`, `Ω = S'⁻¹`,
/// `ρ[a][b] = -Ω[a][b] / √(Ω[a][a] Ω[b][b])`, unit diagonal.
pub fn partial_correlation(series: &Tensor, ridge_scale: f64) -> Result<Tensor> {
    let frames = series.rows();
    let n = series.cols();
    if frames < 2 {
        return Err(Error::Parameter(format!(
            "partial correlation needs at least 2 frames, got {frames}"
        )));
    }
    if !(ridge_scale >= 0.0) {
        return Err(Error::Parameter(format!("ridge_scale {ridge_scale} is negative")));
    }
    let x = DMatrix::from_row_slice(frames, n, &series.data);
    let means = x.row_mean();
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= &means;
    }
    let mut cov = centered.transpose() * &centered / (frames as f64 - 1.0);
    let lambda = ridge_scale * cov.trace() / n as f64;
    for i in 0..n {
        cov[(i, i)] += lambda;
    }
    let eig = SymmetricEigen::new(cov);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= 1e12) {
        return Err(Error::Singular { condition });
    }
    let inv_vals = eig.eigenvalues.map(|v| 1.0 / v);
    let precision =
        &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    let mut out = vec![0.0; n * n];
    for a in 0..n {
        out[a * n + a] = 1.0;
        for b in (a + 1)..n {
            let pab = 0.5 * (precision[(a, b)] + precision[(b, a)]);
            let r = -pab / (precision[(a, a)] * precision[(b, b)]).sqrt();
            out[a * n + b] = r;
            out[b * n + a] = r;
        }
    }
    Tensor::matrix(n, n, out)
}

/// Frames whose condition equals `keep`, in temporal order.
pub fn condition_concat(inst: &TimeSeriesInstance, keep: Condition) -> Result<Tensor> {
    let n = inst.n_roi();
    let mut data = Vec::new();
    let mut kept = 0;
    for (f, &c) in inst.condition.iter().enumerate() {
        if c == keep {
            data.extend_from_slice(inst.series.row(f));
            kept += 1;
        }
    }
    if kept < 2 {
        return Err(Error::InsufficientFrames {
            label: keep.to_string(),
            found: kept,
        });
    }
    Tensor::matrix(kept, n, data)
}

/// Number of edges kept for `fraction` of the `n(n-1)/2` node pairs.
pub fn edge_budget(n: usize, fraction: f64) -> usize {
    let pairs = n * n.saturating_sub(1) / 2;
    // tolerance guards products such as 0.29·100 = 28.999999999999996
    (fraction * pairs as f64 + 1e-9).floor() as usize
}

/// Keeps the strongest `⌊fraction · N(N-1)/2⌋` upper-triangle entries.
///
/// Ties at the cutoff go to the smaller `u`, then the smaller `v`.
pub fn sparsify_top_fraction(m: &Tensor, fraction: f64, ranking: Ranking) -> Result<Vec<Edge>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Parameter(format!("fraction {fraction} outside (0, 1]")));
    }
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::Dimension {
            op: "sparsify_top_fraction",
            left: m.shape.clone(),
            right: vec![n, n],
        });
    }
    let mut entries = Vec::with_capacity(n * (n - 1) / 2);
    for u in 0..n {
        for v in (u + 1)..n {
            let (a, b) = (m.get(u, v), m.get(v, u));
            if (a - b).abs() > 1e-9 {
                return Err(Error::Parameter(format!(
                    "matrix not symmetric at ({u}, {v}): {a} vs {b}"
                )));
            }
            let key = match ranking {
                Ranking::Signed => a,
                Ranking::Absolute => a.abs(),
            };
            entries.push((key, u, v));
        }
    }
    entries.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let keep = edge_budget(n, fraction);
    let mut edges: Vec<Edge> = entries
        .into_iter()
        .take(keep)
        .map(|(weight, u, v)| Edge { u, v, weight })
        .collect();
    if let Some(bad) = edges.iter().find(|e| !(e.weight > 0.0)) {
        return Err(Error::NonpositiveWeight {
            u: bad.u,
            v: bad.v,
            weight: bad.weight,
        });
    }
    edges.sort_by(|a, b| (a.u, a.v).cmp(&(b.u, b.v)));
    Ok(edges)
}

/// Aligned windows when the condition blocks number exactly `windows`,
/// equal windows otherwise.
pub fn choose_windows(condition: &[Condition], windows: usize) -> Result<Vec<Range<usize>>> {
    let mode = if condition_blocks(condition).len() == windows {
        WindowMode::Aligned
    } else {
        WindowMode::Equal
    };
    window_truncate(condition, windows, mode)
}

pub fn build_graph_instance(inst: &TimeSeriesInstance, cfg: &GraphConfig) -> Result<GraphInstance> {
    inst.validate(cfg.windows)?;
    let windows = choose_windows(&inst.condition, cfg.windows)?;
    let features = pearson_features(&inst.series, &windows)?;
    let edge_series = match cfg.edge_source {
        EdgeSource::All => inst.series.clone(),
        EdgeSource::Biol => condition_concat(inst, Condition::Biol)?,
        EdgeSource::Scram => condition_concat(inst, Condition::Scram)?,
    };
    let pcorr = partial_correlation(&edge_series, cfg.ridge_scale)?;
    let edges = sparsify_top_fraction(&pcorr, cfg.fraction, cfg.ranking)?;
    Ok(GraphInstance {
        snapshots: features.matrices,
        edges,
        class_label: inst.class_label,
        subject_id: inst.subject_id.clone(),
        instance_id: inst.instance_id.clone(),
        degenerate_features: features.degenerate,
    })
}
