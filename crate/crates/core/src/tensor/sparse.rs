use super::kernels::add_assign;

/// Compressed sparse row matrix with fixed structure.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub rows: usize,
    pub cols: usize,
    pub offsets: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(col, value)` lists.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        offsets.push(0);
        for row in &rows {
            for &(c, v) in row {
                debug_assert!(c < cols);
                indices.push(c);
                values.push(v);
            }
            offsets.push(indices.len());
        }
        CsrMatrix {
            rows: rows.len(),
            cols,
            offsets,
            indices,
            values,
        }
    }

    /// `self · x` with `x` of shape `[cols × width]`.
    pub fn mul_dense(&self, x: &[f64], width: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * width];
        for r in 0..self.rows {
            let dst = &mut out[r * width..(r + 1) * width];
            for e in self.offsets[r]..self.offsets[r + 1] {
                let c = self.indices[e];
                let w = self.values[e];
                for (d, &s) in dst.iter_mut().zip(&x[c * width..(c + 1) * width]) {
                    *d += w * s;
                }
            }
        }
        out
    }

    /// `selfᵀ · g` with `g` of shape `[rows × width]`.
    pub fn mul_dense_transposed(&self, g: &[f64], width: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.cols * width];
        for r in 0..self.rows {
            let src = &g[r * width..(r + 1) * width];
            for e in self.offsets[r]..self.offsets[r + 1] {
                let c = self.indices[e];
                let w = self.values[e];
                for (d, &s) in out[c * width..(c + 1) * width].iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * self.cols];
        for r in 0..self.rows {
            for e in self.offsets[r]..self.offsets[r + 1] {
                out[r * self.cols + self.indices[e]] += self.values[e];
            }
        }
        out
    }
}

/// Incoming neighborhoods for attention-style aggregation.
///
/// For each target node, `sources` lists the nodes it attends to (itself
/// included) and `log_weights` the additive logit offset of each entry.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborLists {
    pub nodes: usize,
    pub offsets: Vec<usize>,
    pub sources: Vec<usize>,
    pub log_weights: Vec<f64>,
}

impl NeighborLists {
    pub fn from_lists(lists: Vec<Vec<(usize, f64)>>) -> Self {
        let mut offsets = vec![0];
        let mut sources = Vec::new();
        let mut log_weights = Vec::new();
        for list in &lists {
            for &(u, lw) in list {
                sources.push(u);
                log_weights.push(lw);
            }
            offsets.push(sources.len());
        }
        NeighborLists {
            nodes: lists.len(),
            offsets,
            sources,
            log_weights,
        }
    }

    pub fn range(&self, v: usize) -> std::ops::Range<usize> {
        self.offsets[v]..self.offsets[v + 1]
    }
}

pub(crate) fn scaled_add(dst: &mut [f64], src: &[f64], scale: f64) {
    if scale == 1.0 {
        add_assign(dst, src);
    } else {
        for (d, s) in dst.iter_mut().zip(src) {
            *d += scale * s;
        }
    }
}
