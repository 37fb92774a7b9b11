//! Sinusoidal position encodings over (node, snapshot) grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeConfig {
    pub c1: f64,
    pub c2: f64,
    pub d_model: usize,
    pub n_nodes: usize,
    pub n_snapshots: usize,
}

impl PeConfig {
    pub fn new(d_model: usize, n_nodes: usize, n_snapshots: usize) -> Self {
        PeConfig {
            c1: 10000.0,
            c2: 10000.0,
            d_model,
            n_nodes,
            n_snapshots,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_model % 2 != 0 {
            return Err(Error::Config(format!(
                "d_model must be a positive even number, got {}",
                self.d_model
            )));
        }
        if !(self.c1 > 0.0) {
            return Err(Error::Config(format!("C1 must be positive, got {}", self.c1)));
        }
        if self.n_nodes == 0 || self.n_snapshots == 0 {
            return Err(Error::Config("encoding grid must be non-empty".into()));
        }
        Ok(())
    }

    /// `C1^(2f/d)` for each channel pair `f`.
    fn divisors(&self) -> Vec<f64> {
        let d = self.d_model as f64;
        (0..self.d_model / 2)
            .map(|f| self.c1.powf(2.0 * f as f64 / d))
            .collect()
    }
}

/// Multiplicative 2-D encoding, shape `[T × N × d]`.
///
/// Channel `2f` of node `j` in snapshot `i` is `sin(j/C1^E)·sin((C2+i)/C1^E)`
/// and channel `2f+1` is `cos(j/C1^E)·cos((C2+i)/C1^E)` with `E = 2f/d`.
pub fn positional_encoding(pe: &PeConfig) -> Result<Tensor> {
    pe.validate()?;
    let (t, n, d) = (pe.n_snapshots, pe.n_nodes, pe.d_model);
    let div = pe.divisors();
    let mut data = vec![0.0; t * n * d];
    for i in 0..t {
        for j in 0..n {
            let row = &mut data[(i * n + j) * d..(i * n + j + 1) * d];
            for (f, &dv) in div.iter().enumerate() {
                let (sj, cj) = (j as f64 / dv).sin_cos();
                let (si, ci) = ((pe.c2 + i as f64) / dv).sin_cos();
                row[2 * f] = sj * si;
                row[2 * f + 1] = cj * ci;
            }
        }
    }
    Tensor::new(vec![t, n, d], data)
}

/// Standard 1-D encoding of the raster index `p = i·N + j`, shape `[T × N × d]`.
pub fn raster_pe(pe: &PeConfig) -> Result<Tensor> {
    pe.validate()?;
    let (t, n, d) = (pe.n_snapshots, pe.n_nodes, pe.d_model);
    let div = pe.divisors();
    let mut data = vec![0.0; t * n * d];
    for p in 0..t * n {
        let row = &mut data[p * d..(p + 1) * d];
        for (f, &dv) in div.iter().enumerate() {
            let (s, c) = (p as f64 / dv).sin_cos();
            row[2 * f] = s;
            row[2 * f + 1] = c;
        }
    }
    Tensor::new(vec![t, n, d], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `x mod 2π` with a two-word 2π, then a Taylor series.
    fn reduce(x: f64) -> f64 {
        const HI: f64 = 6.283185307179586;
        const LO: f64 = 2.4492935982947064e-16;
        let k = (x / HI).round();
        (-k).mul_add(HI, x) - k * LO
    }

    fn taylor(r: f64, start: u32) -> f64 {
        let mut term = if start == 0 { 1.0 } else { r };
        let mut sum = term;
        let mut n = start;
        for _ in 0..60 {
            term *= -r * r / (((n + 1) * (n + 2)) as f64);
            sum += term;
            n += 2;
        }
        sum
    }

    fn oracle_sin(x: f64) -> f64 {
        taylor(reduce(x), 1)
    }

    fn oracle_cos(x: f64) -> f64 {
        taylor(reduce(x), 0)
    }

    fn oracle_div(c1: f64, f: usize, d: usize) -> f64 {
        (2.0 * f as f64 / d as f64 * c1.ln()).exp()
    }

    #[test]
    fn zero_node_has_zero_even_channels() {
        let pe = positional_encoding(&PeConfig::new(32, 84, 12)).unwrap();
        for i in 0..12 {
            for f in 0..16 {
                assert_eq!(pe.data[(i * 84) * 32 + 2 * f], 0.0);
            }
        }
        assert!(pe.data.iter().all(|x| x.abs() <= 1.0));
    }

    #[test]
    fn spot_values_match_series_oracle() {
        let cfg = PeConfig::new(32, 84, 12);
        let pe = positional_encoding(&cfg).unwrap();
        assert!((oracle_cos(10000.0) - (-0.952155)).abs() < 1e-6);
        assert!((pe.data[1] - oracle_cos(10000.0)).abs() < 1e-12);
        for &(i, j, ch) in &[(0, 0, 1), (3, 17, 4), (11, 83, 31), (7, 40, 0), (5, 1, 13)] {
            let f = ch / 2;
            let dv = oracle_div(cfg.c1, f, cfg.d_model);
            let a = j as f64 / dv;
            let b = (cfg.c2 + i as f64) / dv;
            let expect = if ch % 2 == 0 {
                oracle_sin(a) * oracle_sin(b)
            } else {
                oracle_cos(a) * oracle_cos(b)
            };
            let got = pe.data[(i * 84 + j) * 32 + ch];
            assert!((got - expect).abs() < 1e-12, "({i},{j},{ch}) {got} vs {expect}");
        }
    }

    #[test]
    fn encodings_pairwise_distinct() {
        let pe = positional_encoding(&PeConfig::new(32, 84, 12)).unwrap();
        let rows: Vec<&[f64]> = pe.data.chunks(32).collect();
        assert_eq!(rows.len(), 1008);
        let mut min_gap = f64::INFINITY;
        for a in 0..rows.len() {
            for b in a + 1..rows.len() {
                let gap = rows[a]
                    .iter()
                    .zip(rows[b])
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                min_gap = min_gap.min(gap);
            }
        }
        assert!(min_gap > 0.0);
    }

    #[test]
    fn odd_width_rejected() {
        assert!(matches!(
            positional_encoding(&PeConfig::new(31, 4, 2)),
            Err(Error::Config(_))
        ));
        assert!(raster_pe(&PeConfig::new(7, 4, 2)).is_err());
    }

    #[test]
    fn raster_origin_and_flattening() {
        let cfg = PeConfig::new(16, 10, 3);
        let pe = raster_pe(&cfg).unwrap();
        for ch in 0..16 {
            assert_eq!(pe.data[ch], if ch % 2 == 0 { 0.0 } else { 1.0 });
        }
        // (i=1, j=0) sits at flat position p = N
        let row = &pe.data[10 * 16..11 * 16];
        for f in 0..8 {
            let dv = cfg.c1.powf(2.0 * f as f64 / 16.0);
            assert_eq!(row[2 * f], (10.0 / dv).sin());
        }
    }

    #[test]
    fn raster_shift_is_rotation() {
        let cfg = PeConfig::new(32, 12, 4);
        let pe = raster_pe(&cfg).unwrap();
        let d = 32;
        let k = 5;
        for p in 0..(48 - k) {
            for f in 0..16 {
                let w = 1.0 / oracle_div(cfg.c1, f, d);
                let (s, c) = (pe.data[p * d + 2 * f], pe.data[p * d + 2 * f + 1]);
                let (sk, ck) = ((k as f64 * w).sin(), (k as f64 * w).cos());
                let s2 = s * ck + c * sk;
                let c2 = c * ck - s * sk;
                assert!((s2 - pe.data[(p + k) * d + 2 * f]).abs() < 1e-12);
                assert!((c2 - pe.data[(p + k) * d + 2 * f + 1]).abs() < 1e-12);
            }
        }
    }
}
