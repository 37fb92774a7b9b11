//! On-disk dataset layout.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/<instance_id>.series.csv      rows = frames, columns = ROIs, no header
//! <dir>/<instance_id>.condition.csv   one BIOL|SCRAM|NONE label per line
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphbuild::{Condition, TimeSeriesInstance};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub instance_id: String,
    pub subject_id: String,
    pub class_label: usize,
    pub series_file: String,
    pub condition_file: String,
}

/// Planted (block, ROI) cells of a synthetic dataset, for class labels > 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub rois: Vec<usize>,
    pub blocks: Vec<usize>,
}

impl GroundTruth {
    pub fn contains(&self, block: usize, roi: usize) -> bool {
        self.blocks.contains(&block) && self.rois.contains(&roi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub instances: Vec<ManifestEntry>,
    pub n_roi: usize,
    pub frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruth>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub instances: Vec<TimeSeriesInstance>,
    pub n_roi: usize,
    pub frames: usize,
    pub ground_truth: Option<GroundTruth>,
}

impl Dataset {
    pub fn n_classes(&self) -> usize {
        self.instances.iter().map(|i| i.class_label + 1).max().unwrap_or(0)
    }

    pub fn n_subjects(&self) -> usize {
        let mut ids: Vec<&str> = self.instances.iter().map(|i| i.subject_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }
}

pub fn write_matrix_csv(path: &Path, m: &Tensor) -> Result<()> {
    let cols = m.cols();
    let mut out = String::with_capacity(m.numel() * 20);
    for row in m.data.chunks(cols) {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format!("{v:?}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_matrix_csv(path: &Path) -> Result<Tensor> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), line_no + 1)))?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "{}:{}: non-finite value",
                path.display(),
                line_no + 1
            )));
        }
        rows.push(row);
    }
    Tensor::from_rows(&rows).map_err(|_| Error::Data(format!("{}: ragged rows", path.display())))
}

fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

pub fn write_dataset(
    dir: &Path,
    instances: &[TimeSeriesInstance],
    ground_truth: Option<GroundTruth>,
) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let first = instances
        .first()
        .ok_or_else(|| Error::Data("refusing to write an empty dataset".into()))?;
    let mut entries = Vec::with_capacity(instances.len());
    for inst in instances {
        let series_file = format!("{}.series.csv", inst.instance_id);
        let condition_file = format!("{}.condition.csv", inst.instance_id);
        write_matrix_csv(&dir.join(&series_file), &inst.series)?;
        let labels: String = inst.condition.iter().map(|c| format!("{c}\n")).collect();
        let path = dir.join(&condition_file);
        std::fs::write(&path, labels).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestEntry {
            instance_id: inst.instance_id.clone(),
            subject_id: inst.subject_id.clone(),
            class_label: inst.class_label,
            series_file,
            condition_file,
        });
    }
    let manifest = Manifest {
        instances: entries,
        n_roi: first.n_roi(),
        frames: first.frames(),
        ground_truth,
    };
    let path = manifest_path(dir);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = manifest_path(dir);
    if !path.exists() {
        return Err(Error::Data(format!(
            "no dataset at {} (manifest.json missing)",
            dir.display()
        )));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let mut instances = Vec::with_capacity(manifest.instances.len());
    for entry in &manifest.instances {
        let series = read_matrix_csv(&dir.join(&entry.series_file))?;
        let cpath = dir.join(&entry.condition_file);
        let text = std::fs::read_to_string(&cpath).map_err(|e| Error::io(&cpath, e))?;
        let condition = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Condition>>>()?;
        if series.cols() != manifest.n_roi || series.rows() != manifest.frames {
            return Err(Error::Data(format!(
                "{}: series is {}x{}, manifest says {}x{}",
                entry.series_file,
                series.rows(),
                series.cols(),
                manifest.frames,
                manifest.n_roi
            )));
        }
        instances.push(TimeSeriesInstance {
            series,
            condition,
            class_label: entry.class_label,
            subject_id: entry.subject_id.clone(),
            instance_id: entry.instance_id.clone(),
        });
    }
    Ok(Dataset {
        instances,
        n_roi: manifest.n_roi,
        frames: manifest.frames,
        ground_truth: manifest.ground_truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let inst = TimeSeriesInstance {
            series: Tensor::matrix(4, 2, vec![0.1, -2.0, 1e-7, 3.5, 0.0, 1.0 / 3.0, 2.0, -0.25]).unwrap(),
            condition: vec![Condition::Biol, Condition::Biol, Condition::Scram, Condition::None],
            class_label: 1,
            subject_id: "s000".into(),
            instance_id: "s000_a00".into(),
        };
        let gt = GroundTruth {
            rois: vec![0],
            blocks: vec![0, 2],
        };
        write_dataset(dir.path(), &[inst.clone()], Some(gt.clone())).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.instances, vec![inst]);
        assert_eq!(ds.ground_truth, Some(gt));
        assert_eq!(ds.n_classes(), 2);
    }

    #[test]
    fn missing_dataset_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_dataset(&dir.path().join("nope")).unwrap_err();
        assert!(err.to_string().contains("manifest.json"));
        assert_eq!(err.class(), crate::ErrorClass::Data);
    }
}
