//! Synthetic voxel-level datasets with planted class structure.
//!
//! Every subject shares a block schedule that alternates BIOL and SCRAM
//! conditions. ROIs belong to three communities driven by a noisy latent
//! sinusoid; each ROI adds unit-variance private noise and each voxel adds
//! `N(0, noise_sigma)` on top of its ROI signal. The task kinds differ only
//! in the class-dependent drive added on top:
//!
//! * `condition_coupled`: in BIOL blocks, classes > 0 couple planted ROI pairs
//!   `(k, n_roi-1-k)` through a shared white-noise driver.
//! * `temporal_order`: ROI group A is driven through one half of the blocks
//!   and group B through the other; the class decides which half comes first.
//! * `multi_state`: class `k` drives ROI block `k` for the whole run.

use serde::{Deserialize, Serialize};

use crate::dataset::GroundTruth;
use crate::error::{Error, Result};
use crate::graphbuild::{equal_windows, Condition, GraphInstance, TimeSeriesInstance};
use crate::rng::{derive_seed, derive_seed_tag, Stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ConditionCoupled,
    TemporalOrder,
    MultiState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub n_roi: usize,
    pub frames: usize,
    pub t_blocks: usize,
    pub n_classes: usize,
    pub n_voxels_per_roi: usize,
    pub noise_sigma: f64,
    pub coupling_strength: f64,
    pub seed: u64,
    pub task_kind: TaskKind,
    pub n_augments: usize,
    pub voxel_fraction: f64,
    pub planted_pairs: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 100,
            n_roi: 30,
            frames: 144,
            t_blocks: 12,
            n_classes: 2,
            n_voxels_per_roi: 4,
            noise_sigma: 0.1,
            coupling_strength: 2.0,
            seed: 0,
            task_kind: TaskKind::ConditionCoupled,
            n_augments: 3,
            voxel_fraction: 1.0 / 3.0,
            planted_pairs: 3,
        }
    }
}

const COMMUNITIES: usize = 3;
const LATENT_NOISE: f64 = 0.5;
const LATENT_LOADING: f64 = 0.3;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_subjects", self.n_subjects),
            ("n_roi", self.n_roi),
            ("frames", self.frames),
            ("t_blocks", self.t_blocks),
            ("n_classes", self.n_classes),
            ("n_voxels_per_roi", self.n_voxels_per_roi),
            ("n_augments", self.n_augments),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("synth.{name} must be positive")));
        }
        if !(self.noise_sigma > 0.0) {
            return Err(Error::Config("synth.noise_sigma must be positive".into()));
        }
        if !(self.coupling_strength >= 0.0) {
            return Err(Error::Config("synth.coupling_strength must be non-negative".into()));
        }
        if !(self.voxel_fraction > 0.0 && self.voxel_fraction <= 1.0) {
            return Err(Error::Config("synth.voxel_fraction must lie in (0, 1]".into()));
        }
        if self.n_roi < 4 {
            return Err(Error::Config("synth.n_roi must be at least 4".into()));
        }
        if self.frames < 2 * self.t_blocks {
            return Err(Error::Config(format!(
                "synth.frames = {} cannot hold {} blocks of 2 frames",
                self.frames, self.t_blocks
            )));
        }
        match self.task_kind {
            TaskKind::ConditionCoupled => {
                if self.n_classes < 2 || 2 * self.planted_pairs > self.n_roi || self.planted_pairs == 0 {
                    return Err(Error::Config(
                        "condition_coupled needs n_classes >= 2 and 1 <= planted_pairs <= n_roi/2".into(),
                    ));
                }
            }
            TaskKind::TemporalOrder => {
                if self.n_classes != 2 || self.t_blocks < 4 {
                    return Err(Error::Config(
                        "temporal_order needs n_classes = 2 and t_blocks >= 4".into(),
                    ));
                }
            }
            TaskKind::MultiState => {
                if 2 * self.n_classes > self.n_roi {
                    return Err(Error::Config("multi_state needs n_roi >= 2 * n_classes".into()));
                }
            }
        }
        Ok(())
    }

    pub fn total_instances(&self) -> usize {
        self.n_subjects * self.n_augments
    }

    /// Balanced class assignment: subject `i` has class `i mod n_classes`.
    pub fn class_of(&self, subject_index: usize) -> usize {
        subject_index % self.n_classes
    }

    pub fn planted_pair_list(&self) -> Vec<(usize, usize)> {
        (0..self.planted_pairs).map(|k| (k, self.n_roi - 1 - k)).collect()
    }

    fn order_group_size(&self) -> usize {
        (self.n_roi / 6).max(2)
    }

    /// Early and late block halves of `temporal_order`.
    pub fn order_halves(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let h = self.t_blocks / 2;
        (0..h, h..2 * h)
    }

    fn state_block(&self, class: usize) -> std::ops::Range<usize> {
        let g = (self.n_roi / self.n_classes).max(2);
        class * g..(class * g + g).min(self.n_roi)
    }

    /// Planted (block, ROI) cells that distinguish classes > 0.
    pub fn ground_truth(&self) -> GroundTruth {
        match self.task_kind {
            TaskKind::ConditionCoupled => {
                let mut rois: Vec<usize> =
                    self.planted_pair_list().into_iter().flat_map(|(a, b)| [a, b]).collect();
                rois.sort_unstable();
                GroundTruth {
                    rois,
                    blocks: (0..self.t_blocks).step_by(2).collect(),
                }
            }
            TaskKind::TemporalOrder => {
                let (early, late) = self.order_halves();
                GroundTruth {
                    rois: (0..2 * self.order_group_size()).collect(),
                    blocks: early.chain(late).collect(),
                }
            }
            TaskKind::MultiState => GroundTruth {
                rois: (1..self.n_classes).flat_map(|c| self.state_block(c)).collect(),
                blocks: (0..self.t_blocks).collect(),
            },
        }
    }

    /// Block schedule: equal windows, even blocks BIOL, odd blocks SCRAM.
    pub fn schedule(&self) -> Vec<Condition> {
        equal_windows(self.frames, self.t_blocks)
            .iter()
            .enumerate()
            .flat_map(|(b, r)| {
                let c = if b % 2 == 0 { Condition::Biol } else { Condition::Scram };
                std::iter::repeat(c).take(r.len())
            })
            .collect()
    }
}

/// One subject's voxel-level recording.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectSeries {
    /// `[frames × (n_roi · n_voxels_per_roi)]`; voxel `k` of ROI `r` is column `r·V + k`.
    pub voxels: Tensor,
    pub condition: Vec<Condition>,
    pub n_roi: usize,
}

fn add_driver(roi: &mut [f64], n_roi: usize, rois: &[usize], frames: std::ops::Range<usize>, amp: f64, rng: &mut Stream) {
    for f in frames {
        let u = rng.normal();
        for &r in rois {
            roi[f * n_roi + r] += amp * u;
        }
    }
}

// Replaces part of each ROI's private noise with a shared driver, keeping its variance.
#[allow(clippy::too_many_arguments)]
fn mix_driver(
    roi: &mut [f64],
    latent: &[f64],
    comms: usize,
    n_roi: usize,
    rois: &[usize],
    frames: std::ops::Range<usize>,
    amp: f64,
    rng: &mut Stream,
) {
    let norm = (1.0 + amp * amp).sqrt();
    for f in frames {
        let u = rng.normal();
        for &r in rois {
            let shared = latent[f * comms + r * comms / n_roi];
            let private = roi[f * n_roi + r] - shared;
            roi[f * n_roi + r] = shared + (private + amp * u) / norm;
        }
    }
}

pub fn gen_subject(cfg: &SynthConfig, subject_index: usize, class_label: usize) -> Result<SubjectSeries> {
    if class_label >= cfg.n_classes {
        return Err(Error::Index {
            what: "class label",
            index: class_label,
            bound: cfg.n_classes,
        });
    }
    let mut rng = Stream::new(derive_seed(cfg.seed, subject_index as u64));
    let (frames, n_roi) = (cfg.frames, cfg.n_roi);
    let condition = cfg.schedule();
    let blocks = equal_windows(frames, cfg.t_blocks);

    let comms = COMMUNITIES.min(n_roi);
    let mut latent = vec![0.0; frames * comms];
    for c in 0..comms {
        let period = 8.0 + 4.0 * c as f64;
        let phase = rng.uniform_range(0.0, std::f64::consts::TAU);
        for f in 0..frames {
            latent[f * comms + c] =
                LATENT_LOADING * ((std::f64::consts::TAU * f as f64 / period + phase).sin() + LATENT_NOISE * rng.normal());
        }
    }
    let mut roi = vec![0.0; frames * n_roi];
    for f in 0..frames {
        for r in 0..n_roi {
            let c = r * comms / n_roi;
            roi[f * n_roi + r] = latent[f * comms + c] + rng.normal();
        }
    }

    // Class-dependent drive uses its own stream so the shared background is
    // identical in distribution whatever the class.
    let mut drive = Stream::new(derive_seed_tag(derive_seed(cfg.seed, subject_index as u64), "drive"));
    let amp = cfg.coupling_strength;
    match cfg.task_kind {
        TaskKind::ConditionCoupled => {
            let scale = amp * class_label as f64 / (cfg.n_classes - 1) as f64;
            for (a, b) in cfg.planted_pair_list() {
                for (bi, range) in blocks.iter().enumerate() {
                    if bi % 2 == 0 {
                        mix_driver(&mut roi, &latent, comms, n_roi, &[a, b], range.clone(), scale, &mut drive);
                    }
                }
            }
        }
        TaskKind::TemporalOrder => {
            let g = cfg.order_group_size();
            let group_a: Vec<usize> = (0..g).collect();
            let group_b: Vec<usize> = (g..2 * g).collect();
            let (early, late) = cfg.order_halves();
            let (a_blocks, b_blocks) = if class_label == 0 { (early, late) } else { (late, early) };
            for b in a_blocks {
                add_driver(&mut roi, n_roi, &group_a, blocks[b].clone(), amp, &mut drive);
            }
            for b in b_blocks {
                add_driver(&mut roi, n_roi, &group_b, blocks[b].clone(), amp, &mut drive);
            }
        }
        TaskKind::MultiState => {
            let rois: Vec<usize> = cfg.state_block(class_label).collect();
            add_driver(&mut roi, n_roi, &rois, 0..frames, amp, &mut drive);
        }
    }

    let v = cfg.n_voxels_per_roi;
    let width = n_roi * v;
    let mut voxels = vec![0.0; frames * width];
    for f in 0..frames {
        for r in 0..n_roi {
            let base = roi[f * n_roi + r];
            for k in 0..v {
                voxels[f * width + r * v + k] = base + cfg.noise_sigma * rng.normal();
            }
        }
    }
    Ok(SubjectSeries {
        voxels: Tensor::matrix(frames, width, voxels)?,
        condition,
        n_roi,
    })
}

/// ROI means over `⌈fraction · V⌉` voxels drawn with replacement, per augment.
pub fn bootstrap_roi_sample(
    voxels: &Tensor,
    n_roi: usize,
    fraction: f64,
    n_augments: usize,
    rng: &mut Stream,
) -> Result<Vec<Tensor>> {
    let width = voxels.cols();
    if n_roi == 0 || width % n_roi != 0 {
        return Err(Error::Parameter(format!(
            "{width} voxel columns do not split into {n_roi} ROIs"
        )));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Parameter(format!("voxel fraction {fraction} outside (0, 1]")));
    }
    let v = width / n_roi;
    let draws = ((fraction * v as f64) - 1e-9).ceil().max(1.0) as usize;
    let frames = voxels.rows();
    let mut out = Vec::with_capacity(n_augments);
    for _ in 0..n_augments {
        let picks: Vec<Vec<usize>> = (0..n_roi)
            .map(|_| (0..draws).map(|_| rng.below(v)).collect())
            .collect();
        let mut data = vec![0.0; frames * n_roi];
        for f in 0..frames {
            let row = voxels.row(f);
            for (r, pick) in picks.iter().enumerate() {
                let s: f64 = pick.iter().map(|&k| row[r * v + k]).sum();
                data[f * n_roi + r] = s / draws as f64;
            }
        }
        out.push(Tensor::matrix(frames, n_roi, data)?);
    }
    Ok(out)
}

/// All augmented instances of a synthetic dataset, ordered by subject.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Vec<TimeSeriesInstance>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.total_instances());
    for s in 0..cfg.n_subjects {
        let class = cfg.class_of(s);
        let subject = gen_subject(cfg, s, class)?;
        let mut rng = Stream::new(derive_seed_tag(derive_seed(cfg.seed, s as u64), "bootstrap"));
        let augments =
            bootstrap_roi_sample(&subject.voxels, cfg.n_roi, cfg.voxel_fraction, cfg.n_augments, &mut rng)?;
        for (a, series) in augments.into_iter().enumerate() {
            out.push(TimeSeriesInstance {
                series,
                condition: subject.condition.clone(),
                class_label: class,
                subject_id: format!("s{s:03}"),
                instance_id: format!("s{s:03}_a{a:02}"),
            });
        }
    }
    Ok(out)
}

pub const PE_SIM_SNAPSHOTS: usize = 12;
pub const PE_SIM_NODES: usize = 84;
pub const PE_SIM_STD: f64 = 0.1;

/// 12 snapshots × 84 nodes × 1 feature drawn from `N(0, 0.1²)`, no edges.
pub fn gen_pe_sim(seed: u64) -> GraphInstance {
    let mut rng = Stream::new(seed);
    let snapshots = (0..PE_SIM_SNAPSHOTS)
        .map(|_| {
            let data = (0..PE_SIM_NODES).map(|_| rng.normal_with(0.0, PE_SIM_STD)).collect();
            Tensor::matrix(PE_SIM_NODES, 1, data).expect("fixed shape")
        })
        .collect();
    GraphInstance {
        snapshots,
        edges: Vec::new(),
        class_label: 0,
        subject_id: "pe_sim".into(),
        instance_id: format!("pe_sim_{seed}"),
        degenerate_features: 0,
    }
}
