//! Experiment runner behind the `stnagnn` binary.
//!
//! Every command reads one [`ExperimentSpec`] (JSON file and/or flags), resolves
//! it, echoes it to `<output_dir>/spec.resolved.json`, and writes its artifacts
//! under `output_dir`. Flags override spec-file fields.
//!
//! Seeds: the top-level `seed` is the only source of randomness. Section seeds
//! are overwritten on resolution with `derive_seed_tag(seed, "synth" | "train" |
//! "explain" | "attnviz")`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::dataset::{load_dataset, write_dataset, Dataset, Manifest};
use crate::error::{Error, ErrorClass, Result};
use crate::explain::{
    aggregate_importance, attention_heatmap, explain_instance, recovery, temporal_variance, write_importance_csv,
    write_pgm, write_snapshot_heatmaps, ExplainConfig, ImportanceMap, Recovery,
};
use crate::graphbuild::{build_graph_instance, EdgeSource, GraphConfig, GraphInstance};
use crate::model::{check_params, init_params, Aggregator, Backbone, ModelConfig, PeMode, PreparedGraph};
use crate::rng::derive_seed_tag;
use crate::synth::{gen_pe_sim, generate_dataset, SynthConfig};
use crate::tensor::{ModelParams, Tensor};
use crate::train::{cross_validate, CvReport, Summary, TrainConfig};

/// Which instances `explain` covers and which node `attnviz` queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Targets {
    /// Restrict explanations to one class; all classes when absent.
    pub class_label: Option<usize>,
    /// Explain at most this many instances, in dataset order.
    pub max_instances: Option<usize>,
    /// Attention query node as `[snapshot, node]`.
    pub query: [usize; 2],
}

impl Default for Targets {
    fn default() -> Self {
        Targets {
            class_label: None,
            max_instances: None,
            query: [6, 42],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Dataset directory; `<output_dir>/data` when absent.
    pub data_dir: Option<PathBuf>,
    pub parallel_folds: usize,
    pub synth: SynthConfig,
    pub graph: GraphConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub explain: ExplainConfig,
    pub targets: Targets,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            seed: 0,
            output_dir: PathBuf::from("out"),
            data_dir: None,
            parallel_folds: 1,
            synth: SynthConfig::default(),
            graph: GraphConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            explain: ExplainConfig::default(),
            targets: Targets::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("experiment spec: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Fills derived fields and validates every section.
    pub fn resolve(mut self) -> Result<Self> {
        self.synth.seed = derive_seed_tag(self.seed, "synth");
        self.train.seed = derive_seed_tag(self.seed, "train");
        self.explain.seed = derive_seed_tag(self.seed, "explain");
        if self.data_dir.is_none() {
            self.data_dir = Some(self.output_dir.join("data"));
        }
        if self.parallel_folds == 0 {
            return Err(Error::Config("parallel_folds must be at least 1".into()));
        }
        self.synth.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.explain.validate()?;
        if self.graph.windows == 0 {
            return Err(Error::Config("graph.windows must be at least 1".into()));
        }
        if !(self.graph.fraction > 0.0 && self.graph.fraction <= 1.0) {
            return Err(Error::Config("graph.fraction must lie in (0, 1]".into()));
        }
        Ok(self)
    }

    pub fn data_path(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| self.output_dir.join("data"))
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("spec serializes")
    }

    pub fn write_resolved(&self) -> Result<()> {
        let dir = &self.output_dir;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("spec.resolved.json");
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(&path, e))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

#[derive(Debug, Parser)]
#[command(name = "stnagnn", version, about = "Spatio-temporal node-attention GNN experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Experiment spec JSON; defaults apply to missing fields.
    #[arg(long, global = true)]
    pub spec: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub backbone: Option<BackboneArg>,
    #[arg(long, global = true)]
    pub pe: Option<PeArg>,
    #[arg(long, global = true)]
    pub aggregator: Option<AggregatorArg>,
    #[arg(long, global = true)]
    pub windows: Option<usize>,
    #[arg(long = "edge-source", global = true)]
    pub edge_source: Option<EdgeSourceArg>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dataset directory (default `<out>/data`).
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Values above 1 run all folds concurrently.
    #[arg(long = "parallel-folds", global = true)]
    pub parallel_folds: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BackboneArg {
    Gcn,
    Gat,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PeArg {
    None,
    Raster1d,
    St2d,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AggregatorArg {
    Attention,
    Lstm,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "UPPER")]
pub enum EdgeSourceArg {
    Biol,
    Scram,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Grid {
    Table3,
    Table4,
    Lstm,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset into the data directory.
    Synth,
    /// Build graph instances and export them under `<out>/graphs`.
    Build,
    /// Cross-validate and write metrics.json plus per-fold checkpoints.
    Train,
    /// Node-mask explanations for a trained checkpoint.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Only explain instances of this class.
        #[arg(long)]
        class: Option<usize>,
        #[arg(long = "max-instances")]
        max_instances: Option<usize>,
    },
    /// Attention-row heatmaps on the positional-encoding simulation.
    Attnviz {
        #[arg(long, conflicts_with = "random_params", required_unless_present = "random_params")]
        checkpoint: Option<PathBuf>,
        #[arg(long = "random-params")]
        random_params: bool,
    },
    /// Ablation grids written as CSV tables.
    Ablate {
        #[arg(long, value_enum, default_value = "all")]
        grid: Grid,
    },
}

impl From<PeArg> for PeMode {
    fn from(p: PeArg) -> Self {
        match p {
            PeArg::None => PeMode::None,
            PeArg::Raster1d => PeMode::Raster1d,
            PeArg::St2d => PeMode::St2d,
        }
    }
}

impl Overrides {
    /// Spec file (or defaults) with flags applied on top, resolved.
    pub fn spec(&self) -> Result<ExperimentSpec> {
        let mut spec = match &self.spec {
            Some(path) => ExperimentSpec::load(path)?,
            None => ExperimentSpec::default(),
        };
        if let Some(s) = self.seed {
            spec.seed = s;
        }
        if let Some(b) = self.backbone {
            spec.model.backbone = match b {
                BackboneArg::Gcn => Backbone::Gcn,
                BackboneArg::Gat => Backbone::Gat,
            };
        }
        if let Some(p) = self.pe {
            spec.model.pe_mode = p.into();
        }
        if let Some(a) = self.aggregator {
            spec.model.aggregator = match a {
                AggregatorArg::Attention => Aggregator::Attention,
                AggregatorArg::Lstm => Aggregator::Lstm,
            };
        }
        if let Some(w) = self.windows {
            spec.graph.windows = w;
        }
        if let Some(e) = self.edge_source {
            spec.graph.edge_source = match e {
                EdgeSourceArg::Biol => EdgeSource::Biol,
                EdgeSourceArg::Scram => EdgeSource::Scram,
                EdgeSourceArg::All => EdgeSource::All,
            };
        }
        if let Some(o) = &self.out {
            spec.output_dir = o.clone();
            if self.data.is_none() && spec.data_dir.is_none() {
                spec.data_dir = Some(o.join("data"));
            }
        }
        if let Some(d) = &self.data {
            spec.data_dir = Some(d.clone());
        }
        if let Some(p) = self.parallel_folds {
            spec.parallel_folds = p;
        }
        spec.resolve()
    }
}

/// Process exit code for an error: 2 config, 3 data, 4 numeric.
pub fn exit_code(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numeric => 4,
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut spec = cli.overrides.spec()?;
    match &cli.command {
        Command::Synth => {
            let m = cmd_synth(&spec)?;
            println!("wrote {} instances to {}", m.instances.len(), spec.data_path().display());
        }
        Command::Build => {
            let n = cmd_build(&spec)?;
            println!("exported {n} graph instances to {}", spec.output_dir.join("graphs").display());
        }
        Command::Train => {
            let rep = cmd_train(&spec)?;
            for f in &rep.folds {
                println!("fold {}: accuracy {:.4} auc {:.4}", f.fold, f.accuracy, f.auc);
            }
            println!(
                "mean accuracy {:.4} ± {:.4}, auc {:.4} ± {:.4}",
                rep.mean.accuracy, rep.std.accuracy, rep.mean.auc, rep.std.auc
            );
        }
        Command::Explain {
            checkpoint,
            class,
            max_instances,
        } => {
            if class.is_some() {
                spec.targets.class_label = *class;
            }
            if max_instances.is_some() {
                spec.targets.max_instances = *max_instances;
            }
            let out = cmd_explain(&spec, checkpoint)?;
            println!("explained {} instances", out.n_instances);
            if let Some(r) = out.recovery {
                println!(
                    "planted mean {:.4}, other mean {:.4}, top-10% precision {:.4}",
                    r.planted_mean, r.other_mean, r.top_precision
                );
            }
        }
        Command::Attnviz {
            checkpoint,
            random_params: _,
        } => {
            let modes = match cli.overrides.pe {
                Some(p) => vec![p.into()],
                None => vec![PeMode::None, PeMode::Raster1d, PeMode::St2d],
            };
            for (mode, v) in cmd_attnviz(&spec, checkpoint.as_deref(), &modes)? {
                println!("{mode}: temporal variance {v:.6e}");
            }
        }
        Command::Ablate { grid } => {
            for path in cmd_ablate(&spec, *grid)? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

pub fn cmd_synth(spec: &ExperimentSpec) -> Result<Manifest> {
    spec.write_resolved()?;
    let instances = generate_dataset(&spec.synth)?;
    write_dataset(&spec.data_path(), &instances, Some(spec.synth.ground_truth()))
}

pub fn build_graphs(spec: &ExperimentSpec, data: &Dataset) -> Result<Vec<GraphInstance>> {
    data.instances
        .iter()
        .map(|inst| build_graph_instance(inst, &spec.graph))
        .collect()
}

pub fn cmd_build(spec: &ExperimentSpec) -> Result<usize> {
    spec.write_resolved()?;
    let data = load_dataset(&spec.data_path())?;
    let graphs = build_graphs(spec, &data)?;
    let root = spec.output_dir.join("graphs");
    for g in &graphs {
        g.export(&root.join(&g.instance_id))?;
    }
    Ok(graphs.len())
}

fn check_classes(model: &ModelConfig, data: &Dataset) -> Result<()> {
    let k = data.n_classes();
    if k > model.n_classes {
        return Err(Error::Config(format!(
            "dataset has {k} classes but model.n_classes is {}",
            model.n_classes
        )));
    }
    Ok(())
}

/// Cross-validation with the spec's model and training settings.
pub fn run_cv(spec: &ExperimentSpec, model: &ModelConfig, graphs: &[GraphInstance]) -> Result<CvReport> {
    cross_validate(graphs, model, &spec.train, spec.parallel_folds > 1)
}

pub fn cmd_train(spec: &ExperimentSpec) -> Result<CvReport> {
    spec.write_resolved()?;
    let data = load_dataset(&spec.data_path())?;
    check_classes(&spec.model, &data)?;
    let graphs = build_graphs(spec, &data)?;
    let mut rep = run_cv(spec, &spec.model, &graphs)?;
    rep.write_fold_outputs(&spec.output_dir)?;
    let path = spec.output_dir.join("metrics.json");
    std::fs::write(&path, rep.metrics_json(&spec.to_value())).map_err(|e| Error::io(&path, e))?;
    Ok(rep)
}

#[derive(Debug, Clone)]
pub struct ExplainOutput {
    pub n_instances: usize,
    pub aggregate: Tensor,
    /// Present when the dataset manifest records planted cells.
    pub recovery: Option<Recovery>,
}

pub fn cmd_explain(spec: &ExperimentSpec, checkpoint: &Path) -> Result<ExplainOutput> {
    spec.write_resolved()?;
    let params = ModelParams::load(checkpoint)?;
    check_params(&spec.model, &params)?;
    let data = load_dataset(&spec.data_path())?;
    let selected: Vec<_> = data
        .instances
        .iter()
        .filter(|i| spec.targets.class_label.map_or(true, |c| i.class_label == c))
        .take(spec.targets.max_instances.unwrap_or(usize::MAX))
        .collect();
    if selected.is_empty() {
        return Err(Error::Data("no instances match the explain targets".into()));
    }
    let per_dir = spec.output_dir.join("instances");
    std::fs::create_dir_all(&per_dir).map_err(|e| Error::io(&per_dir, e))?;
    let mut maps: Vec<ImportanceMap> = Vec::with_capacity(selected.len());
    for inst in selected {
        let g = build_graph_instance(inst, &spec.graph)?;
        let prep = PreparedGraph::new(&g, &spec.model)?;
        let m = explain_instance(&params, &spec.model, &prep, &g.instance_id, &spec.explain)?;
        write_importance_csv(&per_dir.join(format!("{}.csv", m.instance_id)), &m.scores)?;
        maps.push(m);
    }
    let aggregate = aggregate_importance(&maps)?;
    write_importance_csv(&spec.output_dir.join("importance.csv"), &aggregate)?;
    write_snapshot_heatmaps(&spec.output_dir, &aggregate)?;
    let rec = data
        .ground_truth
        .as_ref()
        .map(|gt| recovery(&aggregate, |t, j| gt.contains(t, j), 0.1));
    let summary = serde_json::json!({
        "checkpoint_id": maps[0].checkpoint_id,
        "instances": maps.iter().map(|m| m.instance_id.as_str()).collect::<Vec<_>>(),
        "recovery": rec,
    });
    let path = spec.output_dir.join("explain.json");
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::json(&path, e))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(ExplainOutput {
        n_instances: maps.len(),
        aggregate,
        recovery: rec,
    })
}

/// Writes `attention_<mode>.{csv,pgm}` and `attnviz.json`; returns each mode's temporal variance.
pub fn cmd_attnviz(spec: &ExperimentSpec, checkpoint: Option<&Path>, modes: &[PeMode]) -> Result<Vec<(PeMode, f64)>> {
    spec.write_resolved()?;
    let sim = gen_pe_sim(derive_seed_tag(spec.seed, "pe_sim"));
    let params = match checkpoint {
        Some(path) => ModelParams::load(path)?,
        None => init_params(&spec.model, sim.feature_dim(), derive_seed_tag(spec.seed, "attnviz"))?,
    };
    let [t, j] = spec.targets.query;
    let mut out = Vec::new();
    for &mode in modes {
        let cfg = ModelConfig {
            pe_mode: mode,
            ..spec.model.clone()
        };
        check_params(&cfg, &params)?;
        let prep = PreparedGraph::new(&sim, &cfg)?;
        let grid = attention_heatmap(&params, &cfg, &prep, (t, j))?;
        let mut csv = String::from("t,roi,weight\n");
        for i in 0..grid.rows() {
            for (r, v) in grid.row(i).iter().enumerate() {
                csv.push_str(&format!("{i},{r},{v:?}\n"));
            }
        }
        let path = spec.output_dir.join(format!("attention_{mode}.csv"));
        std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        write_pgm(
            &spec.output_dir.join(format!("attention_{mode}.pgm")),
            grid.cols(),
            grid.rows(),
            &grid.data,
        )?;
        out.push((mode, temporal_variance(&grid)));
    }
    let doc = serde_json::json!({
        "query": [t, j],
        "temporal_variance": out.iter().map(|(m, v)| (m.to_string(), serde_json::Value::from(*v))).collect::<serde_json::Map<_, _>>(),
    });
    let path = spec.output_dir.join("attnviz.json");
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::json(&path, e))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(out)
}

/// One ablation row: labels followed by mean/std accuracy and AUC.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub labels: Vec<String>,
    pub mean: Summary,
    pub std: Summary,
}

pub fn table_csv(columns: &[&str], rows: &[TableRow]) -> String {
    let mut s = columns.join(",");
    s.push_str(",acc_mean,acc_std,auc_mean,auc_std\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.4},{:.4},{:.4},{:.4}\n",
            r.labels.join(","),
            r.mean.accuracy,
            r.std.accuracy,
            r.mean.auc,
            r.std.auc
        ));
    }
    s
}

fn row(labels: Vec<String>, rep: &CvReport) -> TableRow {
    TableRow {
        labels,
        mean: rep.mean,
        std: rep.std,
    }
}

fn write_table(path: &Path, columns: &[&str], rows: &[TableRow]) -> Result<()> {
    std::fs::write(path, table_csv(columns, rows)).map_err(|e| Error::io(path, e))
}

/// Runs the requested grids on the spec's dataset and returns the CSV paths written.
///
/// * `table3`: edge source {BIOL, SCRAM, ALL} × windows {10, 12, 14}
/// * `table4`: backbone {gcn, gat} × encoding {none, raster1d, st2d}
/// * `lstm`: attention vs LSTM aggregation for the spec's backbone
pub fn cmd_ablate(spec: &ExperimentSpec, grid: Grid) -> Result<Vec<PathBuf>> {
    spec.write_resolved()?;
    let data = load_dataset(&spec.data_path())?;
    check_classes(&spec.model, &data)?;
    let mut written = Vec::new();
    if matches!(grid, Grid::Table3 | Grid::All) {
        let mut rows = Vec::new();
        for source in [EdgeSource::Biol, EdgeSource::Scram, EdgeSource::All] {
            for windows in [10, 12, 14] {
                let mut s = spec.clone();
                s.graph.edge_source = source;
                s.graph.windows = windows;
                let graphs = build_graphs(&s, &data)?;
                let rep = run_cv(&s, &s.model, &graphs)?;
                rows.push(row(vec![source.to_string(), windows.to_string()], &rep));
            }
        }
        let path = spec.output_dir.join("table3.csv");
        write_table(&path, &["edge_source", "windows"], &rows)?;
        written.push(path);
    }
    if matches!(grid, Grid::Table4 | Grid::Lstm | Grid::All) {
        let graphs = build_graphs(spec, &data)?;
        if matches!(grid, Grid::Table4 | Grid::All) {
            let mut rows = Vec::new();
            for backbone in [Backbone::Gcn, Backbone::Gat] {
                for pe_mode in [PeMode::None, PeMode::Raster1d, PeMode::St2d] {
                    let model = ModelConfig {
                        backbone,
                        pe_mode,
                        aggregator: Aggregator::Attention,
                        ..spec.model.clone()
                    };
                    let rep = run_cv(spec, &model, &graphs)?;
                    rows.push(row(vec![backbone.to_string(), pe_mode.to_string()], &rep));
                }
            }
            let path = spec.output_dir.join("table4.csv");
            write_table(&path, &["backbone", "pe_mode"], &rows)?;
            written.push(path);
        }
        if matches!(grid, Grid::Lstm | Grid::All) {
            let mut rows = Vec::new();
            for aggregator in [Aggregator::Attention, Aggregator::Lstm] {
                let model = ModelConfig {
                    aggregator,
                    ..spec.model.clone()
                };
                let rep = run_cv(spec, &model, &graphs)?;
                rows.push(row(vec![model.backbone.to_string(), aggregator.to_string()], &rep));
            }
            let path = spec.output_dir.join("lstm.csv");
            write_table(&path, &["backbone", "aggregator"], &rows)?;
            written.push(path);
        }
    }
    Ok(written)
}
