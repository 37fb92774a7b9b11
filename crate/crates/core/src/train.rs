//! Mini-batch training, subject-grouped cross-validation and evaluation metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphbuild::GraphInstance;
use crate::model::{argmax, forward, init_params, predict, softmax, ModelConfig, ParamVars, PreparedGraph};
use crate::rng::{derive_seed, derive_seed_tag, Stream};
use crate::tensor::{Adam, AdamConfig, ModelParams, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub fold_count: usize,
    /// Share of each training fold's subjects held out for early stopping.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            weight_decay: 0.015,
            batch_size: 10,
            max_epochs: 200,
            patience: 20,
            seed: 0,
            fold_count: 5,
            val_fraction: 0.15,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.fold_count < 2 {
            return Err(Error::Config("fold_count must be at least 2".into()));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("lr and weight_decay must be non-negative".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Subject-level fold assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Folds {
    pub k: usize,
    pub by_subject: BTreeMap<String, usize>,
}

impl Folds {
    pub fn fold_of(&self, subject: &str) -> Option<usize> {
        self.by_subject.get(subject).copied()
    }

    pub fn subjects(&self, fold: usize) -> Vec<&str> {
        self.by_subject
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(s, _)| s.as_str())
            .collect()
    }
}

fn subject_classes<'a>(items: impl IntoIterator<Item = (&'a str, usize)>) -> Result<BTreeMap<String, usize>> {
    let mut out: BTreeMap<String, usize> = BTreeMap::new();
    for (subject, class) in items {
        match out.get(subject) {
            Some(&c) if c != class => {
                return Err(Error::Data(format!(
                    "subject {subject} has instances of classes {c} and {class}"
                )))
            }
            Some(_) => {}
            None => {
                out.insert(subject.to_string(), class);
            }
        }
    }
    Ok(out)
}

/// Stratified, subject-grouped k-fold split.
///
/// Each class's subjects are shuffled and dealt round-robin; the dealing
/// position carries over from one class to the next so fold sizes stay
/// within one subject of each other.
pub fn stratified_group_kfold<'a>(
    items: impl IntoIterator<Item = (&'a str, usize)>,
    k: usize,
    seed: u64,
) -> Result<Folds> {
    if k < 2 {
        return Err(Error::Config("fold count must be at least 2".into()));
    }
    let classes = subject_classes(items)?;
    let mut per_class: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (s, &c) in &classes {
        per_class.entry(c).or_default().push(s.clone());
    }
    let mut rng = Stream::new(seed);
    let mut by_subject = BTreeMap::new();
    let mut next = 0;
    for (&class, subjects) in per_class.iter_mut() {
        if subjects.len() < k {
            return Err(Error::Stratification {
                class,
                found: subjects.len(),
                folds: k,
            });
        }
        rng.shuffle(subjects);
        for s in subjects.iter() {
            by_subject.insert(s.clone(), next);
            next = (next + 1) % k;
        }
    }
    Ok(Folds { k, by_subject })
}

/// Stratified subset of `subjects` of size about `fraction` per class.
fn validation_subjects(subjects: &BTreeMap<String, usize>, fraction: f64, rng: &mut Stream) -> BTreeSet<String> {
    let mut per_class: BTreeMap<usize, Vec<&String>> = BTreeMap::new();
    for (s, &c) in subjects {
        per_class.entry(c).or_default().push(s);
    }
    let mut out = BTreeSet::new();
    for list in per_class.values_mut() {
        let mut take = (fraction * list.len() as f64).round() as usize;
        if fraction > 0.0 && list.len() >= 2 {
            take = take.max(1);
        }
        take = take.min(list.len().saturating_sub(1));
        rng.shuffle(list);
        out.extend(list.iter().take(take).map(|s| (*s).clone()));
    }
    out
}

/// Mann-Whitney AUC of `scores` for `positive` labels, ties counting half.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::Dimension {
            op: "auc",
            left: vec![scores.len()],
            right: vec![positive.len()],
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::AucUndefined);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if positive[idx] {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Binary AUC on class-1 probabilities, or macro one-vs-rest for K > 2.
pub fn multiclass_auc(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let k = probs.first().map_or(0, Vec::len);
    if k == 2 {
        let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
        let pos: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        return binary_auc(&scores, &pos);
    }
    let mut total = 0.0;
    let mut used = 0;
    for c in 0..k {
        let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        if pos.iter().all(|&p| p) || !pos.iter().any(|&p| p) {
            continue;
        }
        let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        total += binary_auc(&scores, &pos)?;
        used += 1;
    }
    if used == 0 {
        return Err(Error::AucUndefined);
    }
    Ok(total / used as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub auc: f64,
}

pub fn evaluate(params: &ModelParams, cfg: &ModelConfig, instances: &[PreparedGraph]) -> Result<Evaluation> {
    if instances.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    let mut probs = Vec::with_capacity(instances.len());
    let mut correct = 0;
    let labels: Vec<usize> = instances.iter().map(|g| g.class_label).collect();
    for g in instances {
        let logits = predict(params, cfg, g)?;
        if argmax(&logits) == g.class_label {
            correct += 1;
        }
        probs.push(softmax(&logits));
    }
    Ok(Evaluation {
        accuracy: correct as f64 / instances.len() as f64,
        auc: multiclass_auc(&probs, &labels)?,
    })
}

/// Mean cross-entropy in evaluation mode.
pub fn mean_loss(params: &ModelParams, cfg: &ModelConfig, instances: &[PreparedGraph]) -> Result<f64> {
    let mut total = 0.0;
    for g in instances {
        let p = softmax(&predict(params, cfg, g)?);
        total -= p[g.class_label].max(f64::MIN_POSITIVE).ln();
    }
    Ok(total / instances.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub best_val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    /// Parameters at the best validation loss.
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Accumulated gradient of the batch-mean cross-entropy.
fn batch_gradients(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &[&PreparedGraph],
    seeds: &[u64],
) -> Result<(f64, BTreeMap<String, Vec<f64>>)> {
    let scale = 1.0 / batch.len() as f64;
    let mut total: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut loss_sum = 0.0;
    for (g, &seed) in batch.iter().zip(seeds) {
        let mut tape = Tape::new();
        let p = ParamVars::bind(&mut tape, params, true);
        let x = tape.constant(g.features.clone());
        let mut rng = Stream::new(seed);
        let out = forward(&mut tape, g, &p, x, cfg, true, &mut rng)?;
        let loss = tape.cross_entropy(out.logits, &[g.class_label])?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Numeric(format!("training loss diverged to {value}")));
        }
        loss_sum += value;
        let scaled = tape.scale(loss, scale);
        tape.backward(scaled)?;
        for (name, grad) in p.grads(&tape) {
            match total.get_mut(&name) {
                Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += g),
                None => {
                    total.insert(name, grad);
                }
            }
        }
    }
    Ok((loss_sum, total))
}

/// Adam training with early stopping on `val` loss (on training loss if `val` is empty).
pub fn train_model(
    train: &[PreparedGraph],
    val: &[PreparedGraph],
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    seed: u64,
) -> Result<TrainedModel> {
    cfg.validate()?;
    tcfg.validate()?;
    let first = train.first().ok_or_else(|| Error::Data("empty training set".into()))?;
    let mut params = init_params(cfg, first.features.cols(), derive_seed_tag(seed, "init"))?;
    let mut adam = Adam::new(AdamConfig {
        lr: tcfg.lr,
        weight_decay: tcfg.weight_decay,
        ..AdamConfig::default()
    });
    let mut best = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..tcfg.max_epochs {
        let epoch_seed = derive_seed(seed, epoch as u64);
        let mut shuffle = Stream::new(derive_seed_tag(epoch_seed, "shuffle"));
        shuffle.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(tcfg.batch_size).enumerate() {
            let batch: Vec<&PreparedGraph> = chunk.iter().map(|&i| &train[i]).collect();
            let seeds: Vec<u64> = (0..chunk.len())
                .map(|i| derive_seed(epoch_seed, (b * tcfg.batch_size + i) as u64))
                .collect();
            let (loss, grads) = batch_gradients(&params, cfg, &batch, &seeds)?;
            loss_sum += loss;
            adam.step(&mut params, &grads)?;
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_loss = if val.is_empty() {
            train_loss
        } else {
            mean_loss(&params, cfg, val)?
        };
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!("validation loss {val_loss} at epoch {epoch}")));
        }
        if val_loss < best_loss {
            best_loss = val_loss;
            best = params.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            best_val_loss: best_loss,
        });
        if since_best >= tcfg.patience {
            break;
        }
    }
    Ok(TrainedModel {
        params: best,
        history,
        best_epoch,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub accuracy: f64,
    pub auc: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub checkpoint: Option<String>,
    #[serde(skip)]
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub accuracy: f64,
    pub auc: f64,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    pub models: Vec<ModelParams>,
    /// Held-out instance indices per fold.
    pub test_indices: Vec<Vec<usize>>,
    pub mean: Summary,
    pub std: Summary,
}

impl CvReport {
    fn from_folds(folds: Vec<FoldResult>, models: Vec<ModelParams>, test_indices: Vec<Vec<usize>>) -> Self {
        let acc: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
        let auc: Vec<f64> = folds.iter().map(|f| f.auc).collect();
        let (am, asd) = mean_std(&acc);
        let (um, usd) = mean_std(&auc);
        CvReport {
            folds,
            models,
            test_indices,
            mean: Summary { accuracy: am, auc: um },
            std: Summary { accuracy: asd, auc: usd },
        }
    }

    /// `{config, per_fold, mean, std}` as pretty JSON.
    pub fn metrics_json(&self, config: &serde_json::Value) -> String {
        let doc = serde_json::json!({
            "config": config,
            "per_fold": self.folds,
            "mean": self.mean,
            "std": self.std,
        });
        let mut s = serde_json::to_string_pretty(&doc).expect("metrics serialize");
        s.push('\n');
        s
    }

    /// Writes `fold_k/{loss_history.csv, checkpoint.json}` and fills checkpoint paths.
    pub fn write_fold_outputs(&mut self, dir: &Path) -> Result<()> {
        for (f, params) in self.folds.iter_mut().zip(&self.models) {
            let sub = dir.join(format!("fold_{}", f.fold));
            std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            write_loss_history(&sub.join("loss_history.csv"), &f.history)?;
            let ckpt: PathBuf = sub.join("checkpoint.json");
            params.save(&ckpt)?;
            f.checkpoint = Some(format!("fold_{}/checkpoint.json", f.fold));
        }
        Ok(())
    }
}

pub fn write_loss_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut s = String::from("epoch,train_loss,val_loss,best_val_loss\n");
    for r in history {
        s.push_str(&format!(
            "{},{:?},{:?},{:?}\n",
            r.epoch, r.train_loss, r.val_loss, r.best_val_loss
        ));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

struct FoldOutcome {
    result: FoldResult,
    params: ModelParams,
    test: Vec<usize>,
}

fn run_fold(
    graphs: &[GraphInstance],
    prepared: &[PreparedGraph],
    folds: &Folds,
    fold: usize,
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
) -> Result<FoldOutcome> {
    let fold_seed = derive_seed(derive_seed_tag(tcfg.seed, "fold"), fold as u64);
    let train_subjects: BTreeMap<String, usize> = graphs
        .iter()
        .filter(|g| folds.fold_of(&g.subject_id) != Some(fold))
        .map(|g| (g.subject_id.clone(), g.class_label))
        .collect();
    let mut rng = Stream::new(derive_seed_tag(fold_seed, "validation"));
    let val_subjects = validation_subjects(&train_subjects, tcfg.val_fraction, &mut rng);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (i, g) in graphs.iter().enumerate() {
        if folds.fold_of(&g.subject_id) == Some(fold) {
            test.push(i);
        } else if val_subjects.contains(&g.subject_id) {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    let pick = |idx: &[usize]| idx.iter().map(|&i| prepared[i].clone()).collect::<Vec<_>>();
    let trained = train_model(&pick(&train), &pick(&val), cfg, tcfg, fold_seed)?;
    let eval = evaluate(&trained.params, cfg, &pick(&test))?;
    Ok(FoldOutcome {
        result: FoldResult {
            fold,
            accuracy: eval.accuracy,
            auc: eval.auc,
            n_train: train.len(),
            n_val: val.len(),
            n_test: test.len(),
            best_epoch: trained.best_epoch,
            epochs_run: trained.history.len(),
            checkpoint: None,
            history: trained.history,
        },
        params: trained.params,
        test,
    })
}

/// Subject-grouped k-fold cross-validation. Folds run on scoped threads when `parallel`.
pub fn cross_validate(
    graphs: &[GraphInstance],
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    parallel: bool,
) -> Result<CvReport> {
    cfg.validate()?;
    tcfg.validate()?;
    let folds = stratified_group_kfold(
        graphs.iter().map(|g| (g.subject_id.as_str(), g.class_label)),
        tcfg.fold_count,
        derive_seed_tag(tcfg.seed, "split"),
    )?;
    let prepared = graphs
        .iter()
        .map(|g| PreparedGraph::new(g, cfg))
        .collect::<Result<Vec<_>>>()?;
    let outcomes: Vec<Result<FoldOutcome>> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..tcfg.fold_count)
                .map(|k| {
                    let (folds, prepared) = (&folds, &prepared);
                    s.spawn(move || run_fold(graphs, prepared, folds, k, cfg, tcfg))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::Internal("fold thread panicked".into()))))
                .collect()
        })
    } else {
        (0..tcfg.fold_count)
            .map(|k| run_fold(graphs, &prepared, &folds, k, cfg, tcfg))
            .collect()
    };
    let mut results = Vec::new();
    let mut models = Vec::new();
    let mut tests = Vec::new();
    for o in outcomes {
        let o = o?;
        results.push(o.result);
        models.push(o.params);
        tests.push(o.test);
    }
    Ok(CvReport::from_folds(results, models, tests))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Aggregator, PeMode};
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    fn brute_auc(scores: &[f64], pos: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if pos[i] && !pos[j] {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_examples() {
        assert_eq!(binary_auc(&[0.9, 0.9, 0.1, 0.1], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(binary_auc(&[0.4; 6], &[true, false, true, false, true, false]).unwrap(), 0.5);
        // 3 of the 4 (positive, negative) pairs are concordant
        let (s, p) = ([0.8, 0.6, 0.55, 0.3], [true, false, true, false]);
        let auc = binary_auc(&s, &p).unwrap();
        assert_eq!(brute_auc(&s, &p), 0.75);
        assert!((auc - 0.75).abs() < 1e-15);
        assert!(matches!(binary_auc(&[0.1, 0.2], &[true, true]), Err(Error::AucUndefined)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn auc_matches_pair_count(
            data in prop::collection::vec((0u8..20, any::<bool>()), 2..200)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 7.0).collect();
            let pos: Vec<bool> = data.iter().map(|(_, p)| *p).collect();
            prop_assume!(pos.iter().any(|&p| p) && pos.iter().any(|&p| !p));
            let a = binary_auc(&scores, &pos).unwrap();
            prop_assert!((a - brute_auc(&scores, &pos)).abs() < 1e-12);
        }
    }

    #[test]
    fn macro_auc_three_classes() {
        let probs = vec![
            vec![0.7, 0.2, 0.1],
            vec![0.2, 0.6, 0.2],
            vec![0.1, 0.3, 0.6],
            vec![0.5, 0.4, 0.1],
        ];
        let auc = multiclass_auc(&probs, &[0, 1, 2, 0]).unwrap();
        assert!((auc - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[0.8; 5]), (0.8, 0.0));
        let (m, s) = mean_std(&[1.0, 0.5]);
        assert!((m - 0.75).abs() < 1e-15 && (s - 0.25).abs() < 1e-15);
    }

    fn full_size_subjects() -> Vec<(String, usize)> {
        (0..118)
            .map(|i| (format!("s{i:03}"), usize::from(i >= 75)))
            .collect()
    }

    #[test]
    fn kfold_full_size_split() {
        let subjects = full_size_subjects();
        let folds = stratified_group_kfold(subjects.iter().map(|(s, c)| (s.as_str(), *c)), 5, 3).unwrap();
        for k in 0..5 {
            let members = folds.subjects(k);
            assert!(members.len() == 23 || members.len() == 24);
            let asd = members.iter().filter(|s| s[1..].parse::<usize>().unwrap() < 75).count();
            assert_eq!(asd, 15);
            assert!((8..=9).contains(&(members.len() - asd)));
        }
        let again = stratified_group_kfold(subjects.iter().map(|(s, c)| (s.as_str(), *c)), 5, 3).unwrap();
        assert_eq!(folds, again);
    }

    #[test]
    fn kfold_groups_augments() {
        let instances: Vec<(String, usize)> = full_size_subjects()
            .into_iter()
            .flat_map(|(s, c)| (0..30).map(move |_| (s.clone(), c)))
            .collect();
        let folds = stratified_group_kfold(instances.iter().map(|(s, c)| (s.as_str(), *c)), 5, 9).unwrap();
        assert_eq!(folds.by_subject.len(), 118);
        for (s, _) in &instances {
            assert!(folds.fold_of(s).is_some());
        }
    }

    #[test]
    fn kfold_errors() {
        let few = [("a", 0), ("b", 0), ("c", 1)];
        assert!(matches!(
            stratified_group_kfold(few.iter().copied(), 2, 0),
            Err(Error::Stratification { class: 1, found: 1, folds: 2 })
        ));
        let mixed = [("a", 0), ("a", 1)];
        assert!(stratified_group_kfold(mixed.iter().copied(), 2, 0).is_err());
    }

    fn tiny_graphs(n_subjects: usize) -> Vec<GraphInstance> {
        let mut rng = Stream::new(77);
        (0..n_subjects)
            .flat_map(|s| {
                let class = s % 2;
                (0..2)
                    .map(|a| {
                        let snaps = (0..2)
                            .map(|_| {
                                let data = (0..8).map(|_| rng.normal() + class as f64).collect();
                                Tensor::matrix(4, 2, data).unwrap()
                            })
                            .collect();
                        GraphInstance {
                            snapshots: snaps,
                            edges: vec![crate::graphbuild::Edge { u: 0, v: 1, weight: 0.5 }],
                            class_label: class,
                            subject_id: format!("s{s:03}"),
                            instance_id: format!("s{s:03}_a{a:02}"),
                            degenerate_features: 0,
                        }
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            d_model: 4,
            pe_mode: PeMode::None,
            aggregator: Aggregator::Attention,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let graphs = tiny_graphs(4);
        let cfg = tiny_cfg();
        let prepared: Vec<PreparedGraph> = graphs.iter().map(|g| PreparedGraph::new(g, &cfg).unwrap()).collect();
        let tcfg = TrainConfig {
            lr: 0.0,
            weight_decay: 0.0,
            max_epochs: 3,
            ..TrainConfig::default()
        };
        let trained = train_model(&prepared, &[], &cfg, &tcfg, 5).unwrap();
        let init = init_params(&cfg, 2, derive_seed_tag(5, "init")).unwrap();
        assert_eq!(trained.params, init);
        assert_eq!(trained.history.len(), 3);
    }

    #[test]
    fn cross_validation_is_reproducible_and_disjoint() {
        let graphs = tiny_graphs(10);
        let cfg = tiny_cfg();
        let tcfg = TrainConfig {
            lr: 0.01,
            max_epochs: 4,
            patience: 2,
            fold_count: 2,
            ..TrainConfig::default()
        };
        let a = cross_validate(&graphs, &cfg, &tcfg, false).unwrap();
        let b = cross_validate(&graphs, &cfg, &tcfg, true).unwrap();
        assert_eq!(a.folds, b.folds);
        assert_eq!(a.models, b.models);
        assert_eq!(a.folds.len(), 2);
        for f in &a.folds {
            assert_eq!(f.n_train + f.n_val + f.n_test, graphs.len());
            let best: Vec<f64> = f.history.iter().map(|h| h.best_val_loss).collect();
            assert!(best.windows(2).all(|w| w[1] <= w[0]));
        }
        let mut seen = BTreeSet::new();
        for t in &a.test_indices {
            for &i in t {
                assert!(seen.insert(i));
            }
        }
        assert_eq!(seen.len(), graphs.len());
    }
}
