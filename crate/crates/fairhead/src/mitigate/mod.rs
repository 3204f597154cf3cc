//! Head-level bias mitigation: balanced subgroup reweighting, targeted
//! embedding-space augmentation, pool-based active learning, adversarial
//! training, hyperparameter tuning by composite score, and the repeated
//! experiment harness that aggregates everything over seeds.

mod active;

pub use active::{
    active_learning_loop, uncertainty_scores, AcquisitionStrategy, ActiveLearningConfig,
    ActiveLearningRound, EvalData,
};

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use active::PoolTrainer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{Axis, EmbeddingMatrix, Label, SampleTable, Split};
use crate::detect::{bias_report, DetectError, FairnessReport};
use crate::gbt::GbtParams;
use crate::heads::{
    train_adversarial_mlp, train_head, train_multihead, AttributeLabels, HeadError, HeadKind,
    HeadModel, HeadParams, MultiHeadModel,
};
use crate::linalg::{fit_pca, pca_transform, LinalgError};
use crate::matrix::DenseMatrix;
use crate::metrics::{aggregate_runs, auprc, MetricError, RunAggregate};

#[derive(Debug, Error)]
pub enum MitigateError {
    #[error("active-learning schedule needs {needed} samples but the pool has {pool}")]
    InfeasibleSchedule { pool: usize, needed: usize },
    #[error("target group {group} has {count} samples of class {class}, need at least 2")]
    InsufficientPairs { group: usize, class: u8, count: usize },
    #[error("every tuning candidate failed to train")]
    AllCandidatesFailed,
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("repeat {repeat}: {source}")]
    Repeat {
        repeat: usize,
        #[source]
        source: Box<MitigateError>,
    },
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Per-sample weights that equalize total weight across groups:
/// `w_i = N / (G * n_g(i))`, so every group sums to `N / G`.
pub fn balance_weights(groups: &[usize]) -> Vec<f64> {
    let n = groups.len();
    let n_ids = groups.iter().copied().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; n_ids];
    for &g in groups {
        counts[g] += 1;
    }
    let g_present = counts.iter().filter(|&&c| c > 0).count();
    groups
        .iter()
        .map(|&g| n as f64 / (g_present as f64 * counts[g] as f64))
        .collect()
}

/// Convex combination `alpha * a + (1 - alpha) * b`.
pub fn convex_mix(a: &[f64], b: &[f64], alpha: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| alpha * x + (1.0 - alpha) * y).collect()
}

/// Appends `n_new` synthetic rows for one group: each is a convex mix of two
/// same-group, same-label rows with a mixing weight drawn uniformly from
/// [0.2, 0.8]. The label class of each synthetic row follows the group's
/// class prevalence.
pub fn augment_subgroup(
    x: &DenseMatrix,
    y: &[u8],
    groups: &[usize],
    target_group: usize,
    n_new: usize,
    seed: u64,
) -> Result<(DenseMatrix, Vec<u8>, Vec<usize>), MitigateError> {
    assert_eq!(x.n_rows(), y.len());
    assert_eq!(x.n_rows(), groups.len());
    let by_class: [Vec<usize>; 2] = {
        let mut neg = Vec::new();
        let mut pos = Vec::new();
        for i in 0..y.len() {
            if groups[i] == target_group {
                if y[i] == 1 {
                    pos.push(i);
                } else {
                    neg.push(i);
                }
            }
        }
        [neg, pos]
    };
    for (class, rows) in by_class.iter().enumerate() {
        if rows.len() == 1 {
            return Err(MitigateError::InsufficientPairs {
                group: target_group,
                class: class as u8,
                count: rows.len(),
            });
        }
    }
    let total = by_class[0].len() + by_class[1].len();
    if total < 2 {
        return Err(MitigateError::InsufficientPairs {
            group: target_group,
            class: if by_class[1].is_empty() { 1 } else { 0 },
            count: 0,
        });
    }
    let pos_rate = by_class[1].len() as f64 / total as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out_x = x.clone();
    let mut out_y = y.to_vec();
    let mut out_groups = groups.to_vec();
    for _ in 0..n_new {
        let class = usize::from(rng.gen::<f64>() < pos_rate);
        let rows = &by_class[class];
        let a = rng.gen_range(0..rows.len());
        let b = {
            let pick = rng.gen_range(0..rows.len() - 1);
            if pick >= a {
                pick + 1
            } else {
                pick
            }
        };
        let alpha: f64 = rng.gen_range(0.2..0.8);
        let row = convex_mix(x.row(rows[a]), x.row(rows[b]), alpha);
        out_x.push_row(&row);
        out_y.push(class as u8);
        out_groups.push(target_group);
    }
    Ok((out_x, out_y, out_groups))
}

/// Mitigation strategies applicable at head level. They compose; adversarial
/// replaces the trainer and therefore requires a perceptron head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mitigation {
    Reweight,
    Augment,
    ActiveLearning,
    Adversarial,
}

impl Mitigation {
    pub fn name(self) -> &'static str {
        match self {
            Mitigation::Reweight => "reweight",
            Mitigation::Augment => "augment",
            Mitigation::ActiveLearning => "active_learning",
            Mitigation::Adversarial => "adversarial",
        }
    }
}

impl std::fmt::Display for Mitigation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mitigation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reweight" => Ok(Mitigation::Reweight),
            "augment" => Ok(Mitigation::Augment),
            "active_learning" => Ok(Mitigation::ActiveLearning),
            "adversarial" => Ok(Mitigation::Adversarial),
            other => Err(format!("unknown mitigation `{other}`")),
        }
    }
}

/// Full experiment description: head, mitigations, repeats, and the knobs the
/// individual strategies need.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub head: HeadKind,
    pub params: HeadParams,
    pub mitigations: BTreeSet<Mitigation>,
    pub n_repeats: usize,
    pub base_seed: u64,
    pub variance_target: f64,
    /// Axis whose groups the reweighting balances.
    pub reweight_axis: Axis,
    pub augment_axis: Axis,
    /// Fixed augmentation target group; `None` picks the group with the
    /// lowest mean validation AUPRC on `augment_axis`.
    pub augment_group: Option<String>,
    /// Synthetic rows per condition; `None` fills the count gap to the
    /// largest group on the axis.
    pub augment_count: Option<usize>,
    pub active: ActiveLearningConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            head: HeadKind::Gbt,
            params: HeadParams::default(),
            mitigations: BTreeSet::new(),
            n_repeats: 5,
            base_seed: 42,
            variance_target: 0.95,
            reweight_axis: Axis::Race,
            augment_axis: Axis::Race,
            augment_group: None,
            augment_count: None,
            active: ActiveLearningConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), MitigateError> {
        if self.n_repeats == 0 {
            return Err(MitigateError::InvalidConfig("n_repeats must be at least 1".into()));
        }
        let adversarial = self.mitigations.contains(&Mitigation::Adversarial)
            || self.head == HeadKind::AdversarialMlp;
        if adversarial && !matches!(self.head, HeadKind::Mlp | HeadKind::AdversarialMlp) {
            return Err(MitigateError::InvalidConfig(
                "adversarial mitigation requires an mlp head".into(),
            ));
        }
        if !(self.variance_target > 0.0 && self.variance_target <= 1.0) {
            return Err(MitigateError::InvalidConfig(format!(
                "variance_target {} out of (0, 1]",
                self.variance_target
            )));
        }
        Ok(())
    }

    fn is_adversarial(&self) -> bool {
        self.mitigations.contains(&Mitigation::Adversarial)
            || self.head == HeadKind::AdversarialMlp
    }
}

/// Aggregated outcome of repeated runs: every reported metric carries mean,
/// std, and a 95% t-interval, plus the raw per-repeat values and reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub aggregates: BTreeMap<String, RunAggregate>,
    pub per_repeat: BTreeMap<String, Vec<f64>>,
    pub reports: Vec<FairnessReport>,
}

fn collect_metrics(report: &FairnessReport, into: &mut BTreeMap<String, Vec<f64>>) {
    let mut push = |key: String, value: f64| into.entry(key).or_default().push(value);
    push("mean_auprc".into(), report.mean_auprc);
    push("delta_sex".into(), report.mean_delta_sex);
    push("delta_age".into(), report.mean_delta_age);
    push("delta_race".into(), report.mean_delta_race);
    push("composite".into(), report.composite);
    for cond in &report.conditions {
        push(format!("{}/auprc", cond.condition), cond.auprc);
        for sub in &cond.subgroups {
            push(format!("{}/delta_{}", cond.condition, sub.axis), sub.delta);
        }
    }
}

/// Group index of a sample along an axis over the axis' full group list
/// (including groups excluded from fairness metrics, which still train).
fn full_group_index(samples: &SampleTable, axis: Axis, i: usize) -> usize {
    let name = samples.group_name(axis, i);
    axis.all_groups().iter().position(|g| *g == name).expect("name always listed")
}

struct AugmentPlan {
    axis: Axis,
    /// Index into `axis.all_groups()`.
    group: usize,
    count: Option<usize>,
}

/// Trainer used by the experiment pipeline: selects rows, applies the
/// augmentation plan per condition, and dispatches to the standard or
/// adversarial trainer.
struct ExperimentTrainer<'a> {
    samples: &'a SampleTable,
    cfg: &'a ExperimentConfig,
    weights: &'a [f64],
    augment: Option<&'a AugmentPlan>,
    /// Original sample index per pool position.
    pool_rows: &'a [usize],
}

impl ExperimentTrainer<'_> {
    fn attribute_labels(&self, rows: &[usize]) -> Vec<AttributeLabels> {
        Axis::ALL
            .iter()
            .map(|&axis| AttributeLabels {
                n_groups: axis.all_groups().len(),
                labels: rows.iter().map(|&i| full_group_index(self.samples, axis, i)).collect(),
            })
            .collect()
    }

    fn train_condition(
        &self,
        condition: usize,
        x_pool: &DenseMatrix,
        positions: &[usize],
        seed: u64,
    ) -> Result<HeadModel, HeadError> {
        let labels = self.samples.labels_for(condition);
        let kept_positions: Vec<usize> = positions
            .iter()
            .copied()
            .filter(|&p| labels[self.pool_rows[p]] != Label::Missing)
            .collect();
        if kept_positions.is_empty() {
            return Err(HeadError::SingleClass);
        }
        let kept: Vec<usize> = kept_positions.iter().map(|&p| self.pool_rows[p]).collect();
        let mut x = x_pool.select_rows(&kept_positions);
        let mut y: Vec<u8> = kept.iter().map(|&i| labels[i].as_binary().unwrap()).collect();
        let mut w: Vec<f64> = kept.iter().map(|&i| self.weights[i]).collect();
        let mut attr_rows = kept.clone();

        if let Some(plan) = self.augment {
            let gids: Vec<usize> =
                kept.iter().map(|&i| full_group_index(self.samples, plan.axis, i)).collect();
            let mut counts = vec![0usize; plan.axis.all_groups().len()];
            for &g in &gids {
                counts[g] += 1;
            }
            let n_new = plan
                .count
                .unwrap_or_else(|| counts.iter().max().unwrap().saturating_sub(counts[plan.group]));
            if n_new > 0 {
                let group_weight = kept
                    .iter()
                    .zip(&gids)
                    .find(|(_, &g)| g == plan.group)
                    .map_or(1.0, |(&i, _)| self.weights[i]);
                let (ax, ay, _) = augment_subgroup(&x, &y, &gids, plan.group, n_new, seed)
                    .map_err(|e| HeadError::UnsupportedParams(e.to_string()))?;
                x = ax;
                y = ay;
                w.extend(std::iter::repeat(group_weight).take(n_new));
                // synthetic rows mirror a real target-group member for the
                // adversarial attribute labels
                let proto = kept
                    .iter()
                    .zip(&gids)
                    .find(|(_, &g)| g == plan.group)
                    .map(|(&i, _)| i)
                    .expect("target group non-empty after augmentation check");
                attr_rows.extend(std::iter::repeat(proto).take(n_new));
            }
        }

        if self.cfg.is_adversarial() {
            let attrs = self.attribute_labels(&attr_rows);
            let mut params = self.cfg.params.adversarial.clone();
            params.seed = seed;
            Ok(HeadModel::Mlp(train_adversarial_mlp(&x, &y, &w, &attrs, &params)?))
        } else {
            train_head(self.cfg.head, &x, &y, &w, &self.cfg.params, seed)
        }
    }
}

impl active::PoolTrainer for ExperimentTrainer<'_> {
    fn train(
        &self,
        x: &DenseMatrix,
        rows: &[usize],
        seed: u64,
    ) -> Result<MultiHeadModel, HeadError> {
        let names = self.samples.condition_names();
        let mut heads = Vec::with_capacity(names.len());
        for (c, name) in names.iter().enumerate() {
            let head = self.train_condition(c, x, rows, seed + c as u64).map_err(|e| {
                HeadError::Condition { condition: name.clone(), source: Box::new(e) }
            })?;
            heads.push(head);
        }
        Ok(MultiHeadModel { condition_names: names.to_vec(), heads, pca: None })
    }
}

/// Picks the augmentation target: the configured group, or the group with the
/// lowest mean validation AUPRC under a plain unmitigated head.
fn resolve_augment_plan(
    samples: &SampleTable,
    cfg: &ExperimentConfig,
    embeddings: &EmbeddingMatrix,
    train: &[usize],
    val: &[usize],
    seed: u64,
) -> Result<AugmentPlan, MitigateError> {
    let axis = cfg.augment_axis;
    if let Some(name) = &cfg.augment_group {
        let group = axis
            .all_groups()
            .iter()
            .position(|g| g == name)
            .ok_or_else(|| {
                MitigateError::InvalidConfig(format!("group `{name}` not valid for axis {axis}"))
            })?;
        return Ok(AugmentPlan { axis, group, count: cfg.augment_count });
    }

    // Baseline head on the train split, scored per group on the val split.
    let labels: Vec<Vec<Label>> = (0..samples.n_conditions())
        .map(|c| samples.labels_for(c).to_vec())
        .collect();
    let names = samples.condition_names().to_vec();
    let baseline = {
        let pca = fit_pca(&embeddings.data().select_rows(train), cfg.variance_target)?;
        let x = pca_transform(&pca, &embeddings.data().select_rows(train))?;
        let l: Vec<Vec<Label>> = labels
            .iter()
            .map(|col| train.iter().map(|&i| col[i]).collect())
            .collect();
        let w = vec![1.0; train.len()];
        train_multihead(cfg.head, &x, &l, &names, &w, &cfg.params, seed)?.with_pca(pca)
    };
    let val_x = embeddings.data().select_rows(val);
    let probs = baseline.predict_proba_embeddings(&val_x)?;

    let metric_groups = axis.metric_groups();
    let mut sums = vec![0.0; metric_groups.len()];
    let mut counts = vec![0usize; metric_groups.len()];
    for c in 0..names.len() {
        for (g, _) in metric_groups.iter().enumerate() {
            let rows: Vec<usize> = (0..val.len())
                .filter(|&j| {
                    samples.metric_group_index(axis, val[j]) == Some(g)
                        && samples.label(c, val[j]) != Label::Missing
                })
                .collect();
            let scores: Vec<f64> = rows.iter().map(|&j| probs[c][j]).collect();
            let ys: Vec<u8> = rows
                .iter()
                .map(|&j| samples.label(c, val[j]).as_binary().unwrap())
                .collect();
            if let Ok(v) = auprc(&scores, &ys) {
                sums[g] += v;
                counts[g] += 1;
            }
        }
    }
    let worst = (0..metric_groups.len())
        .filter(|&g| counts[g] > 0)
        .min_by(|&a, &b| {
            (sums[a] / counts[a] as f64).partial_cmp(&(sums[b] / counts[b] as f64)).unwrap()
        })
        .ok_or_else(|| MitigateError::InvalidConfig("no group evaluable on val".into()))?;
    let group_name = metric_groups[worst];
    let group = axis.all_groups().iter().position(|g| *g == group_name).unwrap();
    log::info!("augmentation target auto-selected: {axis}={group_name}");
    Ok(AugmentPlan { axis, group, count: cfg.augment_count })
}

fn run_single(
    embeddings: &EmbeddingMatrix,
    samples: &SampleTable,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<FairnessReport, MitigateError> {
    let n = samples.n_samples();
    let train = samples.split_indices(Split::Train);
    let val = samples.split_indices(Split::Val);

    let mut weights = vec![1.0; n];
    if cfg.mitigations.contains(&Mitigation::Reweight) {
        let gids: Vec<usize> =
            train.iter().map(|&i| full_group_index(samples, cfg.reweight_axis, i)).collect();
        for (pos, w) in train.iter().zip(balance_weights(&gids)) {
            weights[*pos] = w;
        }
    }

    let augment_plan = if cfg.mitigations.contains(&Mitigation::Augment) {
        Some(resolve_augment_plan(samples, cfg, embeddings, &train, &val, seed)?)
    } else {
        None
    };

    let trainer = ExperimentTrainer {
        samples,
        cfg,
        weights: &weights,
        augment: augment_plan.as_ref(),
        pool_rows: &train,
    };

    let model = if cfg.mitigations.contains(&Mitigation::ActiveLearning) {
        // The pool is the train split with raw features; the loop fits PCA on
        // its initial labeled set and re-trains through the same trainer, so
        // reweighting and augmentation stay in effect per round.
        let pool_x = embeddings.data().select_rows(&train);
        let (model, _history) = active::run_pool_loop(
            &pool_x,
            &trainer,
            &cfg.active,
            None,
            Some(cfg.variance_target),
            seed,
        )?;
        model
    } else {
        let pca = fit_pca(&embeddings.data().select_rows(&train), cfg.variance_target)?;
        let reduced_train = pca_transform(&pca, &embeddings.data().select_rows(&train))?;
        let positions: Vec<usize> = (0..train.len()).collect();
        trainer.train(&reduced_train, &positions, seed)?.with_pca(pca)
    };

    Ok(bias_report(&model, embeddings, samples)?)
}

/// Runs the configured experiment `n_repeats` times with seeds
/// `base_seed + i`, applying mitigations in the fixed order reweight ->
/// augment -> active learning -> train (adversarial replaces the trainer),
/// and aggregates every reported metric.
pub fn run_experiment(
    embeddings: &EmbeddingMatrix,
    samples: &SampleTable,
    cfg: &ExperimentConfig,
) -> Result<RunResult, MitigateError> {
    cfg.validate()?;
    let mut per_repeat: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut reports = Vec::with_capacity(cfg.n_repeats);
    for rep in 0..cfg.n_repeats {
        let seed = cfg.base_seed + rep as u64;
        let report = run_single(embeddings, samples, cfg, seed)
            .map_err(|e| MitigateError::Repeat { repeat: rep, source: Box::new(e) })?;
        collect_metrics(&report, &mut per_repeat);
        reports.push(report);
    }
    let aggregates = per_repeat
        .iter()
        .map(|(key, values)| {
            let agg = if values.len() >= 2 {
                aggregate_runs(values).expect("two or more repeats")
            } else {
                RunAggregate {
                    mean: values[0],
                    std: 0.0,
                    ci_low: values[0],
                    ci_high: values[0],
                    n_runs: 1,
                }
            };
            (key.clone(), agg)
        })
        .collect();
    Ok(RunResult { aggregates, per_repeat, reports })
}

/// Trains one candidate per grid entry on the train split and scores the
/// composite objective on the val split; returns the argmax (earliest on
/// ties) with every candidate's score. Candidates that fail to train are
/// skipped with a warning.
pub fn tune_hyperparams(
    embeddings: &EmbeddingMatrix,
    samples: &SampleTable,
    grid: &[GbtParams],
    variance_target: f64,
    seed: u64,
) -> Result<(usize, GbtParams, Vec<Option<f64>>), MitigateError> {
    assert!(!grid.is_empty(), "empty tuning grid");
    let mut scores: Vec<Option<f64>> = Vec::with_capacity(grid.len());
    for (i, candidate) in grid.iter().enumerate() {
        let cfg = ExperimentConfig {
            head: HeadKind::Gbt,
            params: HeadParams { gbt: candidate.clone(), ..HeadParams::default() },
            n_repeats: 1,
            base_seed: seed,
            variance_target,
            ..ExperimentConfig::default()
        };
        let train = samples.split_indices(Split::Train);
        let val = samples.split_indices(Split::Val);
        let result = (|| -> Result<f64, MitigateError> {
            let pca = fit_pca(&embeddings.data().select_rows(&train), variance_target)?;
            let reduced_train = pca_transform(&pca, &embeddings.data().select_rows(&train))?;
            let weights = vec![1.0; samples.n_samples()];
            let trainer = ExperimentTrainer {
                samples,
                cfg: &cfg,
                weights: &weights,
                augment: None,
                pool_rows: &train,
            };
            let positions: Vec<usize> = (0..train.len()).collect();
            let model = trainer.train(&reduced_train, &positions, seed)?.with_pca(pca);
            let report = crate::detect::bias_report_on(&model, embeddings, samples, &val)?;
            Ok(report.composite)
        })();
        match result {
            Ok(score) => scores.push(Some(score)),
            Err(e) => {
                log::warn!("tuning candidate {i} failed: {e}");
                scores.push(None);
            }
        }
    }
    let mut best: Option<usize> = None;
    for (i, score) in scores.iter().enumerate() {
        if let Some(s) = score {
            if best.map_or(true, |b| *s > scores[b].unwrap()) {
                best = Some(i);
            }
        }
    }
    match best {
        Some(i) => Ok((i, grid[i].clone(), scores)),
        None => Err(MitigateError::AllCandidatesFailed),
    }
}
