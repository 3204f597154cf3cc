//! Bias detection: label-distribution tables, demographic leakage probing of
//! embeddings, Shapley direction-consistency analysis, and subgroup
//! performance reporting.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{Axis, EmbeddingMatrix, Label, SampleTable, Split};
use crate::gbt::{tree_shapley, GbtError, GbtModel};
use crate::heads::{fit_logistic, HeadError, LogisticParams, MultiHeadModel};
use crate::linalg::{fit_pca_k, pca_transform, LinalgError};
use crate::matrix::DenseMatrix;
use crate::metrics::{auprc, composite_score, roc_auc, subgroup_auprc, MetricError, SubgroupResult};

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("attribute `{0}` has fewer than 2 groups in train or test")]
    SingleGroup(String),
    #[error("split `{0}` is empty")]
    EmptySplit(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Gbt(#[from] GbtError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// One cell block of the label-distribution table: shares are percentages of
/// all labeled samples for the condition along that axis, and `pos_rate` is
/// the within-group positive percentage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrevalenceRow {
    pub axis: Axis,
    pub group: String,
    pub condition: String,
    pub neg_share: f64,
    pub pos_share: f64,
    pub pos_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrevalenceTable {
    pub rows: Vec<PrevalenceRow>,
}

/// Distribution of positive and negative labels per demographic group and
/// condition, missing labels excluded.
pub fn prevalence_table(samples: &SampleTable) -> PrevalenceTable {
    assert!(samples.n_samples() > 0, "empty sample table");
    let mut rows = Vec::new();
    for axis in Axis::ALL {
        let groups = axis.all_groups();
        for (c, condition) in samples.condition_names().iter().enumerate() {
            let mut pos = vec![0usize; groups.len()];
            let mut neg = vec![0usize; groups.len()];
            for i in 0..samples.n_samples() {
                let g = groups
                    .iter()
                    .position(|name| *name == samples.group_name(axis, i))
                    .expect("group name is always listed");
                match samples.label(c, i) {
                    Label::Positive => pos[g] += 1,
                    Label::Negative => neg[g] += 1,
                    Label::Missing => {}
                }
            }
            let total: usize = pos.iter().sum::<usize>() + neg.iter().sum::<usize>();
            for (g, group) in groups.iter().enumerate() {
                if pos[g] + neg[g] == 0 && total > 0 {
                    continue;
                }
                let labeled = (pos[g] + neg[g]) as f64;
                rows.push(PrevalenceRow {
                    axis,
                    group: group.to_string(),
                    condition: condition.clone(),
                    neg_share: 100.0 * neg[g] as f64 / total as f64,
                    pos_share: 100.0 * pos[g] as f64 / total as f64,
                    pos_rate: if labeled > 0.0 {
                        100.0 * pos[g] as f64 / labeled
                    } else {
                        0.0
                    },
                });
            }
        }
    }
    PrevalenceTable { rows }
}

/// Probe AUCs for predicting each demographic attribute from raw embeddings:
/// a logistic-regression probe per attribute, trained on the train split and
/// scored on the test split. Race is handled one-vs-rest over the three
/// metric groups (`other` rows are excluded, matching the fairness metrics)
/// with the macro-averaged AUC reported.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeakageResult {
    pub sex_auc: f64,
    pub age_auc: f64,
    pub race_auc_macro: f64,
    pub race_per_group: Vec<(String, f64)>,
}

fn probe_auc(
    x: &DenseMatrix,
    train_idx: &[usize],
    test_idx: &[usize],
    targets: &[u8],
) -> Result<f64, DetectError> {
    let train_x = x.select_rows(train_idx);
    let train_y: Vec<u8> = train_idx.iter().map(|&i| targets[i]).collect();
    let weights = vec![1.0; train_idx.len()];
    let probe = fit_logistic(&train_x, &train_y, &weights, &LogisticParams::default())
        .map_err(|e| match e {
            HeadError::SingleClass => DetectError::SingleGroup("probe target".into()),
            other => DetectError::Head(other),
        })?;
    let test_x = x.select_rows(test_idx);
    let test_y: Vec<u8> = test_idx.iter().map(|&i| targets[i]).collect();
    let scores = probe.predict_proba(&test_x)?;
    Ok(roc_auc(&scores, &test_y)?)
}

/// `seed` is accepted for interface stability; the logistic probe itself is
/// deterministic.
pub fn leakage_probe(
    x: &EmbeddingMatrix,
    samples: &SampleTable,
    seed: u64,
) -> Result<LeakageResult, DetectError> {
    let _ = seed;
    let train = samples.split_indices(Split::Train);
    let test = samples.split_indices(Split::Test);
    if train.is_empty() {
        return Err(DetectError::EmptySplit("train".into()));
    }
    if test.is_empty() {
        return Err(DetectError::EmptySplit("test".into()));
    }

    let binary_targets = |axis: Axis| -> Vec<u8> {
        (0..samples.n_samples())
            .map(|i| u8::from(samples.metric_group_index(axis, i) == Some(1)))
            .collect()
    };

    let check_two_groups = |axis: Axis, idx: &[usize]| -> Result<(), DetectError> {
        let mut seen = std::collections::HashSet::new();
        for &i in idx {
            seen.insert(samples.group_name(axis, i));
        }
        if seen.len() < 2 {
            return Err(DetectError::SingleGroup(axis.to_string()));
        }
        Ok(())
    };
    for axis in Axis::ALL {
        check_two_groups(axis, &train)?;
        check_two_groups(axis, &test)?;
    }

    let sex_auc = probe_auc(x.data(), &train, &test, &binary_targets(Axis::Sex))?;
    let age_auc = probe_auc(x.data(), &train, &test, &binary_targets(Axis::Age))?;

    // Race: one-vs-rest over white/asian/black, rows with race `other`
    // dropped from both folds.
    let race_train: Vec<usize> = train
        .iter()
        .copied()
        .filter(|&i| samples.metric_group_index(Axis::Race, i).is_some())
        .collect();
    let race_test: Vec<usize> = test
        .iter()
        .copied()
        .filter(|&i| samples.metric_group_index(Axis::Race, i).is_some())
        .collect();
    let mut race_per_group = Vec::new();
    for (g, group) in Axis::Race.metric_groups().iter().enumerate() {
        let targets: Vec<u8> = (0..samples.n_samples())
            .map(|i| u8::from(samples.metric_group_index(Axis::Race, i) == Some(g)))
            .collect();
        let auc = probe_auc(x.data(), &race_train, &race_test, &targets)?;
        race_per_group.push((group.to_string(), auc));
    }
    let race_auc_macro =
        race_per_group.iter().map(|(_, v)| v).sum::<f64>() / race_per_group.len() as f64;

    Ok(LeakageResult { sex_auc, age_auc, race_auc_macro, race_per_group })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Same,
    Opposite,
    Indeterminate,
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::Same => "same",
            Direction::Opposite => "opposite",
            Direction::Indeterminate => "indeterminate",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirectionRow {
    /// Feature index in the model's input space.
    pub dimension: usize,
    pub mean_abs_phi: f64,
    pub directions: Vec<(Axis, Direction)>,
}

/// Whether the most influential feature dimensions contribute with a
/// consistent sign across demographic subgroups.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirectionTable {
    pub rows: Vec<DirectionRow>,
}

const NEAR_ZERO_MEAN: f64 = 1e-6;

/// Ranks dimensions by mean |Shapley value| over all rows of `x` and
/// classifies, per axis, whether the per-group mean attribution keeps one
/// sign. `groups` carries, per axis, each row's metric-group index (`None`
/// rows are skipped for that axis).
pub fn direction_consistency(
    model: &GbtModel,
    x: &DenseMatrix,
    groups: &[(Axis, Vec<Option<usize>>)],
    top_k: usize,
) -> Result<DirectionTable, DetectError> {
    assert!(top_k >= 1, "top_k must be at least 1");
    let rows: Vec<&[f64]> = x.rows().collect();
    let phis: Vec<Vec<f64>> = rows
        .par_iter()
        .map(|row| tree_shapley(model, row).map(|a| a.phi))
        .collect::<Result<_, _>>()?;

    let k = model.n_features;
    let n = phis.len() as f64;
    let mut mean_abs = vec![0.0; k];
    for phi in &phis {
        for (m, v) in mean_abs.iter_mut().zip(phi) {
            *m += v.abs();
        }
    }
    for m in &mut mean_abs {
        *m /= n;
    }

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| mean_abs[b].partial_cmp(&mean_abs[a]).unwrap().then(a.cmp(&b)));

    let mut out = Vec::new();
    for &dim in order.iter().take(top_k) {
        let mut directions = Vec::new();
        for (axis, assignment) in groups {
            let n_groups = axis.metric_groups().len();
            let mut sums = vec![0.0; n_groups];
            let mut counts = vec![0usize; n_groups];
            for (phi, g) in phis.iter().zip(assignment) {
                if let Some(g) = g {
                    sums[*g] += phi[dim];
                    counts[*g] += 1;
                }
            }
            let means: Vec<f64> = sums
                .iter()
                .zip(&counts)
                .filter(|(_, &c)| c > 0)
                .map(|(s, &c)| s / c as f64)
                .collect();
            let direction = if means.iter().any(|m| m.abs() < NEAR_ZERO_MEAN) {
                Direction::Indeterminate
            } else if means.iter().all(|m| *m > 0.0) || means.iter().all(|m| *m < 0.0) {
                Direction::Same
            } else {
                Direction::Opposite
            };
            directions.push((*axis, direction));
        }
        out.push(DirectionRow { dimension: dim, mean_abs_phi: mean_abs[dim], directions });
    }
    Ok(DirectionTable { rows: out })
}

/// Per-condition fairness snapshot on one evaluation split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: String,
    pub auprc: f64,
    pub subgroups: Vec<SubgroupResult>,
}

/// Subgroup performance report: per-condition overall AUPRC and per-axis
/// subgroup AUPRC gaps, plus cross-condition means and the composite score.
/// All values live on the [0,1] scale; the report layer renders percentage
/// points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FairnessReport {
    pub conditions: Vec<ConditionReport>,
    pub mean_auprc: f64,
    pub mean_delta_sex: f64,
    pub mean_delta_age: f64,
    pub mean_delta_race: f64,
    pub composite: f64,
}

impl FairnessReport {
    pub fn mean_delta(&self, axis: Axis) -> f64 {
        match axis {
            Axis::Sex => self.mean_delta_sex,
            Axis::Age => self.mean_delta_age,
            Axis::Race => self.mean_delta_race,
        }
    }
}

/// Evaluates a trained multi-head model on the test split.
pub fn bias_report(
    model: &MultiHeadModel,
    x: &EmbeddingMatrix,
    samples: &SampleTable,
) -> Result<FairnessReport, DetectError> {
    let test = samples.split_indices(Split::Test);
    if test.is_empty() {
        return Err(DetectError::EmptySplit("test".into()));
    }
    bias_report_on(model, x, samples, &test)
}

/// Same as [`bias_report`] but on caller-chosen rows (the experiment loop
/// uses this for validation-split scoring).
pub fn bias_report_on(
    model: &MultiHeadModel,
    x: &EmbeddingMatrix,
    samples: &SampleTable,
    rows: &[usize],
) -> Result<FairnessReport, DetectError> {
    let eval_x = x.data().select_rows(rows);
    let probs = model.predict_proba_embeddings(&eval_x)?;

    let mut conditions = Vec::new();
    for (c, condition) in model.condition_names.iter().enumerate() {
        let cond_index = samples
            .condition_names()
            .iter()
            .position(|n| n == condition)
            .expect("model condition missing from samples");
        let labeled: Vec<usize> = (0..rows.len())
            .filter(|&j| samples.label(cond_index, rows[j]) != Label::Missing)
            .collect();
        let scores: Vec<f64> = labeled.iter().map(|&j| probs[c][j]).collect();
        let labels: Vec<u8> = labeled
            .iter()
            .map(|&j| samples.label(cond_index, rows[j]).as_binary().unwrap())
            .collect();
        let overall = auprc(&scores, &labels)?;
        let mut subgroups = Vec::new();
        for axis in Axis::ALL {
            let assignment: Vec<Option<usize>> = labeled
                .iter()
                .map(|&j| samples.metric_group_index(axis, rows[j]))
                .collect();
            subgroups.push(subgroup_auprc(&scores, &labels, &assignment, axis)?);
        }
        conditions.push(ConditionReport { condition: condition.clone(), auprc: overall, subgroups });
    }

    let k = conditions.len() as f64;
    let mean_auprc = conditions.iter().map(|c| c.auprc).sum::<f64>() / k;
    let mean_for = |axis: Axis| {
        conditions
            .iter()
            .map(|c| c.subgroups.iter().find(|s| s.axis == axis).map_or(0.0, |s| s.delta))
            .sum::<f64>()
            / k
    };
    let mean_delta_sex = mean_for(Axis::Sex);
    let mean_delta_age = mean_for(Axis::Age);
    let mean_delta_race = mean_for(Axis::Race);
    Ok(FairnessReport {
        conditions,
        mean_auprc,
        mean_delta_sex,
        mean_delta_age,
        mean_delta_race,
        composite: composite_score(mean_auprc, mean_delta_sex, mean_delta_age, mean_delta_race),
    })
}

/// First two principal components of the train split applied to every row,
/// for plotting embedding structure by demographic group.
pub fn projection_2d(
    x: &EmbeddingMatrix,
    samples: &SampleTable,
) -> Result<Vec<(f64, f64)>, DetectError> {
    let train = samples.split_indices(Split::Train);
    if train.is_empty() {
        return Err(DetectError::EmptySplit("train".into()));
    }
    let pca = fit_pca_k(&x.data().select_rows(&train), 2)?;
    let z = pca_transform(&pca, x.data())?;
    Ok((0..z.n_rows()).map(|i| (z.get(i, 0), if z.n_cols() > 1 { z.get(i, 1) } else { 0.0 })).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, OracleSpec};
    use crate::gbt::{fit_gbt, GbtParams};
    use crate::heads::{train_multihead, HeadKind, HeadParams};
    use crate::linalg::fit_pca;

    #[test]
    fn prevalence_shares_and_rates_are_consistent() {
        let spec = OracleSpec::null(6);
        let (_, samples, _) = generate_synthetic(&spec, 2000, 3).unwrap();
        let table = prevalence_table(&samples);
        // within each (axis, condition), shares sum to 100
        for axis in Axis::ALL {
            for condition in samples.condition_names() {
                let cells: Vec<&PrevalenceRow> = table
                    .rows
                    .iter()
                    .filter(|r| r.axis == axis && &r.condition == condition)
                    .collect();
                let total: f64 = cells.iter().map(|r| r.neg_share + r.pos_share).sum();
                assert!((total - 100.0).abs() < 1e-9, "{axis} {condition}: {total}");
                for cell in cells {
                    let expect = 100.0 * cell.pos_share / (cell.pos_share + cell.neg_share);
                    assert!((cell.pos_rate - expect).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn prevalence_rate_example() {
        // a group holding 5.8% negatives and 1.3% positives of the dataset
        // has a within-group positive rate of 18.3%
        let rate: f64 = 100.0 * 1.3 / (5.8 + 1.3);
        assert!((rate - 18.3).abs() < 0.1);
    }

    #[test]
    fn leakage_probe_detects_injected_sex_signal() {
        let mut spec = OracleSpec::null(8);
        spec.signals = vec![crate::dataio::SignalSpec {
            axis: Axis::Sex,
            dim_index: 0,
            strength: 2.0,
        }];
        let (x, samples, _) = generate_synthetic(&spec, 4000, 9).unwrap();
        let result = leakage_probe(&x, &samples, 0).unwrap();
        assert!(result.sex_auc > 0.9, "sex AUC {}", result.sex_auc);
        assert!(
            (0.4..0.62).contains(&result.age_auc),
            "age AUC should stay near chance, got {}",
            result.age_auc
        );
    }

    #[test]
    fn leakage_probe_null_is_near_chance() {
        let spec = OracleSpec::null(8);
        let (x, samples, _) = generate_synthetic(&spec, 5000, 21).unwrap();
        let result = leakage_probe(&x, &samples, 0).unwrap();
        for (name, auc) in [
            ("sex", result.sex_auc),
            ("age", result.age_auc),
            ("race", result.race_auc_macro),
        ] {
            assert!((0.45..=0.55).contains(&auc), "{name} probe AUC {auc} outside null band");
        }
    }

    /// One-split tree on feature 0 with symmetric leaves: every sample's
    /// attribution on feature 0 is exactly -1 or +1, so group means are fully
    /// controlled by where the samples sit.
    fn one_split_model() -> GbtModel {
        use crate::gbt::{Tree, TreeNode};
        GbtModel {
            params: GbtParams { learning_rate: 1.0, ..GbtParams::default() },
            base_score: 0.0,
            n_features: 2,
            trees: vec![Tree {
                nodes: vec![
                    TreeNode::Internal {
                        feature: 0,
                        threshold: 0.0,
                        left: 1,
                        right: 2,
                        cover: 10.0,
                    },
                    TreeNode::Leaf { weight: -1.0, cover: 5.0 },
                    TreeNode::Leaf { weight: 1.0, cover: 5.0 },
                ],
            }],
        }
    }

    #[test]
    fn direction_consistency_classifies_sign_patterns() {
        let model = one_split_model();
        let groups_ab: Vec<Option<usize>> = vec![Some(0), Some(0), Some(1), Some(1)];

        // both groups on the positive side: attribution means agree
        let x = DenseMatrix::from_rows(&[
            vec![0.5, 0.0],
            vec![0.7, 0.0],
            vec![0.3, 0.0],
            vec![0.9, 0.0],
        ]);
        let table =
            direction_consistency(&model, &x, &[(Axis::Sex, groups_ab.clone())], 1).unwrap();
        assert_eq!(table.rows[0].dimension, 0);
        assert_eq!(table.rows[0].directions[0].1, Direction::Same);

        // groups on different sides: sign conflict
        let x = DenseMatrix::from_rows(&[
            vec![-0.5, 0.0],
            vec![-0.7, 0.0],
            vec![0.3, 0.0],
            vec![0.9, 0.0],
        ]);
        let table =
            direction_consistency(&model, &x, &[(Axis::Sex, groups_ab.clone())], 1).unwrap();
        assert_eq!(table.rows[0].directions[0].1, Direction::Opposite);

        // one group straddles the split evenly: its mean attribution
        // vanishes and the call is indeterminate
        let x = DenseMatrix::from_rows(&[
            vec![-0.5, 0.0],
            vec![0.5, 0.0],
            vec![0.3, 0.0],
            vec![0.9, 0.0],
        ]);
        let table = direction_consistency(&model, &x, &[(Axis::Sex, groups_ab)], 1).unwrap();
        assert_eq!(table.rows[0].directions[0].1, Direction::Indeterminate);
    }

    /// Fitted-model fixture: feature 0 is informative and group-shifted
    /// (one group sits below the population mean, the other above), so its
    /// per-group mean attributions take opposite signs.
    fn direction_fixture() -> (GbtModel, DenseMatrix, Vec<Option<usize>>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 600;
        let mut x = DenseMatrix::zeros(n, 3);
        let mut y = Vec::with_capacity(n);
        let mut group = Vec::with_capacity(n);
        for i in 0..n {
            let g = usize::from(rng.gen::<bool>());
            let shift = if g == 1 { 0.6 } else { -0.6 };
            x.set(i, 0, rng.gen_range(-1.0..1.0) + shift);
            x.set(i, 1, rng.gen_range(-1.0..1.0));
            x.set(i, 2, rng.gen_range(-1.0..1.0));
            y.push(u8::from(x.get(i, 0) + 0.5 * x.get(i, 1) > 0.0));
            group.push(Some(g));
        }
        let params = GbtParams {
            n_estimators: 40,
            max_depth: 3,
            learning_rate: 0.3,
            ..GbtParams::default()
        };
        let model = fit_gbt(&x, &y, &vec![1.0; n], &params).unwrap();
        (model, x, group)
    }

    #[test]
    fn direction_consistency_flags_sign_conflicts() {
        let (model, x, group) = direction_fixture();
        let table = direction_consistency(&model, &x, &[(Axis::Sex, group)], 3).unwrap();
        assert_eq!(table.rows.len(), 3);
        let f0 = table.rows.iter().find(|r| r.dimension == 0).expect("feature 0 ranked");
        assert_eq!(f0.directions[0].1, Direction::Opposite);
    }

    #[test]
    fn direction_consistency_invariant_to_group_relabel() {
        let (model, x, group) = direction_fixture();
        let swapped: Vec<Option<usize>> =
            group.iter().map(|g| g.map(|v| 1 - v)).collect();
        let a = direction_consistency(&model, &x, &[(Axis::Sex, group)], 3).unwrap();
        let b = direction_consistency(&model, &x, &[(Axis::Sex, swapped)], 3).unwrap();
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra.dimension, rb.dimension);
            assert_eq!(ra.directions[0].1, rb.directions[0].1);
        }
    }

    #[test]
    fn bias_report_deltas_match_their_own_tables() {
        let spec = OracleSpec::biased(8, 0.25);
        let (x, samples, _) = generate_synthetic(&spec, 3000, 13).unwrap();
        let train = samples.split_indices(Split::Train);
        let pca = fit_pca(&x.data().select_rows(&train), 0.95).unwrap();
        let reduced = pca_transform(&pca, x.data()).unwrap();
        let train_reduced = reduced.select_rows(&train);
        let labels: Vec<Vec<Label>> = (0..samples.n_conditions())
            .map(|c| train.iter().map(|&i| samples.label(c, i)).collect())
            .collect();
        let mut params = HeadParams::default();
        params.gbt.n_estimators = 20;
        params.gbt.max_depth = 3;
        let names = samples.condition_names().to_vec();
        let model = train_multihead(
            HeadKind::Gbt,
            &train_reduced,
            &labels,
            &names,
            &vec![1.0; train.len()],
            &params,
            7,
        )
        .unwrap()
        .with_pca(pca);

        let report = bias_report(&model, &x, &samples).unwrap();
        for cond in &report.conditions {
            for sub in &cond.subgroups {
                let max =
                    sub.per_group.iter().map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
                let min = sub.per_group.iter().map(|(_, v)| *v).fold(f64::INFINITY, f64::min);
                assert!((sub.delta - (max - min)).abs() < 1e-12);
                assert!(sub.delta >= 0.0);
            }
        }
        let k = report.conditions.len() as f64;
        let mean_race: f64 = report
            .conditions
            .iter()
            .map(|c| c.subgroups.iter().find(|s| s.axis == Axis::Race).unwrap().delta)
            .sum::<f64>()
            / k;
        assert!((report.mean_delta_race - mean_race).abs() < 1e-12);
        let expect = composite_score(
            report.mean_auprc,
            report.mean_delta_sex,
            report.mean_delta_age,
            report.mean_delta_race,
        );
        assert!((report.composite - expect).abs() < 1e-12);
    }

    #[test]
    fn identical_group_behavior_gives_zero_delta() {
        // same scores and labels in both sex groups
        let scores = [0.9, 0.4, 0.8, 0.1, 0.9, 0.4, 0.8, 0.1];
        let labels = [1, 0, 1, 0, 1, 0, 1, 0];
        let groups: Vec<Option<usize>> =
            [0, 0, 0, 0, 1, 1, 1, 1].iter().map(|&g| Some(g)).collect();
        let r = subgroup_auprc(&scores, &labels, &groups, Axis::Sex).unwrap();
        assert_eq!(r.delta, 0.0);
    }

    #[test]
    fn projection_has_one_point_per_sample() {
        let spec = OracleSpec::null(5);
        let (x, samples, _) = generate_synthetic(&spec, 300, 2).unwrap();
        let coords = projection_2d(&x, &samples).unwrap();
        assert_eq!(coords.len(), 300);
        assert!(coords.iter().all(|(a, b)| a.is_finite() && b.is_finite()));
    }
}
