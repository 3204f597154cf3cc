//! Pool-based active learning: start from a seeded random labeled set, then
//! repeatedly move the most uncertain (or most diverse) pool samples into the
//! labeled set and retrain.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MitigateError;
use crate::dataio::{Axis, Label};
use crate::heads::{train_multihead, HeadError, HeadKind, HeadParams, MultiHeadModel};
use crate::matrix::DenseMatrix;
use crate::metrics::{auprc, composite_score, subgroup_auprc};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AcquisitionStrategy {
    Uncertainty,
    Diversity,
}

impl std::str::FromStr for AcquisitionStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uncertainty" => Ok(AcquisitionStrategy::Uncertainty),
            "diversity" => Ok(AcquisitionStrategy::Diversity),
            other => Err(format!("unknown strategy `{other}` (expected uncertainty|diversity)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveLearningConfig {
    pub initial_pool: usize,
    pub batch_size: usize,
    pub rounds: usize,
    pub strategy: AcquisitionStrategy,
}

impl Default for ActiveLearningConfig {
    fn default() -> Self {
        ActiveLearningConfig {
            initial_pool: 15_000,
            batch_size: 2_000,
            rounds: 10,
            strategy: AcquisitionStrategy::Uncertainty,
        }
    }
}

/// Labeled-set size and validation composite score after each training round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActiveLearningRound {
    pub labeled: usize,
    pub composite: Option<f64>,
}

/// Per-sample uncertainty: `1 - 2|p - 0.5|` per condition, averaged over
/// conditions. 0.5 probabilities score 1, confident ones approach 0.
pub fn uncertainty_scores(probs_per_condition: &[Vec<f64>]) -> Vec<f64> {
    assert!(!probs_per_condition.is_empty());
    let n = probs_per_condition[0].len();
    let mut out = vec![0.0; n];
    for probs in probs_per_condition {
        assert_eq!(probs.len(), n);
        for (o, p) in out.iter_mut().zip(probs) {
            debug_assert!((0.0..=1.0).contains(p));
            *o += 1.0 - 2.0 * (p - 0.5).abs();
        }
    }
    for o in &mut out {
        *o /= probs_per_condition.len() as f64;
    }
    out
}

/// Highest-uncertainty candidates, ties broken by lowest pool index.
pub(crate) fn select_batch_uncertainty(
    candidates: &[usize],
    scores: &[f64],
    batch: usize,
) -> Vec<usize> {
    assert_eq!(candidates.len(), scores.len());
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b].partial_cmp(&scores[a]).unwrap().then(candidates[a].cmp(&candidates[b]))
    });
    order.iter().take(batch).map(|&i| candidates[i]).collect()
}

/// Greedy max-min-distance selection in the training feature space. Each pick
/// maximizes the squared distance to the nearest already-labeled (or
/// already-picked) row; ties break by lowest pool index.
fn select_batch_diversity(
    x: &DenseMatrix,
    labeled: &[usize],
    candidates: &[usize],
    batch: usize,
) -> Vec<usize> {
    let sq_dist = |a: usize, b: usize| -> f64 {
        x.row(a).iter().zip(x.row(b)).map(|(u, v)| (u - v) * (u - v)).sum()
    };
    let mut min_dist: Vec<f64> = candidates
        .iter()
        .map(|&c| labeled.iter().map(|&l| sq_dist(c, l)).fold(f64::INFINITY, f64::min))
        .collect();
    let mut picked = Vec::with_capacity(batch);
    let mut taken = vec![false; candidates.len()];
    for _ in 0..batch {
        let mut best: Option<usize> = None;
        for (j, &c) in candidates.iter().enumerate() {
            if taken[j] {
                continue;
            }
            match best {
                None => best = Some(j),
                Some(b) => {
                    if min_dist[j] > min_dist[b]
                        || (min_dist[j] == min_dist[b] && c < candidates[b])
                    {
                        best = Some(j);
                    }
                }
            }
        }
        let j = best.expect("batch never exceeds candidate count");
        taken[j] = true;
        picked.push(candidates[j]);
        for (i, &c) in candidates.iter().enumerate() {
            if !taken[i] {
                min_dist[i] = min_dist[i].min(sq_dist(c, candidates[j]));
            }
        }
    }
    picked
}

/// Anything that can train a multi-head model on a subset of pool rows. The
/// working feature matrix is passed per call because the loop may reduce the
/// pool with a PCA fitted on its own initial labeled set. The experiment
/// pipeline plugs in trainers that add augmentation or adversarial branches.
pub(crate) trait PoolTrainer {
    fn train(
        &self,
        x: &DenseMatrix,
        rows: &[usize],
        seed: u64,
    ) -> Result<MultiHeadModel, HeadError>;
}

pub(crate) struct StandardTrainer<'a> {
    pub labels: &'a [Vec<Label>],
    pub condition_names: &'a [String],
    pub weights: &'a [f64],
    pub kind: HeadKind,
    pub params: &'a HeadParams,
}

impl PoolTrainer for StandardTrainer<'_> {
    fn train(
        &self,
        x: &DenseMatrix,
        rows: &[usize],
        seed: u64,
    ) -> Result<MultiHeadModel, HeadError> {
        let x = x.select_rows(rows);
        let labels: Vec<Vec<Label>> = self
            .labels
            .iter()
            .map(|col| rows.iter().map(|&i| col[i]).collect())
            .collect();
        let weights: Vec<f64> = rows.iter().map(|&i| self.weights[i]).collect();
        train_multihead(self.kind, &x, &labels, self.condition_names, &weights, self.params, seed)
    }
}

/// Evaluation rows used to score each round's model with the composite
/// objective; features are raw (the model applies its own reduction).
pub struct EvalData<'a> {
    pub x: &'a DenseMatrix,
    pub labels: &'a [Vec<Label>],
    pub groups: &'a [(Axis, Vec<Option<usize>>)],
}

fn eval_composite(model: &MultiHeadModel, eval: &EvalData) -> Result<f64, MitigateError> {
    let probs = model.predict_proba_embeddings(eval.x)?;
    let mut sum_auprc = 0.0;
    let mut delta = [0.0; 3];
    let k = probs.len();
    for (c, scores_all) in probs.iter().enumerate() {
        let labeled: Vec<usize> =
            (0..eval.x.n_rows()).filter(|&i| eval.labels[c][i] != Label::Missing).collect();
        let scores: Vec<f64> = labeled.iter().map(|&i| scores_all[i]).collect();
        let labels: Vec<u8> =
            labeled.iter().map(|&i| eval.labels[c][i].as_binary().unwrap()).collect();
        sum_auprc += auprc(&scores, &labels)?;
        for (slot, (axis, assignment)) in eval.groups.iter().enumerate() {
            let groups: Vec<Option<usize>> = labeled.iter().map(|&i| assignment[i]).collect();
            delta[slot] += subgroup_auprc(&scores, &labels, &groups, *axis)?.delta;
        }
    }
    let kf = k as f64;
    Ok(composite_score(sum_auprc / kf, delta[0] / kf, delta[1] / kf, delta[2] / kf))
}

/// When `variance_target` is set, a PCA basis is fitted on the initial
/// labeled set only and frozen for the rest of the loop; acquisition
/// distances and uncertainties then live in that reduced space, and the
/// returned model carries the basis.
pub(crate) fn run_pool_loop(
    x_raw: &DenseMatrix,
    trainer: &dyn PoolTrainer,
    cfg: &ActiveLearningConfig,
    eval: Option<&EvalData>,
    variance_target: Option<f64>,
    seed: u64,
) -> Result<(MultiHeadModel, Vec<ActiveLearningRound>), MitigateError> {
    let m = x_raw.n_rows();
    let needed = cfg.initial_pool + cfg.rounds * cfg.batch_size;
    if cfg.initial_pool == 0 || needed > m {
        return Err(MitigateError::InfeasibleSchedule { pool: m, needed });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labeled: Vec<usize> =
        rand::seq::index::sample(&mut rng, m, cfg.initial_pool).into_vec();
    labeled.sort_unstable();
    let mut in_labeled = vec![false; m];
    for &i in &labeled {
        in_labeled[i] = true;
    }

    let pca = match variance_target {
        Some(vt) => Some(crate::linalg::fit_pca(&x_raw.select_rows(&labeled), vt)?),
        None => None,
    };
    let x_work = match &pca {
        Some(p) => crate::linalg::pca_transform(p, x_raw)?,
        None => x_raw.clone(),
    };
    let attach = |mut model: MultiHeadModel| {
        if let Some(p) = &pca {
            model = model.with_pca(p.clone());
        }
        model
    };

    let mut history = Vec::with_capacity(cfg.rounds + 1);
    let mut model = attach(trainer.train(&x_work, &labeled, seed)?);
    history.push(ActiveLearningRound {
        labeled: labeled.len(),
        composite: eval.map(|e| eval_composite(&model, e)).transpose()?,
    });

    for _round in 0..cfg.rounds {
        let remaining: Vec<usize> = (0..m).filter(|&i| !in_labeled[i]).collect();
        let picks = match cfg.strategy {
            AcquisitionStrategy::Uncertainty => {
                let probs = model.predict_proba_reduced(&x_work.select_rows(&remaining))?;
                let scores = uncertainty_scores(&probs);
                select_batch_uncertainty(&remaining, &scores, cfg.batch_size)
            }
            AcquisitionStrategy::Diversity => {
                select_batch_diversity(&x_work, &labeled, &remaining, cfg.batch_size)
            }
        };
        for &i in &picks {
            debug_assert!(!in_labeled[i]);
            in_labeled[i] = true;
        }
        labeled.extend(picks);
        labeled.sort_unstable();
        model = attach(trainer.train(&x_work, &labeled, seed)?);
        history.push(ActiveLearningRound {
            labeled: labeled.len(),
            composite: eval.map(|e| eval_composite(&model, e)).transpose()?,
        });
    }

    Ok((model, history))
}

/// Runs the pool loop with a plain head trainer on raw pool features. Labels
/// may contain missing entries; each acquisition can therefore add rows that
/// only some heads train on.
#[allow(clippy::too_many_arguments)]
pub fn active_learning_loop(
    x: &DenseMatrix,
    labels: &[Vec<Label>],
    condition_names: &[String],
    weights: &[f64],
    cfg: &ActiveLearningConfig,
    kind: HeadKind,
    params: &HeadParams,
    eval: Option<&EvalData>,
    variance_target: Option<f64>,
    seed: u64,
) -> Result<(MultiHeadModel, Vec<ActiveLearningRound>), MitigateError> {
    let trainer = StandardTrainer { labels, condition_names, weights, kind, params };
    run_pool_loop(x, &trainer, cfg, eval, variance_target, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::{HeadModel, LogisticModel};

    #[test]
    fn uncertainty_formula() {
        assert_eq!(uncertainty_scores(&[vec![0.5]]), vec![1.0]);
        let u = uncertainty_scores(&[vec![0.9]]);
        assert!((u[0] - 0.2).abs() < 1e-12);
        let u = uncertainty_scores(&[vec![0.5], vec![0.9]]);
        assert!((u[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn batch_selection_prefers_uncertain_then_low_index() {
        let candidates = [3, 5, 8, 9];
        let scores = [0.2, 0.9, 0.9, 0.4];
        assert_eq!(select_batch_uncertainty(&candidates, &scores, 2), vec![5, 8]);
        // full tie: lowest indices first
        let scores = [0.5, 0.5, 0.5, 0.5];
        assert_eq!(select_batch_uncertainty(&candidates, &scores, 3), vec![3, 5, 8]);
    }

    /// Stub trainer: a fixed linear model regardless of the labeled set, so
    /// acquisition follows hand-computable uncertainties.
    struct StubTrainer;

    impl PoolTrainer for StubTrainer {
        fn train(
            &self,
            _x: &DenseMatrix,
            _rows: &[usize],
            _seed: u64,
        ) -> Result<MultiHeadModel, HeadError> {
            Ok(MultiHeadModel {
                condition_names: vec!["cardiomegaly".to_string()],
                heads: vec![HeadModel::Logistic(LogisticModel {
                    weights: vec![1.0],
                    intercept: 0.0,
                })],
                pca: None,
            })
        }
    }

    /// Records which rows each training round saw.
    struct RecordingTrainer(std::cell::RefCell<Vec<Vec<usize>>>);

    impl PoolTrainer for RecordingTrainer {
        fn train(
            &self,
            x: &DenseMatrix,
            rows: &[usize],
            _seed: u64,
        ) -> Result<MultiHeadModel, HeadError> {
            self.0.borrow_mut().push(rows.to_vec());
            StubTrainer.train(x, rows, 0)
        }
    }

    #[test]
    fn loop_follows_hand_traced_uncertainty_order() {
        // The stub model's margin equals the (non-negative) feature value, so
        // uncertainty strictly decreases with the value: each round must pick
        // the lowest-valued remaining rows.
        let values: Vec<f64> = (0..10).map(|i| i as f64 * 0.3).collect();
        let x = DenseMatrix::from_vec(10, 1, values);
        let cfg = ActiveLearningConfig {
            initial_pool: 4,
            batch_size: 2,
            rounds: 2,
            strategy: AcquisitionStrategy::Uncertainty,
        };
        let trainer = RecordingTrainer(std::cell::RefCell::new(Vec::new()));
        let (_, history) = run_pool_loop(&x, &trainer, &cfg, None, None, 7).unwrap();
        assert_eq!(history.iter().map(|r| r.labeled).collect::<Vec<_>>(), vec![4, 6, 8]);

        let seen = trainer.0.into_inner();
        assert_eq!(seen.len(), 3);
        let initial = &seen[0];
        // hand trace: each round adds the two smallest-index-by-value rows
        // not yet labeled (values increase with index here)
        let mut expected = initial.clone();
        for round in 1..=2 {
            let picks: Vec<usize> =
                (0..10).filter(|i| !expected.contains(i)).take(2).collect();
            expected.extend(picks);
            expected.sort_unstable();
            assert_eq!(seen[round], expected, "round {round}");
        }
        // strictly growing, no duplicates
        for w in seen.windows(2) {
            assert!(w[0].len() < w[1].len());
            assert!(w[1].windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn infeasible_schedule_rejected() {
        let x = DenseMatrix::zeros(10, 1);
        let cfg = ActiveLearningConfig {
            initial_pool: 4,
            batch_size: 4,
            rounds: 2,
            strategy: AcquisitionStrategy::Uncertainty,
        };
        let err = run_pool_loop(&x, &StubTrainer, &cfg, None, None, 1).unwrap_err();
        assert!(matches!(err, MitigateError::InfeasibleSchedule { pool: 10, needed: 12 }));
    }

    #[test]
    fn diversity_picks_far_points_first() {
        // labeled at 0; candidates at 1, 5, 10 on a line
        let x = DenseMatrix::from_vec(4, 1, vec![0.0, 1.0, 5.0, 10.0]);
        let picks = select_batch_diversity(&x, &[0], &[1, 2, 3], 2);
        assert_eq!(picks, vec![3, 2]);
    }
}
