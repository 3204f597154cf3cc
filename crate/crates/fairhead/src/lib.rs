/*!
Bias detection and mitigation for classifier heads trained on frozen image-encoder
embeddings.

The library ingests precomputed embeddings together with multi-label condition
targets and demographic attributes (sex, age, race), retrains classifier heads on
top of the frozen representation (centrally a from-scratch gradient-boosted tree
multi-head), quantifies subgroup performance gaps with AUPRC-based and
threshold-based fairness metrics, and applies head-level mitigation strategies:
subgroup reweighting, targeted embedding augmentation, adversarial training, and
pool-based active learning.

Everything is seeded and deterministic: the same configuration, data, and seed
produce bit-identical models and numeric tables regardless of thread count.

The crate ships a synthetic benchmark generator with a known bias oracle so the
whole pipeline can be exercised and verified without access to clinical data.
See the `examples/` directory for one runnable walkthrough per capability, and
the `fairhead` binary for the scriptable command-line surface.
*/

pub mod cli;
pub mod dataio;
pub mod detect;
pub mod gbt;
pub mod heads;
pub mod linalg;
pub mod matrix;
pub mod metrics;
pub mod mitigate;
pub mod report;

mod binio;

pub use dataio::{
    derive_age_group, generate_synthetic, read_embeddings, read_samples, write_embeddings,
    write_samples, AgeGroup, Axis, DataError, EmbeddingMatrix, Label, OracleSpec, Race,
    SampleTable, Sex, Split,
};
pub use gbt::{
    fit_gbt, logloss_grad_hess, split_gain, tree_shapley, GbtError, GbtModel, GbtParams,
    ShapleyAttribution,
};
pub use heads::{
    filter_conditions, train_adversarial_mlp, train_head, train_multihead, AdversarialParams,
    HeadError, HeadKind, HeadModel, HeadParams, MultiHeadModel,
};
pub use linalg::{fit_pca, pca_transform, LinalgError, PcaModel};
pub use detect::{
    bias_report, direction_consistency, leakage_probe, prevalence_table, DetectError,
    DirectionTable, FairnessReport, LeakageResult, PrevalenceTable,
};
pub use metrics::{
    aggregate_runs, auprc, composite_score, confusion_rates, disagreement_rate,
    equalized_odds_gap, pr_curve, roc_auc, select_threshold_min_recall, subgroup_auprc,
    ConfusionRates, MetricError, PrCurve, RunAggregate, SubgroupResult,
};
pub use mitigate::{
    active_learning_loop, augment_subgroup, balance_weights, run_experiment, tune_hyperparams,
    uncertainty_scores, ActiveLearningConfig, ExperimentConfig, MitigateError, Mitigation,
    RunResult,
};
