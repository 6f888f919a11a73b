//! Ablation harness: train and evaluate each model variant under one
//! protocol — a seeded stratified holdout split.

use crate::config::RunConfig;
use crate::error::Result;
use crate::model::Model;
use crate::trainer::cv::{holdout_split, loss_weights, resolve_classes};
use crate::trainer::data::Dataset;
use crate::trainer::losses::Variant;
use crate::trainer::metrics::MetricsReport;
use crate::trainer::train::{evaluate, train, Hyperparams};

/// Fraction of each class held out for evaluation.
const ABLATION_TEST_FRACTION: f64 = 0.25;

/// Train one variant on a stratified holdout and evaluate it.
pub fn run_ablation(
    cfg: &RunConfig,
    data: &Dataset,
    variant: Variant,
    seed: u64,
) -> Result<MetricsReport> {
    let mut cfg = resolve_classes(cfg, data);
    cfg.variant = variant;
    let (train_idx, test_idx) = holdout_split(data, ABLATION_TEST_FRACTION, seed);
    let mut model = Model::new(&cfg, seed)?;
    let hyper = Hyperparams::from_config(&cfg);
    let weights = loss_weights(&cfg);
    train(&mut model, data, &train_idx, &hyper, &weights, seed)?;
    evaluate(&model, data, &test_idx, None, variant.as_str(), seed)
}

/// All five variants on the same split and seed, one invocation.
pub fn ablation_report(cfg: &RunConfig, data: &Dataset, seed: u64) -> Result<Vec<MetricsReport>> {
    Variant::all()
        .iter()
        .map(|v| run_ablation(cfg, data, *v, seed))
        .collect()
}

/// Render the variant table as aligned plain text.
pub fn format_ablation_table(reports: &[MetricsReport]) -> String {
    let mut out = String::from(format!(
        "{:<14} {:>9} {:>9} {:>9} {:>9}\n",
        "variant", "precision", "recall", "accuracy", "f1"
    ));
    for r in reports {
        out.push_str(&format!(
            "{:<14} {:>9.2} {:>9.2} {:>9.2} {:>9.2}\n",
            r.variant, r.precision, r.recall, r.accuracy, r.f1
        ));
    }
    out
}
