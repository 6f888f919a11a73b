//! k-fold cross-validation over a manifest-backed dataset.

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::Result;
use crate::init::seeded_rng;
use crate::model::Model;
use crate::skeldata::{make_folds, DatasetManifest};
use crate::trainer::data::Dataset;
use crate::trainer::losses::LossWeights;
use crate::trainer::metrics::{compute_report, MetricsReport};
use crate::trainer::train::{evaluate, train, EpochLosses, Hyperparams, TrainOutcome};

#[derive(Debug, Clone)]
pub struct CvOutcome {
    /// One report per fold, in fold order.
    pub folds: Vec<MetricsReport>,
    /// Micro-average over the pooled fold confusions (every test prediction
    /// of every fold counted once).
    pub aggregate: MetricsReport,
    /// Mean of the per-fold accuracies, reported alongside the pooled
    /// aggregate.
    pub fold_mean_accuracy: f64,
    pub curves: Vec<Vec<EpochLosses>>,
}

pub fn loss_weights(cfg: &RunConfig) -> LossWeights {
    LossWeights {
        ados: cfg.w_ados,
        phys: cfg.w_phys,
        nonphys: cfg.w_nonphys,
        disc: cfg.w_disc,
        mode: cfg.disc_mode,
        margin: cfg.disc_margin,
    }
}

/// Resolve `classes = 0` against the dataset's label set.
pub fn resolve_classes(cfg: &RunConfig, data: &Dataset) -> RunConfig {
    let mut cfg = cfg.clone();
    if cfg.classes == 0 {
        cfg.classes = data.label_values.len().max(2);
    }
    cfg
}

/// Per-fold model seed. Offset keeps fold models distinct while staying a
/// pure function of the run seed.
fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_add(1).wrapping_add(fold as u64).wrapping_mul(0x9e3779b97f4a7c15)
}

/// One train/evaluate cycle per fold. Folds are fully independent model
/// instances; with `cfg.parallel_folds` they run on the thread pool, and
/// the outcome is identical either way because every fold's seed and data
/// split are fixed up front.
pub fn cross_validate(
    manifest: &DatasetManifest,
    data: &Dataset,
    cfg: &RunConfig,
    k: usize,
    seed: u64,
) -> Result<CvOutcome> {
    let cfg = resolve_classes(cfg, data);
    let folds = make_folds(manifest, k, seed, cfg.subject_disjoint)?;
    let hyper = Hyperparams::from_config(&cfg);
    let weights = loss_weights(&cfg);

    let run_fold = |fold_id: usize| -> Result<(MetricsReport, TrainOutcome, Vec<usize>, Vec<usize>)> {
        let (train_idx, test_idx) = data.fold_sample_indices(&folds[fold_id])?;
        let mut model = Model::new(&cfg, fold_seed(seed, fold_id))?;
        let outcome = train(&mut model, data, &train_idx, &hyper, &weights, fold_seed(seed, fold_id))?;
        let report = evaluate(
            &model,
            data,
            &test_idx,
            Some(fold_id),
            cfg.variant.as_str(),
            seed,
        )?;
        // Pool raw predictions for the aggregate.
        let mut truth = Vec::new();
        let mut pred = Vec::new();
        for &i in &test_idx {
            let s = &data.samples[i];
            truth.push(s.label_index);
            pred.push(model.predict(&s.obs, s.action)?);
        }
        Ok((report, outcome, truth, pred))
    };

    let results: Vec<_> = if cfg.parallel_folds {
        (0..k).into_par_iter().map(run_fold).collect::<Result<_>>()?
    } else {
        (0..k).map(run_fold).collect::<Result<_>>()?
    };

    let mut fold_reports = Vec::with_capacity(k);
    let mut curves = Vec::with_capacity(k);
    let mut all_truth = Vec::new();
    let mut all_pred = Vec::new();
    let mut acc_sum = 0.0;
    for (report, outcome, truth, pred) in results {
        acc_sum += report.accuracy;
        fold_reports.push(report);
        curves.push(outcome.curves);
        all_truth.extend(truth);
        all_pred.extend(pred);
    }
    let aggregate = compute_report(
        &all_truth,
        &all_pred,
        &data.label_values,
        None,
        cfg.variant.as_str(),
        seed,
    )?;
    Ok(CvOutcome {
        aggregate,
        fold_mean_accuracy: acc_sum / k as f64,
        folds: fold_reports,
        curves,
    })
}

/// Seeded stratified holdout: within each class the samples are shuffled
/// and `test_fraction` of them (at least one) go to the test side.
pub fn holdout_split(data: &Dataset, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut rng = seeded_rng(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..data.label_values.len() {
        let mut members: Vec<usize> = (0..data.len())
            .filter(|i| data.samples[*i].label_index == class)
            .collect();
        members.shuffle(&mut rng);
        let n_test = ((members.len() as f64 * test_fraction).round() as usize)
            .max(1)
            .min(members.len().saturating_sub(1).max(1));
        for (pos, idx) in members.into_iter().enumerate() {
            if pos < n_test {
                test.push(idx);
            } else {
                train.push(idx);
            }
        }
    }
    (train, test)
}
