//! Training loop: one graph per batch (so batch norm sees cross-sample
//! statistics), Adam updates, batch-norm running statistics, loss curves,
//! and the evaluation entry point.
//!
//! Losses are computed in the subject's normalized coordinate frame — the
//! same space the encoder consumes — with targets mapped there by the
//! stored preprocessing statistics. Public decoding applies the inverse
//! transform instead, so reported predictions live at the input scale.

use rand::seq::SliceRandom;

use crate::diffcore::{Adam, AdamConfig, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::init::seeded_rng;
use crate::model::Model;
use crate::nn::{apply_batch_norm_updates, GraphCtx};
use crate::trainer::data::{Dataset, PreparedSample};
use crate::trainer::losses::{DiscMode, LossBreakdown, LossWeights};
use crate::trainer::metrics::{compute_report, MetricsReport};

#[derive(Debug, Clone, Copy)]
pub struct Hyperparams {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Hold out 10% of the training split for per-epoch validation logging.
    pub validation: bool,
}

impl Hyperparams {
    pub fn from_config(cfg: &crate::config::RunConfig) -> Self {
        Hyperparams {
            batch_size: cfg.batch_size,
            learning_rate: cfg.learning_rate,
            epochs: cfg.epochs,
            validation: cfg.validation,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EpochLosses {
    pub epoch: usize,
    pub ados: f64,
    pub phys: f64,
    pub nonphys: f64,
    pub disc: f64,
    pub total: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOutcome {
    pub curves: Vec<EpochLosses>,
}

/// Node ids of one sample's loss terms within a batch graph.
pub struct SampleTermNodes {
    pub ados: NodeId,
    pub phys: Option<NodeId>,
    pub nonphys: Option<NodeId>,
    pub disc: Option<NodeId>,
    pub total: NodeId,
    pub disc_disabled: bool,
}

/// A finished batch loss graph.
pub struct BatchLossNodes {
    pub graph: Graph,
    pub bn_nodes: Vec<(String, NodeId)>,
    pub per_sample: Vec<SampleTermNodes>,
    /// Mean of the per-sample totals; the optimization objective.
    pub batch_total: NodeId,
}

impl BatchLossNodes {
    pub fn breakdown(&self, sample: usize) -> LossBreakdown {
        let s = &self.per_sample[sample];
        LossBreakdown {
            ados: self.graph.value(s.ados).item(),
            phys: s.phys.map_or(0.0, |n| self.graph.value(n).item()),
            nonphys: s.nonphys.map_or(0.0, |n| self.graph.value(n).item()),
            disc: s.disc.map_or(0.0, |n| self.graph.value(n).item()),
            disc_disabled: s.disc_disabled,
            total: self.graph.value(s.total).item(),
        }
    }
}

/// Build the training graph for a batch of samples: encoder (shared batch
/// statistics), classifier, whichever decoder branches the variant has, and
/// the weighted per-sample totals averaged into one objective.
pub fn batch_loss(
    model: &Model,
    samples: &[&PreparedSample],
    weights: &LossWeights,
) -> Result<BatchLossNodes> {
    weights.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut ctx = GraphCtx::new(&model.store, true);
    let with_decoders = model.phys_dec.is_some() || model.nonphys_dec.is_some();
    let inputs: Vec<(&crate::skeldata::SkeletonSequence, usize)> =
        samples.iter().map(|s| (&s.obs, s.action)).collect();
    let all_nodes = model.forward_batch_nodes(
        &mut ctx,
        &inputs,
        with_decoders,
        crate::decoders::Reprojection::Learned,
    )?;

    let horizon = model.cfg.pred_len as f64;
    let mut per_sample = Vec::with_capacity(samples.len());
    let mut totals = Vec::with_capacity(samples.len());
    for (sample, nodes) in samples.iter().zip(all_nodes) {
        let ados = ctx
            .gb
            .cross_entropy(nodes.logits, vec![sample.label_index])?;
        let mut total = ctx.gb.scale(ados, weights.ados)?;

        let phys_pred = nodes.phys.as_ref().map(|p| p.frames);
        let nonphys_pred = nodes.nonphys.as_ref().map(|n| n.frames);

        let phys = match phys_pred {
            Some(pred) => {
                // Dual-target data trains the physics branch toward the
                // partner's future, single-target toward the subject's own.
                let target = sample
                    .target_partner_norm
                    .as_ref()
                    .unwrap_or(&sample.target_self_norm);
                let t = ctx.gb.constant(target.clone());
                let mse = ctx.gb.mse(pred, t)?;
                let term = ctx.gb.scale(mse, horizon)?;
                let weighted = ctx.gb.scale(term, weights.phys)?;
                total = ctx.gb.add(total, weighted)?;
                Some(term)
            }
            None => None,
        };
        let nonphys = match nonphys_pred {
            Some(pred) => {
                let t = ctx.gb.constant(sample.target_self_norm.clone());
                let mse = ctx.gb.mse(pred, t)?;
                let term = ctx.gb.scale(mse, horizon)?;
                let weighted = ctx.gb.scale(term, weights.nonphys)?;
                total = ctx.gb.add(total, weighted)?;
                Some(term)
            }
            None => None,
        };

        let disc_applicable = model.cfg.variant.has_discriminative_loss()
            && sample.is_dual_target()
            && weights.disc != 0.0
            && phys_pred.is_some()
            && nonphys_pred.is_some();
        let disc = if disc_applicable {
            let s_mat = ctx.gb.mse(phys_pred.unwrap(), nonphys_pred.unwrap())?;
            let s = ctx.gb.scale(s_mat, horizon)?;
            let term = match weights.mode {
                DiscMode::Add => s,
                DiscMode::Subtract => ctx.gb.scale(s, -1.0)?,
                DiscMode::Hinge => {
                    let margin = ctx.gb.constant(Tensor::scalar(weights.margin));
                    let gap = ctx.gb.sub(margin, s)?;
                    ctx.gb.relu(gap)?
                }
            };
            let weighted = ctx.gb.scale(term, weights.disc)?;
            total = ctx.gb.add(total, weighted)?;
            Some(term)
        } else {
            None
        };

        totals.push(ctx.gb.reshape(total, vec![1, 1])?);
        per_sample.push(SampleTermNodes {
            ados,
            phys,
            nonphys,
            disc,
            total,
            disc_disabled: disc.is_none(),
        });
    }
    let batch_total = if totals.len() == 1 {
        ctx.gb.mean(totals[0])?
    } else {
        let stacked = ctx.gb.concat_rows(totals)?;
        ctx.gb.mean(stacked)?
    };
    let (graph, bn_nodes) = ctx.finish(batch_total);
    Ok(BatchLossNodes {
        graph,
        bn_nodes,
        per_sample,
        batch_total,
    })
}

/// Single-sample convenience wrapper around [`batch_loss`].
pub fn sample_loss(
    model: &Model,
    sample: &PreparedSample,
    weights: &LossWeights,
) -> Result<BatchLossNodes> {
    batch_loss(model, &[sample], weights)
}

/// Train in place over the given sample indices. Deterministic for a fixed
/// seed: shuffles, initialization and updates all derive from it.
pub fn train(
    model: &mut Model,
    data: &Dataset,
    train_idx: &[usize],
    hyper: &Hyperparams,
    weights: &LossWeights,
    seed: u64,
) -> Result<TrainOutcome> {
    if train_idx.is_empty() {
        return Err(Error::InvalidArgument("empty training split".into()));
    }
    let mut rng = seeded_rng(seed);
    let mut adam = Adam::new(AdamConfig::with_lr(hyper.learning_rate));

    // Optional 10% validation holdout, carved off before any epoch.
    let mut pool: Vec<usize> = train_idx.to_vec();
    pool.shuffle(&mut rng);
    let (train_set, val_set) = if hyper.validation && pool.len() >= 10 {
        let n_val = (pool.len() / 10).max(1);
        let val = pool.split_off(pool.len() - n_val);
        (pool, val)
    } else {
        (pool, Vec::new())
    };

    let mut curves = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        let mut order = train_set.clone();
        order.shuffle(&mut rng);
        let mut sums = LossBreakdown::default();
        let mut count = 0usize;
        for (batch_no, batch) in order.chunks(hyper.batch_size).enumerate() {
            let members: Vec<&PreparedSample> =
                batch.iter().map(|&i| &data.samples[i]).collect();
            let nodes = batch_loss(model, &members, weights)?;
            if !nodes.graph.value(nodes.batch_total).item().is_finite() {
                return Err(Error::NanLoss {
                    epoch,
                    batch: batch_no,
                });
            }
            for s in 0..members.len() {
                let b = nodes.breakdown(s);
                sums.ados += b.ados;
                sums.phys += b.phys;
                sums.nonphys += b.nonphys;
                sums.disc += b.disc;
                sums.total += b.total;
                count += 1;
            }
            let (_, grads) = nodes.graph.param_gradients()?;
            apply_batch_norm_updates(&nodes.graph, &nodes.bn_nodes, &mut model.store);
            adam.step(&mut model.store, &grads)?;
        }
        let n = count.max(1) as f64;
        let val_accuracy = if val_set.is_empty() {
            None
        } else {
            let mut correct = 0usize;
            for &i in &val_set {
                let s = &data.samples[i];
                if model.predict(&s.obs, s.action)? == s.label_index {
                    correct += 1;
                }
            }
            Some(100.0 * correct as f64 / val_set.len() as f64)
        };
        curves.push(EpochLosses {
            epoch,
            ados: sums.ados / n,
            phys: sums.phys / n,
            nonphys: sums.nonphys / n,
            disc: sums.disc / n,
            total: sums.total / n,
            val_accuracy,
        });
    }
    Ok(TrainOutcome { curves })
}

/// Evaluate a trained model over the given sample indices.
pub fn evaluate(
    model: &Model,
    data: &Dataset,
    idx: &[usize],
    fold_id: Option<usize>,
    variant: &str,
    seed: u64,
) -> Result<MetricsReport> {
    if idx.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation split".into()));
    }
    let mut truth = Vec::with_capacity(idx.len());
    let mut pred = Vec::with_capacity(idx.len());
    for &i in idx {
        let s = &data.samples[i];
        if s.label_index >= model.classifier.cfg.classes {
            return Err(Error::InvalidArgument(format!(
                "label index {} outside [0, {})",
                s.label_index, model.classifier.cfg.classes
            )));
        }
        truth.push(s.label_index);
        pred.push(model.predict(&s.obs, s.action)?);
    }
    // Metric classes follow the dataset's label set; the model may not
    // predict beyond it.
    compute_report(&truth, &pred, &data.label_values, fold_id, variant, seed)
}
