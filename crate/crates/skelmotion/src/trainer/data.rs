//! Sample preparation: windowing, preprocessing, target extraction, and
//! label-index mapping.

use std::collections::HashMap;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::skeldata::{
    load_dataset, preprocess, DatasetManifest, FoldSplit, LoadedSample, PreprocessStats,
    SkeletonSequence,
};

/// One training-ready sample. The observed window is preprocessed; the
/// future targets stay at the input scale and predictions are mapped back
/// with the stored statistics before the loss.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub obs: SkeletonSequence,
    pub stats: PreprocessStats,
    /// pred_len x (joints * dims), the subject's own future frames at the
    /// input scale.
    pub target_self: Tensor,
    /// The interaction partner's future frames when the manifest names one.
    pub target_partner: Option<Tensor>,
    /// The same targets mapped into the subject's normalized coordinate
    /// frame; the training loss compares predictions there.
    pub target_self_norm: Tensor,
    pub target_partner_norm: Option<Tensor>,
    pub label_index: usize,
    pub label_value: i64,
    pub action: usize,
}

impl PreparedSample {
    pub fn is_dual_target(&self) -> bool {
        self.target_partner.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<PreparedSample>,
    /// Sorted distinct severity labels; class index = position here.
    pub label_values: Vec<i64>,
    /// Manifest entry index -> position in `samples`.
    by_manifest: HashMap<usize, usize>,
}

impl Dataset {
    /// Window, preprocess and label every child entry of a manifest.
    pub fn from_manifest(
        manifest: &DatasetManifest,
        input_len: usize,
        pred_len: usize,
    ) -> Result<Dataset> {
        let loaded = load_dataset(manifest)?;
        let child_indices = manifest.child_indices();
        let label_values = manifest.label_set();
        let mut samples = Vec::with_capacity(loaded.len());
        let mut by_manifest = HashMap::new();
        for (pos, (entry_idx, sample)) in child_indices.iter().zip(loaded).enumerate() {
            let id = &manifest.entries[*entry_idx].id;
            let prepared = prepare_sample(&sample, input_len, pred_len, &label_values)
                .map_err(|e| Error::InvalidArgument(format!("sequence `{id}`: {e}")))?;
            by_manifest.insert(*entry_idx, pos);
            samples.push(prepared);
        }
        Ok(Dataset {
            samples,
            label_values,
            by_manifest,
        })
    }

    /// Build directly from in-memory sequences (child, optional partner).
    pub fn from_sequences(
        children: Vec<(SkeletonSequence, Option<SkeletonSequence>)>,
        input_len: usize,
        pred_len: usize,
    ) -> Result<Dataset> {
        let mut label_values: Vec<i64> = children.iter().map(|(c, _)| c.severity_label).collect();
        label_values.sort_unstable();
        label_values.dedup();
        let mut samples = Vec::with_capacity(children.len());
        let mut by_manifest = HashMap::new();
        for (pos, (child, partner)) in children.into_iter().enumerate() {
            let loaded = LoadedSample {
                seq: child,
                partner,
            };
            samples.push(prepare_sample(&loaded, input_len, pred_len, &label_values)?);
            by_manifest.insert(pos, pos);
        }
        Ok(Dataset {
            samples,
            label_values,
            by_manifest,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Translate a manifest-indexed fold into sample indices.
    pub fn fold_sample_indices(&self, fold: &FoldSplit) -> Result<(Vec<usize>, Vec<usize>)> {
        let map = |ids: &[usize]| -> Result<Vec<usize>> {
            ids.iter()
                .map(|i| {
                    self.by_manifest.get(i).copied().ok_or_else(|| {
                        Error::InvalidArgument(format!("fold references unknown entry {i}"))
                    })
                })
                .collect()
        };
        Ok((map(&fold.train)?, map(&fold.test)?))
    }
}

fn prepare_sample(
    loaded: &LoadedSample,
    input_len: usize,
    pred_len: usize,
    label_values: &[i64],
) -> Result<PreparedSample> {
    let seq = &loaded.seq;
    let needed = input_len + pred_len;
    if seq.frames < needed {
        return Err(Error::InvalidArgument(format!(
            "{} frames, need {} (observed {} + predicted {})",
            seq.frames, needed, input_len, pred_len
        )));
    }
    let obs_raw = seq.window(0, input_len)?;
    let (obs, stats) = preprocess(&obs_raw)?;
    let target_self = future_tensor(seq, input_len, pred_len)?;
    let target_partner = match &loaded.partner {
        Some(p) => {
            if p.frames < needed {
                return Err(Error::InvalidArgument(format!(
                    "partner has {} frames, need {}",
                    p.frames, needed
                )));
            }
            if p.joints != seq.joints || p.dims != seq.dims {
                return Err(Error::InvalidArgument(
                    "partner skeleton shape differs from subject".into(),
                ));
            }
            Some(future_tensor(p, input_len, pred_len)?)
        }
        None => None,
    };
    let label_index = label_values
        .iter()
        .position(|l| *l == seq.severity_label)
        .ok_or_else(|| {
            Error::InvalidArgument(format!("label {} not in label set", seq.severity_label))
        })?;
    let normalize = |t: &Tensor| {
        let mut n = t.clone();
        stats.apply(n.data_mut());
        n
    };
    Ok(PreparedSample {
        target_self_norm: normalize(&target_self),
        target_partner_norm: target_partner.as_ref().map(&normalize),
        obs,
        stats,
        target_self,
        target_partner,
        label_index,
        label_value: seq.severity_label,
        action: seq.action_class,
    })
}

/// Future frames [input_len, input_len + pred_len) as a pred_len x
/// (joints * dims) matrix at the input scale.
fn future_tensor(seq: &SkeletonSequence, input_len: usize, pred_len: usize) -> Result<Tensor> {
    let w = seq.joints * seq.dims;
    let mut data = Vec::with_capacity(pred_len * w);
    for t in input_len..input_len + pred_len {
        data.extend_from_slice(seq.frame(t));
    }
    Tensor::matrix(pred_len, w, data)
}
