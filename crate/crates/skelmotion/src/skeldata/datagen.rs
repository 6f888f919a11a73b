//! Batch generation of synthetic datasets on disk: canonical sequence
//! files plus a manifest.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::skeldata::io::{write_canonical, write_manifest, ManifestEntry, SeqFormat};
use crate::skeldata::sequence::Role;
use crate::skeldata::synth::{synthesize_pair, synthesize_sequence, SynthClass, SynthConfig};

/// What a generated dataset is for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatagenSpec {
    /// One class only.
    Single(SynthClass),
    /// Balanced physics-consistent / force-perturbed children, each with a
    /// noise-free twin recorded as the interaction partner's trajectory.
    SeverityPairs,
    /// Fall-prediction surrogate: fall / stable in a 3:7 ratio.
    FallMix,
}

/// Generate `count` child sequences plus any partner files, write them as
/// canonical dumps under `out_dir`, and return the manifest path. The same
/// seed always reproduces the same files.
pub fn generate_dataset(
    spec: DatagenSpec,
    count: usize,
    seed: u64,
    cfg: &SynthConfig,
    out_dir: &Path,
) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let seq_seed = seed.wrapping_add(i as u64);
        let id = format!("seq-{i:05}");
        let path = format!("{id}.canon");
        let class = match spec {
            DatagenSpec::Single(c) => c,
            DatagenSpec::SeverityPairs => {
                if i % 2 == 0 {
                    SynthClass::PhysicsConsistent
                } else {
                    SynthClass::ForcePerturbed
                }
            }
            DatagenSpec::FallMix => {
                // 3 falls in every block of 7 sequences: 30/40 at count 70.
                if i * 3 % 7 < 3 {
                    SynthClass::Fall
                } else {
                    SynthClass::Stable
                }
            }
        };
        let partner_path = if spec == DatagenSpec::SeverityPairs {
            let pair = synthesize_pair(class, seq_seed, cfg)?;
            write_canonical(&pair.child, &out_dir.join(&path))?;
            let pp = format!("{id}.partner.canon");
            write_canonical(&pair.partner, &out_dir.join(&pp))?;
            entries.push(entry(&id, &path, Some(pp.clone()), &pair.child, cfg));
            continue;
        } else {
            None
        };
        let child = synthesize_sequence(class, seq_seed, cfg)?;
        write_canonical(&child, &out_dir.join(&path))?;
        entries.push(entry(&id, &path, partner_path, &child, cfg));
    }
    let manifest_path = out_dir.join("manifest.jsonl");
    write_manifest(&entries, &manifest_path)?;
    Ok(manifest_path)
}

fn entry(
    id: &str,
    path: &str,
    partner_path: Option<String>,
    child: &crate::skeldata::sequence::SkeletonSequence,
    cfg: &SynthConfig,
) -> ManifestEntry {
    ManifestEntry {
        id: id.to_string(),
        path: path.to_string(),
        format: SeqFormat::Canon,
        severity_label: child.severity_label,
        action_class: child.action_class,
        subject_id: child.subject_id.clone(),
        fps: cfg.fps,
        role: Role::Child,
        partner_path,
        joints: Some(cfg.joints),
    }
}
