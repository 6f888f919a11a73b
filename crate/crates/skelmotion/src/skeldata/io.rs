//! Sequence file formats and the dataset manifest.
//!
//! Three input formats:
//! - `openpose2d`: JSON, either one array of frames or one JSON document per
//!   line; each frame is an array of (x, y, confidence) triples. The
//!   confidence channel only feeds missing-frame detection and is dropped.
//! - `skel3d`: JSON array of frames x joints x 3 reals.
//! - `canon`: the canonical internal dump — a header line `T V C fps`
//!   followed by one row-major coordinate line per frame.
//!
//! The manifest is line-delimited JSON, one entry per line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeldata::sequence::{Role, SkeletonSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeqFormat {
    Openpose2d,
    Skel3d,
    Canon,
}

impl SeqFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "openpose2d" => Ok(SeqFormat::Openpose2d),
            "skel3d" => Ok(SeqFormat::Skel3d),
            "canon" => Ok(SeqFormat::Canon),
            other => Err(Error::InvalidArgument(format!("unknown sequence format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
    pub format: SeqFormat,
    pub severity_label: i64,
    pub action_class: usize,
    pub subject_id: String,
    pub fps: f64,
    #[serde(default)]
    pub role: Role,
    /// Interaction partner trajectory used as the physics branch's target
    /// in dual-target training; absent for single-target datasets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partner_path: Option<String>,
    /// Expected joint count; loads fail when the file disagrees.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joints: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory entries' relative paths resolve against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn resolve(&self, relative: &str) -> PathBuf {
        let p = Path::new(relative);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Indices of child entries, the classification population.
    pub fn child_indices(&self) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.role == Role::Child)
            .map(|(i, _)| i)
            .collect()
    }

    /// Sorted distinct severity labels over child entries.
    pub fn label_set(&self) -> Vec<i64> {
        let mut labels: Vec<i64> = self
            .entries
            .iter()
            .filter(|e| e.role == Role::Child)
            .map(|e| e.severity_label)
            .collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    }
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut entries: Vec<ManifestEntry> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| {
            Error::parse(format!("{}:{}", path.display(), lineno + 1), e.to_string())
        })?;
        entries.push(entry);
    }
    let mut seen = std::collections::HashSet::new();
    for e in &entries {
        if !seen.insert(e.id.clone()) {
            return Err(Error::parse(
                path.display().to_string(),
                format!("duplicate sequence id `{}`", e.id),
            ));
        }
    }
    let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let manifest = DatasetManifest { entries, base_dir };
    for e in &manifest.entries {
        let p = manifest.resolve(&e.path);
        if !p.exists() {
            return Err(Error::Config(format!(
                "manifest entry `{}` references missing file {}",
                e.id,
                p.display()
            )));
        }
    }
    Ok(manifest)
}

pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        let line = serde_json::to_string(e)
            .map_err(|e| Error::Parse {
                location: path.display().to_string(),
                detail: e.to_string(),
            })?;
        out.push_str(&line);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Load one sequence file. `expected_joints` enforces the manifest's joint
/// count when present.
pub fn load_sequence(
    path: &Path,
    format: SeqFormat,
    fps: f64,
    expected_joints: Option<usize>,
) -> Result<SkeletonSequence> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if text.trim().is_empty() {
        return Err(Error::parse(path.display().to_string(), "empty file"));
    }
    let seq = match format {
        SeqFormat::Openpose2d => parse_openpose2d(&text, path, fps)?,
        SeqFormat::Skel3d => parse_skel3d(&text, path, fps)?,
        SeqFormat::Canon => parse_canonical(&text, path)?,
    };
    if let Some(expected) = expected_joints {
        if seq.joints != expected {
            return Err(Error::parse(
                path.display().to_string(),
                format!("expected {} joints, file has {}", expected, seq.joints),
            ));
        }
    }
    Ok(seq)
}

fn parse_openpose2d(text: &str, path: &Path, fps: f64) -> Result<SkeletonSequence> {
    let loc = || path.display().to_string();
    // Whole-file JSON array of frames, or one JSON document per line.
    let frames_json: Vec<serde_json::Value> = match serde_json::from_str::<serde_json::Value>(text)
    {
        Ok(serde_json::Value::Array(frames)) => frames,
        Ok(other) => vec![other],
        Err(_) => {
            let mut frames = Vec::new();
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                let v: serde_json::Value = serde_json::from_str(line).map_err(|e| {
                    Error::parse(format!("{}:{}", path.display(), lineno + 1), e.to_string())
                })?;
                frames.push(v);
            }
            frames
        }
    };
    if frames_json.is_empty() {
        return Err(Error::parse(loc(), "no frames"));
    }

    let mut joints = None;
    let mut data: Vec<f64> = Vec::new();
    for (t, frame) in frames_json.iter().enumerate() {
        let triples = frame
            .as_array()
            .ok_or_else(|| Error::parse(loc(), format!("frame {t} is not an array")))?;
        match joints {
            None => joints = Some(triples.len()),
            Some(v) if v != triples.len() => {
                return Err(Error::parse(
                    loc(),
                    format!("frame {t} has {} joints, expected {}", triples.len(), v),
                ));
            }
            _ => {}
        }
        let mut frame_coords = Vec::with_capacity(triples.len() * 2);
        let mut any_confident = false;
        for (j, triple) in triples.iter().enumerate() {
            let nums = triple
                .as_array()
                .ok_or_else(|| Error::parse(loc(), format!("frame {t} joint {j} malformed")))?;
            if nums.len() != 3 {
                return Err(Error::parse(
                    loc(),
                    format!("frame {t} joint {j} has {} values, expected 3", nums.len()),
                ));
            }
            let mut vals = [0.0; 3];
            for (k, n) in nums.iter().enumerate() {
                vals[k] = n.as_f64().ok_or_else(|| {
                    Error::parse(loc(), format!("frame {t} joint {j} value {k} not a number"))
                })?;
                if !vals[k].is_finite() {
                    return Err(Error::parse(
                        loc(),
                        format!("frame {t} joint {j} value {k} not finite"),
                    ));
                }
            }
            if vals[2] > 0.0 {
                any_confident = true;
            }
            frame_coords.push(vals[0]);
            frame_coords.push(vals[1]);
        }
        // Frames with zero confidence everywhere are marked missing by
        // zero-filling; preprocessing substitutes the preceding frame.
        if !any_confident {
            frame_coords.fill(0.0);
        }
        data.extend(frame_coords);
    }
    let joints = joints.unwrap();
    SkeletonSequence::new(frames_json.len(), joints, 2, fps, data)
}

fn parse_skel3d(text: &str, path: &Path, fps: f64) -> Result<SkeletonSequence> {
    let loc = || path.display().to_string();
    let frames: Vec<Vec<Vec<f64>>> = serde_json::from_str(text)
        .map_err(|e| Error::parse(loc(), format!("not a frames x joints x 3 array: {e}")))?;
    if frames.is_empty() {
        return Err(Error::parse(loc(), "no frames"));
    }
    let joints = frames[0].len();
    let mut data = Vec::with_capacity(frames.len() * joints * 3);
    for (t, frame) in frames.iter().enumerate() {
        if frame.len() != joints {
            return Err(Error::parse(
                loc(),
                format!("frame {t} has {} joints, expected {joints}", frame.len()),
            ));
        }
        for (j, coords) in frame.iter().enumerate() {
            if coords.len() != 3 {
                return Err(Error::parse(
                    loc(),
                    format!("frame {t} joint {j} has {} coordinates, expected 3", coords.len()),
                ));
            }
            data.extend_from_slice(coords);
        }
    }
    SkeletonSequence::new(frames.len(), joints, 3, fps, data)
}

fn parse_canonical(text: &str, path: &Path) -> Result<SkeletonSequence> {
    let loc = || path.display().to_string();
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(loc(), "missing header"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 {
        return Err(Error::parse(loc(), format!("header `{header}` is not `T V C fps`")));
    }
    let frames: usize = fields[0]
        .parse()
        .map_err(|_| Error::parse(loc(), "bad frame count"))?;
    let joints: usize = fields[1]
        .parse()
        .map_err(|_| Error::parse(loc(), "bad joint count"))?;
    let dims: usize = fields[2]
        .parse()
        .map_err(|_| Error::parse(loc(), "bad dim count"))?;
    let fps: f64 = fields[3]
        .parse()
        .map_err(|_| Error::parse(loc(), "bad fps"))?;
    let mut data = Vec::with_capacity(frames * joints * dims);
    for (t, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut count = 0;
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| {
                Error::parse(loc(), format!("frame {t}: `{tok}` is not a number"))
            })?;
            data.push(v);
            count += 1;
        }
        if count != joints * dims {
            return Err(Error::parse(
                loc(),
                format!("frame {t} has {count} values, expected {}", joints * dims),
            ));
        }
    }
    if data.len() != frames * joints * dims {
        return Err(Error::parse(
            loc(),
            format!(
                "expected {} frames, found {}",
                frames,
                data.len() / (joints * dims)
            ),
        ));
    }
    SkeletonSequence::new(frames, joints, dims, fps, data)
}

/// Write the canonical dump: `T V C fps` header plus one coordinate row per
/// frame, full double precision.
pub fn write_canonical(seq: &SkeletonSequence, path: &Path) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "{} {} {} {}", seq.frames, seq.joints, seq.dims, seq.fps);
    for t in 0..seq.frames {
        let row: Vec<String> = seq.frame(t).iter().map(|v| format!("{v:.17e}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// One loaded training sample: the child sequence plus, when the manifest
/// names one, the interaction partner's trajectory.
#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub seq: SkeletonSequence,
    pub partner: Option<SkeletonSequence>,
}

/// Load every child entry of a manifest.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<Vec<LoadedSample>> {
    let mut out = Vec::new();
    for e in &manifest.entries {
        if e.role != Role::Child {
            continue;
        }
        let mut seq = load_sequence(&manifest.resolve(&e.path), e.format, e.fps, e.joints)?;
        seq.action_class = e.action_class;
        seq.severity_label = e.severity_label;
        seq.subject_id = e.subject_id.clone();
        seq.role = e.role;
        let partner = match &e.partner_path {
            Some(p) => {
                let mut partner = load_sequence(&manifest.resolve(p), e.format, e.fps, e.joints)?;
                partner.role = Role::InteractionPartner;
                Some(partner)
            }
            None => None,
        };
        out.push(LoadedSample { seq, partner });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeldata::synth::{synthesize_sequence, SynthClass, SynthConfig};

    fn openpose_json(frames: usize, joints: usize) -> String {
        let mut all = Vec::new();
        for t in 0..frames {
            let mut frame = Vec::new();
            for j in 0..joints {
                frame.push(vec![t as f64 + j as f64 * 0.1, j as f64, 0.9]);
            }
            all.push(frame);
        }
        serde_json::to_string(&all).unwrap()
    }

    #[test]
    fn openpose_file_loads_with_mmasd_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seq.json");
        fs::write(&path, openpose_json(64, 25)).unwrap();
        let seq = load_sequence(&path, SeqFormat::Openpose2d, 30.0, Some(25)).unwrap();
        assert_eq!((seq.frames, seq.joints, seq.dims), (64, 25, 2));
    }

    #[test]
    fn empty_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.json");
        fs::write(&path, "").unwrap();
        assert!(load_sequence(&path, SeqFormat::Openpose2d, 30.0, None).is_err());
    }

    #[test]
    fn skel3d_loads_dream_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seq3d.json");
        let frames: Vec<Vec<Vec<f64>>> = (0..16)
            .map(|t| (0..10).map(|j| vec![t as f64, j as f64, 0.5]).collect())
            .collect();
        fs::write(&path, serde_json::to_string(&frames).unwrap()).unwrap();
        let seq = load_sequence(&path, SeqFormat::Skel3d, 25.0, None).unwrap();
        assert_eq!((seq.frames, seq.joints, seq.dims), (16, 10, 3));
    }

    #[test]
    fn joint_count_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seq.json");
        fs::write(&path, openpose_json(8, 25)).unwrap();
        let err = load_sequence(&path, SeqFormat::Openpose2d, 30.0, Some(17)).unwrap_err();
        assert!(err.to_string().contains("17"));
    }

    #[test]
    fn malformed_frame_error_names_frame_index() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        fs::write(&path, r#"[[[0.0, 1.0, 0.9]], [[0.0, 1.0]]]"#).unwrap();
        let err = load_sequence(&path, SeqFormat::Openpose2d, 30.0, None).unwrap_err();
        assert!(err.to_string().contains("frame 1"), "{err}");
    }

    #[test]
    fn zero_confidence_frame_is_zero_filled() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("conf.json");
        let frames = vec![
            vec![vec![1.0, 2.0, 0.9], vec![3.0, 4.0, 0.8]],
            vec![vec![1.5, 2.5, 0.0], vec![3.5, 4.5, 0.0]],
        ];
        fs::write(&path, serde_json::to_string(&frames).unwrap()).unwrap();
        let seq = load_sequence(&path, SeqFormat::Openpose2d, 30.0, None).unwrap();
        assert!(seq.frame(1).iter().all(|v| *v == 0.0));
        assert_eq!(seq.frame(0), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn canonical_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seq.canon");
        let seq = synthesize_sequence(SynthClass::ForcePerturbed, 33, &SynthConfig::default()).unwrap();
        write_canonical(&seq, &path).unwrap();
        let loaded = load_sequence(&path, SeqFormat::Canon, seq.fps, Some(seq.joints)).unwrap();
        assert_eq!(loaded.frames, seq.frames);
        assert_eq!(loaded.data(), seq.data());
    }

    #[test]
    fn manifest_round_trip_and_duplicate_detection() {
        let dir = tempfile::tempdir().unwrap();
        let seq_path = dir.path().join("a.canon");
        let seq = synthesize_sequence(SynthClass::Stable, 1, &SynthConfig::default()).unwrap();
        write_canonical(&seq, &seq_path).unwrap();
        let entry = ManifestEntry {
            id: "a".into(),
            path: "a.canon".into(),
            format: SeqFormat::Canon,
            severity_label: 0,
            action_class: 0,
            subject_id: "s0".into(),
            fps: 30.0,
            role: Role::Child,
            partner_path: None,
            joints: Some(seq.joints),
        };
        let manifest_path = dir.path().join("manifest.jsonl");
        write_manifest(&[entry.clone()], &manifest_path).unwrap();
        let m = read_manifest(&manifest_path).unwrap();
        assert_eq!(m.entries.len(), 1);
        assert_eq!(m.entries[0].id, "a");

        let mut dup = entry.clone();
        dup.path = "a.canon".into();
        write_manifest(&[entry, dup], &manifest_path).unwrap();
        assert!(read_manifest(&manifest_path).is_err());
    }

    #[test]
    fn manifest_missing_file_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let manifest_path = dir.path().join("manifest.jsonl");
        fs::write(
            &manifest_path,
            r#"{"id":"x","path":"nope.canon","format":"canon","severity_label":0,"action_class":0,"subject_id":"s","fps":30.0}"#,
        )
        .unwrap();
        let err = read_manifest(&manifest_path).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
