//! Skeleton trajectories and preprocessing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whose skeleton a sequence records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    #[default]
    Child,
    InteractionPartner,
}

/// A frames x joints x dims trajectory with its metadata. Coordinates are
/// stored row-major as (frame, joint, axis).
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    pub frames: usize,
    pub joints: usize,
    pub dims: usize,
    pub fps: f64,
    pub action_class: usize,
    pub severity_label: i64,
    pub subject_id: String,
    pub role: Role,
    data: Vec<f64>,
}

impl SkeletonSequence {
    pub fn new(
        frames: usize,
        joints: usize,
        dims: usize,
        fps: f64,
        data: Vec<f64>,
    ) -> Result<Self> {
        if frames == 0 {
            return Err(Error::InvalidArgument("sequence needs at least one frame".into()));
        }
        if !(2..=3).contains(&dims) {
            return Err(Error::InvalidArgument(format!(
                "coordinate dims must be 2 or 3, got {dims}"
            )));
        }
        if data.len() != frames * joints * dims {
            return Err(Error::InvalidArgument(format!(
                "expected {} coordinates for {}x{}x{}, got {}",
                frames * joints * dims,
                frames,
                joints,
                dims,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("sequence contains non-finite coordinates".into()));
        }
        Ok(SkeletonSequence {
            frames,
            joints,
            dims,
            fps,
            action_class: 0,
            severity_label: 0,
            subject_id: String::new(),
            role: Role::Child,
            data,
        })
    }

    pub fn at(&self, frame: usize, joint: usize, axis: usize) -> f64 {
        self.data[(frame * self.joints + joint) * self.dims + axis]
    }

    pub fn frame(&self, frame: usize) -> &[f64] {
        let w = self.joints * self.dims;
        &self.data[frame * w..(frame + 1) * w]
    }

    pub fn frame_mut(&mut self, frame: usize) -> &mut [f64] {
        let w = self.joints * self.dims;
        &mut self.data[frame * w..(frame + 1) * w]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Timestep implied by the frame rate, 1/30 s when the rate is absent.
    pub fn dt(&self) -> f64 {
        if self.fps > 0.0 {
            1.0 / self.fps
        } else {
            1.0 / 30.0
        }
    }

    /// New sequence containing frames [start, end), metadata preserved.
    pub fn window(&self, start: usize, end: usize) -> Result<SkeletonSequence> {
        if start >= end || end > self.frames {
            return Err(Error::InvalidArgument(format!(
                "window {}..{} out of {} frames",
                start, end, self.frames
            )));
        }
        let w = self.joints * self.dims;
        let mut out = self.clone();
        out.frames = end - start;
        out.data = self.data[start * w..end * w].to_vec();
        Ok(out)
    }

    fn frame_is_missing(&self, frame: usize) -> bool {
        self.frame(frame).iter().all(|v| *v == 0.0)
    }
}

/// Normalization constants recorded by [`preprocess`], needed to map model
/// outputs back to the input scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessStats {
    /// Per-axis mean over every frame and joint.
    pub centroid: Vec<f64>,
    /// Maximum pairwise joint distance of the centered first frame.
    pub scale: f64,
}

impl PreprocessStats {
    pub fn identity(dims: usize) -> Self {
        PreprocessStats {
            centroid: vec![0.0; dims],
            scale: 1.0,
        }
    }

    /// Map normalized coordinates back to the input scale, in place.
    /// Layout is (..., axis) with `dims` trailing axes.
    pub fn invert(&self, coords: &mut [f64]) {
        let dims = self.centroid.len();
        for (i, v) in coords.iter_mut().enumerate() {
            *v = *v * self.scale + self.centroid[i % dims];
        }
    }

    pub fn apply(&self, coords: &mut [f64]) {
        let dims = self.centroid.len();
        for (i, v) in coords.iter_mut().enumerate() {
            *v = (*v - self.centroid[i % dims]) / self.scale;
        }
    }
}

/// Preprocess a sequence: frames without a detected skeleton (all
/// coordinates zero, the OpenPose convention) are replaced by the nearest
/// preceding valid frame, the per-sequence mean centroid is subtracted per
/// axis, and everything is rescaled by the first frame's spread.
pub fn preprocess(seq: &SkeletonSequence) -> Result<(SkeletonSequence, PreprocessStats)> {
    let mut out = seq.clone();
    let first_valid = (0..out.frames)
        .find(|t| !out.frame_is_missing(*t))
        .ok_or_else(|| Error::InvalidArgument("no frame contains a valid skeleton".into()))?;

    // Fill leading gap from the first valid frame, later gaps from the
    // immediately preceding (already filled) frame.
    for t in 0..first_valid {
        let src = out.frame(first_valid).to_vec();
        out.frame_mut(t).copy_from_slice(&src);
    }
    for t in first_valid + 1..out.frames {
        if out.frame_is_missing(t) {
            let src = out.frame(t - 1).to_vec();
            out.frame_mut(t).copy_from_slice(&src);
        }
    }

    let dims = out.dims;
    let mut centroid = vec![0.0; dims];
    for chunk in out.data.chunks_exact(dims) {
        for (c, v) in centroid.iter_mut().zip(chunk) {
            *c += v;
        }
    }
    let count = (out.frames * out.joints) as f64;
    for c in centroid.iter_mut() {
        *c /= count;
    }
    for chunk in out.data.chunks_exact_mut(dims) {
        for (v, c) in chunk.iter_mut().zip(&centroid) {
            *v -= c;
        }
    }

    let scale = frame_scale(&out, 0);
    let scale = if scale > 1e-12 { scale } else { 1.0 };
    for v in out.data.iter_mut() {
        *v /= scale;
    }

    Ok((out, PreprocessStats { centroid, scale }))
}

/// Maximum pairwise joint distance within one frame.
pub fn frame_scale(seq: &SkeletonSequence, frame: usize) -> f64 {
    let f = seq.frame(frame);
    let dims = seq.dims;
    let mut max_d2: f64 = 0.0;
    for a in 0..seq.joints {
        for b in a + 1..seq.joints {
            let mut d2 = 0.0;
            for c in 0..dims {
                let diff = f[a * dims + c] - f[b * dims + c];
                d2 += diff * diff;
            }
            max_d2 = max_d2.max(d2);
        }
    }
    max_d2.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_sequence() -> SkeletonSequence {
        // 4 frames, 3 joints, 2 dims: a drifting triangle.
        let mut data = Vec::new();
        for t in 0..4 {
            let off = t as f64 * 0.1;
            data.extend_from_slice(&[
                0.0 + off,
                0.0,
                1.0 + off,
                0.0,
                0.5 + off,
                1.0,
            ]);
        }
        SkeletonSequence::new(4, 3, 2, 30.0, data).unwrap()
    }

    #[test]
    fn missing_frame_copied_from_previous() {
        let mut seq = toy_sequence();
        seq.frame_mut(2).fill(0.0);
        let (p, _) = preprocess(&seq).unwrap();
        assert_eq!(p.frame(2), p.frame(1));
    }

    #[test]
    fn leading_gap_filled_from_first_valid_frame() {
        let mut seq = toy_sequence();
        seq.frame_mut(0).fill(0.0);
        let (p, _) = preprocess(&seq).unwrap();
        assert_eq!(p.frame(0), p.frame(1));
    }

    #[test]
    fn all_missing_is_an_error() {
        let seq = SkeletonSequence::new(3, 2, 2, 30.0, vec![0.0; 12]).unwrap();
        assert!(preprocess(&seq).is_err());
    }

    #[test]
    fn output_is_centered_and_frame0_unit_scale() {
        let (p, _) = preprocess(&toy_sequence()).unwrap();
        let mut mean = [0.0; 2];
        for chunk in p.data().chunks_exact(2) {
            mean[0] += chunk[0];
            mean[1] += chunk[1];
        }
        let n = (p.frames * p.joints) as f64;
        assert!((mean[0] / n).abs() <= 1e-9);
        assert!((mean[1] / n).abs() <= 1e-9);
        assert!((frame_scale(&p, 0) - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn constant_skeleton_normalizes_to_origin_and_unit_scale() {
        let frame = vec![0.0, 0.0, 1.0, 0.0, 0.5, 1.0];
        let data: Vec<f64> = (0..4).flat_map(|_| frame.clone()).collect();
        let seq = SkeletonSequence::new(4, 3, 2, 30.0, data).unwrap();
        let (p, _) = preprocess(&seq).unwrap();
        let mut mean = [0.0; 2];
        for chunk in p.data().chunks_exact(2) {
            mean[0] += chunk[0];
            mean[1] += chunk[1];
        }
        assert!(mean[0].abs() < 1e-12 && mean[1].abs() < 1e-12);
        assert!((frame_scale(&p, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn preprocess_is_idempotent() {
        let (once, _) = preprocess(&toy_sequence()).unwrap();
        let (twice, _) = preprocess(&once).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn stats_round_trip_back_to_input_scale() {
        let seq = toy_sequence();
        let (p, stats) = preprocess(&seq).unwrap();
        let mut restored = p.data().to_vec();
        stats.invert(&mut restored);
        for (a, b) in restored.iter().zip(seq.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn window_slices_frames() {
        let seq = toy_sequence();
        let w = seq.window(1, 3).unwrap();
        assert_eq!(w.frames, 2);
        assert_eq!(w.frame(0), seq.frame(1));
        assert!(seq.window(3, 3).is_err());
        assert!(seq.window(0, 9).is_err());
    }
}
