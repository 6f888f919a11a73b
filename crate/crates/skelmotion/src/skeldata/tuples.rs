//! Tuple splitting and sinusoidal positional encoding.

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::skeldata::sequence::SkeletonSequence;

/// A sequence divided into T non-overlapping tuples of n frames, the joints
/// of each tuple merged into one axis of V = n * joints entries. Stored as
/// channels x tuples x merged-joints, with the merged axis frame-major:
/// entry k * joints + v is joint v of the k-th frame in the tuple.
#[derive(Debug, Clone)]
pub struct TupleBatch {
    pub channels_in: usize,
    pub tuples: usize,
    pub frames_per_tuple: usize,
    pub joints_in: usize,
    data: Vec<f64>,
}

impl TupleBatch {
    /// V = n * joints.
    pub fn merged_joints(&self) -> usize {
        self.frames_per_tuple * self.joints_in
    }

    pub fn at(&self, channel: usize, tuple: usize, merged: usize) -> f64 {
        let v = self.merged_joints();
        self.data[(channel * self.tuples + tuple) * v + merged]
    }

    /// Undo the split: frames x joints x dims coordinates in source order.
    pub fn reassemble(&self) -> Vec<f64> {
        let v0 = self.joints_in;
        let c0 = self.channels_in;
        let n = self.frames_per_tuple;
        let frames = self.tuples * n;
        let mut out = vec![0.0; frames * v0 * c0];
        for c in 0..c0 {
            for t in 0..self.tuples {
                for k in 0..n {
                    for j in 0..v0 {
                        let frame = t * n + k;
                        out[(frame * v0 + j) * c0 + c] = self.at(c, t, k * v0 + j);
                    }
                }
            }
        }
        out
    }

    /// Token-major matrix (T*V) x C_in for the encoder's feature mapping.
    /// Token order is (tuple, frame-in-tuple, joint), i.e. global frame
    /// order, so a dilated convolution with dilation `joints_in` sees the
    /// same joint in consecutive frames.
    pub fn token_matrix(&self) -> Tensor {
        let v = self.merged_joints();
        let l = self.tuples * v;
        let mut data = vec![0.0; l * self.channels_in];
        for c in 0..self.channels_in {
            for t in 0..self.tuples {
                for m in 0..v {
                    data[(t * v + m) * self.channels_in + c] = self.at(c, t, m);
                }
            }
        }
        Tensor::matrix(l, self.channels_in, data).expect("shape/data agree")
    }
}

/// Drop trailing frames so the count is a multiple of `n`.
pub fn truncate_frames(seq: &SkeletonSequence, n: usize) -> Result<SkeletonSequence> {
    if n == 0 {
        return Err(Error::InvalidArgument("tuple size must be positive".into()));
    }
    let keep = (seq.frames / n) * n;
    if keep == 0 {
        return Err(Error::InvalidArgument(format!(
            "tuple size {} exceeds frame count {}",
            n, seq.frames
        )));
    }
    if keep == seq.frames {
        return Ok(seq.clone());
    }
    seq.window(0, keep)
}

/// Divide a sequence into tuples of `n` frames. The frame count must be an
/// exact multiple of `n`; truncate beforehand with [`truncate_frames`].
pub fn split_tuples(seq: &SkeletonSequence, n: usize) -> Result<TupleBatch> {
    if n == 0 || n > seq.frames {
        return Err(Error::InvalidArgument(format!(
            "tuple size {} invalid for {} frames",
            n, seq.frames
        )));
    }
    if seq.frames % n != 0 {
        return Err(Error::InvalidArgument(format!(
            "{} frames not divisible into tuples of {}",
            seq.frames, n
        )));
    }
    let tuples = seq.frames / n;
    let v = n * seq.joints;
    let mut data = vec![0.0; seq.dims * tuples * v];
    for c in 0..seq.dims {
        for t in 0..tuples {
            for k in 0..n {
                for j in 0..seq.joints {
                    data[(c * tuples + t) * v + k * seq.joints + j] = seq.at(t * n + k, j, c);
                }
            }
        }
    }
    Ok(TupleBatch {
        channels_in: seq.dims,
        tuples,
        frames_per_tuple: n,
        joints_in: seq.joints,
        data,
    })
}

/// Sinusoidal positional encoding: component 2i is
/// sin(pos / 10000^(2i/c_in)), component 2i+1 the matching cosine.
pub fn positional_encoding(pos: usize, c_in: usize) -> Result<Vec<f64>> {
    if c_in == 0 || c_in % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "encoding dimension must be even and positive, got {c_in}"
        )));
    }
    let mut pe = vec![0.0; c_in];
    for i in 0..c_in / 2 {
        let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / c_in as f64);
        let angle = pos as f64 * freq;
        pe[2 * i] = angle.sin();
        pe[2 * i + 1] = angle.cos();
    }
    Ok(pe)
}

/// Positional-encoding rows for positions [offset, offset + count) as a
/// count x c_in matrix.
pub fn positional_encoding_matrix(offset: usize, count: usize, c_in: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(count * c_in);
    for p in 0..count {
        data.extend(positional_encoding(offset + p, c_in)?);
    }
    Tensor::matrix(count, c_in, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_sequence(frames: usize, joints: usize, dims: usize) -> SkeletonSequence {
        let data: Vec<f64> = (0..frames * joints * dims).map(|i| i as f64).collect();
        SkeletonSequence::new(frames, joints, dims, 30.0, data).unwrap()
    }

    #[test]
    fn table_shapes_for_default_tuple_size() {
        let seq = ramp_sequence(64, 25, 2);
        let batch = split_tuples(&seq, 4).unwrap();
        assert_eq!(batch.tuples, 16);
        assert_eq!(batch.merged_joints(), 100);
    }

    #[test]
    fn tuple_size_one_is_identity_segmentation() {
        let seq = ramp_sequence(6, 3, 2);
        let batch = split_tuples(&seq, 1).unwrap();
        assert_eq!(batch.tuples, 6);
        assert_eq!(batch.merged_joints(), 3);
        assert_eq!(batch.reassemble(), seq.data());
    }

    #[test]
    fn split_then_reassemble_is_lossless() {
        for n in [1, 2, 3, 4, 6, 12] {
            let seq = ramp_sequence(12, 5, 3);
            let batch = split_tuples(&seq, n).unwrap();
            assert_eq!(batch.reassemble(), seq.data(), "n = {n}");
        }
    }

    #[test]
    fn invalid_tuple_sizes_rejected() {
        let seq = ramp_sequence(8, 2, 2);
        assert!(split_tuples(&seq, 0).is_err());
        assert!(split_tuples(&seq, 9).is_err());
        assert!(split_tuples(&seq, 3).is_err()); // not divisible
    }

    #[test]
    fn truncation_makes_frames_divisible() {
        let seq = ramp_sequence(10, 2, 2);
        let t = truncate_frames(&seq, 4).unwrap();
        assert_eq!(t.frames, 8);
        assert!(split_tuples(&t, 4).is_ok());
    }

    #[test]
    fn encoding_at_origin_alternates_zero_one() {
        let pe = positional_encoding(0, 8).unwrap();
        assert_eq!(pe, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn encoding_first_component_is_sin_pos() {
        let pe = positional_encoding(1, 6).unwrap();
        assert!((pe[0] - 1f64.sin()).abs() < 1e-12);
        assert!((pe[0] - 0.841471).abs() < 1e-6);
    }

    #[test]
    fn encodings_distinct_over_joint_range() {
        let v = 100;
        let encodings: Vec<Vec<f64>> = (0..v).map(|p| positional_encoding(p, 16).unwrap()).collect();
        for a in 0..v {
            for b in a + 1..v {
                let differ = encodings[a]
                    .iter()
                    .zip(&encodings[b])
                    .any(|(x, y)| (x - y).abs() > 1e-9);
                assert!(differ, "positions {a} and {b} collide");
            }
        }
    }

    #[test]
    fn encoding_components_bounded() {
        for pos in 0..500 {
            for v in positional_encoding(pos, 32).unwrap() {
                assert!((-1.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn odd_dimension_rejected() {
        assert!(positional_encoding(3, 7).is_err());
        assert!(positional_encoding(3, 0).is_err());
    }
}
