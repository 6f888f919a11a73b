//! Tuple-transformer encoder: skeleton tuples plus the action class go in,
//! per-frame latent generalized positions P and forces F plus a horizon of
//! force tokens H come out.
//!
//! Layout of one forward pass:
//! 1. tuple tokens (T*V rows, one per joint instance) are channel-expanded
//!    by a single dilated 1-D convolution with BatchNorm and ReLU — the
//!    dilation equals the joint count so the kernel spans the same joint in
//!    consecutive frames;
//! 2. sinusoidal positional encodings give every joint slot within a tuple
//!    a unique id, and the learned action embedding is added to every token;
//! 3. stacked blocks alternate attention across all joints within each
//!    tuple with attention across tuples (per joint slot), each followed by
//!    a pointwise feed-forward layer, with residual connections and batch
//!    norm;
//! 4. output channels split in half: the first half pools per frame into P,
//!    the second half pools into F and additionally feeds a cross-attention
//!    head with sinusoidal queries that emits the H horizon force tokens.

use rand_chacha::ChaCha8Rng;

use crate::diffcore::{NodeId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv1d, Embedding, FeedForward, GraphCtx, Linear, MultiHeadAttention};
use crate::skeldata::{positional_encoding_matrix, TupleBatch};

#[derive(Debug, Clone)]
pub struct EncoderConfig {
    /// Channels after the feature mapping; split evenly into the position
    /// and force halves, so it must be even.
    pub channels: usize,
    pub heads: usize,
    pub blocks: usize,
    /// Width D of the per-frame latent positions and forces.
    pub latent_dim: usize,
    pub action_vocab: usize,
    /// Frames per tuple (n).
    pub tuple_frames: usize,
    /// Horizon force tokens emitted for the physics decoder.
    pub horizon: usize,
    pub joints: usize,
    pub dims: usize,
    /// Feed-forward hidden width as a multiple of `channels`.
    pub ffn_mult: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels % 2 != 0 {
            return Err(Error::Config(format!(
                "channel count must be even to split into position/force halves, got {}",
                self.channels
            )));
        }
        if self.heads == 0 || self.channels % self.heads != 0 {
            return Err(Error::Config(format!(
                "{} heads do not divide {} channels",
                self.heads, self.channels
            )));
        }
        if (self.channels / 2) % self.heads != 0 {
            return Err(Error::Config(format!(
                "{} heads do not divide the {}-channel force half",
                self.heads,
                self.channels / 2
            )));
        }
        if self.latent_dim == 0 {
            return Err(Error::Config("latent dim must be at least 1".into()));
        }
        if self.tuple_frames == 0 {
            return Err(Error::Config("tuple size must be positive".into()));
        }
        Ok(())
    }
}

/// Node ids of the encoder outputs within one graph.
pub struct LatentNodes {
    /// T0 x D per-frame generalized positions.
    pub p: NodeId,
    /// T0 x D per-frame generalized forces.
    pub f: NodeId,
    /// H x D horizon force tokens.
    pub h: NodeId,
}

/// Extracted encoder output values.
#[derive(Debug, Clone)]
pub struct LatentState {
    pub p: Tensor,
    pub f: Tensor,
    pub h: Tensor,
}

struct Block {
    spatial: MultiHeadAttention,
    temporal: MultiHeadAttention,
    ffn: FeedForward,
    bn_spatial: BatchNorm,
    bn_temporal: BatchNorm,
    bn_ffn: BatchNorm,
}

pub struct Encoder {
    pub cfg: EncoderConfig,
    feature_map: Conv1d,
    feature_bn: BatchNorm,
    action_embed: Embedding,
    blocks: Vec<Block>,
    head_p: Linear,
    head_f: Linear,
    horizon_attn: MultiHeadAttention,
    horizon_out: Linear,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let half = c / 2;
        let blocks = (0..cfg.blocks)
            .map(|i| {
                Ok(Block {
                    spatial: MultiHeadAttention::new(format!("enc.block{i}.spatial"), c, cfg.heads)?,
                    temporal: MultiHeadAttention::new(
                        format!("enc.block{i}.temporal"),
                        c,
                        cfg.heads,
                    )?,
                    ffn: FeedForward::new(format!("enc.block{i}.ffn"), c, c * cfg.ffn_mult),
                    bn_spatial: BatchNorm::new(format!("enc.block{i}.bn_spatial"), c),
                    bn_temporal: BatchNorm::new(format!("enc.block{i}.bn_temporal"), c),
                    bn_ffn: BatchNorm::new(format!("enc.block{i}.bn_ffn"), c),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Encoder {
            // Kernel 5 spans two frames each side of the center (dilation =
            // joint count), wide enough to express high-order temporal
            // differences of a joint's trajectory in a single layer.
            feature_map: Conv1d::new("enc.feature_map", cfg.dims, c, 5, cfg.joints),
            feature_bn: BatchNorm::new("enc.feature_bn", c),
            action_embed: Embedding::new("enc.action", cfg.action_vocab, c),
            blocks,
            head_p: Linear::new("enc.head_p", half, cfg.latent_dim),
            head_f: Linear::new("enc.head_f", half, cfg.latent_dim),
            horizon_attn: MultiHeadAttention::new("enc.horizon.attn", half, cfg.heads)?,
            horizon_out: Linear::new("enc.horizon.out", half, cfg.latent_dim),
            cfg,
        })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        self.feature_map.init_temporal_differences(store, rng);
        self.feature_bn.init(store, rng);
        self.action_embed.init(store, rng);
        for b in &self.blocks {
            b.spatial.init(store, rng);
            b.temporal.init(store, rng);
            b.ffn.init(store, rng);
            b.bn_spatial.init(store, rng);
            b.bn_temporal.init(store, rng);
            b.bn_ffn.init(store, rng);
        }
        // The latent width D defaults to half the channel count; identity
        // heads then hand the frame-pooled feature channels to the
        // classifier and decoders unmixed, which keeps weak high-order
        // channels from being buried under high-variance pose channels at
        // initialization. Non-square configurations fall back to Xavier.
        if self.head_p.in_dim == self.head_p.out_dim {
            self.head_p.init_identity(store, rng);
            self.head_f.init_identity(store, rng);
        } else {
            self.head_p.init(store, rng);
            self.head_f.init(store, rng);
        }
        self.horizon_attn.init(store, rng);
        self.horizon_out.init(store, rng);
    }

    /// Record the encoder for one sample.
    pub fn forward(
        &self,
        ctx: &mut GraphCtx,
        batch: &TupleBatch,
        action_class: usize,
    ) -> Result<LatentNodes> {
        let mut out = self.forward_batch(ctx, &[(batch, action_class)])?;
        Ok(out.pop().expect("one sample in, one latent out"))
    }

    /// Record the encoder for a whole training batch in one graph. The
    /// samples' token matrices are stacked along the row axis so batch
    /// normalization sees statistics across the entire batch — per-sample
    /// normalization would erase exactly the between-sample magnitude
    /// differences the classifier feeds on. Attention never crosses sample
    /// boundaries.
    pub fn forward_batch(
        &self,
        ctx: &mut GraphCtx,
        items: &[(&TupleBatch, usize)],
    ) -> Result<Vec<LatentNodes>> {
        let cfg = &self.cfg;
        if items.is_empty() {
            return Err(Error::InvalidArgument("empty encoder batch".into()));
        }
        let tuples = items[0].0.tuples;
        for (batch, _) in items {
            if batch.frames_per_tuple != cfg.tuple_frames
                || batch.joints_in != cfg.joints
                || batch.channels_in != cfg.dims
                || batch.tuples != tuples
            {
                return Err(Error::Shape {
                    op: "encode",
                    detail: format!(
                        "batch ({}, {}, {}, {} tuples) does not match config \
                         ({}, {}, {}, {} tuples)",
                        batch.frames_per_tuple,
                        batch.joints_in,
                        batch.channels_in,
                        batch.tuples,
                        cfg.tuple_frames,
                        cfg.joints,
                        cfg.dims,
                        tuples
                    ),
                });
            }
        }
        let b = items.len();
        let v = items[0].0.merged_joints();
        let l = tuples * v;
        let c = cfg.channels;
        let half = c / 2;
        let frames = tuples * cfg.tuple_frames;

        // 1. Feature mapping: one dilated conv per sample (stacking first
        //    would bleed across sample seams), then batch norm and ReLU
        //    over the stacked tokens.
        let mut conv_outs = Vec::with_capacity(b);
        for (batch, _) in items {
            let tokens = ctx.gb.constant(batch.token_matrix());
            conv_outs.push(self.feature_map.forward(ctx, tokens)?);
        }
        let stacked = if b == 1 {
            conv_outs[0]
        } else {
            ctx.gb.concat_rows(conv_outs)?
        };
        let normed = self.feature_bn.forward(ctx, stacked)?;
        let mut x = ctx.gb.relu(normed)?;

        // 2. Positional encoding per joint slot within the tuple, tiled
        //    over tuples and samples, plus each sample's action embedding
        //    on every one of its tokens.
        let pe_tuple = positional_encoding_matrix(0, v, c)?;
        let mut pe_data = Vec::with_capacity(b * l * c);
        for _ in 0..b * tuples {
            pe_data.extend_from_slice(pe_tuple.data());
        }
        let pe = ctx.gb.constant(Tensor::matrix(b * l, c, pe_data)?);
        x = ctx.gb.add(x, pe)?;
        let mut action_rows = Vec::with_capacity(b * l);
        for (_, action) in items {
            for _ in 0..l {
                action_rows.push(*action);
            }
        }
        let actions = self.action_embed.rows(ctx, &action_rows)?;
        x = ctx.gb.add(x, actions)?;

        // 3. Attention blocks. The joint-slot regrouping permutation is
        //    applied per sample with its row offset.
        let mut by_joint = Vec::with_capacity(b * l);
        let mut back = vec![0usize; b * l];
        for s in 0..b {
            for m in 0..v {
                for t in 0..tuples {
                    by_joint.push(s * l + t * v + m);
                }
            }
        }
        for (pos, src) in by_joint.iter().enumerate() {
            back[*src] = pos;
        }

        for block in &self.blocks {
            // Attention across all joints within each tuple.
            let mut spatial_outs = Vec::with_capacity(b * tuples);
            for s in 0..b {
                for t in 0..tuples {
                    let start = s * l + t * v;
                    let rows = ctx.gb.slice_rows(x, start, start + v)?;
                    spatial_outs.push(block.spatial.forward(ctx, rows, rows)?);
                }
            }
            let spatial = if spatial_outs.len() == 1 {
                spatial_outs[0]
            } else {
                ctx.gb.concat_rows(spatial_outs)?
            };
            x = ctx.gb.add(x, spatial)?;
            x = block.bn_spatial.forward(ctx, x)?;

            // Attention across tuples, one sequence per joint slot.
            let grouped = ctx.gb.gather_rows(x, by_joint.clone())?;
            let mut temporal_outs = Vec::with_capacity(b * v);
            for g in 0..b * v {
                let rows = ctx.gb.slice_rows(grouped, g * tuples, (g + 1) * tuples)?;
                temporal_outs.push(block.temporal.forward(ctx, rows, rows)?);
            }
            let temporal_grouped = if temporal_outs.len() == 1 {
                temporal_outs[0]
            } else {
                ctx.gb.concat_rows(temporal_outs)?
            };
            let temporal = ctx.gb.gather_rows(temporal_grouped, back.clone())?;
            x = ctx.gb.add(x, temporal)?;
            x = block.bn_temporal.forward(ctx, x)?;

            let ff = block.ffn.forward(ctx, x)?;
            x = ctx.gb.add(x, ff)?;
            x = block.bn_ffn.forward(ctx, x)?;
        }

        // 4. Heads, per sample. Frame (t, k) occupies the contiguous token
        //    rows [t*V + k*V0, t*V + (k+1)*V0) of its sample's band, so
        //    pooling over joints is one constant-matrix product.
        let mut pool = vec![0.0; frames * l];
        let inv = 1.0 / cfg.joints as f64;
        for t in 0..tuples {
            for k in 0..cfg.tuple_frames {
                let frame = t * cfg.tuple_frames + k;
                for j in 0..cfg.joints {
                    pool[frame * l + t * v + k * cfg.joints + j] = inv;
                }
            }
        }
        let pool = ctx.gb.constant(Tensor::matrix(frames, l, pool)?);
        let queries = ctx
            .gb
            .constant(positional_encoding_matrix(0, cfg.horizon, half)?);

        let mut out = Vec::with_capacity(b);
        for s in 0..b {
            let band = ctx.gb.slice_rows(x, s * l, (s + 1) * l)?;
            let pos_half = ctx.gb.slice_cols(band, 0, half)?;
            let force_half = ctx.gb.slice_cols(band, half, c)?;
            let p_feat = ctx.gb.matmul(pool, pos_half)?;
            let f_feat = ctx.gb.matmul(pool, force_half)?;
            let p = self.head_p.forward(ctx, p_feat)?;
            let f = self.head_f.forward(ctx, f_feat)?;
            let h_feat = self.horizon_attn.forward(ctx, queries, force_half)?;
            let h = self.horizon_out.forward(ctx, h_feat)?;
            out.push(LatentNodes { p, f, h });
        }
        Ok(out)
    }

    /// Names of every encoder parameter and buffer, the inference-path
    /// footprint together with the classifier.
    pub fn is_encoder_param(name: &str) -> bool {
        name.starts_with("enc.")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::ParamStore;
    use crate::gradcheck;
    use crate::init::seeded_rng;
    use crate::skeldata::{split_tuples, SkeletonSequence};

    fn small_cfg() -> EncoderConfig {
        EncoderConfig {
            channels: 8,
            heads: 2,
            blocks: 1,
            latent_dim: 4,
            action_vocab: 3,
            tuple_frames: 2,
            horizon: 3,
            joints: 3,
            dims: 2,
            ffn_mult: 2,
        }
    }

    fn random_seq(seed: u64, frames: usize, joints: usize, dims: usize) -> SkeletonSequence {
        let mut rng = seeded_rng(seed);
        let data = crate::init::uniform_tensor(&mut rng, &[frames * joints * dims], -1.0, 1.0);
        SkeletonSequence::new(frames, joints, dims, 30.0, data.into_data()).unwrap()
    }

    fn build_encoder(cfg: EncoderConfig, seed: u64) -> (Encoder, ParamStore) {
        let enc = Encoder::new(cfg).unwrap();
        let mut store = ParamStore::new();
        enc.init(&mut store, &mut seeded_rng(seed));
        (enc, store)
    }

    #[test]
    fn output_shapes_follow_config() {
        let (enc, store) = build_encoder(small_cfg(), 0);
        let seq = random_seq(1, 8, 3, 2);
        let batch = split_tuples(&seq, 2).unwrap();
        let mut ctx = GraphCtx::new(&store, false);
        let latent = enc.forward(&mut ctx, &batch, 0).unwrap();
        assert_eq!(ctx.gb.value(latent.p).shape(), &[8, 4]);
        assert_eq!(ctx.gb.value(latent.f).shape(), &[8, 4]);
        assert_eq!(ctx.gb.value(latent.h).shape(), &[3, 4]);
    }

    #[test]
    fn deterministic_under_fixed_weights() {
        let (enc, store) = build_encoder(small_cfg(), 0);
        let seq = random_seq(2, 8, 3, 2);
        let batch = split_tuples(&seq, 2).unwrap();
        let run = || {
            let mut ctx = GraphCtx::new(&store, false);
            let latent = enc.forward(&mut ctx, &batch, 1).unwrap();
            ctx.gb.value(latent.p).data().to_vec()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    #[test]
    fn feature_map_parameter_count_is_sequence_length_independent() {
        let (_, store_short) = build_encoder(small_cfg(), 0);
        // Same config; only the input length differs at call time. The
        // parameter store is built from the config alone, so the counts
        // must be identical whatever T0 the encoder later consumes.
        let count = |s: &ParamStore| s.count_values(|n| n.starts_with("enc.feature_map"));
        let (_, store_again) = build_encoder(small_cfg(), 7);
        assert_eq!(count(&store_short), count(&store_again));
        let seq_short = random_seq(3, 4, 3, 2);
        let seq_long = random_seq(3, 16, 3, 2);
        let (enc, store) = build_encoder(small_cfg(), 0);
        for seq in [seq_short, seq_long] {
            let batch = split_tuples(&seq, 2).unwrap();
            let mut ctx = GraphCtx::new(&store, false);
            enc.forward(&mut ctx, &batch, 0).unwrap();
        }
    }

    #[test]
    fn permuting_joints_changes_the_output() {
        let (enc, store) = build_encoder(small_cfg(), 0);
        let seq = random_seq(4, 8, 3, 2);
        // Swap joints 0 and 2 in every frame.
        let mut permuted_data = Vec::new();
        for t in 0..seq.frames {
            for j in [2, 1, 0] {
                for c in 0..seq.dims {
                    permuted_data.push(seq.at(t, j, c));
                }
            }
        }
        let permuted = SkeletonSequence::new(8, 3, 2, 30.0, permuted_data).unwrap();
        let encode = |s: &SkeletonSequence| {
            let batch = split_tuples(s, 2).unwrap();
            let mut ctx = GraphCtx::new(&store, false);
            let latent = enc.forward(&mut ctx, &batch, 0).unwrap();
            ctx.gb.value(latent.p).data().to_vec()
        };
        let a = encode(&seq);
        let b = encode(&permuted);
        let max_diff = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff > 1e-6, "joint permutation was invisible");
    }

    #[test]
    fn gradients_reach_every_encoder_parameter() {
        let (enc, store) = build_encoder(small_cfg(), 5);
        let seq = random_seq(6, 4, 3, 2);
        let batch = split_tuples(&seq, 2).unwrap();
        let mut ctx = GraphCtx::new(&store, true);
        let latent = enc.forward(&mut ctx, &batch, 2).unwrap();
        let mp = ctx.gb.mean(latent.p).unwrap();
        let mf = ctx.gb.mean(latent.f).unwrap();
        let mh = ctx.gb.mean(latent.h).unwrap();
        let pf = ctx.gb.add(mp, mf).unwrap();
        let out = ctx.gb.add(pf, mh).unwrap();
        let (graph, _) = ctx.finish(out);
        let (_, grads) = graph.param_gradients().unwrap();
        for (name, _, trainable) in store.iter() {
            if trainable {
                assert!(grads.contains_key(name), "no gradient for {name}");
            }
        }
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        // Scalar head on P through the full encoder in train mode.
        let (enc, store) = build_encoder(small_cfg(), 11);
        let seq = random_seq(7, 4, 3, 2);
        let batch = split_tuples(&seq, 2).unwrap();
        let mut ctx = GraphCtx::new(&store, true);
        let latent = enc.forward(&mut ctx, &batch, 1).unwrap();
        let sq = ctx.gb.mul(latent.p, latent.p).unwrap();
        let out = ctx.gb.mean(sq).unwrap();
        let (graph, _) = ctx.finish(out);
        let worst = gradcheck::check_graph(&graph, gradcheck::FD_STEP).unwrap();
        assert!(
            worst <= gradcheck::GRAD_TOL,
            "encoder gradient error {worst:.3e}"
        );
    }
}
