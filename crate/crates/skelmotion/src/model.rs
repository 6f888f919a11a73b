//! Assembly of the encoder, the two decoders, and the severity classifier
//! around one parameter store.

use crate::config::RunConfig;
use crate::decoders::{
    DecodeNodes, DecoderConfig, NonPhysicsDecoder, PhysicsDecodeNodes, PhysicsDecoder,
    Reprojection, SolverSetup,
};
use crate::diffcore::{ParamStore, Tensor};
use crate::encoder::{Encoder, EncoderConfig, LatentNodes, LatentState};
use crate::error::{Error, Result};
use crate::init::seeded_rng;
use crate::nn::GraphCtx;
use crate::physdyn::{ContactModel, World};
use crate::skeldata::{split_tuples, truncate_frames, PreprocessStats, SkeletonSequence};
use crate::trainer::{Classifier, ClassifierConfig};

pub struct Model {
    pub cfg: RunConfig,
    pub encoder: Encoder,
    pub phys_dec: Option<PhysicsDecoder>,
    pub nonphys_dec: Option<NonPhysicsDecoder>,
    pub classifier: Classifier,
    pub store: ParamStore,
}

/// Node ids produced by one full forward pass.
pub struct ForwardNodes {
    pub latent: LatentNodes,
    pub logits: crate::diffcore::NodeId,
    pub phys: Option<PhysicsDecodeNodes>,
    pub nonphys: Option<DecodeNodes>,
}

/// Input-scale decoded futures from the evaluation path.
pub struct DecodedFrames {
    pub phys: Option<Tensor>,
    pub nonphys: Option<Tensor>,
}

impl Model {
    pub fn encoder_config(cfg: &RunConfig) -> EncoderConfig {
        EncoderConfig {
            channels: cfg.channels,
            heads: cfg.heads,
            blocks: cfg.blocks,
            latent_dim: cfg.latent_dim,
            action_vocab: cfg.action_vocab,
            tuple_frames: cfg.tuple_frames,
            horizon: cfg.pred_len,
            joints: cfg.joints,
            dims: cfg.dims,
            ffn_mult: 2,
        }
    }

    pub fn decoder_config(cfg: &RunConfig) -> DecoderConfig {
        DecoderConfig {
            horizon: cfg.pred_len,
            dim: cfg.decoder_dim,
            heads: cfg.heads,
            out_joints: cfg.joints,
            out_dims: cfg.dims,
            latent_dim: cfg.latent_dim,
        }
    }

    /// Build and seed a fresh model. `cfg.classes` must be resolved (>= 2)
    /// by this point; `cfg.variant` decides which decoder branches exist.
    pub fn new(cfg: &RunConfig, seed: u64) -> Result<Self> {
        if cfg.classes < 2 {
            return Err(Error::Config(format!(
                "class count must be resolved to at least 2 before building a model, got {}",
                cfg.classes
            )));
        }
        let encoder = Encoder::new(Self::encoder_config(cfg))?;
        let dec_cfg = Self::decoder_config(cfg);
        let phys_dec = if cfg.variant.has_physics_decoder() {
            Some(PhysicsDecoder::new(dec_cfg.clone())?)
        } else {
            None
        };
        let nonphys_dec = if cfg.variant.has_nonphysics_decoder() {
            Some(NonPhysicsDecoder::new(dec_cfg)?)
        } else {
            None
        };
        let classifier = Classifier::new(ClassifierConfig {
            classes: cfg.classes,
            hidden: vec![cfg.hidden],
            latent_dim: cfg.latent_dim,
        })?;

        let mut store = ParamStore::new();
        let mut rng = seeded_rng(seed);
        encoder.init(&mut store, &mut rng);
        if let Some(d) = &phys_dec {
            d.init(&mut store, &mut rng);
        }
        if let Some(d) = &nonphys_dec {
            d.init(&mut store, &mut rng);
        }
        classifier.init(&mut store, &mut rng);
        Ok(Model {
            cfg: cfg.clone(),
            encoder,
            phys_dec,
            nonphys_dec,
            classifier,
            store,
        })
    }

    /// Solver environment for the physics branch: timestep from the frame
    /// rate, uniform masses, gravity along the negative vertical axis, and
    /// a contact plane at the lowest coordinate observed in the window.
    pub fn solver_setup(&self, obs: &SkeletonSequence) -> SolverSetup {
        let d = self.cfg.joints * self.cfg.dims;
        let mut world = World::new(self.cfg.gravity, self.cfg.dims, 1);
        if self.cfg.decoder_contact {
            let mut ground = f64::INFINITY;
            for t in 0..obs.frames {
                for j in 0..obs.joints {
                    ground = ground.min(obs.at(t, j, 1));
                }
            }
            if ground.is_finite() {
                world = world.with_contact(
                    ContactModel::new(ground, self.cfg.contact_eps).expect("eps validated"),
                );
            }
        }
        SolverSetup {
            dt: obs.dt(),
            world,
            mass: vec![self.cfg.mass; d],
        }
    }

    /// Record one forward pass. `obs` must be a preprocessed observed
    /// window; decoder branches are only built when `with_decoders` is set
    /// (the inference path never builds them).
    pub fn forward_nodes(
        &self,
        ctx: &mut GraphCtx,
        obs: &SkeletonSequence,
        action: usize,
        with_decoders: bool,
        reprojection: Reprojection,
    ) -> Result<ForwardNodes> {
        let mut out =
            self.forward_batch_nodes(ctx, &[(obs, action)], with_decoders, reprojection)?;
        Ok(out.pop().expect("one sample in, one forward out"))
    }

    /// Record a whole batch in one graph so batch normalization sees
    /// statistics across samples. Decoder branches stay per sample.
    pub fn forward_batch_nodes(
        &self,
        ctx: &mut GraphCtx,
        samples: &[(&SkeletonSequence, usize)],
        with_decoders: bool,
        reprojection: Reprojection,
    ) -> Result<Vec<ForwardNodes>> {
        let truncated: Vec<SkeletonSequence> = samples
            .iter()
            .map(|(obs, _)| truncate_frames(obs, self.cfg.tuple_frames))
            .collect::<Result<_>>()?;
        let batches: Vec<crate::skeldata::TupleBatch> = truncated
            .iter()
            .map(|t| split_tuples(t, self.cfg.tuple_frames))
            .collect::<Result<_>>()?;
        let items: Vec<(&crate::skeldata::TupleBatch, usize)> = batches
            .iter()
            .zip(samples)
            .map(|(b, (_, action))| (b, *action))
            .collect();
        let latents = self.encoder.forward_batch(ctx, &items)?;

        let mut out = Vec::with_capacity(samples.len());
        for (i, latent) in latents.into_iter().enumerate() {
            let logits = self.classifier.forward_logits(ctx, latent.p, latent.f)?;
            let (phys, nonphys) = if with_decoders {
                let phys = match &self.phys_dec {
                    Some(dec) => {
                        let solver = self.solver_setup(&truncated[i]);
                        Some(dec.forward(ctx, &latent, &solver, reprojection)?)
                    }
                    None => None,
                };
                let nonphys = match &self.nonphys_dec {
                    Some(dec) => Some(dec.forward(ctx, latent.p)?),
                    None => None,
                };
                (phys, nonphys)
            } else {
                (None, None)
            };
            out.push(ForwardNodes {
                latent,
                logits,
                phys,
                nonphys,
            });
        }
        Ok(out)
    }

    /// Encoder output for a preprocessed sequence, inference mode.
    pub fn encode(&self, obs: &SkeletonSequence, action: usize) -> Result<LatentState> {
        let mut ctx = GraphCtx::new(&self.store, false);
        let truncated = truncate_frames(obs, self.cfg.tuple_frames)?;
        let batch = split_tuples(&truncated, self.cfg.tuple_frames)?;
        let latent = self.encoder.forward(&mut ctx, &batch, action)?;
        Ok(LatentState {
            p: ctx.gb.value(latent.p).clone(),
            f: ctx.gb.value(latent.f).clone(),
            h: ctx.gb.value(latent.h).clone(),
        })
    }

    /// Class probabilities for a preprocessed sequence. Decoders are never
    /// touched on this path.
    pub fn classify(&self, obs: &SkeletonSequence, action: usize) -> Result<Vec<f64>> {
        let mut ctx = GraphCtx::new(&self.store, false);
        let nodes = self.forward_nodes(&mut ctx, obs, action, false, Reprojection::Learned)?;
        let probs = ctx.gb.softmax(nodes.logits)?;
        Ok(ctx.gb.value(probs).data().to_vec())
    }

    /// Argmax class, ties broken toward the lower index.
    pub fn predict(&self, obs: &SkeletonSequence, action: usize) -> Result<usize> {
        let probs = self.classify(obs, action)?;
        let mut best = 0;
        for (i, p) in probs.iter().enumerate() {
            if *p > probs[best] {
                best = i;
            }
        }
        Ok(best)
    }

    /// Run both decoder branches in inference mode and map the outputs back
    /// to the input scale using the stored preprocessing statistics.
    pub fn decode(
        &self,
        obs: &SkeletonSequence,
        stats: &PreprocessStats,
        action: usize,
    ) -> Result<DecodedFrames> {
        let mut ctx = GraphCtx::new(&self.store, false);
        let nodes = self.forward_nodes(&mut ctx, obs, action, true, Reprojection::Learned)?;
        let extract = |ctx: &GraphCtx, id: crate::diffcore::NodeId| -> Tensor {
            let mut t = ctx.gb.value(id).clone();
            stats.invert(t.data_mut());
            t
        };
        Ok(DecodedFrames {
            phys: nodes.phys.as_ref().map(|n| extract(&ctx, n.frames)),
            nonphys: nodes.nonphys.as_ref().map(|n| extract(&ctx, n.frames)),
        })
    }

    /// Trainable parameter count of the inference path (encoder plus
    /// classifier; both decoder branches are discarded at test time).
    pub fn inference_param_count(&self) -> usize {
        let mut total = 0;
        for (name, value, trainable) in self.store.iter() {
            if trainable && (name.starts_with("enc.") || name.starts_with("cls.")) {
                total += value.numel();
            }
        }
        total
    }

    pub fn trainable_param_count(&self) -> usize {
        self.store
            .iter()
            .filter(|(_, _, t)| *t)
            .map(|(_, v, _)| v.numel())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeldata::{preprocess, synthesize_sequence, SynthClass, SynthConfig};
    use crate::trainer::Variant;

    fn small_cfg() -> RunConfig {
        let mut cfg = RunConfig::profile("synthetic").unwrap();
        cfg.input_len = 16;
        cfg.pred_len = 4;
        cfg.channels = 8;
        cfg.heads = 2;
        cfg.blocks = 1;
        cfg.latent_dim = 4;
        cfg.decoder_dim = 8;
        cfg.hidden = 8;
        cfg.classes = 2;
        cfg
    }

    fn observed(seed: u64, cfg: &RunConfig) -> (SkeletonSequence, PreprocessStats) {
        let synth = SynthConfig {
            frames: cfg.input_len + cfg.pred_len,
            joints: cfg.joints,
            dims: cfg.dims,
            ..Default::default()
        };
        let seq = synthesize_sequence(SynthClass::ForcePerturbed, seed, &synth).unwrap();
        let obs = seq.window(0, cfg.input_len).unwrap();
        let (p, stats) = preprocess(&obs).unwrap();
        (p, stats)
    }

    #[test]
    fn classify_ignores_decoder_branches() {
        let cfg = small_cfg();
        let model = Model::new(&cfg, 3).unwrap();
        let (obs, _) = observed(5, &cfg);
        let with_decoders = model.classify(&obs, 0).unwrap();

        // Strip every decoder parameter; the classifier output must not move.
        let mut stripped = Model::new(&cfg, 3).unwrap();
        stripped
            .store
            .retain(|name| name.starts_with("enc.") || name.starts_with("cls."));
        let without = stripped.classify(&obs, 0).unwrap();
        let a: Vec<u64> = with_decoders.iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = without.iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn latent_shapes_follow_profile() {
        let mut cfg = RunConfig::profile("mmasd").unwrap();
        cfg.channels = 16;
        cfg.heads = 2;
        cfg.blocks = 1;
        cfg.latent_dim = 8;
        cfg.decoder_dim = 8;
        let model = Model::new(&cfg, 0).unwrap();
        let synth = SynthConfig {
            frames: 64,
            joints: 25,
            dims: 2,
            ..Default::default()
        };
        let seq = synthesize_sequence(SynthClass::PhysicsConsistent, 1, &synth).unwrap();
        let (obs, _) = preprocess(&seq).unwrap();
        let latent = model.encode(&obs, 0).unwrap();
        assert_eq!(latent.p.shape(), &[64, 8]);
        assert_eq!(latent.f.shape(), &[64, 8]);
        assert_eq!(latent.h.shape(), &[16, 8]);
    }

    #[test]
    fn decoded_frames_have_horizon_shape_and_are_finite() {
        let cfg = small_cfg();
        let model = Model::new(&cfg, 4).unwrap();
        let (obs, stats) = observed(6, &cfg);
        let decoded = model.decode(&obs, &stats, 0).unwrap();
        let phys = decoded.phys.unwrap();
        let nonphys = decoded.nonphys.unwrap();
        assert_eq!(phys.shape(), &[4, 10]);
        assert_eq!(nonphys.shape(), &[4, 10]);
        assert!(phys.all_finite());
        assert!(nonphys.all_finite());
    }

    #[test]
    fn enc_only_variant_has_no_decoder_parameters() {
        let mut cfg = small_cfg();
        cfg.variant = Variant::EncOnly;
        let model = Model::new(&cfg, 0).unwrap();
        assert!(model.phys_dec.is_none());
        assert!(model.nonphys_dec.is_none());
        for (name, _, _) in model.store.iter() {
            assert!(
                name.starts_with("enc.") || name.starts_with("cls."),
                "unexpected parameter {name}"
            );
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = small_cfg();
        let a = Model::new(&cfg, 11).unwrap();
        let b = Model::new(&cfg, 11).unwrap();
        for ((na, va, _), (nb, vb, _)) in a.store.iter().zip(b.store.iter()) {
            assert_eq!(na, nb);
            assert_eq!(va.data(), vb.data());
        }
        let c = Model::new(&cfg, 12).unwrap();
        let differs = a
            .store
            .iter()
            .zip(c.store.iter())
            .any(|((_, va, _), (_, vc, _))| va.data() != vc.data());
        assert!(differs);
    }
}
