//! The two generative branches.
//!
//! The physics decoder maps the last latent positions to generalized
//! coordinates, estimates a velocity from the last two, rolls the point-mass
//! solver forward under the encoder's horizon force tokens, and re-projects
//! the generalized trajectory to Cartesian joint coordinates with a small
//! cross-attention decoder over the latent positions.
//!
//! The non-physics decoder sees only the latent positions P: sinusoidal
//! queries cross-attend over the projected memory and a linear head emits
//! the future frames. It must never read F or the horizon tokens — that
//! separation is what pushes force information into the second latent half.

use rand_chacha::ChaCha8Rng;

use crate::diffcore::{NodeId, ParamStore, Tensor};
use crate::encoder::LatentNodes;
use crate::error::{Error, Result};
use crate::nn::{FeedForward, GraphCtx, Linear, MultiHeadAttention};
use crate::physdyn::{rollout_traced, World};
use crate::skeldata::positional_encoding_matrix;

#[derive(Debug, Clone)]
pub struct DecoderConfig {
    /// Predicted frames H.
    pub horizon: usize,
    /// Decoder feature width.
    pub dim: usize,
    pub heads: usize,
    pub out_joints: usize,
    pub out_dims: usize,
    /// Width D of the encoder latents consumed as memory.
    pub latent_dim: usize,
}

impl DecoderConfig {
    pub fn out_width(&self) -> usize {
        self.out_joints * self.out_dims
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("decoder horizon must be at least 1".into()));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "{} heads do not divide decoder width {}",
                self.heads, self.dim
            )));
        }
        if self.dim % 2 != 0 || self.latent_dim % 2 != 0 {
            return Err(Error::Config(
                "decoder and latent widths must be even for sinusoidal queries".into(),
            ));
        }
        Ok(())
    }
}

/// Solver environment for the physics branch's rollout.
#[derive(Debug, Clone)]
pub struct SolverSetup {
    pub dt: f64,
    pub world: World,
    /// Per-DOF masses, length out_joints * out_dims.
    pub mass: Vec<f64>,
}

/// How the generalized trajectory becomes Cartesian output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reprojection {
    /// Cross-attention decoder plus linear head (the trained path).
    Learned,
    /// Raw rollout states, bypassing the learned head. Test hook.
    Identity,
}

/// Outputs of one decoder forward: predicted frames (H x V0*C0, normalized
/// coordinates) and the features feeding the output head (the
/// second-to-last layer, exported for embedding visualisation).
pub struct DecodeNodes {
    pub frames: NodeId,
    pub features: NodeId,
}

pub struct NonPhysicsDecoder {
    pub cfg: DecoderConfig,
    mem_proj: Linear,
    attn: MultiHeadAttention,
    ffn: FeedForward,
    out: Linear,
}

impl NonPhysicsDecoder {
    pub fn new(cfg: DecoderConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(NonPhysicsDecoder {
            mem_proj: Linear::new("nonphys.mem", cfg.latent_dim, cfg.dim),
            attn: MultiHeadAttention::new("nonphys.attn", cfg.dim, cfg.heads)?,
            ffn: FeedForward::new("nonphys.ffn", cfg.dim, cfg.dim * 2),
            out: Linear::new("nonphys.out", cfg.dim, cfg.out_width()),
            cfg,
        })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        self.mem_proj.init(store, rng);
        self.attn.init(store, rng);
        self.ffn.init(store, rng);
        self.out.init(store, rng);
    }

    /// Decode future frames from the latent positions only.
    pub fn forward(&self, ctx: &mut GraphCtx, p: NodeId) -> Result<DecodeNodes> {
        let (frames_in, d) = ctx.gb.value(p).dims2()?;
        if d != self.cfg.latent_dim {
            return Err(Error::Shape {
                op: "nonphysics_decode",
                detail: format!("latent width {} but config says {}", d, self.cfg.latent_dim),
            });
        }
        // Frame-index encodings tell the memory which positions are recent.
        let pe_mem = ctx
            .gb
            .constant(positional_encoding_matrix(0, frames_in, d)?);
        let p_pos = ctx.gb.add(p, pe_mem)?;
        let mem = self.mem_proj.forward(ctx, p_pos)?;
        let queries = ctx.gb.constant(positional_encoding_matrix(
            frames_in,
            self.cfg.horizon,
            self.cfg.dim,
        )?);
        let a = self.attn.forward(ctx, queries, mem)?;
        let ff = self.ffn.forward(ctx, a)?;
        let features = ctx.gb.add(a, ff)?;
        let frames = self.out.forward(ctx, features)?;
        Ok(DecodeNodes { frames, features })
    }
}

/// Extra outputs of the physics branch.
pub struct PhysicsDecodeNodes {
    pub frames: NodeId,
    pub features: NodeId,
    /// H x d generalized positions straight out of the solver.
    pub trajectory: NodeId,
}

pub struct PhysicsDecoder {
    pub cfg: DecoderConfig,
    pos_map: Linear,
    force_map: Linear,
    mem_proj: Linear,
    traj_proj: Linear,
    attn: MultiHeadAttention,
    ffn: FeedForward,
    out: Linear,
}

impl PhysicsDecoder {
    pub fn new(cfg: DecoderConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.out_width();
        Ok(PhysicsDecoder {
            pos_map: Linear::new("phys.pos_map", cfg.latent_dim, d),
            force_map: Linear::new("phys.force_map", cfg.latent_dim, d),
            mem_proj: Linear::new("phys.mem", cfg.latent_dim, cfg.dim),
            traj_proj: Linear::new("phys.traj", d, cfg.dim),
            attn: MultiHeadAttention::new("phys.attn", cfg.dim, cfg.heads)?,
            ffn: FeedForward::new("phys.ffn", cfg.dim, cfg.dim * 2),
            out: Linear::new("phys.out", cfg.dim, d),
            cfg,
        })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        self.pos_map.init(store, rng);
        self.force_map.init(store, rng);
        self.mem_proj.init(store, rng);
        self.traj_proj.init(store, rng);
        self.attn.init(store, rng);
        self.ffn.init(store, rng);
        self.out.init(store, rng);
    }

    /// Decode future frames by rolling the solver under the encoder's
    /// horizon forces. The initial state comes from the last two latent
    /// positions mapped to generalized coordinates.
    pub fn forward(
        &self,
        ctx: &mut GraphCtx,
        latent: &LatentNodes,
        solver: &SolverSetup,
        reprojection: Reprojection,
    ) -> Result<PhysicsDecodeNodes> {
        let (frames_in, dl) = ctx.gb.value(latent.p).dims2()?;
        let d = self.cfg.out_width();
        if dl != self.cfg.latent_dim {
            return Err(Error::Shape {
                op: "physics_decode",
                detail: format!("latent width {} but config says {}", dl, self.cfg.latent_dim),
            });
        }
        if solver.mass.len() != d {
            return Err(Error::Shape {
                op: "physics_decode",
                detail: format!("{} masses for {} DOFs", solver.mass.len(), d),
            });
        }
        let (h_tokens, _) = ctx.gb.value(latent.h).dims2()?;
        if h_tokens != self.cfg.horizon {
            return Err(Error::Shape {
                op: "physics_decode",
                detail: format!("{} horizon tokens, config wants {}", h_tokens, self.cfg.horizon),
            });
        }
        if frames_in < 2 {
            return Err(Error::InvalidArgument(
                "physics decoding needs at least two observed frames".into(),
            ));
        }

        // Initial solver state from the last two latent positions.
        let last_two = ctx.gb.slice_rows(latent.p, frames_in - 2, frames_in)?;
        let mapped = self.pos_map.forward(ctx, last_two)?; // 2 x d
        let prev = ctx.gb.slice_rows(mapped, 0, 1)?;
        let last = ctx.gb.slice_rows(mapped, 1, 2)?;
        let q0 = ctx.gb.reshape(last, vec![d])?;
        let diff = ctx.gb.sub(last, prev)?;
        let vel = ctx.gb.scale(diff, 1.0 / solver.dt)?;
        let qdot0 = ctx.gb.reshape(vel, vec![d])?;

        // Per-step control forces from the horizon tokens.
        let forces = self.force_map.forward(ctx, latent.h)?; // H x d
        let mass = ctx.gb.constant(Tensor::vector(solver.mass.clone()));
        let steps = rollout_traced(&mut ctx.gb, q0, qdot0, forces, mass, solver.dt, &solver.world)?;
        let rows: Vec<NodeId> = steps
            .iter()
            .map(|s| ctx.gb.reshape(s.q_next, vec![1, d]))
            .collect::<Result<_>>()?;
        let trajectory = if rows.len() == 1 {
            rows[0]
        } else {
            ctx.gb.concat_rows(rows)?
        };

        if reprojection == Reprojection::Identity {
            return Ok(PhysicsDecodeNodes {
                frames: trajectory,
                features: trajectory,
                trajectory,
            });
        }

        // Cross-attend from the rollout back to the latent positions and
        // re-project to Cartesian coordinates.
        let pe_mem = ctx
            .gb
            .constant(positional_encoding_matrix(0, frames_in, dl)?);
        let p_pos = ctx.gb.add(latent.p, pe_mem)?;
        let mem = self.mem_proj.forward(ctx, p_pos)?;
        let qproj = self.traj_proj.forward(ctx, trajectory)?;
        let pe_q = ctx.gb.constant(positional_encoding_matrix(
            frames_in,
            self.cfg.horizon,
            self.cfg.dim,
        )?);
        let queries = ctx.gb.add(qproj, pe_q)?;
        let a = self.attn.forward(ctx, queries, mem)?;
        let ff = self.ffn.forward(ctx, a)?;
        let features = ctx.gb.add(a, ff)?;
        let frames = self.out.forward(ctx, features)?;
        Ok(PhysicsDecodeNodes {
            frames,
            features,
            trajectory,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::{seeded_rng, uniform_tensor};
    use crate::physdyn::{rollout, PhysicsState};

    fn cfg() -> DecoderConfig {
        DecoderConfig {
            horizon: 4,
            dim: 8,
            heads: 2,
            out_joints: 3,
            out_dims: 2,
            latent_dim: 4,
        }
    }

    fn latent_nodes(ctx: &mut GraphCtx, seed: u64, frames: usize, cfg: &DecoderConfig) -> LatentNodes {
        let mut rng = seeded_rng(seed);
        LatentNodes {
            p: ctx
                .gb
                .constant(uniform_tensor(&mut rng, &[frames, cfg.latent_dim], -1.0, 1.0)),
            f: ctx
                .gb
                .constant(uniform_tensor(&mut rng, &[frames, cfg.latent_dim], -1.0, 1.0)),
            h: ctx
                .gb
                .constant(uniform_tensor(&mut rng, &[cfg.horizon, cfg.latent_dim], -1.0, 1.0)),
        }
    }

    fn solver(cfg: &DecoderConfig) -> SolverSetup {
        SolverSetup {
            dt: 1.0 / 30.0,
            world: World::new(9.8, cfg.out_dims, 1),
            mass: vec![1.0; cfg.out_width()],
        }
    }

    #[test]
    fn output_shapes_match_config() {
        let cfg = cfg();
        let nonphys = NonPhysicsDecoder::new(cfg.clone()).unwrap();
        let phys = PhysicsDecoder::new(cfg.clone()).unwrap();
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(0);
        nonphys.init(&mut store, &mut rng);
        phys.init(&mut store, &mut rng);
        let mut ctx = GraphCtx::new(&store, false);
        let latent = latent_nodes(&mut ctx, 1, 6, &cfg);
        let np = nonphys.forward(&mut ctx, latent.p).unwrap();
        let ph = phys
            .forward(&mut ctx, &latent, &solver(&cfg), Reprojection::Learned)
            .unwrap();
        assert_eq!(ctx.gb.value(np.frames).shape(), &[4, 6]);
        assert_eq!(ctx.gb.value(ph.frames).shape(), &[4, 6]);
        assert_eq!(ctx.gb.value(ph.trajectory).shape(), &[4, 6]);
    }

    #[test]
    fn nonphysics_branch_cannot_see_forces() {
        let cfg = cfg();
        let nonphys = NonPhysicsDecoder::new(cfg.clone()).unwrap();
        let mut store = ParamStore::new();
        nonphys.init(&mut store, &mut seeded_rng(0));
        let run = |f_seed: u64| {
            let mut ctx = GraphCtx::new(&store, false);
            let mut latent = latent_nodes(&mut ctx, 1, 6, &cfg);
            // Replace F and H with unrelated values; P stays fixed.
            let mut rng = seeded_rng(f_seed);
            latent.f = ctx
                .gb
                .constant(uniform_tensor(&mut rng, &[6, cfg.latent_dim], -9.0, 9.0));
            latent.h = ctx
                .gb
                .constant(uniform_tensor(&mut rng, &[cfg.horizon, cfg.latent_dim], -9.0, 9.0));
            let out = nonphys.forward(&mut ctx, latent.p).unwrap();
            ctx.gb.value(out.frames).data().to_vec()
        };
        let a = run(100);
        let b = run(200);
        let bits_a: Vec<u64> = a.iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u64> = b.iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b, "nonphysics output depended on F or H");
    }

    #[test]
    fn physics_branch_responds_to_horizon_forces() {
        let cfg = cfg();
        let phys = PhysicsDecoder::new(cfg.clone()).unwrap();
        let mut store = ParamStore::new();
        phys.init(&mut store, &mut seeded_rng(0));
        let run = |h_seed: u64| {
            let mut ctx = GraphCtx::new(&store, false);
            let mut latent = latent_nodes(&mut ctx, 1, 6, &cfg);
            let mut rng = seeded_rng(h_seed);
            latent.h = ctx
                .gb
                .constant(uniform_tensor(&mut rng, &[cfg.horizon, cfg.latent_dim], -2.0, 2.0));
            let out = phys
                .forward(&mut ctx, &latent, &solver(&cfg), Reprojection::Learned)
                .unwrap();
            ctx.gb.value(out.frames).data().to_vec()
        };
        let a = run(300);
        let b = run(400);
        assert_ne!(a, b, "horizon force perturbation was invisible");
    }

    #[test]
    fn identity_bypass_with_zero_forces_is_ballistic_rollout() {
        let cfg = cfg();
        let phys = PhysicsDecoder::new(cfg.clone()).unwrap();
        let mut store = ParamStore::new();
        phys.init(&mut store, &mut seeded_rng(2));
        // Zero the force map so every control force is exactly zero.
        for name in ["phys.force_map.weight", "phys.force_map.bias"] {
            store.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        let setup = solver(&cfg);
        let mut ctx = GraphCtx::new(&store, false);
        let latent = latent_nodes(&mut ctx, 3, 6, &cfg);
        let out = phys
            .forward(&mut ctx, &latent, &setup, Reprojection::Identity)
            .unwrap();

        // Oracle: the plain rollout from the same initial state.
        let d = cfg.out_width();
        let traj = ctx.gb.value(out.trajectory).data().to_vec();
        let frames = ctx.gb.value(out.frames).data().to_vec();
        assert_eq!(traj, frames, "identity bypass must expose the raw rollout");

        // Reconstruct q0/qdot0 the same way the decoder does.
        let p = ctx.gb.value(latent.p);
        let w = store.get("phys.pos_map.weight").unwrap();
        let b = store.get("phys.pos_map.bias").unwrap();
        let map_row = |row: usize| -> Vec<f64> {
            let mut out = b.data().to_vec();
            for j in 0..d {
                for i in 0..cfg.latent_dim {
                    out[j] += p.data()[row * cfg.latent_dim + i] * w.data()[i * d + j];
                }
            }
            out
        };
        let last = map_row(5);
        let prev = map_row(4);
        let qdot0: Vec<f64> = last
            .iter()
            .zip(&prev)
            .map(|(a, b)| (a - b) / setup.dt)
            .collect();
        let state = PhysicsState::new(last, qdot0, setup.mass.clone(), setup.dt).unwrap();
        let expected = rollout(&state, &vec![vec![0.0; d]; cfg.horizon], &setup.world).unwrap();
        for (h, step) in expected.iter().enumerate() {
            for (i, q) in step.q.iter().enumerate() {
                assert!(
                    (traj[h * d + i] - q).abs() < 1e-12,
                    "step {h} dof {i}: {} vs {}",
                    traj[h * d + i],
                    q
                );
            }
        }
    }

    #[test]
    fn outputs_finite_for_finite_inputs() {
        let cfg = cfg();
        let nonphys = NonPhysicsDecoder::new(cfg.clone()).unwrap();
        let phys = PhysicsDecoder::new(cfg.clone()).unwrap();
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(4);
        nonphys.init(&mut store, &mut rng);
        phys.init(&mut store, &mut rng);
        for seed in 0..5 {
            let mut ctx = GraphCtx::new(&store, false);
            let latent = latent_nodes(&mut ctx, seed, 6, &cfg);
            let np = nonphys.forward(&mut ctx, latent.p).unwrap();
            let ph = phys
                .forward(&mut ctx, &latent, &solver(&cfg), Reprojection::Learned)
                .unwrap();
            assert!(ctx.gb.value(np.frames).all_finite());
            assert!(ctx.gb.value(ph.frames).all_finite());
        }
    }
}
