//! Synthetic skeleton sequences driven by the point-mass dynamics.
//!
//! Every generated trajectory is produced by iterating the actual physics
//! step, so physics-consistent sequences satisfy the step recurrence
//! exactly. Four classes:
//!
//! - `physics-consistent`: smooth low-frequency control forces, optionally
//!   compensating gravity so the figure hovers.
//! - `force-perturbed`: the same smooth forces plus i.i.d. per-frame force
//!   noise of scale sigma.
//! - `stable`: the figure rests on a ground plane under gravity, swaying
//!   laterally.
//! - `fall`: like `stable` until the supporting contact is removed partway
//!   through (the plane drops away) and the figure falls to a lower floor.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::init::{seeded_rng, standard_normal};
use crate::physdyn::{physics_step, ContactModel, PhysicsState, World};
use crate::skeldata::sequence::{Role, SkeletonSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthClass {
    PhysicsConsistent,
    ForcePerturbed,
    Fall,
    Stable,
}

impl SynthClass {
    pub fn label(&self) -> i64 {
        match self {
            SynthClass::PhysicsConsistent | SynthClass::Stable => 0,
            SynthClass::ForcePerturbed | SynthClass::Fall => 1,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "physics-consistent" => Ok(SynthClass::PhysicsConsistent),
            "force-perturbed" => Ok(SynthClass::ForcePerturbed),
            "fall" => Ok(SynthClass::Fall),
            "stable" => Ok(SynthClass::Stable),
            other => Err(Error::InvalidArgument(format!("unknown synthesis class `{other}`"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SynthClass::PhysicsConsistent => "physics-consistent",
            SynthClass::ForcePerturbed => "force-perturbed",
            SynthClass::Fall => "fall",
            SynthClass::Stable => "stable",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    /// Total frames generated (observed window plus prediction target).
    pub frames: usize,
    pub joints: usize,
    pub dims: usize,
    pub fps: f64,
    pub gravity: f64,
    /// Scale of the i.i.d. per-frame force noise in the perturbed class.
    pub noise_sigma: f64,
    /// Amplitude of the smooth sinusoidal control forces.
    pub force_amp: f64,
    /// Restoring-spring stiffness toward the base pose; keeps the motion
    /// bounded at body scale.
    pub spring: f64,
    /// Velocity damping coefficient.
    pub damping: f64,
    /// Add +m*g so hover classes do not sink.
    pub compensate_gravity: bool,
    /// Frame range (inclusive-exclusive) in which a fall begins.
    pub fall_window: (usize, usize),
    /// How far the supporting plane drops in a fall.
    pub fall_drop: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            frames: 80,
            joints: 5,
            dims: 2,
            fps: 30.0,
            gravity: 9.8,
            noise_sigma: 1.2,
            force_amp: 4.0,
            spring: 8.0,
            damping: 1.5,
            compensate_gravity: true,
            fall_window: (20, 30),
            fall_drop: 2.0,
        }
    }
}

impl SynthConfig {
    fn dof(&self) -> usize {
        self.joints * self.dims
    }

    fn validate(&self) -> Result<()> {
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "noise sigma must be nonnegative, got {}",
                self.noise_sigma
            )));
        }
        if self.frames < 2 {
            return Err(Error::InvalidArgument("need at least two frames".into()));
        }
        if self.fall_window.0 >= self.fall_window.1 {
            return Err(Error::InvalidArgument(format!(
                "fall window {:?} is empty",
                self.fall_window
            )));
        }
        Ok(())
    }
}

/// Smooth per-DOF control force: a sum of three low-frequency sinusoids.
struct SmoothForce {
    amp: Vec<[f64; 3]>,
    omega: Vec<[f64; 3]>,
    phase: Vec<[f64; 3]>,
}

impl SmoothForce {
    fn sample(rng: &mut ChaCha8Rng, dof: usize, amp: f64) -> Self {
        let mut f = SmoothForce {
            amp: Vec::with_capacity(dof),
            omega: Vec::with_capacity(dof),
            phase: Vec::with_capacity(dof),
        };
        for _ in 0..dof {
            let mut a = [0.0; 3];
            let mut w = [0.0; 3];
            let mut p = [0.0; 3];
            for k in 0..3 {
                a[k] = rng.gen_range(-amp..=amp);
                w[k] = rng.gen_range(0.4..2.5);
                p[k] = rng.gen_range(0.0..std::f64::consts::TAU);
            }
            f.amp.push(a);
            f.omega.push(w);
            f.phase.push(p);
        }
        f
    }

    fn at(&self, dof: usize, time: f64) -> f64 {
        (0..3)
            .map(|k| self.amp[dof][k] * (self.omega[dof][k] * time + self.phase[dof][k]).sin())
            .sum()
    }
}

/// Base pose: a slightly bent chain. `feet_on_ground` pins the lowest
/// joints to height zero for the contact classes.
fn base_pose(rng: &mut ChaCha8Rng, cfg: &SynthConfig, feet_on_ground: bool) -> Vec<f64> {
    let mut q = vec![0.0; cfg.dof()];
    for j in 0..cfg.joints {
        let spread = j as f64 * 0.5;
        for c in 0..cfg.dims {
            let idx = j * cfg.dims + c;
            q[idx] = if c == 1 {
                if feet_on_ground {
                    0.0
                } else {
                    2.0 + 0.4 * j as f64 + rng.gen_range(-0.05..0.05)
                }
            } else if c == 0 {
                0.3 * (j as f64).sin() + spread * 0.2 + rng.gen_range(-0.05..0.05)
            } else {
                rng.gen_range(-0.1..0.1)
            };
        }
    }
    q
}

/// Generate one sequence. The same seed always yields the same sequence,
/// and the perturbed class with sigma = 0 reproduces the consistent class
/// because the smooth force parameters are drawn before any noise.
pub fn synthesize_sequence(
    class: SynthClass,
    seed: u64,
    cfg: &SynthConfig,
) -> Result<SkeletonSequence> {
    cfg.validate()?;
    if class == SynthClass::Fall && cfg.fall_window.1 >= cfg.frames {
        return Err(Error::InvalidArgument(format!(
            "fall window {:?} does not fit {} frames",
            cfg.fall_window, cfg.frames
        )));
    }
    let mut rng = seeded_rng(seed);
    let dof = cfg.dof();
    let dt = 1.0 / cfg.fps;
    let grounded = matches!(class, SynthClass::Fall | SynthClass::Stable);

    let q0 = base_pose(&mut rng, cfg, grounded);
    let smooth = SmoothForce::sample(&mut rng, dof, cfg.force_amp);
    // Fall onset is drawn for both grounded classes to keep their RNG
    // streams aligned; the stable class simply ignores it.
    let fall_at = rng.gen_range(cfg.fall_window.0..cfg.fall_window.1);

    let world_free = World::new(cfg.gravity, cfg.dims, 1);
    let world_ground = world_free.with_contact(ContactModel::new(0.0, 1e-3)?);
    let world_dropped = world_free.with_contact(ContactModel::new(-cfg.fall_drop, 1e-3)?);

    let mut state = PhysicsState::new(q0, vec![0.0; dof], vec![1.0; dof], dt)?;
    let mut data = Vec::with_capacity(cfg.frames * dof);
    data.extend_from_slice(&state.q);

    let q_base = state.q.clone();
    for t in 1..cfg.frames {
        let time = t as f64 * dt;
        let mut force = vec![0.0; dof];
        for i in 0..dof {
            let vertical = i % cfg.dims == 1;
            // Grounded classes only steer laterally; the plane carries them.
            if !grounded || !vertical {
                force[i] = smooth.at(i, time)
                    + cfg.spring * (q_base[i] - state.q[i])
                    - cfg.damping * state.qdot[i];
            }
            if cfg.compensate_gravity && !grounded && vertical {
                force[i] += state.mass[i] * cfg.gravity;
            }
        }
        if class == SynthClass::ForcePerturbed {
            for f in force.iter_mut() {
                *f += cfg.noise_sigma * standard_normal(&mut rng);
            }
        }
        let world = match class {
            SynthClass::PhysicsConsistent | SynthClass::ForcePerturbed => &world_free,
            SynthClass::Stable => &world_ground,
            SynthClass::Fall => {
                if t < fall_at {
                    &world_ground
                } else {
                    &world_dropped
                }
            }
        };
        state = physics_step(&state, &force, world)?;
        data.extend_from_slice(&state.q);
    }

    let mut seq = SkeletonSequence::new(cfg.frames, cfg.joints, cfg.dims, cfg.fps, data)?;
    seq.severity_label = class.label();
    seq.subject_id = format!("synth-{seed}");
    seq.role = Role::Child;
    Ok(seq)
}

/// A child sequence plus its physics-consistent twin. The twin shares every
/// smooth-force parameter and differs only by the absence of force noise —
/// it is the "typically behaving" counterpart used as the physics branch's
/// target.
pub struct PairedSequences {
    pub child: SkeletonSequence,
    pub partner: SkeletonSequence,
}

pub fn synthesize_pair(
    class: SynthClass,
    seed: u64,
    cfg: &SynthConfig,
) -> Result<PairedSequences> {
    let child = synthesize_sequence(class, seed, cfg)?;
    let mut partner = synthesize_sequence(SynthClass::PhysicsConsistent, seed, cfg)?;
    partner.role = Role::InteractionPartner;
    partner.severity_label = child.severity_label;
    partner.subject_id = child.subject_id.clone();
    Ok(PairedSequences { child, partner })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let cfg = SynthConfig::default();
        let a = synthesize_sequence(SynthClass::ForcePerturbed, 5, &cfg).unwrap();
        let b = synthesize_sequence(SynthClass::ForcePerturbed, 5, &cfg).unwrap();
        assert_eq!(a.data(), b.data());
        let c = synthesize_sequence(SynthClass::ForcePerturbed, 6, &cfg).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn zero_sigma_perturbed_equals_consistent() {
        let cfg = SynthConfig {
            noise_sigma: 0.0,
            ..Default::default()
        };
        let a = synthesize_sequence(SynthClass::PhysicsConsistent, 11, &cfg).unwrap();
        let b = synthesize_sequence(SynthClass::ForcePerturbed, 11, &cfg).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn negative_sigma_rejected() {
        let cfg = SynthConfig {
            noise_sigma: -0.1,
            ..Default::default()
        };
        assert!(synthesize_sequence(SynthClass::PhysicsConsistent, 1, &cfg).is_err());
    }

    #[test]
    fn zero_forces_give_ballistic_trajectory() {
        let cfg = SynthConfig {
            force_amp: 0.0,
            spring: 0.0,
            damping: 0.0,
            compensate_gravity: false,
            frames: 30,
            ..Default::default()
        };
        let seq = synthesize_sequence(SynthClass::PhysicsConsistent, 3, &cfg).unwrap();
        // Oracle: iterate the ballistic recurrence from the first frame.
        let dt = 1.0 / cfg.fps;
        let dof = cfg.joints * cfg.dims;
        let mut q: Vec<f64> = seq.frame(0).to_vec();
        let mut qdot = vec![0.0; dof];
        for t in 1..cfg.frames {
            for i in 0..dof {
                q[i] += dt * qdot[i];
                if i % cfg.dims == 1 {
                    qdot[i] -= dt * cfg.gravity;
                }
            }
            for (i, expect) in q.iter().enumerate() {
                assert!(
                    (seq.frame(t)[i] - expect).abs() <= 1e-12,
                    "frame {t} dof {i}"
                );
            }
        }
    }

    #[test]
    fn stable_class_stays_on_plane() {
        let cfg = SynthConfig {
            frames: 64,
            ..Default::default()
        };
        let seq = synthesize_sequence(SynthClass::Stable, 21, &cfg).unwrap();
        for t in 0..seq.frames {
            for j in 0..seq.joints {
                let y = seq.at(t, j, 1);
                assert!(y >= -1e-6, "penetration at frame {t} joint {j}: {y}");
                assert!(y <= 0.5, "stable figure lifted off at frame {t}: {y}");
            }
        }
    }

    #[test]
    fn fall_class_descends_after_support_removed() {
        let cfg = SynthConfig {
            frames: 64,
            ..Default::default()
        };
        let seq = synthesize_sequence(SynthClass::Fall, 8, &cfg).unwrap();
        let first_y: f64 = (0..seq.joints).map(|j| seq.at(0, j, 1)).sum::<f64>() / seq.joints as f64;
        let last_y: f64 =
            (0..seq.joints).map(|j| seq.at(seq.frames - 1, j, 1)).sum::<f64>() / seq.joints as f64;
        assert!(
            last_y < first_y - 0.5 * cfg.fall_drop,
            "no descent: {first_y} -> {last_y}"
        );
        // Lands on the lower floor. The position update precedes the
        // velocity correction, so impact can overshoot by up to two steps
        // of travel at the impact speed.
        let max_overshoot = 2.0 * (2.0 * cfg.gravity * (cfg.fall_drop + 0.5)).sqrt() / cfg.fps;
        for t in 0..seq.frames {
            for j in 0..seq.joints {
                assert!(seq.at(t, j, 1) >= -cfg.fall_drop - max_overshoot - 1e-6);
            }
        }
    }

    #[test]
    fn paired_partner_is_noise_free_twin() {
        let cfg = SynthConfig::default();
        let pair = synthesize_pair(SynthClass::ForcePerturbed, 17, &cfg).unwrap();
        assert_eq!(pair.partner.role, Role::InteractionPartner);
        let consistent = synthesize_sequence(SynthClass::PhysicsConsistent, 17, &cfg).unwrap();
        assert_eq!(pair.partner.data(), consistent.data());
        assert_ne!(pair.child.data(), pair.partner.data());
    }
}
