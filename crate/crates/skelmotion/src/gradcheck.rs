//! Finite-difference verification harness.
//!
//! Every differentiable path in the crate is registered here as a builder
//! that produces a small scalar-output graph from a seed. The harness
//! compares reverse-mode gradients against central finite differences and
//! reports the worst relative error per path. The CLI `gradcheck` command
//! and the acceptance suite both run it.

use crate::diffcore::{finite_difference_gradient, Graph, GraphBuilder, Tensor};
use crate::error::Result;
use crate::init::{seeded_rng, uniform_tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-6;
/// Default pass tolerance on the floored relative error.
pub const GRAD_TOL: f64 = 1e-4;

/// Relative error with an absolute floor of one, so near-zero gradient
/// components are compared absolutely instead of amplifying FD noise.
pub fn floored_rel_err(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / ad.abs().max(fd.abs()).max(1.0)
}

/// Worst floored relative error between reverse-mode and finite-difference
/// gradients over every registered parameter component of `graph`.
pub fn check_graph(graph: &Graph, h: f64) -> Result<f64> {
    let (_, ad) = graph.param_gradients()?;
    let fd = finite_difference_gradient(graph, h)?;
    let mut worst: f64 = 0.0;
    for (name, fd_grad) in &fd {
        let zero = Tensor::zeros(fd_grad.shape());
        let ad_grad = ad.get(name).unwrap_or(&zero);
        for (a, f) in ad_grad.data().iter().zip(fd_grad.data()) {
            worst = worst.max(floored_rel_err(*a, *f));
        }
    }
    Ok(worst)
}

/// Outcome of checking one named path at several random points.
#[derive(Debug, Clone)]
pub struct PathReport {
    pub name: String,
    pub points: usize,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl PathReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err <= self.tol
    }
}

/// Check one path builder at `points` seeded random points.
pub fn check_path<F>(name: &str, points: usize, build: F) -> Result<PathReport>
where
    F: Fn(u64) -> Result<Graph>,
{
    let mut worst: f64 = 0.0;
    for p in 0..points {
        let graph = build(0x5eed_0000 + p as u64)?;
        worst = worst.max(check_graph(&graph, FD_STEP)?);
    }
    Ok(PathReport {
        name: name.to_string(),
        points,
        max_rel_err: worst,
        tol: GRAD_TOL,
    })
}

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    uniform_tensor(rng, &[r, c], -1.5, 1.5)
}

/// Values bounded away from zero, for relu kinks and divisions.
fn rand_mat_offset(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    let data: Vec<f64> = (0..r * c)
        .map(|_| {
            let mag = rng.gen_range(0.3..1.5);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::matrix(r, c, data).expect("shape/data agree")
}

type NamedBuilder = (&'static str, fn(u64) -> Result<Graph>);

/// The elementary op paths. Each builds a tiny scalar graph whose leaves
/// are registered parameters.
pub fn op_paths() -> Vec<NamedBuilder> {
    vec![
        ("op/matmul_chain", |seed| {
            let mut rng = seeded_rng(seed);
            let mut b = GraphBuilder::new();
            let x = b.param("x", rand_mat(&mut rng, 3, 3));
            let w1 = b.param("w1", rand_mat(&mut rng, 3, 3));
            let w2 = b.param("w2", rand_mat(&mut rng, 3, 3));
            let t = b.constant(rand_mat(&mut rng, 3, 3));
            let h1 = b.matmul(x, w1)?;
            let h2 = b.matmul(h1, w2)?;
            let loss = b.mse(h2, t)?;
            Ok(b.finish(loss))
        }),
        ("op/add_sub", |seed| {
            let mut rng = seeded_rng(seed);
            let mut b = GraphBuilder::new();
            let x = b.param("x", rand_mat(&mut rng, 2, 4));
            let y = b.param("y", rand_mat(&mut rng, 2, 4));
            let z = b.param("z", rand_mat(&mut rng, 2, 4));
            let s = b.add(x, y)?;
            let d = b.sub(s, z)?;
            let sq = b.mul(d, d)?;
            let loss = b.mean(sq)?;
            Ok(b.finish(loss))
        }),
        ("op/mul_div", |seed| {
            let mut rng = seeded_rng(seed);
            let mut b = GraphBuilder::new();
            let x = b.param("x", rand_mat(&mut rng, 3, 2));
            let y = b.param("y", rand_mat_offset(&mut rng, 3, 2));
            let p = b.mul(x, x)?;
            let q = b.div(p, y)?;
            let loss = b.mean(q)?;
            Ok(b.finish(loss))
        }),
        ("op/scale", |seed| {
            let mut rng = seeded_rng(seed);
            let mut b = GraphBuilder::new();
            let x = b.param("x", rand_mat(&mut rng, 2, 5));
            let s = b.scale(x, -2.5)?;
            let sq = b.mul(s, s)?;
            let loss = b.mean(sq)?;
            Ok(b.finish(loss))
        }),
        ("op/row_broadcast", |seed| {
            let mut rng = seeded_rng(seed);
            let mut b = GraphBuilder::new();
            let x = b.param("x", rand_mat(&mut rng, 4, 3));
            let bias = b.param("bias", uniform_tensor(&mut rng, &[3], -1.0, 1.0));
            let gain = b.param("gain", uniform_tensor(&mut rng, &[3], 0.5, 1.5));
            let h = b.add_row_vec(x, bias)?;
            let g = b.mul_row_vec(h, gain)?;
            let sq = b.mul(g, g)?;
            let loss = b.mean(sq)?;
            Ok(b.finish(loss))
        }),
        ("op/transpose", |seed| {
            let mut rng = seeded_rng(seed);
            let mut b = GraphBuilder::new();
            let x = b.param("x", rand_mat(&mut rng, 2, 4));
            let xt = b.transpose(x)?;
            let w = b.param("w", rand_mat(&mut rng, 2, 3));
            let h = b.matmul(xt, w)?;
            let loss = b.mean(h)?;
            Ok(b.finish(loss))
        }),
        ("op/relu", |seed| {
            let mut rng = seeded_rng(seed);
            let mut b = GraphBuilder::new();
            let x = b.param("x", rand_mat_offset(&mut rng, 3, 4));
            let r = b.relu(x)?;
            let t = b.constant(rand_mat(&mut rng, 3, 4));
            let loss = b.mse(r, t)?;
            Ok(b.finish(loss))
        }),
        ("op/softmax", |seed| {
            let mut rng = seeded_rng(seed);
            let mut b = GraphBuilder::new();
            let x = b.param("x", rand_mat(&mut rng, 3, 5));
            let s = b.softmax(x)?;
            let t = b.constant(rand_mat(&mut rng, 3, 5));
            let loss = b.mse(s, t)?;
            Ok(b.finish(loss))
        }),
        ("op/batch_norm_train", |seed| {
            let mut rng = seeded_rng(seed);
            let mut b = GraphBuilder::new();
            let x = b.param("x", rand_mat(&mut rng, 6, 3));
            let gamma = b.param("gamma", uniform_tensor(&mut rng, &[3], 0.5, 1.5));
            let beta = b.param("beta", uniform_tensor(&mut rng, &[3], -0.5, 0.5));
            let y = b.batch_norm(x, gamma, beta)?;
            let t = b.constant(rand_mat(&mut rng, 6, 3));
            let loss = b.mse(y, t)?;
            Ok(b.finish(loss))
        }),
        ("op/batch_norm_eval", |seed| {
            let mut rng = seeded_rng(seed);
            let mut b = GraphBuilder::new();
            let x = b.param("x", rand_mat(&mut rng, 4, 3));
            let gamma = b.param("gamma", uniform_tensor(&mut rng, &[3], 0.5, 1.5));
            let beta = b.param("beta", uniform_tensor(&mut rng, &[3], -0.5, 0.5));
            let mean = b.constant(uniform_tensor(&mut rng, &[3], -0.5, 0.5));
            let var = b.constant(uniform_tensor(&mut rng, &[3], 0.5, 2.0));
            let y = b.batch_norm_eval(x, gamma, beta, mean, var)?;
            let t = b.constant(rand_mat(&mut rng, 4, 3));
            let loss = b.mse(y, t)?;
            Ok(b.finish(loss))
        }),
        ("op/conv1d", |seed| {
            let mut rng = seeded_rng(seed);
            let mut b = GraphBuilder::new();
            let x = b.param("x", rand_mat(&mut rng, 7, 2));
            let w = b.param("w", rand_mat(&mut rng, 3, 6)); // C_out=3, C_in=2, K=3
            let bias = b.param("bias", uniform_tensor(&mut rng, &[3], -0.5, 0.5));
            let y = b.conv1d(x, w, bias, 3, 2)?;
            let t = b.constant(rand_mat(&mut rng, 7, 3));
            let loss = b.mse(y, t)?;
            Ok(b.finish(loss))
        }),
        ("op/concat_slice", |seed| {
            let mut rng = seeded_rng(seed);
            let mut b = GraphBuilder::new();
            let x = b.param("x", rand_mat(&mut rng, 2, 3));
            let y = b.param("y", rand_mat(&mut rng, 2, 3));
            let rows = b.concat_rows(vec![x, y])?;
            let cols = b.concat_cols(vec![x, y])?;
            let s1 = b.slice_rows(rows, 1, 3)?;
            let s2 = b.slice_cols(cols, 2, 5)?;
            let m1 = b.mean(s1)?;
            let m2 = b.mean(s2)?;
            let m1v = b.reshape(m1, vec![1, 1])?;
            let m2v = b.reshape(m2, vec![1, 1])?;
            let both = b.concat_cols(vec![m1v, m2v])?;
            let sq = b.mul(both, both)?;
            let loss = b.mean(sq)?;
            Ok(b.finish(loss))
        }),
        ("op/row_select_reshape", |seed| {
            let mut rng = seeded_rng(seed);
            let mut b = GraphBuilder::new();
            let table = b.param("table", rand_mat(&mut rng, 5, 4));
            let row = b.row_select(table, 2)?;
            let m = b.reshape(row, vec![2, 2])?;
            let sq = b.mul(m, m)?;
            let loss = b.mean(sq)?;
            Ok(b.finish(loss))
        }),
        ("op/gather_rows", |seed| {
            let mut rng = seeded_rng(seed);
            let mut b = GraphBuilder::new();
            let x = b.param("x", rand_mat(&mut rng, 4, 3));
            // Duplicated source rows exercise the scatter-add backward.
            let g = b.gather_rows(x, vec![2, 0, 2, 3, 1])?;
            let sq = b.mul(g, g)?;
            let loss = b.mean(sq)?;
            Ok(b.finish(loss))
        }),
        ("op/mean_rows", |seed| {
            let mut rng = seeded_rng(seed);
            let mut b = GraphBuilder::new();
            let x = b.param("x", rand_mat(&mut rng, 5, 3));
            let pooled = b.mean_rows(x)?;
            let sq = b.mul(pooled, pooled)?;
            let loss = b.mean(sq)?;
            Ok(b.finish(loss))
        }),
        ("op/mse", |seed| {
            let mut rng = seeded_rng(seed);
            let mut b = GraphBuilder::new();
            let a = b.param("a", rand_mat(&mut rng, 3, 3));
            let t = b.param("t", rand_mat(&mut rng, 3, 3));
            let loss = b.mse(a, t)?;
            Ok(b.finish(loss))
        }),
        ("op/cross_entropy", |seed| {
            let mut rng = seeded_rng(seed);
            let mut b = GraphBuilder::new();
            let logits = b.param("logits", rand_mat(&mut rng, 4, 3));
            let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..3)).collect();
            let loss = b.cross_entropy(logits, labels)?;
            Ok(b.finish(loss))
        }),
    ]
}

/// Run the elementary op suite.
pub fn run_op_suite(points: usize) -> Result<Vec<PathReport>> {
    let mut reports = Vec::new();
    for (name, build) in op_paths() {
        reports.push(check_path(name, points, build)?);
    }
    Ok(reports)
}

/// Like [`check_graph`] but finite-differencing a seeded random subset of
/// at most `max_components` parameter components. Module-level paths have
/// thousands of parameters; exhaustive central differences there would blow
/// the runtime budget, and the subset rotates with the seed so repeated
/// points cover different components.
pub fn check_graph_sampled(
    graph: &Graph,
    h: f64,
    max_components: usize,
    seed: u64,
) -> Result<f64> {
    use std::collections::HashMap;
    let (_, ad) = graph.param_gradients()?;
    // Flatten the (param, component) index space.
    let mut slots: Vec<(String, crate::diffcore::NodeId, usize)> = Vec::new();
    for (name, id) in graph.params() {
        for i in 0..graph.value(*id).numel() {
            slots.push((name.clone(), *id, i));
        }
    }
    let mut rng = seeded_rng(seed);
    use rand::seq::SliceRandom;
    slots.shuffle(&mut rng);
    slots.truncate(max_components);

    let mut worst: f64 = 0.0;
    for (name, id, comp) in slots {
        let base = graph.value(id).clone();
        let mut plus = base.clone();
        plus.data_mut()[comp] += h;
        let mut minus = base;
        minus.data_mut()[comp] -= h;
        let mut overrides = HashMap::new();
        overrides.insert(id, plus);
        let f_plus = graph.replay(&overrides)?.item();
        overrides.insert(id, minus);
        let f_minus = graph.replay(&overrides)?.item();
        let fd = (f_plus - f_minus) / (2.0 * h);
        let a = ad
            .get(&name)
            .map(|t| t.data()[comp])
            .unwrap_or(0.0);
        worst = worst.max(floored_rel_err(a, fd));
    }
    Ok(worst)
}

/// Check a module-level path at `points` seeded random points, sampling
/// `max_components` components per point.
pub fn check_path_sampled<F>(
    name: &str,
    points: usize,
    max_components: usize,
    build: F,
) -> Result<PathReport>
where
    F: Fn(u64) -> Result<Graph>,
{
    let mut worst: f64 = 0.0;
    for p in 0..points {
        let seed = 0xabc0_0000 + p as u64;
        let graph = build(seed)?;
        worst = worst.max(check_graph_sampled(&graph, FD_STEP, max_components, seed ^ 0x55)?);
    }
    Ok(PathReport {
        name: name.to_string(),
        points,
        max_rel_err: worst,
        tol: GRAD_TOL,
    })
}

// ---------------------------------------------------------------------------
// Module-level fixtures
// ---------------------------------------------------------------------------

fn tiny_run_config() -> crate::config::RunConfig {
    let mut cfg = crate::config::RunConfig::profile("synthetic").expect("profile exists");
    cfg.input_len = 8;
    cfg.pred_len = 4;
    cfg.joints = 3;
    cfg.dims = 2;
    cfg.tuple_frames = 2;
    cfg.channels = 8;
    cfg.heads = 2;
    cfg.blocks = 1;
    cfg.latent_dim = 4;
    cfg.decoder_dim = 8;
    cfg.hidden = 8;
    cfg.classes = 2;
    cfg
}

fn tiny_sample(seed: u64, cfg: &crate::config::RunConfig) -> Result<crate::trainer::PreparedSample> {
    use crate::skeldata::{synthesize_pair, SynthClass, SynthConfig};
    let synth = SynthConfig {
        frames: cfg.input_len + cfg.pred_len,
        joints: cfg.joints,
        dims: cfg.dims,
        fall_window: (2, 4),
        ..Default::default()
    };
    let class = if seed % 2 == 0 {
        SynthClass::PhysicsConsistent
    } else {
        SynthClass::ForcePerturbed
    };
    let pair = synthesize_pair(class, seed, &synth)?;
    let data = crate::trainer::Dataset::from_sequences(
        vec![(pair.child, Some(pair.partner))],
        cfg.input_len,
        cfg.pred_len,
    )?;
    Ok(data.samples.into_iter().next().expect("one sample"))
}

fn scalar_head_on_latent(
    ctx: &mut crate::nn::GraphCtx,
    latent: &crate::encoder::LatentNodes,
) -> Result<crate::diffcore::NodeId> {
    let sp = ctx.gb.mul(latent.p, latent.p)?;
    let sf = ctx.gb.mul(latent.f, latent.f)?;
    let sh = ctx.gb.mul(latent.h, latent.h)?;
    let mp = ctx.gb.mean(sp)?;
    let mf = ctx.gb.mean(sf)?;
    let mh = ctx.gb.mean(sh)?;
    let pf = ctx.gb.add(mp, mf)?;
    ctx.gb.add(pf, mh)
}

/// Module-boundary paths: encoder end-to-end, both decoders (the physics
/// branch with and without an active contact set), the plain physics step,
/// and the complete training objective.
pub fn model_paths() -> Vec<NamedBuilder> {
    vec![
        ("encoder/end_to_end_train", |seed| {
            let cfg = tiny_run_config();
            let model = crate::model::Model::new(&cfg, seed)?;
            let sample = tiny_sample(seed, &cfg)?;
            let mut ctx = crate::nn::GraphCtx::new(&model.store, true);
            let batch = crate::skeldata::split_tuples(&sample.obs, cfg.tuple_frames)?;
            let latent = model.encoder.forward(&mut ctx, &batch, 0)?;
            let out = scalar_head_on_latent(&mut ctx, &latent)?;
            let (graph, _) = ctx.finish(out);
            Ok(graph)
        }),
        ("encoder/end_to_end_eval", |seed| {
            let cfg = tiny_run_config();
            let model = crate::model::Model::new(&cfg, seed)?;
            let sample = tiny_sample(seed, &cfg)?;
            let mut ctx = crate::nn::GraphCtx::new(&model.store, false);
            let batch = crate::skeldata::split_tuples(&sample.obs, cfg.tuple_frames)?;
            let latent = model.encoder.forward(&mut ctx, &batch, 0)?;
            let out = scalar_head_on_latent(&mut ctx, &latent)?;
            let (graph, _) = ctx.finish(out);
            Ok(graph)
        }),
        ("decoders/nonphysics", |seed| {
            let cfg = tiny_run_config();
            let model = crate::model::Model::new(&cfg, seed)?;
            let sample = tiny_sample(seed, &cfg)?;
            let mut ctx = crate::nn::GraphCtx::new(&model.store, true);
            let nodes = model.forward_nodes(
                &mut ctx,
                &sample.obs,
                0,
                true,
                crate::decoders::Reprojection::Learned,
            )?;
            let pred = nodes.nonphys.expect("nonphysics branch exists").frames;
            let target = ctx.gb.constant(sample.target_self_norm.clone());
            let out = ctx.gb.mse(pred, target)?;
            let (graph, _) = ctx.finish(out);
            Ok(graph)
        }),
        ("decoders/physics_free_flight", |seed| {
            let mut cfg = tiny_run_config();
            cfg.decoder_contact = false;
            let model = crate::model::Model::new(&cfg, seed)?;
            let sample = tiny_sample(seed, &cfg)?;
            let mut ctx = crate::nn::GraphCtx::new(&model.store, true);
            let nodes = model.forward_nodes(
                &mut ctx,
                &sample.obs,
                0,
                true,
                crate::decoders::Reprojection::Learned,
            )?;
            let pred = nodes.phys.expect("physics branch exists").frames;
            let target = ctx.gb.constant(sample.target_self_norm.clone());
            let out = ctx.gb.mse(pred, target)?;
            let (graph, _) = ctx.finish(out);
            Ok(graph)
        }),
        ("decoders/physics_with_contact", |seed| {
            // Contact plane from the observed window, as in training; the
            // active set is fixed by the forward values.
            let cfg = tiny_run_config();
            let model = crate::model::Model::new(&cfg, seed)?;
            let sample = tiny_sample(seed, &cfg)?;
            let mut ctx = crate::nn::GraphCtx::new(&model.store, true);
            let nodes = model.forward_nodes(
                &mut ctx,
                &sample.obs,
                0,
                true,
                crate::decoders::Reprojection::Learned,
            )?;
            let pred = nodes.phys.expect("physics branch exists").frames;
            let target = ctx.gb.constant(sample.target_self_norm.clone());
            let out = ctx.gb.mse(pred, target)?;
            let (graph, _) = ctx.finish(out);
            Ok(graph)
        }),
        ("physdyn/step_contact", |seed| {
            use crate::physdyn::{physics_step_traced, ContactModel, World};
            let mut rng = seeded_rng(seed);
            let world = World::new(9.8, 2, 1)
                .with_contact(ContactModel::new(0.0, 1e-3).expect("valid contact"));
            let mut b = GraphBuilder::new();
            // One joint pressed onto the plane, one in flight.
            let q = b.param(
                "q",
                Tensor::vector(vec![rng.gen_range(-1.0..1.0), 0.0, rng.gen_range(-1.0..1.0), 1.5]),
            );
            let qdot = b.param(
                "qdot",
                Tensor::vector(vec![
                    rng.gen_range(-0.5..0.5),
                    -rng.gen_range(0.3..0.8),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                ]),
            );
            let f = b.param(
                "f",
                Tensor::vector((0..4).map(|_| rng.gen_range(-0.5..0.5)).collect()),
            );
            let mass = b.param(
                "mass",
                Tensor::vector((0..4).map(|_| rng.gen_range(0.5..2.0)).collect()),
            );
            let step = physics_step_traced(&mut b, q, qdot, f, mass, 0.01, &world)?;
            let qsq = b.mul(step.q_next, step.q_next)?;
            let vsq = b.mul(step.qdot_next, step.qdot_next)?;
            let m1 = b.mean(qsq)?;
            let m2 = b.mean(vsq)?;
            let out = b.add(m1, m2)?;
            Ok(b.finish(out))
        }),
        ("physdyn/rollout_contact", |seed| {
            use crate::physdyn::{rollout_traced, ContactModel, World};
            let mut rng = seeded_rng(seed);
            let world = World::new(9.8, 2, 1)
                .with_contact(ContactModel::new(0.0, 1e-3).expect("valid contact"));
            let mut b = GraphBuilder::new();
            let q = b.param(
                "q",
                Tensor::vector(vec![rng.gen_range(-0.5..0.5), 0.0, rng.gen_range(-0.5..0.5), 0.8]),
            );
            let qdot = b.param(
                "qdot",
                Tensor::vector(vec![
                    rng.gen_range(-0.3..0.3),
                    -0.5,
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                ]),
            );
            let forces = b.param("forces", uniform_tensor(&mut rng, &[5, 4], -0.5, 0.5));
            let mass = b.param("mass", Tensor::vector(vec![1.0, 1.0, 1.3, 1.3]));
            let steps = rollout_traced(&mut b, q, qdot, forces, mass, 0.02, &world)?;
            let mut acc = None;
            for s in &steps {
                let sq = b.mul(s.q_next, s.q_next)?;
                let m = b.mean(sq)?;
                acc = Some(match acc {
                    None => m,
                    Some(a) => b.add(a, m)?,
                });
            }
            Ok(b.finish(acc.expect("at least one step")))
        }),
        ("physdyn/lcp", |seed| {
            use crate::physdyn::LcpPgsOp;
            use std::rc::Rc;
            let mut rng = seeded_rng(seed);
            let n = 3;
            let g: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let delta = rng.gen_range(0.1..1.0);
            let mut a = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    let mut acc = if i == j { delta } else { 0.0 };
                    for k in 0..n {
                        acc += g[k * n + i] * g[k * n + j];
                    }
                    a[i * n + j] = acc;
                }
            }
            let bvec: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut b = GraphBuilder::new();
            let a_node = b.param("a", Tensor::matrix(n, n, a)?);
            let b_node = b.param("b", Tensor::vector(bvec));
            let tau = b.custom(Rc::new(LcpPgsOp), vec![a_node, b_node])?;
            let sq = b.mul(tau, tau)?;
            let out = b.mean(sq)?;
            Ok(b.finish(out))
        }),
        ("trainer/total_loss", |seed| {
            let cfg = tiny_run_config();
            let model = crate::model::Model::new(&cfg, seed)?;
            let sample = tiny_sample(seed, &cfg)?;
            let weights = crate::trainer::LossWeights::default();
            let nodes = crate::trainer::sample_loss(&model, &sample, &weights)?;
            Ok(nodes.graph)
        }),
    ]
}

/// Components sampled per point on module-level paths.
pub const MODULE_SAMPLE_COMPONENTS: usize = 48;

/// Run the module-boundary suite.
pub fn run_model_suite(points: usize) -> Result<Vec<PathReport>> {
    let mut reports = Vec::new();
    for (name, build) in model_paths() {
        reports.push(check_path_sampled(
            name,
            points,
            MODULE_SAMPLE_COMPONENTS,
            build,
        )?);
    }
    Ok(reports)
}

/// The whole verification battery: ops first, then module boundaries.
pub fn run_full_suite(points: usize) -> Result<Vec<PathReport>> {
    let mut reports = run_op_suite(points)?;
    reports.extend(run_model_suite(points)?);
    Ok(reports)
}

/// Render the report table.
pub fn format_reports(reports: &[PathReport]) -> String {
    let mut out = String::from(format!(
        "{:<34} {:>7} {:>13} {:>10} {:>6}\n",
        "path", "points", "max rel err", "tolerance", "state"
    ));
    for r in reports {
        out.push_str(&format!(
            "{:<34} {:>7} {:>13.3e} {:>10.0e} {:>6}\n",
            r.name,
            r.points,
            r.max_rel_err,
            r.tol,
            if r.passed() { "pass" } else { "FAIL" }
        ));
    }
    out
}
