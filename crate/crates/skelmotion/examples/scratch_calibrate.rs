//! Scratch calibration run (will be replaced by real examples).

use std::time::Instant;

use skelmotion::config::RunConfig;
use skelmotion::model::Model;
use skelmotion::skeldata::{synthesize_pair, SynthClass, SynthConfig};
use skelmotion::trainer::{
    evaluate, holdout_split, loss_weights, resolve_classes, train, Dataset, Hyperparams,
};

fn main() {
    // 1. Parameter counts under the dataset profiles.
    for profile in ["mmasd", "dream", "urfd", "synthetic", "fall"] {
        let mut cfg = RunConfig::profile(profile).unwrap();
        if cfg.classes == 0 {
            cfg.classes = 2;
        }
        let model = Model::new(&cfg, 0).unwrap();
        println!(
            "{profile}: inference params = {}, total trainable = {}",
            model.inference_param_count(),
            model.trainable_param_count()
        );
    }

    // 2. Synthetic severity task: generate, train, evaluate, time it.
    let cfg = {
        let mut c = RunConfig::profile("synthetic").unwrap();
        c.classes = 2;
        c.epochs = 12;
        c
    };
    let synth = SynthConfig {
        frames: cfg.input_len + cfg.pred_len,
        joints: cfg.joints,
        dims: cfg.dims,
        gravity: cfg.gravity,
        noise_sigma: cfg.sigma,
        force_amp: cfg.force_amp,
        ..Default::default()
    };
    let t0 = Instant::now();
    let count = 120;
    let mut children = Vec::new();
    for i in 0..count {
        let class = if i % 2 == 0 {
            SynthClass::PhysicsConsistent
        } else {
            SynthClass::ForcePerturbed
        };
        let pair = synthesize_pair(class, 1000 + i as u64, &synth).unwrap();
        children.push((pair.child, Some(pair.partner)));
    }

    // Diagnostics: motion range, constant-velocity-baseline separability,
    // and raw roughness separability.
    {
        let mut range_max: f64 = 0.0;
        let mut cv_scores: Vec<(f64, i64)> = Vec::new();
        let mut rough_scores: Vec<(f64, i64)> = Vec::new();
        for (child, _) in &children {
            let d = child.joints * child.dims;
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for v in child.data() {
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
            range_max = range_max.max(hi - lo);
            // Constant-velocity prediction of the future window.
            let t_in = cfg.input_len;
            let mut err = 0.0;
            for h in 0..cfg.pred_len {
                let mut frame_err = 0.0;
                for i in 0..d {
                    let last = child.frame(t_in - 1)[i];
                    let prev = child.frame(t_in - 2)[i];
                    let pred = last + (h as f64 + 1.0) * (last - prev);
                    let diff = pred - child.frame(t_in + h)[i];
                    frame_err += diff * diff;
                }
                err += frame_err / d as f64;
            }
            cv_scores.push((err, child.severity_label));
            // Roughness: mean squared *third* difference (force increments)
            // over the observed window — white force noise dominates there.
            let mut rough = 0.0;
            for t in 3..t_in {
                for i in 0..d {
                    let d3 = child.frame(t)[i] - 3.0 * child.frame(t - 1)[i]
                        + 3.0 * child.frame(t - 2)[i]
                        - child.frame(t - 3)[i];
                    rough += d3 * d3;
                }
            }
            rough_scores.push((rough, child.severity_label));
        }
        let best_threshold_acc = |scores: &[(f64, i64)]| -> f64 {
            let mut xs = scores.to_vec();
            xs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let n = xs.len();
            let mut best = 0;
            for cut in 0..=n {
                // predict 1 (perturbed) above the cut
                let correct = xs[..cut].iter().filter(|(_, l)| *l == 0).count()
                    + xs[cut..].iter().filter(|(_, l)| *l == 1).count();
                best = best.max(correct.max(n - correct));
            }
            100.0 * best as f64 / n as f64
        };
        println!("max coordinate range: {range_max:.2}");
        println!("constant-velocity baseline (optimal threshold): {:.1}%", best_threshold_acc(&cv_scores));
        println!("raw roughness stat (optimal threshold): {:.1}%", best_threshold_acc(&rough_scores));
    }

    let data = Dataset::from_sequences(children, cfg.input_len, cfg.pred_len).unwrap();
    println!("datagen: {:.1}s", t0.elapsed().as_secs_f64());

    let cfg = resolve_classes(&cfg, &data);
    let (train_idx, test_idx) = holdout_split(&data, 0.25, 7);
    println!("train {} / test {}", train_idx.len(), test_idx.len());

    let t1 = Instant::now();
    let mut model = Model::new(&cfg, 7).unwrap();
    let hyper = Hyperparams::from_config(&cfg);
    let weights = loss_weights(&cfg);
    let outcome = train(&mut model, &data, &train_idx, &hyper, &weights, 7).unwrap();
    let train_time = t1.elapsed().as_secs_f64();
    for c in &outcome.curves {
        println!(
            "epoch {:2}: total {:8.4} ados {:7.4} phys {:8.4} nonphys {:8.4} disc {:7.4}",
            c.epoch, c.total, c.ados, c.phys, c.nonphys, c.disc
        );
    }
    let report = evaluate(&model, &data, &test_idx, None, "full", 7).unwrap();
    println!(
        "train time {:.1}s ({:.2}s/epoch/sample x1000), accuracy {:.1}%",
        train_time,
        1000.0 * train_time / (hyper.epochs as f64 * train_idx.len() as f64),
        report.accuracy
    );
}
