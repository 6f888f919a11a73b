//! Scratch sweep over noise scale and model size (temporary).

use std::time::Instant;

use skelmotion::config::RunConfig;
use skelmotion::model::Model;
use skelmotion::skeldata::{synthesize_pair, SynthClass, SynthConfig};
use skelmotion::trainer::{
    evaluate, holdout_split, loss_weights, resolve_classes, train, Dataset, Hyperparams, Variant,
};

fn make_data(cfg: &RunConfig, count: usize, seed0: u64) -> Dataset {
    let synth = SynthConfig {
        frames: cfg.input_len + cfg.pred_len,
        joints: cfg.joints,
        dims: cfg.dims,
        gravity: cfg.gravity,
        noise_sigma: cfg.sigma,
        force_amp: cfg.force_amp,
        ..Default::default()
    };
    let mut children = Vec::new();
    for i in 0..count {
        let class = if i % 2 == 0 {
            SynthClass::PhysicsConsistent
        } else {
            SynthClass::ForcePerturbed
        };
        let pair = synthesize_pair(class, seed0 + i as u64, &synth).unwrap();
        children.push((pair.child, Some(pair.partner)));
    }
    Dataset::from_sequences(children, cfg.input_len, cfg.pred_len).unwrap()
}

fn cv_baseline(data: &Dataset, pred_len: usize) -> f64 {
    // Constant-velocity future error, optimal threshold over the dataset.
    let mut scores: Vec<(f64, usize)> = Vec::new();
    for s in &data.samples {
        let obs = &s.obs;
        let d = obs.joints * obs.dims;
        let t_in = obs.frames;
        let mut err = 0.0;
        for h in 0..pred_len {
            let mut fe = 0.0;
            for i in 0..d {
                let last = obs.frame(t_in - 1)[i];
                let prev = obs.frame(t_in - 2)[i];
                let pred = last + (h as f64 + 1.0) * (last - prev);
                let diff = pred - s.target_self_norm.data()[h * d + i];
                fe += diff * diff;
            }
            err += fe / d as f64;
        }
        scores.push((err, s.label_index));
    }
    scores.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let n = scores.len();
    let mut best = 0;
    for cut in 0..=n {
        let correct = scores[..cut].iter().filter(|(_, l)| *l == 0).count()
            + scores[cut..].iter().filter(|(_, l)| *l == 1).count();
        best = best.max(correct.max(n - correct));
    }
    100.0 * best as f64 / n as f64
}

fn main() {
    for sigma in [1.2, 2.0] {
        for (label, channels, heads, blocks, latent, dec, hidden) in [
            ("d2", 32usize, 4usize, 2usize, 2usize, 16usize, 16usize),
            ("d4", 32, 4, 2, 4, 16, 16),
            ("d8", 32, 4, 2, 8, 16, 32),
        ] {
            let mut cfg = RunConfig::profile("synthetic").unwrap();
            cfg.classes = 2;
            cfg.epochs = 15;
            cfg.sigma = sigma;
            cfg.channels = channels;
            cfg.heads = heads;
            cfg.blocks = blocks;
            cfg.latent_dim = latent;
            cfg.decoder_dim = dec;
            cfg.hidden = hidden;
            let data = make_data(&cfg, 200, 5000);
            let cfg = resolve_classes(&cfg, &data);
            let baseline = cv_baseline(&data, cfg.pred_len);
            let (train_idx, test_idx) = holdout_split(&data, 0.25, 7);

            for variant in [Variant::EncOnly, Variant::Full] {
                let mut c = cfg.clone();
                c.variant = variant;
                let t0 = Instant::now();
                let mut model = Model::new(&c, 7).unwrap();
                let hyper = Hyperparams::from_config(&c);
                let weights = loss_weights(&c);
                let out = train(&mut model, &data, &train_idx, &hyper, &weights, 7).unwrap();
                let last = out.curves.last().unwrap();
                let test = evaluate(&model, &data, &test_idx, None, variant.as_str(), 7).unwrap();
                let tr = evaluate(&model, &data, &train_idx, None, variant.as_str(), 7).unwrap();
                println!(
                    "sigma {sigma} {label} {:>9} params {:>6}: CE {:.3}, train {:.1}%, test {:.1}%, baseline {:.1}%, {:.0}s",
                    variant.as_str(),
                    model.trainable_param_count(),
                    last.ados,
                    tr.accuracy,
                    test.accuracy,
                    baseline,
                    t0.elapsed().as_secs_f64()
                );
            }
        }
    }
}
