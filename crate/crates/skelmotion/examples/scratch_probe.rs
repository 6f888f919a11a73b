//! Stage-by-stage manual replication of the init-time encoder (temporary).

use skelmotion::config::RunConfig;
use skelmotion::model::Model;
use skelmotion::skeldata::{positional_encoding, synthesize_pair, SynthClass, SynthConfig};
use skelmotion::trainer::{resolve_classes, Dataset};

fn lda_acc(feats: &[(Vec<f64>, usize)]) -> f64 {
    let d = feats[0].0.len();
    let mut mu = vec![vec![0.0; d]; 2];
    let mut counts = [0usize; 2];
    for (f, l) in feats {
        counts[*l] += 1;
        for (m, v) in mu[*l].iter_mut().zip(f) {
            *m += v;
        }
    }
    for (m, n) in mu.iter_mut().zip(counts) {
        for v in m.iter_mut() {
            *v /= n as f64;
        }
    }
    let mut sw = nalgebra::DMatrix::<f64>::zeros(d, d);
    for (f, l) in feats {
        for i in 0..d {
            for j in 0..d {
                sw[(i, j)] += (f[i] - mu[*l][i]) * (f[j] - mu[*l][j]);
            }
        }
    }
    for i in 0..d {
        sw[(i, i)] += 1e-3 * (sw[(i, i)] + 1e-9);
    }
    let diff = nalgebra::DVector::from_iterator(d, (0..d).map(|i| mu[1][i] - mu[0][i]));
    let w = sw.lu().solve(&diff).expect("solvable");
    let proj = |f: &[f64]| -> f64 { f.iter().zip(w.iter()).map(|(a, b)| a * b).sum() };
    let m0: f64 = proj(&mu[0]);
    let m1: f64 = proj(&mu[1]);
    let mid = (m0 + m1) / 2.0;
    let correct = feats
        .iter()
        .filter(|(f, l)| ((proj(f) > mid) == (m1 > m0)) == (*l == 1))
        .count();
    100.0 * correct as f64 / feats.len() as f64
}

/// Single-feature threshold accuracy per dimension; returns the best.
fn best_single_dim(feats: &[(Vec<f64>, usize)]) -> (usize, f64) {
    let d = feats[0].0.len();
    let mut best = (0, 0.0);
    for k in 0..d {
        let mut xs: Vec<(f64, usize)> = feats.iter().map(|(f, l)| (f[k], *l)).collect();
        xs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let n = xs.len();
        let mut best_k = 0;
        for cut in 0..=n {
            let correct = xs[..cut].iter().filter(|(_, l)| *l == 0).count()
                + xs[cut..].iter().filter(|(_, l)| *l == 1).count();
            best_k = best_k.max(correct.max(n - correct));
        }
        let acc = 100.0 * best_k as f64 / n as f64;
        if acc > best.1 {
            best = (k, acc);
        }
    }
    best
}

fn main() {
    let mut cfg = RunConfig::profile("synthetic").unwrap();
    cfg.classes = 2;
    cfg.sigma = 2.0;
    cfg.channels = 32;
    cfg.heads = 4;
    cfg.blocks = 2;
    cfg.latent_dim = 16;
    let synth = SynthConfig {
        frames: cfg.input_len + cfg.pred_len,
        joints: cfg.joints,
        dims: cfg.dims,
        noise_sigma: cfg.sigma,
        force_amp: cfg.force_amp,
        ..Default::default()
    };
    let mut children = Vec::new();
    for i in 0..100 {
        let class = if i % 2 == 0 {
            SynthClass::PhysicsConsistent
        } else {
            SynthClass::ForcePerturbed
        };
        let pair = synthesize_pair(class, 9000 + i as u64, &synth).unwrap();
        children.push((pair.child, Some(pair.partner)));
    }
    let data = Dataset::from_sequences(children, cfg.input_len, cfg.pred_len).unwrap();
    let cfg = resolve_classes(&cfg, &data);
    let model = Model::new(&cfg, 3).unwrap();

    let c_out = cfg.channels;
    let c_in = cfg.dims;
    let w = model.store.get("enc.feature_map.weight").unwrap();
    let joints = cfg.joints;
    let frames = cfg.input_len;

    // Stage 1: conv outputs per sample: tokens (frames*joints) x channels.
    let conv: Vec<Vec<f64>> = data
        .samples
        .iter()
        .map(|s| {
            let obs = &s.obs;
            let mut out = vec![0.0; frames * joints * c_out];
            for t in 0..frames {
                for j in 0..joints {
                    for co in 0..c_out {
                        let mut acc = 0.0;
                        for k in 0..5usize {
                            let tf = t as isize + k as isize - 2;
                            if tf < 0 || tf >= frames as isize {
                                continue;
                            }
                            for ci in 0..c_in {
                                acc += w.data()[co * (c_in * 5) + ci * 5 + k]
                                    * obs.at(tf as usize, j, ci);
                            }
                        }
                        out[(t * joints + j) * c_out + co] = acc;
                    }
                }
            }
            out
        })
        .collect();

    let pooled = |stage: &[Vec<f64>]| -> Vec<(Vec<f64>, usize)> {
        stage
            .iter()
            .zip(&data.samples)
            .map(|(tokens, s)| {
                let n = tokens.len() / c_out;
                let mut f = vec![0.0; c_out];
                for i in 0..n {
                    for c in 0..c_out {
                        f[c] += tokens[i * c_out + c] / n as f64;
                    }
                }
                (f, s.label_index)
            })
            .collect()
    };
    let abs_pooled = |stage: &[Vec<f64>]| -> Vec<(Vec<f64>, usize)> {
        stage
            .iter()
            .zip(&data.samples)
            .map(|(tokens, s)| {
                let n = tokens.len() / c_out;
                let mut f = vec![0.0; c_out];
                for i in 0..n {
                    for c in 0..c_out {
                        f[c] += tokens[i * c_out + c].abs() / n as f64;
                    }
                }
                (f, s.label_index)
            })
            .collect()
    };

    let p1 = abs_pooled(&conv);
    println!(
        "stage conv |abs|: LDA {:.1}%, best single dim {:?}",
        lda_acc(&p1),
        best_single_dim(&p1)
    );
    // Per-channel class statistics of the |abs|-pooled conv features.
    for c in 0..c_out {
        let vals = |label: usize| -> Vec<f64> {
            p1.iter()
                .filter(|(_, l)| *l == label)
                .map(|(f, _)| f[c])
                .collect()
        };
        let stat = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let s = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
            (m, s)
        };
        let (m0, s0) = stat(&vals(0));
        let (m1, s1) = stat(&vals(1));
        println!(
            "  ch {c:2} (order {}, ci {}): class0 {m0:.5} +- {s0:.5} | class1 {m1:.5} +- {s1:.5}",
            c % 5,
            (c / 5) % c_in
        );
    }

    // Stage 2: population batch norm over all samples+tokens, then relu.
    let mut mean = vec![0.0; c_out];
    let mut var = vec![0.0; c_out];
    let total: usize = conv.iter().map(|t| t.len() / c_out).sum();
    for tokens in &conv {
        for i in 0..tokens.len() / c_out {
            for c in 0..c_out {
                mean[c] += tokens[i * c_out + c];
            }
        }
    }
    for m in mean.iter_mut() {
        *m /= total as f64;
    }
    for tokens in &conv {
        for i in 0..tokens.len() / c_out {
            for c in 0..c_out {
                var[c] += (tokens[i * c_out + c] - mean[c]).powi(2);
            }
        }
    }
    for v in var.iter_mut() {
        *v /= total as f64;
    }
    let relu_stage: Vec<Vec<f64>> = conv
        .iter()
        .map(|tokens| {
            tokens
                .iter()
                .enumerate()
                .map(|(idx, v)| {
                    let c = idx % c_out;
                    ((v - mean[c]) / (var[c] + 1e-5).sqrt()).max(0.0)
                })
                .collect()
        })
        .collect();
    let p2 = pooled(&relu_stage);
    println!(
        "stage BN+relu mean-pool: LDA {:.1}%, best single dim {:?}",
        lda_acc(&p2),
        best_single_dim(&p2)
    );

    // Stage 3: add positional encodings (per joint slot within tuple).
    let v_merged = cfg.tuple_frames * joints;
    let pe_rows: Vec<Vec<f64>> = (0..v_merged)
        .map(|m| positional_encoding(m, c_out).unwrap())
        .collect();
    let pe_stage: Vec<Vec<f64>> = relu_stage
        .iter()
        .map(|tokens| {
            tokens
                .iter()
                .enumerate()
                .map(|(idx, v)| {
                    let token = idx / c_out;
                    let c = idx % c_out;
                    let m = token % v_merged;
                    v + pe_rows[m][c]
                })
                .collect()
        })
        .collect();
    let p3 = pooled(&pe_stage);
    println!(
        "stage +PE mean-pool: LDA {:.1}%, best single dim {:?}",
        lda_acc(&p3),
        best_single_dim(&p3)
    );

    // Stage 4: per-channel standardization again (the first block's
    // bn_spatial at identity init), mean-pool.
    let mut mean2 = vec![0.0; c_out];
    let mut var2 = vec![0.0; c_out];
    for tokens in &pe_stage {
        for i in 0..tokens.len() / c_out {
            for c in 0..c_out {
                mean2[c] += tokens[i * c_out + c];
            }
        }
    }
    for m in mean2.iter_mut() {
        *m /= total as f64;
    }
    for tokens in &pe_stage {
        for i in 0..tokens.len() / c_out {
            for c in 0..c_out {
                var2[c] += (tokens[i * c_out + c] - mean2[c]).powi(2);
            }
        }
    }
    for v in var2.iter_mut() {
        *v /= total as f64;
    }
    let bn2_stage: Vec<Vec<f64>> = pe_stage
        .iter()
        .map(|tokens| {
            tokens
                .iter()
                .enumerate()
                .map(|(idx, v)| {
                    let c = idx % c_out;
                    (v - mean2[c]) / (var2[c] + 1e-5).sqrt()
                })
                .collect()
        })
        .collect();
    let p4 = pooled(&bn2_stage);
    println!(
        "stage block-BN mean-pool: LDA {:.1}%, best single dim {:?}",
        lda_acc(&p4),
        best_single_dim(&p4)
    );

    // Ground truth from the real encoder: latent P/F mean-pool at init.
    let mut feats = Vec::new();
    for s in &data.samples {
        let latent = model.encode(&s.obs, 0).unwrap();
        let (t0, d) = latent.p.dims2().unwrap();
        let mut f = vec![0.0; 2 * d];
        for t in 0..t0 {
            for k in 0..d {
                f[k] += latent.p.data()[t * d + k] / t0 as f64;
                f[d + k] += latent.f.data()[t * d + k] / t0 as f64;
            }
        }
        feats.push((f, s.label_index));
    }
    println!(
        "real encoder latents (eval mode, init): LDA {:.1}%, best single dim {:?}",
        lda_acc(&feats),
        best_single_dim(&feats)
    );
}
