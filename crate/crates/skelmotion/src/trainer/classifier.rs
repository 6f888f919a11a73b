//! Severity classifier: per-frame latent positions and forces are
//! concatenated, mean-pooled over time, and pushed through a feed-forward
//! network with softmax output.

use rand_chacha::ChaCha8Rng;

use crate::diffcore::{NodeId, ParamStore};
use crate::error::{Error, Result};
use crate::nn::{GraphCtx, Linear};

#[derive(Debug, Clone)]
pub struct ClassifierConfig {
    pub classes: usize,
    pub hidden: Vec<usize>,
    /// Width D of each latent half; the pooled feature is 2D.
    pub latent_dim: usize,
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "classifier needs at least 2 classes, got {}",
                self.classes
            )));
        }
        Ok(())
    }
}

pub struct Classifier {
    pub cfg: ClassifierConfig,
    layers: Vec<Linear>,
}

impl Classifier {
    pub fn new(cfg: ClassifierConfig) -> Result<Self> {
        cfg.validate()?;
        let mut dims = vec![2 * cfg.latent_dim];
        dims.extend(&cfg.hidden);
        dims.push(cfg.classes);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(format!("cls.l{i}"), w[0], w[1]))
            .collect();
        Ok(Classifier { cfg, layers })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        for l in &self.layers {
            l.init(store, rng);
        }
    }

    /// Logits node (1 x classes) from the latent position and force tracks.
    pub fn forward_logits(&self, ctx: &mut GraphCtx, p: NodeId, f: NodeId) -> Result<NodeId> {
        let w = ctx.gb.concat_cols(vec![p, f])?;
        let pooled = ctx.gb.mean_rows(w)?;
        let feat_dim = ctx.gb.value(pooled).numel();
        let mut x = ctx.gb.reshape(pooled, vec![1, feat_dim])?;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(ctx, x)?;
            if i + 1 < self.layers.len() {
                x = ctx.gb.relu(x)?;
            }
        }
        Ok(x)
    }

    /// Softmax probabilities node (1 x classes).
    pub fn forward_probs(&self, ctx: &mut GraphCtx, p: NodeId, f: NodeId) -> Result<NodeId> {
        let logits = self.forward_logits(ctx, p, f)?;
        ctx.gb.softmax(logits)
    }

    pub fn is_classifier_param(name: &str) -> bool {
        name.starts_with("cls.")
    }
}
