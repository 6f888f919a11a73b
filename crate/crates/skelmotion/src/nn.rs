//! Neural-network building blocks over the computation graph.
//!
//! Layers own parameter names, not values; values live in a [`ParamStore`].
//! A [`GraphCtx`] caches the leaf node created for each parameter so layers
//! shared across positions (tuple attention, pooling heads) accumulate
//! gradients at a single leaf.

use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;

use crate::diffcore::{GraphBuilder, NodeId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::init::{normal_tensor, uniform_tensor, xavier_uniform};

/// Exponential-moving-average momentum for batch-norm running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

/// Graph construction context: the builder, the parameter store feeding it,
/// the train/eval switch for batch norm, and bookkeeping of batch-norm
/// nodes so running statistics can be updated after the forward pass.
pub struct GraphCtx<'a> {
    pub gb: GraphBuilder,
    store: &'a ParamStore,
    pub train: bool,
    cache: HashMap<String, NodeId>,
    bn_nodes: Vec<(String, NodeId)>,
}

impl<'a> GraphCtx<'a> {
    pub fn new(store: &'a ParamStore, train: bool) -> Self {
        GraphCtx {
            gb: GraphBuilder::new(),
            store,
            train,
            cache: HashMap::new(),
            bn_nodes: Vec::new(),
        }
    }

    /// Leaf node for a named parameter, created once per graph.
    pub fn param(&mut self, name: &str) -> Result<NodeId> {
        if let Some(id) = self.cache.get(name) {
            return Ok(*id);
        }
        let value = self
            .store
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))?
            .clone();
        let id = self.gb.param(name, value);
        self.cache.insert(name.to_string(), id);
        Ok(id)
    }

    /// Constant copy of a stored buffer (no gradient entry).
    pub fn buffer(&mut self, name: &str) -> Result<NodeId> {
        let value = self
            .store
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing buffer `{name}`")))?
            .clone();
        Ok(self.gb.constant(value))
    }

    pub fn note_batch_norm(&mut self, name: &str, node: NodeId) {
        self.bn_nodes.push((name.to_string(), node));
    }

    /// Batch-norm nodes recorded during this build, for running-stat updates.
    pub fn batch_norm_nodes(&self) -> &[(String, NodeId)] {
        &self.bn_nodes
    }

    pub fn finish(self, output: NodeId) -> (crate::diffcore::Graph, Vec<(String, NodeId)>) {
        (self.gb.finish(output), self.bn_nodes)
    }
}

/// x @ W + b over rows.
#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Linear {
            name: name.into(),
            in_dim,
            out_dim,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        store.insert(
            format!("{}.weight", self.name),
            xavier_uniform(rng, self.in_dim, self.out_dim),
        );
        store.insert(format!("{}.bias", self.name), Tensor::zeros(&[self.out_dim]));
    }

    /// Zero initialization, for the output projection of residual branches:
    /// blocks start as identities and the optimizer grows them in, instead
    /// of random projections drowning the feature stream at step zero.
    pub fn init_zero(&self, store: &mut ParamStore) {
        store.insert(
            format!("{}.weight", self.name),
            Tensor::zeros(&[self.in_dim, self.out_dim]),
        );
        store.insert(format!("{}.bias", self.name), Tensor::zeros(&[self.out_dim]));
    }

    /// Identity initialization (plus symmetry-breaking jitter) for square
    /// projections that should start by passing features through unchanged.
    pub fn init_identity(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        assert_eq!(
            self.in_dim, self.out_dim,
            "identity init needs a square projection"
        );
        let mut w = uniform_tensor(rng, &[self.in_dim, self.out_dim], -1e-4, 1e-4);
        for i in 0..self.in_dim {
            w.data_mut()[i * self.out_dim + i] += 1.0;
        }
        store.insert(format!("{}.weight", self.name), w);
        store.insert(format!("{}.bias", self.name), Tensor::zeros(&[self.out_dim]));
    }

    pub fn forward(&self, ctx: &mut GraphCtx, x: NodeId) -> Result<NodeId> {
        let w = ctx.param(&format!("{}.weight", self.name))?;
        let b = ctx.param(&format!("{}.bias", self.name))?;
        let h = ctx.gb.matmul(x, w)?;
        ctx.gb.add_row_vec(h, b)
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

/// Per-channel batch normalization over the row (token) axis. Training mode
/// uses batch statistics and records the node for running-stat updates;
/// inference mode applies the frozen running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub name: String,
    pub dim: usize,
}

impl BatchNorm {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        BatchNorm {
            name: name.into(),
            dim,
        }
    }

    pub fn init(&self, store: &mut ParamStore, _rng: &mut ChaCha8Rng) {
        store.insert(format!("{}.gamma", self.name), Tensor::full(&[self.dim], 1.0));
        store.insert(format!("{}.beta", self.name), Tensor::zeros(&[self.dim]));
        store.insert_buffer(
            format!("{}.running_mean", self.name),
            Tensor::zeros(&[self.dim]),
        );
        store.insert_buffer(
            format!("{}.running_var", self.name),
            Tensor::full(&[self.dim], 1.0),
        );
    }

    pub fn forward(&self, ctx: &mut GraphCtx, x: NodeId) -> Result<NodeId> {
        let gamma = ctx.param(&format!("{}.gamma", self.name))?;
        let beta = ctx.param(&format!("{}.beta", self.name))?;
        if ctx.train {
            let node = ctx.gb.batch_norm(x, gamma, beta)?;
            ctx.note_batch_norm(&self.name, node);
            Ok(node)
        } else {
            let mean = ctx.buffer(&format!("{}.running_mean", self.name))?;
            let var = ctx.buffer(&format!("{}.running_var", self.name))?;
            ctx.gb.batch_norm_eval(x, gamma, beta, mean, var)
        }
    }
}

/// Update running statistics from the batch statistics recorded on a
/// finished graph.
pub fn apply_batch_norm_updates(
    graph: &crate::diffcore::Graph,
    bn_nodes: &[(String, NodeId)],
    store: &mut ParamStore,
) {
    for (name, node) in bn_nodes {
        if let Some((mean, var)) = graph.batch_norm_stats(*node) {
            let rm = store
                .get_mut(&format!("{name}.running_mean"))
                .expect("running mean exists");
            for (r, m) in rm.data_mut().iter_mut().zip(&mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
            }
            let rv = store
                .get_mut(&format!("{name}.running_var"))
                .expect("running var exists");
            for (r, v) in rv.data_mut().iter_mut().zip(&var) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
            }
        }
    }
}

/// Multi-head scaled dot-product attention. Queries and memory share the
/// model dimension; heads split it evenly.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub name: String,
    pub dim: usize,
    pub heads: usize,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
}

impl MultiHeadAttention {
    pub fn new(name: impl Into<String>, dim: usize, heads: usize) -> Result<Self> {
        let name = name.into();
        if heads == 0 || dim % heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "attention width {dim} not divisible by {heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            wq: Linear::new(format!("{name}.wq"), dim, dim),
            wk: Linear::new(format!("{name}.wk"), dim, dim),
            wv: Linear::new(format!("{name}.wv"), dim, dim),
            wo: Linear::new(format!("{name}.wo"), dim, dim),
            name,
            dim,
            heads,
        })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        self.wq.init(store, rng);
        self.wk.init(store, rng);
        self.wv.init(store, rng);
        self.wo.init_zero(store);
    }

    pub fn forward(&self, ctx: &mut GraphCtx, queries: NodeId, memory: NodeId) -> Result<NodeId> {
        Ok(self.forward_with_attention(ctx, queries, memory)?.0)
    }

    /// Also returns the softmax nodes, one per head, for attention-weight
    /// inspection in tests.
    pub fn forward_with_attention(
        &self,
        ctx: &mut GraphCtx,
        queries: NodeId,
        memory: NodeId,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let q = self.wq.forward(ctx, queries)?;
        let k = self.wk.forward(ctx, memory)?;
        let v = self.wv.forward(ctx, memory)?;
        let head_dim = self.dim / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut attns = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
            let qh = ctx.gb.slice_cols(q, lo, hi)?;
            let kh = ctx.gb.slice_cols(k, lo, hi)?;
            let vh = ctx.gb.slice_cols(v, lo, hi)?;
            let kt = ctx.gb.transpose(kh)?;
            let scores = ctx.gb.matmul(qh, kt)?;
            let scaled = ctx.gb.scale(scores, scale)?;
            let attn = ctx.gb.softmax(scaled)?;
            attns.push(attn);
            outs.push(ctx.gb.matmul(attn, vh)?);
        }
        let merged = if outs.len() == 1 {
            outs[0]
        } else {
            ctx.gb.concat_cols(outs)?
        };
        Ok((self.wo.forward(ctx, merged)?, attns))
    }

    pub fn param_count(&self) -> usize {
        4 * (self.dim * self.dim + self.dim)
    }
}

/// Two pointwise linear layers with a ReLU between, applied per token row.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub name: String,
    lin1: Linear,
    lin2: Linear,
}

impl FeedForward {
    pub fn new(name: impl Into<String>, dim: usize, hidden: usize) -> Self {
        let name = name.into();
        FeedForward {
            lin1: Linear::new(format!("{name}.lin1"), dim, hidden),
            lin2: Linear::new(format!("{name}.lin2"), hidden, dim),
            name,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        self.lin1.init(store, rng);
        self.lin2.init_zero(store);
    }

    pub fn forward(&self, ctx: &mut GraphCtx, x: NodeId) -> Result<NodeId> {
        let h = self.lin1.forward(ctx, x)?;
        let r = ctx.gb.relu(h)?;
        self.lin2.forward(ctx, r)
    }

    pub fn param_count(&self) -> usize {
        self.lin1.param_count() + self.lin2.param_count()
    }
}

/// Learned embedding table with index lookup.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub name: String,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(name: impl Into<String>, vocab: usize, dim: usize) -> Self {
        Embedding {
            name: name.into(),
            vocab,
            dim,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        store.insert(
            format!("{}.table", self.name),
            normal_tensor(rng, &[self.vocab, self.dim], 0.02),
        );
    }

    pub fn forward(&self, ctx: &mut GraphCtx, index: usize) -> Result<NodeId> {
        if index >= self.vocab {
            return Err(Error::InvalidArgument(format!(
                "class id {index} out of vocabulary of {}",
                self.vocab
            )));
        }
        let table = ctx.param(&format!("{}.table", self.name))?;
        ctx.gb.row_select(table, index)
    }

    /// One embedding row per index, as a matrix.
    pub fn rows(&self, ctx: &mut GraphCtx, indices: &[usize]) -> Result<NodeId> {
        if let Some(bad) = indices.iter().find(|i| **i >= self.vocab) {
            return Err(Error::InvalidArgument(format!(
                "class id {bad} out of vocabulary of {}",
                self.vocab
            )));
        }
        let table = ctx.param(&format!("{}.table", self.name))?;
        ctx.gb.gather_rows(table, indices.to_vec())
    }

    pub fn param_count(&self) -> usize {
        self.vocab * self.dim
    }
}

/// 1-D convolution layer along the token axis.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl Conv1d {
    pub fn new(
        name: impl Into<String>,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
    ) -> Self {
        Conv1d {
            name: name.into(),
            c_in,
            c_out,
            kernel,
            dilation,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let fan_in = self.c_in * self.kernel;
        let bound = (6.0 / (fan_in + self.c_out) as f64).sqrt();
        store.insert(
            format!("{}.weight", self.name),
            uniform_tensor(rng, &[self.c_out, fan_in], -bound, bound),
        );
        store.insert(format!("{}.bias", self.name), Tensor::zeros(&[self.c_out]));
    }

    /// Initialize the kernels as temporal difference filters of cycling
    /// order (identity, first, ..., fourth difference) over one input
    /// channel each, plus a small random jitter. A trajectory's smooth
    /// component carries orders of magnitude more variance than its
    /// high-frequency content; starting from derivative filters makes the
    /// high-order structure visible to the rest of the network from the
    /// first step instead of asking the optimizer to discover difference
    /// stencils. Requires kernel 5.
    pub fn init_temporal_differences(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        assert_eq!(self.kernel, 5, "difference init is defined for kernel 5");
        const STENCILS: [[f64; 5]; 5] = [
            [0.0, 0.0, 1.0, 0.0, 0.0],
            [0.0, -0.5, 0.0, 0.5, 0.0],
            [0.0, 1.0, -2.0, 1.0, 0.0],
            [-0.5, 1.0, 0.0, -1.0, 0.5],
            [1.0, -4.0, 6.0, -4.0, 1.0],
        ];
        // The jitter only breaks symmetry between channels sharing a
        // stencil. It must stay far below the stencil scale or it re-admits
        // the smooth trajectory component the vanishing moments suppress.
        let fan_in = self.c_in * self.kernel;
        let jitter = 1e-4;
        let mut w = uniform_tensor(rng, &[self.c_out, fan_in], -jitter, jitter);
        for co in 0..self.c_out {
            let order = co % STENCILS.len();
            let ci = (co / STENCILS.len()) % self.c_in;
            for k in 0..5 {
                w.data_mut()[co * fan_in + ci * self.kernel + k] += STENCILS[order][k];
            }
        }
        store.insert(format!("{}.weight", self.name), w);
        store.insert(format!("{}.bias", self.name), Tensor::zeros(&[self.c_out]));
    }

    pub fn forward(&self, ctx: &mut GraphCtx, x: NodeId) -> Result<NodeId> {
        let w = ctx.param(&format!("{}.weight", self.name))?;
        let b = ctx.param(&format!("{}.bias", self.name))?;
        ctx.gb.conv1d(x, w, b, self.kernel, self.dilation)
    }

    pub fn param_count(&self) -> usize {
        self.c_out * self.c_in * self.kernel + self.c_out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::seeded_rng;

    #[test]
    fn shared_layer_creates_one_leaf_per_parameter() {
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(0);
        let lin = Linear::new("shared", 3, 3);
        lin.init(&mut store, &mut rng);
        let mut ctx = GraphCtx::new(&store, false);
        let x1 = ctx.gb.constant(Tensor::matrix(2, 3, vec![0.1; 6]).unwrap());
        let x2 = ctx.gb.constant(Tensor::matrix(2, 3, vec![0.2; 6]).unwrap());
        let h1 = lin.forward(&mut ctx, x1).unwrap();
        let h2 = lin.forward(&mut ctx, x2).unwrap();
        let s = ctx.gb.add(h1, h2).unwrap();
        let out = ctx.gb.mean(s).unwrap();
        let (graph, _) = ctx.finish(out);
        assert_eq!(graph.params().len(), 2, "weight and bias leaves only");
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(1);
        let mha = MultiHeadAttention::new("attn", 8, 2).unwrap();
        mha.init(&mut store, &mut rng);
        let mut ctx = GraphCtx::new(&store, false);
        let x = ctx.gb.constant(uniform_tensor(&mut rng, &[5, 8], -1.0, 1.0));
        let (out, attns) = mha.forward_with_attention(&mut ctx, x, x).unwrap();
        let (graph, _) = ctx.finish(out);
        assert_eq!(attns.len(), 2);
        for attn in attns {
            let t = graph.value(attn);
            let (rows, cols) = t.dims2().unwrap();
            for r in 0..rows {
                let sum: f64 = t.data()[r * cols..(r + 1) * cols].iter().sum();
                assert!((sum - 1.0).abs() <= 1e-9);
                assert!(t.data()[r * cols..(r + 1) * cols].iter().all(|v| *v >= 0.0));
            }
        }
    }

    #[test]
    fn embedding_rejects_out_of_range_class() {
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(2);
        let emb = Embedding::new("act", 11, 16);
        emb.init(&mut store, &mut rng);
        let mut ctx = GraphCtx::new(&store, false);
        assert!(emb.forward(&mut ctx, 10).is_ok());
        assert!(emb.forward(&mut ctx, 11).is_err());
    }

    #[test]
    fn distinct_classes_have_distinct_embeddings() {
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(3);
        let emb = Embedding::new("act", 4, 8);
        emb.init(&mut store, &mut rng);
        let mut ctx = GraphCtx::new(&store, false);
        let a = emb.forward(&mut ctx, 0).unwrap();
        let b = emb.forward(&mut ctx, 1).unwrap();
        let av = ctx.gb.value(a).data().to_vec();
        let bv = ctx.gb.value(b).data().to_vec();
        assert_ne!(av, bv);
    }

    #[test]
    fn batch_norm_running_stats_follow_batches() {
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(4);
        let bn = BatchNorm::new("bn", 2);
        bn.init(&mut store, &mut rng);
        let mut ctx = GraphCtx::new(&store, true);
        let x = ctx.gb.constant(
            Tensor::matrix(4, 2, vec![1.0, 10.0, 3.0, 10.0, 1.0, 10.0, 3.0, 10.0]).unwrap(),
        );
        let y = bn.forward(&mut ctx, x).unwrap();
        let (graph, bn_nodes) = ctx.finish(y);
        apply_batch_norm_updates(&graph, &bn_nodes, &mut store);
        let rm = store.get("bn.running_mean").unwrap().data();
        // EMA with momentum 0.1 from zeros toward the batch mean (2, 10).
        assert!((rm[0] - 0.2).abs() < 1e-12);
        assert!((rm[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eval_mode_batch_norm_is_deterministic_affine() {
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(5);
        let bn = BatchNorm::new("bn", 3);
        bn.init(&mut store, &mut rng);
        let run = |store: &ParamStore| {
            let mut ctx = GraphCtx::new(store, false);
            let x = ctx.gb.constant(
                Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 1.5, 0.0, -2.0]).unwrap(),
            );
            let y = bn.forward(&mut ctx, x).unwrap();
            let out = ctx.gb.mean(y).unwrap();
            let (graph, _) = ctx.finish(out);
            graph.output_value().item()
        };
        assert_eq!(run(&store).to_bits(), run(&store).to_bits());
    }
}
