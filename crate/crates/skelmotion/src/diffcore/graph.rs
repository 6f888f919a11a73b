//! Recorded computation graphs with reverse-mode gradients.
//!
//! A [`GraphBuilder`] records operations while computing values eagerly;
//! shape errors are rejected at build time with the offending op named.
//! The finished [`Graph`] can be replayed with perturbed leaf values, which
//! is what the central finite-difference oracle uses.

use std::collections::HashMap;
use std::rc::Rc;

use crate::diffcore::tensor::{matmul, transpose, Tensor};
use crate::error::{Error, Result};

pub type NodeId = usize;

const BN_EPS: f64 = 1e-5;

/// Escape hatch for operations whose forward pass is opaque to the graph
/// (the LCP contact solver records itself through this). The forward pass
/// may stash recomputable auxiliary data for its backward pass.
pub trait CustomOp {
    fn name(&self) -> &'static str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Vec<f64>)>;
    /// Returns one gradient tensor per input.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        aux: &[f64],
        grad_out: &Tensor,
    ) -> Vec<Tensor>;
}

#[derive(Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    /// out[r][c] = x[r][c] + v[c]
    AddRowVec(NodeId, NodeId),
    /// out[r][c] = x[r][c] * v[c]
    MulRowVec(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Relu(NodeId),
    /// Row-wise softmax over the last axis.
    Softmax(NodeId),
    /// Per-column batch normalization of an n x c matrix using batch statistics.
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
    },
    /// Batch normalization with frozen statistics (inference mode).
    BatchNormEval {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: NodeId,
        var: NodeId,
    },
    /// 1-D convolution along the row axis of an L x C_in matrix, zero padded
    /// so the output is L x C_out. Weight layout: C_out x (C_in * kernel).
    Conv1d {
        x: NodeId,
        w: NodeId,
        bias: NodeId,
        kernel: usize,
        dilation: usize,
    },
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceRows {
        x: NodeId,
        start: usize,
        end: usize,
    },
    SliceCols {
        x: NodeId,
        start: usize,
        end: usize,
    },
    /// Select one row of a matrix (embedding lookup).
    RowSelect {
        x: NodeId,
        row: usize,
    },
    /// Reorder/duplicate rows of a matrix by index list.
    GatherRows {
        x: NodeId,
        indices: Vec<usize>,
    },
    Reshape(NodeId),
    /// Mean over all elements -> scalar.
    Mean(NodeId),
    /// Column means of an n x c matrix -> length-c vector.
    MeanRows(NodeId),
    /// Mean squared error over all elements -> scalar.
    Mse(NodeId, NodeId),
    /// Mean over rows of -log softmax(logits)[row, label].
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
    },
    Custom {
        op: Rc<dyn CustomOp>,
        inputs: Vec<NodeId>,
    },
}

enum Aux {
    None,
    /// Per-column batch mean and 1/sqrt(var + eps).
    BatchNorm { mean: Vec<f64>, invstd: Vec<f64> },
    /// Row-wise softmax probabilities of the logits.
    CrossEntropy { probs: Vec<f64> },
    Custom(Vec<f64>),
}

struct Node {
    op: Op,
    shape: Vec<usize>,
}

/// Builder that records operations and computes values as it goes.
pub struct GraphBuilder {
    nodes: Vec<Node>,
    values: Vec<Tensor>,
    aux: Vec<Aux>,
    params: Vec<(String, NodeId)>,
}

impl Default for GraphBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl GraphBuilder {
    pub fn new() -> Self {
        GraphBuilder {
            nodes: Vec::new(),
            values: Vec::new(),
            aux: Vec::new(),
            params: Vec::new(),
        }
    }

    /// Leaf that does not receive a named gradient entry.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value)
    }

    /// Named leaf registered in the parameter registry.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> NodeId {
        let id = self.push_leaf(value);
        self.params.push((name.into(), id));
        id
    }

    fn push_leaf(&mut self, value: Tensor) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node {
            op: Op::Leaf,
            shape: value.shape().to_vec(),
        });
        self.values.push(value);
        self.aux.push(Aux::None);
        id
    }

    fn push(&mut self, op: Op) -> Result<NodeId> {
        let node = Node {
            op,
            shape: vec![],
        };
        let (value, aux) = compute_node(&node, &self.values)?;
        let id = self.nodes.len();
        self.nodes.push(Node {
            op: node.op,
            shape: value.shape().to_vec(),
        });
        self.values.push(value);
        self.aux.push(aux);
        Ok(id)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id]
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Sub(a, b))
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Mul(a, b))
    }
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Div(a, b))
    }
    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.push(Op::Scale(x, c))
    }
    pub fn add_row_vec(&mut self, x: NodeId, v: NodeId) -> Result<NodeId> {
        self.push(Op::AddRowVec(x, v))
    }
    pub fn mul_row_vec(&mut self, x: NodeId, v: NodeId) -> Result<NodeId> {
        self.push(Op::MulRowVec(x, v))
    }
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::MatMul(a, b))
    }
    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::Transpose(x))
    }
    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::Relu(x))
    }
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::Softmax(x))
    }
    pub fn batch_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        self.push(Op::BatchNorm { x, gamma, beta })
    }
    pub fn batch_norm_eval(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: NodeId,
        var: NodeId,
    ) -> Result<NodeId> {
        self.push(Op::BatchNormEval {
            x,
            gamma,
            beta,
            mean,
            var,
        })
    }
    pub fn conv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: NodeId,
        kernel: usize,
        dilation: usize,
    ) -> Result<NodeId> {
        self.push(Op::Conv1d {
            x,
            w,
            bias,
            kernel,
            dilation,
        })
    }
    pub fn concat_rows(&mut self, xs: Vec<NodeId>) -> Result<NodeId> {
        self.push(Op::ConcatRows(xs))
    }
    pub fn concat_cols(&mut self, xs: Vec<NodeId>) -> Result<NodeId> {
        self.push(Op::ConcatCols(xs))
    }
    pub fn slice_rows(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        self.push(Op::SliceRows { x, start, end })
    }
    pub fn slice_cols(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        self.push(Op::SliceCols { x, start, end })
    }
    pub fn row_select(&mut self, x: NodeId, row: usize) -> Result<NodeId> {
        self.push(Op::RowSelect { x, row })
    }
    pub fn gather_rows(&mut self, x: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        self.push(Op::GatherRows { x, indices })
    }
    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != self.values[x].numel() {
            return Err(Error::Shape {
                op: "reshape",
                detail: format!(
                    "cannot reshape {:?} into {:?}",
                    self.values[x].shape(),
                    shape
                ),
            });
        }
        let id = self.push(Op::Reshape(x))?;
        self.nodes[id].shape = shape.clone();
        self.values[id] = self.values[id].reshaped(shape)?;
        Ok(id)
    }
    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::Mean(x))
    }
    pub fn mean_rows(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::MeanRows(x))
    }
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Mse(a, b))
    }
    pub fn cross_entropy(&mut self, logits: NodeId, labels: Vec<usize>) -> Result<NodeId> {
        self.push(Op::CrossEntropy { logits, labels })
    }
    pub fn custom(&mut self, op: Rc<dyn CustomOp>, inputs: Vec<NodeId>) -> Result<NodeId> {
        self.push(Op::Custom { op, inputs })
    }

    /// Finish recording. `output` becomes the graph's root.
    pub fn finish(self, output: NodeId) -> Graph {
        assert!(output < self.nodes.len(), "output node out of range");
        Graph {
            nodes: self.nodes,
            values: self.values,
            aux: self.aux,
            params: self.params,
            output,
        }
    }
}

/// A finished, replayable computation graph.
pub struct Graph {
    nodes: Vec<Node>,
    values: Vec<Tensor>,
    aux: Vec<Aux>,
    params: Vec<(String, NodeId)>,
    output: NodeId,
}

impl Graph {
    pub fn output_id(&self) -> NodeId {
        self.output
    }

    pub fn output_value(&self) -> &Tensor {
        &self.values[self.output]
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id]
    }

    pub fn params(&self) -> &[(String, NodeId)] {
        &self.params
    }

    pub fn param_id(&self, name: &str) -> Option<NodeId> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
    }

    /// Batch statistics recorded by a train-mode batch-norm node.
    pub fn batch_norm_stats(&self, id: NodeId) -> Option<(Vec<f64>, Vec<f64>)> {
        match &self.aux[id] {
            Aux::BatchNorm { mean, invstd } => {
                let var: Vec<f64> = invstd.iter().map(|s| 1.0 / (s * s) - BN_EPS).collect();
                Some((mean.clone(), var))
            }
            _ => None,
        }
    }

    /// Reverse-mode gradients of the (scalar) output with respect to every
    /// registered parameter reachable from it.
    pub fn param_gradients(&self) -> Result<(f64, HashMap<String, Tensor>)> {
        if self.output_value().numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "gradients require a scalar output, got shape {:?}",
                self.output_value().shape()
            )));
        }
        let grads = self.backward()?;
        let mut named = HashMap::new();
        for (name, id) in &self.params {
            if let Some(g) = &grads[*id] {
                named.insert(name.clone(), g.clone());
            }
        }
        Ok((self.output_value().item(), named))
    }

    /// Gradient per node id, seeded with one at the scalar output. Each
    /// recorded op is visited exactly once, in reverse topological order,
    /// and gradients accumulate additively.
    fn backward(&self) -> Result<Vec<Option<Tensor>>> {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[self.output] = Some(Tensor::full(self.values[self.output].shape(), 1.0));

        for id in (0..n).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.backward_node(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(grads)
    }

    fn backward_node(
        &self,
        id: NodeId,
        g: &Tensor,
        grads: &mut Vec<Option<Tensor>>,
    ) -> Result<()> {
        let val = |i: NodeId| &self.values[i];
        let gd = g.data();
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate_data(grads, *a, val(*a).shape(), gd);
                accumulate_data(grads, *b, val(*b).shape(), gd);
            }
            Op::Sub(a, b) => {
                accumulate_data(grads, *a, val(*a).shape(), gd);
                let neg: Vec<f64> = gd.iter().map(|v| -v).collect();
                accumulate_data(grads, *b, val(*b).shape(), &neg);
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = gd
                    .iter()
                    .zip(val(*b).data())
                    .map(|(g, b)| g * b)
                    .collect();
                let db: Vec<f64> = gd
                    .iter()
                    .zip(val(*a).data())
                    .map(|(g, a)| g * a)
                    .collect();
                accumulate_data(grads, *a, val(*a).shape(), &da);
                accumulate_data(grads, *b, val(*b).shape(), &db);
            }
            Op::Div(a, b) => {
                let bv = val(*b).data();
                let out = self.values[id].data();
                let da: Vec<f64> = gd.iter().zip(bv).map(|(g, b)| g / b).collect();
                let db: Vec<f64> = gd
                    .iter()
                    .zip(out.iter().zip(bv))
                    .map(|(g, (o, b))| -g * o / b)
                    .collect();
                accumulate_data(grads, *a, val(*a).shape(), &da);
                accumulate_data(grads, *b, val(*b).shape(), &db);
            }
            Op::Scale(x, c) => {
                let dx: Vec<f64> = gd.iter().map(|g| g * c).collect();
                accumulate_data(grads, *x, val(*x).shape(), &dx);
            }
            Op::AddRowVec(x, v) => {
                let (rows, cols) = val(*x).dims2()?;
                accumulate_data(grads, *x, val(*x).shape(), gd);
                let mut dv = vec![0.0; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        dv[c] += gd[r * cols + c];
                    }
                }
                accumulate_data(grads, *v, val(*v).shape(), &dv);
            }
            Op::MulRowVec(x, v) => {
                let (rows, cols) = val(*x).dims2()?;
                let xv = val(*x).data();
                let vv = val(*v).data();
                let mut dx = vec![0.0; rows * cols];
                let mut dv = vec![0.0; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        let i = r * cols + c;
                        dx[i] = gd[i] * vv[c];
                        dv[c] += gd[i] * xv[i];
                    }
                }
                accumulate_data(grads, *x, val(*x).shape(), &dx);
                accumulate_data(grads, *v, val(*v).shape(), &dv);
            }
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2()?;
                let (_, n) = val(*b).dims2()?;
                // dA = g @ B^T
                let mut bt = vec![0.0; k * n];
                transpose(val(*b).data(), &mut bt, k, n);
                let mut da = vec![0.0; m * k];
                matmul(gd, &bt, &mut da, m, n, k);
                // dB = A^T @ g
                let mut at = vec![0.0; m * k];
                transpose(val(*a).data(), &mut at, m, k);
                let mut db = vec![0.0; k * n];
                matmul(&at, gd, &mut db, k, m, n);
                accumulate_data(grads, *a, val(*a).shape(), &da);
                accumulate_data(grads, *b, val(*b).shape(), &db);
            }
            Op::Transpose(x) => {
                let (rows, cols) = val(*x).dims2()?;
                let mut dx = vec![0.0; rows * cols];
                transpose(gd, &mut dx, cols, rows);
                accumulate_data(grads, *x, val(*x).shape(), &dx);
            }
            Op::Relu(x) => {
                let dx: Vec<f64> = gd
                    .iter()
                    .zip(val(*x).data())
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate_data(grads, *x, val(*x).shape(), &dx);
            }
            Op::Softmax(x) => {
                let y = self.values[id].data();
                let last = *self.nodes[id].shape.last().unwrap();
                let rows = y.len() / last;
                let mut dx = vec![0.0; y.len()];
                for r in 0..rows {
                    let base = r * last;
                    let mut dot = 0.0;
                    for c in 0..last {
                        dot += gd[base + c] * y[base + c];
                    }
                    for c in 0..last {
                        dx[base + c] = y[base + c] * (gd[base + c] - dot);
                    }
                }
                accumulate_data(grads, *x, val(*x).shape(), &dx);
            }
            Op::BatchNorm { x, gamma, beta } => {
                let (rows, cols) = val(*x).dims2()?;
                let (mean, invstd) = match &self.aux[id] {
                    Aux::BatchNorm { mean, invstd } => (mean, invstd),
                    _ => unreachable!("batch-norm aux missing"),
                };
                let xv = val(*x).data();
                let gv = val(*gamma).data();
                let nf = rows as f64;
                let mut dgamma = vec![0.0; cols];
                let mut dbeta = vec![0.0; cols];
                let mut sum_dxhat = vec![0.0; cols];
                let mut sum_dxhat_xhat = vec![0.0; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        let i = r * cols + c;
                        let xhat = (xv[i] - mean[c]) * invstd[c];
                        let dxhat = gd[i] * gv[c];
                        dgamma[c] += gd[i] * xhat;
                        dbeta[c] += gd[i];
                        sum_dxhat[c] += dxhat;
                        sum_dxhat_xhat[c] += dxhat * xhat;
                    }
                }
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    for c in 0..cols {
                        let i = r * cols + c;
                        let xhat = (xv[i] - mean[c]) * invstd[c];
                        let dxhat = gd[i] * gv[c];
                        dx[i] = invstd[c] / nf
                            * (nf * dxhat - sum_dxhat[c] - xhat * sum_dxhat_xhat[c]);
                    }
                }
                accumulate_data(grads, *x, val(*x).shape(), &dx);
                accumulate_data(grads, *gamma, val(*gamma).shape(), &dgamma);
                accumulate_data(grads, *beta, val(*beta).shape(), &dbeta);
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                mean,
                var,
            } => {
                let (rows, cols) = val(*x).dims2()?;
                let xv = val(*x).data();
                let gv = val(*gamma).data();
                let mv = val(*mean).data();
                let vv = val(*var).data();
                let invstd: Vec<f64> = vv.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                let mut dx = vec![0.0; rows * cols];
                let mut dgamma = vec![0.0; cols];
                let mut dbeta = vec![0.0; cols];
                let mut dmean = vec![0.0; cols];
                let mut dvar = vec![0.0; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        let i = r * cols + c;
                        let centered = xv[i] - mv[c];
                        let xhat = centered * invstd[c];
                        dx[i] = gd[i] * gv[c] * invstd[c];
                        dgamma[c] += gd[i] * xhat;
                        dbeta[c] += gd[i];
                        dmean[c] -= gd[i] * gv[c] * invstd[c];
                        dvar[c] += gd[i] * gv[c] * centered * (-0.5) * invstd[c].powi(3);
                    }
                }
                accumulate_data(grads, *x, val(*x).shape(), &dx);
                accumulate_data(grads, *gamma, val(*gamma).shape(), &dgamma);
                accumulate_data(grads, *beta, val(*beta).shape(), &dbeta);
                accumulate_data(grads, *mean, val(*mean).shape(), &dmean);
                accumulate_data(grads, *var, val(*var).shape(), &dvar);
            }
            Op::Conv1d {
                x,
                w,
                bias,
                kernel,
                dilation,
            } => {
                let (len, c_in) = val(*x).dims2()?;
                let (c_out, _) = val(*w).dims2()?;
                let xv = val(*x).data();
                let wv = val(*w).data();
                let half = (*kernel as isize - 1) / 2;
                let mut dx = vec![0.0; len * c_in];
                let mut dw = vec![0.0; c_out * c_in * kernel];
                let mut db = vec![0.0; c_out];
                for l in 0..len {
                    for co in 0..c_out {
                        let go = gd[l * c_out + co];
                        if go == 0.0 {
                            continue;
                        }
                        db[co] += go;
                        for k in 0..*kernel {
                            let src = l as isize + (k as isize - half) * *dilation as isize;
                            if src < 0 || src >= len as isize {
                                continue;
                            }
                            let src = src as usize;
                            for ci in 0..c_in {
                                let wi = co * c_in * kernel + ci * kernel + k;
                                dx[src * c_in + ci] += go * wv[wi];
                                dw[wi] += go * xv[src * c_in + ci];
                            }
                        }
                    }
                }
                accumulate_data(grads, *x, val(*x).shape(), &dx);
                accumulate_data(grads, *w, val(*w).shape(), &dw);
                accumulate_data(grads, *bias, val(*bias).shape(), &db);
            }
            Op::ConcatRows(xs) => {
                let mut offset = 0;
                for x in xs {
                    let n = val(*x).numel();
                    accumulate_data(grads, *x, val(*x).shape(), &gd[offset..offset + n]);
                    offset += n;
                }
            }
            Op::ConcatCols(xs) => {
                let (rows, total_cols) = self_dims2(&self.nodes[id].shape)?;
                let mut col_off = 0;
                for x in xs {
                    let (_, cols) = val(*x).dims2()?;
                    let mut dx = vec![0.0; rows * cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            dx[r * cols + c] = gd[r * total_cols + col_off + c];
                        }
                    }
                    accumulate_data(grads, *x, val(*x).shape(), &dx);
                    col_off += cols;
                }
            }
            Op::SliceRows { x, start, end } => {
                let (_, cols) = val(*x).dims2()?;
                let mut dx = vec![0.0; val(*x).numel()];
                dx[start * cols..end * cols].copy_from_slice(gd);
                accumulate_data(grads, *x, val(*x).shape(), &dx);
            }
            Op::SliceCols { x, start, end } => {
                let (rows, cols) = val(*x).dims2()?;
                let width = end - start;
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    for c in 0..width {
                        dx[r * cols + start + c] = gd[r * width + c];
                    }
                }
                accumulate_data(grads, *x, val(*x).shape(), &dx);
            }
            Op::RowSelect { x, row } => {
                let (_, cols) = val(*x).dims2()?;
                let mut dx = vec![0.0; val(*x).numel()];
                dx[row * cols..(row + 1) * cols].copy_from_slice(gd);
                accumulate_data(grads, *x, val(*x).shape(), &dx);
            }
            Op::GatherRows { x, indices } => {
                let (_, cols) = val(*x).dims2()?;
                let mut dx = vec![0.0; val(*x).numel()];
                for (out_r, src_r) in indices.iter().enumerate() {
                    for c in 0..cols {
                        dx[src_r * cols + c] += gd[out_r * cols + c];
                    }
                }
                accumulate_data(grads, *x, val(*x).shape(), &dx);
            }
            Op::Reshape(x) => {
                accumulate_data(grads, *x, val(*x).shape(), gd);
            }
            Op::Mean(x) => {
                let n = val(*x).numel() as f64;
                let dx = vec![gd[0] / n; val(*x).numel()];
                accumulate_data(grads, *x, val(*x).shape(), &dx);
            }
            Op::MeanRows(x) => {
                let (rows, cols) = val(*x).dims2()?;
                let nf = rows as f64;
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    for c in 0..cols {
                        dx[r * cols + c] = gd[c] / nf;
                    }
                }
                accumulate_data(grads, *x, val(*x).shape(), &dx);
            }
            Op::Mse(a, b) => {
                let n = val(*a).numel() as f64;
                let scale = 2.0 * gd[0] / n;
                let av = val(*a).data();
                let bv = val(*b).data();
                let da: Vec<f64> = av
                    .iter()
                    .zip(bv)
                    .map(|(a, b)| scale * (a - b))
                    .collect();
                let db: Vec<f64> = da.iter().map(|v| -v).collect();
                accumulate_data(grads, *a, val(*a).shape(), &da);
                accumulate_data(grads, *b, val(*b).shape(), &db);
            }
            Op::CrossEntropy { logits, labels } => {
                let (rows, cols) = val(*logits).dims2()?;
                let probs = match &self.aux[id] {
                    Aux::CrossEntropy { probs } => probs,
                    _ => unreachable!("cross-entropy aux missing"),
                };
                let scale = gd[0] / rows as f64;
                let mut dl = vec![0.0; rows * cols];
                for r in 0..rows {
                    for c in 0..cols {
                        let mut v = probs[r * cols + c];
                        if c == labels[r] {
                            v -= 1.0;
                        }
                        dl[r * cols + c] = scale * v;
                    }
                }
                accumulate_data(grads, *logits, val(*logits).shape(), &dl);
            }
            Op::Custom { op, inputs } => {
                let aux = match &self.aux[id] {
                    Aux::Custom(a) => a.as_slice(),
                    _ => &[],
                };
                let input_vals: Vec<&Tensor> = inputs.iter().map(|i| &self.values[*i]).collect();
                let dinputs = op.backward(&input_vals, &self.values[id], aux, g);
                for (x, dx) in inputs.iter().zip(dinputs) {
                    accumulate_data(grads, *x, val(*x).shape(), dx.data());
                }
            }
        }
        Ok(())
    }

    /// Re-run the forward pass with some leaf values replaced. Returns the
    /// new output value. Non-leaf overrides are rejected.
    pub fn replay(&self, overrides: &HashMap<NodeId, Tensor>) -> Result<Tensor> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for (id, node) in self.nodes.iter().enumerate() {
            let value = match &node.op {
                Op::Leaf => match overrides.get(&id) {
                    Some(v) => {
                        if v.shape() != node.shape.as_slice() {
                            return Err(Error::Shape {
                                op: "replay",
                                detail: format!(
                                    "override for node {} has shape {:?}, expected {:?}",
                                    id,
                                    v.shape(),
                                    node.shape
                                ),
                            });
                        }
                        v.clone()
                    }
                    None => self.values[id].clone(),
                },
                _ => {
                    if overrides.contains_key(&id) {
                        return Err(Error::InvalidArgument(format!(
                            "node {} is not a leaf; only leaves can be overridden",
                            id
                        )));
                    }
                    let (v, _aux) = compute_node(node, &values)?;
                    if matches!(node.op, Op::Reshape(_)) {
                        v.reshaped(node.shape.clone())?
                    } else {
                        v
                    }
                }
            };
            values.push(value);
        }
        Ok(values[self.output].clone())
    }
}

fn self_dims2(shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        other => Err(Error::Shape {
            op: "dims2",
            detail: format!("expected rank-2 shape, got {:?}", other),
        }),
    }
}

fn accumulate_data(grads: &mut [Option<Tensor>], id: NodeId, shape: &[usize], add: &[f64]) {
    match &mut grads[id] {
        Some(g) => {
            for (a, b) in g.data_mut().iter_mut().zip(add) {
                *a += b;
            }
        }
        None => {
            let mut t = Tensor::zeros(shape);
            t.data_mut().copy_from_slice(add);
            grads[id] = Some(t);
        }
    }
}

/// Forward computation for one node given the values of all earlier nodes.
fn compute_node(node: &Node, values: &[Tensor]) -> Result<(Tensor, Aux)> {
    let val = |i: NodeId| &values[i];
    let out = match &node.op {
        Op::Leaf => unreachable!("leaves are not recomputed"),
        Op::Add(a, b) => {
            let (a, b) = (val(*a), val(*b));
            require_same_shape("add", a, b)?;
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
            (Tensor::new(a.shape().to_vec(), data)?, Aux::None)
        }
        Op::Sub(a, b) => {
            let (a, b) = (val(*a), val(*b));
            require_same_shape("sub", a, b)?;
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
            (Tensor::new(a.shape().to_vec(), data)?, Aux::None)
        }
        Op::Mul(a, b) => {
            let (a, b) = (val(*a), val(*b));
            require_same_shape("mul", a, b)?;
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
            (Tensor::new(a.shape().to_vec(), data)?, Aux::None)
        }
        Op::Div(a, b) => {
            let (a, b) = (val(*a), val(*b));
            require_same_shape("div", a, b)?;
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x / y).collect();
            (Tensor::new(a.shape().to_vec(), data)?, Aux::None)
        }
        Op::Scale(x, c) => {
            let x = val(*x);
            let data = x.data().iter().map(|v| v * c).collect();
            (Tensor::new(x.shape().to_vec(), data)?, Aux::None)
        }
        Op::AddRowVec(x, v) => {
            let (xv, vv) = (val(*x), val(*v));
            let (rows, cols) = xv.dims2().map_err(|_| shape_err("add_row_vec", xv, vv))?;
            if vv.numel() != cols {
                return Err(shape_err("add_row_vec", xv, vv));
            }
            let mut data = vec![0.0; rows * cols];
            for r in 0..rows {
                for c in 0..cols {
                    data[r * cols + c] = xv.data()[r * cols + c] + vv.data()[c];
                }
            }
            (Tensor::new(xv.shape().to_vec(), data)?, Aux::None)
        }
        Op::MulRowVec(x, v) => {
            let (xv, vv) = (val(*x), val(*v));
            let (rows, cols) = xv.dims2().map_err(|_| shape_err("mul_row_vec", xv, vv))?;
            if vv.numel() != cols {
                return Err(shape_err("mul_row_vec", xv, vv));
            }
            let mut data = vec![0.0; rows * cols];
            for r in 0..rows {
                for c in 0..cols {
                    data[r * cols + c] = xv.data()[r * cols + c] * vv.data()[c];
                }
            }
            (Tensor::new(xv.shape().to_vec(), data)?, Aux::None)
        }
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k) = av.dims2().map_err(|_| shape_err("matmul", av, bv))?;
            let (k2, n) = bv.dims2().map_err(|_| shape_err("matmul", av, bv))?;
            if k != k2 {
                return Err(shape_err("matmul", av, bv));
            }
            let mut data = vec![0.0; m * n];
            matmul(av.data(), bv.data(), &mut data, m, k, n);
            (Tensor::new(vec![m, n], data)?, Aux::None)
        }
        Op::Transpose(x) => {
            let xv = val(*x);
            let (rows, cols) = xv.dims2()?;
            let mut data = vec![0.0; rows * cols];
            transpose(xv.data(), &mut data, rows, cols);
            (Tensor::new(vec![cols, rows], data)?, Aux::None)
        }
        Op::Relu(x) => {
            let xv = val(*x);
            let data = xv.data().iter().map(|v| v.max(0.0)).collect();
            (Tensor::new(xv.shape().to_vec(), data)?, Aux::None)
        }
        Op::Softmax(x) => {
            let xv = val(*x);
            let last = *xv.shape().last().ok_or_else(|| Error::Shape {
                op: "softmax",
                detail: "softmax requires rank >= 1".into(),
            })?;
            let rows = xv.numel() / last;
            let mut data = vec![0.0; xv.numel()];
            for r in 0..rows {
                let row = &xv.data()[r * last..(r + 1) * last];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for c in 0..last {
                    let e = (row[c] - max).exp();
                    data[r * last + c] = e;
                    sum += e;
                }
                for c in 0..last {
                    data[r * last + c] /= sum;
                }
            }
            (Tensor::new(xv.shape().to_vec(), data)?, Aux::None)
        }
        Op::BatchNorm { x, gamma, beta } => {
            let (xv, gv, bv) = (val(*x), val(*gamma), val(*beta));
            let (rows, cols) = xv.dims2().map_err(|_| shape_err("batch_norm", xv, gv))?;
            if gv.numel() != cols || bv.numel() != cols {
                return Err(shape_err("batch_norm", xv, gv));
            }
            let mut mean = vec![0.0; cols];
            let mut var = vec![0.0; cols];
            for r in 0..rows {
                for c in 0..cols {
                    mean[c] += xv.data()[r * cols + c];
                }
            }
            for m in mean.iter_mut() {
                *m /= rows as f64;
            }
            for r in 0..rows {
                for c in 0..cols {
                    let d = xv.data()[r * cols + c] - mean[c];
                    var[c] += d * d;
                }
            }
            for v in var.iter_mut() {
                *v /= rows as f64;
            }
            let invstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
            let mut data = vec![0.0; rows * cols];
            for r in 0..rows {
                for c in 0..cols {
                    let i = r * cols + c;
                    let xhat = (xv.data()[i] - mean[c]) * invstd[c];
                    data[i] = gv.data()[c] * xhat + bv.data()[c];
                }
            }
            (
                Tensor::new(xv.shape().to_vec(), data)?,
                Aux::BatchNorm { mean, invstd },
            )
        }
        Op::BatchNormEval {
            x,
            gamma,
            beta,
            mean,
            var,
        } => {
            let (xv, gv, bv) = (val(*x), val(*gamma), val(*beta));
            let (mv, vv) = (val(*mean), val(*var));
            let (rows, cols) = xv.dims2().map_err(|_| shape_err("batch_norm_eval", xv, gv))?;
            if gv.numel() != cols || bv.numel() != cols || mv.numel() != cols || vv.numel() != cols
            {
                return Err(shape_err("batch_norm_eval", xv, gv));
            }
            let mut data = vec![0.0; rows * cols];
            for r in 0..rows {
                for c in 0..cols {
                    let i = r * cols + c;
                    let invstd = 1.0 / (vv.data()[c] + BN_EPS).sqrt();
                    data[i] = gv.data()[c] * (xv.data()[i] - mv.data()[c]) * invstd + bv.data()[c];
                }
            }
            (Tensor::new(xv.shape().to_vec(), data)?, Aux::None)
        }
        Op::Conv1d {
            x,
            w,
            bias,
            kernel,
            dilation,
        } => {
            let (xv, wv, bv) = (val(*x), val(*w), val(*bias));
            let (len, c_in) = xv.dims2().map_err(|_| shape_err("conv1d", xv, wv))?;
            let (c_out, wk) = wv.dims2().map_err(|_| shape_err("conv1d", xv, wv))?;
            if *kernel == 0 || kernel % 2 == 0 {
                return Err(Error::Shape {
                    op: "conv1d",
                    detail: format!("kernel must be odd and positive, got {}", kernel),
                });
            }
            if wk != c_in * kernel || bv.numel() != c_out {
                return Err(shape_err("conv1d", xv, wv));
            }
            let half = (*kernel as isize - 1) / 2;
            let mut data = vec![0.0; len * c_out];
            for l in 0..len {
                for co in 0..c_out {
                    let mut acc = bv.data()[co];
                    for k in 0..*kernel {
                        let src = l as isize + (k as isize - half) * *dilation as isize;
                        if src < 0 || src >= len as isize {
                            continue;
                        }
                        let src = src as usize;
                        for ci in 0..c_in {
                            acc += wv.data()[co * c_in * kernel + ci * kernel + k]
                                * xv.data()[src * c_in + ci];
                        }
                    }
                    data[l * c_out + co] = acc;
                }
            }
            (Tensor::new(vec![len, c_out], data)?, Aux::None)
        }
        Op::ConcatRows(xs) => {
            if xs.is_empty() {
                return Err(Error::Shape {
                    op: "concat_rows",
                    detail: "no inputs".into(),
                });
            }
            let cols = val(xs[0]).dims2()?.1;
            let mut rows = 0;
            let mut data = Vec::new();
            for x in xs {
                let (r, c) = val(*x).dims2()?;
                if c != cols {
                    return Err(Error::Shape {
                        op: "concat_rows",
                        detail: format!("column mismatch: {} vs {}", cols, c),
                    });
                }
                rows += r;
                data.extend_from_slice(val(*x).data());
            }
            (Tensor::new(vec![rows, cols], data)?, Aux::None)
        }
        Op::ConcatCols(xs) => {
            if xs.is_empty() {
                return Err(Error::Shape {
                    op: "concat_cols",
                    detail: "no inputs".into(),
                });
            }
            let rows = val(xs[0]).dims2()?.0;
            let mut total = 0;
            for x in xs {
                let (r, c) = val(*x).dims2()?;
                if r != rows {
                    return Err(Error::Shape {
                        op: "concat_cols",
                        detail: format!("row mismatch: {} vs {}", rows, r),
                    });
                }
                total += c;
            }
            let mut data = vec![0.0; rows * total];
            let mut off = 0;
            for x in xs {
                let (_, c) = val(*x).dims2()?;
                for r in 0..rows {
                    for j in 0..c {
                        data[r * total + off + j] = val(*x).data()[r * c + j];
                    }
                }
                off += c;
            }
            (Tensor::new(vec![rows, total], data)?, Aux::None)
        }
        Op::SliceRows { x, start, end } => {
            let xv = val(*x);
            let (rows, cols) = xv.dims2()?;
            if *start >= *end || *end > rows {
                return Err(Error::Shape {
                    op: "slice_rows",
                    detail: format!("range {}..{} out of {} rows", start, end, rows),
                });
            }
            let data = xv.data()[start * cols..end * cols].to_vec();
            (Tensor::new(vec![end - start, cols], data)?, Aux::None)
        }
        Op::SliceCols { x, start, end } => {
            let xv = val(*x);
            let (rows, cols) = xv.dims2()?;
            if *start >= *end || *end > cols {
                return Err(Error::Shape {
                    op: "slice_cols",
                    detail: format!("range {}..{} out of {} cols", start, end, cols),
                });
            }
            let width = end - start;
            let mut data = vec![0.0; rows * width];
            for r in 0..rows {
                for c in 0..width {
                    data[r * width + c] = xv.data()[r * cols + start + c];
                }
            }
            (Tensor::new(vec![rows, width], data)?, Aux::None)
        }
        Op::RowSelect { x, row } => {
            let xv = val(*x);
            let (rows, cols) = xv.dims2()?;
            if *row >= rows {
                return Err(Error::Shape {
                    op: "row_select",
                    detail: format!("row {} out of {} rows", row, rows),
                });
            }
            let data = xv.data()[row * cols..(row + 1) * cols].to_vec();
            (Tensor::vector(data), Aux::None)
        }
        Op::GatherRows { x, indices } => {
            let xv = val(*x);
            let (rows, cols) = xv.dims2()?;
            let mut data = Vec::with_capacity(indices.len() * cols);
            for r in indices {
                if *r >= rows {
                    return Err(Error::Shape {
                        op: "gather_rows",
                        detail: format!("row {} out of {} rows", r, rows),
                    });
                }
                data.extend_from_slice(&xv.data()[r * cols..(r + 1) * cols]);
            }
            (Tensor::new(vec![indices.len(), cols], data)?, Aux::None)
        }
        Op::Reshape(x) => {
            // Target shape is fixed up by the builder / replay caller.
            (val(*x).clone(), Aux::None)
        }
        Op::Mean(x) => {
            let xv = val(*x);
            let n = xv.numel() as f64;
            let sum: f64 = xv.data().iter().sum();
            (Tensor::scalar(sum / n), Aux::None)
        }
        Op::MeanRows(x) => {
            let xv = val(*x);
            let (rows, cols) = xv.dims2()?;
            let mut data = vec![0.0; cols];
            for r in 0..rows {
                for c in 0..cols {
                    data[c] += xv.data()[r * cols + c];
                }
            }
            for d in data.iter_mut() {
                *d /= rows as f64;
            }
            (Tensor::vector(data), Aux::None)
        }
        Op::Mse(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            require_same_shape("mse", av, bv)?;
            let n = av.numel() as f64;
            let sum: f64 = av
                .data()
                .iter()
                .zip(bv.data())
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            (Tensor::scalar(sum / n), Aux::None)
        }
        Op::CrossEntropy { logits, labels } => {
            let lv = val(*logits);
            let (rows, cols) = lv.dims2()?;
            if labels.len() != rows {
                return Err(Error::Shape {
                    op: "cross_entropy",
                    detail: format!("{} labels for {} rows", labels.len(), rows),
                });
            }
            let mut probs = vec![0.0; rows * cols];
            let mut loss = 0.0;
            for r in 0..rows {
                if labels[r] >= cols {
                    return Err(Error::InvalidArgument(format!(
                        "label {} out of range for {} classes",
                        labels[r], cols
                    )));
                }
                let row = &lv.data()[r * cols..(r + 1) * cols];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for c in 0..cols {
                    let e = (row[c] - max).exp();
                    probs[r * cols + c] = e;
                    sum += e;
                }
                for c in 0..cols {
                    probs[r * cols + c] /= sum;
                }
                loss -= row[labels[r]] - max - sum.ln();
            }
            (
                Tensor::scalar(loss / rows as f64),
                Aux::CrossEntropy { probs },
            )
        }
        Op::Custom { op, inputs } => {
            let input_vals: Vec<&Tensor> = inputs.iter().map(|i| &values[*i]).collect();
            let (out, aux) = op.forward(&input_vals)?;
            (out, Aux::Custom(aux))
        }
    };
    Ok(out)
}

fn require_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, a, b));
    }
    Ok(())
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        detail: format!("operands {:?} and {:?}", a.shape(), b.shape()),
    }
}

/// Central finite-difference gradient of the graph's scalar output with
/// respect to every registered parameter. This is the verification oracle
/// that reverse-mode gradients are checked against.
pub fn finite_difference_gradient(graph: &Graph, h: f64) -> Result<Vec<(String, Tensor)>> {
    if h <= 0.0 {
        return Err(Error::InvalidArgument(format!("h must be positive, got {}", h)));
    }
    if graph.output_value().numel() != 1 {
        return Err(Error::InvalidArgument(format!(
            "finite differences require a scalar output, got shape {:?}",
            graph.output_value().shape()
        )));
    }
    let mut out = Vec::new();
    for (name, id) in graph.params() {
        let base = graph.value(*id).clone();
        let mut grad = Tensor::zeros(base.shape());
        for i in 0..base.numel() {
            let mut plus = base.clone();
            plus.data_mut()[i] += h;
            let mut minus = base.clone();
            minus.data_mut()[i] -= h;
            let mut overrides = HashMap::new();
            overrides.insert(*id, plus);
            let f_plus = graph.replay(&overrides)?.item();
            overrides.insert(*id, minus);
            let f_minus = graph.replay(&overrides)?.item();
            grad.data_mut()[i] = (f_plus - f_minus) / (2.0 * h);
        }
        out.push((name.clone(), grad));
    }
    Ok(out)
}
