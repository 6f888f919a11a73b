//! Differentiable computation substrate: dense tensors, a recorded op set
//! with reverse-mode gradients, a finite-difference oracle, and Adam.

mod adam;
mod graph;
mod tensor;

pub use adam::{Adam, AdamConfig, ParamStore};
pub use graph::{finite_difference_gradient, CustomOp, Graph, GraphBuilder, NodeId};
pub use tensor::{matmul, transpose, Tensor};

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    /// f(x) = x^2 at x = 3 -> value 9, gradient 6.
    #[test]
    fn square_value_and_gradient() {
        let mut b = GraphBuilder::new();
        let x = b.param("x", Tensor::scalar(3.0));
        let y = b.mul(x, x).unwrap();
        let g = b.finish(y);
        let (value, grads) = g.param_gradients().unwrap();
        assert_eq!(value, 9.0);
        assert_eq!(grads["x"].item(), 6.0);
    }

    #[test]
    fn square_finite_difference() {
        let mut b = GraphBuilder::new();
        let x = b.param("x", Tensor::scalar(3.0));
        let y = b.mul(x, x).unwrap();
        let g = b.finish(y);
        let fd = finite_difference_gradient(&g, 1e-6).unwrap();
        assert_eq!(fd[0].0, "x");
        assert!((fd[0].1.item() - 6.0).abs() < 1e-6);
    }

    #[test]
    fn relu_flat_region_has_zero_gradient() {
        let mut b = GraphBuilder::new();
        let x = b.param("x", Tensor::scalar(-1.0));
        let y = b.relu(x).unwrap();
        let g = b.finish(y);
        let fd = finite_difference_gradient(&g, 1e-6).unwrap();
        assert_eq!(fd[0].1.item(), 0.0);
        let (_, grads) = g.param_gradients().unwrap();
        assert_eq!(grads["x"].item(), 0.0);
    }

    /// d/da mean((a-b)^2) at a=(1,2), b=(0,0) is 2(a-b)/n = (1, 2).
    #[test]
    fn mse_gradient_matches_hand_derivation() {
        let mut b = GraphBuilder::new();
        let a = b.param("a", Tensor::vector(vec![1.0, 2.0]));
        let t = b.constant(Tensor::vector(vec![0.0, 0.0]));
        let loss = b.mse(a, t).unwrap();
        let g = b.finish(loss);
        let (value, grads) = g.param_gradients().unwrap();
        assert!((value - 2.5).abs() < 1e-12);
        let ga = grads["a"].data();
        assert!((ga[0] - 1.0).abs() < 1e-12);
        assert!((ga[1] - 2.0).abs() < 1e-12);
        let fd = finite_difference_gradient(&g, 1e-6).unwrap();
        assert!((fd[0].1.data()[0] - 1.0).abs() < 1e-6);
        assert!((fd[0].1.data()[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut b = GraphBuilder::new();
        let x = b.constant(Tensor::matrix(1, 5, vec![0.0; 5]).unwrap());
        let y = b.softmax(x).unwrap();
        let g = b.finish(y);
        for v in g.output_value().data() {
            assert!((v - 0.2).abs() < 1e-15);
        }
        let sum: f64 = g.output_value().data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch_rejected_at_build_time_with_op_name() {
        let mut b = GraphBuilder::new();
        let a = b.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let c = b.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let err = b.matmul(a, c).unwrap_err();
        assert!(err.to_string().contains("matmul"), "{err}");
    }

    #[test]
    fn finite_difference_requires_scalar_output() {
        let mut b = GraphBuilder::new();
        let x = b.param("x", Tensor::vector(vec![1.0, 2.0]));
        let y = b.relu(x).unwrap();
        let g = b.finish(y);
        assert!(finite_difference_gradient(&g, 1e-6).is_err());
    }

    #[test]
    fn gradients_accumulate_over_shared_inputs() {
        // y = x*x + x -> dy/dx = 2x + 1 = 7 at x=3
        let mut b = GraphBuilder::new();
        let x = b.param("x", Tensor::scalar(3.0));
        let sq = b.mul(x, x).unwrap();
        let y = b.add(sq, x).unwrap();
        let g = b.finish(y);
        let (_, grads) = g.param_gradients().unwrap();
        assert_eq!(grads["x"].item(), 7.0);
    }

    #[test]
    fn evaluation_is_deterministic() {
        let build = || {
            let mut b = GraphBuilder::new();
            let x = b.param("x", Tensor::vector(vec![0.3, -0.7, 1.9]));
            let w = b.param("w", Tensor::matrix(3, 3, (0..9).map(|i| i as f64 * 0.1).collect()).unwrap());
            let xm = b.reshape(x, vec![1, 3]).unwrap();
            let h = b.matmul(xm, w).unwrap();
            let r = b.relu(h).unwrap();
            let out = b.mean(r).unwrap();
            b.finish(out)
        };
        let g1 = build();
        let g2 = build();
        assert_eq!(g1.output_value().item().to_bits(), g2.output_value().item().to_bits());
        let (_, grads1) = g1.param_gradients().unwrap();
        let (_, grads2) = g2.param_gradients().unwrap();
        for (k, v) in &grads1 {
            let a: Vec<u64> = v.data().iter().map(|x| x.to_bits()).collect();
            let b: Vec<u64> = grads2[k].data().iter().map(|x| x.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn replay_reproduces_and_respects_overrides() {
        let mut b = GraphBuilder::new();
        let x = b.param("x", Tensor::scalar(2.0));
        let y = b.mul(x, x).unwrap();
        let g = b.finish(y);
        assert_eq!(g.replay(&HashMap::new()).unwrap().item(), 4.0);
        let mut over = HashMap::new();
        over.insert(g.param_id("x").unwrap(), Tensor::scalar(5.0));
        assert_eq!(g.replay(&over).unwrap().item(), 25.0);
    }

    #[test]
    fn unreachable_parameter_gets_no_gradient_entry() {
        let mut b = GraphBuilder::new();
        let x = b.param("x", Tensor::scalar(3.0));
        let _unused = b.param("unused", Tensor::scalar(1.0));
        let y = b.mul(x, x).unwrap();
        let g = b.finish(y);
        let (_, grads) = g.param_gradients().unwrap();
        assert!(grads.contains_key("x"));
        assert!(!grads.contains_key("unused"));
    }
}
