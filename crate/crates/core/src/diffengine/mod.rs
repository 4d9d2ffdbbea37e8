//! Reverse-mode differentiation over a closed set of operations (matrix
//! product, same-size convolution, addition, the two proximal activations
//! and a sum-of-squares loss), the ADAM optimizer, and finite-difference
//! gradient checks.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod params;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{compare_gradients, grad_check, relative_error, GradCheckConfig, GradCheckReport};
pub use graph::{Graph, NodeId};
pub use params::{Param, ParamStore};

use crate::error::Result;
use crate::tensor::Real;

/// A differentiable model: records its loss for one sample onto a graph.
pub trait Model<F: Real> {
    type Sample;

    /// Records the forward pass and returns the scalar loss node.
    fn loss(&self, graph: &mut Graph<F>, store: &ParamStore<F>, sample: &Self::Sample) -> Result<NodeId>;
}

/// Zeroes the gradients, then accumulates the loss gradient of every sample
/// in batch order. Returns the summed loss.
pub fn forward_backward<F: Real, M: Model<F>>(
    model: &M,
    store: &mut ParamStore<F>,
    batch: &[M::Sample],
) -> Result<f64> {
    store.zero_grad();
    let mut total = 0.0;
    for sample in batch {
        let mut graph = Graph::new();
        let loss = model.loss(&mut graph, store, sample)?;
        total += graph.value(loss).item().as_f64();
        graph.backward(loss, store)?;
    }
    store.mark_grads_ready();
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    /// `loss = c * ||W x + b - t||^2` with `b` a per-row offset matrix.
    struct Affine {
        scale: f64,
    }

    impl Model<f64> for Affine {
        type Sample = (Tensor<f64>, Tensor<f64>);

        fn loss(&self, g: &mut Graph<f64>, store: &ParamStore<f64>, s: &Self::Sample) -> Result<NodeId> {
            let w = g.param(store, "w")?;
            let b = g.param(store, "b")?;
            let x = g.input("x", s.0.clone())?;
            let t = g.input("t", s.1.clone())?;
            let y = g.matmul(w, x, "wx")?;
            let y = g.add(y, b, "wx+b")?;
            let l = g.sse(y, t, "sse")?;
            if self.scale == 1.0 {
                Ok(l)
            } else {
                g.scale(l, self.scale, "scaled")
            }
        }
    }

    fn store() -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_vec(&[2, 3], vec![0.3, -0.2, 0.5, 0.1, 0.7, -0.4]).unwrap(), false)
            .unwrap();
        s.insert("b", Tensor::from_vec(&[2, 1], vec![0.05, -0.1]).unwrap(), false).unwrap();
        s
    }

    fn batch() -> Vec<(Tensor<f64>, Tensor<f64>)> {
        vec![
            (
                Tensor::from_vec(&[3, 1], vec![1.0, 2.0, -1.0]).unwrap(),
                Tensor::from_vec(&[2, 1], vec![0.5, 0.25]).unwrap(),
            ),
            (
                Tensor::from_vec(&[3, 1], vec![-0.5, 0.3, 0.8]).unwrap(),
                Tensor::from_vec(&[2, 1], vec![-0.2, 1.0]).unwrap(),
            ),
        ]
    }

    #[test]
    fn linear_model_passes_tight_check() {
        let r = grad_check(&Affine { scale: 1.0 }, &store(), &batch(), &GradCheckConfig::default()).unwrap();
        assert!(r.passed);
        assert!(r.max_rel_error() <= 1e-7, "{}", r.max_rel_error());
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let model = Affine { scale: 1.0 };
        let mut s = store();
        forward_backward(&model, &mut s, &batch()).unwrap();
        s.get_mut("w").unwrap().grad.data_mut()[4] += 1.0;
        let r = compare_gradients(&model, &s, &batch(), &GradCheckConfig::default()).unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn determinism_and_linearity() {
        let mut a = store();
        let mut b = store();
        let la = forward_backward(&Affine { scale: 1.0 }, &mut a, &batch()).unwrap();
        let lb = forward_backward(&Affine { scale: 1.0 }, &mut b, &batch()).unwrap();
        assert_eq!(la.to_bits(), lb.to_bits());
        assert_eq!(a, b);
        for c in [0.5, 2.0, 4.0] {
            let mut s = store();
            forward_backward(&Affine { scale: c }, &mut s, &batch()).unwrap();
            for ((_, p), (_, q)) in s.iter().zip(a.iter()) {
                for (x, y) in p.grad.data().iter().zip(q.grad.data()) {
                    assert_eq!(*x, c * y);
                }
            }
        }
    }
}
