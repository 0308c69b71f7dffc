//! Minimal reverse-mode differentiation core.
//!
//! A [`Tape`] records array-valued operations eagerly; [`Tape::backward`]
//! fills adjoints for every reachable node. Values are `f64` throughout so
//! the finite-difference checks in the test suite operate far above the
//! rounding noise floor.

mod adam;
mod check;
mod kernels;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use check::finite_diff_check;
pub use kernels::matmul_acc;
pub use tape::{bilinear_gather, stable_sigmoid, NodeId, Tape};
pub use tensor::Tensor;

/// A named, optionally trainable dense array with a persistent gradient slot.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = vec![0.0; value.len()];
        Parameter {
            name: name.into(),
            value,
            grad,
            trainable: true,
        }
    }

    pub fn frozen(name: impl Into<String>, value: Tensor) -> Self {
        let mut p = Parameter::new(name, value);
        p.trainable = false;
        p
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Adds the tape adjoint of `node` into this parameter's gradient.
    pub fn accumulate_grad(&mut self, tape: &Tape, node: NodeId) {
        let adj = tape.adjoint(node);
        assert_eq!(
            adj.len(),
            self.grad.len(),
            "gradient shape mismatch for parameter {}",
            self.name
        );
        for (g, a) in self.grad.iter_mut().zip(adj) {
            *g += a;
        }
    }
}
