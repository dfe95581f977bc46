use ndarray::ArrayD;

use super::scalar::Scalar;

/// A learnable tensor with its gradient accumulator and (lazily created)
/// Adam moment buffers. Gradients accumulate across backward passes until
/// `zero_grad` is called, so multi-path backpropagation just adds up.
#[derive(Debug, Clone)]
pub struct Param<S: Scalar> {
    pub value: ArrayD<S>,
    pub grad: ArrayD<S>,
    pub adam_m: Option<ArrayD<S>>,
    pub adam_v: Option<ArrayD<S>>,
}

impl<S: Scalar> Param<S> {
    pub fn new(value: ArrayD<S>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Param {
            value,
            grad,
            adam_m: None,
            adam_v: None,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(S::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Visitor over named parameters; the traversal order is fixed by each
/// network's structure, which checkpointing and the optimizer rely on.
pub trait VisitParams<S: Scalar> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<S>));
}
