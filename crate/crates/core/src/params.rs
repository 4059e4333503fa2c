use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tempattn_autograd::{Tape, Tensor, Var};

use crate::error::{ReidError, Result};

/// A bundle of named trainable tensors with a fixed enumeration order.
pub trait ParamSet {
    fn named_params(&self) -> Vec<(String, &Tensor)>;
    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    /// Records every tensor on the tape, in enumeration order.
    fn bind_all(&self, tape: &mut Tape) -> Vec<Var> {
        self.named_params()
            .into_iter()
            .map(|(_, t)| tape.param(t))
            .collect()
    }

    /// Adds the tape gradients of `vars` (from [`ParamSet::bind_all`] order)
    /// into the tensors' gradient slots.
    fn absorb_grads(&mut self, tape: &Tape, vars: &[Var]) -> Result<()> {
        let params = self.named_params_mut();
        if params.len() != vars.len() {
            return Err(ReidError::Invalid(format!(
                "{} vars for {} parameters",
                vars.len(),
                params.len()
            )));
        }
        for ((name, tensor), &var) in params.into_iter().zip(vars) {
            match tape.grad(var) {
                Some(g) => tensor.accumulate_grad(g)?,
                None => {
                    log::trace!("no gradient reached {name}");
                    tensor.accumulate_grad(&vec![0.0; tensor.numel()])?
                }
            }
        }
        Ok(())
    }

    fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// `Uniform(−b, b)` with `b = sqrt(1 / fan_in)`.
pub(crate) fn fan_in_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (1.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}
