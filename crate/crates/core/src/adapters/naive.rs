use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::blocks::{block_parallel_apply_on, Side};
use super::{Factors, Transform};

/// Unconstrained block-diagonal factor `N^B`, identity at initialization.
#[derive(Clone, Debug, PartialEq)]
pub struct NaiveAdapter<T> {
    pub n_blocks: Vec<Tensor<T>>,
}

impl<T: Scalar> Transform<T> for NaiveAdapter<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        self.n_blocks.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.n_blocks.iter_mut().collect()
    }

    fn param_names(&self) -> Vec<String> {
        (0..self.n_blocks.len()).map(|i| format!("n.{i}")).collect()
    }

    fn apply_on(&self, tape: &mut Tape<T>, params: &[Var], w: Var) -> Result<Var> {
        block_parallel_apply_on(tape, params, w, Side::Left)
    }

    fn factors(&self) -> Result<Factors<T>> {
        Ok(Factors::Multiplicative {
            left: self.n_blocks.clone(),
            right: None,
        })
    }
}
