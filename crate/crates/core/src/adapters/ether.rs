use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::blocks::{block_parallel_apply_on, Side};
use super::factors::{householder, householder_on};
use super::{Factors, Transform};

/// Block-diagonal Householder reflection applied on the left of `W`.
///
/// Holds one raw (unnormalized) hyperplane normal of length `d/n` per block,
/// so the parameter count is `d` whatever `n` is.
#[derive(Clone, Debug, PartialEq)]
pub struct EtherAdapter<T> {
    pub planes: Vec<Tensor<T>>,
}

impl<T: Scalar> Transform<T> for EtherAdapter<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        self.planes.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.planes.iter_mut().collect()
    }

    fn param_names(&self) -> Vec<String> {
        (0..self.planes.len()).map(|i| format!("u.{i}")).collect()
    }

    fn apply_on(&self, tape: &mut Tape<T>, params: &[Var], w: Var) -> Result<Var> {
        let blocks = params
            .iter()
            .map(|&u| householder_on(tape, u))
            .collect::<Result<Vec<_>>>()?;
        block_parallel_apply_on(tape, &blocks, w, Side::Left)
    }

    fn factors(&self) -> Result<Factors<T>> {
        let left = self.planes.iter().map(householder).collect::<Result<Vec<_>>>()?;
        Ok(Factors::Multiplicative { left, right: None })
    }
}
