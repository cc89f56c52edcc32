use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::blocks::{block_parallel_apply_on, Side};
use super::factors::{cayley, cayley_on};
use super::{Factors, Transform};

/// Block-diagonal orthogonal factor `Q^B`, each block the Cayley map of the
/// skew part of an unconstrained `R` block. `R = 0` gives the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct OftAdapter<T> {
    pub r_blocks: Vec<Tensor<T>>,
}

impl<T: Scalar> OftAdapter<T> {
    /// `S = ½(R − Rᵀ)` for every block.
    pub fn skew_blocks(&self) -> Result<Vec<Tensor<T>>> {
        self.r_blocks
            .iter()
            .map(|r| Ok(r.sub(&r.transpose()?)?.scale(T::of(0.5))))
            .collect()
    }
}

impl<T: Scalar> Transform<T> for OftAdapter<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        self.r_blocks.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.r_blocks.iter_mut().collect()
    }

    fn param_names(&self) -> Vec<String> {
        (0..self.r_blocks.len()).map(|i| format!("r.{i}")).collect()
    }

    fn apply_on(&self, tape: &mut Tape<T>, params: &[Var], w: Var) -> Result<Var> {
        let blocks = params
            .iter()
            .map(|&r| cayley_on(tape, r))
            .collect::<Result<Vec<_>>>()?;
        block_parallel_apply_on(tape, &blocks, w, Side::Left)
    }

    fn factors(&self) -> Result<Factors<T>> {
        let left = self.r_blocks.iter().map(cayley).collect::<Result<Vec<_>>>()?;
        Ok(Factors::Multiplicative { left, right: None })
    }
}
