use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{Factors, Transform};

/// Additive low-rank update `W + (alpha/r)·A·B` with `A[d×r]`, `B[r×f]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapter<T> {
    pub a: Tensor<T>,
    pub b: Tensor<T>,
    pub alpha: T,
}

impl<T: Scalar> LoraAdapter<T> {
    pub fn rank(&self) -> usize {
        self.a.shape()[1]
    }

    pub fn scaling(&self) -> T {
        self.alpha / T::of(self.rank() as f64)
    }

    pub fn delta(&self) -> Result<Tensor<T>> {
        Ok(self.a.matmul(&self.b)?.scale(self.scaling()))
    }
}

impl<T: Scalar> Transform<T> for LoraAdapter<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.a, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.a, &mut self.b]
    }

    fn param_names(&self) -> Vec<String> {
        vec!["a".into(), "b".into()]
    }

    fn apply_on(&self, tape: &mut Tape<T>, params: &[Var], w: Var) -> Result<Var> {
        let ab = tape.matmul(params[0], params[1])?;
        let delta = tape.scale(ab, self.scaling());
        tape.add(w, delta)
    }

    fn factors(&self) -> Result<Factors<T>> {
        Ok(Factors::Additive(self.delta()?))
    }
}
