use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::blocks::{block_parallel_apply_on, Side};
use super::factors::{ether_plus_factor, ether_plus_factor_on};
use super::{Factors, Transform};

/// A pair of raw plane normals per block, forming `I − ûûᵀ + v̂v̂ᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanePairs<T> {
    pub u: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> PlanePairs<T> {
    fn blocks(&self) -> Result<Vec<Tensor<T>>> {
        self.u
            .iter()
            .zip(&self.v)
            .map(|(u, v)| ether_plus_factor(u, v))
            .collect()
    }

    fn blocks_on(&self, tape: &mut Tape<T>, params: &[Var]) -> Result<Vec<Var>> {
        let n = self.u.len();
        (0..n)
            .map(|i| ether_plus_factor_on(tape, params[i], params[n + i]))
            .collect()
    }

    fn len(&self) -> usize {
        self.u.len() + self.v.len()
    }
}

/// Relaxed reflections on the left (over `d`) and, when two-sided, on the
/// right (over `f`) of `W`.
#[derive(Clone, Debug, PartialEq)]
pub struct EtherPlusAdapter<T> {
    pub left: PlanePairs<T>,
    pub right: Option<PlanePairs<T>>,
}

impl<T: Scalar> EtherPlusAdapter<T> {
    pub fn two_sided(&self) -> bool {
        self.right.is_some()
    }
}

impl<T: Scalar> Transform<T> for EtherPlusAdapter<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        let mut out: Vec<&Tensor<T>> = self.left.u.iter().chain(&self.left.v).collect();
        if let Some(r) = &self.right {
            out.extend(r.u.iter().chain(&r.v));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = self.left.u.iter_mut().chain(self.left.v.iter_mut()).collect();
        if let Some(r) = &mut self.right {
            out.extend(r.u.iter_mut().chain(r.v.iter_mut()));
        }
        out
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        let mut push = |side: &str, pairs: &PlanePairs<T>| {
            for i in 0..pairs.u.len() {
                names.push(format!("{side}.u.{i}"));
            }
            for i in 0..pairs.v.len() {
                names.push(format!("{side}.v.{i}"));
            }
        };
        push("left", &self.left);
        if let Some(r) = &self.right {
            push("right", r);
        }
        names
    }

    fn apply_on(&self, tape: &mut Tape<T>, params: &[Var], w: Var) -> Result<Var> {
        let split = self.left.len();
        let left = self.left.blocks_on(tape, &params[..split])?;
        let mut out = block_parallel_apply_on(tape, &left, w, Side::Left)?;
        if let Some(r) = &self.right {
            let right = r.blocks_on(tape, &params[split..])?;
            out = block_parallel_apply_on(tape, &right, out, Side::Right)?;
        }
        Ok(out)
    }

    fn factors(&self) -> Result<Factors<T>> {
        Ok(Factors::Multiplicative {
            left: self.left.blocks()?,
            right: self.right.as_ref().map(PlanePairs::blocks).transpose()?,
        })
    }
}
