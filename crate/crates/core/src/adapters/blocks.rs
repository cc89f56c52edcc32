//! Block-diagonal construction and block-parallel application.
//!
//! A block-diagonal factor `diag(B₁, …, Bₙ)` applied to `W[d×f]` from the left
//! only mixes rows inside each of the `n` row groups, so the product splits
//! into `n` independent `(d/n)×(d/n) · (d/n)×f` products whose outputs are
//! disjoint row ranges. Right application splits `W` by column groups instead.

use rayon::prelude::*;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

fn check_square_blocks<T: Scalar>(blocks: &[&Tensor<T>]) -> Result<usize> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::Config("block list is empty".into()))?;
    let (m, m2) = first.dims2()?;
    if m != m2 {
        return Err(Error::Config(format!("block of shape {m}x{m2} is not square")));
    }
    for b in blocks {
        if b.shape() != first.shape() {
            return Err(Error::Config(format!(
                "blocks must share one size: {:?} vs {:?}",
                first.shape(),
                b.shape()
            )));
        }
    }
    Ok(m)
}

/// `n` for a dimension `dim` split into blocks of size `block`, if it divides.
fn block_count(dim: usize, block: usize, n: usize) -> Result<()> {
    if n == 0 || !dim.is_multiple_of(n) || dim / n != block {
        return Err(Error::Config(format!(
            "{n} blocks of size {block} do not tile dimension {dim}"
        )));
    }
    Ok(())
}

pub(crate) fn dense_block_diagonal<T: Scalar>(blocks: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let m = check_square_blocks(blocks)?;
    let d = m * blocks.len();
    let mut out = Tensor::zeros(&[d, d]);
    for (k, b) in blocks.iter().enumerate() {
        let off = k * m;
        for i in 0..m {
            for j in 0..m {
                out.set(off + i, off + j, b.at(i, j));
            }
        }
    }
    Ok(out)
}

/// Dense `diag(blocks…)`; off-block entries are exactly zero.
pub fn build_block_diagonal<T: Scalar>(blocks: &[Tensor<T>]) -> Result<Tensor<T>> {
    let refs: Vec<&Tensor<T>> = blocks.iter().collect();
    dense_block_diagonal(&refs)
}

/// Multiplies `W` by `diag(blocks…)` on the given side without materialising
/// the full factor. Blocks run in parallel; the result does not depend on the
/// thread count.
pub fn block_parallel_apply<T: Scalar>(blocks: &[Tensor<T>], w: &Tensor<T>, side: Side) -> Result<Tensor<T>> {
    let refs: Vec<&Tensor<T>> = blocks.iter().collect();
    let m = check_square_blocks(&refs)?;
    let n = blocks.len();
    let (d, f) = w.dims2()?;
    match side {
        Side::Left => {
            block_count(d, m, n)?;
            let parts = blocks
                .par_iter()
                .enumerate()
                .map(|(i, b)| b.matmul(&w.rows(i * m, (i + 1) * m)?))
                .collect::<Result<Vec<_>>>()?;
            Tensor::concat_rows(&parts)
        }
        Side::Right => {
            block_count(f, m, n)?;
            let parts = blocks
                .par_iter()
                .enumerate()
                .map(|(j, b)| w.cols(j * m, (j + 1) * m)?.matmul(b))
                .collect::<Result<Vec<_>>>()?;
            Tensor::concat_cols(&parts)
        }
    }
}

/// Tape-recorded counterpart of [`block_parallel_apply`].
pub fn block_parallel_apply_on<T: Scalar>(
    tape: &mut Tape<T>,
    blocks: &[Var],
    w: Var,
    side: Side,
) -> Result<Var> {
    let refs: Vec<&Tensor<T>> = blocks.iter().map(|&b| tape.value(b)).collect();
    let m = check_square_blocks(&refs)?;
    let n = blocks.len();
    let (d, f) = tape.value(w).dims2()?;
    let mut parts = Vec::with_capacity(n);
    match side {
        Side::Left => {
            block_count(d, m, n)?;
            for (i, &b) in blocks.iter().enumerate() {
                let wi = tape.slice_rows(w, i * m, (i + 1) * m)?;
                parts.push(tape.matmul(b, wi)?);
            }
            if n == 1 {
                return Ok(parts[0]);
            }
            tape.concat_rows(&parts)
        }
        Side::Right => {
            block_count(f, m, n)?;
            for (j, &b) in blocks.iter().enumerate() {
                let wj = tape.slice_cols(w, j * m, (j + 1) * m)?;
                parts.push(tape.matmul(wj, b)?);
            }
            if n == 1 {
                return Ok(parts[0]);
            }
            tape.concat_cols(&parts)
        }
    }
}
