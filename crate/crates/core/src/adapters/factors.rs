//! The square transformation factors each adapter is built from.
//!
//! Each factor has a tape form (`*_on`) used during training and a dense
//! convenience form that evaluates the same recipe on a scratch tape.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn identity_like<T: Scalar>(tape: &mut Tape<T>, v: Var) -> Var {
    let d = tape.value(v).numel();
    tape.constant(Tensor::identity(d))
}

/// Householder reflection `I − 2ûûᵀ` with `û = u / ‖u‖`.
pub fn householder_on<T: Scalar>(tape: &mut Tape<T>, u_raw: Var) -> Result<Var> {
    let u = tape.normalize(u_raw)?;
    let uu = tape.outer(u, u)?;
    let two_uu = tape.scale(uu, T::of(-2.0));
    let eye = identity_like(tape, u_raw);
    tape.add(eye, two_uu)
}

/// Relaxed reflection `I − ûûᵀ + v̂v̂ᵀ`.
pub fn ether_plus_factor_on<T: Scalar>(tape: &mut Tape<T>, u_raw: Var, v_raw: Var) -> Result<Var> {
    let u = tape.normalize(u_raw)?;
    let v = tape.normalize(v_raw)?;
    let uu = tape.outer(u, u)?;
    let vv = tape.outer(v, v)?;
    let diff = tape.sub(vv, uu)?;
    let eye = identity_like(tape, u_raw);
    tape.add(eye, diff)
}

/// Cayley map `(I + S)(I − S)⁻¹` of the skew part `S = ½(R − Rᵀ)`.
pub fn cayley_on<T: Scalar>(tape: &mut Tape<T>, r: Var) -> Result<Var> {
    let (m, _) = tape.value(r).dims2()?;
    let rt = tape.transpose(r)?;
    let diff = tape.sub(r, rt)?;
    let s = tape.scale(diff, T::of(0.5));
    let eye = tape.constant(Tensor::identity(m));
    let plus = tape.add(eye, s)?;
    let minus = tape.sub(eye, s)?;
    let inv = tape.inverse(minus)?;
    tape.matmul(plus, inv)
}

fn eval1<T: Scalar>(x: &Tensor<T>, f: impl FnOnce(&mut Tape<T>, Var) -> Result<Var>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let out = f(&mut tape, v)?;
    Ok(tape.into_value(out))
}

pub fn householder<T: Scalar>(u_raw: &Tensor<T>) -> Result<Tensor<T>> {
    eval1(u_raw, householder_on)
}

pub fn ether_plus_factor<T: Scalar>(u_raw: &Tensor<T>, v_raw: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let u = tape.constant(u_raw.clone());
    let v = tape.constant(v_raw.clone());
    let out = ether_plus_factor_on(&mut tape, u, v)?;
    Ok(tape.into_value(out))
}

pub fn cayley<T: Scalar>(r: &Tensor<T>) -> Result<Tensor<T>> {
    eval1(r, cayley_on)
}

/// `‖F − I‖_F` for a square factor.
pub fn distance_to_identity<T: Scalar>(f: &Tensor<T>) -> Result<T> {
    let (m, _) = f.dims2()?;
    Ok(f.sub(&Tensor::identity(m))?.norm())
}
