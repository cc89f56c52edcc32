//! Weight-transformation adapters for a frozen linear layer.
//!
//! Every adapter turns the frozen `W[d×f]` into `W′` and the layer computes
//! `y = x·W′ + b` for row inputs, i.e. `(W′)ᵀx + b` per sample:
//!
//! | method      | `W′`                       | trainable per layer |
//! |-------------|----------------------------|---------------------|
//! | ETHER       | `H^B W`                    | `d`                 |
//! | ETHER+      | `H⁺ W H̃⁺` (or `H⁺ W`)      | `2d + 2f` (or `2d`) |
//! | OFT         | `Q^B W`, Cayley blocks     | `d²/n`              |
//! | Naive       | `N^B W`, free blocks       | `d²/n`              |
//! | LoRA        | `W + (α/r) A B`            | `r(d + f)`          |

pub mod blocks;
pub mod ether;
pub mod ether_plus;
pub mod factors;
pub mod lora;
pub mod naive;
pub mod oft;

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use blocks::{block_parallel_apply, build_block_diagonal, Side};
pub use ether::EtherAdapter;
pub use ether_plus::{EtherPlusAdapter, PlanePairs};
pub use factors::{cayley, ether_plus_factor, householder};
pub use lora::LoraAdapter;
pub use naive::NaiveAdapter;
pub use oft::OftAdapter;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Ether,
    EtherPlus,
    Oft,
    Naive,
    Lora,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Ether,
        Method::EtherPlus,
        Method::Oft,
        Method::Naive,
        Method::Lora,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ether => "ether",
            Method::EtherPlus => "ether_plus",
            Method::Oft => "oft",
            Method::Naive => "naive",
            Method::Lora => "lora",
        }
    }

    /// Position in [`Method::ALL`]; stable, used to derive random streams.
    pub fn ordinal(self) -> u64 {
        self as u64
    }

    /// Multiplicative methods transform `W` by matrix factors; LoRA adds to it.
    pub fn is_multiplicative(self) -> bool {
        self != Method::Lora
    }

    /// ETHER and ETHER+ normals are normalized, bounding each factor's distance.
    pub fn is_bounded(self) -> bool {
        matches!(self, Method::Ether | Method::EtherPlus)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ether" => Ok(Method::Ether),
            "ether_plus" | "ether+" | "etherplus" => Ok(Method::EtherPlus),
            "oft" => Ok(Method::Oft),
            "naive" => Ok(Method::Naive),
            "lora" => Ok(Method::Lora),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

/// Hyper-parameters that pick and shape an adapter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterConfig {
    pub method: Method,
    /// Number of diagonal blocks `n`.
    pub blocks: usize,
    /// LoRA rank `r`.
    pub rank: usize,
    /// ETHER+ only: also transform from the right.
    pub two_sided: bool,
    /// LoRA scale numerator; `None` means `alpha = r`.
    pub alpha: Option<f64>,
}

impl AdapterConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            blocks: 1,
            rank: 4,
            two_sided: true,
            alpha: None,
        }
    }

    pub fn with_blocks(mut self, n: usize) -> Self {
        self.blocks = n;
        self
    }

    pub fn with_rank(mut self, r: usize) -> Self {
        self.rank = r;
        self
    }

    pub fn with_two_sided(mut self, two_sided: bool) -> Self {
        self.two_sided = two_sided;
        self
    }

    /// Checks divisibility and rank constraints for a `d×f` weight.
    pub fn validate(&self, d: usize, f: usize) -> Result<()> {
        let n = self.blocks;
        if d == 0 || f == 0 {
            return Err(Error::Config(format!("weight dims must be positive, got {d}x{f}")));
        }
        match self.method {
            Method::Lora => {
                if self.rank == 0 {
                    return Err(Error::Config("LoRA rank must be at least 1".into()));
                }
            }
            _ => {
                if n == 0 || !d.is_multiple_of(n) {
                    return Err(Error::Config(format!("{n} blocks do not divide d = {d}")));
                }
                if self.method == Method::EtherPlus && self.two_sided && !f.is_multiple_of(n) {
                    return Err(Error::Config(format!(
                        "{n} blocks do not divide f = {f} for the right-hand factor"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Dense description of what an adapter does to `W`.
#[derive(Clone, Debug, PartialEq)]
pub enum Factors<T> {
    /// Block lists of the left (over `d`) and optional right (over `f`) factor.
    Multiplicative {
        left: Vec<Tensor<T>>,
        right: Option<Vec<Tensor<T>>>,
    },
    /// `ΔW` added to `W`.
    Additive(Tensor<T>),
}

impl<T: Scalar> Factors<T> {
    /// Dense `W′`: factors are materialised block-diagonally and multiplied in full.
    pub fn apply_dense(&self, w: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Factors::Multiplicative { left, right } => {
                let mut out = build_block_diagonal(left)?.matmul(w)?;
                if let Some(r) = right {
                    out = out.matmul(&build_block_diagonal(r)?)?;
                }
                Ok(out)
            }
            Factors::Additive(delta) => w.add(delta),
        }
    }
}

/// Behaviour shared by every adapter variant.
pub trait Transform<T: Scalar> {
    fn params(&self) -> Vec<&Tensor<T>>;
    fn params_mut(&mut self) -> Vec<&mut Tensor<T>>;
    /// Stable, unique names, in the same order as [`Transform::params`].
    fn param_names(&self) -> Vec<String>;
    /// Records `W′` on the tape; `params` are the registered parameter leaves.
    fn apply_on(&self, tape: &mut Tape<T>, params: &[Var], w: Var) -> Result<Var>;
    fn factors(&self) -> Result<Factors<T>>;
}

#[derive(Clone, Debug, PartialEq)]
pub enum Adapter<T> {
    Ether(EtherAdapter<T>),
    EtherPlus(EtherPlusAdapter<T>),
    Oft(OftAdapter<T>),
    Naive(NaiveAdapter<T>),
    Lora(LoraAdapter<T>),
}

impl<T: Scalar> Adapter<T> {
    pub fn method(&self) -> Method {
        match self {
            Adapter::Ether(_) => Method::Ether,
            Adapter::EtherPlus(_) => Method::EtherPlus,
            Adapter::Oft(_) => Method::Oft,
            Adapter::Naive(_) => Method::Naive,
            Adapter::Lora(_) => Method::Lora,
        }
    }

    pub fn as_transform(&self) -> &dyn Transform<T> {
        match self {
            Adapter::Ether(a) => a,
            Adapter::EtherPlus(a) => a,
            Adapter::Oft(a) => a,
            Adapter::Naive(a) => a,
            Adapter::Lora(a) => a,
        }
    }

    pub fn as_transform_mut(&mut self) -> &mut dyn Transform<T> {
        match self {
            Adapter::Ether(a) => a,
            Adapter::EtherPlus(a) => a,
            Adapter::Oft(a) => a,
            Adapter::Naive(a) => a,
            Adapter::Lora(a) => a,
        }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.as_transform().params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.as_transform_mut().params_mut()
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let t = self.as_transform();
        t.param_names().into_iter().zip(t.params()).collect()
    }

    /// Number of trainable scalars actually stored.
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    pub fn factors(&self) -> Result<Factors<T>> {
        self.as_transform().factors()
    }

    /// Replaces a parameter by name; the shape must match.
    pub fn set_param(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let names = self.as_transform().param_names();
        let idx = names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Config(format!("{} adapter has no parameter '{name}'", self.method())))?;
        let slot = &mut self.params_mut()[idx];
        if slot.shape() != value.shape() {
            return Err(Error::dim("set_param", slot.shape(), value.shape()));
        }
        **slot = value;
        Ok(())
    }
}

/// Builds a freshly initialised adapter for a `d×f` weight.
///
/// OFT and Naive start at the identity, LoRA at a zero delta, ETHER+ with
/// `v = u` (identity). ETHER cannot start at the identity: its raw normals are
/// i.i.d. Gaussian with per-entry std `1/√(d/n)`.
pub fn init_adapter<T: Scalar>(config: &AdapterConfig, d: usize, f: usize, rng: &mut Prng) -> Result<Adapter<T>> {
    config.validate(d, f)?;
    let n = config.blocks;
    let planes = |rng: &mut Prng, dim: usize| -> Vec<Tensor<T>> {
        let m = dim / n;
        (0..n).map(|_| rng.normal_tensor(&[m], 1.0 / (m as f64).sqrt())).collect()
    };
    let adapter = match config.method {
        Method::Ether => Adapter::Ether(EtherAdapter { planes: planes(rng, d) }),
        Method::EtherPlus => {
            let u = planes(rng, d);
            let left = PlanePairs { v: u.clone(), u };
            let right = if config.two_sided {
                let u = planes(rng, f);
                Some(PlanePairs { v: u.clone(), u })
            } else {
                None
            };
            Adapter::EtherPlus(EtherPlusAdapter { left, right })
        }
        Method::Oft => Adapter::Oft(OftAdapter {
            r_blocks: vec![Tensor::zeros(&[d / n, d / n]); n],
        }),
        Method::Naive => Adapter::Naive(NaiveAdapter {
            n_blocks: vec![Tensor::identity(d / n); n],
        }),
        Method::Lora => {
            let r = config.rank;
            Adapter::Lora(LoraAdapter {
                a: rng.normal_tensor(&[d, r], 1.0 / (d as f64).sqrt()),
                b: Tensor::zeros(&[r, f]),
                alpha: T::of(config.alpha.unwrap_or(r as f64)),
            })
        }
    };
    Ok(adapter)
}

/// A frozen linear layer `y = x·W′ + b` with an attached adapter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedLinear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub adapter: Adapter<T>,
}

impl<T: Scalar> AdaptedLinear<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, adapter: Adapter<T>) -> Result<Self> {
        let (_, f) = weight.dims2()?;
        if bias.shape() != [f] {
            return Err(Error::dim("AdaptedLinear::new", weight.shape(), bias.shape()));
        }
        let layer = Self { weight, bias, adapter };
        // Surfaces block/shape mismatches at construction instead of first use.
        layer.merge()?;
        Ok(layer)
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Registers the adapter parameters as trainable leaves.
    pub fn register(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.adapter.params().into_iter().map(|p| tape.leaf(p.clone())).collect()
    }

    /// Records the adapted forward pass; `W` and `b` enter as constants.
    pub fn forward_on(&self, tape: &mut Tape<T>, x: Var, params: &[Var]) -> Result<Var> {
        let xv = tape.value(x);
        if xv.rank() != 2 || xv.shape()[1] != self.in_dim() {
            return Err(Error::dim("adapter_forward", xv.shape(), self.weight.shape()));
        }
        let w = tape.constant(self.weight.clone());
        let w_adapted = self.adapter.as_transform().apply_on(tape, params, w)?;
        let xw = tape.matmul(x, w_adapted)?;
        let b = tape.constant(self.bias.clone());
        tape.add_row(xw, b)
    }

    /// Adapted forward for a `batch×d` input, evaluated without gradients.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let params: Vec<Var> = self
            .adapter
            .params()
            .into_iter()
            .map(|p| tape.constant(p.clone()))
            .collect();
        let xv = tape.constant(x.clone());
        let y = self.forward_on(&mut tape, xv, &params)?;
        Ok(tape.into_value(y))
    }

    /// Absorbs the adapter: returns `W′` for a plain linear layer.
    pub fn merge(&self) -> Result<Tensor<T>> {
        self.adapter.factors()?.apply_dense(&self.weight)
    }
}

/// Plain linear layer `x·W + b`, used to check merged weights.
pub fn linear_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut y = x.matmul(w)?;
    let (m, f) = y.dims2()?;
    if b.shape() != [f] {
        return Err(Error::dim("linear_forward", w.shape(), b.shape()));
    }
    for i in 0..m {
        for j in 0..f {
            let v = y.at(i, j) + b.data()[j];
            y.set(i, j, v);
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(method: Method, n: usize, seed: u64) -> AdaptedLinear<f64> {
        let mut rng = Prng::new(seed, 0);
        let w = rng.normal_tensor(&[8, 12], 0.5);
        let b = rng.normal_tensor(&[12], 0.5);
        let a = init_adapter(&AdapterConfig::new(method).with_blocks(n), 8, 12, &mut rng).unwrap();
        AdaptedLinear::new(w, b, a).unwrap()
    }

    #[test]
    fn identity_at_init_for_oft_naive_lora_ether_plus() {
        let mut rng = Prng::new(9, 1);
        let x = rng.normal_tensor(&[5, 8], 1.0);
        for m in [Method::Oft, Method::Naive, Method::Lora, Method::EtherPlus] {
            let l = layer(m, 2, 4);
            let base = linear_forward(&x, &l.weight, &l.bias).unwrap();
            let out = l.forward(&x).unwrap();
            let tol = if m == Method::EtherPlus { 1e-12 } else { 0.0 };
            assert!(out.max_abs_diff(&base).unwrap() <= tol, "{m}");
        }
    }

    #[test]
    fn ether_param_count_is_d_for_every_n() {
        for n in [1, 2, 4, 8] {
            assert_eq!(layer(Method::Ether, n, 1).adapter.param_count(), 8);
        }
    }

    #[test]
    fn ether_plus_counts() {
        let mut rng = Prng::new(0, 0);
        let two = init_adapter::<f64>(&AdapterConfig::new(Method::EtherPlus).with_blocks(4), 8, 12, &mut rng).unwrap();
        assert_eq!(two.param_count(), 2 * 8 + 2 * 12);
        let one = init_adapter::<f64>(
            &AdapterConfig::new(Method::EtherPlus).with_blocks(4).with_two_sided(false),
            8,
            12,
            &mut rng,
        )
        .unwrap();
        assert_eq!(one.param_count(), 2 * 8);
    }

    #[test]
    fn naive_and_oft_share_count() {
        assert_eq!(
            layer(Method::Oft, 2, 0).adapter.param_count(),
            layer(Method::Naive, 2, 0).adapter.param_count()
        );
    }

    #[test]
    fn config_errors() {
        let mut rng = Prng::new(0, 0);
        let bad_n = AdapterConfig::new(Method::Ether).with_blocks(3);
        assert!(matches!(init_adapter::<f64>(&bad_n, 8, 12, &mut rng), Err(Error::Config(_))));
        let bad_right = AdapterConfig::new(Method::EtherPlus).with_blocks(8);
        assert!(matches!(init_adapter::<f64>(&bad_right, 8, 12, &mut rng), Err(Error::Config(_))));
        let bad_rank = AdapterConfig::new(Method::Lora).with_rank(0);
        assert!(matches!(init_adapter::<f64>(&bad_rank, 8, 12, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn forward_rejects_wrong_input_width() {
        let l = layer(Method::Ether, 1, 0);
        assert!(matches!(l.forward(&Tensor::zeros(&[2, 7])), Err(Error::Dimension { .. })));
    }

    #[test]
    fn set_param_round_trip() {
        let mut l = layer(Method::EtherPlus, 2, 3);
        let names: Vec<String> = l.adapter.named_params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), 8);
        let replacement = Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]);
        l.adapter.set_param("left.v.1", replacement.clone()).unwrap();
        let got = l.adapter.named_params().into_iter().find(|(n, _)| n == "left.v.1").unwrap().1.clone();
        assert_eq!(got, replacement);
        assert!(l.adapter.set_param("left.v.9", replacement).is_err());
    }

    #[test]
    fn method_names_parse() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("boft".parse::<Method>().is_err());
    }
}
