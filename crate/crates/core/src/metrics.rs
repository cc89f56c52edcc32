//! Distances, hyperspherical energy, orthogonality diagnostics and analytic
//! parameter/operation counts.

use crate::adapters::{build_block_diagonal, AdaptedLinear, Adapter, AdapterConfig, Factors, Method};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Clamp on pairwise neuron separation inside [`hyperspherical_energy`].
pub const HE_EPS: f64 = 1e-9;

/// Distance of an adapter's transformation from the neutral element.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformDistance<T> {
    /// `‖F − I‖_F` per factor (left, then right), or `‖ΔW‖_F` for LoRA.
    pub per_factor: Vec<T>,
    /// True when the value is an additive-delta norm, which is not
    /// comparable with the multiplicative distances.
    pub additive: bool,
}

impl<T: Scalar> TransformDistance<T> {
    pub fn total(&self) -> T {
        self.per_factor.iter().copied().sum()
    }
}

fn block_diag_distance<T: Scalar>(blocks: &[Tensor<T>]) -> Result<T> {
    let dense = build_block_diagonal(blocks)?;
    let (m, _) = dense.dims2()?;
    Ok(dense.sub(&Tensor::identity(m))?.norm())
}

pub fn transformation_distance<T: Scalar>(adapter: &Adapter<T>) -> Result<TransformDistance<T>> {
    match adapter.factors()? {
        Factors::Multiplicative { left, right } => {
            let mut per_factor = vec![block_diag_distance(&left)?];
            if let Some(r) = right {
                per_factor.push(block_diag_distance(&r)?);
            }
            Ok(TransformDistance {
                per_factor,
                additive: false,
            })
        }
        Factors::Additive(delta) => Ok(TransformDistance {
            per_factor: vec![delta.norm()],
            additive: true,
        }),
    }
}

/// `‖W′ − W‖_F`.
pub fn weights_distance<T: Scalar>(w: &Tensor<T>, w_prime: &Tensor<T>) -> Result<T> {
    if w.shape() != w_prime.shape() {
        return Err(Error::dim("weights_distance", w.shape(), w_prime.shape()));
    }
    Ok(w_prime.sub(w)?.norm())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeReport<T> {
    pub energy: T,
    /// Pairs whose separation fell below the clamp.
    pub clamped_pairs: usize,
}

/// Riesz energy `Σ_{i<j} ‖ŵᵢ − ŵⱼ‖^(−exponent)` over the ℓ2-normalized
/// columns of `W`, with separations clamped from below at `eps`.
pub fn hyperspherical_energy_with<T: Scalar>(w: &Tensor<T>, exponent: f64, eps: f64) -> Result<HeReport<T>> {
    let (d, f) = w.dims2()?;
    let guard = T::of(crate::autodiff::NORM_EPS);
    let mut cols: Vec<Vec<T>> = Vec::with_capacity(f);
    for j in 0..f {
        let col: Vec<T> = (0..d).map(|i| w.at(i, j)).collect();
        let norm = col.iter().map(|&x| x * x).sum::<T>().sqrt();
        if norm.is_nan() || norm <= guard {
            return Err(Error::DegenerateVector {
                norm: norm.to_f64_lossy(),
                guard: crate::autodiff::NORM_EPS,
            });
        }
        cols.push(col.into_iter().map(|x| x / norm).collect());
    }
    let (s, eps) = (T::of(exponent), T::of(eps));
    let mut energy = T::zero();
    let mut clamped_pairs = 0;
    for i in 0..f {
        for j in i + 1..f {
            let mut dist = cols[i]
                .iter()
                .zip(&cols[j])
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum::<T>()
                .sqrt();
            if dist < eps {
                dist = eps;
                clamped_pairs += 1;
            }
            energy += dist.powf(-s);
        }
    }
    Ok(HeReport { energy, clamped_pairs })
}

/// [`hyperspherical_energy_with`] at exponent 1 and the default clamp.
pub fn hyperspherical_energy<T: Scalar>(w: &Tensor<T>) -> Result<T> {
    Ok(hyperspherical_energy_with(w, 1.0, HE_EPS)?.energy)
}

/// `‖T Tᵀ − I‖_F`.
pub fn orthogonality_residual<T: Scalar>(t: &Tensor<T>) -> Result<T> {
    let (m, n) = t.dims2()?;
    if m != n {
        return Err(Error::dim("orthogonality_residual", t.shape(), &[m, m]));
    }
    Ok(t.matmul(&t.transpose()?)?.sub(&Tensor::identity(m))?.norm())
}

/// Trainable parameters of one `d×f` layer under the given adapter settings.
pub fn param_count(config: &AdapterConfig, d: usize, f: usize) -> Result<usize> {
    config.validate(d, f)?;
    let n = config.blocks;
    Ok(match config.method {
        Method::Ether => d,
        Method::EtherPlus if config.two_sided => 2 * d + 2 * f,
        Method::EtherPlus => 2 * d,
        Method::Lora => config.rank * (d + f),
        Method::Oft | Method::Naive => d * d / n,
    })
}

/// Multiplications and additions for applying a `d×d` factor with `n`
/// diagonal blocks to a `d×f` weight: `d²f/n` and `(d−1)·d·f/n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OpCount {
    pub multiplications: u64,
    pub additions: u64,
}

pub fn op_count(d: usize, f: usize, n: usize) -> Result<OpCount> {
    if n == 0 || !d.is_multiple_of(n) {
        return Err(Error::Config(format!("{n} blocks do not divide d = {d}")));
    }
    let (d, f, n) = (d as u64, f as u64, n as u64);
    let block = d / n;
    Ok(OpCount {
        multiplications: n * block * (block * f),
        additions: (d - 1) * (block * f),
    })
}

/// Per-layer measurements after finetuning.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerMetrics<T> {
    pub transform: TransformDistance<T>,
    pub weights_distance: T,
    pub delta_he: T,
}

pub fn layer_metrics<T: Scalar>(layer: &AdaptedLinear<T>) -> Result<LayerMetrics<T>> {
    let merged = layer.merge()?;
    Ok(LayerMetrics {
        transform: transformation_distance(&layer.adapter)?,
        weights_distance: weights_distance(&layer.weight, &merged)?,
        delta_he: hyperspherical_energy(&merged)? - hyperspherical_energy(&layer.weight)?,
    })
}

/// One summary row: values summed over the model's adapted layers.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub method: Method,
    pub n: usize,
    pub transform_distance: f64,
    pub weights_distance: f64,
    pub delta_he: f64,
    pub param_count: usize,
    pub op_count: OpCount,
    /// Per-layer, per-factor transform distances in layer order.
    pub per_factor: Vec<f64>,
}

impl MetricsRecord {
    pub fn from_layers<T: Scalar>(method: Method, n: usize, layers: &[AdaptedLinear<T>]) -> Result<Self> {
        let mut rec = MetricsRecord {
            method,
            n,
            transform_distance: 0.0,
            weights_distance: 0.0,
            delta_he: 0.0,
            param_count: 0,
            op_count: OpCount {
                multiplications: 0,
                additions: 0,
            },
            per_factor: Vec::new(),
        };
        for layer in layers {
            let m = layer_metrics(layer)?;
            rec.transform_distance += m.transform.total().to_f64_lossy();
            rec.per_factor
                .extend(m.transform.per_factor.iter().map(|x| x.to_f64_lossy()));
            rec.weights_distance += m.weights_distance.to_f64_lossy();
            rec.delta_he += m.delta_he.to_f64_lossy();
            rec.param_count += layer.adapter.param_count();
            if method.is_multiplicative() {
                let (d, f) = (layer.in_dim(), layer.out_dim());
                let left = op_count(d, f, n)?;
                rec.op_count.multiplications += left.multiplications;
                rec.op_count.additions += left.additions;
                if let Adapter::EtherPlus(a) = &layer.adapter {
                    if a.two_sided() {
                        let right = op_count(f, d, n)?;
                        rec.op_count.multiplications += right.multiplications;
                        rec.op_count.additions += right.additions;
                    }
                }
            }
        }
        Ok(rec)
    }
}
