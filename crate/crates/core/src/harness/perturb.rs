use crate::adapters::{
    AdapterConfig, EtherAdapter, EtherPlusAdapter, LoraAdapter, Method, NaiveAdapter, OftAdapter, PlanePairs,
};
use crate::error::{Error, Result};
use crate::metrics::transformation_distance;
use crate::rng::Prng;
use crate::{AdaptedLinear, Adapter, Tensor};

use super::model::{BaseModel, ToyModel};

/// Output deviation at one perturbation strength; `None` when the method
/// cannot realise that strength.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerturbPoint {
    pub method: Method,
    pub strength: f64,
    pub deviation: Option<f64>,
}

/// Random direction for one layer, scaled to a strength on demand.
enum Direction {
    Ether(Vec<Tensor>),
    EtherPlus {
        left: Vec<(Tensor, Tensor)>,
        right: Option<Vec<(Tensor, Tensor)>>,
    },
    Oft(Vec<Tensor>),
    Naive(Vec<Tensor>),
    Lora { a: Tensor, b: Tensor, rank: usize },
}

/// Unit vector and a unit vector orthogonal to it, per block.
fn plane_pairs(rng: &mut Prng, dim: usize, n: usize) -> Vec<(Tensor, Tensor)> {
    let m = dim / n;
    (0..n)
        .map(|_| {
            let u: Tensor = rng.unit_vector(m);
            loop {
                let w: Tensor = rng.unit_vector(m);
                let mut w_perp = w.clone();
                w_perp.axpy(-u.dot(&w).unwrap_or(0.0), &u).expect("same length");
                let norm = w_perp.norm();
                if norm > 1e-6 {
                    return (u, w_perp.scale(1.0 / norm));
                }
            }
        })
        .collect()
}

impl Direction {
    fn sample(config: &AdapterConfig, d: usize, f: usize, rng: &mut Prng) -> Self {
        let n = config.blocks;
        let m = d / n;
        match config.method {
            Method::Ether => Direction::Ether((0..n).map(|_| rng.unit_vector(m)).collect()),
            Method::EtherPlus => Direction::EtherPlus {
                left: plane_pairs(rng, d, n),
                right: config.two_sided.then(|| plane_pairs(rng, f, n)),
            },
            Method::Oft => Direction::Oft((0..n).map(|_| rng.normal_tensor(&[m, m], 1.0)).collect()),
            Method::Naive => {
                let blocks: Vec<Tensor> = (0..n).map(|_| rng.normal_tensor(&[m, m], 1.0)).collect();
                let total = blocks.iter().map(|b| b.norm().powi(2)).sum::<f64>().sqrt();
                Direction::Naive(blocks.into_iter().map(|b| b.scale(1.0 / total)).collect())
            }
            Method::Lora => {
                let rank = config.rank;
                let a = rng.normal_tensor(&[d, rank], 1.0);
                let b: Tensor = rng.normal_tensor(&[rank, f], 1.0);
                let norm = a.matmul(&b).expect("inner dims agree").norm();
                Direction::Lora {
                    a,
                    b: b.scale(1.0 / norm),
                    rank,
                }
            }
        }
    }

    /// The adapter at `strength`, or `None` if out of reach.
    fn at(&self, strength: f64) -> Result<Option<Adapter>> {
        Ok(match self {
            Direction::Ether(planes) => {
                let fixed = 2.0 * (planes.len() as f64).sqrt();
                ((strength - fixed).abs() <= 1e-9).then(|| Adapter::Ether(EtherAdapter { planes: planes.clone() }))
            }
            Direction::EtherPlus { left, right } => {
                // Per block ‖H⁺ − I‖_F = √2·sin θ for v = cos θ·u + sin θ·w, w ⊥ u.
                let n = left.len() as f64;
                let sin = strength / (2.0 * n).sqrt();
                if sin > 1.0 + 1e-12 {
                    return Ok(None);
                }
                let sin = sin.min(1.0);
                let cos = (1.0 - sin * sin).sqrt();
                let pairs = |blocks: &Vec<(Tensor, Tensor)>| -> Result<PlanePairs<f64>> {
                    let mut v = Vec::with_capacity(blocks.len());
                    for (u, w) in blocks {
                        let mut vi = u.scale(cos);
                        vi.axpy(sin, w)?;
                        v.push(vi);
                    }
                    Ok(PlanePairs {
                        u: blocks.iter().map(|(u, _)| u.clone()).collect(),
                        v,
                    })
                };
                Some(Adapter::EtherPlus(EtherPlusAdapter {
                    left: pairs(left)?,
                    right: right.as_ref().map(pairs).transpose()?,
                }))
            }
            Direction::Oft(dirs) => oft_at(dirs, strength)?,
            Direction::Naive(dirs) => Some(Adapter::Naive(NaiveAdapter {
                n_blocks: dirs
                    .iter()
                    .map(|e| Tensor::identity(e.shape()[0]).add(&e.scale(strength)))
                    .collect::<Result<_>>()?,
            })),
            Direction::Lora { a, b, rank } => Some(Adapter::Lora(LoraAdapter {
                a: a.clone(),
                b: b.scale(strength),
                alpha: *rank as f64,
            })),
        })
    }
}

fn oft_distance(dirs: &[Tensor], t: f64) -> Result<f64> {
    let a = Adapter::Oft(OftAdapter {
        r_blocks: dirs.iter().map(|r| r.scale(t)).collect(),
    });
    Ok(transformation_distance(&a)?.total())
}

/// Scales `R` along its direction until the factor is `strength` away from
/// the identity. Orthogonal factors are bounded, so large strengths are out
/// of reach.
fn oft_at(dirs: &[Tensor], strength: f64) -> Result<Option<Adapter>> {
    if strength == 0.0 {
        return Ok(Some(Adapter::Oft(OftAdapter {
            r_blocks: dirs.iter().map(|r| Tensor::zeros(r.shape())).collect(),
        })));
    }
    let mut hi = 1.0;
    while oft_distance(dirs, hi)? < strength {
        hi *= 2.0;
        if hi > 1e12 {
            return Ok(None);
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if oft_distance(dirs, mid)? < strength {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(Some(Adapter::Oft(OftAdapter {
        r_blocks: dirs.iter().map(|r| r.scale(hi)).collect(),
    })))
}

/// Relative output change `‖y′ − y‖_F / ‖y‖_F` on `probes` when every layer of
/// `base` is perturbed by a random transformation of the given strength.
///
/// Strength is the distance from the identity of each multiplicative factor
/// (`‖ΔW‖_F` per layer for LoRA). One random direction per layer is drawn and
/// then scaled, so each curve follows a fixed direction. ETHER has a single
/// fixed strength `2√n` and is reported there even if the grid omits it.
pub fn perturbation_sweep(
    base: &BaseModel,
    config: &AdapterConfig,
    strengths: &[f64],
    probes: &Tensor,
    rng: &mut Prng,
) -> Result<Vec<PerturbPoint>> {
    if strengths.iter().any(|&s| !(s.is_finite() && s >= 0.0)) {
        return Err(Error::Config("perturbation strengths must be finite and non-negative".into()));
    }
    let dirs = base
        .layers
        .iter()
        .map(|l| {
            let (d, f) = l.weight.dims2()?;
            config.validate(d, f)?;
            Ok(Direction::sample(config, d, f, rng))
        })
        .collect::<Result<Vec<_>>>()?;
    let y = base.forward(probes)?;
    let y_norm = y.norm();
    if y_norm.is_nan() || y_norm <= 0.0 {
        return Err(Error::Config("probe outputs are all zero".into()));
    }

    let mut grid = strengths.to_vec();
    if config.method == Method::Ether {
        let fixed = 2.0 * (config.blocks as f64).sqrt();
        if !grid.iter().any(|s| (s - fixed).abs() <= 1e-9) {
            let pos = grid.iter().position(|&s| s > fixed).unwrap_or(grid.len());
            grid.insert(pos, fixed);
        }
    }

    let mut out = Vec::with_capacity(grid.len());
    'strength: for &s in &grid {
        let mut layers = Vec::with_capacity(base.layers.len());
        for (l, dir) in base.layers.iter().zip(&dirs) {
            let Some(adapter) = dir.at(s)? else {
                out.push(PerturbPoint {
                    method: config.method,
                    strength: s,
                    deviation: None,
                });
                continue 'strength;
            };
            layers.push(AdaptedLinear::new(l.weight.clone(), l.bias.clone(), adapter)?);
        }
        let y_new = ToyModel { layers }.forward(probes)?;
        out.push(PerturbPoint {
            method: config.method,
            strength: s,
            deviation: Some(y_new.sub(&y)?.norm() / y_norm),
        });
    }
    Ok(out)
}
