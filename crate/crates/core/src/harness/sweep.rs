use rayon::prelude::*;

use crate::adapters::Method;
use crate::error::{Error, Result};
use crate::rng::Prng;

use super::model::BaseModel;
use super::task::Dataset;
use super::train::{finetune, EpochRecord, FinetuneConfig};

/// Final losses within this factor of the best count towards the robust range.
pub const ROBUST_TOLERANCE: f64 = 0.1;

/// `10^-4 … 10^2`, one point per decade.
pub fn reference_lr_grid() -> Vec<f64> {
    (-4..=2).map(|e| 10f64.powi(e)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub methods: Vec<Method>,
    /// Multipliers of each method's unit learning rate.
    pub lr_grid: Vec<f64>,
    /// Per-method unit learning rate; methods not listed use 1.
    pub unit_scales: Vec<(Method, f64)>,
    /// Template for every cell; method and learning rate are overridden.
    pub finetune: FinetuneConfig,
    /// Master seeds; each one repeats the whole grid.
    pub seeds: Vec<u64>,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
}

impl SweepConfig {
    pub fn unit_scale(&self, method: Method) -> f64 {
        self.unit_scales
            .iter()
            .find(|(m, _)| *m == method)
            .map_or(1.0, |&(_, s)| s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("sweep needs at least one method and one seed".into()));
        }
        if self.lr_grid.iter().any(|&lr| !(lr.is_finite() && lr > 0.0)) {
            return Err(Error::Config("learning rates must be positive and finite".into()));
        }
        if self.unit_scales.iter().any(|&(_, s)| !(s.is_finite() && s > 0.0)) {
            return Err(Error::Config("unit learning rates must be positive and finite".into()));
        }
        let span = span_decades(&self.lr_grid);
        if span < 4.0 - 1e-9 {
            return Err(Error::Config(format!(
                "learning-rate grid spans {span:.2} decades; at least 4 are required"
            )));
        }
        Ok(())
    }
}

/// One (seed, method, lr) run.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub seed: u64,
    pub method: Method,
    pub lr: f64,
    pub base_loss: f64,
    pub initial_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub base_unchanged: bool,
}

impl SweepCell {
    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map_or(self.initial_loss, |e| e.loss)
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn diverged(&self) -> bool {
        self.epochs.iter().any(|e| e.diverged)
    }
}

/// Best learning rate and robust range of one method under one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodSummary {
    pub seed: u64,
    pub method: Method,
    pub best_lr: f64,
    pub best_loss: f64,
    /// Learning rates whose final loss is within [`ROBUST_TOLERANCE`] of the best.
    pub robust_lrs: Vec<f64>,
    /// `log10(max / min)` over `robust_lrs`.
    pub robust_span: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    /// Ordered by seed, then method, then learning rate, as configured.
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn cells_for(&self, seed: u64, method: Method) -> Vec<&SweepCell> {
        self.cells
            .iter()
            .filter(|c| c.seed == seed && c.method == method)
            .collect()
    }

    pub fn summary(&self, seed: u64, method: Method) -> Option<MethodSummary> {
        let cells = self.cells_for(seed, method);
        let points: Vec<(f64, f64)> = cells.iter().map(|c| (c.lr, c.final_loss())).collect();
        let (best_lr, best_loss, robust_lrs) = robust_range(&points, ROBUST_TOLERANCE)?;
        Some(MethodSummary {
            seed,
            method,
            best_lr,
            best_loss,
            robust_span: span_decades(&robust_lrs),
            robust_lrs,
        })
    }

    /// One summary per (seed, method) pair, in cell order.
    pub fn summaries(&self) -> Vec<MethodSummary> {
        let mut keys: Vec<(u64, Method)> = Vec::new();
        for c in &self.cells {
            if !keys.contains(&(c.seed, c.method)) {
                keys.push((c.seed, c.method));
            }
        }
        keys.into_iter().filter_map(|(s, m)| self.summary(s, m)).collect()
    }
}

/// Best finite final loss and every learning rate within `tolerance` of it.
/// `None` when no run finished with a finite loss.
pub fn robust_range(points: &[(f64, f64)], tolerance: f64) -> Option<(f64, f64, Vec<f64>)> {
    let (best_lr, best_loss) = points
        .iter()
        .copied()
        .filter(|(_, l)| l.is_finite())
        .min_by(|a, b| a.1.total_cmp(&b.1))?;
    let cutoff = best_loss * (1.0 + tolerance);
    let lrs = points
        .iter()
        .filter(|(_, l)| l.is_finite() && *l <= cutoff)
        .map(|&(lr, _)| lr)
        .collect();
    Some((best_lr, best_loss, lrs))
}

/// Orders of magnitude covered by a set of positive values.
pub fn span_decades(values: &[f64]) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || lo <= 0.0 {
        return 0.0;
    }
    (hi / lo).log10()
}

/// Finetunes every (seed, method, lr) combination from the same base.
///
/// Cell `(seed, method, ·)` draws its adapter initialisation and batch order
/// from `Prng::derive(seed, method.ordinal())`, so all learning rates of a
/// method start from the same point and the result does not depend on the
/// thread count or on which other methods are swept.
pub fn lr_sweep(base: &BaseModel, data: &Dataset, config: &SweepConfig) -> Result<SweepResult> {
    config.validate()?;
    let mut jobs = Vec::new();
    for &seed in &config.seeds {
        for &method in &config.methods {
            for &mult in &config.lr_grid {
                jobs.push((seed, method, mult * config.unit_scale(method)));
            }
        }
    }
    let run = |&(seed, method, lr): &(u64, Method, f64)| -> Result<SweepCell> {
        let mut cfg = config.finetune.clone();
        cfg.adapter.method = method;
        cfg.lr = lr;
        let mut rng = Prng::derive(seed, method.ordinal());
        let r = finetune(base, data, &cfg, &mut rng)?;
        Ok(SweepCell {
            seed,
            method,
            lr,
            base_loss: r.base_loss,
            initial_loss: r.initial_loss,
            epochs: r.epochs,
            base_unchanged: r.base_unchanged,
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::Setup(format!("thread pool: {e}")))?;
    let cells = pool.install(|| jobs.par_iter().map(run).collect::<Result<Vec<_>>>())?;
    Ok(SweepResult { cells })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn robust_range_hand_values() {
        let pts = [(1e-2, 1.0), (1e-1, 0.5), (1.0, 0.54), (10.0, 0.56), (100.0, f64::NAN)];
        let (lr, loss, lrs) = robust_range(&pts, 0.1).unwrap();
        assert_eq!((lr, loss), (1e-1, 0.5));
        assert_eq!(lrs, vec![1e-1, 1.0]);
        assert!((span_decades(&lrs) - 1.0).abs() < 1e-12);
        assert!(robust_range(&[(1.0, f64::INFINITY)], 0.1).is_none());
    }

    #[test]
    fn span_of_single_point_is_zero() {
        assert_eq!(span_decades(&[0.3]), 0.0);
        assert_eq!(span_decades(&[]), 0.0);
        assert!((span_decades(&reference_lr_grid()) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn narrow_grid_rejected() {
        let cfg = SweepConfig {
            methods: vec![Method::Ether],
            lr_grid: vec![1e-2, 1e-1, 1.0],
            unit_scales: vec![],
            finetune: FinetuneConfig::new(crate::AdapterConfig::new(Method::Ether), 1.0),
            seeds: vec![0],
            threads: 1,
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
