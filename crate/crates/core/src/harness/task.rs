use crate::adapters::cayley;
use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::Tensor;

use super::model::BaseModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    /// Real-valued targets.
    Regression,
    /// One-hot targets of the arg-max teacher output, fitted with squared error.
    Classification,
}

/// Teacher–student task with a documented distribution shift.
///
/// Inputs are standard normal. Pretraining targets come from a random
/// `tanh` teacher network. Finetuning targets are the teacher outputs rotated
/// by `Cayley(shift_magnitude · G)` (a random orthogonal map that is the
/// identity at zero magnitude) plus an offset `shift_magnitude · offset_scale · c`
/// along a random unit direction `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub pretrain_samples: usize,
    pub finetune_samples: usize,
    pub pretrain_seed: u64,
    pub shift_seed: u64,
    pub shift_magnitude: f64,
    pub offset_scale: f64,
    /// Teacher weight gain; larger means a more nonlinear target.
    pub teacher_gain: f64,
}

impl TaskSpec {
    /// 32 → 64 → 16 regression, 4096 pretraining and 1024 finetuning samples.
    pub fn reference() -> Self {
        Self {
            kind: TaskKind::Regression,
            input_dim: 32,
            hidden_dim: 64,
            output_dim: 16,
            pretrain_samples: 4096,
            finetune_samples: 1024,
            pretrain_seed: 1,
            shift_seed: 2,
            shift_magnitude: 0.02,
            offset_scale: 0.5,
            teacher_gain: 1.5,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        vec![self.input_dim, self.hidden_dim, self.output_dim]
    }

    pub fn build(&self) -> Result<Task> {
        if self.pretrain_samples == 0 || self.finetune_samples == 0 {
            return Err(Error::Config("sample counts must be positive".into()));
        }
        let mut teacher_rng = Prng::new(self.pretrain_seed, 0);
        let teacher = BaseModel::random(&self.dims(), self.teacher_gain, &mut teacher_rng)?;
        let mut x_rng = Prng::new(self.pretrain_seed, 1);
        let x = x_rng.normal_tensor(&[self.pretrain_samples, self.input_dim], 1.0);
        let y = self.targets(teacher.forward(&x)?)?;
        let pretrain = Dataset { x, y };

        let k = self.output_dim;
        let mut shift_rng = Prng::new(self.shift_seed, 0);
        let g: Tensor = shift_rng.normal_tensor(&[k, k], 1.0);
        let rotation = cayley(&g.scale(self.shift_magnitude))?;
        let direction: Tensor = shift_rng.unit_vector(k);
        let offset = direction.scale(self.shift_magnitude * self.offset_scale);

        let mut fx_rng = Prng::new(self.shift_seed, 1);
        let fx = fx_rng.normal_tensor(&[self.finetune_samples, self.input_dim], 1.0);
        let shifted = teacher.forward(&fx)?.matmul(&rotation.transpose()?)?;
        let shifted = crate::adapters::linear_forward(&shifted, &Tensor::identity(k), &offset)?;
        let finetune = Dataset {
            x: fx,
            y: self.targets(shifted)?,
        };

        Ok(Task {
            spec: self.clone(),
            teacher,
            pretrain,
            finetune,
        })
    }

    fn targets(&self, raw: Tensor) -> Result<Tensor> {
        match self.kind {
            TaskKind::Regression => Ok(raw),
            TaskKind::Classification => {
                let (m, k) = raw.dims2()?;
                let mut out = Tensor::zeros(&[m, k]);
                for i in 0..m {
                    let best = (0..k)
                        .max_by(|&a, &b| raw.at(i, a).total_cmp(&raw.at(i, b)))
                        .unwrap_or(0);
                    out.set(i, best, 1.0);
                }
                Ok(out)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub y: Tensor,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows selected by `idx`.
    pub fn batch(&self, idx: &[usize]) -> Result<Dataset> {
        let pick = |t: &Tensor| -> Result<Tensor> {
            let (_, w) = t.dims2()?;
            let mut data = Vec::with_capacity(idx.len() * w);
            for &i in idx {
                data.extend_from_slice(&t.data()[i * w..(i + 1) * w]);
            }
            Tensor::new(&[idx.len(), w], data)
        };
        Ok(Dataset {
            x: pick(&self.x)?,
            y: pick(&self.y)?,
        })
    }

    /// Mean per-entry variance of the targets.
    pub fn target_variance(&self) -> f64 {
        let (m, k) = self.y.dims2().unwrap_or((0, 0));
        if m == 0 {
            return 0.0;
        }
        let mut total = 0.0;
        for j in 0..k {
            let mean = (0..m).map(|i| self.y.at(i, j)).sum::<f64>() / m as f64;
            total += (0..m).map(|i| (self.y.at(i, j) - mean).powi(2)).sum::<f64>() / m as f64;
        }
        total / k as f64
    }
}

/// Generated data plus the teacher that produced it.
#[derive(Clone, Debug)]
pub struct Task {
    pub spec: TaskSpec,
    pub teacher: BaseModel,
    pub pretrain: Dataset,
    pub finetune: Dataset,
}
