use crate::adapters::{AdapterConfig, Method};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::{Tape, Tensor};

use super::model::{BaseModel, ToyModel};
use super::task::{Dataset, Task};

/// Loss above `DIVERGENCE_FACTOR ×` the frozen-base loss counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop once the full-data loss is below `threshold × target variance`.
    pub relative_threshold: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            momentum: 0.9,
            batch_size: 128,
            max_epochs: 1000,
            relative_threshold: 0.005,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Pretrained {
    pub model: BaseModel,
    pub loss: f64,
    pub threshold: f64,
    pub epochs: usize,
}

pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    let diff = pred.sub(target)?;
    Ok(diff.data().iter().map(|x| x * x).sum::<f64>() / diff.numel().max(1) as f64)
}

/// Fits a fresh network of shape `dims` to the pretraining split.
///
/// Plain minibatch SGD with heavy-ball momentum. Fails with a setup error if
/// the loss threshold is not met within `max_epochs`.
pub fn make_pretrained(task: &Task, dims: &[usize], config: &PretrainConfig, seed: u64) -> Result<Pretrained> {
    let data = &task.pretrain;
    if dims.first() != Some(&data.x.shape()[1]) || dims.last() != Some(&data.y.shape()[1]) {
        return Err(Error::Config(format!(
            "architecture {dims:?} does not match task dims {:?}",
            task.spec.dims()
        )));
    }
    let threshold = config.relative_threshold * data.target_variance();
    let mut rng = Prng::new(seed, 0);
    let mut model = BaseModel::random(dims, 1.0, &mut rng)?;
    let mut velocity: Vec<Tensor> = model
        .layers
        .iter()
        .flat_map(|l| [Tensor::zeros(l.weight.shape()), Tensor::zeros(l.bias.shape())])
        .collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss = mse(&model.forward(&data.x)?, &data.y)?;

    for epoch in 1..=config.max_epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(config.batch_size.max(1)) {
            let batch = data.batch(chunk)?;
            let mut tape = Tape::new();
            let params: Vec<(Var, Var)> = model
                .layers
                .iter()
                .map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone())))
                .collect();
            let mut h = tape.constant(batch.x);
            for (i, &(w, b)) in params.iter().enumerate() {
                let xw = tape.matmul(h, w)?;
                h = tape.add_row(xw, b)?;
                if i + 1 < params.len() {
                    h = tape.tanh(h);
                }
            }
            let y = tape.constant(batch.y);
            let l = tape.mse(h, y)?;
            let grads = tape.backward(l)?;
            for (k, (layer, &(w, b))) in model.layers.iter_mut().zip(&params).enumerate() {
                for (slot, (param, var)) in [(2 * k, (&mut layer.weight, w)), (2 * k + 1, (&mut layer.bias, b))] {
                    let v = &mut velocity[slot];
                    *v = v.scale(config.momentum);
                    v.axpy(1.0, &grads.get(var))?;
                    param.axpy(-config.lr, v)?;
                }
            }
        }
        loss = mse(&model.forward(&data.x)?, &data.y)?;
        if !loss.is_finite() {
            break;
        }
        if loss < threshold {
            return Ok(Pretrained {
                model,
                loss,
                threshold,
                epochs: epoch,
            });
        }
    }
    Err(Error::Setup(format!(
        "pretraining did not reach loss {threshold:.4e} within {} epochs (last loss {loss:.4e}, lr {}, batch {})",
        config.max_epochs, config.lr, config.batch_size
    )))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneConfig {
    pub adapter: AdapterConfig,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Cosine annealing of the learning rate to zero over all steps.
    pub cosine: bool,
    pub weight_decay: f64,
}

impl FinetuneConfig {
    pub fn new(adapter: AdapterConfig, lr: f64) -> Self {
        Self {
            adapter,
            lr,
            epochs: 100,
            batch_size: 16,
            cosine: true,
            weight_decay: 0.0,
        }
    }
}

/// Measurements after one finetuning epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub transform_distance: f64,
    pub weights_distance: f64,
    pub delta_he: f64,
    pub diverged: bool,
    /// Per-layer, per-factor transform distances.
    pub per_factor: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct FinetuneRun {
    pub method: Method,
    pub lr: f64,
    /// Loss of the frozen pretrained model on the finetuning data.
    pub base_loss: f64,
    /// Loss of the adapted model before any update.
    pub initial_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub model: ToyModel,
    /// Whether the frozen weights were bit-identical after training.
    pub base_unchanged: bool,
}

impl FinetuneRun {
    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map_or(self.initial_loss, |e| e.loss)
    }

    pub fn diverged(&self) -> bool {
        self.epochs.iter().any(|e| e.diverged)
    }
}

fn is_diverged(loss: f64, base_loss: f64) -> bool {
    !loss.is_finite() || loss > DIVERGENCE_FACTOR * base_loss
}

/// Loss of `model` on a full dataset.
pub fn evaluate(model: &ToyModel, data: &Dataset) -> Result<f64> {
    mse(&model.forward(&data.x)?, &data.y)
}

/// Finetunes adapters on top of a frozen base.
///
/// `rng` drives adapter initialisation and then minibatch order. Training
/// uses SGD without momentum; parameters stop updating once a step would
/// produce non-finite values, and later epochs are reported as diverged.
pub fn finetune(base: &BaseModel, data: &Dataset, config: &FinetuneConfig, rng: &mut Prng) -> Result<FinetuneRun> {
    let n = config.adapter.blocks;
    let mut model = ToyModel::attach(base, &config.adapter, rng)?;
    let base_loss = mse(&base.forward(&data.x)?, &data.y)?;
    let initial_loss = evaluate(&model, data)?;
    let batch = config.batch_size.max(1);
    let steps_per_epoch = data.len().div_ceil(batch);
    let total_steps = (steps_per_epoch * config.epochs).max(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut frozen = false;
    let mut step = 0usize;
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(batch) {
            if frozen {
                break;
            }
            let lr = if config.cosine {
                config.lr * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total_steps as f64).cos())
            } else {
                config.lr
            };
            step += 1;
            let b = data.batch(chunk)?;
            let mut tape = Tape::new();
            let params = model.register(&mut tape);
            let x = tape.constant(b.x);
            let out = model.forward_on(&mut tape, x, &params)?;
            let y = tape.constant(b.y);
            let loss = tape.mse(out, y)?;
            if !tape.value(loss).item().is_finite() {
                frozen = true;
                break;
            }
            let grads = tape.backward(loss)?;
            let mut updated = Vec::with_capacity(params.len());
            for (layer, vars) in model.layers.iter().zip(&params) {
                let mut new_params = Vec::with_capacity(vars.len());
                for (p, &v) in layer.adapter.params().into_iter().zip(vars) {
                    let mut np = p.scale(1.0 - lr * config.weight_decay);
                    np.axpy(-lr, &grads.get(v))?;
                    new_params.push(np);
                }
                updated.push(new_params);
            }
            if updated.iter().flatten().any(|p| !p.all_finite()) {
                frozen = true;
                break;
            }
            for (layer, new_params) in model.layers.iter_mut().zip(updated) {
                for (slot, np) in layer.adapter.params_mut().into_iter().zip(new_params) {
                    *slot = np;
                }
            }
        }
        let loss = match evaluate(&model, data) {
            Ok(l) => l,
            Err(Error::DegenerateVector { .. }) | Err(Error::Numerical(_)) => f64::NAN,
            Err(e) => return Err(e),
        };
        let metrics = model.metrics(n);
        let (transform_distance, weights_distance, delta_he, per_factor) = match metrics {
            Ok(m) => (m.transform_distance, m.weights_distance, m.delta_he, m.per_factor),
            Err(_) => (f64::NAN, f64::NAN, f64::NAN, Vec::new()),
        };
        epochs.push(EpochRecord {
            epoch,
            loss,
            transform_distance,
            weights_distance,
            delta_he,
            diverged: frozen || is_diverged(loss, base_loss),
            per_factor,
        });
    }

    let base_unchanged = model.base_unchanged(base);
    Ok(FinetuneRun {
        method: config.adapter.method,
        lr: config.lr,
        base_loss,
        initial_loss,
        epochs,
        model,
        base_unchanged,
    })
}
