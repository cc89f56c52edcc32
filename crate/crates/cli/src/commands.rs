//! The experiment subcommands. Each returns the bytes it wrote so callers
//! (and tests) can inspect them without re-reading the file.

use std::path::{Path, PathBuf};

use ether_core::adapters::init_adapter;
use ether_core::harness::{
    ablate_blocks, ablate_sidedness, finetune, lr_sweep, make_pretrained, perturbation_sweep, AblationRow, BaseModel,
    FinetuneRun, Linear, Pretrained, SweepResult, Task, ToyModel,
};
use ether_core::{AdaptedLinear, AdapterConfig, Method, Prng, Tensor};

use crate::checkpoint::{save_checkpoint, TensorMap};
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::output::{fmt_f64, write_atomic, CsvDoc};

pub const SWEEP_HEADER: [&str; 9] = [
    "method",
    "n",
    "lr",
    "epoch",
    "loss",
    "transform_distance",
    "weights_distance",
    "delta_he",
    "diverged",
];
pub const PERTURB_HEADER: [&str; 3] = ["method", "strength", "deviation"];
pub const ABLATE_HEADER: [&str; 7] = ["method", "n", "two_sided", "params", "ops_mul", "ops_add", "final_loss"];

/// Random stream reserved for drawing probe inputs.
const PROBE_STREAM: u64 = 1 << 32;

/// Builds the task and pretrains the base model.
pub fn setup(config: &ExperimentConfig) -> Result<(Task, Pretrained)> {
    let spec = config.task_spec();
    let task = spec.build()?;
    let pre = make_pretrained(&task, &spec.dims(), &config.pretrain_config(), config.pretrain_init_seed)?;
    Ok((task, pre))
}

fn out_path(config: &ExperimentConfig, default: &str) -> PathBuf {
    config.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::io(path, std::io::Error::other(e.to_string()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn render_sweep(config: &ExperimentConfig, result: &SweepResult) -> std::result::Result<Vec<u8>, csv::Error> {
    let mut doc = CsvDoc::new(&config.echo(), &SWEEP_HEADER)?;
    for cell in &result.cells {
        for e in &cell.epochs {
            doc.row([
                cell.method.to_string(),
                config.blocks.to_string(),
                fmt_f64(cell.lr),
                e.epoch.to_string(),
                fmt_f64(e.loss),
                fmt_f64(e.transform_distance),
                fmt_f64(e.weights_distance),
                fmt_f64(e.delta_he),
                e.diverged.to_string(),
            ])?;
        }
    }
    Ok(doc.into_bytes()?)
}

/// Learning-rate sweep over `methods × lr_grid`, one row per epoch.
pub fn cmd_sweep(config: &ExperimentConfig) -> Result<(SweepResult, Vec<u8>)> {
    config.validate()?;
    let sweep = config.sweep_config();
    sweep.validate()?;
    let (task, pre) = setup(config)?;
    let result = lr_sweep(&pre.model, &task.finetune, &sweep)?;
    let path = out_path(config, "sweep.csv");
    let bytes = render_sweep(config, &result).map_err(|e| csv_err(&path, e))?;
    write(&path, &bytes)?;
    Ok((result, bytes))
}

/// Output deviation against perturbation strength for every listed method.
pub fn cmd_perturb(config: &ExperimentConfig) -> Result<Vec<u8>> {
    config.validate()?;
    let (_, pre) = setup(config)?;
    let probes = Prng::derive(config.seed, PROBE_STREAM).normal_tensor(&[config.probes, config.input_dim], 1.0);
    let path = out_path(config, "perturb.csv");
    let mut doc = CsvDoc::new(&config.echo(), &PERTURB_HEADER).map_err(|e| csv_err(&path, e))?;
    for &method in &config.methods {
        let mut rng = Prng::derive(config.seed, method.ordinal());
        let points = perturbation_sweep(&pre.model, &config.adapter(method), &config.strengths, &probes, &mut rng)?;
        for p in points {
            let dev = p.deviation.map_or_else(|| "NA".to_string(), fmt_f64);
            doc.row([method.to_string(), fmt_f64(p.strength), dev])
                .map_err(|e| csv_err(&path, e))?;
        }
    }
    let bytes = doc.into_bytes().map_err(|e| CliError::io(&path, e))?;
    write(&path, &bytes)?;
    Ok(bytes)
}

/// Block-count ablation for `method` over `n_grid`, followed by the
/// two-sided versus one-sided ETHER+ comparison at `blocks`.
pub fn cmd_ablate(config: &ExperimentConfig) -> Result<(Vec<AblationRow>, Vec<u8>)> {
    config.validate()?;
    let (task, pre) = setup(config)?;
    let ft = config.finetune_config(config.method);
    let mut rows = ablate_blocks(&pre.model, &task.finetune, &ft, &config.n_grid, config.seed)?;
    rows.extend(ablate_sidedness(&pre.model, &task.finetune, &ft, config.seed)?);
    let path = out_path(config, "ablate.csv");
    let mut doc = CsvDoc::new(&config.echo(), &ABLATE_HEADER).map_err(|e| csv_err(&path, e))?;
    for r in &rows {
        doc.row([
            r.method.to_string(),
            r.n.to_string(),
            r.two_sided.to_string(),
            r.params.to_string(),
            r.ops.multiplications.to_string(),
            r.ops.additions.to_string(),
            fmt_f64(r.final_loss),
        ])
        .map_err(|e| csv_err(&path, e))?;
    }
    let bytes = doc.into_bytes().map_err(|e| CliError::io(&path, e))?;
    write(&path, &bytes)?;
    Ok((rows, bytes))
}

/// Names used in checkpoints: `layer{i}.weight`, `layer{i}.bias` and
/// `layer{i}.{adapter parameter}`.
pub fn model_to_map(model: &ToyModel) -> TensorMap {
    let mut map = TensorMap::new();
    for (i, l) in model.layers.iter().enumerate() {
        map.insert(format!("layer{i}.weight"), l.weight.clone());
        map.insert(format!("layer{i}.bias"), l.bias.clone());
        for (name, p) in l.adapter.named_params() {
            map.insert(format!("layer{i}.{name}"), p.clone());
        }
    }
    map
}

/// Rebuilds a model saved by [`model_to_map`]; `adapter` must match the
/// configuration it was trained with.
pub fn model_from_map(map: &TensorMap, adapter: &AdapterConfig) -> Result<ToyModel> {
    let get = |key: &str| -> Result<Tensor> {
        map.get(key)
            .cloned()
            .ok_or_else(|| CliError::Config(format!("checkpoint has no tensor '{key}'")))
    };
    let mut layers = Vec::new();
    let mut rng = Prng::new(0, 0);
    for i in 0.. {
        if !map.contains_key(&format!("layer{i}.weight")) {
            break;
        }
        let weight = get(&format!("layer{i}.weight"))?;
        let bias = get(&format!("layer{i}.bias"))?;
        let (d, f) = weight.dims2()?;
        let mut a = init_adapter(adapter, d, f, &mut rng)?;
        let names: Vec<String> = a.named_params().into_iter().map(|(n, _)| n).collect();
        for name in names {
            a.set_param(&name, get(&format!("layer{i}.{name}"))?)?;
        }
        layers.push(AdaptedLinear::new(weight, bias, a)?);
    }
    let model = ToyModel { layers };
    let expected = model_to_map(&model);
    if let Some(extra) = map.keys().find(|k| !expected.contains_key(*k)) {
        return Err(CliError::Config(format!("checkpoint tensor '{extra}' does not belong to a {} model", adapter.method)));
    }
    Ok(model)
}

pub fn base_of(model: &ToyModel) -> BaseModel {
    BaseModel {
        layers: model
            .layers
            .iter()
            .map(|l| Linear {
                weight: l.weight.clone(),
                bias: l.bias.clone(),
            })
            .collect(),
    }
}

/// Finetunes `method` at `lr` and saves the adapted model as a checkpoint.
pub fn cmd_train(config: &ExperimentConfig) -> Result<(FinetuneRun, String)> {
    config.validate()?;
    let (task, pre) = setup(config)?;
    let ft = config.finetune_config(config.method);
    let mut rng = Prng::derive(config.seed, config.method.ordinal());
    let run = finetune(&pre.model, &task.finetune, &ft, &mut rng)?;
    let path = out_path(config, "checkpoint.etck");
    save_checkpoint(&path, &model_to_map(&run.model))?;

    let mut log = config.echo();
    log.push_str(&format!("# base_loss = {}\n", fmt_f64(run.base_loss)));
    log.push_str("epoch,loss,transform_distance,weights_distance,delta_he,diverged\n");
    for e in &run.epochs {
        log.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.epoch,
            fmt_f64(e.loss),
            fmt_f64(e.transform_distance),
            fmt_f64(e.weights_distance),
            fmt_f64(e.delta_he),
            e.diverged
        ));
    }
    Ok((run, log))
}

/// Every method at its defaults, for enumerating checkpoint variants.
pub fn adapter_variants() -> Vec<AdapterConfig> {
    let mut v: Vec<AdapterConfig> = Method::ALL.iter().map(|&m| AdapterConfig::new(m)).collect();
    v.push(AdapterConfig::new(Method::EtherPlus).with_two_sided(false));
    v
}
