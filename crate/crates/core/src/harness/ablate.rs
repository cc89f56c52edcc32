use crate::adapters::{AdapterConfig, Method};
use crate::error::{Error, Result};
use crate::metrics::OpCount;
use crate::rng::Prng;

use super::model::BaseModel;
use super::task::Dataset;
use super::train::{finetune, FinetuneConfig};

/// One ablation setting and its outcome, totals over the model's layers.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub method: Method,
    pub n: usize,
    pub two_sided: bool,
    pub params: usize,
    pub ops: OpCount,
    pub initial_loss: f64,
    pub final_loss: f64,
}

fn run(base: &BaseModel, data: &Dataset, config: &FinetuneConfig, seed: u64) -> Result<AblationRow> {
    let adapter = &config.adapter;
    let mut rng = Prng::derive(seed, adapter.method.ordinal());
    let r = finetune(base, data, config, &mut rng)?;
    let m = r.model.metrics(adapter.blocks)?;
    Ok(AblationRow {
        method: adapter.method,
        n: adapter.blocks,
        two_sided: adapter.method == Method::EtherPlus && adapter.two_sided,
        params: m.param_count,
        ops: m.op_count,
        initial_loss: r.initial_loss,
        final_loss: r.final_loss(),
    })
}

/// Finetunes `config.adapter.method` once per block count in `n_grid`.
///
/// Every `n` is checked against every layer before any training starts.
pub fn ablate_blocks(
    base: &BaseModel,
    data: &Dataset,
    config: &FinetuneConfig,
    n_grid: &[usize],
    seed: u64,
) -> Result<Vec<AblationRow>> {
    if n_grid.is_empty() {
        return Err(Error::Config("empty block-count grid".into()));
    }
    let configs: Vec<FinetuneConfig> = n_grid
        .iter()
        .map(|&n| {
            let mut c = config.clone();
            c.adapter = c.adapter.with_blocks(n);
            for l in &base.layers {
                let (d, f) = l.weight.dims2()?;
                c.adapter.validate(d, f)?;
            }
            Ok(c)
        })
        .collect::<Result<_>>()?;
    configs.iter().map(|c| run(base, data, c, seed)).collect()
}

/// Two-sided versus one-sided ETHER+ under otherwise identical settings.
pub fn ablate_sidedness(
    base: &BaseModel,
    data: &Dataset,
    config: &FinetuneConfig,
    seed: u64,
) -> Result<Vec<AblationRow>> {
    [true, false]
        .into_iter()
        .map(|two_sided| {
            let mut c = config.clone();
            c.adapter = AdapterConfig {
                method: Method::EtherPlus,
                two_sided,
                ..c.adapter
            };
            run(base, data, &c, seed)
        })
        .collect()
}
