//! Desk-scale experiments: pretraining a small teacher–student model,
//! finetuning it with each adapter, and sweeping learning rates, perturbation
//! strengths, block counts and sidedness.

pub mod ablate;
pub mod model;
pub mod perturb;
pub mod sweep;
pub mod task;
pub mod train;

pub use ablate::{ablate_blocks, ablate_sidedness, AblationRow};
pub use model::{BaseModel, Linear, ToyModel};
pub use perturb::{perturbation_sweep, PerturbPoint};
pub use sweep::{
    lr_sweep, reference_lr_grid, robust_range, span_decades, MethodSummary, SweepCell, SweepConfig, SweepResult,
    ROBUST_TOLERANCE,
};
pub use task::{Dataset, Task, TaskKind, TaskSpec};
pub use train::{
    evaluate, finetune, make_pretrained, mse, EpochRecord, FinetuneConfig, FinetuneRun, PretrainConfig, Pretrained,
    DIVERGENCE_FACTOR,
};
