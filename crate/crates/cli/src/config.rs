//! Flat `key = value` experiment configuration.
//!
//! Blank lines are ignored and `#` starts a comment. Every key has a default;
//! a file only needs the keys it changes. Values set later win, so command
//! line flags override the file.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use ether_core::harness::{FinetuneConfig, PretrainConfig, SweepConfig, TaskKind, TaskSpec};
use ether_core::{AdapterConfig, Method};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub threads: usize,
    pub out: Option<PathBuf>,

    pub method: Method,
    pub methods: Vec<Method>,
    pub blocks: usize,
    pub rank: usize,
    pub alpha: Option<f64>,
    pub two_sided: bool,

    pub lr: f64,
    pub lr_grid: Vec<f64>,
    pub lr_units: Vec<(Method, f64)>,
    pub epochs: usize,
    pub batch_size: usize,
    pub cosine: bool,
    pub weight_decay: f64,

    pub task_kind: TaskKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub pretrain_samples: usize,
    pub finetune_samples: usize,
    pub pretrain_seed: u64,
    pub shift_seed: u64,
    pub shift_magnitude: f64,
    pub offset_scale: f64,
    pub teacher_gain: f64,

    pub pretrain_init_seed: u64,
    pub pretrain_lr: f64,
    pub pretrain_momentum: f64,
    pub pretrain_batch_size: usize,
    pub pretrain_max_epochs: usize,
    pub pretrain_threshold: f64,

    pub strengths: Vec<f64>,
    pub probes: usize,
    pub n_grid: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let task = TaskSpec::reference();
        let pre = PretrainConfig::default();
        let ft = FinetuneConfig::new(AdapterConfig::new(Method::EtherPlus), 1.0);
        Self {
            seed: 0,
            threads: 0,
            out: None,
            method: Method::EtherPlus,
            methods: Method::ALL.to_vec(),
            blocks: ft.adapter.blocks,
            rank: ft.adapter.rank,
            alpha: ft.adapter.alpha,
            two_sided: ft.adapter.two_sided,
            lr: ft.lr,
            lr_grid: ether_core::harness::reference_lr_grid(),
            lr_units: Vec::new(),
            epochs: ft.epochs,
            batch_size: ft.batch_size,
            cosine: ft.cosine,
            weight_decay: ft.weight_decay,
            task_kind: task.kind,
            input_dim: task.input_dim,
            hidden_dim: task.hidden_dim,
            output_dim: task.output_dim,
            pretrain_samples: task.pretrain_samples,
            finetune_samples: task.finetune_samples,
            pretrain_seed: task.pretrain_seed,
            shift_seed: task.shift_seed,
            shift_magnitude: task.shift_magnitude,
            offset_scale: task.offset_scale,
            teacher_gain: task.teacher_gain,
            pretrain_init_seed: 0,
            pretrain_lr: pre.lr,
            pretrain_momentum: pre.momentum,
            pretrain_batch_size: pre.batch_size,
            pretrain_max_epochs: pre.max_epochs,
            pretrain_threshold: pre.relative_threshold,
            strengths: (0..=12).map(|i| 0.25 * i as f64).collect(),
            probes: 256,
            n_grid: vec![1, 2, 4, 8, 16],
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value '{value}' for '{key}'"))
}

fn parse_bool(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("invalid boolean '{value}' for '{key}'")),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> std::result::Result<Vec<T>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_method(value: &str) -> std::result::Result<Method, String> {
    Method::from_str(value).map_err(|e| e.to_string())
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Every recognised key.
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "threads",
        "out",
        "method",
        "methods",
        "blocks",
        "rank",
        "alpha",
        "two_sided",
        "lr",
        "lr_grid",
        "lr_units",
        "epochs",
        "batch_size",
        "cosine",
        "weight_decay",
        "task_kind",
        "input_dim",
        "hidden_dim",
        "output_dim",
        "pretrain_samples",
        "finetune_samples",
        "pretrain_seed",
        "shift_seed",
        "shift_magnitude",
        "offset_scale",
        "teacher_gain",
        "pretrain_init_seed",
        "pretrain_lr",
        "pretrain_momentum",
        "pretrain_batch_size",
        "pretrain_max_epochs",
        "pretrain_threshold",
        "strengths",
        "probes",
        "n_grid",
    ];

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "out" => self.out = (!v.is_empty()).then(|| PathBuf::from(v)),
            "method" => self.method = parse_method(v)?,
            "methods" => {
                self.methods = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(parse_method)
                    .collect::<std::result::Result<_, _>>()?
            }
            "blocks" => self.blocks = parse(key, v)?,
            "rank" => self.rank = parse(key, v)?,
            "alpha" => {
                self.alpha = match v {
                    "" | "auto" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            "two_sided" => self.two_sided = parse_bool(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "lr_grid" => self.lr_grid = parse_list(key, v)?,
            "lr_units" => {
                self.lr_units = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|item| {
                        let (m, s) = item
                            .split_once(':')
                            .ok_or_else(|| format!("expected method:scale in 'lr_units', got '{item}'"))?;
                        Ok((parse_method(m)?, parse(key, s.trim())?))
                    })
                    .collect::<std::result::Result<_, String>>()?
            }
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "cosine" => self.cosine = parse_bool(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "task_kind" => {
                self.task_kind = match v {
                    "regression" => TaskKind::Regression,
                    "classification" => TaskKind::Classification,
                    _ => return Err(format!("invalid task_kind '{v}' (regression|classification)")),
                }
            }
            "input_dim" => self.input_dim = parse(key, v)?,
            "hidden_dim" => self.hidden_dim = parse(key, v)?,
            "output_dim" => self.output_dim = parse(key, v)?,
            "pretrain_samples" => self.pretrain_samples = parse(key, v)?,
            "finetune_samples" => self.finetune_samples = parse(key, v)?,
            "pretrain_seed" => self.pretrain_seed = parse(key, v)?,
            "shift_seed" => self.shift_seed = parse(key, v)?,
            "shift_magnitude" => self.shift_magnitude = parse(key, v)?,
            "offset_scale" => self.offset_scale = parse(key, v)?,
            "teacher_gain" => self.teacher_gain = parse(key, v)?,
            "pretrain_init_seed" => self.pretrain_init_seed = parse(key, v)?,
            "pretrain_lr" => self.pretrain_lr = parse(key, v)?,
            "pretrain_momentum" => self.pretrain_momentum = parse(key, v)?,
            "pretrain_batch_size" => self.pretrain_batch_size = parse(key, v)?,
            "pretrain_max_epochs" => self.pretrain_max_epochs = parse(key, v)?,
            "pretrain_threshold" => self.pretrain_threshold = parse(key, v)?,
            "strengths" => self.strengths = parse_list(key, v)?,
            "probes" => self.probes = parse(key, v)?,
            "n_grid" => self.n_grid = parse_list(key, v)?,
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    /// Applies a config file's text; `source` names it in error messages.
    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<()> {
        let mut seen: Vec<&str> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{source}:{line_no}: expected 'key = value', got '{line}'")))?;
            let key = key.trim();
            if seen.contains(&key) {
                return Err(CliError::Config(format!("{source}:{line_no}: duplicate key '{key}'")));
            }
            self.set(key, value)
                .map_err(|e| CliError::Config(format!("{source}:{line_no}: {e}")))?;
            seen.push(key);
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// `(key, value)` pairs in [`ExperimentConfig::KEYS`] order; feeding them
    /// back through [`ExperimentConfig::set`] reproduces the config.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let kind = match self.task_kind {
            TaskKind::Regression => "regression",
            TaskKind::Classification => "classification",
        };
        let units: Vec<String> = self.lr_units.iter().map(|(m, s)| format!("{m}:{s}")).collect();
        let values = vec![
            self.seed.to_string(),
            self.threads.to_string(),
            self.out.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            self.method.to_string(),
            join(&self.methods),
            self.blocks.to_string(),
            self.rank.to_string(),
            self.alpha.map_or_else(|| "auto".to_string(), |a| a.to_string()),
            self.two_sided.to_string(),
            self.lr.to_string(),
            join(&self.lr_grid),
            units.join(","),
            self.epochs.to_string(),
            self.batch_size.to_string(),
            self.cosine.to_string(),
            self.weight_decay.to_string(),
            kind.to_string(),
            self.input_dim.to_string(),
            self.hidden_dim.to_string(),
            self.output_dim.to_string(),
            self.pretrain_samples.to_string(),
            self.finetune_samples.to_string(),
            self.pretrain_seed.to_string(),
            self.shift_seed.to_string(),
            self.shift_magnitude.to_string(),
            self.offset_scale.to_string(),
            self.teacher_gain.to_string(),
            self.pretrain_init_seed.to_string(),
            self.pretrain_lr.to_string(),
            self.pretrain_momentum.to_string(),
            self.pretrain_batch_size.to_string(),
            self.pretrain_max_epochs.to_string(),
            self.pretrain_threshold.to_string(),
            join(&self.strengths),
            self.probes.to_string(),
            join(&self.n_grid),
        ];
        Self::KEYS.iter().copied().zip(values).collect()
    }

    /// The effective config as `# key = value` lines.
    pub fn echo(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("# {k} = {v}\n"))
            .collect()
    }

    pub fn task_spec(&self) -> TaskSpec {
        TaskSpec {
            kind: self.task_kind,
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            output_dim: self.output_dim,
            pretrain_samples: self.pretrain_samples,
            finetune_samples: self.finetune_samples,
            pretrain_seed: self.pretrain_seed,
            shift_seed: self.shift_seed,
            shift_magnitude: self.shift_magnitude,
            offset_scale: self.offset_scale,
            teacher_gain: self.teacher_gain,
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            lr: self.pretrain_lr,
            momentum: self.pretrain_momentum,
            batch_size: self.pretrain_batch_size,
            max_epochs: self.pretrain_max_epochs,
            relative_threshold: self.pretrain_threshold,
        }
    }

    pub fn adapter(&self, method: Method) -> AdapterConfig {
        AdapterConfig {
            method,
            blocks: self.blocks,
            rank: self.rank,
            two_sided: self.two_sided,
            alpha: self.alpha,
        }
    }

    pub fn finetune_config(&self, method: Method) -> FinetuneConfig {
        FinetuneConfig {
            adapter: self.adapter(method),
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            cosine: self.cosine,
            weight_decay: self.weight_decay,
        }
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            methods: self.methods.clone(),
            lr_grid: self.lr_grid.clone(),
            unit_scales: self.lr_units.clone(),
            finetune: self.finetune_config(self.method),
            seeds: vec![self.seed],
            threads: self.threads,
        }
    }

    /// Checks that do not need the data: positivity and ranges.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.methods.is_empty() {
            return bad("'methods' must list at least one method");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.pretrain_batch_size == 0 {
            return bad("'epochs', 'batch_size' and 'pretrain_batch_size' must be positive");
        }
        if self.blocks == 0 || self.rank == 0 {
            return bad("'blocks' and 'rank' must be positive");
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("'lr' must be finite and non-negative");
        }
        if self.probes == 0 {
            return bad("'probes' must be positive");
        }
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return bad("'n_grid' must list positive block counts");
        }
        if self.shift_magnitude < 0.0 || !self.shift_magnitude.is_finite() {
            return bad("'shift_magnitude' must be finite and non-negative");
        }
        Ok(())
    }
}
