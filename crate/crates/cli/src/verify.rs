//! Built-in self-checks grouped into suites.
//!
//! Each check returns `Err(reason)` on failure. A fault can be injected to
//! confirm that the checks are able to fail.

use std::fmt;
use std::str::FromStr;

use ether_core::adapters::factors::distance_to_identity;
use ether_core::adapters::{
    block_parallel_apply, build_block_diagonal, cayley, ether_plus_factor, householder, init_adapter, linear_forward,
};
use ether_core::gradcheck;
use ether_core::harness::{finetune, lr_sweep, make_pretrained, FinetuneConfig, PretrainConfig, SweepConfig, TaskSpec};
use ether_core::linalg::{determinant, inverse};
use ether_core::metrics::{hyperspherical_energy, op_count, orthogonality_residual, param_count, transformation_distance};
use ether_core::{AdaptedLinear, AdapterConfig, Method, Prng, Side, Tape, Tensor};

pub const SUITES: [&str; 4] = ["tensor-core", "adapters", "metrics", "harness"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Build reflections from the raw normal instead of the unit normal.
    SkipNormalization,
}

impl FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Fault::None),
            "skip-normalization" => Ok(Fault::SkipNormalization),
            _ => Err(format!("unknown fault '{s}' (none|skip-normalization)")),
        }
    }
}

type Check = std::result::Result<(), String>;
type CheckFn = fn(Fault) -> Check;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn core<T>(r: ether_core::Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

#[derive(Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub outcome: Check,
}

#[derive(Debug)]
pub struct SuiteResult {
    pub name: &'static str,
    pub checks: Vec<CheckResult>,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.outcome.is_ok())
    }
}

#[derive(Debug)]
pub struct VerifyReport {
    pub suites: Vec<SuiteResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteResult::passed)
    }

    /// `suite/check` names of every failed check.
    pub fn failures(&self) -> Vec<String> {
        self.suites
            .iter()
            .flat_map(|s| {
                s.checks
                    .iter()
                    .filter(|c| c.outcome.is_err())
                    .map(move |c| format!("{}/{}", s.name, c.name))
            })
            .collect()
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.suites {
            for c in &s.checks {
                match &c.outcome {
                    Ok(()) => writeln!(f, "  PASS {}/{}", s.name, c.name)?,
                    Err(why) => writeln!(f, "  FAIL {}/{}: {why}", s.name, c.name)?,
                }
            }
        }
        for s in &self.suites {
            let ok = s.checks.iter().filter(|c| c.outcome.is_ok()).count();
            let verdict = if s.passed() { "PASS" } else { "FAIL" };
            writeln!(f, "{verdict} {} ({ok}/{} checks)", s.name, s.checks.len())?;
        }
        if self.passed() {
            writeln!(f, "all suites passed")
        } else {
            writeln!(f, "failed checks: {}", self.failures().join(", "))
        }
    }
}

/// Runs the named suites (all of them when `only` is empty).
pub fn run(only: &[String], fault: Fault) -> std::result::Result<VerifyReport, String> {
    for name in only {
        if !SUITES.contains(&name.as_str()) {
            return Err(format!("unknown suite '{name}' (expected one of {})", SUITES.join(", ")));
        }
    }
    let selected = |n: &str| only.is_empty() || only.iter().any(|o| o == n);
    let mut suites = Vec::new();
    for name in SUITES {
        if !selected(name) {
            continue;
        }
        let checks: Vec<(&'static str, CheckFn)> = match name {
            "tensor-core" => vec![
                ("matmul hand values", matmul_hand_values),
                ("inverse and determinant", inverse_and_determinant),
                ("tape gradients match finite differences", tape_gradients),
                ("backward rejects non-scalar loss", non_scalar_backward),
            ],
            "adapters" => vec![
                ("householder distance equals two", householder_distance),
                ("householder is an orthogonal reflection", householder_orthogonal),
                ("ether_plus distance is bounded", ether_plus_bound),
                ("cayley map is a rotation", cayley_rotation),
                ("block-parallel equals dense", block_equivalence),
                ("merged forward equals adapted forward", merge_equivalence),
                ("adapter gradients match finite differences", adapter_gradients),
            ],
            "metrics" => vec![
                ("parameter counts", parameter_counts),
                ("operation counts scale as 1/n", operation_counts),
                ("energy invariant under rotation", energy_rotation),
                ("energy preserved by orthogonal adapters", energy_preserved),
                ("ether distance is 2 sqrt(n)", ether_distance),
            ],
            _ => vec![
                ("finetuning leaves the base untouched", base_untouched),
                ("sweep is deterministic", sweep_deterministic),
            ],
        };
        let checks = checks
            .into_iter()
            .map(|(n, f)| CheckResult { name: n, outcome: f(fault) })
            .collect();
        suites.push(SuiteResult { name, checks });
    }
    Ok(VerifyReport { suites })
}

/// The reflection under test; the fault drops the normalisation of `u`.
fn reflection(u: &Tensor, fault: Fault) -> ether_core::Result<Tensor> {
    match fault {
        Fault::None => householder(u),
        Fault::SkipNormalization => {
            let d = u.numel();
            let mut h = Tensor::identity(d);
            for i in 0..d {
                for j in 0..d {
                    h.set(i, j, h.at(i, j) - 2.0 * u.data()[i] * u.data()[j]);
                }
            }
            Ok(h)
        }
    }
}

fn matmul_hand_values(_: Fault) -> Check {
    let a = core(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]))?;
    let b = core(Tensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]))?;
    let c = core(a.matmul(&b))?;
    ensure(c.data() == [19.0, 22.0, 43.0, 50.0], || format!("got {:?}", c.data()))
}

fn inverse_and_determinant(_: Fault) -> Check {
    let mut rng = Prng::new(1, 0);
    let a = core(rng.normal_tensor(&[6, 6], 1.0).add(&Tensor::identity(6).scale(6.0)))?;
    let err = core(core(a.matmul(&core(inverse(&a))?))?.max_abs_diff(&Tensor::identity(6)))?;
    ensure(err <= 1e-10, || format!("A·A⁻¹ off identity by {err:.3e}"))?;
    let diag = core(Tensor::from_rows(&[vec![2.0, 0.0, 0.0], vec![0.0, 3.0, 0.0], vec![0.0, 0.0, -4.0]]))?;
    let det = core(determinant(&diag))?;
    ensure((det + 24.0).abs() <= 1e-12, || format!("det = {det}"))
}

fn tape_gradients(_: Fault) -> Check {
    let mut rng = Prng::new(2, 0);
    let x = rng.normal_tensor(&[3, 4], 1.0);
    let w = rng.normal_tensor(&[4, 2], 1.0);
    let f = |tape: &mut Tape, x, w| -> ether_core::Result<_> {
        let y = tape.matmul(x, w)?;
        let t = tape.tanh(y);
        let sq = tape.mul(t, t)?;
        Ok(tape.sum(sq))
    };
    let mut tape = Tape::new();
    let (xv, wv) = (tape.leaf(x.clone()), tape.leaf(w.clone()));
    let out = core(f(&mut tape, xv, wv))?;
    let grads = core(tape.backward(out))?;
    let analytic = [grads.get(xv), grads.get(wv)];
    let report = core(gradcheck::check(&[x, w], &analytic, 1e-6, |p| {
        let mut t = Tape::new();
        let (a, b) = (t.constant(p[0].clone()), t.constant(p[1].clone()));
        let o = f(&mut t, a, b)?;
        Ok(t.value(o).item())
    }))?;
    ensure(report.passes(1e-4), || format!("worst relative error {:.3e}", report.max_rel_error))
}

fn non_scalar_backward(_: Fault) -> Check {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    ensure(tape.backward(x).is_err(), || "vector loss was accepted".into())
}

fn random_units(rng: &mut Prng, d: usize, count: usize) -> Vec<Tensor> {
    // Raw Gaussian normals; the reflection is responsible for normalising.
    (0..count).map(|_| rng.normal_tensor(&[d], 1.0)).collect()
}

fn householder_distance(fault: Fault) -> Check {
    let mut rng = Prng::new(3, 0);
    let mut worst = 0.0f64;
    for d in [2, 8, 64] {
        for u in random_units(&mut rng, d, 334) {
            let h = core(reflection(&u, fault))?;
            worst = worst.max((core(distance_to_identity(&h))? - 2.0).abs());
        }
    }
    ensure(worst <= 1e-10, || format!("‖H − I‖_F deviates from 2 by up to {worst:.3e}"))
}

fn householder_orthogonal(fault: Fault) -> Check {
    let mut rng = Prng::new(4, 0);
    for d in [2, 5, 8] {
        for u in random_units(&mut rng, d, 20) {
            let h = core(reflection(&u, fault))?;
            let res = core(orthogonality_residual(&h))?;
            let det = core(determinant(&h))?;
            ensure(res <= 1e-10 && (det + 1.0).abs() <= 1e-8, || {
                format!("d = {d}: residual {res:.3e}, det {det}")
            })?;
        }
    }
    Ok(())
}

fn ether_plus_bound(_: Fault) -> Check {
    let mut rng = Prng::new(5, 0);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let u = rng.normal_tensor(&[16], 1.0);
        let v = rng.normal_tensor(&[16], 1.0);
        worst = worst.max(core(distance_to_identity(&core(ether_plus_factor(&u, &v))?))?);
        let same = core(distance_to_identity(&core(ether_plus_factor(&u, &u))?))?;
        ensure(same <= 1e-12, || format!("u = v gives distance {same:.3e}"))?;
    }
    ensure(worst <= 2.0 + 1e-10, || format!("max distance {worst}"))
}

fn cayley_rotation(_: Fault) -> Check {
    let mut rng = Prng::new(6, 0);
    for d in 1..=8 {
        let q: Tensor = core(cayley(&rng.normal_tensor(&[d, d], 1.0)))?;
        let res = core(orthogonality_residual(&q))?;
        let det = core(determinant(&q))?;
        ensure(res <= 1e-9 && (det - 1.0).abs() <= 1e-8, || {
            format!("d = {d}: residual {res:.3e}, det {det}")
        })?;
    }
    Ok(())
}

fn block_equivalence(_: Fault) -> Check {
    let mut rng = Prng::new(7, 0);
    for (d, f) in [(8, 12), (32, 48)] {
        for n in [1, 2, 4, 8] {
            let blocks: Vec<Tensor> = (0..n).map(|_| rng.normal_tensor(&[d / n, d / n], 1.0)).collect();
            let w = rng.normal_tensor(&[d, f], 1.0);
            let dense = core(core(build_block_diagonal(&blocks))?.matmul(&w))?;
            let fast = core(block_parallel_apply(&blocks, &w, Side::Left))?;
            let err = core(fast.max_abs_diff(&dense))?;
            ensure(err <= 1e-12, || format!("({d},{f}) n = {n}: {err:.3e}"))?;
        }
    }
    Ok(())
}

fn perturbed_layer(config: &AdapterConfig, d: usize, f: usize, rng: &mut Prng) -> ether_core::Result<AdaptedLinear> {
    let mut a = init_adapter(config, d, f, rng)?;
    for p in a.params_mut() {
        let noise = rng.normal_tensor(p.shape(), 0.3);
        p.axpy(1.0, &noise)?;
    }
    AdaptedLinear::new(rng.normal_tensor(&[d, f], 1.0), rng.normal_tensor(&[f], 1.0), a)
}

fn merge_equivalence(_: Fault) -> Check {
    let mut rng = Prng::new(8, 0);
    for method in Method::ALL {
        let layer = core(perturbed_layer(&AdapterConfig::new(method).with_blocks(2), 8, 12, &mut rng))?;
        let x = rng.normal_tensor(&[20, 8], 1.0);
        let merged = core(linear_forward(&x, &core(layer.merge())?, &layer.bias))?;
        let err = core(core(layer.forward(&x))?.max_abs_diff(&merged))?;
        ensure(err <= 1e-12, || format!("{method}: {err:.3e}"))?;
    }
    Ok(())
}

fn adapter_gradients(_: Fault) -> Check {
    let mut rng = Prng::new(9, 0);
    let x = rng.normal_tensor(&[5, 6], 1.0);
    let target = rng.normal_tensor(&[5, 4], 1.0);
    for method in Method::ALL {
        let layer = core(perturbed_layer(&AdapterConfig::new(method).with_blocks(2).with_rank(2), 6, 4, &mut rng))?;
        let loss_of = |l: &AdaptedLinear| -> ether_core::Result<f64> {
            let y = l.forward(&x)?;
            ether_core::harness::mse(&y, &target)
        };
        let mut tape = Tape::new();
        let params = layer.register(&mut tape);
        let xv = tape.constant(x.clone());
        let out = core(layer.forward_on(&mut tape, xv, &params))?;
        let tv = tape.constant(target.clone());
        let loss = core(tape.mse(out, tv))?;
        let grads = core(tape.backward(loss))?;
        let analytic: Vec<Tensor> = params.iter().map(|&v| grads.get(v)).collect();
        let values: Vec<Tensor> = layer.adapter.params().into_iter().cloned().collect();
        let report = core(gradcheck::check(&values, &analytic, 1e-6, |p| {
            let mut probe = layer.clone();
            for (slot, v) in probe.adapter.params_mut().into_iter().zip(p) {
                *slot = v.clone();
            }
            loss_of(&probe)
        }))?;
        ensure(report.passes(1e-4), || {
            format!("{method}: worst relative error {:.3e}", report.max_rel_error)
        })?;
    }
    Ok(())
}

fn parameter_counts(_: Fault) -> Check {
    let (d, f) = (64, 48);
    let table = [
        (AdapterConfig::new(Method::Ether), 64),
        (AdapterConfig::new(Method::EtherPlus), 2 * 64 + 2 * 48),
        (AdapterConfig::new(Method::EtherPlus).with_two_sided(false), 128),
        (AdapterConfig::new(Method::Oft).with_blocks(4), 64 * 64 / 4),
        (AdapterConfig::new(Method::Lora).with_rank(8), 8 * (64 + 48)),
    ];
    for (config, expected) in table {
        let got = core(param_count(&config, d, f))?;
        ensure(got == expected, || format!("{config:?}: {got} != {expected}"))?;
    }
    Ok(())
}

fn operation_counts(_: Fault) -> Check {
    let base = core(op_count(64, 48, 1))?;
    ensure(base.multiplications == 64 * 64 * 48, || format!("{base:?}"))?;
    for n in [2, 4, 8] {
        let c = core(op_count(64, 48, n))?;
        ensure(c.multiplications * n as u64 == base.multiplications, || format!("n = {n}: {c:?}"))?;
        ensure(c.additions * n as u64 == base.additions, || format!("n = {n}: {c:?}"))?;
    }
    Ok(())
}

fn energy_rotation(_: Fault) -> Check {
    let mut rng = Prng::new(10, 0);
    let w: Tensor = rng.normal_tensor(&[8, 10], 1.0);
    let q: Tensor = core(cayley(&rng.normal_tensor(&[8, 8], 1.0)))?;
    let a = core(hyperspherical_energy(&w))?;
    let b = core(hyperspherical_energy(&core(q.matmul(&w))?))?;
    ensure((a - b).abs() <= 1e-9 * a, || format!("{a} vs {b}"))
}

fn energy_preserved(_: Fault) -> Check {
    let mut rng = Prng::new(11, 0);
    for method in [Method::Ether, Method::Oft] {
        let layer = core(perturbed_layer(&AdapterConfig::new(method).with_blocks(2), 8, 12, &mut rng))?;
        let before = core(hyperspherical_energy(&layer.weight))?;
        let after = core(hyperspherical_energy(&core(layer.merge())?))?;
        ensure((after - before).abs() <= 1e-8, || format!("{method}: ΔHE = {:.3e}", after - before))?;
    }
    Ok(())
}

fn ether_distance(_: Fault) -> Check {
    let mut rng = Prng::new(12, 0);
    for n in [1, 2, 4] {
        let layer = core(perturbed_layer(&AdapterConfig::new(Method::Ether).with_blocks(n), 8, 4, &mut rng))?;
        let d = core(transformation_distance(&layer.adapter))?.total();
        let expected = 2.0 * (n as f64).sqrt();
        ensure((d - expected).abs() <= 1e-10, || format!("n = {n}: {d} vs {expected}"))?;
    }
    Ok(())
}

fn tiny_task() -> ether_core::Result<(ether_core::harness::Task, ether_core::harness::Pretrained)> {
    let spec = TaskSpec {
        input_dim: 8,
        hidden_dim: 12,
        output_dim: 4,
        pretrain_samples: 256,
        finetune_samples: 128,
        shift_magnitude: 0.1,
        ..TaskSpec::reference()
    };
    let task = spec.build()?;
    let config = PretrainConfig {
        relative_threshold: 0.05,
        ..PretrainConfig::default()
    };
    let pre = make_pretrained(&task, &spec.dims(), &config, 0)?;
    Ok((task, pre))
}

fn quick(method: Method, lr: f64) -> FinetuneConfig {
    FinetuneConfig {
        epochs: 3,
        batch_size: 32,
        ..FinetuneConfig::new(AdapterConfig::new(method), lr)
    }
}

fn base_untouched(_: Fault) -> Check {
    let (task, pre) = core(tiny_task())?;
    for method in Method::ALL {
        let run = core(finetune(&pre.model, &task.finetune, &quick(method, 1.0), &mut Prng::new(13, 0)))?;
        ensure(run.base_unchanged, || format!("{method} modified the base weights"))?;
        if method.is_bounded() {
            let worst = run.epochs.iter().flat_map(|e| e.per_factor.iter().copied()).fold(0.0, f64::max);
            ensure(worst <= 2.0 + 1e-10, || format!("{method}: factor distance {worst}"))?;
        }
    }
    Ok(())
}

fn sweep_deterministic(_: Fault) -> Check {
    let (task, pre) = core(tiny_task())?;
    let config = SweepConfig {
        methods: Method::ALL.to_vec(),
        lr_grid: vec![1e-3, 1e-1, 1e1],
        unit_scales: Vec::new(),
        finetune: quick(Method::Ether, 1.0),
        seeds: vec![0],
        threads: 0,
    };
    let a = core(lr_sweep(&pre.model, &task.finetune, &config))?;
    let b = core(lr_sweep(&pre.model, &task.finetune, &SweepConfig { threads: 1, ..config }))?;
    ensure(format!("{a:?}") == format!("{b:?}"), || "two runs differ".into())
}
