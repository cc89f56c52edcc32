use std::path::Path;
use std::process::Command;

use ether_cli::checkpoint::{decode, encode};
use ether_cli::commands::{adapter_variants, model_from_map, model_to_map, ABLATE_HEADER, PERTURB_HEADER, SWEEP_HEADER};
use ether_cli::{load_checkpoint, CheckpointError, TensorMap, EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_VERIFY};
use ether_core::harness::{BaseModel, ToyModel};
use ether_core::{Prng, Tensor};
use proptest::prelude::*;

const SMALL: &str = "\
# small, fast task
input_dim = 8
hidden_dim = 12
output_dim = 4
pretrain_samples = 256
finetune_samples = 128
shift_magnitude = 0.1
pretrain_threshold = 0.05
epochs = 2
batch_size = 32
lr_grid = 1e-3, 1e-2, 1e-1, 1, 10
strengths = 0, 0.5, 1
probes = 16
n_grid = 1, 2, 4
";

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("exp.cfg");
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("ether").chain(args.iter().copied());
    let code = ether_cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

/// Splits a CSV file into its `#` preamble and data lines.
fn split(text: &str) -> (Vec<&str>, Vec<&str>) {
    let (pre, body): (Vec<&str>, Vec<&str>) = text.lines().partition(|l| l.starts_with('#'));
    (pre, body)
}

#[test]
fn sweep_csv_schema_and_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("s.csv");
    let (code, stdout, stderr) = run(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "4"]);
    assert_eq!(code, EXIT_OK, "{stderr}");
    assert!(stdout.contains("best_lr"));
    let text = std::fs::read_to_string(&out).unwrap();
    let (pre, body) = split(&text);
    assert!(pre.contains(&"# seed = 4"), "flag must override and be echoed");
    assert!(pre.contains(&"# epochs = 2"));
    assert_eq!(body[0], SWEEP_HEADER.join(","));
    assert_eq!(body.len() - 1, 5 * 5 * 2);
    assert!(text.starts_with('#'));
    for line in &body[1..] {
        assert_eq!(line.split(',').count(), SWEEP_HEADER.len(), "{line}");
    }
}

#[test]
fn perturb_csv_marks_inapplicable_points() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("p.csv");
    let (code, _, stderr) = run(&["perturb", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{stderr}");
    let text = std::fs::read_to_string(&out).unwrap();
    let (_, body) = split(&text);
    assert_eq!(body[0], PERTURB_HEADER.join(","));
    let ether: Vec<&str> = body.iter().copied().filter(|l| l.starts_with("ether,")).collect();
    // Three grid points plus the single reachable strength 2.
    assert_eq!(ether.len(), 4);
    assert!(ether.contains(&"ether,0,NA"));
    assert!(ether.iter().any(|l| l.starts_with("ether,2,") && !l.ends_with("NA")));
    let oft0 = body.iter().find(|l| l.starts_with("oft,0,")).unwrap();
    assert!(oft0[6..].parse::<f64>().unwrap() <= 1e-12, "{oft0}");
}

#[test]
fn ablate_csv_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("a.csv");
    let (code, _, stderr) = run(&["ablate", "--config", &cfg, "--out", out.to_str().unwrap(), "--method", "oft"]);
    assert_eq!(code, EXIT_OK, "{stderr}");
    let text = std::fs::read_to_string(&out).unwrap();
    let (_, body) = split(&text);
    assert_eq!(body[0], ABLATE_HEADER.join(","));
    assert_eq!(body.len() - 1, 3 + 2);
    assert!(body[1].starts_with("oft,1,"));
    assert!(body[4].starts_with("ether_plus,1,true,"));
    assert!(body[5].starts_with("ether_plus,1,false,"));
}

#[test]
fn train_writes_a_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("m.etck");
    let (code, stdout, stderr) = run(&[
        "train", "--config", &cfg, "--out", out.to_str().unwrap(), "--method", "ether+", "--two-sided", "false",
        "--lr", "0.5",
    ]);
    assert_eq!(code, EXIT_OK, "{stderr}");
    assert!(stdout.contains("# two_sided = false"));
    let map = load_checkpoint(&out).unwrap();
    assert!(map.contains_key("layer0.weight") && map.contains_key("layer1.bias"));
    let mut config = ether_cli::ExperimentConfig::default();
    config.apply_text(SMALL, "small").unwrap();
    config.set("two_sided", "false").unwrap();
    let model = model_from_map(&map, &config.adapter(ether_core::Method::EtherPlus)).unwrap();
    assert_eq!(encode(&model_to_map(&model)).unwrap(), std::fs::read(&out).unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "seed = 1\nlearnin_rate = 2\n");
    let (code, _, err) = run(&["sweep", "--config", &bad]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(err.contains(":2: unknown key 'learnin_rate'"), "{err}");

    assert_eq!(run(&["sweep", "--method", "adam"]).0, EXIT_CONFIG);
    assert_eq!(run(&["sweep", "--seed", "minus-one"]).0, EXIT_CONFIG);
    assert_eq!(run(&["frobnicate"]).0, EXIT_CONFIG);
    assert_eq!(run(&["--help"]).0, EXIT_OK);

    let missing = dir.path().join("nope.cfg");
    assert_eq!(run(&["sweep", "--config", missing.to_str().unwrap()]).0, EXIT_IO);

    let cfg = write_config(dir.path(), SMALL);
    let unwritable = dir.path().join("no_such_dir").join("x.csv");
    let (code, _, err) = run(&["ablate", "--config", &cfg, "--out", unwritable.to_str().unwrap()]);
    assert_eq!(code, EXIT_IO, "{err}");

    let (code, _, err) = run(&["ablate", "--config", &cfg, "--set", "n_grid=1,3"]);
    assert_eq!(code, EXIT_CONFIG, "{err}");
}

#[test]
fn verify_passes_and_fault_injection_fails() {
    let (code, out, _) = run(&["verify"]);
    assert_eq!(code, EXIT_OK, "{out}");
    for suite in ["tensor-core", "adapters", "metrics", "harness"] {
        assert!(out.contains(&format!("PASS {suite} (")), "{out}");
    }
    let (code, out, _) = run(&["verify", "--inject-fault", "skip-normalization"]);
    assert_eq!(code, EXIT_VERIFY);
    assert!(out.contains("FAIL adapters/householder distance equals two"), "{out}");
    assert!(out.contains("FAIL adapters ("), "{out}");
    assert_eq!(run(&["verify", "--suite", "bogus"]).0, EXIT_CONFIG);
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_ether");
    let status = Command::new(bin).args(["verify", "--suite", "metrics"]).output().unwrap();
    assert_eq!(status.status.code(), Some(EXIT_OK));
    let status = Command::new(bin)
        .args(["verify", "--suite", "adapters", "--inject-fault", "skip-normalization"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(EXIT_VERIFY));
    let status = Command::new(bin).args(["sweep", "--lr", "fast"]).output().unwrap();
    assert_eq!(status.status.code(), Some(EXIT_CONFIG));
}

fn trained_like(config: &ether_core::AdapterConfig, seed: u64) -> ToyModel {
    let mut rng = Prng::new(seed, 0);
    let base = BaseModel::random(&[8, 12, 4], 1.0, &mut rng).unwrap();
    let mut model = ToyModel::attach(&base, config, &mut rng).unwrap();
    for l in &mut model.layers {
        for p in l.adapter.params_mut() {
            let noise = rng.normal_tensor(p.shape(), 0.1);
            p.axpy(1.0, &noise).unwrap();
        }
    }
    model
}

#[test]
fn checkpoint_round_trip_for_every_variant() {
    for (i, config) in adapter_variants().iter().enumerate() {
        let model = trained_like(config, i as u64);
        let bytes = encode(&model_to_map(&model)).unwrap();
        let back = model_from_map(&decode(&bytes).unwrap(), config).unwrap();
        assert_eq!(back, model, "{config:?}");
        assert_eq!(encode(&model_to_map(&back)).unwrap(), bytes);
    }
}

#[test]
fn checkpoint_with_foreign_tensors_is_rejected() {
    let config = ether_core::AdapterConfig::new(ether_core::Method::Oft);
    let mut map = model_to_map(&trained_like(&config, 1));
    map.insert("stray".into(), Tensor::scalar(1.0));
    assert!(model_from_map(&map, &config).is_err());
}

fn small_map() -> TensorMap {
    let mut m = TensorMap::new();
    m.insert("a".into(), Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    m.insert("bb".into(), Tensor::vector(vec![-1.0; 3]));
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let _ = decode(&bytes);
        let mut framed = b"ETCK\x01\x00\x00\x00".to_vec();
        framed.extend_from_slice(&bytes);
        let _ = decode(&framed);
    }

    #[test]
    fn truncation_is_reported_with_an_offset(cut in 0usize..70) {
        let bytes = encode(&small_map()).unwrap();
        prop_assume!(cut < bytes.len());
        match decode(&bytes[..cut]) {
            Err(CheckpointError::Format { offset, .. }) => prop_assert!(offset <= cut),
            other => prop_assert!(false, "cut {cut}: {other:?}"),
        }
    }

    #[test]
    fn single_byte_corruption_is_detected_or_harmless(pos in 0usize..70, val in any::<u8>()) {
        let bytes = encode(&small_map()).unwrap();
        prop_assume!(pos < bytes.len());
        let mut bad = bytes.clone();
        bad[pos] = val;
        // Payload bytes may change values without breaking the structure;
        // anything else must either error or decode to the same layout.
        if let Ok(m) = decode(&bad) {
            prop_assert_eq!(encode(&m).unwrap(), bad);
        }
    }

    #[test]
    fn random_maps_round_trip(
        shapes in prop::collection::vec(prop::collection::vec(0usize..4, 0..3), 0..5),
        seed in any::<u64>(),
    ) {
        let mut rng = Prng::new(seed, 0);
        let mut m = TensorMap::new();
        for (i, s) in shapes.iter().enumerate() {
            m.insert(format!("t{i}"), rng.normal_tensor(s, 1.0));
        }
        let bytes = encode(&m).unwrap();
        prop_assert_eq!(encode(&decode(&bytes).unwrap()).unwrap(), bytes);
    }
}
