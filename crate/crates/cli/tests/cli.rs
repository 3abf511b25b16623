use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tcur_core::{count_params, read_checkpoint, Group, Payload, PayloadKind, StackingConfig};

fn tcur(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tcur"))
        .args(args)
        .output()
        .expect("spawn tcur")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn generate_decompose_reconstruct_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (raw, fac, rec) = (dir.path().join("w.tcur"), dir.path().join("f.tcur"), dir.path().join("r.tcur"));

    let g = json(&tcur(&["generate", "--dims", "10,9,5", "--tubal-rank", "3", "--seed", "7", "--output", p(&raw)]));
    assert_eq!(g["seed"], 7);

    let d = json(&tcur(&["decompose", "--input", p(&raw), "--rank", "3", "--output", p(&fac)]));
    assert_eq!(d["rank"], 3);
    assert_eq!(d["rows"].as_array().unwrap().len(), 3);
    assert!(d["rel_error"].as_f64().unwrap() <= 1e-8);
    assert_eq!(read_checkpoint(&fac).unwrap().payload.kind(), PayloadKind::TcurFactors);

    let r = json(&tcur(&[
        "reconstruct", "--input", p(&fac), "--output", p(&rec), "--reference", p(&raw),
    ]));
    assert!(r["rel_error"].as_f64().unwrap() <= 1e-8);
    let Payload::RawTensor(t) = read_checkpoint(&rec).unwrap().payload else {
        panic!("expected a raw tensor");
    };
    assert_eq!(t.dims(), (10, 9, 5));
}

#[test]
fn rank_beyond_dims_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("w.tcur");
    json(&tcur(&["generate", "--dims", "4,6,2", "--output", p(&raw)]));
    let out = tcur(&["decompose", "--input", p(&raw), "--rank", "5", "--output", p(&dir.path().join("f"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("out of range"));
    assert!(!dir.path().join("f").exists());
}

#[test]
fn io_and_corruption_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = tcur(&["decompose", "--input", "/nonexistent/w.tcur", "--rank", "1", "--output", "x"]);
    assert_eq!(missing.status.code(), Some(2));

    let raw = dir.path().join("w.tcur");
    json(&tcur(&["generate", "--dims", "3,3,2", "--output", p(&raw)]));
    let mut bytes = std::fs::read(&raw).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    std::fs::write(&raw, bytes).unwrap();
    let out = tcur(&["decompose", "--input", p(&raw), "--rank", "1", "--output", p(&dir.path().join("f"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("corrupt"));
}

#[test]
fn wrong_payload_kind_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("w.tcur");
    json(&tcur(&["generate", "--dims", "3,3,2", "--output", p(&raw)]));
    let out = tcur(&["reconstruct", "--input", p(&raw), "--output", p(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn invalid_arguments_exit_1() {
    assert_eq!(tcur(&["report", "--dims", "4,4"]).status.code(), Some(1));
    assert_eq!(tcur(&["report", "--format", "xml"]).status.code(), Some(1));
    assert_eq!(tcur(&["verify", "--inject-fault", "nonsense"]).status.code(), Some(1));
    assert_eq!(tcur(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(tcur(&["--help"]).status.code(), Some(0));
}

#[test]
fn report_has_one_record_per_method_with_consistent_counts() {
    // dims match the self-attention stack of a 2-layer, d = 4 model
    let cfg = StackingConfig::new(4, 2, 1).unwrap();
    let (n1, n2, n3) = cfg.group_dims(Group::SelfAttention);
    let dims = format!("{n1},{n2},{n3}");
    let rep = json(&tcur(&["report", "--dims", &dims, "--rank", "2", "--seed", "3", "--steps", "2000"]));
    assert_eq!(rep["seed"], 3);
    let records = rep["records"].as_array().unwrap();
    let methods: Vec<&str> = records.iter().map(|r| r["method"].as_str().unwrap()).collect();
    assert_eq!(methods, ["full", "matrix_cur", "tcur"]);

    let sa = &count_params(&cfg, 2).groups[0];
    assert_eq!(records[2]["params"], sa.learnable);
    assert_eq!(records[1]["params"], sa.learnable);
    assert_eq!(records[0]["params"], n1 * n2 * n3);
    for r in records {
        for key in ["params", "final_loss", "rel_error", "wall_ms"] {
            assert!(r[key].as_f64().unwrap() >= 0.0, "{key} negative in {r}");
        }
    }
    assert!(records[2]["final_loss"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn equal_seeds_give_identical_reports() {
    for fmt in ["json", "csv"] {
        let args = ["report", "--seed", "11", "--plant-mode", "out-of-span", "--steps", "300", "--omit-timing", "--format", fmt];
        let (a, b) = (tcur(&args), tcur(&args));
        assert!(a.status.success());
        assert_eq!(a.stdout, b.stdout, "{fmt} output differs between runs");
    }
    let a = tcur(&["finetune", "--seed", "5", "--steps", "50"]);
    let b = tcur(&["finetune", "--seed", "5", "--steps", "50"]);
    assert_eq!(a.stdout, b.stdout);
    let c = tcur(&["finetune", "--seed", "6", "--steps", "50"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn csv_report_is_well_formed() {
    let out = tcur(&["report", "--steps", "100", "--format", "csv", "--omit-timing"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("seed,plant_mode,method,params"));
    assert!(lines[3].contains(",tcur,"));
}

#[test]
fn finetune_writes_adapter_checkpoint_and_echoes_seed() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("a.tcur");
    let report = dir.path().join("h.json");
    let out = tcur(&[
        "finetune", "--dims", "8,8,4", "--rank", "2", "--seed", "9", "--steps", "400", "--tol", "1e-12",
        "--output", p(&ckpt), "--out", p(&report),
    ]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let h: Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(h["seed"], 9);
    assert_eq!(h["learnable_params"], 2 * 2 * 4);
    let ratio = h["history"]["final_loss"].as_f64().unwrap() / h["history"]["initial_loss"].as_f64().unwrap();
    assert!(ratio <= 1e-8);

    let loaded = read_checkpoint(&ckpt).unwrap();
    assert!(loaded.layout.contains("layer-major"));
    let Payload::Adapter(a) = loaded.payload else {
        panic!("expected an adapter");
    };
    assert_eq!(a.rank(), 2);
    assert!(!a.core().is_zero());
}

#[test]
fn adam_finetune_reduces_loss() {
    let h = json(&tcur(&["finetune", "--optimizer", "adam", "--steps", "200", "--dims", "8,8,4", "--rank", "2"]));
    let h = &h["history"];
    assert!(h["final_loss"].as_f64().unwrap() < 0.1 * h["initial_loss"].as_f64().unwrap());
}

#[test]
fn params_defaults_match_unetr() {
    let v = json(&tcur(&["params"]));
    assert_eq!(v["tcur"]["total"], 4608);
    assert_eq!(v["matrix_cur"]["n_matrices"], 72);
    assert!(v["caveat"].as_str().unwrap().contains("decoder"));
}

#[test]
fn verify_report_lists_every_check() {
    let v = json(&tcur(&["verify", "--seed", "4"]));
    assert_eq!(v["seed"], 4);
    let checks = v["checks"].as_array().unwrap();
    assert_eq!(checks.len(), tcur_core::verify::check_names().len());
    assert!(checks.iter().all(|c| c["passed"] == true));
}
