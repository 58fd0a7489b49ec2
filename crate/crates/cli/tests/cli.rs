use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use privest::finite::{exact_objective, FiniteSystem, PolicyTree};
use serde_json::Value;

fn repo(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn smoke() -> String {
    repo("configs/smoke.toml").display().to_string()
}

fn privest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_privest"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> Value {
    let out = privest(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn error_of(out: &Output) -> Value {
    let line = String::from_utf8_lossy(&out.stderr);
    let last = line.lines().last().expect("an error line");
    serde_json::from_str(last).expect("stderr ends with a JSON error")
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect()
}

/// Each subcommand with the arguments it needs besides `--out`.
fn invocations(checkpoint: &str) -> Vec<(&'static str, Vec<String>)> {
    let c = smoke();
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    vec![
        ("simulate", s(&["simulate", "--config", &c])),
        ("simulate-policy", s(&["simulate", "--config", &c, "--checkpoint", checkpoint, "--rollouts", "3"])),
        ("discretize", s(&["discretize", "--config", &c])),
        ("dp-solve", s(&["dp-solve", "--config", &c, "--horizon", "1", "--lambda", "0.3"])),
        ("train", s(&["train", "--config", &c])),
        ("evaluate", s(&["evaluate", "--config", &c, "--checkpoint", checkpoint])),
        ("evaluate-exact", s(&["evaluate", "--mode", "exact", "--config", &c, "--checkpoint", checkpoint, "--horizon", "1"])),
        ("adversary", s(&["adversary", "--config", &c, "--checkpoint", checkpoint])),
        ("adversary-raw", s(&["adversary", "--config", &c])),
        ("baseline", s(&["baseline", "--config", &c])),
        ("baseline-sigma", s(&["baseline", "--config", &c, "--sigma", "0.3"])),
        ("tradeoff", s(&["tradeoff", "--config", &c])),
        ("motivating", s(&["motivating", "--config", &c])),
    ]
}

fn trained_checkpoint(dir: &Path) -> String {
    let out = dir.join("ckpt");
    run_ok(&["train", "--config", &smoke(), "--out", out.to_str().unwrap()]);
    out.join("policy.json").display().to_string()
}

fn run_all(root: &Path, checkpoint: &str) -> BTreeMap<String, (Value, BTreeMap<String, Vec<u8>>)> {
    invocations(checkpoint)
        .into_iter()
        .map(|(name, mut args)| {
            let out = root.join(name);
            args.extend(["--out".to_string(), out.display().to_string()]);
            let refs: Vec<&str> = args.iter().map(String::as_str).collect();
            let summary = run_ok(&refs);
            (name.to_string(), (summary, files(&out)))
        })
        .collect()
}

#[test]
fn every_subcommand_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = trained_checkpoint(tmp.path());
    let a = run_all(&tmp.path().join("a"), &ckpt);
    let b = run_all(&tmp.path().join("b"), &ckpt);
    for (name, (_, fa)) in &a {
        let fb = &b[name].1;
        assert!(!fa.is_empty(), "{name} wrote nothing");
        assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>(), "{name}");
        for (file, bytes) in fa {
            assert!(bytes == &fb[file], "{name}/{file} differs between runs");
        }
    }
}

#[test]
fn seed_flag_changes_sampled_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let read = |seed: &str| {
        let out = tmp.path().join(seed);
        run_ok(&["simulate", "--config", &smoke(), "--seed", seed, "--out", out.to_str().unwrap()]);
        std::fs::read(out.join("trajectories.csv")).unwrap()
    };
    assert_eq!(read("1"), read("1"));
    assert_ne!(read("1"), read("2"));
}

fn schema(name: &str) -> jsonschema::Validator {
    let text = std::fs::read_to_string(repo(&format!("schemas/{name}.schema.json"))).unwrap();
    jsonschema::validator_for(&serde_json::from_str(&text).unwrap()).unwrap()
}

fn assert_valid(schema_name: &str, what: &str, v: &Value) {
    let errors: Vec<String> = schema(schema_name).iter_errors(v).map(|e| format!("{e} at {}", e.instance_path)).collect();
    assert!(errors.is_empty(), "{what} violates {schema_name}: {errors:?}");
}

fn schema_for(file: &str) -> Option<&'static str> {
    Some(match file {
        "finite_system.json" => "finite_system",
        "dp_result.json" => "dp_result",
        "policy.json" => "policy",
        f if f.starts_with("policy_lambda_") => "policy",
        "critics.json" => "critics",
        "train_report.json" => "train_report",
        "evaluation.json" => "evaluation",
        "adversary.json" => "adversary",
        "baseline.json" => "baseline",
        "tradeoff.json" => "tradeoff",
        "motivating.json" => "motivating",
        f if f.ends_with(".json") => panic!("no schema for {f}"),
        _ => return None,
    })
}

fn header(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).lines().next().unwrap_or_default().to_string()
}

fn csv_header_for(file: &str) -> &'static str {
    match file {
        "trajectories.csv" => "rollout,t,y,x,z,z_cell,xhat_cell,xhat_center",
        "train.csv" => "iter,distortion,mi_estimate,objective",
        f if f.starts_with("train_lambda_") => "iter,distortion,mi_estimate,objective",
        "baseline.csv" | "tradeoff.csv" => "method,param,distortion,accuracy",
        "adversary_trajectory.csv" => "t,y,yhat,miss",
        f if f.starts_with("trace_") || f == "motivating_trajectory.csv" => "t,y,x,z,output,yhat,miss",
        f => panic!("unexpected csv {f}"),
    }
}

#[test]
fn outputs_validate_against_shipped_schemas() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = trained_checkpoint(tmp.path());
    for (name, (summary, fs)) in run_all(tmp.path(), &ckpt) {
        assert_valid("summary", &name, &summary);
        for (file, bytes) in fs {
            if file.ends_with(".csv") {
                assert_eq!(header(&bytes), csv_header_for(&file), "{name}/{file}");
            } else if let Some(s) = schema_for(&file) {
                assert_valid(s, &format!("{name}/{file}"), &serde_json::from_slice(&bytes).unwrap());
            }
        }
    }
}

#[test]
fn tradeoff_csv_has_one_row_per_method_and_param() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("t");
    run_ok(&["tradeoff", "--config", &smoke(), "--out", out.to_str().unwrap()]);
    let csv = std::fs::read_to_string(out.join("tradeoff.csv")).unwrap();
    let mut seen = BTreeSet::new();
    let mut methods = BTreeMap::new();
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 4, "{line}");
        assert!(seen.insert((cols[0].to_string(), cols[1].to_string())), "duplicate row {line}");
        *methods.entry(cols[0].to_string()).or_insert(0) += 1;
        let acc: f64 = cols[3].parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
    assert_eq!(methods["privacy"], 2);
    // the configured grid of three plus any accuracy-matched noise levels
    assert!(methods["additive"] >= 3);
}

#[test]
fn dp_solve_reproduces_the_checked_in_result() {
    let tmp = tempfile::tempdir().unwrap();
    let finite = repo("configs/tiny_finite.json");
    let out = tmp.path().join("dp");
    run_ok(&[
        "dp-solve",
        "--finite",
        finite.to_str().unwrap(),
        "--horizon",
        "2",
        "--lambda",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    let got: Value = serde_json::from_str(&std::fs::read_to_string(out.join("dp_result.json")).unwrap()).unwrap();
    let want: Value = serde_json::from_str(&std::fs::read_to_string(repo("configs/tiny_dp_result.json")).unwrap()).unwrap();
    for key in ["value", "distortion", "mi"] {
        let (g, w) = (got[key].as_f64().unwrap(), want[key].as_f64().unwrap());
        assert!((g - w).abs() <= 1e-3, "{key}: {g} vs {w}");
    }
    let nodes = |v: &Value| v["policy_tree"].as_array().unwrap().clone();
    assert_eq!(nodes(&got).len(), nodes(&want).len());
    for (a, b) in nodes(&got).iter().zip(&nodes(&want)) {
        assert_eq!(a["xhat_prefix"], b["xhat_prefix"]);
        for (da, db) in a["decisions"].as_array().unwrap().iter().zip(b["decisions"].as_array().unwrap()) {
            for (pa, pb) in da["probs"].as_array().unwrap().iter().zip(db["probs"].as_array().unwrap()) {
                assert!((pa.as_f64().unwrap() - pb.as_f64().unwrap()).abs() <= 1e-3);
            }
        }
    }
}

fn sequences(n: usize, len: usize) -> Vec<Vec<usize>> {
    (0..len).fold(vec![vec![]], |acc, _| {
        acc.into_iter().flat_map(|s| (0..n).map(move |i| [s.clone(), vec![i]].concat())).collect()
    })
}

#[test]
fn checked_in_dp_result_is_the_exhaustive_optimum() {
    let fs = FiniteSystem::from_json_str(&std::fs::read_to_string(repo("configs/tiny_finite.json")).unwrap()).unwrap();
    let table: Vec<Vec<f64>> =
        fs.centers.iter().map(|x| fs.centers.iter().map(|c| (x - c) * (x - c)).collect()).collect();
    let histories: Vec<Vec<usize>> = (1..=3).flat_map(|len| sequences(fs.nz, len)).collect();
    let mut best = f64::INFINITY;
    for code in 0u32..(1 << histories.len()) {
        let mut tree = PolicyTree::uniform(2, fs.nz, 2).unwrap();
        for (bit, zs) in histories.iter().enumerate() {
            let mut d = vec![0.0; 2];
            d[((code >> bit) & 1) as usize] = 1.0;
            for xs in sequences(2, zs.len() - 1) {
                tree.set(zs, &xs, &d).unwrap();
            }
        }
        best = best.min(exact_objective(&fs, &tree, 2, &table, 0.0).unwrap().distortion);
    }
    let want: Value = serde_json::from_str(&std::fs::read_to_string(repo("configs/tiny_dp_result.json")).unwrap()).unwrap();
    assert!((want["value"].as_f64().unwrap() - best).abs() < 1e-9, "{} vs {best}", want["value"]);
}

#[test]
fn failures_are_reported_as_json() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();

    let missing = privest(&["simulate", "--out", out]);
    assert_eq!(missing.status.code(), Some(1));
    assert_eq!(error_of(&missing)["error"]["kind"], "config");

    let usage = privest(&["simulate", "--frobnicate"]);
    assert_eq!(usage.status.code(), Some(2));
    assert_eq!(error_of(&usage)["error"]["kind"], "usage");

    let unknown = privest(&["teleport"]);
    assert_eq!(unknown.status.code(), Some(2));

    let text = std::fs::read_to_string(smoke()).unwrap();
    let bad_row = tmp.path().join("bad_row.toml");
    std::fs::write(&bad_row, text.replace("[0.2, 0.8]", "[0.2, 0.7]")).unwrap();
    let res = privest(&["simulate", "--config", bad_row.to_str().unwrap(), "--out", out]);
    assert_eq!(res.status.code(), Some(1));
    let err = error_of(&res);
    assert!(err["error"]["message"].as_str().unwrap().contains("system.transition[1]"), "{err}");
    assert_valid("error", "bad row", &err);

    let bad_key = tmp.path().join("bad_key.toml");
    std::fs::write(&bad_key, text.replace("[horizon]", "[horizon]\nsteps = 3")).unwrap();
    let res = privest(&["discretize", "--config", bad_key.to_str().unwrap(), "--out", out]);
    assert_eq!(res.status.code(), Some(1));
    assert!(error_of(&res)["error"]["message"].as_str().unwrap().contains("steps"));

    let bad_ckpt = tmp.path().join("ckpt.json");
    std::fs::write(&bad_ckpt, "{\"kind\": \"mlp\"}").unwrap();
    let res = privest(&["evaluate", "--config", &smoke(), "--checkpoint", bad_ckpt.to_str().unwrap(), "--out", out]);
    assert_eq!(res.status.code(), Some(1));
    assert_valid("error", "bad checkpoint", &error_of(&res));

    let res = privest(&["simulate", "--config", &smoke(), "--rollouts", "0", "--out", out]);
    assert_eq!(res.status.code(), Some(1));

    let res = privest(&["dp-solve", "--config", &smoke(), "--lambda=-1", "--horizon", "1", "--out", out]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn help_and_version_succeed() {
    assert!(privest(&["--help"]).status.success());
    assert!(privest(&["--version"]).status.success());
}
