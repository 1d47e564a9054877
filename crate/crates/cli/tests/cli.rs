use std::path::Path;
use std::process::{Command, Output};

fn reid(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reid"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn stderr_category(out: &Output) -> String {
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap_or_else(|_| {
        panic!(
            "stderr is not JSON: {}",
            String::from_utf8_lossy(&out.stderr)
        )
    });
    v["error"]["category"].as_str().unwrap().to_string()
}

const SIMSPEC: &str =
    "n_identities = 6\nitems_per_identity = 3\ndim = 8\nsigma_base = 0.1\nrho = 0.5\n\
shift_magnitude = 1.0\nsigma_refinement = 0.1\nseed = 3\n";

#[test]
fn simulate_then_run_file_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("sim.toml"), SIMSPEC).unwrap();
    let out = reid(&["simulate", "sim.toml", "--out", "data"], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in [
        "manifest.jsonl",
        "base.vec",
        "refinement_A.vec",
        "refinement_B.vec",
        "refinement_C.vec",
    ] {
        assert!(dir.path().join("data").join(f).exists(), "{f}");
    }

    let config = r#"
[dataset]
manifest = "data/manifest.jsonl"

[[dataset.models]]
name = "M"
base = "data/base.vec"
refinements = { A = "data/refinement_A.vec", B = "data/refinement_B.vec" }

[[runs]]
label = "base"
base = "M"

[[runs]]
label = "avg"
base = "M"
refinements = "M"
fusion = { method = "average", sources = ["base", "refinement_A", "refinement_B"] }
"#;
    std::fs::write(dir.path().join("exp.toml"), config).unwrap();
    let out = reid(&["run", "exp.toml", "--out", "res"], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(
        table.starts_with("| Embedding Base | Embedding Refinements | Fusion"),
        "{table}"
    );
    assert!(table.lines().nth(2).unwrap().contains("-0.0%"));
    assert_eq!(
        std::fs::read_to_string(dir.path().join("res/table.txt")).unwrap(),
        table
    );
    let reports: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("res/reports.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 2);

    let json = reid(&["run", "exp.toml", "--format", "json"], dir.path());
    let again: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(again, reports);
}

#[test]
fn evaluate_reads_distance_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = [
        r#"{"item_id":"q0","identity_id":"a","camera_id":"c0","split":"query","kind":"base"}"#,
        r#"{"item_id":"g0","identity_id":"b","camera_id":"c1","split":"gallery","kind":"base"}"#,
        r#"{"item_id":"g1","identity_id":"a","camera_id":"c1","split":"gallery","kind":"base"}"#,
    ]
    .join("\n");
    std::fs::write(dir.path().join("m.jsonl"), manifest).unwrap();
    // 1 x 2 matrix: the positive is ranked second, so AP = 1/2.
    let mut bytes = b"REIDVEC1".to_vec();
    bytes.extend(1u32.to_le_bytes());
    bytes.extend(2u32.to_le_bytes());
    bytes.extend(0.1f32.to_le_bytes());
    bytes.extend(0.4f32.to_le_bytes());
    std::fs::write(dir.path().join("d.vec"), bytes).unwrap();
    for protocol in ["plain", "cross_camera", "cross-camera"] {
        let out = reid(
            &["evaluate", "d.vec", "m.jsonl", "--protocol", protocol],
            dir.path(),
        );
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert!((v["map"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    }
}

#[test]
fn errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = reid(&["run", "missing.toml"], dir.path());
    assert_eq!(
        (out.status.code(), stderr_category(&out).as_str()),
        (Some(3), "io")
    );

    std::fs::write(dir.path().join("bad.toml"), "not = [valid").unwrap();
    let out = reid(&["run", "bad.toml"], dir.path());
    assert_eq!(
        (out.status.code(), stderr_category(&out).as_str()),
        (Some(4), "parse")
    );

    std::fs::write(
        dir.path().join("sim.toml"),
        SIMSPEC.replace("items_per_identity = 3", "items_per_identity = 1"),
    )
    .unwrap();
    let out = reid(&["simulate", "sim.toml", "--out", "x"], dir.path());
    assert_eq!(
        (out.status.code(), stderr_category(&out).as_str()),
        (Some(5), "invalid_param")
    );

    std::fs::write(
        dir.path().join("m.jsonl"),
        "{\"item_id\":\"q\",\"identity_id\":\"a\",\"split\":\"query\",\"kind\":\"base\"}\n",
    )
    .unwrap();
    std::fs::write(dir.path().join("d.vec"), b"NOTAVEC!").unwrap();
    let out = reid(&["evaluate", "d.vec", "m.jsonl"], dir.path());
    assert_eq!(
        (out.status.code(), stderr_category(&out).as_str()),
        (Some(4), "format")
    );
}
