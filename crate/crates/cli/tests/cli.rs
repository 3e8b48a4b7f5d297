use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn tierattn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tierattn"))
        .args(args)
        .current_dir(dir)
        .env_remove("TIERATTN_SEED")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn remap_preset_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = tierattn(dir.path(), &["remap", "--preset", "wan-2x"]);
    assert_eq!(out.status.code(), Some(0));
    let report = stdout_json(&out);
    assert_eq!(report["max_mapped"], 34);
    assert_eq!(report["valid"], true);
}

#[test]
fn remap_within_pretrained_is_raw_in_fine_rows() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["remap", "--w1", "12", "--w2", "20", "--g1", "2", "--g2", "8", "--pretrained", "81", "--target", "81", "-o", "m.csv"];
    assert_eq!(tierattn(dir.path(), &args).status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
    let rows: Vec<Vec<i64>> = csv.lines().map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 81);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if i.abs_diff(j) <= 12 {
                assert_eq!(v, i as i64 - j as i64);
            }
        }
    }
}

#[test]
fn remap_out_of_range_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["remap", "--w1", "12", "--w2", "20", "--g1", "1", "--g2", "1", "--target", "400", "--pretrained", "81"];
    let out = tierattn(dir.path(), &args);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    assert!(stderr(&out).contains("\"valid\": false"));
}

#[test]
fn remap_broken_invariant_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["remap", "--preset", "wan-2x", "--g2", "1"];
    assert_eq!(tierattn(dir.path(), &args).status.code(), Some(2));
}

#[test]
fn mask_toy_descriptor() {
    let dir = tempfile::tempdir().unwrap();
    let out = tierattn(dir.path(), &["mask", "--frames", "8", "--n", "4", "--d1", "2", "--d2", "4", "--alpha", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let doc = stdout_json(&out);
    assert_eq!(doc["stripe_width"], 2);
    assert_eq!(doc["descriptor"]["pattern"].as_str().unwrap().len(), 64);
}

#[test]
fn mask_single_frame_is_dense() {
    let dir = tempfile::tempdir().unwrap();
    let out = tierattn(dir.path(), &["mask", "--frames", "1", "--n", "4", "--d1", "2", "--d2", "4", "--alpha", "2", "--pgm", "m.pgm"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout_json(&out)["descriptor"]["pattern"], "D");
    let pgm = std::fs::read(dir.path().join("m.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n4 4\n255\n"));
    assert!(pgm[pgm.len() - 16..].iter().all(|&b| b == 255));
}

#[test]
fn mask_validate_preset() {
    let dir = tempfile::tempdir().unwrap();
    let out = tierattn(dir.path(), &["mask", "--preset", "wan-4x", "--validate", "-o", "d.json"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stderr(&out).contains("d1(1+1/alpha) = 10 in [6, 12]: valid"), "{}", stderr(&out));
    let bad = tierattn(dir.path(), &["mask", "--preset", "wan-4x", "--d1", "2", "--validate", "-o", "e.json"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn probe_is_byte_stable_and_compares() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.json", "b.json"] {
        let out = tierattn(dir.path(), &["probe", "--layers", "4", "--seed", "7", "--shifts=-20,20", "-o", name]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.json")).unwrap());
    let out = tierattn(dir.path(), &["probe", "--layers", "4", "--seed", "7", "--shifts=-20,20", "-o", "c.json", "--compare", "a.json"]);
    assert!(stderr(&out).contains("spearman ald: 1.0"), "{}", stderr(&out));
    assert!(stderr(&out).contains("spearman ctx_score: 1.0"));
}

#[test]
fn seed_env_var_overrides_default() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_tierattn"));
        cmd.args(["probe", "--layers", "2", "--dim", "8", "--frames", "6", "--shifts=2", "--input-seeds", "0"]).current_dir(dir.path());
        match seed {
            Some(s) => cmd.env("TIERATTN_SEED", s),
            None => cmd.env_remove("TIERATTN_SEED"),
        };
        cmd.output().unwrap().stdout
    };
    assert_ne!(run(None), run(Some("5")));
    assert_eq!(run(Some("0")), run(None));
}

#[test]
fn probe_thirty_layers_split() {
    let dir = tempfile::tempdir().unwrap();
    let out = tierattn(dir.path(), &["probe", "--layers", "30", "--dim", "8", "--n", "2", "--frames", "10"]);
    assert_eq!(out.status.code(), Some(0));
    let p = stdout_json(&out);
    let count = |key: &str| p[key].as_array().unwrap().iter().filter(|v| v.as_bool() == Some(true)).count();
    assert_eq!(count("pos_sensitive"), 20);
    assert_eq!(count("ctx_sensitive"), 20);
    let tsa = p["strategy"].as_array().unwrap().iter().filter(|s| s.as_str() == Some("VRPR+TSA")).count();
    assert_eq!(tsa, 15);
}

#[test]
fn plan_from_shipped_wan_profile() {
    let dir = tempfile::tempdir().unwrap();
    let out = tierattn(dir.path(), &["plan", "--shipped", "wan", "--preset", "wan-4x"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let bundle = stdout_json(&out);
    let plans = bundle["plans"].as_array().unwrap();
    assert_eq!(plans.len(), 30);
    assert_eq!(plans.iter().filter(|p| p["masked"] == true).count(), 15);
    assert_eq!(bundle["validation"]["vrpr"]["max_mapped"], 51);
}

#[test]
fn plan_all_vrpr_only_profile_has_no_masks() {
    let dir = tempfile::tempdir().unwrap();
    let out = tierattn(dir.path(), &["probe", "--layers", "4", "--dim", "8", "--frames", "8", "-o", "p.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let mut profile: Value = serde_json::from_slice(&std::fs::read(dir.path().join("p.json")).unwrap()).unwrap();
    profile["strategy"] = Value::Array(vec![Value::from("VRPR"); 4]);
    std::fs::write(dir.path().join("p.json"), serde_json::to_vec(&profile).unwrap()).unwrap();
    let out = tierattn(dir.path(), &["plan", "--profile", "p.json", "--preset", "hunyuan-2x"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let bundle = stdout_json(&out);
    assert!(bundle["plans"].as_array().unwrap().iter().all(|p| p["masked"] == false));
    assert!(bundle["mask"].is_null());
}

#[test]
fn plan_invalid_target_reports_both_validators() {
    let dir = tempfile::tempdir().unwrap();
    let out = tierattn(dir.path(), &["plan", "--shipped", "hunyuan", "--preset", "wan-2x", "--target", "1000", "-o", "x.json"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("\"vrpr\"") && err.contains("\"tsa\""), "{err}");
    assert!(!dir.path().join("x.json").exists());
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(tierattn(dir.path(), &["remap", "--bogus"]).status.code(), Some(1));
    assert_eq!(tierattn(dir.path(), &["remap", "--w1", "3"]).status.code(), Some(1));
    assert_eq!(tierattn(dir.path(), &["mask", "--preset", "nope"]).status.code(), Some(1));
    assert_eq!(tierattn(dir.path(), &["plan", "--profile", "missing.json", "--preset", "wan-2x"]).status.code(), Some(1));
    let help = tierattn(dir.path(), &["probe", "--help"]);
    assert_eq!(help.status.code(), Some(0));
    let text = String::from_utf8_lossy(&help.stdout);
    for flag in ["--layers", "--seed", "--shifts", "--compare", "--window", "--extension", "--csv"] {
        assert!(text.contains(flag), "help lacks {flag}");
    }
}

#[test]
fn presets_listing() {
    let dir = tempfile::tempdir().unwrap();
    let out = tierattn(dir.path(), &["presets", "--json"]);
    assert_eq!(out.status.code(), Some(0));
    let list = stdout_json(&out);
    let names: Vec<&str> = list.as_array().unwrap().iter().map(|p| p["preset"]["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["wan-2x", "wan-4x", "hunyuan-2x", "hunyuan-4x"]);
    assert!(list.as_array().unwrap().iter().all(|p| p["validation"]["vrpr"]["valid"] == true));
    let table = tierattn(dir.path(), &["presets"]);
    assert!(String::from_utf8_lossy(&table.stdout).contains("hunyuan-4x"));
}
