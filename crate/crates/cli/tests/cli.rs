use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn jolimas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jolimas")).args(args).output().expect("binary runs")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn small_morph(dir: &Path) -> PathBuf {
    let text = fs::read_to_string(configs().join("morph.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["sequence"]["steps"] = 3.into();
    let path = dir.join("morph_small.json");
    fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = jolimas(&["bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn missing_config_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = dir.path().join("out");
    let o = jolimas(&["exp2", "--config", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains(missing.to_str().unwrap()));
}

#[test]
fn malformed_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ \"scene\": ").unwrap();
    let out = dir.path().join("out");
    let o = jolimas(&["render", "--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.json"));
}

#[test]
fn scene_commands_need_a_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = jolimas(&["detect", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn exp2_writes_csv_and_overlays_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_morph(dir.path());
    let out = dir.path().join("out");
    let args = ["exp2", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    let o = jolimas(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read(out.join("exp2.csv")).unwrap();
    let text = String::from_utf8(csv.clone()).unwrap();
    assert!(text.contains("frame_id,kappa,mode,percent_error,n_failed_directions,pb_error_px"));
    assert!(text.contains("\"command\": \"exp2\""));
    // 3 steps x 6 views x 2 modes.
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1 + 36);
    let overlays = files_under(&out.join("overlays/exp2"));
    assert_eq!(overlays.len(), 36);
    assert!(overlays.iter().all(|p| p.extension().unwrap() == "png"));

    let o = jolimas(&args);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read(out.join("exp2.csv")).unwrap(), csv);
    // Nothing lands outside --out.
    let mut entries: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    entries.sort();
    assert_eq!(entries, ["morph_small.json", "out"]);
}

#[test]
fn scene_pipeline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("plane_scene.json");
    let cfg = cfg.to_str().unwrap();
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();

    let o = jolimas(&["render", "--config", cfg, "--out", out_s]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = jolimas(&["detect", "--config", cfg, "--out", out_s, "--images", out_s]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let det: serde_json::Value = serde_json::from_slice(&fs::read(out.join("detections.json")).unwrap()).unwrap();
    assert_eq!(det.as_array().unwrap().len(), 6);

    for mode in ["canonical", "dual"] {
        let o = jolimas(&["reconstruct", "--config", cfg, "--out", out_s, "--mode", mode]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let model = out.join("model.json");
        let m = model.to_str().unwrap();
        let o = jolimas(&["predict", "--config", cfg, "--out", out_s, "--model", m]);
        assert_eq!(o.status.code(), Some(0));
        let p: serde_json::Value = serde_json::from_slice(&fs::read(out.join("predictions.json")).unwrap()).unwrap();
        assert_eq!(p.as_array().unwrap().len(), 6);
        let o = jolimas(&["evaluate", "--config", cfg, "--out", out_s, "--model", m]);
        assert_eq!(o.status.code(), Some(0));
        let csv = fs::read_to_string(out.join("evaluate.csv")).unwrap();
        let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
        assert_eq!(rows.len(), 6);
        for r in rows {
            let pct: f64 = r.split(',').nth(3).unwrap().parse().unwrap();
            assert!(pct < 1.0, "{r}");
        }
    }
}

#[test]
fn missing_model_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("plane_scene.json");
    let model = dir.path().join("absent_model.json");
    let o = jolimas(&[
        "predict",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent_model.json"));
}
