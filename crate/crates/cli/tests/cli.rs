use std::path::Path;
use std::process::{Command, Output};

fn onrails(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_onrails"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = onrails(args);
    assert!(
        out.status.success(),
        "onrails {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_pipeline_on_a_tiny_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (random, auto) = (d.join("random"), d.join("auto"));
    let (ego, labels, policy) = (d.join("ego.toml"), d.join("labels"), d.join("policy.bin"));

    ok(&["collect", "--policy", "random", "--episodes", "2", "--decisions", "30", "--npcs", "0", "--seed", "1", "--out", s(&random)]);
    assert!(random.join("index.txt").exists());
    ok(&["fit-ego", "--logs", s(&random), "--iterations", "200", "--out", s(&ego)]);
    assert!(ego.exists());

    ok(&["collect", "--episodes", "1", "--decisions", "6", "--noise", "0.1", "--seed", "2", "--out", s(&auto)]);
    ok(&["label", "--logs", s(&auto), "--ego-params", s(&ego), "--horizon", "2", "--augment", "pose,speed", "--out", s(&labels)]);
    let label_files: Vec<_> = std::fs::read_dir(&labels)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "worq"))
        .collect();
    assert_eq!(label_files.len(), 1);

    ok(&["distill", "--labels", s(&labels), "--epochs", "1", "--augment", "speed", "--out", s(&policy)]);
    assert!(policy.exists());

    let model = format!("model:{}", s(&policy));
    let trace = d.join("trace.jsonl");
    ok(&["drive", "--agent", &model, "--route", "town-a-straight-0", "--out", s(&trace)]);
    let text = std::fs::read_to_string(&trace).unwrap();
    assert!(text.lines().count() > 1);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.is_object());
    }

    let report = d.join("report");
    ok(&["bench", "--agent", &model, "--maps", "town-a", "--densities", "empty", "--seeds", "0", "--out", s(&report)]);
    for f in ["report.txt", "episodes.jsonl", "summary.json", "config.toml"] {
        assert!(report.join(f).exists(), "missing {f}");
    }
    let episodes = std::fs::read_to_string(report.join("episodes.jsonl")).unwrap();
    assert_eq!(episodes.lines().count(), 10);

    let log = std::fs::read_dir(&auto)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .find(|p| p.extension().is_some_and(|x| x == "worlog"))
        .unwrap();
    let png = d.join("values.png");
    ok(&["render-values", "--log", s(&log), "--ego", s(&ego), "--frame", "1", "--out", s(&png)]);
    assert!(png.exists());
    let label = label_files[0].path();
    let from_labels = d.join("from_labels.png");
    ok(&["render-values", "--labels", s(&label), "--frame", "1", "--out", s(&from_labels)]);
    assert!(from_labels.exists());
}

#[test]
fn routes_command_writes_ten_routes() {
    let dir = tempfile::tempdir().unwrap();
    let routes = dir.path().join("routes.toml");
    ok(&["routes", "--map", "town-b", "--out", s(&routes)]);
    let text = std::fs::read_to_string(&routes).unwrap();
    assert_eq!(text.matches("town-b-").count(), 10);
}

#[test]
fn bad_arguments_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = onrails(&["bench", "--agent", "teleport", "--seeds", "0", "--out", s(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("needs --ego") || String::from_utf8_lossy(&out.stderr).contains("unknown agent"));

    let out = onrails(&["bench", "--agent", "model:/nonexistent", "--seeds", "3..1", "--out", s(dir.path())]);
    assert!(!out.status.success());

    let out = onrails(&["routes", "--map", "town-z", "--out", s(&dir.path().join("r.toml"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}
