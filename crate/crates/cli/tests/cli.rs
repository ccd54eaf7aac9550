use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn situgraph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_situgraph"))
        .args(args)
        .env_remove("SITUGRAPH_BACKEND")
        .env_remove("SITUGRAPH_TIMEOUT_SECS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = situgraph(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Relative path -> contents for every file under `root`.
fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                files.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    files
}

/// Adapts the wiqa train fixture and exports its reference graphs.
fn adapted(dir: &Path) -> (PathBuf, PathBuf) {
    let adapt = dir.join("adapt");
    ok(&[
        "adapt",
        "--dataset",
        "wiqa",
        "--split",
        "train",
        "--in",
        s(&fixtures().join("wiqa_train.jsonl")),
        "--fixture-manifest",
        s(&fixtures().join("manifest.json")),
        "--out",
        s(&adapt),
    ]);
    let refs = dir.join("refs");
    ok(&[
        "graph-export",
        "--examples",
        s(&adapt.join("examples.jsonl")),
        "--out",
        s(&refs),
    ]);
    (adapt, refs)
}

#[test]
fn oracle_pipeline_reproduces_references() {
    let dir = tempfile::tempdir().unwrap();
    let (adapt, refs) = adapted(dir.path());
    let manifest = json(&adapt.join("manifest.json"));
    assert_eq!(manifest["observed_count"], 10);
    assert_eq!(manifest["count_mismatch"], false);

    let gen = dir.path().join("gen");
    let table = format!("oracle:{}", s(&adapt.join("oracle_table.json")));
    ok(&[
        "generate",
        "--backend",
        &table,
        "--schedule",
        "default",
        "--in",
        s(&adapt.join("examples.jsonl")),
        "--out",
        s(&gen),
    ]);
    let generated = tree(&gen.join("graphs"));
    let references = tree(&refs.join("graphs"));
    assert_eq!(
        generated.keys().collect::<Vec<_>>(),
        references.keys().collect::<Vec<_>>()
    );

    let eval = dir.path().join("eval");
    let out = ok(&[
        "eval",
        "--generated",
        s(&gen.join("graphs")),
        "--references",
        s(&refs.join("graphs")),
        "--out",
        s(&eval),
    ]);
    let report = json(&eval.join("eval_report.json"));
    assert_eq!(report["bleu"].as_f64().unwrap(), 100.0);
    assert_eq!(report["rouge_l_f"].as_f64().unwrap(), 100.0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("ROUGE-L"));
}

fn ngram_generate(dir: &Path, name: &str, jobs: &str) -> PathBuf {
    let (adapt, _) = adapted(dir);
    let model = dir.join("model");
    if !model.exists() {
        ok(&[
            "train-ngram",
            "--in",
            s(&adapt.join("examples.jsonl")),
            "--order",
            "4",
            "--out",
            s(&model),
        ]);
    }
    let out = dir.join(name);
    let backend = format!("ngram:{}", s(&model.join("model.json")));
    ok(&[
        "--jobs",
        jobs,
        "generate",
        "--backend",
        &backend,
        "--schedule",
        "fwd",
        "--seed",
        "11",
        "--top-p",
        "0.8",
        "--in",
        s(&adapt.join("examples.jsonl")),
        "--out",
        s(&out),
    ]);
    out
}

#[test]
fn runs_are_byte_identical_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let a = ngram_generate(dir.path(), "a", "1");
    let b = ngram_generate(dir.path(), "b", "4");
    let c = ngram_generate(dir.path(), "c", "4");
    assert_eq!(tree(&a), tree(&c));
    assert_eq!(tree(&a), tree(&b));
    let manifest = json(&a.join("run_manifest.json"));
    assert_eq!(manifest["seed"], 11);
    assert!(fs::read_to_string(a.join("resolved_config.toml"))
        .unwrap()
        .contains("seed = 11"));
}

#[test]
fn replay_matches_and_detects_changed_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let first = ngram_generate(dir.path(), "first", "2");
    let again = dir.path().join("again");
    ok(&[
        "replay",
        "--manifest",
        s(&first.join("run_manifest.json")),
        "--out",
        s(&again),
    ]);
    assert_eq!(tree(&first.join("graphs")), tree(&again.join("graphs")));

    let examples = dir.path().join("adapt/examples.jsonl");
    let mut text = fs::read_to_string(&examples).unwrap();
    text.push('\n');
    fs::write(&examples, text).unwrap();
    let out = situgraph(&[
        "replay",
        "--manifest",
        s(&first.join("run_manifest.json")),
        "--out",
        s(&dir.path().join("bad")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("changed"));
}

#[test]
fn exit_codes() {
    assert_eq!(situgraph(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(situgraph(&["generate", "--bogus-flag"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let out = situgraph(&["generate", "--in", "missing.jsonl", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let out = situgraph(&[
        "generate",
        "--backend",
        "oracle:/nonexistent.json",
        "--in",
        "x",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn every_subcommand_has_help() {
    for cmd in [
        "adapt",
        "train-ngram",
        "generate",
        "expand",
        "eval",
        "consistency",
        "augment",
        "zeroshot",
        "graph-export",
        "replay",
    ] {
        let out = situgraph(&[cmd, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{cmd}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("--out"), "{cmd}");
    }
}

#[test]
fn flags_beat_environment_beat_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(
        &config,
        "seed = 5\n[backend]\ntimeout_secs = 3.0\nretries = 4\n[generation]\ntop_p = 0.5\n",
    )
    .unwrap();
    let backend = format!("oracle:{}", s(&fixtures().join("zeroshot_oracle.json")));
    let items = fixtures().join("zeroshot.jsonl");
    let run = |out: &Path, extra: &[&str], env_timeout: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_situgraph"));
        cmd.args([
            "--config",
            s(&config),
            "zeroshot",
            "--backend",
            &backend,
            "--in",
            s(&items),
            "--out",
            s(out),
        ])
        .args(extra)
        .env_remove("SITUGRAPH_BACKEND")
        .env_remove("SITUGRAPH_TIMEOUT_SECS");
        if let Some(t) = env_timeout {
            cmd.env("SITUGRAPH_TIMEOUT_SECS", t);
        }
        let o = cmd.output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let text = fs::read_to_string(out.join("resolved_config.toml")).unwrap();
        toml::from_str::<toml::Value>(&text).unwrap()
    };
    let file_only = run(&dir.path().join("a"), &[], None);
    assert_eq!(file_only["seed"].as_integer(), Some(5));
    assert_eq!(file_only["backend"]["timeout_secs"].as_float(), Some(3.0));
    assert_eq!(file_only["backend"]["retries"].as_integer(), Some(4));
    assert_eq!(file_only["generation"]["top_p"].as_float(), Some(0.5));
    assert_eq!(file_only["generation"]["max_tokens"].as_integer(), Some(24));

    let env = run(&dir.path().join("b"), &[], Some("9"));
    assert_eq!(env["backend"]["timeout_secs"].as_float(), Some(9.0));

    let flags = run(&dir.path().join("c"), &["--timeout", "1.5", "--seed", "8"], Some("9"));
    assert_eq!(flags["backend"]["timeout_secs"].as_float(), Some(1.5));
    assert_eq!(flags["seed"].as_integer(), Some(8));
}

#[test]
fn adapt_reports_skips_and_full_data_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&[
        "adapt",
        "--dataset",
        "wiqa",
        "--in",
        s(&fixtures().join("wiqa_malformed.jsonl")),
        "--out",
        s(dir.path()),
    ]);
    let manifest = json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["skipped_lines"], 2);
    assert_eq!(manifest["observed_count"], 3);
    assert_eq!(manifest["expected_count"], 119_200);
    assert_eq!(manifest["expected_source"], "full_data");
    assert_eq!(manifest["count_mismatch"], true);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.lines().any(|l| l.starts_with("level=WARN stage=adapt msg=")),
        "{stderr}"
    );
}

#[test]
fn log_lines_are_structured() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&[
        "zeroshot",
        "--backend",
        &format!("oracle:{}", s(&fixtures().join("zeroshot_oracle.json"))),
        "--in",
        s(&fixtures().join("zeroshot.jsonl")),
        "--out",
        s(dir.path()),
    ]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(!stderr.is_empty());
    for line in stderr.lines() {
        let mut parts = line.splitn(3, ' ');
        assert!(parts.next().unwrap().starts_with("level="), "{line}");
        assert!(parts.next().unwrap().starts_with("stage="), "{line}");
        assert!(parts.next().unwrap().starts_with("msg=\""), "{line}");
    }
    let report = json(&dir.path().join("zeroshot_report.json"));
    assert_eq!(report["accuracy"].as_f64(), Some(1.0));
}

#[test]
fn augment_exports_training_file() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "augment",
        "--backend",
        &format!("oracle:{}", s(&fixtures().join("qa_oracle.json"))),
        "--in",
        s(&fixtures().join("qa_items.jsonl")),
        "--out",
        s(dir.path()),
    ]);
    let lines: Vec<serde_json::Value> = fs::read_to_string(dir.path().join("train.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().all(|l| l["alpha"] == 1.0 && l["beta"] == 0.9));
    assert!(lines[0]["input_aug"].as_str().unwrap().contains("more energy"));
    let manifest = json(&dir.path().join("export_manifest.json"));
    assert_eq!(manifest["n_items"], 3);
}

#[test]
fn expand_respects_depth_and_budget() {
    let dir = tempfile::tempdir().unwrap();
    let gen = ngram_generate(dir.path(), "gen", "2");
    let model = dir.path().join("model/model.json");
    let out = dir.path().join("expanded");
    ok(&[
        "expand",
        "--backend",
        &format!("ngram:{}", s(&model)),
        "--graphs",
        s(&gen.join("graphs")),
        "--max-depth",
        "3",
        "--max-nodes",
        "8",
        "--out",
        s(&out),
    ]);
    let summary = json(&out.join("expand_summary.json"));
    for entry in summary.as_array().unwrap() {
        assert!(entry["nodes"].as_u64().unwrap() <= 8, "{entry}");
    }
}
