//! End-to-end checks of the command-line pipeline on a small corpus.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fader(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fader"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path, seed: u64) -> std::path::PathBuf {
    let out = dir.join(format!("run_{seed}"));
    let text = format!(
        r#"{{
  "seed": {seed},
  "out_dir": {out:?},
  "corpus": {{
    "n_speakers": 8,
    "utterances_per_speaker": 8,
    "embedding_dim": 24,
    "gender_balance": 0.5,
    "noise_sigma": 0.3,
    "gender_strength": 1.0
  }},
  "pretrain": {{ "epochs": 2, "batch_size": 16, "hidden_dim": 8, "learning_rate": 0.05 }},
  "fader": {{ "epochs": 6, "batch_size": 16, "latent_dim": 6, "learning_rate": 0.01 }},
  "eval": {{ "eval_fraction": 0.25, "impostors_per_trial": 4, "classifier_iterations": 60 }}
}}"#,
        out = out.display().to_string()
    );
    let path = dir.join(format!("config_{seed}.json"));
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn full_pipeline_runs_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), 11);

    let steps: [&[&str]; 4] = [
        &["gen-data", "--config"],
        &["pretrain", "--config"],
        &["train", "--config"],
        &["train", "--config"],
    ];
    for (i, step) in steps.iter().enumerate() {
        let mut args: Vec<&str> = step.to_vec();
        let cfg = config.to_str().unwrap();
        args.push(cfg);
        if i == 3 {
            args.push("--no-adversarial");
        }
        let out = fader(&args, dir.path());
        assert!(
            out.status.success(),
            "step {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }

    let run_dir = dir.path().join("run_11");
    let out = fader(
        &[
            "eval",
            "--config",
            config.to_str().unwrap(),
            "--ckpt",
            run_dir.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // Artifacts exist.
    for file in [
        "corpus/corpus.csv",
        "corpus/corpus.bin",
        "corpus/corpus.manifest.json",
        "checkpoints/discriminator.json",
        "checkpoints/adv/autoencoder.bin",
        "checkpoints/noadv/autoencoder.bin",
        "history_adv.csv",
        "history_noadv.csv",
        "eval/report.json",
        "eval/roc_original.csv",
        "eval/pca_embedding.csv",
        "eval/pca_latent.csv",
        "eval/mi.csv",
    ] {
        assert!(run_dir.join(file).exists(), "missing {file}");
    }

    // Loss history has the documented header and the ablation column count.
    let history = fs::read_to_string(run_dir.join("history_noadv.csv")).unwrap();
    assert!(history.starts_with("epoch,L_RC,L_ACC,L_ADV"));
    assert_eq!(history.lines().count(), 7);

    // The report holds the five MI table rows in vocabulary order.
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(run_dir.join("eval/report.json")).unwrap()).unwrap();
    let rows: Vec<&str> = report["mutual_information"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["representation"].as_str().unwrap())
        .collect();
    assert_eq!(rows, vec!["original", "est_gender", "inv_gender", "de_gender", "latent_code"]);

    // Re-running the pipeline from scratch reproduces the corpus and report
    // byte for byte.
    let corpus_bytes = fs::read(run_dir.join("corpus/corpus.bin")).unwrap();
    let report_bytes = fs::read(run_dir.join("eval/report.json")).unwrap();
    fs::remove_dir_all(&run_dir).unwrap();
    for step in [
        vec!["gen-data"],
        vec!["pretrain"],
        vec!["train"],
        vec!["train", "--no-adversarial"],
    ] {
        let mut args = step.clone();
        args.push("--config");
        args.push(config.to_str().unwrap());
        let out = fader(&args, dir.path());
        assert!(out.status.success());
    }
    let out = fader(
        &[
            "eval",
            "--config",
            config.to_str().unwrap(),
            "--ckpt",
            run_dir.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success());
    assert_eq!(corpus_bytes, fs::read(run_dir.join("corpus/corpus.bin")).unwrap());
    assert_eq!(report_bytes, fs::read(run_dir.join("eval/report.json")).unwrap());

    // Aggregate report over the single run.
    let summary = dir.path().join("summary.json");
    let out = fader(
        &[
            "report",
            "--in",
            run_dir.to_str().unwrap(),
            "--out",
            summary.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let agg: serde_json::Value = serde_json::from_slice(&fs::read(&summary).unwrap()).unwrap();
    assert_eq!(agg["runs"], 1);
}

#[test]
fn malformed_config_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{ "seed": 1, "out_dir": "x", "corpus": { "n_speekers": 4 } }"#).unwrap();
    let out = fader(&["gen-data", "--config", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("n_speekers"), "{stderr}");
}

#[test]
fn out_of_range_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(
        &path,
        r#"{ "seed": 1, "out_dir": "x", "corpus": { "n_speakers": 1, "utterances_per_speaker": 4 } }"#,
    )
    .unwrap();
    let out = fader(&["gen-data", "--config", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_speakers"));
}

#[test]
fn missing_corpus_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), 12);
    let out = fader(&["train", "--config", config.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gen-data"));
}

#[test]
fn missing_output_dir_is_created() {
    let dir = tempfile::tempdir().unwrap();
    let nested = dir.path().join("a/b/c");
    let text = format!(
        r#"{{ "seed": 3, "out_dir": {:?}, "corpus": {{ "n_speakers": 4, "utterances_per_speaker": 4, "embedding_dim": 12 }}, "fader": {{ "latent_dim": 4 }} }}"#,
        nested.display().to_string()
    );
    let path = dir.path().join("nested.json");
    fs::write(&path, text).unwrap();
    let out = fader(&["gen-data", "--config", path.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(nested.join("corpus/corpus.bin").exists());
}

#[test]
fn resume_continues_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = small_config(dir.path(), 13);
    for args in [vec!["gen-data"], vec!["pretrain"], vec!["train"]] {
        let mut full = args.clone();
        full.push("--config");
        full.push(config_path.to_str().unwrap());
        assert!(fader(&full, dir.path()).status.success());
    }
    // Raising the horizon and resuming continues rather than restarting.
    let text = fs::read_to_string(&config_path).unwrap().replace("\"epochs\": 6,", "\"epochs\": 8,");
    fs::write(&config_path, text).unwrap();
    let out = fader(
        &["train", "--config", config_path.to_str().unwrap(), "--resume"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let history =
        fs::read_to_string(dir.path().join("run_13").join("history_adv.csv")).unwrap();
    assert_eq!(history.lines().count(), 9);
}
