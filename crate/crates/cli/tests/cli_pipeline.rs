//! End-to-end checks of the `convirt` binary: every subcommand runs on a
//! small synthetic corpus, outputs land where documented, reruns from the
//! effective-config sidecar and multi-worker runs are bit-identical, inputs
//! are never mutated, and failures print one machine-parseable error line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn convirt(args: &[&str], log: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convirt"))
        .args(args)
        .env("CONVIRT_LOG", log)
        .output()
        .expect("binary should spawn")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Every file under `dir`, as relative path -> bytes.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).expect("readable dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).expect("under root").to_path_buf();
                out.insert(rel, std::fs::read(&path).expect("readable file"));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn write_config(path: &Path, corpus: &Path, checkpoint: &Path) {
    let text = format!(
        "seed = 11\n\
         data.corpus = {}\n\
         data.checkpoint = {}\n\
         synth.n_classes = 4\n\
         synth.n_pairs = 120\n\
         synth.image_size = 16\n\
         augment.output_size = 12\n\
         augment.blur_sigma_min = 0\n\
         augment.blur_sigma_max = 0.8\n\
         augment.rotation_min_deg = -10\n\
         augment.rotation_max_deg = 10\n\
         model.conv_channels = 4,8\n\
         model.embed_dim = 8\n\
         model.n_heads = 2\n\
         model.ffn_dim = 16\n\
         model.projection_dim = 8\n\
         model.projection_hidden = 8\n\
         train.batch_size = 8\n\
         train.eval_interval_steps = 10\n\
         train.stop_after = 3\n\
         probe.max_epochs = 3\n\
         probe.learning_rate = 0.05\n\
         finetune.warmup_steps = 5\n\
         finetune.max_epochs = 2\n\
         retrieval.n_query = 4\n\
         retrieval.n_candidate = 20\n\
         retrieval.k_values = 5,10\n",
        corpus.display(),
        checkpoint.display()
    );
    std::fs::write(path, text).expect("config written");
}

#[test]
fn every_subcommand_runs_and_inputs_stay_untouched() {
    let root = tempfile::tempdir().expect("tempdir");
    let corpus = root.path().join("corpus");
    let pretrain_out = root.path().join("pretrain");
    let cfg = root.path().join("run.cfg");
    write_config(&cfg, &corpus, &pretrain_out.join("checkpoint.bin"));
    let cfg_s = cfg.to_str().unwrap();

    let out_dir = |name: &str| root.path().join(name);
    let run = |sub: &str, out: &Path| {
        let out_s = out.to_str().unwrap().to_string();
        let r = convirt(&[sub, "--config", cfg_s, "--out", &out_s], "info");
        assert_ok(&r, sub);
        assert!(out.join("effective-config.txt").is_file(), "{sub} sidecar");
        assert!(out.join("run-manifest.txt").is_file(), "{sub} manifest");
        r
    };

    run("synth", &corpus);
    assert!(corpus.join("manifest.tsv").is_file());
    assert!(corpus.join("labels.txt").is_file());
    assert!(corpus.join("classes.txt").is_file());
    assert!(corpus.join("queries").is_dir());
    let corpus_before = snapshot(&corpus);
    assert!(
        corpus_before.len() > 240,
        "expected images + reports for 120 pairs, found {} files",
        corpus_before.len()
    );

    run("pretrain", &pretrain_out);
    assert!(pretrain_out.join("history.csv").is_file());
    assert!(pretrain_out.join("checkpoint.bin").is_file());
    assert!(pretrain_out.join("checkpoints/step000010.bin").is_file());

    let grad_out = out_dir("gradcheck");
    let grad = run("gradcheck", &grad_out);
    let table = String::from_utf8_lossy(&grad.stdout);
    assert!(table.contains("max_rel_err"), "per-tensor table on stdout");
    assert!(!table.contains("false"), "all tensors must pass:\n{table}");

    run("probe", &out_dir("probe"));
    assert!(out_dir("probe").join("probe-metrics.csv").is_file());

    run("finetune", &out_dir("finetune"));
    assert!(out_dir("finetune").join("finetune-metrics.csv").is_file());
    assert!(out_dir("finetune").join("checkpoint.bin").is_file());

    run("retrieve", &out_dir("retrieve"));
    let retrieval = std::fs::read_to_string(out_dir("retrieve").join("retrieval.csv")).unwrap();
    assert!(retrieval.starts_with("direction,k,precision,n_queries\n"));
    assert!(retrieval.contains("image-image,5,"));

    run("export-embeddings", &out_dir("embed"));
    let embeddings =
        std::fs::read_to_string(out_dir("embed").join("embeddings.csv")).unwrap();
    assert_eq!(embeddings.lines().count(), 121, "header + one row per pair");

    assert_eq!(
        snapshot(&corpus),
        corpus_before,
        "a downstream command modified the input corpus"
    );
}

#[test]
fn sidecar_rerun_and_parallel_run_are_bit_identical() {
    let root = tempfile::tempdir().expect("tempdir");
    let corpus = root.path().join("corpus");
    let cfg = root.path().join("run.cfg");
    write_config(&cfg, &corpus, Path::new("unused"));
    let cfg_s = cfg.to_str().unwrap();

    let r = convirt(&["synth", "--config", cfg_s, "--out", corpus.to_str().unwrap()], "quiet");
    assert_ok(&r, "synth");
    assert!(r.stderr.is_empty(), "quiet mode must silence the log");

    let run_pretrain = |out: &Path, config: &Path, workers: &str| {
        let r = convirt(
            &[
                "pretrain",
                "--config",
                config.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--workers",
                workers,
            ],
            "quiet",
        );
        assert_ok(&r, "pretrain");
    };

    let first = root.path().join("run1");
    run_pretrain(&first, &cfg, "1");
    let rerun = root.path().join("run2");
    run_pretrain(&rerun, &first.join("effective-config.txt"), "1");
    let threaded = root.path().join("run4");
    run_pretrain(&threaded, &cfg, "4");

    for file in ["history.csv", "checkpoint.bin"] {
        let base = std::fs::read(first.join(file)).unwrap();
        assert_eq!(
            base,
            std::fs::read(rerun.join(file)).unwrap(),
            "{file} differs when rerun from the sidecar"
        );
        assert_eq!(
            base,
            std::fs::read(threaded.join(file)).unwrap(),
            "{file} differs with --workers 4"
        );
    }
}

#[test]
fn failures_print_one_machine_parseable_error_line() {
    let root = tempfile::tempdir().expect("tempdir");
    let out = root.path().join("out");
    let out_s = out.to_str().unwrap();

    // Unknown key, with its line number.
    let bad = root.path().join("bad.cfg");
    std::fs::write(&bad, "seed = 1\nnonsense = 3\n").unwrap();
    let r = convirt(
        &["pretrain", "--config", bad.to_str().unwrap(), "--out", out_s],
        "quiet",
    );
    assert!(!r.status.success());
    let stderr = String::from_utf8_lossy(&r.stderr);
    assert!(
        stderr.starts_with("error: config: "),
        "got stderr: {stderr}"
    );
    assert!(stderr.contains("line 2"), "got stderr: {stderr}");

    // Commands that need a corpus must name the missing key.
    let r = convirt(&["pretrain", "--out", out_s], "quiet");
    assert!(!r.status.success());
    let stderr = String::from_utf8_lossy(&r.stderr);
    assert!(stderr.starts_with("error: "), "got stderr: {stderr}");
    assert!(stderr.contains("data.corpus"), "got stderr: {stderr}");

    // Commands that need a checkpoint must name the missing key.
    let r = convirt(&["retrieve", "--out", out_s], "quiet");
    assert!(!r.status.success());
    let stderr = String::from_utf8_lossy(&r.stderr);
    assert!(stderr.contains("data."), "got stderr: {stderr}");
}
