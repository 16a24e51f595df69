//! One function per subcommand.
//!
//! Every command follows the same shape: resolve the effective configuration,
//! create the output directory, write the `effective-config.txt` sidecar, do
//! the work, then write `run-manifest.txt` listing every produced file.
//! Commands read corpora and checkpoints but never modify them.

use std::path::{Path, PathBuf};

use convirt_core::data::{generate_synthetic_corpus, synthetic_text_queries, TokenSequence};
use convirt_core::eval::{
    build_retrieval_split, fine_tune, linear_probe, retrieve_image_image, retrieve_text_image,
    LabeledImageSet, ProbeConfig,
};
use convirt_core::image::GrayImage;
use convirt_core::model::{encode_images, init_params, ModelConfig, ParamSet};
use convirt_core::objective::{init_binary_head, ObjectiveKind};
use convirt_core::train::{
    grad_check, gradcheck_fixture, pretrain_from, GradCheckConfig, TrainConfig,
};

use crate::config::RunConfig;
use crate::corpus_io::{self, LoadedCorpus};
use crate::csvio::{self, RetrievalRow};
use crate::logging::Logger;
use crate::parallel::ThreadedPreparer;
use crate::{checkpoint, CliError};

/// Everything a command needs: the effective configuration (seed already
/// overridden), the output directory, the worker count, and a logger.
pub struct CommandContext {
    /// Effective run configuration.
    pub cfg: RunConfig,
    /// Output directory; created on demand.
    pub out: PathBuf,
    /// Worker threads for view preparation.
    pub workers: usize,
    /// Stderr logger.
    pub log: Logger,
}

impl CommandContext {
    /// Creates the output directory and writes the configuration sidecar.
    /// Returns the produced-files list seeded with the sidecar.
    fn start(&self) -> Result<Vec<PathBuf>, CliError> {
        std::fs::create_dir_all(&self.out)?;
        let sidecar = self.cfg.write_sidecar(&self.out)?;
        Ok(vec![sidecar
            .strip_prefix(&self.out)
            .unwrap_or(&sidecar)
            .to_path_buf()])
    }

    /// Writes the run manifest; call once all files are produced.
    fn finish(&self, files: &[PathBuf]) -> Result<(), CliError> {
        let mut all = files.to_vec();
        all.push(PathBuf::from("run-manifest.txt"));
        csvio::write_run_manifest(&self.out, &all)?;
        Ok(())
    }

    fn corpus_dir(&self) -> Result<&Path, CliError> {
        if self.cfg.data.corpus.is_empty() {
            return Err(CliError::Usage(String::from(
                "this command reads a corpus; set `data.corpus` in the config",
            )));
        }
        Ok(Path::new(&self.cfg.data.corpus))
    }

    fn load_corpus(&self) -> Result<LoadedCorpus, CliError> {
        let dir = self.corpus_dir()?;
        self.log.info(format!("loading corpus from {}", dir.display()));
        let corpus = corpus_io::load_corpus(dir)?;
        self.log.info(format!(
            "loaded {} pairs, vocabulary of {} entries",
            corpus.examples.len(),
            corpus.vocabulary.len()
        ));
        Ok(corpus)
    }

    fn load_checkpoint(&self) -> Result<(ParamSet, ModelConfig), CliError> {
        if self.cfg.data.checkpoint.is_empty() {
            return Err(CliError::Usage(String::from(
                "this command reads a checkpoint; set `data.checkpoint` in the config",
            )));
        }
        let path = Path::new(&self.cfg.data.checkpoint);
        self.log
            .info(format!("loading checkpoint from {}", path.display()));
        Ok(checkpoint::load(path)?)
    }
}

/// Class labels and names, required by the evaluation commands.
fn labeled(corpus: &LoadedCorpus) -> Result<(&[usize], &[String]), CliError> {
    match (&corpus.labels, &corpus.class_names) {
        (Some(l), Some(n)) => Ok((l, n)),
        _ => Err(CliError::Usage(String::from(
            "corpus has no labels.txt/classes.txt; evaluation commands need labeled data",
        ))),
    }
}

/// Generates a corpus and writes it as the output directory.
pub fn run_synth(ctx: &CommandContext) -> Result<(), CliError> {
    let mut files = ctx.start()?;
    let spec = convirt_core::data::SyntheticSpec {
        seed: ctx.cfg.seed,
        ..ctx.cfg.synth.clone()
    };
    ctx.log.info(format!(
        "generating {} pairs across {} classes at {}x{} px",
        spec.n_pairs, spec.n_classes, spec.image_size, spec.image_size
    ));
    let corpus = generate_synthetic_corpus(&spec)?;
    files.extend(corpus_io::save_corpus(&ctx.out, &corpus)?);

    let queries = synthetic_text_queries(&spec, ctx.cfg.retrieval.queries_per_class, spec.seed)?;
    let text = corpus_io::queries_to_text(&corpus.vocabulary, &queries);
    files.extend(corpus_io::save_queries(&ctx.out, &corpus.class_names, &text)?);

    ctx.finish(&files)?;
    println!(
        "wrote {} pairs, {} classes, {} queries per class to {}",
        corpus.examples.len(),
        corpus.class_names.len(),
        ctx.cfg.retrieval.queries_per_class,
        ctx.out.display()
    );
    Ok(())
}

/// Pretrains the two-tower encoder on a corpus directory.
pub fn run_pretrain(ctx: &CommandContext) -> Result<(), CliError> {
    let mut files = ctx.start()?;
    let corpus = ctx.load_corpus()?;

    let model_cfg = ModelConfig {
        vocab_size: corpus.vocabulary.len(),
        ..ctx.cfg.model.clone()
    };
    let train_cfg = TrainConfig {
        seed: ctx.cfg.seed,
        ..ctx.cfg.train.clone()
    };
    let mut params = init_params(&model_cfg, train_cfg.seed)?;
    if train_cfg.objective == ObjectiveKind::Binary {
        init_binary_head(&mut params, &model_cfg, &ctx.cfg.binary, train_cfg.seed)?;
    }

    std::fs::create_dir_all(ctx.out.join("checkpoints"))?;
    let preparer = ThreadedPreparer {
        workers: ctx.workers,
    };
    ctx.log.info(format!(
        "pretraining: objective {:?}, batch {}, eval every {} steps, {} evaluations",
        train_cfg.objective,
        train_cfg.batch_size,
        train_cfg.eval_interval_steps,
        train_cfg.stop_after
    ));

    // The evaluation callback exports a checkpoint per evaluation; file
    // errors are captured and re-raised with their real category.
    let mut eval_files: Vec<PathBuf> = Vec::new();
    let mut io_error: Option<CliError> = None;
    let out_dir = ctx.out.clone();
    let log = ctx.log;
    let result = pretrain_from(
        params,
        &corpus.examples,
        &model_cfg,
        &ctx.cfg.augment,
        &ctx.cfg.loss,
        &train_cfg,
        &preparer,
        |record, current| {
            log.info(format!(
                "step {}: train_loss {:.6} val_loss {:.6} lr {:.2e}",
                record.step, record.train_loss, record.val_loss, record.lr
            ));
            let rel = PathBuf::from(format!("checkpoints/step{:06}.bin", record.step));
            if let Err(e) = checkpoint::save(&out_dir.join(&rel), current, &model_cfg) {
                io_error = Some(CliError::Checkpoint(e));
                return Err(convirt_core::Error::Contract(String::from(
                    "checkpoint export failed",
                )));
            }
            eval_files.push(rel);
            Ok(())
        },
    );
    let output = match result {
        Ok(output) => output,
        Err(e) => {
            return Err(io_error.unwrap_or(CliError::Core(e)));
        }
    };
    files.extend(eval_files);

    csvio::write_history_csv(&ctx.out.join("history.csv"), &output.history)?;
    files.push(PathBuf::from("history.csv"));
    checkpoint::save(&ctx.out.join("checkpoint.bin"), &output.params, &model_cfg)?;
    files.push(PathBuf::from("checkpoint.bin"));
    ctx.finish(&files)?;

    if let Some(step) = output.history.aborted_at_step {
        return Err(CliError::Failed(format!(
            "training diverged: non-finite loss at step {step} (partial outputs were written)"
        )));
    }
    let best = output
        .history
        .best()
        .expect("non-aborted run has evaluations");
    println!(
        "best val_loss {} at step {}; checkpoint written to {}",
        best.val_loss,
        best.step,
        ctx.out.join("checkpoint.bin").display()
    );
    Ok(())
}

/// Checks analytic gradients against central finite differences on a small
/// fixture and reports per-tensor maxima.
pub fn run_gradcheck(ctx: &CommandContext) -> Result<(), CliError> {
    let files = ctx.start()?;
    let objective = ctx.cfg.train.objective;
    let (model_cfg, batch) = gradcheck_fixture(objective, ctx.cfg.seed);
    let ccfg = GradCheckConfig {
        seed: ctx.cfg.seed,
        ..ctx.cfg.gradcheck
    };
    ctx.log.info(format!(
        "gradient check: objective {:?}, epsilon {:e}, tolerance {:e}, seed {}",
        objective, ccfg.epsilon, ccfg.tolerance, ctx.cfg.seed
    ));
    let report = grad_check(
        &model_cfg,
        &ctx.cfg.loss,
        objective,
        &batch,
        ctx.cfg.seed,
        &ccfg,
    )?;

    let mut csv = String::from("tensor,coords_checked,max_rel_err,pass\n");
    println!(
        "{:16} {:>8} {:>14} {:>6}",
        "tensor", "coords", "max_rel_err", "pass"
    );
    for t in &report.tensors {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            t.name, t.coords_checked, t.max_rel_err, t.pass
        ));
        println!(
            "{:16} {:>8} {:>14.3e} {:>6}",
            t.name, t.coords_checked, t.max_rel_err, t.pass
        );
    }
    std::fs::write(ctx.out.join("gradcheck.csv"), csv)?;
    let mut files = files;
    files.push(PathBuf::from("gradcheck.csv"));
    ctx.finish(&files)?;

    let failed: Vec<&str> = report
        .tensors
        .iter()
        .filter(|t| !t.pass)
        .map(|t| t.name.as_str())
        .collect();
    if !failed.is_empty() {
        return Err(CliError::Failed(format!(
            "gradient check failed for {} tensor(s): {}",
            failed.len(),
            failed.join(", ")
        )));
    }
    println!("all {} tensors within tolerance {:e}", report.tensors.len(), report.tolerance);
    Ok(())
}

/// Builds the labeled train/val/test sets shared by probe and fine-tune:
/// a stratified three-way split of the corpus, with the training side
/// subsampled to `split.label_fraction`.
fn labeled_sets(
    ctx: &CommandContext,
    corpus: &LoadedCorpus,
) -> Result<(LabeledImageSet, LabeledImageSet, LabeledImageSet), CliError> {
    let (labels, names) = labeled(corpus)?;
    let n_classes = names.len();
    let split = &ctx.cfg.split;
    let (mut train_idx, val_idx, test_idx) = convirt_core::eval::stratified_split(
        labels,
        split.val_fraction,
        split.test_fraction,
        ctx.cfg.seed,
    )?;
    if split.label_fraction < 1.0 {
        let train_classes: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
        let keep =
            convirt_core::eval::stratified_fraction(&train_classes, split.label_fraction, ctx.cfg.seed)?;
        train_idx = keep.into_iter().map(|k| train_idx[k]).collect();
    }
    ctx.log.info(format!(
        "labeled split: {} train ({}%), {} val, {} test",
        train_idx.len(),
        split.label_fraction * 100.0,
        val_idx.len(),
        test_idx.len()
    ));
    let build = |idx: &[usize]| -> Result<LabeledImageSet, CliError> {
        let images: Vec<GrayImage> = idx.iter().map(|&i| corpus.examples[i].image.clone()).collect();
        let classes: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        Ok(LabeledImageSet::from_classes(images, &classes, n_classes)?)
    };
    Ok((build(&train_idx)?, build(&val_idx)?, build(&test_idx)?))
}

/// Writes classifier metrics and prints a one-line summary.
fn report_classifier(
    ctx: &CommandContext,
    name: &str,
    metrics: &convirt_core::eval::ClassifierMetrics,
    files: &mut Vec<PathBuf>,
) -> Result<(), CliError> {
    let rel = PathBuf::from(format!("{name}-metrics.csv"));
    csvio::write_metrics_csv(
        &ctx.out.join(&rel),
        &[
            ("accuracy", metrics.accuracy),
            ("macro_auc", metrics.macro_auc),
            ("best_val_metric", metrics.best_val_metric),
        ],
    )?;
    files.push(rel);
    println!(
        "{name}: accuracy {} macro_auc {} (best val {})",
        metrics.accuracy, metrics.macro_auc, metrics.best_val_metric
    );
    Ok(())
}

/// Trains a linear classifier on frozen checkpoint representations.
pub fn run_probe(ctx: &CommandContext) -> Result<(), CliError> {
    let mut files = ctx.start()?;
    let corpus = ctx.load_corpus()?;
    let (params, model_cfg) = ctx.load_checkpoint()?;
    let (train, val, test) = labeled_sets(ctx, &corpus)?;
    let probe_cfg = ProbeConfig {
        seed: ctx.cfg.seed,
        ..ctx.cfg.probe.clone()
    };
    let metrics = linear_probe(&params, &model_cfg, &train, &val, &test, &probe_cfg)?;
    report_classifier(ctx, "probe", &metrics, &mut files)?;
    ctx.finish(&files)
}

/// Fine-tunes a checkpoint end to end (head warmup, then joint training).
pub fn run_finetune(ctx: &CommandContext) -> Result<(), CliError> {
    let mut files = ctx.start()?;
    let corpus = ctx.load_corpus()?;
    let (params, model_cfg) = ctx.load_checkpoint()?;
    let (train, val, test) = labeled_sets(ctx, &corpus)?;
    let ft_cfg = convirt_core::eval::FineTuneConfig {
        joint: ProbeConfig {
            seed: ctx.cfg.seed,
            ..ctx.cfg.finetune.joint.clone()
        },
        ..ctx.cfg.finetune.clone()
    };
    let output = fine_tune(&params, &model_cfg, &train, &val, &test, &ft_cfg)?;
    report_classifier(ctx, "finetune", &output.metrics, &mut files)?;
    checkpoint::save(&ctx.out.join("checkpoint.bin"), &output.params, &model_cfg)?;
    files.push(PathBuf::from("checkpoint.bin"));
    ctx.finish(&files)
}

/// Zero-shot retrieval: image queries against image candidates, and (when the
/// corpus ships standalone queries) text queries against image candidates.
pub fn run_retrieve(ctx: &CommandContext) -> Result<(), CliError> {
    let mut files = ctx.start()?;
    let corpus = ctx.load_corpus()?;
    let (params, model_cfg) = ctx.load_checkpoint()?;
    let (labels, names) = labeled(&corpus)?;

    let onehot: Vec<Vec<bool>> = labels
        .iter()
        .map(|&l| (0..names.len()).map(|c| c == l).collect())
        .collect();
    let split = build_retrieval_split(
        &onehot,
        names,
        ctx.cfg.retrieval.n_query,
        ctx.cfg.retrieval.n_candidate,
        ctx.cfg.seed,
    )?;
    let images: Vec<GrayImage> = corpus.examples.iter().map(|e| e.image.clone()).collect();
    let ks = &ctx.cfg.retrieval.k_values;

    ctx.log.info(format!(
        "retrieval: {} queries per class, {} candidates per class, k in {:?}",
        ctx.cfg.retrieval.n_query, ctx.cfg.retrieval.n_candidate, ks
    ));
    let mut rows = vec![RetrievalRow {
        direction: String::from("image-image"),
        metrics: retrieve_image_image(&params, &model_cfg, &images, &split, ks)?,
    }];
    match &corpus.queries {
        Some(queries) => {
            let aligned: Vec<Vec<TokenSequence>> = queries.clone();
            rows.push(RetrievalRow {
                direction: String::from("text-image"),
                metrics: retrieve_text_image(&params, &model_cfg, &images, &split, &aligned, ks)?,
            });
        }
        None => ctx
            .log
            .info("corpus has no queries/ directory; skipping text-image retrieval"),
    }

    csvio::write_retrieval_csv(&ctx.out.join("retrieval.csv"), &rows)?;
    files.push(PathBuf::from("retrieval.csv"));
    print!("{}", csvio::render_retrieval_table(&rows));
    ctx.finish(&files)
}

/// Exports the image-tower representation of every corpus image.
pub fn run_export_embeddings(ctx: &CommandContext) -> Result<(), CliError> {
    let mut files = ctx.start()?;
    let corpus = ctx.load_corpus()?;
    let (params, model_cfg) = ctx.load_checkpoint()?;
    let images: Vec<GrayImage> = corpus.examples.iter().map(|e| e.image.clone()).collect();
    let ids: Vec<String> = corpus.examples.iter().map(|e| e.id.clone()).collect();
    let embeddings = encode_images(&params, &model_cfg, &images)?;
    csvio::write_embeddings_csv(
        &ctx.out.join("embeddings.csv"),
        &ids,
        &embeddings,
        corpus.labels.as_deref(),
    )?;
    files.push(PathBuf::from("embeddings.csv"));
    println!(
        "wrote {} embeddings of width {} to {}",
        embeddings.rows(),
        embeddings.cols(),
        ctx.out.join("embeddings.csv").display()
    );
    ctx.finish(&files)
}
