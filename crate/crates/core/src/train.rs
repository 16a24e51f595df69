//! Optimization loop: Adam with decoupled weight decay, plateau-based
//! learning-rate annealing, deterministic epoch shuffling, and a
//! finite-difference gradient checker.
//!
//! # Determinism contract
//!
//! Identical (corpus, configs, seed) produce a bitwise-identical
//! [`TrainHistory`]. Every random decision draws from a stream derived from
//! the run seed and a fixed purpose tag: the train/validation split, epoch
//! shuffles, per-(step, pair) augmentation seeds, and validation views.
//! Minibatch view preparation goes through a [`BatchPreparer`] so it may run
//! on worker threads; each job owns its seed, so results are independent of
//! execution order and identical to the serial run.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use alloc::vec;

use crate::augment::AugmentConfig;
use crate::data::{PairedExample, TokenSequence};
use crate::image::GrayImage;
use crate::model::{init_params, ModelConfig, ParamSet};
use crate::objective::{
    batch_gradients, batch_loss, has_binary_head, init_binary_head, pair_seed, prepare_pair,
    sample_fake_assignment, BinaryHeadConfig, GradMap, LossConfig, ObjectiveKind, PreparedBatch,
    PreparedPair,
};
use crate::rng::{self, stream};
use crate::tensor::Matrix;
use crate::{Error, Result};

/// Adam first-moment decay.
pub const ADAM_BETA1: f64 = 0.9;
/// Adam second-moment decay.
pub const ADAM_BETA2: f64 = 0.999;
/// Adam denominator stabilizer.
pub const ADAM_EPSILON: f64 = 1e-8;

/// Training-loop hyperparameters.
///
/// Defaults are the full-scale protocol; tests and the bundled configs use
/// scaled-down eval intervals and budgets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Initial Adam learning rate.
    pub learning_rate: f64,
    /// Decoupled weight-decay coefficient.
    pub weight_decay: f64,
    /// Pairs per minibatch.
    pub batch_size: usize,
    /// Steps between validation evaluations.
    pub eval_interval_steps: u64,
    /// Multiplier applied to the learning rate on plateau.
    pub anneal_factor: f64,
    /// Consecutive non-improving evaluations before annealing.
    pub anneal_patience: usize,
    /// Total number of evaluations before stopping.
    pub stop_after: usize,
    /// Objective to optimize.
    pub objective: ObjectiveKind,
    /// Root seed of the run.
    pub seed: u64,
    /// Tensors excluded from updates (weights and moments untouched).
    pub freeze_mask: BTreeSet<String>,
    /// Fraction of pairs held out for validation.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            weight_decay: 1e-6,
            batch_size: 32,
            eval_interval_steps: 5000,
            anneal_factor: 0.5,
            anneal_patience: 5,
            stop_after: 200,
            objective: ObjectiveKind::Contrastive,
            seed: 0,
            freeze_mask: BTreeSet::new(),
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    /// Checks hyperparameter ranges.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Contract(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Contract(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Contract(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if self.eval_interval_steps == 0 {
            return Err(Error::Contract(String::from(
                "eval_interval_steps must be positive",
            )));
        }
        if !(self.anneal_factor > 0.0 && self.anneal_factor <= 1.0) {
            return Err(Error::Contract(format!(
                "anneal_factor must be in (0, 1], got {}",
                self.anneal_factor
            )));
        }
        if self.anneal_patience == 0 {
            return Err(Error::Contract(String::from(
                "anneal_patience must be at least 1",
            )));
        }
        if self.stop_after == 0 {
            return Err(Error::Contract(String::from(
                "stop_after must be at least 1 evaluation",
            )));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Contract(format!(
                "val_fraction must be in (0, 1), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

/// Adam moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: BTreeMap<String, Matrix>,
    v: BTreeMap<String, Matrix>,
    t: u64,
}

impl AdamState {
    /// Zero moments shaped like `params`.
    pub fn new(params: &ParamSet) -> Self {
        let zeros = |p: &ParamSet| {
            p.iter()
                .map(|(k, m)| (k.clone(), Matrix::zeros(m.rows(), m.cols())))
                .collect()
        };
        AdamState {
            m: zeros(params),
            v: zeros(params),
            t: 0,
        }
    }

    /// Number of completed steps.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One optimizer step in place.
    ///
    /// Decoupled weight decay shrinks each tensor as `w <- w - lr*wd*w`
    /// before the bias-corrected Adam update. Tensors in `freeze` are left
    /// entirely untouched — weights and moments — so that unfreezing later
    /// behaves like a fresh optimizer start for them.
    pub fn apply(
        &mut self,
        params: &mut ParamSet,
        grads: &GradMap,
        lr: f64,
        weight_decay: f64,
        freeze: &BTreeSet<String>,
    ) -> Result<()> {
        if params.len() != grads.len() || !params.keys().eq(grads.keys()) {
            return Err(Error::Contract(String::from(
                "optimizer requires identical parameter and gradient keys",
            )));
        }
        self.t += 1;
        let correction1 = 1.0 - libm::pow(ADAM_BETA1, self.t as f64);
        let correction2 = 1.0 - libm::pow(ADAM_BETA2, self.t as f64);
        for (name, w) in params.iter_mut() {
            if freeze.contains(name) {
                continue;
            }
            let g = &grads[name];
            if g.rows() != w.rows() || g.cols() != w.cols() {
                return Err(Error::Contract(format!(
                    "gradient shape {}x{} mismatches parameter {name} {}x{}",
                    g.rows(),
                    g.cols(),
                    w.rows(),
                    w.cols()
                )));
            }
            let m = self.m.get_mut(name).expect("moment missing");
            let v = self.v.get_mut(name).expect("moment missing");
            let (wd, gd) = (w.data_mut(), g.data());
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..wd.len() {
                wd[i] -= lr * weight_decay * wd[i];
                md[i] = ADAM_BETA1 * md[i] + (1.0 - ADAM_BETA1) * gd[i];
                vd[i] = ADAM_BETA2 * vd[i] + (1.0 - ADAM_BETA2) * gd[i] * gd[i];
                let m_hat = md[i] / correction1;
                let v_hat = vd[i] / correction2;
                wd[i] -= lr * m_hat / (libm::sqrt(v_hat) + ADAM_EPSILON);
            }
        }
        Ok(())
    }
}

/// Learning-rate schedule that multiplies the rate by a fixed factor after a
/// run of non-improving observations.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    lr: f64,
    factor: f64,
    patience: usize,
    best: Option<f64>,
    since_improvement: usize,
}

impl PlateauSchedule {
    /// Starts at `lr`; anneals by `factor` after `patience` consecutive
    /// observations without a new best.
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        PlateauSchedule {
            lr,
            factor,
            patience,
            best: None,
            since_improvement: 0,
        }
    }

    /// Current learning rate.
    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records a validation value; returns `true` when the rate annealed.
    /// Only strict improvement over the best seen resets the counter.
    pub fn observe(&mut self, value: f64) -> bool {
        let improved = match self.best {
            None => true,
            Some(best) => value < best,
        };
        if improved {
            self.best = Some(value);
            self.since_improvement = 0;
            return false;
        }
        self.since_improvement += 1;
        if self.since_improvement >= self.patience {
            self.lr *= self.factor;
            self.since_improvement = 0;
            return true;
        }
        false
    }
}

/// One row of the training record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    /// Optimizer step at which the evaluation ran.
    pub step: u64,
    /// Mean training loss over the steps since the previous evaluation.
    pub train_loss: f64,
    /// Validation loss under the fixed evaluation views.
    pub val_loss: f64,
    /// Learning rate in effect during the preceding interval.
    pub lr: f64,
}

/// Per-evaluation records plus bookkeeping of the best checkpoint.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    /// Records in step order (strictly increasing steps).
    pub records: Vec<EvalRecord>,
    /// Index into `records` of the lowest validation loss.
    pub best_index: Option<usize>,
    /// Step at which a non-finite loss aborted the run, if any.
    pub aborted_at_step: Option<u64>,
}

impl TrainHistory {
    /// Record of the best validation loss.
    pub fn best(&self) -> Option<&EvalRecord> {
        self.best_index.map(|i| &self.records[i])
    }
}

/// Trained parameters (best validation checkpoint) and the run record.
pub struct PretrainOutput {
    /// Parameters of the best validation loss seen; initial parameters if
    /// the run aborted before the first evaluation.
    pub params: ParamSet,
    /// Evaluation history.
    pub history: TrainHistory,
}

/// Seeded train/validation index split: shuffles `0..n` and holds out
/// `round(n * val_fraction)` (clamped to `[1, n-1]`) for validation. Both
/// sides are returned in ascending order.
pub fn split_dataset(n: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Contract(format!(
            "cannot split {n} examples into train and validation"
        )));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Contract(format!(
            "val_fraction must be in (0, 1), got {val_fraction}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = rng::stream_from_seed(rng::derive_seed(seed, &[stream::SPLIT]));
    rng::shuffle(&mut rng, &mut idx);
    let n_val = (libm::round(n as f64 * val_fraction) as usize).clamp(1, n - 1);
    let mut val: Vec<usize> = idx[..n_val].to_vec();
    let mut train: Vec<usize> = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

/// One view-preparation job: an example and the seed that fully determines
/// its augmented views.
pub struct PrepJob<'a> {
    /// Source pair.
    pub example: &'a PairedExample,
    /// Seed owning every random choice for this pair at this step.
    pub seed: u64,
}

/// Executes view-preparation jobs, preserving job order in the output.
/// Implementations may fan jobs out to threads; determinism is carried by
/// the per-job seeds, not by scheduling.
pub trait BatchPreparer {
    /// Prepares all jobs; `out[i]` must correspond to `jobs[i]`.
    fn prepare(&self, aug: &AugmentConfig, jobs: &[PrepJob<'_>]) -> Vec<PreparedPair>;
}

/// In-thread reference implementation of [`BatchPreparer`].
pub struct SerialPreparer;

impl BatchPreparer for SerialPreparer {
    fn prepare(&self, aug: &AugmentConfig, jobs: &[PrepJob<'_>]) -> Vec<PreparedPair> {
        jobs.iter()
            .map(|j| prepare_pair(j.example, aug, j.seed))
            .collect()
    }
}

/// Builds the fixed validation batches for a run: one augmented view and one
/// sentence per held-out pair, drawn from the evaluation stream of
/// `cfg.seed`, chunked to `cfg.batch_size`. A trailing chunk smaller than 2
/// is dropped (both objectives need at least two pairs). The same inputs
/// always produce the same batches, which keeps plateau detection stable.
pub fn build_validation_batches(
    examples: &[PairedExample],
    val_indices: &[usize],
    aug: &AugmentConfig,
    cfg: &TrainConfig,
) -> Result<Vec<PreparedBatch>> {
    let eval_root = rng::derive_seed(cfg.seed, &[stream::EVAL_AUGMENT]);
    let views: Vec<PreparedPair> = val_indices
        .iter()
        .enumerate()
        .map(|(k, &i)| prepare_pair(&examples[i], aug, rng::derive_seed(eval_root, &[k as u64])))
        .collect();
    let mut fake_rng =
        rng::stream_from_seed(rng::derive_seed(eval_root, &[stream::FAKE_PAIR]));
    let mut batches = Vec::new();
    for chunk in views.chunks(cfg.batch_size) {
        if chunk.len() < 2 {
            continue;
        }
        let fake_text_of = match cfg.objective {
            ObjectiveKind::Contrastive => Vec::new(),
            ObjectiveKind::Binary => sample_fake_assignment(chunk.len(), &mut fake_rng),
        };
        batches.push(PreparedBatch {
            pairs: chunk.to_vec(),
            fake_text_of,
        });
    }
    if batches.is_empty() {
        return Err(Error::Contract(String::from(
            "validation split too small: need at least 2 held-out pairs",
        )));
    }
    Ok(batches)
}

/// Mean per-pair validation loss over fixed batches (weighted by batch
/// size, so the result is the mean over pairs).
pub fn validation_loss(
    params: &ParamSet,
    model_cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    objective: ObjectiveKind,
    batches: &[PreparedBatch],
) -> Result<f64> {
    if batches.is_empty() {
        return Err(Error::Contract(String::from("no validation batches")));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for b in batches {
        let l = batch_loss(params, model_cfg, loss_cfg, objective, b)?;
        total += l * b.pairs.len() as f64;
        count += b.pairs.len();
    }
    Ok(total / count as f64)
}

/// Pretrains from freshly initialized parameters (seeded by `cfg.seed`);
/// the binary objective also gets its discriminator head.
pub fn pretrain<P: BatchPreparer>(
    examples: &[PairedExample],
    model_cfg: &ModelConfig,
    aug_cfg: &AugmentConfig,
    loss_cfg: &LossConfig,
    cfg: &TrainConfig,
    preparer: &P,
    on_eval: impl FnMut(&EvalRecord, &ParamSet) -> Result<()>,
) -> Result<PretrainOutput> {
    let mut params = init_params(model_cfg, cfg.seed)?;
    if cfg.objective == ObjectiveKind::Binary {
        init_binary_head(&mut params, model_cfg, &BinaryHeadConfig::default(), cfg.seed)?;
    }
    pretrain_from(params, examples, model_cfg, aug_cfg, loss_cfg, cfg, preparer, on_eval)
}

/// Pretrains from the given parameters.
///
/// Per step: draw the next `batch_size` pairs of the current epoch
/// permutation, prepare one (augmented image, sampled sentence) view per
/// pair under its own (step, pair) seed, differentiate the objective, and
/// take an Adam step. Every `eval_interval_steps` steps the validation loss
/// is computed on the fixed evaluation views, a record is appended, `on_eval`
/// runs with the current parameters, and the plateau schedule observes the
/// value. The loop stops after `stop_after` evaluations and returns the
/// parameters of the best validation loss.
///
/// A non-finite training or validation loss aborts the run immediately; the
/// returned parameters are the best checkpoint so far (the initial
/// parameters if no evaluation had happened yet) and the history notes the
/// aborting step.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_from<P: BatchPreparer>(
    initial: ParamSet,
    examples: &[PairedExample],
    model_cfg: &ModelConfig,
    aug_cfg: &AugmentConfig,
    loss_cfg: &LossConfig,
    cfg: &TrainConfig,
    preparer: &P,
    mut on_eval: impl FnMut(&EvalRecord, &ParamSet) -> Result<()>,
) -> Result<PretrainOutput> {
    cfg.validate()?;
    model_cfg.validate()?;
    aug_cfg.validate()?;
    loss_cfg.validate()?;
    if cfg.objective == ObjectiveKind::Binary && !has_binary_head(&initial) {
        return Err(Error::Contract(String::from(
            "binary objective requires discriminator tensors in the initial parameters",
        )));
    }

    let (train_idx, val_idx) = split_dataset(examples.len(), cfg.val_fraction, cfg.seed)?;
    if train_idx.len() < cfg.batch_size {
        return Err(Error::Contract(format!(
            "training split has {} pairs, need at least batch_size = {}",
            train_idx.len(),
            cfg.batch_size
        )));
    }
    let val_batches = build_validation_batches(examples, &val_idx, aug_cfg, cfg)?;

    let aug_root = rng::derive_seed(cfg.seed, &[stream::AUGMENT]);
    let mut shuffle_rng =
        rng::stream_from_seed(rng::derive_seed(cfg.seed, &[stream::SHUFFLE]));

    let mut params = initial;
    let mut adam = AdamState::new(&params);
    let mut plateau = PlateauSchedule::new(cfg.learning_rate, cfg.anneal_factor, cfg.anneal_patience);
    let mut best_params = params.clone();
    let mut best_val = f64::INFINITY;
    let mut history = TrainHistory::default();

    let mut order = train_idx;
    let mut cursor = order.len(); // force a shuffle before the first step
    let mut step: u64 = 0;
    let mut evals = 0usize;
    let mut train_sum = 0.0;
    let mut train_count = 0usize;

    while evals < cfg.stop_after {
        if cursor + cfg.batch_size > order.len() {
            rng::shuffle(&mut shuffle_rng, &mut order);
            cursor = 0;
        }
        step += 1;
        let batch_indices = &order[cursor..cursor + cfg.batch_size];
        cursor += cfg.batch_size;

        let jobs: Vec<PrepJob<'_>> = batch_indices
            .iter()
            .enumerate()
            .map(|(k, &i)| PrepJob {
                example: &examples[i],
                seed: pair_seed(aug_root, step, k as u64),
            })
            .collect();
        let pairs = preparer.prepare(aug_cfg, &jobs);
        let fake_text_of = match cfg.objective {
            ObjectiveKind::Contrastive => Vec::new(),
            ObjectiveKind::Binary => {
                let mut rng = rng::stream_from_seed(rng::derive_seed(
                    aug_root,
                    &[stream::FAKE_PAIR, step],
                ));
                sample_fake_assignment(cfg.batch_size, &mut rng)
            }
        };
        let batch = PreparedBatch {
            pairs,
            fake_text_of,
        };

        let out = batch_gradients(&params, model_cfg, loss_cfg, cfg.objective, &batch)?;
        if !out.loss.is_finite() {
            history.aborted_at_step = Some(step);
            break;
        }
        train_sum += out.loss;
        train_count += 1;
        adam.apply(&mut params, &out.grads, plateau.lr(), cfg.weight_decay, &cfg.freeze_mask)?;

        if step % cfg.eval_interval_steps == 0 {
            let val = validation_loss(&params, model_cfg, loss_cfg, cfg.objective, &val_batches)?;
            if !val.is_finite() {
                history.aborted_at_step = Some(step);
                break;
            }
            let record = EvalRecord {
                step,
                train_loss: train_sum / train_count as f64,
                val_loss: val,
                lr: plateau.lr(),
            };
            if val < best_val {
                best_val = val;
                best_params = params.clone();
                history.best_index = Some(history.records.len());
            }
            history.records.push(record);
            on_eval(&record, &params)?;
            plateau.observe(val);
            evals += 1;
            train_sum = 0.0;
            train_count = 0;
        }
    }

    Ok(PretrainOutput {
        params: best_params,
        history,
    })
}

/// Gradient-checker settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub epsilon: f64,
    /// Maximum allowed relative error.
    pub tolerance: f64,
    /// Coordinates sampled per non-bias tensor (bias tensors are checked
    /// exhaustively, as are tensors at most this large).
    pub min_coords: usize,
    /// Seed of the coordinate subsample.
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-4,
            tolerance: 1e-4,
            min_coords: 50,
            seed: 0,
        }
    }
}

/// Per-tensor verdict of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    /// Tensor name.
    pub name: String,
    /// Number of coordinates compared.
    pub coords_checked: usize,
    /// Largest relative error observed.
    pub max_rel_err: f64,
    /// Flat coordinate index of that error.
    pub worst_coord: usize,
    /// Whether the tensor stayed within tolerance.
    pub pass: bool,
}

/// Gradient-check outcome across all tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Per-tensor results in name order.
    pub tensors: Vec<TensorCheck>,
    /// Tolerance the verdicts used.
    pub tolerance: f64,
}

impl GradCheckReport {
    /// True when every tensor passed.
    pub fn pass(&self) -> bool {
        self.tensors.iter().all(|t| t.pass)
    }
}

/// Bias tensors are detected by name: the final dotted segment starts with
/// `b` throughout the parameter layout.
fn is_bias_tensor(name: &str) -> bool {
    name.rsplit('.').next().is_some_and(|s| s.starts_with('b'))
}

/// Compares `analytic` gradients against central differences of the forward
/// loss. Checks every coordinate of bias tensors and of tensors with at most
/// `min_coords` entries, and a seeded subsample elsewhere. Failures are
/// reported, not raised.
pub fn check_gradients(
    params: &ParamSet,
    model_cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    objective: ObjectiveKind,
    batch: &PreparedBatch,
    analytic: &GradMap,
    ccfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    if !params.keys().eq(analytic.keys()) {
        return Err(Error::Contract(String::from(
            "analytic gradient keys must match parameter keys",
        )));
    }
    let mut perturbed = params.clone();
    let mut tensors = Vec::with_capacity(params.len());
    for (name, grad) in analytic {
        let entries = grad.len();
        let coords: Vec<usize> = if is_bias_tensor(name) || entries <= ccfg.min_coords {
            (0..entries).collect()
        } else {
            let mut rng = rng::stream_from_seed(rng::derive_seed(
                ccfg.seed,
                &[stream::GRAD_CHECK, rng::hash_label(name)],
            ));
            rng::sample_distinct(&mut rng, entries, ccfg.min_coords)
        };
        let mut max_rel_err = 0.0;
        let mut worst_coord = 0;
        for &c in &coords {
            let original = params[name].data()[c];
            let tensor = perturbed.get_mut(name).expect("tensor present");
            tensor.data_mut()[c] = original + ccfg.epsilon;
            let plus = batch_loss(&perturbed, model_cfg, loss_cfg, objective, batch)?;
            let tensor = perturbed.get_mut(name).expect("tensor present");
            tensor.data_mut()[c] = original - ccfg.epsilon;
            let minus = batch_loss(&perturbed, model_cfg, loss_cfg, objective, batch)?;
            let tensor = perturbed.get_mut(name).expect("tensor present");
            tensor.data_mut()[c] = original;
            let numeric = (plus - minus) / (2.0 * ccfg.epsilon);
            let a = grad.data()[c];
            let rel = libm::fabs(a - numeric)
                / libm::fmax(libm::fabs(a) + libm::fabs(numeric), 1e-8);
            if rel > max_rel_err {
                max_rel_err = rel;
                worst_coord = c;
            }
        }
        tensors.push(TensorCheck {
            name: name.clone(),
            coords_checked: coords.len(),
            max_rel_err,
            worst_coord,
            pass: max_rel_err <= ccfg.tolerance,
        });
    }
    Ok(GradCheckReport {
        tensors,
        tolerance: ccfg.tolerance,
    })
}

/// A small, fully-exercising fixture for finite-difference gradient checks:
/// a scaled-down model (largest tensor under 100 entries) and a four-pair
/// batch built so every parameter is structurally reachable. The images vary
/// spatially, which keeps convolution channels active, and the token
/// sequences jointly cover the whole vocabulary, so no embedding row is
/// structurally unused.
///
/// Reachable is not the same as measurable: at some initialization seeds a
/// rectifier path goes (nearly) dead and a coordinate's true derivative
/// drops below what central differences at `epsilon = 1e-4` can resolve —
/// the comparison then reads rounding noise against the relative-error
/// floor, in quanta of about `1.1e-4` for a unit-scale loss. With the tiny
/// projection widths here an init can even zero an example's projected
/// vector exactly, which the forward rejects. Both are properties of the
/// evaluation point, not of the differentiator; check at seeds whose report
/// is clean (the shipped defaults are).
///
/// Under the binary objective the batch carries a mismatch assignment drawn
/// from `seed`'s fake-pair stream; under the contrastive objective `seed` is
/// unused and the fixture is fully deterministic.
pub fn gradcheck_fixture(objective: ObjectiveKind, seed: u64) -> (ModelConfig, PreparedBatch) {
    const VOCAB: usize = 9;
    const N_PAIRS: usize = 4;
    let cfg = ModelConfig {
        conv_channels: vec![2, 3],
        embed_dim: 8,
        n_attention_layers: 1,
        n_heads: 2,
        ffn_dim: 12,
        projection_dim: 4,
        projection_hidden: 6,
        ..ModelConfig::with_vocab(VOCAB)
    };
    let pairs = (0..N_PAIRS)
        .map(|i| {
            let image = GrayImage::from_vec(
                8,
                8,
                (0..64)
                    .map(|p| ((p * 5 + i * 17) % 64) as f64 / 63.0)
                    .collect(),
            );
            let text =
                TokenSequence::from_indices((0..5).map(|k| (i * 5 + k) % VOCAB).collect());
            PreparedPair { image, text }
        })
        .collect();
    let fake_text_of = match objective {
        ObjectiveKind::Contrastive => Vec::new(),
        ObjectiveKind::Binary => {
            let mut rng =
                rng::stream_from_seed(rng::derive_seed(seed, &[stream::FAKE_PAIR]));
            sample_fake_assignment(N_PAIRS, &mut rng)
        }
    };
    (
        cfg,
        PreparedBatch {
            pairs,
            fake_text_of,
        },
    )
}

/// End-to-end gradient check: initializes parameters from `init_seed`,
/// differentiates the objective over `batch`, and verifies every tensor
/// against central differences.
///
/// Bias tensors (initialized to zero for training) are nudged to 0.1 before
/// the check. At zero bias a convolution whose inputs are all zero — e.g. a
/// rectified channel that happens to be inactive across a patch — feeds the
/// next rectifier an input of exactly zero, its kink, where one-sided finite
/// differences legitimately disagree with any subgradient choice. The nudge
/// moves the evaluation to a point in general position; it also keeps more
/// channels active, so more coordinates carry gradient signal large enough
/// for central differences to resolve.
pub fn grad_check(
    model_cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    objective: ObjectiveKind,
    batch: &PreparedBatch,
    init_seed: u64,
    ccfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut params = init_params(model_cfg, init_seed)?;
    if objective == ObjectiveKind::Binary {
        init_binary_head(&mut params, model_cfg, &BinaryHeadConfig::default(), init_seed)?;
    }
    for (name, tensor) in params.iter_mut() {
        if is_bias_tensor(name) {
            for v in tensor.data_mut() {
                *v += 0.1;
            }
        }
    }
    let out = batch_gradients(&params, model_cfg, loss_cfg, objective, batch)?;
    check_gradients(&params, model_cfg, loss_cfg, objective, batch, &out.grads, ccfg)
}
