//! Supervised evaluation of frozen or fine-tuned image representations:
//! linear probing, two-stage fine-tuning with head warmup, stratified label
//! fractions, and classifier metrics (accuracy, macro AUC).
//!
//! The classification head is a single linear layer over the image tower
//! output `h_v`, trained with Adam and the same plateau schedule as
//! pretraining. Dropout (inverted, applied to the head input during
//! training only) is the head's sole regularizer; encoders never see
//! dropout.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::model::{encode_images, image_tower, ModelConfig, ParamSet};
use crate::objective::GradMap;
use crate::rng::{self, stream};
use crate::tensor::Matrix;
use crate::train::{AdamState, PlateauSchedule};
use crate::{Error, Result};

use super::metrics::auc;

/// Sub-stream tags under the head-training stream.
const HEAD_INIT: u64 = 1;
const HEAD_SHUFFLE: u64 = 2;
const HEAD_DROPOUT: u64 = 3;

/// Images with aligned label vectors (one-hot multi-class rows, or
/// independent binary columns when `multi_label`).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImageSet {
    /// The images.
    pub images: Vec<crate::image::GrayImage>,
    /// One label row per image.
    pub labels: Matrix,
    /// Interpret label columns as independent binary labels.
    pub multi_label: bool,
}

impl LabeledImageSet {
    /// One-hot multi-class set from integer class ids.
    pub fn from_classes(
        images: Vec<crate::image::GrayImage>,
        class_ids: &[usize],
        n_classes: usize,
    ) -> Result<Self> {
        if images.len() != class_ids.len() || images.is_empty() {
            return Err(Error::Contract(String::from(
                "labeled set requires aligned, non-empty images and classes",
            )));
        }
        let mut labels = Matrix::zeros(class_ids.len(), n_classes);
        for (i, &c) in class_ids.iter().enumerate() {
            if c >= n_classes {
                return Err(Error::Contract(format!(
                    "class id {c} out of range, have {n_classes} classes"
                )));
            }
            labels.set(i, c, 1.0);
        }
        Ok(LabeledImageSet {
            images,
            labels,
            multi_label: false,
        })
    }

    /// Number of examples.
    pub fn len(&self) -> usize {
        self.images.len()
    }

    /// True when the set holds no examples.
    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Structural checks: aligned rows, binary labels, one-hot rows unless
    /// multi-label.
    pub fn validate(&self) -> Result<()> {
        if self.images.len() != self.labels.rows() || self.images.is_empty() {
            return Err(Error::Contract(String::from(
                "labeled set images and label rows must align and be non-empty",
            )));
        }
        for r in 0..self.labels.rows() {
            let row = self.labels.row_slice(r);
            if row.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Contract(format!("label row {r} is not binary")));
            }
            if !self.multi_label && row.iter().filter(|&&v| v == 1.0).count() != 1 {
                return Err(Error::Contract(format!(
                    "label row {r} is not one-hot in a multi-class set"
                )));
            }
        }
        Ok(())
    }

    /// Class id (argmax) of example `i`; meaningful for one-hot sets.
    pub fn class_of(&self, i: usize) -> usize {
        let row = self.labels.row_slice(i);
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        best
    }
}

/// Seeded stratified subset: per class, keeps `ceil(fraction * count)`
/// examples (never fewer than one), drawn without replacement from a
/// per-class stream. Returns sorted indices.
pub fn stratified_fraction(class_of: &[usize], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if class_of.is_empty() {
        return Err(Error::Contract(String::from("empty class list")));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Contract(format!(
            "fraction must be in (0, 1], got {fraction}"
        )));
    }
    let n_classes = class_of.iter().max().unwrap() + 1;
    let mut picked = Vec::new();
    for c in 0..n_classes {
        let members: Vec<usize> = (0..class_of.len()).filter(|&i| class_of[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        let keep = libm::ceil(fraction * members.len() as f64) as usize;
        let keep = keep.clamp(1, members.len());
        let mut rng = rng::stream_from_seed(rng::derive_seed(
            seed,
            &[stream::FRACTION, c as u64],
        ));
        for p in rng::sample_distinct(&mut rng, members.len(), keep) {
            picked.push(members[p]);
        }
    }
    picked.sort_unstable();
    Ok(picked)
}

/// Seeded stratified three-way split into (train, val, test) index lists.
/// Per class: `round(frac * n)` (at least 1) go to test, then to val, and
/// the remainder to train; every class must keep at least one training
/// example. Outputs are sorted.
pub fn stratified_split(
    class_of: &[usize],
    val_fraction: f64,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    if class_of.is_empty() {
        return Err(Error::Contract(String::from("empty class list")));
    }
    for (name, f) in [("val_fraction", val_fraction), ("test_fraction", test_fraction)] {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Contract(format!("{name} must be in (0, 1), got {f}")));
        }
    }
    let n_classes = class_of.iter().max().unwrap() + 1;
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for c in 0..n_classes {
        let mut members: Vec<usize> =
            (0..class_of.len()).filter(|&i| class_of[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        let mut rng =
            rng::stream_from_seed(rng::derive_seed(seed, &[stream::SPLIT, c as u64]));
        rng::shuffle(&mut rng, &mut members);
        let n = members.len();
        let n_test = (libm::round(test_fraction * n as f64) as usize).max(1);
        let n_val = (libm::round(val_fraction * n as f64) as usize).max(1);
        if n_test + n_val >= n {
            return Err(Error::Contract(format!(
                "class {c} has {n} examples, too few for val {n_val} + test {n_test} + train"
            )));
        }
        test.extend_from_slice(&members[..n_test]);
        val.extend_from_slice(&members[n_test..n_test + n_val]);
        train.extend_from_slice(&members[n_test + n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok((train, val, test))
}

/// Head-training hyperparameters (linear probe; also reused by the joint
/// fine-tuning stage).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    /// Adam learning rate.
    pub learning_rate: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
    /// Examples per step.
    pub batch_size: usize,
    /// Epochs to train; the best validation epoch wins.
    pub max_epochs: usize,
    /// Plateau annealing factor.
    pub anneal_factor: f64,
    /// Plateau patience, in epochs.
    pub anneal_patience: usize,
    /// Dropout probability on the head input during training.
    pub dropout: f64,
    /// Seed for head init, shuffling, and dropout masks.
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            learning_rate: 1e-3,
            weight_decay: 1e-6,
            batch_size: 32,
            max_epochs: 30,
            anneal_factor: 0.5,
            anneal_patience: 3,
            dropout: 0.2,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    /// Checks hyperparameter ranges.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Contract(String::from(
                "head training needs positive learning rate and non-negative decay",
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Contract(String::from(
                "batch_size and max_epochs must be positive",
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Contract(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.anneal_factor > 0.0 && self.anneal_factor <= 1.0) || self.anneal_patience == 0 {
            return Err(Error::Contract(String::from(
                "invalid plateau schedule for head training",
            )));
        }
        Ok(())
    }
}

/// Linear classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    /// Weights, `feature_width x n_labels`.
    pub w: Matrix,
    /// Bias row, `1 x n_labels`.
    pub b: Matrix,
}

impl LinearHead {
    /// Xavier-initialized head for `width` features and `n_labels` outputs.
    pub fn init(width: usize, n_labels: usize, seed: u64) -> Self {
        let mut w = Matrix::zeros(width, n_labels);
        let bound = libm::sqrt(6.0 / (width + n_labels) as f64);
        let mut rng = rng::stream_from_seed(rng::derive_seed(
            seed,
            &[stream::HEAD, HEAD_INIT],
        ));
        for x in w.data_mut() {
            *x = rng::uniform_in(&mut rng, -bound, bound);
        }
        LinearHead {
            w,
            b: Matrix::zeros(1, n_labels),
        }
    }

    /// Logits for a feature matrix.
    pub fn logits(&self, features: &Matrix) -> Matrix {
        let mut out = features.matmul(&self.w);
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                let v = out.get(r, c) + self.b.get(0, c);
                out.set(r, c, v);
            }
        }
        out
    }
}

/// Test-set metrics of a trained classifier, with the validation metric
/// that selected it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierMetrics {
    /// Multi-class: argmax accuracy. Multi-label: mean per-entry accuracy
    /// at threshold 0.5.
    pub accuracy: f64,
    /// Mean one-vs-rest AUC over label columns.
    pub macro_auc: f64,
    /// Best validation metric seen during head selection.
    pub best_val_metric: f64,
}

fn softmax_rows_pure(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_slice_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

fn sigmoid_all(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for v in out.data_mut() {
        *v = 1.0 / (1.0 + libm::exp(-*v));
    }
    out
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Mean one-vs-rest AUC over columns; errors when any column lacks both
/// classes (degenerate label distribution).
pub fn macro_auc(scores: &Matrix, labels: &Matrix) -> Result<f64> {
    if scores.rows() != labels.rows() || scores.cols() != labels.cols() {
        return Err(Error::Contract(String::from(
            "macro AUC needs aligned scores and labels",
        )));
    }
    let mut total = 0.0;
    for c in 0..labels.cols() {
        let col_scores: Vec<f64> = (0..scores.rows()).map(|r| scores.get(r, c)).collect();
        let col_labels: Vec<bool> = (0..labels.rows()).map(|r| labels.get(r, c) > 0.5).collect();
        let col_auc = auc(&col_scores, &col_labels).map_err(|_| Error::Contract(format!(
            "label column {c} is degenerate: needs both positives and negatives"
        )))?;
        total += col_auc;
    }
    Ok(total / labels.cols() as f64)
}

/// Accuracy and macro AUC of a head on a feature matrix.
pub fn evaluate_head(
    head: &LinearHead,
    features: &Matrix,
    labels: &Matrix,
    multi_label: bool,
) -> Result<(f64, f64)> {
    let logits = head.logits(features);
    if multi_label {
        let probs = sigmoid_all(&logits);
        let mut correct = 0usize;
        for r in 0..labels.rows() {
            for c in 0..labels.cols() {
                if (probs.get(r, c) > 0.5) == (labels.get(r, c) > 0.5) {
                    correct += 1;
                }
            }
        }
        let accuracy = correct as f64 / (labels.rows() * labels.cols()) as f64;
        Ok((accuracy, macro_auc(&probs, labels)?))
    } else {
        let probs = softmax_rows_pure(&logits);
        let correct = (0..labels.rows())
            .filter(|&r| argmax(probs.row_slice(r)) == argmax(labels.row_slice(r)))
            .count();
        let accuracy = correct as f64 / labels.rows() as f64;
        Ok((accuracy, macro_auc(&probs, labels)?))
    }
}

/// Inverted-dropout copy of `rows` of `features`: kept entries scale by
/// `1/(1-p)`, dropped entries become zero.
fn dropout_batch(
    features: &Matrix,
    rows: &[usize],
    p: f64,
    rng: &mut impl rand_core::RngCore,
) -> Matrix {
    let mut out = Matrix::zeros(rows.len(), features.cols());
    let keep = 1.0 - p;
    for (r, &src) in rows.iter().enumerate() {
        for c in 0..features.cols() {
            let v = features.get(src, c);
            let kept = if p == 0.0 {
                v
            } else if rng::bernoulli(rng, keep) {
                v / keep
            } else {
                0.0
            };
            out.set(r, c, kept);
        }
    }
    out
}

/// One Adam step of the head on a (possibly dropout-masked) feature batch.
fn head_step(
    head_params: &mut ParamSet,
    adam: &mut AdamState,
    masked: Matrix,
    labels: &Matrix,
    rows: &[usize],
    multi_label: bool,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    let mut tape = crate::graph::Tape::new();
    let x = tape.constant(masked);
    let w = tape.parameter(head_params["head.w"].clone());
    let b = tape.parameter(head_params["head.b"].clone());
    let xw = tape.matmul(x, w);
    let logits = tape.add_row_broadcast(xw, b);
    let per_item = if multi_label {
        let n_labels = labels.cols();
        let mut cols = Vec::with_capacity(n_labels);
        for c in 0..n_labels {
            let col = tape.slice_cols(logits, c, c + 1);
            let targets: Vec<f64> = rows.iter().map(|&r| labels.get(r, c)).collect();
            cols.push(tape.bce_with_logits(col, targets));
        }
        tape.concat_cols(cols)
    } else {
        let targets: Vec<usize> = rows.iter().map(|&r| argmax(labels.row_slice(r))).collect();
        tape.cross_entropy_rows(logits, targets)
    };
    let loss = tape.mean_all(per_item);
    let grads = tape.backward(loss);
    let mut grad_map = GradMap::new();
    let shape_w = &head_params["head.w"];
    let shape_b = &head_params["head.b"];
    grad_map.insert(
        String::from("head.w"),
        match grads.get(w) {
            Some(d) => Matrix::from_vec(shape_w.rows(), shape_w.cols(), d.to_vec()),
            None => Matrix::zeros(shape_w.rows(), shape_w.cols()),
        },
    );
    grad_map.insert(
        String::from("head.b"),
        match grads.get(b) {
            Some(d) => Matrix::from_vec(shape_b.rows(), shape_b.cols(), d.to_vec()),
            None => Matrix::zeros(shape_b.rows(), shape_b.cols()),
        },
    );
    adam.apply(head_params, &grad_map, lr, weight_decay, &BTreeSet::new())
}

fn head_param_set(head: &LinearHead) -> ParamSet {
    let mut p = ParamSet::new();
    p.insert(String::from("head.w"), head.w.clone());
    p.insert(String::from("head.b"), head.b.clone());
    p
}

fn head_from_params(p: &ParamSet) -> LinearHead {
    LinearHead {
        w: p["head.w"].clone(),
        b: p["head.b"].clone(),
    }
}

/// Trains a linear head on fixed features with Adam, dropout, and plateau
/// annealing; selects the epoch with the best validation metric (accuracy
/// for multi-class, macro AUC for multi-label). Returns the best head and
/// its validation metric.
pub fn train_linear_head(
    f_train: &Matrix,
    y_train: &Matrix,
    f_val: &Matrix,
    y_val: &Matrix,
    multi_label: bool,
    cfg: &ProbeConfig,
) -> Result<(LinearHead, f64)> {
    cfg.validate()?;
    if f_train.rows() != y_train.rows() || f_train.rows() == 0 {
        return Err(Error::Contract(String::from(
            "head training requires aligned, non-empty features and labels",
        )));
    }
    if f_val.rows() != y_val.rows() || f_val.rows() == 0 {
        return Err(Error::Contract(String::from(
            "head training requires a non-empty validation set",
        )));
    }
    let head = LinearHead::init(f_train.cols(), y_train.cols(), cfg.seed);
    let mut params = head_param_set(&head);
    let mut adam = AdamState::new(&params);
    let mut plateau =
        PlateauSchedule::new(cfg.learning_rate, cfg.anneal_factor, cfg.anneal_patience);
    let mut shuffle_rng = rng::stream_from_seed(rng::derive_seed(
        cfg.seed,
        &[stream::HEAD, HEAD_SHUFFLE],
    ));
    let mut dropout_rng = rng::stream_from_seed(rng::derive_seed(
        cfg.seed,
        &[stream::HEAD, HEAD_DROPOUT],
    ));
    let mut order: Vec<usize> = (0..f_train.rows()).collect();
    let mut best_metric = f64::NEG_INFINITY;
    let mut best = head_from_params(&params);
    for _ in 0..cfg.max_epochs {
        rng::shuffle(&mut shuffle_rng, &mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let masked = dropout_batch(f_train, chunk, cfg.dropout, &mut dropout_rng);
            head_step(
                &mut params,
                &mut adam,
                masked,
                y_train,
                chunk,
                multi_label,
                plateau.lr(),
                cfg.weight_decay,
            )?;
        }
        let candidate = head_from_params(&params);
        let (acc, mauc) = evaluate_head(&candidate, f_val, y_val, multi_label)?;
        let metric = if multi_label { mauc } else { acc };
        if metric > best_metric {
            best_metric = metric;
            best = candidate;
        }
        plateau.observe(-metric);
    }
    Ok((best, best_metric))
}

/// Per-column standardization statistics fitted on training features.
struct FeatureScaler {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl FeatureScaler {
    /// Fits mean and standard deviation per column. Constant columns get an
    /// inverse std of zero so they standardize to exactly zero.
    fn fit(features: &Matrix) -> FeatureScaler {
        let (rows, cols) = (features.rows(), features.cols());
        let mut mean = vec![0.0; cols];
        for r in 0..rows {
            for c in 0..cols {
                mean[c] += features.get(r, c);
            }
        }
        for m in &mut mean {
            *m /= rows as f64;
        }
        let mut var = vec![0.0; cols];
        for r in 0..rows {
            for c in 0..cols {
                let d = features.get(r, c) - mean[c];
                var[c] += d * d;
            }
        }
        let inv_std = var
            .iter()
            .map(|&v| {
                let sd = libm::sqrt(v / rows as f64);
                if sd > 1e-12 {
                    1.0 / sd
                } else {
                    0.0
                }
            })
            .collect();
        FeatureScaler { mean, inv_std }
    }

    /// Returns a standardized copy of `features`.
    fn apply(&self, features: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(features.rows(), features.cols());
        for r in 0..features.rows() {
            for c in 0..features.cols() {
                out.set(r, c, (features.get(r, c) - self.mean[c]) * self.inv_std[c]);
            }
        }
        out
    }
}

/// Linear probe: freezes the encoder, computes `h_v` features for all three
/// sets once, standardizes them with train-split statistics, trains a linear
/// head on the train features, selects by validation metric, and reports
/// test metrics.
///
/// Standardization keeps the probe a measurement of the representation
/// rather than of optimizer conditioning: encoder features can ride on a
/// large shared component that dwarfs the class signal, which stalls
/// cross-entropy training without changing linear separability.
pub fn linear_probe(
    params: &ParamSet,
    model_cfg: &ModelConfig,
    train: &LabeledImageSet,
    val: &LabeledImageSet,
    test: &LabeledImageSet,
    cfg: &ProbeConfig,
) -> Result<ClassifierMetrics> {
    for set in [train, val, test] {
        set.validate()?;
        if set.labels.cols() != train.labels.cols() || set.multi_label != train.multi_label {
            return Err(Error::Contract(String::from(
                "probe sets must share label width and kind",
            )));
        }
    }
    let raw_train = encode_images(params, model_cfg, &train.images)?;
    let scaler = FeatureScaler::fit(&raw_train);
    let f_train = scaler.apply(&raw_train);
    let f_val = scaler.apply(&encode_images(params, model_cfg, &val.images)?);
    let f_test = scaler.apply(&encode_images(params, model_cfg, &test.images)?);
    let (head, best_val_metric) = train_linear_head(
        &f_train,
        &train.labels,
        &f_val,
        &val.labels,
        train.multi_label,
        cfg,
    )?;
    let (accuracy, mauc) = evaluate_head(&head, &f_test, &test.labels, test.multi_label)?;
    Ok(ClassifierMetrics {
        accuracy,
        macro_auc: mauc,
        best_val_metric,
    })
}

/// Fine-tuning hyperparameters: a fixed head-only warmup stage followed by
/// joint training under a plateau schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FineTuneConfig {
    /// Head-only warmup steps with the encoder frozen.
    pub warmup_steps: usize,
    /// Learning rate during warmup.
    pub head_learning_rate: f64,
    /// Joint-stage head and encoder configuration (its `max_epochs` may be
    /// zero to stop after warmup).
    pub joint: ProbeConfig,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            warmup_steps: 200,
            head_learning_rate: 1e-3,
            joint: ProbeConfig {
                learning_rate: 1e-4,
                max_epochs: 10,
                ..ProbeConfig::default()
            },
        }
    }
}

/// Fine-tuning result: test metrics plus the updated parameters (encoder
/// tensors trained jointly; every other tensor bitwise untouched).
pub struct FineTuneOutput {
    /// Test metrics under the selected checkpoint.
    pub metrics: ClassifierMetrics,
    /// Full parameter set with the fine-tuned image tower merged in.
    pub params: ParamSet,
    /// The trained classification head.
    pub head: LinearHead,
}

/// Two-stage fine-tuning. Stage 1 trains only the head for `warmup_steps`
/// on frozen-encoder features (the encoder is untouched by construction).
/// Stage 2 unfreezes the image tower and trains it jointly with the head,
/// selecting the epoch with the best validation metric. With
/// `joint.max_epochs == 0`, stage 2 is skipped and the warmed-up head is
/// evaluated directly.
pub fn fine_tune(
    params: &ParamSet,
    model_cfg: &ModelConfig,
    train: &LabeledImageSet,
    val: &LabeledImageSet,
    test: &LabeledImageSet,
    cfg: &FineTuneConfig,
) -> Result<FineTuneOutput> {
    for set in [train, val, test] {
        set.validate()?;
        if set.labels.cols() != train.labels.cols() || set.multi_label != train.multi_label {
            return Err(Error::Contract(String::from(
                "fine-tune sets must share label width and kind",
            )));
        }
    }
    if !(cfg.head_learning_rate > 0.0) {
        return Err(Error::Contract(String::from(
            "head_learning_rate must be positive",
        )));
    }
    // Validate the joint config up front even when stage 2 is skipped,
    // except for max_epochs which is allowed to be zero here.
    ProbeConfig {
        max_epochs: cfg.joint.max_epochs.max(1),
        ..cfg.joint
    }
    .validate()?;

    let multi_label = train.multi_label;
    let f_train = encode_images(params, model_cfg, &train.images)?;

    // Stage 1: head warmup on frozen features, fixed number of steps.
    let head = LinearHead::init(f_train.cols(), train.labels.cols(), cfg.joint.seed);
    let mut head_params = head_param_set(&head);
    let mut adam = AdamState::new(&head_params);
    let mut shuffle_rng = rng::stream_from_seed(rng::derive_seed(
        cfg.joint.seed,
        &[stream::HEAD, HEAD_SHUFFLE],
    ));
    let mut dropout_rng = rng::stream_from_seed(rng::derive_seed(
        cfg.joint.seed,
        &[stream::HEAD, HEAD_DROPOUT],
    ));
    let mut order: Vec<usize> = (0..f_train.rows()).collect();
    let mut cursor = order.len();
    for _ in 0..cfg.warmup_steps {
        if cursor + cfg.joint.batch_size > order.len() {
            rng::shuffle(&mut shuffle_rng, &mut order);
            cursor = 0;
        }
        let end = (cursor + cfg.joint.batch_size).min(order.len());
        let chunk: Vec<usize> = order[cursor..end].to_vec();
        cursor = end;
        let masked = dropout_batch(&f_train, &chunk, cfg.joint.dropout, &mut dropout_rng);
        head_step(
            &mut head_params,
            &mut adam,
            masked,
            &train.labels,
            &chunk,
            multi_label,
            cfg.head_learning_rate,
            cfg.joint.weight_decay,
        )?;
    }

    // Stage 2: joint training of the image tower and head.
    let mut joint = ParamSet::new();
    for (name, m) in params {
        if name.starts_with("img.conv") {
            joint.insert(name.clone(), m.clone());
        }
    }
    joint.extend(head_params.clone());
    let mut best_joint = joint.clone();
    let mut best_metric = {
        let candidate = head_from_params(&head_params);
        let f_val = encode_images(params, model_cfg, &val.images)?;
        let (acc, mauc) = evaluate_head(&candidate, &f_val, &val.labels, multi_label)?;
        if multi_label {
            mauc
        } else {
            acc
        }
    };

    if cfg.joint.max_epochs > 0 {
        let mut adam = AdamState::new(&joint);
        let mut plateau = PlateauSchedule::new(
            cfg.joint.learning_rate,
            cfg.joint.anneal_factor,
            cfg.joint.anneal_patience,
        );
        for _ in 0..cfg.joint.max_epochs {
            rng::shuffle(&mut shuffle_rng, &mut order);
            for chunk in order.chunks(cfg.joint.batch_size) {
                let mut tape = crate::graph::Tape::new();
                let bound = crate::model::bind_params(&mut tape, &joint, true);
                let mut rows = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    rows.push(image_tower(&mut tape, &bound, model_cfg, &train.images[i])?);
                }
                let h = tape.stack_rows(rows);
                // Dropout on the head input, as in the probe; the mask is a
                // constant, so gradients flow through kept entries only.
                let keep = 1.0 - cfg.joint.dropout;
                let mask_values: Vec<f64> = (0..chunk.len() * model_cfg.image_width())
                    .map(|_| {
                        if cfg.joint.dropout == 0.0 {
                            1.0
                        } else if rng::bernoulli(&mut dropout_rng, keep) {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let mask = tape.constant(Matrix::from_vec(
                    chunk.len(),
                    model_cfg.image_width(),
                    mask_values,
                ));
                let h = tape.mul(h, mask);
                let w = bound.node("head.w");
                let b = bound.node("head.b");
                let hw = tape.matmul(h, w);
                let logits = tape.add_row_broadcast(hw, b);
                let per_item = if multi_label {
                    let mut cols = Vec::with_capacity(train.labels.cols());
                    for c in 0..train.labels.cols() {
                        let col = tape.slice_cols(logits, c, c + 1);
                        let targets: Vec<f64> =
                            chunk.iter().map(|&r| train.labels.get(r, c)).collect();
                        cols.push(tape.bce_with_logits(col, targets));
                    }
                    tape.concat_cols(cols)
                } else {
                    let targets: Vec<usize> = chunk
                        .iter()
                        .map(|&r| argmax(train.labels.row_slice(r)))
                        .collect();
                    tape.cross_entropy_rows(logits, targets)
                };
                let loss = tape.mean_all(per_item);
                let grad_values = tape.backward(loss);
                let mut grads = GradMap::new();
                for (name, node) in bound.iter() {
                    let shape = &joint[name];
                    let g = match grad_values.get(node) {
                        Some(d) => Matrix::from_vec(shape.rows(), shape.cols(), d.to_vec()),
                        None => Matrix::zeros(shape.rows(), shape.cols()),
                    };
                    grads.insert(String::from(name), g);
                }
                adam.apply(&mut joint, &grads, plateau.lr(), cfg.joint.weight_decay, &BTreeSet::new())?;
            }
            let candidate = head_from_params(&joint);
            let f_val = encode_images(&joint, model_cfg, &val.images)?;
            let (acc, mauc) = evaluate_head(&candidate, &f_val, &val.labels, multi_label)?;
            let metric = if multi_label { mauc } else { acc };
            if metric > best_metric {
                best_metric = metric;
                best_joint = joint.clone();
            }
            plateau.observe(-metric);
        }
    }

    // Evaluate the selected checkpoint on the test set and merge the tuned
    // tower back into a full parameter set.
    let head = head_from_params(&best_joint);
    let f_test = encode_images(&best_joint, model_cfg, &test.images)?;
    let (accuracy, mauc) = evaluate_head(&head, &f_test, &test.labels, multi_label)?;
    let mut merged = params.clone();
    for (name, m) in &best_joint {
        if name.starts_with("img.conv") {
            merged.insert(name.clone(), m.clone());
        }
    }
    Ok(FineTuneOutput {
        metrics: ClassifierMetrics {
            accuracy,
            macro_auc: mauc,
            best_val_metric: best_metric,
        },
        params: merged,
        head,
    })
}
