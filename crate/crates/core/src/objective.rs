//! Training objectives over paired embeddings.
//!
//! # Bidirectional contrastive objective
//!
//! Given projected, paired embeddings `v_i` (image) and `u_i` (text) for a
//! batch of `n` pairs, the image→text loss for pair `i` is
//!
//! ```text
//! l_i(v→u) = -log( exp(<v_i, u_i>/t) / sum_k exp(<v_i, u_k>/t) )
//! ```
//!
//! where `<., .>` is cosine similarity and `t` the temperature; the
//! text→image loss swaps the roles. The batch loss is the mean of the convex
//! combination `w * l_i(v→u) + (1 - w) * l_i(u→v)`.
//!
//! # Binary pair-classification baseline
//!
//! The baseline replaces the ranking objective with a discriminator: both
//! tower representations are linearly mapped to a common width, concatenated,
//! and scored by a two-layer MLP trained with binary cross entropy to tell
//! real pairs from mismatched ones (one fake per real pair, built by swapping
//! in the text of a different, uniformly drawn pair). Only the towers and the
//! discriminator receive gradients; the projection heads stay at their
//! initialization under this objective.
//!
//! Losses come in two implementations with one contract: pure vectorized
//! functions over embedding matrices (used for validation and as test
//! oracles) and tape builders (used for gradients). Equivalence of the two is
//! enforced by tests.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::augment::{apply_transform, sample_transform, AugmentConfig};
use crate::data::{sample_sentence, PairedExample, TokenSequence};
use crate::graph::{NodeId, Tape};
use crate::image::GrayImage;
use crate::model::{
    bind_params, image_tower, projection, text_tower, Modality, ModelConfig, ParamSet,
};
use crate::rng::{self, stream};
use crate::tensor::{log_sum_exp, norm, Matrix};
use crate::{Error, Result};

/// Contrastive loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Softmax temperature `t`.
    pub temperature: f64,
    /// Weight `w` of the image→text direction, in `[0, 1]`.
    pub weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            temperature: 0.1,
            weight: 0.75,
        }
    }
}

impl LossConfig {
    /// Checks hyperparameter ranges.
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Contract(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(0.0..=1.0).contains(&self.weight) {
            return Err(Error::Contract(format!(
                "direction weight must be in [0, 1], got {}",
                self.weight
            )));
        }
        Ok(())
    }
}

/// Which objective drives pretraining.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    /// Bidirectional contrastive ranking loss.
    Contrastive,
    /// Binary real-vs-mismatched pair classification.
    Binary,
}

/// Scalar loss with its per-direction components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// Mean combined loss (the training objective).
    pub total: f64,
    /// Mean image→text component.
    pub image_to_text: f64,
    /// Mean text→image component.
    pub text_to_image: f64,
}

/// Cosine similarity of two equal-length vectors.
///
/// Zero-norm inputs are a hard error: embeddings that collapse to zero make
/// the similarity undefined and always indicate an upstream bug.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "cosine of mismatched lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Contract(String::from("cosine of empty vectors")));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 {
        return Err(Error::ZeroNorm {
            what: String::from("left cosine argument"),
        });
    }
    if nb == 0.0 {
        return Err(Error::ZeroNorm {
            what: String::from("right cosine argument"),
        });
    }
    Ok(crate::tensor::dot(a, b) / (na * nb))
}

fn check_embedding_batch(v: &Matrix, u: &Matrix) -> Result<()> {
    if v.rows() == 0 {
        return Err(Error::Contract(String::from("empty embedding batch")));
    }
    if v.rows() != u.rows() || v.cols() != u.cols() {
        return Err(Error::Contract(format!(
            "embedding batches must align: {}x{} vs {}x{}",
            v.rows(),
            v.cols(),
            u.rows(),
            u.cols()
        )));
    }
    Ok(())
}

/// Row-normalized copy; errors on zero rows.
fn normalize_rows(m: &Matrix, what: &str) -> Result<Matrix> {
    let mut out = m.clone();
    for r in 0..m.rows() {
        let n = m.row_norm(r);
        if n == 0.0 {
            return Err(Error::ZeroNorm {
                what: format!("{what} row {r}"),
            });
        }
        for x in out.row_slice_mut(r) {
            *x /= n;
        }
    }
    Ok(out)
}

/// Matrix of pairwise cosine similarities: `out[i][k] = cos(v_i, u_k)`.
pub fn pairwise_cosine(v: &Matrix, u: &Matrix) -> Result<Matrix> {
    if v.cols() != u.cols() {
        return Err(Error::Contract(format!(
            "pairwise cosine width mismatch: {} vs {}",
            v.cols(),
            u.cols()
        )));
    }
    let vn = normalize_rows(v, "image embedding")?;
    let un = normalize_rows(u, "text embedding")?;
    Ok(vn.matmul(&un.transpose()))
}

/// Per-pair image→text contrastive losses (length `n`).
pub fn info_nce_v_to_u(v: &Matrix, u: &Matrix, temperature: f64) -> Result<Vec<f64>> {
    check_embedding_batch(v, u)?;
    if !(temperature > 0.0) {
        return Err(Error::Contract(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let sims = pairwise_cosine(v, u)?;
    let n = sims.rows();
    let mut out = Vec::with_capacity(n);
    let mut row = Vec::with_capacity(n);
    for i in 0..n {
        row.clear();
        row.extend(sims.row_slice(i).iter().map(|s| s / temperature));
        out.push(log_sum_exp(&row) - row[i]);
    }
    Ok(out)
}

/// Per-pair text→image contrastive losses: the same loss with the roles of
/// the two embedding sets swapped.
pub fn info_nce_u_to_v(v: &Matrix, u: &Matrix, temperature: f64) -> Result<Vec<f64>> {
    info_nce_v_to_u(u, v, temperature)
}

/// Batch contrastive loss over projected embedding matrices.
pub fn contrastive_loss(v: &Matrix, u: &Matrix, cfg: &LossConfig) -> Result<LossBreakdown> {
    cfg.validate()?;
    let lv = info_nce_v_to_u(v, u, cfg.temperature)?;
    let lu = info_nce_u_to_v(v, u, cfg.temperature)?;
    let n = lv.len() as f64;
    let total = lv
        .iter()
        .zip(&lu)
        .map(|(a, b)| cfg.weight * a + (1.0 - cfg.weight) * b)
        .sum::<f64>()
        / n;
    Ok(LossBreakdown {
        total,
        image_to_text: lv.iter().sum::<f64>() / n,
        text_to_image: lu.iter().sum::<f64>() / n,
    })
}

/// Discriminator head shape for the binary baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinaryHeadConfig {
    /// Width both tower representations are mapped to before concatenation.
    pub common_dim: usize,
    /// Hidden width of the scoring MLP.
    pub hidden_dim: usize,
}

impl Default for BinaryHeadConfig {
    fn default() -> Self {
        BinaryHeadConfig {
            common_dim: 64,
            hidden_dim: 64,
        }
    }
}

/// Tensor names of the binary discriminator head.
const BIN_TENSORS: [&str; 4] = ["bin.img.w", "bin.txt.w", "bin.mlp.w1", "bin.mlp.w2"];

/// Initializes the discriminator tensors and merges them into `params`.
/// Initialization follows the same per-name Xavier scheme as the model.
pub fn init_binary_head(
    params: &mut ParamSet,
    model_cfg: &ModelConfig,
    head_cfg: &BinaryHeadConfig,
    seed: u64,
) -> Result<()> {
    if head_cfg.common_dim == 0 || head_cfg.hidden_dim == 0 {
        return Err(Error::Contract(String::from(
            "binary head widths must be positive",
        )));
    }
    let shapes: [(&str, usize, usize); 4] = [
        ("bin.img.w", model_cfg.image_width(), head_cfg.common_dim),
        ("bin.txt.w", model_cfg.text_width(), head_cfg.common_dim),
        ("bin.mlp.w1", 2 * head_cfg.common_dim, head_cfg.hidden_dim),
        ("bin.mlp.w2", head_cfg.hidden_dim, 1),
    ];
    for (name, rows, cols) in shapes {
        let mut m = Matrix::zeros(rows, cols);
        let bound = libm::sqrt(6.0 / (rows + cols) as f64);
        let mut rng = rng::stream_from_seed(rng::derive_seed(
            seed,
            &[stream::INIT, rng::hash_label(name)],
        ));
        for w in m.data_mut() {
            *w = rng::uniform_in(&mut rng, -bound, bound);
        }
        params.insert(String::from(name), m);
    }
    Ok(())
}

/// True when `params` contains the discriminator tensors.
pub fn has_binary_head(params: &ParamSet) -> bool {
    BIN_TENSORS.iter().all(|n| params.contains_key(*n))
}

/// Builds discriminator logits on the tape from stacked tower
/// representations (`m x image_width`, `m x text_width`) → `(m x 1)`.
fn binary_logits_node(
    tape: &mut Tape,
    bound: &crate::model::BoundParams,
    h_v: NodeId,
    h_u: NodeId,
) -> NodeId {
    let wv = bound.node("bin.img.w");
    let wu = bound.node("bin.txt.w");
    let a = tape.matmul(h_v, wv);
    let b = tape.matmul(h_u, wu);
    let joint = tape.concat_cols(alloc::vec![a, b]);
    let w1 = bound.node("bin.mlp.w1");
    let w2 = bound.node("bin.mlp.w2");
    let hidden = tape.matmul(joint, w1);
    let hidden = tape.relu(hidden);
    tape.matmul(hidden, w2)
}

/// Mean binary cross entropy of the discriminator over rows of tower
/// representations with real/fake labels. Pure forward (no gradients).
pub fn binary_pair_loss(
    params: &ParamSet,
    h_v: &Matrix,
    h_u: &Matrix,
    is_real: &[bool],
) -> Result<f64> {
    if !has_binary_head(params) {
        return Err(Error::Contract(String::from(
            "parameter set lacks the binary discriminator head",
        )));
    }
    if h_v.rows() != h_u.rows() || h_v.rows() != is_real.len() || h_v.rows() == 0 {
        return Err(Error::Contract(String::from(
            "binary loss requires aligned, non-empty rows and labels",
        )));
    }
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, params, false);
    let hv = tape.constant(h_v.clone());
    let hu = tape.constant(h_u.clone());
    let logits = binary_logits_node(&mut tape, &bound, hv, hu);
    let targets = is_real.iter().map(|&r| if r { 1.0 } else { 0.0 }).collect();
    let bce = tape.bce_with_logits(logits, targets);
    let mean = tape.mean_all(bce);
    Ok(tape.scalar(mean))
}

/// One training view per pair: the augmented image and the sampled sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPair {
    /// Augmented image view.
    pub image: GrayImage,
    /// Sampled sentence view.
    pub text: TokenSequence,
}

/// A batch of prepared views plus, for the binary objective, the mismatched
/// text assignment (`fake_text_of[i]` is the index of the pair whose text
/// fakes pair `i`).
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedBatch {
    /// Views in batch order.
    pub pairs: Vec<PreparedPair>,
    /// Mismatch assignment; empty under the contrastive objective.
    pub fake_text_of: Vec<usize>,
}

/// Prepares the two views of one pair from its own seed. This is the unit of
/// parallel work: determinism follows from seeds owned per (step, pair), not
/// from execution order.
pub fn prepare_pair(
    example: &PairedExample,
    aug: &AugmentConfig,
    seed: u64,
) -> PreparedPair {
    let mut rng = rng::stream_from_seed(seed);
    let instance = sample_transform(aug, &mut rng);
    let image = apply_transform(&example.image, &instance, aug.output_size);
    let text = sample_sentence(example, &mut rng).clone();
    PreparedPair { image, text }
}

/// Seed of the view preparation for `pair_index` within `step`, derived from
/// the run's augmentation stream.
pub fn pair_seed(augment_seed: u64, step: u64, pair_index: u64) -> u64 {
    rng::derive_seed(augment_seed, &[step, pair_index])
}

/// Draws a mismatch assignment for the binary objective: for each of `n`
/// pairs, a uniformly chosen index different from itself.
pub fn sample_fake_assignment(n: usize, rng: &mut impl RngCore) -> Vec<usize> {
    assert!(n >= 2, "mismatched pairs need at least two examples");
    (0..n)
        .map(|i| {
            let j = rng::uniform_index(rng, n - 1);
            if j >= i {
                j + 1
            } else {
                j
            }
        })
        .collect()
}

/// Prepares a full batch serially. `seed` is the batch preparation seed
/// (see [`pair_seed`]; item `i` uses `pair_seed(seed_base, step, i)` when the
/// caller manages steps — this convenience derives per-item seeds directly).
pub fn prepare_batch(
    examples: &[&PairedExample],
    aug: &AugmentConfig,
    objective: ObjectiveKind,
    seed: u64,
) -> PreparedBatch {
    let pairs = examples
        .iter()
        .enumerate()
        .map(|(i, e)| prepare_pair(e, aug, rng::derive_seed(seed, &[i as u64])))
        .collect();
    let fake_text_of = match objective {
        ObjectiveKind::Contrastive => Vec::new(),
        ObjectiveKind::Binary => {
            let mut rng =
                rng::stream_from_seed(rng::derive_seed(seed, &[stream::FAKE_PAIR]));
            sample_fake_assignment(examples.len(), &mut rng)
        }
    };
    PreparedBatch {
        pairs,
        fake_text_of,
    }
}

/// Gradient map aligned with a parameter set: same keys, same shapes.
pub type GradMap = BTreeMap<String, Matrix>;

/// Loss value and gradients of one prepared batch.
pub struct BatchGradients {
    /// Scalar training loss.
    pub loss: f64,
    /// Per-direction components (contrastive objective only).
    pub breakdown: Option<LossBreakdown>,
    /// Gradient per parameter tensor; tensors outside the active objective's
    /// graph get exact zeros.
    pub grads: GradMap,
}

/// Builds the full objective graph (towers included) for a prepared batch on
/// an existing tape with already-bound parameters. Returns the scalar loss
/// node and, for the contrastive objective, the per-direction breakdown.
///
/// This is the single construction both the gradient path and the pure
/// forward path go through.
pub fn graph_loss(
    tape: &mut Tape,
    bound: &crate::model::BoundParams,
    params: &ParamSet,
    model_cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    objective: ObjectiveKind,
    batch: &PreparedBatch,
) -> Result<(NodeId, Option<LossBreakdown>)> {
    loss_cfg.validate()?;
    if batch.pairs.is_empty() {
        return Err(Error::Contract(String::from("empty batch")));
    }
    let mut hv = Vec::with_capacity(batch.pairs.len());
    let mut hu = Vec::with_capacity(batch.pairs.len());
    for pair in &batch.pairs {
        hv.push(image_tower(tape, bound, model_cfg, &pair.image)?);
        hu.push(text_tower(tape, bound, model_cfg, &pair.text)?);
    }

    match objective {
        ObjectiveKind::Contrastive => {
            let h_v = tape.stack_rows(hv);
            let h_u = tape.stack_rows(hu);
            let v = projection(tape, bound, model_cfg, Modality::Image, h_v);
            let u = projection(tape, bound, model_cfg, Modality::Text, h_u);
            let vn = tape.l2_normalize_rows(v, "image embedding")?;
            let un = tape.l2_normalize_rows(u, "text embedding")?;
            let ut = tape.transpose(un);
            let sims = tape.matmul(vn, ut);
            let logits_vu = tape.scale(sims, 1.0 / loss_cfg.temperature);
            let sims_t = tape.transpose(sims);
            let logits_uv = tape.scale(sims_t, 1.0 / loss_cfg.temperature);
            let l_vu = tape.cross_entropy_diag(logits_vu);
            let l_uv = tape.cross_entropy_diag(logits_uv);
            let wv = tape.scale(l_vu, loss_cfg.weight);
            let wu = tape.scale(l_uv, 1.0 - loss_cfg.weight);
            let combined = tape.add(wv, wu);
            let total = tape.mean_all(combined);
            let n = batch.pairs.len() as f64;
            let breakdown = LossBreakdown {
                total: tape.scalar(total),
                image_to_text: tape.value(l_vu).data().iter().sum::<f64>() / n,
                text_to_image: tape.value(l_uv).data().iter().sum::<f64>() / n,
            };
            Ok((total, Some(breakdown)))
        }
        ObjectiveKind::Binary => {
            if !has_binary_head(params) {
                return Err(Error::Contract(String::from(
                    "binary objective requires the discriminator head; \
                     initialize it alongside the model",
                )));
            }
            let n = batch.pairs.len();
            if batch.fake_text_of.len() != n {
                return Err(Error::Contract(String::from(
                    "binary objective requires one mismatch index per pair",
                )));
            }
            // Real rows reuse the tower outputs; fake rows pair each image
            // with a different pair's text. Representations are shared
            // nodes, so each tower runs once per example.
            let mut v_rows = Vec::with_capacity(2 * n);
            let mut u_rows = Vec::with_capacity(2 * n);
            let mut targets = Vec::with_capacity(2 * n);
            for i in 0..n {
                v_rows.push(hv[i]);
                u_rows.push(hu[i]);
                targets.push(1.0);
            }
            for i in 0..n {
                let j = batch.fake_text_of[i];
                if j == i || j >= n {
                    return Err(Error::Contract(format!(
                        "mismatch index {j} invalid for pair {i}"
                    )));
                }
                v_rows.push(hv[i]);
                u_rows.push(hu[j]);
                targets.push(0.0);
            }
            let h_v = tape.stack_rows(v_rows);
            let h_u = tape.stack_rows(u_rows);
            let logits = binary_logits_node(tape, bound, h_v, h_u);
            let bce = tape.bce_with_logits(logits, targets);
            let total = tape.mean_all(bce);
            Ok((total, None))
        }
    }
}

/// Differentiates the objective over a prepared batch.
///
/// Augmentation happened during preparation, outside the differentiated
/// graph; this function is deterministic given its inputs.
pub fn batch_gradients(
    params: &ParamSet,
    model_cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    objective: ObjectiveKind,
    batch: &PreparedBatch,
) -> Result<BatchGradients> {
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, params, true);
    let (loss_node, breakdown) =
        graph_loss(&mut tape, &bound, params, model_cfg, loss_cfg, objective, batch)?;
    let loss = tape.scalar(loss_node);
    let grad_values = tape.backward(loss_node);
    let mut grads = GradMap::new();
    for (name, node) in bound.iter() {
        let shape = &params[name];
        let g = match grad_values.get(node) {
            Some(data) => Matrix::from_vec(shape.rows(), shape.cols(), data.to_vec()),
            None => Matrix::zeros(shape.rows(), shape.cols()),
        };
        grads.insert(String::from(name), g);
    }
    Ok(BatchGradients {
        loss,
        breakdown,
        grads,
    })
}

/// Objective value over a prepared batch without gradients: parameters are
/// bound as constants, so no tape bookkeeping happens beyond the forward.
/// Shares graph construction with [`batch_gradients`] by contract.
pub fn batch_loss(
    params: &ParamSet,
    model_cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    objective: ObjectiveKind,
    batch: &PreparedBatch,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, params, false);
    let (loss_node, _) =
        graph_loss(&mut tape, &bound, params, model_cfg, loss_cfg, objective, batch)?;
    Ok(tape.scalar(loss_node))
}

/// Convenience entry point: samples views for `examples` from `rng`, then
/// differentiates the objective over them.
pub fn loss_gradients(
    params: &ParamSet,
    model_cfg: &ModelConfig,
    aug_cfg: &AugmentConfig,
    loss_cfg: &LossConfig,
    objective: ObjectiveKind,
    examples: &[&PairedExample],
    rng: &mut impl RngCore,
) -> Result<BatchGradients> {
    let batch = prepare_batch(examples, aug_cfg, objective, rng.next_u64());
    batch_gradients(params, model_cfg, loss_cfg, objective, &batch)
}

/// Projected embedding matrices `(V, U)` for aligned image and text views;
/// the pure-forward counterpart of the contrastive graph, used for
/// validation losses and evaluation.
pub fn project_views(
    params: &ParamSet,
    model_cfg: &ModelConfig,
    images: &[GrayImage],
    texts: &[TokenSequence],
) -> Result<(Matrix, Matrix)> {
    if images.len() != texts.len() || images.is_empty() {
        return Err(Error::Contract(String::from(
            "project_views requires aligned, non-empty views",
        )));
    }
    let d = model_cfg.projection_dim;
    let mut v = Matrix::zeros(images.len(), d);
    let mut u = Matrix::zeros(texts.len(), d);
    for i in 0..images.len() {
        let hv = crate::model::encode_image(params, model_cfg, &images[i])?;
        let hu = crate::model::encode_text(params, model_cfg, &texts[i])?;
        let vi = crate::model::project(params, model_cfg, Modality::Image, &hv)?;
        let ui = crate::model::project(params, model_cfg, Modality::Text, &hu)?;
        v.row_slice_mut(i).copy_from_slice(&vi);
        u.row_slice_mut(i).copy_from_slice(&ui);
    }
    Ok((v, u))
}
