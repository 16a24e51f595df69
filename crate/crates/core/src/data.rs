//! Paired image–text corpus types and a synthetic corpus generator.
//!
//! # Corpus model
//!
//! A corpus is a list of [`PairedExample`]s: one grayscale image paired with a
//! multi-sentence text report, tokenized against a shared [`Vocabulary`].
//! Class labels are deliberately *not* part of the pair — pretraining never
//! sees them — and travel separately (see [`SyntheticCorpus::labels`]).
//!
//! # Synthetic corpus design
//!
//! The generator produces a classed corpus whose class signal lives in
//! texture statistics — the kind of signal pooled convolutional features can
//! represent — rather than in fine spatial arrangement, which global average
//! pooling would destroy:
//!
//! * Every image is a 4x4 grid of square tiles. The 12 border tiles form a
//!   fixed ring shared by *all* classes (a class-free distractor frame).
//! * The central 2x2 tile block carries the class texture: a sinusoidal
//!   pattern defined by an orientation kind (horizontal, vertical,
//!   checkerboard, plaid) and a wavelength band (1x, 0.5x, 2x the tile
//!   side). Class `c` maps to kind `c % 4` and band `c / 4`, giving at most
//!   4 x 3 = 12 classes.
//! * Flips shift a sinusoid's phase but never change its orientation or
//!   wavelength, so flip augmentation is label-preserving for every class
//!   (no kind maps onto another kind under mirroring).
//! * Per-example variation is i.i.d. Gaussian pixel noise, clamped to
//!   `[0, 1]`; with `noise_std = 0` all images of a class are identical.
//!
//! Reports are sampled sentences mixing class-specific keywords with a shared
//! filler pool, so text carries the same class signal in token statistics.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::image::GrayImage;
use crate::rng::{self, stream};
use crate::{Error, Result};

/// Reserved vocabulary index for out-of-vocabulary tokens.
pub const UNKNOWN_TOKEN: usize = 0;

/// Minimum total token count for [`filter_pairs`]' default threshold.
pub const DEFAULT_MIN_TOKENS: usize = 3;

/// A tokenized sentence: vocabulary indices in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    indices: Vec<usize>,
}

impl TokenSequence {
    /// Wraps a list of vocabulary indices.
    pub fn from_indices(indices: Vec<usize>) -> Self {
        TokenSequence { indices }
    }

    /// The indices in sentence order.
    #[inline]
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Token count.
    #[inline]
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    /// True for an empty sentence.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// One image paired with its tokenized report.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedExample {
    /// Opaque identifier (file stem for on-disk corpora).
    pub id: String,
    /// The image view source.
    pub image: GrayImage,
    /// Report sentences; each sentence is drawn from independently as a text
    /// view.
    pub sentences: Vec<TokenSequence>,
}

impl PairedExample {
    /// Total token count across all sentences.
    pub fn total_tokens(&self) -> usize {
        self.sentences.iter().map(TokenSequence::len).sum()
    }
}

/// Token-string to index mapping with a reserved unknown slot at index 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    /// An empty vocabulary containing only the unknown marker.
    pub fn new() -> Self {
        let mut v = Vocabulary {
            words: Vec::new(),
            index: BTreeMap::new(),
        };
        v.words.push(String::from("<unk>"));
        v
    }

    /// Builds a vocabulary from token lists in first-occurrence order, which
    /// makes construction deterministic for a fixed corpus.
    pub fn build<'a, I>(token_lists: I) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut v = Vocabulary::new();
        for list in token_lists {
            for tok in list {
                v.intern(tok);
            }
        }
        v
    }

    /// Adds `word` if absent and returns its index.
    pub fn intern(&mut self, word: &str) -> usize {
        if let Some(&i) = self.index.get(word) {
            return i;
        }
        let i = self.words.len();
        self.words.push(String::from(word));
        self.index.insert(String::from(word), i);
        i
    }

    /// Index of `word`, or [`UNKNOWN_TOKEN`] when absent.
    pub fn lookup(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNKNOWN_TOKEN)
    }

    /// Word at `index`, if any.
    pub fn word(&self, index: usize) -> Option<&str> {
        self.words.get(index).map(String::as_str)
    }

    /// Number of entries including the unknown marker; this is the embedding
    /// table height.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    /// Always false: the unknown marker is present from construction.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Encodes tokens, mapping unknown words to [`UNKNOWN_TOKEN`].
    pub fn encode(&self, tokens: &[String]) -> TokenSequence {
        TokenSequence::from_indices(tokens.iter().map(|t| self.lookup(t)).collect())
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary::new()
    }
}

/// Splits a raw text line into lowercase tokens.
///
/// Punctuation characters are removed (not replaced by spaces, so hyphenated
/// forms join), the remainder is lowercased and split on whitespace, and
/// empty fragments are dropped.
pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace()
        .filter_map(|raw| {
            let cleaned: String = raw
                .chars()
                .filter(|c| !c.is_ascii_punctuation())
                .flat_map(char::to_lowercase)
                .collect();
            if cleaned.is_empty() {
                None
            } else {
                Some(cleaned)
            }
        })
        .collect()
}

/// Drops examples whose reports carry fewer than `min_tokens` tokens in
/// total, preserving order. Pairs with empty reports are always dropped for
/// any `min_tokens >= 1`.
pub fn filter_pairs(examples: Vec<PairedExample>, min_tokens: usize) -> Vec<PairedExample> {
    examples
        .into_iter()
        .filter(|e| e.total_tokens() >= min_tokens)
        .collect()
}

/// Uniformly samples one sentence of `example`'s report.
///
/// Panics if the report has no sentences; corpora must be passed through
/// [`filter_pairs`] first.
pub fn sample_sentence<'a>(example: &'a PairedExample, rng: &mut impl RngCore) -> &'a TokenSequence {
    assert!(
        !example.sentences.is_empty(),
        "example {:?} has no sentences; filter the corpus first",
        example.id
    );
    &example.sentences[rng::uniform_index(rng, example.sentences.len())]
}

/// Parameters of the synthetic paired corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// Number of image/text classes; between 2 and 12.
    pub n_classes: usize,
    /// Number of image–report pairs.
    pub n_pairs: usize,
    /// Square image side length in pixels; must be divisible by 4.
    pub image_size: usize,
    /// Standard deviation of per-pixel Gaussian noise (clamped to `[0, 1]`
    /// after addition). Zero makes all images of a class identical.
    pub noise_std: f64,
    /// Inclusive range for the number of sentences per report.
    pub sentences_per_report: (usize, usize),
    /// Class-specific keyword pool size per class.
    pub vocab_per_class: usize,
    /// Shared filler word pool size.
    pub shared_vocab: usize,
    /// Generation seed.
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_classes: 8,
            n_pairs: 2000,
            image_size: 32,
            noise_std: 0.08,
            sentences_per_report: (3, 6),
            vocab_per_class: 12,
            shared_vocab: 20,
            seed: 0,
        }
    }
}

/// A generated corpus: examples plus the sidecar information pretraining
/// never sees (labels) or that downstream stages need (vocabulary, names).
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    /// The paired examples, in generation order (classes round-robin).
    pub examples: Vec<PairedExample>,
    /// Class index of each example.
    pub labels: Vec<usize>,
    /// Vocabulary the sentences are encoded against.
    pub vocabulary: Vocabulary,
    /// Display names, `class0..classN-1`.
    pub class_names: Vec<String>,
}

/// Inclusive sentence-length range for synthetic sentences.
const SENTENCE_LEN: (usize, usize) = (4, 8);
/// Probability that a report token comes from the class pool rather than the
/// shared pool.
const CLASS_TOKEN_PROB: f64 = 0.65;
/// Texture amplitude around the 0.5 gray level.
const TILE_AMPLITUDE: f64 = 0.25;
/// Tiles per image side.
const GRID: usize = 4;
/// Number of texture orientation kinds.
const TEXTURE_KINDS: usize = 4;
/// Wavelength multipliers (in tile-side units) for the class bands.
const WAVELENGTH_FACTORS: [f64; 3] = [1.0, 0.5, 2.0];

/// Maximum class count: one class per (orientation kind, wavelength band).
pub const MAX_SYNTHETIC_CLASSES: usize = TEXTURE_KINDS * WAVELENGTH_FACTORS.len();

/// Value in `[-1, 1]` of texture primitive `kind` at global pixel `(x, y)`.
///
/// Kinds: 0 horizontal grating (varying along y), 1 vertical (along x),
/// 2 checkerboard (product of the two sinusoids), 3 plaid (their mean).
/// A horizontal or vertical flip can shift a sinusoid's phase but never its
/// orientation or wavelength, so no kind turns into another kind under flip
/// augmentation.
fn texture_value(kind: usize, x: usize, y: usize, wavelength: f64) -> f64 {
    let two_pi = 2.0 * core::f64::consts::PI;
    let sx = libm::sin(two_pi * (x as f64 + 0.5) / wavelength);
    let sy = libm::sin(two_pi * (y as f64 + 0.5) / wavelength);
    match kind {
        0 => sy,
        1 => sx,
        2 => sx * sy,
        _ => 0.5 * (sx + sy),
    }
}

/// Noise-free template image for class index `class`.
///
/// The class texture — orientation kind `class % 4`, wavelength
/// `tile * WAVELENGTH_FACTORS[class / 4]` — fills the central 2x2 tile
/// block. The 12 border tiles cycle the four kinds at the base wavelength
/// and are identical for every class.
fn class_template(spec: &SyntheticSpec, class: usize) -> GrayImage {
    let size = spec.image_size;
    let tile = size / GRID;
    let base = tile as f64;
    let kind = class % TEXTURE_KINDS;
    let wavelength = base * WAVELENGTH_FACTORS[class / TEXTURE_KINDS];
    let mut img = GrayImage::filled(size, size, 0.5);
    for y in 0..size {
        for x in 0..size {
            let (tx, ty) = (x / tile, y / tile);
            let inner = (1..=2).contains(&tx) && (1..=2).contains(&ty);
            let v = if inner {
                texture_value(kind, x, y, wavelength)
            } else {
                // Fixed ring, identical for every class.
                texture_value((tx + ty) % TEXTURE_KINDS, x, y, base)
            };
            img.set(x, y, 0.5 + TILE_AMPLITUDE * v);
        }
    }
    img
}

/// Checks a corpus specification's ranges without generating anything.
pub fn validate_spec(spec: &SyntheticSpec) -> Result<()> {
    if spec.n_classes < 2 || spec.n_classes > MAX_SYNTHETIC_CLASSES {
        return Err(Error::Contract(format!(
            "n_classes must be in 2..={MAX_SYNTHETIC_CLASSES}, got {}",
            spec.n_classes
        )));
    }
    if spec.n_pairs == 0 {
        return Err(Error::Contract(String::from("n_pairs must be positive")));
    }
    if spec.image_size < GRID || spec.image_size % GRID != 0 {
        return Err(Error::Contract(format!(
            "image_size must be a positive multiple of {GRID}, got {}",
            spec.image_size
        )));
    }
    if !(spec.noise_std >= 0.0) {
        return Err(Error::Contract(format!(
            "noise_std must be non-negative, got {}",
            spec.noise_std
        )));
    }
    let (lo, hi) = spec.sentences_per_report;
    if lo == 0 || lo > hi {
        return Err(Error::Contract(format!(
            "sentences_per_report range ({lo}, {hi}) must satisfy 1 <= lo <= hi"
        )));
    }
    if spec.vocab_per_class == 0 || spec.shared_vocab == 0 {
        return Err(Error::Contract(String::from(
            "vocab_per_class and shared_vocab must be positive",
        )));
    }
    Ok(())
}

/// Word pools: per-class keyword lists plus the shared filler list.
///
/// Words are synthetic but stable: `clsKtokJ` and `commonJ`. The vocabulary
/// is laid out pools-first in a fixed order, independent of sampling.
fn build_pools(spec: &SyntheticSpec) -> (Vocabulary, Vec<Vec<usize>>, Vec<usize>) {
    let mut vocab = Vocabulary::new();
    let mut class_pools = Vec::with_capacity(spec.n_classes);
    for c in 0..spec.n_classes {
        let pool: Vec<usize> = (0..spec.vocab_per_class)
            .map(|j| vocab.intern(&format!("cls{c}tok{j}")))
            .collect();
        class_pools.push(pool);
    }
    let shared_pool: Vec<usize> = (0..spec.shared_vocab)
        .map(|j| vocab.intern(&format!("common{j}")))
        .collect();
    (vocab, class_pools, shared_pool)
}

fn sample_report_sentence(
    class_pool: &[usize],
    shared_pool: &[usize],
    rng: &mut impl RngCore,
) -> TokenSequence {
    let len = SENTENCE_LEN.0 + rng::uniform_index(rng, SENTENCE_LEN.1 - SENTENCE_LEN.0 + 1);
    let indices = (0..len)
        .map(|_| {
            if rng::bernoulli(rng, CLASS_TOKEN_PROB) {
                class_pool[rng::uniform_index(rng, class_pool.len())]
            } else {
                shared_pool[rng::uniform_index(rng, shared_pool.len())]
            }
        })
        .collect();
    TokenSequence::from_indices(indices)
}

/// Generates a synthetic paired corpus.
///
/// Classes are assigned round-robin (`example i` has class `i % n_classes`),
/// which balances counts within one. Each pair owns a seed derived from
/// `(spec.seed, pair index)`, so the corpus is reproducible bit-for-bit and
/// insensitive to generation order.
pub fn generate_synthetic_corpus(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    validate_spec(spec)?;
    let (vocabulary, class_pools, shared_pool) = build_pools(spec);
    let templates: Vec<GrayImage> = (0..spec.n_classes)
        .map(|c| class_template(spec, c))
        .collect();

    let mut examples = Vec::with_capacity(spec.n_pairs);
    let mut labels = Vec::with_capacity(spec.n_pairs);
    for i in 0..spec.n_pairs {
        let class = i % spec.n_classes;
        let mut pair_rng =
            rng::stream_from_seed(rng::derive_seed(spec.seed, &[stream::SYNTH, i as u64]));

        let mut image = templates[class].clone();
        if spec.noise_std > 0.0 {
            for px in image.data_mut() {
                *px = (*px + spec.noise_std * rng::standard_normal(&mut pair_rng)).clamp(0.0, 1.0);
            }
        }

        let (lo, hi) = spec.sentences_per_report;
        let n_sentences = lo + rng::uniform_index(&mut pair_rng, hi - lo + 1);
        let sentences = (0..n_sentences)
            .map(|_| sample_report_sentence(&class_pools[class], &shared_pool, &mut pair_rng))
            .collect();

        examples.push(PairedExample {
            id: format!("pair{i:05}"),
            image,
            sentences,
        });
        labels.push(class);
    }

    let class_names = (0..spec.n_classes).map(|c| format!("class{c}")).collect();
    Ok(SyntheticCorpus {
        examples,
        labels,
        vocabulary,
        class_names,
    })
}

/// Generates `per_class` standalone text queries per class for text→image
/// retrieval: short sentences drawn purely from each class's keyword pool.
///
/// Queries use their own seed stream so they are independent of the corpus
/// reports while remaining reproducible.
pub fn synthetic_text_queries(
    spec: &SyntheticSpec,
    per_class: usize,
    seed: u64,
) -> Result<Vec<Vec<TokenSequence>>> {
    validate_spec(spec)?;
    let (_, class_pools, _) = build_pools(spec);
    let mut out = Vec::with_capacity(spec.n_classes);
    for (c, pool) in class_pools.iter().enumerate() {
        let mut rng =
            rng::stream_from_seed(rng::derive_seed(seed, &[stream::QUERY, c as u64]));
        let queries = (0..per_class)
            .map(|_| {
                let len =
                    SENTENCE_LEN.0 + rng::uniform_index(&mut rng, SENTENCE_LEN.1 - SENTENCE_LEN.0 + 1);
                TokenSequence::from_indices(
                    (0..len)
                        .map(|_| pool[rng::uniform_index(&mut rng, pool.len())])
                        .collect(),
                )
            })
            .collect();
        out.push(queries);
    }
    Ok(out)
}
