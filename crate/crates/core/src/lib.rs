//! Bidirectional image–text contrastive pretraining at desk scale.
//!
//! This crate implements the full algorithmic pipeline for learning a shared
//! embedding space from paired grayscale images and short text reports:
//!
//! * [`data`] — corpus types, tokenization, and a synthetic paired-corpus
//!   generator whose class signal lives in spatial arrangement rather than
//!   first-order texture statistics.
//! * [`augment`] — the stochastic image transform family (crop, flip, affine,
//!   brightness/contrast jitter, Gaussian blur) with replayable transform
//!   instances.
//! * [`graph`] — a small reverse-mode automatic differentiation tape over
//!   row-major `f64` matrices.
//! * [`model`] — a convolutional image encoder, a single-layer attention text
//!   encoder, and the projection heads mapping both into the shared space.
//! * [`objective`] — the bidirectional contrastive loss, a binary pair
//!   classification baseline, and gradient computation for both.
//! * [`train`] — Adam with decoupled weight decay, plateau learning-rate
//!   annealing, the pretraining loop, and a finite-difference gradient
//!   checker.
//! * [`eval`] — ranking metrics, zero-shot retrieval, linear probing and
//!   fine-tuning.
//!
//! Everything is deterministic given explicit seeds: random state is always
//! threaded through [`rng`] helpers backed by ChaCha8, transcendentals go
//! through `libm` so results are bit-identical across platforms, and no
//! iteration order depends on hashing.
//!
//! The crate is `no_std`-compatible (it requires `alloc`); the `std` feature
//! (default) only enables `std::error::Error` integration. File formats and
//! the command-line interface live in the companion `convirt-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod augment;
pub mod data;
pub mod eval;
pub mod graph;
pub mod image;
pub mod model;
pub mod objective;
pub mod rng;
pub mod tensor;
pub mod train;

use alloc::string::String;
use core::fmt;

/// Errors surfaced by the numeric pipeline.
///
/// Contract violations (shape mismatches, invalid configuration, degenerate
/// inputs) are reported as structured variants rather than panics so that
/// callers can attach file/CLI context.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A caller-visible precondition was violated (shapes, ranges, empty
    /// inputs). The message names the offending quantity.
    Contract(String),
    /// A vector that must be normalized had zero norm (e.g. an embedding
    /// row); cosine similarity is undefined there.
    ZeroNorm {
        /// Which quantity degenerated, e.g. `"image embedding row 3"`.
        what: String,
    },
    /// A loss or parameter became non-finite during optimization.
    NonFinite {
        /// Training step at which the value degenerated.
        step: usize,
    },
    /// A retrieval split could not be built because a category has too few
    /// exclusively-positive examples.
    InsufficientCategory {
        /// Category name.
        category: String,
        /// Exclusive positives available.
        available: usize,
        /// Exclusive positives required (`n_query + n_candidate`).
        required: usize,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::ZeroNorm { what } => {
                write!(f, "zero-norm vector: {what} cannot be normalized")
            }
            Error::NonFinite { step } => {
                write!(f, "non-finite loss at step {step}; aborting")
            }
            Error::InsufficientCategory {
                category,
                available,
                required,
            } => write!(
                f,
                "category {category:?} has {available} exclusively-positive \
                 examples but the split requires {required}"
            ),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;
