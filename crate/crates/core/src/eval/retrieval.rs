//! Zero-shot retrieval: split construction by exclusive positivity and
//! image-image / text-image ranking with Precision@k.
//!
//! Image-image retrieval compares pre-projection image representations
//! (`h_v`), matching an encoder-only baseline; text-image retrieval meets in
//! the shared projected space, which is the only place both modalities are
//! comparable.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::TokenSequence;
use crate::image::GrayImage;
use crate::model::{encode_image, encode_text, project, Modality, ModelConfig, ParamSet};
use crate::objective::cosine_similarity;
use crate::rng::{self, stream};
use crate::tensor::Matrix;
use crate::{Error, Result};

use super::metrics::{precision_at_k, RankedList};

/// Default Precision@k set.
pub const DEFAULT_K_VALUES: [usize; 3] = [5, 10, 50];

/// Query and candidate assignments for retrieval, as indices into a
/// caller-held image list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrievalSplit {
    /// Category display names.
    pub categories: Vec<String>,
    /// Per category, the image indices used as queries.
    pub queries: Vec<Vec<usize>>,
    /// Flat candidate pool of (image index, category index), balanced
    /// across categories.
    pub candidates: Vec<(usize, usize)>,
}

impl RetrievalSplit {
    /// Total number of queries over all categories.
    pub fn n_queries(&self) -> usize {
        self.queries.iter().map(Vec::len).sum()
    }

    /// Positions in the candidate list belonging to `category`.
    pub fn relevant_positions(&self, category: usize) -> BTreeSet<usize> {
        self.candidates
            .iter()
            .enumerate()
            .filter(|(_, (_, c))| *c == category)
            .map(|(pos, _)| pos)
            .collect()
    }
}

/// Builds a retrieval split from per-image label vectors.
///
/// An image qualifies for a category only under exclusive positivity: its
/// label for that category is positive and every other label is negative.
/// Per category, `n_candidate` candidates are drawn first, then `n_query`
/// queries from the remainder, without replacement, from a per-category
/// stream of `seed` — queries and candidates can never share an image.
pub fn build_retrieval_split(
    labels: &[Vec<bool>],
    categories: &[String],
    n_query: usize,
    n_candidate: usize,
    seed: u64,
) -> Result<RetrievalSplit> {
    if labels.is_empty() || categories.is_empty() {
        return Err(Error::Contract(String::from(
            "retrieval split needs labels and categories",
        )));
    }
    if labels.iter().any(|l| l.len() != categories.len()) {
        return Err(Error::Contract(String::from(
            "every label vector must match the category count",
        )));
    }
    if n_query == 0 || n_candidate == 0 {
        return Err(Error::Contract(String::from(
            "n_query and n_candidate must be positive",
        )));
    }
    let mut queries = Vec::with_capacity(categories.len());
    let mut candidates = Vec::new();
    for (c, name) in categories.iter().enumerate() {
        let exclusive: Vec<usize> = (0..labels.len())
            .filter(|&i| {
                labels[i][c] && labels[i].iter().enumerate().all(|(j, &l)| j == c || !l)
            })
            .collect();
        let required = n_query + n_candidate;
        if exclusive.len() < required {
            return Err(Error::InsufficientCategory {
                category: name.clone(),
                available: exclusive.len(),
                required,
            });
        }
        let mut rng =
            rng::stream_from_seed(rng::derive_seed(seed, &[stream::RETRIEVAL, c as u64]));
        let cand_positions = rng::sample_distinct(&mut rng, exclusive.len(), n_candidate);
        let taken: BTreeSet<usize> = cand_positions.iter().copied().collect();
        let remaining: Vec<usize> = (0..exclusive.len()).filter(|p| !taken.contains(p)).collect();
        let query_positions = rng::sample_distinct(&mut rng, remaining.len(), n_query);
        for &p in &cand_positions {
            candidates.push((exclusive[p], c));
        }
        queries.push(query_positions.iter().map(|&p| exclusive[remaining[p]]).collect());
    }
    Ok(RetrievalSplit {
        categories: categories.to_vec(),
        queries,
        candidates,
    })
}

/// Mean Precision@k over all queries, one entry per requested k.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalMetrics {
    /// The k values, in the order requested.
    pub k_values: Vec<usize>,
    /// Mean precision aligned with `k_values`.
    pub precision: Vec<f64>,
    /// Number of queries averaged over.
    pub n_queries: usize,
}

impl RetrievalMetrics {
    /// Precision at a specific k, if it was computed.
    pub fn at(&self, k: usize) -> Option<f64> {
        self.k_values
            .iter()
            .position(|&kk| kk == k)
            .map(|i| self.precision[i])
    }
}

fn check_k_values(k_values: &[usize], n_candidates: usize) -> Result<()> {
    if k_values.is_empty() {
        return Err(Error::Contract(String::from("no k values requested")));
    }
    for &k in k_values {
        if k == 0 || k > n_candidates {
            return Err(Error::Contract(format!(
                "k = {k} out of range for {n_candidates} candidates"
            )));
        }
    }
    Ok(())
}

/// Ranks every candidate for each query embedding and averages Precision@k;
/// `relevant_of[q]` gives each query's relevant candidate positions.
fn rank_and_average(
    query_embeddings: &[Vec<f64>],
    candidate_embeddings: &Matrix,
    relevant_of: &[BTreeSet<usize>],
    k_values: &[usize],
) -> Result<RetrievalMetrics> {
    let mut sums = alloc::vec![0.0; k_values.len()];
    for (q, rel) in query_embeddings.iter().zip(relevant_of) {
        let mut scores = Vec::with_capacity(candidate_embeddings.rows());
        for r in 0..candidate_embeddings.rows() {
            scores.push(cosine_similarity(q, candidate_embeddings.row_slice(r))?);
        }
        let ranked = RankedList::from_scores(&scores)?;
        for (s, &k) in sums.iter_mut().zip(k_values) {
            *s += precision_at_k(&ranked, rel, k)?;
        }
    }
    let n = query_embeddings.len();
    Ok(RetrievalMetrics {
        k_values: k_values.to_vec(),
        precision: sums.into_iter().map(|s| s / n as f64).collect(),
        n_queries: n,
    })
}

/// Image-image retrieval: queries and candidates are encoded with the image
/// tower (pre-projection `h_v`) and ranked by cosine similarity. A candidate
/// is relevant when its category matches the query's.
pub fn retrieve_image_image(
    params: &ParamSet,
    cfg: &ModelConfig,
    images: &[GrayImage],
    split: &RetrievalSplit,
    k_values: &[usize],
) -> Result<RetrievalMetrics> {
    check_k_values(k_values, split.candidates.len())?;
    if split.n_queries() == 0 {
        return Err(Error::Contract(String::from("split has no queries")));
    }
    let mut cand = Matrix::zeros(split.candidates.len(), cfg.image_width());
    for (r, &(idx, _)) in split.candidates.iter().enumerate() {
        let h = encode_image(params, cfg, &images[idx])?;
        cand.row_slice_mut(r).copy_from_slice(&h);
    }
    let mut query_embeddings = Vec::new();
    let mut relevant_of = Vec::new();
    for (c, qs) in split.queries.iter().enumerate() {
        let rel = split.relevant_positions(c);
        for &idx in qs {
            query_embeddings.push(encode_image(params, cfg, &images[idx])?);
            relevant_of.push(rel.clone());
        }
    }
    rank_and_average(&query_embeddings, &cand, &relevant_of, k_values)
}

/// Text-image retrieval: queries go through the text tower and text
/// projection, candidates through the image tower and image projection, and
/// ranking happens in the shared projected space. `queries[c]` holds the
/// token-sequence queries of category `c`.
pub fn retrieve_text_image(
    params: &ParamSet,
    cfg: &ModelConfig,
    images: &[GrayImage],
    split: &RetrievalSplit,
    queries: &[Vec<TokenSequence>],
    k_values: &[usize],
) -> Result<RetrievalMetrics> {
    check_k_values(k_values, split.candidates.len())?;
    if queries.len() != split.categories.len() {
        return Err(Error::Contract(format!(
            "got query lists for {} categories, split has {}",
            queries.len(),
            split.categories.len()
        )));
    }
    if queries.iter().all(Vec::is_empty) {
        return Err(Error::Contract(String::from("no text queries supplied")));
    }
    let mut cand = Matrix::zeros(split.candidates.len(), cfg.projection_dim);
    for (r, &(idx, _)) in split.candidates.iter().enumerate() {
        let h = encode_image(params, cfg, &images[idx])?;
        let v = project(params, cfg, Modality::Image, &h)?;
        cand.row_slice_mut(r).copy_from_slice(&v);
    }
    let mut query_embeddings = Vec::new();
    let mut relevant_of = Vec::new();
    for (c, qs) in queries.iter().enumerate() {
        let rel = split.relevant_positions(c);
        for tokens in qs {
            let h = encode_text(params, cfg, tokens)?;
            query_embeddings.push(project(params, cfg, Modality::Text, &h)?);
            relevant_of.push(rel.clone());
        }
    }
    rank_and_average(&query_embeddings, &cand, &relevant_of, k_values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_corpus, synthetic_text_queries, SyntheticSpec};
    use crate::model::{init_params, ProjectionMode};
    use alloc::string::ToString;
    use alloc::vec;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|c| alloc::format!("cat{c}")).collect()
    }

    #[test]
    fn exclusive_positivity_filters_multilabel_images() {
        // Images 0 and 3 are A-only, 2 and 4 are B-only; image 1 carries
        // both labels and must qualify for neither category.
        let labels = vec![
            vec![true, false],
            vec![true, true],
            vec![false, true],
            vec![true, false],
            vec![false, true],
        ];
        let err = build_retrieval_split(&labels, &names(2), 1, 0, 0).unwrap_err();
        assert!(matches!(err, Error::Contract(_)), "zero candidates rejected");

        let split = build_retrieval_split(&labels, &names(2), 1, 1, 0).unwrap();
        let mut used: Vec<usize> = split
            .candidates
            .iter()
            .map(|&(i, _)| i)
            .chain(split.queries.iter().flatten().copied())
            .collect();
        used.sort_unstable();
        assert_eq!(used, vec![0, 2, 3, 4]);
        assert!(!used.contains(&1), "non-exclusive image must be excluded");
    }

    #[test]
    fn split_reports_insufficient_categories_by_name() {
        let labels = vec![vec![true, false], vec![false, true]];
        let err = build_retrieval_split(&labels, &names(2), 2, 1, 0).unwrap_err();
        match err {
            Error::InsufficientCategory {
                category,
                available,
                required,
            } => {
                assert_eq!(category, "cat0");
                assert_eq!(available, 1);
                assert_eq!(required, 3);
            }
            other => panic!("wrong error: {other:?}"),
        }
    }

    #[test]
    fn split_is_deterministic_disjoint_and_balanced() {
        let n = 60;
        let k = 3;
        let labels: Vec<Vec<bool>> = (0..n)
            .map(|i| (0..k).map(|c| i % k == c).collect())
            .collect();
        let a = build_retrieval_split(&labels, &names(k), 4, 10, 7).unwrap();
        let b = build_retrieval_split(&labels, &names(k), 4, 10, 7).unwrap();
        assert_eq!(a, b);
        let c = build_retrieval_split(&labels, &names(k), 4, 10, 8).unwrap();
        assert_ne!(a, c, "a different seed should draw a different split");

        assert_eq!(a.candidates.len(), 30);
        assert_eq!(a.n_queries(), 12);
        for cat in 0..k {
            assert_eq!(a.relevant_positions(cat).len(), 10, "balanced candidates");
            let cand: BTreeSet<usize> = a
                .candidates
                .iter()
                .filter(|&&(_, cc)| cc == cat)
                .map(|&(i, _)| i)
                .collect();
            let qs: BTreeSet<usize> = a.queries[cat].iter().copied().collect();
            assert!(cand.is_disjoint(&qs), "queries and candidates overlap");
            for &i in cand.iter().chain(qs.iter()) {
                assert!(labels[i][cat]);
            }
        }
    }

    fn tiny_model(vocab_size: usize) -> ModelConfig {
        ModelConfig {
            conv_channels: vec![2, 3],
            embed_dim: 8,
            n_attention_layers: 1,
            n_heads: 2,
            ffn_dim: 12,
            vocab_size,
            projection_dim: 4,
            projection_hidden: 6,
            projection: ProjectionMode::NonLinear,
            position_encoding: true,
        }
    }

    #[test]
    fn self_similar_candidates_rank_first() {
        // Duplicating each query image as its category's candidates forces
        // cosine 1 at the top: Prec@k = 1 whenever k does not exceed the
        // duplicate count.
        let spec = SyntheticSpec {
            n_pairs: 4,
            n_classes: 2,
            image_size: 12,
            noise_std: 0.0,
            ..Default::default()
        };
        let corpus = generate_synthetic_corpus(&spec).unwrap();
        let params = init_params(&tiny_model(corpus.vocabulary.len()), 5).unwrap();
        let cfg = tiny_model(corpus.vocabulary.len());

        // Noise-free pairs of the same class render identically, so images
        // 0 and 2 (class 0) and 1 and 3 (class 1) are duplicates.
        let images: Vec<GrayImage> = corpus.examples.iter().map(|e| e.image.clone()).collect();
        let split = RetrievalSplit {
            categories: vec!["c0".to_string(), "c1".to_string()],
            queries: vec![vec![0], vec![1]],
            candidates: vec![(2, 0), (3, 1)],
        };
        let metrics = retrieve_image_image(&params, &cfg, &images, &split, &[1]).unwrap();
        assert_eq!(metrics.at(1), Some(1.0));
    }

    #[test]
    fn image_ranking_is_invariant_to_common_candidate_rescaling() {
        // Cosine ignores positive rescaling, so scaling every candidate
        // embedding by the same factor cannot change a ranking. Exercised
        // at the metric level on raw scores.
        let q = vec![0.3, -0.8, 0.5];
        let cands = [
            vec![0.2, -0.7, 0.4],
            vec![-0.5, 0.1, 0.9],
            vec![0.31, -0.81, 0.52],
        ];
        let base: Vec<f64> = cands
            .iter()
            .map(|c| cosine_similarity(&q, c).unwrap())
            .collect();
        let scaled: Vec<f64> = cands
            .iter()
            .map(|c| {
                let s: Vec<f64> = c.iter().map(|x| 7.25 * x).collect();
                cosine_similarity(&q, &s).unwrap()
            })
            .collect();
        let a = RankedList::from_scores(&base).unwrap();
        let b = RankedList::from_scores(&scaled).unwrap();
        assert_eq!(a.indices(), b.indices());
    }

    #[test]
    fn text_image_retrieval_runs_end_to_end_and_is_deterministic() {
        let spec = SyntheticSpec {
            n_pairs: 24,
            n_classes: 2,
            image_size: 12,
            ..Default::default()
        };
        let corpus = generate_synthetic_corpus(&spec).unwrap();
        let cfg = tiny_model(corpus.vocabulary.len());
        let params = init_params(&cfg, 5).unwrap();
        let images: Vec<GrayImage> = corpus.examples.iter().map(|e| e.image.clone()).collect();
        let labels: Vec<Vec<bool>> = corpus
            .labels
            .iter()
            .map(|&l| (0..2).map(|c| c == l).collect())
            .collect();
        let split =
            build_retrieval_split(&labels, &corpus.class_names, 2, 8, 3).unwrap();
        let queries = synthetic_text_queries(&spec, 3, 11).unwrap();
        let a = retrieve_text_image(&params, &cfg, &images, &split, &queries, &[1, 5]).unwrap();
        let b = retrieve_text_image(&params, &cfg, &images, &split, &queries, &[1, 5]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_queries, 6);
        for p in &a.precision {
            assert!((0.0..=1.0).contains(p));
        }
    }
}
