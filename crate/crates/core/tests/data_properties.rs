//! Corpus-level property checks: report filtering is idempotent, synthetic
//! generation separates classes by construction, and every generated pair
//! satisfies the range contracts the rest of the pipeline assumes.

use convirt_core::data::{
    filter_pairs, generate_synthetic_corpus, PairedExample, SyntheticSpec, TokenSequence,
};
use convirt_core::image::GrayImage;
use convirt_core::rng;

fn small_spec(seed: u64, noise_std: f64) -> SyntheticSpec {
    SyntheticSpec {
        n_classes: 5,
        n_pairs: 60,
        image_size: 16,
        noise_std,
        seed,
        ..SyntheticSpec::default()
    }
}

#[test]
fn report_filtering_is_idempotent_on_ragged_corpora() {
    let mut rng = rng::stream_from_seed(rng::derive_seed(13, &[0]));
    for trial in 0..50 {
        // Ragged hand-built corpus: sentence counts 0..4, lengths 0..6.
        let examples: Vec<PairedExample> = (0..20)
            .map(|i| {
                let n_sent = rng::uniform_index(&mut rng, 4);
                PairedExample {
                    id: alloc_id(trial, i),
                    image: GrayImage::filled(4, 4, 0.5),
                    sentences: (0..n_sent)
                        .map(|_| {
                            let len = rng::uniform_index(&mut rng, 6);
                            TokenSequence::from_indices(
                                (0..len)
                                    .map(|_| rng::uniform_index(&mut rng, 30))
                                    .collect(),
                            )
                        })
                        .collect(),
                }
            })
            .collect();
        let min_tokens = rng::uniform_index(&mut rng, 8);
        let once = filter_pairs(examples, min_tokens);
        let twice = filter_pairs(once.clone(), min_tokens);
        assert_eq!(once, twice, "second filtering pass changed the corpus");
        assert!(once.iter().all(|e| e.total_tokens() >= min_tokens));
    }
}

fn alloc_id(trial: usize, i: usize) -> String {
    format!("t{trial}e{i}")
}

#[test]
fn noise_free_generation_gives_identical_images_within_and_distinct_across_classes() {
    let corpus = generate_synthetic_corpus(&small_spec(3, 0.0)).unwrap();
    let mut representative: Vec<Option<&GrayImage>> = vec![None; 5];
    for (example, &label) in corpus.examples.iter().zip(&corpus.labels) {
        match representative[label] {
            None => representative[label] = Some(&example.image),
            Some(first) => assert_eq!(
                first.data(),
                example.image.data(),
                "noise-free images of class {label} differ"
            ),
        }
    }
    for a in 0..5 {
        for b in (a + 1)..5 {
            let (ia, ib) = (representative[a].unwrap(), representative[b].unwrap());
            let l2: f64 = ia
                .data()
                .iter()
                .zip(ib.data())
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            assert!(
                l2 > 0.0,
                "classes {a} and {b} share an identical template image"
            );
        }
    }
}

#[test]
fn generated_pairs_satisfy_range_contracts() {
    for seed in [0u64, 1, 9] {
        let corpus = generate_synthetic_corpus(&small_spec(seed, 0.15)).unwrap();
        assert_eq!(corpus.examples.len(), 60);
        assert_eq!(corpus.labels.len(), 60);
        assert_eq!(corpus.class_names.len(), 5);
        let vocab_len = corpus.vocabulary.len();
        for (example, &label) in corpus.examples.iter().zip(&corpus.labels) {
            assert!(label < 5);
            assert!(
                example.image.data().iter().all(|v| (0.0..=1.0).contains(v)),
                "pixel escaped [0, 1] at seed {seed}"
            );
            assert!(!example.sentences.is_empty());
            for sentence in &example.sentences {
                assert!(!sentence.is_empty());
                assert!(sentence.indices().iter().all(|&t| t < vocab_len));
            }
        }
    }
}
