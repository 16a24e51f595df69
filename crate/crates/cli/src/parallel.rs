//! Multi-threaded view preparation.
//!
//! Each preparation job owns a seed that fully determines its output, so
//! fanning jobs out to threads cannot change results — only wall time. The
//! scheduler splits a batch into contiguous slices (one per worker) and
//! stitches the outputs back in job order.

use convirt_core::augment::AugmentConfig;
use convirt_core::objective::{prepare_pair, PreparedPair};
use convirt_core::train::{BatchPreparer, PrepJob, SerialPreparer};

/// Prepares batches on up to `workers` threads; `workers <= 1` degenerates to
/// the in-thread path.
pub struct ThreadedPreparer {
    /// Maximum worker threads.
    pub workers: usize,
}

impl BatchPreparer for ThreadedPreparer {
    fn prepare(&self, aug: &AugmentConfig, jobs: &[PrepJob<'_>]) -> Vec<PreparedPair> {
        if self.workers <= 1 || jobs.len() <= 1 {
            return SerialPreparer.prepare(aug, jobs);
        }
        let per_worker = jobs.len().div_ceil(self.workers.min(jobs.len()));
        std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .chunks(per_worker)
                .map(|slice| {
                    scope.spawn(move || {
                        slice
                            .iter()
                            .map(|j| prepare_pair(j.example, aug, j.seed))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("view preparation thread panicked"))
                .collect()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use convirt_core::data::{generate_synthetic_corpus, SyntheticSpec};
    use convirt_core::objective::pair_seed;

    #[test]
    fn threaded_output_is_bitwise_equal_to_serial() {
        let corpus = generate_synthetic_corpus(&SyntheticSpec {
            n_classes: 2,
            n_pairs: 10,
            image_size: 16,
            sentences_per_report: (2, 3),
            vocab_per_class: 4,
            shared_vocab: 5,
            noise_std: 0.05,
            seed: 3,
        })
        .unwrap();
        let aug = AugmentConfig {
            output_size: 12,
            ..AugmentConfig::default()
        };
        let jobs: Vec<PrepJob<'_>> = corpus
            .examples
            .iter()
            .enumerate()
            .map(|(k, example)| PrepJob {
                example,
                seed: pair_seed(99, 1, k as u64),
            })
            .collect();

        let serial = SerialPreparer.prepare(&aug, &jobs);
        for workers in [2, 4, 16] {
            let threaded = ThreadedPreparer { workers }.prepare(&aug, &jobs);
            assert_eq!(threaded.len(), serial.len());
            for (a, b) in serial.iter().zip(&threaded) {
                assert_eq!(a.text, b.text);
                assert_eq!(a.image.data(), b.image.data(), "workers = {workers}");
            }
        }
    }
}
