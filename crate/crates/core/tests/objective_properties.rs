//! Bulk property checks for the bidirectional contrastive objective: a naive
//! per-element oracle sweep, invariances the loss must respect, and softmax
//! normalization of the underlying graph op. Complements the single-case
//! unit tests inside the objective module.

use convirt_core::objective::{
    contrastive_loss, info_nce_u_to_v, info_nce_v_to_u, LossConfig,
};
use convirt_core::rng;
use convirt_core::tensor::Matrix;
use rand_core::RngCore;

/// Uniform random embedding batch with entries in `[-2, 2]`.
fn random_batch(rng: &mut impl RngCore, n: usize, d: usize) -> Matrix {
    Matrix::from_vec(
        n,
        d,
        (0..n * d).map(|_| rng::uniform_in(rng, -2.0, 2.0)).collect(),
    )
}

/// Naive scalar InfoNCE: cosine by explicit loops, no max-subtraction, no
/// shared code with the production path.
fn naive_v_to_u(v: &Matrix, u: &Matrix, tau: f64) -> Vec<f64> {
    let n = v.rows();
    let cos = |a: &[f64], b: &[f64]| -> f64 {
        let mut dot = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        for k in 0..a.len() {
            dot += a[k] * b[k];
            na += a[k] * a[k];
            nb += b[k] * b[k];
        }
        dot / (libm::sqrt(na) * libm::sqrt(nb))
    };
    (0..n)
        .map(|i| {
            let mut denom = 0.0;
            for k in 0..n {
                denom += libm::exp(cos(v.row_slice(i), u.row_slice(k)) / tau);
            }
            let pos = libm::exp(cos(v.row_slice(i), u.row_slice(i)) / tau);
            -libm::log(pos / denom)
        })
        .collect()
}

#[test]
fn vectorized_loss_matches_naive_double_loop_over_100_batches() {
    let mut rng = rng::stream_from_seed(rng::derive_seed(7, &[0]));
    let taus = [0.01, 0.1, 1.0];
    for batch_idx in 0..100 {
        let n = 1 + rng::uniform_index(&mut rng, 8);
        let d = 2 + rng::uniform_index(&mut rng, 15);
        let v = random_batch(&mut rng, n, d);
        let u = random_batch(&mut rng, n, d);
        let tau = taus[batch_idx % taus.len()];
        let lambda = rng::uniform_01(&mut rng);

        let naive_v2u = naive_v_to_u(&v, &u, tau);
        let naive_u2v = naive_v_to_u(&u, &v, tau);
        let fast_v2u = info_nce_v_to_u(&v, &u, tau).unwrap();
        let fast_u2v = info_nce_u_to_v(&v, &u, tau).unwrap();
        for i in 0..n {
            assert!(
                (fast_v2u[i] - naive_v2u[i]).abs() < 1e-10,
                "batch {batch_idx} pair {i} image-to-text: {} vs naive {}",
                fast_v2u[i],
                naive_v2u[i]
            );
            assert!(
                (fast_u2v[i] - naive_u2v[i]).abs() < 1e-10,
                "batch {batch_idx} pair {i} text-to-image: {} vs naive {}",
                fast_u2v[i],
                naive_u2v[i]
            );
            assert!(fast_v2u[i] >= 0.0 && fast_u2v[i] >= 0.0);
        }

        let cfg = LossConfig {
            temperature: tau,
            weight: lambda,
        };
        let breakdown = contrastive_loss(&v, &u, &cfg).unwrap();
        let naive_total = (0..n)
            .map(|i| lambda * naive_v2u[i] + (1.0 - lambda) * naive_u2v[i])
            .sum::<f64>()
            / n as f64;
        assert!(
            (breakdown.total - naive_total).abs() < 1e-10,
            "batch {batch_idx} total: {} vs naive {}",
            breakdown.total,
            naive_total
        );
        assert!(breakdown.total >= 0.0);
    }
}

#[test]
fn rescaling_any_single_row_leaves_losses_unchanged() {
    let mut rng = rng::stream_from_seed(rng::derive_seed(7, &[1]));
    let cfg = LossConfig::default();
    for _ in 0..50 {
        let n = 2 + rng::uniform_index(&mut rng, 7);
        let d = 3 + rng::uniform_index(&mut rng, 10);
        let v = random_batch(&mut rng, n, d);
        let u = random_batch(&mut rng, n, d);
        let base_v2u = info_nce_v_to_u(&v, &u, cfg.temperature).unwrap();
        let base_total = contrastive_loss(&v, &u, &cfg).unwrap().total;

        for alpha in [1e-6, 0.5, 3.0, 1e6] {
            let row = rng::uniform_index(&mut rng, n);
            let mut scaled_v = v.clone();
            for x in scaled_v.row_slice_mut(row) {
                *x *= alpha;
            }
            let scaled = info_nce_v_to_u(&scaled_v, &u, cfg.temperature).unwrap();
            for i in 0..n {
                assert!(
                    (scaled[i] - base_v2u[i]).abs() < 1e-10,
                    "row {row} scaled by {alpha}: pair {i} moved {} -> {}",
                    base_v2u[i],
                    scaled[i]
                );
            }
            let mut scaled_u = u.clone();
            for x in scaled_u.row_slice_mut(row) {
                *x *= alpha;
            }
            let total = contrastive_loss(&v, &scaled_u, &cfg).unwrap().total;
            assert!((total - base_total).abs() < 1e-10);
        }
    }
}

#[test]
fn permuting_both_batches_permutes_per_pair_losses() {
    let mut rng = rng::stream_from_seed(rng::derive_seed(7, &[2]));
    let cfg = LossConfig::default();
    for _ in 0..50 {
        let n = 2 + rng::uniform_index(&mut rng, 7);
        let d = 3 + rng::uniform_index(&mut rng, 10);
        let v = random_batch(&mut rng, n, d);
        let u = random_batch(&mut rng, n, d);
        let mut perm: Vec<usize> = (0..n).collect();
        rng::shuffle(&mut rng, &mut perm);

        let permute = |m: &Matrix| {
            let mut out = Matrix::zeros(n, d);
            for (dst, &src) in perm.iter().enumerate() {
                out.row_slice_mut(dst).copy_from_slice(m.row_slice(src));
            }
            out
        };
        let (pv, pu) = (permute(&v), permute(&u));

        let base = info_nce_v_to_u(&v, &u, cfg.temperature).unwrap();
        let permuted = info_nce_v_to_u(&pv, &pu, cfg.temperature).unwrap();
        for dst in 0..n {
            assert!(
                (permuted[dst] - base[perm[dst]]).abs() < 1e-12,
                "per-pair loss did not follow the permutation"
            );
        }
        let t0 = contrastive_loss(&v, &u, &cfg).unwrap().total;
        let t1 = contrastive_loss(&pv, &pu, &cfg).unwrap().total;
        assert!((t1 - t0).abs() < 1e-12, "total moved under permutation");
    }
}

#[test]
fn balanced_weight_swaps_batches_bitwise_on_random_inputs() {
    let mut rng = rng::stream_from_seed(rng::derive_seed(7, &[3]));
    let cfg = LossConfig {
        temperature: 0.1,
        weight: 0.5,
    };
    for _ in 0..50 {
        let n = 2 + rng::uniform_index(&mut rng, 7);
        let d = 3 + rng::uniform_index(&mut rng, 10);
        let v = random_batch(&mut rng, n, d);
        let u = random_batch(&mut rng, n, d);
        let forward = contrastive_loss(&v, &u, &cfg).unwrap().total;
        let swapped = contrastive_loss(&u, &v, &cfg).unwrap().total;
        assert_eq!(forward.to_bits(), swapped.to_bits());
    }
}

#[test]
fn softmax_rows_sum_to_one_even_for_extreme_logits() {
    use convirt_core::graph::Tape;
    let mut rng = rng::stream_from_seed(rng::derive_seed(7, &[4]));
    for trial in 0..200 {
        let n = 1 + rng::uniform_index(&mut rng, 8);
        let m = 1 + rng::uniform_index(&mut rng, 8);
        // Mix moderate and saturating magnitudes to exercise max-subtraction.
        let span = [2.0, 50.0, 300.0][trial % 3];
        let logits = Matrix::from_vec(
            n,
            m,
            (0..n * m)
                .map(|_| rng::uniform_in(&mut rng, -span, span))
                .collect(),
        );
        let mut tape = Tape::new();
        let node = tape.constant(logits);
        let soft = tape.softmax_rows(node);
        let probs = tape.value(soft);
        for r in 0..n {
            let sum: f64 = probs.row_slice(r).iter().sum();
            assert!(
                (sum - 1.0).abs() < 1e-12,
                "row {r} sums to {sum} at span {span}"
            );
            assert!(probs.row_slice(r).iter().all(|p| *p >= 0.0));
        }
    }
}
