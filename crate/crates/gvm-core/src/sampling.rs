//! Top-k sampling over a logit vector.

use crate::math;
use crate::rng::Rng;
use alloc::vec::Vec;

/// Draw a token id from the renormalized softmax over the k highest
/// logits. k is clamped to the vocabulary size; ties at the cut are
/// broken toward the lower index. k = 1 is a deterministic argmax and
/// consumes no randomness.
pub fn sample_top_k(logits: &[f64], k: usize, rng: &mut Rng) -> usize {
    debug_assert!(!logits.is_empty());
    let k = k.clamp(1, logits.len());

    let mut order: Vec<usize> = (0..logits.len()).collect();
    // Stable sort: equal logits keep ascending index order.
    order.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).expect("finite logits"));
    let top = &order[..k];

    if k == 1 {
        return top[0];
    }

    let max = logits[top[0]];
    let weights: Vec<f64> = top.iter().map(|&i| math::exp(logits[i] - max)).collect();
    let total: f64 = weights.iter().sum();
    let mut r = rng.uniform() * total;
    for (&idx, &w) in top.iter().zip(&weights) {
        if r < w {
            return idx;
        }
        r -= w;
    }
    // Rounding can leave r marginally past the last weight.
    top[k - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn k_one_is_argmax_and_seed_independent() {
        let logits = vec![0.1, 2.0, -1.0, 2.0, 0.5];
        for seed in 0..20 {
            let mut rng = Rng::new(seed);
            // Ties break to the lower index: 1, not 3.
            assert_eq!(sample_top_k(&logits, 1, &mut rng), 1);
        }
    }

    #[test]
    fn k_clamped_to_vocab() {
        let logits = vec![0.0, 1.0];
        let mut rng = Rng::new(1);
        for _ in 0..100 {
            let t = sample_top_k(&logits, 250, &mut rng);
            assert!(t < 2);
        }
    }

    #[test]
    fn never_samples_outside_top_k() {
        let logits = vec![5.0, 4.0, 3.0, -10.0, -20.0];
        let mut rng = Rng::new(3);
        for _ in 0..1000 {
            let t = sample_top_k(&logits, 3, &mut rng);
            assert!(t < 3, "sampled {t}");
        }
    }

    #[test]
    fn frequencies_match_renormalized_softmax_within_3_sigma() {
        // Monte Carlo against the closed-form renormalized distribution.
        let logits = vec![1.0, 0.5, 0.0, -0.5, -3.0, -3.0, 4.0];
        let k = 4;
        let n = 100_000;

        // Closed form: top-4 by logit are indices 6,0,1,2.
        let top = [6usize, 0, 1, 2];
        let max = 4.0;
        let w: Vec<f64> = top.iter().map(|&i| crate::math::exp(logits[i] - max)).collect();
        let total: f64 = w.iter().sum();

        let mut counts = [0usize; 7];
        let mut rng = Rng::new(7);
        for _ in 0..n {
            counts[sample_top_k(&logits, k, &mut rng)] += 1;
        }
        assert_eq!(counts[3] + counts[4] + counts[5], 0);
        for (&i, &wi) in top.iter().zip(&w) {
            let p = wi / total;
            let freq = counts[i] as f64 / n as f64;
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (freq - p).abs() <= 3.0 * sigma,
                "token {i}: freq {freq} vs p {p} (3s = {})",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn full_vocab_k_is_plain_categorical() {
        let logits = vec![0.0, crate::math::ln(2.0)];
        let n = 100_000;
        let mut rng = Rng::new(11);
        let mut ones = 0usize;
        for _ in 0..n {
            ones += sample_top_k(&logits, 2, &mut rng);
        }
        let freq = ones as f64 / n as f64;
        let sigma = (2.0 / 9.0 / n as f64).sqrt();
        assert!((freq - 2.0 / 3.0).abs() <= 3.0 * sigma, "freq {freq}");
    }
}
