//! Small helpers over discrete distributions.

use rand::Rng;

/// `KL(p ‖ q)` in nats. Terms with `p_i = 0` contribute nothing.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b).ln())
        .sum()
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0
}

/// Inverse-CDF draw of an index. Falls back to the last non-zero entry when
/// rounding leaves the cumulative sum just below the uniform draw.
pub fn sample_index<R: Rng + ?Sized>(dist: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    dist.iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(dist.len() - 1)
}

pub fn argmax(xs: &[f64]) -> usize {
    (0..xs.len())
        .max_by(|&a, &b| xs[a].total_cmp(&xs[b]).then(b.cmp(&a)))
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    #[test]
    fn kl_reference_value() {
        // 0.5 ln 2 + 0.5 ln(2/3)
        let want = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert_abs_diff_eq!(
            kl_divergence(&[0.5, 0.5], &[0.25, 0.75]),
            want,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(want, 0.143_841_036, epsilon = 1e-9);
        assert_eq!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
    }

    #[test]
    fn sampling_frequencies() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let d = [0.2, 0.0, 0.8];
        let mut counts = [0usize; 3];
        for _ in 0..20_000 {
            counts[sample_index(&d, &mut rng)] += 1;
        }
        assert_eq!(counts[1], 0);
        assert!((counts[2] as f64 / 20_000.0 - 0.8).abs() < 0.02);
        assert_eq!(argmax(&[0.1, 0.5, 0.5]), 1);
    }
}
