//! Distance-based sparse gate over cluster centers.

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterModel;
use crate::error::{MopeError, Result};
use crate::features::{extract_features, StdFeatureVector};

pub const DEFAULT_OFFLINE_BETA: f64 = 10.0;
pub const DEFAULT_ONLINE_BETA: f64 = 2.5;

/// Mixture weights after sparsification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseWeights {
    weights: Vec<f64>,
    active: Vec<usize>,
}

impl SparseWeights {
    /// Builds weights from explicit values; they must be non-negative and
    /// sum to 1.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if weights.is_empty() || weights.iter().any(|&w| !(w >= 0.0)) || (total - 1.0).abs() > 1e-9
        {
            return Err(MopeError::InvalidArgument(
                "weights must be non-negative and sum to 1".into(),
            ));
        }
        let active = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
        Ok(SparseWeights { weights, active })
    }

    pub fn one_hot(k: usize, j: usize) -> Self {
        let mut weights = vec![0.0; k];
        weights[j] = 1.0;
        SparseWeights {
            weights,
            active: vec![j],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Indices with a non-zero weight, ascending.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Normalizes raw scores, zeroes those below `1 / (k·β)` and renormalizes.
/// When every weight falls below the threshold only the largest is kept.
pub fn sparsify(raw: &[f64], beta: f64) -> SparseWeights {
    let k = raw.len();
    let total: f64 = raw.iter().sum();
    let w: Vec<f64> = raw.iter().map(|p| p / total).collect();
    let threshold = activation_threshold(k, beta);
    let active: Vec<usize> = (0..k).filter(|&j| w[j] >= threshold).collect();
    if active.is_empty() {
        let best = (0..k)
            .max_by(|&a, &b| w[a].total_cmp(&w[b]).then(b.cmp(&a)))
            .unwrap_or(0);
        return SparseWeights::one_hot(k, best);
    }
    let kept: f64 = active.iter().map(|&j| w[j]).sum();
    let mut weights = vec![0.0; k];
    for &j in &active {
        weights[j] = w[j] / kept;
    }
    SparseWeights { weights, active }
}

pub fn activation_threshold(k: usize, beta: f64) -> f64 {
    1.0 / (k as f64 * beta)
}

/// Gate weights for center distances: `p_j = exp(-d_j)`, then [`sparsify`].
///
/// Distances are shifted by their minimum before exponentiating, which leaves
/// the normalized weights unchanged and avoids underflow far from all centers.
pub fn weights_from_distances(distances: &[f64], beta: f64) -> SparseWeights {
    let d_min = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = distances.iter().map(|d| (-(d - d_min)).exp()).collect();
    sparsify(&raw, beta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    clusters: ClusterModel,
    beta: f64,
}

impl Gate {
    pub fn new(clusters: ClusterModel, beta: f64) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(MopeError::InvalidArgument("beta must be > 0".into()));
        }
        Ok(Gate { clusters, beta })
    }

    pub fn k(&self) -> usize {
        self.clusters.k
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn clusters(&self) -> &ClusterModel {
        &self.clusters
    }

    pub fn threshold(&self) -> f64 {
        activation_threshold(self.k(), self.beta)
    }

    pub fn distances(&self, f: &StdFeatureVector) -> Vec<f64> {
        self.clusters
            .centers
            .iter()
            .map(|c| {
                c.0.iter()
                    .zip(f.0)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    /// Weights for a non-empty prefix or password.
    pub fn weights(&self, input: &str) -> Result<SparseWeights> {
        let f = self
            .clusters
            .standardizer
            .standardize(&extract_features(input)?);
        Ok(weights_from_distances(&self.distances(&f), self.beta))
    }

    /// Weights for an empty prefix, where features are undefined: cluster
    /// sizes act as the prior, sparsified with the same rule.
    pub fn prior_weights(&self) -> SparseWeights {
        let sizes = &self.clusters.sizes;
        if sizes.iter().all(|&s| s == 0) {
            return sparsify(&vec![1.0; sizes.len()], self.beta);
        }
        sparsify(
            &sizes.iter().map(|&s| s as f64).collect::<Vec<_>>(),
            self.beta,
        )
    }

    pub fn weights_for_prefix(&self, prefix: &str) -> Result<SparseWeights> {
        if prefix.is_empty() {
            Ok(self.prior_weights())
        } else {
            self.weights(prefix)
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::features::{Standardizer, FEATURE_DIM};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    pub(crate) fn identity_standardizer() -> Standardizer {
        Standardizer {
            means: [0.0; FEATURE_DIM],
            stds: [1.0; FEATURE_DIM],
        }
    }

    #[test]
    fn ln3_case_is_three_quarters() {
        let w = weights_from_distances(&[0.0, 3f64.ln()], 10.0);
        assert_eq!(w.weights(), &[0.75, 0.25]);
        assert_eq!(w.active(), &[0, 1]);
    }

    #[test]
    fn far_expert_is_dropped() {
        let d = [0.0, 5.0];
        let raw = [1.0, (-5f64).exp()];
        let total = raw[0] + raw[1];
        assert_abs_diff_eq!(raw[1] / total, 0.006_692_850_9, epsilon = 1e-9);
        let w = weights_from_distances(&d, 10.0);
        assert_eq!(w.weights(), &[1.0, 0.0]);
        assert_eq!(w.active(), &[0]);
    }

    #[test]
    fn threshold_arithmetic() {
        assert_abs_diff_eq!(activation_threshold(50, 10.0), 0.002, epsilon = 1e-15);
        assert_eq!(activation_threshold(2, 10.0), 0.05);
    }

    #[test]
    fn all_below_threshold_keeps_argmax() {
        // k·β < 1 puts the threshold above any normalized weight
        let w = weights_from_distances(&[0.3, 0.1, 0.2], 0.1);
        assert_eq!(w.weights(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn exact_center_dominates() {
        let mut centers = vec![StdFeatureVector([0.0; FEATURE_DIM]); 4];
        for (j, c) in centers.iter_mut().enumerate() {
            c.0[0] = 25.0 * j as f64;
        }
        let target = extract_features("Abc123").unwrap();
        centers[3] = StdFeatureVector(target.0);
        let cm = ClusterModel::new(identity_standardizer(), centers, vec![1; 4], None).unwrap();
        let gate = Gate::new(cm, 10.0).unwrap();
        let w = gate.weights("Abc123").unwrap();
        assert!(w.weights()[3] >= 1.0 - 1e-8);
        assert!(matches!(gate.weights(""), Err(MopeError::EmptyInput)));
    }

    #[test]
    fn prior_follows_cluster_sizes() {
        let mut centers = vec![StdFeatureVector([0.0; FEATURE_DIM]); 3];
        centers[1].0[0] = 1.0;
        centers[2].0[0] = 2.0;
        let cm = ClusterModel::new(identity_standardizer(), centers, vec![6, 3, 1], None).unwrap();
        let gate = Gate::new(cm, 10.0).unwrap();
        let w = gate.weights_for_prefix("").unwrap();
        assert_abs_diff_eq!(w.weights()[0], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(w.weights()[2], 0.1, epsilon = 1e-12);
        assert!(Gate::new(gate.clusters().clone(), 0.0).is_err());
    }

    proptest! {
        #[test]
        fn weights_are_a_distribution(
            d in prop::collection::vec(0.0f64..50.0, 1..12),
            beta in 0.01f64..100.0,
        ) {
            let w = weights_from_distances(&d, beta);
            prop_assert!((w.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(w.weights().iter().all(|&x| x >= 0.0));
            prop_assert!(!w.active().is_empty());
            for j in 0..d.len() {
                prop_assert_eq!(w.weights()[j] > 0.0, w.active().contains(&j));
            }
        }

        #[test]
        fn permutation_equivariant(d in prop::collection::vec(0.0f64..10.0, 2..8), rot in 0usize..8) {
            let r = rot % d.len();
            let mut p = d.clone();
            p.rotate_left(r);
            let w = weights_from_distances(&d, 10.0);
            let mut wp = w.weights().to_vec();
            wp.rotate_left(r);
            let got = weights_from_distances(&p, 10.0);
            for (a, b) in got.weights().iter().zip(&wp) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn closer_centers_weigh_more(d in prop::collection::vec(0.0f64..10.0, 2..8)) {
            let w = weights_from_distances(&d, 10.0);
            for a in 0..d.len() {
                for b in 0..d.len() {
                    let both = w.weights()[a] > 0.0 && w.weights()[b] > 0.0;
                    if d[a] < d[b] && both {
                        prop_assert!(w.weights()[a] > w.weights()[b]);
                    }
                }
            }
        }
    }
}
