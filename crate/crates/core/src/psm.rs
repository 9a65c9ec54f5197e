//! Password strength metering from Monte-Carlo guess numbers.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{MopeError, Result};
use crate::offline::{PasswordModel, SamplePool};
use crate::parallel::Execution;

pub const DEFAULT_POOL_SIZE: usize = 10_000;
pub const WEAK_BELOW: f64 = 1e6;
pub const STRONG_FROM: f64 = 1e14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrengthLevel {
    Weak,
    Medium,
    Strong,
}

impl StrengthLevel {
    /// `G < 10^6` is weak, `10^6 <= G < 10^14` medium, otherwise strong.
    pub fn from_guess_number(g: f64) -> Self {
        if g < WEAK_BELOW {
            StrengthLevel::Weak
        } else if g < STRONG_FROM {
            StrengthLevel::Medium
        } else {
            StrengthLevel::Strong
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrengthVerdict {
    pub log10_guess_number: f64,
    pub level: StrengthLevel,
    pub latency_ms: f64,
}

/// Anything that can assign a guess number to a password.
pub trait GuessNumberOracle: Send + Sync {
    fn guess_number(&self, password: &str) -> Result<f64>;
}

/// A password model paired with a sample pool drawn once up front, so each
/// query costs one probability evaluation and a binary search.
pub struct Meter {
    model: Box<dyn PasswordModel>,
    pool: SamplePool,
}

impl Meter {
    pub fn new(
        model: Box<dyn PasswordModel>,
        pool_size: usize,
        seed: u64,
        exec: Execution,
    ) -> Result<Self> {
        let pool = SamplePool::build(model.as_ref(), pool_size, seed, exec)?;
        Ok(Meter { model, pool })
    }

    pub fn model(&self) -> &dyn PasswordModel {
        self.model.as_ref()
    }

    pub fn pool_size(&self) -> usize {
        self.pool.n_samples()
    }

    pub fn strength(&self, password: &str) -> Result<StrengthVerdict> {
        let start = Instant::now();
        let g = self.guess_number(password)?;
        Ok(StrengthVerdict {
            log10_guess_number: g.log10(),
            level: StrengthLevel::from_guess_number(g),
            latency_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }
}

impl GuessNumberOracle for Meter {
    fn guess_number(&self, password: &str) -> Result<f64> {
        if password.is_empty() {
            return Err(MopeError::EmptyInput);
        }
        Ok(self
            .pool
            .estimate(self.model.as_ref(), password)?
            .guess_number)
    }
}

/// Decade bucket edges `10^0, 10^3, …, 10^18`.
pub fn default_edges() -> Vec<f64> {
    (0..=6).map(|i| 10f64.powi(3 * i)).collect()
}

/// Cross-tabulation of two meters' bucketed guess numbers:
/// `counts[i][j]` passwords fall in bucket `i` for meter A and `j` for B.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnsafeErrorMatrix {
    pub edges: Vec<f64>,
    pub counts: Vec<Vec<usize>>,
}

impl UnsafeErrorMatrix {
    /// Bucket `i` holds `edges[i] <= G < edges[i + 1]`; the last is open.
    pub fn bucket(edges: &[f64], g: f64) -> usize {
        edges.partition_point(|&e| e <= g).saturating_sub(1)
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// Passwords meter A places in a strictly higher bucket than meter B.
    pub fn unsafe_errors(&self) -> usize {
        let mut n = 0;
        for (i, row) in self.counts.iter().enumerate() {
            n += row[..i].iter().sum::<usize>();
        }
        n
    }

    pub fn is_diagonal(&self) -> bool {
        self.counts
            .iter()
            .enumerate()
            .all(|(i, row)| row.iter().enumerate().all(|(j, &c)| i == j || c == 0))
    }
}

pub fn unsafe_error_matrix(
    meter_a: &dyn GuessNumberOracle,
    meter_b: &dyn GuessNumberOracle,
    test_set: &[String],
    edges: &[f64],
) -> Result<UnsafeErrorMatrix> {
    if test_set.is_empty() {
        return Err(MopeError::EmptyInput);
    }
    if edges.is_empty() || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MopeError::InvalidArgument(
            "edges must be strictly ascending".into(),
        ));
    }
    let n = edges.len();
    let mut counts = vec![vec![0usize; n]; n];
    for p in test_set {
        let i = UnsafeErrorMatrix::bucket(edges, meter_a.guess_number(p)?);
        let j = UnsafeErrorMatrix::bucket(edges, meter_b.guess_number(p)?);
        counts[i][j] += 1;
    }
    Ok(UnsafeErrorMatrix {
        edges: edges.to_vec(),
        counts,
    })
}
