//! Offline guessing: mixture next-character model, threshold enumeration,
//! Monte-Carlo guess numbers and crack curves.
//!
//! A password shorter than the model's `max_len` is scored with a final
//! `END` factor; a password of exactly `max_len` characters is scored by its
//! prefix probability (generation stops there). Under this convention the
//! probabilities of all strings up to `max_len` sum to one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::ClusterModel;
use crate::corpus::{Alphabet, MAX_PASSWORD_LEN};
use crate::error::{MopeError, Result};
use crate::expert::{finetune, password_context, pretrain, Expert, NGramConfig, NGramExpert};
use crate::gate::{Gate, SparseWeights};
use crate::parallel::Execution;
use crate::prob::sample_index;

/// A character-level autoregressive password distribution.
pub trait PasswordModel: Send + Sync {
    fn alphabet(&self) -> &Alphabet;

    /// Longest password the model generates.
    fn max_len(&self) -> usize;

    /// `P(· | prefix)` over the alphabet followed by `END`.
    fn next_char_dist(&self, prefix: &str) -> Result<Vec<f64>>;
}

impl<M: PasswordModel + ?Sized> PasswordModel for &M {
    fn alphabet(&self) -> &Alphabet {
        (**self).alphabet()
    }
    fn max_len(&self) -> usize {
        (**self).max_len()
    }
    fn next_char_dist(&self, prefix: &str) -> Result<Vec<f64>> {
        (**self).next_char_dist(prefix)
    }
}

fn check_max_len(max_len: usize) -> Result<()> {
    if !(1..=MAX_PASSWORD_LEN).contains(&max_len) {
        return Err(MopeError::InvalidArgument(format!(
            "max_len must be in 1..={MAX_PASSWORD_LEN}"
        )));
    }
    Ok(())
}

/// A single expert used directly as a password model.
#[derive(Debug, Clone)]
pub struct Standalone<E = NGramExpert> {
    expert: E,
    alphabet: Alphabet,
    max_len: usize,
}

impl<E: Expert> Standalone<E> {
    pub fn new(expert: E, alphabet: Alphabet, max_len: usize) -> Result<Self> {
        check_max_len(max_len)?;
        if expert.output_size() != alphabet.output_size() {
            return Err(MopeError::InvalidArgument(
                "expert output size does not match the alphabet".into(),
            ));
        }
        Ok(Standalone {
            expert,
            alphabet,
            max_len,
        })
    }

    pub fn expert(&self) -> &E {
        &self.expert
    }
}

impl<E: Expert> PasswordModel for Standalone<E> {
    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }
    fn max_len(&self) -> usize {
        self.max_len
    }
    fn next_char_dist(&self, prefix: &str) -> Result<Vec<f64>> {
        self.expert
            .next_dist(&password_context(&self.alphabet, prefix)?)
    }
}

/// `Σ_j w_j · dists[j]` over the active weights.
pub fn mix(weights: &SparseWeights, dists: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; dists.first().map_or(0, Vec::len)];
    for &j in weights.active() {
        let w = weights.weights()[j];
        for (o, p) in out.iter_mut().zip(&dists[j]) {
            *o += w * p;
        }
    }
    out
}

/// When the gate is consulted while a password is generated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// Re-gate on the current prefix before every character.
    #[default]
    PerStep,
    /// Pick the experts once per candidate from the prior. The next-character
    /// distribution then weights each prior-active expert by its posterior
    /// given the prefix, so `P(x) = sum_j prior_j * P_j(x)`.
    PerCandidate,
}

impl std::str::FromStr for GateMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "per_step" => Ok(GateMode::PerStep),
            "per_candidate" => Ok(GateMode::PerCandidate),
            _ => Err(format!(
                "unknown gate mode {s:?} (per-step or per-candidate)"
            )),
        }
    }
}

/// Gated mixture of character experts, one per cluster.
#[derive(Debug, Clone)]
pub struct OfflineMope<E = NGramExpert> {
    alphabet: Alphabet,
    max_len: usize,
    gate: Gate,
    experts: Vec<E>,
    mode: GateMode,
}

impl<E: Expert> OfflineMope<E> {
    pub fn new(alphabet: Alphabet, max_len: usize, gate: Gate, experts: Vec<E>) -> Result<Self> {
        check_max_len(max_len)?;
        if experts.len() != gate.k() {
            return Err(MopeError::InvalidArgument(format!(
                "{} experts for {} clusters",
                experts.len(),
                gate.k()
            )));
        }
        if experts
            .iter()
            .any(|e| e.output_size() != alphabet.output_size())
        {
            return Err(MopeError::InvalidArgument(
                "expert output size does not match the alphabet".into(),
            ));
        }
        Ok(OfflineMope {
            alphabet,
            max_len,
            gate,
            experts,
            mode: GateMode::default(),
        })
    }

    pub fn with_gate_mode(mut self, mode: GateMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn gate_mode(&self) -> GateMode {
        self.mode
    }

    pub fn gate(&self) -> &Gate {
        &self.gate
    }

    pub fn experts(&self) -> &[E] {
        &self.experts
    }

    pub fn k(&self) -> usize {
        self.experts.len()
    }

    /// Mixture distribution with caller-supplied weights.
    pub fn mix_with(&self, weights: &SparseWeights, prefix: &str) -> Result<Vec<f64>> {
        if weights.len() != self.k() {
            return Err(MopeError::InvalidArgument(
                "one weight per expert required".into(),
            ));
        }
        let ctx = password_context(&self.alphabet, prefix)?;
        let mut out = vec![0.0; self.alphabet.output_size()];
        let mut buf = vec![0.0; out.len()];
        for &j in weights.active() {
            self.experts[j].next_dist_into(&ctx, &mut buf)?;
            let w = weights.weights()[j];
            for (o, p) in out.iter_mut().zip(&buf) {
                *o += w * p;
            }
        }
        Ok(out)
    }

    /// Prior weights reweighted by each expert's probability of `prefix`.
    fn posterior_weights(&self, prefix: &str) -> Result<SparseWeights> {
        let prior = self.gate.prior_weights();
        let ctx = password_context(&self.alphabet, prefix)?;
        let mut buf = vec![0.0; self.alphabet.output_size()];
        let mut log_w: Vec<(usize, f64)> = prior
            .active()
            .iter()
            .map(|&j| (j, prior.weights()[j].ln()))
            .collect();
        for (j, lw) in log_w.iter_mut() {
            for i in 1..ctx.len() {
                self.experts[*j].next_dist_into(&ctx[..i], &mut buf)?;
                *lw += buf[ctx[i] as usize].ln();
            }
        }
        let top = log_w.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
        if top == f64::NEG_INFINITY {
            return Ok(prior);
        }
        let mut weights = vec![0.0; self.k()];
        for &(j, lw) in &log_w {
            weights[j] = (lw - top).exp();
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        SparseWeights::from_weights(weights)
    }
}

impl<E: Expert> PasswordModel for OfflineMope<E> {
    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }
    fn max_len(&self) -> usize {
        self.max_len
    }
    fn next_char_dist(&self, prefix: &str) -> Result<Vec<f64>> {
        let weights = match self.mode {
            GateMode::PerStep => self.gate.weights_for_prefix(prefix)?,
            GateMode::PerCandidate => self.posterior_weights(prefix)?,
        };
        self.mix_with(&weights, prefix)
    }
}

fn check_password<M: PasswordModel + ?Sized>(m: &M, password: &str) -> Result<usize> {
    let mut n = 0;
    for c in password.chars() {
        if !m.alphabet().contains(c) {
            return Err(MopeError::UnknownSymbol(c));
        }
        n += 1;
    }
    if n > m.max_len() {
        return Err(MopeError::InvalidPassword(format!(
            "longer than {} characters",
            m.max_len()
        )));
    }
    Ok(n)
}

/// Probability of generating exactly `prefix` as the first characters.
pub fn prefix_prob<M: PasswordModel + ?Sized>(m: &M, prefix: &str) -> Result<f64> {
    check_password(m, prefix)?;
    let mut p = 1.0;
    for (i, c) in prefix.char_indices() {
        let d = m.next_char_dist(&prefix[..i])?;
        p *= d[m.alphabet().id(c).expect("checked") as usize];
    }
    Ok(p)
}

/// Probability of generating `password` and stopping.
pub fn sequence_prob<M: PasswordModel + ?Sized>(m: &M, password: &str) -> Result<f64> {
    let n = check_password(m, password)?;
    let mut p = prefix_prob(m, password)?;
    if n < m.max_len() {
        p *= m.next_char_dist(password)?[m.alphabet().end() as usize];
    }
    Ok(p)
}

/// Draws one password by ancestral sampling; returns it with its probability.
pub fn sample_password<M, R>(m: &M, rng: &mut R) -> Result<(String, f64)>
where
    M: PasswordModel + ?Sized,
    R: rand::Rng + ?Sized,
{
    let mut s = String::new();
    let mut p = 1.0;
    let end = m.alphabet().end() as usize;
    for _ in 0..m.max_len() {
        let d = m.next_char_dist(&s)?;
        let i = sample_index(&d, rng);
        p *= d[i];
        if i == end {
            return Ok((s, p));
        }
        s.push(m.alphabet().char_of(i as u32).expect("index below END"));
    }
    Ok((s, p))
}

pub const DEFAULT_CANDIDATE_CAP: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub tau: f64,
    pub l_min: usize,
    pub l_max: usize,
    /// Maximum number of emitted plus pending candidates.
    pub cap: usize,
}

impl GenerationConfig {
    pub fn new(tau: f64, l_min: usize, l_max: usize) -> Self {
        GenerationConfig {
            tau,
            l_min,
            l_max,
            cap: DEFAULT_CANDIDATE_CAP,
        }
    }

    fn validate(&self, max_len: usize) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(MopeError::InvalidArgument("tau must be in (0, 1)".into()));
        }
        if self.l_min < 1 || self.l_min > self.l_max || self.l_max > max_len {
            return Err(MopeError::InvalidArgument(format!(
                "need 1 <= l_min <= l_max <= {max_len}"
            )));
        }
        Ok(())
    }
}

/// Threshold enumeration from the empty prefix.
///
/// Each queue level is expanded in one batch (in parallel when `exec`
/// allows); a child is kept only if its probability is at least `tau`. A
/// prefix is emitted when its `END` child passes the threshold, or when it
/// reaches `l_max`. Output is sorted by descending probability, ties by text.
pub fn generate<M: PasswordModel + ?Sized>(
    m: &M,
    cfg: &GenerationConfig,
    exec: Execution,
) -> Result<Vec<(String, f64)>> {
    cfg.validate(m.max_len())?;
    let alphabet = m.alphabet();
    let end = alphabet.end() as usize;
    let mut out: Vec<(String, f64)> = Vec::new();
    let mut frontier = vec![(String::new(), 1.0f64)];

    while !frontier.is_empty() {
        let expanded = exec.map(&frontier, |(prefix, p)| -> Result<_> {
            let d = m.next_char_dist(prefix)?;
            let len = prefix.chars().count();
            let mut emitted = Vec::new();
            let mut children = Vec::new();
            for (i, &pc) in d.iter().enumerate() {
                let q = p * pc;
                if q < cfg.tau {
                    continue;
                }
                if i == end {
                    if len >= cfg.l_min {
                        emitted.push((prefix.clone(), q));
                    }
                    continue;
                }
                let mut child = prefix.clone();
                child.push(alphabet.char_of(i as u32).expect("index below END"));
                if len + 1 >= cfg.l_max {
                    emitted.push((child, q));
                } else {
                    children.push((child, q));
                }
            }
            Ok((emitted, children))
        });
        let mut next = Vec::new();
        for r in expanded {
            let (emitted, children) = r?;
            out.extend(emitted);
            next.extend(children);
        }
        if out.len() + next.len() > cfg.cap {
            return Err(MopeError::CandidateCapExceeded {
                cap: cfg.cap,
                count: out.len() + next.len(),
            });
        }
        frontier = next;
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

/// Relative margin under which two probabilities count as tied.
pub const TIE_EPSILON: f64 = 1e-9;

const CHUNK: usize = 1024;

/// Pre-drawn Monte-Carlo sample used to estimate guess numbers.
///
/// `G(q) = 1 + Σ_{p_i > q} 1 / (n·p_i)` over the non-empty samples, where
/// `n` counts every draw. Sampling runs in fixed-size chunks, each with its
/// own seeded stream, so the pool does not depend on the thread count.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePool {
    n: usize,
    /// Non-empty sample probabilities, descending.
    probs: Vec<f64>,
    /// `cum[i] = Σ_{j<i} 1 / (n·probs[j])`.
    cum: Vec<f64>,
}

impl SamplePool {
    pub fn build<M: PasswordModel + ?Sized>(
        m: &M,
        n_samples: usize,
        seed: u64,
        exec: Execution,
    ) -> Result<Self> {
        if n_samples == 0 {
            return Err(MopeError::InvalidArgument("n_samples must be >= 1".into()));
        }
        let chunks = n_samples.div_ceil(CHUNK);
        let drawn = exec.map_range(chunks, |c| -> Result<Vec<f64>> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = CHUNK.min(n_samples - c * CHUNK);
            let mut v = Vec::with_capacity(count);
            for _ in 0..count {
                let (s, p) = sample_password(m, &mut rng)?;
                if !s.is_empty() {
                    v.push(p);
                }
            }
            Ok(v)
        });
        let mut probs = Vec::with_capacity(n_samples);
        for d in drawn {
            probs.extend(d?);
        }
        Ok(SamplePool::from_probs(n_samples, probs))
    }

    /// Pool from known sample probabilities; `n` counts all draws.
    pub fn from_probs(n: usize, mut probs: Vec<f64>) -> Self {
        probs.sort_by(|a, b| b.total_cmp(a));
        let mut cum = Vec::with_capacity(probs.len() + 1);
        let mut acc = 0.0;
        cum.push(acc);
        for &p in &probs {
            acc += 1.0 / (n as f64 * p);
            cum.push(acc);
        }
        SamplePool { n, probs, cum }
    }

    pub fn n_samples(&self) -> usize {
        self.n
    }

    pub fn guess_number_for_prob(&self, q: f64) -> Result<f64> {
        if !(q > 0.0) {
            return Err(MopeError::ZeroProbability);
        }
        let cut = q * (1.0 + TIE_EPSILON);
        let idx = self.probs.partition_point(|&p| p > cut);
        Ok(1.0 + self.cum[idx])
    }

    pub fn estimate<M: PasswordModel + ?Sized>(
        &self,
        m: &M,
        password: &str,
    ) -> Result<GuessEstimate> {
        let q = sequence_prob(m, password)?;
        let g = self.guess_number_for_prob(q)?;
        Ok(GuessEstimate {
            password: password.to_string(),
            probability: q,
            guess_number: g,
            log10_guess_number: g.log10(),
        })
    }

    pub fn estimate_all<M: PasswordModel + ?Sized>(
        &self,
        m: &M,
        passwords: &[String],
        exec: Execution,
    ) -> Result<Vec<GuessEstimate>> {
        exec.map(passwords, |p| self.estimate(m, p))
            .into_iter()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuessEstimate {
    pub password: String,
    pub probability: f64,
    pub guess_number: f64,
    pub log10_guess_number: f64,
}

/// Guess number of one password from a fresh pool of `n_samples` draws.
pub fn estimate_guess_number<M: PasswordModel + ?Sized>(
    m: &M,
    password: &str,
    n_samples: usize,
    seed: u64,
) -> Result<GuessEstimate> {
    SamplePool::build(m, n_samples, seed, Execution::default())?.estimate(m, password)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrackMode {
    Single,
    MinAuto,
}

/// Fraction of guess numbers at or below each budget.
pub fn crack_fractions(guess_numbers: &[f64], budgets: &[f64]) -> Result<Vec<f64>> {
    if guess_numbers.is_empty() {
        return Err(MopeError::EmptyInput);
    }
    if budgets.windows(2).any(|w| w[0] > w[1]) {
        return Err(MopeError::InvalidArgument(
            "budgets must be ascending".into(),
        ));
    }
    let n = guess_numbers.len() as f64;
    Ok(budgets
        .iter()
        .map(|&b| guess_numbers.iter().filter(|&&g| g <= b).count() as f64 / n)
        .collect())
}

/// Element-wise minimum across models' guess numbers.
pub fn min_auto(per_model: &[Vec<f64>]) -> Vec<f64> {
    let n = per_model.first().map_or(0, Vec::len);
    (0..n)
        .map(|i| per_model.iter().map(|g| g[i]).fold(f64::INFINITY, f64::min))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrackCurve {
    pub label: String,
    pub budgets: Vec<f64>,
    pub fractions: Vec<f64>,
}

/// Crack curves for a set of models over one test set.
///
/// Each model gets its own pool of `n_samples` draws. In `Single` mode one
/// curve per model is returned; `MinAuto` adds the curve of the per-password
/// minimum across models.
pub fn crack_curve(
    models: &[(&str, &dyn PasswordModel)],
    test_set: &[String],
    budgets: &[f64],
    mode: CrackMode,
    n_samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<CrackCurve>> {
    if test_set.is_empty() {
        return Err(MopeError::EmptyInput);
    }
    let mut all = Vec::with_capacity(models.len());
    let mut curves = Vec::new();
    for (label, m) in models {
        let pool = SamplePool::build(*m, n_samples, seed, exec)?;
        let g: Vec<f64> = pool
            .estimate_all(*m, test_set, exec)?
            .into_iter()
            .map(|e| e.guess_number)
            .collect();
        curves.push(CrackCurve {
            label: label.to_string(),
            budgets: budgets.to_vec(),
            fractions: crack_fractions(&g, budgets)?,
        });
        all.push(g);
    }
    if mode == CrackMode::MinAuto {
        curves.push(CrackCurve {
            label: "min_auto".into(),
            budgets: budgets.to_vec(),
            fractions: crack_fractions(&min_auto(&all), budgets)?,
        });
    }
    Ok(curves)
}

/// Pretrains a base expert on the whole corpus, then fine-tunes one expert
/// per cluster on the passwords routed to it.
///
/// Passwords are routed by the cluster model's stored labels when they cover
/// this corpus, otherwise by nearest center. A cluster that receives no
/// passwords keeps a copy of the base expert.
pub fn train_offline(
    corpus: &[&str],
    clusters: ClusterModel,
    alphabet: &Alphabet,
    cfg: &NGramConfig,
    beta: f64,
    max_len: usize,
    exec: Execution,
) -> Result<OfflineMope> {
    let base = pretrain(corpus, alphabet, cfg)?;
    let labels = match &clusters.labels {
        Some(l) if l.len() == corpus.len() => l.clone(),
        _ => corpus
            .iter()
            .map(|p| clusters.assign(p))
            .collect::<Result<Vec<_>>>()?,
    };
    let mut members: Vec<Vec<&str>> = vec![Vec::new(); clusters.k];
    for (p, &l) in corpus.iter().zip(&labels) {
        members[l].push(p);
    }
    let experts = exec
        .map_range(clusters.k, |j| {
            if members[j].is_empty() {
                Ok(base.clone())
            } else {
                finetune(&base, &members[j], alphabet, cfg, j as u32, corpus.len())
            }
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    OfflineMope::new(
        alphabet.clone(),
        max_len,
        Gate::new(clusters, beta)?,
        experts,
    )
}
