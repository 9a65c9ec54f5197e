//! Compressing a mixture teacher into one student model.
//!
//! The hybrid objective is `α·T²·KL(temper(t) ‖ temper(s)) + (1−α)·CE(s, y)`
//! with `temper(p) ∝ p^(1/T)`. Two students are provided:
//!
//! * a count student ([`distill`]) that accumulates `α·t(x) + (1−α)·onehot(y)`
//!   as pseudo-counts per prefix. Because `temper` is a bijection on the
//!   simplex, the soft term alone is minimized by `s = t` for every `T`, so the
//!   untempered teacher distribution is the soft target.
//! * a logit-table student ([`distill_logits`]) trained by gradient descent on
//!   the loss itself, where `T` shapes the gradients.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Alphabet, Symbol};
use crate::error::{MopeError, Result};
use crate::expert::{password_context, Expert, ExpertKind, NGramBuilder, NGramConfig, NGramExpert};
use crate::offline::PasswordModel;
use crate::parallel::Execution;
use crate::prob::kl_divergence;

/// `p^(1/T)` renormalized, computed in log space.
pub fn temper(p: &[f64], temperature: f64) -> Vec<f64> {
    let logs: Vec<f64> = p.iter().map(|&x| x.ln()).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logs
        .iter()
        .map(|&l| {
            if l.is_finite() {
                ((l - max) / temperature).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= total);
    out
}

/// Hybrid distillation loss for one prediction.
pub fn distill_loss(
    teacher: &[f64],
    student: &[f64],
    label: usize,
    alpha: f64,
    temperature: f64,
) -> Result<f64> {
    if teacher.len() != student.len() || label >= student.len() {
        return Err(MopeError::InvalidArgument(
            "teacher, student and label must share one alphabet".into(),
        ));
    }
    if !(student[label] > 0.0) {
        return Err(MopeError::ZeroProbability);
    }
    let soft = if alpha > 0.0 {
        let kl = kl_divergence(&temper(teacher, temperature), &temper(student, temperature));
        alpha * temperature * temperature * kl
    } else {
        0.0
    };
    let hard = if alpha < 1.0 {
        (1.0 - alpha) * -student[label].ln()
    } else {
        0.0
    };
    Ok(soft + hard)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub alpha: f64,
    pub temperature: f64,
    /// Step size of the logit-table student.
    pub learning_rate: f64,
    /// Full-batch gradient steps of the logit-table student.
    pub epochs: usize,
    /// Passwords drawn from the corpus; all their prefixes are used.
    pub sample_count: usize,
    /// Shape of the student (order and smoothing).
    pub ngram: NGramConfig,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            alpha: 0.7,
            temperature: 2.0,
            learning_rate: 0.5,
            epochs: 200,
            sample_count: 20_000,
            ngram: NGramConfig::default(),
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(MopeError::InvalidArgument("alpha must be in [0, 1]".into()));
        }
        if !(self.temperature > 0.0) || !(self.learning_rate > 0.0) {
            return Err(MopeError::InvalidArgument(
                "temperature and learning rate must be > 0".into(),
            ));
        }
        if self.sample_count == 0 {
            return Err(MopeError::InvalidArgument(
                "sample_count must be >= 1".into(),
            ));
        }
        self.ngram.validate()
    }
}

/// A distinct sampled prefix with its teacher distribution and how often each
/// next symbol followed it.
#[derive(Debug, Clone)]
pub struct PrefixStat {
    pub prefix: String,
    pub count: f64,
    pub labels: BTreeMap<Symbol, f64>,
    pub teacher: Vec<f64>,
}

/// Draws `sample_count` passwords uniformly (with replacement) from `corpus`,
/// expands every prefix, and queries the teacher once per distinct prefix.
pub fn sample_prefixes<M: PasswordModel + ?Sized>(
    teacher: &M,
    corpus: &[&str],
    sample_count: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<PrefixStat>> {
    if corpus.is_empty() {
        return Err(MopeError::InsufficientData(
            "distillation corpus is empty".into(),
        ));
    }
    let alphabet = teacher.alphabet();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drawn: BTreeMap<&str, usize> = BTreeMap::new();
    for _ in 0..sample_count {
        *drawn
            .entry(corpus[rng.gen_range(0..corpus.len())])
            .or_default() += 1;
    }
    let mut by_prefix: BTreeMap<String, (f64, BTreeMap<Symbol, f64>)> = BTreeMap::new();
    for (pw, n) in drawn {
        let chars: Vec<char> = pw.chars().collect();
        for i in 0..=chars.len() {
            let label = match chars.get(i) {
                Some(&c) => alphabet.id(c).ok_or(MopeError::UnknownSymbol(c))?,
                None => alphabet.end(),
            };
            let slot = by_prefix.entry(chars[..i].iter().collect()).or_default();
            slot.0 += n as f64;
            *slot.1.entry(label).or_default() += n as f64;
        }
    }
    let entries: Vec<_> = by_prefix.into_iter().collect();
    exec.map(&entries, |(prefix, (count, labels))| {
        Ok(PrefixStat {
            prefix: prefix.clone(),
            count: *count,
            labels: labels.clone(),
            teacher: teacher.next_char_dist(prefix)?,
        })
    })
    .into_iter()
    .collect()
}

/// Count student fitted to the hybrid targets of sampled prefixes.
pub fn distill<M: PasswordModel + ?Sized>(
    teacher: &M,
    corpus: &[&str],
    cfg: &DistillConfig,
    seed: u64,
    exec: Execution,
) -> Result<NGramExpert> {
    cfg.validate()?;
    let stats = sample_prefixes(teacher, corpus, cfg.sample_count, seed, exec)?;
    distill_from_stats(teacher.alphabet(), &stats, cfg)
}

pub fn distill_from_stats(
    alphabet: &Alphabet,
    stats: &[PrefixStat],
    cfg: &DistillConfig,
) -> Result<NGramExpert> {
    let mut b = NGramBuilder::for_alphabet(cfg.ngram.order, alphabet)?;
    for st in stats {
        let ctx = password_context(alphabet, &st.prefix)?;
        if cfg.alpha > 0.0 {
            b.observe_dist(&ctx, &st.teacher, cfg.alpha * st.count)?;
        }
        if cfg.alpha < 1.0 {
            for (&y, &n) in &st.labels {
                b.observe(&ctx, y, (1.0 - cfg.alpha) * n)?;
            }
        }
    }
    b.build(cfg.ngram.lambda, ExpertKind::Distilled, alphabet.digest())
}

/// Mean `KL(teacher ‖ student)` of next-character distributions over probes.
pub fn student_fidelity<T, S>(teacher: &T, student: &S, probes: &[String]) -> Result<f64>
where
    T: PasswordModel + ?Sized,
    S: PasswordModel + ?Sized,
{
    if probes.is_empty() {
        return Err(MopeError::EmptyInput);
    }
    let mut total = 0.0;
    for p in probes {
        total += kl_divergence(&teacher.next_char_dist(p)?, &student.next_char_dist(p)?);
    }
    Ok(total / probes.len() as f64)
}

fn softmax(z: &[f64], temperature: f64) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut e: Vec<f64> = z.iter().map(|&x| ((x - max) / temperature).exp()).collect();
    let total: f64 = e.iter().sum();
    e.iter_mut().for_each(|x| *x /= total);
    e
}

/// Student with one free logit vector per context (last `order` symbols).
/// Unseen contexts back off to their longest seen suffix.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitStudent {
    order: usize,
    output_size: usize,
    context_size: usize,
    tables: Vec<HashMap<Vec<Symbol>, Vec<f64>>>,
}

struct ContextTarget {
    weight: f64,
    soft: Vec<f64>,
    hard: Vec<f64>,
}

impl LogitStudent {
    pub fn order(&self) -> usize {
        self.order
    }

    fn logits(&self, context: &[Symbol]) -> &[f64] {
        for j in (0..=self.order.min(context.len())).rev() {
            if let Some(z) = self.tables[j].get(&context[context.len() - j..]) {
                return z;
            }
        }
        &self.tables[0][&Vec::new()]
    }
}

impl Expert for LogitStudent {
    fn output_size(&self) -> usize {
        self.output_size
    }

    fn next_dist_into(&self, context: &[Symbol], out: &mut [f64]) -> Result<()> {
        if let Some(&s) = context.iter().find(|&&s| s as usize >= self.context_size) {
            return Err(MopeError::UnknownSymbolId(s));
        }
        out.copy_from_slice(&softmax(self.logits(context), 1.0));
        Ok(())
    }
}

/// Mean distillation loss of `student` on held-out prefix statistics.
pub fn mean_distill_loss<E: Expert + ?Sized>(
    student: &E,
    alphabet: &Alphabet,
    stats: &[PrefixStat],
    alpha: f64,
    temperature: f64,
) -> Result<f64> {
    let mut total = 0.0;
    let mut weight = 0.0;
    for st in stats {
        let s = student.next_dist(&password_context(alphabet, &st.prefix)?)?;
        for (&y, &n) in &st.labels {
            total += n * distill_loss(&st.teacher, &s, y as usize, alpha, temperature)?;
            weight += n;
        }
    }
    Ok(total / weight)
}

/// Logit-table student trained by full-batch gradient descent on the hybrid
/// loss, starting from uniform logits. Each context's block of logits moves
/// along the gradient of that context's mean loss:
/// `α·T·(softmax(z/T) − temper(t)) + (1−α)·(softmax(z) − ŷ)`.
pub fn distill_logits(
    alphabet: &Alphabet,
    stats: &[PrefixStat],
    cfg: &DistillConfig,
) -> Result<LogitStudent> {
    cfg.validate()?;
    if stats.is_empty() {
        return Err(MopeError::InsufficientData("no prefixes to distill".into()));
    }
    let v = alphabet.output_size();
    let order = cfg.ngram.order;
    let mut targets: Vec<HashMap<Vec<Symbol>, ContextTarget>> =
        (0..=order).map(|_| HashMap::new()).collect();
    for st in stats {
        let ctx = password_context(alphabet, &st.prefix)?;
        let soft = temper(&st.teacher, cfg.temperature);
        for j in 0..=order.min(ctx.len()) {
            let t = targets[j]
                .entry(ctx[ctx.len() - j..].to_vec())
                .or_insert_with(|| ContextTarget {
                    weight: 0.0,
                    soft: vec![0.0; v],
                    hard: vec![0.0; v],
                });
            t.weight += st.count;
            for (a, b) in t.soft.iter_mut().zip(&soft) {
                *a += st.count * b;
            }
            for (&y, &n) in &st.labels {
                t.hard[y as usize] += n;
            }
        }
    }
    let (alpha, temp, eta) = (cfg.alpha, cfg.temperature, cfg.learning_rate);
    let tables = targets
        .into_iter()
        .map(|table| {
            table
                .into_iter()
                .map(|(ctx, t)| {
                    let soft: Vec<f64> = t.soft.iter().map(|x| x / t.weight).collect();
                    let hard: Vec<f64> = t.hard.iter().map(|x| x / t.weight).collect();
                    let mut z = vec![0.0; v];
                    for _ in 0..cfg.epochs {
                        let st = softmax(&z, temp);
                        let s1 = softmax(&z, 1.0);
                        for i in 0..v {
                            let g = alpha * temp * (st[i] - soft[i])
                                + (1.0 - alpha) * (s1[i] - hard[i]);
                            z[i] -= eta * g;
                        }
                    }
                    (ctx, z)
                })
                .collect()
        })
        .collect();
    Ok(LogitStudent {
        order,
        output_size: v,
        context_size: alphabet.context_size(),
        tables,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expert::pretrain;
    use crate::offline::Standalone;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn loss_reference_values() {
        let t = [0.5, 0.5];
        let s = [0.25, 0.75];
        assert_abs_diff_eq!(
            distill_loss(&t, &s, 0, 1.0, 1.0).unwrap(),
            0.143_841_036_2,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(
            distill_loss(&t, &s, 1, 0.0, 3.0).unwrap(),
            -(0.75f64.ln()),
            epsilon = 1e-15
        );
        let one = [1.0, 0.0];
        assert_eq!(distill_loss(&one, &one, 0, 0.5, 2.0).unwrap(), 0.0);
        assert!(matches!(
            distill_loss(&t, &[1.0, 0.0], 1, 0.5, 1.0),
            Err(MopeError::ZeroProbability)
        ));
    }

    #[test]
    fn high_temperature_flattens() {
        let p = temper(&[0.7, 0.2, 0.1], 1e6);
        assert!(p.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-6));
        let same = temper(&[0.7, 0.2, 0.1], 1.0);
        assert_abs_diff_eq!(same[0], 0.7, epsilon = 1e-12);
    }

    fn corpus() -> Vec<&'static str> {
        vec!["abab", "abba", "aab", "ba", "bbb", "abab", "ab", "aaab"]
    }

    #[test]
    fn hard_only_equals_pretraining_on_samples() {
        let a = Alphabet::new("ab".chars()).unwrap();
        let cfg = DistillConfig {
            alpha: 0.0,
            temperature: 1.0,
            sample_count: 500,
            ngram: NGramConfig {
                order: 3,
                ..Default::default()
            },
            ..Default::default()
        };
        let base = pretrain(&corpus(), &a, &cfg.ngram).unwrap();
        let teacher = Standalone::new(base, a.clone(), 16).unwrap();
        let student = distill(&teacher, &corpus(), &cfg, 9, Execution::Parallel).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = corpus();
        let drawn: Vec<&str> = (0..500).map(|_| c[rng.gen_range(0..c.len())]).collect();
        let reference = pretrain(&drawn, &a, &cfg.ngram).unwrap();
        for p in ["", "a", "ab", "bab", "abab", "bbbb"] {
            let ctx = password_context(&a, p).unwrap();
            assert_eq!(
                student.next_dist(&ctx).unwrap(),
                reference.next_dist(&ctx).unwrap()
            );
        }
        assert_eq!(student.kind(), ExpertKind::Distilled);
    }

    #[test]
    fn deterministic_under_seed() {
        let a = Alphabet::new("ab".chars()).unwrap();
        let cfg = DistillConfig {
            sample_count: 300,
            ..Default::default()
        };
        let teacher = Standalone::new(pretrain(&corpus(), &a, &cfg.ngram).unwrap(), a, 16).unwrap();
        let s1 = distill(&teacher, &corpus(), &cfg, 4, Execution::Parallel).unwrap();
        let s2 = distill(&teacher, &corpus(), &cfg, 4, Execution::Sequential).unwrap();
        assert_eq!(s1.to_bytes(), s2.to_bytes());
        assert!(distill(&teacher, &[], &cfg, 4, Execution::Sequential).is_err());
    }

    #[test]
    fn self_fidelity_is_zero() {
        let a = Alphabet::new("ab".chars()).unwrap();
        let e = pretrain(&corpus(), &a, &NGramConfig::default()).unwrap();
        let t = Standalone::new(e.clone(), a.clone(), 16).unwrap();
        let s = Standalone::new(e, a, 16).unwrap();
        let probes: Vec<String> = ["", "a", "ab"].iter().map(|s| s.to_string()).collect();
        assert_eq!(student_fidelity(&t, &s, &probes).unwrap(), 0.0);
    }

    #[test]
    fn logit_student_learns() {
        let a = Alphabet::new("ab".chars()).unwrap();
        let cfg = DistillConfig {
            ngram: NGramConfig {
                order: 2,
                ..Default::default()
            },
            ..Default::default()
        };
        let teacher =
            Standalone::new(pretrain(&corpus(), &a, &cfg.ngram).unwrap(), a.clone(), 16).unwrap();
        let train = sample_prefixes(&teacher, &corpus(), 2000, 1, Execution::Sequential).unwrap();
        let held = sample_prefixes(&teacher, &corpus(), 500, 2, Execution::Sequential).unwrap();
        let untrained = distill_logits(&a, &train, &DistillConfig { epochs: 0, ..cfg }).unwrap();
        let student = distill_logits(&a, &train, &cfg).unwrap();
        let before = mean_distill_loss(&untrained, &a, &held, cfg.alpha, cfg.temperature).unwrap();
        let after = mean_distill_loss(&student, &a, &held, cfg.alpha, cfg.temperature).unwrap();
        assert!(after <= 0.7 * before, "{before} -> {after}");
    }

    proptest! {
        #[test]
        fn loss_non_negative(
            t in prop::collection::vec(0.01f64..1.0, 4),
            s in prop::collection::vec(0.01f64..1.0, 4),
            label in 0usize..4,
            alpha in 0.0f64..=1.0,
            temp in 0.1f64..10.0,
        ) {
            let norm = |v: Vec<f64>| { let z: f64 = v.iter().sum(); v.into_iter().map(|x| x / z).collect::<Vec<_>>() };
            let (t, s) = (norm(t), norm(s));
            prop_assert!(distill_loss(&t, &s, label, alpha, temp).unwrap() >= -1e-12);
            prop_assert!(kl_divergence(&t, &s) >= -1e-12);
        }
    }
}
