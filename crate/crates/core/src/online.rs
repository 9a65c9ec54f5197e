//! Online (targeted) guessing: a leaked source password is transformed into
//! candidates by short edit sequences scored by per-cluster edit experts.
//!
//! An edit expert is an n-gram over edit operations. Its context is
//! `[SIG, LEN, prev2, prev1]`: the character-class signature and length of
//! the source, followed by the last two operations (padded with a start
//! marker). Operation positions always refer to the string as edited so far.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::ClusterModel;
use crate::corpus::{levenshtein, Alphabet, PairRecord, Symbol, MAX_PASSWORD_LEN};
use crate::error::{MopeError, Result};
use crate::expert::{Expert, ExpertKind, NGramBuilder, NGramExpert};
use crate::gate::{Gate, SparseWeights, DEFAULT_ONLINE_BETA};
use crate::parallel::Execution;

/// Largest operation position; intermediate strings never exceed this length.
pub const MAX_OP_POS: usize = 20;
const POSITIONS: usize = MAX_OP_POS + 1;
const SIGNATURES: usize = 16;
const LENGTHS: usize = MAX_PASSWORD_LEN + 1;
/// `[SIG, LEN, prev2, prev1]`.
pub const ONLINE_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EditOp {
    Ins(char, usize),
    Del(usize),
    Rep(char, usize),
    End,
}

impl fmt::Display for EditOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EditOp::Ins(c, p) => write!(f, "ins({c:?},{p})"),
            EditOp::Del(p) => write!(f, "del({p})"),
            EditOp::Rep(c, p) => write!(f, "rep({c:?},{p})"),
            EditOp::End => write!(f, "end"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpType {
    Ins,
    Del,
    Rep,
    End,
}

impl EditOp {
    pub fn op_type(&self) -> OpType {
        match self {
            EditOp::Ins(..) => OpType::Ins,
            EditOp::Del(_) => OpType::Del,
            EditOp::Rep(..) => OpType::Rep,
            EditOp::End => OpType::End,
        }
    }

    fn apply(&self, s: &mut Vec<char>) -> Result<()> {
        let len = s.len();
        let out_of_range = || MopeError::EditOutOfRange {
            op: self.to_string(),
            len,
        };
        match *self {
            EditOp::Ins(c, p) if p <= len => s.insert(p, c),
            EditOp::Del(p) if p < len => {
                s.remove(p);
            }
            EditOp::Rep(c, p) if p < len => s[p] = c,
            EditOp::End => {}
            _ => return Err(out_of_range()),
        }
        Ok(())
    }
}

/// Operations in order, terminated by exactly one `End`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EditSequence(Vec<EditOp>);

impl EditSequence {
    pub fn new(ops: Vec<EditOp>) -> Result<Self> {
        let ends = ops.iter().filter(|o| **o == EditOp::End).count();
        if ends != 1 || ops.last() != Some(&EditOp::End) {
            return Err(MopeError::InvalidArgument(
                "an edit sequence ends with exactly one end".into(),
            ));
        }
        Ok(EditSequence(ops))
    }

    pub fn ops(&self) -> &[EditOp] {
        &self.0
    }

    /// Number of edits, not counting `End`.
    pub fn edit_count(&self) -> usize {
        self.0.len() - 1
    }
}

impl fmt::Display for EditSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(EditOp::to_string).collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

/// Levenshtein-minimal script from `src` to `tgt`.
///
/// Among optimal scripts the walk prefers replace, then delete, then insert,
/// then match, at each step; edits therefore happen as far left as possible.
pub fn min_edit_script(src: &str, tgt: &str) -> EditSequence {
    let a: Vec<char> = src.chars().collect();
    let b: Vec<char> = tgt.chars().collect();
    let (n, m) = (a.len(), b.len());
    // d[i][j]: distance between a[i..] and b[j..]
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..=n).rev() {
        for j in (0..=m).rev() {
            d[i][j] = if i == n {
                m - j
            } else if j == m {
                n - i
            } else {
                let sub = d[i + 1][j + 1] + usize::from(a[i] != b[j]);
                sub.min(d[i + 1][j] + 1).min(d[i][j + 1] + 1)
            };
        }
    }
    let mut ops = Vec::with_capacity(d[0][0] + 1);
    let (mut i, mut j) = (0, 0);
    while i < n || j < m {
        if i < n && j < m && a[i] != b[j] && d[i][j] == d[i + 1][j + 1] + 1 {
            ops.push(EditOp::Rep(b[j], j));
            i += 1;
            j += 1;
        } else if i < n && d[i][j] == d[i + 1][j] + 1 {
            ops.push(EditOp::Del(j));
            i += 1;
        } else if j < m && d[i][j] == d[i][j + 1] + 1 {
            ops.push(EditOp::Ins(b[j], j));
            j += 1;
        } else {
            i += 1;
            j += 1;
        }
    }
    ops.push(EditOp::End);
    EditSequence(ops)
}

/// Applies each operation in order to the evolving string.
pub fn apply_edits(src: &str, seq: &EditSequence) -> Result<String> {
    let mut s: Vec<char> = src.chars().collect();
    for op in seq.ops() {
        op.apply(&mut s)?;
    }
    if s.is_empty() || s.len() > MAX_PASSWORD_LEN {
        return Err(MopeError::InvalidPassword(format!(
            "edited password has length {}",
            s.len()
        )));
    }
    Ok(s.into_iter().collect())
}

/// Bit set of character classes present: digit, lower, upper, other.
pub fn class_signature(s: &str) -> usize {
    s.chars().fold(0, |acc, c| {
        acc | if c.is_ascii_digit() {
            1
        } else if c.is_uppercase() {
            4
        } else if c.is_alphabetic() {
            2
        } else {
            8
        }
    })
}

/// Integer ids for edit operations and context markers over one alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct OpVocab {
    alphabet: Alphabet,
}

impl OpVocab {
    pub fn new(alphabet: Alphabet) -> Self {
        OpVocab { alphabet }
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn n(&self) -> usize {
        self.alphabet.len()
    }

    /// Number of operations including `End`.
    pub fn n_ops(&self) -> usize {
        2 * self.n() * POSITIONS + POSITIONS + 1
    }

    pub fn end_id(&self) -> Symbol {
        (self.n_ops() - 1) as Symbol
    }

    pub fn start_id(&self) -> Symbol {
        self.n_ops() as Symbol
    }

    pub fn context_size(&self) -> usize {
        self.n_ops() + 1 + SIGNATURES + LENGTHS
    }

    fn ins_id(&self, c: usize, pos: usize) -> Symbol {
        (c * POSITIONS + pos) as Symbol
    }

    fn del_id(&self, pos: usize) -> Symbol {
        (self.n() * POSITIONS + pos) as Symbol
    }

    fn rep_id(&self, c: usize, pos: usize) -> Symbol {
        (self.n() * POSITIONS + POSITIONS + c * POSITIONS + pos) as Symbol
    }

    pub fn id(&self, op: EditOp) -> Result<Symbol> {
        let char_id = |c: char| {
            self.alphabet
                .id(c)
                .map(|x| x as usize)
                .ok_or(MopeError::UnknownSymbol(c))
        };
        let check = |p: usize| {
            if p > MAX_OP_POS {
                Err(MopeError::EditOutOfRange {
                    op: op.to_string(),
                    len: MAX_OP_POS,
                })
            } else {
                Ok(p)
            }
        };
        Ok(match op {
            EditOp::Ins(c, p) => self.ins_id(char_id(c)?, check(p)?),
            EditOp::Del(p) => self.del_id(check(p)?),
            EditOp::Rep(c, p) => self.rep_id(char_id(c)?, check(p)?),
            EditOp::End => self.end_id(),
        })
    }

    pub fn op(&self, id: Symbol) -> Option<EditOp> {
        let id = id as usize;
        let n = self.n();
        let block = n * POSITIONS;
        let ch = |i: usize| {
            self.alphabet
                .char_of(i as Symbol)
                .expect("char index in range")
        };
        if id < block {
            Some(EditOp::Ins(ch(id / POSITIONS), id % POSITIONS))
        } else if id < block + POSITIONS {
            Some(EditOp::Del(id - block))
        } else if id < 2 * block + POSITIONS {
            let r = id - block - POSITIONS;
            Some(EditOp::Rep(ch(r / POSITIONS), r % POSITIONS))
        } else if id == self.n_ops() - 1 {
            Some(EditOp::End)
        } else {
            None
        }
    }

    /// `[SIG, LEN, START, START]` for a source password.
    pub fn initial_context(&self, src: &str) -> [Symbol; ONLINE_ORDER] {
        let base = self.n_ops() + 1;
        let len = src.chars().count().min(MAX_PASSWORD_LEN);
        [
            (base + class_signature(src)) as Symbol,
            (base + SIGNATURES + len) as Symbol,
            self.start_id(),
            self.start_id(),
        ]
    }

    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"edit-ops");
        h.update((POSITIONS as u32).to_le_bytes());
        h.update(self.alphabet.as_string().as_bytes());
        h.finalize().into()
    }
}

fn push_op(ctx: &mut [Symbol; ONLINE_ORDER], op: Symbol) {
    ctx[2] = ctx[3];
    ctx[3] = op;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnlineConfig {
    pub lambda: f64,
    /// Base-count weight when fine-tuning; `None` uses the cluster-size rule.
    pub gamma: Option<f64>,
    pub max_ed: usize,
    pub beta: f64,
    pub beam_width: usize,
    pub top_k: usize,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig {
            lambda: 0.01,
            gamma: None,
            max_ed: 4,
            beta: DEFAULT_ONLINE_BETA,
            beam_width: 150,
            top_k: 150,
        }
    }
}

impl OnlineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || self.gamma.is_some_and(|g| !(g >= 0.0)) {
            return Err(MopeError::InvalidArgument(
                "need lambda > 0 and gamma >= 0".into(),
            ));
        }
        if self.max_ed < 1 || self.max_ed > MAX_OP_POS - MAX_PASSWORD_LEN {
            return Err(MopeError::InvalidArgument(format!(
                "max_ed must be in 1..={}",
                MAX_OP_POS - MAX_PASSWORD_LEN
            )));
        }
        if self.beam_width < 1 || self.top_k < 1 || self.top_k > self.beam_width {
            return Err(MopeError::InvalidArgument(
                "need 1 <= top_k <= beam_width".into(),
            ));
        }
        Ok(())
    }
}

fn pair_counts(vocab: &OpVocab, pairs: &[&PairRecord], max_ed: usize) -> Result<NGramBuilder> {
    let mut b = NGramBuilder::new(ONLINE_ORDER, vocab.n_ops(), vocab.context_size())?;
    for p in pairs {
        let script = min_edit_script(&p.src, &p.tgt);
        if script.edit_count() > max_ed {
            return Err(MopeError::InvalidArgument(format!(
                "pair exceeds edit distance {max_ed}"
            )));
        }
        let mut ctx = vocab.initial_context(&p.src);
        for op in script.ops() {
            let id = vocab.id(*op)?;
            b.observe(&ctx, id, 1.0)?;
            push_op(&mut ctx, id);
        }
    }
    Ok(b)
}

/// Edit expert trained on the minimal scripts of all pairs.
pub fn pretrain_online(
    pairs: &[PairRecord],
    vocab: &OpVocab,
    cfg: &OnlineConfig,
) -> Result<NGramExpert> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(MopeError::InsufficientData("no training pairs".into()));
    }
    let refs: Vec<&PairRecord> = pairs.iter().collect();
    pair_counts(vocab, &refs, cfg.max_ed)?.build(cfg.lambda, ExpertKind::Pretrained, vocab.digest())
}

pub fn finetune_online(
    base: &NGramExpert,
    cluster_pairs: &[&PairRecord],
    vocab: &OpVocab,
    cfg: &OnlineConfig,
    cluster_id: u32,
    corpus_size: usize,
) -> Result<NGramExpert> {
    cfg.validate()?;
    if cluster_pairs.is_empty() {
        return Err(MopeError::InsufficientData(
            "fine-tuning cluster is empty".into(),
        ));
    }
    if base.vocab_digest() != vocab.digest() {
        return Err(MopeError::InvalidArgument(
            "base expert uses a different op vocabulary".into(),
        ));
    }
    let counts = pair_counts(vocab, cluster_pairs, cfg.max_ed)?;
    let gamma = cfg.gamma.unwrap_or_else(|| {
        crate::expert::NGramConfig::default_gamma(cluster_pairs.len(), corpus_size)
    });
    base.finetune(counts, cfg.lambda, gamma, cluster_id)
}

/// Gated mixture of edit experts; the gate sees only the source password.
#[derive(Debug, Clone)]
pub struct OnlineMope<E = NGramExpert> {
    vocab: OpVocab,
    gate: Gate,
    experts: Vec<E>,
    max_ed: usize,
    beam_width: usize,
    top_k: usize,
}

impl<E: Expert> OnlineMope<E> {
    pub fn new(vocab: OpVocab, gate: Gate, experts: Vec<E>, cfg: &OnlineConfig) -> Result<Self> {
        cfg.validate()?;
        if experts.len() != gate.k() {
            return Err(MopeError::InvalidArgument(format!(
                "{} experts for {} clusters",
                experts.len(),
                gate.k()
            )));
        }
        if experts.iter().any(|e| e.output_size() != vocab.n_ops()) {
            return Err(MopeError::InvalidArgument(
                "expert output size does not match the op vocabulary".into(),
            ));
        }
        Ok(OnlineMope {
            vocab,
            gate,
            experts,
            max_ed: cfg.max_ed,
            beam_width: cfg.beam_width,
            top_k: cfg.top_k,
        })
    }

    pub fn vocab(&self) -> &OpVocab {
        &self.vocab
    }

    pub fn gate(&self) -> &Gate {
        &self.gate
    }

    pub fn experts(&self) -> &[E] {
        &self.experts
    }

    pub fn max_ed(&self) -> usize {
        self.max_ed
    }

    pub fn beam_width(&self) -> usize {
        self.beam_width
    }

    pub fn top_k(&self) -> usize {
        self.top_k
    }

    /// Top-`k` candidates for `src` with the model's beam width.
    pub fn candidates(&self, src: &str) -> Result<Vec<(String, f64)>> {
        beam_search(self, src, self.beam_width, self.top_k)
    }
}

/// Pretrains on all pairs, then fine-tunes one expert per source cluster.
///
/// A cluster that receives no pairs keeps a copy of the base expert.
pub fn train_online(
    pairs: &[PairRecord],
    clusters: ClusterModel,
    alphabet: &Alphabet,
    cfg: &OnlineConfig,
) -> Result<OnlineMope> {
    let vocab = OpVocab::new(alphabet.clone());
    let base = pretrain_online(pairs, &vocab, cfg)?;
    let mut by_cluster: Vec<Vec<&PairRecord>> = vec![Vec::new(); clusters.k];
    for p in pairs {
        by_cluster[clusters.assign(&p.src)?].push(p);
    }
    let experts = by_cluster
        .iter()
        .enumerate()
        .map(|(j, ps)| {
            if ps.is_empty() {
                Ok(base.clone())
            } else {
                finetune_online(&base, ps, &vocab, cfg, j as u32, pairs.len())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let gate = Gate::new(clusters, cfg.beta)?;
    OnlineMope::new(vocab, gate, experts, cfg)
}

struct Beam {
    text: Vec<char>,
    ctx: [Symbol; ONLINE_ORDER],
    prob: f64,
}

/// Valid next operations for `text` after `used` edits.
fn valid_ops(vocab: &OpVocab, text: &[char], used: usize, max_ed: usize, out: &mut Vec<Symbol>) {
    out.clear();
    let len = text.len();
    if used < max_ed {
        let n = vocab.n();
        if len < MAX_OP_POS {
            for c in 0..n {
                for pos in 0..=len {
                    out.push(vocab.ins_id(c, pos));
                }
            }
        }
        for pos in 0..len {
            out.push(vocab.del_id(pos));
        }
        for c in 0..n {
            let ch = vocab
                .alphabet
                .char_of(c as Symbol)
                .expect("char index in range");
            for (pos, &cur) in text.iter().enumerate() {
                if cur != ch {
                    out.push(vocab.rep_id(c, pos));
                }
            }
        }
    }
    if (1..=MAX_PASSWORD_LEN).contains(&len) {
        out.push(vocab.end_id());
    }
}

/// Beam search of one expert; returns resulting strings with the summed
/// probability of the finished paths that reach them.
///
/// At every step each beam's distribution is restricted to the operations
/// valid for its current string and renormalized; the best `width` children
/// over all beams survive, and finished ones are collected.
pub fn expert_beam<E: Expert + ?Sized>(
    expert: &E,
    vocab: &OpVocab,
    src: &str,
    width: usize,
    max_ed: usize,
) -> Result<HashMap<String, f64>> {
    if width < 1 {
        return Err(MopeError::InvalidArgument("beam width must be >= 1".into()));
    }
    let end = vocab.end_id();
    let mut beams = vec![Beam {
        text: src.chars().collect(),
        ctx: vocab.initial_context(src),
        prob: 1.0,
    }];
    let mut finished: HashMap<String, f64> = HashMap::new();
    let mut dist = vec![0.0; vocab.n_ops()];
    let mut valid = Vec::new();

    for used in 0..=max_ed {
        if beams.is_empty() {
            break;
        }
        // (prob, beam index, op id)
        let mut children: Vec<(f64, usize, Symbol)> = Vec::new();
        for (bi, beam) in beams.iter().enumerate() {
            expert.next_dist_into(&beam.ctx, &mut dist)?;
            valid_ops(vocab, &beam.text, used, max_ed, &mut valid);
            let mass: f64 = valid.iter().map(|&o| dist[o as usize]).sum();
            if !(mass > 0.0) {
                continue;
            }
            for &o in &valid {
                let p = dist[o as usize];
                if p > 0.0 {
                    children.push((beam.prob * p / mass, bi, o));
                }
            }
        }
        let order = |a: &(f64, usize, Symbol), b: &(f64, usize, Symbol)| {
            b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
        };
        if children.len() > width {
            children.select_nth_unstable_by(width - 1, order);
            children.truncate(width);
        }
        children.sort_unstable_by(order);

        let mut next = Vec::with_capacity(children.len());
        for (p, bi, o) in children {
            let parent = &beams[bi];
            if o == end {
                *finished.entry(parent.text.iter().collect()).or_default() += p;
                continue;
            }
            let mut text = parent.text.clone();
            vocab.op(o).expect("valid op id").apply(&mut text)?;
            let mut ctx = parent.ctx;
            push_op(&mut ctx, o);
            next.push(Beam { text, ctx, prob: p });
        }
        beams = next;
    }
    Ok(finished)
}

/// Combines per-expert candidate scores with the source's gate weights.
pub fn combine_candidates(
    weights: &SparseWeights,
    per_expert: &[(usize, HashMap<String, f64>)],
    k: usize,
) -> Vec<(String, f64)> {
    let mut combined: HashMap<&str, f64> = HashMap::new();
    for (j, cands) in per_expert {
        let w = weights.weights()[*j];
        for (s, p) in cands {
            *combined.entry(s.as_str()).or_default() += w * p;
        }
    }
    let mut out: Vec<(String, f64)> = combined
        .into_iter()
        .map(|(s, p)| (s.to_string(), p))
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out.truncate(k);
    out
}

/// Top-`k` transformed candidates for `src`, best first.
pub fn beam_search<E: Expert>(
    m: &OnlineMope<E>,
    src: &str,
    width: usize,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    if width < 1 || k < 1 {
        return Err(MopeError::InvalidArgument(
            "beam width and k must be >= 1".into(),
        ));
    }
    m.vocab
        .alphabet
        .validate(src)
        .map_err(|r| MopeError::InvalidPassword(format!("{r:?}")))?;
    let weights = m.gate.weights(src)?;
    let per_expert = weights
        .active()
        .iter()
        .map(|&j| {
            Ok((
                j,
                expert_beam(&m.experts[j], &m.vocab, src, width, m.max_ed)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(combine_candidates(&weights, &per_expert, k))
}

/// Candidate lists for many sources, in input order.
pub fn beam_search_batch<E: Expert>(
    m: &OnlineMope<E>,
    sources: &[String],
    exec: Execution,
) -> Result<Vec<Vec<(String, f64)>>> {
    exec.map(sources, |s| m.candidates(s)).into_iter().collect()
}

/// Fraction of pairs whose target appears within the first `b` candidates.
pub fn online_crack_rate<E: Expert>(
    m: &OnlineMope<E>,
    test_pairs: &[PairRecord],
    budgets: &[usize],
    exec: Execution,
) -> Result<Vec<f64>> {
    if test_pairs.is_empty() {
        return Err(MopeError::EmptyInput);
    }
    if budgets.iter().any(|&b| b > m.top_k) {
        return Err(MopeError::InvalidArgument(format!(
            "budgets must not exceed the candidate count {}",
            m.top_k
        )));
    }
    let ranks = exec.map(test_pairs, |p| -> Result<Option<usize>> {
        let cands = m.candidates(&p.src)?;
        Ok(cands.iter().position(|(s, _)| *s == p.tgt))
    });
    let ranks = ranks.into_iter().collect::<Result<Vec<_>>>()?;
    let n = ranks.len() as f64;
    Ok(budgets
        .iter()
        .map(|&b| ranks.iter().filter(|r| r.is_some_and(|r| r < b)).count() as f64 / n)
        .collect())
}

/// Share of each operation type across the minimal scripts of `pairs`
/// (`End` excluded).
pub fn op_type_distribution(pairs: &[&PairRecord]) -> Vec<(OpType, f64)> {
    let mut counts: HashMap<OpType, usize> = HashMap::new();
    for p in pairs {
        for op in min_edit_script(&p.src, &p.tgt).ops() {
            if *op != EditOp::End {
                *counts.entry(op.op_type()).or_default() += 1;
            }
        }
    }
    let total = counts.values().sum::<usize>().max(1) as f64;
    [OpType::Ins, OpType::Del, OpType::Rep]
        .into_iter()
        .map(|t| (t, counts.get(&t).copied().unwrap_or(0) as f64 / total))
        .collect()
}

/// Probability mass an expert puts on each operation type as the first
/// edit, averaged over `sources`.
pub fn first_op_mass<E: Expert + ?Sized>(
    expert: &E,
    vocab: &OpVocab,
    sources: &[&str],
) -> Result<Vec<(OpType, f64)>> {
    let mut mass: HashMap<OpType, f64> = HashMap::new();
    for s in sources {
        let d = expert.next_dist(&vocab.initial_context(s))?;
        for (id, p) in d.iter().enumerate() {
            let t = vocab
                .op(id as Symbol)
                .expect("output id is an op")
                .op_type();
            *mass.entry(t).or_default() += p / sources.len() as f64;
        }
    }
    Ok([OpType::Ins, OpType::Del, OpType::Rep, OpType::End]
        .into_iter()
        .map(|t| (t, mass.get(&t).copied().unwrap_or(0.0)))
        .collect())
}

/// Edit distance helper re-exported for pair filtering.
pub fn within_distance(src: &str, tgt: &str, max_ed: usize) -> bool {
    levenshtein(src, tgt) <= max_ed
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expert::FixedExpert;
    use crate::features::{StdFeatureVector, FEATURE_DIM};
    use crate::gate::tests::identity_standardizer;
    use proptest::prelude::*;

    fn seq(ops: &[EditOp]) -> EditSequence {
        EditSequence::new(ops.to_vec()).unwrap()
    }

    #[test]
    fn scripts_from_examples() {
        assert_eq!(min_edit_script("abc", "abc"), seq(&[EditOp::End]));
        assert_eq!(
            min_edit_script("abc", "abcd"),
            seq(&[EditOp::Ins('d', 3), EditOp::End])
        );
        assert_eq!(
            min_edit_script("password", "Passw0rd"),
            seq(&[EditOp::Rep('P', 0), EditOp::Rep('0', 5), EditOp::End])
        );
        // deletion happens at the leftmost equivalent spot
        assert_eq!(
            min_edit_script("aab", "ab"),
            seq(&[EditOp::Del(0), EditOp::End])
        );
    }

    #[test]
    fn apply_examples() {
        assert_eq!(
            apply_edits("abc", &seq(&[EditOp::Ins('1', 3), EditOp::End])).unwrap(),
            "abc1"
        );
        assert_eq!(
            apply_edits("abc", &seq(&[EditOp::Del(0), EditOp::End])).unwrap(),
            "bc"
        );
        assert!(matches!(
            apply_edits("abc", &seq(&[EditOp::Del(3), EditOp::End])),
            Err(MopeError::EditOutOfRange { .. })
        ));
        assert!(apply_edits("a", &seq(&[EditOp::Del(0), EditOp::End])).is_err());
        assert!(EditSequence::new(vec![EditOp::End, EditOp::Del(0)]).is_err());
        assert!(EditSequence::new(vec![EditOp::Del(0)]).is_err());
    }

    #[test]
    fn vocab_round_trip() {
        let v = OpVocab::new(Alphabet::new("ab1".chars()).unwrap());
        for id in 0..v.n_ops() as Symbol {
            let op = v.op(id).unwrap();
            assert_eq!(v.id(op).unwrap(), id);
        }
        assert!(v.op(v.start_id()).is_none());
        assert!(v.id(EditOp::Del(21)).is_err());
        let ctx = v.initial_context("a1");
        assert!(ctx.iter().all(|&s| (s as usize) < v.context_size()));
    }

    fn single_cluster_gate(beta: f64) -> Gate {
        let mut c1 = [0.0; FEATURE_DIM];
        c1[0] = 1000.0;
        let cm = crate::clustering::ClusterModel::new(
            identity_standardizer(),
            vec![StdFeatureVector([0.0; FEATURE_DIM]), StdFeatureVector(c1)],
            vec![1, 1],
            None,
        )
        .unwrap();
        Gate::new(cm, beta).unwrap()
    }

    #[test]
    fn end_only_expert_returns_source() {
        let v = OpVocab::new(Alphabet::new("ab1".chars()).unwrap());
        let mut d = vec![0.0; v.n_ops()];
        d[v.end_id() as usize] = 1.0;
        let e = FixedExpert::new(d).unwrap();
        let cfg = OnlineConfig {
            beam_width: 5,
            top_k: 5,
            ..Default::default()
        };
        let m = OnlineMope::new(v, single_cluster_gate(2.5), vec![e.clone(), e], &cfg).unwrap();
        let out = m.candidates("ab").unwrap();
        assert_eq!(out[0].0, "ab");
        assert!((out[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn combination_arithmetic() {
        let w = SparseWeights::from_weights(vec![0.6, 0.4]).unwrap();
        let e0 = HashMap::from([("x1".to_string(), 0.5)]);
        let e1 = HashMap::from([("x1".to_string(), 0.25)]);
        let out = combine_candidates(&w, &[(0, e0), (1, e1)], 1);
        assert_eq!(out.len(), 1);
        assert!((out[0].1 - 0.4).abs() < 1e-15);
    }

    #[test]
    fn identity_pairs_favor_end() {
        let a = Alphabet::new("abc1".chars()).unwrap();
        let v = OpVocab::new(a);
        let pairs: Vec<PairRecord> = ["abc", "cab", "a1", "bb"]
            .iter()
            .map(|s| PairRecord::new(*s, *s))
            .collect();
        let e = pretrain_online(&pairs, &v, &OnlineConfig::default()).unwrap();
        let d = e.next_dist(&v.initial_context("abc")).unwrap();
        assert!(d[v.end_id() as usize] > 0.9);
        assert!(pretrain_online(&[], &v, &OnlineConfig::default()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(OnlineConfig {
            top_k: 200,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(OnlineConfig {
            max_ed: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(OnlineConfig::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn script_round_trip(src in "[ab1A!]{1,16}", tgt in "[ab1A!]{1,16}") {
            let s = min_edit_script(&src, &tgt);
            prop_assert_eq!(s.edit_count(), levenshtein(&src, &tgt));
            prop_assert_eq!(apply_edits(&src, &s).unwrap(), tgt);
        }

        #[test]
        fn signature_in_range(s in "[ -~]{1,16}") {
            prop_assert!(class_signature(&s) < SIGNATURES);
        }
    }
}
