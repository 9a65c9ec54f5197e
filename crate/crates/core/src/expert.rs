//! Conditional next-symbol experts.
//!
//! [`NGramExpert`] is the count-based reference expert: an interpolated
//! add-λ n-gram over integer symbols. Each order `j` mixes its context
//! counts with the order `j - 1` distribution through a Dirichlet prior of
//! strength `λ·|V|`, starting from the uniform distribution, so every
//! symbol keeps non-zero mass and the `order = 0` case is plain add-λ.
//!
//! Fine-tuning blends the cluster's counts with `γ`-weighted base counts
//! (pseudo-counts included), which leaves the base untouched and tends to the
//! base as `γ → ∞`.

use std::collections::HashMap;
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::corpus::{Alphabet, Symbol};
use crate::error::{MopeError, Result};

/// A conditional distribution over the next output symbol.
pub trait Expert: Send + Sync {
    /// Number of output symbols; distributions have exactly this many entries.
    fn output_size(&self) -> usize;

    /// Writes `P(· | context)` into `out`.
    fn next_dist_into(&self, context: &[Symbol], out: &mut [f64]) -> Result<()>;

    fn next_dist(&self, context: &[Symbol]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.output_size()];
        self.next_dist_into(context, &mut out)?;
        Ok(out)
    }
}

impl<E: Expert + ?Sized> Expert for &E {
    fn output_size(&self) -> usize {
        (**self).output_size()
    }
    fn next_dist_into(&self, context: &[Symbol], out: &mut [f64]) -> Result<()> {
        (**self).next_dist_into(context, out)
    }
}

impl<E: Expert + ?Sized> Expert for std::sync::Arc<E> {
    fn output_size(&self) -> usize {
        (**self).output_size()
    }
    fn next_dist_into(&self, context: &[Symbol], out: &mut [f64]) -> Result<()> {
        (**self).next_dist_into(context, out)
    }
}

/// Ignores its context and always returns the same distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedExpert {
    dist: Vec<f64>,
}

impl FixedExpert {
    pub fn new(dist: Vec<f64>) -> Result<Self> {
        let total: f64 = dist.iter().sum();
        if dist.is_empty() || dist.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(MopeError::InvalidArgument(
                "fixed distribution must be non-negative and sum to 1".into(),
            ));
        }
        Ok(FixedExpert { dist })
    }

    pub fn uniform(size: usize) -> Self {
        FixedExpert {
            dist: vec![1.0 / size as f64; size],
        }
    }
}

impl Expert for FixedExpert {
    fn output_size(&self) -> usize {
        self.dist.len()
    }
    fn next_dist_into(&self, _context: &[Symbol], out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&self.dist);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "cluster")]
pub enum ExpertKind {
    Pretrained,
    Finetuned(u32),
    Distilled,
}

impl ExpertKind {
    fn code(self) -> (u8, u32) {
        match self {
            ExpertKind::Pretrained => (0, 0),
            ExpertKind::Finetuned(c) => (1, c),
            ExpertKind::Distilled => (2, 0),
        }
    }

    fn from_code(code: u8, cluster: u32) -> Result<Self> {
        match code {
            0 => Ok(ExpertKind::Pretrained),
            1 => Ok(ExpertKind::Finetuned(cluster)),
            2 => Ok(ExpertKind::Distilled),
            other => Err(MopeError::Format(format!("unknown expert kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NGramConfig {
    /// Maximum context length.
    pub order: usize,
    /// Add-λ pseudo-count per symbol.
    pub lambda: f64,
    /// Weight of the base counts when fine-tuning. `None` picks
    /// `cluster_size / (10 · corpus_size)`.
    pub gamma: Option<f64>,
}

impl Default for NGramConfig {
    fn default() -> Self {
        NGramConfig {
            order: 5,
            lambda: 0.01,
            gamma: None,
        }
    }
}

impl NGramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.order < 1 {
            return Err(MopeError::InvalidArgument("order must be >= 1".into()));
        }
        if !(self.lambda > 0.0) {
            return Err(MopeError::InvalidArgument("lambda must be > 0".into()));
        }
        if self.gamma.is_some_and(|g| !(g >= 0.0)) {
            return Err(MopeError::InvalidArgument("gamma must be >= 0".into()));
        }
        Ok(())
    }

    pub fn default_gamma(cluster_size: usize, corpus_size: usize) -> f64 {
        cluster_size as f64 / (10.0 * corpus_size.max(1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Node {
    total: f64,
    /// Sorted by symbol.
    entries: Vec<(Symbol, f64)>,
}

/// Packs a context of at most `order` symbols into a `u64`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct KeyCodec {
    base: u64,
}

impl KeyCodec {
    fn new(context_size: usize, order: usize) -> Result<Self> {
        let base = context_size as u64 + 1;
        if base.checked_pow(order as u32).is_none() {
            return Err(MopeError::InvalidArgument(format!(
                "context vocabulary {context_size} with order {order} does not fit a 64-bit key"
            )));
        }
        Ok(KeyCodec { base })
    }

    fn key(&self, ctx: &[Symbol]) -> u64 {
        ctx.iter().fold(0u64, |k, &s| k * self.base + s as u64 + 1)
    }
}

/// Accumulates weighted `(context, next)` observations at every order.
#[derive(Debug, Clone)]
pub struct NGramBuilder {
    order: usize,
    output_size: usize,
    context_size: usize,
    codec: KeyCodec,
    tables: Vec<HashMap<u64, BuildNode>>,
}

/// Counts for one context; switches to a dense vector once a full
/// distribution has been added.
#[derive(Debug, Clone, Default)]
struct BuildNode {
    total: f64,
    sparse: HashMap<Symbol, f64>,
    dense: Option<Vec<f64>>,
}

impl BuildNode {
    fn add(&mut self, s: Symbol, w: f64) {
        self.total += w;
        match &mut self.dense {
            Some(d) => d[s as usize] += w,
            None => *self.sparse.entry(s).or_default() += w,
        }
    }

    fn densify(&mut self, size: usize) -> &mut Vec<f64> {
        if self.dense.is_none() {
            let mut d = vec![0.0; size];
            for (&s, &v) in &self.sparse {
                d[s as usize] = v;
            }
            self.sparse = HashMap::new();
            self.dense = Some(d);
        }
        self.dense.as_mut().expect("just set")
    }

    fn into_node(self) -> Node {
        let mut entries: Vec<(Symbol, f64)> = match self.dense {
            Some(d) => d
                .into_iter()
                .enumerate()
                .filter(|(_, v)| *v != 0.0)
                .map(|(s, v)| (s as Symbol, v))
                .collect(),
            None => self.sparse.into_iter().collect(),
        };
        entries.sort_unstable_by_key(|e| e.0);
        Node {
            total: self.total,
            entries,
        }
    }
}

impl NGramBuilder {
    pub fn new(order: usize, output_size: usize, context_size: usize) -> Result<Self> {
        if order < 1 {
            return Err(MopeError::InvalidArgument("order must be >= 1".into()));
        }
        Ok(NGramBuilder {
            order,
            output_size,
            context_size,
            codec: KeyCodec::new(context_size, order)?,
            tables: vec![HashMap::new(); order + 1],
        })
    }

    pub fn for_alphabet(order: usize, alphabet: &Alphabet) -> Result<Self> {
        NGramBuilder::new(order, alphabet.output_size(), alphabet.context_size())
    }

    fn check_context(&self, context: &[Symbol]) -> Result<()> {
        match context.iter().find(|&&s| s as usize >= self.context_size) {
            Some(&s) => Err(MopeError::UnknownSymbolId(s)),
            None => Ok(()),
        }
    }

    fn suffixes<'a>(&self, context: &'a [Symbol]) -> impl Iterator<Item = (usize, &'a [Symbol])> {
        let max = self.order.min(context.len());
        (0..=max).map(move |j| (j, &context[context.len() - j..]))
    }

    pub fn observe(&mut self, context: &[Symbol], next: Symbol, weight: f64) -> Result<()> {
        self.check_context(context)?;
        if next as usize >= self.output_size {
            return Err(MopeError::UnknownSymbolId(next));
        }
        for (j, suffix) in self.suffixes(context).collect::<Vec<_>>() {
            self.tables[j]
                .entry(self.codec.key(suffix))
                .or_default()
                .add(next, weight);
        }
        Ok(())
    }

    /// Adds a whole distribution over outputs as fractional counts.
    pub fn observe_dist(&mut self, context: &[Symbol], dist: &[f64], weight: f64) -> Result<()> {
        self.check_context(context)?;
        if dist.len() != self.output_size {
            return Err(MopeError::InvalidArgument(format!(
                "distribution has {} entries, expected {}",
                dist.len(),
                self.output_size
            )));
        }
        for (j, suffix) in self.suffixes(context).collect::<Vec<_>>() {
            let node = self.tables[j].entry(self.codec.key(suffix)).or_default();
            let size = self.output_size;
            let dense = node.densify(size);
            let mut added = 0.0;
            for (d, &p) in dense.iter_mut().zip(dist) {
                *d += weight * p;
                added += weight * p;
            }
            node.total += added;
        }
        Ok(())
    }

    /// Adds `START c1 … cn END` as `n + 1` prefix → next observations.
    pub fn observe_password(
        &mut self,
        alphabet: &Alphabet,
        password: &str,
        weight: f64,
    ) -> Result<()> {
        let mut ctx = Vec::with_capacity(password.len() + 1);
        ctx.push(alphabet.start());
        for c in password.chars() {
            let id = alphabet.id(c).ok_or(MopeError::UnknownSymbol(c))?;
            self.observe(&ctx, id, weight)?;
            ctx.push(id);
        }
        self.observe(&ctx, alphabet.end(), weight)
    }

    pub fn is_empty(&self) -> bool {
        self.tables[0].is_empty()
    }

    /// Total observation weight.
    pub fn total_weight(&self) -> f64 {
        self.tables[0].get(&0).map_or(0.0, |n| n.total)
    }

    pub fn build(
        self,
        lambda: f64,
        kind: ExpertKind,
        vocab_digest: [u8; 32],
    ) -> Result<NGramExpert> {
        if !(lambda > 0.0) {
            return Err(MopeError::InvalidArgument("lambda must be > 0".into()));
        }
        let tables = self
            .tables
            .into_iter()
            .map(|t| t.into_iter().map(|(k, n)| (k, n.into_node())).collect())
            .collect();
        Ok(NGramExpert {
            kind,
            order: self.order,
            lambda,
            output_size: self.output_size,
            context_size: self.context_size,
            vocab_digest,
            codec: self.codec,
            tables,
        })
    }
}

/// Interpolated add-λ n-gram expert. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramExpert {
    kind: ExpertKind,
    order: usize,
    lambda: f64,
    output_size: usize,
    context_size: usize,
    vocab_digest: [u8; 32],
    codec: KeyCodec,
    tables: Vec<HashMap<u64, Node>>,
}

const MAGIC: &[u8; 8] = b"MOPENGRM";
const FORMAT_VERSION: u32 = 1;

impl NGramExpert {
    pub fn kind(&self) -> ExpertKind {
        self.kind
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn context_size(&self) -> usize {
        self.context_size
    }

    pub fn vocab_digest(&self) -> [u8; 32] {
        self.vocab_digest
    }

    /// Number of stored contexts across all orders.
    pub fn context_count(&self) -> usize {
        self.tables.iter().map(HashMap::len).sum()
    }

    /// Observation weight seen for a context of length ≤ order (0 if unseen).
    pub fn context_total(&self, context: &[Symbol]) -> f64 {
        let ctx = &context[context.len().saturating_sub(self.order)..];
        self.tables[ctx.len()]
            .get(&self.codec.key(ctx))
            .map_or(0.0, |n| n.total)
    }

    /// Blends cluster observations with this expert's counts scaled by `gamma`.
    ///
    /// The pseudo-count becomes `λ_cluster + γ·λ_base`, so `γ = 0` reproduces
    /// training on the cluster alone and a large `γ` reproduces `self`.
    pub fn finetune(
        &self,
        cluster: NGramBuilder,
        lambda: f64,
        gamma: f64,
        cluster_id: u32,
    ) -> Result<NGramExpert> {
        if cluster.is_empty() {
            return Err(MopeError::InsufficientData(
                "fine-tuning cluster is empty".into(),
            ));
        }
        if cluster.order != self.order
            || cluster.output_size != self.output_size
            || cluster.context_size != self.context_size
        {
            return Err(MopeError::InvalidArgument(
                "cluster counts do not match the base expert's shape".into(),
            ));
        }
        if !(gamma >= 0.0) {
            return Err(MopeError::InvalidArgument("gamma must be >= 0".into()));
        }
        let mut b = cluster;
        if gamma > 0.0 {
            for (j, table) in self.tables.iter().enumerate() {
                for (key, node) in table {
                    let slot = b.tables[j].entry(*key).or_default();
                    for &(s, v) in &node.entries {
                        slot.add(s, gamma * v);
                    }
                }
            }
        }
        b.build(
            lambda + gamma * self.lambda,
            ExpertKind::Finetuned(cluster_id),
            self.vocab_digest,
        )
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let fmt = |e: std::io::Error| MopeError::Format(e.to_string());
        w.write_all(MAGIC).map_err(fmt)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION).map_err(fmt)?;
        let (code, cluster) = self.kind.code();
        w.write_u8(code).map_err(fmt)?;
        w.write_u32::<LittleEndian>(cluster).map_err(fmt)?;
        w.write_u32::<LittleEndian>(self.order as u32)
            .map_err(fmt)?;
        w.write_f64::<LittleEndian>(self.lambda).map_err(fmt)?;
        w.write_u32::<LittleEndian>(self.output_size as u32)
            .map_err(fmt)?;
        w.write_u32::<LittleEndian>(self.context_size as u32)
            .map_err(fmt)?;
        w.write_all(&self.vocab_digest).map_err(fmt)?;
        for table in &self.tables {
            let mut keys: Vec<&u64> = table.keys().collect();
            keys.sort_unstable();
            w.write_u64::<LittleEndian>(keys.len() as u64)
                .map_err(fmt)?;
            for k in keys {
                let node = &table[k];
                w.write_u64::<LittleEndian>(*k).map_err(fmt)?;
                w.write_f64::<LittleEndian>(node.total).map_err(fmt)?;
                w.write_u32::<LittleEndian>(node.entries.len() as u32)
                    .map_err(fmt)?;
                for &(s, v) in &node.entries {
                    w.write_u32::<LittleEndian>(s).map_err(fmt)?;
                    w.write_f64::<LittleEndian>(v).map_err(fmt)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<NGramExpert> {
        let fmt = |e: std::io::Error| MopeError::Format(e.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(fmt)?;
        if &magic != MAGIC {
            return Err(MopeError::Format("not an n-gram expert file".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(fmt)?;
        if version != FORMAT_VERSION {
            return Err(MopeError::Format(format!(
                "unsupported expert version {version}"
            )));
        }
        let code = r.read_u8().map_err(fmt)?;
        let cluster = r.read_u32::<LittleEndian>().map_err(fmt)?;
        let kind = ExpertKind::from_code(code, cluster)?;
        let order = r.read_u32::<LittleEndian>().map_err(fmt)? as usize;
        let lambda = r.read_f64::<LittleEndian>().map_err(fmt)?;
        let output_size = r.read_u32::<LittleEndian>().map_err(fmt)? as usize;
        let context_size = r.read_u32::<LittleEndian>().map_err(fmt)? as usize;
        let mut vocab_digest = [0u8; 32];
        r.read_exact(&mut vocab_digest).map_err(fmt)?;
        if !(1..=64).contains(&order) {
            return Err(MopeError::Format(format!("implausible order {order}")));
        }
        let codec = KeyCodec::new(context_size, order)?;
        let mut tables = Vec::with_capacity(order + 1);
        for _ in 0..=order {
            let n = r.read_u64::<LittleEndian>().map_err(fmt)?;
            let mut table = HashMap::with_capacity(n.min(1 << 24) as usize);
            for _ in 0..n {
                let key = r.read_u64::<LittleEndian>().map_err(fmt)?;
                let total = r.read_f64::<LittleEndian>().map_err(fmt)?;
                let m = r.read_u32::<LittleEndian>().map_err(fmt)?;
                let mut entries = Vec::with_capacity(m.min(1 << 16) as usize);
                for _ in 0..m {
                    let s = r.read_u32::<LittleEndian>().map_err(fmt)?;
                    if s as usize >= output_size {
                        return Err(MopeError::Format(format!("symbol {s} out of range")));
                    }
                    entries.push((s, r.read_f64::<LittleEndian>().map_err(fmt)?));
                }
                table.insert(key, Node { total, entries });
            }
            tables.push(table);
        }
        Ok(NGramExpert {
            kind,
            order,
            lambda,
            output_size,
            context_size,
            vocab_digest,
            codec,
            tables,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }
}

impl Expert for NGramExpert {
    fn output_size(&self) -> usize {
        self.output_size
    }

    fn next_dist_into(&self, context: &[Symbol], out: &mut [f64]) -> Result<()> {
        if let Some(&s) = context.iter().find(|&&s| s as usize >= self.context_size) {
            return Err(MopeError::UnknownSymbolId(s));
        }
        if out.len() != self.output_size {
            return Err(MopeError::InvalidArgument(
                "output buffer has the wrong size".into(),
            ));
        }
        let v = self.output_size as f64;
        let prior = self.lambda * v;
        out.fill(1.0 / v);
        let max = self.order.min(context.len());
        for j in 0..=max {
            let suffix = &context[context.len() - j..];
            let Some(node) = self.tables[j].get(&self.codec.key(suffix)) else {
                break;
            };
            let denom = node.total + prior;
            let keep = prior / denom;
            out.iter_mut().for_each(|p| *p *= keep);
            for &(s, c) in &node.entries {
                out[s as usize] += c / denom;
            }
        }
        Ok(())
    }
}

/// Trains the base expert on every prefix → next-character pair of `corpus`.
pub fn pretrain(corpus: &[&str], alphabet: &Alphabet, cfg: &NGramConfig) -> Result<NGramExpert> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(MopeError::InsufficientData(
            "pretraining corpus is empty".into(),
        ));
    }
    let mut b = NGramBuilder::for_alphabet(cfg.order, alphabet)?;
    for pw in corpus {
        b.observe_password(alphabet, pw, 1.0)?;
    }
    b.build(cfg.lambda, ExpertKind::Pretrained, alphabet.digest())
}

/// Specializes `base` to one cluster's passwords.
///
/// `corpus_size` is only used to derive the default `γ` when
/// `cfg.gamma` is `None`.
pub fn finetune(
    base: &NGramExpert,
    cluster_corpus: &[&str],
    alphabet: &Alphabet,
    cfg: &NGramConfig,
    cluster_id: u32,
    corpus_size: usize,
) -> Result<NGramExpert> {
    cfg.validate()?;
    if cluster_corpus.is_empty() {
        return Err(MopeError::InsufficientData(
            "fine-tuning cluster is empty".into(),
        ));
    }
    if base.vocab_digest() != alphabet.digest() {
        return Err(MopeError::InvalidArgument(
            "base expert uses a different alphabet".into(),
        ));
    }
    let mut b = NGramBuilder::new(base.order(), base.output_size(), base.context_size())?;
    for pw in cluster_corpus {
        b.observe_password(alphabet, pw, 1.0)?;
    }
    let gamma = cfg
        .gamma
        .unwrap_or_else(|| NGramConfig::default_gamma(cluster_corpus.len(), corpus_size));
    base.finetune(b, cfg.lambda, gamma, cluster_id)
}

/// Encodes `START` followed by the characters of `prefix`.
pub fn password_context(alphabet: &Alphabet, prefix: &str) -> Result<Vec<Symbol>> {
    let mut ctx = Vec::with_capacity(prefix.len() + 1);
    ctx.push(alphabet.start());
    for c in prefix.chars() {
        ctx.push(alphabet.id(c).ok_or(MopeError::UnknownSymbol(c))?);
    }
    Ok(ctx)
}
