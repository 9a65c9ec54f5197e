//! Password and pair corpora: alphabet, loading, splitting and pair extraction.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{MopeError, Result};

/// Longest password accepted anywhere in the pipeline.
pub const MAX_PASSWORD_LEN: usize = 16;

/// Integer id of a model symbol (a character, a reserved token or an edit op).
pub type Symbol = u32;

/// Ordered character set plus the two reserved sequence tokens.
///
/// Characters take ids `0..len()`, `END` is `len()` and `START` is
/// `len() + 1`, so an output distribution over characters and `END` has
/// `len() + 1` entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    symbols: Vec<char>,
    ascii: [u32; 128],
    other: HashMap<char, u32>,
}

const NO_SYMBOL: u32 = u32::MAX;

impl Alphabet {
    pub fn new(symbols: impl IntoIterator<Item = char>) -> Result<Self> {
        let symbols: Vec<char> = symbols.into_iter().collect();
        if symbols.is_empty() {
            return Err(MopeError::InvalidArgument("alphabet is empty".into()));
        }
        let mut ascii = [NO_SYMBOL; 128];
        let mut other = HashMap::new();
        for (i, &c) in symbols.iter().enumerate() {
            let id = i as u32;
            let fresh = if (c as u32) < 128 {
                let slot = &mut ascii[c as usize];
                let fresh = *slot == NO_SYMBOL;
                *slot = id;
                fresh
            } else {
                other.insert(c, id).is_none()
            };
            if !fresh {
                return Err(MopeError::InvalidArgument(format!(
                    "duplicate alphabet symbol {c:?}"
                )));
            }
        }
        Ok(Alphabet {
            symbols,
            ascii,
            other,
        })
    }

    /// The 95 printable ASCII characters, space through tilde.
    pub fn printable_ascii() -> Self {
        Alphabet::new((0x20u8..=0x7e).map(char::from)).expect("printable ASCII is valid")
    }

    /// Number of password characters (reserved tokens excluded).
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn end(&self) -> Symbol {
        self.symbols.len() as Symbol
    }

    pub fn start(&self) -> Symbol {
        self.symbols.len() as Symbol + 1
    }

    /// Size of a next-symbol distribution: characters plus `END`.
    pub fn output_size(&self) -> usize {
        self.symbols.len() + 1
    }

    /// Size of the context vocabulary: characters, `END` and `START`.
    pub fn context_size(&self) -> usize {
        self.symbols.len() + 2
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn id(&self, c: char) -> Option<Symbol> {
        let id = if (c as u32) < 128 {
            self.ascii[c as usize]
        } else {
            *self.other.get(&c)?
        };
        (id != NO_SYMBOL).then_some(id)
    }

    pub fn char_of(&self, id: Symbol) -> Option<char> {
        self.symbols.get(id as usize).copied()
    }

    pub fn contains(&self, c: char) -> bool {
        self.id(c).is_some()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<Symbol>> {
        text.chars()
            .map(|c| self.id(c).ok_or(MopeError::UnknownSymbol(c)))
            .collect()
    }

    pub fn decode(&self, ids: &[Symbol]) -> String {
        ids.iter().filter_map(|&id| self.char_of(id)).collect()
    }

    /// Symbols as a single string, the form stored in bundle manifests.
    pub fn as_string(&self) -> String {
        self.symbols.iter().collect()
    }

    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"alphabet\0");
        h.update(self.as_string().as_bytes());
        h.finalize().into()
    }

    /// Checks the password invariants: length in `[1, 16]`, all characters known.
    pub fn validate(&self, password: &str) -> std::result::Result<(), RejectReason> {
        let mut n = 0usize;
        for c in password.chars() {
            if !self.contains(c) {
                return Err(RejectReason::OutOfAlphabet);
            }
            n += 1;
        }
        match n {
            0 => Err(RejectReason::Empty),
            n if n > MAX_PASSWORD_LEN => Err(RejectReason::TooLong),
            _ => Ok(()),
        }
    }
}

impl Default for Alphabet {
    fn default() -> Self {
        Alphabet::printable_ascii()
    }
}

impl Serialize for Alphabet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.as_string())
    }
}

impl<'de> Deserialize<'de> for Alphabet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Alphabet::new(s.chars()).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Empty,
    TooLong,
    OutOfAlphabet,
    InvalidUtf8,
    MissingField,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PasswordRecord {
    pub password: String,
    pub account_key: Option<String>,
}

impl PasswordRecord {
    pub fn new(password: impl Into<String>) -> Self {
        PasswordRecord {
            password: password.into(),
            account_key: None,
        }
    }

    pub fn keyed(account_key: impl Into<String>, password: impl Into<String>) -> Self {
        PasswordRecord {
            password: password.into(),
            account_key: Some(account_key.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairRecord {
    pub src: String,
    pub tgt: String,
}

impl PairRecord {
    pub fn new(src: impl Into<String>, tgt: impl Into<String>) -> Self {
        PairRecord {
            src: src.into(),
            tgt: tgt.into(),
        }
    }
}

/// Outcome of loading a corpus file: kept records plus per-reason rejection counts.
#[derive(Debug, Clone)]
pub struct LoadReport<T> {
    pub records: Vec<T>,
    pub rejected: BTreeMap<RejectReason, usize>,
}

impl<T> Default for LoadReport<T> {
    fn default() -> Self {
        LoadReport {
            records: Vec::new(),
            rejected: BTreeMap::new(),
        }
    }
}

impl<T> LoadReport<T> {
    pub fn rejected_total(&self) -> usize {
        self.rejected.values().sum()
    }
}

fn read_lines(path: &Path) -> Result<Vec<std::result::Result<String, ()>>> {
    let bytes = fs::read(path).map_err(|e| MopeError::io(path, e))?;
    let mut lines: Vec<&[u8]> = bytes.split(|&b| b == b'\n').collect();
    if lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    Ok(lines
        .into_iter()
        .map(|l| {
            let l = l.strip_suffix(b"\r").unwrap_or(l);
            String::from_utf8(l.to_vec()).map_err(|_| ())
        })
        .collect())
}

fn bump(map: &mut BTreeMap<RejectReason, usize>, reason: RejectReason) {
    *map.entry(reason).or_default() += 1;
}

/// Loads one password per line, keeping file order and duplicates.
pub fn load_passwords(path: &Path, alphabet: &Alphabet) -> Result<LoadReport<PasswordRecord>> {
    let mut report = LoadReport::default();
    for line in read_lines(path)? {
        match line {
            Err(()) => bump(&mut report.rejected, RejectReason::InvalidUtf8),
            Ok(pw) => match alphabet.validate(&pw) {
                Ok(()) => report.records.push(PasswordRecord::new(pw)),
                Err(r) => bump(&mut report.rejected, r),
            },
        }
    }
    if report.records.is_empty() {
        return Err(MopeError::EmptyResult(path.display().to_string()));
    }
    Ok(report)
}

/// Loads `account_key<TAB>password` lines.
pub fn load_keyed_passwords(
    path: &Path,
    alphabet: &Alphabet,
) -> Result<LoadReport<PasswordRecord>> {
    let mut report = LoadReport::default();
    for line in read_lines(path)? {
        let Ok(line) = line else {
            bump(&mut report.rejected, RejectReason::InvalidUtf8);
            continue;
        };
        let Some((key, pw)) = line.split_once('\t') else {
            bump(&mut report.rejected, RejectReason::MissingField);
            continue;
        };
        match alphabet.validate(pw) {
            Ok(()) => report.records.push(PasswordRecord::keyed(key, pw)),
            Err(r) => bump(&mut report.rejected, r),
        }
    }
    if report.records.is_empty() {
        return Err(MopeError::EmptyResult(path.display().to_string()));
    }
    Ok(report)
}

/// Loads `src<TAB>tgt` lines; both sides must be valid passwords.
pub fn load_pairs(path: &Path, alphabet: &Alphabet) -> Result<LoadReport<PairRecord>> {
    let mut report = LoadReport::default();
    for line in read_lines(path)? {
        let Ok(line) = line else {
            bump(&mut report.rejected, RejectReason::InvalidUtf8);
            continue;
        };
        let Some((src, tgt)) = line.split_once('\t') else {
            bump(&mut report.rejected, RejectReason::MissingField);
            continue;
        };
        match alphabet.validate(src).and(alphabet.validate(tgt)) {
            Ok(()) => report.records.push(PairRecord::new(src, tgt)),
            Err(r) => bump(&mut report.rejected, r),
        }
    }
    if report.records.is_empty() {
        return Err(MopeError::EmptyResult(path.display().to_string()));
    }
    Ok(report)
}

pub fn write_pairs(path: &Path, pairs: &[PairRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| MopeError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in pairs {
        writeln!(w, "{}\t{}", p.src, p.tgt).map_err(|e| MopeError::io(path, e))?;
    }
    w.flush().map_err(|e| MopeError::io(path, e))
}

/// Seeded split into disjoint train and test samples.
///
/// Records are shuffled; the first `n_test` become the test set and the
/// train set is filled from the remainder, skipping any record whose
/// password string already appears in the test set.
pub fn split_train_test(
    records: &[PasswordRecord],
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(Vec<PasswordRecord>, Vec<PasswordRecord>)> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut it = order.into_iter();
    let test: Vec<PasswordRecord> = it
        .by_ref()
        .take(n_test)
        .map(|i| records[i].clone())
        .collect();
    if test.len() < n_test {
        return Err(MopeError::InsufficientData(format!(
            "need {n_test} test records, have {}",
            records.len()
        )));
    }
    let held_out: HashSet<&str> = test.iter().map(|r| r.password.as_str()).collect();
    let train: Vec<PasswordRecord> = it
        .filter(|&i| !held_out.contains(records[i].password.as_str()))
        .take(n_train)
        .map(|i| records[i].clone())
        .collect();
    if train.len() < n_train {
        return Err(MopeError::InsufficientData(format!(
            "need {n_train} training records disjoint from the test set, found {}",
            train.len()
        )));
    }
    Ok((train, test))
}

/// Levenshtein distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Emits ordered pairs (both directions) of distinct passwords sharing an
/// account key whose edit distance is at most `max_ed`.
///
/// Accounts are visited in key order and passwords in first-seen order, so
/// the output is deterministic. Records without a key are ignored.
pub fn extract_pairs(records: &[PasswordRecord], max_ed: usize) -> Vec<PairRecord> {
    let mut accounts: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in records {
        if let Some(key) = r.account_key.as_deref() {
            let pws = accounts.entry(key).or_default();
            if !pws.contains(&r.password.as_str()) {
                pws.push(&r.password);
            }
        }
    }
    let mut pairs = Vec::new();
    for pws in accounts.values() {
        for (i, a) in pws.iter().enumerate() {
            for b in &pws[i + 1..] {
                if levenshtein(a, b) <= max_ed {
                    pairs.push(PairRecord::new(*a, *b));
                    pairs.push(PairRecord::new(*b, *a));
                }
            }
        }
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(content: &[u8]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content).unwrap();
        f
    }

    #[test]
    fn load_filters_invalid_lines() {
        let long = "a".repeat(20);
        let f = write_tmp(format!("abc123\npässword\n{long}\n").as_bytes());
        let rep = load_passwords(f.path(), &Alphabet::default()).unwrap();
        assert_eq!(rep.records, vec![PasswordRecord::new("abc123")]);
        assert_eq!(rep.rejected_total(), 2);
        assert_eq!(rep.rejected[&RejectReason::OutOfAlphabet], 1);
        assert_eq!(rep.rejected[&RejectReason::TooLong], 1);
    }

    #[test]
    fn load_keeps_multiplicity_and_identity() {
        let f = write_tmp(b"123456\n");
        let rep = load_passwords(f.path(), &Alphabet::default()).unwrap();
        assert_eq!(rep.records[0].password, "123456");

        let f = write_tmp(b"hello\nhello\r\nhello");
        let rep = load_passwords(f.path(), &Alphabet::default()).unwrap();
        assert_eq!(rep.records.len(), 3);
    }

    #[test]
    fn load_errors() {
        let f = write_tmp(b"\n\n");
        assert!(matches!(
            load_passwords(f.path(), &Alphabet::default()),
            Err(MopeError::EmptyResult(_))
        ));
        assert!(matches!(
            load_passwords(Path::new("/definitely/not/here"), &Alphabet::default()),
            Err(MopeError::Io { .. })
        ));
        let f = write_tmp(b"\xff\xfe\nok\n");
        let rep = load_passwords(f.path(), &Alphabet::default()).unwrap();
        assert_eq!(rep.rejected[&RejectReason::InvalidUtf8], 1);
    }

    #[test]
    fn alphabet_rejects_duplicates_and_reserves_tokens() {
        assert!(Alphabet::new("aba".chars()).is_err());
        let a = Alphabet::printable_ascii();
        assert_eq!(a.len(), 95);
        assert_ne!(a.start(), a.end());
        assert!(a.char_of(a.end()).is_none());
        assert!(a.char_of(a.start()).is_none());
        assert_eq!(a.decode(&a.encode("P@ss w0rd~").unwrap()), "P@ss w0rd~");
    }

    #[test]
    fn split_is_disjoint_and_deterministic() {
        let recs: Vec<_> = (0..10)
            .map(|i| PasswordRecord::new(format!("pw{i}")))
            .collect();
        let (tr, te) = split_train_test(&recs, 6, 4, 7).unwrap();
        assert_eq!((tr.len(), te.len()), (6, 4));
        let test_set: HashSet<_> = te.iter().map(|r| &r.password).collect();
        assert!(tr.iter().all(|r| !test_set.contains(&r.password)));
        assert_eq!(split_train_test(&recs, 6, 4, 7).unwrap(), (tr, te));
    }

    #[test]
    fn split_respects_no_overlap_with_duplicates() {
        let recs: Vec<_> = ["a", "a", "a", "b", "c", "c"]
            .iter()
            .map(|s| PasswordRecord::new(*s))
            .collect();
        for seed in 0..20 {
            if let Ok((tr, te)) = split_train_test(&recs, 2, 1, seed) {
                assert!(tr.iter().all(|r| r.password != te[0].password));
            }
        }
    }

    #[test]
    fn split_pigeonhole_error() {
        let recs: Vec<_> = (0..5)
            .map(|i| PasswordRecord::new(format!("p{i}")))
            .collect();
        assert!(matches!(
            split_train_test(&recs, 4, 2, 1),
            Err(MopeError::InsufficientData(_))
        ));
    }

    #[test]
    fn pairs_examples() {
        let recs = vec![
            PasswordRecord::keyed("A", "pass1"),
            PasswordRecord::keyed("A", "pass12"),
            PasswordRecord::keyed("B", "abcdef"),
            PasswordRecord::keyed("B", "zzzzzzzzzz"),
            PasswordRecord::keyed("C", "x"),
            PasswordRecord::keyed("C", "x"),
        ];
        let pairs = extract_pairs(&recs, 4);
        assert_eq!(
            pairs,
            vec![
                PairRecord::new("pass1", "pass12"),
                PairRecord::new("pass12", "pass1")
            ]
        );
        assert_eq!(levenshtein("abcdef", "zzzzzzzzzz"), 10);
    }

    #[test]
    fn pair_file_round_trip() {
        let pairs = vec![PairRecord::new("a b", "ab1"), PairRecord::new("x", "y")];
        let f = tempfile::NamedTempFile::new().unwrap();
        write_pairs(f.path(), &pairs).unwrap();
        let back = load_pairs(f.path(), &Alphabet::default()).unwrap();
        assert_eq!(back.records, pairs);
    }
}
