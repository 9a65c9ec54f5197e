//! Deterministic corpora and small trained bundles for the CLI tests.
#![allow(dead_code)]

use std::fs;
use std::path::Path;

use mope_core::bundle::save_offline;
use mope_core::clustering::{cluster_passwords, SelectConfig};
use mope_core::corpus::Alphabet;
use mope_core::distill::{distill, DistillConfig};
use mope_core::expert::NGramConfig;
use mope_core::offline::train_offline;
use mope_core::Execution;

const WORDS: &[&str] = &[
    "love", "angel", "monkey", "dragon", "sunny", "tiger", "honey", "shadow", "master", "happy",
    "lucky", "flower", "summer", "hello", "secret", "qwerty", "peace", "magic", "star", "jordan",
];

const CHUNKS: &[&str] = &[
    "123", "1234", "12345", "111", "000", "007", "520", "1314", "2000", "1999", "99", "88",
];

/// Digit runs, lowercase words and capitalized words with a symbol and
/// digits, in rotation. Early list entries recur more often.
pub fn corpus(n: usize, salt: usize) -> Vec<String> {
    (0..n)
        .map(|i| {
            let h = (i + salt).wrapping_mul(2_654_435_761) >> 7;
            let w = WORDS[(h % 7) * (h % 3) % WORDS.len()];
            let w2 = WORDS[(h / 7) % WORDS.len()];
            let c = CHUNKS[(h / 3) % 5 * ((h / 11) % 3) % CHUNKS.len()];
            let c2 = CHUNKS[(h / 13) % CHUNKS.len()];
            let mut s = match i % 3 {
                0 => format!("{c}{c2}"),
                1 if h.is_multiple_of(2) => w.to_string(),
                1 => format!("{w}{w2}"),
                _ => format!("{}{}!{c}", w[..1].to_uppercase(), &w[1..]),
            };
            s.truncate(16);
            s
        })
        .collect()
}

pub fn write_lines(path: &Path, lines: &[String]) {
    let mut text = lines.join("\n");
    text.push('\n');
    fs::write(path, text).unwrap();
}

/// Trains a three-cluster offline bundle into `dir`, with or without a
/// distilled student.
pub fn train_bundle(dir: &Path, with_student: bool) {
    let train = corpus(3000, 0);
    let refs: Vec<&str> = train.iter().map(String::as_str).collect();
    let mut sel = SelectConfig::new(3, 3, 0.0, 1);
    sel.step = 1;
    let (cm, _) = cluster_passwords(&refs, &sel).unwrap();
    let ngram = NGramConfig::default();
    let m = train_offline(
        &refs,
        cm,
        &Alphabet::printable_ascii(),
        &ngram,
        10.0,
        16,
        Execution::default(),
    )
    .unwrap();
    let student = with_student.then(|| {
        let cfg = DistillConfig {
            sample_count: 3000,
            ..DistillConfig::default()
        };
        distill(&m, &refs, &cfg, 1, Execution::default()).unwrap()
    });
    save_offline(dir, &m, &ngram, student.as_ref(), "test").unwrap();
}
