//! Synthetic corpora shared by the integration tests.
#![allow(dead_code)]

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WORDS: &[&str] = &[
    "love", "angel", "monkey", "dragon", "sunny", "tiger", "honey", "shadow", "master", "happy",
    "lucky", "flower", "summer", "hello", "secret", "qwerty", "peace", "magic", "star", "jordan",
    "ginger", "pepper", "cookie", "silver", "purple", "orange", "banana", "apple", "mickey",
    "pretty", "sweet", "daisy", "crystal", "soccer", "hunter", "buster", "prince", "cheese",
    "batman", "forest", "spider", "rocket", "winter", "dream", "mother", "player", "yellow",
    "maggie", "charlie", "baby",
];

pub const CHUNKS: &[&str] = &[
    "123", "1234", "12345", "123456", "111", "000", "007", "520", "1314", "2000", "1999", "1988",
    "2010", "99", "88", "11", "12", "13", "69", "777", "666", "2468", "1357", "321", "54321",
    "1980", "1990", "2001", "2020", "22", "23", "07", "01", "10", "789", "456", "159", "258",
    "147", "963",
];

pub const SYMBOLS: &[char] = &['!', '@', '#', '.', '_', '*'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Digits,
    Lower,
    Mixed,
}

fn zipf(n: usize, s: f64) -> WeightedIndex<f64> {
    WeightedIndex::new((1..=n).map(|r| 1.0 / (r as f64).powf(s))).unwrap()
}

/// Passwords from three structural families in equal shares: digit runs,
/// lowercase words, and a word followed by digits.
pub struct FamilyGen {
    words: WeightedIndex<f64>,
    chunks: WeightedIndex<f64>,
    rng: ChaCha8Rng,
}

impl FamilyGen {
    pub fn new(seed: u64) -> Self {
        FamilyGen {
            words: zipf(WORDS.len(), 1.0),
            chunks: zipf(CHUNKS.len(), 1.0),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn word(&mut self) -> &'static str {
        WORDS[self.words.sample(&mut self.rng)]
    }

    fn chunk(&mut self) -> &'static str {
        CHUNKS[self.chunks.sample(&mut self.rng)]
    }

    pub fn one(&mut self, family: Family) -> String {
        let mut s = String::new();
        match family {
            Family::Digits => {
                let target = self.rng.gen_range(3..=14);
                while s.len() < target {
                    s.push_str(self.chunk());
                }
            }
            Family::Lower => {
                s.push_str(self.word());
                if self.rng.gen_bool(0.6) {
                    s.push_str(self.word());
                }
            }
            Family::Mixed => {
                let w = self.word();
                s.push_str(&w[..1].to_uppercase());
                s.push_str(&w[1..]);
                s.push(SYMBOLS[self.rng.gen_range(0..SYMBOLS.len())]);
                s.push_str(self.chunk());
                if self.rng.gen_bool(0.3) {
                    s.push_str(self.chunk());
                }
            }
        }
        s.truncate(16);
        s
    }

    pub fn next(&mut self) -> (String, Family) {
        let f = [Family::Digits, Family::Lower, Family::Mixed][self.rng.gen_range(0..3)];
        (self.one(f), f)
    }

    pub fn take(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| self.next().0).collect()
    }
}

pub fn family_corpus(n: usize, seed: u64) -> Vec<String> {
    FamilyGen::new(seed).take(n)
}

pub fn as_strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}
