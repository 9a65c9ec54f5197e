//! Structural password features and column standardization.

use serde::{Deserialize, Serialize};

use crate::error::{MopeError, Result};

pub const FEATURE_DIM: usize = 8;

/// `[l, r_digit, r_lower, r_upper, r_special, switches, max_digit_run, max_letter_run]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

/// A feature vector after standardization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StdFeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    pub fn length(&self) -> f64 {
        self.0[0]
    }
    pub fn digit_ratio(&self) -> f64 {
        self.0[1]
    }
    pub fn lower_ratio(&self) -> f64 {
        self.0[2]
    }
    pub fn upper_ratio(&self) -> f64 {
        self.0[3]
    }
    pub fn special_ratio(&self) -> f64 {
        self.0[4]
    }
    pub fn switches(&self) -> f64 {
        self.0[5]
    }
    pub fn max_digit_run(&self) -> f64 {
        self.0[6]
    }
    pub fn max_letter_run(&self) -> f64 {
        self.0[7]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CharClass {
    Digit,
    Lower,
    Upper,
    Special,
}

impl CharClass {
    fn of(c: char) -> Self {
        if c.is_ascii_digit() {
            CharClass::Digit
        } else if c.is_uppercase() {
            CharClass::Upper
        } else if c.is_alphabetic() {
            CharClass::Lower
        } else {
            CharClass::Special
        }
    }

    /// Coarse class used for switches and runs: case is ignored.
    fn coarse(self) -> u8 {
        match self {
            CharClass::Digit => 0,
            CharClass::Lower | CharClass::Upper => 1,
            CharClass::Special => 2,
        }
    }
}

/// Extracts the eight structural features of a password or prefix.
///
/// Ratios use four classes (digit, lower, upper, special); switch counts and
/// runs merge upper and lower case into a single letter class.
pub fn extract_features(password: &str) -> Result<FeatureVector> {
    let mut counts = [0usize; 4];
    let mut switches = 0usize;
    let (mut digit_run, mut letter_run) = (0usize, 0usize);
    let (mut max_digit, mut max_letter) = (0usize, 0usize);
    let mut prev: Option<u8> = None;
    let mut len = 0usize;

    for c in password.chars() {
        len += 1;
        let class = CharClass::of(c);
        counts[class as usize] += 1;
        let coarse = class.coarse();
        if prev.is_some_and(|p| p != coarse) {
            switches += 1;
        }
        prev = Some(coarse);
        match coarse {
            0 => {
                digit_run += 1;
                letter_run = 0;
            }
            1 => {
                letter_run += 1;
                digit_run = 0;
            }
            _ => {
                digit_run = 0;
                letter_run = 0;
            }
        }
        max_digit = max_digit.max(digit_run);
        max_letter = max_letter.max(letter_run);
    }
    if len == 0 {
        return Err(MopeError::EmptyInput);
    }
    let l = len as f64;
    Ok(FeatureVector([
        l,
        counts[CharClass::Digit as usize] as f64 / l,
        counts[CharClass::Lower as usize] as f64 / l,
        counts[CharClass::Upper as usize] as f64 / l,
        counts[CharClass::Special as usize] as f64 / l,
        switches as f64,
        max_digit as f64,
        max_letter as f64,
    ]))
}

/// Per-column population mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: [f64; FEATURE_DIM],
    pub stds: [f64; FEATURE_DIM],
}

impl Standardizer {
    pub fn fit(rows: &[FeatureVector]) -> Result<Self> {
        if rows.is_empty() {
            return Err(MopeError::InsufficientData(
                "cannot fit a standardizer on zero rows".into(),
            ));
        }
        let n = rows.len() as f64;
        let mut means = [0.0; FEATURE_DIM];
        for r in rows {
            for (m, v) in means.iter_mut().zip(r.0) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut stds = [0.0; FEATURE_DIM];
        for r in rows {
            for j in 0..FEATURE_DIM {
                let d = r.0[j] - means[j];
                stds[j] += d * d;
            }
        }
        stds.iter_mut().for_each(|s| *s = (*s / n).sqrt());
        Ok(Standardizer { means, stds })
    }

    /// `(v - mean) / std` per column; zero-variance columns map to 0.
    pub fn standardize(&self, v: &FeatureVector) -> StdFeatureVector {
        let mut out = [0.0; FEATURE_DIM];
        for (j, o) in out.iter_mut().enumerate() {
            if self.stds[j] > 0.0 {
                *o = (v.0[j] - self.means[j]) / self.stds[j];
            }
        }
        StdFeatureVector(out)
    }

    pub fn standardize_all(&self, rows: &[FeatureVector]) -> Vec<StdFeatureVector> {
        rows.iter().map(|r| self.standardize(r)).collect()
    }
}

pub fn fit_standardizer(rows: &[FeatureVector]) -> Result<Standardizer> {
    Standardizer::fit(rows)
}

pub fn standardize(std: &Standardizer, v: &FeatureVector) -> StdFeatureVector {
    std.standardize(v)
}
