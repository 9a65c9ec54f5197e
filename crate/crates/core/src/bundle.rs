//! On-disk model bundles.
//!
//! A bundle is a directory holding `mope.json` plus one binary file per
//! expert and an optional `student.bin`. The manifest is pretty-printed JSON
//! with a fixed field order; floats round-trip exactly.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::ClusterModel;
use crate::corpus::Alphabet;
use crate::error::{MopeError, Result};
use crate::expert::{NGramConfig, NGramExpert};
use crate::features::{Standardizer, StdFeatureVector, FEATURE_DIM};
use crate::gate::Gate;
use crate::offline::{OfflineMope, PasswordModel};
use crate::online::{OnlineConfig, OnlineMope, OpVocab};

pub const MANIFEST_FILE: &str = "mope.json";
pub const STUDENT_FILE: &str = "student.bin";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Cluster model only; experts not trained yet.
    Clusters,
    Offline,
    Online,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub variant: Variant,
    pub alphabet: Alphabet,
    pub max_len: usize,
    pub k: usize,
    pub beta: f64,
    pub standardizer: Standardizer,
    pub centers: Vec<[f64; FEATURE_DIM]>,
    pub cluster_sizes: Vec<usize>,
    pub experts: Vec<String>,
    pub student: Option<String>,
    pub ngram: Option<NGramConfig>,
    pub online: Option<OnlineConfig>,
    pub training_config_digest: String,
}

impl Manifest {
    pub fn cluster_model(&self) -> Result<ClusterModel> {
        if self.centers.len() != self.k {
            return Err(MopeError::Format("center count does not match k".into()));
        }
        ClusterModel::new(
            self.standardizer.clone(),
            self.centers.iter().map(|c| StdFeatureVector(*c)).collect(),
            self.cluster_sizes.clone(),
            None,
        )
    }

    fn for_clusters(
        clusters: &ClusterModel,
        alphabet: &Alphabet,
        max_len: usize,
        beta: f64,
        digest: &str,
    ) -> Self {
        Manifest {
            schema_version: SCHEMA_VERSION,
            variant: Variant::Clusters,
            alphabet: alphabet.clone(),
            max_len,
            k: clusters.k,
            beta,
            standardizer: clusters.standardizer.clone(),
            centers: clusters.centers.iter().map(|c| c.0).collect(),
            cluster_sizes: clusters.sizes.clone(),
            experts: Vec::new(),
            student: None,
            ngram: None,
            online: None,
            training_config_digest: digest.to_string(),
        }
    }
}

/// Hex SHA-256 of a configuration's JSON form.
pub fn config_digest<T: Serialize>(cfg: &T) -> Result<String> {
    let bytes = serde_json::to_vec(cfg)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| MopeError::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.schema_version != SCHEMA_VERSION {
        return Err(MopeError::Format(format!(
            "unsupported schema version {}",
            m.schema_version
        )));
    }
    Ok(m)
}

fn write_manifest(dir: &Path, m: &Manifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| MopeError::io(dir, e))?;
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(m)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| MopeError::io(&path, e))
}

fn write_expert(dir: &Path, name: &str, e: &NGramExpert) -> Result<()> {
    let path = dir.join(name);
    let f = fs::File::create(&path).map_err(|e| MopeError::io(&path, e))?;
    let mut w = BufWriter::new(f);
    e.write_to(&mut w)?;
    w.flush().map_err(|e| MopeError::io(&path, e))
}

fn read_expert(dir: &Path, name: &str, digest: [u8; 32]) -> Result<NGramExpert> {
    if name.contains('/') || name.contains('\\') || name.starts_with('.') {
        return Err(MopeError::Format(format!("bad expert file name {name:?}")));
    }
    let path = dir.join(name);
    let f = fs::File::open(&path).map_err(|e| MopeError::io(&path, e))?;
    let e = NGramExpert::read_from(&mut BufReader::new(f))?;
    if e.vocab_digest() != digest {
        return Err(MopeError::Format(format!(
            "{name} was trained on a different vocabulary"
        )));
    }
    Ok(e)
}

fn expert_names(k: usize) -> Vec<String> {
    (0..k).map(|j| format!("expert_{j:03}.bin")).collect()
}

/// Writes a cluster-only bundle (no experts).
pub fn save_clusters(
    dir: &Path,
    clusters: &ClusterModel,
    alphabet: &Alphabet,
    max_len: usize,
    beta: f64,
    digest: &str,
) -> Result<()> {
    write_manifest(
        dir,
        &Manifest::for_clusters(clusters, alphabet, max_len, beta, digest),
    )
}

pub fn save_offline(
    dir: &Path,
    model: &OfflineMope,
    ngram: &NGramConfig,
    student: Option<&NGramExpert>,
    digest: &str,
) -> Result<Manifest> {
    let gate = model.gate();
    let mut m = Manifest::for_clusters(
        gate.clusters(),
        model.alphabet(),
        model.max_len(),
        gate.beta(),
        digest,
    );
    m.variant = Variant::Offline;
    m.experts = expert_names(model.k());
    m.ngram = Some(*ngram);
    fs::create_dir_all(dir).map_err(|e| MopeError::io(dir, e))?;
    for (name, e) in m.experts.iter().zip(model.experts()) {
        write_expert(dir, name, e)?;
    }
    if let Some(s) = student {
        write_expert(dir, STUDENT_FILE, s)?;
        m.student = Some(STUDENT_FILE.to_string());
    }
    write_manifest(dir, &m)?;
    Ok(m)
}

/// Adds or replaces the student of an existing offline bundle.
pub fn save_student(dir: &Path, student: &NGramExpert) -> Result<Manifest> {
    let mut m = read_manifest(dir)?;
    if m.variant != Variant::Offline {
        return Err(MopeError::Format(
            "students belong to offline bundles".into(),
        ));
    }
    write_expert(dir, STUDENT_FILE, student)?;
    m.student = Some(STUDENT_FILE.to_string());
    write_manifest(dir, &m)?;
    Ok(m)
}

pub struct OfflineBundle {
    pub manifest: Manifest,
    pub model: OfflineMope,
    pub student: Option<NGramExpert>,
}

pub fn load_offline(dir: &Path) -> Result<OfflineBundle> {
    let m = read_manifest(dir)?;
    if m.variant != Variant::Offline {
        return Err(MopeError::Format(format!(
            "{:?} bundle is not an offline model",
            m.variant
        )));
    }
    let digest = m.alphabet.digest();
    let experts = m
        .experts
        .iter()
        .map(|n| read_expert(dir, n, digest))
        .collect::<Result<Vec<_>>>()?;
    let student = m
        .student
        .as_deref()
        .map(|n| read_expert(dir, n, digest))
        .transpose()?;
    let gate = Gate::new(m.cluster_model()?, m.beta)?;
    let model = OfflineMope::new(m.alphabet.clone(), m.max_len, gate, experts)?;
    Ok(OfflineBundle {
        manifest: m,
        model,
        student,
    })
}

pub fn save_online(
    dir: &Path,
    model: &OnlineMope,
    cfg: &OnlineConfig,
    max_len: usize,
    digest: &str,
) -> Result<Manifest> {
    let gate = model.gate();
    let mut m = Manifest::for_clusters(
        gate.clusters(),
        model.vocab().alphabet(),
        max_len,
        gate.beta(),
        digest,
    );
    m.variant = Variant::Online;
    m.experts = expert_names(model.experts().len());
    m.online = Some(OnlineConfig {
        beta: gate.beta(),
        max_ed: model.max_ed(),
        beam_width: model.beam_width(),
        top_k: model.top_k(),
        ..*cfg
    });
    fs::create_dir_all(dir).map_err(|e| MopeError::io(dir, e))?;
    for (name, e) in m.experts.iter().zip(model.experts()) {
        write_expert(dir, name, e)?;
    }
    write_manifest(dir, &m)?;
    Ok(m)
}

pub struct OnlineBundle {
    pub manifest: Manifest,
    pub model: OnlineMope,
}

pub fn load_online(dir: &Path) -> Result<OnlineBundle> {
    let m = read_manifest(dir)?;
    if m.variant != Variant::Online {
        return Err(MopeError::Format(format!(
            "{:?} bundle is not an online model",
            m.variant
        )));
    }
    let cfg = m
        .online
        .ok_or_else(|| MopeError::Format("online bundle without online settings".into()))?;
    let vocab = OpVocab::new(m.alphabet.clone());
    let digest = vocab.digest();
    let experts = m
        .experts
        .iter()
        .map(|n| read_expert(dir, n, digest))
        .collect::<Result<Vec<_>>>()?;
    let gate = Gate::new(m.cluster_model()?, m.beta)?;
    let model = OnlineMope::new(vocab, gate, experts, &cfg)?;
    Ok(OnlineBundle { manifest: m, model })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::SelectConfig;
    use crate::expert::Expert;
    use crate::parallel::Execution;

    #[test]
    fn offline_round_trip() {
        let a = Alphabet::new("abc123".chars()).unwrap();
        let corpus = [
            "abc", "cab", "bca", "123", "321", "213", "a1b2", "c3a1", "ab12", "1c2b",
        ];
        let (cm, _) =
            crate::clustering::cluster_passwords(&corpus, &SelectConfig::new(2, 3, 0.5, 1))
                .unwrap();
        let cfg = NGramConfig::default();
        let m = crate::offline::train_offline(&corpus, cm, &a, &cfg, 10.0, 16, Execution::Parallel)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_offline(dir.path(), &m, &cfg, Some(&m.experts()[0]), "abc").unwrap();
        let back = load_offline(dir.path()).unwrap();
        assert_eq!(back.manifest.training_config_digest, "abc");
        assert!(back.student.is_some());
        for p in ["", "a", "ab1", "321c"] {
            assert_eq!(
                back.model.next_char_dist(p).unwrap(),
                m.next_char_dist(p).unwrap()
            );
        }
        assert!(load_online(dir.path()).is_err());
        let again = fs::read(dir.path().join(MANIFEST_FILE)).unwrap();
        save_offline(dir.path(), &back.model, &cfg, back.student.as_ref(), "abc").unwrap();
        assert_eq!(fs::read(dir.path().join(MANIFEST_FILE)).unwrap(), again);
    }

    #[test]
    fn rejects_foreign_expert() {
        let a = Alphabet::new("ab".chars()).unwrap();
        let b = Alphabet::new("xy".chars()).unwrap();
        let e = crate::expert::pretrain(&["xy"], &b, &NGramConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_expert(dir.path(), "x.bin", &e).unwrap();
        assert!(read_expert(dir.path(), "x.bin", a.digest()).is_err());
        assert!(read_expert(dir.path(), "../x.bin", b.digest()).is_err());
        assert_eq!(
            read_expert(dir.path(), "x.bin", b.digest())
                .unwrap()
                .next_dist(&[2])
                .unwrap(),
            e.next_dist(&[2]).unwrap()
        );
    }
}
