//! Run manifests: one JSON record per artifact-producing command.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use mope_core::bundle::config_digest;

use crate::Failure;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Effective flag values; accepted back by `--config`.
    pub config: Value,
    /// Hex SHA-256 of `config`.
    pub config_digest: String,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started_unix_secs: u64,
    pub wall_clock_secs: f64,
    pub tool_version: String,
}

/// Where a command's manifest goes: `run-<command>.json` inside an output
/// directory, or `<file>.run.json` next to an output file.
pub fn manifest_path(output: &Path, command: &str) -> PathBuf {
    if output.is_dir() {
        output.join(format!("run-{command}.json"))
    } else {
        let mut name = output.as_os_str().to_owned();
        name.push(".run.json");
        PathBuf::from(name)
    }
}

pub struct RunRecorder {
    command: &'static str,
    config: Value,
    digest: String,
    started: Instant,
    started_unix_secs: u64,
}

impl RunRecorder {
    pub fn start<T: Serialize>(command: &'static str, args: &T) -> Result<Self, Failure> {
        let config = serde_json::to_value(args).context("serializing flags")?;
        Ok(RunRecorder {
            command,
            digest: config_digest(&config)?,
            config,
            started: Instant::now(),
            started_unix_secs: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        })
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    /// Writes the manifest beside `outputs[0]` and returns it.
    pub fn finish(
        self,
        seed: Option<u64>,
        inputs: &[&Path],
        outputs: &[&Path],
    ) -> Result<RunManifest, Failure> {
        let anchor = outputs
            .first()
            .context("a run manifest needs at least one output")?;
        let m = RunManifest {
            command: self.command.to_string(),
            config: self.config,
            config_digest: self.digest,
            seed,
            inputs: inputs.iter().map(|p| p.to_path_buf()).collect(),
            outputs: outputs.iter().map(|p| p.to_path_buf()).collect(),
            started_unix_secs: self.started_unix_secs,
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
            tool_version: TOOL_VERSION.to_string(),
        };
        let path = manifest_path(anchor, self.command);
        let mut text = serde_json::to_string_pretty(&m).context("serializing run manifest")?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        log::debug!("wrote {}", path.display());
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn manifest_lands_beside_files_and_inside_dirs() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("cands.tsv");
        fs::write(&file, "").unwrap();
        assert_eq!(
            manifest_path(&file, "generate"),
            dir.path().join("cands.tsv.run.json")
        );
        assert_eq!(
            manifest_path(dir.path(), "cluster"),
            dir.path().join("run-cluster.json")
        );
    }

    #[test]
    fn digest_tracks_config() {
        let a = RunRecorder::start("x", &json!({"tau": 0.5})).unwrap();
        let b = RunRecorder::start("x", &json!({"tau": 0.5})).unwrap();
        let c = RunRecorder::start("x", &json!({"tau": 0.6})).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());

        let dir = tempfile::tempdir().unwrap();
        let m = a.finish(Some(3), &[], &[dir.path()]).unwrap();
        let back: RunManifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join("run-x.json")).unwrap())
                .unwrap();
        assert_eq!(back, m);
        assert_eq!(back.seed, Some(3));
        assert_eq!(back.tool_version, TOOL_VERSION);
    }
}
