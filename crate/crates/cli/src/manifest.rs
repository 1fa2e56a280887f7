use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Written next to every command's outputs so the run can be repeated.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub version: &'static str,
    /// SHA-256 of the effective study configuration as JSON, after CLI overrides.
    pub config_hash: Option<String>,
    pub inputs: Vec<InputHash>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub timings: Vec<StageTiming>,
    #[serde(skip)]
    clock: Option<(String, Instant)>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            version: env!("CARGO_PKG_VERSION"),
            config_hash: None,
            inputs: Vec::new(),
            seed: None,
            threads: None,
            timings: Vec::new(),
            clock: None,
        }
    }

    pub fn hash_input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.push(InputHash {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn hash_config<T: Serialize>(&mut self, config: &T) -> Result<()> {
        let json = serde_json::to_vec(config)?;
        self.config_hash = Some(sha256_hex(&json));
        Ok(())
    }

    /// Ends the running stage, if any, and starts timing `name`.
    pub fn stage(&mut self, name: &str) {
        self.stop();
        self.clock = Some((name.to_string(), Instant::now()));
    }

    pub fn stop(&mut self) {
        if let Some((stage, t)) = self.clock.take() {
            self.timings.push(StageTiming {
                stage,
                seconds: t.elapsed().as_secs_f64(),
            });
        }
    }

    pub fn write(mut self, dir: &Path) -> Result<()> {
        self.stop();
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn stages_are_recorded_in_order() {
        let mut m = RunManifest::new("analyze");
        m.stage("load");
        m.stage("solve");
        m.stop();
        let names: Vec<&str> = m.timings.iter().map(|t| t.stage.as_str()).collect();
        assert_eq!(names, ["load", "solve"]);
    }
}
