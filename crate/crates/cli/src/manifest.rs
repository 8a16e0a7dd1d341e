use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use ris_inr::metrics::MetricReport;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.toml";

/// Record of one command invocation. Feeding it back as `--config`
/// replays the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub deterministic: bool,
    /// Output files relative to the output directory.
    pub outputs: Vec<String>,
    /// Wall time per stage in milliseconds; zero in deterministic mode.
    pub timings_ms: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricReport>,
    pub config: RunConfig,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, deterministic: bool, config: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            deterministic,
            outputs: Vec::new(),
            timings_ms: BTreeMap::new(),
            metrics: None,
            config: RunConfig { seed: Some(seed), ..config.clone() },
        }
    }

    pub fn output(&mut self, name: impl Into<String>) {
        self.outputs.push(name.into());
    }

    /// Runs `f` and records its wall time under `stage`.
    pub fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let started = Instant::now();
        let out = f();
        let ms = if self.deterministic { 0.0 } else { started.elapsed().as_secs_f64() * 1e3 };
        self.timings_ms.insert(stage.to_string(), ms);
        out
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let text = toml::to_string(self).map_err(|e| CliError::Config(format!("manifest: {e}")))?;
        ris_inr::binfmt::write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())?;
        Ok(())
    }

    #[cfg(test)]
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_roundtrips_and_replays() {
        let cfg = RunConfig::parse("[scene]\nwavelength = 0.1\nroi_side = 8\n").unwrap();
        let mut m = RunManifest::new("simulate", 42, true, &cfg);
        m.output("measurements.risy");
        m.timed("build", || ());
        m.metrics = Some(MetricReport { mse: 0.5, psnr_db: 3.0, ssim: 0.25, fingerprint: "ab".into(), runtime_ms: 0.0 });
        let dir = tempfile::tempdir().unwrap();
        m.write(dir.path()).unwrap();
        let back = RunManifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.timings_ms["build"], 0.0);

        // the manifest is itself a valid config carrying the effective seed
        let replay = RunConfig::load(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(replay.seed, Some(42));
        assert_eq!(replay.scene, cfg.scene);
    }
}
