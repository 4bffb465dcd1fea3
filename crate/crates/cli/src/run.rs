//! Config resolution, run manifests and error-to-exit-code mapping.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use qisa_lab::experiment::ExperimentConfig;
use qisa_lab::Error;

use crate::ExperimentArgs;

pub const DEFAULT_CORPUS: &str = "data/shakespeare.txt";

/// Written next to a checkpoint so `eval` can recover the data settings.
pub const EXPERIMENT_FILE: &str = "experiment.json";

pub const MANIFEST_FILE: &str = "manifest.json";

/// Identifies the binary that produced a run.
pub fn build_id() -> String {
    match option_env!("QISA_LAB_BUILD_ID") {
        Some(id) => id.to_string(),
        None => format!("qisa-lab {}", env!("CARGO_PKG_VERSION")),
    }
}

/// Everything needed to repeat a run, plus what it produced.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: ExperimentConfig,
    pub git_or_build_id: String,
    pub seed: u64,
    /// Output role → path.
    pub outputs: BTreeMap<String, PathBuf>,
    /// Phase → seconds.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, config: ExperimentConfig) -> Self {
        Self {
            command: command.into(),
            seed: config.train.seed,
            config,
            git_or_build_id: build_id(),
            outputs: BTreeMap::new(),
            timings: BTreeMap::new(),
        }
    }

    /// Writes the manifest after checking every listed output exists.
    pub fn write(&mut self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        self.outputs.insert("manifest".into(), path.clone());
        for (role, p) in &self.outputs {
            if role != "manifest" && !p.exists() {
                anyhow::bail!("output {role} at {} was not written", p.display());
            }
        }
        write_json(&path, self)?;
        Ok(path)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Parses an experiment config, or the config embedded in a run manifest.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, Error> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
    if value.get("git_or_build_id").is_some() {
        if let Some(inner) = value.get("config") {
            return ExperimentConfig::from_json(&inner.to_string());
        }
    }
    ExperimentConfig::from_json(text)
}

pub fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
        hint: String::new(),
    })?;
    Ok(parse_config(&text)?)
}

/// Resolves `--config`/`--preset`/`--seed`/`--corpus`. Returns `None` when
/// neither a config nor a preset was given.
pub fn resolve(args: &ExperimentArgs) -> Result<Option<ExperimentConfig>> {
    let cfg = match (&args.config, &args.preset) {
        (Some(path), _) => read_config(path)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => return Ok(None),
    };
    Ok(Some(apply_overrides(cfg, args)))
}

pub fn apply_overrides(mut cfg: ExperimentConfig, args: &ExperimentArgs) -> ExperimentConfig {
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(c) = &args.corpus {
        cfg.corpus = Some(c.clone());
    }
    cfg
}

pub fn corpus_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.corpus.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_CORPUS))
}

/// 2 for configuration errors, 3 for version mismatches, 4 for commands
/// that do not apply, 1 otherwise.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 2,
        Some(Error::Version(_)) => 3,
        Some(Error::NotApplicable(_)) => 4,
        _ => 1,
    }
}
