//! Experiment configuration and the command implementations behind the
//! `moeqa` binary.
//!
//! An experiment is described by one TOML file:
//!
//! ```toml
//! seed = 0
//! output_dir = "runs/overfit"
//!
//! [model]
//! d_model = 64
//! n_layers = 2
//! ffn_kinds = ["switch", "switch"]
//!
//! [model.switch]
//! n_experts = 2
//! expert_hidden = 128
//!
//! [train]
//! epochs = 5
//!
//! [data]
//! synthetic = 64
//!
//! [[data.sources]]
//! path = "squad.json"
//! count = 500
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

mod commands;
mod plot;
mod sweep;

pub use commands::{
    cmd_augment, cmd_evaluate, cmd_route_stats, cmd_train, run_experiment, summarize_routing,
    write_run, EvalReport, LayerRouteSummary, RouteStatsReport, RunArtifacts, RunMetrics,
};
pub use plot::routing_svg;
pub use sweep::{apply_axis, cmd_sweep, SweepAxis, SweepRow, ALPHA_GRID};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentationRecipe;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

/// One SQuAD-style input file and how many examples to draw from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    pub path: PathBuf,
    /// Examples to sample; all of them when absent.
    #[serde(default)]
    pub count: Option<usize>,
    /// Augmentation is only applied to out-of-domain sources.
    #[serde(default)]
    pub out_of_domain: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub sources: Vec<DataSource>,
    /// Held-out set scored after every epoch and for the final metrics.
    /// Without one the final metrics are computed on the training set.
    pub validation: Option<PathBuf>,
    /// Size of a generated in-domain corpus added to the training data.
    pub synthetic: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Augmentation of the out-of-domain sources; none when absent.
    pub recipe: Option<AugmentationRecipe>,
    pub data: DataConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            recipe: None,
            data: DataConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }

    /// Reads a config file and resolves its relative paths against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(Error::config(format!(
                "config file {} does not exist",
                path.display()
            )));
        }
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        let mut config = ExperimentConfig::from_toml(&text, path)?;
        config.resolve_paths(path.parent().unwrap_or(Path::new("")));
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for s in &mut self.data.sources {
            fix(&mut s.path);
        }
        if let Some(v) = &mut self.data.validation {
            fix(v);
        }
        if let Some(l) = self.recipe.as_mut().and_then(|r| r.lexicon.as_mut()) {
            fix(l);
        }
    }

    pub fn validate(&self) -> Result<()> {
        // vocab_size 0 is filled in from the corpus later
        let probe = ModelConfig {
            vocab_size: self.model.vocab_size.max(1),
            ..self.model.clone()
        };
        probe.validate()?;
        self.train.validate()?;
        if let Some(r) = &self.recipe {
            r.validate()?;
        }
        if self.data.sources.is_empty() && self.data.synthetic == 0 {
            return Err(Error::config(
                "no training data: add [[data.sources]] entries or set data.synthetic",
            ));
        }
        let files = self
            .data
            .sources
            .iter()
            .map(|s| &s.path)
            .chain(self.data.validation.iter());
        for f in files {
            if !f.is_file() {
                return Err(Error::config(format!(
                    "data file {} does not exist",
                    f.display()
                )));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the config, hex encoded. Where
    /// the outputs go is not part of the experiment and is left out.
    pub fn hash(&self) -> String {
        let identity = ExperimentConfig {
            output_dir: PathBuf::new(),
            ..self.clone()
        };
        let json = serde_json::to_string(&identity).expect("configs serialize");
        hash_hex(json.as_bytes())
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            config_hash: self.hash(),
            seed: self.seed,
        }
    }
}

pub(crate) fn hash_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Stamped on every output file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    /// `# config_hash=… seed=…`, the first line of CSV outputs.
    pub fn comment_line(&self) -> String {
        format!("# config_hash={} seed={}\n", self.config_hash, self.seed)
    }
}

/// Process exit status for a command result: 0 on success, 1 for bad input,
/// 2 for failures while running.
pub fn exit_code<T>(result: &Result<T>) -> i32 {
    match result {
        Ok(_) => 0,
        Err(e) if e.is_validation() => 1,
        Err(_) => 2,
    }
}

pub(crate) fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::config(format!("{what} {} does not exist", path.display())))
    }
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub(crate) fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}
