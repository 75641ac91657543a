use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ratlab_core::data::{gen_graphs, gen_text, read_jsonl, GraphGenSpec, Splits, TextGenSpec};
use ratlab_core::rationalization::GameConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ValidationError;

/// Where a run's examples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Generated in memory from a text spec.
    Text {
        #[serde(default)]
        spec: TextGenSpec,
    },
    /// Generated in memory from a graph spec.
    Graph {
        #[serde(default)]
        spec: GraphGenSpec,
    },
    /// JSONL splits on disk, e.g. written by `gen-data`. Relative paths are
    /// resolved against the config file's directory.
    Files { train: PathBuf, dev: PathBuf, test: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Text {
            spec: TextGenSpec::default(),
        }
    }
}

impl DataSource {
    pub fn load(&self) -> Result<Splits> {
        Ok(match self {
            DataSource::Text { spec } => gen_text(spec)?,
            DataSource::Graph { spec } => gen_graphs(spec)?,
            DataSource::Files { train, dev, test } => Splits {
                train: read_jsonl(train)?,
                dev: read_jsonl(dev)?,
                test: read_jsonl(test)?,
            },
        })
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let DataSource::Files { train, dev, test } = self {
            for p in [train, dev, test] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }
}

/// Everything needed to reproduce one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Run directory name. Defaults to a hash of the rest of the config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub data: DataSource,
    #[serde(default)]
    pub game: GameConfig,
    /// Overrides `game.seed` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Parent of the run directory; `RATLAB_OUTPUT_ROOT` takes precedence.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Evaluate on dev every this many epochs. The last epoch is always
    /// evaluated.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_eval_every() -> usize {
    1
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: None,
            data: DataSource::default(),
            game: GameConfig::default(),
            seed: None,
            output_dir: default_output_dir(),
            eval_every: default_eval_every(),
        }
    }
}

pub const OUTPUT_ROOT_ENV: &str = "RATLAB_OUTPUT_ROOT";

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| ValidationError(format!("config: {e}")).into())
    }

    /// Reads, resolves and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::from_json(&text).with_context(|| format!("in {}", path.display()))?;
        cfg.data.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.resolve()?;
        Ok(cfg)
    }

    /// Folds the top-level seed into the game config and validates everything.
    /// Idempotent.
    pub fn resolve(&mut self) -> Result<()> {
        if let Some(seed) = self.seed {
            self.game.seed = seed;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.game.validate().map_err(|e| ValidationError(e.to_string()))?;
        match &self.data {
            DataSource::Text { spec } => spec.validate(),
            DataSource::Graph { spec } => spec.validate(),
            DataSource::Files { .. } => Ok(()),
        }
        .map_err(|e| ValidationError(e.to_string()))?;
        if self.eval_every == 0 {
            bail!(ValidationError("eval_every must be positive".into()));
        }
        if let Some(name) = &self.name {
            if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
                bail!(ValidationError(format!("invalid run name `{name}`")));
            }
        }
        Ok(())
    }

    /// Pretty JSON of the resolved config, as written to `config.json`.
    pub fn snapshot(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// First 12 hex digits of the SHA-256 of the snapshot.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.snapshot().as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub fn run_id(&self) -> String {
        self.name.clone().unwrap_or_else(|| format!("run-{}", self.hash()))
    }

    /// `$RATLAB_OUTPUT_ROOT/<id>` or `<output_dir>/<id>`.
    pub fn run_dir(&self) -> PathBuf {
        let root = std::env::var_os(OUTPUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.output_dir.clone());
        root.join(self.run_id())
    }
}
