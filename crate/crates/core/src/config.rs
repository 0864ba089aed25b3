//! Declarative experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::client::BackendSpec;
use crate::exec::Execution;
use crate::metrics::ScoringMode;
use crate::prompting::{StrategyId, DEFAULT_HISTORY_CAP};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub name: String,
    pub interactions: PathBuf,
    pub catalog: PathBuf,
}

fn default_users() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleConfig {
    #[serde(default = "default_users")]
    pub users: usize,
    /// Seeds user sampling, negative sampling and candidate shuffling.
    #[serde(default)]
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            users: default_users(),
            seed: 0,
        }
    }
}

fn default_max_tokens() -> u32 {
    512
}
fn default_summary_max_tokens() -> u32 {
    256
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingConfig {
    /// Ranking-phase temperature. Set to e.g. 0.7 for backends that ignore
    /// the seed, so repeated runs still differ.
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// The summary phase always runs at temperature 0 without a seed.
    #[serde(default = "default_summary_max_tokens")]
    pub summary_max_tokens: u32,
    /// Send each run's seed with ranking requests.
    #[serde(default = "yes")]
    pub send_seed: bool,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            summary_max_tokens: default_summary_max_tokens(),
            send_seed: true,
        }
    }
}

fn default_candidates() -> usize {
    10
}
fn default_k() -> Vec<usize> {
    vec![5, 10, 20]
}
fn default_runs() -> usize {
    3
}
fn default_history_cap() -> Option<usize> {
    Some(DEFAULT_HISTORY_CAP)
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub sample: SampleConfig,
    #[serde(default = "default_candidates")]
    pub n_candidates: usize,
    pub strategies: Vec<StrategyId>,
    pub model: String,
    #[serde(default = "default_k")]
    pub k: Vec<usize>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    /// One decoding seed per run; defaults to `0..runs`.
    #[serde(default)]
    pub run_seeds: Vec<u64>,
    #[serde(default)]
    pub scoring_mode: ScoringMode,
    /// Redraw negatives for every run instead of fixing them by the sample
    /// seed.
    #[serde(default)]
    pub resample_negatives_per_run: bool,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Most recent history entries kept per prompt; absent keeps all.
    #[serde(default = "default_history_cap")]
    pub history_cap: Option<usize>,
    #[serde(default)]
    pub decoding: DecodingConfig,
    #[serde(default)]
    pub execution: Execution,
    pub backend: BackendSpec,
}

impl ExperimentConfig {
    pub fn from_toml(source: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(source)?)
    }

    /// Loads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.dataset.interactions);
        fix(&mut cfg.dataset.catalog);
        fix(&mut cfg.output_dir);
        if let Some(c) = cfg.cache_dir.as_mut() {
            fix(c);
        }
        Ok(cfg)
    }

    /// Fills defaults that depend on other fields and checks invariants.
    pub fn resolve(mut self) -> Result<Self, ConfigError> {
        if self.run_seeds.is_empty() {
            self.run_seeds = (0..self.runs as u64).collect();
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.runs < 1 {
            return bad("runs must be at least 1".into());
        }
        if self.run_seeds.len() != self.runs {
            return bad(format!(
                "run_seeds has {} entries but runs = {}",
                self.run_seeds.len(),
                self.runs
            ));
        }
        if self.strategies.is_empty() {
            return bad("strategies must not be empty".into());
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.strategies.iter().find(|s| !seen.insert(**s)) {
            return bad(format!("strategy {dup} listed twice"));
        }
        if self.n_candidates < 2 {
            return bad("n_candidates must be at least 2".into());
        }
        if self.k.is_empty() || self.k.contains(&0) {
            return bad("k must list positive cutoffs".into());
        }
        if self.backend.max_inflight() < 1 {
            return bad("max_inflight must be at least 1".into());
        }
        if self.decoding.temperature < 0.0 {
            return bad("temperature must be non-negative".into());
        }
        if self.decoding.max_tokens == 0 || self.decoding.summary_max_tokens == 0 {
            return bad("max_tokens must be positive".into());
        }
        if self.model.trim().is_empty() {
            return bad("model must be set".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn has_summary_phase(&self) -> bool {
        self.strategies.iter().any(|s| s.is_vst_family())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        strategies = ["VST", "MM"]
        model = "gpt-4-vision-preview"

        [dataset]
        name = "toys"
        interactions = "data/interactions.jsonl"
        catalog = "data/catalog.jsonl"

        [backend]
        kind = "mock"
        behavior = { type = "oracle" }
    "#;

    #[test]
    fn defaults_match_protocol() {
        let c = ExperimentConfig::from_toml(MINIMAL)
            .unwrap()
            .resolve()
            .unwrap();
        assert_eq!(c.sample.users, 200);
        assert_eq!(c.n_candidates, 10);
        assert_eq!(c.k, [5, 10, 20]);
        assert_eq!(c.runs, 3);
        assert_eq!(c.run_seeds, [0, 1, 2]);
        assert_eq!(c.history_cap, Some(15));
        assert_eq!(c.scoring_mode, ScoringMode::Completed);
        assert_eq!(c.decoding.temperature, 0.0);
        assert!(c.has_summary_phase());
    }

    #[test]
    fn round_trips_through_toml() {
        let c = ExperimentConfig::from_toml(MINIMAL)
            .unwrap()
            .resolve()
            .unwrap();
        let again = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn remote_backend_parses() {
        let src = MINIMAL.replace(
            "kind = \"mock\"\n        behavior = { type = \"oracle\" }",
            "kind = \"remote\"\n        base_url = \"http://localhost:8000/v1\"\n        api_key_env = \"OPENAI_API_KEY\"\n        max_inflight = 2",
        );
        let c = ExperimentConfig::from_toml(&src).unwrap();
        assert_eq!(c.backend.max_inflight(), 2);
        assert!(!c.backend.is_mock());
    }

    #[test]
    fn invariants_enforced() {
        let base = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let mut c = base.clone();
        c.strategies.clear();
        assert!(c.resolve().is_err());
        let mut c = base.clone();
        c.runs = 2;
        c.run_seeds = vec![1, 2, 3];
        assert!(c.resolve().is_err());
        let mut c = base.clone();
        c.runs = 0;
        assert!(c.resolve().is_err());
        let mut c = base;
        c.strategies = vec![StrategyId::Vst, StrategyId::Vst];
        assert!(c.resolve().is_err());
    }

    #[test]
    fn relative_paths_resolve_against_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("exp.toml");
        std::fs::write(&p, MINIMAL).unwrap();
        let c = ExperimentConfig::load(&p).unwrap();
        assert_eq!(c.dataset.catalog, dir.path().join("data/catalog.jsonl"));
        assert_eq!(c.output_dir, dir.path().join("out"));
    }
}
