use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spinelink_core::classifier::ForestParams;
use spinelink_core::grammar::ProductionTable;
use spinelink_core::synthgen::PhantomConfig;
use spinelink_core::volume::WindowSpec;

use crate::error::CliError;

pub const DATA_DIR_ENV: &str = "SPINELINK_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "spinelink-data";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FragmentConfig {
    pub fraction: f64,
    pub seed: u64,
    /// In-plane gap opened between a detached spine and its shaft, voxels.
    pub gap: usize,
}

impl Default for FragmentConfig {
    fn default() -> Self {
        Self { fraction: 1.0, seed: 3, gap: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Leave-one-group-out cross-validation.
    Cv,
    /// The model written by `train`.
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub fractions: Vec<f64>,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { fractions: (0..=10).map(|i| i as f64 / 10.0).collect(), iterations: 100, seed: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    pub phantom: PhantomConfig<f64>,
    pub fragment: FragmentConfig,
    pub window: WindowSpec<f64>,
    /// Symbol adjacencies used to find orphan spines.
    pub grammar: ProductionTable,
    pub forest: ForestParams,
    pub train_seed: u64,
    pub score_mode: ScoreMode,
    pub ks: Vec<usize>,
    pub simulate: SimulateConfig,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            phantom: PhantomConfig::default(),
            fragment: FragmentConfig::default(),
            window: WindowSpec::default(),
            grammar: ProductionTable::default(),
            forest: ForestParams::default(),
            train_seed: 11,
            score_mode: ScoreMode::Cv,
            ks: vec![1, 2, 3, 5, 10],
            simulate: SimulateConfig::default(),
            threads: None,
        }
    }
}

/// Command-line values that replace config fields when present.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub data_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub fraction: Option<f64>,
    pub fragment_seed: Option<u64>,
    pub train_seed: Option<u64>,
    pub n_trees: Option<usize>,
    pub score_mode: Option<ScoreMode>,
    pub ks: Option<Vec<usize>>,
    pub iterations: Option<usize>,
    pub simulate_seed: Option<u64>,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(d) = &o.data_dir {
            self.data_dir = Some(d.clone());
        }
        if let Some(s) = o.seed {
            self.phantom.seed = s;
        }
        if let Some(f) = o.fraction {
            self.fragment.fraction = f;
        }
        if let Some(s) = o.fragment_seed {
            self.fragment.seed = s;
        }
        if let Some(s) = o.train_seed {
            self.train_seed = s;
        }
        if let Some(n) = o.n_trees {
            self.forest.n_trees = n;
        }
        if let Some(m) = o.score_mode {
            self.score_mode = m;
        }
        if let Some(ks) = &o.ks {
            self.ks = ks.clone();
        }
        if let Some(n) = o.iterations {
            self.simulate.iterations = n;
        }
        if let Some(s) = o.simulate_seed {
            self.simulate.seed = s;
        }
        if let Some(t) = o.threads {
            self.threads = Some(t);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.phantom.validate().map_err(|e| CliError::Config(format!("phantom: {e}")))?;
        let bad = |m: String| Err(CliError::Config(m));
        if !(0.0..=1.0).contains(&self.fragment.fraction) {
            return bad(format!("fragment.fraction {} outside [0, 1]", self.fragment.fraction));
        }
        if self.window.half_extent_nm.iter().any(|h| !(*h >= 0.0) || !h.is_finite()) {
            return bad("window.half_extent_nm must be finite and non-negative".into());
        }
        let table = serde_json::to_string(&self.grammar).map_err(|e| CliError::Config(e.to_string()))?;
        ProductionTable::from_json(&table).map_err(|e| CliError::Config(format!("grammar: {e}")))?;
        if self.forest.n_trees == 0 || self.forest.max_depth == 0 {
            return bad("forest.n_trees and forest.max_depth must be at least 1".into());
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return bad("ks must be a non-empty list of positive integers".into());
        }
        if self.simulate.iterations == 0 {
            return bad("simulate.iterations must be at least 1".into());
        }
        if self.simulate.fractions.is_empty() || self.simulate.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return bad("simulate.fractions must be a non-empty list inside [0, 1]".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        Ok(())
    }

    /// Flag or config value, then the environment, then the default.
    pub fn resolve_data_dir(&self) -> PathBuf {
        self.data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))
    }
}
