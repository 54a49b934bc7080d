//! Engine defaults read from a TOML file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use hyperlens_core::feedback::FineTuneConfig;
use hyperlens_core::hierarchy::Aggregator;
use hyperlens_core::predictor::TrainConfig;

/// Per-level payload limits and page sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViewConfig {
    /// Initial cutoff threshold of new sessions.
    pub threshold: f64,
    /// How collapsed groups combine their members' values.
    pub aggregator: Aggregator,
    /// Cells per L1 or L2 response.
    pub grid_budget: usize,
    /// Cells per L3 or L4 response.
    pub timeline_budget: usize,
    /// Cells per L5 response.
    pub keyword_budget: usize,
    pub keywords_per_cell: usize,
    /// Documents per L6 page: default and hard maximum.
    pub document_page: usize,
    pub document_page_max: usize,
    pub excerpt_chars: usize,
    pub search_page: usize,
}

impl Default for ViewConfig {
    fn default() -> Self {
        ViewConfig {
            threshold: 0.5,
            aggregator: Aggregator::Max,
            grid_budget: 262_144,
            timeline_budget: 4096,
            keyword_budget: 256,
            keywords_per_cell: 8,
            document_page: 4,
            document_page_max: 8,
            excerpt_chars: 240,
            search_page: 50,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub train: TrainConfig,
    pub fine_tune: FineTuneConfig,
    pub view: ViewConfig,
}

impl EngineConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: EngineConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.train.validate()?;
        self.fine_tune.validate()?;
        let v = &self.view;
        anyhow::ensure!(
            (0.0..=1.0).contains(&v.threshold),
            "view.threshold outside [0, 1]"
        );
        anyhow::ensure!(
            v.grid_budget > 0 && v.timeline_budget > 0 && v.keyword_budget > 0,
            "view budgets must be positive"
        );
        anyhow::ensure!(
            v.document_page >= 1 && v.document_page <= v.document_page_max,
            "view.document_page must lie in 1..=document_page_max"
        );
        anyhow::ensure!(v.search_page >= 1, "view.search_page must be positive");
        Ok(())
    }
}
