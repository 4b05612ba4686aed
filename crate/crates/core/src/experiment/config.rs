use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::AttackConfig;
use crate::dataset::{AttributeSchema, ColumnSpec, Delimiter, InteractionLayout, TableLayout};
use crate::error::{Error, Result};
use crate::recsys::HybridVariant;
use crate::synth::{SyntheticConfig, GENRES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Generate MovieLens-100K-format data in memory.
    Synthetic,
    /// Read interaction and attribute files.
    Files,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub source: DataSource,
    pub interactions: PathBuf,
    pub users: PathBuf,
    pub items: PathBuf,
    pub interaction_layout: InteractionLayout,
    pub user_layout: TableLayout,
    pub item_layout: TableLayout,
    pub user_schema: AttributeSchema,
    pub item_schema: AttributeSchema,
    /// Keep the first `max_users` users by id (0 keeps all).
    pub max_users: usize,
    pub min_item_interactions: usize,
    pub synthetic: SyntheticConfig,
}

fn movielens_user_layout() -> TableLayout {
    TableLayout {
        delimiter: Delimiter::Pipe,
        has_header: false,
        column_names: ["user_id", "age", "gender", "occupation", "zip_code"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    }
}

fn movielens_item_layout() -> TableLayout {
    let mut names: Vec<String> = ["movie_id", "title", "release_date", "video_release_date", "imdb_url"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend(GENRES.iter().map(|g| format!("genre_{g}")));
    TableLayout {
        delimiter: Delimiter::Pipe,
        has_header: false,
        column_names: names,
    }
}

fn movielens_user_schema() -> AttributeSchema {
    AttributeSchema {
        id_column: "user_id".into(),
        columns: vec![
            ColumnSpec::numeric("age"),
            ColumnSpec::categorical("gender"),
            ColumnSpec::categorical("occupation"),
        ],
    }
}

fn movielens_item_schema() -> AttributeSchema {
    AttributeSchema {
        id_column: "movie_id".into(),
        columns: GENRES
            .iter()
            .map(|g| ColumnSpec::numeric(&format!("genre_{g}")))
            .collect(),
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            interactions: PathBuf::from("u.data"),
            users: PathBuf::from("u.user"),
            items: PathBuf::from("u.item"),
            interaction_layout: InteractionLayout::movielens_100k(),
            user_layout: movielens_user_layout(),
            item_layout: movielens_item_layout(),
            user_schema: movielens_user_schema(),
            item_schema: movielens_item_schema(),
            max_users: 600,
            min_item_interactions: 1,
            synthetic: SyntheticConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub member_frac: f64,
    pub attacker_frac: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            member_frac: 0.4,
            attacker_frac: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub latent: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub reg: f64,
    pub negative_ratio: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            latent: 64,
            epochs: 100,
            learning_rate: 0.05,
            reg: 0.01,
            negative_ratio: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TargetConfig {
    pub variant: HybridVariant,
    /// Preference latent width `d_cf`.
    pub d_cf: usize,
    pub preference_epochs: usize,
    pub preference_learning_rate: f64,
    pub preference_reg: f64,
    pub hidden: usize,
    /// Scoring-space width `d_s`.
    pub d_s: usize,
    pub dropout_rate: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub similarity_weight: f64,
    pub batch_size: usize,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            variant: HybridVariant::DropoutHybrid,
            d_cf: 200,
            preference_epochs: 300,
            preference_learning_rate: 0.05,
            preference_reg: 0.0,
            hidden: 64,
            d_s: 64,
            dropout_rate: 0.0,
            epochs: 600,
            learning_rate: 0.005,
            similarity_weight: 0.1,
            batch_size: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackSection {
    pub n: usize,
    pub threshold: f64,
    pub exclude_history: bool,
    pub baselines: bool,
    /// Share of evaluation users held out to calibrate the absolute baseline.
    pub calibration_frac: f64,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            n: 10,
            threshold: 1.0,
            exclude_history: false,
            baselines: true,
            calibration_frac: 0.1,
        }
    }
}

impl AttackSection {
    pub fn attack_config(&self) -> AttackConfig {
        AttackConfig {
            n: self.n,
            threshold: self.threshold,
            exclude_history: self.exclude_history,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DpSection {
    pub enabled: bool,
    pub epsilon: f64,
    pub delta: f64,
    pub sensitivity: f64,
    /// Also run without DP and report both.
    pub compare_baseline: bool,
}

impl Default for DpSection {
    fn default() -> Self {
        Self {
            enabled: false,
            epsilon: 0.1,
            delta: 1e-5,
            sensitivity: 1.0,
            compare_baseline: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub seeds: Vec<u64>,
    pub fpr_targets: Vec<f64>,
    pub sweep_n: Vec<usize>,
    pub sweep_l: Vec<usize>,
    /// Grid for the metric-curve table.
    pub curve_points: usize,
    pub curve_upper: f64,
    pub curve_c: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3, 4, 5],
            fpr_targets: vec![0.01, 0.05, 0.1],
            sweep_n: (1..=10).map(|k| 10 * k).collect(),
            sweep_l: (1..=10).map(|k| 10 * k).collect(),
            curve_points: 200,
            curve_upper: 0.95,
            curve_c: 1.0,
        }
    }
}

/// Everything one experiment needs. Every seed is explicit.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub split: SplitConfig,
    pub embedding: EmbeddingConfig,
    pub target: TargetConfig,
    pub attack: AttackSection,
    pub dp: DpSection,
    pub eval: EvalSection,
    pub output: PathBuf,
}

/// Environment variables consulted by [`RunConfig::apply_env`].
pub const ENV_SEEDS: &str = "REFMIA_SEEDS";
pub const ENV_OUTPUT: &str = "REFMIA_OUTPUT";
pub const ENV_DATA_DIR: &str = "REFMIA_DATA_DIR";

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses a config file; relative data paths resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.data.interactions, &mut self.data.users, &mut self.data.items] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// `REFMIA_SEEDS` (comma separated), `REFMIA_OUTPUT`, and
    /// `REFMIA_DATA_DIR` (directory holding `u.data`, `u.user`, `u.item`).
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(seeds) = lookup(ENV_SEEDS) {
            self.eval.seeds = seeds
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("{ENV_SEEDS}: bad seed {s:?}")))
                })
                .collect::<Result<_>>()?;
        }
        if let Some(out) = lookup(ENV_OUTPUT) {
            self.output = PathBuf::from(out);
        }
        if let Some(dir) = lookup(ENV_DATA_DIR) {
            let dir = PathBuf::from(dir);
            self.data.source = DataSource::Files;
            self.data.interactions = dir.join("u.data");
            self.data.users = dir.join("u.user");
            self.data.items = dir.join("u.item");
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.source == DataSource::Files {
            for p in [&self.data.interactions, &self.data.users, &self.data.items] {
                if !p.exists() {
                    return Err(Error::Config(format!("data file {} does not exist", p.display())));
                }
            }
        }
        if self.attack.n == 0 {
            return Err(Error::Config("attack.n must be at least 1".into()));
        }
        if !(self.attack.threshold > 0.0) {
            return Err(Error::Config("attack.threshold must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.attack.calibration_frac) {
            return Err(Error::Config("attack.calibration_frac must be in [0, 1)".into()));
        }
        if self.eval.seeds.is_empty() {
            return Err(Error::Config("eval.seeds must list at least one seed".into()));
        }
        if self.dp.enabled && !(self.dp.epsilon > 0.0) {
            return Err(Error::Config("dp.epsilon must be positive".into()));
        }
        if self.embedding.latent == 0 || self.target.d_cf == 0 {
            return Err(Error::Config("latent widths must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }
}

/// Hex SHA-256 of the canonical JSON encoding of `value`.
pub fn content_hash<S: Serialize>(value: &S) -> String {
    let json = serde_json::to_vec(value).unwrap_or_default();
    hex::encode(Sha256::digest(&json))
}

/// Deterministic per-stage seed from an experiment seed.
pub fn derive_seed(seed: u64, stage: u64) -> u64 {
    // splitmix64
    let mut z = seed
        .wrapping_add(stage.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub mod stage_seed {
    pub const SPLIT: u64 = 1;
    pub const EMBEDDING: u64 = 2;
    pub const PREFERENCE: u64 = 3;
    pub const HYBRID: u64 = 4;
    pub const DP: u64 = 5;
    pub const EVAL: u64 = 6;
}
