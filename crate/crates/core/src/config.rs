//! Run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{RetryPolicy, Role, RoleBinding};
use crate::verification::{ReviewPolicy, SearchWindow};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("no model bound to role `{0}`")]
    MissingRole(Role),
}

fn yes() -> bool {
    true
}

/// Pipeline components that can be switched off for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// Scenario-conditioned question generation.
    #[serde(default = "yes")]
    pub cgq: bool,
    /// Feature-library hints in test prompts.
    #[serde(default = "yes")]
    pub fl: bool,
    /// Test-driven elicitation (unit tests rather than plain example data).
    #[serde(default = "yes")]
    pub tg: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation { cgq: true, fl: true, tg: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    Http {
        base_url: String,
        #[serde(default)]
        requests_per_minute: u32,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
    /// Canned replies from a fixture file.
    Mock { fixture: PathBuf },
    /// Replies recorded in an earlier run's exchange log.
    Replay { run_dir: PathBuf },
}

fn default_timeout() -> u64 {
    120
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    #[default]
    Live,
    Fixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    #[serde(default)]
    pub mode: SearchMode,
    #[serde(default)]
    pub fixture: Option<PathBuf>,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default)]
    pub window: SearchWindow,
    #[serde(default = "default_phrase_limit")]
    pub phrase_limit: usize,
}

fn default_phrase_limit() -> usize {
    crate::verification::query::DEFAULT_PHRASE_LIMIT
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { mode: SearchMode::Live, fixture: None, base_url: None, window: SearchWindow::default(), phrase_limit: default_phrase_limit() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScorerMode {
    #[default]
    Stub,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ScorerConfig {
    #[serde(default)]
    pub mode: ScorerMode,
    #[serde(default)]
    pub endpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryConfig {
    /// Library file; the bundled seed library when unset.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "default_hints")]
    pub hints_per_kind: usize,
    /// Fraction of lowest-scoring tokens that form a template.
    #[serde(default = "default_quartile")]
    pub quartile: f64,
    #[serde(default = "default_min_pts")]
    pub min_pts: usize,
    /// Clustering radius; estimated from the data when unset.
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default = "default_prototype_threshold")]
    pub prototype_threshold: f64,
}

fn default_quartile() -> f64 {
    crate::library::division::DEFAULT_QUARTILE
}

fn default_min_pts() -> usize {
    crate::library::dbscan::DEFAULT_MIN_PTS
}

fn default_prototype_threshold() -> f64 {
    crate::library::DEFAULT_PROTOTYPE_THRESHOLD
}

fn default_hints() -> usize {
    crate::library::DEFAULT_HINTS_PER_KIND
}

impl Default for LibraryConfig {
    fn default() -> Self {
        LibraryConfig {
            path: None,
            hints_per_kind: default_hints(),
            quartile: default_quartile(),
            min_pts: default_min_pts(),
            eps: None,
            prototype_threshold: default_prototype_threshold(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeConfig {
    #[serde(default = "default_exemplars")]
    pub exemplars: usize,
    #[serde(default)]
    pub include_context: bool,
}

fn default_exemplars() -> usize {
    crate::judge::DEFAULT_EXEMPLARS
}

impl Default for JudgeConfig {
    fn default() -> Self {
        JudgeConfig { exemplars: default_exemplars(), include_context: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    #[serde(default)]
    pub placeholders: Option<PathBuf>,
    #[serde(default = "default_entropy")]
    pub entropy_floor: f64,
}

fn default_entropy() -> f64 {
    crate::extract::DEFAULT_ENTROPY_FLOOR
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig { placeholders: None, entropy_floor: default_entropy() }
    }
}

fn default_questions() -> usize {
    crate::questions::DEFAULT_QUESTIONS_PER_SCENARIO
}

fn default_tests() -> usize {
    crate::response::DEFAULT_TESTS_PER_FUNCTION
}

fn default_width() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub run_id: Option<String>,
    #[serde(default)]
    pub seed: u64,
    /// Scenarios to audit; all when empty.
    #[serde(default)]
    pub scenarios: Vec<String>,
    /// Attribute filter; all attributes of each scenario when empty.
    #[serde(default)]
    pub attributes: Vec<String>,
    #[serde(default = "default_questions")]
    pub questions_per_pair: usize,
    #[serde(default = "default_tests")]
    pub tests_per_function: usize,
    /// One question batch per scenario covering all its attributes instead
    /// of one batch per scenario and attribute.
    #[serde(default)]
    pub multi_attribute: bool,
    /// Concurrent requests per stage.
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default)]
    pub ablation: Ablation,
    pub providers: BTreeMap<String, ProviderConfig>,
    pub roles: BTreeMap<Role, RoleBinding>,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub scorer: ScorerConfig,
    #[serde(default)]
    pub library: LibraryConfig,
    #[serde(default)]
    pub judge: JudgeConfig,
    #[serde(default)]
    pub extraction: ExtractionConfig,
    #[serde(default)]
    pub review: ReviewPolicy,
    #[serde(default)]
    pub taxonomy: Option<PathBuf>,
    #[serde(default)]
    pub refusal_phrases: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load from a file; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in self.providers.values_mut() {
            match p {
                ProviderConfig::Mock { fixture } => fix(fixture),
                ProviderConfig::Replay { run_dir } => fix(run_dir),
                ProviderConfig::Http { .. } => {}
            }
        }
        for p in [&mut self.search.fixture, &mut self.library.path, &mut self.extraction.placeholders, &mut self.taxonomy, &mut self.refusal_phrases]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for role in [Role::QuestionGen, Role::Test, Role::Judge] {
            let b = self.roles.get(&role).ok_or(ConfigError::MissingRole(role))?;
            if !self.providers.contains_key(&b.provider) {
                return Err(ConfigError::Invalid(format!("role `{role}` uses unknown provider `{}`", b.provider)));
            }
        }
        if self.questions_per_pair == 0 || self.tests_per_function == 0 {
            return Err(ConfigError::Invalid("question and test counts must be at least 1".into()));
        }
        if self.width == 0 {
            return Err(ConfigError::Invalid("width must be at least 1".into()));
        }
        if self.search.window.min > self.search.window.max {
            return Err(ConfigError::Invalid("search window min exceeds max".into()));
        }
        if self.search.mode == SearchMode::Fixture && self.search.fixture.is_none() {
            return Err(ConfigError::Invalid("fixture search needs `search.fixture`".into()));
        }
        if self.scorer.mode == ScorerMode::Http && self.scorer.endpoint.is_none() {
            return Err(ConfigError::Invalid("http scorer needs `scorer.endpoint`".into()));
        }
        if !(self.library.quartile > 0.0 && self.library.quartile <= 1.0) {
            return Err(ConfigError::Invalid("library quartile must be in (0, 1]".into()));
        }
        if self.review.quorum == 0 {
            return Err(ConfigError::Invalid("review quorum must be at least 1".into()));
        }
        Ok(())
    }
}
