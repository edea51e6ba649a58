//! Run manifests (TOML).
//!
//! Relative paths resolve against the manifest's directory. Credentials
//! are never stored here, only the names of the environment variables
//! that hold them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{load_dataset, mock_dataset, DatasetError, GradeMode, QAItem};
use crate::agent::{AgentConfig, Mode};
use crate::cost::{PricingError, PricingTable};
use crate::events::ClockMode;
use crate::ledger::{BudgetVector, ToolSet};
use crate::money::Money;
use crate::providers::live::{EndpointConfig, HttpBrowse, HttpChat, HttpSearch, SearchBackend};
use crate::providers::world::{WorldPolicy, WorldProvider};
use crate::providers::{LlmProvider, ProviderError, Providers};
use crate::scaling::{Aggregation, PolicyError, RunPolicy, Scaling};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("dataset {0} does not exist")]
    MissingDataset(PathBuf),
    #[error("no dataset given and providers are not mock")]
    NoDataset,
    #[error("environment variable {0} is not set")]
    MissingCredential(String),
    #[error("providers.kind = \"live\" needs a [providers.live] section")]
    MissingLive,
    #[error("grading.mode = \"judge\" needs live providers")]
    JudgeWithoutLive,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Pricing(#[from] PricingError),
    #[error("agent config: {0}")]
    Agent(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub mode: Mode,
    #[serde(default = "scaling_none")]
    pub scaling: Scaling,
    pub budgets: BTreeMap<String, u64>,
    #[serde(default = "one")]
    pub parallel_n: usize,
    #[serde(default)]
    pub early_stop: bool,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "majority_exact")]
    pub aggregation: Aggregation,
    #[serde(default = "four")]
    pub workers: usize,
}

fn scaling_none() -> Scaling {
    Scaling::None
}
fn one() -> usize {
    1
}
fn four() -> usize {
    4
}
fn majority_exact() -> Aggregation {
    Aggregation::MajorityExact
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSection {
    pub temperature_execute: Option<f64>,
    pub temperature_select: Option<f64>,
    pub max_new_tokens: Option<u32>,
    pub summarize_interval: Option<u32>,
    pub browse_char_cap: Option<usize>,
    pub max_iterations: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PricingSection {
    #[serde(default = "usd")]
    pub currency: String,
    /// Major units per million tokens, as decimal strings.
    pub input_per_million: String,
    pub output_per_million: String,
    pub cache_per_million: String,
    /// Major units per call; defaults to the built-in tool prices.
    #[serde(default)]
    pub tools: BTreeMap<String, String>,
}

fn usd() -> String {
    "USD".into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Mock,
    Live,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockPolicy {
    Aware,
    Blind,
    Adaptive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockSection {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "depth4")]
    pub depth: u32,
    #[serde(default = "five")]
    pub count: usize,
    #[serde(default = "two")]
    pub branching: u32,
    #[serde(default = "aware")]
    pub policy: MockPolicy,
    #[serde(default = "three")]
    pub blind_max_searches: u32,
}

fn depth4() -> u32 {
    4
}
fn five() -> usize {
    5
}
fn two() -> u32 {
    2
}
fn three() -> u32 {
    3
}
fn aware() -> MockPolicy {
    MockPolicy::Aware
}

impl Default for MockSection {
    fn default() -> Self {
        MockSection { seed: 0, depth: 4, count: 5, branching: 2, policy: MockPolicy::Aware, blind_max_searches: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchEndpoint {
    #[serde(flatten)]
    pub endpoint: EndpointConfig,
    pub backend: SearchBackend,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiveSection {
    pub chat: EndpointConfig,
    pub search: SearchEndpoint,
    pub browse: EndpointConfig,
    #[serde(default)]
    pub verifier: Option<EndpointConfig>,
    #[serde(default)]
    pub judge: Option<EndpointConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProvidersSection {
    pub kind: ProviderKind,
    #[serde(default)]
    pub mock: Option<MockSection>,
    #[serde(default)]
    pub live: Option<LiveSection>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradeKind {
    #[default]
    Exact,
    Judge,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradingSection {
    #[serde(default)]
    pub mode: GradeKind,
}

/// The manifest as written on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub resume: bool,
    #[serde(default = "four")]
    pub workers: usize,
    #[serde(default = "logical")]
    pub clock: ClockMode,
    pub policy: PolicySection,
    #[serde(default)]
    pub agent: AgentSection,
    pub pricing: PricingSection,
    pub providers: ProvidersSection,
    #[serde(default)]
    pub grading: GradingSection,
}

fn logical() -> ClockMode {
    ClockMode::Logical
}

/// A validated manifest with paths resolved.
#[derive(Clone, Debug)]
pub struct RunManifest {
    pub dataset: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub resume: bool,
    pub workers: usize,
    pub clock: ClockMode,
    pub policy: RunPolicy,
    pub agent: AgentConfig,
    pub pricing: PricingTable,
    pub providers: ProvidersSection,
    pub grading: GradeKind,
}

/// Providers and items ready to run.
pub struct Built {
    pub items: Vec<QAItem>,
    pub providers: Providers,
    pub grader: Option<Arc<dyn LlmProvider>>,
    pub grade_temperature: f64,
}

impl Built {
    pub fn grade_mode(&self) -> GradeMode<'_> {
        match &self.grader {
            Some(llm) => GradeMode::Judge { llm: llm.as_ref(), temperature: self.grade_temperature },
            None => GradeMode::Exact,
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io { path: path.to_path_buf(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ManifestError> {
        let f: ManifestFile = toml::from_str(text)?;
        Self::from_file(f, base)
    }

    pub fn from_file(f: ManifestFile, base: &Path) -> Result<Self, ManifestError> {
        let tools = ToolSet::search_agent();
        let mut pricing = PricingTable::per_million_tokens(
            &f.pricing.currency,
            &f.pricing.input_per_million,
            &f.pricing.output_per_million,
            &f.pricing.cache_per_million,
            &tools,
        )?;
        for (tool, price) in &f.pricing.tools {
            pricing.tool_prices.insert(tool.clone(), Money::from_major_decimal(price).map_err(PricingError::from)?);
        }
        let pricing = PricingTable::new(pricing.currency, pricing.token_rates, pricing.tool_prices)?;
        let p = f.policy;
        let policy = RunPolicy {
            mode: p.mode,
            scaling: p.scaling,
            budgets: BudgetVector::new(p.budgets),
            parallel_n: p.parallel_n,
            early_stop: p.early_stop,
            seeds: p.seeds,
            aggregation: p.aggregation,
            workers: p.workers,
        };
        let mut m = RunManifest {
            dataset: f.dataset.map(|d| resolve(base, &d)),
            output_dir: resolve(base, &f.output_dir),
            resume: f.resume,
            workers: f.workers,
            clock: f.clock,
            agent: AgentConfig::for_mode(policy.mode),
            policy,
            pricing,
            providers: f.providers,
            grading: f.grading.mode,
        };
        m.apply_agent_section(&f.agent);
        m.validate()?;
        Ok(m)
    }

    fn apply_agent_section(&mut self, a: &AgentSection) {
        let c = &mut self.agent;
        if let Some(v) = a.temperature_execute {
            c.temperature_execute = v;
        }
        if let Some(v) = a.temperature_select {
            c.temperature_select = v;
        }
        if let Some(v) = a.max_new_tokens {
            c.max_new_tokens = v;
        }
        if let Some(v) = a.summarize_interval {
            c.summarize_interval = v;
        }
        if let Some(v) = a.browse_char_cap {
            c.browse_char_cap = v;
        }
        if let Some(v) = a.max_iterations {
            c.max_iterations = v;
        }
    }

    /// Switches the mode, keeping agent overrides other than the tracker flag.
    pub fn set_mode(&mut self, mode: Mode) {
        self.policy.mode = mode;
        self.agent.mode = mode;
        self.agent.tracker_enabled = mode != Mode::React;
    }

    /// Switches to mock providers over synthetic worlds.
    pub fn set_mock_world(&mut self, seed: u64, depth: u32) {
        let mut mock = self.providers.mock.clone().unwrap_or_default();
        mock.seed = seed;
        mock.depth = depth;
        self.providers.kind = ProviderKind::Mock;
        self.providers.mock = Some(mock);
        self.dataset = None;
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        self.policy.validate()?;
        self.agent.validate().map_err(ManifestError::Agent)?;
        if self.agent.mode != self.policy.mode {
            return Err(ManifestError::Agent("agent mode differs from policy mode".into()));
        }
        match self.providers.kind {
            ProviderKind::Mock => {
                if self.grading == GradeKind::Judge {
                    return Err(ManifestError::JudgeWithoutLive);
                }
            }
            ProviderKind::Live => {
                if self.providers.live.is_none() {
                    return Err(ManifestError::MissingLive);
                }
                if self.dataset.is_none() {
                    return Err(ManifestError::NoDataset);
                }
            }
        }
        if let Some(d) = &self.dataset {
            if !d.exists() {
                return Err(ManifestError::MissingDataset(d.clone()));
            }
        }
        Ok(())
    }

    /// Loads items and constructs providers; live credentials must be set.
    pub fn build(&self) -> Result<Built, ManifestError> {
        match self.providers.kind {
            ProviderKind::Mock => {
                let mock = self.providers.mock.clone().unwrap_or_default();
                let (generated, worlds) = mock_dataset(mock.seed, mock.depth, mock.count, mock.branching);
                let items = match &self.dataset {
                    Some(d) => load_dataset(d)?,
                    None => generated,
                };
                let web = Arc::new(
                    WorldProvider::new(worlds.into_iter().map(Arc::new).collect()).with_cap(self.agent.browse_char_cap),
                );
                let policy = match mock.policy {
                    MockPolicy::Aware => WorldPolicy::aware(),
                    MockPolicy::Blind => WorldPolicy::blind(mock.blind_max_searches),
                    MockPolicy::Adaptive => WorldPolicy::adaptive(mock.blind_max_searches),
                };
                Ok(Built {
                    items,
                    providers: Providers::new(Arc::new(policy), web.clone(), web),
                    grader: None,
                    grade_temperature: 0.0,
                })
            }
            ProviderKind::Live => {
                let live = self.providers.live.as_ref().ok_or(ManifestError::MissingLive)?;
                let mut endpoints = vec![&live.chat, &live.search.endpoint, &live.browse];
                endpoints.extend(live.verifier.iter());
                endpoints.extend(live.judge.iter());
                for e in endpoints {
                    if let Some(var) = &e.api_key_env {
                        if std::env::var(var).map(|v| v.is_empty()).unwrap_or(true) {
                            return Err(ManifestError::MissingCredential(var.clone()));
                        }
                    }
                }
                let dataset = self.dataset.as_ref().ok_or(ManifestError::NoDataset)?;
                let items = load_dataset(dataset)?;
                let chat: Arc<dyn LlmProvider> = Arc::new(HttpChat::new(live.chat.clone())?);
                let search = Arc::new(HttpSearch::new(live.search.endpoint.clone(), live.search.backend)?);
                let browse = Arc::new(HttpBrowse::new(live.browse.clone())?.with_cap(self.agent.browse_char_cap));
                let mut providers = Providers::new(chat.clone(), search, browse);
                if let Some(v) = &live.verifier {
                    providers = providers.with_verifier(Arc::new(HttpChat::new(v.clone())?));
                }
                let judge: Arc<dyn LlmProvider> = match &live.judge {
                    Some(j) => Arc::new(HttpChat::new(j.clone())?),
                    None => chat,
                };
                providers = providers.with_judge(judge.clone());
                let grader = (self.grading == GradeKind::Judge).then_some(judge);
                Ok(Built { items, providers, grader, grade_temperature: self.agent.temperature_select })
            }
        }
    }
}
