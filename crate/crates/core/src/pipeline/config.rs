use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::cluster::{ClusterConfig, TsneConfig};
use crate::factor::{CfaOptions, EfaConfig};
use crate::transport::TranscriptMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    /// OpenAI-compatible HTTPS endpoint.
    #[default]
    Openai,
    /// Offline planted-model responder.
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApiConfig {
    pub base_url: String,
    pub provider: Provider,
    pub timeout_secs: u64,
    /// Maximum requests in flight.
    pub concurrency: usize,
}

impl Default for ApiConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            provider: Provider::Openai,
            timeout_secs: 120,
            concurrency: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    pub chat: String,
    pub embedding: String,
    pub embedding_dim: usize,
    pub embedding_batch: usize,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        Self {
            chat: "gpt-4o".into(),
            embedding: "text-embedding-3-small".into(),
            embedding_dim: 1536,
            embedding_batch: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub n: usize,
    pub batch_size: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    pub reprompt_budget: u32,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            batch_size: 20,
            temperature: 1.0,
            max_tokens: 4096,
            reprompt_budget: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResponseConfig {
    pub temperature: f64,
    pub max_tokens: u32,
    pub reprompt_budget: u32,
}

impl Default for ResponseConfig {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 256,
            reprompt_budget: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MixKind {
    Neutral,
    Two,
    #[default]
    Three,
}

/// Planted model used by `simulate` and by the synthetic provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub n: usize,
    pub own_loading: f64,
    pub factor_corr: f64,
    pub profiles: MixKind,
    pub profile_delta: f64,
    /// Unparseable questionnaire replies from the synthetic provider.
    pub malformed_rate: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            own_loading: 0.8,
            factor_corr: 0.3,
            profiles: MixKind::Three,
            profile_delta: 1.0,
            malformed_rate: 0.0,
        }
    }
}

impl SimulateConfig {
    pub fn mix(&self) -> crate::synth::ProfileMix {
        use crate::synth::ProfileMix;
        match self.profiles {
            MixKind::Neutral => ProfileMix::neutral(7),
            MixKind::Two => ProfileMix::two_profile(self.profile_delta),
            MixKind::Three => ProfileMix::three_profile(self.profile_delta),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranscriptConfig {
    pub mode: TranscriptMode,
    /// Store file; relative paths resolve against the run directory.
    pub path: PathBuf,
}

impl Default for TranscriptConfig {
    fn default() -> Self {
        Self {
            mode: TranscriptMode::Record,
            path: PathBuf::from("transcripts.jsonl"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Parent of per-run directories.
    pub root: PathBuf,
    /// Run directory name; generated from the clock when absent.
    pub run_id: Option<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            root: PathBuf::from("runs"),
            run_id: None,
        }
    }
}

/// Everything a run needs. Every section and key is optional in the file;
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; copied into each module seed the file leaves unset.
    pub seed: u64,
    pub api: ApiConfig,
    pub models: ModelsConfig,
    pub cohort: CohortConfig,
    pub responses: ResponseConfig,
    pub efa: EfaConfig,
    pub cfa: CfaOptions,
    pub cluster: ClusterConfig,
    pub tsne: TsneConfig,
    pub simulate: SimulateConfig,
    pub transcript: TranscriptConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = Self {
            seed: 42,
            api: ApiConfig::default(),
            models: ModelsConfig::default(),
            cohort: CohortConfig::default(),
            responses: ResponseConfig::default(),
            efa: EfaConfig::default(),
            cfa: CfaOptions::default(),
            cluster: ClusterConfig::default(),
            tsne: TsneConfig::default(),
            simulate: SimulateConfig::default(),
            transcript: TranscriptConfig::default(),
            output: OutputConfig::default(),
        };
        cfg.set_seed(42);
        cfg
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        let table: toml::Table = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        let explicit = |section: &str| {
            table
                .get(section)
                .and_then(|v| v.as_table())
                .is_some_and(|t| t.contains_key("rng_seed"))
        };
        let seed = cfg.seed;
        if !explicit("efa") {
            cfg.efa.rng_seed = seed;
        }
        if !explicit("cluster") {
            cfg.cluster.rng_seed = seed;
        }
        if !explicit("tsne") {
            cfg.tsne.rng_seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Set the master seed and every module seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.efa.rng_seed = seed;
        self.cluster.rng_seed = seed;
        self.tsne.rng_seed = seed;
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if !(0.0..=2.0).contains(&self.cohort.temperature) || !(0.0..=2.0).contains(&self.responses.temperature) {
            return bad("temperatures must lie in [0, 2]");
        }
        if self.cohort.n == 0 || self.cohort.batch_size == 0 {
            return bad("cohort.n and cohort.batch_size must be positive");
        }
        if self.models.embedding_dim == 0 || self.models.embedding_batch == 0 {
            return bad("embedding_dim and embedding_batch must be positive");
        }
        if self.cluster.k == 0 || self.cluster.restarts == 0 {
            return bad("cluster.k and cluster.restarts must be positive");
        }
        if self.api.concurrency == 0 {
            return bad("api.concurrency must be positive");
        }
        if !(0.0..=1.0).contains(&self.simulate.malformed_rate) {
            return bad("simulate.malformed_rate must lie in [0, 1]");
        }
        Ok(())
    }

    /// Config echo written into the run directory.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn cohort_spec(&self) -> crate::persona::CohortSpec {
        crate::persona::CohortSpec {
            n_total: self.cohort.n,
            batch_size: self.cohort.batch_size,
            temperature: self.cohort.temperature,
            model_id: self.models.chat.clone(),
            max_tokens: self.cohort.max_tokens,
            reprompt_budget: self.cohort.reprompt_budget,
            seed_note: String::new(),
        }
    }

    pub fn administer_options(&self) -> crate::scale::AdministerOptions {
        crate::scale::AdministerOptions {
            model_id: self.models.chat.clone(),
            temperature: self.responses.temperature,
            max_tokens: self.responses.max_tokens,
            reprompt_budget: self.responses.reprompt_budget,
        }
    }
}
