//! End-to-end orchestration: one directory per run, one function per stage.
//!
//! Each stage reads its inputs from the run directory, refuses to overwrite
//! existing outputs unless forced, and records input/output digests in
//! `manifest.json`.

mod config;
mod manifest;
mod report;
mod stages;
pub mod svg;

pub use config::{
    ApiConfig, CohortConfig, MixKind, ModelsConfig, OutputConfig, Provider, ResponseConfig, RunConfig,
    SimulateConfig, TranscriptConfig,
};
pub use manifest::{RunManifest, StageRecord};
pub use report::render_report;
pub use stages::{
    cmd_administer, cmd_analyze, cmd_cluster, cmd_generate_personas, cmd_report, cmd_simulate, Stage,
};

use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::cluster::ClusterError;
use crate::factor::FactorError;
use crate::persona::PersonaError;
use crate::scale::ScaleError;
use crate::synth::SynthError;
use crate::transport::{Backend, Gateway, TranscriptMode, TranscriptStore, TransportError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{0} already exists; pass --force to overwrite")]
    WouldOverwrite(PathBuf),
    #[error("missing artifacts in run directory: {}", .0.join(", "))]
    MissingArtifacts(Vec<String>),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("analysis: {0}")]
    Analysis(String),
}

impl PipelineError {
    /// Process exit code: 1 analysis, 2 configuration or credential, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Transport(TransportError::MissingCredential) => 2,
            Self::Transport(TransportError::Store(_)) => 3,
            Self::Transport(_) => 1,
            Self::Io { .. } | Self::WouldOverwrite(_) | Self::MissingArtifacts(_) => 3,
            Self::Analysis(_) => 1,
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

impl From<PersonaError> for PipelineError {
    fn from(e: PersonaError) -> Self {
        match e {
            PersonaError::Transport(t) => Self::Transport(t),
            other => Self::Analysis(other.to_string()),
        }
    }
}

impl From<ScaleError> for PipelineError {
    fn from(e: ScaleError) -> Self {
        match e {
            ScaleError::Transport(t) => Self::Transport(t),
            other => Self::Analysis(other.to_string()),
        }
    }
}

impl From<FactorError> for PipelineError {
    fn from(e: FactorError) -> Self {
        Self::Analysis(e.to_string())
    }
}

impl From<ClusterError> for PipelineError {
    fn from(e: ClusterError) -> Self {
        Self::Analysis(e.to_string())
    }
}

impl From<SynthError> for PipelineError {
    fn from(e: SynthError) -> Self {
        Self::Analysis(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// A run directory plus the configuration stages execute under.
#[derive(Debug, Clone)]
pub struct Run {
    pub dir: PathBuf,
    pub config: RunConfig,
    /// Overwrite existing stage outputs.
    pub force: bool,
}

impl Run {
    /// Use `dir` as the run directory, creating it if needed.
    pub fn at(dir: impl Into<PathBuf>, config: RunConfig, force: bool) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
        Ok(Self { dir, config, force })
    }

    /// `output.root/<run id>`, where the id comes from the config or the clock.
    pub fn from_config(config: RunConfig, force: bool) -> Result<Self> {
        let id = config
            .output
            .run_id
            .clone()
            .unwrap_or_else(|| chrono::Utc::now().format("run-%Y%m%d-%H%M%S").to_string());
        let dir = config.output.root.join(id);
        Self::at(dir, config, force)
    }

    pub fn run_id(&self) -> String {
        self.dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Transcript store location; relative paths resolve against the run
    /// directory.
    pub fn transcript_path(&self) -> PathBuf {
        let p = &self.config.transcript.path;
        if p.is_absolute() {
            p.clone()
        } else {
            self.dir.join(p)
        }
    }

    /// Gateway wired to the configured provider and transcript store. Replay
    /// mode never constructs a live backend, so it needs no credential.
    pub fn gateway(&self) -> Result<Gateway> {
        let cfg = &self.config;
        let store = TranscriptStore::open(self.transcript_path(), cfg.transcript.mode)?;
        let backend: Option<Arc<dyn Backend>> = match (cfg.transcript.mode, cfg.api.provider) {
            (TranscriptMode::Replay, _) => None,
            (_, Provider::Synthetic) => Some(Arc::new(self.synthetic_backend()?)),
            (_, Provider::Openai) => Some(live_backend(cfg)?),
        };
        Ok(Gateway::new(store, backend)
            .with_concurrency(cfg.api.concurrency)
            .with_embedding(cfg.models.embedding_dim, cfg.models.embedding_batch))
    }

    pub fn synthetic_backend(&self) -> Result<crate::synth::SyntheticBackend> {
        let s = &self.config.simulate;
        let model = crate::synth::PlantedModel::ams(s.own_loading, s.factor_corr)?;
        Ok(crate::synth::SyntheticBackend::with_model(model, s.mix(), self.config.seed)
            .with_malformed_rate(s.malformed_rate))
    }
}

#[cfg(feature = "live")]
fn live_backend(cfg: &RunConfig) -> Result<Arc<dyn Backend>> {
    let b = crate::transport::OpenAiBackend::from_env(
        cfg.api.base_url.clone(),
        std::time::Duration::from_secs(cfg.api.timeout_secs),
    )?;
    Ok(Arc::new(b))
}

#[cfg(not(feature = "live"))]
fn live_backend(_cfg: &RunConfig) -> Result<Arc<dyn Backend>> {
    Err(PipelineError::Config("built without the `live` feature".into()))
}
