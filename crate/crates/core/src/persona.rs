//! Virtual student personas: prompt construction, batch parsing and batched
//! cohort generation.

use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;
use thiserror::Error;

use crate::transport::{map_bounded, ChatClient, ChatRequest, TransportError};

pub const MIN_AGE: u32 = 18;
pub const MAX_AGE: u32 = 25;

/// A simulated respondent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub id: u32,
    pub age: u32,
    pub gender: String,
    pub description: String,
}

impl Persona {
    /// Zero-padded four-digit id, as used in prompts.
    pub fn display_id(&self) -> String {
        format!("{:04}", self.id)
    }
}

impl fmt::Display for Persona {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}, {} - {}", self.age, self.gender, self.description)
    }
}

#[derive(Debug, Error)]
pub enum PersonaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("expected {expected} personas, got {got}")]
    BatchCountMismatch { expected: usize, got: usize },
    #[error("line {line}: malformed persona line '{text}'")]
    MalformedLine { line: usize, text: String },
    #[error("line {line}: age {age} outside {MIN_AGE}-{MAX_AGE}")]
    AgeOutOfRange { line: usize, age: u32 },
    #[error("batch starting at id {start_id} failed after {attempts} attempts: {last_error}")]
    GenerationExhausted {
        start_id: u32,
        attempts: u32,
        last_error: String,
    },
    #[error(transparent)]
    Transport(#[from] TransportError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSpec {
    pub n_total: usize,
    pub batch_size: usize,
    pub temperature: f64,
    pub model_id: String,
    pub max_tokens: u32,
    /// Re-prompts allowed per batch after the first attempt.
    pub reprompt_budget: u32,
    pub seed_note: String,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_total: 2000,
            batch_size: 20,
            temperature: 1.0,
            model_id: "gpt-4o".into(),
            max_tokens: 4096,
            reprompt_budget: 3,
            seed_note: String::new(),
        }
    }
}

impl CohortSpec {
    /// `(start_id, size)` for every batch, in order.
    pub fn batches(&self) -> Vec<(u32, usize)> {
        let mut out = Vec::new();
        let mut start = 1usize;
        while start <= self.n_total {
            let size = self.batch_size.min(self.n_total - start + 1);
            out.push((start as u32, size));
            start += size;
        }
        out
    }
}

/// Persona-generation prompt for one batch.
pub fn build_persona_prompt(batch_size: usize, start_id: u32) -> Result<String, PersonaError> {
    if batch_size == 0 {
        return Err(PersonaError::InvalidInput("batch size must be at least 1".into()));
    }
    if start_id == 0 {
        return Err(PersonaError::InvalidInput("persona ids start at 1".into()));
    }
    Ok(format!(
        "Generate {batch_size} fictional student personas. Each should include:\n\
         \n\
         - Age (18\u{2013}25)\n\
         - Gender\n\
         - A 3-sentence description of their academic personality, learning style, and motivation.\n\
         \n\
         Each persona should be on one line, like:\n\
         \n\
         {start_id:04}. 20, Female - Loves collaborative learning; often uses concept maps to organize her thoughts; tends to get anxious during exams.\n\
         \n\
         Only return the {batch_size} personas, nothing else."
    ))
}

fn line_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*(\d+)\.\s+(\d+)\s*,\s*(.+?)\s+[-\u{2013}\u{2014}]\s+(.+?)\s*$").expect("valid regex")
    })
}

/// Parse one model reply into personas, renumbering from `start_id`.
pub fn parse_persona_batch(
    text: &str,
    expected_count: usize,
    start_id: u32,
) -> Result<Vec<Persona>, PersonaError> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l))
        .collect();
    if lines.len() != expected_count {
        return Err(PersonaError::BatchCountMismatch {
            expected: expected_count,
            got: lines.len(),
        });
    }
    let mut out = Vec::with_capacity(lines.len());
    for (offset, (lineno, line)) in lines.into_iter().enumerate() {
        let caps = line_pattern()
            .captures(line)
            .ok_or_else(|| PersonaError::MalformedLine {
                line: lineno,
                text: line.to_string(),
            })?;
        let age: u32 = caps[2].parse().map_err(|_| PersonaError::MalformedLine {
            line: lineno,
            text: line.to_string(),
        })?;
        if !(MIN_AGE..=MAX_AGE).contains(&age) {
            return Err(PersonaError::AgeOutOfRange { line: lineno, age });
        }
        let description = caps[4].trim().to_string();
        let sentences = description
            .split(['.', ';', '!', '?'])
            .filter(|s| !s.trim().is_empty())
            .count();
        if sentences != 3 {
            log::warn!("persona line {lineno}: description has {sentences} sentence(s), expected 3");
        }
        out.push(Persona {
            id: start_id + offset as u32,
            age,
            gender: caps[3].trim().to_string(),
            description,
        });
    }
    Ok(out)
}

/// A failed parse that led to a re-prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryEvent {
    pub subject: String,
    pub attempt: u32,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub personas: Vec<Persona>,
    pub retries: Vec<RetryEvent>,
    pub requests: usize,
}

/// Generate `spec.n_total` personas in batches; batches run concurrently up
/// to the client's in-flight limit and are assembled in batch order.
pub fn generate_cohort(spec: &CohortSpec, client: &dyn ChatClient) -> Result<Cohort, PersonaError> {
    if spec.n_total == 0 || spec.batch_size == 0 {
        return Err(PersonaError::InvalidInput("n_total and batch_size must be positive".into()));
    }
    let batches = spec.batches();
    let results = map_bounded(&batches, client.max_in_flight(), |_, &(start_id, size)| {
        run_batch(spec, client, start_id, size)
    });

    let mut personas = Vec::with_capacity(spec.n_total);
    let mut retries = Vec::new();
    let mut requests = 0;
    for result in results {
        let (batch, batch_retries, batch_requests) = result?;
        personas.extend(batch);
        retries.extend(batch_retries);
        requests += batch_requests;
    }
    Ok(Cohort {
        personas,
        retries,
        requests,
    })
}

type BatchOutcome = (Vec<Persona>, Vec<RetryEvent>, usize);

fn run_batch(
    spec: &CohortSpec,
    client: &dyn ChatClient,
    start_id: u32,
    size: usize,
) -> Result<BatchOutcome, PersonaError> {
    let prompt = build_persona_prompt(size, start_id)?;
    let mut retries = Vec::new();
    let attempts = spec.reprompt_budget + 1;
    for attempt in 0..attempts {
        let req = ChatRequest::new(&spec.model_id, &prompt, spec.temperature, spec.max_tokens)
            .with_attempt(attempt);
        let resp = client.chat_complete(&req)?;
        match parse_persona_batch(&resp.text, size, start_id) {
            Ok(batch) => return Ok((batch, retries, attempt as usize + 1)),
            Err(e) => {
                log::warn!("persona batch {start_id:04}: attempt {} rejected: {e}", attempt + 1);
                retries.push(RetryEvent {
                    subject: format!("batch-{start_id:04}"),
                    attempt,
                    error: e.to_string(),
                });
            }
        }
    }
    Err(PersonaError::GenerationExhausted {
        start_id,
        attempts,
        last_error: retries.last().map(|r| r.error.clone()).unwrap_or_default(),
    })
}

/// Read a `personas.jsonl` document.
pub fn read_personas_jsonl(text: &str) -> Result<Vec<Persona>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

pub fn write_personas_jsonl(personas: &[Persona]) -> String {
    let mut out = String::new();
    for p in personas {
        out.push_str(&serde_json::to_string(p).expect("persona serializes"));
        out.push('\n');
    }
    out
}
