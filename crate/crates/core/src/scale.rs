//! The 28-item Academic Motivation Scale: item bank, response prompt, reply
//! parsing, administration and subscale scoring.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::persona::{Persona, RetryEvent};
use crate::transport::{map_bounded, ChatClient, ChatRequest, TransportError};

pub const N_ITEMS: usize = 28;
pub const SCALE_POINTS: u8 = 7;

/// The seven AMS subscales in reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subscale {
    #[serde(rename = "IMTK")]
    ToKnow,
    #[serde(rename = "IMTA")]
    TowardAccomplishment,
    #[serde(rename = "IMES")]
    ExperienceStimulation,
    #[serde(rename = "EMID")]
    Identified,
    #[serde(rename = "EMIN")]
    Introjected,
    #[serde(rename = "EMEX")]
    External,
    #[serde(rename = "AMOT")]
    Amotivation,
}

impl Subscale {
    pub const ALL: [Subscale; 7] = [
        Subscale::ToKnow,
        Subscale::TowardAccomplishment,
        Subscale::ExperienceStimulation,
        Subscale::Identified,
        Subscale::Introjected,
        Subscale::External,
        Subscale::Amotivation,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Subscale::ToKnow => "IMTK",
            Subscale::TowardAccomplishment => "IMTA",
            Subscale::ExperienceStimulation => "IMES",
            Subscale::Identified => "EMID",
            Subscale::Introjected => "EMIN",
            Subscale::External => "EMEX",
            Subscale::Amotivation => "AMOT",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Subscale::ToKnow => "Intrinsic Motivation - To Know",
            Subscale::TowardAccomplishment => "Intrinsic Motivation - Toward Accomplishment",
            Subscale::ExperienceStimulation => "Intrinsic Motivation - Experience Stimulation",
            Subscale::Identified => "Extrinsic Motivation - Identified Regulation",
            Subscale::Introjected => "Extrinsic Motivation - Introjected Regulation",
            Subscale::External => "Extrinsic Motivation - External Regulation",
            Subscale::Amotivation => "Amotivation",
        }
    }

    pub fn index(self) -> usize {
        Subscale::ALL.iter().position(|&s| s == self).expect("listed")
    }

    /// The four 1-based item numbers of this subscale.
    pub fn items(self) -> [usize; 4] {
        match self {
            Subscale::ToKnow => [2, 9, 16, 23],
            Subscale::TowardAccomplishment => [6, 13, 20, 27],
            Subscale::ExperienceStimulation => [4, 11, 18, 25],
            Subscale::Identified => [3, 10, 17, 24],
            Subscale::Introjected => [7, 14, 21, 28],
            Subscale::External => [1, 8, 15, 22],
            Subscale::Amotivation => [5, 12, 19, 26],
        }
    }

    pub fn of_item(item: usize) -> Option<Subscale> {
        Subscale::ALL.into_iter().find(|s| s.items().contains(&item))
    }
}

impl fmt::Display for Subscale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Subscale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Subscale::ALL
            .into_iter()
            .find(|x| x.code() == s)
            .ok_or_else(|| format!("unknown subscale '{s}'"))
    }
}

#[derive(Debug, Error)]
pub enum ScaleError {
    #[error("item bank invalid: {0}")]
    BankInvalid(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("expected {N_ITEMS} values, got {got}")]
    LengthMismatch { got: usize },
    #[error("value {value} at position {position} outside 1-{SCALE_POINTS}")]
    ValueOutOfRange { position: usize, value: i64 },
    #[error("token '{token}' at position {position} is not an integer")]
    NotAnInteger { position: usize, token: String },
    #[error("duplicate persona id {0}")]
    DuplicatePersona(u32),
    #[error("responses file: {0}")]
    Format(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub index: usize,
    pub text: String,
    pub subscale: Subscale,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemBank {
    pub instrument: String,
    pub stem: String,
    pub scale_points: u8,
    pub anchors: (String, String),
    pub items: Vec<Item>,
}

const CANONICAL_BANK: &str = include_str!("../data/ams_items.json");

impl ItemBank {
    /// The bundled college-version item texts.
    pub fn canonical() -> Self {
        Self::from_json(CANONICAL_BANK).expect("bundled item bank is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScaleError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| ScaleError::BankInvalid(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ScaleError> {
        let mut bank: ItemBank =
            serde_json::from_str(text).map_err(|e| ScaleError::BankInvalid(e.to_string()))?;
        bank.items.sort_by_key(|i| i.index);
        bank.validate()?;
        Ok(bank)
    }

    pub fn validate(&self) -> Result<(), ScaleError> {
        if self.items.len() != N_ITEMS {
            return Err(ScaleError::BankInvalid(format!(
                "{} items, expected {N_ITEMS}",
                self.items.len()
            )));
        }
        if self.scale_points != SCALE_POINTS {
            return Err(ScaleError::BankInvalid(format!(
                "{}-point scale, expected {SCALE_POINTS}",
                self.scale_points
            )));
        }
        let mut seen = HashSet::new();
        for item in &self.items {
            if !(1..=N_ITEMS).contains(&item.index) || !seen.insert(item.index) {
                return Err(ScaleError::BankInvalid(format!("bad or duplicate index {}", item.index)));
            }
            if item.text.trim().is_empty() {
                return Err(ScaleError::BankInvalid(format!("item {} has empty text", item.index)));
            }
            let expected = Subscale::of_item(item.index).expect("index in range");
            if item.subscale != expected {
                return Err(ScaleError::BankInvalid(format!(
                    "item {} assigned to {}, expected {}",
                    item.index, item.subscale, expected
                )));
            }
        }
        Ok(())
    }

    pub fn items_of(&self, subscale: Subscale) -> Vec<&Item> {
        self.items.iter().filter(|i| i.subscale == subscale).collect()
    }
}

/// AMS response prompt for one persona.
pub fn build_response_prompt(persona: &Persona, bank: &ItemBank) -> Result<String, ScaleError> {
    if persona.description.trim().is_empty() {
        return Err(ScaleError::InvalidInput(format!(
            "persona {} has an empty description",
            persona.display_id()
        )));
    }
    let items = bank
        .items
        .iter()
        .map(|i| format!("{}. {}", i.index, i.text))
        .collect::<Vec<_>>()
        .join("\n");
    let (low, high) = &bank.anchors;
    Ok(format!(
        "Imagine the following student: {persona},\n\
         \n\
         This student is now responding to the Academic Motivation Scale (AMS).\n\
         \n\
         There are {N_ITEMS} items, each rated from 1 ({low}) to {SCALE_POINTS} ({high}).\n\
         \n\
         {items},\n\
         \n\
         Please return exactly {N_ITEMS} integers separated only by commas. No explanation, no labels. Just the numbers."
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseVector {
    pub persona_id: u32,
    pub values: Vec<u8>,
}

impl ResponseVector {
    pub fn new(persona_id: u32, values: Vec<u8>) -> Result<Self, ScaleError> {
        if values.len() != N_ITEMS {
            return Err(ScaleError::LengthMismatch { got: values.len() });
        }
        if let Some((i, &v)) = values.iter().enumerate().find(|(_, &v)| !(1..=SCALE_POINTS).contains(&v)) {
            return Err(ScaleError::ValueOutOfRange {
                position: i + 1,
                value: i64::from(v),
            });
        }
        Ok(Self { persona_id, values })
    }

    /// Value of 1-based item `item`.
    pub fn item(&self, item: usize) -> u8 {
        self.values[item - 1]
    }
}

/// Parse a reply of 28 comma-separated integers. Whitespace around the
/// reply and around each value is accepted; anything else is rejected.
pub fn parse_response_line(text: &str, persona_id: u32) -> Result<ResponseVector, ScaleError> {
    let tokens: Vec<&str> = text.trim().split(',').map(str::trim).collect();
    let mut values = Vec::with_capacity(tokens.len());
    for (i, tok) in tokens.iter().enumerate() {
        let ok = !tok.is_empty() && tok.bytes().enumerate().all(|(j, b)| b.is_ascii_digit() || (j == 0 && b == b'-'));
        let value: i64 = if ok { tok.parse().ok() } else { None }.ok_or_else(|| ScaleError::NotAnInteger {
            position: i + 1,
            token: tok.to_string(),
        })?;
        values.push(value);
    }
    if values.len() != N_ITEMS {
        return Err(ScaleError::LengthMismatch { got: values.len() });
    }
    if let Some((i, &v)) = values
        .iter()
        .enumerate()
        .find(|(_, &v)| !(1..=i64::from(SCALE_POINTS)).contains(&v))
    {
        return Err(ScaleError::ValueOutOfRange { position: i + 1, value: v });
    }
    Ok(ResponseVector {
        persona_id,
        values: values.into_iter().map(|v| v as u8).collect(),
    })
}

/// Respondents × 28 item matrix, rows ordered by persona id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ResponseMatrix {
    rows: Vec<ResponseVector>,
}

impl ResponseMatrix {
    pub fn new(mut rows: Vec<ResponseVector>) -> Result<Self, ScaleError> {
        rows.sort_by_key(|r| r.persona_id);
        for pair in rows.windows(2) {
            if pair[0].persona_id == pair[1].persona_id {
                return Err(ScaleError::DuplicatePersona(pair[0].persona_id));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[ResponseVector] {
        &self.rows
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn persona_ids(&self) -> Vec<u32> {
        self.rows.iter().map(|r| r.persona_id).collect()
    }

    /// Values as reals, n × 28.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows.len(), N_ITEMS, |i, j| f64::from(self.rows[i].values[j]))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("persona_id");
        for q in 1..=N_ITEMS {
            out.push_str(&format!(",Q{q}"));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.persona_id.to_string());
            for v in &row.values {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, ScaleError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| ScaleError::Format("empty file".into()))?;
        let expected: Vec<String> = std::iter::once("persona_id".to_string())
            .chain((1..=N_ITEMS).map(|q| format!("Q{q}")))
            .collect();
        if header.split(',').map(str::trim).ne(expected.iter().map(String::as_str)) {
            return Err(ScaleError::Format(format!("unexpected header '{header}'")));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let (id, rest) = line
                .split_once(',')
                .ok_or_else(|| ScaleError::Format(format!("row {}: no values", i + 1)))?;
            let id: u32 = id
                .trim()
                .parse()
                .map_err(|_| ScaleError::Format(format!("row {}: bad persona id '{id}'", i + 1)))?;
            rows.push(parse_response_line(rest, id)?);
        }
        Self::new(rows)
    }
}

/// Seven subscale means for one respondent, in [`Subscale::ALL`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubscaleScores {
    pub persona_id: u32,
    pub scores: [f64; 7],
}

impl SubscaleScores {
    pub fn get(&self, s: Subscale) -> f64 {
        self.scores[s.index()]
    }
}

pub fn subscale_scores(rv: &ResponseVector, bank: &ItemBank) -> SubscaleScores {
    let mut scores = [0.0; 7];
    for s in Subscale::ALL {
        let items = bank.items_of(s);
        let total: f64 = items.iter().map(|i| f64::from(rv.item(i.index))).sum();
        scores[s.index()] = total / items.len() as f64;
    }
    SubscaleScores {
        persona_id: rv.persona_id,
        scores,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdministerOptions {
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub reprompt_budget: u32,
}

impl Default for AdministerOptions {
    fn default() -> Self {
        Self {
            model_id: "gpt-4o".into(),
            temperature: 0.0,
            max_tokens: 256,
            reprompt_budget: 3,
        }
    }
}

/// A persona whose replies never parsed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dropout {
    pub persona_id: u32,
    pub attempts: u32,
    pub last_error: String,
    pub last_reply: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Administration {
    pub matrix: ResponseMatrix,
    pub dropouts: Vec<Dropout>,
    pub retries: Vec<RetryEvent>,
}

/// Ask every persona to complete the scale. Unparseable replies are
/// re-prompted up to the budget, after which the persona is dropped.
pub fn administer(
    cohort: &[Persona],
    bank: &ItemBank,
    client: &dyn ChatClient,
    opts: &AdministerOptions,
) -> Result<Administration, ScaleError> {
    if cohort.is_empty() {
        return Err(ScaleError::InvalidInput("empty cohort".into()));
    }
    let outcomes = map_bounded(cohort, client.max_in_flight(), |_, persona| {
        administer_one(persona, bank, client, opts)
    });
    let mut rows = Vec::new();
    let mut dropouts = Vec::new();
    let mut retries = Vec::new();
    for outcome in outcomes {
        let (row, dropout, r) = outcome?;
        rows.extend(row);
        dropouts.extend(dropout);
        retries.extend(r);
    }
    Ok(Administration {
        matrix: ResponseMatrix::new(rows)?,
        dropouts,
        retries,
    })
}

type PersonaOutcome = (Option<ResponseVector>, Option<Dropout>, Vec<RetryEvent>);

fn administer_one(
    persona: &Persona,
    bank: &ItemBank,
    client: &dyn ChatClient,
    opts: &AdministerOptions,
) -> Result<PersonaOutcome, ScaleError> {
    let prompt = build_response_prompt(persona, bank)?;
    let mut retries = Vec::new();
    let attempts = opts.reprompt_budget + 1;
    let mut last_reply = String::new();
    for attempt in 0..attempts {
        let req = ChatRequest::new(&opts.model_id, &prompt, opts.temperature, opts.max_tokens).with_attempt(attempt);
        let resp = client.chat_complete(&req)?;
        match parse_response_line(&resp.text, persona.id) {
            Ok(rv) => return Ok((Some(rv), None, retries)),
            Err(e) => {
                log::warn!("persona {}: reply rejected: {e}", persona.display_id());
                retries.push(RetryEvent {
                    subject: persona.display_id(),
                    attempt,
                    error: e.to_string(),
                });
                last_reply = resp.text;
            }
        }
    }
    let dropout = Dropout {
        persona_id: persona.id,
        attempts,
        last_error: retries.last().map(|r| r.error.clone()).unwrap_or_default(),
        last_reply,
    };
    Ok((None, Some(dropout), retries))
}
