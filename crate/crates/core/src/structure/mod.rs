//! Two-stage structuring: free text to [`StructuredReport`]s through a
//! completion provider, then cross-study grouping into [`EntityGroup`]s.
//!
//! Both stages share one repair loop. When the provider's output fails to
//! parse or validate, the prompt is re-sent with the validator's messages
//! and the rejected output appended, up to `max_repairs` times.
//!
//! [`EntityGroup`]: crate::model::EntityGroup

mod bm25;
mod group;
mod pipeline;
mod provider;
mod single;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bm25::{tokenize, Example, FewShotIndex, DEFAULT_B, DEFAULT_K1};
pub use group::{
    grouping_lines, grouping_payload, linearize_sequence_for_grouping, parse_grouping, structure_sequence,
    GroupingError, GroupingLine, SEQUENTIAL_TEMPLATE,
};
pub use pipeline::{reference_grouping, reference_inputs, PatientRun, Pipeline};
pub use provider::{
    prompt_hash, CompletionProvider, DecodingParams, HttpCompletionProvider, RateLimited, RateLimiter,
    ScriptedProvider, ENV_LLM_MODEL, ENV_LLM_URL,
};
pub use single::{
    build_request, build_single_prompt, parse_single_output, relation_list_to_report, report_to_relation_list,
    structure_single, EntityRecord, PromptOptions, RelationList, RelationRecord, SectionRequest, SinglePrompt,
    StructuringRequest, SINGLE_TEMPLATE,
};

use crate::model::{ModelError, Section};

/// A report awaiting structuring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportInput {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patient_id: Option<String>,
    pub study_id: String,
    pub study_day: u32,
    pub sections: BTreeMap<Section, String>,
}

/// Section texts joined in schema order, one per line.
pub fn report_text(sections: &BTreeMap<Section, String>) -> String {
    sections
        .values()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Why one provider response was rejected.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationIssue {
    #[error("output is not valid JSON: {0}")]
    MalformedOutput(String),
    #[error("output does not follow the relation format: {0}")]
    Conversion(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grouping(#[from] GroupingError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub prompt_hash: String,
    pub user: String,
    pub response: String,
}

/// Every exchange of one structuring call. The system prompt is constant
/// within a call and appears only through the hash.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub provider: String,
    pub turns: Vec<Turn>,
}

#[derive(Debug, Error)]
pub enum StructureError {
    #[error("report `{study_id}` has no text")]
    EmptyReport { study_id: String },
    #[error("completion provider `{provider}` unavailable: {message}")]
    ProviderUnavailable { provider: String, message: String },
    #[error("no valid output after {attempts} attempts: {last_error}\nlast output:\n{raw_output}")]
    ValidationExhausted {
        attempts: usize,
        last_error: Box<ValidationIssue>,
        raw_output: String,
        transcript: Box<Transcript>,
    },
    #[error("transcript {path}: {message}")]
    Transcript { path: String, message: String },
    #[error("sequence input: {0}")]
    InvalidInput(String),
}

impl StructureError {
    pub fn is_provider_error(&self) -> bool {
        matches!(self, StructureError::ProviderUnavailable { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepairOptions {
    pub max_repairs: u32,
    pub decoding: DecodingParams,
}

impl Default for RepairOptions {
    fn default() -> Self {
        RepairOptions {
            max_repairs: 2,
            decoding: DecodingParams::default(),
        }
    }
}

/// A validated result with the exchanges that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Structured<T> {
    pub value: T,
    pub repairs: u32,
    pub transcript: Transcript,
}

/// Prompt for a repair attempt.
pub fn repair_prompt(user: &str, issue: &ValidationIssue, raw: &str) -> String {
    format!(
        "{user}\n\nYour previous output was rejected by the validator:\n- {issue}\n\nPrevious output:\n{raw}\n\nReturn a corrected, complete JSON object only."
    )
}

/// The JSON object in a response, ignoring any text or code fences around
/// it.
pub(crate) fn extract_json(raw: &str) -> Result<serde_json::Value, ValidationIssue> {
    let start = raw.find('{');
    let end = raw.rfind('}');
    let body = match (start, end) {
        (Some(s), Some(e)) if s < e => &raw[s..=e],
        _ => return Err(ValidationIssue::MalformedOutput("no JSON object found".into())),
    };
    serde_json::from_str(body).map_err(|e| ValidationIssue::MalformedOutput(e.to_string()))
}

/// Calls the provider until `parse` accepts a response, re-prompting with
/// the rejection reason. Makes at most `max_repairs + 1` calls.
pub(crate) fn run_with_repairs<T>(
    provider: &dyn CompletionProvider,
    system: &str,
    user: &str,
    opts: &RepairOptions,
    parse: impl Fn(&str) -> Result<T, ValidationIssue>,
) -> Result<Structured<T>, StructureError> {
    let mut transcript = Transcript {
        provider: provider.name().to_string(),
        turns: Vec::new(),
    };
    let mut prompt = user.to_string();
    let mut attempt = 0;
    loop {
        let raw = provider.complete(system, &prompt, &opts.decoding)?;
        transcript.turns.push(Turn {
            prompt_hash: prompt_hash(system, &prompt),
            user: prompt.clone(),
            response: raw.clone(),
        });
        match parse(&raw) {
            Ok(value) => {
                return Ok(Structured {
                    value,
                    repairs: attempt,
                    transcript,
                })
            }
            Err(issue) if attempt < opts.max_repairs => {
                log::warn!("{}: rejected output ({issue}); repair {}", provider.name(), attempt + 1);
                prompt = repair_prompt(user, &issue, &raw);
                attempt += 1;
            }
            Err(issue) => {
                return Err(StructureError::ValidationExhausted {
                    attempts: transcript.turns.len(),
                    last_error: Box::new(issue),
                    raw_output: raw,
                    transcript: Box::new(transcript),
                })
            }
        }
    }
}
