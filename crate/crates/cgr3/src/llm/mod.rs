//! Language-model interface: prompt rendering, structured reply parsing,
//! retry policy and two backends (HTTP chat-completion, deterministic
//! scripted oracle).
//!
//! Parse-failure fallback policy lives with the callers: the KGC pipeline
//! falls back to the embedding order, KGQA treats failures as "insufficient
//! information". This module only reports structured errors.

mod backend;
mod parse;
mod templates;

pub use backend::{
    ChatBackend, HttpBackend, HttpConfig, InflightGate, ScriptAction, ScriptRule, ScriptedBackend,
    TokenBucket,
};
pub use parse::{
    parse_answers, parse_final_order, parse_selection, parse_sufficiency, split_items,
    SufficiencyVerdict,
};
pub use templates::{render, PromptBundle, TemplateId};

use thiserror::Error;

#[derive(Error, Debug)]
pub enum LlmError {
    #[error("missing template slot: {0}")]
    MissingSlot(String),
    #[error("transport failure: {message}")]
    Transport { message: String },
    #[error("no scripted reply matches the prompt (prefix: {prompt_prefix:?})")]
    NoScriptedReply { prompt_prefix: String },
    #[error("could not parse LLM reply after {attempts} attempt(s): {reason}; raw: {raw:?}")]
    ParseFailure {
        attempts: usize,
        reason: String,
        raw: String,
    },
}

/// What the caller expects to parse out of a reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseKind {
    /// `The possible answers: [a, b, c]`
    Answers,
    /// `The final order: [best, ..., worst]`
    FinalOrder,
    /// `The selection: [1, 3]` (1-based indices)
    Selection,
    /// `Sufficient: yes` + answers, or `Sufficient: no`
    Sufficiency,
}

/// A structurally parsed reply, original text retained.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedReply {
    pub raw: String,
    pub value: ParsedValue,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParsedValue {
    Answers(Vec<String>),
    FinalOrder(Vec<String>),
    Selection(Vec<usize>),
    Sufficiency(SufficiencyVerdict),
}

/// Sends the bundle to the backend, parsing per its expected kind and
/// retrying up to `retries` extra times on transport or parse failure.
pub fn complete(
    backend: &dyn ChatBackend,
    bundle: &PromptBundle,
    retries: usize,
) -> Result<ParsedReply, LlmError> {
    let attempts = retries + 1;
    let mut last_err = None;
    for _ in 0..attempts {
        let raw = match backend.complete_raw(&bundle.text) {
            Ok(raw) => raw,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        let vocab = bundle.candidates.as_deref();
        let parsed = match bundle.expected {
            ParseKind::Answers => parse_answers(&raw, vocab).map(ParsedValue::Answers),
            ParseKind::FinalOrder => parse_final_order(&raw, vocab).map(ParsedValue::FinalOrder),
            ParseKind::Selection => parse_selection(&raw).map(ParsedValue::Selection),
            ParseKind::Sufficiency => parse_sufficiency(&raw, vocab).map(ParsedValue::Sufficiency),
        };
        match parsed {
            Ok(value) => return Ok(ParsedReply { raw, value }),
            Err(reason) => {
                last_err = Some(LlmError::ParseFailure {
                    attempts,
                    reason,
                    raw,
                });
            }
        }
    }
    Err(last_err.expect("at least one attempt"))
}
