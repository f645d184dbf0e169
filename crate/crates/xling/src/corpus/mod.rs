//! Parallel multilingual corpus construction.
//!
//! Pseudo-languages are bijective token relabelings of a pivot vocabulary,
//! so every query has an exact gold translation and exact span alignment in
//! every language. Responses are always written in the pivot language.

mod dataset;
mod language;
mod problem;
mod templates;

pub use dataset::{
    build_instruct_dataset, ingest_external, Dataset, ExternalFormat, InstructSample, Split,
};
pub use language::{
    build_language_set, is_shared_token, LangId, LanguageSet, LanguageSpec, ResourceClass,
};
pub use problem::{generate_problems, CotStep, Op, Problem, SlotValue};
pub use templates::{render, render_response, TEMPLATE_COUNT};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("corrupt problem: unknown template id {0}")]
    UnknownTemplate(u8),
    #[error("vocabulary mismatch: token {token:?} not in lexicon of language {language}")]
    VocabularyMismatch { token: String, language: u8 },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown language tag {0:?}")]
    UnknownLanguageTag(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One contiguous token range of a rendering, tagged with the identity of the
/// template phrase it realizes. Spans with equal `unit_id` across two
/// renderings of the same problem are mutual translations.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SpanAlignment {
    pub start: usize,
    pub end: usize,
    pub unit_id: u32,
}

/// A token sequence in one language with span alignment back to the template.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RenderedText {
    pub language_id: LangId,
    pub tokens: Vec<String>,
    pub spans: Vec<SpanAlignment>,
}

impl RenderedText {
    /// Spanless rendering for externally ingested text.
    pub fn unaligned(language_id: LangId, tokens: Vec<String>) -> Self {
        RenderedText {
            language_id,
            tokens,
            spans: Vec::new(),
        }
    }

    pub fn has_spans(&self) -> bool {
        !self.spans.is_empty()
    }
}

/// Exact gold translation via inverse-then-forward lexicon composition.
/// Shared tokens (numbers, operators, punctuation) pass through unchanged.
pub fn translate(
    text: &RenderedText,
    target: &LanguageSpec,
    language_set: &LanguageSet,
) -> Result<RenderedText, CorpusError> {
    let source = language_set.language(text.language_id).ok_or_else(|| {
        CorpusError::InvalidConfig(format!("language {} not in set", text.language_id.0))
    })?;
    let mut tokens = Vec::with_capacity(text.tokens.len());
    for tok in &text.tokens {
        if is_shared_token(tok) {
            tokens.push(tok.clone());
            continue;
        }
        let pivot_form = source.lexicon.backward(tok).ok_or_else(|| {
            CorpusError::VocabularyMismatch {
                token: tok.clone(),
                language: source.id.0,
            }
        })?;
        let mapped = target.lexicon.forward(pivot_form).ok_or_else(|| {
            CorpusError::VocabularyMismatch {
                token: pivot_form.to_string(),
                language: target.id.0,
            }
        })?;
        tokens.push(mapped.to_string());
    }
    Ok(RenderedText {
        language_id: target.id,
        tokens,
        spans: text.spans.clone(),
    })
}
