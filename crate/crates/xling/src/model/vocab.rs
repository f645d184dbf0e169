//! Word-level vocabulary over the closed pseudo-language corpus.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::switchboard::structural_tokens;

use super::ModelError;

pub const PAD_TOKEN: &str = "<pad>";
pub const SEP_TOKEN: &str = "<sep>";
pub const EOS_TOKEN: &str = "<eos>";

/// Token/id bijection. Id 0 is padding; the separator delimits prompt from
/// response region; end-of-sequence terminates generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn from_tokens(mut surface: BTreeSet<String>) -> Self {
        surface.remove(PAD_TOKEN);
        surface.remove(SEP_TOKEN);
        surface.remove(EOS_TOKEN);
        let mut tokens: Vec<String> =
            vec![PAD_TOKEN.into(), SEP_TOKEN.into(), EOS_TOKEN.into()];
        tokens.extend(surface);
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, ids }
    }

    /// Rebuilds the id map after deserialization.
    pub fn rehydrate(&mut self) {
        self.ids = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn pad_id(&self) -> u32 {
        0
    }

    pub fn sep_id(&self) -> u32 {
        1
    }

    pub fn eos_id(&self) -> u32 {
        2
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    pub fn encode(&self, tokens: &[String]) -> Result<Vec<u32>, ModelError> {
        tokens
            .iter()
            .map(|t| {
                self.id(t)
                    .ok_or_else(|| ModelError::UnknownToken(t.clone()))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or("<?>").to_string())
            .collect()
    }
}

/// Builds the vocabulary from every surface token of the dataset plus the
/// structural prompt tokens and language names. Ordering is deterministic:
/// specials first, then lexicographic.
pub fn build_vocab(datasets: &[&Dataset]) -> Result<Vocabulary, ModelError> {
    if datasets.iter().all(|d| d.is_empty()) {
        return Err(ModelError::EmptyDataset);
    }
    let mut surface = BTreeSet::new();
    for dataset in datasets {
        for sample in dataset.samples() {
            surface.extend(sample.query.tokens.iter().cloned());
            surface.extend(sample.response.tokens.iter().cloned());
        }
        for lang in &dataset.language_set.languages {
            surface.insert(lang.name.clone());
        }
    }
    surface.extend(structural_tokens().into_iter().map(|s| s.to_string()));
    Ok(Vocabulary::from_tokens(surface))
}
