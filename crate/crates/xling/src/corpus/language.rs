//! Pseudo-language definitions: bijective lexicons over the pivot vocabulary.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::templates::pivot_vocabulary;
use super::CorpusError;

/// Dense language identifier, 0..K-1. Language 0 is always the pivot.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct LangId(pub u8);

impl std::fmt::Display for LangId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "L{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResourceClass {
    High,
    Low,
}

/// Bijective token map from the pivot surface vocabulary to one language's
/// surface vocabulary. The pivot's lexicon is the identity map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    fwd: BTreeMap<String, String>,
    bwd: BTreeMap<String, String>,
}

impl Lexicon {
    pub fn identity(vocab: &[&str]) -> Self {
        let fwd: BTreeMap<String, String> =
            vocab.iter().map(|w| (w.to_string(), w.to_string())).collect();
        let bwd = fwd.clone();
        Lexicon { fwd, bwd }
    }

    pub fn suffixed(vocab: &[&str], suffix: &str) -> Self {
        let mut fwd = BTreeMap::new();
        let mut bwd = BTreeMap::new();
        for w in vocab {
            let mapped = format!("{w}_{suffix}");
            fwd.insert(w.to_string(), mapped.clone());
            bwd.insert(mapped, w.to_string());
        }
        Lexicon { fwd, bwd }
    }

    pub fn forward(&self, pivot_word: &str) -> Option<&str> {
        self.fwd.get(pivot_word).map(|s| s.as_str())
    }

    pub fn backward(&self, surface_word: &str) -> Option<&str> {
        self.bwd.get(surface_word).map(|s| s.as_str())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.fwd.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.fwd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fwd.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageSpec {
    pub id: LangId,
    /// Name token usable inside prompts, e.g. "english" or "lang_qzx".
    pub name: String,
    pub lexicon: Lexicon,
    pub resource_class: ResourceClass,
}

impl LanguageSpec {
    pub fn is_pivot(&self) -> bool {
        self.id.0 == 0
    }
}

/// Ordered set of K pseudo-languages. Language 0 is the identity pivot
/// (the English analogue); the first `high_count` ids form the
/// high-resource set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageSet {
    pub languages: Vec<LanguageSpec>,
    pub pivot_id: LangId,
    pub high_resource_ids: Vec<LangId>,
}

impl LanguageSet {
    pub fn k(&self) -> usize {
        self.languages.len()
    }

    pub fn language(&self, id: LangId) -> Option<&LanguageSpec> {
        self.languages.get(id.0 as usize)
    }

    pub fn pivot(&self) -> &LanguageSpec {
        &self.languages[self.pivot_id.0 as usize]
    }

    pub fn is_high_resource(&self, id: LangId) -> bool {
        self.high_resource_ids.contains(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = LangId> + '_ {
        self.languages.iter().map(|l| l.id)
    }
}

/// Tokens shared verbatim across all languages: numerals, arithmetic
/// operators and punctuation. They are never lexicon-mapped, so answer
/// extraction is language-independent.
pub fn is_shared_token(tok: &str) -> bool {
    if matches!(tok, "+" | "-" | "*" | "/" | "=" | "." | "," | "?" | ":" | "$") {
        return true;
    }
    parse_number(tok).is_some()
}

/// Parses an optionally signed decimal numeral with commas stripped.
pub fn parse_number(tok: &str) -> Option<f64> {
    let cleaned: String = tok.chars().filter(|c| *c != ',').collect();
    let body = cleaned.strip_prefix('-').or(cleaned.strip_prefix('+')).unwrap_or(&cleaned);
    if body.is_empty() || !body.chars().all(|c| c.is_ascii_digit() || c == '.') {
        return None;
    }
    if !body.chars().any(|c| c.is_ascii_digit()) {
        return None;
    }
    if body.chars().filter(|c| *c == '.').count() > 1 {
        return None;
    }
    cleaned.parse::<f64>().ok()
}

/// Builds K pseudo-languages with deterministic, seed-reproducible bijective
/// lexicons. Language 0 is the identity pivot; every other language maps each
/// pivot word `w` to a suffix-tagged variant unique to that language.
pub fn build_language_set(
    k: usize,
    seed: u64,
    high_count: usize,
) -> Result<LanguageSet, CorpusError> {
    if k < 2 {
        return Err(CorpusError::InvalidConfig(format!(
            "need at least 2 languages, got {k}"
        )));
    }
    if high_count == 0 || high_count >= k {
        return Err(CorpusError::InvalidConfig(format!(
            "high_count must be in 1..k, got {high_count} for k={k}"
        )));
    }
    if k > 64 {
        return Err(CorpusError::InvalidConfig(format!(
            "language count {k} exceeds supported maximum 64"
        )));
    }
    let vocab = pivot_vocabulary();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut suffixes: Vec<String> = Vec::new();
    let mut languages = Vec::with_capacity(k);
    for i in 0..k {
        let class = if i < high_count {
            ResourceClass::High
        } else {
            ResourceClass::Low
        };
        if i == 0 {
            languages.push(LanguageSpec {
                id: LangId(0),
                name: "english".to_string(),
                lexicon: Lexicon::identity(&vocab),
                resource_class: class,
            });
            continue;
        }
        let suffix = loop {
            let s: String = (0..3)
                .map(|_| (b'a' + rng.gen_range(0..26u8)) as char)
                .collect();
            if !suffixes.contains(&s) {
                break s;
            }
        };
        suffixes.push(suffix.clone());
        languages.push(LanguageSpec {
            id: LangId(i as u8),
            name: format!("lang_{suffix}"),
            lexicon: Lexicon::suffixed(&vocab, &suffix),
            resource_class: class,
        });
    }
    Ok(LanguageSet {
        languages,
        pivot_id: LangId(0),
        high_resource_ids: (0..high_count).map(|i| LangId(i as u8)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pivot_lexicon_is_identity() {
        let set = build_language_set(2, 7, 1).unwrap();
        for (a, b) in set.pivot().lexicon.entries() {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn lexicons_are_bijective() {
        let set = build_language_set(5, 42, 2).unwrap();
        for lang in &set.languages {
            for (pivot, surface) in lang.lexicon.entries() {
                assert_eq!(lang.lexicon.backward(surface), Some(pivot));
            }
            assert_eq!(lang.lexicon.len(), pivot_vocabulary().len());
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = build_language_set(4, 3, 1).unwrap();
        let b = build_language_set(4, 3, 1).unwrap();
        assert_eq!(a, b);
        let a_json = serde_json::to_vec(&a).unwrap();
        let b_json = serde_json::to_vec(&b).unwrap();
        assert_eq!(a_json, b_json);
    }

    #[test]
    fn surface_vocabularies_disjoint_across_languages() {
        let set = build_language_set(6, 11, 1).unwrap();
        for a in &set.languages {
            for b in &set.languages {
                if a.id == b.id {
                    continue;
                }
                for (_, surface) in a.lexicon.entries() {
                    assert!(b.lexicon.backward(surface).is_none() || a.is_pivot() || b.is_pivot(),
                        "surface form {surface} shared between {} and {}", a.id, b.id);
                }
            }
        }
    }

    #[test]
    fn eleven_language_setting() {
        let set = build_language_set(11, 1, 1).unwrap();
        assert_eq!(set.k(), 11);
        assert_eq!(set.high_resource_ids, vec![LangId(0)]);
        assert!(set.pivot().is_pivot());
    }

    #[test]
    fn too_few_languages_rejected() {
        assert!(build_language_set(1, 0, 1).is_err());
        assert!(build_language_set(3, 0, 3).is_err());
    }

    #[test]
    fn shared_tokens_cover_numbers_and_operators() {
        assert!(is_shared_token("600"));
        assert!(is_shared_token("3.5"));
        assert!(is_shared_token("-2"));
        assert!(is_shared_token("1,000"));
        assert!(is_shared_token("*"));
        assert!(is_shared_token("."));
        assert!(!is_shared_token("roses"));
        assert!(!is_shared_token("roses_abc"));
    }
}
