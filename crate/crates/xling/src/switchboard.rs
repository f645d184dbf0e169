//! Code-switched demonstration contexts and prompt assembly.
//!
//! Code-switching replaces aligned spans of a query in one language with
//! their counterparts from another language. The realized source-token
//! fraction alpha is a measured outcome; the sampling law is two-knob:
//! `mix_fraction` sets the expected share of spans eligible to flip and
//! `replace_prob` flips each eligible span independently.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{is_shared_token, Dataset, InstructSample, LangId, LanguageSet, RenderedText};

#[derive(Debug, Error)]
pub enum SwitchError {
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("missing sample for language {language} problem {problem_id}")]
    MissingSample { language: u8, problem_id: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CodeSwitchMode {
    /// Start from the source rendering, flip spans to the target language.
    /// Expected source fraction is 1 - replace_prob * mix_fraction.
    SourceWithTargetTokens,
    /// Start from the target rendering, flip spans back to the source.
    /// Expected source fraction is replace_prob * mix_fraction.
    TargetWithSourceTokens,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CodeSwitchConfig {
    pub replace_prob: f64,
    pub mix_fraction: f64,
    pub mode: CodeSwitchMode,
    pub seed: u64,
}

impl Default for CodeSwitchConfig {
    fn default() -> Self {
        CodeSwitchConfig {
            replace_prob: 0.8,
            mix_fraction: 0.5,
            mode: CodeSwitchMode::SourceWithTargetTokens,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenOrigin {
    Source,
    Target,
    /// Numbers, operators and punctuation: identical in both languages and
    /// excluded from alpha.
    Shared,
}

#[derive(Debug, Clone)]
pub struct CodeSwitchedText {
    pub tokens: Vec<String>,
    pub origins: Vec<TokenOrigin>,
    pub realized_alpha: f64,
    pub base_language_id: LangId,
    pub other_language_id: LangId,
}

/// Splitmix64; used to derive per-sample seeds so parallel assembly is
/// order-independent.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9e3779b97f4a7c15) ^ b.wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Produces a code-switched sequence from two gold-parallel renderings.
pub fn code_switch(
    src: &RenderedText,
    tgt: &RenderedText,
    config: &CodeSwitchConfig,
) -> Result<CodeSwitchedText, SwitchError> {
    if src.language_id == tgt.language_id {
        return Err(SwitchError::Alignment(
            "source and target must be different languages".into(),
        ));
    }
    if !src.has_spans() || !tgt.has_spans() {
        return Err(SwitchError::Unsupported(
            "code-switching requires span alignments (absent on external data)".into(),
        ));
    }
    if src.spans != tgt.spans {
        return Err(SwitchError::Alignment(format!(
            "span sets differ: {} vs {} spans",
            src.spans.len(),
            tgt.spans.len()
        )));
    }
    let (base, other, base_origin, other_origin) = match config.mode {
        CodeSwitchMode::SourceWithTargetTokens => {
            (src, tgt, TokenOrigin::Source, TokenOrigin::Target)
        }
        CodeSwitchMode::TargetWithSourceTokens => {
            (tgt, src, TokenOrigin::Target, TokenOrigin::Source)
        }
    };
    let flip_prob = (config.replace_prob * config.mix_fraction).clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tokens = Vec::with_capacity(base.tokens.len());
    let mut origins = Vec::with_capacity(base.tokens.len());
    for span in &base.spans {
        let flip = flip_prob > 0.0 && rng.gen_bool(flip_prob);
        let (take, origin) = if flip {
            (other, other_origin)
        } else {
            (base, base_origin)
        };
        for tok in &take.tokens[span.start..span.end] {
            origins.push(if is_shared_token(tok) {
                TokenOrigin::Shared
            } else {
                origin
            });
            tokens.push(tok.clone());
        }
    }
    let realized_alpha = alpha_from_origins(&origins);
    Ok(CodeSwitchedText {
        tokens,
        origins,
        realized_alpha,
        base_language_id: base.language_id,
        other_language_id: other.language_id,
    })
}

fn alpha_from_origins(origins: &[TokenOrigin]) -> f64 {
    let source = origins.iter().filter(|o| **o == TokenOrigin::Source).count();
    let countable = origins.iter().filter(|o| **o != TokenOrigin::Shared).count();
    if countable == 0 {
        return 0.0;
    }
    source as f64 / countable as f64
}

/// Recounts the source-token fraction; shared tokens excluded from both
/// numerator and denominator.
pub fn source_fraction(cs: &CodeSwitchedText) -> f64 {
    cs.realized_alpha
}

// ---------------------------------------------------------------------------
// Prompt styles
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptStyle {
    /// Demo questions rendered in the pivot language.
    EnContext,
    /// Demo questions rendered in the query's language.
    NativeContext,
    /// Demo questions code-switched between pivot and query language.
    CodeSwitchContext,
}

impl PromptStyle {
    pub fn label(self) -> &'static str {
        match self {
            PromptStyle::EnContext => "en-context",
            PromptStyle::NativeContext => "native-context",
            PromptStyle::CodeSwitchContext => "codeswitch-context",
        }
    }
}

pub const QUESTION_MARKER: &str = "Question:";
pub const ANSWER_MARKER: &str = "Answer:";

/// Structural prompt tokens that must be present in every vocabulary.
pub fn structural_tokens() -> Vec<&'static str> {
    vec![
        QUESTION_MARKER,
        ANSWER_MARKER,
        "lets",
        "think",
        "step",
        "by",
        "in",
        "english",
        "the",
        "question",
        "and",
        "then",
        ".",
    ]
}

/// Instruction suffix. English-analogue queries get the plain step-by-step
/// form; other queries get the translate-then-think form with `think_lang`
/// (the English-analogue name at inference time).
pub fn instruction_tokens(query_is_pivot: bool, think_lang: &str) -> Vec<String> {
    if query_is_pivot {
        ["lets", "think", "step", "by", "step", "in", "english", "."]
            .iter()
            .map(|s| s.to_string())
            .collect()
    } else {
        let mut toks: Vec<String> = ["lets", "think", "the", "question", "in"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        toks.push(think_lang.to_string());
        toks.extend(
            ["and", "then", "think", "step", "by", "step", "in", "english", "."]
                .iter()
                .map(|s| s.to_string()),
        );
        toks
    }
}

/// Renders the demonstration pairs of one sample according to the prompt
/// style. Demo responses are always the pivot-language gold response.
pub fn assemble_context(
    dataset: &Dataset,
    sample: &InstructSample,
    style: PromptStyle,
    cs_config: &CodeSwitchConfig,
) -> Result<Vec<(Vec<String>, Vec<String>)>, SwitchError> {
    let set = &dataset.language_set;
    let pivot_id = set.pivot_id;
    let query_lang = sample.query.language_id;
    let mut demos = Vec::with_capacity(sample.demo_ids.len());
    for (di, &demo_id) in sample.demo_ids.iter().enumerate() {
        let pivot_sample = dataset.lookup(pivot_id, demo_id).ok_or(
            SwitchError::MissingSample { language: pivot_id.0, problem_id: demo_id },
        )?;
        let response = pivot_sample.response.tokens.clone();
        let question = match style {
            PromptStyle::EnContext => pivot_sample.query.tokens.clone(),
            PromptStyle::NativeContext => {
                let native = dataset.lookup(query_lang, demo_id).ok_or(
                    SwitchError::MissingSample { language: query_lang.0, problem_id: demo_id },
                )?;
                native.query.tokens.clone()
            }
            PromptStyle::CodeSwitchContext => {
                // English is the source side; the query's language is the
                // target. Pivot-language queries draw a target uniformly
                // from the other K-1 languages.
                let seed = mix_seed(
                    cs_config.seed,
                    (sample.problem_id as u64) << 20 | (query_lang.0 as u64) << 8 | di as u64,
                    demo_id as u64,
                );
                let target_lang = if query_lang == pivot_id {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x7a, 0));
                    let others: Vec<LangId> =
                        set.ids().filter(|id| *id != pivot_id).collect();
                    others[rng.gen_range(0..others.len())]
                } else {
                    query_lang
                };
                let tgt_sample = dataset.lookup(target_lang, demo_id).ok_or(
                    SwitchError::MissingSample { language: target_lang.0, problem_id: demo_id },
                )?;
                if !pivot_sample.query.has_spans() || !tgt_sample.query.has_spans() {
                    return Err(SwitchError::Unsupported(
                        "code-switch context requested on spanless external data".into(),
                    ));
                }
                let cfg = CodeSwitchConfig { seed, ..*cs_config };
                code_switch(&pivot_sample.query, &tgt_sample.query, &cfg)?.tokens
            }
        };
        demos.push((question, response));
    }
    Ok(demos)
}

/// Concatenates demos, the query and the reasoning instruction into one
/// prompt token sequence. The separator between prompt and response region
/// is a reserved vocabulary token appended at tokenization time.
pub fn build_prompt(
    demos: &[(Vec<String>, Vec<String>)],
    query: &RenderedText,
    language_set: &LanguageSet,
    think_lang_override: Option<&str>,
) -> Vec<String> {
    let mut prompt = Vec::new();
    for (q, a) in demos {
        prompt.push(QUESTION_MARKER.to_string());
        prompt.extend(q.iter().cloned());
        prompt.push(ANSWER_MARKER.to_string());
        prompt.extend(a.iter().cloned());
    }
    prompt.push(QUESTION_MARKER.to_string());
    prompt.extend(query.tokens.iter().cloned());
    let is_pivot = query.language_id == language_set.pivot_id;
    let think_lang = think_lang_override.unwrap_or("english");
    prompt.extend(instruction_tokens(is_pivot && think_lang_override.is_none(), think_lang));
    prompt
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{
        build_instruct_dataset, build_language_set, generate_problems, render, Split,
    };

    fn fixtures() -> (crate::corpus::LanguageSet, Vec<crate::corpus::Problem>) {
        let set = build_language_set(4, 11, 1).unwrap();
        let problems = generate_problems(30, 21, 10_000).unwrap();
        (set, problems)
    }

    #[test]
    fn no_replacement_returns_source() {
        let (set, problems) = fixtures();
        let src = render(&problems[0], set.pivot()).unwrap();
        let tgt = render(&problems[0], set.language(LangId(2)).unwrap()).unwrap();
        let cfg = CodeSwitchConfig { replace_prob: 0.0, ..Default::default() };
        let cs = code_switch(&src, &tgt, &cfg).unwrap();
        assert_eq!(cs.tokens, src.tokens);
        assert_eq!(cs.realized_alpha, 1.0);
    }

    #[test]
    fn full_replacement_returns_target() {
        let (set, problems) = fixtures();
        let src = render(&problems[0], set.pivot()).unwrap();
        let tgt = render(&problems[0], set.language(LangId(1)).unwrap()).unwrap();
        let cfg = CodeSwitchConfig { replace_prob: 1.0, mix_fraction: 1.0, ..Default::default() };
        let cs = code_switch(&src, &tgt, &cfg).unwrap();
        assert_eq!(cs.tokens, tgt.tokens);
        assert_eq!(cs.realized_alpha, 0.0);
    }

    #[test]
    fn output_vocabulary_is_union_of_inputs() {
        let (set, problems) = fixtures();
        for (i, p) in problems.iter().enumerate() {
            let src = render(p, set.pivot()).unwrap();
            let tgt = render(p, set.language(LangId(3)).unwrap()).unwrap();
            let cfg = CodeSwitchConfig { seed: i as u64, ..Default::default() };
            let cs = code_switch(&src, &tgt, &cfg).unwrap();
            for tok in &cs.tokens {
                assert!(src.tokens.contains(tok) || tgt.tokens.contains(tok));
            }
            assert_eq!(cs.tokens.len(), src.tokens.len());
        }
    }

    #[test]
    fn alpha_matches_naive_recount() {
        let (set, problems) = fixtures();
        let mut checked = 0;
        for (i, p) in problems.iter().enumerate() {
            for seed in 0..40u64 {
                let src = render(p, set.pivot()).unwrap();
                let tgt = render(p, set.language(LangId(1)).unwrap()).unwrap();
                let cfg = CodeSwitchConfig { seed: seed * 1000 + i as u64, ..Default::default() };
                let cs = code_switch(&src, &tgt, &cfg).unwrap();
                // Brute-force recount oracle over per-token flags.
                let mut source = 0usize;
                let mut countable = 0usize;
                for o in &cs.origins {
                    match o {
                        TokenOrigin::Source => {
                            source += 1;
                            countable += 1;
                        }
                        TokenOrigin::Target => countable += 1,
                        TokenOrigin::Shared => {}
                    }
                }
                let expect = source as f64 / countable as f64;
                assert!((source_fraction(&cs) - expect).abs() < 1e-12);
                checked += 1;
            }
        }
        assert!(checked >= 1000);
    }

    #[test]
    fn mode_regimes_land_on_opposite_sides_of_half() {
        let (set, problems) = fixtures();
        let mut sum_src = 0.0;
        let mut sum_tgt = 0.0;
        let n = 2000;
        for i in 0..n {
            let p = &problems[i % problems.len()];
            let src = render(p, set.pivot()).unwrap();
            let tgt = render(p, set.language(LangId(2)).unwrap()).unwrap();
            let a = code_switch(&src, &tgt, &CodeSwitchConfig {
                seed: i as u64,
                mode: CodeSwitchMode::SourceWithTargetTokens,
                ..Default::default()
            })
            .unwrap();
            let b = code_switch(&src, &tgt, &CodeSwitchConfig {
                seed: i as u64,
                mode: CodeSwitchMode::TargetWithSourceTokens,
                ..Default::default()
            })
            .unwrap();
            sum_src += a.realized_alpha;
            sum_tgt += b.realized_alpha;
        }
        assert!(sum_src / (n as f64) > 0.5);
        assert!(sum_tgt / (n as f64) < 0.5);
    }

    #[test]
    fn non_parallel_inputs_rejected() {
        let (set, problems) = fixtures();
        let src = render(&problems[0], set.pivot()).unwrap();
        let tgt = render(&problems[1], set.language(LangId(1)).unwrap()).unwrap();
        if src.spans != tgt.spans {
            assert!(code_switch(&src, &tgt, &CodeSwitchConfig::default()).is_err());
        }
        // Same language is always rejected.
        assert!(code_switch(&src, &src, &CodeSwitchConfig::default()).is_err());
    }

    #[test]
    fn seed_changes_flips_but_not_token_count() {
        let (set, problems) = fixtures();
        let src = render(&problems[2], set.pivot()).unwrap();
        let tgt = render(&problems[2], set.language(LangId(1)).unwrap()).unwrap();
        let a = code_switch(&src, &tgt, &CodeSwitchConfig { seed: 1, ..Default::default() }).unwrap();
        let b = code_switch(&src, &tgt, &CodeSwitchConfig { seed: 2, ..Default::default() }).unwrap();
        let a2 = code_switch(&src, &tgt, &CodeSwitchConfig { seed: 1, ..Default::default() }).unwrap();
        assert_eq!(a.tokens, a2.tokens);
        assert_eq!(a.tokens.len(), b.tokens.len());
    }

    #[test]
    fn en_context_demos_match_pivot_renderings() {
        let (set, problems) = fixtures();
        let ds = build_instruct_dataset(&problems, &set, 2, 3, Split::Train, 1).unwrap();
        for sample in ds.samples().iter().take(24) {
            let demos =
                assemble_context(&ds, sample, PromptStyle::EnContext, &CodeSwitchConfig::default())
                    .unwrap();
            assert_eq!(demos.len(), 2);
            for (di, (q, _)) in demos.iter().enumerate() {
                let pivot = ds.lookup(set.pivot_id, sample.demo_ids[di]).unwrap();
                assert_eq!(q, &pivot.query.tokens);
            }
        }
    }

    #[test]
    fn prompt_length_is_exact_sum() {
        let (set, problems) = fixtures();
        let ds = build_instruct_dataset(&problems, &set, 2, 3, Split::Train, 1).unwrap();
        let sample = &ds.samples()[40];
        let demos =
            assemble_context(&ds, sample, PromptStyle::NativeContext, &CodeSwitchConfig::default())
                .unwrap();
        let prompt = build_prompt(&demos, &sample.query, &set, None);
        let demo_len: usize = demos.iter().map(|(q, a)| q.len() + a.len() + 2).sum();
        let is_pivot = sample.query.language_id == set.pivot_id;
        let instr_len = instruction_tokens(is_pivot, "english").len();
        assert_eq!(prompt.len(), demo_len + 1 + sample.query.tokens.len() + instr_len);
    }

    #[test]
    fn empty_context_prompt_shape() {
        let (set, problems) = fixtures();
        let query = render(&problems[0], set.pivot()).unwrap();
        let prompt = build_prompt(&[], &query, &set, None);
        assert_eq!(prompt[0], QUESTION_MARKER);
        assert_eq!(&prompt[1..=query.tokens.len()], query.tokens.as_slice());
        assert_eq!(prompt.len(), 1 + query.tokens.len() + 8);
    }

    #[test]
    fn non_pivot_query_uses_english_pivot_instruction() {
        let (set, problems) = fixtures();
        let lang = set.language(LangId(2)).unwrap();
        let query = render(&problems[0], lang).unwrap();
        let prompt = build_prompt(&[], &query, &set, None);
        let tail: Vec<&str> = prompt.iter().rev().take(3).map(|s| s.as_str()).collect();
        assert_eq!(tail, vec![".", "english", "in"]);
        assert!(prompt.iter().any(|t| t == "question"));
    }
}
