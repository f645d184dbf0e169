//! Rejection-sampling augmentation: draw k responses per training query,
//! keep the answer-correct ones, deduplicate reasoning paths.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use crate::corpus::Dataset;
use crate::evalsuite::extract_answer;
use crate::model::{generate_many, DecodeConfig, DecodeMode, ModelParams, Vocabulary};
use crate::switchboard::{assemble_context, build_prompt, mix_seed, CodeSwitchConfig, PromptStyle};

use super::example::{ExampleKind, TrainingExample};
use super::TrainError;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AugmentedDataset {
    pub extras: Vec<TrainingExample>,
    /// Mean distinct kept paths per sampled query, keyed by language id.
    pub per_language_distinct: BTreeMap<u8, f64>,
    pub queries_sampled: usize,
}

impl AugmentedDataset {
    pub fn mean_distinct(&self) -> f64 {
        if self.per_language_distinct.is_empty() {
            return 0.0;
        }
        self.per_language_distinct.values().sum::<f64>() / self.per_language_distinct.len() as f64
    }
}

/// Splits a generated response into its reasoning region (everything before
/// the final answer sentence) for distinctness comparison.
fn reasoning_key(tokens: &[String]) -> String {
    let joined = tokens.join(" ");
    match joined.rfind("The answer is") {
        Some(at) => joined[..at].trim().to_string(),
        None => joined.trim().to_string(),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn msample_augment(
    params: &ModelParams,
    vocab: &Vocabulary,
    dataset: &Dataset,
    style: PromptStyle,
    cs_cfg: &CodeSwitchConfig,
    k: usize,
    tau: f64,
    fraction: f64,
    max_new: usize,
    seed: u64,
) -> Result<AugmentedDataset, TrainError> {
    if k == 0 {
        return Err(TrainError::Config("msample k must be >= 1".into()));
    }
    let mut extras = Vec::new();
    let mut sums: BTreeMap<u8, (f64, usize)> = BTreeMap::new();
    let mut queries_sampled = 0usize;
    let threshold = (fraction.clamp(0.0, 1.0) * 1_000_000.0) as u64;
    for sample in dataset.samples() {
        let lang = sample.query.language_id;
        let pick = mix_seed(seed, sample.problem_id as u64, 0x5a00 | lang.0 as u64) % 1_000_000;
        if pick >= threshold {
            continue;
        }
        queries_sampled += 1;
        let gold = extract_answer(&sample.response.tokens);
        let demos = assemble_context(dataset, sample, style, cs_cfg)?;
        let prompt = build_prompt(&demos, &sample.query, &dataset.language_set, None);
        let mut prompt_ids = vocab.encode(&prompt)?;
        prompt_ids.push(vocab.sep_id());
        let decode = DecodeConfig {
            mode: DecodeMode::Temperature(tau),
            max_new,
            seed: mix_seed(seed, sample.problem_id as u64, lang.0 as u64),
        };
        let generations = generate_many(params, vocab, &prompt_ids, k, &decode)?;
        let mut kept_keys = BTreeSet::new();
        for g in generations {
            if g.truncated || g.ids.is_empty() {
                continue;
            }
            let tokens = vocab.decode(&g.ids);
            if extract_answer(&tokens) != gold || gold.is_none() {
                continue;
            }
            if !kept_keys.insert(reasoning_key(&tokens)) {
                continue;
            }
            let mut target_ids = g.ids.clone();
            target_ids.push(vocab.eos_id());
            extras.push(TrainingExample::new(
                prompt_ids.clone(),
                target_ids,
                lang,
                sample.problem_id,
                ExampleKind::Augmented,
                0,
            ));
        }
        let entry = sums.entry(lang.0).or_insert((0.0, 0));
        entry.0 += kept_keys.len() as f64;
        entry.1 += 1;
    }
    let per_language_distinct = sums
        .into_iter()
        .map(|(lang, (sum, n))| (lang, sum / n.max(1) as f64))
        .collect();
    Ok(AugmentedDataset {
        extras,
        per_language_distinct,
        queries_sampled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reasoning_key_strips_answer_sentence() {
        let toks: Vec<String> = "2 * 3 = 6 . The answer is 6 ."
            .split(' ')
            .map(String::from)
            .collect();
        assert_eq!(reasoning_key(&toks), "2 * 3 = 6 .");
        let no_cue: Vec<String> = vec!["just".into(), "words".into()];
        assert_eq!(reasoning_key(&no_cue), "just words");
    }
}
