//! Tokenized training examples and the online translate-then-answer
//! expansion.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{translate, Dataset, InstructSample, LangId};
use crate::model::{BatchRow, Vocabulary};
use crate::switchboard::{
    assemble_context, build_prompt, mix_seed, CodeSwitchConfig, PromptStyle, ANSWER_MARKER,
};

use super::direction::DirectionPolicy;
use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExampleKind {
    Plain,
    RandomCot,
    Augmented,
}

/// One tokenized example. The prompt ends with the separator token; the
/// target carries the response region plus end-of-sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub prompt_ids: Vec<u32>,
    pub target_ids: Vec<u32>,
    pub loss_mask: Vec<bool>,
    pub language_id: LangId,
    pub problem_id: u32,
    pub kind: ExampleKind,
    /// For translate-then-answer examples: length of the leading translation
    /// segment of `target_ids`. Zero otherwise.
    pub translation_len: usize,
}

impl TrainingExample {
    pub fn new(
        prompt_ids: Vec<u32>,
        target_ids: Vec<u32>,
        language_id: LangId,
        problem_id: u32,
        kind: ExampleKind,
        translation_len: usize,
    ) -> Self {
        // Shifted next-token mask: position t predicts full[t + 1], which is
        // a response token exactly when t + 1 >= prompt length.
        let n = prompt_ids.len() + target_ids.len();
        let loss_mask = (0..n - 1).map(|t| t + 1 >= prompt_ids.len()).collect();
        TrainingExample {
            prompt_ids,
            target_ids,
            loss_mask,
            language_id,
            problem_id,
            kind,
            translation_len,
        }
    }

    pub fn total_len(&self) -> usize {
        self.prompt_ids.len() + self.target_ids.len()
    }

    pub fn translation_segment(&self) -> &[u32] {
        &self.target_ids[..self.translation_len]
    }

    /// Next-token training row over the concatenated sequence.
    pub fn batch_row(&self) -> BatchRow {
        let mut full = Vec::with_capacity(self.total_len());
        full.extend_from_slice(&self.prompt_ids);
        full.extend_from_slice(&self.target_ids);
        BatchRow {
            input_ids: full[..full.len() - 1].to_vec(),
            target_ids: full[1..].to_vec(),
            mask: self.loss_mask.clone(),
        }
    }
}

/// Builds a plain SFT example from one instruct sample.
pub fn make_example(
    dataset: &Dataset,
    sample: &InstructSample,
    style: PromptStyle,
    cs_cfg: &CodeSwitchConfig,
    vocab: &Vocabulary,
) -> Result<TrainingExample, TrainError> {
    let demos = assemble_context(dataset, sample, style, cs_cfg)?;
    let prompt = build_prompt(&demos, &sample.query, &dataset.language_set, None);
    let mut prompt_ids = vocab.encode(&prompt)?;
    prompt_ids.push(vocab.sep_id());
    let mut target_ids = vocab.encode(&sample.response.tokens)?;
    target_ids.push(vocab.eos_id());
    Ok(TrainingExample::new(
        prompt_ids,
        target_ids,
        sample.query.language_id,
        sample.problem_id,
        ExampleKind::Plain,
        0,
    ))
}

/// Emits one translate-then-answer companion per expandable sample. The
/// prompt instructs translating the query into a drawn intermediate
/// language; the supervised target is the gold translation, the answer
/// marker, then the usual pivot-language response. Returns the companions
/// together with the drawn language of each, in input order.
pub fn random_cot_expand(
    dataset: &Dataset,
    samples: &[&InstructSample],
    style: PromptStyle,
    cs_cfg: &CodeSwitchConfig,
    vocab: &Vocabulary,
    policy: &dyn DirectionPolicy,
    seed: u64,
) -> Result<(Vec<TrainingExample>, Vec<LangId>), TrainError> {
    let set = &dataset.language_set;
    let mut out = Vec::new();
    let mut drawn = Vec::new();
    for sample in samples {
        let from = sample.query.language_id;
        let candidates = policy.candidates(set, from);
        if candidates.is_empty() {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
            seed,
            sample.problem_id as u64,
            from.0 as u64,
        ));
        let lk = candidates[rng.gen_range(0..candidates.len())];
        let lk_spec = set
            .language(lk)
            .ok_or_else(|| TrainError::Config(format!("language {lk} not in set")))?;
        let translation = translate(&sample.query, lk_spec, set)?;

        let demos = assemble_context(dataset, sample, style, cs_cfg)?;
        let prompt = build_prompt(&demos, &sample.query, set, Some(&lk_spec.name));
        let mut prompt_ids = vocab.encode(&prompt)?;
        prompt_ids.push(vocab.sep_id());

        let mut target_tokens = translation.tokens.clone();
        target_tokens.push(ANSWER_MARKER.to_string());
        target_tokens.extend(sample.response.tokens.iter().cloned());
        let mut target_ids = vocab.encode(&target_tokens)?;
        target_ids.push(vocab.eos_id());

        out.push(TrainingExample::new(
            prompt_ids,
            target_ids,
            from,
            sample.problem_id,
            ExampleKind::RandomCot,
            translation.tokens.len(),
        ));
        drawn.push(lk);
    }
    Ok((out, drawn))
}

/// A low-resource example paired with a high-resource example of the same
/// problem; both share the pivot-language response, so their supervised
/// targets are identical.
#[derive(Debug, Clone)]
pub struct ParallelPair {
    pub high: TrainingExample,
    pub low: TrainingExample,
}

impl ParallelPair {
    pub fn new(high: TrainingExample, low: TrainingExample) -> Result<Self, TrainError> {
        if high.problem_id != low.problem_id {
            return Err(TrainError::Pairing(format!(
                "problem mismatch: {} vs {}",
                high.problem_id, low.problem_id
            )));
        }
        if high.target_ids != low.target_ids {
            return Err(TrainError::Pairing(
                "parallel examples must share the supervised target".into(),
            ));
        }
        Ok(ParallelPair { high, low })
    }

    /// Shared supervised length n of Eq-style token distributions.
    pub fn shared_len(&self) -> usize {
        self.high.target_ids.len()
    }
}
