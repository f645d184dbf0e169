//! Instruction dataset assembly and line-delimited persistence.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::language::{parse_number, LangId, LanguageSet, Lexicon, ResourceClass};
use super::templates::{render, render_response};
use super::{CorpusError, LanguageSpec, Problem, RenderedText, SpanAlignment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

/// One training unit: query in language L_i, response in the pivot, plus B
/// demonstration problem ids drawn from other problems.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructSample {
    pub problem_id: u32,
    pub query: RenderedText,
    pub response: RenderedText,
    pub demo_ids: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub language_set: LanguageSet,
    pub split: Split,
    samples: Vec<InstructSample>,
    index: HashMap<(u8, u32), usize>,
}

impl Dataset {
    pub fn new(language_set: LanguageSet, split: Split, samples: Vec<InstructSample>) -> Self {
        let index = samples
            .iter()
            .enumerate()
            .map(|(i, s)| ((s.query.language_id.0, s.problem_id), i))
            .collect();
        Dataset {
            language_set,
            split,
            samples,
            index,
        }
    }

    pub fn samples(&self) -> &[InstructSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Looks up the sample for (language, problem). Duplicated problems from
    /// demo resampling resolve to the first occurrence.
    pub fn lookup(&self, language: LangId, problem_id: u32) -> Option<&InstructSample> {
        self.index
            .get(&(language.0, problem_id))
            .map(|&i| &self.samples[i])
    }

    /// Demonstration pairs for a sample: demo query in the requested
    /// language, demo response always in the pivot.
    pub fn demo_pair(
        &self,
        demo_id: u32,
        query_language: LangId,
    ) -> Option<(&RenderedText, &RenderedText)> {
        let q = self.lookup(query_language, demo_id)?;
        let pivot = self.lookup(self.language_set.pivot_id, demo_id)?;
        Some((&q.query, &pivot.response))
    }

    pub fn by_language(&self, language: LangId) -> impl Iterator<Item = &InstructSample> {
        self.samples
            .iter()
            .filter(move |s| s.query.language_id == language)
    }
}

/// Builds the parallel instruction dataset: one sample per (language,
/// problem) with `b_demos` demonstrations drawn uniformly without
/// replacement from the other problems. `contexts_per_sample` repeats the
/// construction with fresh demonstration draws.
pub fn build_instruct_dataset(
    problems: &[Problem],
    language_set: &LanguageSet,
    b_demos: usize,
    seed: u64,
    split: Split,
    contexts_per_sample: usize,
) -> Result<Dataset, CorpusError> {
    if problems.len() <= b_demos {
        return Err(CorpusError::InvalidConfig(format!(
            "need more problems ({}) than demonstrations ({b_demos})",
            problems.len()
        )));
    }
    if contexts_per_sample == 0 {
        return Err(CorpusError::InvalidConfig(
            "contexts_per_sample must be >= 1".into(),
        ));
    }
    let pivot = language_set.pivot();
    let responses: Vec<RenderedText> = problems
        .iter()
        .map(|p| render_response(p, pivot))
        .collect::<Result<_, _>>()?;
    let all_ids: Vec<u32> = problems.iter().map(|p| p.id).collect();
    let mut samples = Vec::with_capacity(problems.len() * language_set.k() * contexts_per_sample);
    for round in 0..contexts_per_sample {
        for lang in &language_set.languages {
            for (pi, problem) in problems.iter().enumerate() {
                let query = render(problem, lang)?;
                let demo_ids = draw_demos(
                    &all_ids,
                    problem.id,
                    b_demos,
                    seed,
                    lang.id,
                    round as u64,
                );
                samples.push(InstructSample {
                    problem_id: problem.id,
                    query,
                    response: responses[pi].clone(),
                    demo_ids,
                });
            }
        }
    }
    Ok(Dataset::new(language_set.clone(), split, samples))
}

fn draw_demos(
    all_ids: &[u32],
    own_id: u32,
    b_demos: usize,
    seed: u64,
    language: LangId,
    round: u64,
) -> Vec<u32> {
    if b_demos == 0 {
        return Vec::new();
    }
    // Per-sample stream so dataset assembly is order-independent.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(
        (own_id as u64) << 24 | (language.0 as u64) << 8 | (round & 0xff),
    );
    let mut candidates: Vec<u32> = all_ids.iter().copied().filter(|&id| id != own_id).collect();
    candidates.shuffle(&mut rng);
    candidates.truncate(b_demos);
    candidates
}

// ---------------------------------------------------------------------------
// Persistence: one JSON record per line, fixed field order.
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct Record {
    problem_id: u32,
    language: u8,
    query_tokens: Vec<String>,
    response_tokens: Vec<String>,
    demo_ids: Vec<u32>,
    query_spans: Vec<SpanAlignment>,
    response_spans: Vec<SpanAlignment>,
}

impl Dataset {
    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for s in &self.samples {
            let record = Record {
                problem_id: s.problem_id,
                language: s.query.language_id.0,
                query_tokens: s.query.tokens.clone(),
                response_tokens: s.response.tokens.clone(),
                demo_ids: s.demo_ids.clone(),
                query_spans: s.query.spans.clone(),
                response_spans: s.response.spans.clone(),
            };
            serde_json::to_writer(&mut out, &record)
                .map_err(|e| CorpusError::Parse { line: 0, message: e.to_string() })?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(
        path: &Path,
        language_set: LanguageSet,
        split: Split,
    ) -> Result<Dataset, CorpusError> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut samples = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                line: lineno + 1,
                message: e.to_string(),
            })?;
            if record.language as usize >= language_set.k() {
                return Err(CorpusError::UnknownLanguageTag(record.language.to_string()));
            }
            let lang = LangId(record.language);
            samples.push(InstructSample {
                problem_id: record.problem_id,
                query: RenderedText {
                    language_id: lang,
                    tokens: record.query_tokens,
                    spans: record.query_spans,
                },
                response: RenderedText {
                    language_id: language_set.pivot_id,
                    tokens: record.response_tokens,
                    spans: record.response_spans,
                },
                demo_ids: record.demo_ids,
            });
        }
        Ok(Dataset::new(language_set, split, samples))
    }
}

// ---------------------------------------------------------------------------
// External ingestion (score-only; no span alignment, no code-switching).
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExternalFormat {
    /// Tab-separated question/answer per line, one language per file.
    MgsmTsv,
    /// The line-delimited record format written by `write_jsonl`.
    InstructRecords,
}

/// Loads an external evaluation file. The result carries no span alignments,
/// so it can be scored but not code-switched.
pub fn ingest_external(path: &Path, format: ExternalFormat) -> Result<Dataset, CorpusError> {
    match format {
        ExternalFormat::MgsmTsv => ingest_mgsm_tsv(path),
        ExternalFormat::InstructRecords => ingest_records(path),
    }
}

fn scoring_language_set(k: usize) -> LanguageSet {
    let k = k.max(2);
    let languages = (0..k)
        .map(|i| LanguageSpec {
            id: LangId(i as u8),
            name: if i == 0 { "english".into() } else { format!("extern_{i}") },
            lexicon: Lexicon::identity(&[]),
            resource_class: if i == 0 { ResourceClass::High } else { ResourceClass::Low },
        })
        .collect();
    LanguageSet {
        languages,
        pivot_id: LangId(0),
        high_resource_ids: vec![LangId(0)],
    }
}

fn ingest_mgsm_tsv(path: &Path) -> Result<Dataset, CorpusError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut samples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (question, answer) = line.split_once('\t').ok_or_else(|| CorpusError::Parse {
            line: lineno + 1,
            message: "expected question<TAB>answer".into(),
        })?;
        if parse_number(answer.trim()).is_none() {
            return Err(CorpusError::Parse {
                line: lineno + 1,
                message: format!("non-numeric answer field {:?}", answer.trim()),
            });
        }
        let query_tokens: Vec<String> =
            question.split_whitespace().map(|s| s.to_string()).collect();
        let response_tokens = vec![
            "The".into(),
            "answer".into(),
            "is".into(),
            answer.trim().to_string(),
            ".".into(),
        ];
        samples.push(InstructSample {
            problem_id: lineno as u32,
            query: RenderedText::unaligned(LangId(0), query_tokens),
            response: RenderedText::unaligned(LangId(0), response_tokens),
            demo_ids: Vec::new(),
        });
    }
    Ok(Dataset::new(scoring_language_set(2), Split::Test, samples))
}

fn ingest_records(path: &Path) -> Result<Dataset, CorpusError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut samples = Vec::new();
    let mut max_lang = 0u8;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        if record.language >= 64 {
            return Err(CorpusError::UnknownLanguageTag(record.language.to_string()));
        }
        max_lang = max_lang.max(record.language);
        samples.push(InstructSample {
            problem_id: record.problem_id,
            // External data is never code-switched: spans are dropped.
            query: RenderedText::unaligned(LangId(record.language), record.query_tokens),
            response: RenderedText::unaligned(LangId(0), record.response_tokens),
            demo_ids: record.demo_ids,
        });
    }
    Ok(Dataset::new(
        scoring_language_set(max_lang as usize + 1),
        Split::Test,
        samples,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_language_set, generate_problems};

    fn toy() -> (Vec<Problem>, LanguageSet) {
        let problems = generate_problems(20, 5, 10_000).unwrap();
        let set = build_language_set(3, 5, 1).unwrap();
        (problems, set)
    }

    #[test]
    fn one_sample_per_language_and_problem() {
        let (problems, set) = toy();
        let ds = build_instruct_dataset(&problems, &set, 2, 1, Split::Train, 1).unwrap();
        assert_eq!(ds.len(), 20 * 3);
        for lang in set.ids() {
            assert_eq!(ds.by_language(lang).count(), 20);
        }
    }

    #[test]
    fn demos_never_contain_own_problem() {
        let (problems, set) = toy();
        let ds = build_instruct_dataset(&problems, &set, 2, 1, Split::Train, 1).unwrap();
        for s in ds.samples() {
            assert_eq!(s.demo_ids.len(), 2);
            assert!(!s.demo_ids.contains(&s.problem_id));
            assert_ne!(s.demo_ids[0], s.demo_ids[1]);
        }
    }

    #[test]
    fn zero_demos_is_valid() {
        let (problems, set) = toy();
        let ds = build_instruct_dataset(&problems, &set, 0, 1, Split::Train, 1).unwrap();
        assert!(ds.samples().iter().all(|s| s.demo_ids.is_empty()));
    }

    #[test]
    fn responses_are_pivot_language() {
        let (problems, set) = toy();
        let ds = build_instruct_dataset(&problems, &set, 2, 1, Split::Train, 1).unwrap();
        for s in ds.samples() {
            assert_eq!(s.response.language_id, set.pivot_id);
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let (problems, set) = toy();
        let ds = build_instruct_dataset(&problems, &set, 2, 1, Split::Train, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        ds.write_jsonl(&path).unwrap();
        let back = Dataset::read_jsonl(&path, set.clone(), Split::Train).unwrap();
        assert_eq!(back.samples(), ds.samples());
        // Re-serialization is byte-identical.
        let path2 = dir.path().join("again.jsonl");
        back.write_jsonl(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn mgsm_tsv_parses_minimal_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mgsm.tsv");
        std::fs::write(&path, "what is 2 + 2 ?\t4\nhalf of seven ?\t3.5\nten ?\t10\n").unwrap();
        let ds = ingest_external(&path, ExternalFormat::MgsmTsv).unwrap();
        assert_eq!(ds.len(), 3);
        assert!(!ds.samples()[0].query.has_spans());
    }

    #[test]
    fn mgsm_empty_file_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.tsv");
        std::fs::write(&path, "").unwrap();
        let ds = ingest_external(&path, ExternalFormat::MgsmTsv).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn mgsm_bad_answer_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsv");
        std::fs::write(&path, "ok ?\t4\nbroken ?\tfour\n").unwrap();
        match ingest_external(&path, ExternalFormat::MgsmTsv) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn demo_resampling_multiplies_contexts() {
        let (problems, set) = toy();
        let ds = build_instruct_dataset(&problems, &set, 2, 1, Split::Train, 3).unwrap();
        assert_eq!(ds.len(), 20 * 3 * 3);
    }
}
