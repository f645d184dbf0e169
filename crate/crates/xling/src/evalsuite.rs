//! Answer extraction, per-language accuracy, studies, and the
//! representation-alignment metric.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use num_rational::Rational64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dataset, LangId, Split};
use crate::model::{
    generate, sentence_representation, DecodeConfig, DecodeMode, ModelParams, Vocabulary,
};
use crate::switchboard::{assemble_context, build_prompt, CodeSwitchConfig, PromptStyle};
use crate::trainer::{
    msample_augment, run_pipeline, DirectionKind, PipelineOutcome, StageFlags, TrainConfig,
    TrainError,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation setup: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Switch(#[from] crate::switchboard::SwitchError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parses an integer or decimal token, optional sign, commas stripped.
pub fn parse_rational(tok: &str) -> Option<Rational64> {
    let cleaned: String = tok
        .chars()
        .filter(|c| *c != ',')
        .take_while(|c| c.is_ascii_digit() || *c == '.' || *c == '-' || *c == '+')
        .collect();
    let cleaned = cleaned.trim_end_matches('.');
    if cleaned.is_empty() || cleaned == "-" || cleaned == "+" {
        return None;
    }
    match cleaned.split_once('.') {
        None => cleaned.parse::<i64>().ok().map(Rational64::from_integer),
        Some((whole, frac)) => {
            if frac.is_empty() || !frac.chars().all(|c| c.is_ascii_digit()) {
                return None;
            }
            let negative = whole.starts_with('-');
            let whole_val: i64 = whole.parse().ok()?;
            let frac_val: i64 = frac.parse().ok()?;
            let denom = 10i64.checked_pow(frac.len() as u32)?;
            let mag = whole_val.abs().checked_mul(denom)?.checked_add(frac_val)?;
            let num = if negative { -mag } else { mag };
            Some(Rational64::new(num, denom))
        }
    }
}

/// Scans for the final occurrence of the cue "The answer is" and parses the
/// number that follows. Absent (not an error) when no cue or unparsable.
pub fn extract_answer(tokens: &[String]) -> Option<Rational64> {
    let mut at = None;
    for t in 0..tokens.len().saturating_sub(3) {
        if tokens[t] == "The" && tokens[t + 1] == "answer" && tokens[t + 2] == "is" {
            at = Some(t + 3);
        }
    }
    parse_rational(tokens.get(at?)?)
}

/// Synthetic golds are exact rationals; external decimal golds tolerate
/// rounding within 1e-6.
pub fn answers_match(got: Option<Rational64>, gold: Option<Rational64>, approx: bool) -> bool {
    match (got, gold) {
        (Some(a), Some(b)) => {
            if a == b {
                return true;
            }
            if approx {
                let fa = *a.numer() as f64 / *a.denom() as f64;
                let fb = *b.numer() as f64 / *b.denom() as f64;
                (fa - fb).abs() < 1e-6
            } else {
                false
            }
        }
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub language: u8,
    pub language_name: String,
    pub problem_id: u32,
    pub output: Vec<String>,
    pub extracted: Option<String>,
    pub gold: String,
    pub correct: bool,
}

/// Per-language accuracy table. Rows are ordered pivot first, then by
/// language id; the average is the unweighted mean over languages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub style: String,
    pub decode: String,
    pub rows: Vec<(String, f64)>,
    pub average: f64,
    pub n_per_language: usize,
}

impl EvalReport {
    pub fn accuracy_of(&self, name: &str) -> Option<f64> {
        self.rows.iter().find(|(n, _)| n == name).map(|(_, a)| *a)
    }

    pub fn worst(&self) -> f64 {
        self.rows.iter().map(|(_, a)| *a).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub max_new: usize,
    /// Evaluate at most this many queries per language.
    pub limit: Option<usize>,
    /// Tolerate 1e-6 rounding on golds (external datasets).
    pub approx: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            max_new: 64,
            limit: None,
            approx: false,
        }
    }
}

/// Greedy decoding over the test split; correctness is exact rational
/// agreement of the extracted answers.
pub fn evaluate(
    params: &ModelParams,
    vocab: &Vocabulary,
    testset: &Dataset,
    style: PromptStyle,
    cs_cfg: &CodeSwitchConfig,
    opts: &EvalOptions,
) -> Result<(EvalReport, Vec<TranscriptRecord>), EvalError> {
    if testset.split != Split::Test {
        return Err(EvalError::Config("evaluation requires the test split".into()));
    }
    let set = &testset.language_set;
    let mut transcripts = Vec::new();
    let mut tally: BTreeMap<u8, (usize, usize)> = BTreeMap::new();
    let mut seen: BTreeMap<u8, usize> = BTreeMap::new();
    for sample in testset.samples() {
        let lang = sample.query.language_id;
        if let Some(limit) = opts.limit {
            let c = seen.entry(lang.0).or_insert(0);
            if *c >= limit {
                continue;
            }
            *c += 1;
        }
        let demos = assemble_context(testset, sample, style, cs_cfg)?;
        let prompt = build_prompt(&demos, &sample.query, set, None);
        let mut prompt_ids = vocab.encode(&prompt)?;
        prompt_ids.push(vocab.sep_id());
        let decode = DecodeConfig {
            mode: DecodeMode::Greedy,
            max_new: opts.max_new,
            seed: 0,
        };
        let gen = generate(params, vocab, &prompt_ids, &decode)?;
        let output = vocab.decode(&gen.ids);
        let extracted = extract_answer(&output);
        let gold = extract_answer(&sample.response.tokens);
        let correct = gold.is_some() && answers_match(extracted, gold, opts.approx);
        let entry = tally.entry(lang.0).or_insert((0, 0));
        entry.1 += 1;
        if correct {
            entry.0 += 1;
        }
        transcripts.push(TranscriptRecord {
            language: lang.0,
            language_name: set
                .language(lang)
                .map(|l| l.name.clone())
                .unwrap_or_else(|| lang.to_string()),
            problem_id: sample.problem_id,
            output,
            extracted: extracted.map(|r| r.to_string()),
            gold: gold.map(|r| r.to_string()).unwrap_or_default(),
            correct,
        });
    }
    let report = report_from_tally(&tally, set, style, "greedy")?;
    Ok((report, transcripts))
}

fn report_from_tally(
    tally: &BTreeMap<u8, (usize, usize)>,
    set: &crate::corpus::LanguageSet,
    style: PromptStyle,
    decode: &str,
) -> Result<EvalReport, EvalError> {
    let mut order: Vec<u8> = tally.keys().copied().collect();
    order.sort_by_key(|id| (*id != set.pivot_id.0, *id));
    let mut rows = Vec::new();
    let mut n_per_language = 0;
    for id in order {
        let (correct, total) = tally[&id];
        let name = set
            .language(LangId(id))
            .map(|l| l.name.clone())
            .unwrap_or_else(|| format!("L{id}"));
        rows.push((name, correct as f64 / total.max(1) as f64));
        n_per_language = total;
    }
    if rows.is_empty() {
        return Err(EvalError::Config("no evaluated queries".into()));
    }
    let average = rows.iter().map(|(_, a)| *a).sum::<f64>() / rows.len() as f64;
    Ok(EvalReport {
        style: style.label().to_string(),
        decode: decode.to_string(),
        rows,
        average,
        n_per_language,
    })
}

/// Independent recount over stored transcripts; oracle for the accuracy
/// bookkeeping in `evaluate`.
pub fn recount_transcripts(transcripts: &[TranscriptRecord]) -> BTreeMap<u8, f64> {
    let mut tally: BTreeMap<u8, (usize, usize)> = BTreeMap::new();
    for t in transcripts {
        let gold = parse_rational(&t.gold);
        let got = extract_answer(&t.output);
        let entry = tally.entry(t.language).or_insert((0, 0));
        entry.1 += 1;
        if gold.is_some() && got == gold {
            entry.0 += 1;
        }
    }
    tally
        .into_iter()
        .map(|(k, (c, n))| (k, c as f64 / n.max(1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub languages: Vec<String>,
    /// Symmetric pairwise matrix of mean cosines, unit diagonal.
    pub matrix: Vec<Vec<f64>>,
    pub mean_pairwise: f64,
    pub probe: String,
}

/// Mean pairwise cosine of parallel-query representations over a probe set.
/// The probe feeds each problem's bare native query; with a causal model the
/// position-0 state depends only on the leading (language-specific) token,
/// so demonstration context would be inert and is omitted.
pub fn alignment_metric(
    params: &ModelParams,
    vocab: &Vocabulary,
    testset: &Dataset,
    probe_n: usize,
) -> Result<AlignmentReport, EvalError> {
    let set = &testset.language_set;
    let k = set.k();
    if k < 2 {
        return Err(EvalError::Config("alignment needs at least 2 languages".into()));
    }
    let mut ids: Vec<LangId> = set.ids().collect();
    ids.sort_by_key(|id| (*id != set.pivot_id, id.0));
    let mut problem_ids: Vec<u32> = testset
        .by_language(set.pivot_id)
        .map(|s| s.problem_id)
        .collect();
    problem_ids.sort_unstable();
    problem_ids.truncate(probe_n);
    if problem_ids.is_empty() {
        return Err(EvalError::Config("empty probe set".into()));
    }

    let mut sums = vec![vec![0.0f64; k]; k];
    let mut count = 0usize;
    for pid in &problem_ids {
        let mut reps = Vec::with_capacity(k);
        for lang in &ids {
            let sample = testset.lookup(*lang, *pid).ok_or_else(|| {
                EvalError::Config(format!("problem {pid} missing in language {lang}"))
            })?;
            let prompt_ids = vocab.encode(&sample.query.tokens)?;
            reps.push(sentence_representation(params, &prompt_ids, 0)?);
        }
        for i in 0..k {
            for j in 0..k {
                let cos: f64 = reps[i].iter().zip(reps[j].iter()).map(|(a, b)| a * b).sum();
                sums[i][j] += cos;
            }
        }
        count += 1;
    }
    let matrix: Vec<Vec<f64>> = sums
        .iter()
        .map(|row| row.iter().map(|s| s / count as f64).collect())
        .collect();
    let mut mean = 0.0;
    let mut pairs = 0usize;
    for i in 0..k {
        for j in i + 1..k {
            mean += matrix[i][j];
            pairs += 1;
        }
    }
    Ok(AlignmentReport {
        languages: ids
            .iter()
            .map(|id| set.language(*id).unwrap().name.clone())
            .collect(),
        matrix,
        mean_pairwise: mean / pairs as f64,
        probe: format!("position-0 final-norm state of the bare query, {count} problems"),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<(String, EvalReport)>,
}

/// Runs the ladder with cumulative stage prefixes, fresh init each time.
#[allow(clippy::too_many_arguments)]
pub fn ablation_run(
    model_cfg: crate::model::ModelConfig,
    init_seed: u64,
    base_config: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    vocab: &Vocabulary,
    eval_style: PromptStyle,
    opts: &EvalOptions,
) -> Result<AblationTable, EvalError> {
    let mut rows = Vec::new();
    let cs_cfg = CodeSwitchConfig {
        seed: base_config.seed,
        ..Default::default()
    };
    let max_rungs = base_config.stages.rungs();
    for rung in 1..=max_rungs {
        let mut cfg = base_config.clone();
        cfg.stages = StageFlags::prefix(rung);
        let init = ModelParams::init(model_cfg, init_seed)
            .map_err(crate::trainer::TrainError::Model)?;
        let out = run_pipeline(init, &cfg, train, vocab, |_| Ok(()))?;
        let (report, _) = evaluate(&out.params, vocab, test, eval_style, &cs_cfg, opts)?;
        rows.push((crate::trainer::STAGE_LABELS[rung - 1].to_string(), report));
    }
    Ok(AblationTable { rows })
}

/// Full pipeline once per translation-direction policy.
#[allow(clippy::too_many_arguments)]
pub fn direction_study(
    model_cfg: crate::model::ModelConfig,
    init_seed: u64,
    base_config: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    vocab: &Vocabulary,
    eval_style: PromptStyle,
    opts: &EvalOptions,
) -> Result<Vec<(String, EvalReport, PipelineOutcome)>, EvalError> {
    let cs_cfg = CodeSwitchConfig {
        seed: base_config.seed,
        ..Default::default()
    };
    let mut rows = Vec::new();
    for kind in DirectionKind::all() {
        let mut cfg = base_config.clone();
        cfg.random_cot_direction = kind;
        let init = ModelParams::init(model_cfg, init_seed)
            .map_err(crate::trainer::TrainError::Model)?;
        let out = run_pipeline(init, &cfg, train, vocab, |_| Ok(()))?;
        let (report, _) = evaluate(&out.params, vocab, test, eval_style, &cs_cfg, opts)?;
        rows.push((kind.name().to_string(), report, out));
    }
    Ok(rows)
}

/// Mean distinct reasoning paths for each sample count k.
#[allow(clippy::too_many_arguments)]
pub fn paths_study(
    params: &ModelParams,
    vocab: &Vocabulary,
    train: &Dataset,
    ks: &[usize],
    tau: f64,
    fraction: f64,
    max_new: usize,
    seed: u64,
) -> Result<Vec<(usize, f64, BTreeMap<u8, f64>)>, EvalError> {
    let cs_cfg = CodeSwitchConfig {
        seed,
        ..Default::default()
    };
    let mut rows = Vec::new();
    for &k in ks {
        let aug = msample_augment(
            params,
            vocab,
            train,
            PromptStyle::EnContext,
            &cs_cfg,
            k,
            tau,
            fraction,
            max_new,
            seed,
        )?;
        rows.push((k, aug.mean_distinct(), aug.per_language_distinct));
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

/// Serializes eval reports as one table: languages as columns (pivot first),
/// average last, one row per report label.
pub fn render_reports(reports: &[(String, EvalReport)], format: ReportFormat) -> String {
    let mut out = String::new();
    let columns: Vec<String> = reports
        .first()
        .map(|(_, r)| r.rows.iter().map(|(n, _)| n.clone()).collect())
        .unwrap_or_default();
    match format {
        ReportFormat::Csv => {
            out.push_str("label");
            for c in &columns {
                let _ = write!(out, ",{c}");
            }
            out.push_str(",average\n");
            for (label, r) in reports {
                out.push_str(label);
                for c in &columns {
                    let _ = write!(out, ",{:.6}", r.accuracy_of(c).unwrap_or(f64::NAN));
                }
                let _ = writeln!(out, ",{:.6}", r.average);
            }
        }
        ReportFormat::Markdown => {
            out.push_str("| label |");
            for c in &columns {
                let _ = write!(out, " {c} |");
            }
            out.push_str(" average |\n|---|");
            for _ in &columns {
                out.push_str("---|");
            }
            out.push_str("---|\n");
            for (label, r) in reports {
                let _ = write!(out, "| {label} |");
                for c in &columns {
                    let _ = write!(out, " {:.4} |", r.accuracy_of(c).unwrap_or(f64::NAN));
                }
                let _ = writeln!(out, " {:.4} |", r.average);
            }
        }
    }
    out
}

pub fn emit_report(
    reports: &[(String, EvalReport)],
    path: &Path,
    format: ReportFormat,
) -> Result<(), EvalError> {
    std::fs::write(path, render_reports(reports, format))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split(' ').map(String::from).collect()
    }

    #[test]
    fn extracts_paper_style_answers() {
        assert_eq!(
            extract_answer(&toks("blah . The answer is 600 .")),
            Some(Rational64::from_integer(600))
        );
        assert_eq!(
            extract_answer(&toks("The answer is 3.5 .")),
            Some(Rational64::new(7, 2))
        );
        assert_eq!(extract_answer(&toks("no cue here")), None);
    }

    #[test]
    fn last_cue_wins() {
        let t = toks("The answer is 1 . wait The answer is 2 .");
        assert_eq!(extract_answer(&t), Some(Rational64::from_integer(2)));
    }

    #[test]
    fn parses_signs_commas_and_decimals() {
        assert_eq!(parse_rational("1,234"), Some(Rational64::from_integer(1234)));
        assert_eq!(parse_rational("-7"), Some(Rational64::from_integer(-7)));
        assert_eq!(parse_rational("-2.25"), Some(Rational64::new(-9, 4)));
        assert_eq!(parse_rational("600."), Some(Rational64::from_integer(600)));
        assert_eq!(parse_rational("x"), None);
        assert_eq!(parse_rational(""), None);
    }

    #[test]
    fn approx_matching_tolerates_rounding() {
        let a = Some(Rational64::new(1, 3));
        let b = Some(Rational64::new(333333, 1000000));
        assert!(!answers_match(a, b, false));
        assert!(answers_match(a, b, true));
        assert!(!answers_match(None, a, true));
    }

    #[test]
    fn report_rendering_round_trips_csv() {
        let r = EvalReport {
            style: "en-context".into(),
            decode: "greedy".into(),
            rows: vec![("english".into(), 0.9), ("lang_abc".into(), 0.7)],
            average: 0.8,
            n_per_language: 10,
        };
        let csv = render_reports(&[("base".into(), r.clone())], ReportFormat::Csv);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "label,english,lang_abc,average");
        let data: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(data[0], "base");
        assert!((data[1].parse::<f64>().unwrap() - 0.9).abs() < 1e-9);
        assert!((data[3].parse::<f64>().unwrap() - r.average).abs() < 1e-9);
        // Empty list renders to an empty-bodied document.
        let empty = render_reports(&[], ReportFormat::Csv);
        assert_eq!(empty.lines().count(), 1);
    }

    #[test]
    fn markdown_has_languages_then_average() {
        let r = EvalReport {
            style: "en-context".into(),
            decode: "greedy".into(),
            rows: vec![("english".into(), 1.0)],
            average: 1.0,
            n_per_language: 1,
        };
        let md = render_reports(&[("row".into(), r)], ReportFormat::Markdown);
        assert!(md.starts_with("| label | english | average |"));
    }
}
