//! Implementations of the five subcommands.

use std::path::{Path, PathBuf};

use crate::corpus::{
    build_instruct_dataset, build_language_set, generate_problems, Dataset, LanguageSet, Split,
};
use crate::evalsuite::{
    ablation_run, alignment_metric, direction_study, emit_report, evaluate, paths_study,
    EvalOptions, EvalReport, ReportFormat, TranscriptRecord,
};
use crate::model::{
    build_vocab, load_checkpoint, save_checkpoint, ModelParams, Vocabulary,
};
use crate::switchboard::CodeSwitchConfig;
use crate::trainer::{
    load_train_state, resume_pipeline, run_pipeline, save_train_state, MetricsRecord,
    PipelineOutcome, StageFlags, STAGE_LABELS,
};

use super::config::parse_style;
use super::workdir::Workdir;
use super::{CliError, RunConfig};

const TRAIN_JSONL: &str = "datasets/train.jsonl";
const TEST_JSONL: &str = "datasets/test.jsonl";
const LANGUAGES_JSON: &str = "datasets/languages.json";
const TRAIN_STATE: &str = "checkpoints/train_state.bin";

fn checkpoint_rel(label: &str) -> String {
    format!("checkpoints/{}.ckpt", label.trim_start_matches('+'))
}

fn cs_config(cfg: &RunConfig) -> CodeSwitchConfig {
    CodeSwitchConfig {
        seed: cfg.train.seed,
        ..Default::default()
    }
}

fn eval_options(cfg: &RunConfig, limit_override: Option<usize>) -> EvalOptions {
    let limit = limit_override.unwrap_or(cfg.eval.limit);
    EvalOptions {
        max_new: cfg.eval.max_new,
        limit: if limit == 0 { None } else { Some(limit) },
        approx: false,
    }
}

/// Maps a ladder stage name (or "all") onto the cumulative prefix flags.
fn parse_stages(name: &str) -> Result<StageFlags, CliError> {
    let rungs = match name {
        "base" => 1,
        "xicl" => 2,
        "msampling" => 3,
        "random-cot" => 4,
        "xdistill" | "all" => 5,
        other => {
            return Err(CliError::usage(format!(
                "unknown stage {other:?}; expected base|xicl|msampling|random-cot|xdistill|all"
            )))
        }
    };
    Ok(StageFlags::prefix(rungs))
}

fn load_language_set(wd: &Workdir) -> Result<LanguageSet, CliError> {
    let path = wd.root.join(LANGUAGES_JSON);
    let text = std::fs::read_to_string(&path).map_err(|_| {
        CliError::data(format!(
            "missing {}; run `xling gen` first",
            path.display()
        ))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::corrupt(format!("language manifest parse error: {e}")))
}

fn load_datasets(wd: &Workdir) -> Result<(Dataset, Dataset), CliError> {
    let set = load_language_set(wd)?;
    let read = |rel: &str, split: Split| -> Result<Dataset, CliError> {
        let path = wd.root.join(rel);
        if !path.exists() {
            return Err(CliError::data(format!(
                "missing {}; run `xling gen` first",
                path.display()
            )));
        }
        Ok(Dataset::read_jsonl(&path, set.clone(), split)?)
    };
    Ok((read(TRAIN_JSONL, Split::Train)?, read(TEST_JSONL, Split::Test)?))
}

fn build_eval_vocab(train: &Dataset, test: &Dataset) -> Result<Vocabulary, CliError> {
    Ok(build_vocab(&[train, test])?)
}

pub fn cmd_gen(cfg: &RunConfig, force: bool) -> Result<(), CliError> {
    let wd = Workdir::open(&cfg.paths.workdir)?;
    let _lock = wd.acquire_lock()?;
    let mut manifest = wd.manifest_for(&cfg.digest(), force)?;
    if force {
        for rel in [TRAIN_JSONL, TEST_JSONL, LANGUAGES_JSON] {
            if let Some(prior) = manifest.artifacts.get(rel) {
                eprintln!("note: replacing {rel} (prior sha256 {prior})");
            }
        }
    }

    let c = &cfg.corpus;
    let set = build_language_set(c.k, c.seed, c.high_resource)?;
    let train_problems = generate_problems(c.train_problems, c.seed, c.max_value)?;
    // Test ids occupy the tail of a longer id range so the splits stay
    // disjoint; a different seed keeps the contents independent.
    let test_seed = c.seed ^ 0x7e57;
    let all = generate_problems(c.train_problems + c.test_problems, test_seed, c.max_value)?;
    let test_problems = &all[c.train_problems..];

    let train = build_instruct_dataset(
        &train_problems,
        &set,
        c.b_demos,
        c.seed,
        Split::Train,
        c.contexts_per_sample,
    )?;
    let test = build_instruct_dataset(test_problems, &set, c.b_demos, c.seed, Split::Test, 1)?;

    let lang_path = wd.root.join(LANGUAGES_JSON);
    std::fs::write(
        &lang_path,
        serde_json::to_string_pretty(&set)
            .map_err(|e| CliError::io(format!("language manifest serialization: {e}")))?,
    )
    .map_err(|e| CliError::io(format!("cannot write language manifest: {e}")))?;
    let train_path = wd.root.join(TRAIN_JSONL);
    let test_path = wd.root.join(TEST_JSONL);
    train.write_jsonl(&train_path)?;
    test.write_jsonl(&test_path)?;
    for path in [&lang_path, &train_path, &test_path] {
        wd.record(&mut manifest, path)?;
    }
    wd.write_manifest(&manifest)?;
    println!(
        "generated {} languages, {} train samples, {} test samples in {}",
        set.k(),
        train.len(),
        test.len(),
        wd.root.display()
    );
    Ok(())
}

fn write_metrics_csv(metrics: &[MetricsRecord], path: &Path) -> Result<(), CliError> {
    let mut out = String::from("step,stage,loss,distill_loss,lr\n");
    for m in metrics {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.8}\n",
            m.step, m.stage, m.loss, m.distill_loss, m.lr
        ));
    }
    std::fs::write(path, out).map_err(|e| CliError::io(format!("cannot write metrics: {e}")))
}

pub fn cmd_train(cfg: &RunConfig, stages: &str, resume: bool) -> Result<(), CliError> {
    let wd = Workdir::open(&cfg.paths.workdir)?;
    let _lock = wd.acquire_lock()?;
    let mut manifest = wd.manifest_for(&cfg.digest(), false)?;
    let (train, test) = load_datasets(&wd)?;
    let vocab = build_eval_vocab(&train, &test)?;

    let mut train_cfg = cfg.train.clone();
    train_cfg.stages = parse_stages(stages)?;
    let cs_cfg = cs_config(cfg);
    let opts = eval_options(cfg, None);
    let eval_style = parse_style(&cfg.eval.style)?;

    let mut ladder: Vec<(String, EvalReport)> = Vec::new();
    let mut saved_paths: Vec<PathBuf> = Vec::new();
    let snapshot = |snap: &crate::trainer::RungSnapshot,
                    ladder: &mut Vec<(String, EvalReport)>,
                    saved: &mut Vec<PathBuf>|
     -> Result<(), CliError> {
        let ckpt = wd.root.join(checkpoint_rel(snap.label));
        save_checkpoint(&snap.trainer.params, &ckpt)?;
        let state_path = wd.root.join(TRAIN_STATE);
        save_train_state(
            &snap.trainer.to_state(snap.rungs_done, snap.augmentation, snap.expansion_log),
            &state_path,
        )?;
        let (report, _) = evaluate(
            &snap.trainer.params,
            &vocab,
            &test,
            eval_style,
            &cs_cfg,
            &opts,
        )?;
        println!(
            "rung {} ({}) done at step {}: avg acc {:.4}",
            snap.rungs_done, snap.label, snap.trainer.step, report.average
        );
        ladder.push((snap.label.to_string(), report));
        saved.push(ckpt);
        saved.push(state_path);
        Ok(())
    };

    let outcome: PipelineOutcome = if resume {
        let state_path = wd.root.join(TRAIN_STATE);
        if !state_path.exists() {
            return Err(CliError::data(format!(
                "no saved train state at {}; run without --resume first",
                state_path.display()
            )));
        }
        let state = load_train_state(&state_path)?;
        resume_pipeline(state, &train_cfg, &train, &vocab, |snap| {
            snapshot(snap, &mut ladder, &mut saved_paths).map_err(|e| {
                crate::trainer::TrainError::Io(std::io::Error::other(e.to_string()))
            })
        })?
    } else {
        let init = ModelParams::init(
            cfg.model.to_model_config(vocab.len()),
            cfg.train.seed,
        )?;
        run_pipeline(init, &train_cfg, &train, &vocab, |snap| {
            snapshot(snap, &mut ladder, &mut saved_paths).map_err(|e| {
                crate::trainer::TrainError::Io(std::io::Error::other(e.to_string()))
            })
        })?
    };

    let metrics_path = wd.reports().join("train_metrics.csv");
    write_metrics_csv(&outcome.metrics, &metrics_path)?;
    let ladder_csv = wd.reports().join("ladder.csv");
    let ladder_md = wd.reports().join("ladder.md");
    emit_report(&ladder, &ladder_csv, ReportFormat::Csv)?;
    emit_report(&ladder, &ladder_md, ReportFormat::Markdown)?;
    for path in saved_paths
        .iter()
        .chain([&metrics_path, &ladder_csv, &ladder_md])
    {
        wd.record(&mut manifest, path)?;
    }
    wd.write_manifest(&manifest)?;
    println!(
        "trained stages [{}] in {} steps; artifacts under {}",
        outcome.stages_run.join(", "),
        outcome.metrics.len(),
        wd.root.display()
    );
    Ok(())
}

/// Default checkpoint for read-only commands: the last enabled rung.
fn final_checkpoint(cfg: &RunConfig, wd: &Workdir) -> PathBuf {
    let label = STAGE_LABELS[cfg.train.stages.rungs() - 1];
    wd.root.join(checkpoint_rel(label))
}

fn load_params_for(
    path: &Path,
    vocab: &Vocabulary,
) -> Result<ModelParams, CliError> {
    if !path.exists() {
        return Err(CliError::data(format!(
            "missing checkpoint {}; run `xling train` first",
            path.display()
        )));
    }
    let params = load_checkpoint(path)?;
    if params.config.vocab_size != vocab.len() {
        return Err(CliError::incompatible(format!(
            "checkpoint vocabulary size {} does not match dataset vocabulary {}",
            params.config.vocab_size,
            vocab.len()
        )));
    }
    Ok(params)
}

pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    style: Option<&str>,
    limit: Option<usize>,
) -> Result<(), CliError> {
    let wd = Workdir::open(&cfg.paths.workdir)?;
    let _lock = wd.acquire_lock()?;
    let mut manifest = wd.manifest_for(&cfg.digest(), false)?;
    let (train, test) = load_datasets(&wd)?;
    let vocab = build_eval_vocab(&train, &test)?;
    let ckpt_path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| final_checkpoint(cfg, &wd));
    let params = load_params_for(&ckpt_path, &vocab)?;
    let style = parse_style(style.unwrap_or(&cfg.eval.style))?;
    let opts = eval_options(cfg, limit);
    let cs_cfg = cs_config(cfg);

    let (report, transcripts) = evaluate(&params, &vocab, &test, style, &cs_cfg, &opts)?;
    let tag = style.label().replace(' ', "-");
    let csv = wd.reports().join(format!("eval-{tag}.csv"));
    let md = wd.reports().join(format!("eval-{tag}.md"));
    let rows = vec![(tag.clone(), report.clone())];
    emit_report(&rows, &csv, ReportFormat::Csv)?;
    emit_report(&rows, &md, ReportFormat::Markdown)?;
    let transcript_path = wd.transcripts().join(format!("eval-{tag}.jsonl"));
    write_transcripts(&transcripts, &transcript_path)?;
    for path in [&csv, &md, &transcript_path] {
        wd.record(&mut manifest, path)?;
    }
    wd.write_manifest(&manifest)?;

    for (name, acc) in &report.rows {
        println!("{name}: {acc:.4}");
    }
    println!("average: {:.4} ({} queries/language)", report.average, report.n_per_language);
    Ok(())
}

fn write_transcripts(transcripts: &[TranscriptRecord], path: &Path) -> Result<(), CliError> {
    let mut out = String::new();
    for t in transcripts {
        out.push_str(
            &serde_json::to_string(t)
                .map_err(|e| CliError::io(format!("transcript serialization: {e}")))?,
        );
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| CliError::io(format!("cannot write transcripts: {e}")))
}

pub fn cmd_study(cfg: &RunConfig, kind: &str) -> Result<(), CliError> {
    let wd = Workdir::open(&cfg.paths.workdir)?;
    let _lock = wd.acquire_lock()?;
    let mut manifest = wd.manifest_for(&cfg.digest(), false)?;
    let (train, test) = load_datasets(&wd)?;
    let vocab = build_eval_vocab(&train, &test)?;
    let eval_style = parse_style(&cfg.eval.style)?;
    let opts = eval_options(cfg, None);
    let model_cfg = cfg.model.to_model_config(vocab.len());

    let mut written: Vec<PathBuf> = Vec::new();
    match kind {
        "ablation" => {
            let table = ablation_run(
                model_cfg,
                cfg.train.seed,
                &cfg.train,
                &train,
                &test,
                &vocab,
                eval_style,
                &opts,
            )?;
            let csv = wd.reports().join("study-ablation.csv");
            let md = wd.reports().join("study-ablation.md");
            emit_report(&table.rows, &csv, ReportFormat::Csv)?;
            emit_report(&table.rows, &md, ReportFormat::Markdown)?;
            written.extend([csv, md]);
        }
        "direction" => {
            let rows = direction_study(
                model_cfg,
                cfg.train.seed,
                &cfg.train,
                &train,
                &test,
                &vocab,
                eval_style,
                &opts,
            )?;
            let reports: Vec<(String, EvalReport)> = rows
                .iter()
                .map(|(name, report, _)| (name.clone(), report.clone()))
                .collect();
            let csv = wd.reports().join("study-direction.csv");
            let md = wd.reports().join("study-direction.md");
            emit_report(&reports, &csv, ReportFormat::Csv)?;
            emit_report(&reports, &md, ReportFormat::Markdown)?;
            written.extend([csv, md]);
        }
        "paths" => {
            let params = load_params_for(&final_checkpoint(cfg, &wd), &vocab)?;
            let rows = paths_study(
                &params,
                &vocab,
                &train,
                &[10, 20, 30, 50],
                cfg.train.msample_tau,
                cfg.train.msample_fraction,
                cfg.train.msample_max_new,
                cfg.train.seed,
            )?;
            let mut out = String::from("k,mean_distinct\n");
            for (k, mean, _) in &rows {
                out.push_str(&format!("{k},{mean:.6}\n"));
            }
            let csv = wd.reports().join("study-paths.csv");
            std::fs::write(&csv, out)
                .map_err(|e| CliError::io(format!("cannot write study: {e}")))?;
            written.push(csv);
        }
        "alignment" => {
            let params = load_params_for(&final_checkpoint(cfg, &wd), &vocab)?;
            let report = alignment_metric(&params, &vocab, &test, cfg.eval.probe_size)?;
            let path = wd.reports().join("study-alignment.json");
            std::fs::write(
                &path,
                serde_json::to_string_pretty(&report)
                    .map_err(|e| CliError::io(format!("alignment serialization: {e}")))?,
            )
            .map_err(|e| CliError::io(format!("cannot write study: {e}")))?;
            println!("mean pairwise cosine: {:.4}", report.mean_pairwise);
            written.push(path);
        }
        "datasize" => {
            let cs_cfg = cs_config(cfg);
            let mut reports: Vec<(String, EvalReport)> = Vec::new();
            for fraction in [0.2, 0.4, 0.6, 0.8, 1.0] {
                let n = ((cfg.corpus.train_problems as f64 * fraction) as usize)
                    .max(cfg.corpus.b_demos + 1);
                let problems =
                    generate_problems(n, cfg.corpus.seed, cfg.corpus.max_value)?;
                let subset = build_instruct_dataset(
                    &problems,
                    &train.language_set,
                    cfg.corpus.b_demos,
                    cfg.corpus.seed,
                    Split::Train,
                    cfg.corpus.contexts_per_sample,
                )?;
                let init = ModelParams::init(model_cfg, cfg.train.seed)?;
                let out = run_pipeline(init, &cfg.train, &subset, &vocab, |_| Ok(()))?;
                let (report, _) =
                    evaluate(&out.params, &vocab, &test, eval_style, &cs_cfg, &opts)?;
                reports.push((format!("{:.0}%", fraction * 100.0), report));
            }
            let csv = wd.reports().join("study-datasize.csv");
            let md = wd.reports().join("study-datasize.md");
            emit_report(&reports, &csv, ReportFormat::Csv)?;
            emit_report(&reports, &md, ReportFormat::Markdown)?;
            written.extend([csv, md]);
        }
        other => {
            return Err(CliError::usage(format!(
                "unknown study {other:?}; expected ablation|direction|paths|alignment|datasize"
            )))
        }
    }
    for path in &written {
        wd.record(&mut manifest, path)?;
        println!("wrote {}", path.display());
    }
    wd.write_manifest(&manifest)?;
    Ok(())
}

pub fn cmd_report(cfg: &RunConfig) -> Result<(), CliError> {
    let wd = Workdir::open(&cfg.paths.workdir)?;
    let manifest = wd.read_manifest()?.ok_or_else(|| {
        CliError::data("empty workdir; run `xling gen` and `xling train` first".to_string())
    })?;
    let mut out = String::from("# Run summary\n\n");
    out.push_str(&format!("- config hash: `{}`\n", manifest.config_hash));
    out.push_str(&format!("- tool version: {}\n", manifest.tool_version));
    out.push_str(&format!("- artifacts: {}\n\n", manifest.artifacts.len()));

    let mut sections: Vec<(String, PathBuf)> = Vec::new();
    for rel in manifest.artifacts.keys() {
        if rel.starts_with("reports/") && rel.ends_with(".md") {
            let name = rel
                .trim_start_matches("reports/")
                .trim_end_matches(".md")
                .to_string();
            sections.push((name, wd.root.join(rel)));
        }
    }
    sections.sort();
    for (name, path) in &sections {
        let Ok(body) = std::fs::read_to_string(path) else {
            continue;
        };
        out.push_str(&format!("## {name}\n\n{body}\n"));
    }
    if sections.is_empty() {
        out.push_str("_No report tables yet; run `xling train` or `xling study`._\n");
    }
    let summary = wd.reports().join("summary.md");
    std::fs::write(&summary, &out)
        .map_err(|e| CliError::io(format!("cannot write summary: {e}")))?;
    println!("wrote {}", summary.display());
    Ok(())
}
