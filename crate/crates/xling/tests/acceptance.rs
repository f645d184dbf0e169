//! Acceptance gate: one test per shipping criterion. Every test prints a
//! single `criterion N ... PASS` line once its assertions hold, so a full
//! run with `--nocapture` reads as a checklist.

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use xling::corpus::{
    build_instruct_dataset, build_language_set, generate_problems, translate, Dataset, LangId,
    Split,
};
use xling::evalsuite::{
    alignment_metric, evaluate, paths_study, render_reports, EvalOptions, EvalReport,
    ReportFormat,
};
use xling::model::{
    build_vocab, load_checkpoint, loss_and_grads, loss_only, save_checkpoint, BatchRow,
    ModelConfig, ModelError, ModelParams, Vocabulary,
};
use xling::switchboard::{
    code_switch, mix_seed, CodeSwitchConfig, CodeSwitchMode, PromptStyle,
};
use xling::trainer::{
    distill_loss, distill_loss_and_grads, make_example, random_cot_expand, run_pipeline,
    student_distill_loss, teacher_distributions, DirectionKind, ParallelPair, StageFlags,
    TrainConfig, TrainingExample,
};

// ---------------------------------------------------------------------------
// Shared desk run (criteria 5-8)

const DESK_K: usize = 6;
const DESK_HIGH: usize = 1;
const DESK_TRAIN_PROBLEMS: usize = 2000;
const DESK_TEST_PROBLEMS: usize = 250;
const DESK_MAX_VALUE: i64 = 10;
const DESK_B_DEMOS: usize = 1;
const DESK_SEED: u64 = 11;
const DESK_MAX_STEPS: usize = 4000;

struct DeskRun {
    train: Dataset,
    test: Dataset,
    vocab: Vocabulary,
    init: ModelParams,
    /// (stage label, params snapshot, EnContext eval) per completed rung.
    ladder: Vec<(String, ModelParams, EvalReport)>,
    elapsed_secs: f64,
}

fn desk_run() -> &'static DeskRun {
    static RUN: OnceLock<DeskRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let t0 = Instant::now();
        let set = build_language_set(DESK_K, DESK_SEED, DESK_HIGH).unwrap();
        let train_problems =
            generate_problems(DESK_TRAIN_PROBLEMS, DESK_SEED, DESK_MAX_VALUE).unwrap();
        let all = generate_problems(
            DESK_TRAIN_PROBLEMS + DESK_TEST_PROBLEMS,
            DESK_SEED ^ 0x7e57,
            DESK_MAX_VALUE,
        )
        .unwrap();
        let test_problems = &all[DESK_TRAIN_PROBLEMS..];
        let train = build_instruct_dataset(
            &train_problems,
            &set,
            DESK_B_DEMOS,
            DESK_SEED,
            Split::Train,
            1,
        )
        .unwrap();
        let test =
            build_instruct_dataset(test_problems, &set, DESK_B_DEMOS, DESK_SEED, Split::Test, 1)
                .unwrap();
        let vocab = build_vocab(&[&train, &test]).unwrap();
        let init = ModelParams::init(ModelConfig::defaults(vocab.len()), DESK_SEED).unwrap();
        let config = TrainConfig {
            max_steps: DESK_MAX_STEPS,
            seed: DESK_SEED,
            ..Default::default()
        };
        let cs_cfg = CodeSwitchConfig {
            seed: config.seed,
            ..Default::default()
        };
        let opts = EvalOptions::default();

        let mut ladder = Vec::new();
        run_pipeline(init.clone(), &config, &train, &vocab, |snap| {
            let (report, _) = evaluate(
                &snap.trainer.params,
                &vocab,
                &test,
                PromptStyle::EnContext,
                &cs_cfg,
                &opts,
            )
            .expect("rung evaluation");
            eprintln!(
                "desk rung {} ({}): avg {:.4} rows {:?} [{:.0}s]",
                snap.rungs_done,
                snap.label,
                report.average,
                report.rows,
                t0.elapsed().as_secs_f64()
            );
            ladder.push((snap.label.to_string(), snap.trainer.params.clone(), report));
            Ok(())
        })
        .unwrap();
        DeskRun {
            train,
            test,
            vocab,
            init,
            ladder,
            elapsed_secs: t0.elapsed().as_secs_f64(),
        }
    })
}

// ---------------------------------------------------------------------------
// Small fixtures

fn tiny_fixture(
    k: usize,
    problems: usize,
    b_demos: usize,
) -> (Dataset, Vocabulary) {
    let set = build_language_set(k, 11, 1).unwrap();
    let probs = generate_problems(problems, 3, 10).unwrap();
    let ds = build_instruct_dataset(&probs, &set, b_demos, 7, Split::Train, 1).unwrap();
    let vocab = build_vocab(&[&ds]).unwrap();
    (ds, vocab)
}

/// Relative error conditioned for central differences at eps = 1e-3: the
/// truncation floor is about eps^2 * |f'''| ~ 1e-4, so coordinates whose
/// gradient sits below ~1e-2 cannot be resolved more finely at that step
/// size; the additive term keeps the bound meaningful instead of vacuous.
fn rel_err(fd: f64, an: f64) -> f64 {
    (fd - an).abs() / (fd.abs() + an.abs() + 1e-2)
}

// ---------------------------------------------------------------------------
// 1. Finite-difference gradient oracle

#[test]
fn criterion_1_gradients_match_finite_differences() {
    let t0 = Instant::now();
    let (ds, vocab) = tiny_fixture(2, 8, 0);
    let cfg = ModelConfig {
        layers: 2,
        model_dim: 16,
        heads: 2,
        ffn_dim: 32,
        context_len: 128,
        vocab_size: vocab.len(),
    };
    let params = ModelParams::init(cfg, 5).unwrap();
    let cs = CodeSwitchConfig::default();
    let pivot = ds.language_set.pivot_id;
    let other = LangId(1);

    let plain: Vec<TrainingExample> = ds.samples()[..2]
        .iter()
        .map(|s| make_example(&ds, s, PromptStyle::EnContext, &cs, &vocab).unwrap())
        .collect();
    let rows: Vec<BatchRow> = plain.iter().map(|e| e.batch_row()).collect();

    let low_sample = ds.by_language(other).next().unwrap();
    let high_sample = ds.lookup(pivot, low_sample.problem_id).unwrap();
    let low = make_example(&ds, low_sample, PromptStyle::EnContext, &cs, &vocab).unwrap();
    let high = make_example(&ds, high_sample, PromptStyle::EnContext, &cs, &vocab).unwrap();
    let pair = ParallelPair::new(high, low).unwrap();
    // The teacher side of Eq. 3 is a constant: fix it at the unperturbed
    // parameters so both the analytic and FD sides differentiate the same
    // function of the student parameters.
    let teacher = teacher_distributions(&params, &pair.high).unwrap();
    let beta = 0.3;

    let lx_loss = |p: &ModelParams| loss_only(p, &rows).unwrap();
    let combined_loss = |p: &ModelParams| {
        loss_only(p, &rows).unwrap()
            + beta * student_distill_loss(p, &pair.low, &teacher).unwrap()
    };

    let (_, grads_lx) = loss_and_grads(&params, &rows).unwrap();
    let (_, mut grads_combined) = loss_and_grads(&params, &rows).unwrap();
    distill_loss_and_grads(
        &params,
        std::slice::from_ref(&pair),
        beta,
        &mut grads_combined,
    )
    .unwrap();

    let eps = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut checked = 0usize;
    let cases: [(&dyn Fn(&ModelParams) -> f64, &[xling::model::Tensor]); 2] = [
        (&lx_loss, &grads_lx),
        (&combined_loss, &grads_combined),
    ];
    for (loss_fn, grads) in cases {
        for b in 0..params.blocks.len() {
            let len = params.blocks[b].len();
            let n = len.min(20);
            let mut picked: Vec<usize> = if len <= 20 {
                (0..len).collect()
            } else {
                (0..n).map(|_| rng.gen_range(0..len)).collect()
            };
            picked.sort_unstable();
            picked.dedup();
            for i in picked {
                let fd_at = |eps: f64| {
                    let mut p = params.clone();
                    p.blocks[b].data[i] += eps;
                    let up = loss_fn(&p);
                    p.blocks[b].data[i] -= 2.0 * eps;
                    let down = loss_fn(&p);
                    (up - down) / (2.0 * eps)
                };
                let fd = fd_at(eps);
                let an = grads[b].data[i];
                // A coordinate whose +-eps interval straddles a ReLU kink
                // has O(eps) FD error no matter how exact the gradient is;
                // re-screen such coordinates at a smaller step, where a
                // genuinely wrong gradient still fails.
                let ok = rel_err(fd, an) < 1e-2 || rel_err(fd_at(1e-5), an) < 1e-2;
                assert!(
                    ok,
                    "block {b} ({}) coord {i}: fd {fd} vs analytic {an}",
                    params.blocks[b].name
                );
                checked += 1;
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 60.0, "gradient check took {secs:.1}s");
    println!(
        "criterion 1 (finite-difference gradients, {checked} coords, {secs:.1}s): PASS"
    );
}

// ---------------------------------------------------------------------------
// 2. Distillation identities

#[test]
fn criterion_2_distillation_identities() {
    let v = 41;
    // Matching one-hots: zero loss.
    let one_hots: Vec<Vec<f64>> = (0..7)
        .map(|i| {
            let mut row = vec![0.0; v];
            row[i % v] = 1.0;
            row
        })
        .collect();
    let mask = vec![true; one_hots.len()];
    let zero = distill_loss(&one_hots, &one_hots, &mask).unwrap();
    assert!(zero.abs() < 1e-6, "one-hot identity: {zero}");

    // Uniform teacher and student: ln |V|.
    let uniform = vec![vec![1.0 / v as f64; v]; 5];
    let mask = vec![true; 5];
    let lnv = distill_loss(&uniform, &uniform, &mask).unwrap();
    assert!((lnv - (v as f64).ln()).abs() < 1e-6, "uniform identity: {lnv}");

    // Gibbs: cross-entropy >= teacher entropy on 1000 random pairs.
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let random_dist = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut row: Vec<f64> = (0..v).map(|_| rng.gen_range(1e-4..1.0f64)).collect();
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= s);
        row
    };
    for trial in 0..1000 {
        let p_high = vec![random_dist(&mut rng)];
        let p_low = vec![random_dist(&mut rng)];
        let mask = vec![true];
        let ld = distill_loss(&p_high, &p_low, &mask).unwrap();
        let entropy: f64 = -p_high[0].iter().map(|p| p * p.ln()).sum::<f64>();
        assert!(ld >= entropy - 1e-6, "Gibbs violated on trial {trial}: {ld} < {entropy}");
    }
    println!("criterion 2 (distillation identities, 1000 Gibbs pairs): PASS");
}

// ---------------------------------------------------------------------------
// 3. Code-switch statistics

#[test]
fn criterion_3_code_switch_alpha() {
    let (ds, _vocab) = tiny_fixture(2, 1000, 0);
    let pivot = ds.language_set.pivot_id;
    let other = LangId(1);
    let pairs: Vec<(&_, &_)> = ds
        .by_language(pivot)
        .map(|s| (s, ds.lookup(other, s.problem_id).unwrap()))
        .collect();

    let mut means = Vec::new();
    for mode in [
        CodeSwitchMode::SourceWithTargetTokens,
        CodeSwitchMode::TargetWithSourceTokens,
    ] {
        let mut total = 0.0;
        let mut count = 0usize;
        for round in 0..10 {
            for (src, tgt) in &pairs {
                let cfg = CodeSwitchConfig {
                    replace_prob: 0.8,
                    mix_fraction: 0.5,
                    mode,
                    seed: mix_seed(99, round, src.problem_id as u64),
                };
                let cs = code_switch(&src.query, &tgt.query, &cfg).unwrap();
                total += cs.realized_alpha;
                count += 1;
            }
        }
        assert!(count >= 10_000, "only {count} sequences");
        means.push(total / count as f64);
    }
    // Analytic expectations: 1 - 0.8*0.5 = 0.6 and 0.8*0.5 = 0.4.
    assert!(
        (means[0] - 0.6).abs() <= 0.02,
        "mean alpha {} outside 0.60 +- 0.02",
        means[0]
    );
    assert!(
        means[0] > 0.5 && means[1] < 0.5,
        "regimes not on opposite sides of 0.5: {means:?}"
    );
    println!(
        "criterion 3 (code-switch alpha {:.4} / {:.4} over 10k+ sequences): PASS",
        means[0], means[1]
    );
}

// ---------------------------------------------------------------------------
// 4. Random-CoT direction law and gold translations

/// Expected candidate set per policy, restated from the policy definitions
/// independently of the trait implementations.
fn expected_candidates(
    kind: DirectionKind,
    set: &xling::corpus::LanguageSet,
    from: LangId,
) -> Vec<LangId> {
    let pivot = set.pivot_id;
    let high: Vec<LangId> = set.high_resource_ids.clone();
    let is_high = high.contains(&from);
    let all_others: Vec<LangId> = set.ids().filter(|id| *id != from).collect();
    match kind {
        DirectionKind::AllToEn => {
            if from == pivot {
                vec![]
            } else {
                vec![pivot]
            }
        }
        DirectionKind::LowToEnHighToHigh => {
            if is_high {
                high.iter().copied().filter(|id| *id != from).collect()
            } else {
                vec![pivot]
            }
        }
        DirectionKind::AllToAll => all_others,
        DirectionKind::AllToHigh => high.iter().copied().filter(|id| *id != from).collect(),
    }
}

#[test]
fn criterion_4_direction_law_and_gold_translations() {
    let set = build_language_set(5, 11, 2).unwrap();
    let problems = generate_problems(2500, 3, 10).unwrap();
    let ds = build_instruct_dataset(&problems, &set, 0, 7, Split::Train, 1).unwrap();
    let vocab = build_vocab(&[&ds]).unwrap();
    let cs = CodeSwitchConfig::default();
    let samples: Vec<&_> = ds.samples().iter().collect();

    for kind in DirectionKind::all() {
        let policy = kind.policy();
        let (examples, drawn) = random_cot_expand(
            &ds,
            &samples,
            PromptStyle::EnContext,
            &cs,
            &vocab,
            policy.as_ref(),
            kind.name().len() as u64,
        )
        .unwrap();
        assert_eq!(examples.len(), drawn.len());
        assert!(drawn.len() >= 10_000, "{}: only {} draws", kind.name(), drawn.len());

        // Expected counts under the policy's uniform law.
        let mut expected: BTreeMap<u8, f64> = BTreeMap::new();
        let mut observed: BTreeMap<u8, usize> = BTreeMap::new();
        let mut di = 0usize;
        for s in &samples {
            let cands = expected_candidates(kind, &set, s.query.language_id);
            if cands.is_empty() {
                continue;
            }
            for c in &cands {
                *expected.entry(c.0).or_insert(0.0) += 1.0 / cands.len() as f64;
            }
            assert!(
                cands.contains(&drawn[di]),
                "{}: drew {} outside the law for source {}",
                kind.name(),
                drawn[di],
                s.query.language_id
            );
            *observed.entry(drawn[di].0).or_insert(0) += 1;
            di += 1;
        }
        assert_eq!(di, drawn.len());

        let cells: Vec<u8> = expected.keys().copied().collect();
        if cells.len() > 1 {
            let stat: f64 = cells
                .iter()
                .map(|c| {
                    let e = expected[c];
                    let o = *observed.get(c).unwrap_or(&0) as f64;
                    (o - e) * (o - e) / e
                })
                .sum();
            let chi = ChiSquared::new((cells.len() - 1) as f64).unwrap();
            let p = 1.0 - chi.cdf(stat);
            assert!(p > 0.01, "{}: chi-square p = {p:.5} (stat {stat:.2})", kind.name());
        }

        // Every translation segment equals the gold translation.
        for (ex, lk) in examples.iter().zip(&drawn) {
            let sample = ds.lookup(ex.language_id, ex.problem_id).unwrap();
            let gold = translate(&sample.query, set.language(*lk).unwrap(), &set).unwrap();
            let gold_ids = vocab.encode(&gold.tokens).unwrap();
            assert_eq!(ex.translation_segment(), &gold_ids[..], "{}", kind.name());
        }
    }
    println!("criterion 4 (direction law chi-square + gold translation segments): PASS");
}

// ---------------------------------------------------------------------------
// 5. End-to-end desk run

#[test]
fn criterion_5_desk_run_accuracy_and_ladder_shape() {
    let run = desk_run();
    assert_eq!(run.ladder.len(), 5);
    assert!(
        run.elapsed_secs < 1800.0,
        "desk run took {:.0}s",
        run.elapsed_secs
    );
    let final_avg = run.ladder.last().unwrap().2.average;
    assert!(final_avg >= 0.85, "final average accuracy {final_avg:.4}");
    let accs: Vec<f64> = run.ladder.iter().map(|(_, _, r)| r.average).collect();
    for w in accs.windows(2) {
        assert!(
            w[1] >= w[0] - 0.02,
            "ladder dips beyond tolerance: {accs:?}"
        );
    }
    println!(
        "criterion 5 (desk run {:.0}s, ladder {:?}, final {:.4}): PASS",
        run.elapsed_secs,
        accs.iter().map(|a| (a * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
        final_avg
    );
}

// ---------------------------------------------------------------------------
// 6. Cross-lingual gap halves

#[test]
fn criterion_6_cross_lingual_gap_halves() {
    let run = desk_run();
    let gap = |r: &EvalReport| -> f64 {
        let pivot = r.rows.first().map(|(_, a)| *a).unwrap();
        pivot - r.worst()
    };
    let base = &run.ladder.first().unwrap().2;
    let full = &run.ladder.last().unwrap().2;
    let base_gap = gap(base);
    let full_gap = gap(full);
    assert!(
        full_gap <= 0.5 * base_gap,
        "gap {full_gap:.4} vs base {base_gap:.4}"
    );
    println!(
        "criterion 6 (gap {:.4} -> {:.4}): PASS",
        base_gap, full_gap
    );
}

// ---------------------------------------------------------------------------
// 7. Distinct-path monotonicity

#[test]
fn criterion_7_distinct_paths_monotone_in_k() {
    let run = desk_run();
    let params = &run.ladder.last().unwrap().1;
    let rows = paths_study(
        params,
        &run.vocab,
        &run.train,
        &[10, 20, 30, 50],
        0.7,
        0.005,
        48,
        DESK_SEED,
    )
    .unwrap();
    let means: Vec<f64> = rows.iter().map(|(_, m, _)| *m).collect();
    for w in means.windows(2) {
        assert!(w[1] >= w[0], "distinct paths not monotone: {means:?}");
    }
    println!("criterion 7 (distinct paths {means:?} for k=10/20/30/50): PASS");
}

// ---------------------------------------------------------------------------
// 8. Representation alignment rises

#[test]
fn criterion_8_alignment_improves_over_init() {
    let run = desk_run();
    let before = alignment_metric(&run.init, &run.vocab, &run.test, 250).unwrap();
    let after = alignment_metric(
        &run.ladder.last().unwrap().1,
        &run.vocab,
        &run.test,
        250,
    )
    .unwrap();
    assert!(
        after.mean_pairwise > before.mean_pairwise + 0.05,
        "alignment {:.4} -> {:.4}",
        before.mean_pairwise,
        after.mean_pairwise
    );
    println!(
        "criterion 8 (alignment {:.4} -> {:.4}, probe 250): PASS",
        before.mean_pairwise, after.mean_pairwise
    );
}

// ---------------------------------------------------------------------------
// 9. Determinism and persistence

#[test]
fn criterion_9_determinism_and_persistence() {
    let (ds, _) = tiny_fixture(3, 20, 1);
    let tc = TrainConfig {
        max_steps: 20,
        epochs: 2,
        stages: StageFlags::all(),
        seed: 13,
        ..Default::default()
    };
    let cs = CodeSwitchConfig {
        seed: tc.seed,
        ..Default::default()
    };

    // Two identical full runs: byte-identical metrics and reports. The
    // evaluation here runs on the training corpus re-read as a test split
    // to keep the fixture small.
    let test_probs = generate_problems(26, 1009, 10).unwrap();
    let test = build_instruct_dataset(
        &test_probs[20..],
        &ds.language_set,
        1,
        7,
        Split::Test,
        1,
    )
    .unwrap();
    let vocab = build_vocab(&[&ds, &test]).unwrap();
    let cfg = ModelConfig {
        layers: 2,
        model_dim: 32,
        heads: 2,
        ffn_dim: 64,
        context_len: 256,
        vocab_size: vocab.len(),
    };
    let mut artifacts = Vec::new();
    for _ in 0..2 {
        let init = ModelParams::init(cfg, tc.seed).unwrap();
        let out = run_pipeline(init, &tc, &ds, &vocab, |_| Ok(())).unwrap();
        let metrics_json = serde_json::to_string(&out.metrics).unwrap();
        let (report, _) = evaluate(
            &out.params,
            &vocab,
            &test,
            PromptStyle::EnContext,
            &cs,
            &EvalOptions::default(),
        )
        .unwrap();
        let rendered = render_reports(
            &[("full".to_string(), report)],
            ReportFormat::Csv,
        );
        artifacts.push((metrics_json, rendered, out.params));
    }
    assert_eq!(artifacts[0].0, artifacts[1].0, "metrics differ between runs");
    assert_eq!(artifacts[0].1, artifacts[1].1, "reports differ between runs");

    // Checkpoint round trip is bit-exact at storage precision.
    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("a.ckpt");
    let p2 = dir.path().join("b.ckpt");
    save_checkpoint(&artifacts[0].2, &p1).unwrap();
    let loaded = load_checkpoint(&p1).unwrap();
    save_checkpoint(&loaded, &p2).unwrap();
    let b1 = std::fs::read(&p1).unwrap();
    let b2 = std::fs::read(&p2).unwrap();
    assert_eq!(b1, b2, "checkpoint round trip is not bit-exact");

    // Corruption is detected.
    let mut corrupted = b1.clone();
    let mid = corrupted.len() / 2;
    corrupted[mid] ^= 0x40;
    std::fs::write(&p2, &corrupted).unwrap();
    match load_checkpoint(&p2) {
        Err(ModelError::Corruption(_)) => {}
        other => panic!("corruption not detected: {other:?}"),
    }
    println!("criterion 9 (determinism, round trip, corruption detection): PASS");
}
