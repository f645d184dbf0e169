//! Exploratory learnability probe. Ignored by default; prints the accuracy
//! trajectory of a small SFT run so budgets can be sized.

use xling::corpus::{build_instruct_dataset, build_language_set, generate_problems, Split};
use xling::evalsuite::{evaluate, EvalOptions};
use xling::model::{build_vocab, ModelConfig, ModelParams};
use xling::switchboard::{CodeSwitchConfig, PromptStyle};
use xling::trainer::{make_example, sft_step, TrainConfig, Trainer, TrainingExample};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
#[ignore]
fn sft_accuracy_trajectory() {
    let k = 6;
    let set = build_language_set(k, 11, 1).unwrap();
    let train_problems = generate_problems(2000, 3, 10).unwrap();
    let test_problems = generate_problems(250, 1_000_003, 10).unwrap();
    let train = build_instruct_dataset(&train_problems, &set, 1, 7, Split::Train, 1).unwrap();
    let test = build_instruct_dataset(&test_problems, &set, 1, 7, Split::Test, 1).unwrap();
    let vocab = build_vocab(&[&train, &test]).unwrap();
    println!("vocab: {}", vocab.len());
    let cfg = ModelConfig::defaults(vocab.len());
    let params = ModelParams::init(cfg, 5).unwrap();
    let tc = TrainConfig {
        max_steps: 6000,
        batch_size: 4,
        peak_lr: 1e-3,
        seed: 9,
        ..Default::default()
    };
    let mut trainer = Trainer::new(params, &tc);
    let cs = CodeSwitchConfig::default();
    let examples: Vec<TrainingExample> = train
        .samples()
        .iter()
        .map(|s| make_example(&train, s, PromptStyle::EnContext, &cs, &vocab).unwrap())
        .collect();
    println!(
        "examples: {} mean len {:.0}",
        examples.len(),
        examples.iter().map(|e| e.total_len()).sum::<usize>() as f64 / examples.len() as f64
    );
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let opts = EvalOptions {
        limit: Some(30),
        ..Default::default()
    };
    let t0 = std::time::Instant::now();
    let mut at = examples.len();
    for step in 0..tc.max_steps {
        let mut batch = Vec::with_capacity(tc.batch_size);
        for _ in 0..tc.batch_size {
            if at >= examples.len() {
                order.shuffle(&mut rng);
                at = 0;
            }
            batch.push(examples[order[at]].clone());
            at += 1;
        }
        let loss = sft_step(&mut trainer, "base", &batch).unwrap();
        if (step + 1) % 500 == 0 {
            let (report, _) = evaluate(
                &trainer.params,
                &vocab,
                &test,
                PromptStyle::EnContext,
                &cs,
                &opts,
            )
            .unwrap();
            println!(
                "step {} loss {:.3} avg_acc {:.3} rows {:?} elapsed {:.0}s",
                step + 1,
                loss,
                report.average,
                report.rows,
                t0.elapsed().as_secs_f64()
            );
        }
    }
}
