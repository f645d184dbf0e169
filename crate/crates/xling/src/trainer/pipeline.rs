//! Stage ladder orchestration and the optimizer-step loop.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, InstructSample, LangId};
use crate::model::{loss_and_grads, ModelParams, Vocabulary};
use crate::switchboard::{mix_seed, CodeSwitchConfig, PromptStyle};

use super::direction::DirectionKind;
use super::distill::combined_step;
use super::example::{make_example, random_cot_expand, ParallelPair, TrainingExample};
use super::msample::{msample_augment, AugmentedDataset};
use super::optim::{Adam, LrSchedule};
use super::state::{TrainState, TrainStateMeta};
use super::TrainError;

/// Cumulative ladder switches; later stages require the earlier ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageFlags {
    pub xicl: bool,
    pub msampling: bool,
    pub random_cot: bool,
    pub xdistill: bool,
}

impl StageFlags {
    pub fn all() -> Self {
        StageFlags {
            xicl: true,
            msampling: true,
            random_cot: true,
            xdistill: true,
        }
    }

    /// Number of ladder rungs this prefix enables (1 = base SFT only).
    pub fn rungs(&self) -> usize {
        1 + [self.xicl, self.msampling, self.random_cot, self.xdistill]
            .iter()
            .filter(|f| **f)
            .count()
    }

    pub fn is_prefix(&self) -> bool {
        let seq = [self.xicl, self.msampling, self.random_cot, self.xdistill];
        seq.windows(2).all(|w| w[0] || !w[1])
    }

    /// The prefix enabling exactly `rungs` ladder stages.
    pub fn prefix(rungs: usize) -> Self {
        StageFlags {
            xicl: rungs >= 2,
            msampling: rungs >= 3,
            random_cot: rungs >= 4,
            xdistill: rungs >= 5,
        }
    }
}

pub const STAGE_LABELS: [&str; 5] = ["base", "+xicl", "+msampling", "+random-cot", "+xdistill"];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Total optimizer-step budget, split evenly across enabled rungs.
    pub max_steps: usize,
    pub batch_size: usize,
    /// Caps passes over the training data within each rung.
    pub epochs: usize,
    pub peak_lr: f64,
    pub warmup_frac: f64,
    pub final_lr_frac: f64,
    pub stages: StageFlags,
    pub beta: f64,
    pub random_cot_direction: DirectionKind,
    pub msample_k: usize,
    pub msample_tau: f64,
    /// Fraction of training queries sampled during augmentation.
    pub msample_fraction: f64,
    pub msample_max_new: usize,
    /// Fraction of batch examples given a translate-then-answer companion.
    pub random_cot_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_steps: 600,
            batch_size: 4,
            epochs: 3,
            peak_lr: 1e-3,
            warmup_frac: 0.03,
            final_lr_frac: 0.1,
            stages: StageFlags::all(),
            beta: 0.3,
            random_cot_direction: DirectionKind::AllToHigh,
            msample_k: 4,
            msample_tau: 0.7,
            msample_fraction: 0.05,
            msample_max_new: 64,
            random_cot_fraction: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.beta < 0.0 {
            return Err(TrainError::Config("beta must be >= 0".into()));
        }
        if !self.stages.is_prefix() {
            return Err(TrainError::Config(
                "stage flags must form a ladder prefix (xicl <- msampling <- random-cot <- xdistill)"
                    .into(),
            ));
        }
        if self.batch_size == 0 || self.max_steps == 0 {
            return Err(TrainError::Config("batch size and steps must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub stage: String,
    pub loss: f64,
    pub distill_loss: f64,
    pub lr: f64,
}

pub struct Trainer {
    pub params: ModelParams,
    pub opt: Adam,
    pub schedule: LrSchedule,
    pub step: usize,
    pub metrics: Vec<MetricsRecord>,
}

impl Trainer {
    pub fn new(params: ModelParams, config: &TrainConfig) -> Self {
        let opt = Adam::new(&params);
        let schedule = LrSchedule::new(
            config.peak_lr,
            config.warmup_frac,
            config.final_lr_frac,
            config.max_steps,
        );
        Trainer {
            params,
            opt,
            schedule,
            step: 0,
            metrics: Vec::new(),
        }
    }

    /// Full-precision snapshot for interrupt/resume.
    pub fn to_state(
        &self,
        rungs_done: usize,
        augmentation: &Option<AugmentedDataset>,
        expansion_log: &[LangId],
    ) -> TrainState {
        let (m, v, t) = self.opt.state();
        TrainState {
            params: self.params.clone(),
            adam_m: m.to_vec(),
            adam_v: v.to_vec(),
            meta: TrainStateMeta {
                step: self.step,
                adam_t: t,
                rungs_done,
                metrics: self.metrics.clone(),
                augmentation: augmentation.clone(),
                expansion_log: expansion_log.to_vec(),
            },
        }
    }

    pub fn from_state(state: TrainState, config: &TrainConfig) -> Self {
        let opt = Adam::restore(&state.params, state.adam_m, state.adam_v, state.meta.adam_t);
        let schedule = LrSchedule::new(
            config.peak_lr,
            config.warmup_frac,
            config.final_lr_frac,
            config.max_steps,
        );
        Trainer {
            params: state.params,
            opt,
            schedule,
            step: state.meta.step,
            metrics: state.meta.metrics,
        }
    }
}

/// What the per-rung callback sees after each completed ladder stage.
pub struct RungSnapshot<'a> {
    pub label: &'a str,
    pub rungs_done: usize,
    pub trainer: &'a Trainer,
    pub augmentation: &'a Option<AugmentedDataset>,
    pub expansion_log: &'a [LangId],
}

/// One optimizer step on the masked NLL of `batch`.
pub fn sft_step(
    trainer: &mut Trainer,
    stage: &str,
    batch: &[TrainingExample],
) -> Result<f64, TrainError> {
    let rows: Vec<_> = batch.iter().map(|e| e.batch_row()).collect();
    let (loss, grads) = loss_and_grads(&trainer.params, &rows)?;
    let lr = trainer.schedule.lr_at(trainer.step);
    trainer.opt.step(&mut trainer.params, &grads, lr);
    trainer.metrics.push(MetricsRecord {
        step: trainer.step,
        stage: stage.to_string(),
        loss,
        distill_loss: 0.0,
        lr,
    });
    trainer.step += 1;
    Ok(loss)
}

pub struct PipelineOutcome {
    pub params: ModelParams,
    pub metrics: Vec<MetricsRecord>,
    pub stages_run: Vec<String>,
    pub augmentation: Option<AugmentedDataset>,
    /// Intermediate languages drawn by the expansion stage, in draw order.
    pub expansion_log: Vec<LangId>,
}

struct StagePlan {
    label: &'static str,
    steps: usize,
    style: PromptStyle,
    use_augmented: bool,
    expand: bool,
    distill: bool,
    msample_first: bool,
}

fn plan_stages(config: &TrainConfig) -> Vec<StagePlan> {
    let rungs = config.stages.rungs();
    let per = config.max_steps / rungs;
    let mut plans = Vec::with_capacity(rungs);
    for r in 0..rungs {
        let steps = if r == rungs - 1 {
            config.max_steps - per * (rungs - 1)
        } else {
            per
        };
        let style = if r >= 1 {
            PromptStyle::CodeSwitchContext
        } else {
            PromptStyle::EnContext
        };
        plans.push(StagePlan {
            label: STAGE_LABELS[r],
            steps,
            style,
            use_augmented: r >= 2,
            expand: r >= 3,
            distill: r >= 4,
            msample_first: r == 2,
        });
    }
    plans
}

/// Runs the enabled ladder prefix in order. `snapshot` is called after each
/// rung completes.
pub fn run_pipeline(
    init: ModelParams,
    config: &TrainConfig,
    dataset: &Dataset,
    vocab: &Vocabulary,
    snapshot: impl FnMut(&RungSnapshot) -> Result<(), TrainError>,
) -> Result<PipelineOutcome, TrainError> {
    let trainer = Trainer::new(init, config);
    run_rungs(trainer, 0, None, Vec::new(), config, dataset, vocab, snapshot)
}

/// Continues a pipeline from a persisted train state; the metrics stream
/// picks up exactly where the saved run left off.
pub fn resume_pipeline(
    state: TrainState,
    config: &TrainConfig,
    dataset: &Dataset,
    vocab: &Vocabulary,
    snapshot: impl FnMut(&RungSnapshot) -> Result<(), TrainError>,
) -> Result<PipelineOutcome, TrainError> {
    let rungs_done = state.meta.rungs_done;
    let augmentation = state.meta.augmentation.clone();
    let expansion_log = state.meta.expansion_log.clone();
    let trainer = Trainer::from_state(state, config);
    run_rungs(
        trainer,
        rungs_done,
        augmentation,
        expansion_log,
        config,
        dataset,
        vocab,
        snapshot,
    )
}

#[allow(clippy::too_many_arguments)]
fn run_rungs(
    mut trainer: Trainer,
    rungs_done: usize,
    mut augmentation: Option<AugmentedDataset>,
    mut expansion_log: Vec<LangId>,
    config: &TrainConfig,
    dataset: &Dataset,
    vocab: &Vocabulary,
    mut snapshot: impl FnMut(&RungSnapshot) -> Result<(), TrainError>,
) -> Result<PipelineOutcome, TrainError> {
    config.validate()?;
    if config.stages.xdistill
        && !dataset
            .samples()
            .iter()
            .any(|s| s.query.language_id == dataset.language_set.pivot_id)
    {
        return Err(TrainError::Config(
            "distillation requires pivot-language parallel data".into(),
        ));
    }
    let cs_cfg = CodeSwitchConfig {
        seed: config.seed,
        ..Default::default()
    };
    let policy = config.random_cot_direction.policy();
    let mut stages_run = Vec::new();

    for (rung, plan) in plan_stages(config).into_iter().enumerate() {
        if rung < rungs_done {
            stages_run.push(plan.label.to_string());
            continue;
        }
        if plan.msample_first {
            augmentation = Some(msample_augment(
                &trainer.params,
                vocab,
                dataset,
                plan.style,
                &cs_cfg,
                config.msample_k,
                config.msample_tau,
                config.msample_fraction,
                config.msample_max_new,
                mix_seed(config.seed, 0xa6, 0),
            )?);
        }
        let extras: &[TrainingExample] = if plan.use_augmented {
            augmentation.as_ref().map(|a| a.extras.as_slice()).unwrap_or(&[])
        } else {
            &[]
        };
        run_stage(
            &mut trainer,
            &plan,
            config,
            dataset,
            vocab,
            &cs_cfg,
            extras,
            policy.as_ref(),
            &mut expansion_log,
        )?;
        stages_run.push(plan.label.to_string());
        snapshot(&RungSnapshot {
            label: plan.label,
            rungs_done: rung + 1,
            trainer: &trainer,
            augmentation: &augmentation,
            expansion_log: &expansion_log,
        })?;
    }

    Ok(PipelineOutcome {
        params: trainer.params,
        metrics: trainer.metrics,
        stages_run,
        augmentation,
        expansion_log,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    trainer: &mut Trainer,
    plan: &StagePlan,
    config: &TrainConfig,
    dataset: &Dataset,
    vocab: &Vocabulary,
    cs_cfg: &CodeSwitchConfig,
    extras: &[TrainingExample],
    policy: &dyn super::direction::DirectionPolicy,
    expansion_log: &mut Vec<LangId>,
) -> Result<(), TrainError> {
    let n_base = dataset.len();
    let n_total = n_base + extras.len();
    if n_total == 0 {
        return Err(TrainError::Config("empty training dataset".into()));
    }
    let steps_per_epoch = n_total.div_ceil(config.batch_size);
    let budget = plan.steps.min(config.epochs * steps_per_epoch);
    let stage_seed = mix_seed(config.seed, plan.label.len() as u64, trainer.step as u64);
    let pivot = dataset.language_set.pivot_id;

    let mut done = 0usize;
    let mut epoch = 0u64;
    while done < budget {
        let mut order: Vec<usize> = (0..n_total).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(stage_seed, epoch, 1));
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            if done >= budget {
                break;
            }
            let mut batch: Vec<TrainingExample> = Vec::with_capacity(chunk.len() * 2);
            let mut batch_samples: Vec<&InstructSample> = Vec::new();
            for &idx in chunk {
                if idx < n_base {
                    let sample = &dataset.samples()[idx];
                    batch.push(make_example(dataset, sample, plan.style, cs_cfg, vocab)?);
                    batch_samples.push(sample);
                } else {
                    batch.push(extras[idx - n_base].clone());
                }
            }
            if plan.expand && config.random_cot_fraction > 0.0 {
                let mut pick_rng =
                    ChaCha8Rng::seed_from_u64(mix_seed(stage_seed, epoch, 2 + done as u64));
                let picked: Vec<&InstructSample> = batch_samples
                    .iter()
                    .filter(|_| pick_rng.gen_bool(config.random_cot_fraction.clamp(0.0, 1.0)))
                    .copied()
                    .collect();
                let (companions, drawn) = random_cot_expand(
                    dataset,
                    &picked,
                    plan.style,
                    cs_cfg,
                    vocab,
                    policy,
                    mix_seed(config.seed, 0xc0, epoch),
                )?;
                expansion_log.extend(drawn);
                batch.extend(companions);
            }
            if plan.distill && config.beta > 0.0 {
                let mut pairs = Vec::new();
                for sample in &batch_samples {
                    if sample.query.language_id == pivot {
                        continue;
                    }
                    let Some(high_sample) = dataset.lookup(pivot, sample.problem_id) else {
                        continue;
                    };
                    let low = make_example(dataset, sample, plan.style, cs_cfg, vocab)?;
                    let high = make_example(dataset, high_sample, plan.style, cs_cfg, vocab)?;
                    pairs.push(ParallelPair::new(high, low)?);
                }
                let lr = trainer.schedule.lr_at(trainer.step);
                let (lx, ld) = combined_step(
                    &mut trainer.params,
                    &mut trainer.opt,
                    lr,
                    &batch,
                    &pairs,
                    config.beta,
                )?;
                trainer.metrics.push(MetricsRecord {
                    step: trainer.step,
                    stage: plan.label.to_string(),
                    loss: lx,
                    distill_loss: ld,
                    lr,
                });
                trainer.step += 1;
            } else {
                sft_step(trainer, plan.label, &batch)?;
            }
            done += 1;
        }
        epoch += 1;
    }
    Ok(())
}
