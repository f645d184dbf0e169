//! Four-stage fine-tuning stack: multilingual SFT, code-switched contexts,
//! rejection-sampling augmentation, online translate-then-answer expansion,
//! and cross-lingual distillation.

mod direction;
mod distill;
mod example;
mod msample;
mod optim;
mod pipeline;
mod state;

pub use direction::{policy_by_name, policy_names, DirectionKind, DirectionPolicy};
pub use distill::{
    combined_step, distill_loss, distill_loss_and_grads, student_distill_loss,
    teacher_distributions,
};
pub use example::{make_example, random_cot_expand, ExampleKind, ParallelPair, TrainingExample};
pub use msample::{msample_augment, AugmentedDataset};
pub use optim::{Adam, LrSchedule};
pub use pipeline::{
    resume_pipeline, run_pipeline, sft_step, MetricsRecord, PipelineOutcome, RungSnapshot,
    StageFlags, TrainConfig, Trainer, STAGE_LABELS,
};
pub use state::{load_train_state, save_train_state, TrainState, TrainStateMeta};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("distillation pairing error: {0}")]
    Pairing(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Switch(#[from] crate::switchboard::SwitchError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
