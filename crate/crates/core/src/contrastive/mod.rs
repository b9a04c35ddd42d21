//! Contrastive pretraining: the NT-Xent loss over sibling segment views,
//! the (optionally class-balanced) batch sampler, and the training loop.

mod loss;
mod sampler;
mod train;

pub use loss::{cosine_sim, ntxent_loss, ntxent_on_tape, ntxent_value, ContrastiveBatch};
pub use sampler::{plan_batches, BatchPlan, PlannedBatch};
pub use train::{
    format_loss_csv, pretrain, read_loss_csv, write_loss_csv, PretrainOutcome, StepReport, TrainConfig,
    TrainState, Trainer,
};
