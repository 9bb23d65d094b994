//! Optimization: cosine schedule, AdamW, gradient accumulation, the data
//! pipeline, and the pretraining / fine-tuning loops.

mod data;
mod loops;
mod optim;
mod schedule;

pub use data::{
    mix_seed, prepare_clip, prepare_records, sample_video, ClipRecord, Dataset, PreparedClip,
    LABELS_FILE,
};
pub use loops::{
    evaluate, finetune, finetune_grads, finetune_init, predict_clips, pretrain, pretrain_grads,
    sibling_path, write_loss_csv, FinetuneInit, FinetuneOutcome, LossRecord, PretrainItem,
    PretrainOutcome, TrainConfig, TrainMode,
};
pub use optim::{decays_by_default, AdamW, AdamWConfig, GradAccumulator};
pub use schedule::{cosine_lr, ScheduleConfig};
