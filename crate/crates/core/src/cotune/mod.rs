//! Co-tuning: source routing, response-only loss, masked Adam updates and the
//! cosine schedule.

pub mod optimizer;
pub mod sample;
pub mod trainer;

pub use optimizer::{Adam, AdamConfig};
pub use sample::{encode_sample, prompt_ids, route_sample, Source, TrainSample, IGNORE};
pub use trainer::{
    batch_loss, cosine_lr, cotune_step, evaluate_loss, loss_csv, train, update_allowed, write_loss_csv, zero_sharing,
    LossPoint, StepOptions, TrainConfig, TrainManifest, TrainReport, UpdatePolicy,
};
