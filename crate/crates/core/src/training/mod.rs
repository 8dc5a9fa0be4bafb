//! Optimizer, schedule, augmentation, data and the training loop.

pub mod config;
pub mod data;
pub mod mixup;
pub mod optim;
pub mod schedule;
pub mod state;
pub mod trainer;

pub use config::{DatasetSpec, TrainConfig};
pub use data::{one_hot, Dataset, SyntheticSpec, SyntheticTask};
pub use mixup::{mixup, mixup_with_lambda, sample_lambda};
pub use optim::{clip_grad_norm, AdamW};
pub use schedule::cosine_lr;
pub use state::{load_network, load_optimizer, save_state, train_config, CheckpointMeta};
pub use trainer::{evaluate, log_csv, train, EpochRecord, Evaluation, Predict, TrainRun, LOG_HEADER};
