//! Desk-scale unsupervised domain adaptation for multivariate time series by
//! representation-space decomposition: a learnable orthonormal invariant
//! basis trained adversarially, prototype-based pseudo-labeling with a
//! confidence curriculum, and hybrid contrastive optimization — on top of a
//! small reverse-mode autodiff tape.

pub mod config;
pub mod contrastive;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod lcib;
pub mod metrics;
pub mod nets;
pub mod ops;
pub mod optim;
pub mod params;
pub mod ppgce;
pub mod tape;
pub mod tensor;
pub mod train;

pub use config::{AdversarialMode, EncoderPreset, RunConfig};
pub use contrastive::{AugmentationPolicy, LossTerms};
pub use data::{
    generate_synthetic_pair, load_dataset, save_dataset, Dataset, DatasetMeta, DomainArtifacts,
    SyntheticShiftConfig,
};
pub use error::{Error, Result};
pub use lcib::InvariantBasis;
pub use metrics::EpochMetrics;
pub use params::ParamSet;
pub use ppgce::{ConfidenceSchedule, PartitionMode, Prototypes, ScheduleMode};
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;
pub use train::{
    evaluate, finetune, run_ablation, train, train_full, train_source_only, AblationRow,
    EvalReport, Model, StepRecord, TrainOutput, TrainSinks, Trainer,
};
