//! Small trainable text encoder producing per-dimension label distributions.

mod checkpoint;
mod gradcheck;
mod model;
mod optim;
mod train;
mod vocab;

pub use checkpoint::{Model, FORMAT as CHECKPOINT_FORMAT, VERSION as CHECKPOINT_VERSION};
pub use gradcheck::{
    grad_check, grad_check_regression, relative_error, ABS_FALLBACK, STEP as FD_STEP,
};
pub use model::{Affine, EncoderParams, ForwardCache, INIT_RANGE, REG_BIAS_INIT};
pub use optim::{Optimizer, OptimizerKind};
pub use train::{
    example_loss, finetune_vad, finetune_vad_observed, mean_loss, mean_regression_loss,
    regression_loss, train, train_observed, EncodedExample, EpochObserver, EpochStats, TrainConfig,
    TrainOutcome, VadExample, FREEZE_EPOCHS,
};
pub use vocab::{tokenize, Vocabulary, PAD, PAD_ID, UNK, UNK_ID};
