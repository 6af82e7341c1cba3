//! Feed-forward multi-label network with batch normalization, manual
//! reverse-mode gradients, masked BCE and block-wise SGD.

mod checkpoint;
mod loss;
mod model;
mod train;

pub use checkpoint::{
    Checkpoint, CheckpointEntry, CHECKPOINT_VERSION, GROUP_HEAD, GROUP_REPRESENTATION,
};
pub use loss::{masked_bce, PROB_CLAMP};
pub use model::{
    head_layer_name, init_model, label_of_head, BnPolicy, Gradients, LayerKind, LayerParams, Mode,
    Model, ModelSpec,
};
pub use train::{
    eval_loss, pretrain_backbone, sgd_step, train_epoch, warmup_heads, LearningRates, TrainOptions,
    WARMUP_LR,
};
