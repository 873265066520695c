//! Small MLP classifier, training losses and flat-minima optimizers.
//!
//! The network has no normalisation layers, so averaged weights need no
//! statistics recalibration before use.

mod data;
mod loss;
mod mlp;
mod optim;
mod train;

pub use data::{
    make_dataset, make_splits, Dataset, DatasetKind, SplitSpec, Splits, BLOB_CLASSES, BLOB_RADIUS, RING_RADIUS,
};
pub use loss::{
    crl_batch_loss, crl_pair_loss, loss_and_grad, oe_sample_loss, sample_loss, Batch, LossAux, LossOutput, LossSpec,
    LOGITNORM_EPS,
};
pub use mlp::{ForwardCache, MlpModel};
pub use optim::{sam_perturb, sam_step, sgd_step, SgdMomentum, SwaState, SAM_MIN_GRAD_NORM};
pub use train::{
    evaluate_model, train, CrlHistory, EpochRecord, TrainConfig, TrainData, TrainMethod, TrainResult, CYCLIC_LR_FLOOR,
    DEFAULT_SAM_RHO,
};
