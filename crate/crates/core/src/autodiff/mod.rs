//! Reverse-mode differentiation over exactly the layer operations the
//! residual network needs, plus SGD and a checkpoint container.

mod checkpoint;
mod kernels;
mod optim;
mod param;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, CheckpointEntry, EntryKind};
pub use optim::{sgd_step, Sgd};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{
    log_loss, BatchStats, LeafGrads, LossKind, Mode, RunningStats, Tape, Var, BN_EPSILON, BN_MOMENTUM, PROB_FLOOR,
};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
