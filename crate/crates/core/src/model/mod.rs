//! Residual 1-D CNN built from a declarative [`NetworkSpec`].

mod network;
mod spec;

pub use network::{batch_tensor, confidence, CollectedStats, Forward, Network, ResidualBlock};
pub use spec::{
    pool_length, HeadSpec, NetworkSpec, ResidualBlockSpec, StemSpec, BLOCKS, CONV_LAYERS, DEFAULT_DROPOUT,
    DEFAULT_FILTERS, DEFAULT_KERNEL,
};
