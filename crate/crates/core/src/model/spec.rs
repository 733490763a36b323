use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One residual block: two same-padded convolutions on the residual path,
/// with optional max-pool subsampling on both paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualBlockSpec {
    pub channels_in: usize,
    pub channels_out: usize,
    pub kernel_size: usize,
    pub subsample: bool,
    pub dropout_rate: f64,
}

impl ResidualBlockSpec {
    pub fn needs_projection(&self) -> bool {
        self.channels_in != self.channels_out || self.subsample
    }

    pub fn output_length(&self, input_length: usize) -> usize {
        if self.subsample {
            pool_length(input_length)
        } else {
            input_length
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels_in == 0 || self.channels_out == 0 {
            return Err(Error::config("block channels must be positive"));
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::config(format!(
                "block kernel size must be odd for same padding, got {}",
                self.kernel_size
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// Weights and biases of this block, including batch-norm affine terms.
    pub fn param_count(&self) -> usize {
        let (ci, co, k) = (self.channels_in, self.channels_out, self.kernel_size);
        let convs = (co * ci * k + co) + (co * co * k + co);
        let norms = 2 * (2 * co);
        let proj = if self.needs_projection() { co * ci + co } else { 0 };
        convs + norms + proj
    }
}

/// Max-pool window 2, stride 2.
pub fn pool_length(len: usize) -> usize {
    (len - 2) / 2 + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemSpec {
    pub channels: usize,
    pub kernel_size: usize,
}

/// Final 1×1 convolution, batch norm and ReLU, then flatten, dense and
/// softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub channels: usize,
}

/// JSON layout:
///
/// ```json
/// {
///   "input_length": 250,
///   "n_classes": 6,
///   "stem": { "channels": 32, "kernel_size": 15 },
///   "blocks": [
///     { "channels_in": 32, "channels_out": 32, "kernel_size": 15,
///       "subsample": false, "dropout_rate": 0.2 },
///     ...
///   ],
///   "head": { "channels": 64 }
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_length: usize,
    pub n_classes: usize,
    pub stem: StemSpec,
    pub blocks: Vec<ResidualBlockSpec>,
    pub head: HeadSpec,
}

pub const DEFAULT_FILTERS: usize = 32;
pub const DEFAULT_KERNEL: usize = 15;
pub const DEFAULT_DROPOUT: f64 = 0.2;
pub const BLOCKS: usize = 5;
/// Stem, two per block, and the head's 1×1; projections not counted.
pub const CONV_LAYERS: usize = 12;

impl Default for NetworkSpec {
    fn default() -> Self {
        Self::with_width(6, DEFAULT_FILTERS, DEFAULT_KERNEL, DEFAULT_DROPOUT)
    }
}

impl NetworkSpec {
    /// Five blocks of `filters` channels, doubling at the fifth, with
    /// subsampling at blocks 2 and 4.
    pub fn with_width(n_classes: usize, filters: usize, kernel_size: usize, dropout_rate: f64) -> Self {
        let blocks = (0..BLOCKS)
            .map(|i| ResidualBlockSpec {
                channels_in: filters,
                channels_out: if i == BLOCKS - 1 { 2 * filters } else { filters },
                kernel_size,
                subsample: i % 2 == 1,
                dropout_rate,
            })
            .collect();
        Self {
            input_length: crate::signal::SEGMENT_LEN,
            n_classes,
            stem: StemSpec {
                channels: filters,
                kernel_size,
            },
            blocks,
            head: HeadSpec { channels: 2 * filters },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::config("n_classes must be >= 2"));
        }
        if self.stem.channels == 0 || self.head.channels == 0 {
            return Err(Error::config("stem and head channels must be positive"));
        }
        if self.stem.kernel_size == 0 || self.stem.kernel_size.is_multiple_of(2) {
            return Err(Error::config("stem kernel size must be odd"));
        }
        if self.blocks.len() != BLOCKS {
            return Err(Error::config(format!(
                "expected {BLOCKS} residual blocks, got {}",
                self.blocks.len()
            )));
        }
        let mut ch = self.stem.channels;
        let mut len = self.input_length;
        if len < self.stem.kernel_size {
            return Err(Error::config("input shorter than the stem kernel"));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            b.validate()?;
            if b.channels_in != ch {
                return Err(Error::config(format!(
                    "block {} expects {} channels, previous layer gives {ch}",
                    i + 1,
                    b.channels_in
                )));
            }
            if b.subsample && len < 2 {
                return Err(Error::config(format!(
                    "block {} subsamples a length-{len} input",
                    i + 1
                )));
            }
            len = b.output_length(len);
            ch = b.channels_out;
        }
        Ok(())
    }

    pub fn conv_layer_count(&self) -> usize {
        1 + 2 * self.blocks.len() + 1
    }

    /// Sequence length after the stem and after each block.
    pub fn feature_lengths(&self) -> Vec<usize> {
        let mut out = vec![self.input_length];
        for b in &self.blocks {
            out.push(b.output_length(*out.last().expect("nonempty")));
        }
        out
    }

    pub fn flat_features(&self) -> usize {
        self.head.channels * self.feature_lengths().last().copied().unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        let s = &self.stem;
        let stem = s.channels * s.kernel_size + s.channels + 2 * s.channels;
        let blocks: usize = self.blocks.iter().map(ResidualBlockSpec::param_count).sum();
        let last = self.blocks.last().map_or(s.channels, |b| b.channels_out);
        let h = self.head.channels;
        let head = h * last + h + 2 * h + self.n_classes * self.flat_features() + self.n_classes;
        stem + blocks + head
    }
}
