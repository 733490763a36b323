//! Per-epoch training history.
//!
//! ```text
//! epoch,train_loss,pl_loss,nl_loss,noisy_fraction,val_accuracy
//! 1,1.52,1.52,0,0,0.41
//! ```
//!
//! Losses are batch means averaged over the epoch with batch-size weights.
//! Values are written in shortest round-trip form.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::fsutil::write_atomic;

pub const HISTORY_HEADER: &str = "epoch,train_loss,pl_loss,nl_loss,noisy_fraction,val_accuracy";

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub pl_loss: f64,
    pub nl_loss: f64,
    /// Share of training samples routed to negative learning.
    pub noisy_fraction: f64,
    pub val_accuracy: f64,
    /// Share of truly mislabeled samples routed to negative learning, when
    /// ground truth is known.
    pub nl_rate_mislabeled: Option<f64>,
    /// Same for correctly labeled samples.
    pub nl_rate_clean: Option<f64>,
}

pub fn format_history_csv(history: &[EpochRecord]) -> String {
    let mut s = format!("{HISTORY_HEADER}\n");
    for r in history {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.epoch, r.train_loss, r.pl_loss, r.nl_loss, r.noisy_fraction, r.val_accuracy
        )
        .expect("string write");
    }
    s
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    write_atomic(path, format_history_csv(history).as_bytes())
}
