//! Raw single-lead traces to fixed-length normalized beat segments, and a
//! synthetic trace generator.

mod filter;
pub mod io;
mod qrs;
mod segment;
pub mod synth;

pub use filter::{bandpass_filter, Biquad};
pub use qrs::{detect_qrs, QrsDetector};
pub use segment::{extract_beats, normalize_beat, normalize_values, segment_beats};
pub use synth::{synth_ecg, SynthConfig, SynthTrace};

use crate::error::{Error, Result};

/// Sampling rate of every trace, Hz.
pub const SAMPLE_RATE: f64 = 250.0;
/// Samples per beat segment (1 s).
pub const SEGMENT_LEN: usize = 250;
/// Samples kept before the R peak.
pub const SEGMENT_PRE: usize = 100;
/// Samples kept from the R peak onwards.
pub const SEGMENT_POST: usize = 150;

/// Single-lead recording in millivolts.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrace {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    pub patient_id: String,
}

impl RawTrace {
    pub fn new(samples: Vec<f64>, patient_id: impl Into<String>) -> Self {
        Self {
            samples,
            sample_rate: SAMPLE_RATE,
            patient_id: patient_id.into(),
        }
    }

    /// Rejects any rate other than 250 Hz.
    pub fn with_rate(samples: Vec<f64>, sample_rate: f64, patient_id: impl Into<String>) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::config(format!(
                "sample rate must be {SAMPLE_RATE} Hz, got {sample_rate}"
            )));
        }
        Ok(Self::new(samples, patient_id))
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }
}

/// One beat window around an R peak.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatSegment {
    pub values: Vec<f64>,
    /// R-peak sample index in the source trace.
    pub r_index: usize,
}
