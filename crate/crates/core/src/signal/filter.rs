use std::f64::consts::PI;

use crate::error::{Error, Result};

use super::RawTrace;

/// Second-order IIR section, transposed direct form II.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    /// Butterworth (Q = 1/√2) low-pass with bilinear pre-warping.
    pub fn lowpass(cutoff_hz: f64, sample_rate: f64) -> Self {
        let (cos, alpha) = Self::warp(cutoff_hz, sample_rate);
        let a0 = 1.0 + alpha;
        Self {
            b: [(1.0 - cos) / 2.0 / a0, (1.0 - cos) / a0, (1.0 - cos) / 2.0 / a0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    /// Butterworth (Q = 1/√2) high-pass with bilinear pre-warping.
    pub fn highpass(cutoff_hz: f64, sample_rate: f64) -> Self {
        let (cos, alpha) = Self::warp(cutoff_hz, sample_rate);
        let a0 = 1.0 + alpha;
        Self {
            b: [(1.0 + cos) / 2.0 / a0, -(1.0 + cos) / a0, (1.0 + cos) / 2.0 / a0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    fn warp(f: f64, fs: f64) -> (f64, f64) {
        let w0 = 2.0 * PI * f / fs;
        // alpha = sin(w0) / (2Q), Q = 1/√2
        (w0.cos(), w0.sin() / std::f64::consts::SQRT_2)
    }

    pub fn run(&self, x: &mut [f64]) {
        let (mut z1, mut z2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let input = *v;
            let y = self.b[0] * input + z1;
            z1 = self.b[1] * input - self.a[0] * y + z2;
            z2 = self.b[2] * input - self.a[1] * y;
            *v = y;
        }
    }
}

/// Cascade of biquads applied forward then backward (zero phase), with
/// odd-reflection padding at both ends to tame start-up transients.
pub fn filtfilt(sections: &[Biquad], x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = pad.min(n - 1);
    let mut buf = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        buf.push(2.0 * x[0] - x[i]);
    }
    buf.extend_from_slice(x);
    for i in 1..=pad {
        buf.push(2.0 * x[n - 1] - x[n - 1 - i]);
    }
    for s in sections {
        s.run(&mut buf);
    }
    buf.reverse();
    for s in sections {
        s.run(&mut buf);
    }
    buf.reverse();
    buf[pad..pad + n].to_vec()
}

/// Fourth-order Butterworth-style band-pass (second-order high-pass at
/// `low_hz` cascaded with second-order low-pass at `high_hz`), zero phase.
pub fn bandpass_filter(trace: &RawTrace, low_hz: f64, high_hz: f64) -> Result<RawTrace> {
    let fs = trace.sample_rate;
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < fs / 2.0) {
        return Err(Error::config(format!(
            "band {low_hz}..{high_hz} Hz must satisfy 0 < low < high < {}",
            fs / 2.0
        )));
    }
    let sections = [Biquad::highpass(low_hz, fs), Biquad::lowpass(high_hz, fs)];
    // A few time constants of the lowest corner.
    let pad = (3.0 * fs / low_hz).ceil() as usize;
    Ok(RawTrace {
        samples: filtfilt(&sections, &trace.samples, pad),
        sample_rate: fs,
        patient_id: trace.patient_id.clone(),
    })
}
