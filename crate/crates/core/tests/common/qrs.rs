use negres::label::Label;
use negres::signal::synth::Range;
use negres::signal::{detect_qrs, synth_ecg, SynthConfig, SAMPLE_RATE};

/// Matching tolerance between detected and true R peaks, samples (±50 ms).
pub const TOLERANCE: usize = 12;

#[derive(Debug, Default, Clone, Copy)]
pub struct Counts {
    pub matched: usize,
    pub truth: usize,
    pub detected: usize,
}

impl Counts {
    pub fn recall(&self) -> f64 {
        self.matched as f64 / self.truth as f64
    }

    pub fn precision(&self) -> f64 {
        self.matched as f64 / self.detected as f64
    }

    pub fn add(&mut self, o: Counts) {
        self.matched += o.matched;
        self.truth += o.truth;
        self.detected += o.detected;
    }
}

/// Greedy one-to-one matching of sorted peak lists within `tol`.
pub fn match_peaks(truth: &[usize], found: &[usize], tol: usize) -> Counts {
    let (mut i, mut j, mut matched) = (0, 0, 0);
    while i < truth.len() && j < found.len() {
        if truth[i].abs_diff(found[j]) <= tol {
            matched += 1;
            i += 1;
            j += 1;
        } else if truth[i] < found[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    Counts {
        matched,
        truth: truth.len(),
        detected: found.len(),
    }
}

/// Detector scores on one clean synthetic normal-rhythm trace.
pub fn clean_trace_counts(seed: u64, n_beats: usize) -> Counts {
    let t = synth_ecg(&SynthConfig::clean().with_seed(seed), n_beats, Label::N).unwrap();
    match_peaks(&t.peaks, &detect_qrs(&t.trace), TOLERANCE)
}

/// Config whose traces contain QRS complexes only.
pub fn qrs_only(seed: u64) -> SynthConfig {
    SynthConfig {
        p_amplitude_mv: Range(0.0, 0.0),
        t_amplitude_mv: Range(0.0, 0.0),
        ..SynthConfig::clean().with_seed(seed)
    }
}

/// Duration of each complex, seconds: the outermost span within ±0.2 s of
/// each R peak where |x| reaches 1% of the R amplitude, with linear
/// interpolation at the crossings.
pub fn measured_qrs_widths(samples: &[f64], peaks: &[usize]) -> Vec<f64> {
    let reach = (0.2 * SAMPLE_RATE) as usize;
    peaks
        .iter()
        .map(|&r| {
            let thr = 0.01 * samples[r].abs();
            let lo_bound = r.saturating_sub(reach).max(1);
            let hi_bound = (r + reach).min(samples.len() - 2);
            let lo = (lo_bound..=r).find(|&i| samples[i].abs() >= thr).unwrap();
            let hi = (r..=hi_bound).rev().find(|&i| samples[i].abs() >= thr).unwrap();
            let frac = |inside: usize, outside: usize| {
                let (a, b) = (samples[inside].abs() - thr, samples[outside].abs() - thr);
                a / (a - b)
            };
            let left = lo as f64 - frac(lo, lo - 1);
            let right = hi as f64 + frac(hi, hi + 1);
            (right - left) / SAMPLE_RATE
        })
        .collect()
}
