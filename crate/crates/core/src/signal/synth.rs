//! Synthetic single-lead ECG built from Gaussian bumps.
//!
//! Each beat is a P wave, a Q-R-S triplet and a T wave placed relative to
//! the R peak. Default timings and amplitudes sit inside the normal ranges
//! (PR 0.12–0.20 s, P ≤ 0.12 s and < 0.25 mV, QRS 0.06–0.11 s, RR
//! 0.60–1.00 s, R > 0.5 mV, QT 0.33–0.43 s, T > 0.5 mV). Beat classes alter
//! that template:
//!
//! * `V`: QRS wider than 0.11 s, no P wave, discordant T; premature with a
//!   compensatory pause.
//! * `S`: premature (shortened preceding RR) with an altered P wave.
//! * `A`: irregular RR, P replaced by a fibrillatory ripple.
//! * `E`: dominant 50 Hz interference.
//! * `Q`: large low-frequency motion bursts.
//!
//! Premature classes are embedded in a normal rhythm, so their traces
//! alternate `N` and `V`/`S` beats; the returned labels say which is which.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Label;
use crate::rng::{self, SeedStream};

use super::{RawTrace, SAMPLE_RATE};

/// Closed interval `[min, max]`, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range(pub f64, pub f64);

impl Range {
    pub fn min(self) -> f64 {
        self.0
    }

    pub fn max(self) -> f64 {
        self.1
    }

    pub fn contains(self, x: f64) -> bool {
        x >= self.0 && x <= self.1
    }

    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        if self.0 == self.1 {
            self.0
        } else {
            rng.random_range(self.0..=self.1)
        }
    }

    fn check(self, name: &str, positive: bool) -> Result<()> {
        if !(self.0.is_finite() && self.1.is_finite() && self.0 <= self.1) {
            return Err(Error::config(format!("{name}: invalid range [{}, {}]", self.0, self.1)));
        }
        if positive && self.0 <= 0.0 {
            return Err(Error::config(format!("{name}: range must be positive")));
        }
        Ok(())
    }
}

/// Class-specific morphology and interference strengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MorphologyConfig {
    /// Premature RR as a fraction of the patient's sinus RR (S and V).
    pub premature_coupling: Range,
    pub ventricular_qrs_s: Range,
    pub af_rr_s: Range,
    pub af_ripple_mv: Range,
    /// 50 Hz amplitude on `E` traces.
    pub emi_event_mv: Range,
    /// Motion-burst amplitude on `Q` traces.
    pub motion_event_mv: Range,
    pub motion_event_rate_hz: f64,
}

impl Default for MorphologyConfig {
    fn default() -> Self {
        Self {
            premature_coupling: Range(0.55, 0.75),
            ventricular_qrs_s: Range(0.13, 0.18),
            af_rr_s: Range(0.40, 1.10),
            af_ripple_mv: Range(0.04, 0.10),
            emi_event_mv: Range(0.30, 0.80),
            motion_event_mv: Range(0.80, 2.00),
            motion_event_rate_hz: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub heart_rate_bpm: Range,
    /// Relative standard deviation of sinus RR from beat to beat.
    pub rr_jitter: f64,
    pub r_amplitude_mv: Range,
    pub qrs_duration_s: Range,
    pub p_amplitude_mv: Range,
    pub p_duration_s: Range,
    pub pr_interval_s: Range,
    pub t_amplitude_mv: Range,
    pub t_duration_s: Range,
    pub qt_interval_s: Range,
    /// Amplitude of slow (0.15–0.35 Hz) baseline wander on every trace.
    pub baseline_wander_mv: f64,
    /// Background 50 Hz mains amplitude on every trace.
    pub emi_mv: f64,
    /// Background motion bursts per second on every trace.
    pub motion_burst_rate_hz: f64,
    pub white_noise_mv: f64,
    pub morphology: MorphologyConfig,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            heart_rate_bpm: Range(62.0, 98.0),
            rr_jitter: 0.02,
            r_amplitude_mv: Range(0.8, 1.6),
            qrs_duration_s: Range(0.07, 0.10),
            p_amplitude_mv: Range(0.08, 0.20),
            p_duration_s: Range(0.08, 0.11),
            pr_interval_s: Range(0.14, 0.18),
            t_amplitude_mv: Range(0.55, 0.80),
            t_duration_s: Range(0.18, 0.26),
            qt_interval_s: Range(0.35, 0.41),
            baseline_wander_mv: 0.10,
            emi_mv: 0.01,
            motion_burst_rate_hz: 0.0,
            white_noise_mv: 0.01,
            morphology: MorphologyConfig::default(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Default morphology with every noise source switched off.
    pub fn clean() -> Self {
        Self {
            baseline_wander_mv: 0.0,
            emi_mv: 0.0,
            motion_burst_rate_hz: 0.0,
            white_noise_mv: 0.0,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.heart_rate_bpm.check("heart_rate_bpm", true)?;
        self.r_amplitude_mv.check("r_amplitude_mv", true)?;
        self.qrs_duration_s.check("qrs_duration_s", true)?;
        self.p_amplitude_mv.check("p_amplitude_mv", false)?;
        self.p_duration_s.check("p_duration_s", true)?;
        self.pr_interval_s.check("pr_interval_s", true)?;
        self.t_amplitude_mv.check("t_amplitude_mv", false)?;
        self.t_duration_s.check("t_duration_s", true)?;
        self.qt_interval_s.check("qt_interval_s", true)?;
        let m = &self.morphology;
        m.premature_coupling.check("premature_coupling", true)?;
        m.ventricular_qrs_s.check("ventricular_qrs_s", true)?;
        m.af_rr_s.check("af_rr_s", true)?;
        m.af_ripple_mv.check("af_ripple_mv", false)?;
        m.emi_event_mv.check("emi_event_mv", false)?;
        m.motion_event_mv.check("motion_event_mv", false)?;
        let nonneg = [
            ("rr_jitter", self.rr_jitter),
            ("baseline_wander_mv", self.baseline_wander_mv),
            ("emi_mv", self.emi_mv),
            ("motion_burst_rate_hz", self.motion_burst_rate_hz),
            ("white_noise_mv", self.white_noise_mv),
            ("motion_event_rate_hz", m.motion_event_rate_hz),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be a finite value >= 0")));
            }
        }
        Ok(())
    }
}

/// Maps a one-letter class code to a beat type; unknown codes are a config
/// error here since they name a generator mode.
pub fn beat_type(code: &str) -> Result<Label> {
    code.parse::<Label>()
        .map_err(|_| Error::config(format!("unknown beat type `{code}`")))
}

/// Per-patient morphology drawn once from the config ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientProfile {
    pub rr_s: f64,
    pub r_amplitude_mv: f64,
    pub qrs_duration_s: f64,
    pub p_amplitude_mv: f64,
    pub p_duration_s: f64,
    pub pr_interval_s: f64,
    pub t_amplitude_mv: f64,
    pub t_duration_s: f64,
    pub qt_interval_s: f64,
    /// Relative depth of the Q and S deflections.
    pub q_depth: f64,
    pub s_depth: f64,
}

impl PatientProfile {
    pub fn sample<R: Rng + ?Sized>(config: &SynthConfig, rng: &mut R) -> Self {
        let hr = config.heart_rate_bpm.sample(rng);
        Self {
            rr_s: 60.0 / hr,
            r_amplitude_mv: config.r_amplitude_mv.sample(rng),
            qrs_duration_s: config.qrs_duration_s.sample(rng),
            p_amplitude_mv: config.p_amplitude_mv.sample(rng),
            p_duration_s: config.p_duration_s.sample(rng),
            pr_interval_s: config.pr_interval_s.sample(rng),
            t_amplitude_mv: config.t_amplitude_mv.sample(rng),
            t_duration_s: config.t_duration_s.sample(rng),
            qt_interval_s: config.qt_interval_s.sample(rng),
            q_depth: rng.random_range(0.08..0.18),
            s_depth: rng.random_range(0.15..0.30),
        }
    }
}

/// Ground truth for one generated beat.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatAnnotation {
    pub r_index: usize,
    pub label: Label,
    /// Interval from the previous R peak, seconds (`None` for the first beat).
    pub rr_before_s: Option<f64>,
    pub qrs_duration_s: f64,
    pub has_p_wave: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTrace {
    pub trace: RawTrace,
    pub peaks: Vec<usize>,
    pub labels: Vec<Label>,
    pub beats: Vec<BeatAnnotation>,
}

/// One trace of `n_beats` beats for `beat_type`, with a patient profile
/// drawn from `config.seed`.
pub fn synth_ecg(config: &SynthConfig, n_beats: usize, beat_type: Label) -> Result<SynthTrace> {
    config.validate()?;
    let seeds = SeedStream::new(config.seed);
    let profile = PatientProfile::sample(config, &mut seeds.rng("profile"));
    synth_patient_trace(
        config,
        &profile,
        n_beats,
        beat_type,
        &mut seeds.rng(rng::DATA),
        format!("synth-{}", config.seed),
    )
}

/// Lead-in before the first R peak and tail after the last, seconds.
const LEAD_IN_S: f64 = 0.6;
const TAIL_S: f64 = 0.8;
/// QRS extent is where the complex exceeds this fraction of its peak.
pub const QRS_EXTENT_FRACTION: f64 = 0.01;

pub fn synth_patient_trace<R: Rng + ?Sized>(
    config: &SynthConfig,
    profile: &PatientProfile,
    n_beats: usize,
    beat_type: Label,
    rng: &mut R,
    patient_id: String,
) -> Result<SynthTrace> {
    if n_beats == 0 {
        return Err(Error::config("n_beats must be >= 1"));
    }
    let fs = SAMPLE_RATE;
    let morph = &config.morphology;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    // Beat plan: labels and R times.
    let mut labels = Vec::with_capacity(n_beats);
    let mut rrs: Vec<f64> = Vec::with_capacity(n_beats);
    let sinus = |rng: &mut R| -> f64 {
        let j = config.rr_jitter * normal.sample(rng);
        let hr = config.heart_rate_bpm;
        (profile.rr_s * (1.0 + j)).clamp(60.0 / hr.max(), 60.0 / hr.min())
    };
    for k in 0..n_beats {
        let (label, rr) = match beat_type {
            Label::S | Label::V => {
                // N, X, N, X, ... with the ectopic beat arriving early.
                if k % 2 == 1 {
                    let c = morph.premature_coupling.sample(rng);
                    (beat_type, c * profile.rr_s)
                } else if k > 0 && beat_type == Label::V {
                    // Compensatory pause: the two intervals add to 2 RR.
                    let prev = rrs[k - 1];
                    (Label::N, (2.0 * profile.rr_s - prev).max(profile.rr_s))
                } else {
                    (Label::N, sinus(rng))
                }
            }
            Label::A => (Label::A, morph.af_rr_s.sample(rng)),
            other => (other, sinus(rng)),
        };
        labels.push(label);
        rrs.push(rr);
    }
    let mut peaks = Vec::with_capacity(n_beats);
    let mut t = LEAD_IN_S;
    for (k, rr) in rrs.iter().enumerate() {
        if k > 0 {
            t += rr;
        }
        peaks.push((t * fs).round() as usize);
    }
    let len = peaks[n_beats - 1] + (TAIL_S * fs).round() as usize;
    let mut x = vec![0.0; len];
    let mut beats = Vec::with_capacity(n_beats);

    let tpl = QrsTemplate::new(profile.q_depth, profile.s_depth);
    for k in 0..n_beats {
        let label = labels[k];
        let r = peaks[k] as f64 / fs;
        let jitter = |rng: &mut R, s: f64| 1.0 + s * normal.sample(rng);
        let amp_r = profile.r_amplitude_mv * jitter(rng, 0.04);
        let ventricular = label == Label::V;
        let qrs_d = if ventricular {
            morph.ventricular_qrs_s.sample(rng)
        } else {
            (profile.qrs_duration_s * jitter(rng, 0.03)).clamp(config.qrs_duration_s.min(), config.qrs_duration_s.max())
        };
        let scale = qrs_d / tpl.width();
        let onset = r + tpl.lo() * scale;
        let amp = if ventricular { 1.3 * amp_r } else { amp_r };
        for (c, s, a) in tpl.bumps() {
            add_bump(&mut x, fs, r + c * scale, s * scale, a * amp);
        }

        let has_p = !matches!(label, Label::V | Label::A);
        if has_p {
            let pd = profile.p_duration_s * jitter(rng, 0.03);
            let pr = profile.pr_interval_s * jitter(rng, 0.02);
            let (pa, pd) = if label == Label::S {
                // Ectopic atrial focus: flatter, shorter P.
                (-0.6 * profile.p_amplitude_mv, 0.8 * pd)
            } else {
                (profile.p_amplitude_mv, pd)
            };
            add_bump(&mut x, fs, onset - pr + pd / 2.0, pd / 6.0, pa * jitter(rng, 0.05));
        }

        let td = profile.t_duration_s * jitter(rng, 0.03);
        let (ta, qt) = if ventricular {
            (-1.2 * profile.t_amplitude_mv, profile.qt_interval_s + 0.04)
        } else {
            (profile.t_amplitude_mv, profile.qt_interval_s)
        };
        let t_end = onset + qt * jitter(rng, 0.01);
        add_bump(&mut x, fs, t_end - td / 2.0, td / 5.0, ta * jitter(rng, 0.05));

        beats.push(BeatAnnotation {
            r_index: peaks[k],
            label,
            rr_before_s: (k > 0).then(|| (peaks[k] - peaks[k - 1]) as f64 / fs),
            qrs_duration_s: qrs_d,
            has_p_wave: has_p,
        });
    }

    if beat_type == Label::A {
        let amp = morph.af_ripple_mv.sample(rng);
        let comps: Vec<(f64, f64)> = (0..3)
            .map(|_| (rng.random_range(4.0..9.0), rng.random_range(0.0..2.0 * PI)))
            .collect();
        for (i, v) in x.iter_mut().enumerate() {
            let t = i as f64 / fs;
            *v += amp / 3.0 * comps.iter().map(|(f, ph)| (2.0 * PI * f * t + ph).sin()).sum::<f64>();
        }
    }

    let mut emi = config.emi_mv;
    if beat_type == Label::E {
        emi += morph.emi_event_mv.sample(rng);
    }
    if emi > 0.0 {
        let ph = rng.random_range(0.0..2.0 * PI);
        let slow = rng.random_range(0.05..0.3);
        for (i, v) in x.iter_mut().enumerate() {
            let t = i as f64 / fs;
            let env = 0.8 + 0.2 * (2.0 * PI * slow * t).sin();
            *v += emi * env * (2.0 * PI * 50.0 * t + ph).sin();
        }
    }

    if config.baseline_wander_mv > 0.0 {
        let comps: Vec<(f64, f64)> = (0..2)
            .map(|_| (rng.random_range(0.15..0.35), rng.random_range(0.0..2.0 * PI)))
            .collect();
        for (i, v) in x.iter_mut().enumerate() {
            let t = i as f64 / fs;
            *v += config.baseline_wander_mv / 2.0
                * comps.iter().map(|(f, ph)| (2.0 * PI * f * t + ph).sin()).sum::<f64>();
        }
    }

    let duration = len as f64 / fs;
    add_motion(&mut x, fs, config.motion_burst_rate_hz * duration, Range(0.3, 0.8), rng);
    if beat_type == Label::Q {
        let n = morph.motion_event_rate_hz * duration;
        add_motion(&mut x, fs, n, morph.motion_event_mv, rng);
    }

    if config.white_noise_mv > 0.0 {
        let w = Normal::new(0.0, config.white_noise_mv).expect("positive std");
        for v in x.iter_mut() {
            *v += w.sample(rng);
        }
    }

    Ok(SynthTrace {
        trace: RawTrace::new(x, patient_id),
        peaks,
        labels,
        beats,
    })
}

fn add_bump(x: &mut [f64], fs: f64, center_s: f64, sigma_s: f64, amp: f64) {
    if amp == 0.0 || sigma_s <= 0.0 {
        return;
    }
    let lo = ((center_s - 6.0 * sigma_s) * fs).floor().max(0.0) as usize;
    let hi = (((center_s + 6.0 * sigma_s) * fs).ceil().max(0.0) as usize).min(x.len());
    for (i, v) in x.iter_mut().enumerate().take(hi).skip(lo) {
        let d = (i as f64 / fs - center_s) / sigma_s;
        *v += amp * (-0.5 * d * d).exp();
    }
}

/// Hann-windowed slow oscillations, `expected` bursts on average.
fn add_motion<R: Rng + ?Sized>(x: &mut [f64], fs: f64, expected: f64, amp: Range, rng: &mut R) {
    if expected <= 0.0 {
        return;
    }
    let duration = x.len() as f64 / fs;
    let count = expected.floor() as usize + usize::from(rng.random::<f64>() < expected.fract());
    for _ in 0..count {
        let start = rng.random_range(-0.5..duration);
        let len = rng.random_range(0.6..1.6);
        let freq = rng.random_range(0.5..3.0);
        let a = amp.sample(rng) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        let ph = rng.random_range(0.0..2.0 * PI);
        let lo = (start.max(0.0) * fs) as usize;
        let hi = (((start + len) * fs).max(0.0) as usize).min(x.len());
        for (i, v) in x.iter_mut().enumerate().take(hi).skip(lo) {
            let t = i as f64 / fs - start;
            let w = 0.5 - 0.5 * (2.0 * PI * t / len).cos();
            *v += a * w * (2.0 * PI * freq * t + ph).sin();
        }
    }
}

/// Q-R-S Gaussian triplet in template time units; `width()` is the extent
/// where the complex exceeds [`QRS_EXTENT_FRACTION`] of its peak, so
/// scaling time by `d / width()` yields a QRS of duration `d`.
struct QrsTemplate {
    q_depth: f64,
    s_depth: f64,
    extent: (f64, f64),
}

const Q_CENTER: f64 = -0.30;
const S_CENTER: f64 = 0.30;
const QS_SIGMA: f64 = 0.10;
const R_SIGMA: f64 = 0.12;

impl QrsTemplate {
    fn new(q_depth: f64, s_depth: f64) -> Self {
        Self {
            q_depth,
            s_depth,
            extent: Self::measure(q_depth, s_depth),
        }
    }

    fn bumps(&self) -> [(f64, f64, f64); 3] {
        [
            (Q_CENTER, QS_SIGMA, -self.q_depth),
            (0.0, R_SIGMA, 1.0),
            (S_CENTER, QS_SIGMA, -self.s_depth),
        ]
    }

    fn eval(q_depth: f64, s_depth: f64, u: f64) -> f64 {
        let g = |c: f64, s: f64| (-0.5 * ((u - c) / s).powi(2)).exp();
        g(0.0, R_SIGMA) - q_depth * g(Q_CENTER, QS_SIGMA) - s_depth * g(S_CENTER, QS_SIGMA)
    }

    fn measure(q_depth: f64, s_depth: f64) -> (f64, f64) {
        let thr = QRS_EXTENT_FRACTION * Self::eval(q_depth, s_depth, 0.0);
        let above = |u: f64| Self::eval(q_depth, s_depth, u).abs() >= thr;
        // Coarse scan inward from each side, then bisect the crossing.
        let edge = |from: f64, step: f64| {
            let mut outer = from;
            while !above(outer + step) {
                outer += step;
            }
            let mut inner = outer + step;
            for _ in 0..40 {
                let mid = 0.5 * (outer + inner);
                if above(mid) {
                    inner = mid;
                } else {
                    outer = mid;
                }
            }
            inner
        };
        (edge(-2.0, 1e-3), edge(2.0, -1e-3))
    }

    fn lo(&self) -> f64 {
        self.extent.0
    }

    fn width(&self) -> f64 {
        self.extent.1 - self.extent.0
    }
}
