use super::filter::bandpass_filter;
use super::RawTrace;

/// Band-pass → five-point derivative → squaring → moving-window integration
/// → adaptive dual threshold with refractory period and search-back, then
/// R-peak refinement on the band-passed signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QrsDetector {
    pub low_hz: f64,
    pub high_hz: f64,
    pub integration_window_s: f64,
    pub refractory_s: f64,
    /// Half-width of the window searched for the R peak around an
    /// integrated-energy peak.
    pub refine_radius_s: f64,
}

impl Default for QrsDetector {
    fn default() -> Self {
        Self {
            low_hz: 5.0,
            high_hz: 15.0,
            integration_window_s: 0.15,
            refractory_s: 0.2,
            refine_radius_s: 0.075,
        }
    }
}

/// Integrated energy, (mV/s)², below which a trace counts as flat. Filter
/// round-off on a constant trace sits many orders of magnitude lower.
const MIN_ENERGY: f64 = 1e-6;
/// Candidates this soon after a beat are checked for T-wave slopes.
const T_WAVE_WINDOW_S: f64 = 0.36;

/// R-peak indices with the default detector.
pub fn detect_qrs(trace: &RawTrace) -> Vec<usize> {
    QrsDetector::default().detect(trace)
}

impl QrsDetector {
    pub fn detect(&self, trace: &RawTrace) -> Vec<usize> {
        let n = trace.samples.len();
        let fs = trace.sample_rate;
        if n < 8 {
            return Vec::new();
        }
        let bp = match bandpass_filter(trace, self.low_hz, self.high_hz) {
            Ok(t) => t.samples,
            Err(_) => return Vec::new(),
        };
        let slope = squared_derivative(&bp, fs);
        let energy = integrate(&slope, self.window_len(fs));
        let peaks = self.threshold(&energy, &slope, fs);
        self.refine(&bp, &peaks, fs)
    }

    fn window_len(&self, fs: f64) -> usize {
        ((self.integration_window_s * fs).round() as usize) | 1
    }

    fn refractory(&self, fs: f64) -> usize {
        (self.refractory_s * fs).round() as usize
    }

    fn threshold(&self, energy: &[f64], slope: &[f64], fs: f64) -> Vec<usize> {
        let n = energy.len();
        let max = energy.iter().copied().fold(0.0, f64::max);
        if !(max > MIN_ENERGY) {
            return Vec::new();
        }
        let candidates: Vec<usize> = (1..n - 1)
            .filter(|&i| energy[i] > energy[i - 1] && energy[i] >= energy[i + 1])
            .collect();

        let learn = ((2.0 * fs) as usize).min(n);
        let head = &energy[..learn];
        let mut spk = head.iter().copied().fold(0.0, f64::max) / 3.0;
        let mut npk = 0.5 * head.iter().sum::<f64>() / learn as f64;
        let refractory = self.refractory(fs);
        let t_window = (T_WAVE_WINDOW_S * fs).round() as usize;
        let half = self.window_len(fs) / 2;

        let mut accepted: Vec<usize> = Vec::new();
        let mut pending: Vec<usize> = Vec::new();
        let mut rr: Vec<usize> = Vec::new();

        for &c in &candidates {
            let v = energy[c];
            let thr = npk + 0.25 * (spk - npk);

            // Search back for a missed beat when the gap grows too long.
            if let (Some(&last), false) = (accepted.last(), rr.is_empty()) {
                let avg = rr.iter().sum::<usize>() as f64 / rr.len() as f64;
                if (c - last) as f64 > 1.66 * avg {
                    let best = pending
                        .iter()
                        .copied()
                        .filter(|&p| p > last && p - last >= refractory && c - p >= refractory)
                        .filter(|&p| energy[p] > 0.5 * thr)
                        .max_by(|&a, &b| energy[a].total_cmp(&energy[b]));
                    if let Some(p) = best {
                        spk = 0.25 * energy[p] + 0.75 * spk;
                        push_rr(&mut rr, p - last);
                        accepted.push(p);
                    }
                    pending.clear();
                }
            }

            // A candidate soon after a beat with much gentler slopes is a T wave.
            if let Some(&last) = accepted.last() {
                let gap = c - last;
                if v > thr && gap >= refractory && gap < t_window {
                    let s_c = max_slope(slope, c, half);
                    if s_c < 0.25 * max_slope(slope, last, half) {
                        npk = 0.125 * v + 0.875 * npk;
                        continue;
                    }
                }
            }

            if v > thr {
                match accepted.last().copied() {
                    Some(last) if c - last < refractory => {
                        if v > energy[last] {
                            *accepted.last_mut().expect("nonempty") = c;
                        }
                    }
                    last => {
                        if let Some(last) = last {
                            push_rr(&mut rr, c - last);
                        }
                        spk = 0.125 * v + 0.875 * spk;
                        accepted.push(c);
                        pending.clear();
                    }
                }
            } else {
                npk = 0.125 * v + 0.875 * npk;
                pending.push(c);
            }
        }
        accepted
    }

    fn refine(&self, bp: &[f64], peaks: &[usize], fs: f64) -> Vec<usize> {
        let radius = (self.refine_radius_s * fs).round() as usize;
        let refractory = self.refractory(fs);
        let mut out: Vec<usize> = Vec::with_capacity(peaks.len());
        for &p in peaks {
            let lo = p.saturating_sub(radius);
            let hi = (p + radius + 1).min(bp.len());
            let r = (lo..hi)
                .max_by(|&a, &b| bp[a].abs().total_cmp(&bp[b].abs()).then(b.cmp(&a)))
                .expect("window is nonempty");
            match out.last().copied() {
                Some(last) if r <= last || r - last < refractory => {
                    if r > last && bp[r].abs() > bp[last].abs() {
                        *out.last_mut().expect("nonempty") = r;
                    }
                }
                _ => out.push(r),
            }
        }
        out
    }
}

/// Largest squared slope within `half` samples of `i`.
fn max_slope(slope: &[f64], i: usize, half: usize) -> f64 {
    let lo = i.saturating_sub(half);
    let hi = (i + half + 1).min(slope.len());
    slope[lo..hi].iter().copied().fold(0.0, f64::max)
}

fn push_rr(rr: &mut Vec<usize>, interval: usize) {
    rr.push(interval);
    if rr.len() > 8 {
        rr.remove(0);
    }
}

/// Centered five-point derivative, squared.
fn squared_derivative(x: &[f64], fs: f64) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n];
    for i in 2..n.saturating_sub(2) {
        let d = (2.0 * x[i + 1] + x[i + 2] - x[i - 2] - 2.0 * x[i - 1]) * fs / 8.0;
        out[i] = d * d;
    }
    out
}

/// Centered moving average of odd width `w`.
fn integrate(x: &[f64], w: usize) -> Vec<f64> {
    let n = x.len();
    let half = w / 2;
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + x[i];
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / w as f64
        })
        .collect()
}
