use super::{BeatSegment, RawTrace, SEGMENT_POST, SEGMENT_PRE};

/// Cuts `[r − 100, r + 150)` around each peak; peaks whose window leaves
/// the trace are dropped. Output keeps peak order.
pub fn segment_beats(trace: &RawTrace, peaks: &[usize]) -> Vec<BeatSegment> {
    peaks
        .iter()
        .filter_map(|&r| {
            let start = r.checked_sub(SEGMENT_PRE)?;
            let end = r.checked_add(SEGMENT_POST)?;
            (end <= trace.samples.len()).then(|| BeatSegment {
                values: trace.samples[start..end].to_vec(),
                r_index: r,
            })
        })
        .collect()
}

/// Maps values onto `[-0.5, 0.5]` by centering on the mid-range and dividing
/// by the range. A constant input has no range and becomes all zeros.
pub fn normalize_values(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let span = hi - lo;
    if values.is_empty() || !(span > 0.0) {
        return vec![0.0; values.len()];
    }
    // (x − (max + min)/2) / (max − min), written as (x − min)/span − 1/2 so
    // the extremes land on exactly ∓0.5 in floating point.
    values.iter().map(|&v| (v - lo) / span - 0.5).collect()
}

pub fn normalize_beat(segment: &BeatSegment) -> BeatSegment {
    BeatSegment {
        values: normalize_values(&segment.values),
        r_index: segment.r_index,
    }
}

/// Detects R peaks (the detector band-passes internally), cuts windows from
/// the unfiltered trace and normalizes them.
pub fn extract_beats(trace: &RawTrace) -> Vec<BeatSegment> {
    let peaks = super::detect_qrs(trace);
    segment_beats(trace, &peaks).iter().map(normalize_beat).collect()
}
