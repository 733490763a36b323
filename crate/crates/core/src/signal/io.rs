//! Raw trace files.
//!
//! CSV layout:
//!
//! ```text
//! patient_id,sample_rate
//! p01,250
//! 0.0132
//! 0.0127
//! ...
//! ```
//!
//! Binary layout: an unsigned 64-bit little-endian sample count followed by
//! that many little-endian f64 samples (millivolts). The file carries no
//! patient id or rate; readers take the id from the file stem and assume
//! 250 Hz.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

use super::RawTrace;

pub const CSV_HEADER: &str = "patient_id,sample_rate";

pub fn parse_trace_csv(text: &str) -> Result<RawTrace> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let parse_err = |line, message: String| Error::Parse { line, message };
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        Some((n, h)) => return Err(parse_err(n, format!("expected header `{CSV_HEADER}`, got `{h}`"))),
        None => return Err(parse_err(1, "empty file".into())),
    }
    let (n, meta) = lines
        .next()
        .ok_or_else(|| parse_err(2, "missing patient_id,sample_rate row".into()))?;
    let (pid, rate) = meta
        .split_once(',')
        .ok_or_else(|| parse_err(n, "expected `patient_id,sample_rate`".into()))?;
    let rate: f64 = rate
        .trim()
        .parse()
        .map_err(|_| parse_err(n, format!("bad sample rate `{rate}`")))?;
    let pid = pid.trim();
    if pid.is_empty() {
        return Err(parse_err(n, "empty patient_id".into()));
    }
    let mut samples = Vec::new();
    for (n, l) in lines {
        if l.is_empty() {
            continue;
        }
        let v: f64 = l.parse().map_err(|_| parse_err(n, format!("bad sample `{l}`")))?;
        if !v.is_finite() {
            return Err(parse_err(n, format!("non-finite sample `{l}`")));
        }
        samples.push(v);
    }
    RawTrace::with_rate(samples, rate, pid)
}

pub fn format_trace_csv(trace: &RawTrace) -> String {
    let mut s = String::with_capacity(16 * trace.len() + 64);
    s.push_str(CSV_HEADER);
    s.push('\n');
    s.push_str(&format!("{},{}\n", trace.patient_id, trace.sample_rate));
    for v in &trace.samples {
        s.push_str(&format!("{v}\n"));
    }
    s
}

pub fn encode_trace_bin(trace: &RawTrace) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * trace.len());
    out.extend_from_slice(&(trace.len() as u64).to_le_bytes());
    for v in &trace.samples {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_trace_bin(bytes: &[u8], patient_id: &str) -> Result<RawTrace> {
    if bytes.len() < 8 {
        return Err(Error::data("binary trace shorter than its 8-byte count"));
    }
    let count = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let body = &bytes[8..];
    if count.checked_mul(8) != Some(body.len()) {
        return Err(Error::data(format!(
            "binary trace declares {count} samples but carries {} bytes",
            body.len()
        )));
    }
    let samples = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(RawTrace::new(samples, patient_id))
}

/// Reads `.csv` as text and anything else as the binary layout.
pub fn read_trace(path: &Path) -> Result<RawTrace> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        parse_trace_csv(&fs::read_to_string(path)?)
    } else {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        decode_trace_bin(&fs::read(path)?, &stem)
    }
}

pub fn write_trace(path: &Path, trace: &RawTrace) -> Result<()> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        write_atomic(path, format_trace_csv(trace).as_bytes())
    } else {
        write_atomic(path, &encode_trace_bin(trace))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let t = RawTrace::new(vec![0.1, -0.25, 1e-7, 3.0], "p07");
        assert_eq!(parse_trace_csv(&format_trace_csv(&t)).unwrap(), t);
    }

    #[test]
    fn bin_round_trip() {
        let t = RawTrace::new(vec![0.1, -0.25, f64::MIN_POSITIVE], "rec");
        let b = encode_trace_bin(&t);
        assert_eq!(b.len(), 8 + 24);
        assert_eq!(&b[..8], &3u64.to_le_bytes());
        assert_eq!(decode_trace_bin(&b, "rec").unwrap(), t);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let bad = "patient_id,sample_rate\np1,250\n0.1\nabc\n";
        match parse_trace_csv(bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_trace_csv("x,y\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(
            parse_trace_csv("patient_id,sample_rate\np1,360\n0\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn truncated_binary_rejected() {
        let mut b = encode_trace_bin(&RawTrace::new(vec![1.0, 2.0], "x"));
        b.pop();
        assert!(matches!(decode_trace_bin(&b, "x"), Err(Error::Data(_))));
    }
}
