//! Beat corpus CSV and synthetic corpus generation.
//!
//! ```text
//! patient_id,label,clean_label,s0,s1,...,s249
//! p01,N,N,-0.0312,...
//! rec7,V,,0.118,...
//! ```
//!
//! `label` is the training label and `clean_label` the ground truth, empty
//! when unknown. Sample values are written in shortest round-trip form, so
//! a corpus survives a write/read cycle bit for bit. The R-peak index of the
//! source trace is not stored; loaded segments carry `r_index = 0`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::label::Label;
use crate::rng::SeedStream;
use crate::signal::synth::{synth_patient_trace, PatientProfile};
use crate::signal::{normalize_beat, segment_beats, BeatSegment, SynthConfig, SEGMENT_LEN};

use super::LabeledBeat;

pub const CORPUS_HEADER_PREFIX: &str = "patient_id,label,clean_label";

fn header() -> String {
    let mut h = String::from(CORPUS_HEADER_PREFIX);
    for i in 0..SEGMENT_LEN {
        write!(h, ",s{i}").expect("string write");
    }
    h
}

pub fn format_corpus_csv(beats: &[LabeledBeat]) -> String {
    let mut s = header();
    s.push('\n');
    for b in beats {
        s.push_str(&b.patient_id);
        s.push(',');
        s.push(b.given_label.code());
        s.push(',');
        if let Some(c) = b.clean_label {
            s.push(c.code());
        }
        for v in b.values() {
            write!(s, ",{v}").expect("string write");
        }
        s.push('\n');
    }
    s
}

/// Rows with blank `label` and `clean_label`, as produced from raw traces.
pub fn format_unlabeled_csv(rows: &[(String, BeatSegment)]) -> String {
    let mut s = header();
    s.push('\n');
    for (pid, seg) in rows {
        write!(s, "{pid},,").expect("string write");
        for v in &seg.values {
            write!(s, ",{v}").expect("string write");
        }
        s.push('\n');
    }
    s
}

pub fn parse_corpus_csv(text: &str) -> Result<Vec<LabeledBeat>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let err = |line, message: String| Error::Parse { line, message };
    match lines.next() {
        Some((_, h)) if h == header() => {}
        Some((n, _)) => {
            return Err(err(
                n,
                format!("expected header `{CORPUS_HEADER_PREFIX},s0,...,s{}`", SEGMENT_LEN - 1),
            ))
        }
        None => return Err(err(1, "empty file".into())),
    }
    let mut out = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 + SEGMENT_LEN {
            return Err(err(
                n,
                format!("expected {} fields, got {}", 3 + SEGMENT_LEN, fields.len()),
            ));
        }
        let pid = fields[0].trim();
        if pid.is_empty() {
            return Err(err(n, "empty patient_id".into()));
        }
        let label: Label = fields[1].parse().map_err(|e: Error| err(n, e.to_string()))?;
        let clean = match fields[2].trim() {
            "" => None,
            c => Some(c.parse::<Label>().map_err(|e| err(n, e.to_string()))?),
        };
        let values = fields[3..]
            .iter()
            .enumerate()
            .map(|(i, f)| match f.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(err(n, format!("bad value `{f}` in column s{i}"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        let mut beat = LabeledBeat::new(values, label, pid);
        beat.clean_label = clean;
        out.push(beat);
    }
    Ok(out)
}

pub fn read_corpus(path: &Path) -> Result<Vec<LabeledBeat>> {
    parse_corpus_csv(&fs::read_to_string(path)?)
}

pub fn write_corpus(path: &Path, beats: &[LabeledBeat]) -> Result<()> {
    write_atomic(path, format_corpus_csv(beats).as_bytes())
}

/// Shape of a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub classes: Vec<Label>,
    pub beats_per_class: usize,
    pub patients: usize,
    /// Waveform parameters; `synth.seed` seeds the whole corpus.
    pub synth: SynthConfig,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            classes: Label::ALL.to_vec(),
            beats_per_class: 2000,
            patients: 12,
            synth: SynthConfig::default(),
        }
    }
}

/// Normalized, clean-labeled beats for every (patient, class) pair. Each
/// patient has one morphology profile shared across classes, and each class
/// count is spread as evenly as possible over patients. Premature classes
/// come from alternating traces, of which only the premature beats are kept.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<LabeledBeat>> {
    spec.synth.validate()?;
    if spec.patients == 0 || spec.beats_per_class == 0 || spec.classes.is_empty() {
        return Err(Error::config("corpus needs >= 1 patient, class and beat per class"));
    }
    let seeds = SeedStream::new(spec.synth.seed);
    let mut out = Vec::with_capacity(spec.beats_per_class * spec.classes.len());
    for p in 0..spec.patients {
        let pid = format!("p{:02}", p + 1);
        let profile = PatientProfile::sample(&spec.synth, &mut seeds.child("profile", p as u64).rng(crate::rng::DATA));
        for (ci, &class) in spec.classes.iter().enumerate() {
            let want = spec.beats_per_class / spec.patients + usize::from(p < spec.beats_per_class % spec.patients);
            if want == 0 {
                continue;
            }
            let n_beats = match class {
                Label::S | Label::V => 2 * want + 1,
                _ => want,
            };
            let mut rng = seeds
                .child("trace", (p * Label::ALL.len() + ci) as u64)
                .rng(crate::rng::DATA);
            let t = synth_patient_trace(&spec.synth, &profile, n_beats, class, &mut rng, pid.clone())?;
            let segs = segment_beats(&t.trace, &t.peaks);
            debug_assert_eq!(segs.len(), t.peaks.len());
            let mut kept = 0;
            for (seg, &label) in segs.iter().zip(&t.labels) {
                if label != class {
                    continue;
                }
                let mut b = LabeledBeat::new(Vec::new(), label, pid.clone());
                b.segment = normalize_beat(seg);
                out.push(b);
                kept += 1;
            }
            if kept != want {
                return Err(Error::data(format!(
                    "patient {pid} class {class}: {kept} beats, wanted {want}"
                )));
            }
        }
    }
    Ok(out)
}
