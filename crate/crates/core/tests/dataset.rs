use std::collections::{BTreeMap, BTreeSet};

use negres::dataset::{
    balance_classes, balance_indices, class_counts, format_corpus_csv, generate_corpus, inject_label_noise,
    parse_corpus_csv, patients, split_by_patient, CorpusSpec, LabeledBeat, NoiseSpec,
};
use negres::label::{Label, Taxonomy};
use negres::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Beats with a unique tag value so identity survives shuffles.
fn tagged(n: usize, patients: usize) -> Vec<LabeledBeat> {
    (0..n)
        .map(|i| LabeledBeat::new(vec![i as f64], Label::ALL[i % 6], format!("p{}", i % patients)))
        .collect()
}

fn tags(beats: &[LabeledBeat]) -> Vec<u64> {
    let mut t: Vec<u64> = beats.iter().map(|b| b.values()[0] as u64).collect();
    t.sort();
    t
}

#[test]
fn table_ii_counts_balance_to_smallest_class() {
    let counts = [
        (Label::N, 3_501_003),
        (Label::V, 194_469),
        (Label::S, 45_536),
        (Label::A, 96_052),
        (Label::E, 46_437),
        (Label::Q, 148_020),
    ];
    let labels: Vec<Label> = counts.iter().flat_map(|&(l, n)| std::iter::repeat_n(l, n)).collect();
    let idx = balance_indices(&labels, &Label::ALL, &mut rng(5)).unwrap();
    assert_eq!(idx.len(), 6 * 45_536);
    for l in Label::ALL {
        assert_eq!(idx.iter().filter(|&&i| labels[i] == l).count(), 45_536);
    }
}

#[test]
fn balanced_input_is_a_fixed_point() {
    let beats = tagged(60, 3);
    let out = balance_classes(&beats, Taxonomy::Full, &mut rng(1)).unwrap();
    assert_eq!(tags(&out), tags(&beats));
}

#[test]
fn flip_fraction_and_uniform_targets() {
    let n = 100_000;
    let beats: Vec<LabeledBeat> = (0..n).map(|_| LabeledBeat::new(vec![0.0], Label::N, "p")).collect();
    let (out, rep) = inject_label_noise(&beats, &NoiseSpec::symmetric(0.3, 17), Taxonomy::Full).unwrap();
    assert!((rep.flip_fraction() - 0.3).abs() <= 0.01, "{}", rep.flip_fraction());
    let mut hist: BTreeMap<Label, usize> = BTreeMap::new();
    for b in &out {
        assert_eq!(b.clean_label, Some(Label::N));
        if b.given_label != Label::N {
            *hist.entry(b.given_label).or_default() += 1;
        }
    }
    let flipped: usize = hist.values().sum();
    assert_eq!(flipped, rep.flipped);
    assert_eq!(hist.len(), 5);
    // Chi-square goodness of fit against the uniform over 5 alternatives.
    let expected = flipped as f64 / 5.0;
    let stat: f64 = hist.values().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(4.0).unwrap().cdf(stat);
    assert!(p > 0.01, "chi2 {stat} p {p}");
}

#[test]
fn flips_never_keep_the_clean_label() {
    let beats = tagged(6000, 4);
    let (out, rep) = inject_label_noise(&beats, &NoiseSpec::symmetric(0.5, 2), Taxonomy::Full).unwrap();
    let changed = out.iter().filter(|b| b.is_mislabeled()).count();
    assert_eq!(changed, rep.flipped);
    assert_eq!(rep.eligible, 5000);
}

#[test]
fn exempt_class_survives_full_noise() {
    let beats = tagged(600, 2);
    let (out, rep) = inject_label_noise(&beats, &NoiseSpec::symmetric(1.0, 9), Taxonomy::Full).unwrap();
    for b in &out {
        if b.clean_label == Some(Label::A) {
            assert_eq!(b.given_label, Label::A);
        } else {
            assert_ne!(Some(b.given_label), b.clean_label);
        }
    }
    assert_eq!(rep.flipped, 500);
}

#[test]
fn balance_inject_split_preserve_identity() {
    let mut beats = tagged(900, 7);
    beats.extend(tagged(50, 7).into_iter().map(|mut b| {
        b.given_label = Label::N;
        b.clean_label = Some(Label::N);
        b.segment.values[0] += 10_000.0;
        b
    }));
    let balanced = balance_classes(&beats, Taxonomy::Full, &mut rng(3)).unwrap();
    let (noisy, _) = inject_label_noise(&balanced, &NoiseSpec::symmetric(0.3, 4), Taxonomy::Full).unwrap();
    let (train, val) = split_by_patient(&noisy, 2, &mut rng(5)).unwrap();
    let mut joined = train.clone();
    joined.extend(val.clone());
    assert_eq!(tags(&joined), tags(&balanced));
}

#[test]
fn split_partitions_patients() {
    let beats = tagged(650, 65);
    for seed in 0..20 {
        let (train, val) = split_by_patient(&beats, 2, &mut rng(seed)).unwrap();
        let vp: BTreeSet<String> = patients(&val).into_iter().collect();
        let tp: BTreeSet<String> = patients(&train).into_iter().collect();
        assert_eq!(vp.len(), 2);
        assert!(vp.is_disjoint(&tp));
        assert_eq!(vp.len() + tp.len(), 65);
        // Validation holds every beat of the chosen patients.
        let expected = beats.iter().filter(|b| vp.contains(&b.patient_id)).count();
        assert_eq!(val.len(), expected);
    }
    let a = split_by_patient(&beats, 3, &mut rng(8)).unwrap();
    let b = split_by_patient(&beats, 3, &mut rng(8)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn corpus_csv_round_trip() {
    let mut beats = generate_corpus(&CorpusSpec {
        beats_per_class: 12,
        patients: 3,
        ..CorpusSpec::default()
    })
    .unwrap();
    beats[0].clean_label = None;
    let text = format_corpus_csv(&beats);
    assert!(text.starts_with("patient_id,label,clean_label,s0,s1,"));
    let back = parse_corpus_csv(&text).unwrap();
    assert_eq!(back.len(), beats.len());
    for (a, b) in back.iter().zip(&beats) {
        assert_eq!(a.values(), b.values());
        assert_eq!((a.given_label, a.clean_label), (b.given_label, b.clean_label));
        assert_eq!(a.patient_id, b.patient_id);
    }
    assert_eq!(format_corpus_csv(&back), text);
}

#[test]
fn corpus_parse_errors_name_the_line() {
    let beats = generate_corpus(&CorpusSpec {
        beats_per_class: 2,
        patients: 1,
        classes: vec![Label::N],
        ..CorpusSpec::default()
    })
    .unwrap();
    let text = format_corpus_csv(&beats).replacen("p01,N,N", "p01,X,N", 1);
    assert!(matches!(parse_corpus_csv(&text), Err(Error::Parse { line: 2, .. })));
    let full = format_corpus_csv(&beats);
    let mut lines: Vec<&str> = full.lines().collect();
    lines[2] = "p01,N,N,1,2";
    assert!(matches!(
        parse_corpus_csv(&lines.join("\n")),
        Err(Error::Parse { line: 3, .. })
    ));
}

#[test]
fn generated_corpus_shape() {
    let spec = CorpusSpec {
        beats_per_class: 40,
        patients: 6,
        ..CorpusSpec::default()
    };
    let beats = generate_corpus(&spec).unwrap();
    assert_eq!(beats.len(), 240);
    assert_eq!(patients(&beats).len(), 6);
    for (_, n) in class_counts(&beats, Taxonomy::Full) {
        assert_eq!(n, 40);
    }
    for b in &beats {
        assert_eq!(b.values().len(), 250);
        let max = b.values().iter().copied().fold(f64::MIN, f64::max);
        let min = b.values().iter().copied().fold(f64::MAX, f64::min);
        assert_eq!((min, max), (-0.5, 0.5));
        assert_eq!(b.clean_label, Some(b.given_label));
    }
    assert_eq!(generate_corpus(&spec).unwrap(), beats);
}
