use std::fs;

use ppg_stress::signal_io::{
    load_dataset, synth_cohort, write_dataset, Condition, SynthCohortSpec,
};
use ppg_stress::Error;

fn small_cohort() -> ppg_stress::signal_io::Dataset {
    synth_cohort(&SynthCohortSpec {
        n_subjects: 2,
        span_s: 120.0,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn manifest_round_trip() {
    let ds = small_cohort();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(&ds, dir.path()).unwrap();
    assert!(manifest.ends_with("manifest.json"));
    let back = load_dataset(&manifest).unwrap();

    assert_eq!(back.len(), ds.len());
    for (a, b) in ds.traces().iter().zip(back.traces()) {
        assert_eq!(a.subject_id, b.subject_id);
        assert_eq!(a.fs, b.fs);
        assert_eq!(a.samples.len(), b.samples.len());
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0), "{x} vs {y}");
        }
        assert_eq!(a.annotations, b.annotations);
        assert_eq!(a.suds, b.suds);
    }
}

#[test]
fn bad_signal_row_names_subject_and_line() {
    let ds = small_cohort();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(&ds, dir.path()).unwrap();
    let path = dir.path().join("S02_ppg.csv");
    let mut text = fs::read_to_string(&path).unwrap();
    text = text.replacen('\n', "\nnot-a-number\n", 1);
    fs::write(&path, text).unwrap();

    match load_dataset(&manifest) {
        Err(Error::Record { subject, line, .. }) => {
            assert_eq!(subject, "S02");
            assert_eq!(line, 2);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn unknown_condition_is_rejected() {
    let ds = small_cohort();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(&ds, dir.path()).unwrap();
    let path = dir.path().join("S01_annotations.csv");
    let text = fs::read_to_string(&path)
        .unwrap()
        .replace("stressful", "panicked");
    fs::write(&path, text).unwrap();
    let err = load_dataset(&manifest).unwrap_err();
    assert!(err.to_string().contains("S01"), "{err}");
}

#[test]
fn missing_file_names_subject() {
    let ds = small_cohort();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(&ds, dir.path()).unwrap();
    fs::remove_file(dir.path().join("S01_suds.csv")).unwrap();
    match load_dataset(&manifest) {
        Err(Error::Subject { subject, message }) => {
            assert_eq!(subject, "S01");
            assert!(message.contains("S01_suds.csv"), "{message}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn malformed_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.json");
    fs::write(&path, "{\"subjects\": 3}").unwrap();
    assert!(matches!(load_dataset(&path), Err(Error::Manifest { .. })));
}

#[test]
fn cohort_layout() {
    let ds = small_cohort();
    for t in ds.traces() {
        assert_eq!(t.annotations.len(), 2);
        assert_eq!(t.annotations[0].condition, Condition::Relaxing);
        assert_eq!(t.annotations[1].condition, Condition::Stressful);
        assert_eq!(t.samples.len(), (240.0 * t.fs) as usize);
    }
}
