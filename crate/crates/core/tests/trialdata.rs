use std::collections::HashSet;

use proptest::prelude::*;
use svkit::trialdata::{
    build_calibration_trials, parse_embeddings, parse_metadata, parse_trials, read_scores, write_embeddings,
    write_metadata, write_score_file, write_trials, Embedding, EmbeddingFormat, EmbeddingSet, Label, MetadataSet,
    Trial, TrialList, UtteranceMeta,
};

fn population(n_speakers: usize, per_speaker: usize) -> MetadataSet {
    MetadataSet::new(
        (0..n_speakers)
            .flat_map(|s| {
                (0..per_speaker).map(move |u| UtteranceMeta {
                    id: format!("spk{s:03}-utt{u:02}"),
                    duration_seconds: 1.0 + u as f64,
                    snr_db: None,
                    speaker: Some(format!("spk{s:03}")),
                })
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn thirty_thousand_calibration_trials() {
    let meta = population(200, 12);
    let trials = build_calibration_trials(&meta, 30_000, 7).unwrap();
    assert_eq!(trials.len(), 30_000);
    let speaker = |id: &str| meta.get(id).unwrap().speaker.clone().unwrap();
    let mut seen = HashSet::new();
    let mut targets = 0;
    for t in trials.iter() {
        assert!(seen.insert((t.enroll_id.clone(), t.test_id.clone())), "duplicate pair");
        assert_ne!(t.enroll_id, t.test_id);
        let same = speaker(&t.enroll_id) == speaker(&t.test_id);
        match t.label {
            Label::Target => {
                assert!(same);
                targets += 1;
            }
            Label::Nontarget => assert!(!same),
            Label::Unlabeled => panic!("unlabeled calibration trial"),
        }
    }
    assert_eq!(targets, 15_000);
    assert_eq!(build_calibration_trials(&meta, 30_000, 7).unwrap(), trials);
    assert_ne!(build_calibration_trials(&meta, 30_000, 8).unwrap(), trials);
}

#[test]
fn calibration_trials_reject_impossible_counts() {
    let meta = population(2, 2);
    assert_eq!(build_calibration_trials(&meta, 4, 0).unwrap().len(), 4);
    // Only 4 ordered same-speaker pairs exist.
    assert!(build_calibration_trials(&meta, 10, 0).is_err());
}

#[test]
fn text_and_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let trials = TrialList::new(vec![Trial::new("a", "b", Label::Target), Trial::new("a", "c", Label::Nontarget)]);
    let tpath = dir.path().join("trials.txt");
    write_trials(&tpath, &trials).unwrap();
    assert_eq!(parse_trials(&tpath).unwrap(), trials);

    let spath = dir.path().join("scores.txt");
    let scores = [0.125, -1e-300];
    write_score_file(&spath, &trials, &scores).unwrap();
    let back = read_scores(std::fs::read(&spath).unwrap().as_slice()).unwrap();
    assert_eq!(back.iter().map(|r| r.2).collect::<Vec<_>>(), scores);

    let meta = population(3, 2);
    let mpath = dir.path().join("meta.json");
    write_metadata(&mpath, &meta).unwrap();
    assert_eq!(parse_metadata(&mpath).unwrap().items(), meta.items());
}

fn embedding_set() -> impl Strategy<Value = EmbeddingSet> {
    (1usize..16, 1usize..20).prop_flat_map(|(dim, n)| {
        prop::collection::vec(prop::collection::vec(-1e6f32..1e6, dim), n).prop_map(|rows| {
            EmbeddingSet::from_records(
                rows.into_iter().enumerate().map(|(i, v)| Embedding::new(format!("utt-{i}"), v).unwrap()),
            )
            .unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn binary_round_trip_is_bit_exact(set in embedding_set()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.bin");
        write_embeddings(&path, &set, EmbeddingFormat::Binary).unwrap();
        let back = parse_embeddings(&path, EmbeddingFormat::Binary).unwrap();
        prop_assert_eq!(back.len(), set.len());
        for (a, b) in set.iter().zip(back.iter()) {
            prop_assert_eq!(&a.id, &b.id);
            let bits_a: Vec<u32> = a.values.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = b.values.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn text_round_trip_is_close(set in embedding_set()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.txt");
        write_embeddings(&path, &set, EmbeddingFormat::Text).unwrap();
        let back = parse_embeddings(&path, EmbeddingFormat::Text).unwrap();
        for (a, b) in set.iter().zip(back.iter()) {
            prop_assert_eq!(&a.id, &b.id);
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0));
            }
        }
    }
}
