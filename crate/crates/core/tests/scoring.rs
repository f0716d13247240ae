mod oracle;

use proptest::prelude::*;
use rand::Rng;
use svkit::rng::{self, Rng as ChaRng};
use svkit::scoring::{asnorm, score_trials, Cohort};
use svkit::trialdata::{Embedding, EmbeddingSet, Label, Trial, TrialList};

fn random_vec(dim: usize, r: &mut ChaRng) -> Vec<f32> {
    (0..dim).map(|_| r.gen_range(-1.0f32..1.0)).collect()
}

struct Fixture {
    embeddings: EmbeddingSet,
    cohort: Vec<Vec<f32>>,
    trials: TrialList,
}

fn fixture(seed: u64, n_utts: usize, n_cohort: usize, dim: usize) -> Fixture {
    let mut r = rng::seeded(seed);
    let embeddings = EmbeddingSet::from_records(
        (0..n_utts).map(|i| Embedding::new(format!("u{i}"), random_vec(dim, &mut r)).unwrap()),
    )
    .unwrap();
    let cohort = (0..n_cohort).map(|_| random_vec(dim, &mut r)).collect();
    let trials = TrialList::new(
        (0..3 * n_utts)
            .map(|_| {
                let a = r.gen_range(0..n_utts);
                let b = r.gen_range(0..n_utts);
                Trial::new(format!("u{a}"), format!("u{b}"), Label::Unlabeled)
            })
            .collect(),
    );
    Fixture { embeddings, cohort, trials }
}

fn cohort_set(vectors: &[Vec<f32>], order: &[usize]) -> EmbeddingSet {
    EmbeddingSet::from_records(order.iter().map(|&i| Embedding::new(format!("c{i:03}"), vectors[i].clone()).unwrap()))
        .unwrap()
}

#[test]
fn asnorm_matches_brute_force() {
    for seed in 0..40u64 {
        let mut r = rng::seeded(1000 + seed);
        let n_cohort = r.gen_range(3..=50);
        let f = fixture(seed, 8, n_cohort, r.gen_range(2..12));
        let order: Vec<usize> = (0..n_cohort).collect();
        let raw = score_trials(&f.trials, &f.embeddings).unwrap();
        // A single selected score has zero spread: the oracle divides by zero
        // and the library reports a degenerate cohort.
        let single = Cohort::new(cohort_set(&f.cohort, &order), 1).unwrap();
        assert!(matches!(asnorm(&raw, &f.embeddings, &single), Err(svkit::Error::DegenerateCohort { .. })));
        let t = &f.trials[0];
        let e = &f.embeddings.get(&t.enroll_id).unwrap().values;
        let x = &f.embeddings.get(&t.test_id).unwrap().values;
        assert!(!oracle::brute_asnorm(e, x, &f.cohort, 1).is_finite());
        for k in [3.min(n_cohort), n_cohort] {
            let cohort = Cohort::new(cohort_set(&f.cohort, &order), k).unwrap();
            let normed = asnorm(&raw, &f.embeddings, &cohort).unwrap();
            for (i, t) in f.trials.iter().enumerate() {
                let e = &f.embeddings.get(&t.enroll_id).unwrap().values;
                let x = &f.embeddings.get(&t.test_id).unwrap().values;
                let want = oracle::brute_asnorm(e, x, &f.cohort, k);
                assert!((normed.row(i)[0] - want).abs() <= 1e-9, "seed {seed} k {k}");
            }
        }
    }
}

#[test]
fn full_top_k_is_snorm() {
    let f = fixture(5, 6, 20, 8);
    let order: Vec<usize> = (0..20).collect();
    let cohort = Cohort::new(cohort_set(&f.cohort, &order), 20).unwrap();
    let raw = score_trials(&f.trials, &f.embeddings).unwrap();
    let normed = asnorm(&raw, &f.embeddings, &cohort).unwrap();
    let stats = |v: &[f32]| {
        let s: Vec<f64> = f.cohort.iter().map(|c| oracle::cosine(v, c)).collect();
        let m = s.iter().sum::<f64>() / s.len() as f64;
        let sd = (s.iter().map(|x| (x - m).powi(2)).sum::<f64>() / s.len() as f64).sqrt();
        (m, sd)
    };
    for (i, t) in f.trials.iter().enumerate() {
        let e = &f.embeddings.get(&t.enroll_id).unwrap().values;
        let x = &f.embeddings.get(&t.test_id).unwrap().values;
        let (me, se) = stats(e);
        let (mt, st) = stats(x);
        let s = raw.row(i)[0];
        let snorm = 0.5 * ((s - me) / se + (s - mt) / st);
        assert!((normed.row(i)[0] - snorm).abs() <= 1e-9);
    }
}

#[test]
fn raw_scores_are_cosines() {
    let f = fixture(9, 10, 5, 16);
    let raw = score_trials(&f.trials, &f.embeddings).unwrap();
    for (i, t) in f.trials.iter().enumerate() {
        let want = oracle::cosine(
            &f.embeddings.get(&t.enroll_id).unwrap().values,
            &f.embeddings.get(&t.test_id).unwrap().values,
        );
        assert!((raw.row(i)[0] - want).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cohort_order_does_not_matter(seed in 0u64..1000, k in 2usize..10) {
        let f = fixture(seed, 5, 12, 6);
        let raw = score_trials(&f.trials, &f.embeddings).unwrap();
        let mut order: Vec<usize> = (0..12).collect();
        let a = asnorm(&raw, &f.embeddings, &Cohort::new(cohort_set(&f.cohort, &order), k).unwrap()).unwrap();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng::seeded(seed));
        let b = asnorm(&raw, &f.embeddings, &Cohort::new(cohort_set(&f.cohort, &order), k).unwrap()).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn cohort_members_outside_every_top_k_are_irrelevant(seed in 0u64..1000) {
        let f = fixture(seed, 5, 10, 6);
        let raw = score_trials(&f.trials, &f.embeddings).unwrap();
        let order: Vec<usize> = (0..10).collect();
        let a = asnorm(&raw, &f.embeddings, &Cohort::new(cohort_set(&f.cohort, &order), 3).unwrap()).unwrap();
        // A member anti-aligned with every embedding never reaches a top-3.
        let mut extended = f.cohort.clone();
        let mut sum = vec![0f32; 6];
        for e in f.embeddings.iter() {
            let n = e.values.iter().map(|v| v * v).sum::<f32>().sqrt();
            for (s, v) in sum.iter_mut().zip(&e.values) {
                *s -= v / n;
            }
        }
        extended.push(sum);
        let idx: Vec<usize> = (0..11).collect();
        let b_set = cohort_set(&extended, &idx);
        let worst_is_irrelevant = f.embeddings.iter().all(|e| {
            let mut s: Vec<f64> = f.cohort.iter().map(|c| oracle::cosine(&e.values, c)).collect();
            s.sort_by(|x, y| y.partial_cmp(x).unwrap());
            oracle::cosine(&e.values, &extended[10]) < s[2]
        });
        prop_assume!(worst_is_irrelevant);
        let b = asnorm(&raw, &f.embeddings, &Cohort::new(b_set, 3).unwrap()).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }
}
