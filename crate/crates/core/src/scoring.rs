//! Cosine trial scoring and adaptive score normalization (AS-norm).

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;

use crate::trialdata::{Embedding, EmbeddingSet, ScoreSet, TrialList};
use crate::{Error, Result};

/// Cohort statistics with `std` at or below this fraction of `max(1, |mean|)`
/// are treated as degenerate.
const DEGENERATE_STD: f64 = 1e-12;

pub const DEFAULT_TOP_K: usize = 300;

fn unit(values: &[f32]) -> Option<Vec<f64>> {
    let norm = values.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
    (norm > 0.0).then(|| values.iter().map(|&v| f64::from(v) / norm).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inner product of the unit-normalized inputs, clamped to `[-1, 1]`.
pub fn cosine_score(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    let ua = unit(a).ok_or(Error::ZeroNorm(None))?;
    let ub = unit(b).ok_or(Error::ZeroNorm(None))?;
    Ok(dot(&ua, &ub).clamp(-1.0, 1.0))
}

fn unit_of(emb: &Embedding) -> Result<Vec<f64>> {
    unit(&emb.values).ok_or_else(|| Error::ZeroNorm(Some(emb.id.clone())))
}

fn resolve<'a>(embeddings: &'a EmbeddingSet, trial: usize, id: &str) -> Result<&'a Embedding> {
    embeddings.get(id).ok_or_else(|| Error::UnresolvedId { trial: trial + 1, id: id.to_string() })
}

/// One cosine score per trial, in trial order.
pub fn score_trials(trials: &TrialList, embeddings: &EmbeddingSet) -> Result<ScoreSet> {
    for (i, t) in trials.iter().enumerate() {
        resolve(embeddings, i, &t.enroll_id)?;
        resolve(embeddings, i, &t.test_id)?;
    }
    let units = unit_vectors(embeddings, trials)?;
    let scores: Vec<f64> = trials
        .as_slice()
        .par_iter()
        .map(|t| dot(&units[t.enroll_id.as_str()], &units[t.test_id.as_str()]).clamp(-1.0, 1.0))
        .collect();
    ScoreSet::single(trials.clone(), scores)
}

fn unit_vectors<'a>(embeddings: &EmbeddingSet, trials: &'a TrialList) -> Result<HashMap<&'a str, Vec<f64>>> {
    let ids: BTreeSet<&str> = trials.iter().flat_map(|t| [t.enroll_id.as_str(), t.test_id.as_str()]).collect();
    ids.into_iter().map(|id| Ok((id, unit_of(embeddings.get(id).expect("resolved above"))?))).collect()
}

/// Imposter cohort for AS-norm.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub embeddings: EmbeddingSet,
    pub top_k: usize,
}

impl Cohort {
    pub fn new(embeddings: EmbeddingSet, top_k: usize) -> Result<Self> {
        if top_k == 0 {
            return Err(Error::invalid("cohort top_k must be positive"));
        }
        if top_k > embeddings.len() {
            return Err(Error::invalid(format!("cohort top_k {top_k} exceeds cohort size {}", embeddings.len())));
        }
        Ok(Self { embeddings, top_k })
    }
}

/// Mean and population standard deviation of an utterance's `top_k` highest
/// cohort scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CohortStats {
    pub mean: f64,
    pub std: f64,
}

struct PreparedCohort<'a> {
    ids: Vec<&'a str>,
    units: Vec<Vec<f64>>,
    top_k: usize,
}

impl<'a> PreparedCohort<'a> {
    fn new(cohort: &'a Cohort) -> Result<Self> {
        let mut ids = Vec::with_capacity(cohort.embeddings.len());
        let mut units = Vec::with_capacity(cohort.embeddings.len());
        for emb in &cohort.embeddings {
            ids.push(emb.id.as_str());
            units.push(unit_of(emb)?);
        }
        Ok(Self { ids, units, top_k: cohort.top_k })
    }

    fn stats(&self, id: &str, unit: &[f64]) -> Result<CohortStats> {
        let mut scored: Vec<(f64, &str)> =
            self.units.iter().zip(&self.ids).map(|(c, cid)| (dot(unit, c).clamp(-1.0, 1.0), *cid)).collect();
        // Descending score, ascending id on ties.
        let order = |a: &(f64, &str), b: &(f64, &str)| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1));
        if self.top_k < scored.len() {
            scored.select_nth_unstable_by(self.top_k - 1, order);
            scored.truncate(self.top_k);
        }
        scored.sort_unstable_by(order);
        let k = scored.len() as f64;
        let mean = scored.iter().map(|s| s.0).sum::<f64>() / k;
        let var = scored.iter().map(|s| (s.0 - mean).powi(2)).sum::<f64>() / k;
        let std = var.sqrt();
        if !(std > DEGENERATE_STD * mean.abs().max(1.0)) {
            return Err(Error::DegenerateCohort { id: id.to_string(), std });
        }
        Ok(CohortStats { mean, std })
    }
}

/// Top-k cohort statistics for a single embedding.
pub fn cohort_stats(emb: &Embedding, cohort: &Cohort) -> Result<CohortStats> {
    let prepared = PreparedCohort::new(cohort)?;
    prepared.stats(&emb.id, &unit_of(emb)?)
}

/// Symmetric adaptive normalization of single-system raw scores:
/// `s' = ½[(s − μₑ)/σₑ + (s − μₜ)/σₜ]`, with statistics over each side's
/// `top_k` most similar cohort utterances.
pub fn asnorm(raw: &ScoreSet, embeddings: &EmbeddingSet, cohort: &Cohort) -> Result<ScoreSet> {
    if raw.n_systems() != 1 {
        return Err(Error::invalid(format!(
            "asnorm expects a single-system score set, got {} systems",
            raw.n_systems()
        )));
    }
    if cohort.top_k == 0 || cohort.top_k > cohort.embeddings.len() {
        return Err(Error::invalid(format!("cohort top_k {} not in 1..={}", cohort.top_k, cohort.embeddings.len())));
    }
    let trials = raw.trials();
    for (i, t) in trials.iter().enumerate() {
        for id in [&t.enroll_id, &t.test_id] {
            resolve(embeddings, i, id)?;
            if cohort.embeddings.contains(id) {
                return Err(Error::invalid(format!("trial {}: utterance `{id}` is also in the cohort", i + 1)));
            }
        }
    }
    if cohort.embeddings.dim() != embeddings.dim() {
        return Err(Error::DimensionMismatch { expected: embeddings.dim(), got: cohort.embeddings.dim() });
    }

    let prepared = PreparedCohort::new(cohort)?;
    let units = unit_vectors(embeddings, trials)?;
    let mut ids: Vec<&str> = units.keys().copied().collect();
    ids.sort_unstable();
    let stats: HashMap<&str, CohortStats> =
        ids.par_iter().map(|&id| prepared.stats(id, &units[id]).map(|s| (id, s))).collect::<Result<_>>()?;

    let normalized: Vec<f64> = trials
        .iter()
        .zip(raw.values())
        .map(|(t, &s)| {
            let e = stats[t.enroll_id.as_str()];
            let x = stats[t.test_id.as_str()];
            0.5 * ((s - e.mean) / e.std + (s - x.mean) / x.std)
        })
        .collect();
    ScoreSet::single(trials.clone(), normalized)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trialdata::{Label, Trial};

    fn emb(id: &str, v: &[f32]) -> Embedding {
        Embedding::new(id, v.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_score(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_score(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_score(&[3.0, 4.0], &[6.0, 8.0]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(cosine_score(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroNorm(_))));
        assert!(matches!(cosine_score(&[1.0], &[1.0, 0.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn score_trials_reports_unresolved_index() {
        let set = EmbeddingSet::from_records([emb("a", &[1.0, 0.0]), emb("b", &[0.0, 1.0])]).unwrap();
        let trials =
            TrialList::new(vec![Trial::new("a", "b", Label::Unlabeled), Trial::new("a", "zzz", Label::Unlabeled)]);
        match score_trials(&trials, &set).unwrap_err() {
            Error::UnresolvedId { trial, id } => {
                assert_eq!(trial, 2);
                assert_eq!(id, "zzz");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn asnorm_hand_computed_example() {
        // Cohort scores against [1, 0] are {0.4, 0.0, -0.4}.
        let c = |id: &str, cos: f32| emb(id, &[cos, (1.0 - cos * cos).sqrt()]);
        let cohort = EmbeddingSet::from_records([c("c1", 0.4), c("c2", 0.0), c("c3", -0.4)]).unwrap();
        let set = EmbeddingSet::from_records([emb("e", &[1.0, 0.0]), emb("t", &[1.0, 0.0])]).unwrap();
        let trials = TrialList::new(vec![Trial::new("e", "t", Label::Unlabeled)]);
        let raw = ScoreSet::single(trials, vec![0.4]).unwrap();
        let out = asnorm(&raw, &set, &Cohort::new(cohort, 3).unwrap()).unwrap();
        // f32 storage of the cohort vectors perturbs the statistics slightly.
        let expected = 0.4 / (0.32f64 / 3.0).sqrt();
        assert!((out.values()[0] - expected).abs() < 1e-6, "{}", out.values()[0]);
        assert!((expected - 1.224744871).abs() < 1e-9);
    }

    #[test]
    fn asnorm_degenerate_cohort() {
        let cohort = EmbeddingSet::from_records([emb("c1", &[0.0, 1.0]), emb("c2", &[0.0, 2.0])]).unwrap();
        let set = EmbeddingSet::from_records([emb("e", &[1.0, 0.3]), emb("t", &[1.0, 0.3])]).unwrap();
        let trials = TrialList::new(vec![Trial::new("e", "t", Label::Unlabeled)]);
        let raw = ScoreSet::single(trials, vec![0.4]).unwrap();
        let err = asnorm(&raw, &set, &Cohort::new(cohort, 2).unwrap()).unwrap_err();
        assert!(matches!(err, Error::DegenerateCohort { .. }), "{err:?}");
    }

    #[test]
    fn asnorm_rejects_overlap_and_multi_system() {
        let cohort =
            EmbeddingSet::from_records([emb("e", &[0.0, 1.0]), emb("c2", &[0.5, 1.0]), emb("c3", &[1.0, 0.2])])
                .unwrap();
        let set = EmbeddingSet::from_records([emb("e", &[1.0, 0.3]), emb("t", &[0.2, 0.3])]).unwrap();
        let trials = TrialList::new(vec![Trial::new("e", "t", Label::Unlabeled)]);
        let raw = ScoreSet::single(trials.clone(), vec![0.4]).unwrap();
        assert!(asnorm(&raw, &set, &Cohort::new(cohort.clone(), 2).unwrap()).is_err());

        let two = ScoreSet::new(trials, 2, vec![0.4, 0.5]).unwrap();
        assert!(asnorm(&two, &set, &Cohort::new(cohort, 2).unwrap()).is_err());
    }

    #[test]
    fn cohort_top_k_bounds() {
        let cohort = EmbeddingSet::from_records([emb("c1", &[0.0, 1.0])]).unwrap();
        assert!(Cohort::new(cohort.clone(), 0).is_err());
        assert!(Cohort::new(cohort.clone(), 2).is_err());
        assert!(Cohort::new(cohort, 1).is_ok());
    }
}
