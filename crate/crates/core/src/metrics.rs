//! Detection error trade-off: operating points, EER and normalized minDCF.
//!
//! A trial is accepted when `score >= threshold`.

use serde::{Deserialize, Serialize};

use crate::trialdata::ScoreSet;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub threshold: f64,
    pub p_miss: f64,
    pub p_fa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcfParams {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        Self { p_target: 0.05, c_miss: 1.0, c_fa: 1.0 }
    }
}

impl DcfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_target > 0.0 && self.p_target < 1.0) || !(self.c_miss > 0.0) || !(self.c_fa > 0.0) {
            return Err(Error::invalid(format!("invalid DCF parameters {self:?}")));
        }
        Ok(())
    }

    /// Cost of the better of the two trivial decisions.
    pub fn normalizer(&self) -> f64 {
        (self.c_miss * self.p_target).min(self.c_fa * (1.0 - self.p_target))
    }

    pub fn normalized_cost(&self, p_miss: f64, p_fa: f64) -> f64 {
        (self.c_miss * self.p_target * p_miss + self.c_fa * (1.0 - self.p_target) * p_fa) / self.normalizer()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EerMode {
    /// Linear interpolation across the P_miss / P_fa crossing.
    #[default]
    Interpolated,
    /// Best achievable `max(P_miss, P_fa)` over the operating points.
    Staircase,
}

impl std::str::FromStr for EerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interpolated" => Ok(EerMode::Interpolated),
            "staircase" => Ok(EerMode::Staircase),
            other => Err(Error::invalid(format!("unknown EER mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub eer: f64,
    pub eer_threshold: f64,
    pub min_dcf: f64,
    pub dcf_threshold: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
}

fn check(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score {}", i + 1)));
    }
    let n_t = labels.iter().filter(|&&l| l).count();
    let n_n = labels.len() - n_t;
    if n_t == 0 || n_n == 0 {
        return Err(Error::SingleClass);
    }
    Ok((n_t, n_n))
}

/// Operating points ordered by increasing threshold: `-inf` (accept all),
/// one per distinct score, then `+inf` (reject all).
pub fn det_points(scores: &[f64], labels: &[bool]) -> Result<Vec<DetPoint>> {
    let (n_t, n_n) = check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut points = Vec::with_capacity(scores.len() + 2);
    points.push(DetPoint { threshold: f64::NEG_INFINITY, p_miss: 0.0, p_fa: 1.0 });
    // Targets and nontargets strictly below the current threshold.
    let (mut t_below, mut n_below) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let thr = scores[order[i]];
        points.push(DetPoint {
            threshold: thr,
            p_miss: t_below as f64 / n_t as f64,
            p_fa: (n_n - n_below) as f64 / n_n as f64,
        });
        while i < order.len() && scores[order[i]] == thr {
            if labels[order[i]] {
                t_below += 1;
            } else {
                n_below += 1;
            }
            i += 1;
        }
    }
    points.push(DetPoint { threshold: f64::INFINITY, p_miss: 1.0, p_fa: 0.0 });
    Ok(points)
}

fn eer_from_points(points: &[DetPoint], mode: EerMode) -> (f64, f64) {
    match mode {
        EerMode::Interpolated => {
            // P_miss rises and P_fa falls along the list; the last point always has P_miss ≥ P_fa.
            let i = points
                .iter()
                .position(|p| p.p_miss >= p.p_fa)
                .expect("reject-all point satisfies the crossing condition");
            let cur = points[i];
            if i == 0 {
                return (cur.p_miss, cur.threshold);
            }
            let prev = points[i - 1];
            let d_prev = prev.p_fa - prev.p_miss;
            let d_cur = cur.p_fa - cur.p_miss;
            let lambda = d_prev / (d_prev - d_cur);
            (prev.p_miss + lambda * (cur.p_miss - prev.p_miss), cur.threshold)
        }
        EerMode::Staircase => {
            points.iter().map(|p| (p.p_miss.max(p.p_fa), p.threshold)).fold((f64::INFINITY, f64::NAN), |best, c| {
                if c.0 < best.0 {
                    c
                } else {
                    best
                }
            })
        }
    }
}

fn min_dcf_from_points(points: &[DetPoint], params: &DcfParams) -> (f64, f64) {
    let mut best = (f64::INFINITY, f64::INFINITY);
    for p in points {
        let cost = params.normalized_cost(p.p_miss, p.p_fa);
        // Points arrive in increasing threshold order, so strict `<` keeps the smaller threshold on ties.
        if cost < best.0 {
            best = (cost, p.threshold);
        }
    }
    best
}

/// Equal error rate and the threshold of the operating point where the
/// crossing is reached.
pub fn eer(scores: &[f64], labels: &[bool], mode: EerMode) -> Result<(f64, f64)> {
    Ok(eer_from_points(&det_points(scores, labels)?, mode))
}

/// Normalized minimum detection cost and the threshold achieving it.
pub fn min_dcf(scores: &[f64], labels: &[bool], params: &DcfParams) -> Result<(f64, f64)> {
    params.validate()?;
    Ok(min_dcf_from_points(&det_points(scores, labels)?, params))
}

pub fn evaluate(scores: &[f64], labels: &[bool], params: &DcfParams, mode: EerMode) -> Result<MetricsReport> {
    params.validate()?;
    let points = det_points(scores, labels)?;
    let (eer, eer_threshold) = eer_from_points(&points, mode);
    let (min_dcf, dcf_threshold) = min_dcf_from_points(&points, params);
    let n_target = labels.iter().filter(|&&l| l).count();
    Ok(MetricsReport { eer, eer_threshold, min_dcf, dcf_threshold, n_target, n_nontarget: labels.len() - n_target })
}

/// Evaluates a single-system score set against its trial labels.
pub fn evaluate_scores(set: &ScoreSet, params: &DcfParams, mode: EerMode) -> Result<MetricsReport> {
    if set.n_systems() != 1 {
        return Err(Error::invalid(format!("expected one system, got {}", set.n_systems())));
    }
    evaluate(set.values(), &set.trials().labels()?, params, mode)
}

/// EER as a percentage with three decimals, e.g. `"2.136"`.
pub fn format_eer_percent(eer: f64) -> String {
    format!("{:.3}", eer * 100.0)
}
