#![allow(clippy::needless_range_loop)]
//! Independent reference implementations used by the integration and
//! acceptance tests. Deliberately naive.
#![allow(dead_code)]

/// Brute-force operating points: thresholds at `-inf`, every midpoint
/// between consecutive distinct scores, and `+inf`. Returns
/// `(threshold, p_miss, p_fa)` with acceptance iff `score >= threshold`.
pub fn sweep(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64, f64)> {
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    let mut thresholds = vec![f64::NEG_INFINITY];
    for w in distinct.windows(2) {
        thresholds.push(0.5 * (w[0] + w[1]));
    }
    thresholds.push(f64::INFINITY);
    let n_t = labels.iter().filter(|&&l| l).count() as f64;
    let n_n = labels.len() as f64 - n_t;
    thresholds
        .into_iter()
        .map(|thr| {
            let mut miss = 0.0;
            let mut fa = 0.0;
            for (&s, &l) in scores.iter().zip(labels) {
                if l && s < thr {
                    miss += 1.0;
                }
                if !l && s >= thr {
                    fa += 1.0;
                }
            }
            (thr, miss / n_t, fa / n_n)
        })
        .collect()
}

/// EER by linear interpolation at the first point where `p_miss >= p_fa`.
pub fn brute_eer(scores: &[f64], labels: &[bool]) -> f64 {
    let pts = sweep(scores, labels);
    let i = pts.iter().position(|p| p.1 >= p.2).unwrap();
    if i == 0 {
        return pts[0].1;
    }
    let (a, b) = (pts[i - 1], pts[i]);
    // Solve p_miss(λ) = p_fa(λ) along the segment.
    let da = a.2 - a.1;
    let db = b.2 - b.1;
    let lam = da / (da - db);
    a.1 + lam * (b.1 - a.1)
}

pub fn brute_min_dcf(scores: &[f64], labels: &[bool], p_target: f64, c_miss: f64, c_fa: f64) -> f64 {
    let norm = (c_miss * p_target).min(c_fa * (1.0 - p_target));
    sweep(scores, labels)
        .into_iter()
        .map(|(_, m, f)| (c_miss * p_target * m + c_fa * (1.0 - p_target) * f) / norm)
        .fold(f64::INFINITY, f64::min)
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    ab / (aa.sqrt() * bb.sqrt())
}

/// Mean and population std of the `k` largest cohort scores against `x`.
pub fn topk_stats(x: &[f32], cohort: &[Vec<f32>], k: usize) -> (f64, f64) {
    let mut s: Vec<f64> = cohort.iter().map(|c| cosine(x, c)).collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let top = &s[..k];
    let mean = top.iter().sum::<f64>() / k as f64;
    let var = top.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k as f64;
    (mean, var.sqrt())
}

pub fn brute_asnorm(enroll: &[f32], test: &[f32], cohort: &[Vec<f32>], k: usize) -> f64 {
    let s = cosine(enroll, test);
    let (me, se) = topk_stats(enroll, cohort, k);
    let (mt, st) = topk_stats(test, cohort, k);
    0.5 * ((s - me) / se + (s - mt) / st)
}

fn log1pexp(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

/// Objective `mean BCE + λ Σ_{regularized} θ²` over rows `x` (bias column not included).
pub fn logistic_objective(x: &[Vec<f64>], y: &[bool], theta: &[f64], lambda: f64, reg: &[bool]) -> f64 {
    let n = x.len() as f64;
    let mut total = 0.0;
    for (row, &label) in x.iter().zip(y) {
        let z: f64 = row.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() + theta[theta.len() - 1];
        total += if label { log1pexp(-z) } else { log1pexp(z) };
    }
    let penalty: f64 = theta.iter().zip(reg).filter(|(_, &r)| r).map(|(t, _)| t * t).sum();
    total / n + lambda * penalty
}

/// Gaussian elimination with partial pivoting.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap()).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

/// Regularized logistic regression by iteratively reweighted least squares.
/// `x` rows hold features; a bias is appended as the last parameter and is
/// never regularized. `reg[j]` marks which feature weights carry the L2 term.
pub fn fit_logistic(x: &[Vec<f64>], y: &[bool], lambda: f64, reg: &[bool]) -> Vec<f64> {
    let p = x[0].len() + 1;
    let n = x.len() as f64;
    let mut theta = vec![0.0; p];
    for _ in 0..200 {
        let mut grad = vec![0.0; p];
        let mut hess = vec![vec![0.0; p]; p];
        for (row, &label) in x.iter().zip(y) {
            let mut xi = row.clone();
            xi.push(1.0);
            let z: f64 = xi.iter().zip(&theta).map(|(a, b)| a * b).sum();
            let prob = 1.0 / (1.0 + (-z).exp());
            let r = prob - if label { 1.0 } else { 0.0 };
            let w = prob * (1.0 - prob);
            for i in 0..p {
                grad[i] += r * xi[i] / n;
                for j in 0..p {
                    hess[i][j] += w * xi[i] * xi[j] / n;
                }
            }
        }
        for i in 0..p - 1 {
            if reg[i] {
                grad[i] += 2.0 * lambda * theta[i];
                hess[i][i] += 2.0 * lambda;
            }
        }
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm < 1e-13 {
            break;
        }
        let step = solve_linear(hess, grad);
        for i in 0..p {
            theta[i] -= step[i];
        }
    }
    theta
}

/// Central finite-difference gradient of `f` at `x`.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute difference when both are tiny.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Direct-form linear convolution truncated to `n` samples.
pub fn naive_convolve(x: &[f64], h: &[f64], n: usize) -> Vec<f64> {
    (0..n).map(|i| (0..h.len()).filter(|&k| k <= i && i - k < x.len()).map(|k| h[k] * x[i - k]).sum()).collect()
}

/// Index of the largest DFT magnitude over bins `1..n/2`, by direct summation.
pub fn dft_peak_bin(x: &[f64]) -> usize {
    let n = x.len();
    (1..n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &v) in x.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * (k * t % n) as f64 / n as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            (k, re * re + im * im)
        })
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap()
        .0
}
