//! Linear separation: the max-margin half-space, conjunctions of half-spaces,
//! the one-dimensional threshold learner and integer simplification.

use std::fmt;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_SOLVER_BUDGET: Duration = Duration::from_secs(5);
pub const MAX_DENOMINATOR: i64 = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearnError {
    #[error("vectors of width {found} mixed with width {expected}")]
    WidthMismatch { expected: usize, found: usize },
}

/// `Σ coeffs[i]·x[i] ≥ rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl HalfSpace {
    pub fn accepts(&self, x: &[f64]) -> bool {
        dot(&self.coeffs, x) >= self.rhs
    }

    pub fn norm(&self) -> f64 {
        dot(&self.coeffs, &self.coeffs).sqrt()
    }

    /// Scaled to unit coefficient norm. The sign is kept, since flipping it
    /// would flip the accepted side.
    pub fn canonical(&self) -> HalfSpace {
        let n = self.norm();
        HalfSpace {
            coeffs: self.coeffs.iter().map(|c| c / n).collect(),
            rhs: self.rhs / n,
        }
    }

    /// Geometric margin over a dataset: half the gap between the closest
    /// positive and the closest negative, along the unit normal.
    pub fn margin(&self, positives: &[Vec<f64>], negatives: &[Vec<f64>]) -> f64 {
        let h = self.canonical();
        let lo = positives
            .iter()
            .map(|p| dot(&h.coeffs, p))
            .fold(f64::INFINITY, f64::min);
        let hi = negatives
            .iter()
            .map(|n| dot(&h.coeffs, n))
            .fold(f64::NEG_INFINITY, f64::max);
        (lo - hi) / 2.0
    }

    /// Both sides agree within `tol` after normalization.
    pub fn approx_eq(&self, other: &HalfSpace, tol: f64) -> bool {
        let (a, b) = (self.canonical(), other.canonical());
        a.coeffs.len() == b.coeffs.len()
            && a.coeffs
                .iter()
                .zip(&b.coeffs)
                .all(|(x, y)| (x - y).abs() <= tol)
            && (a.rhs - b.rhs).abs() <= tol * a.rhs.abs().max(1.0)
    }

    /// Renders with positive terms on the left and negated terms on the
    /// right. A clause with no positive term is shown with `≤`.
    pub fn pretty(&self, names: &[String]) -> String {
        let term = |c: f64, name: &str| {
            if c == 1.0 {
                name.to_string()
            } else {
                format!("{}*{}", fmt_num(c), name)
            }
        };
        let left: Vec<String> = self
            .coeffs
            .iter()
            .zip(names)
            .filter(|(c, _)| **c > 0.0)
            .map(|(c, n)| term(*c, n))
            .collect();
        let right: Vec<String> = self
            .coeffs
            .iter()
            .zip(names)
            .filter(|(c, _)| **c < 0.0)
            .map(|(c, n)| term(-c, n))
            .collect();
        if left.is_empty() {
            let rhs = -self.rhs;
            return format!("{} ≤ {}", right.join(" + "), fmt_num(rhs + 0.0));
        }
        let rhs = if right.is_empty() {
            fmt_num(self.rhs + 0.0)
        } else if self.rhs == 0.0 {
            right.join(" + ")
        } else if self.rhs > 0.0 {
            format!("{} + {}", right.join(" + "), fmt_num(self.rhs))
        } else {
            format!("{} - {}", right.join(" + "), fmt_num(-self.rhs))
        };
        format!("{} ≥ {}", left.join(" + "), rhs)
    }
}

/// Integral values print without a fraction; others in shortest
/// round-trip form.
pub fn fmt_num(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub clauses: Vec<HalfSpace>,
    pub feature_indices: Vec<usize>,
}

impl Classifier {
    pub fn accepts(&self, x: &[f64]) -> bool {
        self.clauses.iter().all(|h| h.accepts(x))
    }

    pub fn classifies(&self, positives: &[Vec<f64>], negatives: &[Vec<f64>]) -> bool {
        positives.iter().all(|p| self.accepts(p)) && negatives.iter().all(|n| !self.accepts(n))
    }

    pub fn approx_eq(&self, other: &Classifier, tol: f64) -> bool {
        self.clauses.len() == other.clauses.len()
            && self
                .clauses
                .iter()
                .zip(&other.clauses)
                .all(|(a, b)| a.approx_eq(b, tol))
    }

    pub fn pretty(&self, names: &[String]) -> String {
        let parts: Vec<String> = self.clauses.iter().map(|h| h.pretty(names)).collect();
        parts.join(" ∧ ")
    }

    pub fn reports(&self, names: &[String]) -> Vec<ClauseReport> {
        self.clauses
            .iter()
            .map(|h| ClauseReport {
                coeffs: h.coeffs.clone(),
                rhs: h.rhs,
                pretty: h.pretty(names),
            })
            .collect()
    }
}

impl fmt::Display for Classifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self
            .feature_indices
            .iter()
            .map(|i| format!("x{i}"))
            .collect();
        f.write_str(&self.pretty(&names))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClauseReport {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
    pub pretty: String,
}

fn check_width(sets: &[&[Vec<f64>]]) -> Result<usize, LearnError> {
    let mut width = None;
    for v in sets.iter().flat_map(|s| s.iter()) {
        match width {
            None => width = Some(v.len()),
            Some(w) if w != v.len() => {
                return Err(LearnError::WidthMismatch {
                    expected: w,
                    found: v.len(),
                })
            }
            _ => {}
        }
    }
    Ok(width.unwrap_or(0))
}

/// Solver entry points sharing a time budget and an invocation counter.
#[derive(Debug, Clone)]
pub struct Solver {
    pub budget: Duration,
    pub invocations: u64,
}

impl Default for Solver {
    fn default() -> Self {
        Self::new(DEFAULT_SOLVER_BUDGET)
    }
}

impl Solver {
    pub fn new(budget: Duration) -> Self {
        Self {
            budget,
            invocations: 0,
        }
    }

    pub fn max_margin(
        &mut self,
        positives: &[Vec<f64>],
        negatives: &[Vec<f64>],
    ) -> Result<Option<HalfSpace>, LearnError> {
        self.invocations += 1;
        max_margin_separator(positives, negatives, self.budget)
    }

    /// One half-space if possible, otherwise a conjunction
    /// built by cutting off one negative at a time.
    pub fn conjunctive(
        &mut self,
        positives: &[Vec<f64>],
        negatives: &[Vec<f64>],
    ) -> Result<Option<Vec<HalfSpace>>, LearnError> {
        check_width(&[positives, negatives])?;
        if positives.is_empty() || negatives.is_empty() {
            return Ok(None);
        }
        if positives.iter().any(|p| negatives.contains(p)) {
            return Ok(None);
        }
        if let Some(h) = self.max_margin(positives, negatives)? {
            return Ok(Some(vec![h]));
        }
        let mut rest: Vec<&Vec<f64>> = negatives.iter().collect();
        let mut clauses = Vec::new();
        while let Some(&p) = rest.first() {
            let Some(h) = self.max_margin(positives, std::slice::from_ref(p))? else {
                return Ok(None);
            };
            rest.retain(|q| h.accepts(q));
            clauses.push(h);
        }
        Ok(Some(clauses))
    }
}

/// The hard-margin separator of two point sets, or `None` when they are
/// not strictly separable or the budget runs out.
///
/// The normal is the minimum-norm point of conv(P) − conv(N), found with
/// Wolfe's algorithm; the offset sits halfway between the two hulls.
pub fn max_margin_separator(
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    budget: Duration,
) -> Result<Option<HalfSpace>, LearnError> {
    let width = check_width(&[positives, negatives])?;
    if positives.is_empty() || negatives.is_empty() || width == 0 {
        return Ok(None);
    }
    let scale = positives
        .iter()
        .chain(negatives)
        .flatten()
        .fold(0.0f64, |m, x| m.max(x.abs()));
    if !scale.is_finite() {
        return Ok(None);
    }
    let scale = if scale == 0.0 { 1.0 } else { scale };
    let p: Vec<Vec<f64>> = positives
        .iter()
        .map(|v| v.iter().map(|x| x / scale).collect())
        .collect();
    let n: Vec<Vec<f64>> = negatives
        .iter()
        .map(|v| v.iter().map(|x| x / scale).collect())
        .collect();
    let Some(w) = min_norm_point(&p, &n, Instant::now() + budget) else {
        return Ok(None);
    };
    if dot(&w, &w).sqrt() <= 1e-12 {
        return Ok(None);
    }
    let lo = positives
        .iter()
        .map(|v| dot(&w, v))
        .fold(f64::INFINITY, f64::min);
    let hi = negatives
        .iter()
        .map(|v| dot(&w, v))
        .fold(f64::NEG_INFINITY, f64::max);
    let h = HalfSpace {
        coeffs: w,
        rhs: lo / 2.0 + hi / 2.0,
    };
    let ok = lo > hi
        && positives.iter().all(|v| h.accepts(v))
        && negatives.iter().all(|v| !h.accepts(v));
    Ok(ok.then_some(h))
}

fn vertex(p: &[Vec<f64>], n: &[Vec<f64>], (i, j): (usize, usize)) -> Vec<f64> {
    p[i].iter().zip(&n[j]).map(|(a, b)| a - b).collect()
}

/// Weights minimizing |Σ αᵢ vᵢ| subject to Σ αᵢ = 1.
fn affine_min_norm(vs: &[Vec<f64>]) -> Option<Vec<f64>> {
    let k = vs.len();
    let mut a = DMatrix::<f64>::zeros(k + 1, k + 1);
    for i in 0..k {
        for j in 0..k {
            a[(i, j)] = dot(&vs[i], &vs[j]);
        }
        a[(i, k)] = 1.0;
        a[(k, i)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(k + 1);
    b[k] = 1.0;
    let sol = a
        .clone()
        .lu()
        .solve(&b)
        .filter(|s| s.iter().all(|x| x.is_finite()))
        .or_else(|| a.svd(true, true).solve(&b, 1e-14).ok())?;
    let alpha: Vec<f64> = sol.iter().take(k).copied().collect();
    alpha.iter().all(|x| x.is_finite()).then_some(alpha)
}

fn combine(vs: &[Vec<f64>], lambda: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; vs[0].len()];
    for (v, l) in vs.iter().zip(lambda) {
        for (xi, vi) in x.iter_mut().zip(v) {
            *xi += l * vi;
        }
    }
    x
}

fn min_norm_point(p: &[Vec<f64>], n: &[Vec<f64>], deadline: Instant) -> Option<Vec<f64>> {
    const EPS: f64 = 1e-12;
    let mut corral: Vec<(usize, usize)> = vec![(0, 0)];
    let mut vs = vec![vertex(p, n, (0, 0))];
    let mut lambda = vec![1.0];
    let mut x = vs[0].clone();
    for _ in 0..100_000 {
        if Instant::now() > deadline {
            return None;
        }
        let i = (0..p.len())
            .min_by(|&a, &b| dot(&x, &p[a]).total_cmp(&dot(&x, &p[b])))
            .expect("non-empty");
        let j = (0..n.len())
            .max_by(|&a, &b| dot(&x, &n[a]).total_cmp(&dot(&x, &n[b])))
            .expect("non-empty");
        let v = vertex(p, n, (i, j));
        let xx = dot(&x, &x);
        let vmax = vs.iter().chain([&v]).map(|u| dot(u, u)).fold(0.0, f64::max);
        if xx - dot(&x, &v) <= EPS * vmax || xx <= EPS * EPS * vmax || corral.contains(&(i, j)) {
            return Some(x);
        }
        corral.push((i, j));
        vs.push(v);
        lambda.push(0.0);
        loop {
            let alpha = affine_min_norm(&vs)?;
            if alpha.iter().all(|&a| a > EPS) {
                lambda = alpha;
                x = combine(&vs, &lambda);
                break;
            }
            let theta = lambda
                .iter()
                .zip(&alpha)
                .filter(|(_, &a)| a <= EPS)
                .map(|(&l, &a)| if l - a > 0.0 { l / (l - a) } else { 0.0 })
                .fold(1.0, f64::min);
            for (l, a) in lambda.iter_mut().zip(&alpha) {
                *l = theta * a + (1.0 - theta) * *l;
            }
            let mut keep = lambda.iter().map(|&l| l > EPS).collect::<Vec<_>>();
            if keep.iter().all(|&k| k) {
                let drop = (0..lambda.len())
                    .min_by(|&a, &b| lambda[a].total_cmp(&lambda[b]))
                    .expect("non-empty");
                keep[drop] = false;
            }
            let mut k = keep.iter();
            corral.retain(|_| *k.next().expect("same length"));
            let mut k = keep.iter();
            vs.retain(|_| *k.next().expect("same length"));
            let mut k = keep.iter();
            lambda.retain(|_| *k.next().expect("same length"));
            let total: f64 = lambda.iter().sum();
            lambda.iter_mut().for_each(|l| *l /= total);
            x = combine(&vs, &lambda);
            if vs.len() == 1 {
                break;
            }
        }
    }
    Some(x)
}

/// One-feature threshold. `x ≥ c` when every negative lies below every
/// positive, `x ≤ c` in the mirrored case, `None` when they interleave.
///
/// The cut is the midpoint; integer features round it away from the
/// negatives, and a float midpoint that lands on a negative is replaced by
/// the nearest positive.
pub fn threshold_1d(positives: &[f64], negatives: &[f64], integral: bool) -> Option<HalfSpace> {
    if positives.is_empty() || negatives.is_empty() {
        return None;
    }
    let min = |s: &[f64]| s.iter().copied().fold(f64::INFINITY, f64::min);
    let max = |s: &[f64]| s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (minp, maxp, minn, maxn) = (
        min(positives),
        max(positives),
        min(negatives),
        max(negatives),
    );
    if maxn < minp {
        let mid = maxn / 2.0 + minp / 2.0;
        let c = if integral {
            mid.ceil()
        } else if mid <= maxn {
            minp
        } else {
            mid
        };
        Some(HalfSpace {
            coeffs: vec![1.0],
            rhs: c,
        })
    } else if maxp < minn {
        let mid = maxp / 2.0 + minn / 2.0;
        let c = if integral {
            mid.floor()
        } else if mid >= minn {
            maxp
        } else {
            mid
        };
        Some(HalfSpace {
            coeffs: vec![-1.0],
            rhs: -c,
        })
    } else {
        None
    }
}

/// Best rational approximation `(num, den)` with `den ≤ max_den`, taken
/// from the continued-fraction convergents.
pub fn rationalize(x: f64, max_den: i64) -> Option<(i64, i64)> {
    if !x.is_finite() || x.abs() > 1e12 {
        return None;
    }
    let (mut h0, mut h1) = (0i64, 1i64);
    let (mut k0, mut k1) = (1i64, 0i64);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        let ai = a as i64;
        let h2 = ai.checked_mul(h1)?.checked_add(h0)?;
        let k2 = ai.checked_mul(k1)?.checked_add(k0)?;
        if k2 > max_den {
            break;
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        let frac = r - a;
        if frac.abs() < 1e-12 * x.abs().max(1.0) {
            break;
        }
        r = 1.0 / frac;
    }
    (k1 > 0).then_some((h1, k1))
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Small-integer form of one clause, before any dataset check.
pub fn simplify_clause(h: &HalfSpace, all_integral: bool) -> Option<HalfSpace> {
    let m = h.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if m == 0.0 || !m.is_finite() {
        return None;
    }
    let fracs: Vec<(i64, i64)> = h
        .coeffs
        .iter()
        .map(|c| rationalize(c / m, MAX_DENOMINATOR))
        .collect::<Option<_>>()?;
    let lcm = fracs
        .iter()
        .try_fold(1i64, |l, &(_, d)| l.checked_mul(d / gcd(l, d)))?;
    let nums: Vec<i64> = fracs.iter().map(|&(p, q)| p * (lcm / q)).collect();
    let g = nums.iter().fold(0, |g, &n| gcd(g, n));
    if g == 0 {
        return None;
    }
    let factor = lcm as f64 / g as f64;
    let mut rhs = h.rhs / m * factor;
    if all_integral {
        let near = rhs.round();
        rhs = if (rhs - near).abs() <= 1e-9 {
            near
        } else {
            rhs.ceil()
        };
    }
    Some(HalfSpace {
        coeffs: nums.iter().map(|&n| (n / g) as f64).collect(),
        rhs: rhs + 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simplified {
    pub classifier: Classifier,
    /// Clauses left as learned because no simplified form kept the dataset
    /// classification.
    pub rationalization_failed: Vec<usize>,
}

/// Simplifies every clause, keeping a simplified clause only when it
/// accepts exactly the same dataset vectors as the original.
pub fn simplify(
    classifier: &Classifier,
    integral: &[bool],
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
) -> Simplified {
    let all_integral = integral.iter().all(|&b| b);
    let mut failed = Vec::new();
    let clauses = classifier
        .clauses
        .iter()
        .enumerate()
        .map(|(i, h)| match simplify_clause(h, all_integral) {
            Some(s)
                if positives
                    .iter()
                    .chain(negatives)
                    .all(|v| s.accepts(v) == h.accepts(v)) =>
            {
                s
            }
            _ => {
                failed.push(i);
                h.clone()
            }
        })
        .collect();
    Simplified {
        classifier: Classifier {
            clauses,
            feature_indices: classifier.feature_indices.clone(),
        },
        rationalization_failed: failed,
    }
}
