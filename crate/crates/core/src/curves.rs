//! Token efficiency curves: single-branch accuracy versus generated tokens.
//!
//! The curve is a four-parameter logistic in `log2(tokens)`:
//!
//! ```text
//! acc(t) = a_min + (a_max - a_min) / (1 + exp(-slope * (log2(t) - midpoint)))
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EfficiencyCurve {
    pub a_min: f64,
    pub a_max: f64,
    /// Inflection point in log2-tokens.
    pub midpoint: f64,
    pub slope: f64,
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl EfficiencyCurve {
    pub fn validate(&self) -> Result<()> {
        self.validate_at("curve")
    }

    pub(crate) fn validate_at(&self, prefix: &str) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.a_min) && (0.0..=1.0).contains(&self.a_max) && self.a_min <= self.a_max;
        if !ok {
            return Err(Error::validation(
                format!("{prefix}.a_max"),
                format!(
                    "need 0 <= a_min <= a_max <= 1, got a_min={} a_max={}",
                    self.a_min, self.a_max
                ),
            ));
        }
        if !self.midpoint.is_finite() {
            return Err(Error::validation(format!("{prefix}.midpoint"), "must be finite"));
        }
        if !(self.slope.is_finite() && self.slope > 0.0) {
            return Err(Error::validation(format!("{prefix}.slope"), "must be finite and > 0"));
        }
        Ok(())
    }

    /// Accuracy at `log2(tokens) = x`; defined for every real `x`.
    pub fn eval_log2(&self, x: f64) -> f64 {
        let y = self.a_min + (self.a_max - self.a_min) * logistic(self.slope * (x - self.midpoint));
        y.clamp(self.a_min, self.a_max)
    }

    /// Accuracy after `tokens` generated tokens; `tokens` must be >= 1.
    pub fn eval(&self, tokens: f64) -> Result<f64> {
        if tokens.is_nan() || tokens < 1.0 {
            return Err(Error::InvalidArgument(format!("tokens must be >= 1, got {tokens}")));
        }
        Ok(self.eval_log2(tokens.log2()))
    }

    /// Like [`eval`](Self::eval) but returns the floor `a_min` for budgets
    /// that did not reach a single token.
    pub fn eval_or_floor(&self, tokens: f64) -> f64 {
        if tokens >= 1.0 {
            self.eval_log2(tokens.log2())
        } else {
            self.a_min
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveAnchor {
    pub tokens: f64,
    pub accuracy: f64,
}

impl CurveAnchor {
    pub fn new(tokens: f64, accuracy: f64) -> Self {
        Self { tokens, accuracy }
    }

    fn validate(&self, index: usize) -> Result<()> {
        if !(self.tokens.is_finite() && self.tokens >= 1.0) {
            return Err(Error::validation(format!("anchors[{index}].tokens"), "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.accuracy) {
            return Err(Error::validation(
                format!("anchors[{index}].accuracy"),
                "must lie in [0, 1]",
            ));
        }
        Ok(())
    }
}

/// Reads a `tokens,accuracy` CSV file.
pub fn load_anchors_csv(path: impl AsRef<Path>) -> Result<Vec<CurveAnchor>> {
    let path = path.as_ref();
    let anchors_err = |message: String| Error::Anchors {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => anchors_err(format!("{other:?}")),
    })?;
    let headers = reader.headers().map_err(|e| anchors_err(e.to_string()))?.clone();
    if headers.len() != 2 || &headers[0] != "tokens" || &headers[1] != "accuracy" {
        return Err(anchors_err(format!(
            "expected header `tokens,accuracy`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut anchors = Vec::new();
    for (i, record) in reader.deserialize::<CurveAnchor>().enumerate() {
        let anchor = record.map_err(|e| anchors_err(format!("row {}: {e}", i + 1)))?;
        anchor.validate(i)?;
        anchors.push(anchor);
    }
    Ok(anchors)
}

/// Box constraints for [`curve_fit`]. Every range is inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitBounds {
    pub a_min: (f64, f64),
    pub a_max: (f64, f64),
    /// `None` spans the anchors' log2 range padded by 4 on each side.
    pub midpoint: Option<(f64, f64)>,
    pub slope: (f64, f64),
}

impl Default for FitBounds {
    fn default() -> Self {
        Self {
            a_min: (0.0, 1.0),
            a_max: (0.0, 1.0),
            midpoint: None,
            slope: (0.05, 20.0),
        }
    }
}

impl FitBounds {
    fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !range_ok(self.a_min) || self.a_min.0 < 0.0 || self.a_min.1 > 1.0 {
            return Err(Error::validation("bounds.a_min", "need 0 <= lo <= hi <= 1"));
        }
        if !range_ok(self.a_max) || self.a_max.0 < 0.0 || self.a_max.1 > 1.0 {
            return Err(Error::validation("bounds.a_max", "need 0 <= lo <= hi <= 1"));
        }
        if !range_ok(self.slope) || self.slope.0 <= 0.0 {
            return Err(Error::validation("bounds.slope", "need 0 < lo <= hi"));
        }
        if let Some(m) = self.midpoint {
            if !range_ok(m) {
                return Err(Error::validation("bounds.midpoint", "need lo <= hi"));
            }
        }
        if self.a_min.0 > self.a_max.1 {
            return Err(Error::validation(
                "bounds",
                "a_min lower bound exceeds a_max upper bound",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveFit {
    pub curve: EfficiencyCurve,
    pub rms_residual: f64,
    /// Set when the anchors cannot identify a slope (flat data, few points).
    pub degenerate: bool,
}

const GRID_MIDPOINT_STEPS: usize = 49;
const GRID_SLOPE_STEPS: usize = 40;
const REFINE_ITERATIONS: usize = 300;

struct Problem {
    x: Vec<f64>,
    y: Vec<f64>,
    lo: [f64; 4],
    hi: [f64; 4],
}

impl Problem {
    fn clamp(&self, mut p: [f64; 4]) -> [f64; 4] {
        for i in 0..4 {
            p[i] = p[i].clamp(self.lo[i], self.hi[i]);
        }
        if p[0] > p[1] {
            let mid = 0.5 * (p[0] + p[1]);
            p[0] = mid.clamp(self.lo[0], self.hi[0]);
            p[1] = mid.clamp(self.lo[1], self.hi[1]).max(p[0]);
        }
        p
    }

    fn sse(&self, p: &[f64; 4]) -> f64 {
        self.x
            .iter()
            .zip(&self.y)
            .map(|(&x, &y)| {
                let r = p[0] + (p[1] - p[0]) * logistic(p[3] * (x - p[2])) - y;
                r * r
            })
            .sum()
    }

    /// Best `(a_min, a_max)` for a fixed shape, by least squares on the
    /// two-column design `[1 - s, s]` restricted to the feasible box.
    fn linear_solve(&self, midpoint: f64, slope: f64) -> [f64; 4] {
        let s: Vec<f64> = self.x.iter().map(|&x| logistic(slope * (x - midpoint))).collect();
        let (mut s11, mut s12, mut s22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&si, &yi) in s.iter().zip(&self.y) {
            let u = 1.0 - si;
            s11 += u * u;
            s12 += u * si;
            s22 += si * si;
            b1 += u * yi;
            b2 += si * yi;
        }
        let mut candidates: Vec<[f64; 4]> = Vec::with_capacity(8);
        let det = s11 * s22 - s12 * s12;
        if det.abs() > 1e-14 * (s11 * s22).max(1e-300) {
            let a0 = (b1 * s22 - b2 * s12) / det;
            let a1 = (s11 * b2 - s12 * b1) / det;
            candidates.push([a0, a1, midpoint, slope]);
        }
        // Boundary solutions: hold one coefficient at a bound, solve the other.
        for &a0 in &[self.lo[0], self.hi[0]] {
            let a1 = if s22 > 0.0 { (b2 - s12 * a0) / s22 } else { a0 };
            candidates.push([a0, a1, midpoint, slope]);
        }
        for &a1 in &[self.lo[1], self.hi[1]] {
            let a0 = if s11 > 0.0 { (b1 - s12 * a1) / s11 } else { a1 };
            candidates.push([a0, a1, midpoint, slope]);
        }
        let mean = self.y.iter().sum::<f64>() / self.y.len() as f64;
        candidates.push([mean, mean, midpoint, slope]);
        candidates
            .into_iter()
            .map(|c| self.clamp(c))
            .map(|c| (self.sse(&c), c))
            .fold(
                (f64::INFINITY, [0.0; 4]),
                |best, cur| if cur.0 < best.0 { cur } else { best },
            )
            .1
    }

    fn jacobian_step(&self, p: &[f64; 4], lambda: f64) -> Option<[f64; 4]> {
        let mut jtj = [[0.0_f64; 4]; 4];
        let mut jtr = [0.0_f64; 4];
        let span = p[1] - p[0];
        for (&x, &y) in self.x.iter().zip(&self.y) {
            let s = logistic(p[3] * (x - p[2]));
            let ds = s * (1.0 - s);
            let r = p[0] + span * s - y;
            let j = [1.0 - s, s, -span * ds * p[3], span * ds * (x - p[2])];
            for a in 0..4 {
                jtr[a] += j[a] * r;
                for b in 0..4 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        for (a, row) in jtj.iter_mut().enumerate() {
            row[a] += lambda * (row[a] + 1e-12);
        }
        let delta = solve4(jtj, jtr)?;
        let mut next = *p;
        for a in 0..4 {
            next[a] -= delta[a];
        }
        Some(self.clamp(next))
    }

    fn refine(&self, start: [f64; 4]) -> [f64; 4] {
        let mut p = start;
        let mut err = self.sse(&p);
        let mut lambda = 1e-3;
        for _ in 0..REFINE_ITERATIONS {
            match self.jacobian_step(&p, lambda) {
                Some(next) => {
                    let next_err = self.sse(&next);
                    if next_err < err {
                        p = next;
                        err = next_err;
                        lambda = (lambda * 0.3).max(1e-12);
                    } else {
                        lambda = (lambda * 10.0).min(1e12);
                    }
                }
                None => lambda = (lambda * 10.0).min(1e12),
            }
        }
        p
    }
}

/// Gaussian elimination with partial pivoting on a 4x4 system.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let tail: f64 = (row + 1..4).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Least-squares logistic fit over log2-token space.
///
/// A fixed `(midpoint, slope)` grid is scanned with a closed-form solve for
/// the two levels at each node; the best node is then polished with a fixed
/// number of damped Gauss-Newton iterations. No randomness is involved, and
/// anchors are sorted first so the result does not depend on their order.
pub fn curve_fit(anchors: &[CurveAnchor], bounds: Option<FitBounds>) -> Result<CurveFit> {
    let bounds = bounds.unwrap_or_default();
    bounds.validate()?;
    for (i, a) in anchors.iter().enumerate() {
        a.validate(i)?;
    }
    let mut sorted = anchors.to_vec();
    sorted.sort_by(|a, b| a.tokens.total_cmp(&b.tokens).then(a.accuracy.total_cmp(&b.accuracy)));
    let mut distinct = sorted.iter().map(|a| a.tokens).collect::<Vec<_>>();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::InvalidArgument(
            "curve fitting needs at least two anchors with distinct token counts".into(),
        ));
    }

    let x: Vec<f64> = sorted.iter().map(|a| a.tokens.log2()).collect();
    let y: Vec<f64> = sorted.iter().map(|a| a.accuracy).collect();
    let (x_lo, x_hi) = (x[0], x[x.len() - 1]);

    let all_same = y.iter().all(|&v| v == y[0]);
    if all_same && sorted.len() < 4 {
        let level = y.iter().sum::<f64>() / y.len() as f64;
        return Ok(CurveFit {
            curve: EfficiencyCurve {
                a_min: level,
                a_max: level,
                midpoint: 0.5 * (x_lo + x_hi),
                slope: 1.0,
            },
            rms_residual: 0.0,
            degenerate: true,
        });
    }

    let (m_lo, m_hi) = bounds.midpoint.unwrap_or((x_lo - 4.0, x_hi + 4.0));
    let problem = Problem {
        x,
        y,
        lo: [bounds.a_min.0, bounds.a_max.0, m_lo, bounds.slope.0],
        hi: [bounds.a_min.1, bounds.a_max.1, m_hi, bounds.slope.1],
    };

    let mut best = (f64::INFINITY, [0.0; 4]);
    let log_s_lo = bounds.slope.0.ln();
    let log_s_hi = bounds.slope.1.ln();
    for i in 0..GRID_MIDPOINT_STEPS {
        let m = m_lo + (m_hi - m_lo) * i as f64 / (GRID_MIDPOINT_STEPS - 1) as f64;
        for j in 0..GRID_SLOPE_STEPS {
            let s = (log_s_lo + (log_s_hi - log_s_lo) * j as f64 / (GRID_SLOPE_STEPS - 1) as f64).exp();
            let p = problem.linear_solve(m, s);
            let err = problem.sse(&p);
            if err < best.0 {
                best = (err, p);
            }
        }
    }
    let p = problem.refine(best.1);
    let sse = problem.sse(&p);
    let curve = EfficiencyCurve {
        a_min: p[0],
        a_max: p[1],
        midpoint: p[2],
        slope: p[3],
    };
    Ok(CurveFit {
        curve,
        rms_residual: (sse / problem.x.len() as f64).sqrt(),
        degenerate: false,
    })
}
