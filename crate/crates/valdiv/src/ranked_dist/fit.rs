//! Piecewise rank/logit fit: linear head, logarithmic tail.
//!
//! Model:
//!
//! ```text
//!   f(k) = m k + b                 k <= c
//!   f(k) = A + B ln(k + C)         k >  c
//! ```
//!
//! The breakpoint sweep is exhaustive over ranks. Head fits are closed-form
//! least squares on prefix sums (O(1) per candidate); tail fits scan a
//! logarithmic grid of C values with per-C suffix sums, then polish C by
//! golden-section search around the best candidate.

use super::{DistributionError, LogitVector};

/// Minimum input length: two points for the head, three for the tail, plus
/// slack so the sweep has more than one candidate.
pub const MIN_FIT_POINTS: usize = 8;

const C_GRID_MIN_EXP: i32 = -24; // 10^(-6)
const C_GRID_STEP: f64 = 0.25; // grid is 10^(exp/4)

/// Least-squares parameters for the two-piece rank curve.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLogitFit {
    /// Head slope m.
    pub slope: f64,
    /// Head intercept b.
    pub intercept: f64,
    /// Last rank covered by the head piece.
    pub breakpoint: usize,
    /// Tail offset A.
    pub tail_offset: f64,
    /// Tail scale B (non-positive for decaying logits).
    pub tail_scale: f64,
    /// Tail shift C inside the logarithm.
    pub tail_shift: f64,
    pub mse: f64,
    pub r_squared: f64,
    /// Set when the input is constant and the model is underdetermined.
    pub degenerate: bool,
}

impl PiecewiseLogitFit {
    /// Value of the fitted curve at rank `k`.
    pub fn value_at(&self, k: usize) -> f64 {
        if k <= self.breakpoint || self.degenerate {
            self.slope * k as f64 + self.intercept
        } else {
            self.tail_offset + self.tail_scale * (k as f64 + self.tail_shift).ln()
        }
    }
}

/// Running sums for O(1) least squares over index ranges.
struct PrefixSums {
    x: Vec<f64>,
    xx: Vec<f64>,
    y: Vec<f64>,
    yy: Vec<f64>,
    xy: Vec<f64>,
}

impl PrefixSums {
    fn new(xs: &[f64], ys: &[f64]) -> Self {
        let n = xs.len();
        let mut s = Self {
            x: vec![0.0; n + 1],
            xx: vec![0.0; n + 1],
            y: vec![0.0; n + 1],
            yy: vec![0.0; n + 1],
            xy: vec![0.0; n + 1],
        };
        for i in 0..n {
            s.x[i + 1] = s.x[i] + xs[i];
            s.xx[i + 1] = s.xx[i] + xs[i] * xs[i];
            s.y[i + 1] = s.y[i] + ys[i];
            s.yy[i + 1] = s.yy[i] + ys[i] * ys[i];
            s.xy[i + 1] = s.xy[i] + xs[i] * ys[i];
        }
        s
    }

    /// OLS over [lo, hi): returns (slope, intercept, sse).
    fn ols(&self, lo: usize, hi: usize) -> (f64, f64, f64) {
        let n = (hi - lo) as f64;
        let sx = self.x[hi] - self.x[lo];
        let sxx = self.xx[hi] - self.xx[lo];
        let sy = self.y[hi] - self.y[lo];
        let syy = self.yy[hi] - self.yy[lo];
        let sxy = self.xy[hi] - self.xy[lo];
        let den = n * sxx - sx * sx;
        let (slope, intercept) = if den.abs() < 1e-30 {
            (0.0, sy / n)
        } else {
            let m = (n * sxy - sx * sy) / den;
            (m, (sy - m * sx) / n)
        };
        // SSE = Syy - 2m Sxy - 2b Sy + m^2 Sxx + 2mb Sx + n b^2, clamped at 0
        let sse = syy - 2.0 * slope * sxy - 2.0 * intercept * sy
            + slope * slope * sxx
            + 2.0 * slope * intercept * sx
            + n * intercept * intercept;
        (slope, intercept, sse.max(0.0))
    }
}

fn tail_ols(f: &[f64], lo: usize, c_shift: f64) -> (f64, f64, f64) {
    let xs: Vec<f64> = (lo..f.len()).map(|k| (k as f64 + c_shift).ln()).collect();
    direct_ols(&xs, &f[lo..])
}

fn direct_ols(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sy: f64 = ys.iter().sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let den = n * sxx - sx * sx;
    let (slope, intercept) = if den.abs() < 1e-30 {
        (0.0, sy / n)
    } else {
        let m = (n * sxy - sx * sy) / den;
        (m, (sy - m * sx) / n)
    };
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum();
    (slope, intercept, sse)
}

/// Fits the two-piece model, sweeping every admissible breakpoint.
///
/// Constant input yields a flat fit flagged `degenerate`. A head-only fit
/// (breakpoint = last rank) is always a candidate, so purely linear inputs
/// resolve to an empty tail.
pub fn fit_piecewise(logits: &LogitVector) -> Result<PiecewiseLogitFit, DistributionError> {
    let f = logits.values();
    let n = f.len();
    if n < MIN_FIT_POINTS {
        return Err(DistributionError::TooFewPoints {
            needed: MIN_FIT_POINTS,
            got: n,
        });
    }

    let fmin = f.iter().cloned().fold(f64::INFINITY, f64::min);
    let fmax = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = f.iter().sum::<f64>() / n as f64;
    let sst: f64 = f.iter().map(|y| (y - mean) * (y - mean)).sum();
    if fmax == fmin {
        return Ok(PiecewiseLogitFit {
            slope: 0.0,
            intercept: f[0],
            breakpoint: n - 1,
            tail_offset: f[0],
            tail_scale: 0.0,
            tail_shift: 1.0,
            mse: 0.0,
            r_squared: 1.0,
            degenerate: true,
        });
    }

    let ks: Vec<f64> = (0..n).map(|k| k as f64).collect();
    let sums = PrefixSums::new(&ks, f);

    // log-spaced C candidates, 1e-6 up to ~10 n
    let c_grid: Vec<f64> = {
        let mut g = Vec::new();
        let mut e = C_GRID_MIN_EXP;
        loop {
            let c = 10f64.powf(e as f64 * C_GRID_STEP);
            g.push(c);
            if c > 10.0 * n as f64 {
                break;
            }
            e += 1;
        }
        g
    };

    // tail SSE for every candidate breakpoint at each grid C, via suffix sums
    // over u = ln(k + C)
    let min_tail = 3;
    let mut best_tail_sse = vec![f64::INFINITY; n];
    let mut best_tail_c = vec![c_grid[0]; n];
    for &cc in &c_grid {
        let us: Vec<f64> = (0..n).map(|k| (k as f64 + cc).ln()).collect();
        let tsums = PrefixSums::new(&us, f);
        for c in 1..=(n - 1 - min_tail) {
            let (_, _, sse) = tsums.ols(c + 1, n);
            if sse < best_tail_sse[c] {
                best_tail_sse[c] = sse;
                best_tail_c[c] = cc;
            }
        }
    }

    // total SSE per breakpoint; head-only candidate is c = n-1
    let mut candidates: Vec<(f64, usize)> = (1..=(n - 1 - min_tail))
        .map(|c| {
            let (_, _, head_sse) = sums.ols(0, c + 1);
            (head_sse + best_tail_sse[c], c)
        })
        .collect();
    let (_, _, full_head_sse) = sums.ols(0, n);
    candidates.push((full_head_sse, n - 1));
    // screen ties (e.g. clamped zeros on near-exact data) prefer the larger
    // breakpoint so the head-only candidate is never crowded out
    candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(b.1.cmp(&a.1)));

    // polish C on the few best candidates before deciding; SSEs are
    // recomputed directly here because the prefix-sum form cancels badly
    // on near-perfect fits
    let mut best: Option<(f64, PiecewiseLogitFit)> = None;
    for &(_, c) in candidates.iter().take(5) {
        let (slope, intercept, head_sse) = direct_ols(&ks[..=c], &f[..=c]);
        let fit = if c == n - 1 {
            PiecewiseLogitFit {
                slope,
                intercept,
                breakpoint: c,
                tail_offset: 0.0,
                tail_scale: 0.0,
                tail_shift: 1.0,
                mse: head_sse / n as f64,
                r_squared: 1.0 - head_sse / sst,
                degenerate: false,
            }
        } else {
            let c0 = best_tail_c[c];
            let shift = golden_section(c0 / 10.0, c0 * 10.0, |cc| tail_ols(f, c + 1, cc).2);
            let (tail_scale, tail_offset, tail_sse) = tail_ols(f, c + 1, shift);
            let total = head_sse + tail_sse;
            PiecewiseLogitFit {
                slope,
                intercept,
                breakpoint: c,
                tail_offset,
                tail_scale,
                tail_shift: shift,
                mse: total / n as f64,
                r_squared: 1.0 - total / sst,
                degenerate: false,
            }
        };
        let total = fit.mse * n as f64;
        if best.as_ref().is_none_or(|(t, _)| total < *t) {
            best = Some((total, fit));
        }
    }
    Ok(best.expect("candidate list is never empty").1)
}

/// Golden-section minimization in log space over [lo, hi].
fn golden_section(lo: f64, hi: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    const PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let mut x1 = b - PHI * (b - a);
    let mut x2 = a + PHI * (b - a);
    let mut f1 = f(x1.exp());
    let mut f2 = f(x2.exp());
    for _ in 0..120 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - PHI * (b - a);
            f1 = f(x1.exp());
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + PHI * (b - a);
            f2 = f(x2.exp());
        }
    }
    ((a + b) / 2.0).exp()
}
