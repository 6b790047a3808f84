//! Optimality-condition residual of a candidate design.
//!
//! For a design `x` the multipliers are estimated by minimizing the squared
//! Lagrangian gradient subject to nonnegativity and complementarity. Only
//! multipliers of constraints that are active within `activity_tol` may be
//! nonzero. Each bound multiplier touches a single coordinate, so for fixed
//! `(mu0, mu1)` it is eliminated in closed form and the remaining problem is a
//! convex, continuously differentiable piecewise quadratic in two variables.
//! That problem is solved by a projected Newton iteration with exact line
//! search over the generalized Hessian.

use crate::error::Result;
use crate::fem::{FeaCounter, LoadRealization};
use crate::problem::{Gradients, TopOptProblem};

#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierSet {
    pub mu0: f64,
    pub mu1: f64,
    pub mu_lower: Vec<f64>,
    pub mu_upper: Vec<f64>,
}

impl MultiplierSet {
    pub fn zeros(n: usize) -> Self {
        Self { mu0: 0.0, mu1: 0.0, mu_lower: vec![0.0; n], mu_upper: vec![0.0; n] }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            mu0: self.mu0 * s,
            mu1: self.mu1 * s,
            mu_lower: self.mu_lower.iter().map(|v| v * s).collect(),
            mu_upper: self.mu_upper.iter().map(|v| v * s).collect(),
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        self.mu0 >= 0.0 && self.mu1 >= 0.0 && self.mu_lower.iter().chain(&self.mu_upper).all(|&m| m >= 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktOptions {
    pub w0: f64,
    pub w1: f64,
    pub activity_tol: f64,
    /// Square only the violated part of `g0`, `g1` instead of the raw values.
    pub positive_part: bool,
}

impl Default for KktOptions {
    fn default() -> Self {
        Self { w0: 1.0, w1: 1.0, activity_tol: 1e-3, positive_part: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviationScore {
    pub d: f64,
    pub grad_norm_sq: f64,
    pub g0_sq: f64,
    pub g1_sq: f64,
    pub g0: f64,
    pub g1: f64,
    pub w0: f64,
    pub w1: f64,
    pub fea_cost: u64,
    pub multipliers: MultiplierSet,
}

/// `df + mu0 dg0 + mu1 dg1 + mu_u - mu_l`.
pub fn lagrangian_gradient_from(grads: &Gradients, mu: &MultiplierSet) -> Vec<f64> {
    (0..grads.df.len())
        .map(|e| {
            grads.df[e] + mu.mu0 * grads.dg0[e] + mu.mu1 * grads.dg1[e] + mu.mu_upper[e] - mu.mu_lower[e]
        })
        .collect()
}

/// Lagrangian gradient at `x` (target sharpness); one equilibrium solve.
pub fn lagrangian_gradient(
    problem: &TopOptProblem,
    x: &[f64],
    load: &LoadRealization,
    mu: &MultiplierSet,
    counter: &FeaCounter,
) -> Result<Vec<f64>> {
    let ev = problem.evaluate_final(x, load, counter)?;
    Ok(lagrangian_gradient_from(&problem.gradients(&ev)?, mu))
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Piece {
    Plain,
    /// free lower-bound multiplier cancels positive components
    Lower,
    /// free upper-bound multiplier cancels negative components
    Upper,
}

impl Piece {
    #[inline]
    fn residual(self, v: f64) -> f64 {
        match self {
            Piece::Plain => v,
            Piece::Lower => v.min(0.0),
            Piece::Upper => v.max(0.0),
        }
    }
}

struct Reduced<'a> {
    df: &'a [f64],
    cols: [&'a [f64]; 2],
    free: [bool; 2],
    pieces: Vec<Piece>,
}

impl Reduced<'_> {
    fn v(&self, e: usize, mu: [f64; 2]) -> f64 {
        self.df[e] + mu[0] * self.cols[0][e] + mu[1] * self.cols[1][e]
    }

    fn gradient(&self, mu: [f64; 2]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for e in 0..self.df.len() {
            let r = self.pieces[e].residual(self.v(e, mu));
            g[0] += 2.0 * r * self.cols[0][e];
            g[1] += 2.0 * r * self.cols[1][e];
        }
        g
    }

    /// Nonnegative least squares on the quadratic piece active at `mu`,
    /// solved by enumerating supports.
    fn model_minimizer(&self, mu: [f64; 2], include_kinks: bool) -> [f64; 2] {
        let (mut gram, mut rhs) = ([[0.0; 2]; 2], [0.0; 2]);
        for e in 0..self.df.len() {
            let v = self.v(e, mu);
            let active = match self.pieces[e] {
                Piece::Plain => true,
                Piece::Lower => v < 0.0 || (include_kinks && v == 0.0),
                Piece::Upper => v > 0.0 || (include_kinks && v == 0.0),
            };
            if !active {
                continue;
            }
            let a = [self.cols[0][e], self.cols[1][e]];
            for i in 0..2 {
                rhs[i] -= a[i] * self.df[e];
                for j in 0..2 {
                    gram[i][j] += a[i] * a[j];
                }
            }
        }
        let model = |m: [f64; 2]| {
            // 0.5 m^T G m - rhs^T m, constant dropped
            0.5 * (m[0] * (gram[0][0] * m[0] + gram[0][1] * m[1]) + m[1] * (gram[1][0] * m[0] + gram[1][1] * m[1]))
                - rhs[0] * m[0]
                - rhs[1] * m[1]
        };
        let mut best = ([0.0, 0.0], 0.0);
        let mut consider = |m: [f64; 2]| {
            if m[0] >= 0.0 && m[1] >= 0.0 && m.iter().all(|v| v.is_finite()) {
                let val = model(m);
                if val < best.1 {
                    best = (m, val);
                }
            }
        };
        for i in 0..2 {
            if self.free[i] && gram[i][i] > 0.0 {
                let mut m = [0.0; 2];
                m[i] = rhs[i] / gram[i][i];
                consider(m);
            }
        }
        if self.free[0] && self.free[1] {
            let det = gram[0][0] * gram[1][1] - gram[0][1] * gram[1][0];
            if det > 1e-14 * gram[0][0] * gram[1][1] {
                consider([
                    (gram[1][1] * rhs[0] - gram[0][1] * rhs[1]) / det,
                    (gram[0][0] * rhs[1] - gram[1][0] * rhs[0]) / det,
                ]);
            }
        }
        best.0
    }

    /// Exact minimizer of the objective on the segment `mu + t (target - mu)`, `t in [0, 1]`.
    fn line_search(&self, mu: [f64; 2], target: [f64; 2]) -> f64 {
        let dir = [target[0] - mu[0], target[1] - mu[1]];
        let slope = |t: f64| {
            let m = [mu[0] + t * dir[0], mu[1] + t * dir[1]];
            let g = self.gradient(m);
            g[0] * dir[0] + g[1] * dir[1]
        };
        if slope(1.0) <= 0.0 {
            return 1.0;
        }
        if slope(0.0) >= 0.0 {
            return 0.0;
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if slope(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn projected_gradient_norm(&self, mu: [f64; 2]) -> f64 {
        let g = self.gradient(mu);
        (0..2)
            .filter(|&i| self.free[i])
            .map(|i| if mu[i] <= 0.0 { g[i].min(0.0) } else { g[i] })
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    fn solve(&self) -> [f64; 2] {
        let mut mu = [0.0, 0.0];
        if !self.free[0] && !self.free[1] {
            return mu;
        }
        let scale: f64 = (0..self.df.len())
            .map(|e| self.cols[0][e].abs().max(self.cols[1][e].abs()) * self.df[e].abs())
            .sum::<f64>()
            .max(f64::MIN_POSITIVE);
        for _ in 0..200 {
            if self.projected_gradient_norm(mu) <= 1e-13 * scale {
                break;
            }
            let mut target = self.model_minimizer(mu, false);
            let mut t = self.line_search(mu, target);
            if t == 0.0 {
                target = self.model_minimizer(mu, true);
                t = self.line_search(mu, target);
            }
            let next = [mu[0] + t * (target[0] - mu[0]), mu[1] + t * (target[1] - mu[1])];
            let next = [next[0].max(0.0), next[1].max(0.0)];
            if next == mu {
                // stalled at a kink: exact coordinate minimization
                let mut moved = false;
                for i in 0..2 {
                    if !self.free[i] {
                        continue;
                    }
                    let mut far = mu;
                    let g = self.gradient(mu)[i];
                    far[i] = if g < 0.0 { mu[i] + 1.0 + 2.0 * mu[i] } else { 0.0 };
                    let ti = self.line_search(mu, far);
                    let cand_i = mu[i] + ti * (far[i] - mu[i]);
                    if cand_i != mu[i] {
                        mu[i] = cand_i;
                        moved = true;
                    }
                }
                if !moved {
                    break;
                }
                continue;
            }
            mu = next;
        }
        mu
    }
}

/// Multipliers from precomputed gradients and constraint values.
pub fn optimal_multipliers_from(grads: &Gradients, x: &[f64], g0: f64, g1: f64, activity_tol: f64) -> MultiplierSet {
    let n = x.len();
    let pieces: Vec<Piece> = x
        .iter()
        .map(|&xe| {
            if xe <= activity_tol {
                Piece::Lower
            } else if xe >= 1.0 - activity_tol {
                Piece::Upper
            } else {
                Piece::Plain
            }
        })
        .collect();
    let free = [g0 >= -activity_tol, g1 >= -activity_tol];
    let reduced = Reduced { df: &grads.df, cols: [&grads.dg0, &grads.dg1], free, pieces };
    let mu = reduced.solve();
    let mut set = MultiplierSet::zeros(n);
    set.mu0 = if free[0] { mu[0] } else { 0.0 };
    set.mu1 = if free[1] { mu[1] } else { 0.0 };
    for e in 0..n {
        let v = reduced.v(e, [set.mu0, set.mu1]);
        match reduced.pieces[e] {
            Piece::Lower => set.mu_lower[e] = v.max(0.0),
            Piece::Upper => set.mu_upper[e] = (-v).max(0.0),
            Piece::Plain => {}
        }
    }
    set
}

/// Multipliers at `x`; one equilibrium solve.
pub fn optimal_multipliers(
    problem: &TopOptProblem,
    x: &[f64],
    load: &LoadRealization,
    activity_tol: f64,
    counter: &FeaCounter,
) -> Result<MultiplierSet> {
    let ev = problem.evaluate_final(x, load, counter)?;
    let grads = problem.gradients(&ev)?;
    Ok(optimal_multipliers_from(&grads, x, ev.g0(), ev.g1(), activity_tol))
}

/// Largest product of a multiplier with the slack of its constraint beyond
/// the activity tolerance. Zero when complementarity holds.
pub fn complementarity_residual(mu: &MultiplierSet, x: &[f64], g0: f64, g1: f64, activity_tol: f64) -> f64 {
    let slack = |s: f64| (s - activity_tol).max(0.0);
    let mut r = (mu.mu0 * slack(-g0)).max(mu.mu1 * slack(-g1));
    for (e, &xe) in x.iter().enumerate() {
        r = r.max(mu.mu_lower[e] * slack(xe)).max(mu.mu_upper[e] * slack(1.0 - xe));
    }
    r
}

/// Score from precomputed gradients (no equilibrium solve).
pub fn deviation_from(grads: &Gradients, x: &[f64], g0: f64, g1: f64, opts: &KktOptions) -> DeviationScore {
    let mu = optimal_multipliers_from(grads, x, g0, g1, opts.activity_tol);
    let grad = lagrangian_gradient_from(grads, &mu);
    let grad_norm_sq: f64 = grad.iter().map(|v| v * v).sum();
    let part = |g: f64| if opts.positive_part { g.max(0.0) } else { g };
    let (g0_sq, g1_sq) = (part(g0).powi(2), part(g1).powi(2));
    DeviationScore {
        d: grad_norm_sq + opts.w0 * g0_sq + opts.w1 * g1_sq,
        grad_norm_sq,
        g0_sq,
        g1_sq,
        g0,
        g1,
        w0: opts.w0,
        w1: opts.w1,
        fea_cost: 0,
        multipliers: mu,
    }
}

/// Deviation of `x` from the optimality conditions; exactly one equilibrium solve.
pub fn deviation(
    problem: &TopOptProblem,
    x: &[f64],
    load: &LoadRealization,
    opts: &KktOptions,
    counter: &FeaCounter,
) -> Result<DeviationScore> {
    let before = counter.count();
    let ev = problem.evaluate_final(x, load, counter)?;
    let grads = problem.gradients(&ev)?;
    let mut score = deviation_from(&grads, x, ev.g0(), ev.g1(), opts);
    score.fea_cost = counter.count() - before;
    Ok(score)
}
