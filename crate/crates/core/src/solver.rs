//! Ground-truth topology optimization by an augmented Lagrangian method with
//! projection-sharpness continuation.
//!
//! Each continuation stage resets the multipliers and penalties, then
//! alternates an inner first-order minimization of
//! `L = f + mu0 g0 + g0^2 / (2 r0) + mu1 g1 + g1^2 / (2 r1)` (clipped steps,
//! backtracking on `L`) with multiplier/penalty updates until the stage
//! converges. Optionally `f` is divided by the compliance of the starting
//! design so that step sizes and tolerances mean the same for every load, and
//! a final design that still violates a constraint is scaled back to
//! feasibility. Every equilibrium solve is counted.

use crate::error::{Error, Result};
use crate::fem::{FeaCounter, LoadRealization};
use crate::problem::{Evaluation, Gradients, TopOptProblem};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlParams {
    /// Outer convergence threshold on the projected search direction.
    pub eps_al: f64,
    /// Inner convergence threshold on the projected search direction.
    pub eps_inner: f64,
    /// Carried for completeness; the iteration does not read it.
    pub eps_opt: f64,
    pub r0: f64,
    pub r1: f64,
    pub eta0: f64,
    pub eta1: f64,
    /// Step size each line search starts from.
    pub learning_rate: f64,
    /// Per-element bound on a single step.
    pub step_clip: f64,
    pub max_halvings: usize,
    pub max_inner_iters: usize,
    pub max_al_loops: usize,
    /// Inner loop also stops once an accepted step lowers `L` by less than
    /// this fraction of `|L|`.
    pub stall_tol: f64,
    /// Divide `f` by the compliance of the starting design inside `L`.
    pub normalize_objective: bool,
    /// Scale a final design that violates `g0` or `g1` down until it does not.
    pub restore_feasibility: bool,
}

impl Default for AlParams {
    fn default() -> Self {
        Self {
            eps_al: 1e-3,
            eps_inner: 1e-3,
            eps_opt: 1e-3,
            r0: 1.0,
            r1: 1.0,
            eta0: 0.1,
            eta1: 0.1,
            learning_rate: 5.0,
            step_clip: 0.1,
            max_halvings: 50,
            max_inner_iters: 40,
            max_al_loops: 8,
            stall_tol: 1e-5,
            normalize_objective: true,
            restore_feasibility: true,
        }
    }
}

impl AlParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eps_al", self.eps_al),
            ("eps_inner", self.eps_inner),
            ("eps_opt", self.eps_opt),
            ("r0", self.r0),
            ("r1", self.r1),
            ("eta0", self.eta0),
            ("eta1", self.eta1),
            ("learning_rate", self.learning_rate),
            ("step_clip", self.step_clip),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_inner_iters == 0 || self.max_al_loops == 0 {
            return Err(Error::InvalidParameter("iteration caps must be positive".into()));
        }
        if !(self.stall_tol >= 0.0) {
            return Err(Error::InvalidParameter(format!("stall_tol must be >= 0, got {}", self.stall_tol)));
        }
        Ok(())
    }
}

/// Multipliers, penalty parameters and tolerance schedule for `g0`, `g1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlState {
    pub mu: [f64; 2],
    pub r: [f64; 2],
    pub eta: [f64; 2],
    /// Objective divisor.
    pub f_scale: f64,
}

impl AlState {
    pub fn initial(params: &AlParams) -> Self {
        Self {
            mu: [0.0; 2],
            r: [params.r0, params.r1],
            eta: [params.eta0, params.eta1],
            f_scale: 1.0,
        }
    }

    pub fn lagrangian(&self, f: f64, g0: f64, g1: f64) -> f64 {
        f / self.f_scale + self.mu[0] * g0 + 0.5 * g0 * g0 / self.r[0] + self.mu[1] * g1 + 0.5 * g1 * g1 / self.r[1]
    }

    /// `df + (mu_i + 2 g_i / r_i) dg_i` summed over violated constraints.
    pub fn search_direction(&self, grads: &Gradients, g0: f64, g1: f64) -> Vec<f64> {
        let c0 = if g0 > 0.0 { self.mu[0] + 2.0 * g0 / self.r[0] } else { 0.0 };
        let c1 = if g1 > 0.0 { self.mu[1] + 2.0 * g1 / self.r[1] } else { 0.0 };
        grads
            .df
            .iter()
            .zip(&grads.dg0)
            .zip(&grads.dg1)
            .map(|((&a, &b), &c)| a / self.f_scale + c0 * b + c1 * c)
            .collect()
    }
}

/// One multiplier/penalty update for constraint value `g`.
///
/// Returns the raw `(mu, r, eta)`; the solver clamps `mu` at zero afterwards.
pub fn al_multiplier_update(g: f64, mu: f64, r: f64, eta: f64) -> (f64, f64, f64) {
    if g < eta {
        (mu + 2.0 * g / r, r, 0.5 * eta)
    } else {
        (mu, 0.5 * r, eta)
    }
}

/// Largest component of `dir` that can still move `x` inside `[0, 1]`.
pub fn projected_max(x: &[f64], dir: &[f64]) -> f64 {
    x.iter()
        .zip(dir)
        .map(|(&xi, &d)| if (xi <= 0.0 && d > 0.0) || (xi >= 1.0 && d < 0.0) { 0.0 } else { d.abs() })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// Evaluation at the accepted iterate; `None` if the design did not move.
    pub accepted: Option<Evaluation>,
    pub lagrangian_before: f64,
    pub lagrangian_after: f64,
    pub halvings: usize,
}

/// Backtracking step along `-direction` from `current`.
pub fn al_step(
    problem: &TopOptProblem,
    current: &Evaluation,
    direction: &[f64],
    state: &AlState,
    params: &AlParams,
    load: &LoadRealization,
    counter: &FeaCounter,
) -> Result<StepOutcome> {
    let l0 = state.lagrangian(current.f, current.g0(), current.g1());
    let unchanged = |halvings| StepOutcome { accepted: None, lagrangian_before: l0, lagrangian_after: l0, halvings };
    let mut a = params.learning_rate;
    for halvings in 0..=params.max_halvings {
        let trial: Vec<f64> = current
            .x
            .iter()
            .zip(direction)
            .map(|(&xi, &d)| (xi + (-a * d).clamp(-params.step_clip, params.step_clip)).clamp(0.0, 1.0))
            .collect();
        if trial == current.x {
            return Ok(unchanged(halvings));
        }
        let ev = problem.evaluate(&trial, current.beta(), load, counter)?;
        let l1 = state.lagrangian(ev.f, ev.g0(), ev.g1());
        if l1 - l0 > 0.0 || !l1.is_finite() {
            a *= 0.5;
        } else {
            return Ok(StepOutcome { accepted: Some(ev), lagrangian_before: l0, lagrangian_after: l1, halvings });
        }
    }
    Ok(unchanged(params.max_halvings))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageTrace {
    pub beta: f64,
    pub f: f64,
    pub g0: f64,
    pub g1: f64,
    pub al_loops: usize,
    pub inner_iters: usize,
    pub fea: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub x: Vec<f64>,
    pub f: f64,
    /// `df/dx` at `x`, target sharpness.
    pub sensitivity: Vec<f64>,
    pub g0: f64,
    pub g1: f64,
    pub fea_count: u64,
    pub trace: Vec<StageTrace>,
}

/// Observer of accepted inner steps, used for instrumentation.
pub trait StepObserver {
    fn accepted(&mut self, beta: f64, outcome: &StepOutcome);
}

impl StepObserver for () {
    fn accepted(&mut self, _: f64, _: &StepOutcome) {}
}

/// Solves the problem for one load from the uniform start `x = alpha`.
/// `limit` caps the number of equilibrium solves.
pub fn solve_to(problem: &TopOptProblem, load: &LoadRealization, params: &AlParams, limit: Option<u64>) -> Result<SolveResult> {
    solve_to_observed(problem, load, params, limit, &mut ())
}

pub fn solve_to_observed(
    problem: &TopOptProblem,
    load: &LoadRealization,
    params: &AlParams,
    limit: Option<u64>,
    observer: &mut dyn StepObserver,
) -> Result<SolveResult> {
    params.validate()?;
    let counter = limit.map_or_else(FeaCounter::new, FeaCounter::with_limit);
    let mut x = vec![problem.params().alpha; problem.n()];
    let interrupted = |e: Error, x: &[f64]| match e {
        Error::BudgetExhausted { consumed } => Error::SolveInterrupted { consumed, design: x.to_vec() },
        other => other,
    };

    let mut trace = Vec::new();
    let mut beta = problem.params().beta_init;
    let beta_target = problem.params().beta_target;
    let mut last: Option<Evaluation> = None;
    let mut f_scale: Option<f64> = None;
    while beta <= beta_target {
        let fea_start = counter.count();
        let mut state = AlState::initial(params);
        let mut ev = problem.evaluate(&x, beta, load, &counter).map_err(|e| interrupted(e, &x))?;
        if params.normalize_objective {
            // compliance of the starting design; zero loads keep the raw scale
            state.f_scale = *f_scale.get_or_insert(if ev.f > 0.0 { ev.f } else { 1.0 });
        }
        let mut al_loops = 0;
        let mut inner_total = 0;
        loop {
            al_loops += 1;
            let mut measure = f64::INFINITY;
            for _ in 0..params.max_inner_iters {
                let grads = problem.gradients(&ev)?;
                let dir = state.search_direction(&grads, ev.g0(), ev.g1());
                measure = projected_max(&ev.x, &dir);
                if measure <= params.eps_inner {
                    break;
                }
                inner_total += 1;
                let step =
                    al_step(problem, &ev, &dir, &state, params, load, &counter).map_err(|e| interrupted(e, &ev.x))?;
                match &step.accepted {
                    Some(next) => {
                        observer.accepted(beta, &step);
                        let drop = step.lagrangian_before - step.lagrangian_after;
                        ev = next.clone();
                        if drop <= params.stall_tol * step.lagrangian_before.abs() {
                            break;
                        }
                    }
                    None => break,
                }
            }
            let (g0, g1) = (ev.g0(), ev.g1());
            if !ev.f.is_finite() {
                return Err(Error::NonFinite("objective".into()));
            }
            if (measure <= params.eps_al && g0 <= 0.0 && g1 <= 0.0) || al_loops >= params.max_al_loops {
                break;
            }
            for (i, g) in [g0, g1].into_iter().enumerate() {
                let (mu, r, eta) = al_multiplier_update(g, state.mu[i], state.r[i], state.eta[i]);
                state.mu[i] = mu.max(0.0);
                state.r[i] = r;
                state.eta[i] = eta;
            }
        }
        x = ev.x.clone();
        trace.push(StageTrace {
            beta,
            f: ev.f,
            g0: ev.g0(),
            g1: ev.g1(),
            al_loops,
            inner_iters: inner_total,
            fea: counter.count() - fea_start,
        });
        last = Some(ev);
        beta *= 2.0;
    }

    let mut ev = match last {
        Some(ev) if ev.beta() == beta_target => ev,
        _ => problem.evaluate(&x, beta_target, load, &counter).map_err(|e| interrupted(e, &x))?,
    };
    if params.restore_feasibility && (ev.g0() > 0.0 || ev.g1() > 0.0) {
        let x = feasible_scaling(problem, &ev.x, beta_target)?;
        ev = problem.evaluate(&x, beta_target, load, &counter).map_err(|e| interrupted(e, &x))?;
    }
    let grads = problem.gradients(&ev)?;
    Ok(SolveResult {
        f: ev.f,
        g0: ev.g0(),
        g1: ev.g1(),
        sensitivity: grads.df,
        x: ev.x,
        fea_count: counter.count(),
        trace,
    })
}

/// Largest uniform scaling `t x`, `t in [0, 1]`, meeting both constraints.
/// Both constraints are nondecreasing in `t`, so bisection applies; only the
/// density chain is evaluated.
fn feasible_scaling(problem: &TopOptProblem, x: &[f64], beta: f64) -> Result<Vec<f64>> {
    let scaled = |t: f64| x.iter().map(|v| v * t).collect::<Vec<f64>>();
    let feasible = |t: f64| -> Result<bool> {
        let d = problem.density(&scaled(t), beta)?;
        Ok(d.g0 <= 0.0 && d.g1 <= 0.0)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    if !feasible(lo)? {
        return Ok(x.to_vec());
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(scaled(lo))
}
