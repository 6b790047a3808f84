//! Learning a generator under a budget of equilibrium solves.
//!
//! Three acquisition strategies share one loop: a static dataset solved
//! upfront, greedy acquisition by a compliance-surrogate heuristic, and greedy
//! acquisition by the optimality-condition residual of the current generator's
//! output. A uniformly random strategy is kept for instrumentation.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::FeaCounter;
use crate::generator::{init, train, Activation, Architecture, GeneratorParams, SensitivityWeights, TrainConfig, TrainReport, TrainingSet};
use crate::io::{HistoryEntry, SolveRecord};
use crate::kkt::{deviation, KktOptions};
use crate::metrics::{evaluate_model, GroundTruth, MetricsReport};
use crate::problem::TopOptProblem;
use crate::setting::{LoadCase, ProblemSetting};
use crate::solver::{solve_to, AlParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Static,
    Heuristic,
    Theory,
    Random,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Static => "static",
            Strategy::Heuristic => "heuristic",
            Strategy::Theory => "theory",
            Strategy::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "static" => Some(Strategy::Static),
            "heuristic" => Some(Strategy::Heuristic),
            "theory" => Some(Strategy::Theory),
            "random" => Some(Strategy::Random),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Initial,
    Acquired,
    Static,
}

/// One optimized training problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub setting: ProblemSetting,
    pub x: Vec<f64>,
    pub f: f64,
    pub sensitivity: Vec<f64>,
    pub fea_count: u64,
    pub provenance: Provenance,
}

impl Record {
    pub fn to_solve_record(&self) -> SolveRecord {
        SolveRecord {
            setting: self.setting.params(),
            x: self.x.clone(),
            f: self.f,
            sensitivity: self.sensitivity.clone(),
            fea_count: self.fea_count,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    records: Vec<Record>,
    keys: HashSet<Vec<u64>>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a record; a setting already present is rejected.
    pub fn push(&mut self, record: Record) -> Result<()> {
        if !self.keys.insert(record.setting.key()) {
            return Err(Error::InvalidParameter(format!("setting {} already in the dataset", record.setting)));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains(&self, s: &ProblemSetting) -> bool {
        self.keys.contains(&s.key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChargeKind {
    Solve,
    Score,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BudgetEvent {
    pub iteration: usize,
    pub kind: ChargeKind,
    pub cost: u64,
}

/// Remaining equilibrium solves for an adaptive run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BudgetLedger {
    initial: u64,
    lower: u64,
    remaining: u64,
    events: Vec<BudgetEvent>,
}

impl BudgetLedger {
    /// `initial` is the total budget, `lower` the per-solve reserve the loop
    /// keeps (it runs while `remaining > lower`).
    pub fn new(initial: u64, lower: u64) -> Self {
        Self { initial, lower, remaining: initial, events: Vec::new() }
    }

    pub fn initial(&self) -> u64 {
        self.initial
    }

    pub fn lower(&self) -> u64 {
        self.lower
    }

    pub fn remaining(&self) -> u64 {
        self.remaining
    }

    pub fn events(&self) -> &[BudgetEvent] {
        &self.events
    }

    pub fn can_continue(&self) -> bool {
        self.remaining > self.lower
    }

    /// Records `cost` solves; fails without charging if it would overdraw.
    pub fn charge(&mut self, iteration: usize, kind: ChargeKind, cost: u64) -> Result<()> {
        if cost > self.remaining {
            return Err(Error::BudgetExhausted { consumed: self.initial - self.remaining });
        }
        self.remaining -= cost;
        self.events.push(BudgetEvent { iteration, kind, cost });
        Ok(())
    }

    pub fn charged(&self) -> u64 {
        self.events.iter().map(|e| e.cost).sum()
    }
}

/// Total budget `b_min * size` and loop reserve `b_max` from a static run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    pub initial: u64,
    pub lower: u64,
}

impl Budget {
    pub fn from_static(b_min: u64, b_max: u64, static_size: usize) -> Self {
        Self { initial: b_min * static_size as u64, lower: b_max }
    }
}

/// Least-squares polynomial in the surrogate features of a setting, all
/// monomials of total degree up to `degree`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplianceSurrogate {
    degree: usize,
    dim: usize,
    exponents: Vec<Vec<usize>>,
    coeffs: Vec<f64>,
}

/// Exponent tuples of all monomials in `dim` variables up to total `degree`.
pub fn monomials(dim: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; dim]];
    for d in 1..=degree {
        let mut cur = vec![0; dim];
        fill(&mut out, &mut cur, 0, d);
    }
    fn fill(out: &mut Vec<Vec<usize>>, cur: &mut Vec<usize>, k: usize, left: usize) {
        if k + 1 == cur.len() {
            cur[k] = left;
            out.push(cur.clone());
            cur[k] = 0;
            return;
        }
        for e in (0..=left).rev() {
            cur[k] = e;
            fill(out, cur, k + 1, left - e);
        }
        cur[k] = 0;
    }
    out
}

impl ComplianceSurrogate {
    /// Minimum-norm least-squares fit.
    pub fn fit(features: &[Vec<f64>], values: &[f64], degree: usize) -> Result<Self> {
        if features.is_empty() || features.len() != values.len() {
            return Err(Error::InvalidParameter("surrogate needs matching, non-empty data".into()));
        }
        let dim = features[0].len();
        let exponents = monomials(dim, degree);
        let rows = features.len();
        let a = DMatrix::from_fn(rows, exponents.len(), |r, c| eval_monomial(&features[r], &exponents[c]));
        let b = DVector::from_column_slice(values);
        let svd = a.svd(true, true);
        let eps = 1e-12 * svd.singular_values.max();
        let sol = svd.solve(&b, eps).map_err(|e| Error::InvalidParameter(format!("surrogate fit failed: {e}")))?;
        let coeffs: Vec<f64> = sol.iter().copied().collect();
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("surrogate coefficients".into()));
        }
        Ok(Self { degree, dim, exponents, coeffs })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn predict(&self, feature: &[f64]) -> f64 {
        debug_assert_eq!(feature.len(), self.dim);
        self.exponents.iter().zip(&self.coeffs).map(|(e, c)| c * eval_monomial(feature, e)).sum()
    }
}

fn eval_monomial(x: &[f64], exps: &[usize]) -> f64 {
    x.iter().zip(exps).map(|(v, &e)| v.powi(e as i32)).product()
}

/// Surrogate coordinates: `angle / pi` for tip loads, otherwise the
/// generator encoding.
pub fn surrogate_features(setting: &ProblemSetting, problem: &TopOptProblem) -> Vec<f64> {
    match setting {
        ProblemSetting::Tip { angle, .. } => vec![angle / std::f64::consts::PI],
        ProblemSetting::Point { .. } => setting.encode(problem.mesh()),
    }
}

/// `|f(g(s)) - f_hat(s)|` given the generated design's compliance.
pub fn heuristic_score(generated_f: f64, feature: &[f64], surrogate: &ComplianceSurrogate) -> f64 {
    (generated_f - surrogate.predict(feature)).abs()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningConfig {
    pub case: LoadCase,
    pub initial_size: usize,
    pub validation_size: usize,
    pub static_size: usize,
    /// Candidates subsampled per iteration, all of which then leave the pool.
    /// `None` scores the whole pool and removes only the acquired setting.
    pub candidates_per_iter: Option<usize>,
    pub hidden_layers: Vec<usize>,
    pub hidden_activation: Activation,
    pub train: TrainConfig,
    pub weighted_loss: bool,
    pub surrogate_degree: usize,
    pub charge_scoring: bool,
    pub kkt: KktOptions,
    pub al: AlParams,
    pub max_iterations: Option<usize>,
}

impl LearningConfig {
    pub fn for_case(case: LoadCase) -> Self {
        let region = matches!(case, LoadCase::Region(_));
        Self {
            case,
            initial_size: if region { 50 } else { 5 },
            validation_size: if region { 300 } else { 50 },
            static_size: if region { 350 } else { 16 },
            candidates_per_iter: if region { Some(100) } else { None },
            hidden_layers: vec![64, 256],
            hidden_activation: Activation::Tanh,
            train: TrainConfig::default(),
            weighted_loss: false,
            surrogate_degree: if region { 2 } else { 3 },
            charge_scoring: true,
            kkt: KktOptions::default(),
            al: AlParams::default(),
            max_iterations: None,
        }
    }

    pub fn architecture(&self, n: usize) -> Result<Architecture> {
        let mut sizes = vec![self.case.input_dim()];
        sizes.extend(&self.hidden_layers);
        sizes.push(n);
        Architecture::new(sizes, self.hidden_activation)
    }
}

/// Result of one learning run.
#[derive(Debug, Clone)]
pub struct LearningOutcome {
    pub strategy: Strategy,
    pub model: GeneratorParams,
    pub dataset: Dataset,
    pub history: Vec<HistoryEntry>,
    pub ledger: Option<BudgetLedger>,
    pub train_reports: Vec<TrainReport>,
    /// Acquisition chosen each iteration.
    pub acquisitions: Vec<ProblemSetting>,
    /// The budget did not allow a single acquisition.
    pub budget_warning: bool,
    /// Equilibrium solves spent on training data and scoring.
    pub total_fea: u64,
    pub final_metrics: Option<MetricsReport>,
}

/// Static run plus the cost statistics that calibrate the adaptive budget.
#[derive(Debug, Clone)]
pub struct StaticOutcome {
    pub outcome: LearningOutcome,
    pub b_min: u64,
    pub b_max: u64,
}

impl StaticOutcome {
    pub fn budget(&self) -> Budget {
        Budget::from_static(self.b_min, self.b_max, self.outcome.dataset.len())
    }
}

/// Problem, configuration and optional test set shared by the strategies.
pub struct LearningContext<'a> {
    pub problem: &'a TopOptProblem,
    pub config: &'a LearningConfig,
    /// Enables the per-iteration test metric.
    pub test: Option<&'a GroundTruth>,
}

pub type HistorySink<'a> = &'a mut dyn FnMut(&HistoryEntry) -> Result<()>;

fn stream(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

const STREAM_INITIAL: u64 = 1;
const STREAM_VALIDATION: u64 = 2;
const STREAM_STATIC: u64 = 3;
const STREAM_CANDIDATES: u64 = 4;

/// `count` distinct settings that avoid `exclude`.
pub fn draw_settings(case: &LoadCase, problem: &TopOptProblem, count: usize, rng: &mut ChaCha8Rng, exclude: &HashSet<Vec<u64>>) -> Result<Vec<ProblemSetting>> {
    let mut seen = exclude.clone();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if attempts > 1000 * (count + 1) {
            return Err(Error::InvalidParameter(format!("cannot draw {count} distinct settings")));
        }
        let s = case.sample(problem.mesh(), rng);
        if seen.insert(s.key()) {
            out.push(s);
        }
    }
    Ok(out)
}

pub fn solve_setting(problem: &TopOptProblem, setting: &ProblemSetting, al: &AlParams, limit: Option<u64>, provenance: Provenance) -> Result<Record> {
    let load = setting.realize(problem.mesh())?;
    let res = solve_to(problem, &load, al, limit)?;
    Ok(Record { setting: *setting, x: res.x, f: res.f, sensitivity: res.sensitivity, fea_count: res.fea_count, provenance })
}

fn solve_all(problem: &TopOptProblem, settings: &[ProblemSetting], al: &AlParams, provenance: Provenance) -> Result<Vec<Record>> {
    settings.par_iter().map(|s| solve_setting(problem, s, al, None, provenance)).collect()
}

fn train_on(ctx: &LearningContext<'_>, data: &Dataset, seed: u64) -> Result<(GeneratorParams, TrainReport)> {
    let cfg = ctx.config;
    let arch = cfg.architecture(ctx.problem.n())?;
    let theta0 = init(&arch, seed);
    let mesh = ctx.problem.mesh();
    let inputs: Vec<Vec<f64>> = data.records().iter().map(|r| r.setting.encode(mesh)).collect();
    let targets: Vec<Vec<f64>> = data.records().iter().map(|r| r.x.clone()).collect();
    let weights: Option<Vec<Option<SensitivityWeights>>> = cfg
        .weighted_loss
        .then(|| data.records().iter().map(|r| SensitivityWeights::from_sensitivity(&r.sensitivity)).collect());
    let set = TrainingSet { inputs: &inputs, targets: &targets, weights: weights.as_deref() };
    let tc = TrainConfig { seed: cfg.train.seed.wrapping_add(seed), ..cfg.train };
    train(&theta0, &set, &tc)
}

fn test_metric(ctx: &LearningContext<'_>, model: &GeneratorParams) -> Result<(f64, Option<MetricsReport>)> {
    match ctx.test {
        Some(gt) => {
            let m = evaluate_model(ctx.problem, model, gt)?;
            Ok((m.mean_gap, Some(m)))
        }
        None => Ok((f64::NAN, None)),
    }
}

/// Solves `size` settings upfront and trains once.
pub fn run_benchmark_static(ctx: &LearningContext<'_>, seed: u64, sink: HistorySink<'_>) -> Result<StaticOutcome> {
    let cfg = ctx.config;
    let settings = draw_settings(&cfg.case, ctx.problem, cfg.static_size, &mut stream(seed, STREAM_STATIC), &HashSet::new())?;
    let records = solve_all(ctx.problem, &settings, &cfg.al, Provenance::Static)?;
    let mut data = Dataset::new();
    for r in records {
        data.push(r)?;
    }
    let costs: Vec<u64> = data.records().iter().map(|r| r.fea_count).collect();
    let b_min = costs.iter().copied().min().unwrap_or(0);
    let b_max = costs.iter().copied().max().unwrap_or(0);
    let total_fea = costs.iter().sum();
    let (model, report) = train_on(ctx, &data, seed)?;
    let (metric, final_metrics) = test_metric(ctx, &model)?;
    let entry = HistoryEntry { iteration: 0, remaining_budget: 0, chosen_setting: Vec::new(), score: f64::NAN, test_metric: metric };
    sink(&entry)?;
    let outcome = LearningOutcome {
        strategy: Strategy::Static,
        model,
        dataset: data,
        history: vec![entry],
        ledger: None,
        train_reports: vec![report],
        acquisitions: Vec::new(),
        budget_warning: false,
        total_fea,
        final_metrics,
    };
    Ok(StaticOutcome { outcome, b_min, b_max })
}

pub fn run_theory_driven(ctx: &LearningContext<'_>, budget: Budget, seed: u64, sink: HistorySink<'_>) -> Result<LearningOutcome> {
    run_adaptive(ctx, Strategy::Theory, budget, seed, sink)
}

pub fn run_benchmark_heuristic(ctx: &LearningContext<'_>, budget: Budget, seed: u64, sink: HistorySink<'_>) -> Result<LearningOutcome> {
    run_adaptive(ctx, Strategy::Heuristic, budget, seed, sink)
}

/// Candidate scores for the current model, in candidate order, and the
/// number of equilibrium solves spent.
fn score_candidates(ctx: &LearningContext<'_>, strategy: Strategy, model: &GeneratorParams, data: &Dataset, candidates: &[ProblemSetting]) -> Result<(Vec<f64>, u64)> {
    let problem = ctx.problem;
    let mesh = problem.mesh();
    let counter = FeaCounter::new();
    let scores = match strategy {
        Strategy::Theory => candidates
            .par_iter()
            .map(|s| {
                let x = model.forward(&s.encode(mesh))?;
                let load = s.realize(mesh)?;
                Ok(deviation(problem, &x, &load, &ctx.config.kkt, &counter)?.d)
            })
            .collect::<Result<Vec<f64>>>()?,
        Strategy::Heuristic => {
            let feats: Vec<Vec<f64>> = data.records().iter().map(|r| surrogate_features(&r.setting, problem)).collect();
            let values: Vec<f64> = data.records().iter().map(|r| r.f).collect();
            let surrogate = ComplianceSurrogate::fit(&feats, &values, ctx.config.surrogate_degree)?;
            candidates
                .par_iter()
                .map(|s| {
                    let x = model.forward(&s.encode(mesh))?;
                    let load = s.realize(mesh)?;
                    let f = problem.evaluate_final(&x, &load, &counter)?.f;
                    Ok(heuristic_score(f, &surrogate_features(s, problem), &surrogate))
                })
                .collect::<Result<Vec<f64>>>()?
        }
        Strategy::Random | Strategy::Static => vec![0.0; candidates.len()],
    };
    Ok((scores, counter.count()))
}

/// Index of the largest finite score; ties go to the lowest index.
pub fn argmax_lowest_index(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        // NaN never wins
        if s > scores[best] || (scores[best].is_nan() && !s.is_nan()) {
            best = i;
        }
    }
    best
}

/// Shared acquisition loop for the adaptive strategies.
pub fn run_adaptive(ctx: &LearningContext<'_>, strategy: Strategy, budget: Budget, seed: u64, sink: HistorySink<'_>) -> Result<LearningOutcome> {
    if strategy == Strategy::Static {
        return Err(Error::InvalidParameter("static strategy has no acquisition loop".into()));
    }
    let cfg = ctx.config;
    let problem = ctx.problem;
    let initial = draw_settings(&cfg.case, problem, cfg.initial_size, &mut stream(seed, STREAM_INITIAL), &HashSet::new())?;
    let exclude: HashSet<Vec<u64>> = initial.iter().map(|s| s.key()).collect();
    let mut pool = draw_settings(&cfg.case, problem, cfg.validation_size, &mut stream(seed, STREAM_VALIDATION), &exclude)?;
    let mut cand_rng = stream(seed, STREAM_CANDIDATES);

    let mut data = Dataset::new();
    let mut total_fea = 0;
    for r in solve_all(problem, &initial, &cfg.al, Provenance::Initial)? {
        total_fea += r.fea_count;
        data.push(r)?;
    }

    let mut ledger = BudgetLedger::new(budget.initial, budget.lower);
    let mut history = Vec::new();
    let mut reports = Vec::new();
    let mut acquisitions = Vec::new();
    let mut iteration = 0;
    while ledger.can_continue() && !pool.is_empty() && cfg.max_iterations.is_none_or(|m| iteration < m) {
        let (model, report) = train_on(ctx, &data, seed)?;
        reports.push(report);
        let (metric, _) = test_metric(ctx, &model)?;

        let chosen: Vec<usize> = match cfg.candidates_per_iter {
            Some(k) if k < pool.len() => {
                let mut idx = index::sample(&mut cand_rng, pool.len(), k).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..pool.len()).collect(),
        };
        let scoring_cost_each = u64::from(cfg.charge_scoring && strategy != Strategy::Random);
        let affordable = match scoring_cost_each {
            0 => chosen.len(),
            _ => (ledger.remaining() as usize).min(chosen.len()),
        };
        let candidates: Vec<ProblemSetting> = chosen[..affordable].iter().map(|&i| pool[i]).collect();
        if candidates.is_empty() {
            break;
        }
        let (scores, spent) = match strategy {
            Strategy::Random => {
                let pick = index::sample(&mut cand_rng, candidates.len(), 1).index(0);
                let mut s = vec![0.0; candidates.len()];
                s[pick] = 1.0;
                (s, 0)
            }
            _ => score_candidates(ctx, strategy, &model, &data, &candidates)?,
        };
        total_fea += spent;
        if cfg.charge_scoring && spent > 0 {
            ledger.charge(iteration, ChargeKind::Score, spent)?;
        }
        let best = argmax_lowest_index(&scores);
        let s_star = candidates[best];

        // subsampled candidates all leave the pool, otherwise only the pick
        let scored: HashSet<usize> = match cfg.candidates_per_iter {
            Some(_) => chosen[..affordable].iter().copied().collect(),
            None => HashSet::from([chosen[best]]),
        };
        pool = pool.into_iter().enumerate().filter(|(i, _)| !scored.contains(i)).map(|(_, s)| s).collect();

        let solved = solve_setting(problem, &s_star, &cfg.al, Some(ledger.remaining()), Provenance::Acquired);
        let entry_budget;
        match solved {
            Ok(rec) => {
                total_fea += rec.fea_count;
                ledger.charge(iteration, ChargeKind::Solve, rec.fea_count)?;
                entry_budget = ledger.remaining();
                data.push(rec)?;
                acquisitions.push(s_star);
            }
            Err(Error::SolveInterrupted { consumed, .. }) => {
                // the partial solve is paid for but not added to the data
                total_fea += consumed;
                ledger.charge(iteration, ChargeKind::Solve, consumed)?;
                entry_budget = ledger.remaining();
                log::warn!("acquisition of {s_star} ran out of budget after {consumed} solves; discarded");
            }
            Err(e) => return Err(e),
        }
        let entry = HistoryEntry {
            iteration,
            remaining_budget: entry_budget,
            chosen_setting: s_star.params(),
            score: scores[best],
            test_metric: metric,
        };
        sink(&entry)?;
        history.push(entry);
        iteration += 1;
    }

    let budget_warning = acquisitions.is_empty();
    if budget_warning {
        log::warn!("budget {} with reserve {} allows no acquisition; model trained on the initial data", budget.initial, budget.lower);
    }
    let (model, report) = train_on(ctx, &data, seed)?;
    reports.push(report);
    let (metric, final_metrics) = test_metric(ctx, &model)?;
    let entry = HistoryEntry {
        iteration,
        remaining_budget: ledger.remaining(),
        chosen_setting: Vec::new(),
        score: f64::NAN,
        test_metric: metric,
    };
    sink(&entry)?;
    history.push(entry);
    Ok(LearningOutcome {
        strategy,
        model,
        dataset: data,
        history,
        ledger: Some(ledger),
        train_reports: reports,
        acquisitions,
        budget_warning,
        total_fea,
        final_metrics,
    })
}

/// Dispatches on strategy; the static strategy ignores `budget`.
pub fn run_strategy(ctx: &LearningContext<'_>, strategy: Strategy, budget: Budget, seed: u64, sink: HistorySink<'_>) -> Result<LearningOutcome> {
    match strategy {
        Strategy::Static => Ok(run_benchmark_static(ctx, seed, sink)?.outcome),
        s => run_adaptive(ctx, s, budget, seed, sink),
    }
}
