//! Test sets with optimized reference designs and generalization metrics.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::FeaCounter;
use crate::generator::GeneratorParams;
use crate::io::SolveRecord;
use crate::problem::TopOptProblem;
use crate::setting::{LoadCase, ProblemSetting};
use crate::solver::{solve_to, AlParams};

/// Designs whose compliance exceeds the reference by more than this count as failed.
pub const FAILURE_THRESHOLD: f64 = 1000.0;

/// Test settings with their optimized designs; a missing record is skipped
/// during evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub settings: Vec<ProblemSetting>,
    pub records: Vec<Option<SolveRecord>>,
}

impl GroundTruth {
    /// Draws `count` distinct settings from `case` and optimizes each.
    pub fn build(problem: &TopOptProblem, case: &LoadCase, count: usize, seed: u64, al: &AlParams) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x7e57);
        let settings = crate::active_learning::draw_settings(case, problem, count, &mut rng, &Default::default())?;
        let records = settings
            .par_iter()
            .map(|s| {
                let load = s.realize(problem.mesh())?;
                let r = solve_to(problem, &load, al, None)?;
                Ok(Some(SolveRecord { setting: s.params(), x: r.x, f: r.f, sensitivity: r.sensitivity, fea_count: r.fea_count }))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { settings, records })
    }

    /// Rebuilds settings from stored records.
    pub fn from_records(problem: &TopOptProblem, case: &LoadCase, records: Vec<SolveRecord>) -> Result<Self> {
        let settings = records.iter().map(|r| case.setting_from_params(problem.mesh(), &r.setting)).collect::<Result<Vec<_>>>()?;
        Ok(Self { settings, records: records.into_iter().map(Some).collect() })
    }

    pub fn len(&self) -> usize {
        self.settings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.settings.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// `|f(g(s)) - f*|` per evaluated test point.
    pub gaps: Vec<f64>,
    pub failures: usize,
    pub failure_rate: f64,
    pub median_gap: f64,
    pub mean_gap: f64,
    /// Sum of generated-design compliances.
    pub test_sum: f64,
    /// Means over violating cases only; zero when nothing violates.
    pub g0_violation_generated: f64,
    pub g0_violation_truth: f64,
    pub g1_violation_generated: f64,
    pub g1_violation_truth: f64,
    pub g1_violations_truth: usize,
    pub skipped: usize,
}

fn violation_mean(values: impl Iterator<Item = f64>) -> (f64, usize) {
    let v: Vec<f64> = values.filter(|&g| g > 0.0).collect();
    if v.is_empty() {
        (0.0, 0)
    } else {
        (v.iter().sum::<f64>() / v.len() as f64, v.len())
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Gap, generated f, generated g0 and g1, reference g0 and g1.
type Row = (f64, f64, f64, f64, f64, f64);

/// Metrics of arbitrary designs (one per test setting, `None` to skip).
pub fn evaluate_designs(problem: &TopOptProblem, designs: &[Option<Vec<f64>>], truth: &GroundTruth) -> Result<MetricsReport> {
    if designs.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), actual: designs.len() });
    }
    let counter = FeaCounter::new();
    let beta = problem.params().beta_target;
    let rows = (0..truth.len())
        .into_par_iter()
        .map(|i| -> Result<Option<Row>> {
            let (Some(rec), Some(x)) = (&truth.records[i], &designs[i]) else { return Ok(None) };
            let load = truth.settings[i].realize(problem.mesh())?;
            let ev = problem.evaluate_final(x, &load, &counter)?;
            let gt = problem.density(&rec.x, beta)?;
            Ok(Some(((ev.f - rec.f).abs(), ev.f, ev.g0(), ev.g1(), gt.g0, gt.g1)))
        })
        .collect::<Result<Vec<_>>>()?;
    let skipped = rows.iter().filter(|r| r.is_none()).count();
    if skipped > 0 {
        log::warn!("{skipped} test point(s) without reference design skipped");
    }
    let rows: Vec<_> = rows.into_iter().flatten().collect();
    let gaps: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let failures = gaps.iter().filter(|&&g| g > FAILURE_THRESHOLD).count();
    let (g0_gen, _) = violation_mean(rows.iter().map(|r| r.2));
    let (g1_gen, _) = violation_mean(rows.iter().map(|r| r.3));
    let (g0_gt, _) = violation_mean(rows.iter().map(|r| r.4));
    let (g1_gt, g1_gt_count) = violation_mean(rows.iter().map(|r| r.5));
    let n = gaps.len();
    Ok(MetricsReport {
        failures,
        failure_rate: if n == 0 { 0.0 } else { failures as f64 / n as f64 },
        median_gap: median(&gaps),
        mean_gap: if n == 0 { f64::NAN } else { gaps.iter().sum::<f64>() / n as f64 },
        test_sum: rows.iter().map(|r| r.1).sum(),
        g0_violation_generated: g0_gen,
        g0_violation_truth: g0_gt,
        g1_violation_generated: g1_gen,
        g1_violation_truth: g1_gt,
        g1_violations_truth: g1_gt_count,
        skipped,
        gaps,
    })
}

/// Metrics of a generator on a test set.
pub fn evaluate_model(problem: &TopOptProblem, model: &GeneratorParams, truth: &GroundTruth) -> Result<MetricsReport> {
    let designs = truth
        .settings
        .iter()
        .map(|s| model.forward(&s.encode(problem.mesh())).map(Some))
        .collect::<Result<Vec<_>>>()?;
    evaluate_designs(problem, &designs, truth)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Latency {
    pub median_s: f64,
    pub min_s: f64,
    pub max_s: f64,
}

/// Median wall-clock time of `calls` forward passes after `warmup` discarded ones.
pub fn measure_latency(model: &GeneratorParams, input: &[f64], warmup: usize, calls: usize) -> Result<Latency> {
    for _ in 0..warmup {
        std::hint::black_box(model.forward(input)?);
    }
    let mut times = Vec::with_capacity(calls);
    for _ in 0..calls.max(1) {
        let t = Instant::now();
        std::hint::black_box(model.forward(input)?);
        times.push(t.elapsed().as_secs_f64());
    }
    Ok(Latency {
        median_s: median(&times),
        min_s: times.iter().cloned().fold(f64::INFINITY, f64::min),
        max_s: times.iter().cloned().fold(0.0, f64::max),
    })
}
