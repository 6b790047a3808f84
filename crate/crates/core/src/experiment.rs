//! End-to-end experiment runs: reference-design caching, dataset
//! directories, per-seed outputs and cross-seed aggregation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::active_learning::{
    run_adaptive, run_benchmark_static, LearningConfig, LearningContext, LearningOutcome, Provenance, Strategy,
};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::io::{HistoryWriter, SolveRecord};
use crate::metrics::{mean_std, GroundTruth, MetricsReport};
use crate::problem::TopOptProblem;

fn provenance_tag(p: Provenance) -> &'static str {
    match p {
        Provenance::Initial => "initial",
        Provenance::Acquired => "acquired",
        Provenance::Static => "static",
    }
}

/// Writes one record file per sample, named `NNNN-<provenance>.tdto`.
pub fn write_dataset(dir: &Path, outcome: &LearningOutcome) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, r) in outcome.dataset.records().iter().enumerate() {
        r.to_solve_record().save(&dir.join(format!("{i:04}-{}.tdto", provenance_tag(r.provenance))))?;
    }
    Ok(())
}

/// All `.tdto` records of a directory in file-name order.
pub fn read_dataset_dir(dir: &Path) -> Result<Vec<SolveRecord>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "tdto"))
        .collect();
    paths.sort();
    paths.iter().map(|p| SolveRecord::load(p)).collect()
}

/// Reference designs for the configured test set, read from
/// `cache_dir/truth-<hash>` when present and written there otherwise.
pub fn ground_truth(cfg: &ExperimentConfig, problem: &TopOptProblem, cache_dir: Option<&Path>) -> Result<GroundTruth> {
    let case = cfg.load_case()?;
    let dir = cache_dir.map(|d| d.join(format!("truth-{}", &cfg.ground_truth_key()[..16])));
    if let Some(dir) = &dir {
        if dir.is_dir() {
            let records = read_dataset_dir(dir)?;
            if records.len() == cfg.test_size {
                log::info!("reusing cached reference designs from {}", dir.display());
                return GroundTruth::from_records(problem, &case, records);
            }
        }
    }
    let truth = GroundTruth::build(problem, &case, cfg.test_size, cfg.test_seed, &cfg.al)?;
    if let Some(dir) = &dir {
        std::fs::create_dir_all(dir)?;
        for (i, r) in truth.records.iter().enumerate() {
            if let Some(r) = r {
                r.save(&dir.join(format!("{i:04}.tdto")))?;
            }
        }
    }
    Ok(truth)
}

/// Outcome of one strategy on one seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub strategy: Strategy,
    pub metrics: MetricsReport,
    pub acquisitions: usize,
    pub dataset_size: usize,
    pub total_fea: u64,
    pub budget: Option<u64>,
}

pub const SUMMARY_HEADER: &str =
    "seed,strategy,failure_rate,median_gap,mean_gap,g0_violation_generated,g0_violation_truth,g1_violation_generated,g1_violation_truth,dataset_size,acquisitions,total_fea";

fn summary_line(label: &str, strategy: &str, v: &[f64]) -> String {
    let mut s = format!("{label},{strategy}");
    for x in v {
        let _ = write!(s, ",{x:?}");
    }
    s
}

fn run_values(r: &SeedRun) -> Vec<f64> {
    let m = &r.metrics;
    vec![
        m.failure_rate,
        m.median_gap,
        m.mean_gap,
        m.g0_violation_generated,
        m.g0_violation_truth,
        m.g1_violation_generated,
        m.g1_violation_truth,
        r.dataset_size as f64,
        r.acquisitions as f64,
        r.total_fea as f64,
    ]
}

/// Per-seed rows followed by `mean` and `std` rows for each strategy.
pub fn summary_csv(runs: &[SeedRun]) -> String {
    let mut s = format!("{SUMMARY_HEADER}\n");
    let mut strategies: Vec<Strategy> = Vec::new();
    for r in runs {
        if !strategies.contains(&r.strategy) {
            strategies.push(r.strategy);
        }
        let _ = writeln!(s, "{}", summary_line(&r.seed.to_string(), r.strategy.name(), &run_values(r)));
    }
    for st in strategies {
        let rows: Vec<Vec<f64>> = runs.iter().filter(|r| r.strategy == st).map(run_values).collect();
        let cols = rows[0].len();
        let stats: Vec<(f64, f64)> = (0..cols).map(|c| mean_std(&rows.iter().map(|r| r[c]).collect::<Vec<_>>())).collect();
        let _ = writeln!(s, "{}", summary_line("mean", st.name(), &stats.iter().map(|v| v.0).collect::<Vec<_>>()));
        let _ = writeln!(s, "{}", summary_line("std", st.name(), &stats.iter().map(|v| v.1).collect::<Vec<_>>()));
    }
    s
}

/// Runs `strategies` for each seed, writing under `out`:
/// `<strategy>-seed<k>/{model.tdto,history.csv,dataset/}` and `summary.csv`.
/// Adaptive strategies calibrate their budget from the static run of the
/// same seed.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    strategies: &[Strategy],
    seeds: &[u64],
    out: &Path,
    cache_dir: Option<&Path>,
) -> Result<Vec<SeedRun>> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let problem = cfg.problem()?;
    let lc: LearningConfig = cfg.learning_config()?;
    let truth = ground_truth(cfg, &problem, cache_dir)?;
    let ctx = LearningContext { problem: &problem, config: &lc, test: Some(&truth) };
    let mut runs = Vec::new();
    for &seed in seeds {
        let run_dir = |s: Strategy| out.join(format!("{}-seed{seed}", s.name()));
        let mut static_sink = None;
        if strategies.contains(&Strategy::Static) {
            std::fs::create_dir_all(run_dir(Strategy::Static))?;
            static_sink = Some(HistoryWriter::create(&run_dir(Strategy::Static).join("history.csv"))?);
        }
        let st = run_benchmark_static(&ctx, seed, &mut |e| static_sink.as_mut().map_or(Ok(()), |w| w.append(e)))?;
        let budget = st.budget();
        let mut outcomes = Vec::new();
        if strategies.contains(&Strategy::Static) {
            outcomes.push((st.outcome.clone(), None));
        }
        for &s in strategies.iter().filter(|&&s| s != Strategy::Static) {
            std::fs::create_dir_all(run_dir(s))?;
            let mut w = HistoryWriter::create(&run_dir(s).join("history.csv"))?;
            let o = run_adaptive(&ctx, s, budget, seed, &mut |e| w.append(e))?;
            outcomes.push((o, Some(budget.initial)));
        }
        for (o, budget) in outcomes {
            let dir = run_dir(o.strategy);
            o.model.save(&dir.join("model.tdto"))?;
            write_dataset(&dir.join("dataset"), &o)?;
            let metrics = o.final_metrics.clone().ok_or_else(|| Error::InvalidParameter("missing test metrics".into()))?;
            runs.push(SeedRun {
                seed,
                strategy: o.strategy,
                metrics,
                acquisitions: o.acquisitions.len(),
                dataset_size: o.dataset.len(),
                total_fea: o.total_fea,
                budget,
            });
        }
        std::fs::write(out.join("summary.csv"), summary_csv(&runs))?;
    }
    Ok(runs)
}
