//! Reduced tip-load comparison of the three acquisition strategies.
//!
//! `cargo run --release --example compare_strategies -- [seeds] [test_size]`

use std::time::Instant;

use topoforge::active_learning::{run_adaptive, run_benchmark_static, LearningContext, Strategy};
use topoforge::config::ExperimentConfig;
use topoforge::experiment::ground_truth;

fn main() -> topoforge::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let test_size: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(50);
    let cfg = ExperimentConfig { test_size, ..Default::default() };
    let problem = cfg.problem()?;
    let config = cfg.learning_config()?;
    let t = Instant::now();
    let cache = std::env::temp_dir().join("topoforge-compare");
    let truth = ground_truth(&cfg, &problem, Some(&cache))?;
    println!("ground truth: {} designs in {:.1}s", truth.len(), t.elapsed().as_secs_f64());
    let ctx = LearningContext { problem: &problem, config: &config, test: Some(&truth) };
    for seed in 0..seeds {
        let t = Instant::now();
        let st = run_benchmark_static(&ctx, seed, &mut |_| Ok(()))?;
        let budget = st.budget();
        let m = st.outcome.final_metrics.as_ref().unwrap();
        println!(
            "seed {seed} static     mean gap {:9.3} median {:8.3} fails {} data {:3} fea {:6} b=[{}, {}] ({:.1}s)",
            m.mean_gap, m.median_gap, m.failures, st.outcome.dataset.len(), st.outcome.total_fea, st.b_min, st.b_max,
            t.elapsed().as_secs_f64()
        );
        for strategy in [Strategy::Heuristic, Strategy::Theory] {
            let t = Instant::now();
            let out = run_adaptive(&ctx, strategy, budget, seed, &mut |_| Ok(()))?;
            let m = out.final_metrics.as_ref().unwrap();
            println!(
                "seed {seed} {:10} mean gap {:9.3} median {:8.3} fails {} data {:3} fea {:6} g0v {:.2e}/{:.2e} g1v {:.2e}/{:.2e} ({:.1}s)",
                strategy.name(), m.mean_gap, m.median_gap, m.failures, out.dataset.len(), out.total_fea,
                m.g0_violation_generated, m.g0_violation_truth, m.g1_violation_generated, m.g1_violation_truth,
                t.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
