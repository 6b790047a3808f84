use topoforge::config::ExperimentConfig;
use topoforge::generator::{init, Activation, Architecture};
use topoforge::metrics::*;
use topoforge::problem::TopOptProblem;

const TINY: &str = "\
[mesh]
nx = 12
ny = 4
[density]
filter_radius = 1.5
local_radius = 2.5
[solver]
max_inner_iters = 10
max_al_loops = 3
";

fn setup() -> (TopOptProblem, GroundTruth) {
    let cfg = ExperimentConfig::parse(TINY).unwrap();
    let problem = cfg.problem().unwrap();
    let truth = GroundTruth::build(&problem, &cfg.load_case().unwrap(), 4, 7, &cfg.al).unwrap();
    (problem, truth)
}

#[test]
fn oracle_designs_have_zero_gap() {
    let (problem, truth) = setup();
    let designs: Vec<Option<Vec<f64>>> = truth.records.iter().map(|r| r.as_ref().map(|r| r.x.clone())).collect();
    let m = evaluate_designs(&problem, &designs, &truth).unwrap();
    assert_eq!(m.gaps.len(), 4);
    assert!(m.gaps.iter().all(|&g| g == 0.0), "{:?}", m.gaps);
    assert_eq!((m.failures, m.failure_rate, m.median_gap), (0, 0.0, 0.0));
    assert_eq!(m.g0_violation_generated, m.g0_violation_truth);
    assert_eq!(m.g1_violations_truth, 0);
}

#[test]
fn uniform_design_has_positive_gaps() {
    let (problem, truth) = setup();
    let uniform = vec![problem.params().alpha; problem.n()];
    let designs = vec![Some(uniform); truth.len()];
    let m = evaluate_designs(&problem, &designs, &truth).unwrap();
    assert!(m.gaps.iter().all(|&g| g > 0.0));
    assert!((0.0..=1.0).contains(&m.failure_rate));
}

#[test]
fn missing_reference_is_skipped() {
    let (problem, mut truth) = setup();
    truth.records[1] = None;
    let designs: Vec<Option<Vec<f64>>> = truth.records.iter().map(|r| r.as_ref().map(|r| r.x.clone())).collect();
    let m = evaluate_designs(&problem, &designs, &truth).unwrap();
    assert_eq!((m.skipped, m.gaps.len()), (1, 3));
}

#[test]
fn model_evaluation_and_latency() {
    let (problem, truth) = setup();
    let arch = Architecture::new(vec![2, 4, problem.n()], Activation::Tanh).unwrap();
    let model = init(&arch, 1);
    let m = evaluate_model(&problem, &model, &truth).unwrap();
    assert_eq!(m.gaps.len(), truth.len());
    assert!(m.test_sum > 0.0);
    let lat = measure_latency(&model, &[0.0, 1.0], 2, 11).unwrap();
    assert!(lat.min_s <= lat.median_s && lat.median_s <= lat.max_s);
}

#[test]
fn summary_statistics() {
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    let (m, s) = mean_std(&[1.0, 3.0]);
    assert_eq!((m, s), (2.0, 1.0));
    assert_eq!(mean_std(&[5.0]), (5.0, 0.0));
    assert_eq!(FAILURE_THRESHOLD, 1000.0);
}
