use topoforge::fem::{LoadRealization, Material, Mesh};
use topoforge::problem::{DensityParams, TopOptProblem};
use topoforge::setting::{tip_node, ProblemSetting};
use topoforge::solver::{solve_to, solve_to_observed, AlParams, StepObserver, StepOutcome};
use topoforge::Error;

fn small_problem() -> (TopOptProblem, LoadRealization) {
    let mesh = Mesh::cantilever(24, 8).unwrap();
    let pb = TopOptProblem::new(mesh.clone(), Material::default(), DensityParams::default()).unwrap();
    let load = ProblemSetting::Tip { angle: std::f64::consts::FRAC_PI_2, node: tip_node(&mesh) }.realize(&mesh).unwrap();
    (pb, load)
}

#[derive(Default)]
struct Monotone {
    steps: usize,
    violations: usize,
}

impl StepObserver for Monotone {
    fn accepted(&mut self, _beta: f64, o: &StepOutcome) {
        self.steps += 1;
        if o.lagrangian_after > o.lagrangian_before {
            self.violations += 1;
        }
    }
}

#[test]
fn accepted_steps_never_increase_the_lagrangian() {
    let (pb, load) = small_problem();
    let mut obs = Monotone::default();
    let res = solve_to_observed(&pb, &load, &AlParams::default(), None, &mut obs).unwrap();
    assert!(obs.steps > 0);
    assert_eq!(obs.violations, 0);
    assert!(res.x.iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert_eq!(res.trace.last().unwrap().beta, 16.0);
    assert_eq!(res.sensitivity.len(), pb.n());
}

#[test]
fn improves_on_the_uniform_start() {
    let (pb, load) = small_problem();
    let res = solve_to(&pb, &load, &AlParams::default(), None).unwrap();
    let counter = topoforge::fem::FeaCounter::new();
    let uniform = pb.evaluate_final(&vec![0.4; pb.n()], &load, &counter).unwrap();
    assert!(res.f < uniform.f);
    assert!(res.g0 < 0.05 && res.g1 < 0.05, "g0 {} g1 {}", res.g0, res.g1);
}

#[test]
fn solves_are_deterministic() {
    let (pb, load) = small_problem();
    let a = solve_to(&pb, &load, &AlParams::default(), None).unwrap();
    let b = solve_to(&pb, &load, &AlParams::default(), None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_load_returns_feasible_design_without_crashing() {
    let (pb, _) = small_problem();
    let zero = LoadRealization::zero(pb.mesh());
    let res = solve_to(&pb, &zero, &AlParams::default(), None).unwrap();
    assert_eq!(res.f, 0.0);
    assert!(res.sensitivity.iter().all(|&v| v == 0.0));
}

#[test]
fn solve_limit_interrupts_with_last_design() {
    let (pb, load) = small_problem();
    match solve_to(&pb, &load, &AlParams::default(), Some(7)) {
        Err(Error::SolveInterrupted { consumed, design }) => {
            assert_eq!(consumed, 7);
            assert_eq!(design.len(), pb.n());
        }
        other => panic!("expected interruption, got {other:?}"),
    }
}

#[test]
fn rejects_invalid_parameters() {
    let (pb, load) = small_problem();
    let bad = AlParams { learning_rate: -1.0, ..Default::default() };
    assert!(solve_to(&pb, &load, &bad, None).is_err());
}
