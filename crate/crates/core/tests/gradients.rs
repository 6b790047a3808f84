use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topoforge::fem::{FeaCounter, Material, Mesh};
use topoforge::problem::{DensityParams, TopOptProblem};
use topoforge::setting::{tip_node, ProblemSetting};

fn rel_error(analytic: &[f64], fd: &[f64]) -> f64 {
    let num: f64 = analytic.iter().zip(fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-300);
    num / den
}

fn check_mesh(n: usize, seed: u64) {
    let mesh = Mesh::cantilever(n, n).unwrap();
    let params = DensityParams { local_radius: 2.5, filter_radius: 1.5, ..Default::default() };
    let pb = TopOptProblem::new(mesh.clone(), Material::default(), params).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counter = FeaCounter::new();
    for trial in 0..10 {
        let angle = rng.gen_range(0.0..std::f64::consts::PI);
        let load = ProblemSetting::Tip { angle, node: tip_node(&mesh) }.realize(&mesh).unwrap();
        let beta = [1.0, 2.0, 4.0, 8.0][trial % 4];
        let x: Vec<f64> = (0..pb.n()).map(|_| rng.gen_range(0.1..0.9)).collect();
        let ev = pb.evaluate(&x, beta, &load, &counter).unwrap();
        let grads = pb.gradients(&ev).unwrap();
        let h = 1e-6;
        let (mut df, mut dg0, mut dg1) = (vec![0.0; pb.n()], vec![0.0; pb.n()], vec![0.0; pb.n()]);
        for e in 0..pb.n() {
            let mut xp = x.clone();
            xp[e] += h;
            let mut xm = x.clone();
            xm[e] -= h;
            let p = pb.evaluate(&xp, beta, &load, &counter).unwrap();
            let m = pb.evaluate(&xm, beta, &load, &counter).unwrap();
            df[e] = (p.f - m.f) / (2.0 * h);
            dg0[e] = (p.g0() - m.g0()) / (2.0 * h);
            dg1[e] = (p.g1() - m.g1()) / (2.0 * h);
        }
        for (name, a, f) in [("f", &grads.df, &df), ("g0", &grads.dg0, &dg0), ("g1", &grads.dg1, &dg1)] {
            let err = rel_error(a, f);
            assert!(err < 1e-4, "{n}x{n} trial {trial} beta {beta}: d{name} relative error {err:e}");
        }
    }
}

#[test]
fn gradients_match_central_differences_4x4() {
    check_mesh(4, 11);
}

#[test]
fn gradients_match_central_differences_8x8() {
    check_mesh(8, 12);
}

#[test]
fn sensitivity_matches_differences_at_target_sharpness() {
    let mesh = Mesh::cantilever(12, 6).unwrap();
    let pb = TopOptProblem::new(mesh.clone(), Material::default(), DensityParams::default()).unwrap();
    let load = ProblemSetting::Tip { angle: 1.2, node: tip_node(&mesh) }.realize(&mesh).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<f64> = (0..pb.n()).map(|_| rng.gen_range(0.35..0.65)).collect();
    let c = FeaCounter::new();
    let ev = pb.evaluate_final(&x, &load, &c).unwrap();
    let g = pb.gradients(&ev).unwrap();
    let h = 1e-7;
    let fd: Vec<f64> = (0..pb.n())
        .map(|e| {
            let mut xp = x.clone();
            xp[e] += h;
            let mut xm = x.clone();
            xm[e] -= h;
            (pb.evaluate_final(&xp, &load, &c).unwrap().f - pb.evaluate_final(&xm, &load, &c).unwrap().f) / (2.0 * h)
        })
        .collect();
    assert!(rel_error(&g.df, &fd) < 1e-4);
}
