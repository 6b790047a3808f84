use topoforge::problem::*;
use topoforge::fem::{FeaCounter, Material, Mesh};
use topoforge::setting::{tip_node, ProblemSetting};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn evaluation_counts_one_solve() {
    let mesh = Mesh::cantilever(8, 4).unwrap();
    let pb = TopOptProblem::new(mesh.clone(), Material::default(), DensityParams::default()).unwrap();
    let load = ProblemSetting::Tip { angle: 1.0, node: tip_node(&mesh) }.realize(&mesh).unwrap();
    let c = FeaCounter::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x: Vec<f64> = (0..32).map(|_| rng.gen()).collect();
    let ev = pb.evaluate(&x, 4.0, &load, &c).unwrap();
    pb.gradients(&ev).unwrap();
    assert_eq!(c.count(), 1);
    assert!(ev.f > 0.0);
    assert!(pb.evaluate(&x[..5], 4.0, &load, &c).is_err());
}
