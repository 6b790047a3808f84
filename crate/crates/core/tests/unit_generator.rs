use topoforge::generator::*;

fn arch(sizes: &[usize]) -> Architecture {
    Architecture::new(sizes.to_vec(), Activation::Tanh).unwrap()
}

#[test]
fn init_is_deterministic_and_seed_dependent() {
    let a = arch(&[2, 8, 5]);
    assert_eq!(init(&a, 7), init(&a, 7));
    assert_ne!(init(&a, 7).to_flat(), init(&a, 8).to_flat());
    assert!(Architecture::new(vec![2, 0, 4], Activation::Tanh).is_err());
    assert!(Architecture::new(vec![2], Activation::Tanh).is_err());
}

#[test]
fn parameter_count_arithmetic() {
    let n = 1200;
    assert_eq!(arch(&[2, 64, 256, n]).param_count(), 2 * 64 + 64 + 64 * 256 + 256 + 256 * n + n);
    assert_eq!(init(&arch(&[2, 64, 256, n]), 1).to_flat().len(), 2 * 64 + 64 + 64 * 256 + 256 + 256 * n + n);
}

#[test]
fn zero_parameters_give_half() {
    let p = GeneratorParams::zeroed(&arch(&[3, 4, 6]));
    assert_eq!(p.forward(&[0.1, -2.0, 5.0]).unwrap(), vec![0.5; 6]);
}

#[test]
fn forward_rejects_bad_input() {
    let p = init(&arch(&[2, 4, 3]), 0);
    assert!(p.forward(&[1.0]).is_err());
    assert!(p.forward(&[1.0, f64::NAN]).is_err());
}

#[test]
fn weights_from_sensitivity() {
    let w = SensitivityWeights::from_sensitivity(&[-4.0, -1.0, -2.5, 0.0]).unwrap();
    assert_eq!(w.0, vec![1.0, 0.25, 0.625, 0.0]);
    assert!(SensitivityWeights::from_sensitivity(&[-2.0, -2.0]).is_none());
}

#[test]
fn identity_weights_equal_unweighted_loss() {
    let p = init(&arch(&[2, 5, 4]), 3);
    let inputs = vec![vec![0.3, -0.2], vec![1.0, 0.5]];
    let targets = vec![vec![0.1, 0.9, 0.4, 0.2], vec![0.7, 0.3, 0.5, 0.5]];
    let ones = vec![Some(SensitivityWeights(vec![1.0; 4])), None];
    let plain = loss(&p, &TrainingSet { inputs: &inputs, targets: &targets, weights: None }).unwrap();
    let weighted = loss(&p, &TrainingSet { inputs: &inputs, targets: &targets, weights: Some(&ones) }).unwrap();
    assert_eq!(plain, weighted);
}

#[test]
fn model_bytes_round_trip_and_reject_corruption() {
    let p = init(&arch(&[3, 4, 6]), 9);
    let bytes = p.to_bytes();
    assert_eq!(GeneratorParams::from_bytes(&bytes).unwrap(), p);
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(GeneratorParams::from_bytes(&bad).is_err());
    let mut bad = bytes.clone();
    bad[4] = 99;
    assert!(GeneratorParams::from_bytes(&bad).is_err());
    assert!(GeneratorParams::from_bytes(&bytes[..bytes.len() - 3]).is_err());
}
