use topoforge::fem::*;
use topoforge::Error;

fn dense_lu_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let m = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= m * a[c][k];
            }
            b[r] -= m * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

fn eigenvalues_sym(m: &ElementMatrix) -> Vec<f64> {
    let dm = nalgebra::DMatrix::from_fn(8, 8, |i, j| m[i][j]);
    dm.symmetric_eigenvalues().iter().copied().collect()
}

#[test]
fn element_matrix_matches_closed_form() {
    // classic closed-form Q4 plane-stress matrix for a unit square
    let nu: f64 = 0.3;
    let k = [
        0.5 - nu / 6.0,
        0.125 + nu / 8.0,
        -0.25 - nu / 12.0,
        -0.125 + 3.0 * nu / 8.0,
        -0.25 + nu / 12.0,
        -0.125 - nu / 8.0,
        nu / 6.0,
        0.125 - 3.0 * nu / 8.0,
    ];
    let idx = [
        [0, 1, 2, 3, 4, 5, 6, 7],
        [1, 0, 7, 6, 5, 4, 3, 2],
        [2, 7, 0, 5, 6, 3, 4, 1],
        [3, 6, 5, 0, 7, 2, 1, 4],
        [4, 5, 6, 7, 0, 1, 2, 3],
        [5, 4, 3, 2, 1, 0, 7, 6],
        [6, 3, 4, 1, 2, 7, 0, 5],
        [7, 2, 1, 4, 3, 6, 5, 0],
    ];
    let m = element_stiffness(&Material { e0: 1.0, ..Material::default() });
    for i in 0..8 {
        for j in 0..8 {
            let expected = k[idx[i][j]] / (1.0 - nu * nu);
            assert!((m[i][j] - expected).abs() < 1e-12, "({i},{j}) {} vs {}", m[i][j], expected);
        }
    }
}

#[test]
fn element_matrix_symmetric_rank_five() {
    let m = element_stiffness(&Material::default());
    for i in 0..8 {
        for j in 0..8 {
            assert_eq!(m[i][j], m[j][i]);
        }
    }
    let ev = eigenvalues_sym(&m);
    let zeros = ev.iter().filter(|v| v.abs() < 1e-10).count();
    assert_eq!(zeros, 3);
    assert!(ev.iter().all(|&v| v > -1e-10));
}

#[test]
fn element_matrix_linear_in_modulus() {
    let m1 = element_stiffness(&Material { e0: 1.0, ..Material::default() });
    let m2 = element_stiffness(&Material { e0: 2.0, ..Material::default() });
    for i in 0..8 {
        for j in 0..8 {
            assert_eq!(m2[i][j], 2.0 * m1[i][j]);
        }
    }
}

#[test]
fn material_validation() {
    assert!(Material::default().validate().is_ok());
    assert!(Material { e_min: 0.0, ..Material::default() }.validate().is_err());
    assert!(Material { nu: 0.5, ..Material::default() }.validate().is_err());
    assert!(Material { penal: 0.5, ..Material::default() }.validate().is_err());
}

#[test]
fn mesh_invariants() {
    let mesh = Mesh::cantilever(5, 3).unwrap();
    assert_eq!(mesh.n_nodes(), 6 * 4);
    for e in 0..mesh.n_elements() {
        let mut n = mesh.element_nodes(e).to_vec();
        n.sort();
        n.dedup();
        assert_eq!(n.len(), 4);
    }
    assert!(Mesh::new(2, 2, vec![]).is_err());
    assert!(Mesh::new(0, 2, vec![0]).is_err());
}

#[test]
fn solid_and_void_assembly_scale_uniformly() {
    let mesh = Mesh::cantilever(3, 2).unwrap();
    let mat = Material::default();
    let fem = FemModel::new(mesh.clone(), mat).unwrap();
    let ones = fem.assemble(&[1.0; 6]).unwrap();
    let zeros = fem.assemble(&[0.0; 6]).unwrap();
    let uniform = FemModel::new(mesh, Material { e0: 1.0, e_min: 1e-9, ..mat }).unwrap();
    // SIMP at rho = 1 gives E0 exactly, at rho = 0 gives E_min
    let d1 = ones.to_dense();
    let d0 = zeros.to_dense();
    let du = uniform.assemble(&[1.0; 6]).unwrap().to_dense();
    for i in 0..d1.len() {
        for j in 0..d1.len() {
            assert!((d1[i][j] - du[i][j]).abs() <= 1e-14);
            assert!((d0[i][j] - 1e-9 * du[i][j]).abs() <= 1e-23);
        }
    }
    assert!(fem.assemble(&[0.5; 5]).is_err());
}

#[test]
fn zero_load_gives_zero_displacement() {
    let mesh = Mesh::cantilever(4, 2).unwrap();
    let fem = FemModel::new(mesh.clone(), Material::default()).unwrap();
    let k = fem.assemble(&[0.7; 8]).unwrap();
    let counter = FeaCounter::new();
    let u = solve_equilibrium(&k, &LoadRealization::zero(&mesh), &counter).unwrap();
    assert!(u.0.iter().all(|&v| v == 0.0));
    assert_eq!(compliance(&u, &k), 0.0);
    assert_eq!(counter.count(), 1);
}

#[test]
fn single_element_cantilever_matches_dense_lu() {
    let mesh = Mesh::cantilever(1, 1).unwrap();
    let fem = FemModel::new(mesh.clone(), Material::default()).unwrap();
    let k = fem.assemble(&[1.0]).unwrap();
    let load = LoadRealization::point(&mesh, mesh.node(1, 1), 0.0, -1.0).unwrap();
    let u = solve_equilibrium(&k, &load, &FeaCounter::new()).unwrap();
    // reduced dense system on the free dofs of the two right-hand nodes
    let dense = k.to_dense();
    let free = [4usize, 5, 6, 7];
    let a: Vec<Vec<f64>> = free.iter().map(|&i| free.iter().map(|&j| dense[i][j]).collect()).collect();
    let b: Vec<f64> = free.iter().map(|&i| load.forces()[i]).collect();
    let x = dense_lu_solve(a, b);
    for (k2, &i) in free.iter().enumerate() {
        assert!((u.0[i] - x[k2]).abs() <= 1e-10 * x[k2].abs().max(1e-12));
    }
    assert_eq!(mesh.fixed_dofs(), &[0, 1, 2, 3]);
}

#[test]
fn linear_in_load_and_residual_small() {
    let mesh = Mesh::cantilever(6, 3).unwrap();
    let fem = FemModel::new(mesh.clone(), Material::default()).unwrap();
    let rho: Vec<f64> = (0..18).map(|i| 0.2 + 0.04 * i as f64).collect();
    let k = fem.assemble(&rho).unwrap();
    let load = LoadRealization::point(&mesh, mesh.node(6, 1), 0.3, -1.0).unwrap();
    let c = FeaCounter::new();
    let u1 = solve_equilibrium(&k, &load, &c).unwrap();
    let u2 = solve_equilibrium(&k, &load.scaled(2.0), &c).unwrap();
    for (a, b) in u1.0.iter().zip(&u2.0) {
        assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1e-12));
    }
    let ku = k.mul_vec(&u1.0);
    let res: f64 = (0..mesh.n_dofs())
        .filter(|&d| !mesh.is_fixed(d))
        .map(|d| (ku[d] - load.forces()[d]).powi(2))
        .sum::<f64>()
        .sqrt();
    assert!(res <= 1e-8);
    let f1 = compliance(&u1, &k);
    let f2 = 0.5 * load.forces().iter().zip(&u1.0).map(|(a, b)| a * b).sum::<f64>();
    assert!((f1 - f2).abs() <= 1e-8 * f1);
    assert_eq!(c.count(), 2);
}

#[test]
fn underconstrained_system_is_singular() {
    let mesh = Mesh::new(2, 2, vec![0]).unwrap();
    let fem = FemModel::new(mesh.clone(), Material::default()).unwrap();
    let k = fem.assemble(&[1.0; 4]).unwrap();
    let load = LoadRealization::point(&mesh, mesh.node(2, 2), 0.0, 1.0).unwrap();
    let err = solve_equilibrium(&k, &load, &FeaCounter::new()).unwrap_err();
    assert!(matches!(err, Error::Singular { .. }), "{err:?}");
}

#[test]
fn counter_limit_blocks_extra_solves() {
    let c = FeaCounter::with_limit(2);
    assert!(c.charge().is_ok());
    assert!(c.charge().is_ok());
    assert_eq!(c.charge(), Err(Error::BudgetExhausted { consumed: 2 }));
    assert_eq!(c.count(), 2);
}

#[test]
fn load_on_fixed_dof_rejected() {
    let mesh = Mesh::cantilever(2, 2).unwrap();
    assert!(LoadRealization::point(&mesh, 0, 1.0, 0.0).is_err());
}

#[test]
fn softer_structure_has_higher_compliance() {
    let mesh = Mesh::cantilever(4, 4).unwrap();
    let mat = Material { penal: 1.0, ..Material::default() };
    let fem = FemModel::new(mesh.clone(), mat).unwrap();
    let rho: Vec<f64> = (0..16).map(|i| 0.3 + 0.04 * i as f64).collect();
    let half: Vec<f64> = rho.iter().map(|r| r / 2.0).collect();
    let load = LoadRealization::point(&mesh, mesh.node(4, 2), 0.0, -1.0).unwrap();
    let c = FeaCounter::new();
    let k1 = fem.assemble(&rho).unwrap();
    let k2 = fem.assemble(&half).unwrap();
    let f1 = compliance(&solve_equilibrium(&k1, &load, &c).unwrap(), &k1);
    let f2 = compliance(&solve_equilibrium(&k2, &load, &c).unwrap(), &k2);
    assert!(f2 > f1 && f1 > 0.0);
}

#[test]
fn sensitivity_vanishes_near_void_and_without_load() {
    let mesh = Mesh::cantilever(4, 2).unwrap();
    let fem = FemModel::new(mesh.clone(), Material::default()).unwrap();
    let mut rho = vec![0.6; 8];
    rho[3] = 1e-4;
    let k = fem.assemble(&rho).unwrap();
    let c = FeaCounter::new();
    let u0 = solve_equilibrium(&k, &LoadRealization::zero(&mesh), &c).unwrap();
    assert!(fem.compliance_sensitivity(&u0, &rho).iter().all(|&v| v == 0.0));
    let load = LoadRealization::point(&mesh, mesh.node(4, 1), 0.0, -1.0).unwrap();
    let u = solve_equilibrium(&k, &load, &c).unwrap();
    let s = fem.compliance_sensitivity(&u, &rho);
    assert!(s.iter().all(|&v| v <= 0.0));
    // q = 3: derivative carries rho^2
    let en = fem.element_energies(&u);
    let expected = -0.5 * 3.0 * 1e-8 * (1.0 - 1e-9) * en[3];
    assert!((s[3] - expected).abs() <= 1e-12 * expected.abs());
}
