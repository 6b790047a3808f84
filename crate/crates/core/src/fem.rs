//! Regular quadrilateral mesh, plane-stress stiffness assembly, equilibrium
//! solve, compliance and compliance sensitivities.
//!
//! Nodes are numbered column by column (`node = i * (ny + 1) + j`, `j = 0` at
//! the bottom edge) and elements likewise (`e = ix * ny + iy`). Every node
//! carries two DOFs `(2n, 2n + 1)` for the x and y displacement.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

/// 8x8 element matrix.
pub type ElementMatrix = [[f64; 8]; 8];

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    nx: usize,
    ny: usize,
    fixed: Vec<usize>,
    fixed_mask: Vec<bool>,
}

impl Mesh {
    /// Mesh of `nx` by `ny` unit square elements with the given fixed DOFs.
    pub fn new(nx: usize, ny: usize, mut fixed_dofs: Vec<usize>) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidMesh(format!("element counts must be positive, got {nx}x{ny}")));
        }
        if fixed_dofs.is_empty() {
            return Err(Error::InvalidMesh("fixed-DOF set is empty".into()));
        }
        let n_dofs = 2 * (nx + 1) * (ny + 1);
        fixed_dofs.sort_unstable();
        fixed_dofs.dedup();
        if let Some(&d) = fixed_dofs.iter().find(|&&d| d >= n_dofs) {
            return Err(Error::InvalidMesh(format!("fixed dof {d} out of range ({n_dofs} dofs)")));
        }
        let mut fixed_mask = vec![false; n_dofs];
        for &d in &fixed_dofs {
            fixed_mask[d] = true;
        }
        Ok(Self { nx, ny, fixed: fixed_dofs, fixed_mask })
    }

    /// Cantilever: every node on the left edge clamped in both directions.
    pub fn cantilever(nx: usize, ny: usize) -> Result<Self> {
        let fixed = (0..=ny).flat_map(|j| [2 * j, 2 * j + 1]).collect();
        Self::new(nx, ny, fixed)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn n_elements(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn n_dofs(&self) -> usize {
        2 * self.n_nodes()
    }

    pub fn node(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= self.nx && j <= self.ny);
        i * (self.ny + 1) + j
    }

    pub fn node_coords(&self, node: usize) -> (f64, f64) {
        ((node / (self.ny + 1)) as f64, (node % (self.ny + 1)) as f64)
    }

    pub fn element(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix < self.nx && iy < self.ny);
        ix * self.ny + iy
    }

    /// `(ix, iy)` grid position of element `e`.
    pub fn element_position(&self, e: usize) -> (usize, usize) {
        (e / self.ny, e % self.ny)
    }

    /// Corner nodes, counter-clockwise from the lower-left one.
    pub fn element_nodes(&self, e: usize) -> [usize; 4] {
        let (ix, iy) = self.element_position(e);
        [
            self.node(ix, iy),
            self.node(ix + 1, iy),
            self.node(ix + 1, iy + 1),
            self.node(ix, iy + 1),
        ]
    }

    pub fn element_dofs(&self, e: usize) -> [usize; 8] {
        let n = self.element_nodes(e);
        [
            2 * n[0],
            2 * n[0] + 1,
            2 * n[1],
            2 * n[1] + 1,
            2 * n[2],
            2 * n[2] + 1,
            2 * n[3],
            2 * n[3] + 1,
        ]
    }

    pub fn element_centroid(&self, e: usize) -> (f64, f64) {
        let (ix, iy) = self.element_position(e);
        (ix as f64 + 0.5, iy as f64 + 0.5)
    }

    pub fn fixed_dofs(&self) -> &[usize] {
        &self.fixed
    }

    pub fn is_fixed(&self, dof: usize) -> bool {
        self.fixed_mask[dof]
    }

    /// Largest `|i - j|` over DOF pairs sharing an element.
    pub fn half_bandwidth(&self) -> usize {
        (0..self.n_elements())
            .map(|e| {
                let d = self.element_dofs(e);
                d.iter().max().unwrap() - d.iter().min().unwrap()
            })
            .max()
            .unwrap_or(0)
    }
}

/// Linear-elastic SIMP material.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    pub e0: f64,
    pub e_min: f64,
    pub nu: f64,
    pub penal: f64,
}

impl Default for Material {
    fn default() -> Self {
        Self { e0: 1.0, e_min: 1e-9, nu: 0.3, penal: 3.0 }
    }
}

impl Material {
    pub fn validate(&self) -> Result<()> {
        if !(self.e0 > self.e_min && self.e_min > 0.0) {
            return Err(Error::InvalidMaterial(format!(
                "need e0 > e_min > 0, got e0={} e_min={}",
                self.e0, self.e_min
            )));
        }
        if !(0.0..0.5).contains(&self.nu) {
            return Err(Error::InvalidMaterial(format!("poisson ratio {} outside [0, 0.5)", self.nu)));
        }
        if !(self.penal >= 1.0) {
            return Err(Error::InvalidMaterial(format!("penalization {} < 1", self.penal)));
        }
        Ok(())
    }

    /// SIMP modulus `E_min + rho^q (E0 - E_min)`.
    pub fn modulus(&self, rho: f64) -> f64 {
        self.e_min + rho.powf(self.penal) * (self.e0 - self.e_min)
    }

    /// `dE/drho`.
    pub fn modulus_derivative(&self, rho: f64) -> f64 {
        self.penal * rho.powf(self.penal - 1.0) * (self.e0 - self.e_min)
    }
}

/// Bilinear quad stiffness for a unit square, plane stress, unit thickness,
/// Young's modulus `material.e0`. Integrated with 2x2 Gauss points.
pub fn element_stiffness(material: &Material) -> ElementMatrix {
    element_stiffness_with(material.e0, material.nu)
}

pub(crate) fn element_stiffness_with(young: f64, nu: f64) -> ElementMatrix {
    let c = young / (1.0 - nu * nu);
    let d = [[c, c * nu, 0.0], [c * nu, c, 0.0], [0.0, 0.0, c * (1.0 - nu) / 2.0]];
    let g = 1.0 / 3f64.sqrt();
    // natural coordinates of the corner nodes, same order as `Mesh::element_nodes`
    let corners = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
    let mut k = [[0.0; 8]; 8];
    for &xi in &[-g, g] {
        for &eta in &[-g, g] {
            let mut b = [[0.0; 8]; 3];
            for (a, &(xa, ya)) in corners.iter().enumerate() {
                // dN/dx = 2 dN/dxi for a unit element
                let dx = 2.0 * xa * (1.0 + ya * eta) / 4.0;
                let dy = 2.0 * ya * (1.0 + xa * xi) / 4.0;
                b[0][2 * a] = dx;
                b[1][2 * a + 1] = dy;
                b[2][2 * a] = dy;
                b[2][2 * a + 1] = dx;
            }
            let det_j = 0.25;
            for i in 0..8 {
                for j in 0..8 {
                    let mut s = 0.0;
                    for p in 0..3 {
                        for q in 0..3 {
                            s += b[p][i] * d[p][q] * b[q][j];
                        }
                    }
                    k[i][j] += s * det_j;
                }
            }
        }
    }
    // exact symmetry
    for i in 0..8 {
        for j in 0..i {
            let avg = 0.5 * (k[i][j] + k[j][i]);
            k[i][j] = avg;
            k[j][i] = avg;
        }
    }
    k
}

/// Symmetric banded matrix storing the lower band row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct StiffnessMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
    fixed: Vec<usize>,
}

impl StiffnessMatrix {
    pub fn zeros(n: usize, half_bandwidth: usize, fixed: Vec<usize>) -> Self {
        Self { n, bw: half_bandwidth, data: vec![0.0; n * (half_bandwidth + 1)], fixed }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn half_bandwidth(&self) -> usize {
        self.bw
    }

    pub fn fixed_dofs(&self) -> &[usize] {
        &self.fixed
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (self.bw + j - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// Adds `v` at `(i, j)`, `i >= j`; the mirrored entry is implied.
    pub fn add_lower(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.get(i, j)).collect()).collect()
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n);
        let mut out = vec![0.0; self.n];
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.bw);
            let row = &self.data[i * (self.bw + 1)..(i + 1) * (self.bw + 1)];
            let off = self.bw + j0 - i;
            let mut acc = 0.0;
            for (k, j) in (j0..=i).enumerate() {
                let a = row[off + k];
                acc += a * v[j];
                if j != i {
                    out[j] += a * v[i];
                }
            }
            out[i] += acc;
        }
        out
    }

    /// In-place banded Cholesky factorization `A = L L^T`.
    fn factorize(&mut self) -> Result<()> {
        let w = self.bw + 1;
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.bw);
            for j in j0..=i {
                // sum over k in [max(i-bw, j-bw, 0), j)
                let k0 = j0.max(j.saturating_sub(self.bw));
                let mut s = self.data[i * w + (self.bw + j - i)];
                let ri = i * w + self.bw - i;
                let rj = j * w + self.bw - j;
                for k in k0..j {
                    s -= self.data[ri + k] * self.data[rj + k];
                }
                if j == i {
                    let orig = self.data[i * w + self.bw];
                    if !(s > 1e-14 * orig.abs()) || !s.is_finite() {
                        return Err(Error::Singular { dof: i, pivot: s });
                    }
                    self.data[i * w + self.bw] = s.sqrt();
                } else {
                    self.data[i * w + (self.bw + j - i)] = s / self.data[j * w + self.bw];
                }
            }
        }
        Ok(())
    }

    fn cholesky_solve(&self, b: &mut [f64]) {
        let w = self.bw + 1;
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.bw);
            let mut s = b[i];
            for j in j0..i {
                s -= self.data[i * w + self.bw + j - i] * b[j];
            }
            b[i] = s / self.data[i * w + self.bw];
        }
        for i in (0..self.n).rev() {
            let x = b[i] / self.data[i * w + self.bw];
            b[i] = x;
            let j0 = i.saturating_sub(self.bw);
            for j in j0..i {
                b[j] -= self.data[i * w + self.bw + j - i] * x;
            }
        }
    }
}

/// Dense nodal force vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadRealization {
    forces: Vec<f64>,
}

impl LoadRealization {
    pub fn new(mesh: &Mesh, forces: Vec<f64>) -> Result<Self> {
        if forces.len() != mesh.n_dofs() {
            return Err(Error::DimensionMismatch { expected: mesh.n_dofs(), actual: forces.len() });
        }
        if let Some(i) = forces.iter().position(|f| !f.is_finite()) {
            return Err(Error::InvalidLoad(format!("non-finite force at dof {i}")));
        }
        if let Some(&d) = mesh.fixed_dofs().iter().find(|&&d| forces[d] != 0.0) {
            return Err(Error::InvalidLoad(format!("force applied on fixed dof {d}")));
        }
        Ok(Self { forces })
    }

    pub fn zero(mesh: &Mesh) -> Self {
        Self { forces: vec![0.0; mesh.n_dofs()] }
    }

    pub fn point(mesh: &Mesh, node: usize, fx: f64, fy: f64) -> Result<Self> {
        if node >= mesh.n_nodes() {
            return Err(Error::InvalidLoad(format!("node {node} out of range")));
        }
        let mut f = vec![0.0; mesh.n_dofs()];
        f[2 * node] = fx;
        f[2 * node + 1] = fy;
        Self::new(mesh, f)
    }

    pub fn forces(&self) -> &[f64] {
        &self.forces
    }

    pub fn is_zero(&self) -> bool {
        self.forces.iter().all(|&f| f == 0.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { forces: self.forces.iter().map(|f| f * factor).collect() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField(pub Vec<f64>);

impl DisplacementField {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Thread-safe count of equilibrium solves with an optional hard limit.
#[derive(Debug, Default)]
pub struct FeaCounter {
    count: AtomicU64,
    limit: Option<u64>,
}

impl FeaCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_limit(limit: u64) -> Self {
        Self { count: AtomicU64::new(0), limit: Some(limit) }
    }

    pub fn count(&self) -> u64 {
        self.count.load(Ordering::SeqCst)
    }

    pub fn limit(&self) -> Option<u64> {
        self.limit
    }

    /// Records one solve, failing without recording when the limit is reached.
    pub fn charge(&self) -> Result<()> {
        match self.limit {
            None => {
                self.count.fetch_add(1, Ordering::SeqCst);
                Ok(())
            }
            Some(limit) => self
                .count
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |c| (c < limit).then_some(c + 1))
                .map(|_| ())
                .map_err(|c| Error::BudgetExhausted { consumed: c }),
        }
    }
}

/// Mesh plus material with the unit-modulus element matrix computed once.
#[derive(Debug, Clone)]
pub struct FemModel {
    mesh: Mesh,
    material: Material,
    k0: ElementMatrix,
    bw: usize,
}

impl FemModel {
    pub fn new(mesh: Mesh, material: Material) -> Result<Self> {
        material.validate()?;
        let k0 = element_stiffness_with(1.0, material.nu);
        let bw = mesh.half_bandwidth();
        Ok(Self { mesh, material, k0, bw })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn material(&self) -> &Material {
        &self.material
    }

    /// Unit-modulus element matrix.
    pub fn unit_element_stiffness(&self) -> &ElementMatrix {
        &self.k0
    }

    pub fn assemble(&self, rho: &[f64]) -> Result<StiffnessMatrix> {
        let n_el = self.mesh.n_elements();
        if rho.len() != n_el {
            return Err(Error::DimensionMismatch { expected: n_el, actual: rho.len() });
        }
        let mut k = StiffnessMatrix::zeros(self.mesh.n_dofs(), self.bw, self.mesh.fixed_dofs().to_vec());
        for (e, &r) in rho.iter().enumerate() {
            let ee = self.material.modulus(r);
            let dofs = self.mesh.element_dofs(e);
            for a in 0..8 {
                for b in 0..8 {
                    if dofs[a] >= dofs[b] {
                        k.add_lower(dofs[a], dofs[b], ee * self.k0[a][b]);
                    }
                }
            }
        }
        Ok(k)
    }

    /// Per-element `u_e^T k0 u_e`.
    pub fn element_energies(&self, u: &DisplacementField) -> Vec<f64> {
        let u = u.as_slice();
        (0..self.mesh.n_elements())
            .map(|e| {
                let dofs = self.mesh.element_dofs(e);
                let ue: [f64; 8] = std::array::from_fn(|a| u[dofs[a]]);
                let mut s = 0.0;
                for a in 0..8 {
                    let mut row = 0.0;
                    for b in 0..8 {
                        row += self.k0[a][b] * ue[b];
                    }
                    s += ue[a] * row;
                }
                s
            })
            .collect()
    }

    /// `df/drho_e = -1/2 dE/drho_e u_e^T k0 u_e` for `f = 1/2 u^T K u`.
    pub fn compliance_sensitivity(&self, u: &DisplacementField, rho: &[f64]) -> Vec<f64> {
        self.element_energies(u)
            .iter()
            .zip(rho)
            .map(|(&en, &r)| -0.5 * self.material.modulus_derivative(r) * en)
            .collect()
    }
}

/// Global stiffness for the density field `rho`.
pub fn assemble_stiffness(mesh: &Mesh, rho: &[f64], material: &Material) -> Result<StiffnessMatrix> {
    FemModel::new(mesh.clone(), *material)?.assemble(rho)
}

/// Solves `K u = s` with the fixed DOFs eliminated. Charges `counter` once.
pub fn solve_equilibrium(k: &StiffnessMatrix, load: &LoadRealization, counter: &FeaCounter) -> Result<DisplacementField> {
    let n = k.dim();
    if load.forces().len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: load.forces().len() });
    }
    counter.charge()?;
    if k.fixed.is_empty() {
        return Err(Error::Singular { dof: 0, pivot: 0.0 });
    }
    let mut rhs = load.forces().to_vec();
    if rhs.iter().all(|&f| f == 0.0) {
        return Ok(DisplacementField(rhs));
    }
    let mut a = k.clone();
    let w = a.bw + 1;
    for &d in &k.fixed {
        let j0 = d.saturating_sub(a.bw);
        for j in j0..d {
            a.data[d * w + a.bw + j - d] = 0.0;
        }
        for i in d + 1..(d + a.bw + 1).min(n) {
            a.data[i * w + a.bw + d - i] = 0.0;
        }
        a.data[d * w + a.bw] = 1.0;
        rhs[d] = 0.0;
    }
    a.factorize()?;
    a.cholesky_solve(&mut rhs);
    for &d in &k.fixed {
        rhs[d] = 0.0;
    }
    if rhs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("displacement".into()));
    }
    Ok(DisplacementField(rhs))
}

/// `f = 1/2 u^T K u`.
pub fn compliance(u: &DisplacementField, k: &StiffnessMatrix) -> f64 {
    let ku = k.mul_vec(u.as_slice());
    0.5 * ku.iter().zip(u.as_slice()).map(|(a, b)| a * b).sum::<f64>()
}

/// Per-element `df/drho`.
pub fn compliance_sensitivity(u: &DisplacementField, rho: &[f64], mesh: &Mesh, material: &Material) -> Result<Vec<f64>> {
    Ok(FemModel::new(mesh.clone(), *material)?.compliance_sensitivity(u, rho))
}
