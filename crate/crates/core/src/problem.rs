//! The compliance-minimization problem bundled for repeated evaluation.

use crate::density::{build_kernel, chain_gradient, DensityState, FilterKernel};
use crate::error::{Error, Result};
use crate::fem::{compliance, solve_equilibrium, DisplacementField, FeaCounter, FemModel, LoadRealization, Material, Mesh};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityParams {
    pub alpha: f64,
    pub p: f64,
    pub filter_radius: f64,
    pub local_radius: f64,
    pub beta_init: f64,
    pub beta_target: f64,
}

impl Default for DensityParams {
    fn default() -> Self {
        Self { alpha: 0.4, p: 16.0, filter_radius: 2.0, local_radius: 6.0, beta_init: 1.0, beta_target: 16.0 }
    }
}

impl DensityParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("volume fraction {} outside (0, 1)", self.alpha));
        }
        if !(self.p >= 1.0) {
            return bad(format!("aggregation exponent {} < 1", self.p));
        }
        if !(self.filter_radius > 0.0 && self.local_radius > 0.0) {
            return bad("radii must be positive".into());
        }
        if !(self.beta_init > 0.0 && self.beta_target >= self.beta_init) {
            return bad(format!("need 0 < beta_init <= beta_target, got {} / {}", self.beta_init, self.beta_target));
        }
        Ok(())
    }
}

/// Mesh, material, neighbourhoods and constraint parameters.
#[derive(Debug, Clone)]
pub struct TopOptProblem {
    fem: FemModel,
    kernel: FilterKernel,
    params: DensityParams,
}

/// State after one equilibrium solve at design `x`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub x: Vec<f64>,
    pub density: DensityState,
    pub u: DisplacementField,
    pub f: f64,
}

impl Evaluation {
    pub fn g0(&self) -> f64 {
        self.density.g0
    }

    pub fn g1(&self) -> f64 {
        self.density.g1
    }

    pub fn beta(&self) -> f64 {
        self.density.beta
    }
}

/// Gradients with respect to the design variables `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub df: Vec<f64>,
    pub dg0: Vec<f64>,
    pub dg1: Vec<f64>,
}

impl TopOptProblem {
    pub fn new(mesh: Mesh, material: Material, params: DensityParams) -> Result<Self> {
        params.validate()?;
        let kernel = build_kernel(&mesh, params.filter_radius, params.local_radius)?;
        let fem = FemModel::new(mesh, material)?;
        Ok(Self { fem, kernel, params })
    }

    pub fn mesh(&self) -> &Mesh {
        self.fem.mesh()
    }

    pub fn fem(&self) -> &FemModel {
        &self.fem
    }

    pub fn kernel(&self) -> &FilterKernel {
        &self.kernel
    }

    pub fn params(&self) -> &DensityParams {
        &self.params
    }

    pub fn n(&self) -> usize {
        self.fem.mesh().n_elements()
    }

    /// Density chain only, no equilibrium solve.
    pub fn density(&self, x: &[f64], beta: f64) -> Result<DensityState> {
        DensityState::compute(&self.kernel, x, beta, self.params.alpha, self.params.p)
    }

    /// One equilibrium solve at `x` with sharpness `beta`.
    pub fn evaluate(&self, x: &[f64], beta: f64, load: &LoadRealization, counter: &FeaCounter) -> Result<Evaluation> {
        if x.len() != self.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), actual: x.len() });
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("design variable {i}")));
        }
        let density = self.density(x, beta)?;
        let k = self.fem.assemble(&density.rho)?;
        let u = solve_equilibrium(&k, load, counter)?;
        let f = compliance(&u, &k);
        if !f.is_finite() {
            return Err(Error::NonFinite("compliance".into()));
        }
        Ok(Evaluation { x: x.to_vec(), density, u, f })
    }

    /// Evaluation at the target sharpness.
    pub fn evaluate_final(&self, x: &[f64], load: &LoadRealization, counter: &FeaCounter) -> Result<Evaluation> {
        self.evaluate(x, self.params.beta_target, load, counter)
    }

    /// `df/dx`, `dg0/dx`, `dg1/dx` chained through projection and filter.
    pub fn gradients(&self, ev: &Evaluation) -> Result<Gradients> {
        let df_rho = self.fem.compliance_sensitivity(&ev.u, &ev.density.rho);
        let df = chain_gradient(&self.kernel, &ev.density.x_tilde, ev.density.beta, &df_rho)?;
        let (dg0, dg1) = ev.density.constraint_gradients(&self.kernel)?;
        Ok(Gradients { df, dg0, dg1 })
    }
}
