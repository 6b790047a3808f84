//! Design variables to physical densities: neighbourhood filter, tanh
//! projection, global and p-norm local volume constraints, and the chain rule
//! that carries density gradients back to the design variables.

use crate::error::{Error, Result};
use crate::fem::Mesh;

/// Precomputed filter (`M_e`, weights) and local-density (`N_e`) neighbourhoods
/// in compressed row form, rows ordered by element index.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterKernel {
    n: usize,
    filter_radius: f64,
    local_radius: f64,
    filter_ptr: Vec<usize>,
    filter_idx: Vec<usize>,
    filter_w: Vec<f64>,
    filter_wsum: Vec<f64>,
    local_ptr: Vec<usize>,
    local_idx: Vec<usize>,
}

/// Neighbourhoods by centroid distance. The filter ball is open (`d < r`, so
/// every weight is strictly positive); the local-density ball is closed.
pub fn build_kernel(mesh: &Mesh, filter_radius: f64, local_radius: f64) -> Result<FilterKernel> {
    if !(filter_radius > 0.0) || !(local_radius > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "radii must be positive, got r={filter_radius} R={local_radius}"
        )));
    }
    let (nx, ny) = (mesh.nx(), mesh.ny());
    let n = mesh.n_elements();
    let mut kernel = FilterKernel {
        n,
        filter_radius,
        local_radius,
        filter_ptr: vec![0],
        filter_idx: Vec::new(),
        filter_w: Vec::new(),
        filter_wsum: Vec::with_capacity(n),
        local_ptr: vec![0],
        local_idx: Vec::new(),
    };
    let reach = filter_radius.max(local_radius).ceil() as isize;
    for e in 0..n {
        let (ix, iy) = mesh.element_position(e);
        let mut wsum = 0.0;
        let (x0, x1) = ((ix as isize - reach).max(0), (ix as isize + reach).min(nx as isize - 1));
        let (y0, y1) = ((iy as isize - reach).max(0), (iy as isize + reach).min(ny as isize - 1));
        for jx in x0..=x1 {
            for jy in y0..=y1 {
                let (dx, dy) = ((jx - ix as isize) as f64, (jy - iy as isize) as f64);
                let dist = (dx * dx + dy * dy).sqrt();
                let i = mesh.element(jx as usize, jy as usize);
                if dist < filter_radius {
                    let w = 1.0 - dist / filter_radius;
                    kernel.filter_idx.push(i);
                    kernel.filter_w.push(w);
                    wsum += w;
                }
                if dist <= local_radius {
                    kernel.local_idx.push(i);
                }
            }
        }
        kernel.filter_ptr.push(kernel.filter_idx.len());
        kernel.filter_wsum.push(wsum);
        kernel.local_ptr.push(kernel.local_idx.len());
    }
    Ok(kernel)
}

impl FilterKernel {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn filter_radius(&self) -> f64 {
        self.filter_radius
    }

    pub fn local_radius(&self) -> f64 {
        self.local_radius
    }

    /// `M_e` with the raw weights `1 - d/r`.
    pub fn filter_neighbors(&self, e: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.filter_ptr[e]..self.filter_ptr[e + 1];
        self.filter_idx[r.clone()].iter().copied().zip(self.filter_w[r].iter().copied())
    }

    /// `N_e`.
    pub fn local_neighbors(&self, e: usize) -> &[usize] {
        &self.local_idx[self.local_ptr[e]..self.local_ptr[e + 1]]
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, actual: v.len() });
        }
        Ok(())
    }

    /// Weighted neighbourhood average `x~`.
    pub fn apply_filter(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok((0..self.n)
            .map(|e| self.filter_neighbors(e).map(|(i, w)| w * x[i]).sum::<f64>() / self.filter_wsum[e])
            .collect())
    }

    /// `F^T v` for the row-normalized filter matrix `F`.
    pub fn filter_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check(v)?;
        let mut out = vec![0.0; self.n];
        for e in 0..self.n {
            let scale = v[e] / self.filter_wsum[e];
            for (i, w) in self.filter_neighbors(e) {
                out[i] += w * scale;
            }
        }
        Ok(out)
    }

    /// `rho_bar_e`: plain mean of `rho` over `N_e`.
    pub fn local_average(&self, rho: &[f64]) -> Result<Vec<f64>> {
        self.check(rho)?;
        Ok((0..self.n)
            .map(|e| {
                let nb = self.local_neighbors(e);
                nb.iter().map(|&i| rho[i]).sum::<f64>() / nb.len() as f64
            })
            .collect())
    }

    pub fn local_average_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check(v)?;
        let mut out = vec![0.0; self.n];
        for e in 0..self.n {
            let nb = self.local_neighbors(e);
            let scale = v[e] / nb.len() as f64;
            for &i in nb {
                out[i] += scale;
            }
        }
        Ok(out)
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidParameter(format!("projection sharpness must be positive, got {beta}")));
    }
    Ok(())
}

pub fn project_scalar(xt: f64, beta: f64) -> f64 {
    let t = (beta / 2.0).tanh();
    ((t + (beta * (xt - 0.5)).tanh()) / (2.0 * t)).clamp(0.0, 1.0)
}

pub fn project_derivative_scalar(xt: f64, beta: f64) -> f64 {
    let th = (beta * (xt - 0.5)).tanh();
    beta * (1.0 - th * th) / (2.0 * (beta / 2.0).tanh())
}

/// Smoothed Heaviside projection of the filtered field.
pub fn project(x_tilde: &[f64], beta: f64) -> Result<Vec<f64>> {
    check_beta(beta)?;
    Ok(x_tilde.iter().map(|&v| project_scalar(v, beta)).collect())
}

pub fn apply_filter(kernel: &FilterKernel, x: &[f64]) -> Result<Vec<f64>> {
    kernel.apply_filter(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintValues {
    /// Global volume: mean density minus `alpha`.
    pub g0: f64,
    /// Local volume: p-norm of the local averages minus `alpha`.
    pub g1: f64,
    pub rho_bar: Vec<f64>,
    pub pnorm: f64,
}

/// Scaled p-mean `(1/N sum v^p)^(1/p)` for nonnegative `v`.
pub fn p_mean(v: &[f64], p: f64) -> f64 {
    let m = v.iter().fold(0.0f64, |a, &b| a.max(b));
    if m == 0.0 {
        return 0.0;
    }
    let s: f64 = v.iter().map(|&x| (x / m).powf(p)).sum::<f64>() / v.len() as f64;
    m * s.powf(1.0 / p)
}

pub fn constraints(rho: &[f64], kernel: &FilterKernel, alpha: f64, p: f64) -> Result<ConstraintValues> {
    if !(p >= 1.0) {
        return Err(Error::InvalidParameter(format!("aggregation exponent must be >= 1, got {p}")));
    }
    let n = rho.len() as f64;
    let rho_bar = kernel.local_average(rho)?;
    let pnorm = p_mean(&rho_bar, p);
    Ok(ConstraintValues { g0: rho.iter().sum::<f64>() / n - alpha, g1: pnorm - alpha, rho_bar, pnorm })
}

/// `dg1/drho` through the p-mean and local averaging.
pub fn local_constraint_gradient(kernel: &FilterKernel, cv: &ConstraintValues, p: f64) -> Result<Vec<f64>> {
    let n = cv.rho_bar.len() as f64;
    let d_bar: Vec<f64> = if cv.pnorm == 0.0 {
        vec![0.0; cv.rho_bar.len()]
    } else {
        cv.rho_bar.iter().map(|&r| (r / cv.pnorm).powf(p - 1.0) / n).collect()
    };
    kernel.local_average_transpose(&d_bar)
}

/// `d./dx = F^T diag(drho/dx~) d./drho`.
pub fn chain_gradient(kernel: &FilterKernel, x_tilde: &[f64], beta: f64, d_rho: &[f64]) -> Result<Vec<f64>> {
    check_beta(beta)?;
    if x_tilde.len() != d_rho.len() {
        return Err(Error::DimensionMismatch { expected: x_tilde.len(), actual: d_rho.len() });
    }
    let scaled: Vec<f64> = x_tilde.iter().zip(d_rho).map(|(&xt, &g)| project_derivative_scalar(xt, beta) * g).collect();
    kernel.filter_transpose(&scaled)
}

/// Everything derived from one design vector at one sharpness.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityState {
    pub x_tilde: Vec<f64>,
    pub rho: Vec<f64>,
    pub rho_bar: Vec<f64>,
    pub g0: f64,
    pub g1: f64,
    pub pnorm: f64,
    pub beta: f64,
    pub alpha: f64,
    pub p: f64,
}

impl DensityState {
    pub fn compute(kernel: &FilterKernel, x: &[f64], beta: f64, alpha: f64, p: f64) -> Result<Self> {
        let x_tilde = kernel.apply_filter(x)?;
        let rho = project(&x_tilde, beta)?;
        let cv = constraints(&rho, kernel, alpha, p)?;
        Ok(Self { x_tilde, rho, rho_bar: cv.rho_bar, g0: cv.g0, g1: cv.g1, pnorm: cv.pnorm, beta, alpha, p })
    }

    /// `(dg0/dx, dg1/dx)`.
    pub fn constraint_gradients(&self, kernel: &FilterKernel) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.rho.len();
        let dg0 = chain_gradient(kernel, &self.x_tilde, self.beta, &vec![1.0 / n as f64; n])?;
        let cv = ConstraintValues { g0: self.g0, g1: self.g1, rho_bar: self.rho_bar.clone(), pnorm: self.pnorm };
        let dg1_rho = local_constraint_gradient(kernel, &cv, self.p)?;
        let dg1 = chain_gradient(kernel, &self.x_tilde, self.beta, &dg1_rho)?;
        Ok((dg0, dg1))
    }
}
