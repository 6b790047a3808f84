//! Parametric load descriptions and their sampling distributions.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::fem::{LoadRealization, Mesh};

/// Node-index rectangle (inclusive) from which region loads are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Region {
    pub i0: usize,
    pub i1: usize,
    pub j0: usize,
    pub j1: usize,
}

impl Region {
    /// Square of side `nx / 3` elements, flush with the right edge and
    /// centred vertically (clamped to the mesh).
    pub fn default_for(mesh: &Mesh) -> Self {
        let side = (mesh.nx() / 3).max(1);
        let i1 = mesh.nx();
        let i0 = i1 - side.min(i1);
        let side_y = side.min(mesh.ny());
        let j0 = (mesh.ny() - side_y) / 2;
        Self { i0, i1, j0, j1: j0 + side_y }
    }

    pub fn n_nodes(&self) -> usize {
        (self.i1 - self.i0 + 1) * (self.j1 - self.j0 + 1)
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        (self.i0..=self.i1).contains(&i) && (self.j0..=self.j1).contains(&j)
    }

    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        if self.i0 > self.i1 || self.j0 > self.j1 || self.i1 > mesh.nx() || self.j1 > mesh.ny() {
            return Err(Error::InvalidParameter(format!("load region {self:?} outside the mesh")));
        }
        for i in self.i0..=self.i1 {
            for j in self.j0..=self.j1 {
                let n = mesh.node(i, j);
                if mesh.is_fixed(2 * n) || mesh.is_fixed(2 * n + 1) {
                    return Err(Error::InvalidParameter(format!("load region contains fixed node ({i},{j})")));
                }
            }
        }
        Ok(())
    }
}

/// The problem family, i.e. the support of `p(s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LoadCase {
    /// Unit load at the middle node of the right edge, angle uniform on `[0, pi]`.
    Tip,
    /// Unit load at any node of `region`, angle uniform on `[0, 2 pi]`.
    Region(Region),
}

impl LoadCase {
    pub fn input_dim(&self) -> usize {
        match self {
            LoadCase::Tip => 2,
            LoadCase::Region(_) => 3,
        }
    }

    pub fn setting_dim(&self) -> usize {
        match self {
            LoadCase::Tip => 1,
            LoadCase::Region(_) => 3,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, mesh: &Mesh, rng: &mut R) -> ProblemSetting {
        match self {
            LoadCase::Tip => ProblemSetting::Tip { angle: rng.gen::<f64>() * PI, node: tip_node(mesh) },
            LoadCase::Region(r) => {
                let i = rng.gen_range(r.i0..=r.i1);
                let j = rng.gen_range(r.j0..=r.j1);
                ProblemSetting::Point { i, j, angle: rng.gen::<f64>() * 2.0 * PI }
            }
        }
    }

    /// Rebuilds a setting from its raw parameter vector.
    pub fn setting_from_params(&self, mesh: &Mesh, params: &[f64]) -> Result<ProblemSetting> {
        match (self, params) {
            (LoadCase::Tip, [a]) => Ok(ProblemSetting::Tip { angle: *a, node: tip_node(mesh) }),
            (LoadCase::Region(_), [i, j, a]) => {
                if *i < 0.0 || *j < 0.0 || i.fract() != 0.0 || j.fract() != 0.0 {
                    return Err(Error::InvalidParameter(format!("node indices must be whole numbers, got ({i},{j})")));
                }
                Ok(ProblemSetting::Point { i: *i as usize, j: *j as usize, angle: *a })
            }
            _ => Err(Error::DimensionMismatch { expected: self.setting_dim(), actual: params.len() }),
        }
    }
}

/// `(nx, ny / 2)`.
pub fn tip_node(mesh: &Mesh) -> (usize, usize) {
    (mesh.nx(), mesh.ny() / 2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProblemSetting {
    Tip { angle: f64, node: (usize, usize) },
    Point { i: usize, j: usize, angle: f64 },
}

impl ProblemSetting {
    pub fn angle(&self) -> f64 {
        match *self {
            ProblemSetting::Tip { angle, .. } | ProblemSetting::Point { angle, .. } => angle,
        }
    }

    pub fn node(&self) -> (usize, usize) {
        match *self {
            ProblemSetting::Tip { node, .. } => node,
            ProblemSetting::Point { i, j, .. } => (i, j),
        }
    }

    /// Raw parameters: `[angle]` or `[i, j, angle]`.
    pub fn params(&self) -> Vec<f64> {
        match *self {
            ProblemSetting::Tip { angle, .. } => vec![angle],
            ProblemSetting::Point { i, j, angle } => vec![i as f64, j as f64, angle],
        }
    }

    /// Dense generator input: `(cos a, sin a)` or `(x/width, y/height, a/2pi)`.
    pub fn encode(&self, mesh: &Mesh) -> Vec<f64> {
        match *self {
            ProblemSetting::Tip { angle, .. } => vec![angle.cos(), angle.sin()],
            ProblemSetting::Point { i, j, angle } => {
                vec![i as f64 / mesh.nx() as f64, j as f64 / mesh.ny() as f64, angle / (2.0 * PI)]
            }
        }
    }

    /// Whether the setting lies inside the sampling support of `case`.
    pub fn in_support(&self, case: &LoadCase) -> bool {
        match (self, case) {
            (ProblemSetting::Tip { angle, .. }, LoadCase::Tip) => (0.0..=PI).contains(angle),
            (ProblemSetting::Point { i, j, angle }, LoadCase::Region(r)) => {
                r.contains(*i, *j) && (0.0..=2.0 * PI).contains(angle)
            }
            _ => false,
        }
    }

    /// Unit point load `(cos a, sin a)`.
    pub fn realize(&self, mesh: &Mesh) -> Result<LoadRealization> {
        let (i, j) = self.node();
        if i > mesh.nx() || j > mesh.ny() {
            return Err(Error::InvalidLoad(format!("load node ({i},{j}) outside the mesh")));
        }
        let a = self.angle();
        if !a.is_finite() {
            return Err(Error::InvalidLoad(format!("non-finite load angle {a}")));
        }
        LoadRealization::point(mesh, mesh.node(i, j), a.cos(), a.sin())
    }

    /// Bit-exact identity key.
    pub fn key(&self) -> Vec<u64> {
        self.params().iter().map(|v| v.to_bits()).collect()
    }
}

impl std::fmt::Display for ProblemSetting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProblemSetting::Tip { angle, .. } => write!(f, "angle={angle}"),
            ProblemSetting::Point { i, j, angle } => write!(f, "node=({i};{j}) angle={angle}"),
        }
    }
}
