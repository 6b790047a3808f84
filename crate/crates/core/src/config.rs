//! Experiment configuration in a plain `key = value` format with `[section]`
//! headers. Lines starting with `#` or `;` are comments. Keys left out keep
//! their defaults.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::active_learning::{LearningConfig, Strategy};
use crate::error::{Error, Result};
use crate::fem::{Material, Mesh};
use crate::generator::{Activation, Optimizer, TrainConfig};
use crate::kkt::KktOptions;
use crate::problem::{DensityParams, TopOptProblem};
use crate::setting::{LoadCase, Region};
use crate::solver::AlParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseKind {
    Tip,
    Region,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub nx: usize,
    pub ny: usize,
    pub material: Material,
    pub case: CaseKind,
    /// `None` selects the default square for the mesh.
    pub region: Option<Region>,
    pub density: DensityParams,
    pub al: AlParams,
    pub kkt: KktOptions,
    pub hidden_layers: Vec<usize>,
    pub hidden_activation: Activation,
    pub train: TrainConfig,
    pub weighted_loss: bool,
    pub strategy: Strategy,
    pub initial_size: usize,
    pub validation_size: usize,
    pub test_size: usize,
    pub static_size: usize,
    /// 0 scores the whole candidate pool each iteration.
    pub candidates_per_iter: usize,
    pub surrogate_degree: usize,
    pub charge_scoring: bool,
    /// 0 means no cap.
    pub max_iterations: usize,
    pub seed: u64,
    pub seeds: u64,
    pub test_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::for_case(CaseKind::Tip)
    }
}

impl ExperimentConfig {
    /// Reduced desk-scale defaults on a 60 x 20 mesh.
    pub fn for_case(case: CaseKind) -> Self {
        let lc = LearningConfig::for_case(match case {
            CaseKind::Tip => LoadCase::Tip,
            CaseKind::Region => LoadCase::Region(Region { i0: 40, i1: 60, j0: 0, j1: 20 }),
        });
        Self {
            nx: 60,
            ny: 20,
            material: Material::default(),
            case,
            region: None,
            density: DensityParams::default(),
            al: AlParams::default(),
            kkt: KktOptions::default(),
            hidden_layers: lc.hidden_layers,
            hidden_activation: lc.hidden_activation,
            train: lc.train,
            weighted_loss: false,
            strategy: Strategy::Theory,
            initial_size: lc.initial_size,
            validation_size: lc.validation_size,
            test_size: if case == CaseKind::Region { 100 } else { 50 },
            static_size: lc.static_size,
            candidates_per_iter: lc.candidates_per_iter.unwrap_or(0),
            surrogate_degree: lc.surrogate_degree,
            charge_scoring: true,
            max_iterations: 0,
            seed: 0,
            seeds: 1,
            test_seed: 1000,
        }
    }

    pub fn mesh(&self) -> Result<Mesh> {
        Mesh::cantilever(self.nx, self.ny)
    }

    pub fn load_case(&self) -> Result<LoadCase> {
        match self.case {
            CaseKind::Tip => Ok(LoadCase::Tip),
            CaseKind::Region => {
                let mesh = self.mesh()?;
                let r = self.region.unwrap_or_else(|| Region::default_for(&mesh));
                r.validate(&mesh)?;
                Ok(LoadCase::Region(r))
            }
        }
    }

    pub fn problem(&self) -> Result<TopOptProblem> {
        TopOptProblem::new(self.mesh()?, self.material, self.density)
    }

    pub fn learning_config(&self) -> Result<LearningConfig> {
        Ok(LearningConfig {
            case: self.load_case()?,
            initial_size: self.initial_size,
            validation_size: self.validation_size,
            static_size: self.static_size,
            candidates_per_iter: (self.candidates_per_iter > 0).then_some(self.candidates_per_iter),
            hidden_layers: self.hidden_layers.clone(),
            hidden_activation: self.hidden_activation,
            train: self.train,
            weighted_loss: self.weighted_loss,
            surrogate_degree: self.surrogate_degree,
            charge_scoring: self.charge_scoring,
            kkt: self.kkt,
            al: self.al,
            max_iterations: (self.max_iterations > 0).then_some(self.max_iterations),
        })
    }

    /// Checks every value against the invariants of the module it feeds.
    pub fn validate(&self) -> Result<()> {
        let wrap = |key: &str, r: Result<()>| {
            r.map_err(|e| Error::Config { key: key.into(), message: e.to_string() })
        };
        wrap("mesh", self.mesh().map(|_| ()))?;
        wrap("material", self.material.validate())?;
        wrap("density", self.density.validate())?;
        wrap("solver", self.al.validate())?;
        wrap("training", self.train.validate())?;
        wrap("load.region", self.load_case().map(|_| ()))?;
        if self.hidden_layers.contains(&0) {
            return Err(Error::Config { key: "generator.hidden_layers".into(), message: "zero-width layer".into() });
        }
        if !(self.kkt.w0 >= 0.0 && self.kkt.w1 >= 0.0 && self.kkt.activity_tol >= 0.0) {
            return Err(Error::Config { key: "kkt".into(), message: "weights and tolerance must be nonnegative".into() });
        }
        for (key, v) in [
            ("learning.initial_size", self.initial_size),
            ("learning.validation_size", self.validation_size),
            ("learning.test_size", self.test_size),
            ("learning.static_size", self.static_size),
        ] {
            if v == 0 {
                return Err(Error::Config { key: key.into(), message: "must be positive".into() });
            }
        }
        if self.seeds == 0 {
            return Err(Error::Config { key: "experiment.seeds".into(), message: "must be positive".into() });
        }
        Ok(())
    }

    pub fn serialize(&self) -> String {
        let mut s = String::new();
        for (section, entries) in self.entries() {
            let _ = writeln!(s, "[{section}]");
            for (k, v) in entries {
                let _ = writeln!(s, "{k} = {v}");
            }
            s.push('\n');
        }
        s
    }

    fn entries(&self) -> Vec<(&'static str, Vec<(&'static str, String)>)> {
        let f = |v: f64| format!("{v:?}");
        let b = |v: bool| if v { "on" } else { "off" }.to_string();
        let a = &self.al;
        vec![
            ("mesh", vec![("nx", self.nx.to_string()), ("ny", self.ny.to_string())]),
            (
                "material",
                vec![
                    ("e0", f(self.material.e0)),
                    ("e_min", f(self.material.e_min)),
                    ("nu", f(self.material.nu)),
                    ("penal", f(self.material.penal)),
                ],
            ),
            (
                "load",
                vec![
                    ("case", match self.case { CaseKind::Tip => "tip", CaseKind::Region => "region" }.into()),
                    (
                        "region",
                        self.region.map_or_else(|| "default".into(), |r| format!("{},{},{},{}", r.i0, r.i1, r.j0, r.j1)),
                    ),
                ],
            ),
            (
                "density",
                vec![
                    ("alpha", f(self.density.alpha)),
                    ("p", f(self.density.p)),
                    ("filter_radius", f(self.density.filter_radius)),
                    ("local_radius", f(self.density.local_radius)),
                    ("beta_init", f(self.density.beta_init)),
                    ("beta_target", f(self.density.beta_target)),
                ],
            ),
            (
                "solver",
                vec![
                    ("eps_al", f(a.eps_al)),
                    ("eps_inner", f(a.eps_inner)),
                    ("eps_opt", f(a.eps_opt)),
                    ("r0", f(a.r0)),
                    ("r1", f(a.r1)),
                    ("eta0", f(a.eta0)),
                    ("eta1", f(a.eta1)),
                    ("learning_rate", f(a.learning_rate)),
                    ("step_clip", f(a.step_clip)),
                    ("max_halvings", a.max_halvings.to_string()),
                    ("max_inner_iters", a.max_inner_iters.to_string()),
                    ("max_al_loops", a.max_al_loops.to_string()),
                    ("stall_tol", f(a.stall_tol)),
                    ("normalize_objective", b(a.normalize_objective)),
                    ("restore_feasibility", b(a.restore_feasibility)),
                ],
            ),
            (
                "kkt",
                vec![
                    ("w0", f(self.kkt.w0)),
                    ("w1", f(self.kkt.w1)),
                    ("activity_tol", f(self.kkt.activity_tol)),
                    ("positive_part", b(self.kkt.positive_part)),
                ],
            ),
            (
                "generator",
                vec![
                    (
                        "hidden_layers",
                        self.hidden_layers.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
                    ),
                    ("hidden_activation", self.hidden_activation.name().into()),
                ],
            ),
            (
                "training",
                vec![
                    ("optimizer", self.train.optimizer.name().into()),
                    ("learning_rate", f(self.train.learning_rate)),
                    ("lr_decay", f(self.train.lr_decay)),
                    ("epochs", self.train.epochs.to_string()),
                    ("batch_size", self.train.batch_size.to_string()),
                    ("tolerance", f(self.train.tolerance)),
                    ("seed", self.train.seed.to_string()),
                    ("weighted_loss", b(self.weighted_loss)),
                ],
            ),
            (
                "learning",
                vec![
                    ("strategy", self.strategy.name().into()),
                    ("initial_size", self.initial_size.to_string()),
                    ("validation_size", self.validation_size.to_string()),
                    ("test_size", self.test_size.to_string()),
                    ("static_size", self.static_size.to_string()),
                    ("candidates_per_iter", self.candidates_per_iter.to_string()),
                    ("surrogate_degree", self.surrogate_degree.to_string()),
                    ("charge_scoring", b(self.charge_scoring)),
                    ("max_iterations", self.max_iterations.to_string()),
                ],
            ),
            (
                "experiment",
                vec![
                    ("seed", self.seed.to_string()),
                    ("seeds", self.seeds.to_string()),
                    ("test_seed", self.test_seed.to_string()),
                ],
            ),
        ]
    }

    pub fn parse(text: &str) -> Result<Self> {
        // the load case decides defaults, so find it first
        let mut case = CaseKind::Tip;
        let mut section = String::new();
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| Error::Config {
                    key: format!("line {}", lineno + 1),
                    message: format!("malformed section header '{line}'"),
                })?;
                section = name.trim().to_string();
                continue;
            }
            let line = match line.find([';', '#']) {
                Some(i) => line[..i].trim_end(),
                None => line,
            };
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                key: if section.is_empty() { format!("line {}", lineno + 1) } else { format!("{section} (line {})", lineno + 1) },
                message: format!("expected 'key = value', got '{line}'"),
            })?;
            let key = if section.is_empty() { k.trim().to_string() } else { format!("{section}.{}", k.trim()) };
            let value = v.trim().to_string();
            if key == "load.case" {
                case = match value.as_str() {
                    "tip" => CaseKind::Tip,
                    "region" => CaseKind::Region,
                    _ => return Err(Error::Config { key, message: format!("expected 'tip' or 'region', got '{value}'") }),
                };
            }
            pairs.push((key, value));
        }
        let mut cfg = Self::for_case(case);
        let mut seen = std::collections::HashSet::new();
        for (key, value) in pairs {
            if !seen.insert(key.clone()) {
                return Err(Error::Config { key, message: "given more than once".into() });
            }
            cfg.set(&key, &value).map_err(|message| Error::Config { key: key.clone(), message })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse '{v}'"))
        }
        fn flag(v: &str) -> std::result::Result<bool, String> {
            match v {
                "on" | "true" | "yes" | "1" => Ok(true),
                "off" | "false" | "no" | "0" => Ok(false),
                _ => Err(format!("expected on/off, got '{v}'")),
            }
        }
        match key {
            "mesh.nx" => self.nx = num(v)?,
            "mesh.ny" => self.ny = num(v)?,
            "material.e0" => self.material.e0 = num(v)?,
            "material.e_min" => self.material.e_min = num(v)?,
            "material.nu" => self.material.nu = num(v)?,
            "material.penal" => self.material.penal = num(v)?,
            "load.case" => {}
            "load.region" => {
                self.region = if v == "default" {
                    None
                } else {
                    let parts: Vec<usize> = v.split(',').map(|p| num(p.trim())).collect::<std::result::Result<_, _>>()?;
                    match parts[..] {
                        [i0, i1, j0, j1] => Some(Region { i0, i1, j0, j1 }),
                        _ => return Err("expected 'default' or 'i0,i1,j0,j1'".into()),
                    }
                }
            }
            "density.alpha" => self.density.alpha = num(v)?,
            "density.p" => self.density.p = num(v)?,
            "density.filter_radius" => self.density.filter_radius = num(v)?,
            "density.local_radius" => self.density.local_radius = num(v)?,
            "density.beta_init" => self.density.beta_init = num(v)?,
            "density.beta_target" => self.density.beta_target = num(v)?,
            "solver.eps_al" => self.al.eps_al = num(v)?,
            "solver.eps_inner" => self.al.eps_inner = num(v)?,
            "solver.eps_opt" => self.al.eps_opt = num(v)?,
            "solver.r0" => self.al.r0 = num(v)?,
            "solver.r1" => self.al.r1 = num(v)?,
            "solver.eta0" => self.al.eta0 = num(v)?,
            "solver.eta1" => self.al.eta1 = num(v)?,
            "solver.learning_rate" => self.al.learning_rate = num(v)?,
            "solver.step_clip" => self.al.step_clip = num(v)?,
            "solver.max_halvings" => self.al.max_halvings = num(v)?,
            "solver.max_inner_iters" => self.al.max_inner_iters = num(v)?,
            "solver.max_al_loops" => self.al.max_al_loops = num(v)?,
            "solver.stall_tol" => self.al.stall_tol = num(v)?,
            "solver.normalize_objective" => self.al.normalize_objective = flag(v)?,
            "solver.restore_feasibility" => self.al.restore_feasibility = flag(v)?,
            "kkt.w0" => self.kkt.w0 = num(v)?,
            "kkt.w1" => self.kkt.w1 = num(v)?,
            "kkt.activity_tol" => self.kkt.activity_tol = num(v)?,
            "kkt.positive_part" => self.kkt.positive_part = flag(v)?,
            "generator.hidden_layers" => {
                self.hidden_layers = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|p| num(p.trim())).collect::<std::result::Result<_, _>>()?
                }
            }
            "generator.hidden_activation" => {
                self.hidden_activation = Activation::parse(v).ok_or_else(|| format!("unknown activation '{v}'"))?
            }
            "training.optimizer" => self.train.optimizer = Optimizer::parse(v).ok_or_else(|| format!("unknown optimizer '{v}'"))?,
            "training.learning_rate" => self.train.learning_rate = num(v)?,
            "training.lr_decay" => self.train.lr_decay = num(v)?,
            "training.epochs" => self.train.epochs = num(v)?,
            "training.batch_size" => self.train.batch_size = num(v)?,
            "training.tolerance" => self.train.tolerance = num(v)?,
            "training.seed" => self.train.seed = num(v)?,
            "training.weighted_loss" => self.weighted_loss = flag(v)?,
            "learning.strategy" => self.strategy = Strategy::parse(v).ok_or_else(|| format!("unknown strategy '{v}'"))?,
            "learning.initial_size" => self.initial_size = num(v)?,
            "learning.validation_size" => self.validation_size = num(v)?,
            "learning.test_size" => self.test_size = num(v)?,
            "learning.static_size" => self.static_size = num(v)?,
            "learning.candidates_per_iter" => self.candidates_per_iter = num(v)?,
            "learning.surrogate_degree" => self.surrogate_degree = num(v)?,
            "learning.charge_scoring" => self.charge_scoring = flag(v)?,
            "learning.max_iterations" => self.max_iterations = num(v)?,
            "experiment.seed" => self.seed = num(v)?,
            "experiment.seeds" => self.seeds = num(v)?,
            "experiment.test_seed" => self.test_seed = num(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.serialize())?;
        Ok(())
    }

    /// Hex SHA-256 of the serialized configuration.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.serialize().as_bytes()))
    }

    /// Hash of the sections that determine reference designs (mesh,
    /// material, load, density, solver and test-set size and seed).
    pub fn ground_truth_key(&self) -> String {
        let mut s = String::new();
        for (section, entries) in self.entries() {
            if matches!(section, "mesh" | "material" | "load" | "density" | "solver") {
                for (k, v) in entries {
                    let _ = writeln!(s, "{section}.{k}={v}");
                }
            }
        }
        let _ = writeln!(s, "test_size={}\ntest_seed={}", self.test_size, self.test_seed);
        hex::encode(Sha256::digest(s.as_bytes()))
    }
}
