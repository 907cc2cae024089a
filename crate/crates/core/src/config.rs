//! Run configuration: a flat sectioned TOML file that is fully validated
//! before any model allocation, then lowered into the concrete option
//! structs of the analysis and optimization modules.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Deserialize;

use crate::design::{DesignField, DensityFilter, ElementClass, FilterBoundary};
use crate::diagnostics::LocalityOptions;
use crate::fem::Material;
use crate::geometry::{GeometryError, Model};
use crate::grid::Dims;
use crate::lba::LbaOptions;
use crate::optimizer::{Continuation, ProblemKind, ProblemSpec};
use crate::sensitivity::GradientOptions;
use crate::solver::{PcgOptions, SmootherOptions};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunSection,
    pub geometry: GeometrySection,
    pub discretization: DiscretizationSection,
    #[serde(default)]
    pub material: MaterialSection,
    pub regularization: RegularizationSection,
    pub problem: ProblemSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    TwoBarFrame,
    ClampedColumn,
    CompressedCantilever,
    Rectangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Edge {
    Left,
    Right,
    Top,
    Bottom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SupportDofs {
    #[default]
    Both,
    X,
    Y,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupportSpec {
    pub edge: Edge,
    #[serde(default)]
    pub dofs: SupportDofs,
    /// Fractional span along the edge; full edge when omitted.
    pub range: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSpec {
    pub edge: Edge,
    /// Total force vector distributed over the span.
    pub total: [f64; 2],
    pub range: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassiveState {
    Solid,
    Void,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PassiveSpec {
    /// Fractional rectangle [x0, x1, y0, y1] of the domain; elements whose
    /// centers fall inside are pinned.
    pub rect: [f64; 4],
    pub state: PassiveState,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub kind: GeometryKind,
    /// Total compressive load for the column and cantilever presets.
    pub load: Option<f64>,
    /// Physical domain size for the generic rectangle.
    pub width: Option<f64>,
    pub height: Option<f64>,
    #[serde(default)]
    pub supports: Vec<SupportSpec>,
    #[serde(default)]
    pub loads: Vec<LoadSpec>,
    #[serde(default)]
    pub passive: Vec<PassiveSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationSection {
    pub nelx: usize,
    pub nely: usize,
    /// Number of grid levels ℓ; 1 means direct fine-level eigensolves.
    pub levels: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialSection {
    pub e_void: f64,
    pub e_solid: f64,
    pub e_passive: f64,
    pub nu: f64,
}

impl Default for MaterialSection {
    fn default() -> Self {
        let m = Material::default();
        Self {
            e_void: m.e_void,
            e_solid: m.e_solid,
            e_passive: m.e_passive,
            nu: m.nu,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizationSection {
    /// Filter radius in element lengths.
    pub radius: f64,
    #[serde(default = "default_boundary")]
    pub boundary: BoundaryRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryRule {
    Renormalize,
    ZeroPad,
}

fn default_boundary() -> BoundaryRule {
    BoundaryRule::Renormalize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKindKey {
    P1,
    P2,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuationSection {
    pub p0: Option<f64>,
    pub p_max: Option<f64>,
    pub dp: Option<f64>,
    pub p_every: Option<usize>,
    pub beta0: Option<f64>,
    pub beta_max: Option<f64>,
    pub beta_every: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: ProblemKindKey,
    /// Volume-fraction bound f̄.
    pub vol_bound: f64,
    /// BLF lower bound λ̄; zero disables the buckling constraints.
    pub blf_bound: f64,
    pub compliance_factor: Option<f64>,
    pub n_constrained: Option<usize>,
    pub n_modes: Option<usize>,
    pub alpha: Option<f64>,
    pub max_iters: Option<usize>,
    pub stagnation_tol: Option<f64>,
    pub stagnation_steps: Option<usize>,
    pub move_limit: Option<f64>,
    /// Penalization exponent for single analyses (analyze / reinforce).
    pub penal: Option<f64>,
    #[serde(default)]
    pub continuation: ContinuationSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub coarse_tol: Option<f64>,
    pub smoothing_sweeps: Option<usize>,
    pub shift_margin: Option<f64>,
    pub final_ritz: Option<bool>,
    pub pcg_tol: Option<f64>,
    pub pcg_max_iter: Option<usize>,
    pub pcg_delay: Option<usize>,
    pub pcg_safety: Option<f64>,
    pub smoother_omega: Option<f64>,
    pub smoother_pre: Option<usize>,
    pub smoother_post: Option<usize>,
    pub consistent_gradients: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    pub x_bar: Option<f64>,
    pub flag_multiple: Option<f64>,
    pub neighborhood_frac: Option<f64>,
    /// Dilation radius for reinforcement, in element lengths.
    pub reinforce_radius: Option<f64>,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Pure checks, no allocation: every derived builder below is
    /// guaranteed to succeed once this passes.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = &self.discretization;
        if d.nelx == 0 || d.nely == 0 {
            return Err(invalid("discretization dims must be positive"));
        }
        if d.levels == 0 {
            return Err(invalid("discretization.levels must be at least 1"));
        }
        let steps = 1usize << (d.levels - 1);
        if d.nelx % steps != 0 || d.nely % steps != 0 {
            return Err(invalid(format!(
                "{}x{} cannot support {} levels (dims must be divisible by {})",
                d.nelx, d.nely, d.levels, steps
            )));
        }

        self.validate_geometry()?;

        let m = &self.material;
        if !(m.e_void > 0.0 && m.e_solid > m.e_void && m.e_passive >= m.e_solid) {
            return Err(invalid(
                "material moduli must satisfy 0 < e_void < e_solid <= e_passive",
            ));
        }
        if !(m.nu > 0.0 && m.nu < 0.5) {
            return Err(invalid("material.nu must lie in (0, 0.5)"));
        }

        if !(self.regularization.radius > 0.0) {
            return Err(invalid("regularization.radius must be positive"));
        }

        self.problem_spec()
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        let p = &self.problem;
        if let Some(pen) = p.penal {
            if !(pen >= 1.0) {
                return Err(invalid("problem.penal must be at least 1"));
            }
        }

        let s = &self.solver;
        for (name, v) in [
            ("solver.coarse_tol", s.coarse_tol),
            ("solver.pcg_tol", s.pcg_tol),
            ("solver.pcg_safety", s.pcg_safety),
            ("solver.smoother_omega", s.smoother_omega),
        ] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(invalid(format!("{name} must be positive")));
                }
            }
        }
        if let Some(m) = s.shift_margin {
            if !(0.0..1.0).contains(&m) {
                return Err(invalid("solver.shift_margin must lie in [0, 1)"));
            }
        }

        let dg = &self.diagnostics;
        if let Some(x) = dg.x_bar {
            if !(0.0..=1.0).contains(&x) {
                return Err(invalid("diagnostics.x_bar must lie in [0, 1]"));
            }
        }
        for (name, v) in [
            ("diagnostics.flag_multiple", dg.flag_multiple),
            ("diagnostics.neighborhood_frac", dg.neighborhood_frac),
            ("diagnostics.reinforce_radius", dg.reinforce_radius),
        ] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(invalid(format!("{name} must be positive")));
                }
            }
        }
        Ok(())
    }

    fn validate_geometry(&self) -> Result<(), ConfigError> {
        let g = &self.geometry;
        let d = &self.discretization;
        let preset_only = |field: bool, name: &str| {
            if field {
                Err(invalid(format!(
                    "geometry.{name} is only valid with kind = \"rectangle\""
                )))
            } else {
                Ok(())
            }
        };
        match g.kind {
            GeometryKind::Rectangle => {
                let (w, h) = match (g.width, g.height) {
                    (Some(w), Some(h)) if w > 0.0 && h > 0.0 => (w, h),
                    _ => {
                        return Err(invalid(
                            "rectangle geometry needs positive width and height",
                        ))
                    }
                };
                // square elements only
                let hx = w / d.nelx as f64;
                let hy = h / d.nely as f64;
                if ((hx - hy) / hx).abs() > 1e-9 {
                    return Err(invalid(format!(
                        "element aspect must be square: width/nelx = {hx}, height/nely = {hy}"
                    )));
                }
                if g.load.is_some() {
                    return Err(invalid(
                        "geometry.load is only valid for the column and cantilever presets",
                    ));
                }
                if g.supports.is_empty() {
                    return Err(invalid("rectangle geometry needs at least one support"));
                }
                if g.loads.is_empty() {
                    return Err(invalid("rectangle geometry needs at least one load"));
                }
                for spec in &g.supports {
                    check_range(spec.range, "supports")?;
                }
                for spec in &g.loads {
                    check_range(spec.range, "loads")?;
                    if spec.total == [0.0, 0.0] {
                        return Err(invalid("a load entry must have a nonzero total"));
                    }
                }
                for spec in &g.passive {
                    let [x0, x1, y0, y1] = spec.rect;
                    let ok = (0.0..=1.0).contains(&x0)
                        && (0.0..=1.0).contains(&x1)
                        && (0.0..=1.0).contains(&y0)
                        && (0.0..=1.0).contains(&y1)
                        && x0 < x1
                        && y0 < y1;
                    if !ok {
                        return Err(invalid(
                            "passive.rect must be fractions [x0, x1, y0, y1] with x0 < x1, y0 < y1",
                        ));
                    }
                }
            }
            kind => {
                preset_only(g.width.is_some(), "width")?;
                preset_only(g.height.is_some(), "height")?;
                preset_only(!g.supports.is_empty(), "supports")?;
                preset_only(!g.loads.is_empty(), "loads")?;
                preset_only(!g.passive.is_empty(), "passive")?;
                match kind {
                    GeometryKind::TwoBarFrame => {
                        if g.load.is_some() {
                            return Err(invalid(
                                "the two-bar frame preset has a built-in load",
                            ));
                        }
                        if d.nelx * 3 != d.nely * 7 {
                            return Err(invalid(format!(
                                "two_bar_frame needs a 7:3 grid, got {}x{}",
                                d.nelx, d.nely
                            )));
                        }
                    }
                    GeometryKind::ClampedColumn => {
                        require_load(g)?;
                        if d.nelx * 10 != d.nely {
                            return Err(invalid(format!(
                                "clamped_column needs a 1:10 grid, got {}x{}",
                                d.nelx, d.nely
                            )));
                        }
                    }
                    GeometryKind::CompressedCantilever => {
                        require_load(g)?;
                        if d.nelx != 2 * d.nely {
                            return Err(invalid(format!(
                                "compressed_cantilever needs a 2:1 grid, got {}x{}",
                                d.nelx, d.nely
                            )));
                        }
                    }
                    GeometryKind::Rectangle => unreachable!(),
                }
            }
        }
        Ok(())
    }

    pub fn model(&self) -> Result<Model, ConfigError> {
        let g = &self.geometry;
        let d = &self.discretization;
        let model = match g.kind {
            GeometryKind::TwoBarFrame => Model::two_bar_frame(d.nelx, d.nely)?,
            GeometryKind::ClampedColumn => {
                Model::clamped_column(d.nelx, d.nely, g.load.unwrap_or(1.0))?
            }
            GeometryKind::CompressedCantilever => {
                Model::compressed_cantilever(d.nelx, d.nely, g.load.unwrap_or(1.0))?
            }
            GeometryKind::Rectangle => self.build_rectangle()?,
        };
        Ok(model)
    }

    fn build_rectangle(&self) -> Result<Model, ConfigError> {
        let g = &self.geometry;
        let d = &self.discretization;
        let dims = Dims::new(d.nelx, d.nely);
        let width = g.width.expect("validated");
        let h = width / d.nelx as f64;

        let mut fixed = vec![false; dims.n_dofs()];
        for spec in &g.supports {
            for node in edge_nodes(dims, spec.edge, spec.range) {
                match spec.dofs {
                    SupportDofs::Both => {
                        fixed[2 * node] = true;
                        fixed[2 * node + 1] = true;
                    }
                    SupportDofs::X => fixed[2 * node] = true,
                    SupportDofs::Y => fixed[2 * node + 1] = true,
                }
            }
        }
        if !fixed.iter().any(|&f| f) {
            return Err(invalid("supports constrain no degrees of freedom"));
        }

        let mut force = DVector::zeros(dims.n_dofs());
        for spec in &g.loads {
            let nodes = edge_nodes(dims, spec.edge, spec.range);
            let segs = (nodes.len() - 1).max(1) as f64;
            for (i, &node) in nodes.iter().enumerate() {
                let w = if nodes.len() == 1 {
                    1.0
                } else if i == 0 || i == nodes.len() - 1 {
                    0.5 / segs
                } else {
                    1.0 / segs
                };
                force[2 * node] += spec.total[0] * w;
                force[2 * node + 1] += spec.total[1] * w;
            }
        }

        let mut class = vec![ElementClass::Design; dims.n_elems()];
        for spec in &g.passive {
            let [x0, x1, y0, y1] = spec.rect;
            let state = match spec.state {
                PassiveState::Solid => ElementClass::PassiveSolid,
                PassiveState::Void => ElementClass::PassiveVoid,
            };
            for ex in 0..dims.nelx {
                for ey in 0..dims.nely {
                    let cx = (ex as f64 + 0.5) / dims.nelx as f64;
                    let cy = (ey as f64 + 0.5) / dims.nely as f64;
                    if cx >= x0 && cx <= x1 && cy >= y0 && cy <= y1 {
                        class[dims.elem(ex, ey)] = state;
                    }
                }
            }
        }

        Ok(Model {
            name: format!("rectangle_{}x{}", d.nelx, d.nely),
            dims,
            h,
            fixed,
            force,
            class,
        })
    }

    pub fn material(&self) -> Material {
        let m = &self.material;
        Material {
            e_void: m.e_void,
            e_solid: m.e_solid,
            e_passive: m.e_passive,
            nu: m.nu,
        }
    }

    pub fn design_field(&self, model: &Model) -> DesignField {
        let boundary = match self.regularization.boundary {
            BoundaryRule::Renormalize => FilterBoundary::Renormalize,
            BoundaryRule::ZeroPad => FilterBoundary::ZeroPad,
        };
        let filter = DensityFilter::new(model.dims, self.regularization.radius, boundary);
        DesignField::new(model.dims, model.class.clone(), filter, 0.5)
    }

    pub fn lba_options(&self) -> LbaOptions {
        let mut o = LbaOptions::new(
            self.discretization.levels,
            self.problem_spec().n_modes,
        );
        let s = &self.solver;
        if let Some(v) = s.coarse_tol {
            o.coarse_tol = v;
        }
        if let Some(v) = s.smoothing_sweeps {
            o.smoothing_sweeps = v;
        }
        if let Some(v) = s.shift_margin {
            o.shift_margin = v;
        }
        if let Some(v) = s.final_ritz {
            o.final_ritz = v;
        }
        o.pcg = self.pcg_options();
        let mut sm = SmootherOptions::default();
        if let Some(v) = s.smoother_omega {
            sm.omega = v;
        }
        if let Some(v) = s.smoother_pre {
            sm.pre_sweeps = v;
        }
        if let Some(v) = s.smoother_post {
            sm.post_sweeps = v;
        }
        o.smoother = sm;
        o.seed = self.run.seed;
        o
    }

    fn pcg_options(&self) -> PcgOptions {
        let s = &self.solver;
        let mut p = PcgOptions::default();
        if let Some(v) = s.pcg_tol {
            p.tol = v;
        }
        if let Some(v) = s.pcg_max_iter {
            p.max_iter = v;
        }
        if let Some(v) = s.pcg_delay {
            p.delay = v;
        }
        if let Some(v) = s.pcg_safety {
            p.safety = v;
        }
        p
    }

    pub fn gradient_options(&self) -> GradientOptions {
        let mut g = GradientOptions::default();
        g.consistent = self.solver.consistent_gradients.unwrap_or(false);
        g.pcg = self.pcg_options();
        g
    }

    pub fn problem_spec(&self) -> ProblemSpec {
        let p = &self.problem;
        let kind = match p.kind {
            ProblemKindKey::P1 => ProblemKind::P1,
            ProblemKindKey::P2 => ProblemKind::P2,
        };
        let mut spec = ProblemSpec::new(kind, p.vol_bound, p.blf_bound);
        if let Some(v) = p.compliance_factor {
            spec.compliance_factor = v;
        }
        if let Some(v) = p.n_constrained {
            spec.n_constrained = v;
        }
        if let Some(v) = p.n_modes {
            spec.n_modes = v;
        }
        if let Some(v) = p.alpha {
            spec.alpha = v;
        }
        if let Some(v) = p.max_iters {
            spec.max_iters = v;
        }
        if let Some(v) = p.stagnation_tol {
            spec.stagnation_tol = v;
        }
        if let Some(v) = p.stagnation_steps {
            spec.stagnation_steps = v;
        }
        if let Some(v) = p.move_limit {
            spec.move_limit = v;
        }
        let c = &p.continuation;
        let p0 = c.p0.unwrap_or(match kind {
            ProblemKind::P1 => 1.0,
            ProblemKind::P2 => 3.0,
        });
        let mut cont = Continuation::standard(p0);
        if let Some(v) = c.p_max {
            cont.p_max = v;
        }
        if let Some(v) = c.dp {
            cont.dp = v;
        }
        if let Some(v) = c.p_every {
            cont.p_every = v;
        }
        if let Some(v) = c.beta0 {
            cont.beta0 = v;
        }
        if let Some(v) = c.beta_max {
            cont.beta_max = v;
        }
        if let Some(v) = c.beta_every {
            cont.beta_every = v;
        }
        spec.continuation = cont;
        spec
    }

    /// Penalization exponent for one-shot analyses.
    pub fn penal(&self) -> f64 {
        self.problem.penal.unwrap_or(3.0)
    }

    pub fn locality_options(&self, black_white: bool) -> LocalityOptions {
        let d = &self.diagnostics;
        let mut o = LocalityOptions::default();
        o.x_bar = d.x_bar.unwrap_or(if black_white { 1.0 } else { 0.9 });
        if let Some(v) = d.flag_multiple {
            o.flag_multiple = v;
        }
        if let Some(v) = d.neighborhood_frac {
            o.neighborhood_frac = v;
        }
        o
    }

    pub fn reinforce_radius(&self) -> f64 {
        self.diagnostics.reinforce_radius.unwrap_or(2.5)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.run
            .out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

fn require_load(g: &GeometrySection) -> Result<(), ConfigError> {
    match g.load {
        Some(l) if l > 0.0 => Ok(()),
        Some(_) => Err(invalid("geometry.load must be positive")),
        None => Err(invalid("this preset needs geometry.load")),
    }
}

fn check_range(range: Option<[f64; 2]>, section: &str) -> Result<(), ConfigError> {
    if let Some([a, b]) = range {
        let ok = (0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b) && a <= b;
        if !ok {
            return Err(invalid(format!(
                "geometry.{section} range must satisfy 0 <= a <= b <= 1"
            )));
        }
    }
    Ok(())
}

/// Nodes along a fractional span of a boundary edge.
fn edge_nodes(dims: Dims, edge: Edge, range: Option<[f64; 2]>) -> Vec<usize> {
    let [a, b] = range.unwrap_or([0.0, 1.0]);
    let count = match edge {
        Edge::Left | Edge::Right => dims.nely,
        Edge::Top | Edge::Bottom => dims.nelx,
    };
    let i0 = (a * count as f64).round() as usize;
    let i1 = ((b * count as f64).round() as usize).min(count);
    (i0..=i1.max(i0))
        .map(|i| match edge {
            Edge::Left => dims.node(0, i),
            Edge::Right => dims.node(dims.nelx, i),
            Edge::Bottom => dims.node(i, 0),
            Edge::Top => dims.node(i, dims.nely),
        })
        .collect()
}
