//! Run configuration: a TOML document with sections `[mesh]`, `[materials]`,
//! `[doping]`, `[boundary]`, `[recombination]`, `[time]`, `[output]` and
//! `[sneiberg]`. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extrapolation::GeneralOperatorSpec;
use crate::fields::{make_piecewise_coefficient, CoefficientField, DopingProfile, RobinData, SymTensor};
use crate::mesh::{build_tensor_mesh, classify_boundary, Mesh, Region};
use crate::recombination::RecombinationParams;
use crate::stepper::{Problem, SimState, StepControl, SteadyControl};
use crate::transport::CarrierBoundary;

#[derive(Debug, thiserror::Error)]
#[error("[{section}] {key}: {message}{}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
pub struct ParseError {
    pub section: String,
    pub key: String,
    pub line: Option<usize>,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: MeshConfig,
    #[serde(default)]
    pub materials: MaterialsConfig,
    #[serde(default)]
    pub doping: DopingConfig,
    pub boundary: BoundaryConfig,
    #[serde(default)]
    pub recombination: RecombinationParams,
    pub time: TimeConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub sneiberg: SneibergConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub dimension: usize,
    pub extents: Vec<[f64; 2]>,
    pub counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl RegionConfig {
    fn region(&self) -> Region {
        Region::new(&self.lower, &self.upper)
    }
}

/// A scalar or a symmetric 2×2 matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficient {
    Scalar(f64),
    Tensor([[f64; 2]; 2]),
}

impl Coefficient {
    fn tensor(self) -> Result<SymTensor> {
        match self {
            Coefficient::Scalar(v) => Ok(SymTensor::scalar(v)),
            Coefficient::Tensor(m) => SymTensor::from_matrix(m),
        }
    }
}

impl Default for Coefficient {
    fn default() -> Self {
        Coefficient::Scalar(1.0)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialsConfig {
    pub permittivity: Coefficient,
    pub mobility_electron: Coefficient,
    pub mobility_hole: Coefficient,
    pub region: Vec<MaterialRegion>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialRegion {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permittivity: Option<Coefficient>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mobility_electron: Option<Coefficient>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mobility_hole: Option<Coefficient>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DopingConfig {
    pub bulk: f64,
    pub region: Vec<ValueRegion>,
    /// Sheet densities on interface faces.
    pub surface: Vec<ValueRegion>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueRegion {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    pub dirichlet: Vec<RegionConfig>,
    #[serde(default)]
    pub interfaces: Vec<RegionConfig>,
    #[serde(default)]
    pub eps_gamma: f64,
    #[serde(default)]
    pub phi_gamma: f64,
    #[serde(default)]
    pub robin: Vec<RobinRegion>,
    /// Whether carriers also see the Dirichlet faces as zero-density contacts.
    #[serde(default = "yes")]
    pub carrier_dirichlet: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobinRegion {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub eps_gamma: f64,
    pub phi_gamma: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialMode {
    #[default]
    Equilibrium,
    Uniform,
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub t_end: f64,
    #[serde(default)]
    pub initial: InitialMode,
    #[serde(default = "one")]
    pub initial_u1: f64,
    #[serde(default = "one")]
    pub initial_u2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_file: Option<PathBuf>,
    #[serde(default)]
    pub control: StepControl,
    #[serde(default)]
    pub steady: SteadyControl,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    /// Write a snapshot every this many accepted steps (the last one always).
    pub every: usize,
    pub vtk: bool,
    pub prefix: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: PathBuf::from("output"),
            every: 1,
            vtk: false,
            prefix: "snapshot".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SneibergConfig {
    pub tau: f64,
    pub grid_points: usize,
    /// Cell-count multipliers applied to `[mesh] counts`.
    pub refine: Vec<usize>,
    pub rho: Coefficient,
    pub rho_region: Vec<CoefficientRegion>,
    pub beta_div: [f64; 2],
    pub beta_grad: [f64; 2],
    pub eta: f64,
    pub lambda: f64,
    /// Applied on every Robin face.
    pub varrho: f64,
}

impl Default for SneibergConfig {
    fn default() -> Self {
        SneibergConfig {
            tau: 0.25,
            grid_points: 41,
            refine: vec![1],
            rho: Coefficient::default(),
            rho_region: Vec::new(),
            beta_div: [0.0; 2],
            beta_grad: [0.0; 2],
            eta: 0.0,
            lambda: 0.0,
            varrho: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientRegion {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub value: Coefficient,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parse and check a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let parse_error = |mut segments: Vec<String>, err: &toml::de::Error| -> ParseError {
        let message = err.message().trim().to_string();
        // serde reports missing fields against the parent path.
        if let Some(missing) = message
            .strip_prefix("missing field `")
            .and_then(|m| m.split('`').next())
        {
            segments.push(missing.to_string());
        }
        let section = segments.first().cloned().unwrap_or_else(|| "document".into());
        let key = if segments.len() > 1 {
            segments[1..].join(".")
        } else {
            section.clone()
        };
        ParseError {
            section,
            key,
            line: err.span().map(|s| line_of(text, s.start)),
            message,
        }
    };
    let de = toml::Deserializer::parse(text)
        .map_err(|e| parse_error(Vec::new(), &e))?;
    let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let segments = e
            .path()
            .iter()
            .map(|s| s.to_string())
            .filter(|s| s != "?")
            .collect();
        parse_error(segments, e.inner())
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

fn semantic(section: &str, key: &str, message: impl Into<String>) -> Error {
    Error::Parse(ParseError {
        section: section.into(),
        key: key.into(),
        line: None,
        message: message.into(),
    })
}

impl RunConfig {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::internal("config", format!("serialize: {e}")))
    }

    fn validate(&self) -> Result<()> {
        let m = &self.mesh;
        if !(m.dimension == 1 || m.dimension == 2) {
            return Err(semantic("mesh", "dimension", format!("must be 1 or 2, got {}", m.dimension)));
        }
        if m.extents.len() != m.dimension || m.counts.len() != m.dimension {
            return Err(semantic("mesh", "extents", "extents and counts need one entry per dimension"));
        }
        if self.boundary.dirichlet.is_empty() {
            return Err(semantic("boundary", "dirichlet", "at least one Dirichlet region is required"));
        }
        if !(self.time.t_end >= 0.0 && self.time.t_end.is_finite()) {
            return Err(semantic("time", "t_end", "must be finite and non-negative"));
        }
        if self.time.initial == InitialMode::File && self.time.initial_file.is_none() {
            return Err(semantic("time", "initial_file", "required when initial = \"file\""));
        }
        if self.time.initial == InitialMode::Uniform && !(self.time.initial_u1 >= 0.0 && self.time.initial_u2 >= 0.0) {
            return Err(semantic("time", "initial_u1", "uniform initial densities must be non-negative"));
        }
        if self.output.every == 0 {
            return Err(semantic("output", "every", "must be at least 1"));
        }
        if self.sneiberg.grid_points == 0 || self.sneiberg.refine.contains(&0) {
            return Err(semantic("sneiberg", "grid_points", "grid size and refinement factors must be positive"));
        }
        self.recombination.validate()?;
        self.time.control.validate()?;
        Ok(())
    }

    /// Mesh with the cell counts multiplied by `refine`.
    pub fn build_mesh(&self, refine: usize) -> Result<Mesh> {
        let extents: Vec<(f64, f64)> = self.mesh.extents.iter().map(|e| (e[0], e[1])).collect();
        let counts: Vec<usize> = self.mesh.counts.iter().map(|c| c * refine).collect();
        let mesh = build_tensor_mesh(self.mesh.dimension, &extents, &counts)?;
        let dirichlet: Vec<Region> = self.boundary.dirichlet.iter().map(RegionConfig::region).collect();
        let interfaces: Vec<Region> = self.boundary.interfaces.iter().map(RegionConfig::region).collect();
        for (i, r) in interfaces.iter().enumerate() {
            r.check_dimension(mesh.dimension)?;
            if mesh.faces_in(r).iter().all(|&f| !mesh.faces[f].is_internal()) {
                return Err(semantic("boundary", &format!("interfaces[{i}]"), "region contains no internal face"));
            }
        }
        classify_boundary(&mesh, &dirichlet, &interfaces)
    }

    fn coefficient(
        &self,
        mesh: &Mesh,
        base: Coefficient,
        pick: impl Fn(&MaterialRegion) -> Option<Coefficient>,
    ) -> Result<CoefficientField> {
        let mut pieces = vec![(Region::all(mesh.dimension), base.tensor()?)];
        for (i, r) in self.materials.region.iter().enumerate() {
            if let Some(c) = pick(r) {
                let region = Region::new(&r.lower, &r.upper);
                region.check_dimension(mesh.dimension)?;
                if mesh.cells_in(&region).is_empty() {
                    return Err(semantic("materials", &format!("region[{i}]"), "region contains no cell centre"));
                }
                pieces.push((region, c.tensor()?));
            }
        }
        make_piecewise_coefficient(mesh, &pieces)
    }

    pub fn build_problem(&self) -> Result<Problem> {
        let mesh = self.build_mesh(1)?;
        let m = &self.materials;
        let permittivity = self.coefficient(&mesh, m.permittivity, |r| r.permittivity)?;
        let mobility = [
            self.coefficient(&mesh, m.mobility_electron, |r| r.mobility_electron)?,
            self.coefficient(&mesh, m.mobility_hole, |r| r.mobility_hole)?,
        ];
        let b = &self.boundary;
        let robin_overrides: Vec<(Region, f64, f64)> = b
            .robin
            .iter()
            .map(|r| (Region::new(&r.lower, &r.upper), r.eps_gamma, r.phi_gamma))
            .collect();
        let robin = RobinData::from_regions(&mesh, b.eps_gamma, b.phi_gamma, &robin_overrides)?;
        let mut bulk = vec![(Region::all(mesh.dimension), self.doping.bulk)];
        for (i, r) in self.doping.region.iter().enumerate() {
            let region = Region::new(&r.lower, &r.upper);
            region.check_dimension(mesh.dimension)?;
            if mesh.cells_in(&region).is_empty() {
                return Err(semantic("doping", &format!("region[{i}]"), "region contains no cell centre"));
            }
            bulk.push((region, r.value));
        }
        let surface: Vec<(Region, f64)> = self
            .doping
            .surface
            .iter()
            .map(|r| (Region::new(&r.lower, &r.upper), r.value))
            .collect();
        let doping = DopingProfile::from_regions(&mesh, &bulk, &surface)?;
        Problem::new(
            mesh,
            permittivity,
            mobility,
            robin,
            doping,
            CarrierBoundary {
                dirichlet_contacts: b.carrier_dirichlet,
            },
            self.recombination.clone(),
        )
    }

    /// Initial state per `[time] initial`; relative file paths resolve against `base`.
    pub fn initial_state(&self, problem: &Problem, base: &Path) -> Result<SimState> {
        let n = problem.num_cells();
        match self.time.initial {
            InitialMode::Equilibrium => problem.equilibrium_state(),
            InitialMode::Uniform => problem.state_from(0.0, vec![self.time.initial_u1; n], vec![self.time.initial_u2; n]),
            InitialMode::File => {
                let rel = self.time.initial_file.as_ref().expect("checked in validate");
                let path = base.join(rel);
                let rows = crate::output::read_snapshot_csv(&path)?;
                if rows.len() != n {
                    return Err(semantic(
                        "time",
                        "initial_file",
                        format!("{} has {} rows, mesh has {n} cells", path.display(), rows.len()),
                    ));
                }
                let u1 = rows.iter().map(|r| r.u1).collect();
                let u2 = rows.iter().map(|r| r.u2).collect();
                problem.state_from(0.0, u1, u2)
            }
        }
    }

    /// `(mesh, operator)` for every refinement factor in `[sneiberg] refine`.
    pub fn sneiberg_operators(&self) -> Result<Vec<(Mesh, crate::linalg::SparseMatrix)>> {
        let s = &self.sneiberg;
        s.refine
            .iter()
            .map(|&r| {
                let mesh = self.build_mesh(r)?;
                let mut pieces = vec![(Region::all(mesh.dimension), s.rho.tensor()?)];
                for c in &s.rho_region {
                    pieces.push((Region::new(&c.lower, &c.upper), c.value.tensor()?));
                }
                let rho = make_piecewise_coefficient(&mesh, &pieces)?;
                let n = mesh.num_cells();
                let mut varrho = vec![0.0; mesh.faces.len()];
                for f in mesh.robin_faces() {
                    varrho[f] = s.varrho;
                }
                let spec = GeneralOperatorSpec {
                    rho,
                    beta_div: vec![s.beta_div; n],
                    beta_grad: vec![s.beta_grad; n],
                    eta: vec![s.eta; n],
                    varrho,
                    lambda: s.lambda,
                };
                let a = crate::extrapolation::assemble_general_operator(&mesh, &spec)?;
                Ok((mesh, a))
            })
            .collect()
    }
}

/// Bundled example configurations.
pub mod bundled {
    /// 1D p-n diode, doping ±1 split at x = 0.5.
    pub const DIODE: &str = include_str!("../configs/diode.toml");
    /// Discontinuous coefficient operator for the extrapolation harness.
    pub const SNEIBERG_GOLDEN: &str = include_str!("../configs/sneiberg_golden.toml");
    /// Uniform densities growing like `u' = u²`.
    pub const BLOWUP: &str = include_str!("../configs/blowup.toml");
}
