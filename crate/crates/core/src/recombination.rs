//! Bulk, boundary and interface recombination.
//!
//! Rates here are recombination-positive: a positive value destroys one
//! electron and one hole. The same net bulk rate enters both continuity
//! equations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{FaceCells, Mesh};
use crate::transport::interface_jump_source;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceModel {
    /// `v_s (u1 u2 − n_i²) / (u1 + u2 + 2 n_i)`.
    #[default]
    Srh,
    /// `v_s (u1 u2 − n_i²) / (2 n_i)`, the surface-SRH rate linearised at equilibrium.
    Linear,
}

impl SurfaceModel {
    pub fn rate(self, u1: f64, u2: f64, intrinsic_density: f64, velocity: f64) -> f64 {
        let (u1, u2) = (u1.max(0.0), u2.max(0.0));
        let excess = u1 * u2 - intrinsic_density * intrinsic_density;
        match self {
            SurfaceModel::Srh => velocity * excess / (u1 + u2 + 2.0 * intrinsic_density),
            SurfaceModel::Linear => velocity * excess / (2.0 * intrinsic_density),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SurfaceLocation {
    /// Outer Robin boundary.
    Boundary,
    /// Internal interface faces.
    Interface,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecombinationParams {
    pub intrinsic_density: f64,
    pub n1: f64,
    pub n2: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub auger_c1: f64,
    pub auger_c2: f64,
    pub avalanche_a1: f64,
    pub avalanche_a2: f64,
    pub avalanche_c1: f64,
    pub avalanche_c2: f64,
    pub surface_velocity_boundary: f64,
    pub surface_velocity_interface: f64,
    pub surface_model: SurfaceModel,
    /// Carrier-independent generation `c·u1·u2`; only used to provoke blow-up.
    pub quadratic_generation: f64,
    pub srh: bool,
    pub auger: bool,
    pub avalanche: bool,
    pub surface_boundary: bool,
    pub surface_interface: bool,
}

impl Default for RecombinationParams {
    fn default() -> Self {
        RecombinationParams {
            intrinsic_density: 1.0,
            n1: 1.0,
            n2: 1.0,
            tau1: 1.0,
            tau2: 1.0,
            auger_c1: 0.0,
            auger_c2: 0.0,
            // Placeholders; no material table is bundled.
            avalanche_a1: 1.0,
            avalanche_a2: 1.0,
            avalanche_c1: 1.0,
            avalanche_c2: 1.0,
            surface_velocity_boundary: 0.0,
            surface_velocity_interface: 0.0,
            surface_model: SurfaceModel::Srh,
            quadratic_generation: 0.0,
            srh: true,
            auger: false,
            avalanche: false,
            surface_boundary: false,
            surface_interface: false,
        }
    }
}

impl RecombinationParams {
    /// Every mechanism switched off.
    pub fn none() -> Self {
        RecombinationParams {
            srh: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("intrinsic_density", self.intrinsic_density),
            ("n1", self.n1),
            ("n2", self.n2),
            ("tau1", self.tau1),
            ("tau2", self.tau2),
            ("avalanche_a1", self.avalanche_a1),
            ("avalanche_a2", self.avalanche_a2),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config("recombination", format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("auger_c1", self.auger_c1),
            ("auger_c2", self.auger_c2),
            ("avalanche_c1", self.avalanche_c1),
            ("avalanche_c2", self.avalanche_c2),
            ("surface_velocity_boundary", self.surface_velocity_boundary),
            ("surface_velocity_interface", self.surface_velocity_interface),
            ("quadratic_generation", self.quadratic_generation),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config("recombination", format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// True when every active mechanism annihilates or creates carriers in
    /// pairs and vanishes exactly at `u1 u2 = n_i²`.
    pub fn pairs_relax_to_mass_action(&self) -> bool {
        !self.avalanche && self.quadratic_generation == 0.0
    }

    /// True when some active mechanism couples the two carrier populations.
    pub fn has_pair_recombination(&self) -> bool {
        (self.srh)
            || (self.auger && (self.auger_c1 > 0.0 || self.auger_c2 > 0.0))
            || (self.surface_boundary && self.surface_velocity_boundary > 0.0)
            || (self.surface_interface && self.surface_velocity_interface > 0.0)
    }
}

pub fn srh_rate(u1: f64, u2: f64, p: &RecombinationParams) -> f64 {
    let (u1, u2) = (u1.max(0.0), u2.max(0.0));
    let ni = p.intrinsic_density;
    (u1 * u2 - ni * ni) / (p.tau2 * (u1 + p.n1) + p.tau1 * (u2 + p.n2))
}

pub fn auger_rate(u1: f64, u2: f64, p: &RecombinationParams) -> f64 {
    let (u1, u2) = (u1.max(0.0), u2.max(0.0));
    let ni = p.intrinsic_density;
    (u1 * u2 - ni * ni) * (p.auger_c1 * u1 + p.auger_c2 * u2)
}

fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

fn impact_term(c: f64, a: f64, j: [f64; 2], grad_phi: [f64; 2]) -> f64 {
    let magnitude = norm(j);
    let along_field = (grad_phi[0] * j[0] + grad_phi[1] * j[1]).abs();
    // exp(−a|j|/|∇φ·j|) → 0 as ∇φ·j → 0.
    if magnitude == 0.0 || along_field == 0.0 {
        return 0.0;
    }
    c * magnitude * (-a * magnitude / along_field).exp()
}

/// Impact-ionisation generation rate (non-negative).
pub fn avalanche_rate(j1: [f64; 2], j2: [f64; 2], grad_phi: [f64; 2], p: &RecombinationParams) -> f64 {
    impact_term(p.avalanche_c1, p.avalanche_a1, j1, grad_phi)
        + impact_term(p.avalanche_c2, p.avalanche_a2, j2, grad_phi)
}

pub fn surface_rate(u1: f64, u2: f64, p: &RecombinationParams, location: SurfaceLocation) -> f64 {
    let velocity = match location {
        SurfaceLocation::Boundary => p.surface_velocity_boundary,
        SurfaceLocation::Interface => p.surface_velocity_interface,
    };
    p.surface_model.rate(u1, u2, p.intrinsic_density, velocity)
}

/// Net bulk recombination `srh + auger − avalanche − generation` at one cell.
pub fn net_bulk_recombination(
    u1: f64,
    u2: f64,
    j1: [f64; 2],
    j2: [f64; 2],
    grad_phi: [f64; 2],
    p: &RecombinationParams,
) -> f64 {
    let mut rate = 0.0;
    if p.srh {
        rate += srh_rate(u1, u2, p);
    }
    if p.auger {
        rate += auger_rate(u1, u2, p);
    }
    if p.avalanche {
        rate -= avalanche_rate(j1, j2, grad_phi, p);
    }
    if p.quadratic_generation > 0.0 {
        rate -= p.quadratic_generation * u1.max(0.0) * u2.max(0.0);
    }
    rate
}

/// Cell-averaged vectors the Avalanche term depends on.
#[derive(Clone, Debug, PartialEq)]
pub struct CellFields {
    pub grad_phi: Vec<[f64; 2]>,
    pub j1: Vec<[f64; 2]>,
    pub j2: Vec<[f64; 2]>,
}

impl CellFields {
    pub fn zero(n: usize) -> Self {
        CellFields {
            grad_phi: vec![[0.0; 2]; n],
            j1: vec![[0.0; 2]; n],
            j2: vec![[0.0; 2]; n],
        }
    }
}

/// Integrated reaction load per cell for electrons and holes.
///
/// Bulk recombination enters as `−r·vol`, boundary recombination on Robin
/// faces as `−r^Γ·area`, and interface recombination as a jump source split
/// between the two neighbours of each interface face.
pub fn total_reaction(
    mesh: &Mesh,
    u1: &[f64],
    u2: &[f64],
    fields: &CellFields,
    params: &RecombinationParams,
) -> Result<[Vec<f64>; 2]> {
    let n = mesh.num_cells();
    if u1.len() != n || u2.len() != n || fields.grad_phi.len() != n {
        return Err(Error::internal("recombination", "state does not match the mesh"));
    }
    let mut load: Vec<f64> = (0..n)
        .map(|c| {
            let r = net_bulk_recombination(u1[c], u2[c], fields.j1[c], fields.j2[c], fields.grad_phi[c], params);
            -r * mesh.cell_volumes[c]
        })
        .collect();
    if params.surface_boundary {
        for f in mesh.robin_faces() {
            if let FaceCells::Boundary { cell, .. } = mesh.faces[f].cells {
                let r = surface_rate(u1[cell], u2[cell], params, SurfaceLocation::Boundary);
                load[cell] -= r * mesh.faces[f].area;
            }
        }
    }
    if params.surface_interface {
        let jump: BTreeMap<usize, f64> = mesh
            .interface_faces()
            .filter_map(|f| match mesh.faces[f].cells {
                FaceCells::Internal { lower, upper } => {
                    let t1 = 0.5 * (u1[lower] + u1[upper]);
                    let t2 = 0.5 * (u2[lower] + u2[upper]);
                    Some((f, -surface_rate(t1, t2, params, SurfaceLocation::Interface)))
                }
                FaceCells::Boundary { .. } => None,
            })
            .collect();
        for (l, s) in load.iter_mut().zip(interface_jump_source(mesh, &jump)?) {
            *l += s;
        }
    }
    Ok([load.clone(), load])
}
