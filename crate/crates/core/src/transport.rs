//! Scharfetter–Gummel discretisation of the carrier fluxes
//! `j_k = μ_k (∇u_k + (−1)^k u_k ∇φ)`.
//!
//! `T_k(φ) u` is the net outward particle flux of each cell. The particle
//! flux is `−j_k`, so the semi-discrete continuity equation reads
//! `M u' + T_k(φ) u = load`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::fields::{CoefficientField, RobinData};
use crate::linalg::SparseMatrix;
use crate::mesh::{FaceCells, Mesh};
use crate::poisson::face_transmissibility;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Carrier {
    Electron,
    Hole,
}

impl Carrier {
    pub const BOTH: [Carrier; 2] = [Carrier::Electron, Carrier::Hole];

    /// 1 for electrons, 2 for holes.
    pub fn index(self) -> usize {
        match self {
            Carrier::Electron => 1,
            Carrier::Hole => 2,
        }
    }

    /// `(−1)^k`: −1 for electrons, +1 for holes.
    pub fn drift_sign(self) -> f64 {
        match self {
            Carrier::Electron => -1.0,
            Carrier::Hole => 1.0,
        }
    }

    /// Boltzmann profile `e^{−σ φ}` annihilated by the flux.
    pub fn boltzmann_factor(self, phi: f64) -> f64 {
        (-self.drift_sign() * phi).exp()
    }
}

/// How carriers see the Dirichlet part of the boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CarrierBoundary {
    /// When false, Dirichlet faces are contacts for φ only and carry no
    /// carrier flux.
    pub dirichlet_contacts: bool,
}

impl Default for CarrierBoundary {
    fn default() -> Self {
        CarrierBoundary {
            dirichlet_contacts: true,
        }
    }
}

/// `B(x) = x / (eˣ − 1)` with `B(0) = 1`.
pub fn bernoulli(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - 0.5 * x + x2 / 12.0 * (1.0 - x2 / 60.0)
    } else {
        x / x.exp_m1()
    }
}

/// Particle flux density from the left to the right cell, `δφ = φ_L − φ_R`.
pub fn sg_edge_flux(u_left: f64, u_right: f64, dphi: f64, mobility: f64, h: f64, carrier: Carrier) -> f64 {
    let x = carrier.drift_sign() * dphi;
    mobility / h * (bernoulli(-x) * u_left - bernoulli(x) * u_right)
}

#[derive(Clone, Debug)]
pub struct TransportSystem {
    pub carrier: Carrier,
    pub matrix: SparseMatrix,
}

pub fn assemble_transport_operator(
    mesh: &Mesh,
    mobility: &CoefficientField,
    phi: &[f64],
    carrier: Carrier,
    boundary: CarrierBoundary,
) -> Result<TransportSystem> {
    let n = mesh.num_cells();
    if phi.len() != n || mobility.len() != n {
        return Err(Error::internal(
            "transport",
            format!("dimension mismatch: mesh {n}, potential {}, mobility {}", phi.len(), mobility.len()),
        ));
    }
    let sigma = carrier.drift_sign();
    let mut triplets = Vec::with_capacity(4 * mesh.faces.len());
    for (f, face) in mesh.faces.iter().enumerate() {
        match face.cells {
            FaceCells::Internal { lower, upper } => {
                let t = face_transmissibility(mesh, mobility, f);
                let x = sigma * (phi[lower] - phi[upper]);
                let (out_lower, in_upper) = (t * bernoulli(-x), t * bernoulli(x));
                triplets.push((lower, lower, out_lower));
                triplets.push((lower, upper, -in_upper));
                triplets.push((upper, lower, -out_lower));
                triplets.push((upper, upper, in_upper));
            }
            FaceCells::Boundary { cell, .. } => {
                // Zero carrier value on the face, potential taken one-sided.
                if boundary.dirichlet_contacts && face.is_dirichlet() {
                    triplets.push((cell, cell, face_transmissibility(mesh, mobility, f)));
                }
            }
        }
    }
    Ok(TransportSystem {
        carrier,
        matrix: SparseMatrix::from_triplets(n, triplets),
    })
}

/// Particle flux density through every face, oriented along `+axis`.
pub fn face_fluxes(
    mesh: &Mesh,
    mobility: &CoefficientField,
    phi: &[f64],
    u: &[f64],
    carrier: Carrier,
    boundary: CarrierBoundary,
) -> Vec<f64> {
    mesh.faces
        .iter()
        .enumerate()
        .map(|(f, face)| match face.cells {
            FaceCells::Internal { lower, upper } => {
                let t = face_transmissibility(mesh, mobility, f) / face.area;
                sg_edge_flux(u[lower], u[upper], phi[lower] - phi[upper], t, 1.0, carrier)
            }
            FaceCells::Boundary { cell, side } => {
                if boundary.dirichlet_contacts && face.is_dirichlet() {
                    let t = face_transmissibility(mesh, mobility, f) / face.area;
                    side.sign() * t * u[cell]
                } else {
                    0.0
                }
            }
        })
        .collect()
}

/// Cell vectors obtained by averaging the two face values along each axis.
pub fn reconstruct_cell_vectors(mesh: &Mesh, face_values: &[f64]) -> Vec<[f64; 2]> {
    let mut out = vec![[0.0; 2]; mesh.num_cells()];
    for (cell, faces) in mesh.cell_faces.iter().enumerate() {
        for &f in faces {
            out[cell][mesh.faces[f].axis] += 0.5 * face_values[f];
        }
    }
    out
}

/// Cell-averaged currents `j_k` (the negative particle flux).
pub fn carrier_currents(
    mesh: &Mesh,
    mobility: &CoefficientField,
    phi: &[f64],
    u: &[f64],
    carrier: Carrier,
    boundary: CarrierBoundary,
) -> Vec<[f64; 2]> {
    let fluxes = face_fluxes(mesh, mobility, phi, u, carrier, boundary);
    reconstruct_cell_vectors(mesh, &fluxes)
        .into_iter()
        .map(|[x, y]| [-x, -y])
        .collect()
}

/// Cell-averaged `∇φ`. Dirichlet faces use the value 0, Robin faces the
/// normal derivative `(φ_Γ − ε_Γ φ)/ε` implied by the boundary condition.
pub fn potential_gradient(
    mesh: &Mesh,
    permittivity: &CoefficientField,
    robin: &RobinData,
    phi: &[f64],
) -> Vec<[f64; 2]> {
    let gradients: Vec<f64> = mesh
        .faces
        .iter()
        .enumerate()
        .map(|(f, face)| {
            let (d_lo, d_hi) = mesh.face_half_distances(face);
            match face.cells {
                FaceCells::Internal { lower, upper } => (phi[upper] - phi[lower]) / (d_lo + d_hi),
                FaceCells::Boundary { cell, side } => {
                    if face.is_dirichlet() {
                        side.sign() * (0.0 - phi[cell]) / d_lo
                    } else {
                        let eps = permittivity.tensors[cell].normal(face.axis);
                        side.sign() * (robin.datum[f] - robin.coefficient[f] * phi[cell]) / eps
                    }
                }
            }
        })
        .collect();
    reconstruct_cell_vectors(mesh, &gradients)
}

/// Jump data on interface faces as a cell source, split equally between the
/// two neighbours.
pub fn interface_jump_source(mesh: &Mesh, jump: &BTreeMap<usize, f64>) -> Result<Vec<f64>> {
    let mut source = vec![0.0; mesh.num_cells()];
    for (&f, &value) in jump {
        let face = mesh.faces.get(f).ok_or_else(|| {
            Error::config("transport", format!("jump value on unknown face {f}"))
        })?;
        match face.cells {
            FaceCells::Internal { lower, upper } if face.interface => {
                let half = 0.5 * value * face.area;
                source[lower] += half;
                source[upper] += half;
            }
            _ => {
                return Err(Error::config(
                    "transport",
                    format!("jump value on face {f}, which is not an interface face"),
                ))
            }
        }
    }
    Ok(source)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{make_piecewise_coefficient, SymTensor};
    use crate::mesh::{build_tensor_mesh, classify_boundary, Region};
    use crate::poisson::assemble_poisson_operator;
    use proptest::prelude::*;

    const E: f64 = std::f64::consts::E;

    #[test]
    fn bernoulli_values() {
        assert_eq!(bernoulli(0.0), 1.0);
        assert!((bernoulli(1.0) - 1.0 / (E - 1.0)).abs() < 1e-15);
        assert!((bernoulli(1.0) - 0.581977).abs() < 1e-6);
        for x in [0.5, 1.0, 10.0] {
            assert!((bernoulli(-x) - bernoulli(x) - x).abs() < 1e-14);
        }
    }

    #[test]
    fn bernoulli_branches_agree() {
        // Both sides of the Taylor switch against the other branch.
        for x in [-2e-4, -1.0001e-4, -9.999e-5, 9.999e-5, 1.0001e-4, 2e-4] {
            let direct = x / f64::exp_m1(x);
            assert!((bernoulli(x) - direct).abs() < 1e-15, "{x}");
        }
        // Series to many terms as an independent reference near zero.
        for x in [1e-5, -3e-5, 7e-5] {
            let mut term = 1.0;
            let mut denom = 0.0;
            for k in 1..20 {
                term *= x / k as f64;
                denom += term / x;
            }
            assert!((bernoulli(x) - 1.0 / denom).abs() < 1e-15);
        }
    }

    #[test]
    fn flux_without_drift_is_central_diffusion() {
        let f = sg_edge_flux(3.0, 1.0, 0.0, 2.0, 0.5, Carrier::Hole);
        assert_eq!(f, 2.0 * (3.0 - 1.0) / 0.5);
    }

    #[test]
    fn hole_flux_value() {
        // 2·[B(−1)·2 − B(1)·1] with B(1) = 1/(e−1).
        let b1 = 1.0 / (E - 1.0);
        let expected = 2.0 * ((b1 + 1.0) * 2.0 - b1);
        let f = sg_edge_flux(2.0, 1.0, 1.0, 1.0, 0.5, Carrier::Hole);
        assert!((f - expected).abs() < 1e-14);
        assert!((f - 5.163953).abs() < 1e-6);
    }

    #[test]
    fn electron_equilibrium_flux_vanishes() {
        for (pl, pr) in [(0.0, 1.0), (-3.0, 2.5), (7.0, -9.0), (0.2, 0.2 + 1e-7)] {
            let f = sg_edge_flux(f64::exp(pl), f64::exp(pr), pl - pr, 1.0, 0.1, Carrier::Electron);
            let scale = 10.0 * f64::exp(pl).max(f64::exp(pr));
            assert!(f.abs() <= 1e-13 * scale, "{pl} {pr}: {f}");
        }
    }

    fn line(n: usize, dirichlet: bool) -> Mesh {
        let mesh = build_tensor_mesh(1, &[(0.0, 1.0)], &[n]).unwrap();
        if dirichlet {
            classify_boundary(&mesh, &[Region::plane(1, 0, 0.0), Region::plane(1, 0, 1.0)], &[]).unwrap()
        } else {
            mesh
        }
    }

    #[test]
    fn zero_potential_gives_diffusion_stiffness() {
        let mesh = build_tensor_mesh(2, &[(0.0, 1.0), (0.0, 1.0)], &[4, 3]).unwrap();
        let mesh = classify_boundary(&mesh, &[Region::new(&[0.0, 0.0], &[0.0, 1.0])], &[]).unwrap();
        let mu = make_piecewise_coefficient(
            &mesh,
            &[(Region::all(2), SymTensor::diagonal(2.0, 0.5)), (Region::new(&[0.5, 0.0], &[1.0, 1.0]), SymTensor::scalar(3.0))],
        )
        .unwrap();
        let t = assemble_transport_operator(&mesh, &mu, &vec![0.0; 12], Carrier::Electron, CarrierBoundary::default()).unwrap();
        let robin = RobinData::uniform(&mesh, 0.0, 0.0).unwrap();
        let s = assemble_poisson_operator(&mesh, &mu, &robin).unwrap();
        assert_eq!(t.matrix.to_dense(), s.matrix.to_dense());
    }

    #[test]
    fn uniform_density_without_contacts_is_stationary() {
        let mesh = line(6, false);
        let mu = CoefficientField::uniform(&mesh, SymTensor::scalar(1.5)).unwrap();
        let t = assemble_transport_operator(&mesh, &mu, &[0.0; 6], Carrier::Hole, CarrierBoundary::default()).unwrap();
        assert!(t.matrix.mul_vec(&[4.0; 6]).iter().all(|&v| v.abs() <= 1e-13 * 4.0 * 18.0));
    }

    #[test]
    fn two_cell_matrix_matches_edge_flux() {
        let mesh = line(2, false);
        let mu = CoefficientField::uniform(&mesh, SymTensor::scalar(1.0)).unwrap();
        let phi = [0.0, 1.0];
        for carrier in Carrier::BOTH {
            let t = assemble_transport_operator(&mesh, &mu, &phi, carrier, CarrierBoundary::default()).unwrap();
            for (u1, u2) in [(1.0, 0.0), (0.0, 1.0), (2.0, 3.0)] {
                let flux = sg_edge_flux(u1, u2, phi[0] - phi[1], 1.0, 0.5, carrier);
                let out = t.matrix.mul_vec(&[u1, u2]);
                assert!((out[0] - flux).abs() < 1e-14);
                assert!((out[1] + flux).abs() < 1e-14);
            }
            // Written out: 2·[B(∓1) u1 − B(±1) u2].
            let s = carrier.drift_sign();
            assert!((t.matrix.get(0, 0) - 2.0 * bernoulli(s)).abs() < 1e-14);
            assert!((t.matrix.get(0, 1) + 2.0 * bernoulli(-s)).abs() < 1e-14);
        }
    }

    #[test]
    fn dirichlet_contacts_drain() {
        let mesh = line(4, true);
        let mu = CoefficientField::uniform(&mesh, SymTensor::scalar(1.0)).unwrap();
        let phi = [0.3, -0.2, 0.1, 0.0];
        let t = assemble_transport_operator(&mesh, &mu, &phi, Carrier::Electron, CarrierBoundary::default()).unwrap();
        let sums = t.matrix.column_sums();
        assert!((sums[0] - 8.0).abs() < 1e-14);
        assert!((sums[3] - 8.0).abs() < 1e-14);
        assert!(sums[1].abs() < 1e-14 && sums[2].abs() < 1e-14);
        let off = CarrierBoundary { dirichlet_contacts: false };
        let t = assemble_transport_operator(&mesh, &mu, &phi, Carrier::Electron, off).unwrap();
        assert!(t.matrix.column_sums().iter().all(|s| s.abs() < 1e-14));
    }

    #[test]
    fn dimension_mismatch() {
        let mesh = line(4, true);
        let mu = CoefficientField::uniform(&mesh, SymTensor::scalar(1.0)).unwrap();
        let err = assemble_transport_operator(&mesh, &mu, &[0.0; 3], Carrier::Hole, CarrierBoundary::default()).unwrap_err();
        assert!(matches!(err, Error::Internal { .. }));
    }

    #[test]
    fn jump_source() {
        let mesh = build_tensor_mesh(1, &[(0.0, 1.0)], &[4]).unwrap();
        let mesh = classify_boundary(&mesh, &[Region::plane(1, 0, 0.0)], &[Region::plane(1, 0, 0.5)]).unwrap();
        let face = mesh.interface_faces().next().unwrap();
        let zero = interface_jump_source(&mesh, &BTreeMap::from([(face, 0.0)])).unwrap();
        assert_eq!(zero, vec![0.0; 4]);
        let src = interface_jump_source(&mesh, &BTreeMap::from([(face, 4.0)])).unwrap();
        assert_eq!(src, vec![0.0, 2.0, 2.0, 0.0]);
        let bad = interface_jump_source(&mesh, &BTreeMap::from([(0, 1.0)]));
        assert!(matches!(bad, Err(Error::Configuration { .. })));
    }

    #[test]
    fn jump_source_total_in_2d() {
        let mesh = build_tensor_mesh(2, &[(0.0, 2.0), (0.0, 1.0)], &[4, 3]).unwrap();
        let mesh = classify_boundary(&mesh, &[Region::plane(2, 0, 0.0)], &[Region::plane(2, 0, 1.0)]).unwrap();
        let jump: BTreeMap<usize, f64> = mesh.interface_faces().zip([1.5, -0.25, 3.0]).collect();
        let src = interface_jump_source(&mesh, &jump).unwrap();
        let total: f64 = jump.iter().map(|(&f, v)| v * mesh.faces[f].area).sum();
        assert!((src.iter().sum::<f64>() - total).abs() < 1e-14);
    }

    #[test]
    fn gradient_and_currents_of_linear_profile() {
        let mesh = line(5, true);
        let eps = CoefficientField::uniform(&mesh, SymTensor::scalar(1.0)).unwrap();
        let robin = RobinData::uniform(&mesh, 0.0, 0.0).unwrap();
        // φ = x(1 − x) sampled at centres: interior gradients are exact for
        // the difference quotient.
        let phi: Vec<f64> = mesh.cell_centers.iter().map(|c| c[0] * (1.0 - c[0])).collect();
        let g = potential_gradient(&mesh, &eps, &robin, &phi);
        let x = mesh.cell_centers[2][0];
        assert!((g[2][0] - (1.0 - 2.0 * x)).abs() < 1e-14);
        // Boltzmann electrons carry no interior current.
        let u: Vec<f64> = phi.iter().map(|p| p.exp()).collect();
        let off = CarrierBoundary { dirichlet_contacts: false };
        let j = carrier_currents(&mesh, &eps, &phi, &u, Carrier::Electron, off);
        assert!(j.iter().all(|v| v[0].abs() < 1e-12));
    }

    proptest! {
        #[test]
        fn small_drift_limit(ul in 0.1f64..10.0, ur in 0.1f64..10.0, sign in prop::bool::ANY) {
            prop_assume!((ul - ur).abs() > 1e-3);
            let dphi = if sign { 1e-6 } else { -1e-6 };
            for carrier in Carrier::BOTH {
                // Central diffusion plus central drift, up to O(δφ²).
                let central = ((ul - ur) + carrier.drift_sign() * dphi * 0.5 * (ul + ur)) / 0.1;
                let f = sg_edge_flux(ul, ur, dphi, 1.0, 0.1, carrier);
                prop_assert!((f - central).abs() / central.abs() <= 1e-9);
            }
        }

        #[test]
        fn equilibrium_exactness(pl in -10.0f64..10.0, pr in -10.0f64..10.0, c in 0.01f64..100.0) {
            for carrier in Carrier::BOTH {
                let ul = c * carrier.boltzmann_factor(pl);
                let ur = c * carrier.boltzmann_factor(pr);
                let f = sg_edge_flux(ul, ur, pl - pr, 1.0, 1.0, carrier);
                prop_assert!(f.abs() <= 1e-13 * ul.max(ur));
            }
        }

        #[test]
        fn m_matrix_and_conservation(phi in prop::collection::vec(-20.0f64..20.0, 12), u in prop::collection::vec(0.0f64..5.0, 12)) {
            let mesh = build_tensor_mesh(2, &[(0.0, 1.0), (0.0, 1.0)], &[4, 3]).unwrap();
            let mesh = classify_boundary(&mesh, &[Region::plane(2, 1, 0.0)], &[]).unwrap();
            let mu = CoefficientField::uniform(&mesh, SymTensor::diagonal(1.0, 2.0)).unwrap();
            for carrier in Carrier::BOTH {
                for contacts in [true, false] {
                    let bc = CarrierBoundary { dirichlet_contacts: contacts };
                    let t = assemble_transport_operator(&mesh, &mu, &phi, carrier, bc).unwrap();
                    for (i, j, v) in t.matrix.triplets() {
                        if i == j { prop_assert!(v >= 0.0); } else { prop_assert!(v <= 0.0); }
                    }
                    if !contacts {
                        let out = t.matrix.mul_vec(&u);
                        let scale: f64 = out.iter().map(|v| v.abs()).sum::<f64>() + 1e-300;
                        prop_assert!(out.iter().sum::<f64>().abs() <= 1e-12 * scale);
                    }
                }
            }
        }
    }
}
