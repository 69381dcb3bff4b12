//! Two-point flux finite-volume Poisson problem with mixed Dirichlet/Robin
//! boundary conditions.
//!
//! The stiffness matrix `S` collects
//! * harmonic-mean transmissibilities on internal faces,
//! * half-cell transmissibilities `k·area/(h/2)` on Dirichlet faces (value 0),
//! * `ε_Γ·area` on Robin faces, whose datum `φ_Γ·area` goes into the load.
//!
//! The reduction map `(u1, u2) ↦ φ` solves `S φ = load(𝔡) − M u1 + M u2 + robin`.

use crate::error::{Error, Result};
use crate::fields::{CoefficientField, RobinData};
use crate::linalg::{norm_inf, BandedLu, SparseMatrix};
use crate::mesh::{FaceCells, Mesh};

/// Transmissibility of face `f` for the diffusion coefficient `coeff`.
///
/// Internal faces use the harmonic mean of the normal components, boundary
/// faces the half-cell distance. Robin terms are not included.
pub fn face_transmissibility(mesh: &Mesh, coeff: &CoefficientField, f: usize) -> f64 {
    let face = &mesh.faces[f];
    let (d_lo, d_hi) = mesh.face_half_distances(face);
    match face.cells {
        FaceCells::Internal { lower, upper } => {
            let k_lo = coeff.tensors[lower].normal(face.axis);
            let k_hi = coeff.tensors[upper].normal(face.axis);
            face.area / (d_lo / k_lo + d_hi / k_hi)
        }
        FaceCells::Boundary { cell, .. } => face.area * coeff.tensors[cell].normal(face.axis) / d_lo,
    }
}

/// Triplets of the diffusion stiffness with zero Dirichlet data and the Robin
/// coefficient `robin[f]` on Robin faces (`None` means homogeneous Neumann).
pub(crate) fn diffusion_triplets(
    mesh: &Mesh,
    coeff: &CoefficientField,
    robin: Option<&[f64]>,
) -> Vec<(usize, usize, f64)> {
    let mut triplets = Vec::with_capacity(4 * mesh.faces.len());
    for (f, face) in mesh.faces.iter().enumerate() {
        match face.cells {
            FaceCells::Internal { lower, upper } => {
                let t = face_transmissibility(mesh, coeff, f);
                triplets.push((lower, lower, t));
                triplets.push((upper, upper, t));
                triplets.push((lower, upper, -t));
                triplets.push((upper, lower, -t));
            }
            FaceCells::Boundary { cell, .. } => {
                if face.is_dirichlet() {
                    triplets.push((cell, cell, face_transmissibility(mesh, coeff, f)));
                } else if let Some(robin) = robin {
                    if face.is_robin() && robin[f] != 0.0 {
                        triplets.push((cell, cell, robin[f] * face.area));
                    }
                }
            }
        }
    }
    triplets
}

#[derive(Clone, Debug)]
pub struct EllipticSystem {
    pub matrix: SparseMatrix,
    pub robin_load: Vec<f64>,
    pub volumes: Vec<f64>,
    factor: Option<BandedLu>,
}

pub fn assemble_poisson_operator(
    mesh: &Mesh,
    permittivity: &CoefficientField,
    robin: &RobinData,
) -> Result<EllipticSystem> {
    if permittivity.len() != mesh.num_cells() {
        return Err(Error::InvalidMaterial(format!(
            "permittivity has {} cells, mesh has {}",
            permittivity.len(),
            mesh.num_cells()
        )));
    }
    robin.validate(mesh)?;
    let n = mesh.num_cells();
    let matrix = SparseMatrix::from_triplets(
        n,
        diffusion_triplets(mesh, permittivity, Some(&robin.coefficient)),
    );
    let mut robin_load = vec![0.0; n];
    for f in mesh.robin_faces() {
        if let FaceCells::Boundary { cell, .. } = mesh.faces[f].cells {
            robin_load[cell] += robin.datum[f] * mesh.faces[f].area;
        }
    }
    // LU without pivoting of a symmetric matrix has positive pivots iff it is
    // positive definite.
    let factor = BandedLu::factor(&matrix)
        .ok()
        .filter(|lu| lu.pivots().all(|p| p > 0.0));
    Ok(EllipticSystem {
        matrix,
        robin_load,
        volumes: mesh.cell_volumes.clone(),
        factor,
    })
}

impl EllipticSystem {
    pub fn dim(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_positive_definite(&self) -> bool {
        self.factor.is_some()
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let lu = self.factor.as_ref().ok_or_else(|| {
            Error::solver("poisson", "stiffness matrix is singular or indefinite")
        })?;
        if rhs.len() != self.dim() {
            return Err(Error::internal("poisson", "right-hand side has wrong length"));
        }
        Ok(lu.solve(rhs))
    }

    /// `load(𝔡) − M u1 + M u2 + robin load`.
    pub fn potential_rhs(&self, doping_load: &[f64], u1: &[f64], u2: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|i| {
                doping_load[i] - self.volumes[i] * u1[i] + self.volumes[i] * u2[i] + self.robin_load[i]
            })
            .collect()
    }
}

/// The reduction map `(u1, u2) ↦ φ`.
pub fn solve_potential(
    system: &EllipticSystem,
    doping_load: &[f64],
    u1: &[f64],
    u2: &[f64],
) -> Result<Vec<f64>> {
    let n = system.dim();
    if doping_load.len() != n || u1.len() != n || u2.len() != n {
        return Err(Error::internal("poisson", "density vectors do not match the mesh"));
    }
    let phi = system.solve(&system.potential_rhs(doping_load, u1, u2))?;
    if phi.iter().any(|x| !x.is_finite()) {
        return Err(Error::solver("poisson", "non-finite potential"));
    }
    Ok(phi)
}

const NEWTON_MAX_ITER: usize = 50;
const NEWTON_TOL: f64 = 1e-12;

/// Boltzmann equilibrium: solve `Sφ + M n_i (e^φ − e^−φ) = load(𝔡) + robin` by
/// damped Newton. Equilibrium densities are `n_i e^φ` and `n_i e^−φ`.
pub fn solve_equilibrium_potential(
    system: &EllipticSystem,
    doping_load: &[f64],
    intrinsic_density: f64,
) -> Result<Vec<f64>> {
    let n = system.dim();
    let ni = intrinsic_density;
    if !(ni > 0.0 && ni.is_finite()) {
        return Err(Error::config("poisson", format!("intrinsic density must be positive, got {ni}")));
    }
    if doping_load.len() != n {
        return Err(Error::internal("poisson", "doping load does not match the mesh"));
    }
    let vol = &system.volumes;
    let b: Vec<f64> = (0..n).map(|i| doping_load[i] + system.robin_load[i]).collect();
    let residual = |phi: &[f64]| -> Vec<f64> {
        let s_phi = system.matrix.mul_vec(phi);
        (0..n)
            .map(|i| s_phi[i] + vol[i] * 2.0 * ni * phi[i].sinh() - b[i])
            .collect()
    };

    // Local charge neutrality as the starting guess.
    let mut phi: Vec<f64> = (0..n)
        .map(|i| (doping_load[i] / (vol[i] * 2.0 * ni)).asinh())
        .collect();
    let mut r = residual(&phi);
    let mut history = vec![norm_inf(&r)];
    for _ in 0..NEWTON_MAX_ITER {
        let jac_diag: Vec<f64> = (0..n).map(|i| vol[i] * 2.0 * ni * phi[i].cosh()).collect();
        let jacobian = system.matrix.add_diagonal(&jac_diag);
        let lu = BandedLu::factor(&jacobian).map_err(|e| Error::SolverFailure {
            module: "poisson",
            message: format!("equilibrium Jacobian: {e}"),
            residuals: history.clone(),
        })?;
        let mut step = lu.solve(&r);
        // Newton direction −J⁻¹F, limited to keep exp() in range.
        step.iter_mut().for_each(|s| *s = (-*s).clamp(-10.0, 10.0));
        // Backtrack on the residual norm.
        let r_norm = norm_inf(&r);
        let mut lambda = 1.0;
        let (next, next_r) = loop {
            let trial: Vec<f64> = phi.iter().zip(&step).map(|(p, s)| p + lambda * s).collect();
            let trial_r = residual(&trial);
            let trial_norm = norm_inf(&trial_r);
            if trial_norm.is_finite() && (trial_norm <= r_norm || lambda < 1e-4) {
                break (trial, trial_r);
            }
            lambda *= 0.5;
        };
        let update = lambda * norm_inf(&step);
        phi = next;
        r = next_r;
        history.push(norm_inf(&r));
        if update <= NEWTON_TOL {
            return Ok(phi);
        }
    }
    Err(Error::SolverFailure {
        module: "poisson",
        message: format!("equilibrium Newton did not converge in {NEWTON_MAX_ITER} iterations"),
        residuals: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{make_piecewise_coefficient, DopingProfile, SymTensor};
    use crate::mesh::{build_tensor_mesh, classify_boundary, Region};
    use crate::{fields::doping_load_vector, linalg::weighted_norm};
    use proptest::prelude::*;

    fn dirichlet_1d(n: usize, ends: &[f64]) -> Mesh {
        let mesh = build_tensor_mesh(1, &[(0.0, 1.0)], &[n]).unwrap();
        let regions: Vec<_> = ends.iter().map(|&x| Region::plane(1, 0, x)).collect();
        classify_boundary(&mesh, &regions, &[]).unwrap()
    }

    fn unit(mesh: &Mesh) -> CoefficientField {
        CoefficientField::uniform(mesh, SymTensor::scalar(1.0)).unwrap()
    }

    #[test]
    fn two_cell_dirichlet_stencil() {
        let mesh = dirichlet_1d(2, &[0.0, 1.0]);
        let sys = assemble_poisson_operator(&mesh, &unit(&mesh), &RobinData::uniform(&mesh, 0.0, 0.0).unwrap()).unwrap();
        let dense = sys.matrix.to_dense();
        assert_eq!(dense, nalgebra::dmatrix![6.0, -2.0; -2.0, 6.0]);
        assert!(sys.is_positive_definite());
    }

    #[test]
    fn two_cell_neumann_is_singular() {
        let mesh = build_tensor_mesh(1, &[(0.0, 1.0)], &[2]).unwrap();
        let sys = assemble_poisson_operator(&mesh, &unit(&mesh), &RobinData::uniform(&mesh, 0.0, 0.0).unwrap()).unwrap();
        assert_eq!(sys.matrix.to_dense(), nalgebra::dmatrix![2.0, -2.0; -2.0, 2.0]);
        assert_eq!(sys.matrix.mul_vec(&[1.0, 1.0]), vec![0.0, 0.0]);
        assert!(!sys.is_positive_definite());
        let err = solve_potential(&sys, &[0.0; 2], &[0.0; 2], &[0.0; 2]).unwrap_err();
        assert!(matches!(err, Error::SolverFailure { .. }));
    }

    #[test]
    fn stiffness_is_exactly_symmetric() {
        let mesh = build_tensor_mesh(2, &[(0.0, 1.0), (0.0, 2.0)], &[5, 4]).unwrap();
        let mesh = classify_boundary(&mesh, &[Region::new(&[0.0, 0.0], &[0.0, 1.0])], &[]).unwrap();
        let eps = make_piecewise_coefficient(
            &mesh,
            &[
                (Region::all(2), SymTensor::diagonal(1.0, 3.0)),
                (Region::new(&[0.5, 0.0], &[1.0, 2.0]), SymTensor::scalar(7.0)),
            ],
        )
        .unwrap();
        let sys = assemble_poisson_operator(&mesh, &eps, &RobinData::uniform(&mesh, 0.3, 1.0).unwrap()).unwrap();
        assert!(sys.matrix.is_symmetric());
        assert!(sys.is_positive_definite());
    }

    #[test]
    fn neutral_data_gives_zero_potential() {
        let mesh = dirichlet_1d(8, &[0.0]);
        let sys = assemble_poisson_operator(&mesh, &unit(&mesh), &RobinData::uniform(&mesh, 0.5, 0.0).unwrap()).unwrap();
        let c = vec![3.0; 8];
        let phi = solve_potential(&sys, &[0.0; 8], &c, &c).unwrap();
        assert!(phi.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn constant_source_parabola() {
        // -φ'' = 1 on (0,1), φ(0) = φ(1) = 0, so φ(1/2) = 1/8.
        for n in [11usize, 21, 41] {
            let mesh = dirichlet_1d(n, &[0.0, 1.0]);
            let sys = assemble_poisson_operator(&mesh, &unit(&mesh), &RobinData::uniform(&mesh, 0.0, 0.0).unwrap()).unwrap();
            let load = doping_load_vector(&mesh, &DopingProfile::uniform(&mesh, 1.0)).unwrap();
            let zero = vec![0.0; n];
            let phi = solve_potential(&sys, &load, &zero, &zero).unwrap();
            let h = 1.0 / n as f64;
            assert!((phi[n / 2] - 0.125).abs() <= h * h, "n={n}: {}", phi[n / 2]);
            let residual: Vec<f64> = sys
                .matrix
                .mul_vec(&phi)
                .iter()
                .zip(&load)
                .map(|(a, b)| a - b)
                .collect();
            assert!(norm_inf(&residual) <= 1e-10 * norm_inf(&load));
        }
    }

    #[test]
    fn pure_robin_constant() {
        let mesh = build_tensor_mesh(1, &[(0.0, 1.0)], &[6]).unwrap();
        let sys = assemble_poisson_operator(&mesh, &unit(&mesh), &RobinData::uniform(&mesh, 2.0, 4.0).unwrap()).unwrap();
        let zero = vec![0.0; 6];
        let phi = solve_potential(&sys, &zero, &zero, &zero).unwrap();
        assert!(phi.iter().all(|p| (p - 2.0).abs() < 1e-13));
    }

    #[test]
    fn equilibrium_of_neutral_device_is_zero() {
        let mesh = dirichlet_1d(10, &[0.0, 1.0]);
        let sys = assemble_poisson_operator(&mesh, &unit(&mesh), &RobinData::uniform(&mesh, 0.0, 0.0).unwrap()).unwrap();
        let phi = solve_equilibrium_potential(&sys, &[0.0; 10], 1.0).unwrap();
        assert!(phi.iter().all(|&p| p.abs() < 1e-14));
    }

    #[test]
    fn equilibrium_charge_neutrality() {
        // Closed box: 2 n_i sinh φ = 𝔡, so φ = asinh(1/2).
        let mesh = build_tensor_mesh(1, &[(0.0, 1.0)], &[5]).unwrap();
        let sys = assemble_poisson_operator(&mesh, &unit(&mesh), &RobinData::uniform(&mesh, 0.0, 0.0).unwrap()).unwrap();
        let load = doping_load_vector(&mesh, &DopingProfile::uniform(&mesh, 1.0)).unwrap();
        let phi = solve_equilibrium_potential(&sys, &load, 1.0).unwrap();
        let expected = 0.5f64.asinh();
        assert!((expected - 0.481212).abs() < 1e-6);
        assert!(phi.iter().all(|p| (p - expected).abs() < 1e-12));
    }

    #[test]
    fn equilibrium_is_odd_in_doping() {
        let mesh = dirichlet_1d(16, &[0.0, 1.0]);
        let sys = assemble_poisson_operator(&mesh, &unit(&mesh), &RobinData::uniform(&mesh, 0.0, 0.0).unwrap()).unwrap();
        let doping = DopingProfile::from_regions(
            &mesh,
            &[(Region::new(&[0.0], &[0.5]), 3.0), (Region::new(&[0.5], &[1.0]), -1.0)],
            &[],
        )
        .unwrap();
        let load = doping_load_vector(&mesh, &doping).unwrap();
        let neg: Vec<f64> = load.iter().map(|x| -x).collect();
        let phi = solve_equilibrium_potential(&sys, &load, 0.5).unwrap();
        let phi_neg = solve_equilibrium_potential(&sys, &neg, 0.5).unwrap();
        for (a, b) in phi.iter().zip(&phi_neg) {
            assert!((a + b).abs() < 1e-12);
        }
        // The residual of the nonlinear problem vanishes.
        let s_phi = sys.matrix.mul_vec(&phi);
        for i in 0..16 {
            let r = s_phi[i] + sys.volumes[i] * 2.0 * 0.5 * phi[i].sinh() - load[i];
            assert!(r.abs() < 1e-12);
        }
    }

    #[test]
    fn equilibrium_rejects_bad_density() {
        let mesh = dirichlet_1d(4, &[0.0]);
        let sys = assemble_poisson_operator(&mesh, &unit(&mesh), &RobinData::uniform(&mesh, 0.0, 0.0).unwrap()).unwrap();
        assert!(solve_equilibrium_potential(&sys, &[0.0; 4], 0.0).is_err());
    }

    #[test]
    fn smallest_eigenvalue_positive() {
        let mesh = build_tensor_mesh(2, &[(0.0, 1.0), (0.0, 1.0)], &[4, 3]).unwrap();
        let with_d = classify_boundary(&mesh, &[Region::new(&[0.0, 0.0], &[0.0, 0.4])], &[]).unwrap();
        for (m, robin) in [(&with_d, 0.0), (&mesh, 0.1)] {
            let sys = assemble_poisson_operator(m, &unit(m), &RobinData::uniform(m, robin, 0.0).unwrap()).unwrap();
            let eig = sys.matrix.to_dense().symmetric_eigenvalues();
            assert!(eig.min() > 0.0);
        }
    }

    /// Manufactured solution φ = x(1−x)eˣ of −φ'' = (x² + 3x)eˣ.
    fn manufactured_error(n: usize) -> f64 {
        let mesh = dirichlet_1d(n, &[0.0, 1.0]);
        let sys = assemble_poisson_operator(&mesh, &unit(&mesh), &RobinData::uniform(&mesh, 0.0, 0.0).unwrap()).unwrap();
        let dphi = |x: f64| (1.0 - x - x * x) * x.exp();
        let exact = |x: f64| x * (1.0 - x) * x.exp();
        let h = 1.0 / n as f64;
        let load: Vec<f64> = (0..n).map(|i| dphi(i as f64 * h) - dphi((i + 1) as f64 * h)).collect();
        let zero = vec![0.0; n];
        let phi = solve_potential(&sys, &load, &zero, &zero).unwrap();
        let err: Vec<f64> = (0..n).map(|i| phi[i] - exact(mesh.cell_centers[i][0])).collect();
        weighted_norm(&err, &mesh.cell_volumes)
    }

    #[test]
    fn second_order_convergence() {
        let e = [manufactured_error(32), manufactured_error(64), manufactured_error(128)];
        assert!(e[0] / e[1] >= 3.8, "{e:?}");
        assert!(e[1] / e[2] >= 3.8, "{e:?}");
    }

    #[test]
    fn harmonic_mean_is_exact_for_layered_media() {
        // -(εφ')' = 0 with ε = 1 | 4, φ(0) = 0 and unit flux entering at x = 1:
        // the exact solution is piecewise linear and the FV solution matches it.
        let mesh = dirichlet_1d(8, &[0.0]);
        let eps = make_piecewise_coefficient(
            &mesh,
            &[(Region::new(&[0.0], &[0.5]), SymTensor::scalar(1.0)), (Region::new(&[0.5], &[1.0]), SymTensor::scalar(4.0))],
        )
        .unwrap();
        let sys = assemble_poisson_operator(&mesh, &eps, &RobinData::uniform(&mesh, 0.0, 1.0).unwrap()).unwrap();
        let zero = vec![0.0; 8];
        let phi = solve_potential(&sys, &zero, &zero, &zero).unwrap();
        for (i, p) in phi.iter().enumerate() {
            let x = mesh.cell_centers[i][0];
            let exact = if x < 0.5 { x } else { 0.5 + (x - 0.5) / 4.0 };
            assert!((p - exact).abs() < 1e-13, "cell {i}: {p} vs {exact}");
        }
    }

    #[test]
    fn discrete_maximum_principle() {
        let mesh = build_tensor_mesh(2, &[(0.0, 1.0), (0.0, 1.0)], &[6, 6]).unwrap();
        let mesh = classify_boundary(&mesh, &[Region::new(&[0.0, 0.0], &[0.0, 1.0])], &[]).unwrap();
        let eps = CoefficientField::uniform(&mesh, SymTensor::diagonal(1.0, 2.5)).unwrap();
        let zero = vec![0.0; mesh.num_cells()];
        // Zero data: identically zero.
        let sys = assemble_poisson_operator(&mesh, &eps, &RobinData::uniform(&mesh, 1.0, 0.0).unwrap()).unwrap();
        let phi = solve_potential(&sys, &zero, &zero, &zero).unwrap();
        assert!(phi.iter().all(|&p| p == 0.0));
        // Robin data: bounded by the Dirichlet value and the Robin equilibrium values.
        let robin = RobinData::from_regions(
            &mesh,
            2.0,
            3.0,
            &[(Region::new(&[1.0, 0.0], &[1.0, 1.0]), 0.5, -1.0)],
        )
        .unwrap();
        let sys = assemble_poisson_operator(&mesh, &eps, &robin).unwrap();
        let phi = solve_potential(&sys, &zero, &zero, &zero).unwrap();
        let (lo, hi) = (-2.0, 1.5);
        assert!(phi.iter().all(|&p| p >= lo - 1e-12 && p <= hi + 1e-12), "{phi:?}");
        // M-matrix: the inverse is entrywise non-negative.
        let inv = sys.matrix.to_dense().try_inverse().unwrap();
        assert!(inv.iter().all(|&v| v >= -1e-14));
    }

    proptest! {
        #[test]
        fn reduction_map_is_affine(
            v1 in prop::collection::vec(0.0f64..5.0, 12),
            v2 in prop::collection::vec(0.0f64..5.0, 12),
            w1 in prop::collection::vec(0.0f64..5.0, 12),
            w2 in prop::collection::vec(0.0f64..5.0, 12),
        ) {
            let mesh = dirichlet_1d(12, &[0.0, 1.0]);
            let sys = assemble_poisson_operator(&mesh, &unit(&mesh), &RobinData::uniform(&mesh, 0.0, 0.0).unwrap()).unwrap();
            let doping = vec![0.3; 12];
            let a = solve_potential(&sys, &doping, &v1, &v2).unwrap();
            let b = solve_potential(&sys, &doping, &w1, &w2).unwrap();
            let diff_rhs: Vec<f64> = (0..12)
                .map(|i| sys.volumes[i] * (-(v1[i] - w1[i]) + (v2[i] - w2[i])))
                .collect();
            let diff = sys.solve(&diff_rhs).unwrap();
            for i in 0..12 {
                prop_assert!((a[i] - b[i] - diff[i]).abs() <= 1e-12 * (1.0 + a[i].abs()));
            }
        }
    }
}
