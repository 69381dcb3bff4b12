//! Quantitative Sneiberg radius and an empirical check of the extrapolated
//! invertibility interval on a spectral fractional-norm scale.
//!
//! The scale is generated by `L = M⁻¹S`, with `S` the unit-coefficient FV
//! Laplacian and `M` the cell volumes. With `S v = λ M v` and `VᵀMV = I`,
//! `‖u‖_s = ‖Λ^{s/2} Vᵀ M u‖`, and the conjugated operator
//! `L^{(s−1)/2} A L^{−(1+s)/2}` becomes `Λ^{(s−1)/2} (VᵀAV) Λ^{−(1+s)/2}`.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{CoefficientField, SymTensor};
use crate::linalg::SparseMatrix;
use crate::mesh::{FaceCells, Mesh};
use crate::poisson::diffusion_triplets;

/// Below this, `κ` counts as zero and the interval checks are skipped.
pub const KAPPA_THRESHOLD: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SneibergInput {
    pub theta: f64,
    pub kappa: f64,
    pub m0: f64,
    pub m1: f64,
}

impl SneibergInput {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::InvalidInput(format!("theta must lie in (0, 1), got {}", self.theta)));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidInput(format!("kappa must be positive, got {}", self.kappa)));
        }
        if !(self.m0 > 0.0 && self.m1 > 0.0 && self.m0.is_finite() && self.m1.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "operator norms must be positive, got {} and {}",
                self.m0, self.m1
            )));
        }
        // Allow rounding when κ and the norms come from the same SVD.
        if self.kappa > self.m0.min(self.m1) * (1.0 + 1e-12) {
            return Err(Error::InvalidInput(format!(
                "kappa {} exceeds min(M0, M1) = {}",
                self.kappa,
                self.m0.min(self.m1)
            )));
        }
        Ok(())
    }
}

/// `(radius, inverse_bound)` with `radius = κ·max(θ, 1−θ)/(6κ + 12·max(M0, M1))`
/// and `inverse_bound = 8/κ`.
pub fn sneiberg_radius(input: &SneibergInput) -> Result<(f64, f64)> {
    input.validate()?;
    let SneibergInput { theta, kappa, m0, m1 } = *input;
    let radius = kappa * theta.max(1.0 - theta) / (6.0 * kappa + 12.0 * m0.max(m1));
    Ok((radius, 8.0 / kappa))
}

/// Coefficients of `−∇·ρ∇ − ∇·β_div + β_g·∇ + η + ϱ (on faces) + λ`.
#[derive(Clone, Debug)]
pub struct GeneralOperatorSpec {
    pub rho: CoefficientField,
    pub beta_div: Vec<[f64; 2]>,
    pub beta_grad: Vec<[f64; 2]>,
    pub eta: Vec<f64>,
    /// Per face; nonzero entries only on Robin faces.
    pub varrho: Vec<f64>,
    pub lambda: f64,
}

impl GeneralOperatorSpec {
    /// Principal part only.
    pub fn principal(mesh: &Mesh, rho: CoefficientField) -> Self {
        let n = mesh.num_cells();
        GeneralOperatorSpec {
            rho,
            beta_div: vec![[0.0; 2]; n],
            beta_grad: vec![[0.0; 2]; n],
            eta: vec![0.0; n],
            varrho: vec![0.0; mesh.faces.len()],
            lambda: 0.0,
        }
    }
}

/// Integrated (cell-volume weighted) matrix of the general operator.
///
/// The divergence drift is upwinded along its transport velocity `−β_div`
/// on internal faces; `β_g·∇u` uses face values (neighbour average inside,
/// 0 on Dirichlet faces, the cell value on Robin faces).
pub fn assemble_general_operator(mesh: &Mesh, spec: &GeneralOperatorSpec) -> Result<SparseMatrix> {
    let n = mesh.num_cells();
    if spec.rho.len() != n || spec.beta_div.len() != n || spec.beta_grad.len() != n || spec.eta.len() != n {
        return Err(Error::InvalidInput("cell fields do not match the mesh".into()));
    }
    if spec.varrho.len() != mesh.faces.len() {
        return Err(Error::InvalidInput("face coefficient does not match the mesh".into()));
    }
    for (f, face) in mesh.faces.iter().enumerate() {
        if spec.varrho[f] != 0.0 && !face.is_robin() {
            return Err(Error::InvalidInput(format!("boundary coefficient on non-Robin face {f}")));
        }
    }
    let mut triplets = diffusion_triplets(mesh, &spec.rho, Some(&spec.varrho));
    for face in &mesh.faces {
        let axis = face.axis;
        match face.cells {
            FaceCells::Internal { lower, upper } => {
                let velocity = -0.5 * (spec.beta_div[lower][axis] + spec.beta_div[upper][axis]);
                if velocity != 0.0 {
                    let donor = if velocity > 0.0 { lower } else { upper };
                    let flux = velocity * face.area;
                    triplets.push((lower, donor, flux));
                    triplets.push((upper, donor, -flux));
                }
                // ∫β_g·∇u = β_g·Σ u_face ν area with β_g constant per cell.
                for (cell, sign) in [(lower, 1.0), (upper, -1.0)] {
                    let w = sign * spec.beta_grad[cell][axis] * face.area * 0.5;
                    triplets.push((cell, lower, w));
                    triplets.push((cell, upper, w));
                }
            }
            FaceCells::Boundary { cell, side } => {
                if face.is_robin() {
                    let w = side.sign() * spec.beta_grad[cell][axis] * face.area;
                    triplets.push((cell, cell, w));
                }
            }
        }
    }
    for c in 0..n {
        let v = mesh.cell_volumes[c];
        triplets.push((c, c, v * (spec.eta[c] + spec.lambda)));
    }
    Ok(SparseMatrix::from_triplets(n, triplets))
}

/// Spectral data of the reference scale operator.
#[derive(Clone, Debug)]
pub struct ScaleOperator {
    /// Ascending, all positive.
    pub eigenvalues: Vec<f64>,
    /// Columns are `M`-orthonormal eigenvectors.
    pub eigenvectors: DMatrix<f64>,
    pub volumes: Vec<f64>,
}

/// Unit-coefficient Laplacian with the mesh's Dirichlet faces and homogeneous
/// Neumann elsewhere.
pub fn build_reference_scale(mesh: &Mesh) -> Result<ScaleOperator> {
    if mesh.dirichlet_faces().next().is_none() {
        return Err(Error::InvalidInput("reference scale needs at least one Dirichlet face".into()));
    }
    let unit = CoefficientField::uniform(mesh, SymTensor::scalar(1.0))?;
    let s = SparseMatrix::from_triplets(mesh.num_cells(), diffusion_triplets(mesh, &unit, None)).to_dense();
    let inv_sqrt: Vec<f64> = mesh.cell_volumes.iter().map(|v| 1.0 / v.sqrt()).collect();
    let n = mesh.num_cells();
    let k = DMatrix::from_fn(n, n, |i, j| inv_sqrt[i] * s[(i, j)] * inv_sqrt[j]);
    let eig = SymmetricEigen::try_new(k, 1e-14, 0)
        .ok_or_else(|| Error::solver("extrapolation", "symmetric eigensolver did not converge"))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    if eigenvalues[0] <= 0.0 {
        return Err(Error::solver("extrapolation", format!("non-positive eigenvalue {}", eigenvalues[0])));
    }
    let eigenvectors = DMatrix::from_fn(n, n, |i, j| inv_sqrt[i] * eig.eigenvectors[(i, order[j])]);
    Ok(ScaleOperator {
        eigenvalues,
        eigenvectors,
        volumes: mesh.cell_volumes.clone(),
    })
}

impl ScaleOperator {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Coefficients `Vᵀ M u`.
    pub fn coefficients(&self, u: &[f64]) -> DVector<f64> {
        let mu = DVector::from_iterator(self.dim(), u.iter().zip(&self.volumes).map(|(u, v)| u * v));
        self.eigenvectors.tr_mul(&mu)
    }

    /// `L^α u`.
    pub fn power_apply(&self, alpha: f64, u: &[f64]) -> Vec<f64> {
        let mut c = self.coefficients(u);
        for (ci, lam) in c.iter_mut().zip(&self.eigenvalues) {
            *ci *= lam.powf(alpha);
        }
        (&self.eigenvectors * c).iter().copied().collect()
    }

    /// Dense `L^α`.
    pub fn power(&self, alpha: f64) -> DMatrix<f64> {
        let n = self.dim();
        let scaled = DMatrix::from_fn(n, n, |i, j| self.eigenvectors[(i, j)] * self.eigenvalues[j].powf(alpha));
        let vt_m = DMatrix::from_fn(n, n, |i, j| self.eigenvectors[(j, i)] * self.volumes[j]);
        scaled * vt_m
    }

    /// Maximum deviation of `VᵀMV` from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let n = self.dim();
        let mv = DMatrix::from_fn(n, n, |i, j| self.volumes[i] * self.eigenvectors[(i, j)]);
        let g = self.eigenvectors.tr_mul(&mv);
        (g - DMatrix::identity(n, n)).amax()
    }
}

/// `‖L^{s/2} u‖` in the volume-weighted inner product.
pub fn fractional_norm(u: &[f64], s: f64, scale: &ScaleOperator) -> f64 {
    if s == 0.0 {
        return u
            .iter()
            .zip(&scale.volumes)
            .map(|(u, v)| v * u * u)
            .sum::<f64>()
            .sqrt();
    }
    scale
        .coefficients(u)
        .iter()
        .zip(&scale.eigenvalues)
        .map(|(c, lam)| lam.powf(s) * c * c)
        .sum::<f64>()
        .sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScanPoint {
    pub s: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

/// Operator in eigen coordinates, `VᵀAV`, reused across all `s`.
pub struct ConjugatedOperator<'a> {
    core: DMatrix<f64>,
    scale: &'a ScaleOperator,
}

impl<'a> ConjugatedOperator<'a> {
    pub fn new(a: &SparseMatrix, scale: &'a ScaleOperator) -> Result<Self> {
        if a.dim() != scale.dim() {
            return Err(Error::InvalidInput("operator and scale have different sizes".into()));
        }
        let av = a.to_dense() * &scale.eigenvectors;
        Ok(ConjugatedOperator {
            core: scale.eigenvectors.tr_mul(&av),
            scale,
        })
    }

    /// `Λ^{(s−1)/2} VᵀAV Λ^{−(1+s)/2}`.
    pub fn at(&self, s: f64) -> DMatrix<f64> {
        let lam = &self.scale.eigenvalues;
        let left: Vec<f64> = lam.iter().map(|l| l.powf(0.5 * (s - 1.0))).collect();
        let right: Vec<f64> = lam.iter().map(|l| l.powf(-0.5 * (1.0 + s))).collect();
        DMatrix::from_fn(lam.len(), lam.len(), |i, j| left[i] * self.core[(i, j)] * right[j])
    }

    pub fn singular_range(&self, s: f64) -> Result<ScanPoint> {
        let sv = self
            .at(s)
            .try_svd(false, false, 1e-15, 0)
            .ok_or_else(|| Error::solver("extrapolation", format!("SVD did not converge at s = {s}")))?
            .singular_values;
        Ok(ScanPoint {
            s,
            sigma_min: sv.min(),
            sigma_max: sv.max(),
        })
    }
}

fn check_grid(tau: f64, s_grid: &[f64]) -> Result<()> {
    if !(tau > 0.0 && tau < 0.5) {
        return Err(Error::InvalidInput(format!("tau must lie in (0, 1/2), got {tau}")));
    }
    if let Some(s) = s_grid.iter().find(|s| s.abs() > tau * (1.0 + 1e-12)) {
        return Err(Error::InvalidInput(format!("grid point {s} outside [-tau, tau]")));
    }
    Ok(())
}

/// `n` equispaced points on `[−τ, τ]`.
pub fn symmetric_grid(tau: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![0.0];
    }
    (0..n)
        .map(|i| -tau + 2.0 * tau * i as f64 / (n - 1) as f64)
        .map(|s| if s.abs() < 1e-15 * tau { 0.0 } else { s })
        .collect()
}

pub fn scan_invertibility(a: &SparseMatrix, scale: &ScaleOperator, tau: f64, s_grid: &[f64]) -> Result<Vec<ScanPoint>> {
    check_grid(tau, s_grid)?;
    let op = ConjugatedOperator::new(a, scale)?;
    s_grid.iter().map(|&s| op.singular_range(s)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportStatus {
    Pass,
    Fail,
    /// `κ` below threshold; interval checks skipped.
    Degenerate,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReportPoint {
    pub point: ScanPoint,
    pub in_predicted_interval: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SneibergReport {
    pub tau: f64,
    pub kappa: f64,
    pub m0: f64,
    pub m1: f64,
    pub radius: f64,
    pub inverse_bound: f64,
    pub s_bar: f64,
    pub points: Vec<ReportPoint>,
    /// `σ_min > 0` on the predicted interval.
    pub positive_check: Option<bool>,
    /// `σ_min ≥ κ/8` on the predicted interval.
    pub inverse_check: Option<bool>,
    /// Largest `|s|` such that `σ_min ≥ κ/8` on every grid point with `|s'| ≤ |s|`.
    pub observed_extent: Option<f64>,
    pub status: ReportStatus,
}

pub fn verify_extrapolation(a: &SparseMatrix, scale: &ScaleOperator, tau: f64, s_grid: &[f64]) -> Result<SneibergReport> {
    check_grid(tau, s_grid)?;
    let op = ConjugatedOperator::new(a, scale)?;
    let kappa = op.singular_range(0.0)?.sigma_min;
    let m0 = op.singular_range(tau)?.sigma_max;
    let m1 = op.singular_range(-tau)?.sigma_max;
    let scan: Vec<ScanPoint> = s_grid.iter().map(|&s| op.singular_range(s)).collect::<Result<_>>()?;

    if kappa < KAPPA_THRESHOLD {
        return Ok(SneibergReport {
            tau,
            kappa,
            m0,
            m1,
            radius: 0.0,
            inverse_bound: f64::INFINITY,
            s_bar: 0.0,
            points: scan
                .into_iter()
                .map(|point| ReportPoint { point, in_predicted_interval: false })
                .collect(),
            positive_check: None,
            inverse_check: None,
            observed_extent: None,
            status: ReportStatus::Degenerate,
        });
    }

    let (radius, inverse_bound) = sneiberg_radius(&SneibergInput { theta: 0.5, kappa, m0, m1 })?;
    let s_bar = 2.0 * tau * radius;
    let points: Vec<ReportPoint> = scan
        .into_iter()
        .map(|point| ReportPoint {
            in_predicted_interval: point.s.abs() < s_bar,
            point,
        })
        .collect();
    let inside = || points.iter().filter(|p| p.in_predicted_interval);
    let positive = inside().all(|p| p.point.sigma_min > 0.0);
    let bounded = inside().all(|p| p.point.sigma_min >= kappa / 8.0);

    let mut by_distance: Vec<&ScanPoint> = points.iter().map(|p| &p.point).collect();
    by_distance.sort_by(|a, b| a.s.abs().total_cmp(&b.s.abs()));
    let observed_extent = by_distance
        .iter()
        .take_while(|p| p.sigma_min >= kappa / 8.0)
        .last()
        .map(|p| p.s.abs());

    Ok(SneibergReport {
        tau,
        kappa,
        m0,
        m1,
        radius,
        inverse_bound,
        s_bar,
        points,
        positive_check: Some(positive),
        inverse_check: Some(bounded),
        observed_extent,
        status: if positive && bounded { ReportStatus::Pass } else { ReportStatus::Fail },
    })
}

impl SneibergReport {
    pub fn points_in_interval(&self) -> usize {
        self.points.iter().filter(|p| p.in_predicted_interval).count()
    }

    pub fn to_text(&self) -> String {
        let check = |c: Option<bool>| match c {
            Some(true) => "pass",
            Some(false) => "FAIL",
            None => "skipped",
        };
        let mut out = String::new();
        let _ = writeln!(out, "status            {:?}", self.status);
        let _ = writeln!(out, "tau               {}", self.tau);
        let _ = writeln!(out, "kappa = smin(0)   {:.12e}", self.kappa);
        let _ = writeln!(out, "M0 = smax(+tau)   {:.12e}", self.m0);
        let _ = writeln!(out, "M1 = smax(-tau)   {:.12e}", self.m1);
        let _ = writeln!(out, "radius            {:.12e}", self.radius);
        let _ = writeln!(out, "inverse bound     {:.12e}", self.inverse_bound);
        let _ = writeln!(out, "s_bar = 2 tau r   {:.12e}", self.s_bar);
        let _ = writeln!(out, "grid points in (-s_bar, s_bar): {} of {}", self.points_in_interval(), self.points.len());
        let _ = writeln!(out, "check smin > 0        {}", check(self.positive_check));
        let _ = writeln!(out, "check smin >= kappa/8 {}", check(self.inverse_check));
        match self.observed_extent {
            Some(e) => {
                let _ = writeln!(out, "smin >= kappa/8 observed for |s| <= {e}");
            }
            None => {
                let _ = writeln!(out, "smin >= kappa/8 observed nowhere on the grid");
            }
        }
        let _ = writeln!(out, "kappa threshold   {KAPPA_THRESHOLD:e}");
        out
    }

    /// Columns `s, sigma_min, sigma_max, in_predicted_interval`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let csv_err = |e: csv::Error| Error::internal("extrapolation", format!("CSV write: {e}"));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["s", "sigma_min", "sigma_max", "in_predicted_interval"])
            .map_err(csv_err)?;
        for p in &self.points {
            w.write_record([
                p.point.s.to_string(),
                p.point.sigma_min.to_string(),
                p.point.sigma_max.to_string(),
                p.in_predicted_interval.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()
            .map_err(|e| Error::internal("extrapolation", format!("CSV flush: {e}")))?;
        Ok(())
    }
}

/// The golden operator: `ρ = 1` left of `x = 0.5`, `ρ = 100` right of it,
/// zero Dirichlet data at both ends.
pub fn discontinuous_rho_case(n: usize, contrast: f64) -> Result<(Mesh, SparseMatrix)> {
    use crate::fields::make_piecewise_coefficient;
    use crate::mesh::{build_tensor_mesh, classify_boundary, Region};
    let mesh = build_tensor_mesh(1, &[(0.0, 1.0)], &[n])?;
    let mesh = classify_boundary(&mesh, &[Region::plane(1, 0, 0.0), Region::plane(1, 0, 1.0)], &[])?;
    let rho = make_piecewise_coefficient(
        &mesh,
        &[
            (Region::all(1), SymTensor::scalar(1.0)),
            (Region::new(&[0.5], &[1.0]), SymTensor::scalar(contrast)),
        ],
    )?;
    let a = assemble_general_operator(&mesh, &GeneralOperatorSpec::principal(&mesh, rho))?;
    Ok((mesh, a))
}
