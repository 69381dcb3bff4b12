//! Material coefficients, Robin data and doping.
//!
//! Coefficients are piecewise constant per cell. In one dimension a tensor is
//! a positive scalar; in two dimensions it is a symmetric positive-definite
//! 2x2 matrix.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::mesh::{FaceCells, Mesh, Region};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymTensor {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl SymTensor {
    pub fn scalar(value: f64) -> Self {
        SymTensor {
            xx: value,
            xy: 0.0,
            yy: value,
        }
    }

    pub fn diagonal(xx: f64, yy: f64) -> Self {
        SymTensor { xx, xy: 0.0, yy }
    }

    pub fn from_matrix(m: [[f64; 2]; 2]) -> Result<Self> {
        if m[0][1] != m[1][0] {
            return Err(Error::InvalidMaterial(format!(
                "tensor {m:?} is not symmetric"
            )));
        }
        Ok(SymTensor {
            xx: m[0][0],
            xy: m[0][1],
            yy: m[1][1],
        })
    }

    /// Eigenvalues in ascending order. In 1D only `xx` is meaningful.
    pub fn eigenvalues(&self, dimension: usize) -> (f64, f64) {
        if dimension == 1 {
            return (self.xx, self.xx);
        }
        let mean = 0.5 * (self.xx + self.yy);
        let radius = (0.25 * (self.xx - self.yy).powi(2) + self.xy * self.xy).sqrt();
        (mean - radius, mean + radius)
    }

    /// Normal-normal component for a face normal to `axis`.
    pub fn normal(&self, axis: usize) -> f64 {
        if axis == 0 {
            self.xx
        } else {
            self.yy
        }
    }

    fn validate(&self, dimension: usize) -> Result<()> {
        let finite = self.xx.is_finite() && self.xy.is_finite() && self.yy.is_finite();
        let (lo, _) = self.eigenvalues(dimension);
        if !finite || !(lo > 0.0) {
            return Err(Error::InvalidMaterial(format!(
                "tensor {self:?} is not positive definite (smallest eigenvalue {lo})"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientField {
    pub dimension: usize,
    pub tensors: Vec<SymTensor>,
}

impl CoefficientField {
    pub fn uniform(mesh: &Mesh, value: SymTensor) -> Result<Self> {
        value.validate(mesh.dimension)?;
        Ok(CoefficientField {
            dimension: mesh.dimension,
            tensors: vec![value; mesh.num_cells()],
        })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }
}

/// Assign `value` to every cell whose centre lies in the region; later entries
/// override earlier ones and every cell must be covered.
pub fn make_piecewise_coefficient(
    mesh: &Mesh,
    entries: &[(Region, SymTensor)],
) -> Result<CoefficientField> {
    let mut tensors: Vec<Option<SymTensor>> = vec![None; mesh.num_cells()];
    for (region, value) in entries {
        region
            .check_dimension(mesh.dimension)
            .map_err(|e| Error::InvalidMaterial(e.to_string()))?;
        value.validate(mesh.dimension)?;
        for cell in mesh.cells_in(region) {
            tensors[cell] = Some(*value);
        }
    }
    let tensors = tensors
        .into_iter()
        .enumerate()
        .map(|(cell, t)| {
            t.ok_or_else(|| {
                Error::InvalidMaterial(format!(
                    "cell {cell} at {:?} is not covered by any material region",
                    &mesh.cell_centers[cell][..mesh.dimension]
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CoefficientField {
        dimension: mesh.dimension,
        tensors,
    })
}

/// Smallest and largest eigenvalue over all cells.
pub fn ellipticity_bounds(field: &CoefficientField) -> (f64, f64) {
    field
        .tensors
        .iter()
        .map(|t| t.eigenvalues(field.dimension))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, b)| {
            (lo.min(a), hi.max(b))
        })
}

/// Robin coefficient and datum per face; only Robin faces are read.
#[derive(Clone, Debug, PartialEq)]
pub struct RobinData {
    pub coefficient: Vec<f64>,
    pub datum: Vec<f64>,
}

impl RobinData {
    pub fn uniform(mesh: &Mesh, coefficient: f64, datum: f64) -> Result<Self> {
        let data = RobinData {
            coefficient: vec![coefficient; mesh.faces.len()],
            datum: vec![datum; mesh.faces.len()],
        };
        data.validate(mesh)?;
        Ok(data)
    }

    /// Uniform defaults overridden on the faces inside each region.
    pub fn from_regions(
        mesh: &Mesh,
        coefficient: f64,
        datum: f64,
        overrides: &[(Region, f64, f64)],
    ) -> Result<Self> {
        let mut data = RobinData {
            coefficient: vec![coefficient; mesh.faces.len()],
            datum: vec![datum; mesh.faces.len()],
        };
        for (region, c, d) in overrides {
            region.check_dimension(mesh.dimension)?;
            for f in mesh.faces_in(region) {
                data.coefficient[f] = *c;
                data.datum[f] = *d;
            }
        }
        data.validate(mesh)?;
        Ok(data)
    }

    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        if self.coefficient.len() != mesh.faces.len() || self.datum.len() != mesh.faces.len() {
            return Err(Error::config("fields", "Robin data does not match the face count"));
        }
        for f in mesh.robin_faces() {
            let (c, d) = (self.coefficient[f], self.datum[f]);
            if !(c >= 0.0 && c.is_finite()) || !d.is_finite() {
                return Err(Error::InvalidMaterial(format!(
                    "Robin face {f}: coefficient {c} must be finite and non-negative, datum {d} finite"
                )));
            }
        }
        Ok(())
    }
}

/// Bulk doping per cell plus sheet doping on interface faces.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct DopingProfile {
    pub bulk: Vec<f64>,
    pub surface: BTreeMap<usize, f64>,
}

impl DopingProfile {
    pub fn zero(mesh: &Mesh) -> Self {
        DopingProfile {
            bulk: vec![0.0; mesh.num_cells()],
            surface: BTreeMap::new(),
        }
    }

    pub fn uniform(mesh: &Mesh, value: f64) -> Self {
        DopingProfile {
            bulk: vec![value; mesh.num_cells()],
            surface: BTreeMap::new(),
        }
    }

    /// Bulk regions (later entries override, uncovered cells are zero) and
    /// sheet densities applied to the interface faces inside each region.
    pub fn from_regions(
        mesh: &Mesh,
        bulk: &[(Region, f64)],
        surface: &[(Region, f64)],
    ) -> Result<Self> {
        let mut profile = DopingProfile::zero(mesh);
        for (region, value) in bulk {
            region.check_dimension(mesh.dimension)?;
            for cell in mesh.cells_in(region) {
                profile.bulk[cell] = *value;
            }
        }
        for (region, value) in surface {
            region.check_dimension(mesh.dimension)?;
            let faces: Vec<_> = mesh
                .faces_in(region)
                .into_iter()
                .filter(|&f| mesh.faces[f].interface)
                .collect();
            if faces.is_empty() {
                return Err(Error::config(
                    "fields",
                    format!(
                        "surface doping region {:?}..{:?} contains no interface face",
                        region.lower, region.upper
                    ),
                ));
            }
            for f in faces {
                profile.surface.insert(f, *value);
            }
        }
        profile.validate(mesh)?;
        Ok(profile)
    }

    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        if self.bulk.len() != mesh.num_cells() {
            return Err(Error::config("fields", "bulk doping does not match the cell count"));
        }
        if let Some(x) = self.bulk.iter().find(|x| !x.is_finite()) {
            return Err(Error::config("fields", format!("non-finite bulk doping {x}")));
        }
        for (&f, &value) in &self.surface {
            if !value.is_finite() {
                return Err(Error::config("fields", format!("non-finite sheet doping on face {f}")));
            }
            if !mesh.faces.get(f).is_some_and(|face| face.interface) {
                return Err(Error::config(
                    "fields",
                    format!("sheet doping on face {f}, which is not an interface face"),
                ));
            }
        }
        Ok(())
    }

    /// Total charge represented by the profile.
    pub fn total(&self, mesh: &Mesh) -> f64 {
        let bulk: f64 = self
            .bulk
            .iter()
            .zip(&mesh.cell_volumes)
            .map(|(d, v)| d * v)
            .sum();
        let sheet: f64 = self.surface.iter().map(|(&f, d)| d * mesh.faces[f].area).sum();
        bulk + sheet
    }
}

/// Integrated doping per cell; sheet charge is split equally between the two
/// cells sharing the interface face.
pub fn doping_load_vector(mesh: &Mesh, doping: &DopingProfile) -> Result<Vec<f64>> {
    doping.validate(mesh)?;
    let mut load: Vec<f64> = doping
        .bulk
        .iter()
        .zip(&mesh.cell_volumes)
        .map(|(d, v)| d * v)
        .collect();
    for (&f, &density) in &doping.surface {
        let face = &mesh.faces[f];
        if let FaceCells::Internal { lower, upper } = face.cells {
            let half = 0.5 * density * face.area;
            load[lower] += half;
            load[upper] += half;
        }
    }
    Ok(load)
}
