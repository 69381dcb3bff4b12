//! Axis-aligned tensor-product meshes in one and two dimensions.
//!
//! Cells are numbered lexicographically (`i + nx * j`). Faces carry their
//! adjacent cells, the axis they are normal to, their area and a boundary
//! label. Internal faces may additionally be flagged as interface faces,
//! which is how internal surfaces carrying sheet doping or jump sources are
//! represented.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryLabel {
    Dirichlet,
    Robin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Lower,
    Upper,
}

impl Side {
    /// Sign of the outward normal along the face axis.
    pub fn sign(self) -> f64 {
        match self {
            Side::Lower => -1.0,
            Side::Upper => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaceCells {
    /// Shared by two cells; the normal points from `lower` to `upper`.
    Internal { lower: usize, upper: usize },
    /// On the domain boundary; `side` says which end of the cell it closes.
    Boundary { cell: usize, side: Side },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Face {
    pub cells: FaceCells,
    pub axis: usize,
    pub area: f64,
    pub center: [f64; 2],
    /// Boundary faces carry exactly one label, internal faces none.
    pub labels: Vec<BoundaryLabel>,
    pub interface: bool,
}

impl Face {
    pub fn is_internal(&self) -> bool {
        matches!(self.cells, FaceCells::Internal { .. })
    }

    /// The label of a boundary face, if it has exactly one.
    pub fn label(&self) -> Option<BoundaryLabel> {
        match self.labels.as_slice() {
            [label] => Some(*label),
            _ => None,
        }
    }

    pub fn is_dirichlet(&self) -> bool {
        self.label() == Some(BoundaryLabel::Dirichlet)
    }

    pub fn is_robin(&self) -> bool {
        self.label() == Some(BoundaryLabel::Robin)
    }
}

/// Closed axis-aligned box used to select cells and faces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Region {
    pub fn new(lower: &[f64], upper: &[f64]) -> Self {
        Region {
            lower: lower.to_vec(),
            upper: upper.to_vec(),
        }
    }

    /// The plane `x[axis] == value` restricted to nothing else.
    pub fn plane(dimension: usize, axis: usize, value: f64) -> Self {
        let mut lower = vec![f64::NEG_INFINITY; dimension];
        let mut upper = vec![f64::INFINITY; dimension];
        lower[axis] = value;
        upper[axis] = value;
        Region { lower, upper }
    }

    /// Everything.
    pub fn all(dimension: usize) -> Self {
        Region {
            lower: vec![f64::NEG_INFINITY; dimension],
            upper: vec![f64::INFINITY; dimension],
        }
    }

    pub fn contains(&self, point: [f64; 2], dimension: usize, tol: f64) -> bool {
        (0..dimension).all(|axis| {
            let lo = self.lower.get(axis).copied().unwrap_or(f64::NEG_INFINITY);
            let hi = self.upper.get(axis).copied().unwrap_or(f64::INFINITY);
            point[axis] >= lo - tol && point[axis] <= hi + tol
        })
    }

    pub(crate) fn check_dimension(&self, dimension: usize) -> Result<()> {
        if self.lower.len() != dimension || self.upper.len() != dimension {
            return Err(Error::InvalidGeometry(format!(
                "region {:?}..{:?} does not have {} coordinates",
                self.lower, self.upper, dimension
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub dimension: usize,
    pub counts: [usize; 2],
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub spacing: [f64; 2],
    pub cell_centers: Vec<[f64; 2]>,
    pub cell_volumes: Vec<f64>,
    pub faces: Vec<Face>,
    /// Face indices bounding each cell.
    pub cell_faces: Vec<Vec<usize>>,
}

/// Uniform tensor grid on `extents[axis] = (lo, hi)` with `counts[axis]` cells.
///
/// All boundary faces start out labelled Robin and no face is an interface.
pub fn build_tensor_mesh(dimension: usize, extents: &[(f64, f64)], counts: &[usize]) -> Result<Mesh> {
    if dimension != 1 && dimension != 2 {
        return Err(Error::InvalidGeometry(format!(
            "dimension must be 1 or 2, got {dimension}"
        )));
    }
    if extents.len() != dimension || counts.len() != dimension {
        return Err(Error::InvalidGeometry(format!(
            "expected {dimension} extents and counts, got {} and {}",
            extents.len(),
            counts.len()
        )));
    }
    let mut n = [1usize; 2];
    let mut lower = [0.0; 2];
    let mut upper = [1.0; 2];
    for axis in 0..dimension {
        let (lo, hi) = extents[axis];
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidGeometry(format!(
                "extent along axis {axis} must be finite and increasing, got ({lo}, {hi})"
            )));
        }
        if counts[axis] < 2 {
            return Err(Error::InvalidGeometry(format!(
                "need at least 2 cells along axis {axis}, got {}",
                counts[axis]
            )));
        }
        n[axis] = counts[axis];
        lower[axis] = lo;
        upper[axis] = hi;
    }
    let mut spacing = [1.0; 2];
    for axis in 0..dimension {
        spacing[axis] = (upper[axis] - lower[axis]) / n[axis] as f64;
    }
    let (nx, ny) = (n[0], n[1]);
    let (hx, hy) = (spacing[0], spacing[1]);

    let mut cell_centers = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let x = lower[0] + (i as f64 + 0.5) * hx;
            let y = if dimension == 2 {
                lower[1] + (j as f64 + 0.5) * hy
            } else {
                0.0
            };
            cell_centers.push([x, y]);
        }
    }
    let volume = if dimension == 2 { hx * hy } else { hx };
    let cell_volumes = vec![volume; nx * ny];

    let mut faces = Vec::new();
    let mut cell_faces = vec![Vec::with_capacity(2 * dimension); nx * ny];
    let mut push = |face: Face, faces: &mut Vec<Face>| {
        let id = faces.len();
        match face.cells {
            FaceCells::Internal { lower, upper } => {
                cell_faces[lower].push(id);
                cell_faces[upper].push(id);
            }
            FaceCells::Boundary { cell, .. } => cell_faces[cell].push(id),
        }
        faces.push(face);
    };

    // Faces normal to x.
    let area_x = if dimension == 2 { hy } else { 1.0 };
    for j in 0..ny {
        for i in 0..=nx {
            let x = if i == nx { upper[0] } else { lower[0] + i as f64 * hx };
            let y = cell_centers[j * nx][1];
            let (cells, labels) = if i == 0 {
                let side = Side::Lower;
                (FaceCells::Boundary { cell: j * nx, side }, vec![BoundaryLabel::Robin])
            } else if i == nx {
                let side = Side::Upper;
                let cell = j * nx + nx - 1;
                (FaceCells::Boundary { cell, side }, vec![BoundaryLabel::Robin])
            } else {
                let lower = j * nx + i - 1;
                (FaceCells::Internal { lower, upper: lower + 1 }, Vec::new())
            };
            push(
                Face {
                    cells,
                    axis: 0,
                    area: area_x,
                    center: [x, y],
                    labels,
                    interface: false,
                },
                &mut faces,
            );
        }
    }
    if dimension == 2 {
        for i in 0..nx {
            for j in 0..=ny {
                let y = if j == ny { upper[1] } else { lower[1] + j as f64 * hy };
                let x = cell_centers[i][0];
                let (cells, labels) = if j == 0 {
                    let side = Side::Lower;
                    (FaceCells::Boundary { cell: i, side }, vec![BoundaryLabel::Robin])
                } else if j == ny {
                    let side = Side::Upper;
                    let cell = (ny - 1) * nx + i;
                    (FaceCells::Boundary { cell, side }, vec![BoundaryLabel::Robin])
                } else {
                    let lower = (j - 1) * nx + i;
                    (FaceCells::Internal { lower, upper: lower + nx }, Vec::new())
                };
                push(
                    Face {
                        cells,
                        axis: 1,
                        area: hx,
                        center: [x, y],
                        labels,
                        interface: false,
                    },
                    &mut faces,
                );
            }
        }
    }

    Ok(Mesh {
        dimension,
        counts: n,
        lower,
        upper,
        spacing,
        cell_centers,
        cell_volumes,
        faces,
        cell_faces,
    })
}

/// Relabel boundary faces inside any `dirichlet` box as Dirichlet and flag
/// internal faces inside any `interfaces` box as interface faces.
pub fn classify_boundary(mesh: &Mesh, dirichlet: &[Region], interfaces: &[Region]) -> Result<Mesh> {
    for region in dirichlet.iter().chain(interfaces) {
        region.check_dimension(mesh.dimension)?;
    }
    let tol = mesh.geometric_tolerance();
    let mut out = mesh.clone();
    for face in &mut out.faces {
        let inside = |regions: &[Region]| {
            regions
                .iter()
                .any(|r| r.contains(face.center, mesh.dimension, tol))
        };
        if face.is_internal() {
            if inside(interfaces) {
                face.interface = true;
            }
        } else if inside(dirichlet) {
            face.labels = vec![BoundaryLabel::Dirichlet];
        }
    }
    if !out.faces.iter().any(Face::is_dirichlet) {
        return Err(Error::InvalidGeometry(
            "Dirichlet selectors match no boundary face".into(),
        ));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub enum MeshViolation {
    NonPositiveVolume { cell: usize, volume: f64 },
    NonPositiveArea { face: usize, area: f64 },
    BoundaryLabelCount { face: usize, count: usize },
    LabelledInternalFace { face: usize },
    BoundaryInterface { face: usize },
    NoDirichletFace,
    FaceIncidence { face: usize, expected: usize, found: usize },
    CellNotClosed { cell: usize },
}

impl fmt::Display for MeshViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeshViolation::NonPositiveVolume { cell, volume } => {
                write!(f, "cell {cell} has non-positive volume {volume}")
            }
            MeshViolation::NonPositiveArea { face, area } => {
                write!(f, "face {face} has non-positive area {area}")
            }
            MeshViolation::BoundaryLabelCount { face, count } => {
                write!(f, "boundary face {face} carries {count} labels instead of one")
            }
            MeshViolation::LabelledInternalFace { face } => {
                write!(f, "internal face {face} carries a boundary label")
            }
            MeshViolation::BoundaryInterface { face } => {
                write!(f, "interface face {face} is on the boundary")
            }
            MeshViolation::NoDirichletFace => write!(f, "no Dirichlet boundary face"),
            MeshViolation::FaceIncidence {
                face,
                expected,
                found,
            } => write!(f, "face {face} is listed by {found} cells, expected {expected}"),
            MeshViolation::CellNotClosed { cell } => {
                write!(f, "faces of cell {cell} do not tile its boundary")
            }
        }
    }
}

/// Check the structural invariants; an empty report means the mesh is valid.
pub fn validate_mesh(mesh: &Mesh) -> Vec<MeshViolation> {
    let mut report = Vec::new();
    for (cell, &volume) in mesh.cell_volumes.iter().enumerate() {
        if !(volume > 0.0) {
            report.push(MeshViolation::NonPositiveVolume { cell, volume });
        }
    }
    let mut incidence = vec![0usize; mesh.faces.len()];
    for faces in &mesh.cell_faces {
        for &f in faces {
            if let Some(count) = incidence.get_mut(f) {
                *count += 1;
            }
        }
    }
    for (id, face) in mesh.faces.iter().enumerate() {
        if !(face.area > 0.0) {
            report.push(MeshViolation::NonPositiveArea { face: id, area: face.area });
        }
        if face.is_internal() {
            if !face.labels.is_empty() {
                report.push(MeshViolation::LabelledInternalFace { face: id });
            }
        } else {
            if face.labels.len() != 1 {
                report.push(MeshViolation::BoundaryLabelCount {
                    face: id,
                    count: face.labels.len(),
                });
            }
            if face.interface {
                report.push(MeshViolation::BoundaryInterface { face: id });
            }
        }
        let expected = if face.is_internal() { 2 } else { 1 };
        if incidence[id] != expected {
            report.push(MeshViolation::FaceIncidence {
                face: id,
                expected,
                found: incidence[id],
            });
        }
    }
    if !mesh.faces.iter().any(Face::is_dirichlet) {
        report.push(MeshViolation::NoDirichletFace);
    }
    for (cell, faces) in mesh.cell_faces.iter().enumerate() {
        if !cell_is_closed(mesh, cell, faces) {
            report.push(MeshViolation::CellNotClosed { cell });
        }
    }
    report
}

fn cell_is_closed(mesh: &Mesh, cell: usize, faces: &[usize]) -> bool {
    let volume = mesh.cell_volumes[cell];
    for axis in 0..mesh.dimension {
        // Area on each side must equal the cross-section normal to `axis`.
        let section = if mesh.dimension == 1 {
            1.0
        } else {
            volume / mesh.spacing[axis]
        };
        let mut sides = [0.0f64; 2];
        for &f in faces {
            let Some(face) = mesh.faces.get(f) else {
                return false;
            };
            if face.axis != axis {
                continue;
            }
            let side = match face.cells {
                FaceCells::Internal { upper, .. } if upper == cell => Side::Lower,
                FaceCells::Internal { lower, .. } if lower == cell => Side::Upper,
                FaceCells::Boundary { cell: c, side } if c == cell => side,
                _ => return false,
            };
            sides[(side == Side::Upper) as usize] += face.area;
        }
        let tol = 1e-12 * section.max(1.0);
        if sides.iter().any(|s| (s - section).abs() > tol) {
            return false;
        }
    }
    true
}

impl Mesh {
    pub fn num_cells(&self) -> usize {
        self.cell_volumes.len()
    }

    /// Lebesgue measure of the domain.
    pub fn measure(&self) -> f64 {
        (0..self.dimension)
            .map(|axis| self.upper[axis] - self.lower[axis])
            .product()
    }

    pub(crate) fn geometric_tolerance(&self) -> f64 {
        let h = (0..self.dimension)
            .map(|a| self.spacing[a])
            .fold(f64::INFINITY, f64::min);
        1e-6 * h
    }

    /// Distances from the adjacent cell centres to the face centre.
    ///
    /// For a boundary face the second entry is zero.
    pub fn face_half_distances(&self, face: &Face) -> (f64, f64) {
        let a = face.axis;
        match face.cells {
            FaceCells::Internal { lower, upper } => (
                (face.center[a] - self.cell_centers[lower][a]).abs(),
                (self.cell_centers[upper][a] - face.center[a]).abs(),
            ),
            FaceCells::Boundary { cell, .. } => {
                ((face.center[a] - self.cell_centers[cell][a]).abs(), 0.0)
            }
        }
    }

    pub fn dirichlet_faces(&self) -> impl Iterator<Item = usize> + '_ {
        self.faces
            .iter()
            .enumerate()
            .filter(|(_, f)| f.is_dirichlet())
            .map(|(i, _)| i)
    }

    pub fn robin_faces(&self) -> impl Iterator<Item = usize> + '_ {
        self.faces
            .iter()
            .enumerate()
            .filter(|(_, f)| f.is_robin())
            .map(|(i, _)| i)
    }

    pub fn interface_faces(&self) -> impl Iterator<Item = usize> + '_ {
        self.faces
            .iter()
            .enumerate()
            .filter(|(_, f)| f.interface)
            .map(|(i, _)| i)
    }

    pub fn boundary_face_count(&self) -> usize {
        self.faces.iter().filter(|f| !f.is_internal()).count()
    }

    pub fn internal_face_count(&self) -> usize {
        self.faces.iter().filter(|f| f.is_internal()).count()
    }

    /// Cells whose centre lies in `region`.
    pub fn cells_in(&self, region: &Region) -> Vec<usize> {
        let tol = self.geometric_tolerance();
        (0..self.num_cells())
            .filter(|&c| region.contains(self.cell_centers[c], self.dimension, tol))
            .collect()
    }

    /// Faces whose centre lies in `region`.
    pub fn faces_in(&self, region: &Region) -> Vec<usize> {
        let tol = self.geometric_tolerance();
        (0..self.faces.len())
            .filter(|&f| region.contains(self.faces[f].center, self.dimension, tol))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_1d(n: usize) -> Mesh {
        build_tensor_mesh(1, &[(0.0, 1.0)], &[n]).unwrap()
    }

    #[test]
    fn uniform_1d_partition() {
        let mesh = unit_1d(4);
        assert_eq!(mesh.num_cells(), 4);
        assert!(mesh.cell_volumes.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert_eq!(mesh.boundary_face_count(), 2);
        assert_eq!(mesh.internal_face_count(), 3);
        assert!(mesh.faces.iter().all(|f| !f.interface));
        assert_eq!(mesh.robin_faces().count(), 2);
    }

    #[test]
    fn counts_2d() {
        let mesh = build_tensor_mesh(2, &[(0.0, 1.0), (0.0, 1.0)], &[2, 2]).unwrap();
        assert_eq!(mesh.num_cells(), 4);
        assert_eq!(mesh.boundary_face_count(), 8);
        assert_eq!(mesh.internal_face_count(), 4);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(matches!(
            build_tensor_mesh(1, &[(0.0, 1.0)], &[0]),
            Err(Error::InvalidGeometry(_))
        ));
        assert!(build_tensor_mesh(1, &[(1.0, 0.0)], &[4]).is_err());
        assert!(build_tensor_mesh(1, &[(0.0, 0.0)], &[4]).is_err());
        assert!(build_tensor_mesh(3, &[(0.0, 1.0)], &[4]).is_err());
    }

    #[test]
    fn classify_both_ends() {
        let mesh = unit_1d(4);
        let d = [Region::plane(1, 0, 0.0), Region::plane(1, 0, 1.0)];
        let mesh = classify_boundary(&mesh, &d, &[]).unwrap();
        assert_eq!(mesh.dirichlet_faces().count(), 2);
        assert_eq!(mesh.robin_faces().count(), 0);
    }

    #[test]
    fn classify_with_interface() {
        let mesh = unit_1d(4);
        let mesh = classify_boundary(
            &mesh,
            &[Region::plane(1, 0, 0.0)],
            &[Region::plane(1, 0, 0.5)],
        )
        .unwrap();
        assert_eq!(mesh.dirichlet_faces().count(), 1);
        assert_eq!(mesh.robin_faces().count(), 1);
        let interfaces: Vec<_> = mesh.interface_faces().collect();
        assert_eq!(interfaces.len(), 1);
        let face = &mesh.faces[interfaces[0]];
        assert_eq!(face.cells, FaceCells::Internal { lower: 1, upper: 2 });
        assert!((face.center[0] - 0.5).abs() < 1e-15);
        assert!(validate_mesh(&mesh).is_empty());
    }

    #[test]
    fn empty_dirichlet_selector_is_rejected() {
        let mesh = unit_1d(4);
        let err = classify_boundary(&mesh, &[Region::plane(1, 0, 0.3)], &[]).unwrap_err();
        assert!(matches!(err, Error::InvalidGeometry(_)));
    }

    #[test]
    fn validation_reports() {
        let mesh = classify_boundary(&unit_1d(4), &[Region::plane(1, 0, 0.0)], &[]).unwrap();
        assert!(validate_mesh(&mesh).is_empty());

        let mut corrupt = mesh.clone();
        let robin = corrupt.robin_faces().next().unwrap();
        corrupt.faces[robin].labels.push(BoundaryLabel::Dirichlet);
        assert_eq!(
            validate_mesh(&corrupt),
            vec![MeshViolation::BoundaryLabelCount { face: robin, count: 2 }]
        );

        let fresh = unit_1d(4);
        assert_eq!(validate_mesh(&fresh), vec![MeshViolation::NoDirichletFace]);
    }

    #[test]
    fn corrupt_geometry_is_reported() {
        let mut mesh = classify_boundary(&unit_1d(3), &[Region::plane(1, 0, 0.0)], &[]).unwrap();
        mesh.cell_volumes[1] = 0.0;
        mesh.faces[1].interface = false;
        mesh.faces[0].interface = true;
        let report = validate_mesh(&mesh);
        assert!(report.contains(&MeshViolation::NonPositiveVolume { cell: 1, volume: 0.0 }));
        assert!(report.contains(&MeshViolation::BoundaryInterface { face: 0 }));
    }

    #[test]
    fn two_dimensional_cells_are_closed() {
        let mesh = build_tensor_mesh(2, &[(0.0, 2.0), (-1.0, 1.0)], &[3, 5]).unwrap();
        let left = Region::new(&[0.0, -1.0], &[0.0, 1.0]);
        let mesh = classify_boundary(&mesh, &[left], &[]).unwrap();
        assert_eq!(mesh.dirichlet_faces().count(), 5);
        assert!(validate_mesh(&mesh).is_empty());
    }

    proptest! {
        #[test]
        fn built_and_classified_meshes_are_valid(
            lo in -5.0f64..5.0, len in 0.01f64..10.0, n in 2usize..40,
            lo_y in -5.0f64..5.0, len_y in 0.01f64..10.0, m in 2usize..20,
            two_d in any::<bool>(),
        ) {
            let (dim, extents, counts) = if two_d {
                (2, vec![(lo, lo + len), (lo_y, lo_y + len_y)], vec![n, m])
            } else {
                (1, vec![(lo, lo + len)], vec![n])
            };
            let mesh = build_tensor_mesh(dim, &extents, &counts).unwrap();
            let d = Region::plane(dim, 0, lo);
            let mesh = classify_boundary(&mesh, &[d], &[Region::all(dim)]).unwrap();
            prop_assert!(validate_mesh(&mesh).is_empty());
            let total: f64 = mesh.cell_volumes.iter().sum();
            prop_assert!((total - mesh.measure()).abs() <= 1e-12 * mesh.measure());
            for face in &mesh.faces {
                prop_assert!(!face.interface || face.is_internal());
                prop_assert!(face.is_internal() || face.label().is_some());
            }
        }
    }
}
