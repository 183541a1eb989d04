//! Structured Cartesian grids, per-cell rock properties, face
//! transmissibilities, and the plain-text per-cell field file format.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::units::MILLIDARCY_TO_M2;

/// An interior face between two adjacent cells.
///
/// `cell_i < cell_j` always holds; `d_i` and `d_j` are the distances from
/// each cell center to the face (half the spacing along the face normal).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face {
    pub cell_i: usize,
    pub cell_j: usize,
    pub area: f64,
    pub d_i: f64,
    pub d_j: f64,
}

/// A structured grid with uniform spacing along each axis.
///
/// Cells are numbered row-major with x fastest:
/// `index = ix + nx * (iy + ny * iz)`. Faces are stored grouped by axis
/// (all x-normal faces, then y-normal, then z-normal), each group in
/// ascending order of the lower cell index. This ordering is part of the
/// contract: it fixes assembly and summation order, so repeated runs are
/// bitwise reproducible.
#[derive(Debug, Clone)]
pub struct Grid {
    nx: usize,
    ny: usize,
    nz: usize,
    dx: f64,
    dy: f64,
    dz: f64,
    faces: Vec<Face>,
}

impl Grid {
    pub fn new(dims: (usize, usize, usize), spacing: (f64, f64, f64)) -> Result<Self> {
        let (nx, ny, nz) = dims;
        let (dx, dy, dz) = spacing;
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::invalid(format!(
                "grid dimensions must be positive, got {nx} x {ny} x {nz}"
            )));
        }
        if !(dx > 0.0 && dy > 0.0 && dz > 0.0)
            || !(dx.is_finite() && dy.is_finite() && dz.is_finite())
        {
            return Err(Error::invalid(format!(
                "cell spacing must be positive and finite, got {dx} x {dy} x {dz}"
            )));
        }
        let mut grid = Grid {
            nx,
            ny,
            nz,
            dx,
            dy,
            dz,
            faces: Vec::new(),
        };
        grid.build_faces();
        Ok(grid)
    }

    fn build_faces(&mut self) {
        let (nx, ny, nz) = (self.nx, self.ny, self.nz);
        let n_faces = (nx.saturating_sub(1)) * ny * nz
            + nx * (ny.saturating_sub(1)) * nz
            + nx * ny * (nz.saturating_sub(1));
        let mut faces = Vec::with_capacity(n_faces);
        let axes = [
            ((1usize, 0usize, 0usize), self.dy * self.dz, self.dx),
            ((0, 1, 0), self.dx * self.dz, self.dy),
            ((0, 0, 1), self.dx * self.dy, self.dz),
        ];
        for ((sx, sy, sz), area, spacing) in axes {
            for iz in 0..nz - sz {
                for iy in 0..ny - sy {
                    for ix in 0..nx - sx {
                        let i = self.cell_index(ix, iy, iz);
                        let j = self.cell_index(ix + sx, iy + sy, iz + sz);
                        faces.push(Face {
                            cell_i: i,
                            cell_j: j,
                            area,
                            d_i: 0.5 * spacing,
                            d_j: 0.5 * spacing,
                        });
                    }
                }
            }
        }
        self.faces = faces;
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }

    pub fn spacing(&self) -> (f64, f64, f64) {
        (self.dx, self.dy, self.dz)
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx * self.dy * self.dz
    }

    /// Flat index of the cell at zero-based coordinates (ix, iy, iz).
    pub fn cell_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        debug_assert!(ix < self.nx && iy < self.ny && iz < self.nz);
        ix + self.nx * (iy + self.ny * iz)
    }

    /// Inverse of [`Grid::cell_index`].
    pub fn cell_coords(&self, index: usize) -> (usize, usize, usize) {
        debug_assert!(index < self.n_cells());
        let ix = index % self.nx;
        let iy = (index / self.nx) % self.ny;
        let iz = index / (self.nx * self.ny);
        (ix, iy, iz)
    }

    /// Physical coordinates of a cell center, with the domain corner at the
    /// origin.
    pub fn cell_center(&self, index: usize) -> [f64; 3] {
        let (ix, iy, iz) = self.cell_coords(index);
        [
            (ix as f64 + 0.5) * self.dx,
            (iy as f64 + 0.5) * self.dy,
            (iz as f64 + 0.5) * self.dz,
        ]
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    /// Connectivity as (lower, upper) cell index pairs, in face order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.faces.iter().map(|f| (f.cell_i, f.cell_j))
    }
}

/// Per-cell rock properties for one realization.
///
/// Permeability is stored in millidarcy (the external unit); simulators
/// convert to m^2 when they build transmissibilities.
#[derive(Debug, Clone)]
pub struct RockRealization {
    pub perm_md: Vec<f64>,
    pub porosity: Vec<f64>,
}

impl RockRealization {
    pub fn new(perm_md: Vec<f64>, porosity: Vec<f64>) -> Result<Self> {
        if perm_md.len() != porosity.len() {
            return Err(Error::invalid(format!(
                "permeability has {} cells but porosity has {}",
                perm_md.len(),
                porosity.len()
            )));
        }
        if perm_md.is_empty() {
            return Err(Error::invalid("rock realization must cover at least one cell"));
        }
        for (c, &k) in perm_md.iter().enumerate() {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::invalid(format!(
                    "permeability must be positive and finite, cell {c} has {k}"
                )));
            }
        }
        for (c, &phi) in porosity.iter().enumerate() {
            if !(phi > 0.0 && phi <= 1.0) {
                return Err(Error::invalid(format!(
                    "porosity must lie in (0, 1], cell {c} has {phi}"
                )));
            }
        }
        Ok(RockRealization { perm_md, porosity })
    }

    /// Builds a realization from a permeability field and one porosity value
    /// shared by every cell.
    pub fn with_uniform_porosity(perm_md: Vec<f64>, porosity: f64) -> Result<Self> {
        let n = perm_md.len();
        RockRealization::new(perm_md, vec![porosity; n])
    }

    pub fn n_cells(&self) -> usize {
        self.perm_md.len()
    }
}

/// Transmissibility of a face from the two adjacent permeabilities in m^2,
/// including the fluid viscosity: half-transmissibilities
/// `T_c = k_c A / (mu d_c)` combined in series (harmonic mean).
pub fn face_transmissibility_si(k_i_m2: f64, k_j_m2: f64, face: &Face, viscosity: f64) -> f64 {
    let t_i = k_i_m2 * face.area / (viscosity * face.d_i);
    let t_j = k_j_m2 * face.area / (viscosity * face.d_j);
    t_i * t_j / (t_i + t_j)
}

/// Geometric part of a face transmissibility (no viscosity), from
/// permeabilities in millidarcy. Multiply by a phase mobility to get a flux
/// coefficient.
pub fn face_transmissibility_geometric(rock: &RockRealization, face: &Face) -> f64 {
    face_transmissibility_si(
        rock.perm_md[face.cell_i] * MILLIDARCY_TO_M2,
        rock.perm_md[face.cell_j] * MILLIDARCY_TO_M2,
        face,
        1.0,
    )
}

/// Face transmissibility for a single-phase fluid with the given viscosity,
/// from permeabilities in millidarcy.
pub fn face_transmissibility(rock: &RockRealization, face: &Face, viscosity: f64) -> f64 {
    face_transmissibility_si(
        rock.perm_md[face.cell_i] * MILLIDARCY_TO_M2,
        rock.perm_md[face.cell_j] * MILLIDARCY_TO_M2,
        face,
        viscosity,
    )
}

/// A named per-cell field read from a field file.
#[derive(Debug, Clone)]
pub struct FieldFile {
    pub name: String,
    pub dims: (usize, usize, usize),
    pub values: Vec<f64>,
}

/// Writes a per-cell field in the plain-text interchange format: a header
/// line `# field <name> <nx> <ny> <nz>` followed by one value per line in
/// row-major order (x fastest).
pub fn write_field(
    path: &Path,
    name: &str,
    dims: (usize, usize, usize),
    values: &[f64],
) -> Result<()> {
    let (nx, ny, nz) = dims;
    if values.len() != nx * ny * nz {
        return Err(Error::invalid(format!(
            "field has {} values but dimensions {nx} x {ny} x {nz} need {}",
            values.len(),
            nx * ny * nz
        )));
    }
    if name.is_empty() || name.contains(char::is_whitespace) {
        return Err(Error::invalid(format!(
            "field name must be nonempty without whitespace, got {name:?}"
        )));
    }
    let mut text = String::with_capacity(values.len() * 20 + 64);
    let _ = writeln!(text, "# field {name} {nx} {ny} {nz}");
    for v in values {
        let _ = writeln!(text, "{v}");
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a per-cell field written by [`write_field`].
pub fn read_field(path: &Path) -> Result<FieldFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ingestion = |line: usize, message: String| Error::Ingestion {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| ingestion(1, "empty file".into()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 6 || parts[0] != "#" || parts[1] != "field" {
        return Err(ingestion(
            1,
            format!("expected header '# field <name> <nx> <ny> <nz>', got {header:?}"),
        ));
    }
    let name = parts[2].to_string();
    let mut dims = [0usize; 3];
    for (d, raw) in dims.iter_mut().zip(&parts[3..6]) {
        *d = raw
            .parse()
            .map_err(|_| ingestion(1, format!("bad dimension {raw:?}")))?;
    }
    let (nx, ny, nz) = (dims[0], dims[1], dims[2]);
    let expected = nx
        .checked_mul(ny)
        .and_then(|v| v.checked_mul(nz))
        .filter(|&v| v > 0)
        .ok_or_else(|| ingestion(1, format!("bad dimensions {nx} x {ny} x {nz}")))?;
    let mut values = Vec::with_capacity(expected);
    for (idx, line) in lines {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let v: f64 = trimmed
            .parse()
            .map_err(|_| ingestion(idx + 1, format!("bad value {trimmed:?}")))?;
        values.push(v);
    }
    if values.len() != expected {
        return Err(ingestion(
            text.lines().count(),
            format!("expected {expected} values, found {}", values.len()),
        ));
    }
    Ok(FieldFile {
        name,
        dims: (nx, ny, nz),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_grids() {
        assert!(Grid::new((0, 5, 1), (1.0, 1.0, 1.0)).is_err());
        assert!(Grid::new((5, 5, 1), (1.0, -1.0, 1.0)).is_err());
        assert!(Grid::new((5, 5, 1), (1.0, f64::NAN, 1.0)).is_err());
    }

    #[test]
    fn indexing_is_row_major_x_fastest() {
        let g = Grid::new((4, 3, 2), (10.0, 10.0, 2.0)).unwrap();
        assert_eq!(g.cell_index(0, 0, 0), 0);
        assert_eq!(g.cell_index(1, 0, 0), 1);
        assert_eq!(g.cell_index(0, 1, 0), 4);
        assert_eq!(g.cell_index(0, 0, 1), 12);
        assert_eq!(g.cell_index(3, 2, 1), 23);
        for idx in 0..g.n_cells() {
            let (ix, iy, iz) = g.cell_coords(idx);
            assert_eq!(g.cell_index(ix, iy, iz), idx);
        }
    }

    #[test]
    fn face_counts_match_structured_topology() {
        // (nx-1) ny nz + nx (ny-1) nz + nx ny (nz-1) interior faces.
        let g = Grid::new((10, 10, 1), (10.0, 10.0, 10.0)).unwrap();
        assert_eq!(g.faces().len(), 180);
        let g = Grid::new((20, 20, 5), (15.0, 15.0, 6.0)).unwrap();
        assert_eq!(g.faces().len(), 19 * 20 * 5 * 2 + 20 * 20 * 4);
        let g = Grid::new((60, 60, 7), (8.0, 8.0, 4.0)).unwrap();
        assert_eq!(g.n_cells(), 25_200);
        assert_eq!(g.faces().len(), 59 * 60 * 7 * 2 + 60 * 60 * 6);
        let g = Grid::new((1, 1, 1), (1.0, 1.0, 1.0)).unwrap();
        assert!(g.faces().is_empty());
    }

    #[test]
    #[allow(clippy::identity_op)] // factored face counts mirror (nx-1)*ny*nz etc.
    fn faces_are_grouped_by_axis_with_ordered_cells() {
        let g = Grid::new((3, 2, 2), (10.0, 20.0, 5.0)).unwrap();
        let n_x = 2 * 2 * 2;
        let n_y = 3 * 1 * 2;
        for (pos, f) in g.faces().iter().enumerate() {
            assert!(f.cell_i < f.cell_j);
            let expected_area = if pos < n_x {
                20.0 * 5.0
            } else if pos < n_x + n_y {
                10.0 * 5.0
            } else {
                10.0 * 20.0
            };
            assert_eq!(f.area, expected_area);
        }
        assert_eq!(g.faces().len(), n_x + n_y + 3 * 2 * 1);
    }

    #[test]
    fn harmonic_transmissibility_hand_value() {
        // k_i = 100 mD, k_j = 400 mD, A = 50 m^2, d = 5 m each side,
        // mu = 0.002 Pa.s. Half transmissibilities are kA/(mu d); harmonic
        // combination gives 2 k_i k_j / (k_i + k_j) * A / (mu * 2d) overall.
        let face = Face {
            cell_i: 0,
            cell_j: 1,
            area: 50.0,
            d_i: 5.0,
            d_j: 5.0,
        };
        let rock = RockRealization::with_uniform_porosity(vec![100.0, 400.0], 0.2).unwrap();
        let t = face_transmissibility(&rock, &face, 0.002);
        let k_eff = 2.0 * 100.0 * 400.0 / 500.0 * MILLIDARCY_TO_M2;
        let expected = k_eff * 50.0 / (0.002 * 10.0);
        assert!((t - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn transmissibility_is_symmetric_and_harmonic_not_arithmetic() {
        let face = Face {
            cell_i: 0,
            cell_j: 1,
            area: 25.0,
            d_i: 2.0,
            d_j: 2.0,
        };
        let a = face_transmissibility_si(1e-13, 9e-13, &face, 0.001);
        let b = face_transmissibility_si(9e-13, 1e-13, &face, 0.001);
        assert_eq!(a, b);
        let harmonic_k = 2.0 / (1.0 / 1e-13 + 1.0 / 9e-13);
        assert!((a - harmonic_k * 25.0 / (0.001 * 4.0)).abs() < 1e-9 * a);
    }

    #[test]
    fn rock_validation() {
        assert!(RockRealization::new(vec![1.0, 2.0], vec![0.2]).is_err());
        assert!(RockRealization::new(vec![1.0, -2.0], vec![0.2, 0.2]).is_err());
        assert!(RockRealization::new(vec![1.0, 2.0], vec![0.2, 1.5]).is_err());
        assert!(RockRealization::new(vec![1.0, 2.0], vec![0.2, 0.3]).is_ok());
    }

    #[test]
    fn field_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("perm.txt");
        let values: Vec<f64> = (0..24).map(|i| 10.0 + i as f64 * 0.37).collect();
        write_field(&path, "perm_md", (4, 3, 2), &values).unwrap();
        let back = read_field(&path).unwrap();
        assert_eq!(back.name, "perm_md");
        assert_eq!(back.dims, (4, 3, 2));
        assert_eq!(back.values, values);
    }

    #[test]
    fn field_file_reports_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "# field k 2 1 1\n1.0\noops\n").unwrap();
        match read_field(&path).unwrap_err() {
            Error::Ingestion { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
        std::fs::write(&path, "# wrong header\n").unwrap();
        assert!(matches!(
            read_field(&path).unwrap_err(),
            Error::Ingestion { line: 1, .. }
        ));
        std::fs::write(&path, "# field k 2 1 1\n1.0\n").unwrap();
        assert!(matches!(read_field(&path), Err(Error::Ingestion { .. })));
    }
}
