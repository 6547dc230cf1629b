//! Structured rectangular fine grid, matching coarse partition, and the
//! face/adjacency topology used by all discretizations.
//!
//! Cells are indexed row-major: cell (i, j) has index `j*nx + i` with i
//! running in x-direction. Faces are indexed x-normal faces first
//! (vertical faces, `(nx+1)*ny` of them, index `j*(nx+1) + i`), then
//! y-normal faces (horizontal, `nx*(ny+1)`, index `offset + j*nx + i`).
//!
//! Every face stores one unique unit normal. On interior faces it points
//! from the first adjacent cell to the second; on boundary faces it points
//! outward.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// One of the four sides of the rectangular domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

/// Pressure boundary condition of a side.
///
/// `Neumann { flux }` prescribes the outward normal component of the total
/// velocity; `flux = 0` is a no-flow side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PressureBc {
    Dirichlet { value: f64 },
    Neumann { flux: f64 },
}

/// Boundary data of one side: the pressure condition plus an optional
/// prescribed inflow saturation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SideBc {
    pub pressure: PressureBc,
    /// `Some(s_d)` marks the side as a saturation-Dirichlet (inflow) side.
    #[serde(default)]
    pub saturation: Option<f64>,
}

impl SideBc {
    pub fn dirichlet(p: f64) -> Self {
        SideBc { pressure: PressureBc::Dirichlet { value: p }, saturation: None }
    }

    pub fn neumann(flux: f64) -> Self {
        SideBc { pressure: PressureBc::Neumann { flux }, saturation: None }
    }

    pub fn no_flow() -> Self {
        Self::neumann(0.0)
    }

    pub fn with_saturation(mut self, s_d: f64) -> Self {
        self.saturation = Some(s_d);
        self
    }
}

/// Boundary conditions for all four sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub left: SideBc,
    pub right: SideBc,
    pub bottom: SideBc,
    pub top: SideBc,
}

impl BoundarySpec {
    /// Water enters at the left (fixed pressure, fixed saturation), leaves at
    /// the right at a prescribed rate; top and bottom are no-flow.
    pub fn inflow_outflow(p_left: f64, s_left: f64, outflux_right: f64) -> Self {
        BoundarySpec {
            left: SideBc::dirichlet(p_left).with_saturation(s_left),
            right: SideBc::neumann(outflux_right),
            bottom: SideBc::no_flow(),
            top: SideBc::no_flow(),
        }
    }

    pub fn all_dirichlet(p: f64) -> Self {
        let s = SideBc::dirichlet(p);
        BoundarySpec { left: s, right: s, bottom: s, top: s }
    }

    pub fn all_no_flow() -> Self {
        let s = SideBc::no_flow();
        BoundarySpec { left: s, right: s, bottom: s, top: s }
    }

    pub fn side(&self, side: Side) -> &SideBc {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
            Side::Bottom => &self.bottom,
            Side::Top => &self.top,
        }
    }
}

/// A fine-grid face (co-dimension one intersection).
#[derive(Debug, Clone)]
pub struct Face {
    /// First adjacent cell.
    pub cell1: usize,
    /// Second adjacent cell; `None` on boundary faces.
    pub cell2: Option<usize>,
    /// Unit normal, from `cell1` to `cell2` (interior) or outward (boundary).
    pub normal: [f64; 2],
    pub center: [f64; 2],
    /// Face diameter h_F.
    pub length: f64,
    /// Boundary side; `None` for interior faces.
    pub side: Option<Side>,
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        self.cell2.is_none()
    }
}

/// Reference from a cell to one of its faces.
#[derive(Debug, Clone, Copy)]
pub struct CellFace {
    pub face: usize,
    /// +1 if the stored face normal points out of the cell, -1 otherwise.
    pub outward_sign: f64,
}

/// Axis-aligned structured rectangular grid.
#[derive(Debug, Clone)]
pub struct FineGrid {
    pub lx: f64,
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    faces: Vec<Face>,
    boundary: BoundarySpec,
}

impl FineGrid {
    pub fn new(lx: f64, ly: f64, nx: usize, ny: usize, boundary: BoundarySpec) -> Result<Self> {
        if !(lx > 0.0) || !(ly > 0.0) {
            return Err(Error::Config(format!("domain extents must be positive, got {lx} x {ly}")));
        }
        if nx == 0 || ny == 0 {
            return Err(Error::Config(format!("cell counts must be at least 1, got {nx} x {ny}")));
        }
        let hx = lx / nx as f64;
        let hy = ly / ny as f64;
        let cell = |i: usize, j: usize| j * nx + i;

        let mut faces = Vec::with_capacity((nx + 1) * ny + nx * (ny + 1));
        // x-normal (vertical) faces
        for j in 0..ny {
            for i in 0..=nx {
                let center = [i as f64 * hx, (j as f64 + 0.5) * hy];
                let face = if i == 0 {
                    Face {
                        cell1: cell(0, j),
                        cell2: None,
                        normal: [-1.0, 0.0],
                        center,
                        length: hy,
                        side: Some(Side::Left),
                    }
                } else if i == nx {
                    Face {
                        cell1: cell(nx - 1, j),
                        cell2: None,
                        normal: [1.0, 0.0],
                        center,
                        length: hy,
                        side: Some(Side::Right),
                    }
                } else {
                    Face {
                        cell1: cell(i - 1, j),
                        cell2: Some(cell(i, j)),
                        normal: [1.0, 0.0],
                        center,
                        length: hy,
                        side: None,
                    }
                };
                faces.push(face);
            }
        }
        // y-normal (horizontal) faces
        for j in 0..=ny {
            for i in 0..nx {
                let center = [(i as f64 + 0.5) * hx, j as f64 * hy];
                let face = if j == 0 {
                    Face {
                        cell1: cell(i, 0),
                        cell2: None,
                        normal: [0.0, -1.0],
                        center,
                        length: hx,
                        side: Some(Side::Bottom),
                    }
                } else if j == ny {
                    Face {
                        cell1: cell(i, ny - 1),
                        cell2: None,
                        normal: [0.0, 1.0],
                        center,
                        length: hx,
                        side: Some(Side::Top),
                    }
                } else {
                    Face {
                        cell1: cell(i, j - 1),
                        cell2: Some(cell(i, j)),
                        normal: [0.0, 1.0],
                        center,
                        length: hx,
                        side: None,
                    }
                };
                faces.push(face);
            }
        }

        Ok(FineGrid { lx, ly, nx, ny, hx, hy, faces, boundary })
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn face(&self, f: usize) -> &Face {
        &self.faces[f]
    }

    pub fn boundary_spec(&self) -> &BoundarySpec {
        &self.boundary
    }

    /// Boundary data for a boundary face.
    pub fn face_bc(&self, f: usize) -> Option<&SideBc> {
        self.faces[f].side.map(|s| self.boundary.side(s))
    }

    pub fn cell_id(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    pub fn cell_ij(&self, cell: usize) -> (usize, usize) {
        (cell % self.nx, cell / self.nx)
    }

    pub fn cell_center(&self, cell: usize) -> [f64; 2] {
        let (i, j) = self.cell_ij(cell);
        [(i as f64 + 0.5) * self.hx, (j as f64 + 0.5) * self.hy]
    }

    pub fn cell_area(&self) -> f64 {
        self.hx * self.hy
    }

    /// Grid size h = max cell diameter direction.
    pub fn h(&self) -> f64 {
        self.hx.max(self.hy)
    }

    /// Cell diameter (diagonal).
    pub fn cell_diameter(&self) -> f64 {
        self.hx.hypot(self.hy)
    }

    fn x_face(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    fn y_face(&self, i: usize, j: usize) -> usize {
        (self.nx + 1) * self.ny + j * self.nx + i
    }

    /// The four faces of a cell in the order left, right, bottom, top.
    pub fn cell_faces(&self, cell: usize) -> [CellFace; 4] {
        let (i, j) = self.cell_ij(cell);
        let left = self.x_face(i, j);
        let right = self.x_face(i + 1, j);
        let bottom = self.y_face(i, j);
        let top = self.y_face(i, j + 1);
        // outward directions are -x, +x, -y, +y; compare with stored normals
        [
            CellFace { face: left, outward_sign: -self.faces[left].normal[0] },
            CellFace { face: right, outward_sign: self.faces[right].normal[0] },
            CellFace { face: bottom, outward_sign: -self.faces[bottom].normal[1] },
            CellFace { face: top, outward_sign: self.faces[top].normal[1] },
        ]
    }

    /// Face-neighbors of a cell in the order left, right, bottom, top.
    pub fn neighbors(&self, cell: usize) -> [Option<usize>; 4] {
        let (i, j) = self.cell_ij(cell);
        [
            (i > 0).then(|| self.cell_id(i - 1, j)),
            (i + 1 < self.nx).then(|| self.cell_id(i + 1, j)),
            (j > 0).then(|| self.cell_id(i, j - 1)),
            (j + 1 < self.ny).then(|| self.cell_id(i, j + 1)),
        ]
    }

    /// The cell on the other side of `face` as seen from `cell`.
    pub fn opposite(&self, face: usize, cell: usize) -> Option<usize> {
        let f = &self.faces[face];
        if f.cell1 == cell {
            f.cell2
        } else {
            debug_assert_eq!(f.cell2, Some(cell));
            Some(f.cell1)
        }
    }
}

/// One coarse face, realized as a union of fine faces.
#[derive(Debug, Clone)]
pub struct CoarseFace {
    pub cell1: usize,
    pub cell2: usize,
    pub fine_faces: Vec<usize>,
}

/// Coarse partition matching the fine grid.
#[derive(Debug, Clone)]
pub struct CoarseGrid {
    pub nx: usize,
    pub ny: usize,
    fine_to_coarse: Vec<usize>,
    /// Fine cells per coarse cell, ascending.
    cells: Vec<Vec<usize>>,
    faces: Vec<CoarseFace>,
}

impl CoarseGrid {
    pub fn new(fine: &FineGrid, nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::Config(format!("coarse cell counts must be at least 1, got {nx} x {ny}")));
        }
        if fine.nx % nx != 0 {
            return Err(Error::Config(format!(
                "coarse Nx = {nx} does not divide fine nx = {}",
                fine.nx
            )));
        }
        if fine.ny % ny != 0 {
            return Err(Error::Config(format!(
                "coarse Ny = {ny} does not divide fine ny = {}",
                fine.ny
            )));
        }
        let rx = fine.nx / nx;
        let ry = fine.ny / ny;

        let mut fine_to_coarse = vec![0usize; fine.n_cells()];
        let mut cells = vec![Vec::new(); nx * ny];
        for c in 0..fine.n_cells() {
            let (i, j) = fine.cell_ij(c);
            let e = (j / ry) * nx + i / rx;
            fine_to_coarse[c] = e;
            cells[e].push(c);
        }

        // Interior coarse faces: group fine interior faces whose adjacent
        // cells land in different coarse cells.
        let mut faces: Vec<CoarseFace> = Vec::new();
        let mut key_of: std::collections::BTreeMap<(usize, usize), usize> = Default::default();
        for (fid, face) in fine.faces().iter().enumerate() {
            if let Some(c2) = face.cell2 {
                let e1 = fine_to_coarse[face.cell1];
                let e2 = fine_to_coarse[c2];
                if e1 != e2 {
                    let idx = *key_of.entry((e1, e2)).or_insert_with(|| {
                        faces.push(CoarseFace { cell1: e1, cell2: e2, fine_faces: Vec::new() });
                        faces.len() - 1
                    });
                    faces[idx].fine_faces.push(fid);
                }
            }
        }

        Ok(CoarseGrid { nx, ny, fine_to_coarse, cells, faces })
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn coarse_of(&self, fine_cell: usize) -> usize {
        self.fine_to_coarse[fine_cell]
    }

    pub fn fine_cells(&self, coarse_cell: usize) -> &[usize] {
        &self.cells[coarse_cell]
    }

    pub fn faces(&self) -> &[CoarseFace] {
        &self.faces
    }

    /// Fine faces making up the boundary of a coarse cell, with the sign of
    /// each stored fine normal relative to the coarse cell's outward
    /// direction. Includes domain-boundary fine faces.
    pub fn boundary_faces(&self, fine: &FineGrid, coarse_cell: usize) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        for &c in &self.cells[coarse_cell] {
            for cf in fine.cell_faces(c) {
                let face = fine.face(cf.face);
                let on_boundary = match face.cell2 {
                    None => true,
                    Some(c2) => {
                        let other = if face.cell1 == c { c2 } else { face.cell1 };
                        self.fine_to_coarse[other] != coarse_cell
                    }
                };
                if on_boundary {
                    out.push((cf.face, cf.outward_sign));
                }
            }
        }
        out
    }
}
