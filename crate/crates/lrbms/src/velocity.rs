//! Conservative lowest-order Raviart-Thomas reconstruction of the total
//! velocity from a DG pressure, plus per-cell divergence defects.
//!
//! The reconstructed field stores one normal flux per face (sign relative
//! to the face's stored normal), which makes the normal component
//! single-valued by construction. On pressure-Neumann faces the prescribed
//! boundary flux is taken directly.

use crate::field::{face_quadrature, CellScalarField, DgField};
use crate::mesh::{FineGrid, PressureBc};
use crate::pressure::{FaceData, FluidProps};

/// One normal-flux value per fine face.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceFluxField {
    values: Vec<f64>,
}

impl FaceFluxField {
    pub fn new(values: Vec<f64>) -> Self {
        FaceFluxField { values }
    }

    pub fn zeros(grid: &FineGrid) -> Self {
        FaceFluxField { values: vec![0.0; grid.n_faces()] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Flux through a cell face in the cell-outward direction.
    pub fn outward(&self, cell_face: &crate::mesh::CellFace) -> f64 {
        self.values[cell_face.face] * cell_face.outward_sign
    }

    /// The four fluxes of a cell in global +x / +y direction:
    /// (left, right, bottom, top).
    pub fn cell_fluxes(&self, grid: &FineGrid, cell: usize) -> CellFluxes {
        let cf = grid.cell_faces(cell);
        // outward directions are -x, +x, -y, +y; convert to +x/+y components
        CellFluxes {
            left: -self.values[cf[0].face] * cf[0].outward_sign,
            right: self.values[cf[1].face] * cf[1].outward_sign,
            bottom: -self.values[cf[2].face] * cf[2].outward_sign,
            top: self.values[cf[3].face] * cf[3].outward_sign,
        }
    }

    /// Piecewise Raviart-Thomas representation on one cell.
    pub fn cell_velocity(&self, grid: &FineGrid, cell: usize) -> CellVelocity {
        let f = self.cell_fluxes(grid, cell);
        let [bx, by] = grid.cell_center(cell);
        CellVelocity {
            x0: bx - 0.5 * grid.hx,
            y0: by - 0.5 * grid.hy,
            hx: grid.hx,
            hy: grid.hy,
            fluxes: f,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Axis-direction fluxes of one cell.
#[derive(Debug, Clone, Copy)]
pub struct CellFluxes {
    pub left: f64,
    pub right: f64,
    pub bottom: f64,
    pub top: f64,
}

/// RT0 velocity on a single cell: each component linear in its own
/// coordinate, interpolating the face fluxes.
#[derive(Debug, Clone, Copy)]
pub struct CellVelocity {
    x0: f64,
    y0: f64,
    hx: f64,
    hy: f64,
    fluxes: CellFluxes,
}

impl CellVelocity {
    pub fn eval(&self, x: f64, y: f64) -> [f64; 2] {
        let xi = (x - self.x0) / self.hx;
        let eta = (y - self.y0) / self.hy;
        [
            self.fluxes.left + (self.fluxes.right - self.fluxes.left) * xi,
            self.fluxes.bottom + (self.fluxes.top - self.fluxes.bottom) * eta,
        ]
    }

    pub fn divergence(&self) -> f64 {
        (self.fluxes.right - self.fluxes.left) / self.hx
            + (self.fluxes.top - self.fluxes.bottom) / self.hy
    }
}

/// Reconstruct the total velocity from a pressure field and explicit
/// wetting/non-wetting mobility fields.
///
/// Per interior face: |F| (u.n) = int_F [ -n.{lam_t K grad p - (lam_w rho_w
/// + lam_n rho_n) K G} + (sigma/h_F) [p]* ], with [p]* the jump (interior),
/// p - p_D (pressure-Dirichlet) or 0 (Neumann). Neumann faces take the
/// prescribed flux directly.
pub fn reconstruct_velocity(
    grid: &FineGrid,
    k: &CellScalarField,
    fd: &[FaceData],
    p: &DgField,
    lambda_w: &DgField,
    lambda_n: &DgField,
    fluids: &FluidProps,
) -> FaceFluxField {
    let g = fluids.gravity;
    let mut values = vec![0.0; grid.n_faces()];
    for (fid, face) in grid.faces().iter().enumerate() {
        let n = face.normal;
        let inv_len = 1.0 / face.length;
        match face.cell2 {
            Some(c2) => {
                let cells = [face.cell1, c2];
                let taus = [fd[fid].tau1, fd[fid].tau2];
                let mut acc = 0.0;
                for (pt, w) in face_quadrature(face) {
                    let mut mean = 0.0;
                    for s in 0..2 {
                        let c = cells[s];
                        let grad = p.gradient(grid, c);
                        let lam_w = lambda_w.eval_unchecked(grid, c, pt[0], pt[1]);
                        let lam_n = lambda_n.eval_unchecked(grid, c, pt[0], pt[1]);
                        let lam_t = lam_w + lam_n;
                        let grad_n = grad[0] * n[0] + grad[1] * n[1];
                        let grav_n = (fluids.rho_w * lam_w + fluids.rho_n * lam_n)
                            * (g[0] * n[0] + g[1] * n[1]);
                        mean += taus[s] * k[c] * (lam_t * grad_n - grav_n);
                    }
                    let jump = p.eval_unchecked(grid, cells[0], pt[0], pt[1])
                        - p.eval_unchecked(grid, cells[1], pt[0], pt[1]);
                    acc += w * (-mean + fd[fid].sigma / face.length * jump);
                }
                values[fid] = acc * inv_len;
            }
            None => {
                let bc = grid.face_bc(fid).expect("boundary face has bc");
                match bc.pressure {
                    PressureBc::Neumann { flux } => {
                        values[fid] = flux;
                    }
                    PressureBc::Dirichlet { value: p_d } => {
                        let c = face.cell1;
                        let mut acc = 0.0;
                        for (pt, w) in face_quadrature(face) {
                            let grad = p.gradient(grid, c);
                            let lam_w = lambda_w.eval_unchecked(grid, c, pt[0], pt[1]);
                            let lam_n = lambda_n.eval_unchecked(grid, c, pt[0], pt[1]);
                            let lam_t = lam_w + lam_n;
                            let grad_n = grad[0] * n[0] + grad[1] * n[1];
                            let grav_n = (fluids.rho_w * lam_w + fluids.rho_n * lam_n)
                                * (g[0] * n[0] + g[1] * n[1]);
                            let jump_star =
                                p.eval_unchecked(grid, c, pt[0], pt[1]) - p_d;
                            acc += w
                                * (-k[c] * (lam_t * grad_n - grav_n)
                                    + fd[fid].sigma / face.length * jump_star);
                        }
                        values[fid] = acc * inv_len;
                    }
                }
            }
        }
    }
    FaceFluxField { values }
}

/// Reconstruct the total velocity for a given saturation, using the linear
/// mobility laws.
pub fn reconstruct_velocity_from_saturation(
    grid: &FineGrid,
    k: &CellScalarField,
    fd: &[FaceData],
    p: &DgField,
    s: &DgField,
    fluids: &FluidProps,
) -> FaceFluxField {
    let (lambda_w, lambda_n, _) = crate::mobility::linear_mobilities(s, fluids.mu_w, fluids.mu_n);
    reconstruct_velocity(grid, k, fd, p, &lambda_w, &lambda_n, fluids)
}

/// Per-cell divergence defect: boundary flux sum minus the cell source.
pub fn divergence_defect(grid: &FineGrid, u: &FaceFluxField, q1: &DgField) -> Vec<f64> {
    (0..grid.n_cells())
        .map(|c| {
            let mut flux = 0.0;
            for cf in grid.cell_faces(c) {
                flux += cf.outward_sign * u.values[cf.face] * grid.face(cf.face).length;
            }
            flux - grid.cell_area() * q1.cell_mean(c)
        })
        .collect()
}
