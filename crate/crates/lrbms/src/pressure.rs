//! Symmetric weighted interior-penalty DG discretization of the pressure
//! equation: bilinear form assembly, right-hand side, penalty parameters,
//! and the fine-grid solve.
//!
//! The bilinear form splits into a mobility-dependent part (volume
//! diffusion plus the symmetric consistency terms) and a
//! mobility-independent penalty part; the right-hand side splits the same
//! way. Keeping the two parts separate is what makes the reduced-order
//! offline/online decomposition exact.

use crate::error::{Error, Result};
use crate::field::{
    basis_gradients, basis_values, face_quadrature, mass_diagonal, CellScalarField, DgField,
    FaceWeights,
};
use crate::linalg::{cg_solve, SparseMatrix};
use crate::mesh::{FineGrid, PressureBc};

/// Fluid constants entering the pressure and transport equations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluidProps {
    pub mu_w: f64,
    pub mu_n: f64,
    pub rho_w: f64,
    pub rho_n: f64,
    /// Gravity force vector (2D).
    pub gravity: [f64; 2],
}

impl FluidProps {
    pub fn max_viscosity(&self) -> f64 {
        self.mu_w.max(self.mu_n)
    }

    pub fn has_gravity(&self) -> bool {
        self.gravity != [0.0, 0.0]
    }
}

/// Per-face data shared by the pressure form, the velocity reconstruction
/// and the transport stabilization.
#[derive(Debug, Clone, Copy)]
pub struct FaceData {
    /// Penalty parameter sigma_F (already divided by max viscosity).
    pub sigma: f64,
    pub tau1: f64,
    pub tau2: f64,
}

/// Penalty parameter of a single face:
/// sigma = (c_base / max(mu_w, mu_n)) * 2 a1 a2 / (a1 + a2),
/// with a_l the permeability of the adjacent cell l (one-sided on
/// boundary faces).
pub fn penalty(
    face: &crate::mesh::Face,
    k: &CellScalarField,
    c_base: f64,
    mu_w: f64,
    mu_n: f64,
) -> f64 {
    let w = FaceWeights::for_face(face, k);
    c_base / mu_w.max(mu_n) * w.harmonic()
}

/// Precompute penalty parameters and trace weights for every face.
pub fn build_face_data(
    grid: &FineGrid,
    k: &CellScalarField,
    c_base: f64,
    mu_w: f64,
    mu_n: f64,
) -> Vec<FaceData> {
    let c_sigma = c_base / mu_w.max(mu_n);
    grid.faces()
        .iter()
        .map(|face| {
            let w = FaceWeights::for_face(face, k);
            FaceData { sigma: c_sigma * w.harmonic(), tau1: w.tau1, tau2: w.tau2 }
        })
        .collect()
}

/// Block sparsity pattern of the DG form: diagonal plus face neighbors.
pub fn block_pattern(grid: &FineGrid) -> Vec<Vec<usize>> {
    (0..grid.n_cells())
        .map(|c| {
            let mut nbs: Vec<usize> = grid.neighbors(c).iter().flatten().copied().collect();
            nbs.push(c);
            nbs.sort_unstable();
            nbs
        })
        .collect()
}

fn face_is_dirichlet(grid: &FineGrid, fid: usize) -> bool {
    matches!(
        grid.face_bc(fid).map(|bc| bc.pressure),
        Some(PressureBc::Dirichlet { .. })
    )
}

/// Mobility-dependent part of the bilinear form: volume diffusion plus the
/// two symmetric consistency terms (with a minus sign, which is what keeps
/// the form coercive).
pub fn assemble_mobility_part(
    grid: &FineGrid,
    k: &CellScalarField,
    fd: &[FaceData],
    lambda_t: &DgField,
    degree: usize,
) -> SparseMatrix {
    let bs = DgField::block_size(degree);
    let mut a = SparseMatrix::from_block_pattern(&block_pattern(grid), bs);
    let grads = basis_gradients(grid, degree);
    let area = grid.cell_area();

    // volume: K_T (grad psi_i . grad psi_j) * integral of lambda over T
    for c in 0..grid.n_cells() {
        let kc = k[c];
        let lam_int = area * lambda_t.cell_mean(c);
        for i in 0..bs {
            for j in 0..bs {
                let g = grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1];
                if g != 0.0 {
                    a.add(c, c, i, j, kc * lam_int * g);
                }
            }
        }
    }

    // faces: -({lam K grad v . n}[w] + {lam K grad w . n}[v])
    for (fid, face) in grid.faces().iter().enumerate() {
        let n = face.normal;
        match face.cell2 {
            Some(c2) => {
                let cells = [face.cell1, c2];
                let taus = [fd[fid].tau1, fd[fid].tau2];
                let signs = [1.0, -1.0];
                let ks = [k[cells[0]], k[cells[1]]];
                // normal derivative of each basis function per side
                let dn: Vec<[f64; 3]> = (0..2)
                    .map(|_| {
                        let mut d = [0.0; 3];
                        for i in 0..bs {
                            d[i] = grads[i][0] * n[0] + grads[i][1] * n[1];
                        }
                        d
                    })
                    .collect();
                for (p, w) in face_quadrature(face) {
                    let lam = [
                        lambda_t.eval_unchecked(grid, cells[0], p[0], p[1]),
                        lambda_t.eval_unchecked(grid, cells[1], p[0], p[1]),
                    ];
                    let psi = [
                        basis_values(grid, cells[0], degree, p[0], p[1]),
                        basis_values(grid, cells[1], degree, p[0], p[1]),
                    ];
                    for b in 0..2 {
                        for a_side in 0..2 {
                            for i in 0..bs {
                                for j in 0..bs {
                                    let term1 =
                                        taus[a_side] * lam[a_side] * ks[a_side] * dn[a_side][j]
                                            * signs[b]
                                            * psi[b][i];
                                    let term2 = taus[b] * lam[b] * ks[b] * dn[b][i]
                                        * signs[a_side]
                                        * psi[a_side][j];
                                    a.add(cells[b], cells[a_side], i, j, -w * (term1 + term2));
                                }
                            }
                        }
                    }
                }
            }
            None => {
                if !face_is_dirichlet(grid, fid) {
                    continue;
                }
                let c = face.cell1;
                let kc = k[c];
                let mut dn = [0.0; 3];
                for i in 0..bs {
                    dn[i] = grads[i][0] * n[0] + grads[i][1] * n[1];
                }
                for (p, w) in face_quadrature(face) {
                    let lam = lambda_t.eval_unchecked(grid, c, p[0], p[1]);
                    let psi = basis_values(grid, c, degree, p[0], p[1]);
                    for i in 0..bs {
                        for j in 0..bs {
                            a.add(c, c, i, j, -w * lam * kc * (dn[j] * psi[i] + dn[i] * psi[j]));
                        }
                    }
                }
            }
        }
    }
    a
}

/// Mobility-independent penalty part: (sigma/h_F) int [v][w] over interior
/// and pressure-Dirichlet faces.
pub fn assemble_penalty_part(grid: &FineGrid, fd: &[FaceData], degree: usize) -> SparseMatrix {
    let bs = DgField::block_size(degree);
    let mut a = SparseMatrix::from_block_pattern(&block_pattern(grid), bs);
    for (fid, face) in grid.faces().iter().enumerate() {
        let coeff = fd[fid].sigma / face.length;
        match face.cell2 {
            Some(c2) => {
                let cells = [face.cell1, c2];
                let signs = [1.0, -1.0];
                for (p, w) in face_quadrature(face) {
                    let psi = [
                        basis_values(grid, cells[0], degree, p[0], p[1]),
                        basis_values(grid, cells[1], degree, p[0], p[1]),
                    ];
                    for b in 0..2 {
                        for a_side in 0..2 {
                            for i in 0..bs {
                                for j in 0..bs {
                                    a.add(
                                        cells[b],
                                        cells[a_side],
                                        i,
                                        j,
                                        w * coeff * signs[a_side] * psi[a_side][j] * signs[b] * psi[b][i],
                                    );
                                }
                            }
                        }
                    }
                }
            }
            None => {
                if !face_is_dirichlet(grid, fid) {
                    continue;
                }
                let c = face.cell1;
                for (p, w) in face_quadrature(face) {
                    let psi = basis_values(grid, c, degree, p[0], p[1]);
                    for i in 0..bs {
                        for j in 0..bs {
                            a.add(c, c, i, j, w * coeff * psi[j] * psi[i]);
                        }
                    }
                }
            }
        }
    }
    a
}

/// Full bilinear form at a given total mobility field.
pub fn assemble_bilinear(
    grid: &FineGrid,
    k: &CellScalarField,
    fd: &[FaceData],
    lambda_t: &DgField,
    degree: usize,
) -> SparseMatrix {
    let mut a = assemble_mobility_part(grid, k, fd, lambda_t, degree);
    a.add_scaled(&assemble_penalty_part(grid, fd, degree), 1.0);
    a
}

/// Mobility-independent right-hand side terms: the source, the Dirichlet
/// penalty term and the Neumann boundary term.
pub fn assemble_rhs_fixed(
    grid: &FineGrid,
    fd: &[FaceData],
    q1: &DgField,
    degree: usize,
) -> Vec<f64> {
    let bs = DgField::block_size(degree);
    let mut rhs = vec![0.0; grid.n_cells() * bs];
    let mass = mass_diagonal(grid.cell_area(), degree);

    // int q1 psi_i: diagonal mass against the source coefficients
    for c in 0..grid.n_cells() {
        let qb = q1.block(c);
        for i in 0..bs {
            rhs[c * bs + i] += mass[i] * qb[i];
        }
    }

    for (fid, face) in grid.faces().iter().enumerate() {
        let Some(bc) = grid.face_bc(fid) else { continue };
        let c = face.cell1;
        match bc.pressure {
            PressureBc::Dirichlet { value: p_d } => {
                let coeff = fd[fid].sigma / face.length;
                for (p, w) in face_quadrature(face) {
                    let psi = basis_values(grid, c, degree, p[0], p[1]);
                    for i in 0..bs {
                        rhs[c * bs + i] += w * coeff * psi[i] * p_d;
                    }
                }
            }
            PressureBc::Neumann { flux } => {
                // prescribed outward flux u.n = flux; enters the weak form
                // with a minus sign
                if flux != 0.0 {
                    for (p, w) in face_quadrature(face) {
                        let psi = basis_values(grid, c, degree, p[0], p[1]);
                        for i in 0..bs {
                            rhs[c * bs + i] -= w * flux * psi[i];
                        }
                    }
                }
            }
        }
    }
    rhs
}

/// Mobility-dependent right-hand side terms: gravity volume and face terms
/// plus the Dirichlet consistency term.
pub fn assemble_rhs_mobility(
    grid: &FineGrid,
    k: &CellScalarField,
    fd: &[FaceData],
    lambda_w: &DgField,
    lambda_n: &DgField,
    fluids: &FluidProps,
    degree: usize,
) -> Vec<f64> {
    let bs = DgField::block_size(degree);
    let mut rhs = vec![0.0; grid.n_cells() * bs];
    let grads = basis_gradients(grid, degree);
    let g = fluids.gravity;
    let area = grid.cell_area();

    if fluids.has_gravity() {
        // volume: int (lam_n rho_n + lam_w rho_w) K G . grad psi_i
        for c in 0..grid.n_cells() {
            let dens_mob = fluids.rho_n * lambda_n.cell_mean(c) + fluids.rho_w * lambda_w.cell_mean(c);
            for i in 0..bs {
                let gdot = g[0] * grads[i][0] + g[1] * grads[i][1];
                if gdot != 0.0 {
                    rhs[c * bs + i] += k[c] * area * dens_mob * gdot;
                }
            }
        }
        // faces: -int {(...)K G.n}[psi_i] over interior and Dirichlet faces
        for (fid, face) in grid.faces().iter().enumerate() {
            let n = face.normal;
            let gn = g[0] * n[0] + g[1] * n[1];
            if gn == 0.0 {
                continue;
            }
            match face.cell2 {
                Some(c2) => {
                    let cells = [face.cell1, c2];
                    let taus = [fd[fid].tau1, fd[fid].tau2];
                    let signs = [1.0, -1.0];
                    for (p, w) in face_quadrature(face) {
                        let mut mean = 0.0;
                        for s in 0..2 {
                            let dm = fluids.rho_n * lambda_n.eval_unchecked(grid, cells[s], p[0], p[1])
                                + fluids.rho_w * lambda_w.eval_unchecked(grid, cells[s], p[0], p[1]);
                            mean += taus[s] * dm * k[cells[s]] * gn;
                        }
                        for b in 0..2 {
                            let psi = basis_values(grid, cells[b], degree, p[0], p[1]);
                            for i in 0..bs {
                                rhs[cells[b] * bs + i] -= w * mean * signs[b] * psi[i];
                            }
                        }
                    }
                }
                None => {
                    if !face_is_dirichlet(grid, fid) {
                        continue;
                    }
                    let c = face.cell1;
                    for (p, w) in face_quadrature(face) {
                        let dm = fluids.rho_n * lambda_n.eval_unchecked(grid, c, p[0], p[1])
                            + fluids.rho_w * lambda_w.eval_unchecked(grid, c, p[0], p[1]);
                        let psi = basis_values(grid, c, degree, p[0], p[1]);
                        for i in 0..bs {
                            rhs[c * bs + i] -= w * dm * k[c] * gn * psi[i];
                        }
                    }
                }
            }
        }
    }

    // Dirichlet consistency: -int (lam_t K grad psi_i . n) p_D
    for (fid, face) in grid.faces().iter().enumerate() {
        let Some(bc) = grid.face_bc(fid) else { continue };
        let PressureBc::Dirichlet { value: p_d } = bc.pressure else { continue };
        if p_d == 0.0 {
            continue;
        }
        let c = face.cell1;
        let n = face.normal;
        let mut dn = [0.0; 3];
        for i in 0..bs {
            dn[i] = grads[i][0] * n[0] + grads[i][1] * n[1];
        }
        for (p, w) in face_quadrature(face) {
            let lam = lambda_w.eval_unchecked(grid, c, p[0], p[1])
                + lambda_n.eval_unchecked(grid, c, p[0], p[1]);
            for i in 0..bs {
                rhs[c * bs + i] -= w * lam * k[c] * dn[i] * p_d;
            }
        }
    }
    rhs
}

/// Full right-hand side of the discrete pressure equation.
pub fn assemble_rhs(
    grid: &FineGrid,
    k: &CellScalarField,
    fd: &[FaceData],
    lambda_w: &DgField,
    lambda_n: &DgField,
    fluids: &FluidProps,
    q1: &DgField,
    degree: usize,
) -> Vec<f64> {
    let mut rhs = assemble_rhs_fixed(grid, fd, q1, degree);
    let mob = assemble_rhs_mobility(grid, k, fd, lambda_w, lambda_n, fluids, degree);
    for (r, m) in rhs.iter_mut().zip(&mob) {
        *r += m;
    }
    rhs
}

/// Iterative solver settings for the fine pressure systems.
#[derive(Debug, Clone, Copy)]
pub struct SolverOpts {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOpts {
    fn default() -> Self {
        SolverOpts { tol: 1e-11, max_iter: 200_000 }
    }
}

/// Solve the fine pressure equation for the given mobilities.
pub fn solve_pressure(
    grid: &FineGrid,
    k: &CellScalarField,
    fd: &[FaceData],
    lambda_w: &DgField,
    lambda_n: &DgField,
    fluids: &FluidProps,
    q1: &DgField,
    degree: usize,
    opts: SolverOpts,
    warm_start: Option<&DgField>,
) -> Result<DgField> {
    let mut lambda_t = lambda_w.clone();
    lambda_t.axpy(1.0, lambda_n);
    let a = assemble_bilinear(grid, k, fd, &lambda_t, degree);
    let rhs = assemble_rhs(grid, k, fd, lambda_w, lambda_n, fluids, q1, degree);
    let x = cg_solve(&a, &rhs, warm_start.map(|f| f.coeffs()), opts.tol, opts.max_iter)?;
    Ok(DgField::from_coeffs(degree, grid.n_cells(), x))
}

/// Energy norm sqrt(a(e, e; lambda_bar)) of a field.
pub fn energy_norm(
    grid: &FineGrid,
    k: &CellScalarField,
    fd: &[FaceData],
    e: &DgField,
    lambda_bar: &DgField,
) -> Result<f64> {
    let a = assemble_bilinear(grid, k, fd, lambda_bar, e.degree());
    energy_norm_with(&a, e)
}

/// Energy norm from a pre-assembled bilinear form.
pub fn energy_norm_with(a: &SparseMatrix, e: &DgField) -> Result<f64> {
    let q = a.quadratic_form(e.coeffs());
    let scale = e.coeffs().iter().map(|c| c * c).sum::<f64>() * a.max_abs();
    if q < -1e-12 * scale.max(1.0) {
        return Err(Error::Numerical(format!(
            "energy form returned a significantly negative value ({q:.3e}); assembly is inconsistent"
        )));
    }
    Ok(q.max(0.0).sqrt())
}
