//! Explicit upwind-DG saturation transport and the slope limiter.
//!
//! One explicit Euler step solves the block-diagonal mass system
//! (phi/dt) M s_new = rhs, where the right-hand side carries the previous
//! state, sources, the fractional-flow advection in volume and upwind face
//! form, and a jump-penalty stabilization that reuses the pressure
//! penalties.

use crate::field::{
    basis_gradients, basis_values, cell_quadrature, face_quadrature, mass_diagonal,
    CellScalarField, DgField,
};
use crate::mesh::FineGrid;
use crate::pressure::{FaceData, FluidProps};
use crate::velocity::FaceFluxField;

/// Fractional flow of the wetting phase for linear relative
/// permeabilities; the saturation argument is clamped to [0, 1].
pub fn fractional_flow(s: f64, mu_w: f64, mu_n: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    let lam_w = s / mu_w;
    let lam_n = (1.0 - s) / mu_n;
    if lam_w + lam_n == 0.0 {
        return 0.0;
    }
    lam_w / (lam_w + lam_n)
}

/// Non-wetting mobility of a clamped saturation value.
fn lambda_n_value(s: f64, mu_n: f64) -> f64 {
    (1.0 - s.clamp(0.0, 1.0)) / mu_n
}

/// One explicit Euler upwind step: returns the saturation candidate before
/// limiting.
#[allow(clippy::too_many_arguments)]
pub fn saturation_step(
    grid: &FineGrid,
    phi: &CellScalarField,
    k: &CellScalarField,
    fd: &[FaceData],
    fluids: &FluidProps,
    dt: f64,
    q2: &DgField,
    s: &DgField,
    u: &FaceFluxField,
) -> DgField {
    let degree = s.degree();
    let bs = s.bs();
    let mass = mass_diagonal(grid.cell_area(), degree);
    let grads = basis_gradients(grid, degree);
    let g = fluids.gravity;
    let drho = fluids.rho_w - fluids.rho_n;
    let mut rhs = vec![0.0; grid.n_cells() * bs];

    // previous state and source
    for c in 0..grid.n_cells() {
        let sb = s.block(c);
        let qb = q2.block(c);
        for i in 0..bs {
            rhs[c * bs + i] += phi[c] / dt * mass[i] * sb[i] + mass[i] * qb[i];
        }
    }

    // volume advection: int f(s) (u + K lam_n (rho_w - rho_n) G) . grad psi_i
    if degree > 0 {
        for c in 0..grid.n_cells() {
            let cv = u.cell_velocity(grid, c);
            for (p, w) in cell_quadrature(grid, c) {
                let sv = s.eval_unchecked(grid, c, p[0], p[1]);
                let f = fractional_flow(sv, fluids.mu_w, fluids.mu_n);
                let mut vel = cv.eval(p[0], p[1]);
                if fluids.has_gravity() {
                    let lam_n = lambda_n_value(sv, fluids.mu_n);
                    vel[0] += k[c] * lam_n * drho * g[0];
                    vel[1] += k[c] * lam_n * drho * g[1];
                }
                for i in 1..bs {
                    rhs[c * bs + i] += w * f * (vel[0] * grads[i][0] + vel[1] * grads[i][1]);
                }
            }
        }
    }

    // face terms: upwind advective flux and jump-penalty stabilization
    for (fid, face) in grid.faces().iter().enumerate() {
        let n = face.normal;
        let flux = u.values()[fid];
        match face.cell2 {
            Some(c2) => {
                let cells = [face.cell1, c2];
                let signs = [1.0, -1.0];
                let taus = [fd[fid].tau1, fd[fid].tau2];
                let upwind = if flux >= 0.0 { 0 } else { 1 };
                let pen = fd[fid].sigma / face.length;
                for (p, w) in face_quadrature(face) {
                    let chi = s.eval_unchecked(grid, cells[upwind], p[0], p[1]);
                    let f = fractional_flow(chi, fluids.mu_w, fluids.mu_n);
                    let mut adv = flux;
                    if fluids.has_gravity() {
                        let gn = g[0] * n[0] + g[1] * n[1];
                        for side in 0..2 {
                            let sv = s.eval_unchecked(grid, cells[side], p[0], p[1]);
                            adv += taus[side]
                                * k[cells[side]]
                                * lambda_n_value(sv, fluids.mu_n)
                                * drho
                                * gn;
                        }
                    }
                    let jump = s.eval_unchecked(grid, cells[0], p[0], p[1])
                        - s.eval_unchecked(grid, cells[1], p[0], p[1]);
                    for b in 0..2 {
                        let psi = basis_values(grid, cells[b], degree, p[0], p[1]);
                        for i in 0..bs {
                            rhs[cells[b] * bs + i] -=
                                w * (adv * f + pen * jump) * signs[b] * psi[i];
                        }
                    }
                }
            }
            None => {
                let bc = grid.face_bc(fid).expect("boundary face has bc");
                let c = face.cell1;
                let pen = fd[fid].sigma / face.length;
                for (p, w) in face_quadrature(face) {
                    let trace = s.eval_unchecked(grid, c, p[0], p[1]);
                    let chi = match bc.saturation {
                        Some(s_d) => s_d,
                        None => trace,
                    };
                    let f = fractional_flow(chi, fluids.mu_w, fluids.mu_n);
                    let mut adv = flux;
                    if fluids.has_gravity() {
                        let gn = g[0] * n[0] + g[1] * n[1];
                        adv += k[c] * lambda_n_value(trace, fluids.mu_n) * drho * gn;
                    }
                    // penalty only on saturation-Dirichlet boundary faces
                    let pen_jump = match bc.saturation {
                        Some(s_d) => pen * (trace - s_d),
                        None => 0.0,
                    };
                    let psi = basis_values(grid, c, degree, p[0], p[1]);
                    for i in 0..bs {
                        rhs[c * bs + i] -= w * (adv * f + pen_jump) * psi[i];
                    }
                }
            }
        }
    }

    // invert the block-diagonal mass system
    let mut out = DgField::zeros(grid, degree);
    for c in 0..grid.n_cells() {
        let block = out.block_mut(c);
        for i in 0..bs {
            block[i] = rhs[c * bs + i] * dt / (phi[c] * mass[i]);
        }
    }
    out
}

/// Shock detector: scaled saturation jumps integrated over the upstream
/// faces of each cell. The jump is taken from the upwind side toward the
/// cell, so the detector does not depend on stored face orientations.
pub fn shock_detector(grid: &FineGrid, s: &DgField, u: &FaceFluxField) -> Vec<f64> {
    let d = 2.0;
    let coeff = 1.0 / (0.08 * d * grid.cell_diameter().sqrt() * grid.cell_area());
    (0..grid.n_cells())
        .map(|c| {
            let mut detector = 0.0;
            for cf in grid.cell_faces(c) {
                if u.outward(&cf) >= 0.0 {
                    continue;
                }
                let face = grid.face(cf.face);
                let mut jump_int = 0.0;
                match grid.opposite(cf.face, c) {
                    Some(nb) => {
                        for (p, w) in face_quadrature(face) {
                            jump_int += w
                                * (s.eval_unchecked(grid, nb, p[0], p[1])
                                    - s.eval_unchecked(grid, c, p[0], p[1]));
                        }
                    }
                    None => {
                        if let Some(s_d) = grid.face_bc(cf.face).and_then(|bc| bc.saturation) {
                            for (p, w) in face_quadrature(face) {
                                jump_int += w * (s_d - s.eval_unchecked(grid, c, p[0], p[1]));
                            }
                        }
                    }
                }
                detector += coeff * jump_int;
            }
            detector
        })
        .collect()
}

/// Slope limiter: scales the gradient of flagged cells (detector above one
/// or values outside [0, 1] at a corner) by the smallest neighbor ratio.
/// Cell means are preserved exactly; unflagged cells pass through.
pub fn limit(grid: &FineGrid, s: &DgField, u: &FaceFluxField) -> DgField {
    if s.degree() == 0 {
        return s.clone();
    }
    let detector = shock_detector(grid, s, u);
    let mut out = s.clone();
    for c in 0..grid.n_cells() {
        let flagged = detector[c] > 1.0
            || s.corner_values(c).iter().any(|&v| !(0.0..=1.0).contains(&v));
        if !flagged {
            continue;
        }
        let grad = s.gradient(grid, c);
        let [bx, by] = grid.cell_center(c);
        let mean_c = s.cell_mean(c);
        let mut scale = 1.0f64;
        for nb in grid.neighbors(c).into_iter().flatten() {
            let [nx, ny] = grid.cell_center(nb);
            let g_i = grad[0] * (nx - bx) + grad[1] * (ny - by);
            let d_i = s.cell_mean(nb) - mean_c;
            let m_i = if g_i * d_i < 0.0 && g_i.abs() > 1e-8 && d_i.abs() > 1e-8 {
                0.0
            } else if g_i * d_i > 0.0 && g_i.abs() > d_i.abs() && g_i.abs() > 1e-8 && d_i.abs() > 1e-8
            {
                d_i / g_i
            } else {
                1.0
            };
            scale = scale.min(m_i);
        }
        let block = out.block_mut(c);
        block[1] *= scale;
        block[2] *= scale;
    }
    out
}
