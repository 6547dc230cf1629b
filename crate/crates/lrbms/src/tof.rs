//! Steady time-of-flight transport solved cell-by-cell in flow order.
//!
//! The upwind-DG system couples each cell only to its upwind neighbors, so
//! the cell dependency graph is sorted topologically and each cell solved
//! by a small dense back-substitution. Flow cycles (which a reconstructed
//! reduced velocity can introduce) appear as strongly connected components
//! and are solved jointly as one dense block.

use crate::error::{Error, Result};
use crate::field::{
    basis_gradients, basis_values, cell_quadrature, face_quadrature, CellScalarField, DgField,
};
use crate::mesh::FineGrid;
use crate::velocity::FaceFluxField;
use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

/// Local equation blocks of one cell: the dense diagonal block, the
/// constant right-hand side, and one coupling block per upwind neighbor.
struct CellSystem {
    diag: DMatrix<f64>,
    rhs: DVector<f64>,
    /// (upwind neighbor, face id, outward flux) for inflow faces with a
    /// neighbor on the other side.
    upwind: Vec<(usize, usize, f64)>,
}

fn build_cell_system(
    grid: &FineGrid,
    u: &FaceFluxField,
    phi: &CellScalarField,
    degree: usize,
    cell: usize,
) -> CellSystem {
    let bs = DgField::block_size(degree);
    let grads = basis_gradients(grid, degree);
    let mut diag = DMatrix::zeros(bs, bs);
    let mut rhs = DVector::zeros(bs);
    let mut upwind = Vec::new();

    // right-hand side: porosity against the constant mode
    rhs[0] = phi[cell] * grid.cell_area();

    // volume: -int psi_j (u . grad psi_i)
    if degree > 0 {
        let cv = u.cell_velocity(grid, cell);
        for (p, w) in cell_quadrature(grid, cell) {
            let vel = cv.eval(p[0], p[1]);
            let psi = basis_values(grid, cell, degree, p[0], p[1]);
            for i in 0..bs {
                let advect = vel[0] * grads[i][0] + vel[1] * grads[i][1];
                for j in 0..bs {
                    diag[(i, j)] -= w * psi[j] * advect;
                }
            }
        }
    }

    // faces: outflow couples to the own trace, inflow to the upwind side
    for cf in grid.cell_faces(cell) {
        let flux_out = u.outward(&cf);
        if flux_out == 0.0 {
            continue;
        }
        let face = grid.face(cf.face);
        if flux_out > 0.0 {
            for (p, w) in face_quadrature(face) {
                let psi = basis_values(grid, cell, degree, p[0], p[1]);
                for i in 0..bs {
                    for j in 0..bs {
                        diag[(i, j)] += w * flux_out * psi[j] * psi[i];
                    }
                }
            }
        } else if let Some(nb) = grid.opposite(cf.face, cell) {
            upwind.push((nb, cf.face, flux_out));
        }
        // inflow boundary faces carry the zero inflow value
    }

    CellSystem { diag, rhs, upwind }
}

/// Solve the time-of-flight equation for a given velocity field.
///
/// Inflow boundary values are zero. Returns a degenerate-flow error when a
/// cell with a nonzero right-hand side has a singular local system (for
/// example when the velocity field vanishes).
pub fn solve_tof(
    grid: &FineGrid,
    u: &FaceFluxField,
    phi: &CellScalarField,
    degree: usize,
) -> Result<DgField> {
    let n = grid.n_cells();
    let bs = DgField::block_size(degree);

    // dependency graph: upwind neighbor -> cell
    let mut graph = DiGraph::<(), ()>::with_capacity(n, 2 * n);
    for _ in 0..n {
        graph.add_node(());
    }
    for (fid, face) in grid.faces().iter().enumerate() {
        if let Some(c2) = face.cell2 {
            let flux = u.values()[fid];
            if flux > 0.0 {
                graph.add_edge((face.cell1 as u32).into(), (c2 as u32).into(), ());
            } else if flux < 0.0 {
                graph.add_edge((c2 as u32).into(), (face.cell1 as u32).into(), ());
            }
        }
    }

    // Tarjan emits components in reverse topological order of the
    // condensation; iterate backwards to visit upstream blocks first.
    let components = tarjan_scc(&graph);

    let mut tof = DgField::zeros(grid, degree);
    let mut solved = vec![false; n];

    for comp in components.iter().rev() {
        let cells: Vec<usize> = comp.iter().map(|ix| ix.index()).collect();
        if cells.len() == 1 {
            let c = cells[0];
            let sys = build_cell_system(grid, u, phi, degree, c);
            let mut rhs = sys.rhs.clone();
            for &(nb, fid, flux_out) in &sys.upwind {
                debug_assert!(solved[nb]);
                let face = grid.face(fid);
                for (p, w) in face_quadrature(face) {
                    let tau_up = tof.eval_unchecked(grid, nb, p[0], p[1]);
                    let psi = basis_values(grid, c, degree, p[0], p[1]);
                    for i in 0..bs {
                        rhs[i] -= w * flux_out * tau_up * psi[i];
                    }
                }
            }
            let local = solve_local(&sys.diag, &rhs).ok_or_else(|| {
                Error::DegenerateFlow(format!(
                    "cell {c} has a singular transport block with nonzero source; the velocity field cannot carry flow through it"
                ))
            })?;
            tof.block_mut(c).copy_from_slice(local.as_slice());
            solved[c] = true;
        } else {
            // flow cycle: solve the whole component as one dense system
            let m = cells.len();
            let mut index_of = std::collections::HashMap::new();
            for (k, &c) in cells.iter().enumerate() {
                index_of.insert(c, k);
            }
            let mut a = DMatrix::zeros(m * bs, m * bs);
            let mut rhs = DVector::zeros(m * bs);
            for (k, &c) in cells.iter().enumerate() {
                let sys = build_cell_system(grid, u, phi, degree, c);
                a.view_mut((k * bs, k * bs), (bs, bs)).copy_from(&sys.diag);
                for i in 0..bs {
                    rhs[k * bs + i] = sys.rhs[i];
                }
                for &(nb, fid, flux_out) in &sys.upwind {
                    let face = grid.face(fid);
                    if let Some(&knb) = index_of.get(&nb) {
                        for (p, w) in face_quadrature(face) {
                            let psi_c = basis_values(grid, c, degree, p[0], p[1]);
                            let psi_nb = basis_values(grid, nb, degree, p[0], p[1]);
                            for i in 0..bs {
                                for j in 0..bs {
                                    a[(k * bs + i, knb * bs + j)] +=
                                        w * flux_out * psi_nb[j] * psi_c[i];
                                }
                            }
                        }
                    } else {
                        debug_assert!(solved[nb]);
                        for (p, w) in face_quadrature(face) {
                            let tau_up = tof.eval_unchecked(grid, nb, p[0], p[1]);
                            let psi = basis_values(grid, c, degree, p[0], p[1]);
                            for i in 0..bs {
                                rhs[k * bs + i] -= w * flux_out * tau_up * psi[i];
                            }
                        }
                    }
                }
            }
            let local = solve_local(&a, &rhs).ok_or_else(|| {
                Error::DegenerateFlow(format!(
                    "flow cycle of {m} cells has a singular transport block"
                ))
            })?;
            for (k, &c) in cells.iter().enumerate() {
                tof.block_mut(c)
                    .copy_from_slice(&local.as_slice()[k * bs..(k + 1) * bs]);
                solved[c] = true;
            }
        }
    }
    Ok(tof)
}

/// Dense local solve; `None` when the block is singular unless the
/// right-hand side vanishes too (then the zero solution is returned).
fn solve_local(a: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = a.amax().max(f64::MIN_POSITIVE);
    if let Some(x) = a.clone().lu().solve(rhs) {
        let resid = (a * &x - rhs).amax();
        if resid <= 1e-8 * (scale * x.amax()).max(rhs.amax()).max(f64::MIN_POSITIVE) {
            return Some(x);
        }
    }
    if rhs.amax() <= 1e-14 * scale.max(1.0) {
        return Some(DVector::zeros(rhs.len()));
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::BoundarySpec;

    fn uniform_flow(grid: &FineGrid, ux: f64) -> FaceFluxField {
        let mut u = FaceFluxField::zeros(grid);
        for (fid, face) in grid.faces().iter().enumerate() {
            u.values_mut()[fid] = ux * face.normal[0];
        }
        u
    }

    /// Brute-force monolithic dense assembly and solve of the same
    /// discrete system, ignoring the flow ordering entirely.
    fn monolithic_solve(
        grid: &FineGrid,
        u: &FaceFluxField,
        phi: &CellScalarField,
        degree: usize,
    ) -> DVector<f64> {
        let bs = DgField::block_size(degree);
        let n = grid.n_cells() * bs;
        let mut a = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);
        let grads = basis_gradients(grid, degree);
        for c in 0..grid.n_cells() {
            rhs[c * bs] = phi[c] * grid.cell_area();
            if degree > 0 {
                let cv = u.cell_velocity(grid, c);
                for (p, w) in cell_quadrature(grid, c) {
                    let vel = cv.eval(p[0], p[1]);
                    let psi = basis_values(grid, c, degree, p[0], p[1]);
                    for i in 0..bs {
                        let advect = vel[0] * grads[i][0] + vel[1] * grads[i][1];
                        for j in 0..bs {
                            a[(c * bs + i, c * bs + j)] -= w * psi[j] * advect;
                        }
                    }
                }
            }
            for cf in grid.cell_faces(c) {
                let flux_out = u.outward(&cf);
                if flux_out == 0.0 {
                    continue;
                }
                let face = grid.face(cf.face);
                if flux_out > 0.0 {
                    for (p, w) in face_quadrature(face) {
                        let psi = basis_values(grid, c, degree, p[0], p[1]);
                        for i in 0..bs {
                            for j in 0..bs {
                                a[(c * bs + i, c * bs + j)] += w * flux_out * psi[j] * psi[i];
                            }
                        }
                    }
                } else if let Some(nb) = grid.opposite(cf.face, c) {
                    for (p, w) in face_quadrature(face) {
                        let psi_c = basis_values(grid, c, degree, p[0], p[1]);
                        let psi_nb = basis_values(grid, nb, degree, p[0], p[1]);
                        for i in 0..bs {
                            for j in 0..bs {
                                a[(c * bs + i, nb * bs + j)] += w * flux_out * psi_nb[j] * psi_c[i];
                            }
                        }
                    }
                }
            }
        }
        a.lu().solve(&rhs).expect("monolithic system solvable")
    }

    #[test]
    fn uniform_flow_matches_analytic_means() {
        let grid = FineGrid::new(2.0, 1.0, 8, 2, BoundarySpec::all_no_flow()).unwrap();
        let (phi_v, u0) = (0.25, 0.5);
        let phi = CellScalarField::constant(&grid, phi_v);
        let u = uniform_flow(&grid, u0);
        let tof = solve_tof(&grid, &u, &phi, 1).unwrap();
        for c in 0..grid.n_cells() {
            let [bx, _] = grid.cell_center(c);
            let expected = phi_v * bx / u0;
            assert!(
                (tof.cell_mean(c) - expected).abs() <= 1e-10 * expected.max(1.0),
                "cell {c}: {} vs {}",
                tof.cell_mean(c),
                expected
            );
        }
    }

    #[test]
    fn zero_porosity_gives_zero_tof() {
        let grid = FineGrid::new(1.0, 1.0, 4, 2, BoundarySpec::all_no_flow()).unwrap();
        let phi = CellScalarField::new(vec![0.0; 8]);
        let u = uniform_flow(&grid, 1.0);
        let tof = solve_tof(&grid, &u, &phi, 1).unwrap();
        assert_eq!(tof.max_abs(), 0.0);
    }

    #[test]
    fn doubling_velocity_halves_tof() {
        let grid = FineGrid::new(2.0, 1.0, 6, 3, BoundarySpec::all_no_flow()).unwrap();
        let phi = CellScalarField::constant(&grid, 0.3);
        let mut u = FaceFluxField::zeros(&grid);
        for (fid, face) in grid.faces().iter().enumerate() {
            u.values_mut()[fid] =
                face.normal[0] * (0.5 + 0.1 * face.center[1]) + 0.05 * face.normal[1];
        }
        let tof1 = solve_tof(&grid, &u, &phi, 1).unwrap();
        let mut u2 = u.clone();
        for v in u2.values_mut() {
            *v *= 2.0;
        }
        let tof2 = solve_tof(&grid, &u2, &phi, 1).unwrap();
        for (a, b) in tof1.coeffs().iter().zip(tof2.coeffs()) {
            assert!((a - 2.0 * b).abs() <= 1e-10 * a.abs().max(1e-30));
        }
    }

    #[test]
    fn zero_velocity_is_degenerate() {
        let grid = FineGrid::new(1.0, 1.0, 2, 2, BoundarySpec::all_no_flow()).unwrap();
        let phi = CellScalarField::constant(&grid, 0.2);
        let u = FaceFluxField::zeros(&grid);
        match solve_tof(&grid, &u, &phi, 1) {
            Err(Error::DegenerateFlow(_)) => {}
            other => panic!("expected degenerate flow, got {other:?}"),
        }
    }

    #[test]
    fn reordered_solve_matches_monolithic() {
        let grid = FineGrid::new(1.5, 1.0, 5, 4, BoundarySpec::all_no_flow()).unwrap();
        let phi = CellScalarField::new((0..20).map(|i| 0.1 + 0.02 * (i % 7) as f64).collect());
        let mut u = FaceFluxField::zeros(&grid);
        for (fid, face) in grid.faces().iter().enumerate() {
            // skewed but acyclic flow
            u.values_mut()[fid] = face.normal[0] * (1.0 + 0.3 * face.center[1])
                + face.normal[1] * 0.2 * (face.center[0] - 0.75);
        }
        let tof = solve_tof(&grid, &u, &phi, 1).unwrap();
        let mono = monolithic_solve(&grid, &u, &phi, 1);
        for (k, c) in tof.coeffs().iter().enumerate() {
            assert!((c - mono[k]).abs() <= 1e-10 * mono[k].abs().max(1.0), "dof {k}");
        }
    }

    /// A four-cell vortex superposed on a weak crossflow: the cycle forms
    /// one strongly connected component of size 4.
    pub fn vortex_flow(grid: &FineGrid, swirl: f64, cross: f64) -> FaceFluxField {
        assert_eq!((grid.nx, grid.ny), (2, 2));
        let mut u = FaceFluxField::zeros(grid);
        for (fid, face) in grid.faces().iter().enumerate() {
            u.values_mut()[fid] = cross * face.normal[0];
        }
        // counter-clockwise cycle 0 -> 1 -> 3 -> 2 -> 0
        let bottom_mid = grid
            .faces()
            .iter()
            .position(|f| f.cell1 == 0 && f.cell2 == Some(1))
            .unwrap();
        let right_mid = grid
            .faces()
            .iter()
            .position(|f| f.cell1 == 1 && f.cell2 == Some(3))
            .unwrap();
        let top_mid = grid
            .faces()
            .iter()
            .position(|f| f.cell1 == 2 && f.cell2 == Some(3))
            .unwrap();
        let left_mid = grid
            .faces()
            .iter()
            .position(|f| f.cell1 == 0 && f.cell2 == Some(2))
            .unwrap();
        u.values_mut()[bottom_mid] += swirl;
        u.values_mut()[right_mid] += swirl;
        u.values_mut()[top_mid] -= swirl;
        u.values_mut()[left_mid] -= swirl;
        u
    }

    #[test]
    fn flow_cycle_is_solved_jointly() {
        let grid = FineGrid::new(1.0, 1.0, 2, 2, BoundarySpec::all_no_flow()).unwrap();
        let phi = CellScalarField::constant(&grid, 0.2);
        let u = vortex_flow(&grid, 1.0, 0.3);

        // the cycle is a single SCC of size 4
        let mut graph = DiGraph::<(), ()>::new();
        for _ in 0..4 {
            graph.add_node(());
        }
        for (fid, face) in grid.faces().iter().enumerate() {
            if let Some(c2) = face.cell2 {
                let flux = u.values()[fid];
                if flux > 0.0 {
                    graph.add_edge((face.cell1 as u32).into(), (c2 as u32).into(), ());
                } else if flux < 0.0 {
                    graph.add_edge((c2 as u32).into(), (face.cell1 as u32).into(), ());
                }
            }
        }
        assert!(tarjan_scc(&graph).iter().any(|c| c.len() == 4));

        let tof = solve_tof(&grid, &u, &phi, 1).unwrap();
        let mono = monolithic_solve(&grid, &u, &phi, 1);
        for (k, c) in tof.coeffs().iter().enumerate() {
            assert!((c - mono[k]).abs() <= 1e-10 * mono[k].abs().max(1.0));
        }
    }
}
