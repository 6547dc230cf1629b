//! Localized reduced-basis machinery for the pressure equation: training
//! parameter sampling, localized snapshot bases with per-coarse-cell POD
//! compression, one-time projection of the parameter-separated fine
//! operators, and the small dense online solve.

mod greedy;
mod serialize;

pub use greedy::{greedy_build, solve_training_snapshots, FineProblem, GreedyOpts, GreedyResult};
pub use serialize::{load_model, save_model};

use crate::error::{Error, Result};
use crate::field::{mass_diagonal, CellScalarField, DgField};
use crate::linalg::{gram_schmidt_step, thin_svd, GramSchmidt, SparseMatrix};
use crate::mesh::{CoarseGrid, FineGrid};
use crate::mobility::MobilityBasis;
use crate::pressure::{
    assemble_mobility_part, assemble_penalty_part, assemble_rhs_fixed, assemble_rhs_mobility,
    FaceData, FluidProps,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A point of the mobility-coefficient parameter domain (the unit simplex).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter(pub Vec<f64>);

/// Uniform-on-the-simplex training parameters via normalized exponentials,
/// mapped affinely onto the shrunk simplex with entries at least 1e-4.
pub fn sample_training_set(m: usize, count: usize, seed: u64) -> Vec<Parameter> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let floor = 1e-4;
    let scale = 1.0 - m as f64 * floor;
    (0..count)
        .map(|_| {
            let e: Vec<f64> = (0..m).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
            let sum: f64 = e.iter().sum();
            Parameter(e.into_iter().map(|v| floor + scale * v / sum).collect())
        })
        .collect()
}

/// Restriction/prolongation between global DG vectors and the local dof
/// blocks of one coarse cell, together with the local mass-weighted inner
/// product.
#[derive(Debug, Clone)]
pub struct Localizer {
    bs: usize,
    mass: [f64; 3],
    cells: Vec<Vec<usize>>,
}

impl Localizer {
    pub fn new(grid: &FineGrid, coarse: &CoarseGrid, degree: usize) -> Self {
        Localizer {
            bs: DgField::block_size(degree),
            mass: mass_diagonal(grid.cell_area(), degree),
            cells: (0..coarse.n_cells()).map(|e| coarse.fine_cells(e).to_vec()).collect(),
        }
    }

    pub fn n_coarse(&self) -> usize {
        self.cells.len()
    }

    pub fn local_len(&self, e: usize) -> usize {
        self.cells[e].len() * self.bs
    }

    pub fn restrict(&self, global: &[f64], e: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.local_len(e));
        for &c in &self.cells[e] {
            out.extend_from_slice(&global[c * self.bs..(c + 1) * self.bs]);
        }
        out
    }

    pub fn scatter_add(&self, local: &[f64], coeff: f64, e: usize, global: &mut [f64]) {
        for (k, &c) in self.cells[e].iter().enumerate() {
            for i in 0..self.bs {
                global[c * self.bs + i] += coeff * local[k * self.bs + i];
            }
        }
    }

    /// L2 inner product over the coarse cell for local coefficient blocks.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let bs = self.bs;
        let mut acc = 0.0;
        for k in 0..a.len() / bs {
            for i in 0..bs {
                acc += self.mass[i] * a[k * bs + i] * b[k * bs + i];
            }
        }
        acc
    }

    /// Restricted inner product of a local block against a global vector.
    pub fn inner_global(&self, local: &[f64], e: usize, global: &[f64]) -> f64 {
        let bs = self.bs;
        let mut acc = 0.0;
        for (k, &c) in self.cells[e].iter().enumerate() {
            for i in 0..bs {
                acc += self.mass[i] * local[k * bs + i] * global[c * bs + i];
            }
        }
        acc
    }
}

/// Per-coarse-cell orthonormal basis vectors, stored on local dofs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReducedBasis {
    pub degree: usize,
    /// One list of local coefficient vectors per coarse cell.
    pub per_cell: Vec<Vec<Vec<f64>>>,
}

impl ReducedBasis {
    pub fn empty(n_coarse: usize, degree: usize) -> Self {
        ReducedBasis { degree, per_cell: vec![Vec::new(); n_coarse] }
    }

    pub fn total_size(&self) -> usize {
        self.per_cell.iter().map(|b| b.len()).sum()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.per_cell.iter().map(|b| b.len()).collect()
    }

    /// Iterate (coarse cell, local vector) in the global basis order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &Vec<f64>)> {
        self.per_cell
            .iter()
            .enumerate()
            .flat_map(|(e, list)| list.iter().map(move |v| (e, v)))
    }

    /// Orthonormality defect max |<phi_i, phi_j> - delta_ij| within cells.
    pub fn orthonormality_defect(&self, loc: &Localizer) -> f64 {
        let mut worst = 0.0f64;
        for (e, list) in self.per_cell.iter().enumerate() {
            let _ = e;
            for i in 0..list.len() {
                for j in i..list.len() {
                    let ip = loc.inner(&list[i], &list[j]);
                    let expected = if i == j { 1.0 } else { 0.0 };
                    worst = worst.max((ip - expected).abs());
                }
            }
        }
        worst
    }
}

/// Per-coarse-cell POD of raw snapshot restrictions in the local L2 inner
/// product; keeps the smallest mode count whose tail energy is below
/// eps_pca^2 relative.
pub fn pca_compress(
    loc: &Localizer,
    snapshots: &[DgField],
    eps_pca: f64,
) -> ReducedBasis {
    let bs = loc.bs;
    let mut per_cell = Vec::with_capacity(loc.n_coarse());
    for e in 0..loc.n_coarse() {
        let len = loc.local_len(e);
        // weighted snapshot matrix W^(1/2) X
        let mut x = DMatrix::zeros(len, snapshots.len());
        for (s, snap) in snapshots.iter().enumerate() {
            let local = loc.restrict(snap.coeffs(), e);
            for (k, v) in local.iter().enumerate() {
                x[(k, s)] = v * loc.mass[k % bs].sqrt();
            }
        }
        let (u, sigma, _) = thin_svd(&x);
        let total: f64 = sigma.iter().map(|s| s * s).sum();
        let mut rank = 0;
        if total > 0.0 {
            let cutoff = sigma[0] * 1e-14;
            let mut tail = total;
            for (i, s) in sigma.iter().enumerate() {
                if tail <= eps_pca * eps_pca * total || *s <= cutoff {
                    break;
                }
                tail -= s * s;
                rank = i + 1;
            }
        }
        let mut modes = Vec::with_capacity(rank);
        for r in 0..rank {
            let mut mode = vec![0.0; len];
            for k in 0..len {
                mode[k] = u[(k, r)] / loc.mass[k % bs].sqrt();
            }
            modes.push(mode);
        }
        per_cell.push(modes);
    }
    ReducedBasis { degree: snapshots.first().map(|s| s.degree()).unwrap_or(1), per_cell }
}

/// Prepend the normalized indicator of each coarse cell to its local basis
/// and re-orthonormalize the rest. Idempotent when the indicator is
/// already in the span.
pub fn add_unit_functions(loc: &Localizer, basis: &ReducedBasis, reject_tol: f64) -> ReducedBasis {
    let bs = loc.bs;
    let mut per_cell = Vec::with_capacity(loc.n_coarse());
    for (e, list) in basis.per_cell.iter().enumerate() {
        let len = loc.local_len(e);
        let mut unit = vec![0.0; len];
        for k in 0..len / bs {
            unit[k * bs] = 1.0;
        }
        let norm = loc.inner(&unit, &unit).sqrt();
        for v in &mut unit {
            *v /= norm;
        }
        let mut new_list = vec![unit];
        for phi in list {
            match gram_schmidt_step(phi, &new_list, |a, b| loc.inner(a, b), reject_tol) {
                GramSchmidt::Accepted(w) => new_list.push(w),
                GramSchmidt::Rejected => {}
            }
        }
        per_cell.push(new_list);
    }
    ReducedBasis { degree: basis.degree, per_cell }
}

/// Greedy/POD bookkeeping stored with the model.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BuildHistory {
    /// Training-set indices of the selected snapshots, in selection order.
    pub snapshot_indices: Vec<usize>,
    /// Largest training error per greedy iteration.
    pub max_errors: Vec<f64>,
    /// Local basis sizes directly after the greedy loop.
    pub sizes_greedy: Vec<usize>,
    /// Local basis sizes after POD compression, when enabled.
    pub sizes_pca: Option<Vec<usize>>,
}

/// The offline product: localized basis, projected operators, mobility
/// profiles and bookkeeping. Everything the online phase needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReducedModel {
    /// Fingerprint of the grid/fields the model was built for.
    pub checksum: u64,
    pub coarse_nx: usize,
    pub coarse_ny: usize,
    pub degree: usize,
    pub basis: ReducedBasis,
    pub b_q: Vec<DMatrix<f64>>,
    pub c: DMatrix<f64>,
    pub d_q: Vec<DVector<f64>>,
    pub e: DVector<f64>,
    pub mobility: MobilityBasis,
    pub history: BuildHistory,
}

impl ReducedModel {
    pub fn n(&self) -> usize {
        self.c.nrows()
    }

    pub fn m(&self) -> usize {
        self.b_q.len()
    }
}

/// Fingerprint of the discretization a model belongs to.
pub fn grid_checksum(
    grid: &FineGrid,
    k: &CellScalarField,
    phi: &CellScalarField,
    degree: usize,
    c_base: f64,
) -> u64 {
    let mut h = Fnv::new();
    h.write_f64(grid.lx);
    h.write_f64(grid.ly);
    h.write_u64(grid.nx as u64);
    h.write_u64(grid.ny as u64);
    h.write_u64(degree as u64);
    h.write_f64(c_base);
    for &v in k.values() {
        h.write_f64(v);
    }
    for &v in phi.values() {
        h.write_f64(v);
    }
    h.finish()
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
    fn write_u64(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    fn write_f64(&mut self, v: f64) {
        self.write_u64(v.to_bits());
    }
    fn finish(&self) -> u64 {
        self.0
    }
}

/// Project the parameter-separated fine operators onto a reduced basis.
#[allow(clippy::too_many_arguments)]
pub fn precompute_offline(
    grid: &FineGrid,
    k: &CellScalarField,
    fd: &[FaceData],
    fluids: &FluidProps,
    q1: &DgField,
    basis: ReducedBasis,
    loc: &Localizer,
    mobility: MobilityBasis,
    history: BuildHistory,
    c_base_checksum: (u64, usize, usize),
) -> ReducedModel {
    let degree = basis.degree;
    let n = basis.total_size();
    let m = mobility.len();
    let dim = grid.n_cells() * DgField::block_size(degree);

    let entries: Vec<(usize, &Vec<f64>)> = basis.iter().collect();

    // penalty part
    let c_pen = assemble_penalty_part(grid, fd, degree);
    let c_red = project_matrix(&c_pen, &entries, loc, dim);

    // mobility-dependent parts per profile
    let mut b_q = Vec::with_capacity(m);
    let mut d_q = Vec::with_capacity(m);
    for q in 0..m {
        let a_q = assemble_mobility_part(grid, k, fd, &mobility.total[q], degree);
        b_q.push(project_matrix(&a_q, &entries, loc, dim));
        let rhs_q = assemble_rhs_mobility(
            grid,
            k,
            fd,
            &mobility.wetting[q],
            &mobility.nonwetting[q],
            fluids,
            degree,
        );
        d_q.push(project_vector(&rhs_q, &entries, loc));
    }
    let e_fix = assemble_rhs_fixed(grid, fd, q1, degree);
    let e_red = project_vector(&e_fix, &entries, loc);

    let (checksum, coarse_nx, coarse_ny) = c_base_checksum;
    let _ = n;
    ReducedModel {
        checksum,
        coarse_nx,
        coarse_ny,
        degree,
        basis,
        b_q,
        c: c_red,
        d_q,
        e: e_red,
        mobility,
        history,
    }
}

fn project_matrix(
    a: &SparseMatrix,
    entries: &[(usize, &Vec<f64>)],
    loc: &Localizer,
    dim: usize,
) -> DMatrix<f64> {
    let n = entries.len();
    let mut out = DMatrix::zeros(n, n);
    let mut x = vec![0.0; dim];
    let mut y = vec![0.0; dim];
    for (j, (ej, phi_j)) in entries.iter().enumerate() {
        x.fill(0.0);
        loc.scatter_add(phi_j, 1.0, *ej, &mut x);
        a.matvec(&x, &mut y);
        for (i, (ei, phi_i)) in entries.iter().enumerate() {
            out[(i, j)] = loc.inner_slices(phi_i, *ei, &y);
        }
    }
    out
}

fn project_vector(rhs: &[f64], entries: &[(usize, &Vec<f64>)], loc: &Localizer) -> DVector<f64> {
    DVector::from_iterator(
        entries.len(),
        entries.iter().map(|(e, phi)| loc.inner_slices(phi, *e, rhs)),
    )
}

impl Localizer {
    /// Plain (unweighted) dot product of a local block against the
    /// corresponding entries of a global vector.
    pub fn inner_slices(&self, local: &[f64], e: usize, global: &[f64]) -> f64 {
        let bs = self.bs;
        let mut acc = 0.0;
        for (k, &c) in self.cells[e].iter().enumerate() {
            for i in 0..bs {
                acc += local[k * bs + i] * global[c * bs + i];
            }
        }
        acc
    }
}

/// Solve the online reduced system for a coefficient vector theta.
pub fn reduced_solve(model: &ReducedModel, theta: &[f64]) -> Result<DVector<f64>> {
    assert_eq!(theta.len(), model.m());
    let n = model.n();
    if n == 0 {
        return Ok(DVector::zeros(0));
    }
    let mut a = model.c.clone();
    let mut rhs = model.e.clone();
    for (q, &t) in theta.iter().enumerate() {
        a += &model.b_q[q] * t;
        rhs += &model.d_q[q] * t;
    }
    match a.cholesky() {
        Some(chol) => Ok(chol.solve(&rhs)),
        None => Err(Error::ReducedSolve {
            theta: theta.to_vec(),
            reason: "online operator is not positive definite".into(),
        }),
    }
}

/// Expand a reduced coefficient vector into a fine DG field.
pub fn reconstruct(
    grid: &FineGrid,
    loc: &Localizer,
    basis: &ReducedBasis,
    p_n: &DVector<f64>,
) -> DgField {
    assert_eq!(p_n.len(), basis.total_size());
    let mut out = DgField::zeros(grid, basis.degree);
    for (i, (e, phi)) in basis.iter().enumerate() {
        loc.scatter_add(phi, p_n[i], e, out.coeffs_mut());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::l2_project;
    use crate::mesh::BoundarySpec;
    use crate::mobility::profiles_from_tof;
    use crate::pressure::{assemble_bilinear, build_face_data, solve_pressure, SolverOpts};

    fn fluids() -> FluidProps {
        FluidProps {
            mu_w: 0.00130581,
            mu_n: 0.008,
            rho_w: 999.749,
            rho_n: 890.0,
            gravity: [0.0, 0.0],
        }
    }

    #[test]
    fn sampler_is_deterministic_and_on_simplex() {
        let a = sample_training_set(8, 50, 42);
        let b = sample_training_set(8, 50, 42);
        assert_eq!(a, b);
        for p in &a {
            let sum: f64 = p.0.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(p.0.iter().all(|&v| (1e-4..=1.0).contains(&v)));
        }
        // different seeds differ
        let c = sample_training_set(8, 50, 43);
        assert_ne!(a, c);
        // M = 1 collapses to the single vertex
        for p in sample_training_set(1, 5, 7) {
            assert!((p.0[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sampler_coordinate_means_are_uniform() {
        let m = 5;
        let samples = sample_training_set(m, 100_000, 3);
        for q in 0..m {
            let mean: f64 = samples.iter().map(|p| p.0[q]).sum::<f64>() / samples.len() as f64;
            assert!((mean - 1.0 / m as f64).abs() < 0.01, "coordinate {q} mean {mean}");
        }
    }

    #[test]
    fn pca_rank_cases() {
        let grid = FineGrid::new(1.0, 1.0, 4, 2, BoundarySpec::all_no_flow()).unwrap();
        let coarse = CoarseGrid::new(&grid, 2, 1).unwrap();
        let loc = Localizer::new(&grid, &coarse, 1);

        // duplicate snapshots give rank 1 per cell
        let s = l2_project(&grid, 1, |x, y| 1.0 + x * y);
        let basis = pca_compress(&loc, &[s.clone(), s.clone(), s.clone()], 1e-10);
        assert_eq!(basis.sizes(), vec![1, 1]);
        assert!(basis.orthonormality_defect(&loc) <= 1e-10);

        // eps = 0 keeps the numerical rank
        let s2 = l2_project(&grid, 1, |x, y| (3.0 * x).sin() + y);
        let s3 = l2_project(&grid, 1, |x, _| x * x);
        let basis = pca_compress(&loc, &[s.clone(), s2, s3], 0.0);
        assert_eq!(basis.sizes(), vec![3, 3]);

        // projection of every raw restriction onto the modes is complete
        let restricted = loc.restrict(s.coeffs(), 0);
        let mut resid = restricted.clone();
        for mode in &basis.per_cell[0] {
            let c = loc.inner(&resid, mode);
            for (r, m) in resid.iter_mut().zip(mode) {
                *r -= c * m;
            }
        }
        assert!(loc.inner(&resid, &resid).sqrt() <= 1e-8);
    }

    #[test]
    fn unit_functions_prepend_and_are_idempotent() {
        let grid = FineGrid::new(1.0, 1.0, 4, 2, BoundarySpec::all_no_flow()).unwrap();
        let coarse = CoarseGrid::new(&grid, 2, 1).unwrap();
        let loc = Localizer::new(&grid, &coarse, 1);

        let empty = ReducedBasis::empty(2, 1);
        let with_units = add_unit_functions(&loc, &empty, 1e-10);
        assert_eq!(with_units.sizes(), vec![1, 1]);
        assert!(with_units.orthonormality_defect(&loc) <= 1e-10);

        let again = add_unit_functions(&loc, &with_units, 1e-10);
        assert_eq!(again.sizes(), vec![1, 1]);
        for (a, b) in again.per_cell[0][0].iter().zip(&with_units.per_cell[0][0]) {
            assert!((a - b).abs() <= 1e-14);
        }
    }

    #[test]
    fn offline_projection_matches_direct_fine_projection() {
        // c + sum theta_q b_q must equal the projection of the fine
        // operator assembled at the combined mobility
        let grid = FineGrid::new(2.0, 1.0, 8, 4, BoundarySpec::inflow_outflow(10.0, 1.0, 3e-4))
            .unwrap();
        let k = CellScalarField::new((0..32).map(|i| 1e-7 * (1.0 + (i % 5) as f64)).collect());
        let phi = CellScalarField::constant(&grid, 0.2);
        let fl = fluids();
        let fd = build_face_data(&grid, &k, 30.0, fl.mu_w, fl.mu_n);
        let tof = l2_project(&grid, 1, |x, _| x * 1e4);
        let mobility = profiles_from_tof(&grid, &tof, 4, 2e4, fl.mu_w, fl.mu_n).unwrap();
        let coarse = CoarseGrid::new(&grid, 2, 1).unwrap();
        let loc = Localizer::new(&grid, &coarse, 1);
        let q1 = DgField::zeros(&grid, 1);

        // basis: a few orthonormalized localized projections
        let mut basis = ReducedBasis::empty(2, 1);
        for (idx, f) in [
            l2_project(&grid, 1, |x, y| 1.0 + x + y),
            l2_project(&grid, 1, |x, y| (x * 2.0).sin() + 0.2 * y),
            l2_project(&grid, 1, |x, _| x * x),
        ]
        .iter()
        .enumerate()
        {
            let _ = idx;
            for e in 0..2 {
                let local = loc.restrict(f.coeffs(), e);
                if let GramSchmidt::Accepted(w) =
                    gram_schmidt_step(&local, &basis.per_cell[e], |a, b| loc.inner(a, b), 1e-10)
                {
                    basis.per_cell[e].push(w);
                }
            }
        }
        let checksum = grid_checksum(&grid, &k, &phi, 1, 30.0);
        let model = precompute_offline(
            &grid,
            &k,
            &fd,
            &fl,
            &q1,
            basis,
            &loc,
            mobility,
            BuildHistory::default(),
            (checksum, 2, 1),
        );

        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let theta: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.5..1.5)).collect();
            let mut combined = model.c.clone();
            for q in 0..4 {
                combined += &model.b_q[q] * theta[q];
            }
            // direct projection of the fine operator at the combined field
            let lam = model.mobility.combine_total(&theta);
            let a_fine = assemble_bilinear(&grid, &k, &fd, &lam, 1);
            let entries: Vec<(usize, &Vec<f64>)> = model.basis.iter().collect();
            let direct = project_matrix(&a_fine, &entries, &loc, grid.n_cells() * 3);
            let diff = (&combined - &direct).amax();
            assert!(diff <= 1e-12 * direct.amax().max(1e-30), "diff {diff:.3e}");
        }
    }

    #[test]
    fn rhs_mobility_projection_vanishes_without_data() {
        // G = 0 and p_D = 0 leave nothing in the mobility rhs parts
        let grid = FineGrid::new(1.0, 1.0, 4, 2, BoundarySpec::all_dirichlet(0.0)).unwrap();
        let k = CellScalarField::constant(&grid, 1.0);
        let fl = FluidProps { mu_w: 1.0, mu_n: 1.0, rho_w: 1.0, rho_n: 1.0, gravity: [0.0, 0.0] };
        let fd = build_face_data(&grid, &k, 30.0, 1.0, 1.0);
        let lam = DgField::constant(&grid, 1, 1.0);
        let rhs = assemble_rhs_mobility(&grid, &k, &fd, &lam, &lam, &fl, 1);
        assert!(rhs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_vector_basis_reproduces_its_solution() {
        // basis = normalized fine solution at one parameter: the reduced
        // solve returns that solution up to solver tolerance
        let grid = FineGrid::new(2.0, 1.0, 6, 2, BoundarySpec::inflow_outflow(10.0, 1.0, 3e-4))
            .unwrap();
        let k = CellScalarField::constant(&grid, 1e-7);
        let phi = CellScalarField::constant(&grid, 0.2);
        let fl = fluids();
        let fd = build_face_data(&grid, &k, 30.0, fl.mu_w, fl.mu_n);
        let tof = l2_project(&grid, 1, |x, _| x * 1e4);
        let mobility = profiles_from_tof(&grid, &tof, 3, 1e4, fl.mu_w, fl.mu_n).unwrap();
        let q1 = DgField::zeros(&grid, 1);
        let theta = vec![0.2, 0.3, 0.5];
        let (lw, ln, _) = crate::mobility::parametrized_mobilities(&theta, &mobility);
        let p_fine = solve_pressure(
            &grid,
            &k,
            &fd,
            &lw,
            &ln,
            &fl,
            &q1,
            1,
            SolverOpts { tol: 1e-13, max_iter: 100_000 },
            None,
        )
        .unwrap();

        let coarse = CoarseGrid::new(&grid, 1, 1).unwrap();
        let loc = Localizer::new(&grid, &coarse, 1);
        let mut basis = ReducedBasis::empty(1, 1);
        let local = loc.restrict(p_fine.coeffs(), 0);
        if let GramSchmidt::Accepted(w) = gram_schmidt_step(&local, &[], |a, b| loc.inner(a, b), 1e-10)
        {
            basis.per_cell[0].push(w);
        }
        let checksum = grid_checksum(&grid, &k, &phi, 1, 30.0);
        let model = precompute_offline(
            &grid, &k, &fd, &fl, &q1, basis, &loc, mobility, BuildHistory::default(), (checksum, 1, 1),
        );
        let p_n = reduced_solve(&model, &theta).unwrap();
        let rebuilt = reconstruct(&grid, &loc, &model.basis, &p_n);
        let diff = rebuilt.sub(&p_fine);
        let scale = p_fine.max_abs();
        assert!(diff.max_abs() <= 1e-8 * scale, "diff {} scale {scale}", diff.max_abs());
    }

    #[test]
    fn reconstruct_basic_cases() {
        let grid = FineGrid::new(1.0, 1.0, 4, 2, BoundarySpec::all_no_flow()).unwrap();
        let coarse = CoarseGrid::new(&grid, 2, 1).unwrap();
        let loc = Localizer::new(&grid, &coarse, 1);
        let f = l2_project(&grid, 1, |x, y| x - 2.0 * y);
        let mut basis = ReducedBasis::empty(2, 1);
        for e in 0..2 {
            let local = loc.restrict(f.coeffs(), e);
            if let GramSchmidt::Accepted(w) = gram_schmidt_step(&local, &[], |a, b| loc.inner(a, b), 1e-10)
            {
                basis.per_cell[e].push(w);
            }
        }
        let zero = reconstruct(&grid, &loc, &basis, &DVector::zeros(2));
        assert_eq!(zero.max_abs(), 0.0);

        let e0 = reconstruct(&grid, &loc, &basis, &DVector::from_vec(vec![1.0, 0.0]));
        // equals the first basis function scattered to the global grid
        let mut expected = DgField::zeros(&grid, 1);
        loc.scatter_add(&basis.per_cell[0][0], 1.0, 0, expected.coeffs_mut());
        assert_eq!(e0, expected);

        // projection property: residual of the L2 projection onto the span
        // is orthogonal to the span
        let target = l2_project(&grid, 1, |x, y| (x * 3.1).sin() + y);
        let mut coeffs = Vec::new();
        for (e, phi) in basis.iter() {
            coeffs.push(loc.inner_global(phi, e, target.coeffs()));
        }
        let proj = reconstruct(&grid, &loc, &basis, &DVector::from_vec(coeffs));
        let resid = target.sub(&proj);
        for (e, phi) in basis.iter() {
            assert!(loc.inner_global(phi, e, resid.coeffs()).abs() <= 1e-10);
        }
    }

    #[test]
    fn reduced_solve_rejects_indefinite_systems() {
        let tiny = FineGrid::new(1.0, 1.0, 1, 1, BoundarySpec::all_no_flow()).unwrap();
        let one = DgField::constant(&tiny, 1, 1.0);
        let model = ReducedModel {
            checksum: 0,
            coarse_nx: 1,
            coarse_ny: 1,
            degree: 1,
            basis: ReducedBasis::empty(1, 1),
            b_q: vec![DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])],
            c: DMatrix::zeros(2, 2),
            d_q: vec![DVector::zeros(2)],
            e: DVector::from_vec(vec![1.0, 1.0]),
            mobility: MobilityBasis::from_profiles(&tiny, vec![one.clone()], vec![one]),
            history: BuildHistory::default(),
        };
        match reduced_solve(&model, &[1.0]) {
            Err(Error::ReducedSolve { .. }) => {}
            other => panic!("expected reduced-solve error, got {other:?}"),
        }
    }
}
