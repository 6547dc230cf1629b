//! Greedy construction of the localized reduced basis: solve the reduced
//! problem for every training parameter, extend the local bases with the
//! snapshot of the worst-approximated one, repeat until the largest true
//! energy error drops below tolerance.
//!
//! The error at a training parameter is evaluated entirely in the reduced
//! space: with the energy matrix projected onto the basis and the moment
//! vectors g_t = Phi' A_bar p_t kept up to date per extension, the energy
//! error is |p_N|^2_A_red - 2 p_N' g_t + |p_t|^2_A_bar, so one iteration
//! costs one dense factorization per parameter and nothing fine-sized.

use super::{Localizer, Parameter, ReducedBasis};
use crate::error::Result;
use crate::field::{CellScalarField, DgField};
use crate::linalg::{gram_schmidt_step, GramSchmidt, SparseMatrix};
use crate::mesh::{CoarseGrid, FineGrid};
use crate::mobility::{parametrized_mobilities, MobilityBasis};
use crate::pressure::{
    assemble_mobility_part, assemble_penalty_part, assemble_rhs_fixed, assemble_rhs_mobility,
    solve_pressure, FaceData, FluidProps, SolverOpts,
};
use nalgebra::{DMatrix, DVector};

/// Everything needed to assemble and solve the fine pressure equation.
#[derive(Clone, Copy)]
pub struct FineProblem<'a> {
    pub grid: &'a FineGrid,
    pub k: &'a CellScalarField,
    pub fd: &'a [FaceData],
    pub fluids: &'a FluidProps,
    pub q1: &'a DgField,
    pub degree: usize,
    pub solver: SolverOpts,
}

#[derive(Debug, Clone, Copy)]
pub struct GreedyOpts {
    /// Stop once the largest training error is at or below this tolerance.
    pub eps_tol: f64,
    /// Hard cap on the total basis size.
    pub n_max: usize,
    /// Relative rejection threshold for local basis extensions.
    pub reject_tol: f64,
    /// Worker threads for the embarrassingly parallel loops (1 = serial).
    pub threads: usize,
}

impl Default for GreedyOpts {
    fn default() -> Self {
        GreedyOpts { eps_tol: 1e-4, n_max: 500, reject_tol: 1e-10, threads: 1 }
    }
}

/// Outcome of the greedy loop: orthonormalized local bases plus the raw
/// snapshots they came from.
#[derive(Debug, Clone)]
pub struct GreedyResult {
    pub basis: ReducedBasis,
    pub snapshots: Vec<DgField>,
    pub snapshot_indices: Vec<usize>,
    pub max_errors: Vec<f64>,
}

pub(crate) fn run_parallel<T, F>(threads: usize, count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if threads <= 1 {
        (0..count).map(f).collect()
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool");
        pool.install(|| (0..count).into_par_iter().map(f).collect())
    }
}

/// Fine pressure solutions for the whole training set, computed once.
/// Solves start from zero so results do not depend on the thread count.
pub fn solve_training_snapshots(
    fp: &FineProblem,
    mobility: &MobilityBasis,
    train: &[Parameter],
    threads: usize,
) -> Result<Vec<DgField>> {
    let results = run_parallel(threads, train.len(), |t| {
        let (lam_w, lam_n, _) = parametrized_mobilities(&train[t].0, mobility);
        solve_pressure(
            fp.grid, fp.k, fp.fd, &lam_w, &lam_n, fp.fluids, fp.q1, fp.degree, fp.solver, None,
        )
    });
    results.into_iter().collect()
}

/// Reduced operators over a chronologically ordered basis, grown in
/// per-iteration batches (grouping by coarse cell happens at the end).
struct GrowingSpace {
    entries: Vec<(usize, Vec<f64>)>,
    c_red: DMatrix<f64>,
    b_red: Vec<DMatrix<f64>>,
    a_bar_red: DMatrix<f64>,
    e_red: DVector<f64>,
    d_red: Vec<DVector<f64>>,
    /// Moment vectors g_t = Phi' A_bar p_t, one per training parameter,
    /// and the constants |p_t|^2_A_bar.
    moments: Vec<Vec<f64>>,
    consts: Vec<f64>,
}

impl GrowingSpace {
    fn n(&self) -> usize {
        self.entries.len()
    }

    /// Append a batch of accepted local vectors and extend every reduced
    /// operator by the corresponding rows/columns.
    #[allow(clippy::too_many_arguments)]
    fn append_batch(
        &mut self,
        batch: Vec<(usize, Vec<f64>)>,
        loc: &Localizer,
        dim: usize,
        c_pen: &SparseMatrix,
        a_q: &[SparseMatrix],
        a_bar: &SparseMatrix,
        e_fix: &[f64],
        d_mob: &[Vec<f64>],
        cache: &[DgField],
        threads: usize,
    ) {
        if batch.is_empty() {
            return;
        }
        let n_old = self.n();
        let n_new = n_old + batch.len();

        // fine-grid images of each new vector under every operator
        let images: Vec<(Vec<f64>, Vec<Vec<f64>>, Vec<f64>)> =
            run_parallel(threads.min(batch.len()), batch.len(), |b| {
                let (e, w) = &batch[b];
                let mut x = vec![0.0; dim];
                loc.scatter_add(w, 1.0, *e, &mut x);
                let mut img_pen = vec![0.0; dim];
                c_pen.matvec(&x, &mut img_pen);
                let mut img_q = Vec::with_capacity(a_q.len());
                for a in a_q {
                    let mut y = vec![0.0; dim];
                    a.matvec(&x, &mut y);
                    img_q.push(y);
                }
                let mut img_bar = vec![0.0; dim];
                a_bar.matvec(&x, &mut img_bar);
                (img_pen, img_q, img_bar)
            });

        let old_entries = std::mem::take(&mut self.entries);
        let all: Vec<(usize, Vec<f64>)> = old_entries.into_iter().chain(batch).collect();

        // each new column sets both (i, j) and (j, i), so the grown matrix
        // stays exactly symmetric
        let extend = |mat: &mut DMatrix<f64>, col_images: &[&Vec<f64>]| {
            let mut grown = DMatrix::zeros(n_new, n_new);
            grown.view_mut((0, 0), (n_old, n_old)).copy_from(mat);
            for (bcol, img) in col_images.iter().enumerate() {
                let jc = n_old + bcol;
                for (i, (ei, phi)) in all.iter().enumerate() {
                    let v = loc.inner_slices(phi, *ei, img);
                    grown[(i, jc)] = v;
                    grown[(jc, i)] = v;
                }
            }
            *mat = grown;
        };

        let pen_imgs: Vec<&Vec<f64>> = images.iter().map(|t| &t.0).collect();
        extend(&mut self.c_red, &pen_imgs);
        for q in 0..a_q.len() {
            let q_imgs: Vec<&Vec<f64>> = images.iter().map(|t| &t.1[q]).collect();
            let mut mat = std::mem::replace(&mut self.b_red[q], DMatrix::zeros(0, 0));
            extend(&mut mat, &q_imgs);
            self.b_red[q] = mat;
        }
        let bar_imgs: Vec<&Vec<f64>> = images.iter().map(|t| &t.2).collect();
        extend(&mut self.a_bar_red, &bar_imgs);

        let mut e_new = DVector::zeros(n_new);
        e_new.rows_mut(0, n_old).copy_from(&self.e_red);
        for (bcol, (e, w)) in all.iter().enumerate().skip(n_old) {
            e_new[bcol] = loc.inner_slices(w, *e, e_fix);
        }
        self.e_red = e_new;
        for (q, d) in d_mob.iter().enumerate() {
            let mut d_new = DVector::zeros(n_new);
            d_new.rows_mut(0, n_old).copy_from(&self.d_red[q]);
            for (bcol, (e, w)) in all.iter().enumerate().skip(n_old) {
                d_new[bcol] = loc.inner_slices(w, *e, d);
            }
            self.d_red[q] = d_new;
        }

        // extend the energy moments of every training parameter
        let new_moments: Vec<Vec<f64>> = run_parallel(threads, cache.len(), |t| {
            let mut m = Vec::with_capacity(images.len());
            for (_, _, img_bar) in &images {
                m.push(crate::linalg::dot(img_bar, cache[t].coeffs()));
            }
            m
        });
        for (t, extra) in new_moments.into_iter().enumerate() {
            self.moments[t].extend(extra);
        }
        self.entries = all;
    }
}

/// Run the greedy basis construction against precomputed fine snapshots.
///
/// The error measure is the true energy error at the uniform mean
/// parameter. Termination: tolerance reached, total size at the cap, or a
/// parameter re-selected (stagnation).
pub fn greedy_build(
    fp: &FineProblem,
    mobility: &MobilityBasis,
    coarse: &CoarseGrid,
    train: &[Parameter],
    cache: &[DgField],
    opts: &GreedyOpts,
) -> Result<GreedyResult> {
    assert_eq!(train.len(), cache.len(), "one cached solution per training parameter");
    let m = mobility.len();
    let loc = Localizer::new(fp.grid, coarse, fp.degree);
    let dim = fp.grid.n_cells() * DgField::block_size(fp.degree);

    // parameter-separated fine operators, assembled once
    let c_pen = assemble_penalty_part(fp.grid, fp.fd, fp.degree);
    let a_q: Vec<SparseMatrix> = (0..m)
        .map(|q| assemble_mobility_part(fp.grid, fp.k, fp.fd, &mobility.total[q], fp.degree))
        .collect();
    let e_fix = assemble_rhs_fixed(fp.grid, fp.fd, fp.q1, fp.degree);
    let d_mob: Vec<Vec<f64>> = (0..m)
        .map(|q| {
            assemble_rhs_mobility(
                fp.grid,
                fp.k,
                fp.fd,
                &mobility.wetting[q],
                &mobility.nonwetting[q],
                fp.fluids,
                fp.degree,
            )
        })
        .collect();

    // energy norm at the uniform mean parameter
    let uniform = vec![1.0 / m as f64; m];
    let mut a_bar =
        assemble_mobility_part(fp.grid, fp.k, fp.fd, &mobility.combine_total(&uniform), fp.degree);
    a_bar.add_scaled(&c_pen, 1.0);

    let consts: Vec<f64> =
        run_parallel(opts.threads, cache.len(), |t| a_bar.quadratic_form(cache[t].coeffs()));

    let mut space = GrowingSpace {
        entries: Vec::new(),
        c_red: DMatrix::zeros(0, 0),
        b_red: vec![DMatrix::zeros(0, 0); m],
        a_bar_red: DMatrix::zeros(0, 0),
        e_red: DVector::zeros(0),
        d_red: vec![DVector::zeros(0); m],
        moments: vec![Vec::new(); cache.len()],
        consts,
    };

    let mut selected: Vec<usize> = Vec::new();
    let mut snapshots: Vec<DgField> = Vec::new();
    let mut max_errors: Vec<f64> = Vec::new();

    loop {
        let n = space.n();
        let errors: Vec<f64> = run_parallel(opts.threads, train.len(), |t| {
            let mu = &train[t].0;
            if n == 0 {
                return space.consts[t].max(0.0).sqrt();
            }
            let mut a = space.c_red.clone();
            let mut rhs = space.e_red.clone();
            for q in 0..m {
                a += &space.b_red[q] * mu[q];
                rhs += &space.d_red[q] * mu[q];
            }
            let Some(chol) = a.cholesky() else {
                log::warn!("reduced training system not positive definite at index {t}");
                return f64::INFINITY;
            };
            let p_n = chol.solve(&rhs);
            let g_t = DVector::from_column_slice(&space.moments[t]);
            let err_sq = (&space.a_bar_red * &p_n).dot(&p_n) - 2.0 * g_t.dot(&p_n)
                + space.consts[t];
            err_sq.max(0.0).sqrt()
        });

        let mut t_max = 0;
        let mut eps_max = f64::NEG_INFINITY;
        for (t, &e) in errors.iter().enumerate() {
            if e > eps_max {
                eps_max = e;
                t_max = t;
            }
        }
        max_errors.push(eps_max);
        if eps_max <= opts.eps_tol {
            break;
        }
        if selected.contains(&t_max) {
            log::warn!(
                "greedy re-selected training parameter {t_max} (error {eps_max:.3e}); stopping to avoid stagnation"
            );
            break;
        }

        selected.push(t_max);
        let snapshot = cache[t_max].clone();
        let mut batch = Vec::new();
        for e in 0..loc.n_coarse() {
            let local = loc.restrict(snapshot.coeffs(), e);
            let basis_e: Vec<Vec<f64>> = space
                .entries
                .iter()
                .filter(|(ee, _)| *ee == e)
                .map(|(_, v)| v.clone())
                .collect();
            if let GramSchmidt::Accepted(w) =
                gram_schmidt_step(&local, &basis_e, |a, b| loc.inner(a, b), opts.reject_tol)
            {
                batch.push((e, w));
            }
        }
        space.append_batch(
            batch,
            &loc,
            dim,
            &c_pen,
            &a_q,
            &a_bar,
            &e_fix,
            &d_mob,
            cache,
            opts.threads,
        );
        snapshots.push(snapshot);
        if space.n() >= opts.n_max {
            log::warn!("greedy reached the basis size cap {}", opts.n_max);
            break;
        }
    }

    let mut basis = ReducedBasis::empty(loc.n_coarse(), fp.degree);
    for (e, v) in space.entries {
        basis.per_cell[e].push(v);
    }
    Ok(GreedyResult { basis, snapshots, snapshot_indices: selected, max_errors })
}
