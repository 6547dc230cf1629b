//! Mobility laws and their low-dimensional approximation: linear relative
//! permeabilities, fractional flow, saturation-independent mobility
//! profiles (from time-of-flight level sets or from stored saturation
//! states), and the online least-squares coefficient fit.

use crate::error::{Error, Result};
use crate::field::DgField;
use crate::linalg::solve_normal_equations;
use crate::mesh::FineGrid;
use nalgebra::{DMatrix, DVector};

/// Clamp a saturation field to [0, 1] at the coefficient level: cell means
/// are clamped and gradients scaled so the four corner values (the extrema
/// of a linear function on a rectangle) stay within bounds. The identity
/// for fields already inside the bounds.
pub fn clamp_saturation(s: &DgField) -> DgField {
    let mut out = s.clone();
    let bs = out.bs();
    for c in 0..out.n_cells() {
        let block = out.block_mut(c);
        let mean = block[0].clamp(0.0, 1.0);
        block[0] = mean;
        if bs > 1 {
            let halfspan = 0.5 * (block[1].abs() + block[2].abs());
            let allowed = mean.min(1.0 - mean);
            if halfspan > allowed {
                let scale = if halfspan > 0.0 { allowed / halfspan } else { 0.0 };
                block[1] *= scale;
                block[2] *= scale;
            }
        }
    }
    out
}

/// Wetting, non-wetting and total mobility for the linear relative
/// permeability laws: lam_w = s/mu_w, lam_n = (1-s)/mu_n.
///
/// The input saturation is clamped to [0, 1] first; inside the bounds the
/// map is exactly linear in the coefficients, so both mobilities are
/// representable in the same broken space.
pub fn linear_mobilities(s: &DgField, mu_w: f64, mu_n: f64) -> (DgField, DgField, DgField) {
    let sc = clamp_saturation(s);
    let lam_w = sc.scaled(1.0 / mu_w);
    let mut lam_n = sc.scaled(-1.0 / mu_n);
    let bs = sc.bs();
    for c in 0..sc.n_cells() {
        lam_n.coeffs_mut()[c * bs] += 1.0 / mu_n;
    }
    let mut lam_t = lam_w.clone();
    lam_t.axpy(1.0, &lam_n);
    (lam_w, lam_n, lam_t)
}

/// M saturation-independent wetting/non-wetting/total mobility profiles
/// with the precomputed Gram matrix of the total profiles in the L2 norm.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MobilityBasis {
    pub wetting: Vec<DgField>,
    pub nonwetting: Vec<DgField>,
    pub total: Vec<DgField>,
    gram: DMatrix<f64>,
}

impl MobilityBasis {
    pub fn from_profiles(grid: &FineGrid, wetting: Vec<DgField>, nonwetting: Vec<DgField>) -> Self {
        assert_eq!(wetting.len(), nonwetting.len());
        let total: Vec<DgField> = wetting
            .iter()
            .zip(&nonwetting)
            .map(|(w, n)| {
                let mut t = w.clone();
                t.axpy(1.0, n);
                t
            })
            .collect();
        let m = total.len();
        let mut gram = DMatrix::zeros(m, m);
        for q in 0..m {
            for r in q..m {
                let v = total[q].l2_inner(grid, &total[r]);
                gram[(q, r)] = v;
                gram[(r, q)] = v;
            }
        }
        MobilityBasis { wetting, nonwetting, total, gram }
    }

    pub fn len(&self) -> usize {
        self.total.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total.is_empty()
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Total mobility field at a fixed coefficient vector.
    pub fn combine_total(&self, theta: &[f64]) -> DgField {
        combine(&self.total, theta)
    }
}

fn combine(fields: &[DgField], theta: &[f64]) -> DgField {
    assert_eq!(fields.len(), theta.len());
    let mut out = fields[0].scaled(theta[0]);
    for (f, &t) in fields.iter().zip(theta).skip(1) {
        out.axpy(t, f);
    }
    out
}

/// Fit coefficients of the parametrized mobility.
#[derive(Debug, Clone, PartialEq)]
pub struct FitCoefficients {
    pub theta: Vec<f64>,
    /// Set when the profile Gram matrix was rank-deficient and the
    /// minimal-norm solution was taken.
    pub rank_deficient: bool,
}

/// Mobility profiles from time-of-flight level sets.
///
/// Profile 1 is the unflooded state lam(0) everywhere, profile M the fully
/// flooded lam(1); interior profiles q = 2..M-1 switch from lam(1) to
/// lam(0) where the time-of-flight exceeds (q-1) T/(M-2). The indicator is
/// evaluated at cell barycenters, so the profiles are cellwise constant.
pub fn profiles_from_tof(
    grid: &FineGrid,
    tof: &DgField,
    m: usize,
    t_end: f64,
    mu_w: f64,
    mu_n: f64,
) -> Result<MobilityBasis> {
    if m < 2 {
        return Err(Error::Config(format!("at least 2 mobility profiles are required, got {m}")));
    }
    if !(t_end > 0.0) {
        return Err(Error::Config(format!("end time must be positive, got {t_end}")));
    }
    let lam_w = |s: f64| s / mu_w;
    let lam_n = |s: f64| (1.0 - s) / mu_n;
    let degree = tof.degree();
    let constant = |v: f64| DgField::constant(grid, degree, v);

    let mut wetting = Vec::with_capacity(m);
    let mut nonwetting = Vec::with_capacity(m);
    wetting.push(constant(lam_w(0.0)));
    nonwetting.push(constant(lam_n(0.0)));
    for q in 2..m {
        let threshold = (q - 1) as f64 * t_end / (m - 2) as f64;
        let mut w = DgField::zeros(grid, degree);
        let mut n = DgField::zeros(grid, degree);
        let bs = w.bs();
        for c in 0..grid.n_cells() {
            let s = if tof.cell_mean(c) > threshold { 0.0 } else { 1.0 };
            w.coeffs_mut()[c * bs] = lam_w(s);
            n.coeffs_mut()[c * bs] = lam_n(s);
        }
        wetting.push(w);
        nonwetting.push(n);
    }
    wetting.push(constant(lam_w(1.0)));
    nonwetting.push(constant(lam_n(1.0)));
    Ok(MobilityBasis::from_profiles(grid, wetting, nonwetting))
}

/// Mobility profiles from stored saturation states.
pub fn profiles_from_snapshots(
    grid: &FineGrid,
    saturations: &[DgField],
    mu_w: f64,
    mu_n: f64,
) -> Result<MobilityBasis> {
    if saturations.len() < 2 {
        return Err(Error::Config(format!(
            "at least 2 saturation states are required to form profiles, got {}",
            saturations.len()
        )));
    }
    let mut wetting = Vec::with_capacity(saturations.len());
    let mut nonwetting = Vec::with_capacity(saturations.len());
    for s in saturations {
        let (w, n, _) = linear_mobilities(s, mu_w, mu_n);
        wetting.push(w);
        nonwetting.push(n);
    }
    Ok(MobilityBasis::from_profiles(grid, wetting, nonwetting))
}

/// Least-squares fit of the total mobility of a saturation in the span of
/// the total profiles, measured in the L2(Omega) norm.
pub fn fit_theta(grid: &FineGrid, s: &DgField, basis: &MobilityBasis, mu_w: f64, mu_n: f64) -> FitCoefficients {
    let (_, _, lam_t) = linear_mobilities(s, mu_w, mu_n);
    fit_theta_field(grid, &lam_t, basis)
}

/// Same fit for an explicitly given total mobility field.
pub fn fit_theta_field(grid: &FineGrid, lambda_t: &DgField, basis: &MobilityBasis) -> FitCoefficients {
    let m = basis.len();
    let mut rhs = DVector::zeros(m);
    for q in 0..m {
        rhs[q] = lambda_t.l2_inner(grid, &basis.total[q]);
    }
    let sol = solve_normal_equations(basis.gram(), &rhs);
    if sol.rank_deficient {
        log::warn!("mobility profile Gram matrix is rank-deficient; using the minimal-norm fit");
    }
    FitCoefficients { theta: sol.coeffs.iter().copied().collect(), rank_deficient: sol.rank_deficient }
}

/// Parametrized mobilities: the same coefficients applied to the wetting
/// and non-wetting profiles. Total mobility is their sum by construction.
pub fn parametrized_mobilities(
    theta: &[f64],
    basis: &MobilityBasis,
) -> (DgField, DgField, DgField) {
    let lam_w = combine(&basis.wetting, theta);
    let lam_n = combine(&basis.nonwetting, theta);
    let mut lam_t = lam_w.clone();
    lam_t.axpy(1.0, &lam_n);
    (lam_w, lam_n, lam_t)
}
