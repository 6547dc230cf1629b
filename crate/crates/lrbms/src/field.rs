//! Broken polynomial spaces on the fine grid: piecewise-constant (k = 0)
//! and piecewise-linear (k = 1) fields, jump/weighted-mean traces,
//! quadrature, and cellwise coefficient fields (permeability, porosity).
//!
//! The local basis on a cell with barycenter b is the scaled monomial set
//! {1, (x - b_x)/hx, (y - b_y)/hy}. The cell mass matrix is then diagonal:
//! |T| * diag(1, 1/12, 1/12).

use crate::error::{Error, Result};
use crate::mesh::{Face, FineGrid};

/// Abscissa of the 2-point Gauss rule on [-1, 1] (weights are 1 each).
pub const GAUSS_2: f64 = 0.577_350_269_189_625_8;

/// The two Gauss points of a face, as (x, y) pairs.
pub fn face_quadrature(face: &Face) -> [([f64; 2], f64); 2] {
    let [cx, cy] = face.center;
    let half = 0.5 * face.length;
    // tangent is the normal rotated by 90 degrees
    let (tx, ty) = (-face.normal[1], face.normal[0]);
    let w = 0.5 * face.length;
    [
        ([cx - GAUSS_2 * half * tx, cy - GAUSS_2 * half * ty], w),
        ([cx + GAUSS_2 * half * tx, cy + GAUSS_2 * half * ty], w),
    ]
}

/// Tensor 2x2 Gauss points of a cell with weights summing to the cell area.
pub fn cell_quadrature(grid: &FineGrid, cell: usize) -> [([f64; 2], f64); 4] {
    let [bx, by] = grid.cell_center(cell);
    let dx = 0.5 * grid.hx * GAUSS_2;
    let dy = 0.5 * grid.hy * GAUSS_2;
    let w = 0.25 * grid.cell_area();
    [
        ([bx - dx, by - dy], w),
        ([bx + dx, by - dy], w),
        ([bx - dx, by + dy], w),
        ([bx + dx, by + dy], w),
    ]
}

/// Piecewise-polynomial DG function of degree 0 or 1.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DgField {
    degree: usize,
    n_cells: usize,
    coeffs: Vec<f64>,
}

impl DgField {
    pub fn block_size(degree: usize) -> usize {
        match degree {
            0 => 1,
            1 => 3,
            _ => panic!("only degrees 0 and 1 are supported, got {degree}"),
        }
    }

    pub fn zeros(grid: &FineGrid, degree: usize) -> Self {
        let bs = Self::block_size(degree);
        DgField { degree, n_cells: grid.n_cells(), coeffs: vec![0.0; grid.n_cells() * bs] }
    }

    pub fn constant(grid: &FineGrid, degree: usize, value: f64) -> Self {
        let mut f = Self::zeros(grid, degree);
        let bs = f.bs();
        for c in 0..f.n_cells {
            f.coeffs[c * bs] = value;
        }
        f
    }

    pub fn from_coeffs(degree: usize, n_cells: usize, coeffs: Vec<f64>) -> Self {
        assert_eq!(coeffs.len(), n_cells * Self::block_size(degree));
        DgField { degree, n_cells, coeffs }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn bs(&self) -> usize {
        Self::block_size(self.degree)
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn block(&self, cell: usize) -> &[f64] {
        let bs = self.bs();
        &self.coeffs[cell * bs..(cell + 1) * bs]
    }

    pub fn block_mut(&mut self, cell: usize) -> &mut [f64] {
        let bs = self.bs();
        &mut self.coeffs[cell * bs..(cell + 1) * bs]
    }

    /// Cell mean (the constant-mode coefficient in the centered basis).
    pub fn cell_mean(&self, cell: usize) -> f64 {
        self.coeffs[cell * self.bs()]
    }

    /// Constant gradient on a cell; zero for degree 0.
    pub fn gradient(&self, grid: &FineGrid, cell: usize) -> [f64; 2] {
        if self.degree == 0 {
            [0.0, 0.0]
        } else {
            let b = self.block(cell);
            [b[1] / grid.hx, b[2] / grid.hy]
        }
    }

    /// Evaluate on a cell without checking that the point lies inside.
    pub fn eval_unchecked(&self, grid: &FineGrid, cell: usize, x: f64, y: f64) -> f64 {
        let b = self.block(cell);
        if self.degree == 0 {
            b[0]
        } else {
            let [bx, by] = grid.cell_center(cell);
            b[0] + b[1] * (x - bx) / grid.hx + b[2] * (y - by) / grid.hy
        }
    }

    /// Evaluate at a point inside the closure of `cell`.
    pub fn evaluate(&self, grid: &FineGrid, cell: usize, x: f64, y: f64) -> Result<f64> {
        let [bx, by] = grid.cell_center(cell);
        let tol = 1e-12 * grid.h();
        if (x - bx).abs() > 0.5 * grid.hx + tol || (y - by).abs() > 0.5 * grid.hy + tol {
            return Err(Error::Domain(format!(
                "point ({x}, {y}) lies outside cell {cell} centered at ({bx}, {by})"
            )));
        }
        Ok(self.eval_unchecked(grid, cell, x, y))
    }

    /// Values at the four cell corners (the extrema of a linear function).
    pub fn corner_values(&self, cell: usize) -> [f64; 4] {
        let b = self.block(cell);
        if self.degree == 0 {
            return [b[0]; 4];
        }
        let gx = 0.5 * b[1];
        let gy = 0.5 * b[2];
        [b[0] - gx - gy, b[0] + gx - gy, b[0] - gx + gy, b[0] + gx + gy]
    }

    pub fn scaled(&self, factor: f64) -> DgField {
        let mut out = self.clone();
        for c in &mut out.coeffs {
            *c *= factor;
        }
        out
    }

    pub fn axpy(&mut self, alpha: f64, other: &DgField) {
        assert_eq!(self.coeffs.len(), other.coeffs.len());
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += alpha * b;
        }
    }

    pub fn sub(&self, other: &DgField) -> DgField {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// Mass-weighted L2(Omega) inner product of two fields of equal degree.
    pub fn l2_inner(&self, grid: &FineGrid, other: &DgField) -> f64 {
        assert_eq!(self.degree, other.degree);
        let area = grid.cell_area();
        let mut acc = 0.0;
        match self.degree {
            0 => {
                for c in 0..self.n_cells {
                    acc += area * self.coeffs[c] * other.coeffs[c];
                }
            }
            _ => {
                for c in 0..self.n_cells {
                    let a = self.block(c);
                    let b = other.block(c);
                    acc += area * (a[0] * b[0] + (a[1] * b[1] + a[2] * b[2]) / 12.0);
                }
            }
        }
        acc
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }
}

/// Diagonal of the local mass matrix for a given degree, scaled by |T|.
pub fn mass_diagonal(area: f64, degree: usize) -> [f64; 3] {
    match degree {
        0 => [area, 0.0, 0.0],
        _ => [area, area / 12.0, area / 12.0],
    }
}

/// Values of the local basis functions at a point of a cell.
pub fn basis_values(grid: &FineGrid, cell: usize, degree: usize, x: f64, y: f64) -> [f64; 3] {
    if degree == 0 {
        [1.0, 0.0, 0.0]
    } else {
        let [bx, by] = grid.cell_center(cell);
        [1.0, (x - bx) / grid.hx, (y - by) / grid.hy]
    }
}

/// Constant gradients of the local basis functions.
pub fn basis_gradients(grid: &FineGrid, degree: usize) -> [[f64; 2]; 3] {
    if degree == 0 {
        [[0.0, 0.0]; 3]
    } else {
        [[0.0, 0.0], [1.0 / grid.hx, 0.0], [0.0, 1.0 / grid.hy]]
    }
}

/// L2 projection of a pointwise function onto the broken space, computed
/// with the tensor 2-point Gauss rule per cell.
pub fn l2_project<F: Fn(f64, f64) -> f64>(grid: &FineGrid, degree: usize, g: F) -> DgField {
    let bs = DgField::block_size(degree);
    let mass = mass_diagonal(grid.cell_area(), degree);
    let mut out = DgField::zeros(grid, degree);
    for cell in 0..grid.n_cells() {
        let mut moments = [0.0f64; 3];
        for (p, w) in cell_quadrature(grid, cell) {
            let gv = g(p[0], p[1]);
            let psi = basis_values(grid, cell, degree, p[0], p[1]);
            for i in 0..bs {
                moments[i] += w * gv * psi[i];
            }
        }
        let block = out.block_mut(cell);
        for i in 0..bs {
            block[i] = moments[i] / mass[i];
        }
    }
    out
}

/// L2 norm over the domain and broken H1 norm sqrt(L2^2 + sum |grad|^2).
pub fn broken_norms(grid: &FineGrid, f: &DgField) -> (f64, f64) {
    let l2sq = f.l2_inner(grid, f);
    let mut grad_sq = 0.0;
    let area = grid.cell_area();
    for c in 0..f.n_cells() {
        let [gx, gy] = f.gradient(grid, c);
        grad_sq += area * (gx * gx + gy * gy);
    }
    (l2sq.sqrt(), (l2sq + grad_sq).sqrt())
}

/// One scalar value per fine cell (permeability, porosity, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct CellScalarField {
    values: Vec<f64>,
}

impl CellScalarField {
    pub fn new(values: Vec<f64>) -> Self {
        CellScalarField { values }
    }

    pub fn constant(grid: &FineGrid, value: f64) -> Self {
        CellScalarField { values: vec![value; grid.n_cells()] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Check the positivity bounds required of a permeability field.
    pub fn validate_permeability(&self) -> Result<()> {
        for (i, &v) in self.values.iter().enumerate() {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("permeability must be positive, cell {i} has {v}")));
            }
        }
        Ok(())
    }

    /// Check 0 < phi <= 1 as required of a porosity field.
    pub fn validate_porosity(&self) -> Result<()> {
        for (i, &v) in self.values.iter().enumerate() {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("porosity must lie in (0, 1], cell {i} has {v}")));
            }
        }
        Ok(())
    }
}

impl std::ops::Index<usize> for CellScalarField {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

/// Weights and penalty bases of one face, derived from the adjacent
/// permeability values. The mean weights the low-permeability side,
/// tau_l = a_{3-l} / (a_1 + a_2), which keeps the form coercive with the
/// harmonic-mean penalty at any permeability contrast. On boundary faces
/// tau_1 = 1 and both bases equal the single adjacent value.
#[derive(Debug, Clone, Copy)]
pub struct FaceWeights {
    pub tau1: f64,
    pub tau2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl FaceWeights {
    pub fn for_face(face: &Face, k: &CellScalarField) -> Self {
        let a1 = k[face.cell1];
        match face.cell2 {
            Some(c2) => {
                let a2 = k[c2];
                let s = a1 + a2;
                FaceWeights { tau1: a2 / s, tau2: a1 / s, a1, a2 }
            }
            None => FaceWeights { tau1: 1.0, tau2: 0.0, a1, a2: a1 },
        }
    }

    /// Harmonic-mean penalty base 2*a1*a2/(a1+a2).
    pub fn harmonic(&self) -> f64 {
        2.0 * self.a1 * self.a2 / (self.a1 + self.a2)
    }
}

/// Jump and weighted mean of a field across an interior face at a point.
pub fn jump_and_mean(
    f: &DgField,
    grid: &FineGrid,
    face_id: usize,
    weights: &FaceWeights,
    x: f64,
    y: f64,
) -> Result<(f64, f64)> {
    let face = grid.face(face_id);
    let c2 = face.cell2.ok_or_else(|| {
        Error::Domain(format!("face {face_id} is a boundary face; use the one-sided boundary forms"))
    })?;
    let t1 = f.eval_unchecked(grid, face.cell1, x, y);
    let t2 = f.eval_unchecked(grid, c2, x, y);
    Ok((t1 - t2, weights.tau1 * t1 + weights.tau2 * t2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::BoundarySpec;

    fn grid(nx: usize, ny: usize) -> FineGrid {
        FineGrid::new(1.0, 1.0, nx, ny, BoundarySpec::all_dirichlet(0.0)).unwrap()
    }

    #[test]
    fn evaluate_constant_and_centered() {
        let g = grid(2, 2);
        let f = DgField::constant(&g, 1, 5.0);
        assert_eq!(f.evaluate(&g, 0, 0.1, 0.2).unwrap(), 5.0);
        let mut f = DgField::zeros(&g, 1);
        f.block_mut(0).copy_from_slice(&[0.0, 1.0, 0.0]);
        let [bx, by] = g.cell_center(0);
        assert_eq!(f.evaluate(&g, 0, bx, by).unwrap(), 0.0);
    }

    #[test]
    fn evaluate_linear_block() {
        let g = grid(1, 1);
        let mut f = DgField::zeros(&g, 1);
        f.block_mut(0).copy_from_slice(&[1.0, 2.0, 0.0]);
        let [bx, by] = g.cell_center(0);
        let v = f.evaluate(&g, 0, bx + 0.5 * g.hx, by).unwrap();
        assert!((v - 2.0).abs() < 1e-15);
    }

    #[test]
    fn evaluate_rejects_outside_point() {
        let g = grid(2, 2);
        let f = DgField::constant(&g, 1, 1.0);
        assert!(f.evaluate(&g, 0, 0.9, 0.9).is_err());
    }

    #[test]
    fn jump_and_mean_cases() {
        let g = FineGrid::new(1.0, 1.0, 2, 1, BoundarySpec::all_no_flow()).unwrap();
        let fid = g
            .faces()
            .iter()
            .position(|f| !f.is_boundary())
            .expect("interior face");
        let face = g.face(fid);
        let [x, y] = face.center;

        // globally continuous: zero jump, mean = trace
        let f = l2_project(&g, 1, |x, _| x);
        let w = FaceWeights { tau1: 0.5, tau2: 0.5, a1: 1.0, a2: 1.0 };
        let (j, m) = jump_and_mean(&f, &g, fid, &w, x, y).unwrap();
        assert!(j.abs() < 1e-14);
        assert!((m - 0.5).abs() < 1e-14);

        // traces (3, 1), equal weights -> jump 2, mean 2
        let mut f = DgField::zeros(&g, 1);
        f.block_mut(0)[0] = 3.0;
        f.block_mut(1)[0] = 1.0;
        let (j, m) = jump_and_mean(&f, &g, fid, &w, x, y).unwrap();
        assert_eq!((j, m), (2.0, 2.0));

        // a1 = 1, a2 = 3: the low-permeability side gets the large weight,
        // tau = (3/4, 1/4), mean 2.5
        let k = CellScalarField::new(vec![1.0, 3.0]);
        let w = FaceWeights::for_face(face, &k);
        let (j, m) = jump_and_mean(&f, &g, fid, &w, x, y).unwrap();
        assert_eq!(j, 2.0);
        assert!((m - 2.5).abs() < 1e-15);

        // boundary faces are rejected
        let bid = g.faces().iter().position(|f| f.is_boundary()).unwrap();
        assert!(jump_and_mean(&f, &g, bid, &w, 0.0, 0.0).is_err());
    }

    #[test]
    fn boundary_face_weights_are_one_sided() {
        let g = grid(2, 1);
        let k = CellScalarField::new(vec![2.0, 5.0]);
        let bid = g.faces().iter().position(|f| f.is_boundary()).unwrap();
        let w = FaceWeights::for_face(g.face(bid), &k);
        assert_eq!(w.tau1, 1.0);
        assert_eq!(w.a1, w.a2);
        assert_eq!(w.harmonic(), w.a1);
    }

    #[test]
    fn project_zero_and_linear_are_exact() {
        let g = grid(3, 2);
        let z = l2_project(&g, 1, |_, _| 0.0);
        assert!(z.coeffs().iter().all(|&c| c == 0.0));

        let f = l2_project(&g, 1, |x, y| 2.0 * x - 3.0 * y + 1.0);
        for c in 0..g.n_cells() {
            for (p, _) in cell_quadrature(&g, c) {
                let exact = 2.0 * p[0] - 3.0 * p[1] + 1.0;
                assert!((f.eval_unchecked(&g, c, p[0], p[1]) - exact).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn project_quadratic_moments() {
        // g = x^2 on the unit cell: mean 1/3, slope 1 at the barycenter.
        let g = grid(1, 1);
        let f = l2_project(&g, 1, |x, _| x * x);
        let b = f.block(0);
        assert!((b[0] - 1.0 / 3.0).abs() < 1e-14);
        assert!((b[1] - 1.0).abs() < 1e-14);
        assert!(b[2].abs() < 1e-14);
    }

    #[test]
    fn projection_is_idempotent() {
        let g = grid(4, 3);
        let f = l2_project(&g, 1, |x, y| (3.0 * x).sin() * (2.0 * y).cos());
        let f2 = l2_project(&g, 1, |x, y| {
            let cell = {
                let i = ((x / g.hx) as usize).min(g.nx - 1);
                let j = ((y / g.hy) as usize).min(g.ny - 1);
                g.cell_id(i, j)
            };
            f.eval_unchecked(&g, cell, x, y)
        });
        for (a, b) in f.coeffs().iter().zip(f2.coeffs()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn norms_match_exact_integrals() {
        let g = grid(1, 1);
        let z = DgField::zeros(&g, 1);
        assert_eq!(broken_norms(&g, &z), (0.0, 0.0));

        let c = DgField::constant(&g, 1, 2.0);
        let (l2, h1) = broken_norms(&g, &c);
        assert!((l2 - 2.0).abs() < 1e-15);
        assert!((h1 - 2.0).abs() < 1e-15);

        let mut f = DgField::zeros(&g, 1);
        f.block_mut(0).copy_from_slice(&[0.0, 1.0, 0.0]);
        let (l2, h1) = broken_norms(&g, &f);
        assert!((l2 - (1.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert!((h1 - (1.0f64 / 12.0 + 1.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn quadrature_exact_for_bilinear() {
        let g = FineGrid::new(2.0, 3.0, 3, 2, BoundarySpec::all_dirichlet(0.0)).unwrap();
        // integrate x*y over the domain: exact (Lx^2/2)(Ly^2/2)
        let mut total = 0.0;
        for c in 0..g.n_cells() {
            for (p, w) in cell_quadrature(&g, c) {
                total += w * p[0] * p[1];
            }
        }
        assert!((total - 2.0 * 4.5).abs() < 1e-12);
    }

    #[test]
    fn jumps_of_projected_affine_vanish() {
        let g = grid(4, 4);
        let f = l2_project(&g, 1, |x, y| 7.0 * x - 2.0 * y + 0.5);
        for (fid, face) in g.faces().iter().enumerate() {
            if face.cell2.is_none() {
                continue;
            }
            let w = FaceWeights { tau1: 0.5, tau2: 0.5, a1: 1.0, a2: 1.0 };
            for (p, _) in face_quadrature(face) {
                let (j, _) = jump_and_mean(&f, &g, fid, &w, p[0], p[1]).unwrap();
                assert!(j.abs() < 1e-13);
            }
        }
    }
}
