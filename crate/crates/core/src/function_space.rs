//! Discretized L2 arithmetic for curves observed on a shared time grid.
//!
//! Curves are stored as their values at the grid points. Integrals are
//! composite trapezoidal sums, so an operator kernel `K` acts on a curve as
//! `(K f)(s) = sum_u K[s, u] w_u f(u)`. Spectral quantities are therefore
//! computed from the weighted symmetrization `W^{1/2} K W^{1/2}`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{FcarError, Result};

/// Absolute tolerance for kernel symmetry.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Eigenvalues below `-PSD_TOL * trace` are treated as a PSD violation.
pub const PSD_TOL: f64 = 1e-8;
/// Components with `lambda_j <= MIN_EIGEN_RATIO * lambda_1` never enter a likelihood.
pub const MIN_EIGEN_RATIO: f64 = 1e-12;

/// Sorted evaluation points with trapezoidal quadrature weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl TimeGrid {
    /// Builds a grid over the given points using composite trapezoidal weights.
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(FcarError::Validation(format!(
                "time grid needs at least 2 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|t| !t.is_finite()) {
            return Err(FcarError::Validation("time grid contains non-finite points".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FcarError::Validation("time grid points must be strictly increasing".into()));
        }
        let last = points.len() - 1;
        let weights = (0..points.len())
            .map(|k| {
                let left = if k > 0 { points[k] - points[k - 1] } else { 0.0 };
                let right = if k < last { points[k + 1] - points[k] } else { 0.0 };
                0.5 * (left + right)
            })
            .collect();
        Ok(Self { points, weights })
    }

    /// `len` equally spaced points on `[t_min, t_max]`, endpoints included.
    pub fn uniform(t_min: f64, t_max: f64, len: usize) -> Result<Self> {
        if !(t_max > t_min) {
            return Err(FcarError::Validation(format!(
                "empty time interval [{t_min}, {t_max}]"
            )));
        }
        if len < 2 {
            return Err(FcarError::Validation(format!(
                "time grid needs at least 2 points, got {len}"
            )));
        }
        let step = (t_max - t_min) / (len - 1) as f64;
        let mut points: Vec<f64> = (0..len).map(|k| t_min + step * k as f64).collect();
        points[len - 1] = t_max;
        Self::new(points)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn t_min(&self) -> f64 {
        self.points[0]
    }

    pub fn t_max(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Evaluates `f` at every grid point.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.points.iter().map(|&t| f(t)).collect()
    }
}

fn same_grid(a: &Arc<TimeGrid>, b: &Arc<TimeGrid>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

fn check_grid(a: &Arc<TimeGrid>, b: &Arc<TimeGrid>, what: &str) -> Result<()> {
    if same_grid(a, b) {
        Ok(())
    } else {
        Err(FcarError::Dimension(format!("{what}: time grids differ")))
    }
}

/// A single function sampled on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    values: Vec<f64>,
    grid: Arc<TimeGrid>,
}

impl Curve {
    pub fn new(values: Vec<f64>, grid: Arc<TimeGrid>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(FcarError::Dimension(format!(
                "curve has {} values but grid has {} points",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { values, grid })
    }

    pub fn zeros(grid: Arc<TimeGrid>) -> Self {
        Self {
            values: vec![0.0; grid.len()],
            grid,
        }
    }

    pub fn from_fn(grid: Arc<TimeGrid>, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: grid.sample(f),
            grid,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Squared L2 norm.
    pub fn norm_sq(&self) -> f64 {
        weighted_dot(self.grid.weights(), &self.values, &self.values)
    }
}

fn weighted_dot(w: &[f64], f: &[f64], g: &[f64]) -> f64 {
    w.iter().zip(f).zip(g).map(|((w, f), g)| w * f * g).sum()
}

/// `<f, g> = integral of f g`, by quadrature.
pub fn inner_product(f: &Curve, g: &Curve) -> Result<f64> {
    check_grid(&f.grid, &g.grid, "inner product")?;
    Ok(weighted_dot(f.grid.weights(), &f.values, &g.values))
}

/// n curves on one grid, stored as an `n x T` matrix (row `i` is location `i`).
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDataset {
    values: DMatrix<f64>,
    grid: Arc<TimeGrid>,
    location_ids: Vec<String>,
}

impl FunctionalDataset {
    pub fn new(values: DMatrix<f64>, grid: Arc<TimeGrid>, location_ids: Vec<String>) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(FcarError::InsufficientData { needed: 1, got: 0 });
        }
        if values.ncols() != grid.len() {
            return Err(FcarError::Dimension(format!(
                "dataset has {} columns but grid has {} points",
                values.ncols(),
                grid.len()
            )));
        }
        if location_ids.len() != values.nrows() {
            return Err(FcarError::Dimension(format!(
                "{} location ids for {} curves",
                location_ids.len(),
                values.nrows()
            )));
        }
        let mut seen = std::collections::HashSet::with_capacity(location_ids.len());
        for id in &location_ids {
            if !seen.insert(id.as_str()) {
                return Err(FcarError::Validation(format!("duplicate location id {id:?}")));
            }
        }
        Ok(Self {
            values,
            grid,
            location_ids,
        })
    }

    /// Dataset with location ids `"0", "1", ...`.
    pub fn with_index_ids(values: DMatrix<f64>, grid: Arc<TimeGrid>) -> Result<Self> {
        let ids = (0..values.nrows()).map(|i| i.to_string()).collect();
        Self::new(values, grid, ids)
    }

    pub fn from_curves(curves: &[Curve]) -> Result<Self> {
        let first = curves
            .first()
            .ok_or(FcarError::InsufficientData { needed: 1, got: 0 })?;
        let grid = first.grid.clone();
        for c in curves {
            check_grid(&grid, &c.grid, "dataset")?;
        }
        let values = DMatrix::from_fn(curves.len(), grid.len(), |i, t| curves[i].values[t]);
        Self::with_index_ids(values, grid)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn location_ids(&self) -> &[String] {
        &self.location_ids
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn curve(&self, i: usize) -> Result<Curve> {
        if i >= self.n() {
            return Err(FcarError::Index {
                index: i,
                limit: self.n(),
            });
        }
        Ok(Curve {
            values: self.values.row(i).iter().copied().collect(),
            grid: self.grid.clone(),
        })
    }

    /// Same ids and grid, new values.
    pub fn with_values(&self, values: DMatrix<f64>) -> Result<Self> {
        Self::new(values, self.grid.clone(), self.location_ids.clone())
    }

    /// Time average of each curve, `T^{-1} sum_t Y_i(t)`.
    pub fn time_averages(&self) -> Vec<f64> {
        let t = self.values.ncols() as f64;
        self.values.row_iter().map(|r| r.sum() / t).collect()
    }
}

/// Symmetric kernel of a covariance operator.
#[derive(Debug, Clone, PartialEq)]
pub struct CovOperator {
    kernel: DMatrix<f64>,
    grid: Arc<TimeGrid>,
}

impl CovOperator {
    /// Validates shape and symmetry. Positive semidefiniteness is checked by
    /// [`spectral_decompose`], which is where it matters.
    pub fn new(kernel: DMatrix<f64>, grid: Arc<TimeGrid>) -> Result<Self> {
        let t = grid.len();
        if kernel.nrows() != t || kernel.ncols() != t {
            return Err(FcarError::Dimension(format!(
                "kernel is {}x{} but grid has {t} points",
                kernel.nrows(),
                kernel.ncols()
            )));
        }
        if kernel.iter().any(|v| !v.is_finite()) {
            return Err(FcarError::InvariantViolation("kernel has non-finite entries".into()));
        }
        for s in 0..t {
            for u in (s + 1)..t {
                if (kernel[(s, u)] - kernel[(u, s)]).abs() > SYMMETRY_TOL {
                    return Err(FcarError::InvariantViolation(format!(
                        "kernel not symmetric at ({s}, {u})"
                    )));
                }
            }
        }
        Ok(Self { kernel, grid })
    }

    pub fn zeros(grid: Arc<TimeGrid>) -> Self {
        let t = grid.len();
        Self {
            kernel: DMatrix::zeros(t, t),
            grid,
        }
    }

    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    /// Quadrature trace `sum_t w_t K[t, t]`.
    pub fn trace(&self) -> f64 {
        self.grid
            .weights()
            .iter()
            .enumerate()
            .map(|(t, w)| w * self.kernel[(t, t)])
            .sum()
    }

    /// `(K f)(s) = sum_u K[s, u] w_u f(u)`.
    pub fn apply(&self, f: &Curve) -> Result<Curve> {
        check_grid(&self.grid, &f.grid, "operator application")?;
        let wf = DVector::from_iterator(
            f.values.len(),
            f.values.iter().zip(self.grid.weights()).map(|(v, w)| v * w),
        );
        let out = &self.kernel * wf;
        Ok(Curve {
            values: out.iter().copied().collect(),
            grid: self.grid.clone(),
        })
    }

    /// `c K`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            kernel: &self.kernel * c,
            grid: self.grid.clone(),
        }
    }
}

/// Hilbert-Schmidt norm of `A - B`: `sqrt(sum_{s,u} w_s w_u (A - B)[s, u]^2)`.
pub fn hs_distance(a: &CovOperator, b: &CovOperator) -> Result<f64> {
    check_grid(&a.grid, &b.grid, "HS distance")?;
    let w = a.grid.weights();
    let t = w.len();
    let mut acc = 0.0;
    for u in 0..t {
        for s in 0..t {
            let d = a.kernel[(s, u)] - b.kernel[(s, u)];
            acc += w[s] * w[u] * d * d;
        }
    }
    Ok(acc.sqrt())
}

/// Pointwise sample mean of the curves.
pub fn dataset_mean(data: &FunctionalDataset) -> Curve {
    let n = data.n() as f64;
    let values = data.values.column_iter().map(|c| c.sum() / n).collect();
    Curve {
        values,
        grid: data.grid.clone(),
    }
}

/// Subtracts `mean` from every row.
pub(crate) fn subtract_curve(values: &DMatrix<f64>, mean: &[f64]) -> DMatrix<f64> {
    let mut out = values.clone();
    for (t, mut col) in out.column_iter_mut().enumerate() {
        let m = mean[t];
        col.iter_mut().for_each(|v| *v -= m);
    }
    out
}

/// `n^{-1} X' X` for a row-centered `n x T` matrix.
pub(crate) fn covariance_of_centered(centered: &DMatrix<f64>, grid: &Arc<TimeGrid>) -> CovOperator {
    let n = centered.nrows() as f64;
    let mut kernel = centered.tr_mul(centered) / n;
    let t = kernel.nrows();
    for s in 0..t {
        for u in (s + 1)..t {
            let v = 0.5 * (kernel[(s, u)] + kernel[(u, s)]);
            kernel[(s, u)] = v;
            kernel[(u, s)] = v;
        }
    }
    CovOperator {
        kernel,
        grid: grid.clone(),
    }
}

/// Naive empirical covariance `n^{-1} sum_i (Y_i - Ybar) (x) (Y_i - Ybar)`.
pub fn marginal_covariance(data: &FunctionalDataset) -> Result<CovOperator> {
    if data.n() < 2 {
        return Err(FcarError::InsufficientData {
            needed: 2,
            got: data.n(),
        });
    }
    let mean = dataset_mean(data);
    let centered = subtract_curve(&data.values, &mean.values);
    Ok(covariance_of_centered(&centered, &data.grid))
}

/// Eigenvalues (nonincreasing) and L2-orthonormal eigenfunctions of a [`CovOperator`].
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    eigenvalues: Vec<f64>,
    /// `T x K`; column `j` holds `phi_j` at the grid points.
    eigenfunctions: DMatrix<f64>,
    grid: Arc<TimeGrid>,
    clamped: bool,
}

impl EigenSystem {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenfunction_matrix(&self) -> &DMatrix<f64> {
        &self.eigenfunctions
    }

    pub fn eigenfunction(&self, j: usize) -> Result<Curve> {
        if j >= self.eigenvalues.len() {
            return Err(FcarError::Index {
                index: j,
                limit: self.eigenvalues.len(),
            });
        }
        Ok(Curve {
            values: self.eigenfunctions.column(j).iter().copied().collect(),
            grid: self.grid.clone(),
        })
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Whether any negative eigenvalue was clamped to zero.
    pub fn clamped(&self) -> bool {
        self.clamped
    }

    /// Kernel `sum_{j < k} lambda_j phi_j(s) phi_j(u)`.
    pub fn reconstruct(&self, k: usize) -> CovOperator {
        let k = k.min(self.len());
        let phi = self.eigenfunctions.columns(0, k);
        let scaled = DMatrix::from_fn(phi.nrows(), k, |r, c| phi[(r, c)] * self.eigenvalues[c]);
        let mut kernel = scaled * phi.transpose();
        let t = kernel.nrows();
        for s in 0..t {
            for u in (s + 1)..t {
                let v = 0.5 * (kernel[(s, u)] + kernel[(u, s)]);
                kernel[(s, u)] = v;
                kernel[(u, s)] = v;
            }
        }
        CovOperator {
            kernel,
            grid: self.grid.clone(),
        }
    }
}

/// Solves the quadrature-weighted symmetric eigenproblem of `op`.
///
/// Eigenfunctions follow a sign rule: the entry of largest magnitude is positive.
pub fn spectral_decompose(op: &CovOperator) -> Result<EigenSystem> {
    let t = op.grid.len();
    for s in 0..t {
        for u in (s + 1)..t {
            if (op.kernel[(s, u)] - op.kernel[(u, s)]).abs() > SYMMETRY_TOL {
                return Err(FcarError::InvariantViolation(format!(
                    "kernel not symmetric at ({s}, {u})"
                )));
            }
        }
    }
    let sqrt_w: Vec<f64> = op.grid.weights().iter().map(|w| w.sqrt()).collect();
    let sym = DMatrix::from_fn(t, t, |s, u| sqrt_w[s] * op.kernel[(s, u)] * sqrt_w[u]);
    let eig = SymmetricEigen::new(sym);

    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let trace: f64 = eig.eigenvalues.iter().sum();
    let floor = -PSD_TOL * trace.abs().max(f64::MIN_POSITIVE);
    let mut clamped = false;
    let mut eigenvalues = Vec::with_capacity(t);
    let mut eigenfunctions = DMatrix::zeros(t, t);
    for (j, &src) in order.iter().enumerate() {
        let mut lambda = eig.eigenvalues[src];
        if lambda < 0.0 {
            if lambda < floor {
                return Err(FcarError::InvariantViolation(format!(
                    "operator is not positive semidefinite: eigenvalue {lambda:e}"
                )));
            }
            lambda = 0.0;
            clamped = true;
        }
        eigenvalues.push(lambda);

        let v = eig.eigenvectors.column(src);
        let mut col: Vec<f64> = v.iter().zip(&sqrt_w).map(|(v, s)| v / s).collect();
        let mut pivot = 0;
        for (k, x) in col.iter().enumerate() {
            if x.abs() > col[pivot].abs() {
                pivot = k;
            }
        }
        if col[pivot] < 0.0 {
            col.iter_mut().for_each(|x| *x = -*x);
        }
        eigenfunctions.column_mut(j).copy_from_slice(&col);
    }

    Ok(EigenSystem {
        eigenvalues,
        eigenfunctions,
        grid: op.grid.clone(),
        clamped,
    })
}

/// Smallest `p` whose leading eigenvalues explain at least `threshold` of the total.
pub fn truncate_by_fve(eig: &EigenSystem, threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(FcarError::Validation(format!(
            "FVE threshold {threshold} outside (0, 1]"
        )));
    }
    let cumulative: Vec<f64> = eig
        .eigenvalues
        .iter()
        .scan(0.0, |acc, &l| {
            *acc += l;
            Some(*acc)
        })
        .collect();
    let total = cumulative.last().copied().unwrap_or(0.0);
    if !(total > 0.0) {
        return Err(FcarError::DegenerateOperator(
            "all eigenvalues are zero".into(),
        ));
    }
    let p = cumulative
        .iter()
        .position(|&c| c / total >= threshold)
        .map_or(cumulative.len(), |k| k + 1);
    Ok(p.max(1))
}

/// Reduces `p` until `lambda_p > MIN_EIGEN_RATIO * lambda_1`.
pub fn usable_components(eig: &EigenSystem, p: usize) -> usize {
    let lead = eig.eigenvalues.first().copied().unwrap_or(0.0);
    let mut p = p.min(eig.len());
    while p > 0 && eig.eigenvalues[p - 1] <= MIN_EIGEN_RATIO * lead {
        p -= 1;
    }
    p
}

/// `n x p` matrix of scores `<Y_i, phi_j>`.
pub fn project_dataset(data: &FunctionalDataset, eig: &EigenSystem, p: usize) -> Result<DMatrix<f64>> {
    check_grid(&data.grid, &eig.grid, "projection")?;
    if p > eig.len() {
        return Err(FcarError::Index {
            index: p,
            limit: eig.len(),
        });
    }
    let w = data.grid.weights();
    let basis = eig.eigenfunctions.columns(0, p);
    let weighted = DMatrix::from_fn(basis.nrows(), p, |t, j| w[t] * basis[(t, j)]);
    Ok(&data.values * weighted)
}
