//! Profile estimation of the covariance operator and the spatial dependence parameter.
//!
//! The fit alternates between two closed-form steps:
//!
//! 1. Given a dependence value, estimate `Gamma` by the empirical covariance of
//!    the conditionally centered curves.
//! 2. Given `Gamma`, project the curves onto its leading eigenfunctions. Each
//!    projection vector is a univariate CAR field with covariance `lambda_j Q^{-1}`,
//!    so the dependence parameter maximizes
//!
//!    ```text
//!    l_n(d) = -(2n)^{-1} sum_{j<=p} [ lambda_j^{-1} y_j' Q(d) y_j + n log lambda_j - log det Q(d) ]
//!    ```
//!
//!    over the admissible interval. `y_j' Q(d) y_j` is affine in `d` and
//!    `log det Q(d)` comes from the cached adjacency spectrum, so each
//!    evaluation costs O(n + p).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FcarError, Result};
use crate::function_space::{
    covariance_of_centered, dataset_mean, hs_distance, marginal_covariance, project_dataset,
    spectral_decompose, subtract_curve, truncate_by_fve, usable_components, CovOperator, Curve,
    FunctionalDataset,
};
use crate::lattice::{admissible_interval, Interval, NeighborhoodGraph};
use crate::model::{center_conditionally, neighbor_residual_sums, PrecisionForm, Variant, SCHEMA_VERSION};

fn default_fve() -> f64 {
    0.95
}
fn default_tau1() -> f64 {
    1e-4
}
fn default_tau2() -> f64 {
    1e-3
}
fn default_max_iterations() -> usize {
    50
}
fn default_optimizer_tolerance() -> f64 {
    1e-10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    #[serde(default = "default_fve")]
    pub fve_threshold: f64,
    /// Convergence threshold on the dependence change.
    #[serde(default = "default_tau1")]
    pub tau1: f64,
    /// Convergence threshold on the HS change of the covariance estimate.
    #[serde(default = "default_tau2")]
    pub tau2: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default)]
    pub initial_dependence: f64,
    #[serde(default = "default_optimizer_tolerance")]
    pub optimizer_tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            fve_threshold: default_fve(),
            tau1: default_tau1(),
            tau2: default_tau2(),
            max_iterations: default_max_iterations(),
            initial_dependence: 0.0,
            optimizer_tolerance: default_optimizer_tolerance(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fve_threshold > 0.0 && self.fve_threshold <= 1.0) {
            return Err(FcarError::Validation(format!(
                "fve_threshold {} outside (0, 1]",
                self.fve_threshold
            )));
        }
        for (name, v) in [
            ("tau1", self.tau1),
            ("tau2", self.tau2),
            ("optimizer_tolerance", self.optimizer_tolerance),
        ] {
            if !(v > 0.0) {
                return Err(FcarError::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_iterations == 0 {
            return Err(FcarError::Validation("max_iterations must be at least 1".into()));
        }
        if !self.initial_dependence.is_finite() {
            return Err(FcarError::Validation("initial_dependence must be finite".into()));
        }
        Ok(())
    }
}

/// One pass of the alternating fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Dependence estimate produced by this pass.
    pub dependence: f64,
    /// `||Gamma^(t+1) - Gamma^(t)||_HS`.
    pub hs_change: f64,
    pub p: usize,
    /// Likelihood at the previous dependence, under this pass's `(Gamma, p)`.
    pub loglik_previous: f64,
    /// Likelihood at the new dependence, under this pass's `(Gamma, p)`.
    pub loglik: f64,
    pub boundary: bool,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub variant: Variant,
    pub n: usize,
    pub alpha_hat: Curve,
    pub gamma_hat: CovOperator,
    pub dependence_hat: f64,
    pub p: usize,
    /// `l_n''` at the final estimate; strictly negative.
    pub curvature: f64,
    pub iterations: usize,
    pub trace: Vec<IterationRecord>,
    pub converged: bool,
    /// The final maximizer was clipped at the edge of `interval`.
    pub boundary: bool,
    pub interval: Interval,
}

/// JSON form of a [`FitResult`]. The covariance kernel is written separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub variant: Variant,
    pub n: usize,
    pub dependence: f64,
    pub p: usize,
    pub curvature: f64,
    pub iterations: usize,
    pub converged: bool,
    pub boundary: bool,
    pub interval: Interval,
    pub grid: Vec<f64>,
    pub alpha: Vec<f64>,
    pub gamma_trace: f64,
    pub trace: Vec<IterationRecord>,
}

impl FitResult {
    pub fn report(&self) -> FitReport {
        FitReport {
            schema_version: SCHEMA_VERSION,
            variant: self.variant,
            n: self.n,
            dependence: self.dependence_hat,
            p: self.p,
            curvature: self.curvature,
            iterations: self.iterations,
            converged: self.converged,
            boundary: self.boundary,
            interval: self.interval,
            grid: self.alpha_hat.grid().points().to_vec(),
            alpha: self.alpha_hat.values().to_vec(),
            gamma_trace: self.gamma_hat.trace(),
            trace: self.trace.clone(),
        }
    }
}

fn check_inputs(data: &FunctionalDataset, graph: &NeighborhoodGraph) -> Result<()> {
    if data.n() < 2 {
        return Err(FcarError::InsufficientData { needed: 2, got: data.n() });
    }
    if data.n() != graph.n() {
        return Err(FcarError::Dimension(format!(
            "dataset has {} curves but graph has {} locations",
            data.n(),
            graph.n()
        )));
    }
    Ok(())
}

/// `n^{-1} sum_i (Z_i - Zbar) (x) (Z_i - Zbar)` for the conditionally centered `Z`.
///
/// In the general variant `Z_i - Zbar = (Y_i - Ybar) - eta (S_i - Sbar)`, which at
/// `eta = 0` reproduces [`marginal_covariance`] entry for entry.
pub fn covariance_conditional(
    data: &FunctionalDataset,
    graph: &NeighborhoodGraph,
    variant: Variant,
    dependence: f64,
    alpha: &Curve,
) -> Result<CovOperator> {
    check_inputs(data, graph)?;
    match variant {
        Variant::General => {
            if data.grid() != alpha.grid() {
                return Err(FcarError::Dimension("dataset and alpha live on different grids".into()));
            }
            let y_bar = dataset_mean(data);
            let mut centered = subtract_curve(data.matrix(), y_bar.values());
            let sums = neighbor_residual_sums(graph, data.matrix(), alpha.values());
            let n = sums.nrows() as f64;
            for (mut col, s_col) in centered.column_iter_mut().zip(sums.column_iter()) {
                let s_bar = s_col.sum() / n;
                for (c, s) in col.iter_mut().zip(s_col.iter()) {
                    *c -= dependence * (s - s_bar);
                }
            }
            Ok(covariance_of_centered(&centered, data.grid()))
        }
        Variant::Nested => {
            let z = center_conditionally(data, graph, variant, dependence, alpha)?;
            let z_bar = dataset_mean(&z);
            let centered = subtract_curve(z.matrix(), z_bar.values());
            Ok(covariance_of_centered(&centered, data.grid()))
        }
    }
}

/// Naive covariance on the scale of `Gamma`.
///
/// In the nested variant curve `i` has conditional covariance `Gamma / w_i+`, so
/// curves are multiplied by `sqrt(w_i+)` before the empirical covariance. The
/// general variant uses the data as is.
pub fn naive_covariance(data: &FunctionalDataset, graph: &NeighborhoodGraph, variant: Variant) -> Result<CovOperator> {
    check_inputs(data, graph)?;
    match variant {
        Variant::General => marginal_covariance(data),
        Variant::Nested => {
            if graph.has_isolated() {
                return Err(FcarError::FitDomain(
                    "nested model requires every location to have a neighbor".into(),
                ));
            }
            let mut scaled = data.matrix().clone();
            for (i, mut row) in scaled.row_iter_mut().enumerate() {
                row *= (graph.row_sum(i) as f64).sqrt();
            }
            marginal_covariance(&data.with_values(scaled)?)
        }
    }
}

fn check_eigenvalues(eigenvalues: &[f64]) -> Result<()> {
    for (index, &value) in eigenvalues.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(FcarError::DegenerateComponent { index, value });
        }
    }
    Ok(())
}

/// Projected log-likelihood from `n x p` scores and their eigenvalues.
pub fn projected_loglik(projections: &DMatrix<f64>, eigenvalues: &[f64], q: &PrecisionForm<'_>) -> Result<f64> {
    let (n, p) = projections.shape();
    if eigenvalues.len() != p {
        return Err(FcarError::Dimension(format!(
            "{} eigenvalues for {p} projection columns",
            eigenvalues.len()
        )));
    }
    check_eigenvalues(eigenvalues)?;
    let log_det_q = q.log_det();
    let mut acc = 0.0;
    for (j, col) in projections.column_iter().enumerate() {
        let y = col.as_slice();
        let lambda = eigenvalues[j];
        acc += q.quadratic(y, y)? / lambda + n as f64 * lambda.ln() - log_det_q;
    }
    let value = -acc / (2.0 * n as f64);
    if !value.is_finite() {
        return Err(FcarError::Numeric {
            value: q.dependence(),
            message: "projected log-likelihood is not finite".into(),
        });
    }
    Ok(value)
}

/// `l_n''(d) = (p / 2n) * d^2/dd^2 log det Q(d)`; the quadratic terms are affine in `d`.
pub fn loglik_curvature(p: usize, n: usize, q: &PrecisionForm<'_>) -> f64 {
    p as f64 / (2.0 * n as f64) * q.log_det_second_derivative()
}

/// Projected likelihood with the per-component quadratic forms precomputed.
#[derive(Debug, Clone)]
pub struct ProjectedLikelihood<'g> {
    graph: &'g NeighborhoodGraph,
    variant: Variant,
    n: usize,
    /// `sum_j y_j' D y_j / lambda_j`.
    diagonal: f64,
    /// `sum_j y_j' W y_j / lambda_j`.
    adjacency: f64,
    /// `n * sum_j log lambda_j`.
    log_lambda: f64,
    p: usize,
}

impl<'g> ProjectedLikelihood<'g> {
    pub fn new(
        projections: &DMatrix<f64>,
        eigenvalues: &[f64],
        graph: &'g NeighborhoodGraph,
        variant: Variant,
    ) -> Result<Self> {
        let (n, p) = projections.shape();
        if n != graph.n() {
            return Err(FcarError::Dimension(format!(
                "{n} projection rows for a graph of {} locations",
                graph.n()
            )));
        }
        if eigenvalues.len() != p {
            return Err(FcarError::Dimension(format!(
                "{} eigenvalues for {p} projection columns",
                eigenvalues.len()
            )));
        }
        check_eigenvalues(eigenvalues)?;
        let mut diagonal = 0.0;
        let mut adjacency = 0.0;
        for (j, col) in projections.column_iter().enumerate() {
            let y = col.as_slice();
            let d = match variant {
                Variant::General => y.iter().map(|v| v * v).sum::<f64>(),
                Variant::Nested => y.iter().zip(graph.row_sums()).map(|(v, &w)| w as f64 * v * v).sum(),
            };
            diagonal += d / eigenvalues[j];
            adjacency += graph.adjacency_form(y, y) / eigenvalues[j];
        }
        let log_lambda = n as f64 * eigenvalues.iter().map(|l| l.ln()).sum::<f64>();
        Ok(Self {
            graph,
            variant,
            n,
            diagonal,
            adjacency,
            log_lambda,
            p,
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// `l_n(d)`; errors when `Q(d)` is not positive definite or the value is not finite.
    pub fn value(&self, dependence: f64) -> Result<f64> {
        let q = PrecisionForm::new(self.graph, self.variant, dependence)?;
        let quad = self.diagonal - dependence * self.adjacency;
        let v = -(quad + self.log_lambda - self.p as f64 * q.log_det()) / (2.0 * self.n as f64);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(FcarError::Numeric {
                value: dependence,
                message: "projected log-likelihood is not finite".into(),
            })
        }
    }
}

/// Result of the scalar maximization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DependenceEstimate {
    pub value: f64,
    pub loglik: f64,
    /// The maximizer sits at the bracket edge.
    pub boundary: bool,
}

const GOLDEN: f64 = 0.381_966_011_250_105_1;

/// Brent's minimizer (golden section with parabolic interpolation) on `[a, b]`.
/// Returns `(x, f(x))`.
fn brent_minimize(f: &mut impl FnMut(f64) -> Result<f64>, a: f64, b: f64, tol: f64) -> Result<(f64, f64)> {
    const MAX_ITER: usize = 500;
    const REL_EPS: f64 = 1e-12;
    let (mut lo, mut hi) = (a, b);
    let mut x = lo + GOLDEN * (hi - lo);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x)?;
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;

    for _ in 0..MAX_ITER {
        let mid = 0.5 * (lo + hi);
        let tol1 = REL_EPS * x.abs() + tol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - mid).abs() <= tol2 - 0.5 * (hi - lo) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            } else {
                q = -q;
            }
            if p.abs() < (0.5 * q * e).abs() && p > q * (lo - x) && p < q * (hi - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - lo < tol2 || hi - u < tol2 {
                    d = if mid >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= mid { lo - x } else { hi - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = f(u)?;
        if fu <= fx {
            if u >= x {
                lo = x;
            } else {
                hi = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                lo = u;
            } else {
                hi = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    Ok((x, fx))
}

/// Maximizes a precomputed projected likelihood over `interval`.
pub fn maximize_likelihood(lik: &ProjectedLikelihood<'_>, interval: Interval, tolerance: f64) -> Result<DependenceEstimate> {
    let mut neg = |d: f64| lik.value(d).map(|v| -v);
    let (x, fx) = brent_minimize(&mut neg, interval.lower, interval.upper, tolerance)?;
    let edge = 4.0 * tolerance;
    let boundary = x - interval.lower <= edge || interval.upper - x <= edge;
    if boundary {
        // The endpoints themselves are admissible; report the better one if it wins.
        for end in [interval.lower, interval.upper] {
            let f_end = neg(end)?;
            if f_end < fx && (end - x).abs() <= edge {
                return Ok(DependenceEstimate {
                    value: end,
                    loglik: -f_end,
                    boundary: true,
                });
            }
        }
    }
    Ok(DependenceEstimate {
        value: x,
        loglik: -fx,
        boundary,
    })
}

/// `argmax_d l_n(d)` over `interval` for the given scores.
pub fn maximize_dependence(
    projections: &DMatrix<f64>,
    eigenvalues: &[f64],
    graph: &NeighborhoodGraph,
    variant: Variant,
    interval: Interval,
    tolerance: f64,
) -> Result<DependenceEstimate> {
    let lik = ProjectedLikelihood::new(projections, eigenvalues, graph, variant)?;
    maximize_likelihood(&lik, interval, tolerance)
}

/// Alternating profile fit of `(alpha, Gamma, dependence)`.
pub fn profile_fit(
    data: &FunctionalDataset,
    graph: &NeighborhoodGraph,
    variant: Variant,
    config: &FitConfig,
) -> Result<FitResult> {
    config.validate()?;
    check_inputs(data, graph)?;
    if variant == Variant::Nested && graph.has_isolated() {
        return Err(FcarError::FitDomain(
            "nested model requires every location to have a neighbor".into(),
        ));
    }
    let interval = admissible_interval(graph.spectrum(), variant)?;
    if !interval.contains(config.initial_dependence) {
        return Err(FcarError::Validation(format!(
            "initial dependence {} outside ({}, {})",
            config.initial_dependence, interval.lower, interval.upper
        )));
    }

    let alpha_hat = dataset_mean(data);
    let residuals = data.with_values(subtract_curve(data.matrix(), alpha_hat.values()))?;

    let mut dependence = config.initial_dependence;
    let mut gamma_prev = covariance_conditional(data, graph, variant, dependence, &alpha_hat)?;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut boundary = false;
    let mut p = 0;
    let mut gamma_hat = gamma_prev.clone();

    for iteration in 1..=config.max_iterations {
        let gamma = covariance_conditional(data, graph, variant, dependence, &alpha_hat)?;
        let hs_change = hs_distance(&gamma, &gamma_prev)?;
        let eig = spectral_decompose(&gamma)?;
        let p_fve = truncate_by_fve(&eig, config.fve_threshold)?;
        p = usable_components(&eig, p_fve);
        if p == 0 {
            return Err(FcarError::DegenerateOperator("no usable eigencomponents".into()));
        }
        let scores = project_dataset(&residuals, &eig, p)?;
        let lik = ProjectedLikelihood::new(&scores, &eig.eigenvalues()[..p], graph, variant)?;
        let loglik_previous = lik.value(dependence)?;
        let est = maximize_likelihood(&lik, interval, config.optimizer_tolerance)?;
        debug_assert!(
            est.loglik >= loglik_previous - 1e-9 * loglik_previous.abs().max(1.0),
            "likelihood decreased within iteration {iteration}"
        );
        trace.push(IterationRecord {
            iteration,
            dependence: est.value,
            hs_change,
            p,
            loglik_previous,
            loglik: est.loglik,
            boundary: est.boundary,
        });
        let step = (est.value - dependence).abs();
        dependence = est.value;
        boundary = est.boundary;
        gamma_prev = gamma.clone();
        gamma_hat = gamma;
        if step <= config.tau1 && hs_change <= config.tau2 {
            converged = true;
            break;
        }
    }

    let q = PrecisionForm::new(graph, variant, dependence)?;
    let curvature = loglik_curvature(p, data.n(), &q);
    if !(curvature < 0.0) {
        return Err(FcarError::Numeric {
            value: dependence,
            message: format!("log-likelihood curvature {curvature} is not negative"),
        });
    }
    Ok(FitResult {
        variant,
        n: data.n(),
        alpha_hat,
        gamma_hat,
        dependence_hat: dependence,
        p,
        curvature,
        iterations: trace.len(),
        trace,
        converged,
        boundary,
        interval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function_space::TimeGrid;
    use crate::lattice::{build_from_edge_list, build_torus};
    use std::sync::Arc;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn isolated_single_location_scalar_density() {
        let g = build_from_edge_list(1, &[], vec!["only".into()]).unwrap();
        let q = PrecisionForm::new(&g, Variant::General, 0.0).unwrap();
        let (y, lambda) = (1.7, 0.6);
        let l = projected_loglik(&DMatrix::from_element(1, 1, y), &[lambda], &q).unwrap();
        assert!((l + 0.5 * (y * y / lambda + lambda.ln())).abs() < 1e-15);
    }

    #[test]
    fn zero_dependence_reduces_to_independent_sum() {
        let g = build_torus(3, 4).unwrap();
        let y = random_matrix(12, 3, 1);
        let lambdas = [2.0, 0.7, 0.1];
        let q = PrecisionForm::new(&g, Variant::General, 0.0).unwrap();
        let expected: f64 = -(0..3)
            .map(|j| y.column(j).norm_squared() / lambdas[j] + 12.0 * f64::ln(lambdas[j]))
            .sum::<f64>()
            / 24.0;
        assert!((projected_loglik(&y, &lambdas, &q).unwrap() - expected).abs() < 1e-13);
    }

    #[test]
    fn precomputed_likelihood_matches_direct() {
        let g = build_torus(5, 5).unwrap();
        let y = random_matrix(25, 4, 2);
        let lambdas = [1.5, 0.9, 0.3, 0.05];
        for variant in [Variant::General, Variant::Nested] {
            let lik = ProjectedLikelihood::new(&y, &lambdas, &g, variant).unwrap();
            let iv = admissible_interval(g.spectrum(), variant).unwrap();
            for k in 1..10 {
                let d = iv.lower + iv.width() * k as f64 / 10.0;
                let q = PrecisionForm::new(&g, variant, d).unwrap();
                let direct = projected_loglik(&y, &lambdas, &q).unwrap();
                assert!((lik.value(d).unwrap() - direct).abs() < 1e-12 * direct.abs().max(1.0));
            }
        }
    }

    #[test]
    fn nonpositive_eigenvalue_rejected() {
        let g = build_torus(3, 3).unwrap();
        let q = PrecisionForm::new(&g, Variant::General, 0.1).unwrap();
        let y = random_matrix(9, 2, 3);
        assert!(matches!(
            projected_loglik(&y, &[1.0, 0.0], &q),
            Err(FcarError::DegenerateComponent { index: 1, .. })
        ));
    }

    #[test]
    fn curvature_examples() {
        let torus = build_torus(4, 4).unwrap();
        let q = PrecisionForm::new(&torus, Variant::General, 0.0).unwrap();
        for p in 1..4 {
            // -(p / 2n) * n * d with d = 4
            assert!((loglik_curvature(p, 16, &q) + 2.0 * p as f64).abs() < 1e-12);
        }
        let ring = build_from_edge_list(4, &[(0, 1), (1, 2), (2, 3), (3, 0)], (0..4).map(|i| i.to_string()).collect())
            .unwrap();
        let qn = PrecisionForm::new(&ring, Variant::Nested, 0.0).unwrap();
        for p in 1..4 {
            assert!((loglik_curvature(p, 4, &qn) + p as f64 / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn curvature_matches_finite_differences_on_5x5() {
        let g = build_torus(5, 5).unwrap();
        let y = random_matrix(25, 3, 9);
        let lambdas = [1.0, 0.5, 0.25];
        let h = 1e-5;
        let l = |d: f64| projected_loglik(&y, &lambdas, &PrecisionForm::new(&g, Variant::General, d).unwrap()).unwrap();
        let fd = (l(0.1 + h) - 2.0 * l(0.1) + l(0.1 - h)) / (h * h);
        let exact = loglik_curvature(3, 25, &PrecisionForm::new(&g, Variant::General, 0.1).unwrap());
        assert!(((fd - exact) / exact).abs() < 1e-5, "{fd} vs {exact}");
    }

    #[test]
    fn brent_finds_quadratic_minimum() {
        let mut f = |x: f64| Ok((x - 0.3).powi(2) + 1.0);
        let (x, fx) = brent_minimize(&mut f, -1.0, 1.0, 1e-10).unwrap();
        assert!((x - 0.3).abs() < 1e-8);
        assert!((fx - 1.0).abs() < 1e-14);
    }

    #[test]
    fn maximizer_pins_to_boundary() {
        // Scores that are perfectly smooth across neighbors push the estimate to the top edge.
        let g = build_torus(4, 4).unwrap();
        let y = DMatrix::from_element(16, 1, 1.0);
        let iv = admissible_interval(g.spectrum(), Variant::Nested).unwrap();
        // A tiny eigenvalue makes the quadratic term dominate the log-determinant.
        let est = maximize_dependence(&y, &[1e-9], &g, Variant::Nested, iv, 1e-10).unwrap();
        assert!(est.boundary);
        assert!(iv.upper - est.value < 1e-8);
    }

    #[test]
    fn general_null_identity_is_exact() {
        let g = build_torus(3, 5).unwrap();
        let grid = Arc::new(TimeGrid::uniform(0.0, 1.0, 7).unwrap());
        let data = FunctionalDataset::with_index_ids(random_matrix(15, 7, 4), grid).unwrap();
        let alpha = dataset_mean(&data);
        let a = covariance_conditional(&data, &g, Variant::General, 0.0, &alpha).unwrap();
        let b = marginal_covariance(&data).unwrap();
        assert_eq!(a.kernel(), b.kernel());
    }

    #[test]
    fn nested_conditional_covariance_matches_definition() {
        let g = build_torus(3, 3).unwrap();
        let grid = Arc::new(TimeGrid::uniform(0.0, 1.0, 5).unwrap());
        let data = FunctionalDataset::with_index_ids(random_matrix(9, 5, 6), grid).unwrap();
        let alpha = dataset_mean(&data);
        let z = center_conditionally(&data, &g, Variant::Nested, 0.4, &alpha).unwrap();
        let expected = marginal_covariance(&z).unwrap();
        let got = covariance_conditional(&data, &g, Variant::Nested, 0.4, &alpha).unwrap();
        assert!((expected.kernel() - got.kernel()).abs().max() < 1e-14);
    }

    #[test]
    fn fit_config_validation() {
        assert!(FitConfig::default().validate().is_ok());
        assert!(FitConfig { fve_threshold: 0.0, ..Default::default() }.validate().is_err());
        assert!(FitConfig { tau1: -1.0, ..Default::default() }.validate().is_err());
        assert!(FitConfig { max_iterations: 0, ..Default::default() }.validate().is_err());
        let parsed: FitConfig = serde_json::from_str("{\"tau2\": 0.01}").unwrap();
        assert_eq!(parsed.tau2, 0.01);
        assert_eq!(parsed.fve_threshold, 0.95);
    }

    #[test]
    fn fit_rejects_mismatched_graph() {
        let g = build_torus(3, 3).unwrap();
        let grid = Arc::new(TimeGrid::uniform(0.0, 1.0, 5).unwrap());
        let data = FunctionalDataset::with_index_ids(random_matrix(10, 5, 6), grid).unwrap();
        assert!(matches!(
            profile_fit(&data, &g, Variant::Nested, &FitConfig::default()),
            Err(FcarError::Dimension(_))
        ));
    }
}
