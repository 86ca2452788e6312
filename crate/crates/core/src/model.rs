//! FCAR model parameterization, conditional centering and sparse precision algebra.
//!
//! Two variants share one code path:
//!
//! * `General`: `mu_i = alpha + eta * sum_{j in N_i} (Y_j - alpha)`, conditional covariance `Gamma`,
//!   precision `I - eta W`.
//! * `Nested`: `mu_i = alpha + (rho / w_i+) * sum_{j in N_i} (Y_j - alpha)`, conditional covariance
//!   `Gamma / w_i+`, precision `D - rho W`.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FcarError, Result};
use crate::function_space::{Curve, CovOperator, FunctionalDataset, TimeGrid};
use crate::lattice::{admissible_interval, NeighborhoodGraph};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    General,
    Nested,
}

impl std::str::FromStr for Variant {
    type Err = FcarError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "general" => Ok(Variant::General),
            "nested" => Ok(Variant::Nested),
            other => Err(FcarError::Validation(format!("unknown model variant {other:?}"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::General => "general",
            Variant::Nested => "nested",
        })
    }
}

/// Validated FCAR parameters on a fixed neighborhood graph.
#[derive(Debug, Clone)]
pub struct FcarModel {
    variant: Variant,
    dependence: f64,
    alpha: Curve,
    gamma: CovOperator,
    graph: Arc<NeighborhoodGraph>,
}

impl FcarModel {
    pub fn new(
        variant: Variant,
        dependence: f64,
        alpha: Curve,
        gamma: CovOperator,
        graph: Arc<NeighborhoodGraph>,
    ) -> Result<Self> {
        if alpha.grid() != gamma.grid() {
            return Err(FcarError::Dimension("alpha and gamma live on different grids".into()));
        }
        if variant == Variant::Nested && graph.has_isolated() {
            return Err(FcarError::FitDomain(
                "nested model requires every location to have a neighbor".into(),
            ));
        }
        let interval = admissible_interval(graph.spectrum(), variant)?;
        if !interval.contains(dependence) {
            return Err(FcarError::Validation(format!(
                "dependence {dependence} outside admissible interval ({}, {})",
                interval.lower, interval.upper
            )));
        }
        Ok(Self {
            variant,
            dependence,
            alpha,
            gamma,
            graph,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn dependence(&self) -> f64 {
        self.dependence
    }

    pub fn alpha(&self) -> &Curve {
        &self.alpha
    }

    pub fn gamma(&self) -> &CovOperator {
        &self.gamma
    }

    pub fn graph(&self) -> &Arc<NeighborhoodGraph> {
        &self.graph
    }

    /// `eta_ij`: `eta * 1(i~j)` or `rho * w_ij / w_i+`.
    pub fn dependence_weight(&self, i: usize, j: usize) -> f64 {
        if !self.graph.neighbors(i).contains(&j) {
            return 0.0;
        }
        match self.variant {
            Variant::General => self.dependence,
            Variant::Nested => self.dependence / self.graph.row_sum(i) as f64,
        }
    }

    /// `Gamma_i`: `Gamma` or `Gamma / w_i+`.
    pub fn conditional_covariance(&self, i: usize) -> CovOperator {
        match self.variant {
            Variant::General => self.gamma.clone(),
            Variant::Nested => self.gamma.scaled(1.0 / self.graph.row_sum(i) as f64),
        }
    }

    pub fn precision(&self) -> Result<PrecisionForm<'_>> {
        PrecisionForm::new(&self.graph, self.variant, self.dependence)
    }
}

fn check_dataset(graph: &NeighborhoodGraph, data: &FunctionalDataset, alpha: &Curve) -> Result<()> {
    if data.n() != graph.n() {
        return Err(FcarError::Dimension(format!(
            "dataset has {} curves but graph has {} locations",
            data.n(),
            graph.n()
        )));
    }
    if data.grid() != alpha.grid() {
        return Err(FcarError::Dimension("dataset and alpha live on different grids".into()));
    }
    Ok(())
}

/// Conditional mean `mu_i` of location `i` given all other curves.
pub fn conditional_mean(model: &FcarModel, data: &FunctionalDataset, i: usize) -> Result<Curve> {
    check_dataset(&model.graph, data, &model.alpha)?;
    if i >= data.n() {
        return Err(FcarError::Index { index: i, limit: data.n() });
    }
    let coef = match model.variant {
        Variant::General => model.dependence,
        Variant::Nested => {
            let w = model.graph.row_sum(i);
            if w == 0 {
                return Err(FcarError::FitDomain(format!("location {i} has no neighbors")));
            }
            model.dependence / w as f64
        }
    };
    let y = data.matrix();
    let alpha = model.alpha.values();
    let values = (0..alpha.len())
        .map(|t| {
            let s: f64 = model.graph.neighbors(i).iter().map(|&j| y[(j, t)] - alpha[t]).sum();
            alpha[t] + coef * s
        })
        .collect();
    Curve::new(values, data.grid().clone())
}

/// Neighbor sums `S_i(t) = sum_{j in N_i} (Y_j(t) - alpha(t))`, as an `n x T` matrix.
pub(crate) fn neighbor_residual_sums(graph: &NeighborhoodGraph, y: &DMatrix<f64>, alpha: &[f64]) -> DMatrix<f64> {
    let (n, t_len) = y.shape();
    let mut out = DMatrix::zeros(n, t_len);
    for (t, &a) in alpha.iter().enumerate() {
        let col = y.column(t);
        let mut dst = out.column_mut(t);
        for i in 0..n {
            dst[i] = graph.neighbors(i).iter().map(|&j| col[j] - a).sum();
        }
    }
    out
}

/// Conditionally centered residuals.
///
/// General: `Z_i = (Y_i - alpha) - eta * S_i`.
/// Nested: `Z_i = sqrt(w_i+) * ((Y_i - alpha) - (rho / w_i+) * S_i)`, so every row has
/// conditional covariance `Gamma`.
pub fn center_conditionally(
    data: &FunctionalDataset,
    graph: &NeighborhoodGraph,
    variant: Variant,
    dependence: f64,
    alpha: &Curve,
) -> Result<FunctionalDataset> {
    check_dataset(graph, data, alpha)?;
    if variant == Variant::Nested && graph.has_isolated() {
        return Err(FcarError::FitDomain(
            "nested model requires every location to have a neighbor".into(),
        ));
    }
    let y = data.matrix();
    let a = alpha.values();
    let sums = neighbor_residual_sums(graph, y, a);
    let (n, t_len) = y.shape();
    let mut z = DMatrix::zeros(n, t_len);
    for t in 0..t_len {
        for i in 0..n {
            let resid = y[(i, t)] - a[t];
            z[(i, t)] = match variant {
                Variant::General => resid - dependence * sums[(i, t)],
                Variant::Nested => {
                    let w = graph.row_sum(i) as f64;
                    w.sqrt() * (resid - dependence / w * sums[(i, t)])
                }
            };
        }
    }
    data.with_values(z)
}

/// [`center_conditionally`] with the model's own parameters.
pub fn conditionally_center(model: &FcarModel, data: &FunctionalDataset) -> Result<FunctionalDataset> {
    center_conditionally(data, &model.graph, model.variant, model.dependence, &model.alpha)
}

/// `Q = I - eta W` (General) or `Q = D - rho W` (Nested), never materialized.
#[derive(Debug, Clone, Copy)]
pub struct PrecisionForm<'g> {
    variant: Variant,
    dependence: f64,
    graph: &'g NeighborhoodGraph,
}

/// Smallest admissible eigenvalue factor `1 - d v`; guards dense-spectrum rounding.
const SINGULAR_TOL: f64 = 1e-12;

impl<'g> PrecisionForm<'g> {
    /// Fails unless `Q` is positive definite at `dependence`.
    pub fn new(graph: &'g NeighborhoodGraph, variant: Variant, dependence: f64) -> Result<Self> {
        let q = Self {
            variant,
            dependence,
            graph,
        };
        let spectrum = q.spectrum_terms()?;
        if !dependence.is_finite() || spectrum.iter().any(|&v| !(1.0 - dependence * v > SINGULAR_TOL)) {
            return Err(FcarError::SingularPrecision { value: dependence });
        }
        Ok(q)
    }

    fn spectrum_terms(&self) -> Result<&'g [f64]> {
        let cache = self.graph.spectrum();
        match self.variant {
            Variant::General => Ok(&cache.w_eigenvalues),
            Variant::Nested => cache.normalized_eigenvalues.as_deref().ok_or_else(|| {
                FcarError::FitDomain("nested model requires every location to have a neighbor".into())
            }),
        }
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn dependence(&self) -> f64 {
        self.dependence
    }

    pub fn graph(&self) -> &'g NeighborhoodGraph {
        self.graph
    }

    /// `x' D y` for the diagonal part (`D = I` in the general variant).
    pub fn diagonal_form(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.variant {
            Variant::General => x.iter().zip(y).map(|(a, b)| a * b).sum(),
            Variant::Nested => x
                .iter()
                .zip(y)
                .zip(self.graph.row_sums())
                .map(|((a, b), &w)| w as f64 * a * b)
                .sum(),
        }
    }

    /// `x' Q y` in O(n + edges).
    pub fn quadratic(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let n = self.graph.n();
        if x.len() != n || y.len() != n {
            return Err(FcarError::Dimension(format!(
                "vectors of length {} and {} for a graph of {n} locations",
                x.len(),
                y.len()
            )));
        }
        Ok(self.diagonal_form(x, y) - self.dependence * self.graph.adjacency_form(x, y))
    }

    /// `log det Q` from the cached adjacency spectrum.
    pub fn log_det(&self) -> f64 {
        // Construction guarantees the spectrum exists.
        let spectrum = self.spectrum_terms().expect("spectrum checked at construction");
        let core: f64 = spectrum.iter().map(|v| (1.0 - self.dependence * v).ln()).sum();
        match self.variant {
            Variant::General => core,
            Variant::Nested => core + self.graph.row_sums().iter().map(|&w| (w as f64).ln()).sum::<f64>(),
        }
    }

    /// `d/d(dependence) log det Q = -sum v / (1 - dep v)`.
    pub fn log_det_derivative(&self) -> f64 {
        let spectrum = self.spectrum_terms().expect("spectrum checked at construction");
        -spectrum.iter().map(|v| v / (1.0 - self.dependence * v)).sum::<f64>()
    }

    /// `d^2/d(dependence)^2 log det Q = -sum v^2 / (1 - dep v)^2`.
    pub fn log_det_second_derivative(&self) -> f64 {
        let spectrum = self.spectrum_terms().expect("spectrum checked at construction");
        -spectrum
            .iter()
            .map(|v| {
                let r = v / (1.0 - self.dependence * v);
                r * r
            })
            .sum::<f64>()
    }
}

/// `x' Q y`.
pub fn precision_quadratic(q: &PrecisionForm<'_>, x: &[f64], y: &[f64]) -> Result<f64> {
    q.quadratic(x, y)
}

/// `log det Q`; with `Sigma = Q^{-1}`, `log det(lambda Sigma) = n log lambda - log det Q`.
pub fn log_det_precision(q: &PrecisionForm<'_>) -> f64 {
    q.log_det()
}

/// How a serialized model refers to its neighborhood graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphReference {
    Torus { rows: usize, cols: usize },
    EdgeList { path: String },
}

/// JSON form of an [`FcarModel`]. The kernel is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub schema_version: u32,
    pub variant: Variant,
    pub dependence: f64,
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    pub grid: Vec<f64>,
    pub graph: GraphReference,
}

impl ModelDocument {
    pub fn from_model(model: &FcarModel, graph: GraphReference) -> Self {
        let k = model.gamma.kernel();
        let t = k.nrows();
        Self {
            schema_version: SCHEMA_VERSION,
            variant: model.variant,
            dependence: model.dependence,
            alpha: model.alpha.values().to_vec(),
            gamma: (0..t * t).map(|idx| k[(idx / t, idx % t)]).collect(),
            grid: model.alpha.grid().points().to_vec(),
            graph,
        }
    }

    /// Rebuilds the model on a graph resolved from [`ModelDocument::graph`].
    pub fn into_model(self, graph: Arc<NeighborhoodGraph>) -> Result<FcarModel> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(FcarError::Validation(format!(
                "unsupported schema_version {}",
                self.schema_version
            )));
        }
        let grid = Arc::new(TimeGrid::new(self.grid)?);
        let t = grid.len();
        if self.gamma.len() != t * t {
            return Err(FcarError::Dimension(format!(
                "gamma has {} entries, expected {}",
                self.gamma.len(),
                t * t
            )));
        }
        let alpha = Curve::new(self.alpha, grid.clone())?;
        let gamma = CovOperator::new(DMatrix::from_row_slice(t, t, &self.gamma), grid)?;
        FcarModel::new(self.variant, self.dependence, alpha, gamma, graph)
    }
}
