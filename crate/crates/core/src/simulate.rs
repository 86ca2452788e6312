//! Gibbs sampling of nested FCAR datasets with Karhunen-Loeve curve draws.
//!
//! Every random draw for replicate `r` of a run seeded with `seed` comes from
//! ChaCha8 seeded with `seed` on stream `r`, so a replicate's output depends
//! only on `(seed, r, config)`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FcarError, Result};
use crate::function_space::{Curve, CovOperator, FunctionalDataset, TimeGrid};
use crate::lattice::{admissible_interval, build_torus, NeighborhoodGraph};
use crate::model::Variant;

/// Uniform grid description used in configs and sidecars.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub t_min: f64,
    pub t_max: f64,
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            t_min: 0.0,
            t_max: 1.0,
            points: 50,
        }
    }
}

impl GridSpec {
    pub fn build(&self) -> Result<Arc<TimeGrid>> {
        TimeGrid::uniform(self.t_min, self.t_max, self.points).map(Arc::new)
    }
}

/// Where the simulation lattice comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatticeSpec {
    Torus { rows: usize, cols: usize },
    /// Edge-list CSV resolved by the caller.
    EdgeList { path: String },
}

fn default_variant() -> Variant {
    Variant::Nested
}
fn default_components() -> usize {
    15
}
fn default_burn_in() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub lattice: LatticeSpec,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    pub dependence: f64,
    /// Eigenvalue decay exponent `b`: `lambda_j = j^{-b/2}`.
    pub decay: f64,
    #[serde(default = "default_components")]
    pub n_components: usize,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SimConfig {
    /// Nested model on a `rows x cols` torus with the default grid, 15 components and 200 sweeps.
    pub fn torus(rows: usize, cols: usize, dependence: f64, decay: f64, seed: u64) -> Self {
        Self {
            lattice: LatticeSpec::Torus { rows, cols },
            variant: Variant::Nested,
            dependence,
            decay,
            n_components: default_components(),
            grid: GridSpec::default(),
            burn_in: default_burn_in(),
            seed,
        }
    }

    /// Builds the torus graph; edge-list lattices must be loaded by the caller.
    pub fn build_graph(&self) -> Result<NeighborhoodGraph> {
        match &self.lattice {
            LatticeSpec::Torus { rows, cols } => build_torus(*rows, *cols),
            LatticeSpec::EdgeList { path } => Err(FcarError::Validation(format!(
                "edge-list lattice {path:?} must be loaded from file"
            ))),
        }
    }

    pub fn validate(&self, graph: &NeighborhoodGraph) -> Result<()> {
        if !(self.decay > 0.0) {
            return Err(FcarError::Validation(format!("decay exponent {} must be positive", self.decay)));
        }
        if self.n_components == 0 {
            return Err(FcarError::Validation("n_components must be at least 1".into()));
        }
        if self.burn_in == 0 {
            return Err(FcarError::Validation("burn_in must be at least 1".into()));
        }
        let interval = admissible_interval(graph.spectrum(), self.variant)?;
        if !interval.contains(self.dependence) {
            return Err(FcarError::Validation(format!(
                "dependence {} outside admissible interval ({}, {})",
                self.dependence, interval.lower, interval.upper
            )));
        }
        Ok(())
    }
}

/// Stream `stream` of the ChaCha8 generator seeded with `seed`.
pub fn replicate_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// First `k` functions of the orthonormal Fourier system on the grid's interval:
/// `1`, `sqrt2 sin(2 pi u)`, `sqrt2 cos(2 pi u)`, `sqrt2 sin(4 pi u)`, ...
/// with `u` the position rescaled to `[0, 1]`. Returns a `T x k` matrix.
pub fn trig_basis(grid: &TimeGrid, k: usize) -> DMatrix<f64> {
    let (a, len) = (grid.t_min(), grid.t_max() - grid.t_min());
    let norm = 1.0 / len.sqrt();
    DMatrix::from_fn(grid.len(), k, |t, j| {
        let u = (grid.points()[t] - a) / len;
        let j1 = j + 1;
        let freq = (j1 / 2) as f64;
        norm * match j1 {
            1 => 1.0,
            _ if j1 % 2 == 0 => 2f64.sqrt() * (2.0 * PI * freq * u).sin(),
            _ => 2f64.sqrt() * (2.0 * PI * freq * u).cos(),
        }
    })
}

/// Truncated Karhunen-Loeve generator `sum_j lambda_j^{1/2} xi_j phi_j`.
#[derive(Debug, Clone)]
pub struct KarhunenLoeve {
    grid: Arc<TimeGrid>,
    basis: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    std_devs: Vec<f64>,
}

impl KarhunenLoeve {
    /// `lambda_j = j^{-decay/2}` on the trigonometric basis.
    pub fn new(grid: Arc<TimeGrid>, decay: f64, n_components: usize) -> Self {
        let eigenvalues: Vec<f64> = (1..=n_components).map(|j| (j as f64).powf(-decay / 2.0)).collect();
        let std_devs = eigenvalues.iter().map(|l| l.sqrt()).collect();
        let basis = trig_basis(&grid, n_components);
        Self {
            grid,
            basis,
            eigenvalues,
            std_devs,
        }
    }

    pub fn from_config(config: &SimConfig) -> Result<Self> {
        Ok(Self::new(config.grid.build()?, config.decay, config.n_components))
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn std_devs(&self) -> &[f64] {
        &self.std_devs
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Analytic covariance kernel `sum_j lambda_j phi_j(s) phi_j(u)`.
    pub fn covariance(&self) -> CovOperator {
        let t = self.grid.len();
        let k = self.eigenvalues.len();
        let kernel = DMatrix::from_fn(t, t, |s, u| {
            (0..k).map(|j| self.eigenvalues[j] * self.basis[(s, j)] * self.basis[(u, j)]).sum()
        });
        CovOperator::new(kernel, self.grid.clone()).expect("analytic kernel is symmetric")
    }

    /// Writes `mean + scale * sum_j sd_j xi_j phi_j` into `out`.
    fn draw_into<R: Rng + ?Sized>(&self, mean: &[f64], scale: f64, rng: &mut R, out: &mut [f64]) {
        out.copy_from_slice(mean);
        for (j, sd) in self.std_devs.iter().enumerate() {
            let xi: f64 = rng.sample(StandardNormal);
            let c = scale * sd * xi;
            for (o, phi) in out.iter_mut().zip(self.basis.column(j).iter()) {
                *o += c * phi;
            }
        }
    }

    /// One curve around `mean`. `scale = 0` returns `mean` exactly.
    pub fn draw<R: Rng + ?Sized>(&self, mean: &Curve, scale: f64, rng: &mut R) -> Result<Curve> {
        if mean.grid() != &self.grid {
            return Err(FcarError::Dimension("mean curve is on a different grid".into()));
        }
        if !(scale >= 0.0) {
            return Err(FcarError::Validation(format!("scale {scale} must be nonnegative")));
        }
        let mut out = vec![0.0; self.grid.len()];
        if scale == 0.0 {
            out.copy_from_slice(mean.values());
        } else {
            self.draw_into(mean.values(), scale, rng, &mut out);
        }
        Curve::new(out, self.grid.clone())
    }
}

/// `mean + scale * KL noise` with the spectrum and basis described by `config`.
pub fn kl_draw<R: Rng + ?Sized>(config: &SimConfig, mean: &Curve, scale: f64, rng: &mut R) -> Result<Curve> {
    KarhunenLoeve::from_config(config)?.draw(mean, scale, rng)
}

/// Systematic-scan Gibbs sampler for the nested model.
///
/// The full conditional of location `i` is `Gaussian(mu_i, Gamma / w_i+)`;
/// locations are updated in ascending index order each sweep.
pub struct GibbsChain<'g> {
    graph: &'g NeighborhoodGraph,
    kl: KarhunenLoeve,
    alpha: Vec<f64>,
    dependence: f64,
    /// Row-major `n x T`.
    state: Vec<f64>,
    rng: ChaCha8Rng,
    sweeps: usize,
}

impl<'g> GibbsChain<'g> {
    /// Starts a chain with iid standard normal values at every location and grid point.
    pub fn new(config: &SimConfig, graph: &'g NeighborhoodGraph, alpha: &Curve, replicate: u64) -> Result<Self> {
        if config.variant != Variant::Nested {
            return Err(FcarError::Unsupported(
                "Gibbs sampling is only defined for the nested variant".into(),
            ));
        }
        config.validate(graph)?;
        let kl = KarhunenLoeve::from_config(config)?;
        if alpha.grid() != kl.grid() {
            return Err(FcarError::Dimension("alpha is not on the configured grid".into()));
        }
        let mut rng = replicate_rng(config.seed, replicate);
        let t = kl.grid().len();
        let state = (0..graph.n() * t).map(|_| rng.sample(StandardNormal)).collect();
        Ok(Self {
            graph,
            kl,
            alpha: alpha.values().to_vec(),
            dependence: config.dependence,
            state,
            rng,
            sweeps: 0,
        })
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    pub fn kl(&self) -> &KarhunenLoeve {
        &self.kl
    }

    /// One full pass over all locations.
    pub fn sweep(&mut self) {
        let t_len = self.alpha.len();
        let mut mean = vec![0.0; t_len];
        let mut fresh = vec![0.0; t_len];
        for i in 0..self.graph.n() {
            let nb = self.graph.neighbors(i);
            let w = nb.len() as f64;
            let coef = self.dependence / w;
            mean.copy_from_slice(&self.alpha);
            for &j in nb {
                let row = &self.state[j * t_len..(j + 1) * t_len];
                for ((m, y), a) in mean.iter_mut().zip(row).zip(&self.alpha) {
                    *m += coef * (y - a);
                }
            }
            self.kl.draw_into(&mean, 1.0 / w.sqrt(), &mut self.rng, &mut fresh);
            self.state[i * t_len..(i + 1) * t_len].copy_from_slice(&fresh);
        }
        self.sweeps += 1;
    }

    pub fn run(&mut self, sweeps: usize) {
        for _ in 0..sweeps {
            self.sweep();
        }
    }

    /// Current state as a dataset keyed by the graph's location ids.
    pub fn dataset(&self) -> Result<FunctionalDataset> {
        let t_len = self.alpha.len();
        let values = DMatrix::from_row_slice(self.graph.n(), t_len, &self.state);
        FunctionalDataset::new(values, self.kl.grid().clone(), self.graph.location_ids().to_vec())
    }
}

/// Replicate `replicate`: a fresh chain run for `burn_in` sweeps, returning the final state.
pub fn gibbs_sample_replicate(
    config: &SimConfig,
    graph: &NeighborhoodGraph,
    alpha: &Curve,
    replicate: u64,
) -> Result<FunctionalDataset> {
    let mut chain = GibbsChain::new(config, graph, alpha, replicate)?;
    chain.run(config.burn_in);
    chain.dataset()
}

/// [`gibbs_sample_replicate`] on stream 0.
pub fn gibbs_sample_dataset(config: &SimConfig, graph: &NeighborhoodGraph, alpha: &Curve) -> Result<FunctionalDataset> {
    gibbs_sample_replicate(config, graph, alpha, 0)
}
