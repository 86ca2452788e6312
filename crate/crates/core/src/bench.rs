//! Monte Carlo harness over (decay, dependence, lattice size) settings.
//!
//! Replicate `r` of setting `s` simulates from ChaCha8 seeded with
//! `setting_seed(base_seed, s)` on stream `r`. Aggregation folds replicate
//! results in index order, so reports do not depend on the thread count
//! (apart from the wall-time column).

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{FcarError, Result};
use crate::estimate::{naive_covariance, profile_fit, FitConfig};
use crate::function_space::{dataset_mean, hs_distance, CovOperator, Curve};
use crate::inference::{confidence_interval, dependence_test, morans_i_test};
use crate::io::write_json;
use crate::lattice::{admissible_interval, build_torus, NeighborhoodGraph};
use crate::model::{Variant, SCHEMA_VERSION};
use crate::simulate::{gibbs_sample_replicate, GridSpec, KarhunenLoeve, LatticeSpec, SimConfig};

fn default_decays() -> Vec<f64> {
    vec![2.0, 4.0]
}
fn default_dependences() -> Vec<f64> {
    vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99]
}
fn default_sides() -> Vec<usize> {
    vec![10, 20]
}
fn default_replicates() -> usize {
    100
}
fn default_level() -> f64 {
    0.05
}
fn default_components() -> usize {
    15
}
fn default_burn_in() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    #[serde(default = "default_decays")]
    pub decays: Vec<f64>,
    #[serde(default = "default_dependences")]
    pub dependences: Vec<f64>,
    /// Square torus side lengths; `n = side^2`.
    #[serde(default = "default_sides")]
    pub lattice_sides: Vec<usize>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub fit: FitConfig,
    /// Significance level `kappa` for the tests; intervals use `1 - kappa`.
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub output_dir: Option<String>,
    /// Worker threads; `None` uses all cores, `Some(1)` runs sequentially.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default = "default_components")]
    pub n_components: usize,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            decays: default_decays(),
            dependences: default_dependences(),
            lattice_sides: default_sides(),
            replicates: default_replicates(),
            base_seed: 0,
            fit: FitConfig::default(),
            level: default_level(),
            output_dir: None,
            threads: None,
            n_components: default_components(),
            grid: GridSpec::default(),
            burn_in: default_burn_in(),
        }
    }
}

/// One cell of the factorial design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Setting {
    pub index: usize,
    pub decay: f64,
    pub dependence: f64,
    pub side: usize,
}

impl Setting {
    pub fn n(&self) -> usize {
        self.side * self.side
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(FcarError::Validation("replicates must be at least 1".into()));
        }
        if self.decays.is_empty() || self.dependences.is_empty() || self.lattice_sides.is_empty() {
            return Err(FcarError::Validation("every factor needs at least one level".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(FcarError::Validation(format!("level {} outside (0, 1)", self.level)));
        }
        if self.threads == Some(0) {
            return Err(FcarError::Validation("threads must be at least 1".into()));
        }
        self.fit.validate()?;
        for &side in &self.lattice_sides {
            let g = build_torus(side, side)?;
            let iv = admissible_interval(g.spectrum(), Variant::Nested)?;
            for &rho in &self.dependences {
                if !iv.contains(rho) {
                    return Err(FcarError::Validation(format!(
                        "dependence {rho} inadmissible on a {side}x{side} torus"
                    )));
                }
            }
        }
        for &b in &self.decays {
            if !(b > 0.0) {
                return Err(FcarError::Validation(format!("decay {b} must be positive")));
            }
        }
        Ok(())
    }

    /// Settings in (decay, dependence, side) lexicographic order.
    pub fn settings(&self) -> Vec<Setting> {
        let mut out = Vec::new();
        for &decay in &self.decays {
            for &dependence in &self.dependences {
                for &side in &self.lattice_sides {
                    out.push(Setting {
                        index: out.len(),
                        decay,
                        dependence,
                        side,
                    });
                }
            }
        }
        out
    }

    fn sim_config(&self, setting: &Setting) -> SimConfig {
        SimConfig {
            lattice: LatticeSpec::Torus {
                rows: setting.side,
                cols: setting.side,
            },
            variant: Variant::Nested,
            dependence: setting.dependence,
            decay: setting.decay,
            n_components: self.n_components,
            grid: self.grid,
            burn_in: self.burn_in,
            seed: setting_seed(self.base_seed, setting.index),
        }
    }
}

/// SplitMix64 finalizer of `(base, setting)`; replicates are streams of this seed.
pub fn setting_seed(base_seed: u64, setting_index: usize) -> u64 {
    let mut z = base_seed ^ (setting_index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-replicate quantities needed by [`compute_metrics`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub dependence_hat: f64,
    /// `||Gamma_FCAR - Gamma||_HS^2`.
    pub hs_sq_fcar: f64,
    /// `||Gamma_naive - Gamma||_HS^2`.
    pub hs_sq_naive: f64,
    /// `||alpha_hat - alpha||^2`.
    pub alpha_sq: f64,
    pub covered: bool,
    pub reject_fcar: bool,
    pub reject_moran: bool,
    pub iterations: usize,
    pub p: usize,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReplicateFailure {
    NotConverged,
    Boundary,
    Error(String),
}

/// Outcomes of one setting, in replicate order.
#[derive(Debug, Clone)]
pub struct SettingRun {
    pub setting: Setting,
    pub outcomes: Vec<std::result::Result<ReplicateOutcome, ReplicateFailure>>,
}

impl SettingRun {
    pub fn successes(&self) -> Vec<ReplicateOutcome> {
        self.outcomes.iter().filter_map(|o| o.as_ref().ok().copied()).collect()
    }

    pub fn failures(&self) -> usize {
        self.outcomes.iter().filter(|o| o.is_err()).count()
    }
}

/// Simulates and analyzes one replicate.
pub fn run_replicate(
    config: &BenchConfig,
    setting: &Setting,
    replicate: u64,
    graph: &NeighborhoodGraph,
    truth: &CovOperator,
) -> std::result::Result<ReplicateOutcome, ReplicateFailure> {
    let err = |e: FcarError| ReplicateFailure::Error(e.to_string());
    let sim = config.sim_config(setting);
    let grid = sim.grid.build().map_err(err)?;
    let alpha = Curve::zeros(grid);
    let data = gibbs_sample_replicate(&sim, graph, &alpha, replicate).map_err(err)?;

    let naive = naive_covariance(&data, graph, Variant::Nested).map_err(err)?;
    let start = Instant::now();
    let fit = profile_fit(&data, graph, Variant::Nested, &config.fit).map_err(err)?;
    let wall_time = start.elapsed().as_secs_f64();
    if !fit.converged {
        return Err(ReplicateFailure::NotConverged);
    }
    if fit.boundary {
        return Err(ReplicateFailure::Boundary);
    }

    let ci = confidence_interval(&fit, config.level).map_err(err)?;
    let test = dependence_test(&fit, config.level).map_err(err)?;
    let moran = morans_i_test(&data.time_averages(), graph, config.level).map_err(err)?;
    let hs_fcar = hs_distance(&fit.gamma_hat, truth).map_err(err)?;
    let hs_naive = hs_distance(&naive, truth).map_err(err)?;
    let alpha_hat = dataset_mean(&data);
    Ok(ReplicateOutcome {
        dependence_hat: fit.dependence_hat,
        hs_sq_fcar: hs_fcar * hs_fcar,
        hs_sq_naive: hs_naive * hs_naive,
        alpha_sq: alpha_hat.norm_sq(),
        covered: ci.contains(setting.dependence),
        reject_fcar: test.reject,
        reject_moran: moran.reject,
        iterations: fit.iterations,
        p: fit.p,
        wall_time,
    })
}

/// Aggregated metrics of one setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub decay: f64,
    pub dependence: f64,
    pub n: usize,
    pub replicates: usize,
    pub failures: usize,
    pub mse_hs_fcar: f64,
    pub mse_hs_naive: f64,
    pub mse_rho: f64,
    pub mse_alpha: f64,
    pub coverage: f64,
    pub rejection_fcar: f64,
    pub rejection_moran: f64,
    pub mean_iterations: f64,
    pub median_iterations: f64,
    pub mean_wall_time: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = xs.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    sum / count as f64
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

/// Monte Carlo averages over the successful replicates of one setting.
pub fn compute_metrics(setting: &Setting, outcomes: &[ReplicateOutcome], failures: usize) -> Result<ReportRow> {
    if outcomes.is_empty() {
        return Err(FcarError::EmptyCell(format!(
            "b={}, rho={}, n={}",
            setting.decay,
            setting.dependence,
            setting.n()
        )));
    }
    let rate = |f: fn(&ReplicateOutcome) -> bool| mean(outcomes.iter().map(|o| if f(o) { 1.0 } else { 0.0 }));
    let mut iters: Vec<f64> = outcomes.iter().map(|o| o.iterations as f64).collect();
    Ok(ReportRow {
        decay: setting.decay,
        dependence: setting.dependence,
        n: setting.n(),
        replicates: outcomes.len(),
        failures,
        mse_hs_fcar: mean(outcomes.iter().map(|o| o.hs_sq_fcar)),
        mse_hs_naive: mean(outcomes.iter().map(|o| o.hs_sq_naive)),
        mse_rho: mean(outcomes.iter().map(|o| (o.dependence_hat - setting.dependence).powi(2))),
        mse_alpha: mean(outcomes.iter().map(|o| o.alpha_sq)),
        coverage: rate(|o| o.covered),
        rejection_fcar: rate(|o| o.reject_fcar),
        rejection_moran: rate(|o| o.reject_moran),
        mean_iterations: mean(iters.iter().copied()),
        median_iterations: median(&mut iters),
        mean_wall_time: mean(outcomes.iter().map(|o| o.wall_time)),
    })
}

fn map_replicates<T: Send>(
    threads: Option<usize>,
    count: usize,
    f: impl Fn(u64) -> T + Sync + Send,
) -> Vec<T> {
    if threads == Some(1) {
        return (0..count as u64).map(f).collect();
    }
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let run = || (0..count as u64).into_par_iter().map(&f).collect::<Vec<T>>();
        match threads.map(|k| rayon::ThreadPoolBuilder::new().num_threads(k).build()) {
            Some(Ok(pool)) => pool.install(run),
            _ => run(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count as u64).map(f).collect()
    }
}

/// All replicates of one setting.
pub fn run_setting(config: &BenchConfig, setting: &Setting) -> Result<SettingRun> {
    let graph = build_torus(setting.side, setting.side)?;
    // Warm the spectrum cache before workers share the graph.
    graph.spectrum();
    let kl = KarhunenLoeve::new(config.grid.build()?, setting.decay, config.n_components);
    let truth = kl.covariance();
    let outcomes = map_replicates(config.threads, config.replicates, |r| {
        run_replicate(config, setting, r, &graph, &truth)
    });
    for (r, o) in outcomes.iter().enumerate() {
        if let Err(f) = o {
            log::warn!(
                "replicate {r} of b={} rho={} n={} failed: {f:?}",
                setting.decay,
                setting.dependence,
                setting.n()
            );
        }
    }
    Ok(SettingRun {
        setting: *setting,
        outcomes,
    })
}

/// Runs every setting and aggregates one [`ReportRow`] per setting.
pub fn run_monte_carlo(config: &BenchConfig) -> Result<Vec<ReportRow>> {
    config.validate()?;
    config
        .settings()
        .iter()
        .map(|s| {
            let run = run_setting(config, s)?;
            compute_metrics(s, &run.successes(), run.failures())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    PlotData,
}

/// One point of a rejection-rate curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRecord {
    pub decay: f64,
    pub n: usize,
    pub dependence: f64,
    pub method: String,
    pub rejection_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema_version: u32,
    pub rows: Vec<ReportRow>,
}

pub fn power_records(rows: &[ReportRow]) -> Vec<PowerRecord> {
    rows.iter()
        .flat_map(|r| {
            [("fcar", r.rejection_fcar), ("morans_i", r.rejection_moran)].map(|(method, rate)| PowerRecord {
                decay: r.decay,
                n: r.n,
                dependence: r.dependence,
                method: method.to_string(),
                rejection_rate: rate,
            })
        })
        .collect()
}

/// Writes `rows` to `path` in the requested format.
pub fn emit_report(rows: &[ReportRow], format: ReportFormat, path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(FcarError::Validation("no report rows to write".into()));
    }
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_path(path)?;
            for row in rows {
                w.serialize(row)?;
            }
            w.flush()?;
        }
        ReportFormat::Json => write_json(
            path,
            &ReportDocument {
                schema_version: SCHEMA_VERSION,
                rows: rows.to_vec(),
            },
        )?,
        ReportFormat::PlotData => {
            let mut w = csv::Writer::from_path(path)?;
            for rec in power_records(rows) {
                w.serialize(rec)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

pub fn read_report_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<ReportRow>, _>>()?;
    Ok(rows)
}

/// `report.csv`, `report.json` and `power.csv` under `dir`.
pub fn write_reports(rows: &[ReportRow], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    emit_report(rows, ReportFormat::Csv, &dir.join("report.csv"))?;
    emit_report(rows, ReportFormat::Json, &dir.join("report.json"))?;
    emit_report(rows, ReportFormat::PlotData, &dir.join("power.csv"))?;
    Ok(())
}
