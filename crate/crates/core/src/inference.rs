//! Wald-type inference for the dependence parameter and the Moran's I baseline.

use serde::{Deserialize, Serialize};
use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::error::{FcarError, Result};
use crate::estimate::FitResult;
use crate::lattice::NeighborhoodGraph;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Two-sided normal tail `P(|Z| >= |z|) = erfc(|z| / sqrt 2)`.
pub fn two_sided_p_value(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

/// `z_{1 - kappa/2}`.
pub fn normal_critical_value(kappa: f64) -> f64 {
    // Newton steps on erfc(x) = kappa polish the initial inverse.
    let mut x = erfc_inv(kappa);
    for _ in 0..2 {
        let slope = -2.0 / std::f64::consts::PI.sqrt() * (-x * x).exp();
        x -= (erfc(x) - kappa) / slope;
    }
    std::f64::consts::SQRT_2 * x
}

fn check_level(kappa: f64) -> Result<()> {
    if kappa > 0.0 && kappa < 1.0 {
        Ok(())
    } else {
        Err(FcarError::Validation(format!("significance level {kappa} outside (0, 1)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Fcar,
    MoransI,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub method: TestMethod,
    pub statistic: f64,
    pub p_value: f64,
    pub estimate: f64,
    pub standard_error: f64,
    pub nominal_level: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    /// Bounds before clipping to the parameter space.
    pub unclipped_lower: f64,
    pub unclipped_upper: f64,
    pub clipped: bool,
}

impl ConfidenceInterval {
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }
}

/// `{n (-l''(d_hat))}^{-1/2}`.
pub fn dependence_standard_error(fit: &FitResult) -> Result<f64> {
    if !(fit.curvature < 0.0) || !fit.curvature.is_finite() {
        return Err(FcarError::InvalidFit(format!(
            "curvature {} is not negative",
            fit.curvature
        )));
    }
    Ok(1.0 / (fit.n as f64 * -fit.curvature).sqrt())
}

/// `d_hat -/+ z_{1-kappa/2} * se`, clipped to the closure of the admissible interval.
///
/// `kappa` is the significance level, so `kappa = 0.05` gives a 95% interval.
pub fn confidence_interval(fit: &FitResult, kappa: f64) -> Result<ConfidenceInterval> {
    check_level(kappa)?;
    let se = dependence_standard_error(fit)?;
    let half = normal_critical_value(kappa) * se;
    let (lo, hi) = (fit.dependence_hat - half, fit.dependence_hat + half);
    // Undo the boundary guard so the clip lands on the true parameter bound.
    let guard = crate::lattice::BOUNDARY_GUARD;
    let (lo_bound, hi_bound) = (fit.interval.lower - guard, fit.interval.upper + guard);
    let lower = lo.max(lo_bound);
    let upper = hi.min(hi_bound);
    Ok(ConfidenceInterval {
        lower,
        upper,
        unclipped_lower: lo,
        unclipped_upper: hi,
        clipped: lower != lo || upper != hi,
    })
}

/// Wald test of zero dependence: `T_n = sqrt(n) (-l'')^{1/2} d_hat`.
pub fn dependence_test(fit: &FitResult, kappa: f64) -> Result<TestReport> {
    check_level(kappa)?;
    let se = dependence_standard_error(fit)?;
    let statistic = fit.dependence_hat / se;
    Ok(TestReport {
        method: TestMethod::Fcar,
        statistic,
        p_value: two_sided_p_value(statistic),
        estimate: fit.dependence_hat,
        standard_error: se,
        nominal_level: kappa,
        reject: statistic.abs() > normal_critical_value(kappa),
    })
}

/// Moran's I statistic with its normal-approximation test under the normality assumption.
pub fn morans_i_test(values: &[f64], graph: &NeighborhoodGraph, kappa: f64) -> Result<TestReport> {
    check_level(kappa)?;
    let n = graph.n();
    if values.len() != n {
        return Err(FcarError::Dimension(format!(
            "{} values for a graph of {n} locations",
            values.len()
        )));
    }
    if graph.edge_count() == 0 {
        return Err(FcarError::Validation("Moran's I needs at least one edge".into()));
    }
    if n < 3 {
        return Err(FcarError::InsufficientData { needed: 3, got: n });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let ss: f64 = centered.iter().map(|v| v * v).sum();
    let scale: f64 = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if !(ss > 1e-24 * scale * scale * n as f64) {
        return Err(FcarError::ZeroVariance);
    }
    let nf = n as f64;
    let s0 = 2.0 * graph.edge_count() as f64;
    let s1 = 2.0 * s0;
    let s2: f64 = graph.row_sums().iter().map(|&d| 4.0 * (d * d) as f64).sum();
    let stat = nf / s0 * graph.adjacency_form(&centered, &centered) / ss;

    let expected = -1.0 / (nf - 1.0);
    let second_moment = (nf * nf * s1 - nf * s2 + 3.0 * s0 * s0) / ((nf * nf - 1.0) * s0 * s0);
    let variance = second_moment - expected * expected;
    if !(variance > 0.0) {
        return Err(FcarError::Numeric {
            value: stat,
            message: format!("Moran's I null variance {variance} is not positive"),
        });
    }
    let se = variance.sqrt();
    let z = (stat - expected) / se;
    Ok(TestReport {
        method: TestMethod::MoransI,
        statistic: z,
        p_value: two_sided_p_value(z),
        estimate: stat,
        standard_error: se,
        nominal_level: kappa,
        reject: z.abs() > normal_critical_value(kappa),
    })
}
