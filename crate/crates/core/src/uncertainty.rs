//! Gaussian PV forecast errors, chance-constraint tightening and Monte Carlo
//! checks of the tightened constraints.
//!
//! A linear chance constraint `P(cᵀp + k ≤ 0) ≥ 1 − ε` with independent
//! `p_i ~ N(μ_i, σ_i²)` holds iff `cᵀμ + k + Φ⁻¹(1 − ε)·‖diag(σ)c‖ ≤ 0`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::exec::Execution;
use crate::netmodel::BusId;

/// Samples per Monte Carlo chunk; each chunk draws from its own stream, so
/// counts do not depend on how chunks are spread over workers.
pub const MC_CHUNK: usize = 4096;

/// Rows count as violated only when they exceed zero by more than this, so a
/// dispatch sitting exactly on a tightened limit is not flagged by round-off.
pub const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum UncertaintyError {
    #[error("probability {0} outside (0, 1)")]
    Domain(f64),
    #[error("invalid uncertainty model at bus {node}: {msg}")]
    InvalidModel { node: BusId, msg: String },
    #[error("violation tolerance {0} outside (0, 0.5)")]
    Epsilon(f64),
    #[error("bus {0} has no forecast")]
    UnknownNode(BusId),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile: Acklam's rational approximation followed by one
/// Halley step against the erfc-based CDF.
pub fn inv_norm_cdf(p: f64) -> Result<f64, UncertaintyError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(UncertaintyError::Domain(p));
    }
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549671010114134,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [7.784695709041462e-3, 3.224671290700398e-1, 2.445134137142996, 3.754408661907416];
    const P_LOW: f64 = 0.02425;

    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let x = if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    };
    let e = norm_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    Ok(x - u / (1.0 + x * u / 2.0))
}

/// `Φ⁻¹(1 − ε)`.
pub fn quantile(eps: f64) -> Result<f64, UncertaintyError> {
    inv_norm_cdf(1.0 - eps)
}

/// Margin `b − cμ − Φ⁻¹(1−ε)|c|σ` of the tightened form of `P(c·ξ ≤ b) ≥ 1 − ε`.
pub fn tighten_scalar(coeff: f64, mu: f64, sigma: f64, bound: f64, eps: f64) -> Result<f64, UncertaintyError> {
    let z = quantile(eps)?;
    Ok(bound - coeff * mu - z * coeff.abs() * sigma)
}

/// Margin `b − μᵀx − Φ⁻¹(1−ε)√(xᵀΣx)` for a general Gaussian vector.
pub fn soc_margin(x: &[f64], mean: &[f64], cov: &[Vec<f64>], bound: f64, eps: f64) -> Result<f64, UncertaintyError> {
    let n = x.len();
    if mean.len() != n || cov.len() != n || cov.iter().any(|r| r.len() != n) {
        return Err(UncertaintyError::Dimension(format!("x has {n} entries")));
    }
    let z = quantile(eps)?;
    let mut var = 0.0;
    for i in 0..n {
        for j in 0..n {
            var += x[i] * cov[i][j] * x[j];
        }
    }
    let mu: f64 = x.iter().zip(mean).map(|(a, b)| a * b).sum();
    Ok(bound - mu - z * var.max(0.0).sqrt())
}

/// How a configured sigma fraction maps to a standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SigmaMode {
    /// `σ = frac·μ`.
    #[default]
    StdFraction,
    /// `σ² = frac·μ²`.
    VarianceFraction,
}

impl SigmaMode {
    pub fn sigma(self, frac: f64, mean: f64) -> f64 {
        match self {
            SigmaMode::StdFraction => frac * mean.abs(),
            SigmaMode::VarianceFraction => frac.sqrt() * mean.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PvForecast {
    pub mean: f64,
    pub sigma: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Independent Gaussian forecasts of PV active output, one per PV bus.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyModel {
    pub forecasts: BTreeMap<BusId, PvForecast>,
    pub epsilon: f64,
    /// Per-bus override of `epsilon` for that bus's chance rows.
    pub epsilon_overrides: BTreeMap<BusId, f64>,
}

impl UncertaintyModel {
    pub fn new(epsilon: f64) -> Self {
        UncertaintyModel { forecasts: BTreeMap::new(), epsilon, epsilon_overrides: BTreeMap::new() }
    }

    pub fn insert(&mut self, node: BusId, forecast: PvForecast) {
        self.forecasts.insert(node, forecast);
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        UncertaintyModel { epsilon, ..self.clone() }
    }

    /// Same means and ranges with every sigma set to zero.
    pub fn deterministic(&self) -> Self {
        let mut m = self.clone();
        for f in m.forecasts.values_mut() {
            f.sigma = 0.0;
        }
        m
    }

    pub fn forecast(&self, node: BusId) -> Result<&PvForecast, UncertaintyError> {
        self.forecasts.get(&node).ok_or(UncertaintyError::UnknownNode(node))
    }

    pub fn epsilon_at(&self, node: BusId) -> f64 {
        self.epsilon_overrides.get(&node).copied().unwrap_or(self.epsilon)
    }

    pub fn z_at(&self, node: BusId) -> Result<f64, UncertaintyError> {
        quantile(self.epsilon_at(node))
    }

    pub fn validate(&self) -> Result<(), UncertaintyError> {
        for eps in std::iter::once(&self.epsilon).chain(self.epsilon_overrides.values()) {
            if !(*eps > 0.0 && *eps < 0.5) {
                return Err(UncertaintyError::Epsilon(*eps));
            }
        }
        for (&node, f) in &self.forecasts {
            let bad = |msg: &str| Err(UncertaintyError::InvalidModel { node, msg: msg.to_string() });
            if ![f.mean, f.sigma, f.lo, f.hi].iter().all(|v| v.is_finite()) {
                return bad("non-finite forecast");
            }
            if f.sigma < 0.0 {
                return bad("negative sigma");
            }
            if !(f.lo <= f.mean && f.mean <= f.hi) {
                return bad("mean outside forecast range");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeCheck {
    pub node: BusId,
    /// `P̄ − μ − zσ`.
    pub upper_margin: f64,
    /// `μ − zσ − P̲`.
    pub lower_margin: f64,
}

impl RangeCheck {
    pub fn ok(&self) -> bool {
        self.upper_margin >= 0.0 && self.lower_margin >= 0.0
    }
}

/// Tightened checks that each forecast stays inside its range with probability `1 − ε`.
pub fn forecast_range_check(model: &UncertaintyModel) -> Result<Vec<RangeCheck>, UncertaintyError> {
    model
        .forecasts
        .iter()
        .map(|(&node, f)| {
            let z = model.z_at(node)?;
            Ok(RangeCheck { node, upper_margin: f.hi - f.mean - z * f.sigma, lower_margin: f.mean - z * f.sigma - f.lo })
        })
        .collect()
}

/// Tightened reactive bound `cos φ·(μ − zσ)` of the power-factor coupling.
pub fn pf_capability(node: BusId, model: &UncertaintyModel, pf: f64) -> Result<f64, UncertaintyError> {
    let f = model.forecast(node)?;
    let z = model.z_at(node)?;
    Ok(pf * f.mean - z * pf * f.sigma)
}

/// Margins of the two tightened power-factor chance constraints on
/// `q⁺ − q⁻ + Q_i` (upper, then lower).
pub fn tighten_pf_coupling(
    node: BusId,
    model: &UncertaintyModel,
    pf: f64,
    q_plus: f64,
    q_minus: f64,
    load_q: f64,
) -> Result<(f64, f64), UncertaintyError> {
    let cap = pf_capability(node, model, pf)?;
    let net = q_plus - q_minus + load_q;
    Ok((cap - net, net + cap))
}

/// Linear row `coeff_plus·q⁺ + coeff_minus·q⁻ + constant ≤ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingRow {
    pub coeff_plus: f64,
    pub coeff_minus: f64,
    pub constant: f64,
}

/// The tightened power-factor constraints as two solver rows.
pub fn pf_coupling_rows(node: BusId, model: &UncertaintyModel, pf: f64, load_q: f64) -> Result<[CouplingRow; 2], UncertaintyError> {
    let cap = pf_capability(node, model, pf)?;
    Ok([
        CouplingRow { coeff_plus: 1.0, coeff_minus: -1.0, constant: load_q - cap },
        CouplingRow { coeff_plus: -1.0, coeff_minus: 1.0, constant: -load_q - cap },
    ])
}

/// Linear constraint `Σ c_k p_k + constant ≤ 0` in the random PV outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianRow {
    pub label: String,
    pub terms: Vec<(BusId, f64)>,
    pub constant: f64,
    /// Rows that the dispatch tightened; others are reported for information.
    pub enforced: bool,
}

impl GaussianRow {
    fn moments(&self, model: &UncertaintyModel) -> Result<(f64, f64), UncertaintyError> {
        let mut mean = self.constant;
        let mut var = 0.0;
        for &(node, c) in &self.terms {
            let f = model.forecast(node)?;
            mean += c * f.mean;
            var += (c * f.sigma).powi(2);
        }
        Ok((mean, var.sqrt()))
    }

    /// Tightened margin `−(E[row] + z·sd[row])` at tolerance `eps`.
    pub fn analytic_margin(&self, model: &UncertaintyModel, eps: f64) -> Result<f64, UncertaintyError> {
        let (mean, sd) = self.moments(model)?;
        Ok(-mean - quantile(eps)? * sd)
    }

    /// Exact probability that the row is violated.
    pub fn analytic_violation(&self, model: &UncertaintyModel) -> Result<f64, UncertaintyError> {
        let (mean, sd) = self.moments(model)?;
        Ok(if sd == 0.0 {
            if mean > FEAS_TOL {
                1.0
            } else {
                0.0
            }
        } else {
            1.0 - norm_cdf(-mean / sd)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViolationRate {
    pub label: String,
    pub enforced: bool,
    pub violations: u64,
    pub samples: u64,
    pub rate: f64,
    pub analytic_margin: f64,
    pub analytic_rate: f64,
    /// `3·√(ε(1−ε)/n)` binomial allowance around `ε`.
    pub binomial_tol: f64,
}

impl ViolationRate {
    pub fn passes(&self, eps: f64) -> bool {
        self.rate <= eps + self.binomial_tol
    }
}

/// Empirical violation rate of each row under `n_samples` joint draws of the
/// PV forecasts. Deterministic for a given seed and independent of `exec`.
pub fn monte_carlo_violation(
    model: &UncertaintyModel,
    rows: &[GaussianRow],
    n_samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<ViolationRate>, UncertaintyError> {
    model.validate()?;
    let nodes: Vec<BusId> = model.forecasts.keys().copied().collect();
    let index = |b: BusId| nodes.iter().position(|&n| n == b).ok_or(UncertaintyError::UnknownNode(b));
    let compiled: Vec<Vec<(usize, f64)>> = rows
        .iter()
        .map(|r| r.terms.iter().map(|&(b, c)| Ok((index(b)?, c))).collect::<Result<_, _>>())
        .collect::<Result<_, _>>()?;
    let means: Vec<f64> = nodes.iter().map(|n| model.forecasts[n].mean).collect();
    let sigmas: Vec<f64> = nodes.iter().map(|n| model.forecasts[n].sigma).collect();

    let chunks: Vec<(u64, usize)> = (0..n_samples.div_ceil(MC_CHUNK))
        .map(|c| (c as u64, MC_CHUNK.min(n_samples - c * MC_CHUNK)))
        .collect();
    let counts = exec.map(&chunks, |&(chunk, len)| {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(chunk);
        let mut p = vec![0.0; nodes.len()];
        let mut hits = vec![0u64; rows.len()];
        for _ in 0..len {
            for k in 0..p.len() {
                let xi: f64 = rng.sample(StandardNormal);
                p[k] = means[k] + sigmas[k] * xi;
            }
            for (r, (row, terms)) in rows.iter().zip(&compiled).enumerate() {
                let value: f64 = row.constant + terms.iter().map(|&(k, c)| c * p[k]).sum::<f64>();
                if value > FEAS_TOL {
                    hits[r] += 1;
                }
            }
        }
        hits
    });
    let mut total = vec![0u64; rows.len()];
    for c in counts {
        for (t, h) in total.iter_mut().zip(c) {
            *t += h;
        }
    }
    let eps = model.epsilon;
    rows.iter()
        .zip(total)
        .map(|(row, v)| {
            Ok(ViolationRate {
                label: row.label.clone(),
                enforced: row.enforced,
                violations: v,
                samples: n_samples as u64,
                rate: if n_samples == 0 { 0.0 } else { v as f64 / n_samples as f64 },
                analytic_margin: row.analytic_margin(model, eps)?,
                analytic_rate: row.analytic_violation(model)?,
                binomial_tol: 3.0 * (eps * (1.0 - eps) / n_samples.max(1) as f64).sqrt(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_node(mean: f64, sigma: f64, eps: f64) -> UncertaintyModel {
        let mut m = UncertaintyModel::new(eps);
        m.insert(BusId(2), PvForecast { mean, sigma, lo: 0.0, hi: 2.0 * mean + 1.0 });
        m
    }

    #[test]
    fn quantile_basics() {
        assert_eq!(inv_norm_cdf(0.5).unwrap(), 0.0);
        let z = inv_norm_cdf(0.95).unwrap();
        assert!((z - 1.6448536269514722).abs() < 1e-9, "{z}");
        assert!(inv_norm_cdf(0.0).is_err());
        assert!(inv_norm_cdf(1.0).is_err());
        assert!(inv_norm_cdf(f64::NAN).is_err());
        for p in [1e-10, 0.001, 0.02, 0.3, 0.77, 0.999] {
            let a = inv_norm_cdf(p).unwrap();
            let b = inv_norm_cdf(1.0 - p).unwrap();
            assert!((a + b).abs() < 1e-7, "p={p}");
        }
    }

    #[test]
    fn scalar_tightening_examples() {
        let m = tighten_scalar(1.0, 1.0, 0.1, 1.2, 0.05).unwrap();
        assert!((m - 0.035_514_637).abs() < 1e-8);
        assert_eq!(tighten_scalar(2.0, 1.0, 0.0, 3.0, 0.05).unwrap(), 1.0);
        assert!((tighten_scalar(2.0, 1.0, 5.0, 3.0, 0.5).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn range_check_examples() {
        let mut m = UncertaintyModel::new(0.05);
        m.insert(BusId(3), PvForecast { mean: 1.0, sigma: 0.1, lo: 0.0, hi: 1.1 });
        assert!(!forecast_range_check(&m).unwrap()[0].ok());
        m.forecasts.get_mut(&BusId(3)).unwrap().hi = 1.17;
        assert!(forecast_range_check(&m).unwrap()[0].ok());
    }

    #[test]
    fn pf_coupling_example() {
        let m = one_node(1.0, 0.1, 0.05);
        let (m1, m2) = tighten_pf_coupling(BusId(2), &m, 0.9, 0.5, 0.0, 0.0).unwrap();
        assert!((m1 - 0.251_960).abs() < 1e-5);
        assert!((m2 - 1.251_960).abs() < 1e-5);
        let rows = pf_coupling_rows(BusId(2), &m, 0.9, 0.0).unwrap();
        assert!((rows[0].coeff_plus * 0.5 + rows[0].constant + m1).abs() < 1e-12);
    }

    #[test]
    fn soc_matches_scalar_on_diagonal() {
        let a = soc_margin(&[2.0], &[1.0], &[vec![0.04]], 3.0, 0.1).unwrap();
        let b = tighten_scalar(2.0, 1.0, 0.2, 3.0, 0.1).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_deterministic_and_worker_independent() {
        let m = one_node(1.0, 0.1, 0.05);
        let row = GaussianRow {
            label: "tight".into(),
            terms: vec![(BusId(2), 1.0)],
            constant: -(1.0 + quantile(0.05).unwrap() * 0.1),
            enforced: true,
        };
        let a = monte_carlo_violation(&m, std::slice::from_ref(&row), 20_000, 7, Execution::Sequential).unwrap();
        let b = monte_carlo_violation(&m, std::slice::from_ref(&row), 20_000, 7, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert!(a[0].analytic_margin.abs() < 1e-12);
        assert!((a[0].analytic_rate - 0.05).abs() < 1e-9);
    }

    #[test]
    fn zero_sigma_never_violates() {
        let m = one_node(1.0, 0.0, 0.05);
        let row = GaussianRow { label: "r".into(), terms: vec![(BusId(2), 1.0)], constant: -1.0, enforced: true };
        let r = monte_carlo_violation(&m, &[row], 1000, 1, Execution::default()).unwrap();
        assert_eq!(r[0].violations, 0);
    }
}
