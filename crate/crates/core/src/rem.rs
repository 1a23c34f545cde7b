//! Classical random-effects model on the logit scale, fitted by maximum
//! likelihood.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Result, XtremError};
use crate::optim::{maximize, OptimProblem};
use crate::transforms::{normal_quantile, LogitObservation};
use crate::types::RemParams;

/// Fitted `tau2` values below this are reported as exactly zero.
pub const TAU2_ZERO_CUTOFF: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemFitDiagnostics {
    /// Inverse-variance weights `1 / (tau2 + sigma2_i)` at the optimum.
    pub weights: Vec<f64>,
    pub se_mu: f64,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// `-1/2 sum [ln(2 pi (tau2 + sigma2_i)) + (theta_i - mu)^2 / (tau2 + sigma2_i)]`.
pub fn rem_loglik(params: RemParams, obs: &[LogitObservation]) -> Result<f64> {
    if obs.is_empty() {
        return Err(XtremError::Domain("REM log-likelihood needs at least one observation".into()));
    }
    Ok(loglik_raw(params.mu(), params.tau2(), obs))
}

pub(crate) fn loglik_raw(mu: f64, tau2: f64, obs: &[LogitObservation]) -> f64 {
    -0.5 * obs
        .iter()
        .map(|o| {
            let v = tau2 + o.sigma2();
            let r = o.theta() - mu;
            (2.0 * PI * v).ln() + r * r / v
        })
        .sum::<f64>()
}

pub(crate) fn loglik_gradient_raw(mu: f64, tau2: f64, obs: &[LogitObservation]) -> [f64; 2] {
    obs.iter().fold([0.0, 0.0], |[d_mu, d_tau2], o| {
        let v = tau2 + o.sigma2();
        let r = o.theta() - mu;
        [d_mu + r / v, d_tau2 + 0.5 * (r * r / (v * v) - 1.0 / v)]
    })
}

/// Gradient of [`rem_loglik`] with respect to `(mu, tau2)`.
pub fn rem_loglik_gradient(params: RemParams, obs: &[LogitObservation]) -> Result<[f64; 2]> {
    if obs.is_empty() {
        return Err(XtremError::Domain("REM log-likelihood needs at least one observation".into()));
    }
    Ok(loglik_gradient_raw(params.mu(), params.tau2(), obs))
}

fn weighted_mean(tau2: f64, obs: &[LogitObservation]) -> (f64, f64) {
    let (sw, swt) = obs.iter().fold((0.0, 0.0), |(sw, swt), o| {
        let w = 1.0 / (tau2 + o.sigma2());
        (sw + w, swt + w * o.theta())
    });
    (swt / sw, sw)
}

/// Method-of-moments starting value for `tau2` (DerSimonian-Laird form).
fn moment_tau2(obs: &[LogitObservation]) -> f64 {
    let (mu_fe, sw) = weighted_mean(0.0, obs);
    let sw2: f64 = obs.iter().map(|o| 1.0 / (o.sigma2() * o.sigma2())).sum();
    let q: f64 = obs.iter().map(|o| (o.theta() - mu_fe).powi(2) / o.sigma2()).sum();
    let denom = sw - sw2 / sw;
    let k = obs.len() as f64;
    if denom > 0.0 {
        ((q - (k - 1.0)) / denom).max(0.0)
    } else {
        0.0
    }
}

/// Maximum-likelihood estimates of `(mu, tau2)` with `tau2 >= 0`.
///
/// Non-convergence is reported through the diagnostics rather than as an
/// error; the best iterate is returned.
pub fn rem_fit(obs: &[LogitObservation]) -> Result<(RemParams, RemFitDiagnostics)> {
    if obs.len() < 2 {
        return Err(XtremError::InsufficientData(format!(
            "REM fit needs at least 2 studies, got {}",
            obs.len()
        )));
    }

    let mut best: Option<(f64, f64, f64, bool, usize)> = None;
    // moment start plus a small-heterogeneity start; keep the better optimum
    let tau_start = moment_tau2(obs);
    for tau2_0 in [tau_start.max(0.01), 0.0] {
        let (mu0, _) = weighted_mean(tau2_0, obs);
        let problem = OptimProblem::new(|x: &[f64]| loglik_raw(x[0], x[1], obs), vec![mu0, tau2_0])
            .with_gradient(|x: &[f64]| loglik_gradient_raw(x[0], x[1], obs).to_vec())
            .with_bounds(vec![(f64::NEG_INFINITY, f64::INFINITY), (0.0, f64::INFINITY)]);
        let out = maximize(&problem)?;
        let cand = (out.argmax[0], out.argmax[1], out.value, out.converged, out.iterations);
        best = match best {
            Some(b) if b.2 >= cand.2 => Some(b),
            _ => Some(cand),
        };
    }
    let (_, mut tau2, _, converged, iterations) = best.expect("at least one start");

    if tau2 < TAU2_ZERO_CUTOFF {
        tau2 = 0.0;
    }
    // exact maximizer over mu given tau2
    let (mu, sw) = weighted_mean(tau2, obs);
    let params = RemParams::new(mu, tau2)?;
    let weights = obs.iter().map(|o| 1.0 / (tau2 + o.sigma2())).collect();
    let diag = RemFitDiagnostics {
        weights,
        se_mu: (1.0 / sw).sqrt(),
        loglik: loglik_raw(mu, tau2, obs),
        converged,
        iterations,
    };
    Ok((params, diag))
}

/// Wald interval `mu +- z_{(1+level)/2} * se_mu` on the logit scale.
pub fn rem_confidence_interval(params: RemParams, diag: &RemFitDiagnostics, level: f64) -> Result<(f64, f64)> {
    wald_interval(params.mu(), diag.se_mu, level)
}

pub(crate) fn wald_interval(mu: f64, se: f64, level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(XtremError::Domain(format!("confidence level must lie in (0, 1), got {level}")));
    }
    let z = normal_quantile(0.5 * (1.0 + level))?;
    Ok((mu - z * se, mu + z * se))
}
