//! The combined model: thresholding, segmentation, the joint likelihood and
//! its maximization, and side-by-side comparison with plain REM.

use serde::{Deserialize, Serialize};

use crate::error::{Result, XtremError};
use crate::gpd::{self, gpd_fit, gpd_quantile, GpdSample, LOW_SAMPLE_CUTOFF, XI_FIT_LOWER};
use crate::optim::{maximize, OptimOutcome, OptimProblem};
use crate::rem::{self, rem_fit, wald_interval, TAU2_ZERO_CUTOFF};
use crate::transforms::{within_variance, LogitObservation, DEFAULT_CONTINUITY_CORRECTION};
use crate::types::{
    Dataset, FitParts, FitResult, FitWarning, GpdParams, ModelKind, RemParams, Segmentation, TailQuantile,
    Threshold, ThresholdRequest, XI_MAX,
};

/// Default tail percentile reported with every XT-REM fit.
pub const DEFAULT_TAIL_LEVEL: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Tail quantile levels to report.
    pub quantiles: Vec<f64>,
    /// Continuity correction for zero/all-event studies.
    pub correction: f64,
    /// Maximize all four parameters as a single vector instead of block-wise.
    pub joint: bool,
    pub ci_level: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            quantiles: vec![DEFAULT_TAIL_LEVEL],
            correction: DEFAULT_CONTINUITY_CORRECTION,
            joint: false,
            ci_level: 0.95,
        }
    }
}

/// Logit observations for the studies at `indices` (all studies if `None`).
pub fn observations(dataset: &Dataset, indices: Option<&[usize]>, correction: f64) -> Result<Vec<LogitObservation>> {
    let studies = dataset.studies();
    match indices {
        Some(idx) => idx
            .iter()
            .map(|&i| {
                let s = studies
                    .get(i)
                    .ok_or_else(|| XtremError::Inconsistent(format!("study index {i} out of range")))?;
                within_variance(s.events(), s.size(), correction)
            })
            .collect(),
        None => studies
            .iter()
            .map(|s| within_variance(s.events(), s.size(), correction))
            .collect(),
    }
}

/// Resolves a threshold request. A dynamic request fits REM to every study
/// once and freezes `u = invlogit(mu + z * tau)`.
pub fn resolve_threshold(request: ThresholdRequest, dataset: &Dataset, correction: f64) -> Result<Threshold> {
    match request {
        ThresholdRequest::Fixed { value } => Threshold::fixed(value),
        ThresholdRequest::Dynamic { z } => {
            let obs = observations(dataset, None, correction)?;
            let (params, _) = rem_fit(&obs)?;
            Threshold::dynamic(params, z)
        }
    }
}

/// Splits studies into bulk (`p <= u`) and tail (`p > u`).
pub fn segment(dataset: &Dataset, threshold: Threshold) -> Segmentation {
    Segmentation::new(dataset, threshold)
}

/// Joint log-likelihood: REM over the bulk plus GPD over the tail excesses.
///
/// `bulk_obs` must line up with `seg.bulk_indices()`. An empty block
/// contributes exactly zero.
pub fn xtrem_loglik(
    rem_params: RemParams,
    gpd_params: GpdParams,
    seg: &Segmentation,
    bulk_obs: &[LogitObservation],
) -> Result<f64> {
    if bulk_obs.len() != seg.bulk_indices().len() {
        return Err(XtremError::Inconsistent(format!(
            "{} bulk observations for {} bulk studies",
            bulk_obs.len(),
            seg.bulk_indices().len()
        )));
    }
    let bulk = if bulk_obs.is_empty() {
        0.0
    } else {
        rem::loglik_raw(rem_params.mu(), rem_params.tau2(), bulk_obs)
    };
    let tail = if seg.excesses().is_empty() {
        0.0
    } else {
        gpd::loglik_raw(seg.excesses(), gpd_params.xi(), gpd_params.beta())
    };
    Ok(bulk + tail)
}

/// Result of maximizing the four-parameter likelihood as one vector.
#[derive(Debug, Clone)]
pub struct JointFit {
    pub rem: RemParams,
    pub gpd: GpdParams,
    pub loglik: f64,
    pub outcome: OptimOutcome,
}

/// Single-vector maximization over `(mu, tau2, xi, beta)`.
///
/// With `frozen_tail` set, the tail coordinates are pinned by coincident
/// bounds and only the bulk block moves.
pub fn fit_joint(
    bulk_obs: &[LogitObservation],
    excesses: &[f64],
    frozen_tail: Option<GpdParams>,
) -> Result<JointFit> {
    if bulk_obs.len() < 2 {
        return Err(XtremError::InsufficientData(format!(
            "need at least 2 bulk studies, got {}",
            bulk_obs.len()
        )));
    }
    if excesses.len() < 2 && frozen_tail.is_none() {
        return Err(XtremError::InsufficientTailData(excesses.len()));
    }
    let scale = if excesses.is_empty() {
        1.0
    } else {
        excesses.iter().sum::<f64>() / excesses.len() as f64
    };

    let (rem0, _) = rem_fit(bulk_obs)?;
    let (xi0, beta0) = match frozen_tail {
        Some(p) => (p.xi(), p.beta()),
        None => {
            let g = gpd_fit(&GpdSample::new(excesses.to_vec(), 0.0)?)?;
            // perturb so the joint path does real work
            (g.params.xi() * 0.5, g.params.beta() * 1.2)
        }
    };
    let tail_bounds = match frozen_tail {
        Some(_) => [(xi0, xi0), (beta0 / scale, beta0 / scale)],
        None => [(XI_FIT_LOWER, XI_MAX), (1e-12, f64::INFINITY)],
    };
    let bounds = vec![
        (f64::NEG_INFINITY, f64::INFINITY),
        (0.0, f64::INFINITY),
        tail_bounds[0],
        tail_bounds[1],
    ];
    let objective = |x: &[f64]| {
        let tail = if excesses.is_empty() {
            0.0
        } else {
            gpd::loglik_raw(excesses, x[2], x[3] * scale)
        };
        rem::loglik_raw(x[0], x[1], bulk_obs) + tail
    };
    let gradient = |x: &[f64]| {
        let [d_mu, d_tau2] = rem::loglik_gradient_raw(x[0], x[1], bulk_obs);
        let [d_xi, d_beta] = if excesses.is_empty() {
            [0.0, 0.0]
        } else {
            gpd::loglik_gradient_raw(excesses, x[2], x[3] * scale)
        };
        vec![d_mu, d_tau2, d_xi, d_beta * scale]
    };
    let mut start = vec![rem0.mu() + 0.3, rem0.tau2() + 0.05, xi0, beta0 / scale];
    if !objective(&start).is_finite() {
        start[2] = xi0.max(0.0);
    }
    let outcome = maximize(&OptimProblem::new(objective, start).with_gradient(gradient).with_bounds(bounds))?;
    let tau2 = if outcome.argmax[1] < TAU2_ZERO_CUTOFF {
        0.0
    } else {
        outcome.argmax[1]
    };
    let rem = RemParams::new(outcome.argmax[0], tau2)?;
    let gpd = match frozen_tail {
        Some(p) => p,
        None => GpdParams::new(outcome.argmax[2], outcome.argmax[3] * scale)?,
    };
    let loglik = objective(&[rem.mu(), rem.tau2(), gpd.xi(), gpd.beta() / scale]);
    Ok(JointFit {
        rem,
        gpd,
        loglik,
        outcome,
    })
}

fn tail_quantiles(
    gpd: GpdParams,
    u: f64,
    levels: &[f64],
    warnings: &mut Vec<FitWarning>,
) -> Result<Vec<TailQuantile>> {
    levels
        .iter()
        .map(|&level| {
            let q = gpd_quantile(gpd, u, level)?;
            if q.clamped {
                warnings.push(FitWarning::QuantileClamped { level });
            }
            Ok(q)
        })
        .collect()
}

/// Fits XT-REM after resolving `request` against `dataset`.
pub fn xtrem_fit(dataset: &Dataset, request: ThresholdRequest, options: &FitOptions) -> Result<FitResult> {
    let threshold = resolve_threshold(request, dataset, options.correction)?;
    xtrem_fit_at(dataset, threshold, options)
}

/// Fits XT-REM at an already resolved threshold.
///
/// With fewer than two excesses the tail block is skipped and the result
/// degrades to a bulk-only REM fit with `k = 2`.
pub fn xtrem_fit_at(dataset: &Dataset, threshold: Threshold, options: &FitOptions) -> Result<FitResult> {
    let seg = segment(dataset, threshold);
    let bulk_obs = observations(dataset, Some(seg.bulk_indices()), options.correction)?;
    if bulk_obs.len() < 2 {
        return Err(XtremError::InsufficientData(format!(
            "only {} studies at or below u = {}; the bulk block needs 2",
            bulk_obs.len(),
            threshold.value()
        )));
    }
    let n_tail = seg.tail_count();
    let mut warnings = Vec::new();

    let (rem_params, gpd_params, loglik, converged, iterations) = if n_tail < 2 {
        warnings.push(FitWarning::DegradedToRem { tail_count: n_tail });
        let (p, d) = rem_fit(&bulk_obs)?;
        if !d.converged {
            warnings.push(FitWarning::NotConverged { block: "bulk".into() });
        }
        (p, None, d.loglik, d.converged, d.iterations)
    } else {
        if n_tail < LOW_SAMPLE_CUTOFF {
            warnings.push(FitWarning::LowTailSample { tail_count: n_tail });
        }
        if options.joint {
            let j = fit_joint(&bulk_obs, seg.excesses(), None)?;
            if !j.outcome.converged {
                warnings.push(FitWarning::NotConverged { block: "joint".into() });
            }
            (j.rem, Some(j.gpd), j.loglik, j.outcome.converged, j.outcome.iterations)
        } else {
            // the likelihood factorizes, so the blocks are maximized separately
            let (p, d) = rem_fit(&bulk_obs)?;
            let g = gpd_fit(&GpdSample::new(seg.excesses().to_vec(), threshold.value())?)?;
            if !d.converged {
                warnings.push(FitWarning::NotConverged { block: "bulk".into() });
            }
            if !g.converged {
                warnings.push(FitWarning::NotConverged { block: "tail".into() });
            }
            let ll = xtrem_loglik(p, g.params, &seg, &bulk_obs)?;
            (p, Some(g.params), ll, d.converged && g.converged, d.iterations + g.iterations)
        }
    };

    let sw: f64 = bulk_obs.iter().map(|o| 1.0 / (rem_params.tau2() + o.sigma2())).sum();
    let se_mu = (1.0 / sw).sqrt();
    let ci = wald_interval(rem_params.mu(), se_mu, options.ci_level)?;
    let quantiles = match gpd_params {
        Some(g) => tail_quantiles(g, threshold.value(), &options.quantiles, &mut warnings)?,
        None => Vec::new(),
    };

    FitResult::assemble(FitParts {
        dataset_label: dataset.label().to_string(),
        model: ModelKind::Xtrem,
        rem: rem_params,
        gpd: gpd_params,
        loglik,
        tail_quantiles: quantiles,
        segmentation: Some(seg),
        se_mu,
        ci95_mu: ci,
        converged,
        n_iterations: iterations,
        warnings,
    })
}

/// Classical REM over every study, without segmentation.
pub fn rem_only_fit(dataset: &Dataset, options: &FitOptions) -> Result<FitResult> {
    let obs = observations(dataset, None, options.correction)?;
    let (params, diag) = rem_fit(&obs)?;
    let ci = wald_interval(params.mu(), diag.se_mu, options.ci_level)?;
    let mut warnings = Vec::new();
    if !diag.converged {
        warnings.push(FitWarning::NotConverged { block: "bulk".into() });
    }
    FitResult::assemble(FitParts {
        dataset_label: dataset.label().to_string(),
        model: ModelKind::Rem,
        rem: params,
        gpd: None,
        loglik: diag.loglik,
        tail_quantiles: Vec::new(),
        segmentation: None,
        se_mu: diag.se_mu,
        ci95_mu: ci,
        converged: diag.converged,
        n_iterations: diag.iterations,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: ModelKind,
    pub k_params: usize,
    pub loglik: f64,
    pub aic: f64,
    pub aggregate_proportion: f64,
    pub tail_quantiles: Vec<TailQuantile>,
}

impl From<&FitResult> for ModelSummary {
    fn from(f: &FitResult) -> Self {
        Self {
            model: f.model(),
            k_params: f.k_params(),
            loglik: f.loglik(),
            aic: f.aic(),
            aggregate_proportion: f.aggregate_proportion(),
            tail_quantiles: f.tail_quantiles().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub dataset_label: String,
    pub first: ModelSummary,
    pub second: ModelSummary,
    /// `aic(first) - aic(second)`.
    pub delta_aic: f64,
    /// `loglik(first) - loglik(second)`.
    pub delta_loglik: f64,
    /// Model with the lower AIC; `None` on a tie.
    pub preferred: Option<ModelKind>,
}

/// AIC-based comparison of two fits of the same dataset.
pub fn compare(a: &FitResult, b: &FitResult) -> Result<ComparisonReport> {
    if a.dataset_label() != b.dataset_label() {
        return Err(XtremError::validation(
            "dataset_label",
            format!("cannot compare fits of '{}' and '{}'", a.dataset_label(), b.dataset_label()),
        ));
    }
    let delta_aic = a.aic() - b.aic();
    let preferred = if delta_aic.abs() <= 1e-9 * a.aic().abs().max(1.0) {
        None
    } else if delta_aic < 0.0 {
        Some(a.model())
    } else {
        Some(b.model())
    };
    Ok(ComparisonReport {
        dataset_label: a.dataset_label().to_string(),
        first: a.into(),
        second: b.into(),
        delta_aic,
        delta_loglik: a.loglik() - b.loglik(),
        preferred,
    })
}
