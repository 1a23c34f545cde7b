//! Generalized Pareto distribution for threshold excesses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, XtremError};
use crate::optim::{maximize, OptimProblem};
use crate::types::{GpdParams, TailQuantile, XI_MAX, XI_MIN};

/// Below this `|xi|` the exponential limit is used.
pub const XI_EXPONENTIAL_CUTOFF: f64 = 1e-8;
/// Fits on fewer excesses than this carry a low-sample flag.
pub const LOW_SAMPLE_CUTOFF: usize = 5;
/// Smallest shape the fitter will visit (open bound at -1).
pub const XI_FIT_LOWER: f64 = XI_MIN + 1e-6;

/// Excesses over a threshold `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpdSample {
    excesses: Vec<f64>,
    threshold_value: f64,
}

impl GpdSample {
    pub fn new(excesses: Vec<f64>, threshold_value: f64) -> Result<Self> {
        if let Some(bad) = excesses.iter().find(|&&y| !(y > 0.0 && y.is_finite())) {
            return Err(XtremError::validation("excesses", format!("must be positive and finite, got {bad}")));
        }
        if !threshold_value.is_finite() {
            return Err(XtremError::validation("threshold_value", "must be finite"));
        }
        Ok(Self {
            excesses,
            threshold_value,
        })
    }

    pub fn excesses(&self) -> &[f64] {
        &self.excesses
    }

    pub fn threshold_value(&self) -> f64 {
        self.threshold_value
    }

    pub fn len(&self) -> usize {
        self.excesses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.excesses.is_empty()
    }
}

#[inline]
pub(crate) fn logpdf_raw(y: f64, xi: f64, beta: f64) -> f64 {
    if xi.abs() <= XI_EXPONENTIAL_CUTOFF {
        return -beta.ln() - y / beta;
    }
    let z = xi * y / beta;
    if z <= -1.0 {
        return f64::NEG_INFINITY;
    }
    -beta.ln() - (1.0 / xi + 1.0) * z.ln_1p()
}

/// Log-density of an excess `y > 0`; `-inf` beyond the upper endpoint when `xi < 0`.
pub fn gpd_logpdf(y: f64, params: GpdParams) -> Result<f64> {
    if !(y > 0.0) {
        return Err(XtremError::Domain(format!("GPD excess must be positive, got {y}")));
    }
    Ok(logpdf_raw(y, params.xi(), params.beta()))
}

pub(crate) fn loglik_raw(excesses: &[f64], xi: f64, beta: f64) -> f64 {
    let mut total = 0.0;
    for &y in excesses {
        let v = logpdf_raw(y, xi, beta);
        if v == f64::NEG_INFINITY {
            return v;
        }
        total += v;
    }
    total
}

/// Sum of log-densities over the sample.
pub fn gpd_loglik(sample: &GpdSample, params: GpdParams) -> Result<f64> {
    if sample.is_empty() {
        return Err(XtremError::Domain("GPD log-likelihood needs at least one excess".into()));
    }
    Ok(loglik_raw(&sample.excesses, params.xi(), params.beta()))
}

/// Below this `|xi|` the shape derivative uses its second-order expansion.
const XI_SERIES_CUTOFF: f64 = 1e-6;

/// `(d/dxi, d/dbeta)` of the log-likelihood; non-finite outside the support.
pub(crate) fn loglik_gradient_raw(excesses: &[f64], xi: f64, beta: f64) -> [f64; 2] {
    let mut d_xi = 0.0;
    let mut d_beta = 0.0;
    for &y in excesses {
        let z = y / beta;
        let s = 1.0 + xi * z;
        if s <= 0.0 {
            return [f64::NAN, f64::NAN];
        }
        d_beta += ((1.0 + xi) * z / s - 1.0) / beta;
        d_xi += if xi.abs() <= XI_SERIES_CUTOFF {
            z * z / 2.0 - z + xi * (z * z - 2.0 * z * z * z / 3.0)
        } else {
            (xi * z).ln_1p() / (xi * xi) - (1.0 + 1.0 / xi) * z / s
        };
    }
    [d_xi, d_beta]
}

/// Gradient of [`gpd_loglik`] with respect to `(xi, beta)`.
pub fn gpd_loglik_gradient(sample: &GpdSample, params: GpdParams) -> Result<[f64; 2]> {
    if sample.is_empty() {
        return Err(XtremError::Domain("GPD log-likelihood needs at least one excess".into()));
    }
    let g = loglik_gradient_raw(&sample.excesses, params.xi(), params.beta());
    if g.iter().all(|v| v.is_finite()) {
        Ok(g)
    } else {
        Err(XtremError::Domain("parameters put an excess outside the GPD support".into()))
    }
}

/// Distribution function of an excess.
pub fn gpd_cdf(y: f64, params: GpdParams) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    let (xi, beta) = (params.xi(), params.beta());
    if xi.abs() <= XI_EXPONENTIAL_CUTOFF {
        return -(-y / beta).exp_m1();
    }
    let z = xi * y / beta;
    if z <= -1.0 {
        return 1.0;
    }
    -(-(1.0 / xi) * z.ln_1p()).exp_m1()
}

/// Excess quantile `F^{-1}(p)` without the threshold shift.
fn excess_quantile(xi: f64, beta: f64, p: f64) -> f64 {
    let log_surv = (-p).ln_1p();
    if xi.abs() <= XI_EXPONENTIAL_CUTOFF {
        -beta * log_surv
    } else {
        beta / xi * (-xi * log_surv).exp_m1()
    }
}

/// Proportion-scale quantile `u + F^{-1}(p)`, clamped at 1.
pub fn gpd_quantile(params: GpdParams, threshold_value: f64, p: f64) -> Result<TailQuantile> {
    if !(p > 0.0 && p < 1.0) {
        return Err(XtremError::Domain(format!("quantile level must lie in (0, 1), got {p}")));
    }
    let value = threshold_value + excess_quantile(params.xi(), params.beta(), p);
    Ok(if value > 1.0 {
        TailQuantile {
            level: p,
            value: 1.0,
            clamped: true,
        }
    } else {
        TailQuantile {
            level: p,
            value,
            clamped: false,
        }
    })
}

/// One inverse-CDF draw.
pub fn gpd_draw<R: Rng + ?Sized>(params: GpdParams, rng: &mut R) -> f64 {
    // open interval so the excess is strictly positive
    let mut u: f64 = rng.random();
    while u == 0.0 {
        u = rng.random();
    }
    excess_quantile(params.xi(), params.beta(), u)
}

/// `n` i.i.d. excesses from a ChaCha8 stream seeded with `rng_seed`.
pub fn gpd_sample(params: GpdParams, n: usize, rng_seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    (0..n).map(|_| gpd_draw(params, &mut rng)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpdFit {
    pub params: GpdParams,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Fewer than [`LOW_SAMPLE_CUTOFF`] excesses.
    pub low_sample: bool,
}

fn moment_start(excesses: &[f64]) -> Option<(f64, f64)> {
    let n = excesses.len() as f64;
    let mean = excesses.iter().sum::<f64>() / n;
    let var = excesses.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) {
        return None;
    }
    let ratio = mean * mean / var;
    let xi = (0.5 * (1.0 - ratio)).clamp(-0.45, 0.9);
    let beta = mean * (1.0 - xi);
    let max = excesses.iter().cloned().fold(0.0, f64::max);
    (beta > 0.0 && 1.0 + xi * max / beta > 0.0).then_some((xi, beta))
}

/// Maximum-likelihood `(xi, beta)` over `xi in (-1, 5]`, `beta > 0`.
///
/// Starts from the method-of-moments estimate and from `(0.1, mean)`, and
/// keeps the better optimum. The scale is optimized relative to the sample
/// mean for conditioning.
pub fn gpd_fit(sample: &GpdSample) -> Result<GpdFit> {
    let n = sample.len();
    if n < 2 {
        return Err(XtremError::InsufficientTailData(n));
    }
    let ys = sample.excesses();
    let scale = ys.iter().sum::<f64>() / n as f64;
    let objective = |x: &[f64]| loglik_raw(ys, x[0], x[1] * scale);
    let gradient = |x: &[f64]| {
        let [d_xi, d_beta] = loglik_gradient_raw(ys, x[0], x[1] * scale);
        vec![d_xi, d_beta * scale]
    };
    let bounds = vec![(XI_FIT_LOWER, XI_MAX), (1e-12, f64::INFINITY)];

    let mut starts = vec![(0.1, scale)];
    if let Some(s) = moment_start(ys) {
        starts.insert(0, s);
    }

    let mut best: Option<GpdFit> = None;
    for (xi0, beta0) in starts {
        let start = vec![xi0, beta0 / scale];
        if !objective(&start).is_finite() {
            continue;
        }
        let problem = OptimProblem::new(objective, start)
            .with_gradient(gradient)
            .with_bounds(bounds.clone());
        let out = maximize(&problem)?;
        let params = GpdParams::new(out.argmax[0], out.argmax[1] * scale)?;
        let cand = GpdFit {
            params,
            loglik: out.value,
            converged: out.converged,
            iterations: out.iterations,
            low_sample: n < LOW_SAMPLE_CUTOFF,
        };
        if best.as_ref().is_none_or(|b| cand.loglik > b.loglik) {
            best = Some(cand);
        }
    }
    best.ok_or(XtremError::NonFiniteStart)
}
