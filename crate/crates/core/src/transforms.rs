//! Logit-scale transforms and the binomial within-study variance.

use serde::{Deserialize, Serialize};

use crate::error::{Result, XtremError};

/// Default continuity correction added to both the event and non-event cell
/// when a study has zero or all events.
pub const DEFAULT_CONTINUITY_CORRECTION: f64 = 0.5;

/// A study's proportion on the logit scale together with its sampling variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitObservation {
    theta: f64,
    sigma2: f64,
    corrected: bool,
}

impl LogitObservation {
    /// Builds an observation directly from a logit value and a known variance.
    pub fn new(theta: f64, sigma2: f64) -> Result<Self> {
        if !theta.is_finite() {
            return Err(XtremError::validation("theta", format!("must be finite, got {theta}")));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(XtremError::validation(
                "sigma2",
                format!("must be positive and finite, got {sigma2}"),
            ));
        }
        Ok(Self {
            theta,
            sigma2,
            corrected: false,
        })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Whether a continuity correction was needed to define the variance.
    pub fn corrected(&self) -> bool {
        self.corrected
    }

    /// The same observation shifted by `delta` on the logit scale.
    pub fn shifted(&self, delta: f64) -> Self {
        Self {
            theta: self.theta + delta,
            ..*self
        }
    }
}

/// `ln(p / (1 - p))` for `p` strictly inside the unit interval.
pub fn logit(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(XtremError::Domain(format!("logit requires 0 < p < 1, got {p}")));
    }
    Ok((p / (1.0 - p)).ln())
}

/// Inverse logit, evaluated so that neither branch can overflow.
pub fn invlogit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logit proportion and plug-in variance `1/r + 1/(n - r)` for one study.
///
/// When `r` is 0 or `n`, `correction` is added to both the event and
/// non-event cells (so `n` grows by `2 * correction`) before computing
/// either quantity.
pub fn within_variance(r: u64, n: u64, correction: f64) -> Result<LogitObservation> {
    if n == 0 {
        return Err(XtremError::Domain("study size must be at least 1".into()));
    }
    if r > n {
        return Err(XtremError::Domain(format!("events ({r}) exceed size ({n})")));
    }
    let boundary = r == 0 || r == n;
    if boundary && !(correction > 0.0 && correction.is_finite()) {
        return Err(XtremError::Domain(format!(
            "continuity correction must be positive for boundary counts, got {correction}"
        )));
    }
    let (events, non_events) = if boundary {
        (r as f64 + correction, (n - r) as f64 + correction)
    } else {
        (r as f64, (n - r) as f64)
    };
    Ok(LogitObservation {
        theta: (events / non_events).ln(),
        sigma2: 1.0 / events + 1.0 / non_events,
        corrected: boundary,
    })
}

/// Standard normal quantile via Acklam's rational approximation
/// (relative error below 1.2e-9 over the open unit interval).
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(XtremError::Domain(format!("normal quantile requires 0 < p < 1, got {p}")));
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let z = if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - P_LOW {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    Ok(z)
}
