//! Domain types shared across the crate. Every constructor validates its
//! invariants, including deserialization.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, XtremError};
use crate::transforms::invlogit;

/// Default z-score for the dynamic threshold (90th percentile of the latent
/// random-effects distribution).
pub const DEFAULT_PERCENTILE_Z: f64 = 1.2816;

/// Lower bound on the GPD shape; the likelihood is unbounded at and below -1.
pub const XI_MIN: f64 = -1.0;
/// Upper bound on the GPD shape used by the fitters.
pub const XI_MAX: f64 = 5.0;

/// One study: event count `r`, sample size `n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "StudyRecordRepr")]
pub struct StudyRecord {
    label: String,
    events: u64,
    size: u64,
}

#[derive(Deserialize)]
struct StudyRecordRepr {
    label: String,
    events: u64,
    size: u64,
}

impl TryFrom<StudyRecordRepr> for StudyRecord {
    type Error = XtremError;
    fn try_from(r: StudyRecordRepr) -> Result<Self> {
        StudyRecord::labelled(r.label, r.events, r.size)
    }
}

impl StudyRecord {
    /// Validates counts; the label defaults to empty.
    pub fn new(events: u64, size: u64) -> Result<Self> {
        Self::labelled(String::new(), events, size)
    }

    pub fn labelled(label: impl Into<String>, events: u64, size: u64) -> Result<Self> {
        let label = label.into();
        if size == 0 {
            return Err(XtremError::validation("size", "must be at least 1"));
        }
        if events > size {
            return Err(XtremError::validation(
                "events",
                format!("study '{label}': events ({events}) exceed size ({size})"),
            ));
        }
        Ok(Self {
            label,
            events,
            size,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn size(&self) -> u64 {
        self.size
    }

    pub fn proportion(&self) -> f64 {
        self.events as f64 / self.size as f64
    }
}

/// Convenience alias for [`StudyRecord::new`].
pub fn make_study(events: u64, size: u64) -> Result<StudyRecord> {
    StudyRecord::new(events, size)
}

/// An ordered, non-empty collection of studies. Study index is positional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    label: String,
    studies: Vec<StudyRecord>,
}

impl Dataset {
    pub fn new(label: impl Into<String>, studies: Vec<StudyRecord>) -> Result<Self> {
        if studies.is_empty() {
            return Err(XtremError::validation("studies", "dataset must contain at least one study"));
        }
        Ok(Self {
            label: label.into(),
            studies,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn studies(&self) -> &[StudyRecord] {
        &self.studies
    }

    pub fn len(&self) -> usize {
        self.studies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.studies.is_empty()
    }

    pub fn proportions(&self) -> impl Iterator<Item = f64> + '_ {
        self.studies.iter().map(StudyRecord::proportion)
    }
}

/// Logit-scale mean and between-study variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RemParamsRepr")]
pub struct RemParams {
    mu: f64,
    tau2: f64,
}

#[derive(Deserialize)]
struct RemParamsRepr {
    mu: f64,
    tau2: f64,
}

impl TryFrom<RemParamsRepr> for RemParams {
    type Error = XtremError;
    fn try_from(r: RemParamsRepr) -> Result<Self> {
        RemParams::new(r.mu, r.tau2)
    }
}

impl RemParams {
    pub fn new(mu: f64, tau2: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(XtremError::validation("mu", format!("must be finite, got {mu}")));
        }
        if !(tau2 >= 0.0 && tau2.is_finite()) {
            return Err(XtremError::validation("tau2", format!("must be finite and >= 0, got {tau2}")));
        }
        Ok(Self { mu, tau2 })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn tau2(&self) -> f64 {
        self.tau2
    }

    pub fn tau(&self) -> f64 {
        self.tau2.sqrt()
    }
}

/// GPD shape `xi` and scale `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GpdParamsRepr")]
pub struct GpdParams {
    xi: f64,
    beta: f64,
}

#[derive(Deserialize)]
struct GpdParamsRepr {
    xi: f64,
    beta: f64,
}

impl TryFrom<GpdParamsRepr> for GpdParams {
    type Error = XtremError;
    fn try_from(r: GpdParamsRepr) -> Result<Self> {
        GpdParams::new(r.xi, r.beta)
    }
}

impl GpdParams {
    pub fn new(xi: f64, beta: f64) -> Result<Self> {
        if !(xi > XI_MIN && xi.is_finite()) {
            return Err(XtremError::validation("xi", format!("must be finite and > {XI_MIN}, got {xi}")));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(XtremError::validation("beta", format!("must be finite and > 0, got {beta}")));
        }
        Ok(Self { xi, beta })
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Finite right endpoint of the excess distribution, if `xi < 0`.
    pub fn upper_endpoint(&self) -> Option<f64> {
        (self.xi < 0.0).then(|| -self.beta / self.xi)
    }
}

/// How a threshold should be obtained before segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThresholdRequest {
    Fixed { value: f64 },
    Dynamic { z: f64 },
}

impl ThresholdRequest {
    pub fn fixed(value: f64) -> Self {
        ThresholdRequest::Fixed { value }
    }

    pub fn dynamic() -> Self {
        ThresholdRequest::Dynamic {
            z: DEFAULT_PERCENTILE_Z,
        }
    }
}

impl FromStr for ThresholdRequest {
    type Err = XtremError;

    /// Parses `fixed:<u>`, `dynamic`, or `dynamic:<z>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        let parse = |a: &str| {
            a.trim()
                .parse::<f64>()
                .map_err(|_| XtremError::validation("threshold", format!("'{a}' is not a number")))
        };
        match (kind.to_ascii_lowercase().as_str(), arg) {
            ("fixed", Some(a)) => {
                let value = parse(a)?;
                if !(value > 0.0 && value < 1.0) {
                    return Err(XtremError::validation(
                        "threshold",
                        format!("fixed threshold must lie in (0, 1), got {value}"),
                    ));
                }
                Ok(ThresholdRequest::Fixed { value })
            }
            ("fixed", None) => Err(XtremError::validation("threshold", "fixed threshold needs a value, e.g. fixed:0.09")),
            ("dynamic", None) => Ok(ThresholdRequest::dynamic()),
            ("dynamic", Some(a)) => {
                let z = parse(a)?;
                if !z.is_finite() {
                    return Err(XtremError::validation("threshold", "dynamic z must be finite"));
                }
                Ok(ThresholdRequest::Dynamic { z })
            }
            _ => Err(XtremError::validation(
                "threshold",
                format!("unrecognised threshold '{s}', expected fixed:<u> or dynamic[:z]"),
            )),
        }
    }
}

impl fmt::Display for ThresholdRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdRequest::Fixed { value } => write!(f, "fixed:{value}"),
            ThresholdRequest::Dynamic { z } => write!(f, "dynamic:{z}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdKind {
    Fixed,
    DynamicPercentile,
}

/// A resolved threshold `u` in (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ThresholdRepr")]
pub struct Threshold {
    kind: ThresholdKind,
    value: f64,
    percentile_z: f64,
    /// Random-effects parameters a dynamic threshold was resolved from.
    basis: Option<RemParams>,
}

#[derive(Deserialize)]
struct ThresholdRepr {
    kind: ThresholdKind,
    value: f64,
    percentile_z: f64,
    basis: Option<RemParams>,
}

impl TryFrom<ThresholdRepr> for Threshold {
    type Error = XtremError;
    fn try_from(r: ThresholdRepr) -> Result<Self> {
        match (r.kind, r.basis) {
            (ThresholdKind::Fixed, _) => Threshold::fixed(r.value),
            (ThresholdKind::DynamicPercentile, Some(basis)) => {
                let t = Threshold::dynamic(basis, r.percentile_z)?;
                // serialized values are rounded, so compare loosely
                if (t.value - r.value).abs() > 1e-9 * t.value.max(1e-300) + 1e-15 {
                    return Err(XtremError::validation(
                        "threshold",
                        format!("dynamic value {} disagrees with its basis ({})", r.value, t.value),
                    ));
                }
                Ok(t)
            }
            (ThresholdKind::DynamicPercentile, None) => Err(XtremError::validation(
                "threshold",
                "dynamic threshold is missing its random-effects basis",
            )),
        }
    }
}

impl Threshold {
    pub fn fixed(value: f64) -> Result<Self> {
        if !(value > 0.0 && value < 1.0) {
            return Err(XtremError::validation("threshold", format!("must lie in (0, 1), got {value}")));
        }
        Ok(Self {
            kind: ThresholdKind::Fixed,
            value,
            percentile_z: DEFAULT_PERCENTILE_Z,
            basis: None,
        })
    }

    /// `u = invlogit(mu + z * tau)` for the given random-effects parameters.
    pub fn dynamic(basis: RemParams, z: f64) -> Result<Self> {
        if !z.is_finite() {
            return Err(XtremError::validation("percentile_z", "must be finite"));
        }
        let value = invlogit(basis.mu() + z * basis.tau());
        if !(value > 0.0 && value < 1.0) {
            return Err(XtremError::validation(
                "threshold",
                format!("dynamic threshold {value} fell outside (0, 1)"),
            ));
        }
        Ok(Self {
            kind: ThresholdKind::DynamicPercentile,
            value,
            percentile_z: z,
            basis: Some(basis),
        })
    }

    pub fn kind(&self) -> ThresholdKind {
        self.kind
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn percentile_z(&self) -> f64 {
        self.percentile_z
    }

    pub fn basis(&self) -> Option<RemParams> {
        self.basis
    }
}

/// Partition of study indices into bulk (`p <= u`) and tail (`p > u`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SegmentationRepr")]
pub struct Segmentation {
    bulk_indices: Vec<usize>,
    tail_indices: Vec<usize>,
    excesses: Vec<f64>,
    threshold: Threshold,
}

#[derive(Deserialize)]
struct SegmentationRepr {
    bulk_indices: Vec<usize>,
    tail_indices: Vec<usize>,
    excesses: Vec<f64>,
    threshold: Threshold,
}

impl TryFrom<SegmentationRepr> for Segmentation {
    type Error = XtremError;
    fn try_from(r: SegmentationRepr) -> Result<Self> {
        let n = r.bulk_indices.len() + r.tail_indices.len();
        let mut seen = vec![false; n];
        for &i in r.bulk_indices.iter().chain(&r.tail_indices) {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(XtremError::validation("segmentation", "index sets must partition 0..N"));
            }
        }
        if r.excesses.len() != r.tail_indices.len() {
            return Err(XtremError::validation("segmentation", "one excess per tail study is required"));
        }
        if r.excesses.iter().any(|&y| !(y > 0.0)) {
            return Err(XtremError::validation("segmentation", "excesses must be strictly positive"));
        }
        Ok(Self {
            bulk_indices: r.bulk_indices,
            tail_indices: r.tail_indices,
            excesses: r.excesses,
            threshold: r.threshold,
        })
    }
}

impl Segmentation {
    /// Splits `dataset` at `threshold`. Ties (`p == u`) go to the bulk.
    pub fn new(dataset: &Dataset, threshold: Threshold) -> Self {
        let u = threshold.value();
        let mut bulk_indices = Vec::new();
        let mut tail_indices = Vec::new();
        let mut excesses = Vec::new();
        for (i, p) in dataset.proportions().enumerate() {
            if p > u {
                tail_indices.push(i);
                excesses.push(p - u);
            } else {
                bulk_indices.push(i);
            }
        }
        Self {
            bulk_indices,
            tail_indices,
            excesses,
            threshold,
        }
    }

    pub fn bulk_indices(&self) -> &[usize] {
        &self.bulk_indices
    }

    pub fn tail_indices(&self) -> &[usize] {
        &self.tail_indices
    }

    pub fn excesses(&self) -> &[f64] {
        &self.excesses
    }

    pub fn threshold(&self) -> Threshold {
        self.threshold
    }

    pub fn tail_count(&self) -> usize {
        self.tail_indices.len()
    }

    pub fn len(&self) -> usize {
        self.bulk_indices.len() + self.tail_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_tail(&self, index: usize) -> bool {
        self.tail_indices.binary_search(&index).is_ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "REM")]
    Rem,
    #[serde(rename = "XTREM")]
    Xtrem,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Rem => "REM",
            ModelKind::Xtrem => "XT-REM",
        })
    }
}

/// Non-fatal conditions attached to a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "warning", rename_all = "snake_case")]
pub enum FitWarning {
    /// Fewer than two excesses; the tail block was skipped.
    DegradedToRem { tail_count: usize },
    /// Tail fitted on few excesses; estimates are fragile.
    LowTailSample { tail_count: usize },
    /// A tail quantile exceeded 1 and was clamped.
    QuantileClamped { level: f64 },
    /// The optimizer stopped without meeting its convergence test.
    NotConverged { block: String },
}

impl fmt::Display for FitWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitWarning::DegradedToRem { tail_count } => {
                write!(f, "degraded to REM: only {tail_count} exceedance(s), tail block skipped")
            }
            FitWarning::LowTailSample { tail_count } => {
                write!(f, "tail fitted on only {tail_count} exceedances; interpret cautiously")
            }
            FitWarning::QuantileClamped { level } => {
                write!(f, "tail quantile at level {level} exceeded 1 and was clamped")
            }
            FitWarning::NotConverged { block } => write!(f, "optimizer did not converge ({block} block)"),
        }
    }
}

/// A tail quantile on the proportion scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailQuantile {
    pub level: f64,
    pub value: f64,
    pub clamped: bool,
}

/// Akaike information criterion `2k - 2 loglik`.
pub fn aic(loglik: f64, k_params: usize) -> f64 {
    2.0 * k_params as f64 - 2.0 * loglik
}

/// Outcome of fitting REM or XT-REM to one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FitResultRepr")]
pub struct FitResult {
    dataset_label: String,
    model: ModelKind,
    rem: RemParams,
    gpd: Option<GpdParams>,
    loglik: f64,
    aic: f64,
    k_params: usize,
    aggregate_proportion: f64,
    tail_quantiles: Vec<TailQuantile>,
    segmentation: Option<Segmentation>,
    se_mu: f64,
    ci95_mu: (f64, f64),
    converged: bool,
    n_iterations: usize,
    warnings: Vec<FitWarning>,
}

#[derive(Deserialize)]
struct FitResultRepr {
    dataset_label: String,
    model: ModelKind,
    rem: RemParams,
    gpd: Option<GpdParams>,
    loglik: f64,
    aic: f64,
    k_params: usize,
    aggregate_proportion: f64,
    tail_quantiles: Vec<TailQuantile>,
    segmentation: Option<Segmentation>,
    se_mu: f64,
    ci95_mu: (f64, f64),
    converged: bool,
    n_iterations: usize,
    warnings: Vec<FitWarning>,
}

impl TryFrom<FitResultRepr> for FitResult {
    type Error = XtremError;
    fn try_from(r: FitResultRepr) -> Result<Self> {
        let mut fit = FitResult::assemble(FitParts {
            dataset_label: r.dataset_label,
            model: r.model,
            rem: r.rem,
            gpd: r.gpd,
            loglik: r.loglik,
            tail_quantiles: r.tail_quantiles,
            segmentation: r.segmentation,
            se_mu: r.se_mu,
            ci95_mu: r.ci95_mu,
            converged: r.converged,
            n_iterations: r.n_iterations,
            warnings: r.warnings,
        })?;
        if fit.k_params != r.k_params {
            return Err(XtremError::validation("k_params", "inconsistent with model and tail block"));
        }
        let tol = 1e-9 * fit.aic.abs().max(1.0);
        if (fit.aic - r.aic).abs() > tol {
            return Err(XtremError::validation(
                "aic",
                format!("{} does not equal 2k - 2 loglik = {}", r.aic, fit.aic),
            ));
        }
        if (fit.aggregate_proportion - r.aggregate_proportion).abs() > 1e-9 * fit.aggregate_proportion {
            return Err(XtremError::validation("aggregate_proportion", "must equal invlogit(mu)"));
        }
        // keep the stored values so a second round trip is exact
        fit.aic = r.aic;
        fit.aggregate_proportion = r.aggregate_proportion;
        Ok(fit)
    }
}

pub(crate) struct FitParts {
    pub dataset_label: String,
    pub model: ModelKind,
    pub rem: RemParams,
    pub gpd: Option<GpdParams>,
    pub loglik: f64,
    pub tail_quantiles: Vec<TailQuantile>,
    pub segmentation: Option<Segmentation>,
    pub se_mu: f64,
    pub ci95_mu: (f64, f64),
    pub converged: bool,
    pub n_iterations: usize,
    pub warnings: Vec<FitWarning>,
}

impl FitResult {
    /// Derives `k`, AIC and the aggregate proportion from the parts.
    pub(crate) fn assemble(p: FitParts) -> Result<Self> {
        if p.model == ModelKind::Rem && (p.gpd.is_some() || p.segmentation.is_some()) {
            return Err(XtremError::Inconsistent("a REM fit carries no tail block or segmentation".into()));
        }
        if !p.loglik.is_finite() {
            return Err(XtremError::Inconsistent(format!("non-finite log-likelihood {}", p.loglik)));
        }
        let k_params = if p.gpd.is_some() { 4 } else { 2 };
        Ok(Self {
            aic: aic(p.loglik, k_params),
            aggregate_proportion: invlogit(p.rem.mu()),
            k_params,
            dataset_label: p.dataset_label,
            model: p.model,
            rem: p.rem,
            gpd: p.gpd,
            loglik: p.loglik,
            tail_quantiles: p.tail_quantiles,
            segmentation: p.segmentation,
            se_mu: p.se_mu,
            ci95_mu: p.ci95_mu,
            converged: p.converged,
            n_iterations: p.n_iterations,
            warnings: p.warnings,
        })
    }

    pub fn dataset_label(&self) -> &str {
        &self.dataset_label
    }

    pub fn model(&self) -> ModelKind {
        self.model
    }

    pub fn rem(&self) -> RemParams {
        self.rem
    }

    pub fn gpd(&self) -> Option<GpdParams> {
        self.gpd
    }

    pub fn loglik(&self) -> f64 {
        self.loglik
    }

    pub fn aic(&self) -> f64 {
        self.aic
    }

    pub fn k_params(&self) -> usize {
        self.k_params
    }

    pub fn aggregate_proportion(&self) -> f64 {
        self.aggregate_proportion
    }

    pub fn tail_quantiles(&self) -> &[TailQuantile] {
        &self.tail_quantiles
    }

    pub fn tail_quantile(&self, level: f64) -> Option<TailQuantile> {
        self.tail_quantiles
            .iter()
            .copied()
            .find(|q| (q.level - level).abs() < 1e-12)
    }

    pub fn segmentation(&self) -> Option<&Segmentation> {
        self.segmentation.as_ref()
    }

    pub fn se_mu(&self) -> f64 {
        self.se_mu
    }

    /// 95% Wald interval for `mu` on the logit scale.
    pub fn ci95_mu(&self) -> (f64, f64) {
        self.ci95_mu
    }

    /// The 95% interval mapped to the proportion scale.
    pub fn ci95_proportion(&self) -> (f64, f64) {
        (invlogit(self.ci95_mu.0), invlogit(self.ci95_mu.1))
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn n_iterations(&self) -> usize {
        self.n_iterations
    }

    pub fn warnings(&self) -> &[FitWarning] {
        &self.warnings
    }

    pub fn is_degraded(&self) -> bool {
        self.warnings
            .iter()
            .any(|w| matches!(w, FitWarning::DegradedToRem { .. }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn make_study_examples() {
        assert_eq!(make_study(35, 1000).unwrap().proportion(), 0.035);
        assert_eq!(make_study(0, 50).unwrap().proportion(), 0.0);
        assert_eq!(make_study(917, 917).unwrap().proportion(), 1.0);
    }

    #[test]
    fn make_study_names_offending_field() {
        match make_study(60, 50) {
            Err(XtremError::Validation { field, .. }) => assert_eq!(field, "events"),
            other => panic!("unexpected {other:?}"),
        }
        match make_study(0, 0) {
            Err(XtremError::Validation { field, .. }) => assert_eq!(field, "size"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn deserialization_enforces_invariants() {
        let bad = r#"{"label":"x","events":5,"size":3}"#;
        assert!(serde_json::from_str::<StudyRecord>(bad).is_err());
        assert!(serde_json::from_str::<RemParams>(r#"{"mu":0.0,"tau2":-1.0}"#).is_err());
        assert!(serde_json::from_str::<GpdParams>(r#"{"xi":-1.0,"beta":1.0}"#).is_err());
        assert!(serde_json::from_str::<GpdParams>(r#"{"xi":0.1,"beta":0.0}"#).is_err());
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(Dataset::new("x", vec![]).is_err());
    }

    #[test]
    fn threshold_request_parsing() {
        assert_eq!("fixed:0.09".parse::<ThresholdRequest>().unwrap(), ThresholdRequest::fixed(0.09));
        assert_eq!("dynamic".parse::<ThresholdRequest>().unwrap(), ThresholdRequest::dynamic());
        assert_eq!(
            "dynamic:1.645".parse::<ThresholdRequest>().unwrap(),
            ThresholdRequest::Dynamic { z: 1.645 }
        );
        assert!("fixed".parse::<ThresholdRequest>().is_err());
        assert!("fixed:1.5".parse::<ThresholdRequest>().is_err());
        assert!("median".parse::<ThresholdRequest>().is_err());
    }

    #[test]
    fn dynamic_threshold_collapses_without_heterogeneity() {
        let basis = RemParams::new(-3.0, 0.0).unwrap();
        let t = Threshold::dynamic(basis, DEFAULT_PERCENTILE_Z).unwrap();
        assert_eq!(t.value(), invlogit(-3.0));
    }

    #[test]
    fn segmentation_tie_goes_to_bulk() {
        let ds = Dataset::new(
            "t",
            vec![
                StudyRecord::new(9, 100).unwrap(),
                StudyRecord::new(10, 100).unwrap(),
                StudyRecord::new(2, 100).unwrap(),
            ],
        )
        .unwrap();
        let seg = Segmentation::new(&ds, Threshold::fixed(0.09).unwrap());
        assert_eq!(seg.bulk_indices(), &[0, 2]);
        assert_eq!(seg.tail_indices(), &[1]);
        assert!((seg.excesses()[0] - 0.01).abs() < 1e-15);
        assert!(seg.is_tail(1) && !seg.is_tail(0));
    }

    #[test]
    fn segmentation_deserialization_checks_partition() {
        let t = Threshold::fixed(0.1).unwrap();
        let good = serde_json::json!({
            "bulk_indices": [0, 2], "tail_indices": [1], "excesses": [0.05], "threshold": t
        });
        assert!(serde_json::from_value::<Segmentation>(good).is_ok());
        let overlapping = serde_json::json!({
            "bulk_indices": [0, 1], "tail_indices": [1], "excesses": [0.05], "threshold": t
        });
        assert!(serde_json::from_value::<Segmentation>(overlapping).is_err());
        let negative = serde_json::json!({
            "bulk_indices": [0], "tail_indices": [1], "excesses": [-0.05], "threshold": t
        });
        assert!(serde_json::from_value::<Segmentation>(negative).is_err());
    }
}
