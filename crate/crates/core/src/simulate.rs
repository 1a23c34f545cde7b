//! Monte Carlo comparison of REM and XT-REM on contaminated datasets.
//!
//! Each replication draws from its own ChaCha8 stream (`seed`, stream =
//! replication index), so results do not depend on thread count or on
//! which replications were run before.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Result, XtremError};
use crate::gpd::gpd_draw;
use crate::transforms::{invlogit, logit};
use crate::types::{Dataset, GpdParams, ModelKind, Segmentation, StudyRecord, Threshold, ThresholdRequest};
use crate::xtrem::{rem_only_fit, segment, xtrem_fit, FitOptions};

/// Name of the generator recorded in output metadata.
pub const RNG_ALGORITHM: &str = "ChaCha8Rng (rand_chacha 0.9), seed_from_u64(seed), stream = replication index";

/// Scenarios whose failure rate exceeds this are flagged unstable.
pub const UNSTABLE_FAILURE_RATE: f64 = 0.2;

const GPD_REDRAWS: usize = 100;
const INVERSION_MAX_N: u64 = 1000;

/// How extreme studies are assigned within a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtremeMode {
    /// Each study is extreme independently with probability `extreme_prob`.
    #[default]
    Bernoulli,
    /// Exactly `round(extreme_prob * K)` studies are extreme.
    FixedCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub name: String,
    pub k_studies: usize,
    pub n_range: (u64, u64),
    pub mu: f64,
    pub tau: f64,
    pub threshold_u: f64,
    pub extreme_prob: f64,
    #[serde(default)]
    pub extreme_mode: ExtremeMode,
    pub gpd: GpdParams,
    pub replications: usize,
    pub seed: u64,
}

/// Names accepted by [`SimScenario::builtin`].
pub const BUILTIN_SCENARIOS: [&str; 4] = ["s1", "s2", "s3", "additional"];

impl SimScenario {
    /// Built-in designs: `s1`/`s2`/`s3` (5/15/30% extremes) and `additional`.
    pub fn builtin(name: &str) -> Result<Self> {
        let main = |name: &str, extreme_prob: f64| -> Result<Self> {
            Ok(Self {
                name: name.to_string(),
                k_studies: 30,
                n_range: (100, 1000),
                mu: logit(0.035)?,
                tau: 0.4,
                threshold_u: 0.09,
                extreme_prob,
                extreme_mode: ExtremeMode::Bernoulli,
                gpd: GpdParams::new(0.6, 0.05)?,
                replications: 500,
                seed: 20_240_501,
            })
        };
        match name.to_ascii_lowercase().as_str() {
            "s1" => main("s1", 0.05),
            "s2" => main("s2", 0.15),
            "s3" => main("s3", 0.30),
            "additional" | "s_ad" => Ok(Self {
                name: "additional".to_string(),
                k_studies: 30,
                n_range: (100, 1000),
                mu: -2.5,
                tau: 0.6,
                threshold_u: 0.09,
                extreme_prob: 0.10,
                extreme_mode: ExtremeMode::Bernoulli,
                gpd: GpdParams::new(0.15, 0.03)?,
                replications: 500,
                seed: 20_240_502,
            }),
            other => Err(XtremError::validation(
                "scenario",
                format!("unknown scenario '{other}', expected one of {BUILTIN_SCENARIOS:?}"),
            )),
        }
    }

    pub fn with_replications(mut self, m: usize) -> Self {
        self.replications = m;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_studies == 0 {
            return Err(XtremError::validation("k_studies", "must be at least 1"));
        }
        let (lo, hi) = self.n_range;
        if lo == 0 || lo > hi {
            return Err(XtremError::validation("n_range", format!("need 1 <= low <= high, got ({lo}, {hi})")));
        }
        if !self.mu.is_finite() {
            return Err(XtremError::validation("mu", "must be finite"));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(XtremError::validation("tau", "must be finite and >= 0"));
        }
        if !(self.threshold_u > 0.0 && self.threshold_u < 1.0) {
            return Err(XtremError::validation("threshold_u", "must lie in (0, 1)"));
        }
        if !(0.0..1.0).contains(&self.extreme_prob) {
            return Err(XtremError::validation("extreme_prob", "must lie in [0, 1)"));
        }
        if self.replications == 0 {
            return Err(XtremError::validation("replications", "must be at least 1"));
        }
        Ok(())
    }

    /// The aggregate proportion estimators are scored against: `invlogit(mu)`.
    pub fn true_proportion(&self) -> f64 {
        invlogit(self.mu)
    }

    fn rng(&self, replication_index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(replication_index as u64);
        rng
    }
}

/// Exact binomial draw by CDF inversion for `n <= 1000`; larger `n` falls
/// back to `rand_distr`.
pub fn binomial_draw<R: Rng + ?Sized>(rng: &mut R, n: u64, p: f64) -> u64 {
    if p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    if n > INVERSION_MAX_N {
        return Binomial::new(n, p).expect("p checked in (0, 1)").sample(rng);
    }
    let (p_small, flip) = if p > 0.5 { (1.0 - p, true) } else { (p, false) };
    let q = 1.0 - p_small;
    let ratio = p_small / q;
    let mut pmf = (n as f64 * q.ln()).exp();
    let mut cdf = pmf;
    let u: f64 = rng.random();
    let mut k = 0;
    while u > cdf && k < n {
        pmf *= (n - k) as f64 / (k + 1) as f64 * ratio;
        k += 1;
        cdf += pmf;
    }
    if flip {
        n - k
    } else {
        k
    }
}

/// A generated dataset plus the generator's ground truth.
#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub dataset: Dataset,
    /// True study proportions before binomial sampling.
    pub true_proportions: Vec<f64>,
    /// Whether each study came from the tail generator.
    pub extreme: Vec<bool>,
}

/// Draws replication `replication_index` of `scenario`.
pub fn generate_with_truth(scenario: &SimScenario, replication_index: usize) -> Result<GeneratedDataset> {
    scenario.validate()?;
    let mut rng = scenario.rng(replication_index);
    let k = scenario.k_studies;

    let extreme = match scenario.extreme_mode {
        ExtremeMode::Bernoulli => vec![false; k],
        ExtremeMode::FixedCount => {
            let count = ((scenario.extreme_prob * k as f64).round() as usize).min(k);
            let mut flags = vec![false; k];
            for i in sample_indices(&mut rng, k, count) {
                flags[i] = true;
            }
            flags
        }
    };

    let mut studies = Vec::with_capacity(k);
    let mut true_proportions = Vec::with_capacity(k);
    let mut flags = Vec::with_capacity(k);
    for (i, &preset) in extreme.iter().enumerate() {
        let n = rng.random_range(scenario.n_range.0..=scenario.n_range.1);
        let is_extreme = match scenario.extreme_mode {
            ExtremeMode::Bernoulli => rng.random::<f64>() < scenario.extreme_prob,
            ExtremeMode::FixedCount => preset,
        };
        let p = if is_extreme {
            let mut p = None;
            for _ in 0..GPD_REDRAWS {
                let cand = scenario.threshold_u + gpd_draw(scenario.gpd, &mut rng);
                if cand < 1.0 {
                    p = Some(cand);
                    break;
                }
            }
            p.unwrap_or(1.0 - 1.0 / (2.0 * n as f64))
        } else {
            let z: f64 = rng.sample(StandardNormal);
            invlogit(scenario.mu + scenario.tau * z)
        };
        let r = binomial_draw(&mut rng, n, p);
        studies.push(StudyRecord::labelled(format!("study{}", i + 1), r, n)?);
        true_proportions.push(p);
        flags.push(is_extreme);
    }
    Ok(GeneratedDataset {
        dataset: Dataset::new(format!("{}#{replication_index}", scenario.name), studies)?,
        true_proportions,
        extreme: flags,
    })
}

/// Draws replication `replication_index` of `scenario`; deterministic.
pub fn generate_dataset(scenario: &SimScenario, replication_index: usize) -> Result<Dataset> {
    generate_with_truth(scenario, replication_index).map(|g| g.dataset)
}

/// Per-model outcome of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFit {
    pub aggregate: f64,
    pub loglik: f64,
    pub aic: f64,
    pub k_params: usize,
    /// Whether the 95% interval (proportion scale) contains the truth.
    pub covered: bool,
    pub tail_q99: Option<f64>,
    pub degraded: bool,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub index: usize,
    pub n_tail: usize,
    pub rem: Option<ReplicationFit>,
    pub xtrem: Option<ReplicationFit>,
    /// Error messages of fits that failed.
    pub errors: Vec<String>,
}

fn nan_if_null<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

/// Monte Carlo performance summary for one model. Statistics are `NaN`
/// (serialized as null) when no replication succeeded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub model: ModelKind,
    pub replications_used: usize,
    pub failures: usize,
    pub unstable: bool,
    pub nonconverged: usize,
    #[serde(deserialize_with = "nan_if_null")]
    pub bias: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub rmse: f64,
    /// Population variance of the aggregate estimates.
    #[serde(deserialize_with = "nan_if_null")]
    pub variance: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub mean_aic: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub mean_loglik: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub coverage95: f64,
    pub mean_tail_q99: Option<f64>,
    /// Replications that contributed a tail quantile.
    pub tail_fits: usize,
}

impl SimMetrics {
    fn from_fits<'a>(
        model: ModelKind,
        total: usize,
        truth: f64,
        fits: impl Iterator<Item = &'a ReplicationFit>,
    ) -> Self {
        let fits: Vec<&ReplicationFit> = fits.collect();
        let used = fits.len();
        let failures = total - used;
        let m = used as f64;
        let mean = |f: &dyn Fn(&ReplicationFit) -> f64| {
            if used == 0 {
                f64::NAN
            } else {
                fits.iter().map(|r| f(r)).sum::<f64>() / m
            }
        };
        let bias = mean(&|r| r.aggregate - truth);
        let rmse = mean(&|r| (r.aggregate - truth).powi(2)).sqrt();
        let variance = mean(&|r| (r.aggregate - truth - bias).powi(2));
        let q99: Vec<f64> = fits.iter().filter_map(|r| r.tail_q99).collect();
        Self {
            model,
            replications_used: used,
            failures,
            unstable: failures as f64 > UNSTABLE_FAILURE_RATE * total as f64,
            nonconverged: fits.iter().filter(|r| !r.converged).count(),
            bias,
            rmse,
            variance,
            mean_aic: mean(&|r| r.aic),
            mean_loglik: mean(&|r| r.loglik),
            coverage95: mean(&|r| if r.covered { 1.0 } else { 0.0 }),
            mean_tail_q99: (!q99.is_empty()).then(|| q99.iter().sum::<f64>() / q99.len() as f64),
            tail_fits: q99.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngInfo {
    pub algorithm: String,
    pub seed: u64,
}

/// One study of the illustrative dataset kept for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleStudy {
    pub index: usize,
    pub events: u64,
    pub size: u64,
    pub proportion: f64,
    pub tail: bool,
}

/// Replication 0 of a scenario with its XT-REM fit, for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleDataset {
    pub replication_index: usize,
    pub threshold: f64,
    pub studies: Vec<ExampleStudy>,
    pub rem_estimate: Option<f64>,
    pub evt_q99: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloRun {
    pub scenario: SimScenario,
    pub rng: RngInfo,
    pub rem: SimMetrics,
    pub xtrem: SimMetrics,
    pub replications: Vec<ReplicationRecord>,
    pub example: Option<ExampleDataset>,
}

/// Scenario-level summary without the per-replication table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario: SimScenario,
    pub rng: RngInfo,
    pub rem: SimMetrics,
    pub xtrem: SimMetrics,
}

impl MonteCarloRun {
    pub fn summary(&self) -> ScenarioSummary {
        ScenarioSummary {
            scenario: self.scenario.clone(),
            rng: self.rng.clone(),
            rem: self.rem.clone(),
            xtrem: self.xtrem.clone(),
        }
    }

    pub fn is_unstable(&self) -> bool {
        self.rem.unstable || self.xtrem.unstable
    }
}

fn replication_fit(fit: &crate::types::FitResult, truth: f64) -> ReplicationFit {
    let (lo, hi) = fit.ci95_proportion();
    ReplicationFit {
        aggregate: fit.aggregate_proportion(),
        loglik: fit.loglik(),
        aic: fit.aic(),
        k_params: fit.k_params(),
        covered: lo <= truth && truth <= hi,
        tail_q99: fit.tail_quantile(0.99).map(|q| q.value),
        degraded: fit.is_degraded(),
        converged: fit.converged(),
    }
}

fn run_replication(scenario: &SimScenario, index: usize, options: &FitOptions) -> Result<ReplicationRecord> {
    let data = generate_dataset(scenario, index)?;
    let truth = scenario.true_proportion();
    let threshold = Threshold::fixed(scenario.threshold_u)?;
    let mut errors = Vec::new();
    let rem = match rem_only_fit(&data, options) {
        Ok(f) => Some(replication_fit(&f, truth)),
        Err(e) => {
            errors.push(format!("REM: {e}"));
            None
        }
    };
    let xtrem = match xtrem_fit(&data, ThresholdRequest::fixed(threshold.value()), options) {
        Ok(f) => Some(replication_fit(&f, truth)),
        Err(e) => {
            errors.push(format!("XT-REM: {e}"));
            None
        }
    };
    Ok(ReplicationRecord {
        index,
        n_tail: segment(&data, threshold).tail_count(),
        rem,
        xtrem,
        errors,
    })
}

fn example_dataset(scenario: &SimScenario, options: &FitOptions) -> Result<ExampleDataset> {
    let data = generate_dataset(scenario, 0)?;
    let threshold = Threshold::fixed(scenario.threshold_u)?;
    let seg: Segmentation = segment(&data, threshold);
    let fit = xtrem_fit(&data, ThresholdRequest::fixed(scenario.threshold_u), options).ok();
    Ok(ExampleDataset {
        replication_index: 0,
        threshold: scenario.threshold_u,
        studies: data
            .studies()
            .iter()
            .enumerate()
            .map(|(i, s)| ExampleStudy {
                index: i,
                events: s.events(),
                size: s.size(),
                proportion: s.proportion(),
                tail: seg.is_tail(i),
            })
            .collect(),
        rem_estimate: fit.as_ref().map(|f| f.aggregate_proportion()),
        evt_q99: fit.and_then(|f| f.tail_quantile(0.99)).map(|q| q.value),
    })
}

/// Runs every replication of `scenario` on the calling thread.
pub fn run_monte_carlo(scenario: &SimScenario) -> Result<MonteCarloRun> {
    run_monte_carlo_with(scenario, 1)
}

/// Runs the scenario on `threads` worker threads. Output is identical for
/// any thread count.
pub fn run_monte_carlo_with(scenario: &SimScenario, threads: usize) -> Result<MonteCarloRun> {
    scenario.validate()?;
    let options = FitOptions::default();
    let m = scenario.replications;
    let records: Vec<ReplicationRecord> = if threads <= 1 {
        (0..m)
            .map(|i| run_replication(scenario, i, &options))
            .collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| XtremError::Inconsistent(format!("thread pool: {e}")))?;
        pool.install(|| {
            (0..m)
                .into_par_iter()
                .map(|i| run_replication(scenario, i, &options))
                .collect::<Result<_>>()
        })?
    };

    let truth = scenario.true_proportion();
    let rem = SimMetrics::from_fits(ModelKind::Rem, m, truth, records.iter().filter_map(|r| r.rem.as_ref()));
    let xtrem = SimMetrics::from_fits(ModelKind::Xtrem, m, truth, records.iter().filter_map(|r| r.xtrem.as_ref()));
    Ok(MonteCarloRun {
        scenario: scenario.clone(),
        rng: RngInfo {
            algorithm: RNG_ALGORITHM.to_string(),
            seed: scenario.seed,
        },
        rem,
        xtrem,
        replications: records,
        example: Some(example_dataset(scenario, &options)?),
    })
}

/// Paths written by [`emit_plot_data`].
#[derive(Debug, Clone)]
pub struct PlotFiles {
    pub aic_by_scenario: PathBuf,
    pub aggregate_estimates: PathBuf,
    pub example_dataset: PathBuf,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| XtremError::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> XtremError + '_ {
    move |e| XtremError::io(path, std::io::Error::other(e))
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Writes comma-separated plot tables into `dir`:
/// per-scenario model means, per-replication aggregate estimates, and the
/// example dataset of each scenario with its regime assignment.
pub fn emit_plot_data(runs: &[MonteCarloRun], dir: &Path) -> Result<PlotFiles> {
    fs::create_dir_all(dir).map_err(|e| XtremError::io(dir, e))?;
    let files = PlotFiles {
        aic_by_scenario: dir.join("aic_by_scenario.csv"),
        aggregate_estimates: dir.join("aggregate_estimates.csv"),
        example_dataset: dir.join("example_dataset.csv"),
    };

    let path = &files.aic_by_scenario;
    let mut w = csv_writer(path)?;
    w.write_record([
        "scenario",
        "model",
        "mean_aic",
        "mean_loglik",
        "bias",
        "rmse",
        "coverage95",
        "mean_tail_q99",
        "replications_used",
    ])
    .map_err(csv_err(path))?;
    for run in runs {
        for m in [&run.rem, &run.xtrem] {
            w.write_record([
                run.scenario.name.clone(),
                m.model.to_string(),
                num(m.mean_aic),
                num(m.mean_loglik),
                num(m.bias),
                num(m.rmse),
                num(m.coverage95),
                opt(m.mean_tail_q99),
                m.replications_used.to_string(),
            ])
            .map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(|e| XtremError::io(path, e))?;

    let path = &files.aggregate_estimates;
    let mut w = csv_writer(path)?;
    w.write_record(["scenario", "replication", "model", "aggregate_proportion", "true_proportion"])
        .map_err(csv_err(path))?;
    for run in runs {
        let truth = num(run.scenario.true_proportion());
        for rec in &run.replications {
            for (model, fit) in [(ModelKind::Rem, &rec.rem), (ModelKind::Xtrem, &rec.xtrem)] {
                if let Some(f) = fit {
                    w.write_record([
                        run.scenario.name.clone(),
                        rec.index.to_string(),
                        model.to_string(),
                        num(f.aggregate),
                        truth.clone(),
                    ])
                    .map_err(csv_err(path))?;
                }
            }
        }
    }
    w.flush().map_err(|e| XtremError::io(path, e))?;

    let path = &files.example_dataset;
    let mut w = csv_writer(path)?;
    w.write_record([
        "scenario",
        "index",
        "events",
        "size",
        "proportion",
        "regime",
        "threshold",
        "rem_estimate",
        "evt_q99",
    ])
    .map_err(csv_err(path))?;
    for run in runs {
        let Some(ex) = &run.example else { continue };
        for s in &ex.studies {
            w.write_record([
                run.scenario.name.clone(),
                s.index.to_string(),
                s.events.to_string(),
                s.size.to_string(),
                num(s.proportion),
                if s.tail { "tail" } else { "bulk" }.to_string(),
                num(ex.threshold),
                opt(ex.rem_estimate),
                opt(ex.evt_q99),
            ])
            .map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(|e| XtremError::io(path, e))?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_registry() {
        let s1 = SimScenario::builtin("s1").unwrap();
        assert_eq!(s1.k_studies, 30);
        assert_eq!(s1.n_range, (100, 1000));
        assert!((s1.true_proportion() - 0.035).abs() < 1e-15);
        assert_eq!(s1.gpd, GpdParams::new(0.6, 0.05).unwrap());
        assert_eq!(SimScenario::builtin("s2").unwrap().extreme_prob, 0.15);
        assert_eq!(SimScenario::builtin("S3").unwrap().extreme_prob, 0.30);
        let ad = SimScenario::builtin("additional").unwrap();
        assert_eq!((ad.mu, ad.tau, ad.extreme_prob), (-2.5, 0.6, 0.1));
        assert_eq!(ad.gpd, GpdParams::new(0.15, 0.03).unwrap());
        assert!(SimScenario::builtin("s9").is_err());
    }

    #[test]
    fn validation() {
        let mut s = SimScenario::builtin("s1").unwrap();
        s.extreme_prob = 1.0;
        assert!(s.validate().is_err());
        let mut s = SimScenario::builtin("s1").unwrap();
        s.n_range = (500, 100);
        assert!(s.validate().is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let s = SimScenario::builtin("s2").unwrap();
        let a = generate_dataset(&s, 17).unwrap();
        let b = generate_dataset(&s, 17).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.studies(), generate_dataset(&s, 18).unwrap().studies());
        assert_eq!(a.len(), 30);
        assert!(a.studies().iter().all(|st| (100..=1000).contains(&st.size())));
    }

    #[test]
    fn fixed_count_mode() {
        let mut s = SimScenario::builtin("s3").unwrap();
        s.extreme_mode = ExtremeMode::FixedCount;
        for i in 0..20 {
            let g = generate_with_truth(&s, i).unwrap();
            assert_eq!(g.extreme.iter().filter(|&&e| e).count(), 9);
            for (p, &e) in g.true_proportions.iter().zip(&g.extreme) {
                if e {
                    assert!(*p > 0.09 && *p < 1.0);
                }
            }
        }
    }

    #[test]
    fn s1_extreme_rate() {
        let s = SimScenario::builtin("s1").unwrap();
        let total: usize = (0..2000)
            .map(|i| generate_with_truth(&s, i).unwrap().extreme.iter().filter(|&&e| e).count())
            .sum();
        let per_dataset = total as f64 / 2000.0;
        // expected 1.5; binomial sd of the mean is about 0.027
        assert!((per_dataset - 1.5).abs() < 0.1, "{per_dataset}");
    }

    #[test]
    fn clean_generator_matches_logit_normal() {
        let mut s = SimScenario::builtin("s1").unwrap();
        s.extreme_prob = 0.0;
        s.k_studies = 100_000;
        let g = generate_with_truth(&s, 0).unwrap();
        assert!(g.extreme.iter().all(|&e| !e));
        let mean_theta = g.true_proportions.iter().map(|&p| logit(p).unwrap()).sum::<f64>() / 1e5;
        assert!((mean_theta - s.mu).abs() < 0.01);
        // E[invlogit(theta)] by quadrature over the normal density
        let mut oracle = 0.0;
        let steps = 20_000;
        for i in 0..steps {
            let z = -8.0 + 16.0 * (i as f64 + 0.5) / steps as f64;
            let w = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt() * 16.0 / steps as f64;
            oracle += w * invlogit(s.mu + s.tau * z);
        }
        let mean_p = g.true_proportions.iter().sum::<f64>() / 1e5;
        assert!((mean_p - oracle).abs() < 5e-4, "{mean_p} vs {oracle}");
    }

    #[test]
    fn binomial_inversion_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(n, p) in &[(100u64, 0.035), (1000, 0.5), (500, 0.97), (1, 0.3)] {
            let draws: Vec<u64> = (0..200_000).map(|_| binomial_draw(&mut rng, n, p)).collect();
            assert!(draws.iter().all(|&r| r <= n));
            let mean = draws.iter().sum::<u64>() as f64 / draws.len() as f64;
            let var = draws.iter().map(|&r| (r as f64 - mean).powi(2)).sum::<f64>() / draws.len() as f64;
            let sd_mean = (n as f64 * p * (1.0 - p) / draws.len() as f64).sqrt();
            assert!((mean - n as f64 * p).abs() < 5.0 * sd_mean, "n={n} p={p} mean={mean}");
            assert!((var / (n as f64 * p * (1.0 - p)) - 1.0).abs() < 0.03, "n={n} p={p} var={var}");
        }
        assert_eq!(binomial_draw(&mut rng, 10, 0.0), 0);
        assert_eq!(binomial_draw(&mut rng, 10, 1.0), 10);
        assert!(binomial_draw(&mut rng, 5000, 0.2) <= 5000);
    }

    #[test]
    fn metrics_identities() {
        let s = SimScenario::builtin("s2").unwrap().with_replications(40);
        let run = run_monte_carlo(&s).unwrap();
        for m in [&run.rem, &run.xtrem] {
            assert!(m.rmse >= m.bias.abs());
            assert!((m.rmse.powi(2) - (m.bias.powi(2) + m.variance)).abs() < 1e-10);
            assert!((0.0..=1.0).contains(&m.coverage95));
            assert_eq!(m.replications_used + m.failures, 40);
        }
        assert!(run.rem.mean_tail_q99.is_none());
    }

    #[test]
    fn single_replication() {
        let s = SimScenario::builtin("s1").unwrap().with_replications(1);
        let run = run_monte_carlo(&s).unwrap();
        assert_eq!(run.replications.len(), 1);
        assert!(run.rem.variance == 0.0 || run.rem.replications_used == 0);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let s = SimScenario::builtin("s3").unwrap().with_replications(24);
        let a = run_monte_carlo(&s).unwrap();
        let b = run_monte_carlo_with(&s, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn plot_data_empty_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_plot_data(&[], dir.path()).unwrap();
        for path in [&files.aic_by_scenario, &files.aggregate_estimates, &files.example_dataset] {
            let text = fs::read_to_string(path).unwrap();
            assert_eq!(text.lines().count(), 1, "{text}");
            assert!(text.ends_with('\n') && !text.contains('\r'));
        }
    }

    #[test]
    fn plot_data_shapes_and_regimes() {
        let runs: Vec<MonteCarloRun> = ["s1", "s2", "s3"]
            .iter()
            .map(|n| run_monte_carlo(&SimScenario::builtin(n).unwrap().with_replications(5)).unwrap())
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_plot_data(&runs, dir.path()).unwrap();

        let mut rd = csv::Reader::from_path(&files.aic_by_scenario).unwrap();
        let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.iter().filter(|r| &r[1] == "REM").count(), 3);
        assert_eq!(rows.iter().filter(|r| &r[1] == "XT-REM").count(), 3);

        let data = generate_dataset(&runs[0].scenario, 0).unwrap();
        let seg = segment(&data, Threshold::fixed(0.09).unwrap());
        let mut rd = csv::Reader::from_path(&files.example_dataset).unwrap();
        let s1: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).filter(|r| &r[0] == "s1").collect();
        assert_eq!(s1.len(), data.len());
        for r in &s1 {
            let i: usize = r[1].parse().unwrap();
            assert_eq!(&r[5] == "tail", seg.is_tail(i));
        }
    }

    #[test]
    fn summary_round_trips_through_result_file() {
        use crate::io::{from_json_str, to_json_string, ResultDocument, ResultPayload};
        let run = run_monte_carlo(&SimScenario::builtin("s1").unwrap().with_replications(3)).unwrap();
        let doc = ResultDocument::simulation(vec![run.summary()]).with_rng(run.rng.clone());
        let text = to_json_string(&doc).unwrap();
        let back = from_json_str(&text).unwrap();
        let ResultPayload::Simulation { scenarios } = &back.payload else {
            panic!("wrong payload")
        };
        assert_eq!(scenarios[0].scenario.name, "s1");
        assert_eq!(scenarios[0].scenario.seed, run.scenario.seed);
        assert!((scenarios[0].scenario.mu - run.scenario.mu).abs() < 1e-10);
        assert!((scenarios[0].rem.bias - run.rem.bias).abs() <= 1e-11 * run.rem.bias.abs());
        assert_eq!(to_json_string(&back).unwrap(), text);
    }
}
