//! `xtrem` command-line tool: fit, simulate, segment.
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use xtrem_core::io::{self, ResultDocument};
use xtrem_core::simulate::{emit_plot_data, run_monte_carlo_with, SimScenario, BUILTIN_SCENARIOS};
use xtrem_core::xtrem::{compare, rem_only_fit, resolve_threshold, segment, xtrem_fit_at, FitOptions};
use xtrem_core::{ThresholdRequest, XtremError};

mod report;

const EXIT_VALIDATION: u8 = 2;
const EXIT_FIT: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "xtrem",
    version = concat!(env!("CARGO_PKG_VERSION"), " (result schema ", "1", ")"),
    about = "Random-effects meta-analysis of proportions with a generalized Pareto tail"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ModelChoice {
    Rem,
    Xtrem,
    Both,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit REM and/or XT-REM to a study file
    Fit {
        /// CSV with columns study,events,size
        #[arg(long)]
        data: PathBuf,
        /// fixed:<u>, dynamic or dynamic:<z>
        #[arg(long, default_value = "dynamic")]
        threshold: ThresholdRequest,
        #[arg(long, value_enum, default_value_t = ModelChoice::Both)]
        model: ModelChoice,
        /// Tail quantile levels, e.g. 0.95,0.99
        #[arg(long, value_delimiter = ',', default_value = "0.99")]
        quantiles: Vec<f64>,
        /// Continuity correction for zero or all-event studies
        #[arg(long, default_value_t = 0.5)]
        correction: f64,
        /// Maximize all four parameters as one vector
        #[arg(long)]
        joint: bool,
        /// Write the result document (JSON) here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Monte Carlo comparison of REM and XT-REM
    Simulate {
        /// Built-in scenario names (s1, s2, s3, additional), comma separated, or `custom`
        #[arg(long, value_delimiter = ',', default_value = "s1")]
        scenario: Vec<String>,
        /// JSON scenario file used with `--scenario custom`
        #[arg(long)]
        config: Option<PathBuf>,
        /// Replications per scenario
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Directory for metrics.json and the plot tables
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Show the bulk/tail assignment of every study
    Segment {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "dynamic")]
        threshold: ThresholdRequest,
        #[arg(long, default_value_t = 0.5)]
        correction: f64,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<XtremError>() {
        Some(
            XtremError::Validation { .. } | XtremError::Parse { .. } | XtremError::Io { .. } | XtremError::Serde(_),
        ) => EXIT_VALIDATION,
        _ => EXIT_FIT,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit {
            data,
            threshold,
            model,
            quantiles,
            correction,
            joint,
            out,
        } => {
            let options = FitOptions {
                quantiles,
                correction,
                joint,
                ..FitOptions::default()
            };
            cmd_fit(&data, threshold, model, &options, out.as_deref())
        }
        Command::Simulate {
            scenario,
            config,
            reps,
            seed,
            threads,
            out,
        } => cmd_simulate(&scenario, config.as_deref(), reps, seed, threads, out.as_deref()),
        Command::Segment {
            data,
            threshold,
            correction,
        } => cmd_segment(&data, threshold, correction),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn validate_options(options: &FitOptions) -> Result<(), XtremError> {
    if let Some(q) = options.quantiles.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
        return Err(XtremError::Validation {
            field: "quantiles",
            reason: format!("levels must lie in (0, 1), got {q}"),
        });
    }
    if !(options.correction > 0.0 && options.correction.is_finite()) {
        return Err(XtremError::Validation {
            field: "correction",
            reason: format!("must be positive, got {}", options.correction),
        });
    }
    Ok(())
}

fn cmd_fit(
    data: &Path,
    request: ThresholdRequest,
    model: ModelChoice,
    options: &FitOptions,
    out: Option<&Path>,
) -> Result<()> {
    validate_options(options)?;
    let dataset = io::read_dataset(data)?;
    let checksum = io::file_checksum(data)?;
    let threshold = resolve_threshold(request, &dataset, options.correction)?;

    report::dataset_header(&dataset, threshold);
    let xt = match model {
        ModelChoice::Rem => None,
        _ => Some(xtrem_fit_at(&dataset, threshold, options)?),
    };
    let rem = match model {
        ModelChoice::Xtrem => None,
        _ => Some(rem_only_fit(&dataset, options)?),
    };
    for fit in xt.iter().chain(rem.iter()) {
        report::fit_summary(fit);
    }

    let doc = match (xt, rem) {
        (Some(a), Some(b)) => {
            let cmp = compare(&a, &b)?;
            report::comparison(&cmp);
            ResultDocument::comparison(cmp, vec![a, b])
        }
        (Some(f), None) | (None, Some(f)) => ResultDocument::fit(f),
        (None, None) => unreachable!("at least one model is fitted"),
    };
    if let Some(path) = out {
        io::write_result(&doc.with_input_checksum(checksum).with_threshold(request), path)?;
        println!("\nwrote {}", path.display());
    }
    Ok(())
}

fn load_scenarios(names: &[String], config: Option<&Path>) -> Result<Vec<SimScenario>> {
    let mut scenarios = Vec::new();
    for name in names {
        if name.eq_ignore_ascii_case("custom") {
            let path = config.ok_or_else(|| XtremError::Validation {
                field: "config",
                reason: "--scenario custom needs --config <path>".into(),
            })?;
            let scenario = io::read_scenario(path).with_context(|| format!("reading scenario config {}", path.display()))?;
            scenarios.push(scenario);
        } else {
            scenarios.push(SimScenario::builtin(name).with_context(|| {
                format!("built-in scenarios are {}", BUILTIN_SCENARIOS.join(", "))
            })?);
        }
    }
    Ok(scenarios)
}

fn cmd_simulate(
    names: &[String],
    config: Option<&Path>,
    reps: Option<usize>,
    seed: Option<u64>,
    threads: usize,
    out: Option<&Path>,
) -> Result<()> {
    let mut scenarios = load_scenarios(names, config)?;
    for s in &mut scenarios {
        if let Some(m) = reps {
            s.replications = m;
        }
        if let Some(seed) = seed {
            s.seed = seed;
        }
        s.validate()?;
    }

    let mut runs = Vec::with_capacity(scenarios.len());
    for s in &scenarios {
        runs.push(run_monte_carlo_with(s, threads)?);
    }
    report::simulation_table(&runs);

    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| XtremError::io(dir, e))?;
        let mut doc = ResultDocument::simulation(runs.iter().map(|r| r.summary()).collect());
        if let Some(first) = runs.first() {
            doc = doc.with_rng(first.rng.clone());
        }
        io::write_result(&doc, dir.join("metrics.json"))?;
        let files = emit_plot_data(&runs, dir)?;
        println!("\nwrote {}", dir.join("metrics.json").display());
        for path in [&files.aic_by_scenario, &files.aggregate_estimates, &files.example_dataset] {
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn cmd_segment(data: &Path, request: ThresholdRequest, correction: f64) -> Result<()> {
    let dataset = io::read_dataset(data)?;
    let threshold = resolve_threshold(request, &dataset, correction)?;
    report::dataset_header(&dataset, threshold);
    report::segmentation_table(&dataset, &segment(&dataset, threshold));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use xtrem_core::io::SCHEMA_VERSION;

    #[test]
    fn version_mentions_schema() {
        assert_eq!(SCHEMA_VERSION, 1, "update the --version string");
    }

    #[test]
    fn error_classes() {
        let v: anyhow::Error = XtremError::Validation {
            field: "x",
            reason: String::new(),
        }
        .into();
        assert_eq!(exit_code(&v), EXIT_VALIDATION);
        let f: anyhow::Error = XtremError::InsufficientData(String::new()).into();
        assert_eq!(exit_code(&f), EXIT_FIT);
        let wrapped = anyhow::Error::from(XtremError::Parse {
            line: 2,
            reason: String::new(),
        })
        .context("reading");
        assert_eq!(exit_code(&wrapped), EXIT_VALIDATION);
    }
}
