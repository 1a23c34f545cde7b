//! Human-readable summaries. Proportions print as percentages with two
//! decimals, logit-scale values with four.

use xtrem_core::simulate::MonteCarloRun;
use xtrem_core::xtrem::ComparisonReport;
use xtrem_core::{Dataset, FitResult, Segmentation, Threshold, ThresholdKind};

fn pct(p: f64) -> String {
    format!("{:.2}%", 100.0 * p)
}

pub fn dataset_header(dataset: &Dataset, threshold: Threshold) {
    println!("dataset    {} ({} studies)", dataset.label(), dataset.len());
    match (threshold.kind(), threshold.basis()) {
        (ThresholdKind::DynamicPercentile, Some(basis)) => println!(
            "threshold  u = {} (dynamic: invlogit(mu + z*tau) with mu = {:.4}, tau = {:.4}, z = {:.4})",
            pct(threshold.value()),
            basis.mu(),
            basis.tau(),
            threshold.percentile_z()
        ),
        _ => println!("threshold  u = {} (fixed)", pct(threshold.value())),
    }
}

pub fn fit_summary(fit: &FitResult) {
    println!();
    println!("{}", fit.model());
    if let Some(seg) = fit.segmentation() {
        println!("  bulk / tail       {} / {} studies", seg.bulk_indices().len(), seg.tail_count());
    }
    let rem = fit.rem();
    let (lo, hi) = fit.ci95_mu();
    println!("  mu (logit)        {:.4}   95% CI [{lo:.4}, {hi:.4}]", rem.mu());
    println!("  tau2 (logit)      {:.4}", rem.tau2());
    if let Some(g) = fit.gpd() {
        println!("  xi                {:.4}", g.xi());
        println!("  beta              {:.4}", g.beta());
    }
    let (plo, phi) = fit.ci95_proportion();
    println!(
        "  aggregate         {}   95% CI [{}, {}]",
        pct(fit.aggregate_proportion()),
        pct(plo),
        pct(phi)
    );
    for q in fit.tail_quantiles() {
        let note = if q.clamped { " (clamped)" } else { "" };
        println!("  tail q{:<14} {}{note}", q.level, pct(q.value));
    }
    println!("  log-likelihood    {:.4}", fit.loglik());
    println!("  AIC               {:.2} (k = {})", fit.aic(), fit.k_params());
    println!(
        "  converged         {} ({} iterations)",
        if fit.converged() { "yes" } else { "no" },
        fit.n_iterations()
    );
    for w in fit.warnings() {
        println!("  warning: {w}");
    }
}

pub fn comparison(report: &ComparisonReport) {
    println!();
    println!("comparison");
    println!(
        "  delta AIC ({} - {})  {:.2}",
        report.first.model, report.second.model, report.delta_aic
    );
    println!(
        "  aggregate           {} vs {}",
        pct(report.first.aggregate_proportion),
        pct(report.second.aggregate_proportion)
    );
    match report.preferred {
        Some(m) => println!("  preferred           {m}"),
        None => println!("  preferred           tie"),
    }
}

pub fn segmentation_table(dataset: &Dataset, seg: &Segmentation) {
    println!();
    println!("{:<12} {:>7} {:>7} {:>11}  {:<6} {:>8}", "study", "events", "size", "proportion", "regime", "excess");
    let mut excess = seg.tail_indices().iter().zip(seg.excesses()).peekable();
    for (i, s) in dataset.studies().iter().enumerate() {
        let label = if s.label().is_empty() { format!("#{}", i + 1) } else { s.label().to_string() };
        let (regime, y) = match excess.peek() {
            Some(&(&j, &y)) if j == i => {
                excess.next();
                ("tail", pct(y))
            }
            _ => ("bulk", String::new()),
        };
        println!(
            "{label:<12} {:>7} {:>7} {:>11}  {regime:<6} {y:>8}",
            s.events(),
            s.size(),
            pct(s.proportion())
        );
    }
    println!();
    println!("{} bulk, {} tail", seg.bulk_indices().len(), seg.tail_count());
}

pub fn simulation_table(runs: &[MonteCarloRun]) {
    println!(
        "{:<12} {:<7} {:>8} {:>8} {:>9} {:>9} {:>9}  used",
        "scenario", "model", "bias", "RMSE", "mean AIC", "coverage", "tail q99"
    );
    for run in runs {
        let truth = run.scenario.true_proportion();
        for m in [&run.rem, &run.xtrem] {
            let q99 = m.mean_tail_q99.map(pct).unwrap_or_else(|| "-".into());
            println!(
                "{:<12} {:<7} {:>8.4} {:>8.4} {:>9.2} {:>9} {:>9}  {}/{}",
                run.scenario.name,
                m.model.to_string(),
                m.bias,
                m.rmse,
                m.mean_aic,
                pct(m.coverage95),
                q99,
                m.replications_used,
                run.scenario.replications
            );
        }
        if run.is_unstable() {
            println!("  warning: more than 20% of fits failed in {}; metrics are unreliable", run.scenario.name);
        }
        println!(
            "  (true aggregate {}, mu = {:.4}, seed {})",
            pct(truth),
            run.scenario.mu,
            run.scenario.seed
        );
    }
}
