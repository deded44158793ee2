//! Command-line front end: fit forests, estimate Shapley effects on CSV or
//! generated data, and run the comparison studies, writing JSON/CSV reports
//! and a bar-chart plot into the output directory.

mod config;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use shapley_forest::data::generate;
use shapley_forest::forest::{explained_variance, fit, save_forest};
use shapley_forest::rng::derive_seed;
use shapley_forest::runner::{
    emit_plot, run_ablation, run_ksweep, run_shaff, write_json, write_per_rep_csv, DataSource,
    RunReport, SCHEMA_VERSION,
};
use shapley_forest::solver::write_effects_csv;

use config::Resolved;

#[derive(Parser)]
#[command(
    name = "shapley-forest",
    version,
    about = "Shapley effect estimation with random forests"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one forest and report its out-of-bag accuracy.
    Fit(CommonArgs),
    /// Estimate Shapley effects end to end on CSV or generated data.
    Shapley(CommonArgs),
    /// Run a built-in generator with its analytic effects overlaid.
    Experiment(CommonArgs),
    /// Compare every sampler and value-estimator combination.
    Ablation(CommonArgs),
    /// Rerun the pipeline across an ascending list of subset budgets.
    Ksweep(CommonArgs),
}

/// Flags shared by every command; unset values fall back to the config file,
/// then to the documented defaults.
#[derive(Args, Default)]
struct CommonArgs {
    /// TOML file carrying the same keys as the flags; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV with a header row.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output column name inside --data.
    #[arg(long)]
    target: Option<String>,
    /// Categorical column names inside --data (labels are read from the file).
    #[arg(long, value_delimiter = ',')]
    categorical: Option<Vec<String>>,
    /// Built-in generator (exp1a, exp1b, exp2, exp3) or a TOML spec path.
    #[arg(long)]
    experiment: Option<String>,
    /// Rows to generate per repetition [default: 2000].
    #[arg(long)]
    n: Option<usize>,
    /// Noise share of the generated output variance [default: 0.05].
    #[arg(long)]
    noise_fraction: Option<f64>,
    /// Trees per forest [default: 500].
    #[arg(long)]
    trees: Option<usize>,
    /// Split candidates per node [default: p/3, rounded up].
    #[arg(long)]
    mtry: Option<usize>,
    /// Minimum in-bag observations per node [default: 5].
    #[arg(long)]
    min_node_size: Option<usize>,
    /// bootstrap or subsample:<rows> [default: bootstrap].
    #[arg(long)]
    resampling: Option<String>,
    /// Cap on leaves per tree.
    #[arg(long)]
    max_leaves: Option<usize>,
    /// Cap on node depth, root = 0.
    #[arg(long)]
    max_depth: Option<usize>,
    /// Balanced-split fraction in [0, 0.5) [default: 0].
    #[arg(long)]
    gamma: Option<f64>,
    /// Chance of a single-variable candidate draw per node [default: 0].
    #[arg(long)]
    delta: Option<f64>,
    /// Paired subset draws per repetition [default: 500].
    #[arg(long = "subsets")]
    subsets: Option<usize>,
    /// Subset sampler: pis (forest-path importance) or pmc [default: pis].
    #[arg(long)]
    sampler: Option<String>,
    /// Value estimator: prf, marginal[:draws], or retrain [default: prf].
    #[arg(long)]
    estimator: Option<String>,
    /// Independent repetitions [default: 1].
    #[arg(long)]
    reps: Option<usize>,
    /// Master seed; every other random stream derives from it [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replacement draws per row for the marginal ablation cell [default: 30].
    #[arg(long)]
    marginal_draws: Option<usize>,
    /// Ascending subset budgets for ksweep [default: 10,100,500].
    #[arg(long, value_delimiter = ',')]
    budgets: Option<Vec<usize>>,
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Shapley(args) => cmd_run(args, false),
        Command::Experiment(args) => cmd_run(args, true),
        Command::Ablation(args) => cmd_ablation(args),
        Command::Ksweep(args) => cmd_ksweep(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
}

#[derive(serde::Serialize)]
struct FitSummary {
    schema_version: u32,
    n: usize,
    p: usize,
    variable_names: Vec<String>,
    params: shapley_forest::forest::ForestParams,
    oob_explained_variance: f64,
    oob_covered: usize,
    fit_seconds: f64,
}

/// Fits the forest that repetition 0 of the pipeline would use.
fn cmd_fit(args: &CommonArgs) -> Result<()> {
    let Resolved { settings, out, .. } = args.resolve()?;
    prepare_out(&out)?;

    let dataset = match &settings.data {
        DataSource::Synthetic(spec) => {
            let mut rep_spec = spec.clone();
            rep_spec.seed = derive_seed(settings.seed, &[1, 0]);
            generate(&rep_spec)?
        }
        DataSource::Provided { dataset, .. } => dataset.clone(),
    };
    let mut params = settings.forest.clone();
    params.seed = derive_seed(settings.seed, &[2, 0]);

    let start = std::time::Instant::now();
    let forest = fit(&dataset, &params)?;
    let fit_seconds = start.elapsed().as_secs_f64();
    let preds = forest.oob_predict(&dataset)?;
    let (ev, covered, _skipped) = explained_variance(dataset.output(), &preds)?;

    let forest_path = out.join("forest.json");
    save_forest(&forest, &forest_path)?;
    let summary = FitSummary {
        schema_version: SCHEMA_VERSION,
        n: dataset.n(),
        p: dataset.p(),
        variable_names: dataset.names().to_vec(),
        params,
        oob_explained_variance: ev,
        oob_covered: covered,
        fit_seconds,
    };
    let summary_path = write_json(&summary, out.join("fit.json"))?;

    println!(
        "fitted {} trees on {} rows ({} variables) in {:.2}s",
        settings.forest.num_trees,
        dataset.n(),
        dataset.p(),
        fit_seconds
    );
    println!("out-of-bag explained variance: {ev:.4} ({covered} rows covered)");
    println!("wrote {}", forest_path.display());
    println!("wrote {}", summary_path.display());
    Ok(())
}

fn print_effects_table(report: &RunReport) {
    let truth = report.ground_truth.as_deref();
    let name_width = report
        .variable_names
        .iter()
        .map(|n| n.len())
        .max()
        .unwrap_or(8)
        .max(8);
    match truth {
        Some(_) => println!(
            "{:<name_width$}  {:>12}  {:>10}  {:>10}",
            "variable", "mean effect", "sd", "analytic"
        ),
        None => println!(
            "{:<name_width$}  {:>12}  {:>10}",
            "variable", "mean effect", "sd"
        ),
    }
    for j in 0..report.mean_effects.len() {
        match truth {
            Some(t) => println!(
                "{:<name_width$}  {:>12.4}  {:>10.4}  {:>10.4}",
                report.variable_names[j], report.mean_effects[j], report.std_effects[j], t[j]
            ),
            None => println!(
                "{:<name_width$}  {:>12.4}  {:>10.4}",
                report.variable_names[j], report.mean_effects[j], report.std_effects[j]
            ),
        }
    }
    let sum: f64 = report.mean_effects.iter().sum();
    println!("sum of mean effects: {sum:.4}");
    if let Some(err) = report.mean_error {
        println!("mean cumulative error vs analytic effects: {err:.4}");
    }
    let fallbacks = report.reps.iter().filter(|r| r.strict_fallback).count();
    if fallbacks > 0 {
        println!(
            "note: {fallbacks} of {} repetitions had too few distinct subsets for the closed-form \
             solve and used the box-constrained solver",
            report.reps.len()
        );
    }
    let t = &report.timings;
    println!(
        "timings [s]: fit {:.2}  extract {:.2}  draw {:.2}  values {:.2}  solve {:.2}",
        t.fit, t.extract, t.draw, t.values, t.solve
    );
}

/// `shapley` accepts any data source; `experiment` insists on a generator so
/// the analytic overlay is always present when one exists.
fn cmd_run(args: &CommonArgs, generator_only: bool) -> Result<()> {
    let Resolved { settings, out, .. } = args.resolve()?;
    if generator_only && matches!(settings.data, DataSource::Provided { .. }) {
        bail!("the experiment command runs built-in generators; use shapley for CSV data");
    }
    prepare_out(&out)?;

    let report = run_shaff(&settings)?;
    let json_path = write_json(&report, out.join("report.json"))?;
    let per_rep_path = write_per_rep_csv(&report, out.join("per_rep.csv"))?;
    let effects_path = out.join("effects.csv");
    write_effects_csv(&report.variable_names, &report.mean_effects, &effects_path)?;
    let mut written = vec![json_path, per_rep_path, effects_path];
    if let Some(truth) = &report.ground_truth {
        let path = out.join("ground_truth.csv");
        write_effects_csv(&report.variable_names, truth, &path)?;
        written.push(path);
    }
    written.push(emit_plot(
        &report,
        report.ground_truth.as_deref(),
        out.join("plot.svg"),
    )?);

    print_effects_table(&report);
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_ablation(args: &CommonArgs) -> Result<()> {
    let resolved = args.resolve()?;
    prepare_out(&resolved.out)?;

    let report = run_ablation(&resolved.settings, resolved.marginal_draws)?;
    let json_path = write_json(&report, resolved.out.join("ablation.json"))?;
    let csv_path = resolved.out.join("ablation.csv");
    {
        let mut writer = csv::Writer::from_path(&csv_path)
            .with_context(|| format!("cannot write {}", csv_path.display()))?;
        writer.write_record(["sampler", "estimator", "mean_error", "sd_error"])?;
        for cell in &report.cells {
            writer.write_record([
                cell.sampler.clone(),
                cell.strategy.clone(),
                format!("{}", cell.mean_error),
                format!("{}", cell.sd_error),
            ])?;
        }
        writer.flush()?;
    }

    println!("{:<8}  {:<12}  {:>10}  {:>10}", "sampler", "estimator", "mean error", "sd");
    for cell in &report.cells {
        println!(
            "{:<8}  {:<12}  {:>10.4}  {:>10.4}",
            cell.sampler, cell.strategy, cell.mean_error, cell.sd_error
        );
    }
    println!("wrote {}", json_path.display());
    println!("wrote {}", csv_path.display());
    Ok(())
}

fn cmd_ksweep(args: &CommonArgs) -> Result<()> {
    let resolved = args.resolve()?;
    prepare_out(&resolved.out)?;

    let report = run_ksweep(&resolved.settings, &resolved.budgets)?;
    let json_path = write_json(&report, resolved.out.join("ksweep.json"))?;
    let csv_path = resolved.out.join("ksweep.csv");
    {
        let mut writer = csv::Writer::from_path(&csv_path)
            .with_context(|| format!("cannot write {}", csv_path.display()))?;
        writer.write_record(["subsets", "mean_error", "se_error"])?;
        for row in &report.rows {
            writer.write_record([
                row.k.to_string(),
                format!("{}", row.mean_error),
                format!("{}", row.se_error),
            ])?;
        }
        writer.flush()?;
    }

    println!("{:>8}  {:>10}  {:>10}", "subsets", "mean error", "se");
    for row in &report.rows {
        println!("{:>8}  {:>10.4}  {:>10.4}", row.k, row.mean_error, row.se_error);
    }
    println!(
        "error decreased across {:.0}% of adjacent budget steps",
        100.0 * report.decreasing_fraction
    );
    println!("wrote {}", json_path.display());
    println!("wrote {}", csv_path.display());
    Ok(())
}
