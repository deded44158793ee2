//! End-to-end pipeline orchestration: fit a forest, extract path subsets,
//! draw a paired sample, estimate subset values with memoization, solve the
//! constrained regression, and aggregate repetitions into reports.
//!
//! Seeds are derived per repetition from the master seed through fixed
//! streams (data 1, forest 2, draw 3, estimator 4), so any repetition can be
//! reproduced in isolation and sweeps sharing a master seed share datasets.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::data::{generate, Dataset, GeneratorSpec};
use crate::error::{Error, Result};
use crate::estimators::{full_set_value, values_of, EstimatorSpec, Strategy};
use crate::forest::{fit, Forest, ForestParams};
use crate::ground_truth;
use crate::projection::ValueEstimate;
use crate::rng::derive_seed;
use crate::solver::{assemble, solve, solve_strict, ShapleyEstimate, SolveDiagnostics};
use crate::subsets::{
    draw_importance, draw_monte_carlo, extract_path_subsets, SubsetDraw, SubsetTable, VarSubset,
};

pub const SCHEMA_VERSION: u32 = 1;

const DATA_STREAM: u64 = 1;
const FOREST_STREAM: u64 = 2;
const DRAW_STREAM: u64 = 3;
const ESTIMATOR_STREAM: u64 = 4;

/// Which paired subset sampler feeds the regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    /// Occurrence-frequency importance sampling over forest paths.
    Importance,
    /// Size-weighted Monte-Carlo baseline.
    MonteCarlo,
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SamplerKind::Importance => "pis",
            SamplerKind::MonteCarlo => "pmc",
        })
    }
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pis" => Ok(SamplerKind::Importance),
            "pmc" => Ok(SamplerKind::MonteCarlo),
            other => Err(Error::Config(format!(
                "unknown sampler {other:?}; expected pis or pmc"
            ))),
        }
    }
}

/// Where the training data comes from.
#[derive(Debug, Clone)]
pub enum DataSource {
    /// Fresh draw per repetition from the derived data seed.
    Synthetic(GeneratorSpec),
    /// One fixed dataset shared by all repetitions.
    Provided { dataset: Dataset, label: String },
}

/// Everything one pipeline run needs besides the command.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub data: DataSource,
    /// Per-repetition forest; the seed field is overridden by derivation.
    pub forest: ForestParams,
    /// Paired draws per repetition (each contributes itself + complement).
    pub k: usize,
    pub sampler: SamplerKind,
    pub strategy: Strategy,
    pub reps: usize,
    pub seed: u64,
}

impl RunSettings {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParams(
                "at least one paired subset draw is required".into(),
            ));
        }
        if self.reps == 0 {
            return Err(Error::InvalidParams(
                "at least one repetition is required".into(),
            ));
        }
        if let DataSource::Synthetic(spec) = &self.data {
            if spec.n < 2 {
                return Err(Error::InvalidParams(
                    "synthetic data needs at least two rows".into(),
                ));
            }
        }
        Ok(())
    }

    /// Ground truth aligned with the data columns, when the source admits one.
    pub fn ground_truth(&self) -> Result<Option<Vec<f64>>> {
        match &self.data {
            DataSource::Synthetic(spec) => ground_truth::for_experiment(spec),
            DataSource::Provided { .. } => Ok(None),
        }
    }
}

/// Identifying echo of the training data, not the data itself.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DataEcho {
    pub kind: String,
    pub label: String,
    pub n: usize,
    pub p: usize,
}

/// Echo of the effective configuration, embedded in every report.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConfigEcho {
    pub data: DataEcho,
    pub forest: ForestParams,
    pub k: usize,
    pub sampler: String,
    pub strategy: String,
    pub reps: usize,
    pub seed: u64,
}

fn config_echo(settings: &RunSettings) -> ConfigEcho {
    let data = match &settings.data {
        DataSource::Synthetic(spec) => DataEcho {
            kind: "synthetic".into(),
            label: spec.experiment.to_string(),
            n: spec.n,
            p: 0,
        },
        DataSource::Provided { dataset, label } => DataEcho {
            kind: "provided".into(),
            label: label.clone(),
            n: dataset.n(),
            p: dataset.p(),
        },
    };
    ConfigEcho {
        data,
        forest: settings.forest.clone(),
        k: settings.k,
        sampler: settings.sampler.to_string(),
        strategy: settings.strategy.to_string(),
        reps: settings.reps,
        seed: settings.seed,
    }
}

/// Wall-clock seconds per pipeline stage.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct StageTimings {
    pub fit: f64,
    pub extract: f64,
    pub draw: f64,
    pub values: f64,
    pub solve: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.fit + self.extract + self.draw + self.values + self.solve
    }

    fn add(&mut self, other: &StageTimings) {
        self.fit += other.fit;
        self.extract += other.extract;
        self.draw += other.draw;
        self.values += other.values;
        self.solve += other.solve;
    }

    fn clear(&mut self) {
        *self = StageTimings::default();
    }
}

/// One repetition's estimate and bookkeeping.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RepReport {
    pub rep: usize,
    pub effects: Vec<f64>,
    pub constraint: f64,
    pub diagnostics: SolveDiagnostics,
    /// Distinct subsets evaluated (the regression may repeat them).
    pub unique_subsets: usize,
    /// True when the draw was too small to identify every effect and the
    /// box-constrained iterative solver ran instead of the closed form.
    pub strict_fallback: bool,
    /// Cumulative absolute error against ground truth, when available.
    pub error: Option<f64>,
    pub timings: StageTimings,
}

/// Full pipeline output over all repetitions.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: ConfigEcho,
    pub variable_names: Vec<String>,
    pub reps: Vec<RepReport>,
    pub mean_effects: Vec<f64>,
    /// Sample standard deviation per variable; zero for a single repetition.
    pub std_effects: Vec<f64>,
    pub ground_truth: Option<Vec<f64>>,
    /// Mean over repetitions of the per-repetition cumulative error.
    pub mean_error: Option<f64>,
    /// Cumulative error of the mean effect vector.
    pub error_of_mean: Option<f64>,
    pub timings: StageTimings,
}

impl RunReport {
    /// Zeroes every timing field; reports differing only in wall-clock time
    /// then serialize identically.
    pub fn strip_timings(&mut self) {
        self.timings.clear();
        for rep in &mut self.reps {
            rep.timings.clear();
        }
    }
}

/// Per-repetition working set shared by every command.
struct RepContext {
    dataset: Dataset,
    forest: Forest,
    table: SubsetTable,
    constraint: ValueEstimate,
    timings: StageTimings,
}

fn prepare_rep(settings: &RunSettings, rep: usize) -> Result<RepContext> {
    let mut timings = StageTimings::default();
    let dataset = match &settings.data {
        DataSource::Synthetic(spec) => {
            let mut rep_spec = spec.clone();
            rep_spec.seed = derive_seed(settings.seed, &[DATA_STREAM, rep as u64]);
            generate(&rep_spec)?
        }
        DataSource::Provided { dataset, .. } => dataset.clone(),
    };

    let start = Instant::now();
    let mut params = settings.forest.clone();
    params.seed = derive_seed(settings.seed, &[FOREST_STREAM, rep as u64]);
    let forest = fit(&dataset, &params)?;
    timings.fit = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let table = extract_path_subsets(&forest);
    timings.extract = start.elapsed().as_secs_f64();

    // The constraint doubles as the full-set value for every strategy.
    let start = Instant::now();
    let constraint = full_set_value(&forest, &dataset)?;
    timings.values = start.elapsed().as_secs_f64();

    Ok(RepContext {
        dataset,
        forest,
        table,
        constraint,
        timings,
    })
}

fn draw_subsets(
    ctx: &RepContext,
    sampler: SamplerKind,
    k: usize,
    draw_seed: u64,
) -> Result<SubsetDraw> {
    match sampler {
        SamplerKind::Importance => draw_importance(&ctx.table, k, draw_seed),
        SamplerKind::MonteCarlo => draw_monte_carlo(ctx.dataset.p(), k, draw_seed),
    }
}

/// Evaluates the draw's subsets through `cache`, computing each distinct
/// subset once; repeated draws reuse the cached value.
fn evaluate_draw(
    spec: &EstimatorSpec,
    draw: &SubsetDraw,
    cache: &mut HashMap<VarSubset, ValueEstimate>,
) -> Result<Vec<f64>> {
    let mut missing: Vec<VarSubset> = Vec::new();
    for entry in &draw.entries {
        if !cache.contains_key(&entry.subset) && !missing.contains(&entry.subset) {
            missing.push(entry.subset.clone());
        }
    }
    let fresh = values_of(spec, &missing)?;
    for (subset, value) in missing.into_iter().zip(fresh) {
        cache.insert(subset, value);
    }
    Ok(draw
        .entries
        .iter()
        .map(|e| cache[&e.subset].value)
        .collect())
}

/// Solves the assembled system; a draw too small to identify every effect
/// (fewer distinct pairs than p−1 leaves the reduced system rank-deficient)
/// falls back to the box-constrained iterative solver, which is defined for
/// any system. The boolean reports whether the fallback ran.
fn solve_draw(
    draw: &SubsetDraw,
    values: &[f64],
    constraint: f64,
) -> Result<(ShapleyEstimate, bool)> {
    let system = assemble(draw, values, constraint)?;
    match solve(&system) {
        Ok(estimate) => Ok((estimate, false)),
        Err(Error::SingularSystem) => Ok((solve_strict(&system)?, true)),
        Err(e) => Err(e),
    }
}

fn cumulative_error(effects: &[f64], truth: &[f64]) -> f64 {
    effects
        .iter()
        .zip(truth)
        .map(|(e, t)| (e - t).abs())
        .sum()
}

fn summarize(reports: &[RepReport], p: usize) -> (Vec<f64>, Vec<f64>) {
    let r = reports.len() as f64;
    let mut mean = vec![0.0; p];
    for rep in reports {
        for (m, e) in mean.iter_mut().zip(&rep.effects) {
            *m += e / r;
        }
    }
    let mut std = vec![0.0; p];
    if reports.len() > 1 {
        for rep in reports {
            for (s, (e, m)) in std.iter_mut().zip(rep.effects.iter().zip(&mean)) {
                *s += (e - m) * (e - m);
            }
        }
        for s in std.iter_mut() {
            *s = (*s / (r - 1.0)).sqrt();
        }
    }
    (mean, std)
}

/// The full pipeline: fit, extract, draw, estimate (memoized), solve, across
/// `reps` repetitions with derived seeds.
pub fn run_shaff(settings: &RunSettings) -> Result<RunReport> {
    settings.validate()?;
    let truth = settings.ground_truth()?;
    let mut reports = Vec::with_capacity(settings.reps);
    let mut totals = StageTimings::default();
    let mut names: Vec<String> = Vec::new();

    for rep in 0..settings.reps {
        let ctx = prepare_rep(settings, rep)?;
        if rep == 0 {
            names = ctx.dataset.names().to_vec();
        }
        let mut timings = ctx.timings;

        let start = Instant::now();
        let draw_seed = derive_seed(settings.seed, &[DRAW_STREAM, rep as u64]);
        let draw = draw_subsets(&ctx, settings.sampler, settings.k, draw_seed)?;
        timings.draw = start.elapsed().as_secs_f64();

        let start = Instant::now();
        let spec = EstimatorSpec::new(
            settings.strategy,
            &ctx.forest,
            &ctx.dataset,
            derive_seed(settings.seed, &[ESTIMATOR_STREAM, rep as u64]),
        );
        let mut cache = HashMap::new();
        let values = evaluate_draw(&spec, &draw, &mut cache)?;
        timings.values += start.elapsed().as_secs_f64();

        let start = Instant::now();
        let (estimate, strict_fallback) = solve_draw(&draw, &values, ctx.constraint.value)?;
        timings.solve = start.elapsed().as_secs_f64();

        let error = truth
            .as_ref()
            .map(|t| cumulative_error(&estimate.effects, t));
        totals.add(&timings);
        reports.push(RepReport {
            rep,
            effects: estimate.effects,
            constraint: estimate.constraint,
            diagnostics: estimate.diagnostics,
            unique_subsets: cache.len(),
            strict_fallback,
            error,
            timings,
        });
    }

    let p = reports[0].effects.len();
    let (mean_effects, std_effects) = summarize(&reports, p);
    let mean_error = truth.as_ref().map(|_| {
        reports.iter().filter_map(|r| r.error).sum::<f64>() / reports.len() as f64
    });
    let error_of_mean = truth.as_ref().map(|t| cumulative_error(&mean_effects, t));
    Ok(RunReport {
        schema_version: SCHEMA_VERSION,
        config: config_echo(settings),
        variable_names: names,
        reps: reports,
        mean_effects,
        std_effects,
        ground_truth: truth,
        mean_error,
        error_of_mean,
        timings: totals,
    })
}

/// One sweep row: the subset budget and the error it achieved.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KSweepRow {
    pub k: usize,
    pub per_rep_errors: Vec<f64>,
    pub mean_error: f64,
    /// Standard error of the mean over repetitions.
    pub se_error: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KSweepReport {
    pub schema_version: u32,
    pub config: ConfigEcho,
    pub rows: Vec<KSweepRow>,
    /// Fraction of adjacent budget pairs whose mean error decreased.
    pub decreasing_fraction: f64,
    pub ground_truth: Vec<f64>,
}

/// Runs the pipeline once per subset budget, sharing data, forest, and value
/// caches across budgets within each repetition. Results are identical to
/// independent [`run_shaff`] calls at each budget with the same master seed.
pub fn run_ksweep(settings: &RunSettings, ks: &[usize]) -> Result<KSweepReport> {
    settings.validate()?;
    if ks.is_empty() {
        return Err(Error::InvalidParams("the budget list is empty".into()));
    }
    if ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParams(
            "subset budgets must be strictly ascending".into(),
        ));
    }
    if ks[0] == 0 {
        return Err(Error::InvalidParams(
            "at least one paired subset draw is required".into(),
        ));
    }
    let truth = settings
        .ground_truth()?
        .ok_or_else(|| Error::InvalidParams("the budget sweep needs ground truth".into()))?;

    let mut errors: Vec<Vec<f64>> = vec![Vec::with_capacity(settings.reps); ks.len()];
    for rep in 0..settings.reps {
        let ctx = prepare_rep(settings, rep)?;
        let spec = EstimatorSpec::new(
            settings.strategy,
            &ctx.forest,
            &ctx.dataset,
            derive_seed(settings.seed, &[ESTIMATOR_STREAM, rep as u64]),
        );
        let draw_seed = derive_seed(settings.seed, &[DRAW_STREAM, rep as u64]);
        let mut cache = HashMap::new();
        for (row, &k) in ks.iter().enumerate() {
            let draw = draw_subsets(&ctx, settings.sampler, k, draw_seed)?;
            let values = evaluate_draw(&spec, &draw, &mut cache)?;
            let (estimate, _) = solve_draw(&draw, &values, ctx.constraint.value)?;
            errors[row].push(cumulative_error(&estimate.effects, &truth));
        }
    }

    let rows: Vec<KSweepRow> = ks
        .iter()
        .zip(errors)
        .map(|(&k, per_rep_errors)| {
            let r = per_rep_errors.len() as f64;
            let mean = per_rep_errors.iter().sum::<f64>() / r;
            let var = if per_rep_errors.len() > 1 {
                per_rep_errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (r - 1.0)
            } else {
                0.0
            };
            KSweepRow {
                k,
                per_rep_errors,
                mean_error: mean,
                se_error: (var / r).sqrt(),
            }
        })
        .collect();
    let pairs = rows.len().saturating_sub(1);
    let decreasing = rows
        .windows(2)
        .filter(|w| w[1].mean_error < w[0].mean_error)
        .count();
    let decreasing_fraction = if pairs == 0 {
        1.0
    } else {
        decreasing as f64 / pairs as f64
    };
    Ok(KSweepReport {
        schema_version: SCHEMA_VERSION,
        config: config_echo(settings),
        rows,
        decreasing_fraction,
        ground_truth: truth,
    })
}

/// One sampler-by-strategy cell of the ablation grid.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AblationCell {
    pub sampler: String,
    pub strategy: String,
    pub per_rep_errors: Vec<f64>,
    pub mean_error: f64,
    pub sd_error: f64,
    /// Mean effects across repetitions, for follow-up inspection.
    pub mean_effects: Vec<f64>,
    /// Per-variable sample standard deviation; zero for a single repetition.
    pub std_effects: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AblationReport {
    pub schema_version: u32,
    pub config: ConfigEcho,
    pub marginal_draws: usize,
    pub cells: Vec<AblationCell>,
    pub ground_truth: Vec<f64>,
}

impl AblationReport {
    pub fn cell(&self, sampler: SamplerKind, strategy_tag: &str) -> Option<&AblationCell> {
        let sampler = sampler.to_string();
        self.cells
            .iter()
            .find(|c| c.sampler == sampler && c.strategy.starts_with(strategy_tag))
    }
}

/// Evaluates every sampler-by-strategy combination on shared data, forests,
/// and draws per repetition; the two samplers share each strategy's value
/// cache as well. `marginal_draws` sets the marginal strategy's draw count.
pub fn run_ablation(settings: &RunSettings, marginal_draws: usize) -> Result<AblationReport> {
    settings.validate()?;
    if marginal_draws == 0 {
        return Err(Error::InvalidParams(
            "marginal strategy needs at least one replacement draw".into(),
        ));
    }
    let truth = settings
        .ground_truth()?
        .ok_or_else(|| Error::InvalidParams("the ablation needs ground truth".into()))?;
    let samplers = [SamplerKind::Importance, SamplerKind::MonteCarlo];
    let strategies = [
        Strategy::Prf,
        Strategy::Marginal { m: marginal_draws },
        Strategy::Retrain,
    ];

    let mut cell_effects: Vec<Vec<Vec<f64>>> = vec![Vec::new(); samplers.len() * strategies.len()];
    let mut cell_errors: Vec<Vec<f64>> = vec![Vec::new(); samplers.len() * strategies.len()];
    for rep in 0..settings.reps {
        let ctx = prepare_rep(settings, rep)?;
        let draw_seed = derive_seed(settings.seed, &[DRAW_STREAM, rep as u64]);
        let draws: Vec<SubsetDraw> = samplers
            .iter()
            .map(|&s| draw_subsets(&ctx, s, settings.k, draw_seed))
            .collect::<Result<_>>()?;
        let estimator_seed = derive_seed(settings.seed, &[ESTIMATOR_STREAM, rep as u64]);
        for (si, strategy) in strategies.iter().enumerate() {
            let spec = EstimatorSpec::new(*strategy, &ctx.forest, &ctx.dataset, estimator_seed);
            let mut cache = HashMap::new();
            for (di, draw) in draws.iter().enumerate() {
                let values = evaluate_draw(&spec, draw, &mut cache)?;
                let (estimate, _) = solve_draw(draw, &values, ctx.constraint.value)?;
                let cell = di * strategies.len() + si;
                cell_errors[cell].push(cumulative_error(&estimate.effects, &truth));
                cell_effects[cell].push(estimate.effects);
            }
        }
    }

    let mut cells = Vec::with_capacity(samplers.len() * strategies.len());
    for (di, sampler) in samplers.iter().enumerate() {
        for (si, strategy) in strategies.iter().enumerate() {
            let idx = di * strategies.len() + si;
            let errors = &cell_errors[idx];
            let r = errors.len() as f64;
            let mean = errors.iter().sum::<f64>() / r;
            let sd = if errors.len() > 1 {
                (errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (r - 1.0)).sqrt()
            } else {
                0.0
            };
            let p = cell_effects[idx][0].len();
            let mut mean_effects = vec![0.0; p];
            for effects in &cell_effects[idx] {
                for (m, e) in mean_effects.iter_mut().zip(effects) {
                    *m += e / r;
                }
            }
            let mut std_effects = vec![0.0; p];
            if cell_effects[idx].len() > 1 {
                for effects in &cell_effects[idx] {
                    for (s, (e, m)) in std_effects.iter_mut().zip(effects.iter().zip(&mean_effects))
                    {
                        *s += (e - m) * (e - m);
                    }
                }
                for s in std_effects.iter_mut() {
                    *s = (*s / (r - 1.0)).sqrt();
                }
            }
            cells.push(AblationCell {
                sampler: sampler.to_string(),
                strategy: strategy.to_string(),
                per_rep_errors: errors.clone(),
                mean_error: mean,
                sd_error: sd,
                mean_effects,
                std_effects,
            });
        }
    }
    Ok(AblationReport {
        schema_version: SCHEMA_VERSION,
        config: config_echo(settings),
        marginal_draws,
        cells,
        ground_truth: truth,
    })
}

/// Writes a report as pretty JSON.
pub fn write_json<T: serde::Serialize>(report: &T, path: impl AsRef<Path>) -> Result<PathBuf> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = std::io::BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, report)
        .map_err(|e| Error::Serialization(e.to_string()))?;
    use std::io::Write;
    writeln!(writer).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

/// Writes one row per repetition: rep index then each variable's effect.
pub fn write_per_rep_csv(report: &RunReport, path: impl AsRef<Path>) -> Result<PathBuf> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["rep".to_string()];
    header.extend(report.variable_names.iter().cloned());
    writer.write_record(&header).map_err(csv_err)?;
    for rep in &report.reps {
        let mut record = vec![rep.rep.to_string()];
        record.extend(rep.effects.iter().map(|e| format!("{e}")));
        writer.write_record(&record).map_err(csv_err)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

/// Per-variable bar chart of the mean estimates with one-standard-deviation
/// whiskers and, when supplied, ground-truth cross markers.
pub fn emit_plot(
    report: &RunReport,
    truth: Option<&[f64]>,
    path: impl AsRef<Path>,
) -> Result<PathBuf> {
    let path = path.as_ref();
    if report.reps.is_empty() {
        return Err(Error::InvalidParams(
            "cannot plot a report without repetitions".into(),
        ));
    }
    let p = report.mean_effects.len();
    if let Some(t) = truth {
        if t.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "ground truth has {} entries, report has {p}",
                t.len()
            )));
        }
    }

    let slot = 34.0_f64;
    let margin_left = 58.0;
    let margin_bottom = 64.0;
    let margin_top = 24.0;
    let plot_w = slot * p as f64;
    let plot_h = 300.0;
    let width = margin_left + plot_w + 20.0;
    let height = margin_top + plot_h + margin_bottom;

    let mut lo = 0.0_f64;
    let mut hi = 0.0_f64;
    let mut consider = |v: f64| {
        lo = lo.min(v);
        hi = hi.max(v);
    };
    for (m, s) in report.mean_effects.iter().zip(&report.std_effects) {
        consider(m - s);
        consider(m + s);
    }
    if let Some(t) = truth {
        t.iter().for_each(|&v| consider(v));
    }
    if hi - lo < 1e-9 {
        hi = lo + 1.0;
    }
    let pad = 0.08 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let y_of = |v: f64| margin_top + (hi - v) / (hi - lo) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{width:.0}\" height=\"{height:.0}\" fill=\"white\"/>\n"
    ));

    // Horizontal guides at zero and the extremes.
    for (v, color) in [(0.0, "#888"), (lo + pad, "#ddd"), (hi - pad, "#ddd")] {
        let y = y_of(v);
        svg.push_str(&format!(
            "  <line x1=\"{margin_left:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" \
             stroke=\"{color}\" stroke-width=\"1\"/>\n",
            margin_left + plot_w
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v:.2}</text>\n",
            margin_left - 6.0,
            y + 4.0
        ));
    }

    let bar_w = slot * 0.56;
    let label_step = p.div_ceil(30);
    for j in 0..p {
        let cx = margin_left + slot * (j as f64 + 0.5);
        let mean = report.mean_effects[j];
        let sd = report.std_effects[j];
        let (top, bottom) = if mean >= 0.0 {
            (y_of(mean), y_of(0.0))
        } else {
            (y_of(0.0), y_of(mean))
        };
        svg.push_str(&format!(
            "  <rect class=\"bar\" x=\"{:.1}\" y=\"{top:.1}\" width=\"{bar_w:.1}\" \
             height=\"{:.1}\" fill=\"#4878b0\"/>\n",
            cx - bar_w / 2.0,
            (bottom - top).max(0.5)
        ));
        if sd > 0.0 {
            svg.push_str(&format!(
                "  <line class=\"whisker\" x1=\"{cx:.1}\" y1=\"{:.1}\" x2=\"{cx:.1}\" y2=\"{:.1}\" \
                 stroke=\"#1d3b5c\" stroke-width=\"1.5\"/>\n",
                y_of(mean + sd),
                y_of(mean - sd)
            ));
        }
        if j % label_step == 0 {
            svg.push_str(&format!(
                "  <text x=\"{cx:.1}\" y=\"{:.1}\" text-anchor=\"end\" \
                 transform=\"rotate(-55 {cx:.1} {:.1})\">{}</text>\n",
                margin_top + plot_h + 14.0,
                margin_top + plot_h + 14.0,
                xml_escape(&report.variable_names[j])
            ));
        }
    }

    if let Some(t) = truth {
        for (j, &v) in t.iter().enumerate() {
            let cx = margin_left + slot * (j as f64 + 0.5);
            let cy = y_of(v);
            let arm = 5.0;
            svg.push_str(&format!(
                "  <g class=\"truth\" stroke=\"#c0392b\" stroke-width=\"2\">\
                 <line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\"/>\
                 <line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\"/></g>\n",
                cx - arm,
                cy - arm,
                cx + arm,
                cy + arm,
                cx - arm,
                cy + arm,
                cx + arm,
                cy - arm
            ));
        }
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
