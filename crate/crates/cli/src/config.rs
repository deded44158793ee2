//! Flag and config-file resolution: defaults, then the TOML file, then
//! explicit flags, with the merged result validated before any work starts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use shapley_forest::data::{load_csv, ColumnKind, Dataset, Experiment, GeneratorSpec};
use shapley_forest::estimators::{Strategy, DEFAULT_MARGINAL_DRAWS};
use shapley_forest::forest::{ForestParams, Resampling};
use shapley_forest::runner::{DataSource, RunSettings, SamplerKind};

use crate::CommonArgs;

/// Keys accepted in the `--config` TOML file; each mirrors a flag and is
/// overridden by it.
#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub target: Option<String>,
    pub categorical: Option<Vec<String>>,
    pub experiment: Option<String>,
    pub n: Option<usize>,
    pub noise_fraction: Option<f64>,
    pub trees: Option<usize>,
    pub mtry: Option<usize>,
    pub min_node_size: Option<usize>,
    pub resampling: Option<String>,
    pub max_leaves: Option<usize>,
    pub max_depth: Option<usize>,
    pub gamma: Option<f64>,
    pub delta: Option<f64>,
    pub subsets: Option<usize>,
    pub sampler: Option<String>,
    pub estimator: Option<String>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub marginal_draws: Option<usize>,
    pub budgets: Option<Vec<usize>>,
}

/// Fully merged and parsed configuration, ready to run.
pub struct Resolved {
    pub settings: RunSettings,
    pub out: PathBuf,
    pub marginal_draws: usize,
    pub budgets: Vec<usize>,
}

fn load_file(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("cannot parse config file {}", path.display()))
}

fn parse_resampling(s: &str) -> Result<Resampling> {
    if s == "bootstrap" {
        return Ok(Resampling::Bootstrap);
    }
    if let Some(rows) = s.strip_prefix("subsample:") {
        let a_n: usize = rows
            .parse()
            .with_context(|| format!("bad subsample size {rows:?}"))?;
        return Ok(Resampling::Subsample { a_n });
    }
    bail!("unknown resampling {s:?}; expected bootstrap or subsample:<rows>");
}

/// Builds the generator for a preset name or a TOML spec path.
fn parse_experiment(value: &str, n: usize, noise_fraction: Option<f64>) -> Result<GeneratorSpec> {
    let mut spec = match value.parse::<Experiment>() {
        Ok(exp) => GeneratorSpec::new(exp, n, 0),
        Err(_) => {
            let path = Path::new(value);
            if !path.exists() {
                bail!(
                    "--experiment {value:?} is neither a built-in generator name \
                     (exp1a, exp1b, exp2, exp3) nor a readable TOML spec file"
                );
            }
            let mut spec = GeneratorSpec::from_toml_file(path)
                .with_context(|| format!("cannot load generator spec {}", path.display()))?;
            spec.n = n;
            spec
        }
    };
    if let Some(f) = noise_fraction {
        spec.params.noise_fraction = Some(f);
    }
    Ok(spec)
}

/// Reads the header and the distinct labels of the declared categorical
/// columns, producing the schema `load_csv` expects.
fn infer_schema(path: &Path, target: &str, categorical: &[String]) -> Result<Vec<ColumnKind>> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("cannot open data file {}", path.display()))?;
    let header: Vec<String> = reader
        .headers()
        .with_context(|| format!("cannot read header of {}", path.display()))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    if !header.iter().any(|h| h == target) {
        bail!("target column {target:?} not found in {}", path.display());
    }
    for name in categorical {
        if name == target {
            bail!("target column {target:?} cannot be categorical");
        }
        if !header.iter().any(|h| h == name) {
            bail!("categorical column {name:?} not found in {}", path.display());
        }
    }

    let feature_cols: Vec<(usize, &String)> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.as_str() != target)
        .collect();
    let mut labels: BTreeMap<usize, std::collections::BTreeSet<String>> = feature_cols
        .iter()
        .filter(|(_, h)| categorical.contains(h))
        .map(|(i, _)| (*i, Default::default()))
        .collect();
    for record in reader.records() {
        let record = record.with_context(|| format!("cannot read {}", path.display()))?;
        for (col, seen) in labels.iter_mut() {
            if let Some(cell) = record.get(*col) {
                seen.insert(cell.to_string());
            }
        }
    }
    Ok(feature_cols
        .iter()
        .map(|(i, _)| match labels.get(i) {
            Some(seen) => ColumnKind::Categorical(seen.iter().cloned().collect()),
            None => ColumnKind::Continuous,
        })
        .collect())
}

fn load_provided(path: &Path, target: &str, categorical: &[String]) -> Result<Dataset> {
    let schema = infer_schema(path, target, categorical)?;
    load_csv(path, &schema, target)
        .with_context(|| format!("cannot load data file {}", path.display()))
}

impl CommonArgs {
    /// Merges defaults, the optional config file, and the flags; `need_out`
    /// commands fail here when no output directory was named anywhere.
    pub fn resolve(&self) -> Result<Resolved> {
        let file = match &self.config {
            Some(path) => load_file(path)?,
            None => FileConfig::default(),
        };

        let data_path = self.data.clone().or(file.data);
        let experiment = self.experiment.clone().or(file.experiment);
        let n = self.n.or(file.n).unwrap_or(2000);
        let noise_fraction = self.noise_fraction.or(file.noise_fraction);
        let seed = self.seed.or(file.seed).unwrap_or(0);

        let data = match (&data_path, &experiment) {
            (Some(_), Some(_)) => bail!("--data and --experiment are mutually exclusive"),
            (None, None) => bail!("either --data or --experiment is required"),
            (Some(path), None) => {
                let target = self
                    .target
                    .clone()
                    .or(file.target)
                    .context("--data needs --target naming the output column")?;
                let categorical = self
                    .categorical
                    .clone()
                    .or(file.categorical)
                    .unwrap_or_default();
                let dataset = load_provided(path, &target, &categorical)?;
                let label = path
                    .file_name()
                    .map(|f| f.to_string_lossy().into_owned())
                    .unwrap_or_else(|| path.display().to_string());
                DataSource::Provided { dataset, label }
            }
            (None, Some(value)) => {
                DataSource::Synthetic(parse_experiment(value, n, noise_fraction)?)
            }
        };

        let mut forest = ForestParams {
            num_trees: self.trees.or(file.trees).unwrap_or(500),
            mtry: self.mtry.or(file.mtry),
            min_node_size: self.min_node_size.or(file.min_node_size).unwrap_or(5),
            resampling: match self.resampling.clone().or(file.resampling) {
                Some(s) => parse_resampling(&s)?,
                None => Resampling::Bootstrap,
            },
            max_leaves: self.max_leaves.or(file.max_leaves),
            max_depth: self.max_depth.or(file.max_depth),
            gamma: self.gamma.or(file.gamma).unwrap_or(0.0),
            delta: self.delta.or(file.delta).unwrap_or(0.0),
            seed: 0,
        };
        // The sparse generator needs every variable in play at each split to
        // stand a chance of finding its few informative columns.
        if forest.mtry.is_none() {
            if let DataSource::Synthetic(spec) = &data {
                if spec.experiment == Experiment::Exp1b {
                    let mut probe = spec.clone();
                    probe.n = 2;
                    forest.mtry = Some(shapley_forest::data::generate(&probe)?.p());
                }
            }
        }

        let sampler: SamplerKind = self
            .sampler
            .clone()
            .or(file.sampler)
            .unwrap_or_else(|| "pis".into())
            .parse()?;
        let strategy: Strategy = self
            .estimator
            .clone()
            .or(file.estimator)
            .unwrap_or_else(|| "prf".into())
            .parse()?;

        let settings = RunSettings {
            data,
            forest,
            k: self.subsets.or(file.subsets).unwrap_or(500),
            sampler,
            strategy,
            reps: self.reps.or(file.reps).unwrap_or(1),
            seed,
        };
        settings.validate()?;

        let out = self
            .out
            .clone()
            .or(file.out)
            .context("an output directory is required (--out)")?;
        Ok(Resolved {
            settings,
            out,
            marginal_draws: self
                .marginal_draws
                .or(file.marginal_draws)
                .unwrap_or(DEFAULT_MARGINAL_DRAWS),
            budgets: self
                .budgets
                .clone()
                .or(file.budgets)
                .unwrap_or_else(|| vec![10, 100, 500]),
        })
    }
}
