//! Uniform interface over the three value-function estimators: projected
//! forest descent, marginal substitution, and per-subset retraining.
//!
//! All strategies answer the same question, the fraction of output variance
//! a variable subset explains, and agree exactly on the full set, where each
//! returns the fitted forest's out-of-bag explained variance.

use rand::Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::forest::{explained_variance, fit, Forest, ForestParams};
use crate::projection::{estimate_v_batch, ValueEstimate};
use crate::rng::{derive_seed, stream_rng};
use crate::subsets::VarSubset;

/// Replacement draws per evaluation row for the marginal strategy.
pub const DEFAULT_MARGINAL_DRAWS: usize = 30;
/// Depth limit applied to retrained forests on small subsets.
pub const RETRAIN_DEPTH_CAP: usize = 6;
/// Largest subset size the retrain depth cap applies to.
pub const RETRAIN_CAP_MAX_SUBSET: usize = 2;

const MARGINAL_STREAM: u64 = 0x4d41_5247;
const RETRAIN_STREAM: u64 = 0x5245_5452;

/// Which estimator computes v(U).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Projected-forest descent over the fitted forest's out-of-bag rows.
    Prf,
    /// Replace out-of-subset coordinates by draws from other training rows
    /// and score the averaged forest prediction.
    Marginal { m: usize },
    /// Fit a fresh forest on the subset's columns and score it out of bag.
    Retrain,
}

impl Strategy {
    pub fn marginal_default() -> Self {
        Strategy::Marginal {
            m: DEFAULT_MARGINAL_DRAWS,
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::Prf => f.write_str("prf"),
            Strategy::Marginal { m } => write!(f, "marginal:{m}"),
            Strategy::Retrain => f.write_str("retrain"),
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    /// Accepts `prf`, `retrain`, `marginal` (default draw count), or
    /// `marginal:<m>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prf" => return Ok(Strategy::Prf),
            "retrain" => return Ok(Strategy::Retrain),
            "marginal" => return Ok(Strategy::marginal_default()),
            _ => {}
        }
        if let Some(m) = s.strip_prefix("marginal:") {
            let m: usize = m
                .parse()
                .map_err(|_| Error::Config(format!("bad marginal draw count in {s:?}")))?;
            return Ok(Strategy::Marginal { m });
        }
        Err(Error::Config(format!(
            "unknown estimator strategy {s:?}; expected prf, marginal[:m], or retrain"
        )))
    }
}

/// A value-function estimator bound to one fitted forest and its data.
#[derive(Clone, Copy)]
pub struct EstimatorSpec<'a> {
    pub strategy: Strategy,
    pub forest: &'a Forest,
    pub dataset: &'a Dataset,
    /// Root seed; each subset derives a private stream from it.
    pub seed: u64,
}

impl<'a> EstimatorSpec<'a> {
    pub fn new(strategy: Strategy, forest: &'a Forest, dataset: &'a Dataset, seed: u64) -> Self {
        EstimatorSpec {
            strategy,
            forest,
            dataset,
            seed,
        }
    }

    fn validate(&self, subsets: &[&VarSubset]) -> Result<()> {
        if self.forest.p != self.dataset.p() || self.forest.n != self.dataset.n() {
            return Err(Error::DimensionMismatch(format!(
                "forest fitted on {} x {}, dataset is {} x {}",
                self.forest.n,
                self.forest.p,
                self.dataset.n(),
                self.dataset.p()
            )));
        }
        if let Strategy::Marginal { m } = self.strategy {
            if m == 0 {
                return Err(Error::InvalidParams(
                    "marginal strategy needs at least one replacement draw".into(),
                ));
            }
            if self.dataset.n() < 2 {
                return Err(Error::InvalidParams(
                    "marginal replacement needs at least two rows".into(),
                ));
            }
        }
        for u in subsets {
            if u.p() != self.dataset.p() {
                return Err(Error::DimensionMismatch(format!(
                    "subset over {} variables, dataset has {}",
                    u.p(),
                    self.dataset.p()
                )));
            }
            if u.is_empty() {
                return Err(Error::InvalidParams(
                    "the empty subset has no value estimate".into(),
                ));
            }
        }
        Ok(())
    }
}

/// v(U) under the spec's strategy. The full set short-circuits to the fitted
/// forest's out-of-bag explained variance for every strategy.
pub fn value_of(spec: &EstimatorSpec, u: &VarSubset) -> Result<ValueEstimate> {
    values_of(spec, std::slice::from_ref(u)).map(|v| v[0])
}

/// [`value_of`] over many subsets, in input order. Subsets are independent;
/// marginal and retrain derive a private generator per subset, so the result
/// does not depend on evaluation order.
pub fn values_of(spec: &EstimatorSpec, subsets: &[VarSubset]) -> Result<Vec<ValueEstimate>> {
    let refs: Vec<&VarSubset> = subsets.iter().collect();
    spec.validate(&refs)?;

    let mut full_cache: Option<ValueEstimate> = None;
    let mut full_ev = |forest: &Forest, dataset: &Dataset| -> Result<ValueEstimate> {
        if let Some(v) = full_cache {
            return Ok(v);
        }
        let v = full_set_value(forest, dataset)?;
        full_cache = Some(v);
        Ok(v)
    };

    // Full sets are answered once; the remainder goes to the strategy.
    let mut out: Vec<Option<ValueEstimate>> = vec![None; subsets.len()];
    let mut pending: Vec<(usize, &VarSubset)> = Vec::new();
    for (i, u) in subsets.iter().enumerate() {
        if u.is_full() {
            out[i] = Some(full_ev(spec.forest, spec.dataset)?);
        } else {
            pending.push((i, u));
        }
    }

    let computed: Vec<(usize, Result<ValueEstimate>)> = match spec.strategy {
        Strategy::Prf => {
            let only: Vec<VarSubset> = pending.iter().map(|(_, u)| (*u).clone()).collect();
            let values = estimate_v_batch(spec.forest, spec.dataset, &only)?;
            pending
                .iter()
                .zip(values)
                .map(|(&(i, _), v)| (i, Ok(v)))
                .collect()
        }
        Strategy::Marginal { m } => pending
            .par_iter()
            .map(|&(i, u)| (i, marginal_value(spec, u, m)))
            .collect(),
        Strategy::Retrain => pending
            .par_iter()
            .map(|&(i, u)| (i, retrain_value(spec, u)))
            .collect(),
    };
    for (i, v) in computed {
        out[i] = Some(v?);
    }
    Ok(out.into_iter().map(|v| v.expect("every slot filled")).collect())
}

/// Out-of-bag explained variance of the fitted forest itself.
pub fn full_set_value(forest: &Forest, dataset: &Dataset) -> Result<ValueEstimate> {
    let preds = forest.oob_predict(dataset)?;
    let (value, covered, skipped) = explained_variance(dataset.output(), &preds)?;
    Ok(ValueEstimate {
        value,
        covered,
        skipped,
    })
}

/// Stable per-subset stream path: a tag word followed by the subset bitmask.
fn subset_streams(tag: u64, u: &VarSubset) -> Vec<u64> {
    let words = u.p().div_ceil(64);
    let mut s = vec![0u64; words + 1];
    s[0] = tag;
    for j in u.iter() {
        s[1 + j / 64] |= 1 << (j % 64);
    }
    s
}

/// For each training row, replace the out-of-subset coordinates by those of
/// `m` uniformly drawn other rows (complete joint blocks), average the forest
/// predictions, and score 1 − SSE/SStot against the observed output.
fn marginal_value(spec: &EstimatorSpec, u: &VarSubset, m: usize) -> Result<ValueEstimate> {
    let dataset = spec.dataset;
    let n = dataset.n();
    let mut rng = stream_rng(spec.seed, &subset_streams(MARGINAL_STREAM, u));
    let replaced = u.complement().to_indices();

    let mut preds: Vec<Option<f64>> = Vec::with_capacity(n);
    let mut x = vec![0.0; dataset.p()];
    for i in 0..n {
        let base = dataset.row(i);
        let mut acc = 0.0;
        for _ in 0..m {
            // Uniform over the n − 1 other rows.
            let mut j = rng.gen_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            x.copy_from_slice(&base);
            for &col in &replaced {
                x[col] = dataset.value(j, col);
            }
            acc += spec.forest.predict(&x)?;
        }
        preds.push(Some(acc / m as f64));
    }
    let (value, covered, skipped) = explained_variance(dataset.output(), &preds)?;
    Ok(ValueEstimate {
        value,
        covered,
        skipped,
    })
}

/// Forest parameters for a retrained forest on `u_size` columns: mtry is
/// recomputed as ⌈u_size/3⌉ and depth is capped at [`RETRAIN_DEPTH_CAP`] for
/// subsets of at most [`RETRAIN_CAP_MAX_SUBSET`] variables. An existing
/// stricter depth limit survives.
pub fn retrain_params(base: &ForestParams, u_size: usize) -> ForestParams {
    let mut params = base.clone();
    params.mtry = Some(u_size.div_ceil(3));
    if u_size <= RETRAIN_CAP_MAX_SUBSET {
        params.max_depth = Some(
            params
                .max_depth
                .map_or(RETRAIN_DEPTH_CAP, |d| d.min(RETRAIN_DEPTH_CAP)),
        );
    }
    params
}

/// Fit a fresh forest on the subset's columns alone and return its
/// out-of-bag explained variance.
fn retrain_value(spec: &EstimatorSpec, u: &VarSubset) -> Result<ValueEstimate> {
    let cols = u.to_indices();
    let sub = spec.dataset.select_columns(&cols)?;
    let mut params = retrain_params(&spec.forest.params, cols.len());
    params.seed = derive_seed(spec.seed, &subset_streams(RETRAIN_STREAM, u));
    let fresh = fit(&sub, &params)?;
    full_set_value(&fresh, &sub)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, Experiment, GeneratorSpec, LinearModelParams};
    use crate::projection::estimate_v;

    fn toy_dataset(n: usize, seed: u64) -> Dataset {
        let mut spec = GeneratorSpec::new(Experiment::Custom, n, seed);
        spec.params.linear = Some(LinearModelParams {
            beta: vec![1.0, -0.8, 0.5, 0.0],
            covariance: vec![
                vec![1.0, 0.3, 0.0, 0.0],
                vec![0.3, 1.0, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0],
                vec![0.0, 0.0, 0.0, 1.0],
            ],
        });
        generate(&spec).unwrap()
    }

    fn toy_forest(dataset: &Dataset, trees: usize, seed: u64) -> Forest {
        let params = ForestParams {
            num_trees: trees,
            min_node_size: 3,
            seed,
            ..ForestParams::default()
        };
        fit(dataset, &params).unwrap()
    }

    #[test]
    fn full_set_shortcut_is_the_forest_oob_explained_variance() {
        let data = toy_dataset(120, 5);
        let forest = toy_forest(&data, 12, 9);
        let expected = forest.oob_explained_variance(&data).unwrap();
        let full = VarSubset::full(data.p());
        for strategy in [
            Strategy::Prf,
            Strategy::Marginal { m: 4 },
            Strategy::Retrain,
        ] {
            let spec = EstimatorSpec::new(strategy, &forest, &data, 1);
            let got = value_of(&spec, &full).unwrap();
            assert_eq!(got.value.to_bits(), expected.to_bits(), "{strategy}");
        }
    }

    #[test]
    fn prf_strategy_delegates_to_the_projection_estimator() {
        let data = toy_dataset(150, 6);
        let forest = toy_forest(&data, 10, 2);
        let spec = EstimatorSpec::new(Strategy::Prf, &forest, &data, 0);
        let subsets = [
            VarSubset::new(4, [0]),
            VarSubset::new(4, [1, 2]),
            VarSubset::full(4),
        ];
        let got = values_of(&spec, &subsets).unwrap();
        for (u, v) in subsets.iter().zip(&got) {
            let direct = estimate_v(&forest, &data, u).unwrap();
            assert_eq!(v.value.to_bits(), direct.value.to_bits());
            assert_eq!(v.covered, direct.covered);
        }
    }

    #[test]
    fn marginal_is_deterministic_given_seed_and_draw_count() {
        let data = toy_dataset(90, 7);
        let forest = toy_forest(&data, 8, 3);
        let u = VarSubset::new(4, [0, 2]);
        let spec = EstimatorSpec::new(Strategy::Marginal { m: 6 }, &forest, &data, 42);
        let a = value_of(&spec, &u).unwrap();
        let b = value_of(&spec, &u).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.covered, data.n());
        assert_eq!(a.skipped, 0);

        let reseeded = EstimatorSpec::new(Strategy::Marginal { m: 6 }, &forest, &data, 43);
        let c = value_of(&reseeded, &u).unwrap();
        assert_ne!(a.value.to_bits(), c.value.to_bits());
    }

    #[test]
    fn marginal_result_is_independent_of_batch_order() {
        let data = toy_dataset(80, 8);
        let forest = toy_forest(&data, 8, 4);
        let spec = EstimatorSpec::new(Strategy::Marginal { m: 5 }, &forest, &data, 11);
        let a = VarSubset::new(4, [0]);
        let b = VarSubset::new(4, [1, 3]);
        let forward = values_of(&spec, &[a.clone(), b.clone()]).unwrap();
        let backward = values_of(&spec, &[b, a]).unwrap();
        assert_eq!(forward[0].value.to_bits(), backward[1].value.to_bits());
        assert_eq!(forward[1].value.to_bits(), backward[0].value.to_bits());
    }

    #[test]
    fn every_strategy_stays_at_or_below_one() {
        let data = toy_dataset(100, 9);
        let forest = toy_forest(&data, 10, 5);
        let subsets = [
            VarSubset::new(4, [0]),
            VarSubset::new(4, [3]),
            VarSubset::new(4, [0, 1, 2]),
            VarSubset::full(4),
        ];
        for strategy in [
            Strategy::Prf,
            Strategy::Marginal { m: 3 },
            Strategy::Retrain,
        ] {
            let spec = EstimatorSpec::new(strategy, &forest, &data, 21);
            for v in values_of(&spec, &subsets).unwrap() {
                assert!(v.value <= 1.0, "{strategy}: {}", v.value);
            }
        }
    }

    #[test]
    fn retrain_parameter_rule() {
        let base = ForestParams {
            num_trees: 37,
            min_node_size: 4,
            ..ForestParams::default()
        };
        for (u_size, mtry) in [(1, 1), (2, 1), (3, 1), (4, 2), (6, 2), (15, 5)] {
            let p = retrain_params(&base, u_size);
            assert_eq!(p.mtry, Some(mtry), "u_size {u_size}");
            assert_eq!(p.num_trees, 37);
            assert_eq!(p.min_node_size, 4);
            if u_size <= RETRAIN_CAP_MAX_SUBSET {
                assert_eq!(p.max_depth, Some(RETRAIN_DEPTH_CAP));
            } else {
                assert_eq!(p.max_depth, None);
            }
        }
        let mut shallow = base.clone();
        shallow.max_depth = Some(4);
        assert_eq!(retrain_params(&shallow, 2).max_depth, Some(4));
        assert_eq!(retrain_params(&shallow, 9).max_depth, Some(4));
    }

    #[test]
    fn retrain_values_depend_on_the_subset_stream() {
        let data = toy_dataset(140, 10);
        let forest = toy_forest(&data, 10, 6);
        let spec = EstimatorSpec::new(Strategy::Retrain, &forest, &data, 77);
        let a = value_of(&spec, &VarSubset::new(4, [0, 1])).unwrap();
        let b = value_of(&spec, &VarSubset::new(4, [0, 1])).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        // The informative pair should explain more than the noise column.
        let noise = value_of(&spec, &VarSubset::new(4, [3])).unwrap();
        assert!(a.value > noise.value);
    }

    #[test]
    fn validation_rejects_bad_inputs() {
        let data = toy_dataset(60, 11);
        let forest = toy_forest(&data, 6, 7);
        let zero_draws = EstimatorSpec::new(Strategy::Marginal { m: 0 }, &forest, &data, 0);
        assert!(matches!(
            value_of(&zero_draws, &VarSubset::new(4, [0])),
            Err(Error::InvalidParams(_))
        ));
        let spec = EstimatorSpec::new(Strategy::Prf, &forest, &data, 0);
        assert!(matches!(
            value_of(&spec, &VarSubset::empty(4)),
            Err(Error::InvalidParams(_))
        ));
        assert!(matches!(
            value_of(&spec, &VarSubset::new(6, [0])),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn strategy_round_trips_through_display_and_parse() {
        for (text, strategy) in [
            ("prf", Strategy::Prf),
            ("retrain", Strategy::Retrain),
            ("marginal", Strategy::marginal_default()),
            ("marginal:7", Strategy::Marginal { m: 7 }),
        ] {
            assert_eq!(text.parse::<Strategy>().unwrap(), strategy);
        }
        assert_eq!(Strategy::Marginal { m: 12 }.to_string(), "marginal:12");
        assert!("sage".parse::<Strategy>().is_err());
        assert!("marginal:x".parse::<Strategy>().is_err());
    }
}
