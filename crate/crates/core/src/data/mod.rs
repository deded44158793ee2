//! Regression sample representation, CSV ingestion, categorical encoding,
//! and synthetic benchmark generators.
//!
//! Categorical inputs are turned into ordered variables: categories are ranked
//! by their mean output, so trees can treat every column as numeric.

mod io;
mod synthetic;

pub use io::{load_csv, write_csv};
pub use synthetic::{
    generate, Experiment, GenParams, GeneratorSpec, InteractionParams, LinearModelParams,
    DEFAULT_NOISE_FRACTION, EXP1A_DUMMIES, EXP1B_EXTRA_DUMMIES, EXP1_BASE_DIM, EXP1_DUP_COUNT,
    EXP1_DUP_SOURCE,
};

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Kind of an input column. Categorical columns carry the declared label set.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ColumnKind {
    Continuous,
    /// Declared category labels; must be non-empty and duplicate-free.
    Categorical(Vec<String>),
}

impl ColumnKind {
    pub fn is_categorical(&self) -> bool {
        matches!(self, ColumnKind::Categorical(_))
    }

    fn validate(&self) -> Result<()> {
        if let ColumnKind::Categorical(labels) = self {
            if labels.is_empty() {
                return Err(Error::InvalidParams(
                    "categorical column with empty label set".into(),
                ));
            }
            let mut seen = std::collections::BTreeSet::new();
            for l in labels {
                if !seen.insert(l) {
                    return Err(Error::InvalidParams(format!(
                        "duplicate category label {l:?}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// An immutable regression sample: `n` observations of `p` encoded numeric
/// inputs plus the output vector. Features are stored column-major.
#[derive(Debug, Clone)]
pub struct Dataset {
    columns: Vec<Vec<f64>>,
    output: Vec<f64>,
    kinds: Vec<ColumnKind>,
    names: Vec<String>,
    target_name: String,
    /// For each categorical column: category label -> 0-based rank.
    encoding_maps: Vec<Option<BTreeMap<String, usize>>>,
}

impl Dataset {
    /// Builds a dataset from column-major features. Validates shapes, checks
    /// that no value is NaN, and that categorical values are valid ranks.
    pub fn from_columns(
        columns: Vec<Vec<f64>>,
        output: Vec<f64>,
        kinds: Vec<ColumnKind>,
        names: Vec<String>,
        target_name: String,
        encoding_maps: Vec<Option<BTreeMap<String, usize>>>,
    ) -> Result<Self> {
        let n = output.len();
        let p = columns.len();
        if n == 0 {
            return Err(Error::InvalidParams("empty dataset".into()));
        }
        if kinds.len() != p || names.len() != p || encoding_maps.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "got {p} feature columns but {} kinds, {} names, {} encoding maps",
                kinds.len(),
                names.len(),
                encoding_maps.len()
            )));
        }
        for (j, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "column {j} has {} rows, output has {n}",
                    col.len()
                )));
            }
        }
        if columns
            .iter()
            .flat_map(|c| c.iter())
            .chain(output.iter())
            .any(|v| v.is_nan())
        {
            return Err(Error::NonFinite("NaN in dataset after encoding".into()));
        }
        for (j, kind) in kinds.iter().enumerate() {
            kind.validate()?;
            match (kind, &encoding_maps[j]) {
                (ColumnKind::Categorical(_), Some(map)) => {
                    let ranks: std::collections::BTreeSet<usize> = map.values().copied().collect();
                    for &v in &columns[j] {
                        if v.fract() != 0.0 || v < 0.0 || !ranks.contains(&(v as usize)) {
                            return Err(Error::InvalidParams(format!(
                                "column {j} holds {v} which is not a category rank"
                            )));
                        }
                    }
                }
                (ColumnKind::Categorical(_), None) => {
                    return Err(Error::InvalidParams(format!(
                        "categorical column {j} lacks an encoding map"
                    )));
                }
                (ColumnKind::Continuous, Some(_)) => {
                    return Err(Error::InvalidParams(format!(
                        "continuous column {j} carries an encoding map"
                    )));
                }
                (ColumnKind::Continuous, None) => {}
            }
        }
        Ok(Dataset {
            columns,
            output,
            kinds,
            names,
            target_name,
            encoding_maps,
        })
    }

    /// Convenience constructor for all-continuous data with default names.
    pub fn from_continuous(columns: Vec<Vec<f64>>, output: Vec<f64>) -> Result<Self> {
        let p = columns.len();
        Dataset::from_columns(
            columns,
            output,
            vec![ColumnKind::Continuous; p],
            default_names(p),
            "Y".into(),
            vec![None; p],
        )
    }

    pub fn n(&self) -> usize {
        self.output.len()
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    #[inline]
    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.columns[col][row]
    }

    #[inline]
    pub fn column(&self, col: usize) -> &[f64] {
        &self.columns[col]
    }

    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn kinds(&self) -> &[ColumnKind] {
        &self.kinds
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    pub fn encoding_maps(&self) -> &[Option<BTreeMap<String, usize>>] {
        &self.encoding_maps
    }

    /// Materializes row `i` as a dense vector.
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    /// Builds a new dataset keeping only the given feature columns
    /// (observation order unchanged).
    pub fn select_columns(&self, cols: &[usize]) -> Result<Dataset> {
        for &j in cols {
            if j >= self.p() {
                return Err(Error::DimensionMismatch(format!(
                    "column {j} out of range for p = {}",
                    self.p()
                )));
            }
        }
        Dataset::from_columns(
            cols.iter().map(|&j| self.columns[j].clone()).collect(),
            self.output.clone(),
            cols.iter().map(|&j| self.kinds[j].clone()).collect(),
            cols.iter().map(|&j| self.names[j].clone()).collect(),
            self.target_name.clone(),
            cols.iter().map(|&j| self.encoding_maps[j].clone()).collect(),
        )
    }

    /// Content digest over shapes and raw value bits; used to verify that a
    /// serialized forest is being evaluated against the sample it was fit on.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.n().to_le_bytes());
        h.update(self.p().to_le_bytes());
        for col in &self.columns {
            for v in col {
                h.update(v.to_le_bytes());
            }
        }
        for v in &self.output {
            h.update(v.to_le_bytes());
        }
        let digest = h.finalize();
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}

pub(crate) fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("X{j}")).collect()
}

/// Population variance (divide by n); the convention used everywhere in this
/// crate, matching the explained-variance formulas.
pub fn population_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Encodes category labels as ordered ranks: categories are sorted ascending
/// by the mean output over the rows carrying them, ties broken by
/// lexicographic label, and each label is replaced by its 0-based position in
/// that order.
pub fn encode_categorical(labels: &[String], output: &[f64]) -> (Vec<f64>, BTreeMap<String, usize>) {
    assert_eq!(labels.len(), output.len());
    assert!(!labels.is_empty());
    let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for (l, &y) in labels.iter().zip(output) {
        let e = sums.entry(l.as_str()).or_insert((0.0, 0));
        e.0 += y;
        e.1 += 1;
    }
    let mut order: Vec<(&str, f64)> = sums
        .iter()
        .map(|(&l, &(s, c))| (l, s / c as f64))
        .collect();
    // Sort by mean, then label; BTreeMap iteration already yields labels in
    // lexicographic order, so a stable sort on the mean alone would also do.
    order.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(b.0)));
    let map: BTreeMap<String, usize> = order
        .iter()
        .enumerate()
        .map(|(rank, (l, _))| (l.to_string(), rank))
        .collect();
    let encoded = labels.iter().map(|l| map[l.as_str()] as f64).collect();
    (encoded, map)
}
