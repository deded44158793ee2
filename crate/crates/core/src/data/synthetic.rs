//! Synthetic benchmark generators.
//!
//! Four named experiment families plus a free-form linear-Gaussian model:
//! - `exp1a`: correlated linear-Gaussian model in dimension 11, with two
//!   bit-identical copies of the second variable and two independent dummy
//!   variables appended (p = 15).
//! - `exp1b`: `exp1a` plus 85 further independent dummy variables (p = 100).
//! - `exp2`: two independent 5-variable interaction blocks plus 5 dummies
//!   (p = 15).
//! - `exp3`: two Gaussians plus four uniform categorical variables with
//!   3/3/10/100 levels (p = 6).
//!
//! Noise is calibrated from the analytic signal variance so that
//! V[noise] = noise_fraction * V[output].

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_distr::StandardNormal;

use crate::data::{default_names, encode_categorical, ColumnKind, Dataset};
use crate::error::{Error, Result};

/// Input dimension of the correlated linear block of the `exp1` family.
pub const EXP1_BASE_DIM: usize = 11;
/// 0-based column whose copies are appended in the `exp1` family (X2).
pub const EXP1_DUP_SOURCE: usize = 1;
/// Number of appended copies in the `exp1` family.
pub const EXP1_DUP_COUNT: usize = 2;
/// Independent dummy variables appended by `exp1a`.
pub const EXP1A_DUMMIES: usize = 2;
/// Additional dummy variables appended by `exp1b` on top of `exp1a`.
pub const EXP1B_EXTRA_DUMMIES: usize = 85;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Exp1a,
    Exp1b,
    Exp2,
    Exp3,
    /// Plain linear-Gaussian model taken verbatim from `GenParams::linear`.
    Custom,
}

impl std::fmt::Display for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = match self {
            Experiment::Exp1a => "exp1a",
            Experiment::Exp1b => "exp1b",
            Experiment::Exp2 => "exp2",
            Experiment::Exp3 => "exp3",
            Experiment::Custom => "custom",
        };
        f.write_str(tag)
    }
}

impl std::str::FromStr for Experiment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp1a" => Ok(Experiment::Exp1a),
            "exp1b" => Ok(Experiment::Exp1b),
            "exp2" => Ok(Experiment::Exp2),
            "exp3" => Ok(Experiment::Exp3),
            "custom" => Ok(Experiment::Custom),
            other => Err(Error::Config(format!("unknown experiment tag {other:?}"))),
        }
    }
}

/// Coefficients of a linear-Gaussian model Y = beta' X + noise.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LinearModelParams {
    pub beta: Vec<f64>,
    /// Covariance of the centered Gaussian input vector (row-major).
    pub covariance: Vec<Vec<f64>>,
}

impl LinearModelParams {
    /// Documented default for the `exp1` family: beta descending from 1.0 to
    /// 0.0 by 0.1 over 11 variables, unit variances, and Toeplitz correlation
    /// 0.5^|i-j|.
    pub fn exp1_default() -> Self {
        let beta: Vec<f64> = (0..EXP1_BASE_DIM).map(|j| 1.0 - 0.1 * j as f64).collect();
        let covariance = (0..EXP1_BASE_DIM)
            .map(|i| {
                (0..EXP1_BASE_DIM)
                    .map(|j| 0.5_f64.powi((i as i32 - j as i32).abs()))
                    .collect()
            })
            .collect();
        LinearModelParams { beta, covariance }
    }

    /// Analytic signal variance beta' Sigma beta.
    pub fn signal_variance(&self) -> f64 {
        let p = self.beta.len();
        let mut total = 0.0;
        for i in 0..p {
            for j in 0..p {
                total += self.beta[i] * self.covariance[i][j] * self.beta[j];
            }
        }
        total
    }
}

/// Coefficients of the two-block interaction model
/// Y = a sqrt(alpha) X1 X2 1{X3>0} + b sqrt(alpha) X4 X5 1{X3<0}
///   + c sqrt(beta)  X6 X7 1{X8>0} + d sqrt(beta)  X9 X10 1{X8<0} + noise,
/// with Cov(X1,X2) = Cov(X6,X7) = rho1 and Cov(X4,X5) = Cov(X9,X10) = rho2.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct InteractionParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub alpha: f64,
    pub beta: f64,
    pub rho1: f64,
    pub rho2: f64,
}

impl Default for InteractionParams {
    /// Default coefficients: a sqrt(alpha) = 3 sqrt(3), b sqrt(alpha) = sqrt(3),
    /// c sqrt(beta) = 3, d sqrt(beta) = 1, rho1 = 0.9, rho2 = 0.5.
    fn default() -> Self {
        InteractionParams {
            a: 3.0,
            b: 1.0,
            c: 3.0,
            d: 1.0,
            alpha: 3.0,
            beta: 1.0,
            rho1: 0.9,
            rho2: 0.5,
        }
    }
}

impl InteractionParams {
    /// Variance of the first block's signal before the `alpha` scale.
    pub fn v1(&self) -> f64 {
        block_variance(self.a, self.b, self.rho1, self.rho2)
    }

    /// Variance of the second block's signal before the `beta` scale.
    pub fn v2(&self) -> f64 {
        block_variance(self.c, self.d, self.rho1, self.rho2)
    }

    /// Analytic signal variance alpha V1 + beta V2.
    pub fn signal_variance(&self) -> f64 {
        self.alpha * self.v1() + self.beta * self.v2()
    }
}

fn block_variance(u: f64, v: f64, rho1: f64, rho2: f64) -> f64 {
    let s = u * rho1 - v * rho2;
    s * s / 4.0 + (u * rho1).powi(2) / 2.0 + (v * rho2).powi(2) / 2.0 + u * u / 2.0 + v * v / 2.0
}

/// Experiment-specific coefficients; absent blocks fall back to the
/// documented defaults of the chosen experiment.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct GenParams {
    /// V[noise] / V[output]; `None` means the default 0.05.
    pub noise_fraction: Option<f64>,
    pub linear: Option<LinearModelParams>,
    pub interaction: Option<InteractionParams>,
}

pub const DEFAULT_NOISE_FRACTION: f64 = 0.05;

impl GenParams {
    pub fn noise_fraction(&self) -> f64 {
        self.noise_fraction.unwrap_or(DEFAULT_NOISE_FRACTION)
    }

    pub fn linear_or_default(&self) -> LinearModelParams {
        self.linear.clone().unwrap_or_else(LinearModelParams::exp1_default)
    }

    pub fn interaction_or_default(&self) -> InteractionParams {
        self.interaction.unwrap_or_default()
    }
}

/// A reproducible recipe for one synthetic dataset.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GeneratorSpec {
    pub experiment: Experiment,
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub params: GenParams,
}

impl GeneratorSpec {
    pub fn new(experiment: Experiment, n: usize, seed: u64) -> Self {
        GeneratorSpec {
            experiment,
            n,
            seed,
            params: GenParams::default(),
        }
    }

    /// Parses a TOML document with fields `experiment`, `n`, `seed`, and an
    /// optional `params` table.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_toml_str(&text)
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParams("sample size must be positive".into()));
        }
        let f = self.params.noise_fraction();
        if !(0.0..1.0).contains(&f) {
            return Err(Error::InvalidParams(format!(
                "noise fraction must lie in [0, 1), got {f}"
            )));
        }
        Ok(())
    }

    /// Noise variance implied by the analytic signal variance of this spec:
    /// V[noise] = fraction / (1 - fraction) * V[signal].
    pub fn noise_variance(&self) -> f64 {
        let f = self.params.noise_fraction();
        let signal = match self.experiment {
            Experiment::Exp1a | Experiment::Exp1b | Experiment::Custom => {
                self.params.linear_or_default().signal_variance()
            }
            Experiment::Exp2 => self.params.interaction_or_default().signal_variance(),
            // X1 1{X3=a} + X2 1{X3=b} with unit normals and three uniform
            // levels: V = 1/3 + 1/3.
            Experiment::Exp3 => 2.0 / 3.0,
        };
        signal * f / (1.0 - f)
    }
}

/// Draws the dataset described by `spec`. Deterministic given the seed.
pub fn generate(spec: &GeneratorSpec) -> Result<Dataset> {
    spec.validate()?;
    match spec.experiment {
        Experiment::Exp1a => generate_linear_family(spec, EXP1A_DUMMIES),
        Experiment::Exp1b => generate_linear_family(spec, EXP1A_DUMMIES + EXP1B_EXTRA_DUMMIES),
        Experiment::Exp2 => generate_interaction(spec),
        Experiment::Exp3 => generate_categorical(spec),
        Experiment::Custom => generate_custom(spec),
    }
}

/// Lower Cholesky factor of a covariance given as nested rows.
fn cholesky_factor(cov: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let p = cov.len();
    for (i, row) in cov.iter().enumerate() {
        if row.len() != p {
            return Err(Error::InvalidParams(format!(
                "covariance row {i} has length {}, expected {p}",
                row.len()
            )));
        }
        for j in 0..p {
            if (cov[i][j] - cov[j][i]).abs() > 1e-12 {
                return Err(Error::NotPositiveDefinite(format!(
                    ": asymmetric at ({i},{j})"
                )));
            }
        }
    }
    let m = DMatrix::from_fn(p, p, |i, j| cov[i][j]);
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(String::new()))?;
    Ok(chol.l())
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Correlated Gaussian rows: per observation, draw i.i.d. standard normals
/// and apply the Cholesky factor. Row-major draw order fixes the stream.
fn gaussian_block(rng: &mut ChaCha8Rng, l: &DMatrix<f64>, n: usize) -> Vec<Vec<f64>> {
    let p = l.nrows();
    let mut columns = vec![vec![0.0; n]; p];
    let mut z = vec![0.0; p];
    for i in 0..n {
        for zj in z.iter_mut() {
            *zj = standard_normal(rng);
        }
        for r in 0..p {
            let mut acc = 0.0;
            for c in 0..=r {
                acc += l[(r, c)] * z[c];
            }
            columns[r][i] = acc;
        }
    }
    columns
}

fn generate_linear_family(spec: &GeneratorSpec, dummies: usize) -> Result<Dataset> {
    let model = spec.params.linear_or_default();
    if model.beta.len() != EXP1_BASE_DIM || model.covariance.len() != EXP1_BASE_DIM {
        return Err(Error::InvalidParams(format!(
            "the exp1 family requires beta and covariance of dimension {EXP1_BASE_DIM}"
        )));
    }
    let l = cholesky_factor(&model.covariance)?;
    let sigma_eps = spec.noise_variance().sqrt();
    let n = spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut columns = gaussian_block(&mut rng, &l, n);
    // Copies of the designated source column, bit-identical.
    for _ in 0..EXP1_DUP_COUNT {
        columns.push(columns[EXP1_DUP_SOURCE].clone());
    }
    for _ in 0..dummies {
        columns.push((0..n).map(|_| standard_normal(&mut rng)).collect());
    }
    let output = (0..n)
        .map(|i| {
            let signal: f64 = (0..EXP1_BASE_DIM).map(|j| model.beta[j] * columns[j][i]).sum();
            signal + sigma_eps * standard_normal(&mut rng)
        })
        .collect();
    Dataset::from_continuous(columns, output)
}

fn generate_custom(spec: &GeneratorSpec) -> Result<Dataset> {
    let model = spec
        .params
        .linear
        .as_ref()
        .ok_or_else(|| Error::InvalidParams("custom experiment requires linear params".into()))?;
    if model.beta.len() != model.covariance.len() {
        return Err(Error::DimensionMismatch(format!(
            "beta has length {}, covariance is {}x{}",
            model.beta.len(),
            model.covariance.len(),
            model.covariance.len()
        )));
    }
    let l = cholesky_factor(&model.covariance)?;
    let sigma_eps = spec.noise_variance().sqrt();
    let n = spec.n;
    let p = model.beta.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let columns = gaussian_block(&mut rng, &l, n);
    let output = (0..n)
        .map(|i| {
            let signal: f64 = (0..p).map(|j| model.beta[j] * columns[j][i]).sum();
            signal + sigma_eps * standard_normal(&mut rng)
        })
        .collect();
    Dataset::from_continuous(columns, output)
}

/// Input dimension of the interaction experiment before dummies.
const EXP2_BLOCK_DIM: usize = 10;
const EXP2_DUMMIES: usize = 5;

fn generate_interaction(spec: &GeneratorSpec) -> Result<Dataset> {
    let m = spec.params.interaction_or_default();
    for (name, rho) in [("rho1", m.rho1), ("rho2", m.rho2)] {
        if rho.abs() >= 1.0 {
            return Err(Error::InvalidParams(format!("|{name}| must be < 1, got {rho}")));
        }
    }
    // Unit variances; correlated pairs (X1,X2), (X6,X7) at rho1 and
    // (X4,X5), (X9,X10) at rho2; X3 and X8 independent.
    let mut cov = vec![vec![0.0; EXP2_BLOCK_DIM]; EXP2_BLOCK_DIM];
    for (i, row) in cov.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for (i, j, rho) in [(0, 1, m.rho1), (3, 4, m.rho2), (5, 6, m.rho1), (8, 9, m.rho2)] {
        cov[i][j] = rho;
        cov[j][i] = rho;
    }
    let l = cholesky_factor(&cov)?;
    let sigma_eps = spec.noise_variance().sqrt();
    let n = spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut columns = gaussian_block(&mut rng, &l, n);
    for _ in 0..EXP2_DUMMIES {
        columns.push((0..n).map(|_| standard_normal(&mut rng)).collect());
    }
    let (ca, cb) = (m.a * m.alpha.sqrt(), m.b * m.alpha.sqrt());
    let (cc, cd) = (m.c * m.beta.sqrt(), m.d * m.beta.sqrt());
    let output = (0..n)
        .map(|i| {
            let x = |j: usize| columns[j][i];
            let mut y = 0.0;
            if x(2) > 0.0 {
                y += ca * x(0) * x(1);
            } else if x(2) < 0.0 {
                y += cb * x(3) * x(4);
            }
            if x(7) > 0.0 {
                y += cc * x(5) * x(6);
            } else if x(7) < 0.0 {
                y += cd * x(8) * x(9);
            }
            y + sigma_eps * standard_normal(&mut rng)
        })
        .collect();
    Dataset::from_continuous(columns, output)
}

const EXP3_LEVELS: [usize; 4] = [3, 3, 10, 100];

fn exp3_labels(levels: usize) -> Vec<String> {
    if levels == 3 {
        vec!["a".into(), "b".into(), "c".into()]
    } else {
        let width = (levels as f64).log10().ceil() as usize;
        (0..levels).map(|k| format!("c{k:0width$}")).collect()
    }
}

fn generate_categorical(spec: &GeneratorSpec) -> Result<Dataset> {
    let n = spec.n;
    let sigma_eps = spec.noise_variance().sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let level_sets: Vec<Vec<String>> = EXP3_LEVELS.iter().map(|&l| exp3_labels(l)).collect();
    let mut x1 = Vec::with_capacity(n);
    let mut x2 = Vec::with_capacity(n);
    let mut labels: Vec<Vec<String>> = vec![Vec::with_capacity(n); EXP3_LEVELS.len()];
    let mut output = Vec::with_capacity(n);
    for _ in 0..n {
        let a = standard_normal(&mut rng);
        let b = standard_normal(&mut rng);
        x1.push(a);
        x2.push(b);
        for (k, set) in level_sets.iter().enumerate() {
            let idx = rng.gen_range(0..set.len());
            labels[k].push(set[idx].clone());
        }
        let switch = labels[0].last().unwrap().as_str();
        let signal = match switch {
            "a" => a,
            "b" => b,
            _ => 0.0,
        };
        output.push(signal + sigma_eps * standard_normal(&mut rng));
    }

    let mut columns = vec![x1, x2];
    let mut kinds = vec![ColumnKind::Continuous, ColumnKind::Continuous];
    let mut maps: Vec<Option<std::collections::BTreeMap<String, usize>>> = vec![None, None];
    for (k, set) in level_sets.iter().enumerate() {
        let (encoded, map) = encode_categorical(&labels[k], &output);
        columns.push(encoded);
        kinds.push(ColumnKind::Categorical(set.clone()));
        maps.push(Some(map));
    }
    let p = columns.len();
    Dataset::from_columns(columns, output, kinds, default_names(p), "Y".into(), maps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empirical_cov(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (
            a.iter().sum::<f64>() / n,
            b.iter().sum::<f64>() / n,
        );
        a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n
    }

    #[test]
    fn interaction_pairs_have_declared_covariance() {
        let spec = GeneratorSpec::new(Experiment::Exp2, 10_000, 41);
        let ds = generate(&spec).unwrap();
        assert_eq!(ds.p(), 15);
        assert!((empirical_cov(ds.column(0), ds.column(1)) - 0.9).abs() < 0.03);
        assert!((empirical_cov(ds.column(5), ds.column(6)) - 0.9).abs() < 0.03);
        assert!((empirical_cov(ds.column(3), ds.column(4)) - 0.5).abs() < 0.03);
    }

    #[test]
    fn generation_is_deterministic() {
        for exp in [Experiment::Exp1a, Experiment::Exp2, Experiment::Exp3] {
            let spec = GeneratorSpec::new(exp, 300, 7);
            let a = generate(&spec).unwrap();
            let b = generate(&spec).unwrap();
            assert_eq!(a.fingerprint(), b.fingerprint(), "{exp}");
        }
    }

    #[test]
    fn linear_family_noise_share_matches_target() {
        let spec = GeneratorSpec::new(Experiment::Exp1a, 30_000, 11);
        let ds = generate(&spec).unwrap();
        let model = spec.params.linear_or_default();
        // Empirical V[Y] against analytic V[signal] + noise.
        let vy = crate::data::population_variance(ds.output());
        let expected = model.signal_variance() + spec.noise_variance();
        assert!((vy / expected - 1.0).abs() < 0.05, "V[Y] = {vy}, expected {expected}");
        let frac = spec.noise_variance() / expected;
        assert!((frac - 0.05).abs() < 0.01);
    }

    #[test]
    fn duplicated_columns_are_bit_identical() {
        let spec = GeneratorSpec::new(Experiment::Exp1a, 500, 3);
        let ds = generate(&spec).unwrap();
        for copy in 0..EXP1_DUP_COUNT {
            let j = EXP1_BASE_DIM + copy;
            for i in 0..ds.n() {
                assert_eq!(
                    ds.value(i, EXP1_DUP_SOURCE).to_bits(),
                    ds.value(i, j).to_bits()
                );
            }
        }
    }

    #[test]
    fn exp1b_has_dimension_100() {
        let spec = GeneratorSpec::new(Experiment::Exp1b, 50, 5);
        assert_eq!(generate(&spec).unwrap().p(), 100);
    }

    #[test]
    fn exp3_round_trips_through_csv() {
        let spec = GeneratorSpec::new(Experiment::Exp3, 400, 13);
        let ds = generate(&spec).unwrap();
        assert_eq!(ds.p(), 6);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp3.csv");
        crate::data::write_csv(&ds, &path).unwrap();
        let back = crate::data::load_csv(&path, ds.kinds(), "Y").unwrap();
        for j in 0..ds.p() {
            for i in 0..ds.n() {
                assert_eq!(ds.value(i, j).to_bits(), back.value(i, j).to_bits(), "col {j} row {i}");
            }
        }
    }

    #[test]
    fn toeplitz_covariance_converges_with_n() {
        let spec = GeneratorSpec::new(Experiment::Exp1a, 100_000, 99);
        let ds = generate(&spec).unwrap();
        // 3-sigma band for the empirical covariance of correlated unit
        // normals: Var[x y] = 1 + rho^2 over n draws.
        for (i, j, rho) in [(0usize, 1usize, 0.5), (0, 2, 0.25), (4, 4, 1.0)] {
            let c = empirical_cov(ds.column(i), ds.column(j));
            let sd = ((1.0 + rho * rho) / ds.n() as f64).sqrt();
            assert!(
                (c - rho).abs() < 3.0 * sd + 1e-3,
                "cov({i},{j}) = {c}, want {rho} within {}",
                3.0 * sd
            );
        }
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let mut spec = GeneratorSpec::new(Experiment::Exp2, 1234, 99);
        spec.params.noise_fraction = Some(0.1);
        let text = spec.to_toml_string().unwrap();
        let back = GeneratorSpec::from_toml_str(&text).unwrap();
        assert_eq!(spec, back);
    }

    #[test]
    fn unknown_experiment_tag_is_rejected() {
        let err = GeneratorSpec::from_toml_str("experiment = \"exp9\"\nn = 10\nseed = 1\n");
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn non_pd_covariance_is_rejected() {
        let mut spec = GeneratorSpec::new(Experiment::Custom, 10, 1);
        spec.params.linear = Some(LinearModelParams {
            beta: vec![1.0, 1.0],
            covariance: vec![vec![1.0, 2.0], vec![2.0, 1.0]],
        });
        assert!(matches!(generate(&spec), Err(Error::NotPositiveDefinite(_))));
    }
}
