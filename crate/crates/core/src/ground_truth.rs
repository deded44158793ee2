//! Analytic Shapley-effect oracles for the synthetic benchmark families.
//!
//! Two model families admit closed forms: linear-Gaussian models (optionally
//! with bit-identical copies of one variable appended) and the two-block
//! interaction model. Both also expose the underlying value function v*(U),
//! the fraction of output variance explained by a subset, so estimators can
//! be validated subset by subset.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::combinatorics::binomial;
use crate::data::{
    Experiment, GeneratorSpec, EXP1A_DUMMIES, EXP1B_EXTRA_DUMMIES, EXP1_DUP_COUNT, EXP1_DUP_SOURCE,
};
use crate::error::{Error, Result};
use crate::subsets::VarSubset;

/// Largest base dimension the subset enumeration accepts.
pub const MAX_ENUM_DIM: usize = 20;
/// Conditional variances at or below this are treated as exact determinism.
const VAR_FLOOR: f64 = 1e-12;

/// Bit-identical copies of one model variable appended after the base block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Duplication {
    /// 0-based index of the copied variable in the base block.
    pub source: usize,
    pub copies: usize,
}

/// Y = beta' X + noise with centered Gaussian X; copies, when present, sit
/// after the base block and never enter the response on their own.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianModel {
    pub beta: Vec<f64>,
    /// Covariance of the base block, row-major.
    pub sigma: Vec<Vec<f64>>,
    pub noise_var: f64,
    pub duplication: Option<Duplication>,
}

impl LinearGaussianModel {
    pub fn new(beta: Vec<f64>, sigma: Vec<Vec<f64>>, noise_var: f64) -> Self {
        LinearGaussianModel {
            beta,
            sigma,
            noise_var,
            duplication: None,
        }
    }

    pub fn with_duplication(mut self, source: usize, copies: usize) -> Self {
        self.duplication = Some(Duplication { source, copies });
        self
    }

    /// Base dimension, copies excluded.
    pub fn base_dim(&self) -> usize {
        self.beta.len()
    }

    /// Dimension of the modeled input vector, copies included.
    pub fn full_dim(&self) -> usize {
        self.base_dim() + self.duplication.map_or(0, |d| d.copies)
    }

    /// Signal variance beta' Sigma beta.
    pub fn signal_variance(&self) -> f64 {
        let p = self.base_dim();
        let mut total = 0.0;
        for i in 0..p {
            for j in 0..p {
                total += self.beta[i] * self.sigma[i][j] * self.beta[j];
            }
        }
        total
    }

    /// V[Y] = beta' Sigma beta + noise variance.
    pub fn total_variance(&self) -> f64 {
        self.signal_variance() + self.noise_var
    }

    fn validate(&self) -> Result<()> {
        let p = self.base_dim();
        if p == 0 {
            return Err(Error::InvalidParams("model has no variables".into()));
        }
        if self.sigma.len() != p || self.sigma.iter().any(|row| row.len() != p) {
            return Err(Error::DimensionMismatch(format!(
                "beta has length {p} but sigma is not {p}x{p}"
            )));
        }
        for i in 0..p {
            for j in 0..i {
                if (self.sigma[i][j] - self.sigma[j][i]).abs() > 1e-12 {
                    return Err(Error::NotPositiveDefinite(format!(
                        ": asymmetric at ({i},{j})"
                    )));
                }
            }
        }
        if self.noise_var < 0.0 {
            return Err(Error::InvalidParams(format!(
                "noise variance must be nonnegative, got {}",
                self.noise_var
            )));
        }
        if let Some(d) = self.duplication {
            if d.source >= p {
                return Err(Error::InvalidParams(format!(
                    "duplication source {} out of range for {p} variables",
                    d.source
                )));
            }
            if d.copies == 0 {
                return Err(Error::InvalidParams(
                    "duplication must add at least one copy".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Covariance of the `rest` block conditional on the `cond` coordinates:
/// the Schur complement Sigma_rr − Sigma_rc Sigma_cc^{-1} Sigma_cr.
fn conditional_cov(sigma: &DMatrix<f64>, cond: &[usize], rest: &[usize]) -> Result<DMatrix<f64>> {
    let sigma_rr = DMatrix::from_fn(rest.len(), rest.len(), |i, j| sigma[(rest[i], rest[j])]);
    if cond.is_empty() {
        return Ok(sigma_rr);
    }
    let sigma_cc = DMatrix::from_fn(cond.len(), cond.len(), |i, j| sigma[(cond[i], cond[j])]);
    let sigma_cr = DMatrix::from_fn(cond.len(), rest.len(), |i, j| sigma[(cond[i], rest[j])]);
    let chol = sigma_cc
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(format!(" on the subset {cond:?}")))?;
    let solved = chol.solve(&sigma_cr);
    Ok(sigma_rr - sigma_cr.transpose() * solved)
}

/// Variance-unit gain of adding each out-of-subset variable j to the
/// conditioning set: Cov[X_j, beta_rest' X_rest | X_cond]² / V[X_j | X_cond],
/// indexed like `rest`. Zero when the subset already determines X_j.
fn variance_increments(
    sigma: &DMatrix<f64>,
    beta: &[f64],
    cond: &[usize],
    rest: &[usize],
) -> Result<Vec<f64>> {
    let c = conditional_cov(sigma, cond, rest)?;
    let mut out = vec![0.0; rest.len()];
    for (t, inc) in out.iter_mut().enumerate() {
        let c_tt = c[(t, t)];
        if c_tt <= VAR_FLOOR {
            continue;
        }
        let mut cov = 0.0;
        for (s, &j) in rest.iter().enumerate() {
            cov += c[(t, s)] * beta[j];
        }
        *inc = cov * cov / c_tt;
    }
    Ok(out)
}

/// Exact Shapley effects of the linear-Gaussian model, copies included.
///
/// The result has `full_dim()` entries: adjusted base effects followed by one
/// identical entry per copy. Independent zero-coefficient variables get
/// exactly zero, and the vector sums to the explained-variance fraction
/// 1 − noise_var/V[Y].
pub fn linear_gaussian_shapley(model: &LinearGaussianModel) -> Result<Vec<f64>> {
    model.validate()?;
    let p = model.base_dim();
    if p > MAX_ENUM_DIM {
        return Err(Error::EnumerationTooLarge {
            p,
            max: MAX_ENUM_DIM,
        });
    }
    let vy = model.total_variance();
    if vy <= 0.0 {
        return Err(Error::ConstantOutput);
    }
    let sigma = DMatrix::from_fn(p, p, |i, j| model.sigma[i][j]);
    // Positive definiteness of the full matrix covers every principal
    // submatrix met during the subset sweep.
    sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(String::new()))?;

    // Subset weights. Without copies the classical 1/C(p−1,s) applies. With r
    // copies the permutation average runs over p+r players, and subsets
    // containing the source or a copy collapse onto the same conditioning
    // set; collecting the collapsed terms gives, for a base conditioning set
    // of size s, weight inv_cn[s] when the source is absent and omega_in[s]
    // when it is present.
    let (players, dup) = match model.duplication {
        Some(d) => (p + d.copies, Some(d)),
        None => (p, None),
    };
    let inv_cn: Vec<f64> = (0..players)
        .map(|s| 1.0 / binomial(players - 1, s))
        .collect();
    // Conditioning sets that leave some variable outside have size at most
    // p − 1, which keeps s + copies within the weight table.
    let omega_in: Vec<f64> = match dup {
        Some(d) => (0..p)
            .map(|s| {
                if s == 0 {
                    return 0.0;
                }
                let mut w = 0.0;
                for l in 0..=d.copies {
                    w += binomial(d.copies, l) * inv_cn[s + l];
                    if l >= 1 {
                        w += binomial(d.copies, l) * inv_cn[s + l - 1];
                    }
                }
                w
            })
            .collect(),
        None => Vec::new(),
    };

    let mut acc = vec![0.0; p];
    let mut cond = Vec::with_capacity(p);
    let mut rest = Vec::with_capacity(p);
    for mask in 0..(1_usize << p) {
        cond.clear();
        rest.clear();
        for j in 0..p {
            if mask >> j & 1 == 1 {
                cond.push(j);
            } else {
                rest.push(j);
            }
        }
        if rest.is_empty() {
            continue;
        }
        let incs = variance_increments(&sigma, &model.beta, &cond, &rest)?;
        let s = cond.len();
        for (t, &j) in rest.iter().enumerate() {
            let weight = match dup {
                None => inv_cn[s],
                Some(d) => {
                    if j == d.source {
                        // Subsets containing a copy contribute nothing to the
                        // source, so only copy-free subsets remain.
                        inv_cn[s]
                    } else if mask >> d.source & 1 == 1 {
                        omega_in[s]
                    } else {
                        inv_cn[s]
                    }
                }
            };
            acc[j] += weight * incs[t];
        }
    }

    let scale = 1.0 / (players as f64 * vy);
    let mut effects: Vec<f64> = acc.iter().map(|a| a * scale).collect();
    if let Some(d) = dup {
        let source_effect = effects[d.source];
        effects.extend(std::iter::repeat(source_effect).take(d.copies));
    }
    Ok(effects)
}

/// Exact v*(U) = V[E[Y|X_U]]/V[Y] for the linear-Gaussian model. `u` indexes
/// the `full_dim()` layout; copies condition exactly like their source.
pub fn linear_v_star(model: &LinearGaussianModel, u: &VarSubset) -> Result<f64> {
    model.validate()?;
    let p = model.base_dim();
    if u.p() != model.full_dim() {
        return Err(Error::DimensionMismatch(format!(
            "subset over {} variables, model has {}",
            u.p(),
            model.full_dim()
        )));
    }
    let vy = model.total_variance();
    if vy <= 0.0 {
        return Err(Error::ConstantOutput);
    }
    let mut in_cond = vec![false; p];
    for j in u.iter() {
        let base = if j < p {
            j
        } else {
            model.duplication.expect("copies imply duplication").source
        };
        in_cond[base] = true;
    }
    let cond: Vec<usize> = (0..p).filter(|&j| in_cond[j]).collect();
    let rest: Vec<usize> = (0..p).filter(|&j| !in_cond[j]).collect();
    let sigma = DMatrix::from_fn(p, p, |i, j| model.sigma[i][j]);
    sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(String::new()))?;
    let c = conditional_cov(&sigma, &cond, &rest)?;
    let mut residual = 0.0;
    for (s, &i) in rest.iter().enumerate() {
        for (t, &j) in rest.iter().enumerate() {
            residual += model.beta[i] * c[(s, t)] * model.beta[j];
        }
    }
    Ok((model.signal_variance() - residual) / vy)
}

/// The linear-Gaussian model behind an `exp1a`/`exp1b` generator spec.
pub fn exp1_model(spec: &GeneratorSpec) -> Result<LinearGaussianModel> {
    if !matches!(spec.experiment, Experiment::Exp1a | Experiment::Exp1b) {
        return Err(Error::InvalidParams(format!(
            "expected an exp1-family spec, got {}",
            spec.experiment
        )));
    }
    let linear = spec.params.linear_or_default();
    Ok(LinearGaussianModel {
        beta: linear.beta,
        sigma: linear.covariance,
        noise_var: spec.noise_variance(),
        duplication: Some(Duplication {
            source: EXP1_DUP_SOURCE,
            copies: EXP1_DUP_COUNT,
        }),
    })
}

/// Ground-truth effects aligned with the generated column order of the exp1
/// family: base block, copies, then exact zeros for the dummy variables.
pub fn exp1_ground_truth(spec: &GeneratorSpec) -> Result<Vec<f64>> {
    let dummies = match spec.experiment {
        Experiment::Exp1a => EXP1A_DUMMIES,
        Experiment::Exp1b => EXP1A_DUMMIES + EXP1B_EXTRA_DUMMIES,
        other => {
            return Err(Error::InvalidParams(format!(
                "expected an exp1-family spec, got {other}"
            )))
        }
    };
    let mut effects = linear_gaussian_shapley(&exp1_model(spec)?)?;
    effects.extend(std::iter::repeat(0.0).take(dummies));
    Ok(effects)
}

/// Exact v*(U) for an exp1-family dataset layout; dummy columns carry no
/// signal and drop out of the conditioning set.
pub fn exp1_v_star(spec: &GeneratorSpec, u: &VarSubset) -> Result<f64> {
    let model = exp1_model(spec)?;
    let modeled = model.full_dim();
    let reduced = VarSubset::new(modeled, u.iter().filter(|&j| j < modeled));
    linear_v_star(&model, &reduced)
}

/// The two-block interaction model:
/// Y = √alpha (a X1 X2 1{X3>0} + b X4 X5 1{X3<0})
///   + √beta  (c X6 X7 1{X8>0} + d X9 X10 1{X8<0}) + noise,
/// with pair correlations rho1 for (X1,X2), (X6,X7) and rho2 for (X4,X5),
/// (X9,X10), plus five independent dummy variables.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Exp2Model {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub alpha: f64,
    pub beta: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub noise_var: f64,
}

/// Input dimension of the interaction experiment's datasets.
pub const EXP2_DIM: usize = 15;

impl Exp2Model {
    /// The model behind an `exp2` generator spec, noise variance included.
    pub fn from_spec(spec: &GeneratorSpec) -> Result<Self> {
        if spec.experiment != Experiment::Exp2 {
            return Err(Error::InvalidParams(format!(
                "expected an exp2 spec, got {}",
                spec.experiment
            )));
        }
        let p = spec.params.interaction_or_default();
        let model = Exp2Model {
            a: p.a,
            b: p.b,
            c: p.c,
            d: p.d,
            alpha: p.alpha,
            beta: p.beta,
            rho1: p.rho1,
            rho2: p.rho2,
            noise_var: spec.noise_variance(),
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        for (name, rho) in [("rho1", self.rho1), ("rho2", self.rho2)] {
            if rho.abs() >= 1.0 {
                return Err(Error::InvalidParams(format!(
                    "|{name}| must be < 1, got {rho}"
                )));
            }
        }
        if self.noise_var < 0.0 {
            return Err(Error::InvalidParams(format!(
                "noise variance must be nonnegative, got {}",
                self.noise_var
            )));
        }
        Ok(())
    }

    /// Signal variance of the first block before the alpha scale.
    pub fn v1(&self) -> f64 {
        unscaled_block_variance(self.a, self.b, self.rho1, self.rho2)
    }

    /// Signal variance of the second block before the beta scale.
    pub fn v2(&self) -> f64 {
        unscaled_block_variance(self.c, self.d, self.rho1, self.rho2)
    }

    /// V[Y] = alpha V1 + beta V2 + noise variance.
    pub fn total_variance(&self) -> f64 {
        self.alpha * self.v1() + self.beta * self.v2() + self.noise_var
    }
}

fn unscaled_block_variance(u: f64, v: f64, rho1: f64, rho2: f64) -> f64 {
    let s = u * rho1 - v * rho2;
    s * s / 4.0 + (u * rho1).powi(2) / 2.0 + (v * rho2).powi(2) / 2.0 + u * u / 2.0 + v * v / 2.0
}

/// Exact Shapley effects of the interaction model, in dataset column order
/// (ten block variables, then five exact zeros).
pub fn exp2_shapley(model: &Exp2Model) -> Result<Vec<f64>> {
    model.validate()?;
    let d_total = model.total_variance();
    if d_total <= 0.0 {
        return Err(Error::ConstantOutput);
    }
    let block = |scale: f64, u: f64, v: f64, rho1: f64, rho2: f64| -> (f64, f64, f64) {
        let ur = u * rho1;
        let vr = v * rho2;
        let pair_u = scale / d_total * (ur * ur / 8.0 + 5.0 / 24.0 * u * u);
        let switch = scale / d_total
            * ((ur - vr).powi(2) / 4.0 + ur * ur / 4.0 + vr * vr / 4.0 + u * u / 12.0
                + v * v / 12.0);
        let pair_v = scale / d_total * (vr * vr / 8.0 + 5.0 / 24.0 * v * v);
        (pair_u, switch, pair_v)
    };
    let (s1, s3, s4) = block(model.alpha, model.a, model.b, model.rho1, model.rho2);
    let (s6, s8, s9) = block(model.beta, model.c, model.d, model.rho1, model.rho2);
    let mut effects = vec![s1, s1, s3, s4, s4, s6, s6, s8, s9, s9];
    effects.extend(std::iter::repeat(0.0).take(EXP2_DIM - effects.len()));
    Ok(effects)
}

/// Conditional second moments of one interaction block given which of its
/// five variables are observed; variables are block-local (pair u = {0,1},
/// switch = 2, pair v = {3,4}).
fn block_value(u: f64, v: f64, rho1: f64, rho2: f64, observed: [bool; 5]) -> f64 {
    let pair_moment = |rho: f64, first: bool, second: bool| -> f64 {
        match (first, second) {
            (true, true) => 1.0 + 2.0 * rho * rho,
            (false, false) => rho * rho,
            _ => 3.0 * rho * rho,
        }
    };
    let eh_u = pair_moment(rho1, observed[0], observed[1]);
    let eh_v = pair_moment(rho2, observed[3], observed[4]);
    let (et2, etu) = if observed[2] { (0.5, 0.0) } else { (0.25, 0.25) };
    let mean = (u * rho1 + v * rho2) / 2.0;
    u * u * eh_u * et2 + v * v * eh_v * et2 + 2.0 * u * v * rho1 * rho2 * etu - mean * mean
}

/// Exact v*(U) for the interaction model; `u` indexes the 15-column dataset
/// layout and dummy columns drop out.
pub fn exp2_v_star(model: &Exp2Model, u: &VarSubset) -> Result<f64> {
    model.validate()?;
    if u.p() != EXP2_DIM {
        return Err(Error::DimensionMismatch(format!(
            "subset over {} variables, the interaction model has {EXP2_DIM}",
            u.p()
        )));
    }
    let d_total = model.total_variance();
    if d_total <= 0.0 {
        return Err(Error::ConstantOutput);
    }
    let mut observed = [false; 10];
    for j in u.iter().filter(|&j| j < 10) {
        observed[j] = true;
    }
    let g1 = block_value(
        model.a,
        model.b,
        model.rho1,
        model.rho2,
        observed[..5].try_into().expect("five entries"),
    );
    let g2 = block_value(
        model.c,
        model.d,
        model.rho1,
        model.rho2,
        observed[5..].try_into().expect("five entries"),
    );
    Ok((model.alpha * g1 + model.beta * g2) / d_total)
}

/// Monte-Carlo v*(U) for the interaction model: outer draws of the observed
/// coordinates, closed-form conditional expectation inside. Returns the
/// estimate and the standard error of the variance estimate.
pub fn exp2_numeric_v_star(
    model: &Exp2Model,
    u: &VarSubset,
    budget: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    model.validate()?;
    if u.p() != EXP2_DIM {
        return Err(Error::DimensionMismatch(format!(
            "subset over {} variables, the interaction model has {EXP2_DIM}",
            u.p()
        )));
    }
    if budget < 10_000 {
        return Err(Error::InvalidParams(format!(
            "Monte-Carlo budget must be at least 10000, got {budget}"
        )));
    }
    let d_total = model.total_variance();
    if d_total <= 0.0 {
        return Err(Error::ConstantOutput);
    }
    let mut observed = [false; 10];
    for j in u.iter().filter(|&j| j < 10) {
        observed[j] = true;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { rng.sample(StandardNormal) };

    // Conditional mean of one block signal given the observed coordinates.
    let block_mean = |x: &[f64; 5], obs: &[bool; 5], u_c: f64, v_c: f64, r1: f64, r2: f64| -> f64 {
        let pair_mean = |a: f64, b: f64, rho: f64, first: bool, second: bool| -> f64 {
            match (first, second) {
                (true, true) => a * b,
                (true, false) => rho * a * a,
                (false, true) => rho * b * b,
                (false, false) => rho,
            }
        };
        let h_u = pair_mean(x[0], x[1], r1, obs[0], obs[1]);
        let h_v = pair_mean(x[3], x[4], r2, obs[3], obs[4]);
        let (t, w) = if obs[2] {
            (
                if x[2] > 0.0 { 1.0 } else { 0.0 },
                if x[2] < 0.0 { 1.0 } else { 0.0 },
            )
        } else {
            (0.5, 0.5)
        };
        u_c * h_u * t + v_c * h_v * w
    };

    let mut samples = Vec::with_capacity(budget);
    let (sa, sb) = (model.alpha.sqrt(), model.beta.sqrt());
    let c1 = (1.0 - model.rho1 * model.rho1).sqrt();
    let c2 = (1.0 - model.rho2 * model.rho2).sqrt();
    for _ in 0..budget {
        let mut x = [0.0; 10];
        for pair_start in [0usize, 5] {
            let z = normal();
            x[pair_start] = z;
            x[pair_start + 1] = model.rho1 * z + c1 * normal();
            x[pair_start + 2] = normal();
            let z = normal();
            x[pair_start + 3] = z;
            x[pair_start + 4] = model.rho2 * z + c2 * normal();
        }
        let b1: [f64; 5] = x[..5].try_into().expect("five entries");
        let b2: [f64; 5] = x[5..].try_into().expect("five entries");
        let o1: [bool; 5] = observed[..5].try_into().expect("five entries");
        let o2: [bool; 5] = observed[5..].try_into().expect("five entries");
        let m = sa * block_mean(&b1, &o1, model.a, model.b, model.rho1, model.rho2)
            + sb * block_mean(&b2, &o2, model.c, model.d, model.rho1, model.rho2);
        samples.push(m);
    }
    let nb = budget as f64;
    let mean = samples.iter().sum::<f64>() / nb;
    let s2 = samples.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / nb;
    let m4 = samples.iter().map(|m| (m - mean).powi(4)).sum::<f64>() / nb;
    let se_var = ((m4 - s2 * s2).max(0.0) / nb).sqrt();
    Ok((s2 / d_total, se_var / d_total))
}

/// Ground truth for a generator spec, aligned with the generated columns.
/// The categorical experiment has no printed closed form, and free-form
/// linear models beyond the enumeration limit are out of reach; both yield
/// `None`.
pub fn for_experiment(spec: &GeneratorSpec) -> Result<Option<Vec<f64>>> {
    match spec.experiment {
        Experiment::Exp1a | Experiment::Exp1b => exp1_ground_truth(spec).map(Some),
        Experiment::Exp2 => exp2_shapley(&Exp2Model::from_spec(spec)?).map(Some),
        Experiment::Exp3 => Ok(None),
        Experiment::Custom => {
            let linear = spec.params.linear_or_default();
            if linear.beta.len() > MAX_ENUM_DIM {
                return Ok(None);
            }
            let model = LinearGaussianModel::new(
                linear.beta.clone(),
                linear.covariance.clone(),
                spec.noise_variance(),
            );
            linear_gaussian_shapley(&model).map(Some)
        }
    }
}
