//! Shapley effects from sampled subset values: kernel weights, the
//! importance-weighted least-squares system with the explained-variance sum
//! constraint, closed-form and box-constrained solvers, and the exact
//! enumeration oracle.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::combinatorics::binomial;
use crate::error::{Error, Result};
use crate::subsets::{SubsetDraw, VarSubset};

/// Shapley kernel weight w(U) = (p−1) / (C(p,|U|)·|U|·(p−|U|)), symmetric in
/// |U| ↔ p−|U|.
pub fn kernel_weight(p: usize, u_size: usize) -> Result<f64> {
    if u_size == 0 || u_size >= p {
        return Err(Error::DegenerateSubsetSize { p, u_size });
    }
    Ok((p - 1) as f64 / (binomial(p, u_size) * (u_size * (p - u_size)) as f64))
}

/// One regression row: which variables the subset contains, its value
/// estimate, and the kernel weight corrected by the sampling frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemRow {
    pub indicator: VarSubset,
    pub value: f64,
    /// w(U) / p̂(U).
    pub weight: f64,
}

/// Weighted least-squares problem for the Shapley effect vector under the
/// constraint Σβ = `constraint`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSystem {
    pub rows: Vec<SystemRow>,
    /// Explained-variance fraction of the full variable set.
    pub constraint: f64,
    pub p: usize,
    /// Number of paired draws behind the rows (0 for hand-built systems).
    pub k: usize,
}

/// Solver health indicators; effects are reported unclipped, so out-of-box
/// components show up here rather than being silently altered.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolveDiagnostics {
    /// Square root of the weighted sum of squared residuals.
    pub residual_norm: f64,
    /// 1-based variables with an effect outside [0,1] (beyond 1e-10).
    pub box_violations: Vec<usize>,
    /// Largest over smallest eigenvalue of the reduced normal matrix.
    pub condition_estimate: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ShapleyEstimate {
    /// Per-variable Shapley effects, summing to `constraint`.
    pub effects: Vec<f64>,
    pub constraint: f64,
    pub diagnostics: SolveDiagnostics,
}

/// Builds one row per draw entry (duplicates kept: repeated rows encode the
/// sampling measure) with weight w(U)/p̂(U).
pub fn assemble(draw: &SubsetDraw, values: &[f64], constraint: f64) -> Result<RegressionSystem> {
    if draw.entries.len() != values.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} draw entries but {} values",
            draw.entries.len(),
            values.len()
        )));
    }
    if draw.entries.is_empty() {
        return Err(Error::EmptySubsetTable);
    }
    let p = draw.entries[0].subset.p();
    let mut rows = Vec::with_capacity(draw.entries.len());
    for (entry, &value) in draw.entries.iter().zip(values) {
        let weight = kernel_weight(p, entry.subset.len())? / entry.p_hat;
        if !weight.is_finite() || weight <= 0.0 {
            return Err(Error::NonFinite(format!(
                "row weight for subset {} is {weight} (p_hat = {})",
                entry.subset, entry.p_hat
            )));
        }
        rows.push(SystemRow {
            indicator: entry.subset.clone(),
            value,
            weight,
        });
    }
    Ok(RegressionSystem {
        rows,
        constraint,
        p,
        k: draw.k,
    })
}

/// Minimizes the weighted squared residuals subject to Σβ = c by eliminating
/// one coordinate through the constraint and solving the reduced weighted
/// normal equations. Effects outside [0,1] are reported, not clipped.
pub fn solve(system: &RegressionSystem) -> Result<ShapleyEstimate> {
    let pivot = validate_and_pivot(system)?;
    let p = system.p;
    let c = system.constraint;
    let reduced: Vec<usize> = (0..p).filter(|&j| j != pivot).collect();
    let m = p - 1;

    let mut a = DMatrix::<f64>::zeros(m, m);
    let mut b = DVector::<f64>::zeros(m);
    let mut z = vec![0.0f64; m];
    for row in &system.rows {
        let x_pivot = row.indicator.contains(pivot);
        for (idx, &j) in reduced.iter().enumerate() {
            z[idx] = indicator_value(&row.indicator, j) - f64::from(x_pivot as u8);
        }
        let y = row.value - c * f64::from(x_pivot as u8);
        for r in 0..m {
            if z[r] == 0.0 {
                continue;
            }
            b[r] += row.weight * y * z[r];
            for q in 0..m {
                if z[q] != 0.0 {
                    a[(r, q)] += row.weight * z[r] * z[q];
                }
            }
        }
    }

    let condition_estimate = spd_condition(&a)?;
    let gamma = a
        .clone()
        .cholesky()
        .ok_or(Error::SingularSystem)?
        .solve(&b);

    let mut effects = vec![0.0; p];
    let mut partial = 0.0;
    for (idx, &j) in reduced.iter().enumerate() {
        effects[j] = gamma[idx];
        partial += gamma[idx];
    }
    effects[pivot] = c - partial;

    Ok(finish(system, effects, condition_estimate))
}

/// [`solve`] with the box constraints enforced: projected cyclic coordinate
/// descent over paired transfers, which preserve Σβ = c exactly. Requires a
/// box-feasible constraint value (0 ≤ c ≤ p).
pub fn solve_strict(system: &RegressionSystem) -> Result<ShapleyEstimate> {
    let _ = validate_and_pivot(system)?;
    let p = system.p;
    let c = system.constraint;
    if !(0.0..=p as f64).contains(&c) {
        return Err(Error::InvalidParams(format!(
            "constraint {c} is outside [0, {p}]; no point of the box sums to it"
        )));
    }
    let n_rows = system.rows.len();
    // Dense indicator copy: membership tests sit in the innermost loop.
    let mut ind = vec![0.0f64; n_rows * p];
    for (i, row) in system.rows.iter().enumerate() {
        for j in row.indicator.iter() {
            ind[i * p + j] = 1.0;
        }
    }

    let mut effects = vec![c / p as f64; p];
    let mut preds: Vec<f64> = (0..n_rows)
        .map(|i| effects.iter().enumerate().map(|(j, e)| e * ind[i * p + j]).sum())
        .collect();

    for _sweep in 0..200 {
        let mut largest_step = 0.0f64;
        for i in 0..p {
            for j in i + 1..p {
                let mut num = 0.0;
                let mut den = 0.0;
                for (r, row) in system.rows.iter().enumerate() {
                    let d = ind[r * p + i] - ind[r * p + j];
                    if d != 0.0 {
                        num += row.weight * (row.value - preds[r]) * d;
                        den += row.weight;
                    }
                }
                if den == 0.0 {
                    continue;
                }
                let lo = (-effects[i]).max(effects[j] - 1.0);
                let hi = (1.0 - effects[i]).min(effects[j]);
                let step = (num / den).clamp(lo, hi);
                if step != 0.0 {
                    effects[i] += step;
                    effects[j] -= step;
                    for (r, pred) in preds.iter_mut().enumerate() {
                        *pred += step * (ind[r * p + i] - ind[r * p + j]);
                    }
                    largest_step = largest_step.max(step.abs());
                }
            }
        }
        if largest_step < 1e-12 {
            break;
        }
    }

    let condition_estimate = {
        // Same reduced normal matrix as the closed-form path.
        match solve(system) {
            Ok(est) => est.diagnostics.condition_estimate,
            Err(Error::SingularSystem) => f64::INFINITY,
            Err(e) => return Err(e),
        }
    };
    Ok(finish(system, effects, condition_estimate))
}

/// Exact Shapley values of the game given by `oracle`, by enumerating all
/// 2^p subsets; the empty set is valued 0 by convention and never queried.
pub fn shapley_exact(p: usize, oracle: impl Fn(&VarSubset) -> f64) -> Result<Vec<f64>> {
    if p == 0 {
        return Err(Error::InvalidParams("need at least one variable".into()));
    }
    if p > 20 {
        return Err(Error::EnumerationTooLarge { p, max: 20 });
    }
    let full = 1usize << p;
    let mut v = vec![0.0f64; full];
    for (mask, slot) in v.iter_mut().enumerate().skip(1) {
        let subset = VarSubset::new(p, (0..p).filter(|j| mask >> j & 1 == 1));
        *slot = oracle(&subset);
    }
    let mut effects = vec![0.0; p];
    for (j, effect) in effects.iter_mut().enumerate() {
        let bit = 1usize << j;
        for mask in 0..full {
            if mask & bit == 0 {
                let s = mask.count_ones() as usize;
                *effect += (v[mask | bit] - v[mask]) / binomial(p - 1, s);
            }
        }
        *effect /= p as f64;
    }
    if effects.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFinite(
            "oracle produced non-finite marginal contributions".into(),
        ));
    }
    Ok(effects)
}

/// Dumps (variable, effect) rows in variable order.
pub fn write_effects_csv(
    names: &[String],
    effects: &[f64],
    path: impl AsRef<Path>,
) -> Result<()> {
    if names.len() != effects.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} names but {} effects",
            names.len(),
            effects.len()
        )));
    }
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.as_ref().into(),
        message: e.to_string(),
    };
    let mut writer = csv::Writer::from_path(path.as_ref()).map_err(csv_err)?;
    writer.write_record(["variable", "effect"]).map_err(csv_err)?;
    for (name, effect) in names.iter().zip(effects) {
        writer
            .write_record([name.clone(), format!("{effect}")])
            .map_err(csv_err)?;
    }
    writer.flush().map_err(|e| Error::io(path.as_ref(), e))?;
    Ok(())
}

fn indicator_value(subset: &VarSubset, j: usize) -> f64 {
    f64::from(subset.contains(j) as u8)
}

/// Shared validation; returns the elimination pivot (the heaviest column, for
/// conditioning).
fn validate_and_pivot(system: &RegressionSystem) -> Result<usize> {
    let p = system.p;
    if p < 2 {
        return Err(Error::InvalidParams(
            "Shapley regression needs at least two variables".into(),
        ));
    }
    if !system.constraint.is_finite() {
        return Err(Error::NonFinite(format!(
            "constraint value {}",
            system.constraint
        )));
    }
    if system.rows.len() < p {
        return Err(Error::TooFewRows {
            rows: system.rows.len(),
            needed: p,
        });
    }
    let mut col_weight = vec![0.0f64; p];
    for row in &system.rows {
        if !row.value.is_finite() || !row.weight.is_finite() || row.weight <= 0.0 {
            return Err(Error::NonFinite(format!(
                "row for subset {} has value {} and weight {}",
                row.indicator, row.value, row.weight
            )));
        }
        if row.indicator.p() != p {
            return Err(Error::DimensionMismatch(format!(
                "row subset is over {} variables, system has {p}",
                row.indicator.p()
            )));
        }
        let size = row.indicator.len();
        if size == 0 || size >= p {
            return Err(Error::DegenerateSubsetSize { p, u_size: size });
        }
        for j in row.indicator.iter() {
            col_weight[j] += row.weight;
        }
    }
    let missing: Vec<usize> = (0..p)
        .filter(|&j| col_weight[j] == 0.0)
        .map(|j| j + 1)
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingVariables { missing });
    }
    Ok(col_weight
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(j, _)| j)
        .expect("p >= 2"))
}

/// Ratio of extreme eigenvalues of the reduced normal matrix; near-singular
/// spectra are rejected here before the factorization.
fn spd_condition(a: &DMatrix<f64>) -> Result<f64> {
    let eigenvalues = a.symmetric_eigenvalues();
    let max = eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let min = eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    if !(min > max * 1e-12) || !min.is_finite() {
        return Err(Error::SingularSystem);
    }
    Ok(max / min)
}

fn finish(system: &RegressionSystem, effects: Vec<f64>, condition_estimate: f64) -> ShapleyEstimate {
    let mut weighted_sse = 0.0;
    for row in &system.rows {
        let pred: f64 = row.indicator.iter().map(|j| effects[j]).sum();
        weighted_sse += row.weight * (row.value - pred) * (row.value - pred);
    }
    let box_violations: Vec<usize> = effects
        .iter()
        .enumerate()
        .filter(|(_, &e)| e < -1e-10 || e > 1.0 + 1e-10)
        .map(|(j, _)| j + 1)
        .collect();
    ShapleyEstimate {
        effects,
        constraint: system.constraint,
        diagnostics: SolveDiagnostics {
            residual_norm: weighted_sse.sqrt(),
            box_violations,
            condition_estimate,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subsets::{DrawEntry, DrawOrigin};

    fn row(p: usize, vars: &[usize], value: f64, weight: f64) -> SystemRow {
        SystemRow {
            indicator: VarSubset::new(p, vars.iter().copied()),
            value,
            weight,
        }
    }

    fn system(p: usize, constraint: f64, rows: Vec<SystemRow>) -> RegressionSystem {
        RegressionSystem {
            rows,
            constraint,
            p,
            k: 0,
        }
    }

    #[test]
    fn kernel_weight_pins_small_cases() {
        assert_eq!(kernel_weight(2, 1).unwrap(), 0.5);
        assert_eq!(kernel_weight(3, 1).unwrap(), 1.0 / 3.0);
        assert_eq!(kernel_weight(4, 2).unwrap(), 0.125);
        assert_eq!(kernel_weight(4, 1).unwrap(), 0.25);
        assert_eq!(
            kernel_weight(4, 1).unwrap().to_bits(),
            kernel_weight(4, 3).unwrap().to_bits()
        );
        assert!(matches!(
            kernel_weight(5, 0),
            Err(Error::DegenerateSubsetSize { p: 5, u_size: 0 })
        ));
        assert!(matches!(
            kernel_weight(5, 5),
            Err(Error::DegenerateSubsetSize { p: 5, u_size: 5 })
        ));
    }

    #[test]
    fn assemble_keeps_duplicates_and_corrects_by_p_hat() {
        let p = 3;
        let subset = VarSubset::new(p, [0]);
        let entry = |s: &VarSubset, p_hat: f64, origin| DrawEntry {
            subset: s.clone(),
            p_hat,
            origin,
        };
        let draw = SubsetDraw {
            entries: vec![
                entry(&subset, 0.25, DrawOrigin::Drawn),
                entry(&subset.complement(), 0.5, DrawOrigin::Complement),
                entry(&subset, 0.25, DrawOrigin::Drawn),
                entry(&subset.complement(), 0.5, DrawOrigin::Complement),
            ],
            k: 2,
        };
        let sys = assemble(&draw, &[0.1, 0.6, 0.1, 0.6], 0.8).unwrap();
        assert_eq!(sys.rows.len(), 4);
        assert_eq!(sys.k, 2);
        assert_eq!(sys.rows[0], sys.rows[2]);
        assert_eq!(sys.rows[0].weight, kernel_weight(3, 1).unwrap() / 0.25);
        assert_eq!(sys.rows[1].weight, kernel_weight(3, 2).unwrap() / 0.5);

        let bad = SubsetDraw {
            entries: vec![entry(&subset, 0.0, DrawOrigin::Drawn)],
            k: 1,
        };
        assert!(matches!(
            assemble(&bad, &[0.1], 0.8),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            assemble(&draw, &[0.1], 0.8),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn uniform_enumeration_weights_are_proportional_to_the_kernel() {
        let p = 3;
        let masks = 1..(1usize << p) - 1;
        let subsets: Vec<VarSubset> = masks
            .map(|mask| VarSubset::new(p, (0..p).filter(|j| mask >> j & 1 == 1)))
            .collect();
        let uniform = 1.0 / subsets.len() as f64;
        let draw = SubsetDraw {
            entries: subsets
                .iter()
                .map(|s| DrawEntry {
                    subset: s.clone(),
                    p_hat: uniform,
                    origin: DrawOrigin::Drawn,
                })
                .collect(),
            k: 0,
        };
        let sys = assemble(&draw, &vec![0.5; subsets.len()], 1.0).unwrap();
        for row in &sys.rows {
            let ratio = row.weight / kernel_weight(p, row.indicator.len()).unwrap();
            assert!((ratio - subsets.len() as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn two_player_game_splits_by_hand_formula() {
        // Paired draws give both singletons the same weight; the solution is
        // invariant to that common scale.
        for weight in [0.5, 3.7] {
            let sys = system(
                2,
                1.0,
                vec![row(2, &[0], 0.3, weight), row(2, &[1], 0.5, weight)],
            );
            let est = solve(&sys).unwrap();
            assert!((est.effects[0] - 0.4).abs() < 1e-12);
            assert!((est.effects[1] - 0.6).abs() < 1e-12);
            assert!((est.effects.iter().sum::<f64>() - 1.0).abs() < 1e-8);
            assert!(est.diagnostics.box_violations.is_empty());
        }
    }

    #[test]
    fn missing_variable_is_reported_one_based() {
        let sys = system(
            3,
            1.0,
            vec![
                row(3, &[0], 0.2, 1.0),
                row(3, &[1], 0.3, 1.0),
                row(3, &[0, 1], 0.5, 1.0),
            ],
        );
        match solve(&sys) {
            Err(Error::MissingVariables { missing }) => assert_eq!(missing, vec![3]),
            other => panic!("expected MissingVariables, got {other:?}"),
        }
    }

    #[test]
    fn underdetermined_and_degenerate_systems_error() {
        let short = system(3, 1.0, vec![row(3, &[0], 0.2, 1.0), row(3, &[1], 0.3, 1.0)]);
        assert!(matches!(
            solve(&short),
            Err(Error::TooFewRows { rows: 2, needed: 3 })
        ));

        let singular = system(
            3,
            1.0,
            vec![
                row(3, &[0, 1], 0.5, 1.0),
                row(3, &[0, 1], 0.5, 1.0),
                row(3, &[2], 0.4, 1.0),
                row(3, &[2], 0.4, 1.0),
            ],
        );
        assert!(matches!(solve(&singular), Err(Error::SingularSystem)));

        let nan = system(
            2,
            1.0,
            vec![row(2, &[0], f64::NAN, 1.0), row(2, &[1], 0.5, 1.0)],
        );
        assert!(matches!(solve(&nan), Err(Error::NonFinite(_))));

        let full_row = system(
            2,
            1.0,
            vec![row(2, &[0, 1], 1.0, 1.0), row(2, &[1], 0.5, 1.0)],
        );
        assert!(matches!(
            solve(&full_row),
            Err(Error::DegenerateSubsetSize { p: 2, u_size: 2 })
        ));
    }

    #[test]
    fn permuting_labels_permutes_effects() {
        let base = vec![
            (vec![0], 0.31),
            (vec![1], 0.11),
            (vec![2], 0.42),
            (vec![0, 1], 0.47),
            (vec![1, 2], 0.55),
            (vec![0, 2], 0.76),
            (vec![0, 1], 0.44),
        ];
        let sys = system(
            3,
            0.9,
            base.iter()
                .map(|(vars, v)| row(3, vars, *v, 1.3))
                .collect(),
        );
        // Relabel 0→1, 1→2, 2→0.
        let perm = [1usize, 2, 0];
        let sys_perm = system(
            3,
            0.9,
            base.iter()
                .map(|(vars, v)| {
                    let mapped: Vec<usize> = vars.iter().map(|&j| perm[j]).collect();
                    row(3, &mapped, *v, 1.3)
                })
                .collect(),
        );
        let est = solve(&sys).unwrap();
        let est_perm = solve(&sys_perm).unwrap();
        for j in 0..3 {
            assert!((est.effects[j] - est_perm.effects[perm[j]]).abs() < 1e-10);
        }
    }

    #[test]
    fn strict_solver_respects_boxes_and_the_sum() {
        // Exact additive values with a negative coefficient push the
        // closed-form solution outside the box.
        let a = [0.9, 0.2, -0.1];
        let c: f64 = a.iter().sum();
        let mut rows = Vec::new();
        for mask in 1usize..7 {
            let vars: Vec<usize> = (0..3).filter(|j| mask >> j & 1 == 1).collect();
            let value: f64 = vars.iter().map(|&j| a[j]).sum();
            rows.push(row(3, &vars, value, 1.0));
        }
        let sys = system(3, c, rows);

        let unconstrained = solve(&sys).unwrap();
        assert_eq!(unconstrained.diagnostics.box_violations, vec![3]);
        assert!((unconstrained.effects[2] - -0.1).abs() < 1e-10);

        let strict = solve_strict(&sys).unwrap();
        assert!(strict.diagnostics.box_violations.is_empty());
        for &e in &strict.effects {
            assert!((-1e-12..=1.0 + 1e-12).contains(&e));
        }
        assert!((strict.effects.iter().sum::<f64>() - c).abs() < 1e-8);
        assert!(strict.diagnostics.residual_norm >= unconstrained.diagnostics.residual_norm);

        // With an interior optimum the two solvers agree.
        let inner = [0.5, 0.3, 0.2];
        let c2: f64 = inner.iter().sum();
        let mut rows2 = Vec::new();
        for mask in 1usize..7 {
            let vars: Vec<usize> = (0..3).filter(|j| mask >> j & 1 == 1).collect();
            let value: f64 = vars.iter().map(|&j| inner[j]).sum();
            rows2.push(row(3, &vars, value, 2.0));
        }
        let sys2 = system(3, c2, rows2);
        let est2 = solve(&sys2).unwrap();
        let strict2 = solve_strict(&sys2).unwrap();
        for j in 0..3 {
            assert!((est2.effects[j] - strict2.effects[j]).abs() < 1e-6);
        }

        let infeasible = system(
            2,
            -0.5,
            vec![row(2, &[0], 0.1, 1.0), row(2, &[1], 0.2, 1.0)],
        );
        assert!(matches!(
            solve_strict(&infeasible),
            Err(Error::InvalidParams(_))
        ));
    }

    #[test]
    fn exact_enumeration_solves_hand_games() {
        let additive = shapley_exact(5, |u| u.iter().map(|j| (j + 1) as f64 * 0.1).sum()).unwrap();
        for (j, e) in additive.iter().enumerate() {
            assert!((e - (j + 1) as f64 * 0.1).abs() < 1e-12);
        }

        let squared = shapley_exact(3, |u| (u.len() * u.len()) as f64).unwrap();
        for e in &squared {
            assert!((e - 3.0).abs() < 1e-12);
        }

        let two = shapley_exact(2, |u| match (u.contains(0), u.contains(1)) {
            (true, false) => 0.3,
            (false, true) => 0.5,
            (true, true) => 1.0,
            (false, false) => unreachable!("empty set is never queried"),
        })
        .unwrap();
        assert!((two[0] - 0.4).abs() < 1e-12);
        assert!((two[1] - 0.6).abs() < 1e-12);

        assert!(matches!(
            shapley_exact(21, |_| 0.0),
            Err(Error::EnumerationTooLarge { p: 21, max: 20 })
        ));
    }

    #[test]
    fn effects_csv_lists_variables_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("effects.csv");
        let names = vec!["X1".to_string(), "X2".to_string()];
        write_effects_csv(&names, &[0.25, 0.75], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "variable,effect\nX1,0.25\nX2,0.75\n");
    }
}
