//! Projected-forest evaluation: forest predictions conditional on a variable
//! subset.
//!
//! A projected prediction descends a tree level by level while tracking the
//! node frontier the query occupies (splits on variables outside the subset
//! send it to both children) and the in-bag observations that match the
//! query's side at every in-subset split met so far, across the whole
//! frontier. Descent stops before any level that would leave fewer than
//! `min_node_size` matching observations; the prediction is the mean response
//! over the survivors.
//!
//! [`prf_predict_tree`] is the per-query reference path. [`prf_oob_estimates`]
//! descends all out-of-bag queries of a tree simultaneously, refining a shared
//! partition of (observations, queries) one level at a time, and must agree
//! with the reference path bit for bit.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::forest::{explained_variance, Forest, Tree};
use crate::subsets::VarSubset;

/// A query restricted to the variables of one subset.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionQuery {
    subset: VarSubset,
    /// One value per subset member, in ascending variable order.
    values: Vec<f64>,
}

impl ProjectionQuery {
    pub fn new(subset: VarSubset, values: Vec<f64>) -> Result<Self> {
        if subset.is_empty() {
            return Err(Error::InvalidParams(
                "projection requires a non-empty variable subset".into(),
            ));
        }
        if values.len() != subset.len() {
            return Err(Error::DimensionMismatch(format!(
                "subset has {} variables but {} values were given",
                subset.len(),
                values.len()
            )));
        }
        Ok(ProjectionQuery { subset, values })
    }

    /// Restriction of a dataset row to the subset's coordinates.
    pub fn from_row(dataset: &Dataset, row: usize, subset: &VarSubset) -> Result<Self> {
        if subset.p() != dataset.p() {
            return Err(Error::DimensionMismatch(format!(
                "subset is over {} variables, dataset has {}",
                subset.p(),
                dataset.p()
            )));
        }
        if row >= dataset.n() {
            return Err(Error::DimensionMismatch(format!(
                "row {row} out of range for n = {}",
                dataset.n()
            )));
        }
        let values = subset.iter().map(|v| dataset.value(row, v)).collect();
        ProjectionQuery::new(subset.clone(), values)
    }

    pub fn subset(&self) -> &VarSubset {
        &self.subset
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Coordinate of `var`, or `None` when `var` is outside the subset.
    pub fn value(&self, var: usize) -> Option<f64> {
        self.subset
            .iter()
            .position(|u| u == var)
            .map(|i| self.values[i])
    }
}

/// Result of one projected tree descent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPrediction {
    /// Mean in-bag response over the final surviving set.
    pub value: f64,
    /// Size of the final surviving set, with resampling multiplicity.
    pub support: usize,
    /// Number of tree levels applied before the descent halted.
    pub stop_level: usize,
}

/// Reference per-query descent of one tree. The frontier starts at the root;
/// each level follows the query's side at splits on subset variables (filtering
/// the surviving set by every such split in the frontier) and keeps both
/// children elsewhere. A level that would leave fewer than `min_node_size`
/// survivors is not applied.
pub fn prf_predict_tree(
    forest: &Forest,
    tree_index: usize,
    dataset: &Dataset,
    query: &ProjectionQuery,
) -> Result<ProjectedPrediction> {
    if tree_index >= forest.trees.len() {
        return Err(Error::DimensionMismatch(format!(
            "tree index {tree_index} out of range for {} trees",
            forest.trees.len()
        )));
    }
    if query.subset.p() != forest.p || dataset.p() != forest.p || dataset.n() != forest.n {
        return Err(Error::DimensionMismatch(format!(
            "query over {} variables, dataset {}x{}, forest fit on {}x{}",
            query.subset.p(),
            dataset.n(),
            dataset.p(),
            forest.n,
            forest.p
        )));
    }
    let tree = &forest.trees[tree_index];
    let y = dataset.output();
    let min_keep = forest.params.min_node_size.max(1);

    let mut frontier: Vec<u32> = vec![0];
    let mut next_frontier: Vec<u32> = Vec::new();
    let mut surviving: Vec<u32> = tree.in_bag.clone();
    let mut level: usize = 0;
    // (var, threshold, query goes left) for the level's in-subset splits.
    let mut level_splits: Vec<(u32, f64, bool)> = Vec::new();

    loop {
        next_frontier.clear();
        level_splits.clear();
        let mut any_internal = false;
        for &id in &frontier {
            let node = &tree.nodes[id as usize];
            match (node.depth as usize == level, node.children) {
                (true, Some((left, right))) => {
                    any_internal = true;
                    let split = node.split.expect("internal node carries a split");
                    if query.subset.contains(split.var as usize) {
                        let goes_left = query
                            .value(split.var as usize)
                            .expect("subset member has a query value")
                            <= split.threshold;
                        level_splits.push((split.var, split.threshold, goes_left));
                        next_frontier.push(if goes_left { left } else { right });
                    } else {
                        next_frontier.push(left);
                        next_frontier.push(right);
                    }
                }
                _ => next_frontier.push(id),
            }
        }
        if !any_internal {
            break;
        }
        let next_surviving: Vec<u32> = surviving
            .iter()
            .copied()
            .filter(|&row| {
                level_splits.iter().all(|&(var, threshold, goes_left)| {
                    (dataset.value(row as usize, var as usize) <= threshold) == goes_left
                })
            })
            .collect();
        if next_surviving.len() < min_keep {
            break;
        }
        surviving = next_surviving;
        std::mem::swap(&mut frontier, &mut next_frontier);
        level += 1;
    }

    Ok(ProjectedPrediction {
        value: mean_over(&surviving, y),
        support: surviving.len(),
        stop_level: level,
    })
}

/// Per-variable explained fraction of output variance after projection.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ValueEstimate {
    /// 1 − SSE/SStot over the covered rows; at most 1, may be negative.
    pub value: f64,
    /// Rows with at least one out-of-bag projected prediction.
    pub covered: usize,
    /// Rows excluded for lack of out-of-bag coverage.
    pub skipped: usize,
}

/// Out-of-bag projected predictions for each subset: entry `[s][i]` averages,
/// over the trees where row `i` is out of bag, the projected prediction for
/// row `i` under `subsets[s]`. Aggregation order matches
/// [`Forest::oob_predict`], and each per-row value equals the
/// [`prf_predict_tree`] aggregate bit for bit.
pub fn prf_oob_estimates(
    forest: &Forest,
    dataset: &Dataset,
    subsets: &[VarSubset],
) -> Result<Vec<Vec<Option<f64>>>> {
    validate_batch(forest, dataset, subsets)?;
    Ok(subsets
        .par_iter()
        .map_init(BatchScratch::default, |scratch, subset| {
            subset_oob_predictions(forest, dataset, subset, scratch)
        })
        .collect())
}

/// Fraction of output variance explained by the subset's projected
/// predictions, with rows lacking out-of-bag coverage skipped and counted.
pub fn estimate_v(forest: &Forest, dataset: &Dataset, subset: &VarSubset) -> Result<ValueEstimate> {
    estimate_v_batch(forest, dataset, std::slice::from_ref(subset)).map(|v| v[0])
}

/// [`estimate_v`] for many subsets; per-subset work runs independently and
/// results are returned in input order.
pub fn estimate_v_batch(
    forest: &Forest,
    dataset: &Dataset,
    subsets: &[VarSubset],
) -> Result<Vec<ValueEstimate>> {
    validate_batch(forest, dataset, subsets)?;
    subsets
        .par_iter()
        .map_init(BatchScratch::default, |scratch, subset| {
            let preds = subset_oob_predictions(forest, dataset, subset, scratch);
            let (value, covered, skipped) = explained_variance(dataset.output(), &preds)?;
            Ok(ValueEstimate {
                value,
                covered,
                skipped,
            })
        })
        .collect()
}

/// Dumps (subset, v_hat, covered) rows in input order.
pub fn write_values_csv(
    subsets: &[VarSubset],
    estimates: &[ValueEstimate],
    path: impl AsRef<Path>,
) -> Result<()> {
    if subsets.len() != estimates.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} subsets but {} estimates",
            subsets.len(),
            estimates.len()
        )));
    }
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.as_ref().into(),
        message: e.to_string(),
    };
    let mut writer = csv::Writer::from_path(path.as_ref()).map_err(csv_err)?;
    writer
        .write_record(["subset", "v_hat", "covered"])
        .map_err(csv_err)?;
    for (subset, est) in subsets.iter().zip(estimates) {
        writer
            .write_record([
                subset.to_string(),
                format!("{}", est.value),
                est.covered.to_string(),
            ])
            .map_err(csv_err)?;
    }
    writer.flush().map_err(|e| Error::io(path.as_ref(), e))?;
    Ok(())
}

fn validate_batch(forest: &Forest, dataset: &Dataset, subsets: &[VarSubset]) -> Result<()> {
    if dataset.p() != forest.p || dataset.n() != forest.n {
        return Err(Error::DimensionMismatch(format!(
            "dataset is {}x{}, forest was fit on {}x{}",
            dataset.n(),
            dataset.p(),
            forest.n,
            forest.p
        )));
    }
    for subset in subsets {
        if subset.p() != forest.p {
            return Err(Error::DimensionMismatch(format!(
                "subset is over {} variables, forest has {}",
                subset.p(),
                forest.p
            )));
        }
        if subset.is_empty() {
            return Err(Error::InvalidParams(
                "projection requires a non-empty variable subset".into(),
            ));
        }
    }
    Ok(())
}

fn mean_over(rows: &[u32], y: &[f64]) -> f64 {
    let sum: f64 = rows.iter().map(|&i| y[i as usize]).sum();
    sum / rows.len() as f64
}

/// One group of queries sharing a frontier and a surviving set during the
/// simultaneous descent. Ranges index the level's shared permutation buffers.
struct Cell {
    /// Refinable frontier nodes, all at the current level. Nodes whose subtree
    /// never splits on a subset variable are dropped at creation: they cannot
    /// change the surviving set.
    frontier: Vec<u32>,
    obs_start: u32,
    obs_end: u32,
    q_start: u32,
    q_end: u32,
}

/// One surviving side pattern over a cell's in-subset splits for one level.
struct FragMeta {
    /// Offset of this fragment's interval-index key in the key arena.
    key_start: u32,
    obs_count: u32,
    q_count: u32,
    /// Write cursors into the next-level buffers; valid when kept.
    obs_cursor: u32,
    q_cursor: u32,
    keep: bool,
}

/// Reusable buffers for the per-tree simultaneous descent.
#[derive(Default)]
pub struct BatchScratch {
    /// Whether each node's subtree contains a split on a subset variable.
    u_active: Vec<bool>,
    /// Surviving observation rows of the current/next level, grouped by cell.
    cur_obs: Vec<u32>,
    next_obs: Vec<u32>,
    /// Pending query positions (indexes into the tree's out-of-bag list).
    cur_q: Vec<u32>,
    next_q: Vec<u32>,
    cells: Vec<Cell>,
    next_cells: Vec<Cell>,
    /// Per out-of-bag position prediction for the current tree.
    preds: Vec<f64>,
    /// Raw (var, threshold) pairs of one cell's level splits.
    splits: Vec<(u32, f64)>,
    /// Distinct split variables with their threshold range in `thr_arena`.
    vars: Vec<(u32, u32, u32)>,
    thr_arena: Vec<f64>,
    key_buf: Vec<u16>,
    key_arena: Vec<u16>,
    frags: Vec<FragMeta>,
    frag_of_obs: Vec<u32>,
    frag_of_q: Vec<u32>,
    /// Dense slot → fragment map when the mixed-radix space is small.
    dense_map: Vec<u32>,
    touched: Vec<u32>,
    sparse_map: HashMap<Vec<u16>, u32>,
}

const NO_FRAG: u32 = u32::MAX;
/// Above this mixed-radix size the slot map falls back to hashing.
const DENSE_SLOT_LIMIT: u64 = 4096;

/// Fills `scratch.preds` with the projected prediction for every out-of-bag
/// query of `tree`, descending all queries and surviving observations
/// together. Each level partitions every cell's observations and queries by
/// their side pattern over the cell's in-subset splits; fragments left with
/// fewer than `min_node_size` observations finalize their queries with the
/// pre-level cell mean.
fn project_tree_batch(
    tree: &Tree,
    dataset: &Dataset,
    subset: &VarSubset,
    min_node_size: usize,
    s: &mut BatchScratch,
) {
    let y = dataset.output();
    let n_queries = tree.oob.len();
    s.preds.clear();
    s.preds.resize(n_queries, 0.0);
    if n_queries == 0 {
        return;
    }

    let nodes = &tree.nodes;
    s.u_active.clear();
    s.u_active.resize(nodes.len(), false);
    for id in (0..nodes.len()).rev() {
        if let Some((left, right)) = nodes[id].children {
            let split = nodes[id].split.expect("internal node carries a split");
            s.u_active[id] = subset.contains(split.var as usize)
                || s.u_active[left as usize]
                || s.u_active[right as usize];
        }
    }
    if !s.u_active[0] {
        // No reachable in-subset split: every query keeps the in-bag mean.
        let m = mean_over(&tree.in_bag, y);
        s.preds.iter_mut().for_each(|v| *v = m);
        return;
    }

    let BatchScratch {
        u_active,
        cur_obs,
        next_obs,
        cur_q,
        next_q,
        cells,
        next_cells,
        preds,
        splits,
        vars,
        thr_arena,
        key_buf,
        key_arena,
        frags,
        frag_of_obs,
        frag_of_q,
        dense_map,
        touched,
        sparse_map,
    } = s;

    cur_obs.clear();
    cur_obs.extend_from_slice(&tree.in_bag);
    cur_q.clear();
    cur_q.extend(0..n_queries as u32);
    cells.clear();
    next_cells.clear();
    cells.push(Cell {
        frontier: vec![0],
        obs_start: 0,
        obs_end: cur_obs.len() as u32,
        q_start: 0,
        q_end: n_queries as u32,
    });
    let mut written = 0usize;
    let min_keep = min_node_size.max(1) as u32;

    while !cells.is_empty() {
        next_obs.clear();
        next_q.clear();
        for cell in cells.drain(..) {
            let obs_range = cell.obs_start as usize..cell.obs_end as usize;
            let q_range = cell.q_start as usize..cell.q_end as usize;

            // Advance through levels holding no in-subset split: nothing
            // filters or stops there, so the surviving rows, the pending
            // queries, and their order are untouched.
            let mut frontier = cell.frontier;
            let mut advanced: Vec<u32> = Vec::new();
            loop {
                splits.clear();
                for &id in &frontier {
                    let split = nodes[id as usize].split.expect("frontier nodes are internal");
                    if subset.contains(split.var as usize) {
                        splits.push((split.var, split.threshold));
                    }
                }
                if !splits.is_empty() {
                    break;
                }
                advanced.clear();
                for &id in &frontier {
                    let (left, right) = nodes[id as usize].children.expect("internal");
                    if u_active[left as usize] {
                        advanced.push(left);
                    }
                    if u_active[right as usize] {
                        advanced.push(right);
                    }
                }
                std::mem::swap(&mut frontier, &mut advanced);
                if frontier.is_empty() {
                    break;
                }
            }
            if frontier.is_empty() {
                let m = mean_over(&cur_obs[obs_range], y);
                for &q in &cur_q[q_range] {
                    preds[q as usize] = m;
                    written += 1;
                }
                continue;
            }

            // Distinct variables and deduplicated thresholds for the level.
            splits.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            vars.clear();
            thr_arena.clear();
            for &(var, threshold) in splits.iter() {
                match vars.last_mut() {
                    Some(v) if v.0 == var => {
                        if *thr_arena.last().expect("non-empty run") != threshold {
                            thr_arena.push(threshold);
                            v.2 += 1;
                        }
                    }
                    _ => {
                        let start = thr_arena.len() as u32;
                        thr_arena.push(threshold);
                        vars.push((var, start, start + 1));
                    }
                }
            }
            let kvars = vars.len();
            let mut slot_space = 1u64;
            for &(_, t_start, t_end) in vars.iter() {
                slot_space = slot_space.saturating_mul((t_end - t_start + 1) as u64);
            }
            let dense = slot_space <= DENSE_SLOT_LIMIT;
            if dense {
                if dense_map.len() < slot_space as usize {
                    dense_map.resize(slot_space as usize, NO_FRAG);
                }
                touched.clear();
            } else {
                sparse_map.clear();
            }
            frags.clear();
            key_arena.clear();

            // Queries discover fragments; observations only join existing ones.
            frag_of_q.clear();
            frag_of_obs.clear();
            if kvars == 1 && dense {
                // One split variable: the interval index is the slot itself,
                // so key buffers and mixed-radix folding drop out.
                let (var, t_start, t_end) = vars[0];
                let thresholds = &thr_arena[t_start as usize..t_end as usize];
                let col = dataset.column(var as usize);
                for &q in &cur_q[q_range.clone()] {
                    let row = tree.oob[q as usize] as usize;
                    let key = interval_index(thresholds, col[row]);
                    let mut frag = dense_map[key as usize];
                    if frag == NO_FRAG {
                        frag = push_frag(frags, key_arena, std::slice::from_ref(&key));
                        dense_map[key as usize] = frag;
                        touched.push(key as u32);
                    }
                    frags[frag as usize].q_count += 1;
                    frag_of_q.push(frag);
                }
                for &row in &cur_obs[obs_range.clone()] {
                    let key = interval_index(thresholds, col[row as usize]);
                    let frag = dense_map[key as usize];
                    if frag != NO_FRAG {
                        frags[frag as usize].obs_count += 1;
                    }
                    frag_of_obs.push(frag);
                }
            } else {
                for &q in &cur_q[q_range.clone()] {
                    let row = tree.oob[q as usize] as usize;
                    fill_key(key_buf, vars, thr_arena, |var| dataset.value(row, var));
                    let frag = if dense {
                        let slot = dense_slot(key_buf, vars);
                        if dense_map[slot] == NO_FRAG {
                            dense_map[slot] = push_frag(frags, key_arena, key_buf);
                            touched.push(slot as u32);
                        }
                        dense_map[slot]
                    } else {
                        match sparse_map.get(key_buf.as_slice()).copied() {
                            Some(f) => f,
                            None => {
                                let f = push_frag(frags, key_arena, key_buf);
                                sparse_map.insert(key_buf.clone(), f);
                                f
                            }
                        }
                    };
                    frags[frag as usize].q_count += 1;
                    frag_of_q.push(frag);
                }
                for &row in &cur_obs[obs_range.clone()] {
                    fill_key(key_buf, vars, thr_arena, |var| {
                        dataset.value(row as usize, var)
                    });
                    let frag = if dense {
                        dense_map[dense_slot(key_buf, vars)]
                    } else {
                        sparse_map.get(key_buf.as_slice()).copied().unwrap_or(NO_FRAG)
                    };
                    if frag != NO_FRAG {
                        frags[frag as usize].obs_count += 1;
                    }
                    frag_of_obs.push(frag);
                }
            }
            if dense {
                for &slot in touched.iter() {
                    dense_map[slot as usize] = NO_FRAG;
                }
            }

            // Keep fragments that can absorb the level; the rest stop before
            // it and predict with the pre-level cell mean.
            let mut parent_mean = None;
            for frag in frags.iter_mut() {
                frag.keep = frag.obs_count >= min_keep;
                if !frag.keep && parent_mean.is_none() {
                    parent_mean = Some(mean_over(&cur_obs[obs_range.clone()], y));
                }
            }
            for frag in frags.iter_mut() {
                if !frag.keep {
                    continue;
                }
                frag.obs_cursor = next_obs.len() as u32;
                next_obs.resize(next_obs.len() + frag.obs_count as usize, 0);
                frag.q_cursor = next_q.len() as u32;
                next_q.resize(next_q.len() + frag.q_count as usize, 0);
                let key = &key_arena[frag.key_start as usize..frag.key_start as usize + kvars];
                let mut sub_frontier = Vec::new();
                for &id in &frontier {
                    let split = nodes[id as usize].split.expect("internal");
                    let (left, right) = nodes[id as usize].children.expect("internal");
                    let var = split.var as usize;
                    match vars.binary_search_by(|v| (v.0 as usize).cmp(&var)) {
                        Ok(j) => {
                            let (_, t_start, t_end) = vars[j];
                            let thresholds = &thr_arena[t_start as usize..t_end as usize];
                            let rank = thresholds
                                .partition_point(|&t| t < split.threshold);
                            let child = if key[j] as usize <= rank { left } else { right };
                            if u_active[child as usize] {
                                sub_frontier.push(child);
                            }
                        }
                        Err(_) => {
                            if u_active[left as usize] {
                                sub_frontier.push(left);
                            }
                            if u_active[right as usize] {
                                sub_frontier.push(right);
                            }
                        }
                    }
                }
                next_cells.push(Cell {
                    frontier: sub_frontier,
                    obs_start: frag.obs_cursor,
                    obs_end: frag.obs_cursor + frag.obs_count,
                    q_start: frag.q_cursor,
                    q_end: frag.q_cursor + frag.q_count,
                });
            }

            // Stable scatter: per-fragment order inherits the cell's order.
            for (i, &row) in cur_obs[obs_range].iter().enumerate() {
                let f = frag_of_obs[i];
                if f != NO_FRAG && frags[f as usize].keep {
                    let frag = &mut frags[f as usize];
                    next_obs[frag.obs_cursor as usize] = row;
                    frag.obs_cursor += 1;
                }
            }
            for (i, &q) in cur_q[q_range].iter().enumerate() {
                let frag = &mut frags[frag_of_q[i] as usize];
                if frag.keep {
                    next_q[frag.q_cursor as usize] = q;
                    frag.q_cursor += 1;
                } else {
                    preds[q as usize] = parent_mean.expect("computed for starved fragments");
                    written += 1;
                }
            }
        }
        std::mem::swap(cur_obs, next_obs);
        std::mem::swap(cur_q, next_q);
        std::mem::swap(cells, next_cells);
    }
    debug_assert_eq!(written, n_queries);
}

/// Interval index of `x` over sorted thresholds `t`: the count of thresholds
/// strictly below `x`, so that `x ≤ t[r]` exactly when the index is ≤ r.
fn interval_index(thresholds: &[f64], x: f64) -> u16 {
    thresholds.partition_point(|&t| t < x) as u16
}

fn fill_key(
    key_buf: &mut Vec<u16>,
    vars: &[(u32, u32, u32)],
    thr_arena: &[f64],
    mut value: impl FnMut(usize) -> f64,
) {
    key_buf.clear();
    for &(var, t_start, t_end) in vars {
        let thresholds = &thr_arena[t_start as usize..t_end as usize];
        key_buf.push(interval_index(thresholds, value(var as usize)));
    }
}

fn dense_slot(key: &[u16], vars: &[(u32, u32, u32)]) -> usize {
    let mut slot = 0usize;
    for (j, &(_, t_start, t_end)) in vars.iter().enumerate() {
        slot = slot * (t_end - t_start + 1) as usize + key[j] as usize;
    }
    slot
}

fn push_frag(frags: &mut Vec<FragMeta>, key_arena: &mut Vec<u16>, key: &[u16]) -> u32 {
    let id = frags.len() as u32;
    frags.push(FragMeta {
        key_start: key_arena.len() as u32,
        obs_count: 0,
        q_count: 0,
        obs_cursor: 0,
        q_cursor: 0,
        keep: false,
    });
    key_arena.extend_from_slice(key);
    id
}

fn subset_oob_predictions(
    forest: &Forest,
    dataset: &Dataset,
    subset: &VarSubset,
    scratch: &mut BatchScratch,
) -> Vec<Option<f64>> {
    let n = forest.n;
    let mut sums = vec![0.0; n];
    let mut counts = vec![0u32; n];
    for tree in &forest.trees {
        project_tree_batch(tree, dataset, subset, forest.params.min_node_size, scratch);
        for (pos, &row) in tree.oob.iter().enumerate() {
            sums[row as usize] += scratch.preds[pos];
            counts[row as usize] += 1;
        }
    }
    (0..n)
        .map(|i| (counts[i] > 0).then(|| sums[i] / counts[i] as f64))
        .collect()
}
