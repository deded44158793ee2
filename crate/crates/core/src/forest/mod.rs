//! CART regression forests: variance-reduction splitting, bootstrap or
//! subsample-without-replacement resampling, out-of-bag bookkeeping, and a
//! structured serialization format.
//!
//! Fitting is a pure function of (dataset, params): per-tree generators are
//! derived from the master seed by tree index, so results do not depend on
//! the number of worker threads.

use std::collections::VecDeque;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// How each tree's in-bag sample is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resampling {
    /// n draws with replacement; rows never drawn form the OOB sample.
    Bootstrap,
    /// a_n distinct rows drawn without replacement.
    Subsample { a_n: usize },
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ForestParams {
    pub num_trees: usize,
    /// Candidate variables per split; `None` means the default ⌈p/3⌉.
    pub mtry: Option<usize>,
    /// Lower bound on the in-bag size of every node, leaves included: a split
    /// is admissible only if both children keep at least this many in-bag
    /// observations. Projected evaluation stops at the same bound, so both
    /// descents agree on unrestricted queries.
    pub min_node_size: usize,
    pub resampling: Resampling,
    /// Cap on leaves per tree; growth is breadth-first and stops splitting
    /// once the cap is reached.
    pub max_leaves: Option<usize>,
    /// Cap on node depth, root = 0.
    pub max_depth: Option<usize>,
    /// Balanced-split fraction in [0, 0.5): with gamma > 0 each child must
    /// also hold at least ⌈gamma · parent size⌉ in-bag observations.
    pub gamma: f64,
    /// Probability of restricting a node's candidate draw to one variable.
    pub delta: f64,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            num_trees: 500,
            mtry: None,
            min_node_size: 5,
            resampling: Resampling::Bootstrap,
            max_leaves: None,
            max_depth: None,
            gamma: 0.0,
            delta: 0.0,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn effective_mtry(&self, p: usize) -> usize {
        self.mtry.unwrap_or_else(|| p.div_ceil(3))
    }

    fn validate(&self, n: usize, p: usize) -> Result<()> {
        if self.num_trees == 0 {
            return Err(Error::InvalidParams("num_trees must be positive".into()));
        }
        let mtry = self.effective_mtry(p);
        if mtry == 0 || mtry > p {
            return Err(Error::InvalidParams(format!(
                "mtry must lie in 1..={p}, got {mtry}"
            )));
        }
        if self.min_node_size == 0 {
            return Err(Error::InvalidParams("min_node_size must be positive".into()));
        }
        if n < 2 * self.min_node_size {
            return Err(Error::InvalidParams(format!(
                "need n >= 2 * min_node_size, got n = {n} with min_node_size = {}",
                self.min_node_size
            )));
        }
        if let Resampling::Subsample { a_n } = self.resampling {
            if a_n == 0 || a_n > n {
                return Err(Error::InvalidParams(format!(
                    "subsample size must lie in 1..={n}, got {a_n}"
                )));
            }
        }
        if !(0.0..0.5).contains(&self.gamma) {
            return Err(Error::InvalidParams(format!(
                "gamma must lie in [0, 0.5), got {}",
                self.gamma
            )));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(Error::InvalidParams(format!(
                "delta must lie in [0, 1), got {}",
                self.delta
            )));
        }
        if self.max_leaves == Some(0) {
            return Err(Error::InvalidParams("max_leaves must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Split {
    pub var: u32,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TreeNode {
    pub depth: u16,
    /// Present iff the node is internal; set together with `children`.
    pub split: Option<Split>,
    /// Child node ids; both are always larger than this node's id.
    pub children: Option<(u32, u32)>,
    /// Mean in-bag output at this node.
    pub mean: f64,
    /// In-bag rows reaching this node, ascending with multiplicity;
    /// populated for leaves only.
    pub indices: Vec<u32>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Tree {
    /// Breadth-first node storage; index 0 is the root.
    pub nodes: Vec<TreeNode>,
    /// Resampled rows, ascending, keeping multiplicity under bootstrap.
    pub in_bag: Vec<u32>,
    /// Rows never resampled, ascending.
    pub oob: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub params: ForestParams,
    /// Column count of the training data.
    pub p: usize,
    /// Row count of the training data.
    pub n: usize,
    /// Fingerprint of the training dataset, for reload-time validation.
    pub dataset_fingerprint: String,
}

/// Grows a forest on `dataset`. Deterministic given `params.seed` regardless
/// of thread count.
pub fn fit(dataset: &Dataset, params: &ForestParams) -> Result<Forest> {
    let (n, p) = (dataset.n(), dataset.p());
    params.validate(n, p)?;
    let trees: Vec<Tree> = (0..params.num_trees)
        .into_par_iter()
        .map(|t| grow_tree(dataset, params, stream_rng(params.seed, &[t as u64])))
        .collect();
    Ok(Forest {
        trees,
        params: params.clone(),
        p,
        n,
        dataset_fingerprint: dataset.fingerprint(),
    })
}

impl Forest {
    /// Average over trees of the leaf mean reached by standard descent
    /// (x_j ≤ t goes left).
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.p {
            return Err(Error::DimensionMismatch(format!(
                "query has length {}, forest expects {}",
                x.len(),
                self.p
            )));
        }
        let sum: f64 = self.trees.iter().map(|t| predict_tree(t, x)).sum();
        Ok(sum / self.trees.len() as f64)
    }

    /// Per-row prediction averaging only the trees for which the row is
    /// out-of-bag; `None` where no tree leaves the row out. Trees are
    /// accumulated in index order.
    pub fn oob_predict(&self, dataset: &Dataset) -> Result<Vec<Option<f64>>> {
        if dataset.n() != self.n || dataset.p() != self.p {
            return Err(Error::DimensionMismatch(format!(
                "dataset is {}x{}, forest was fit on {}x{}",
                dataset.n(),
                dataset.p(),
                self.n,
                self.p
            )));
        }
        let mut sums = vec![0.0; self.n];
        let mut counts = vec![0u32; self.n];
        for tree in &self.trees {
            for &i in &tree.oob {
                sums[i as usize] += predict_row_tree(tree, dataset, i as usize);
                counts[i as usize] += 1;
            }
        }
        Ok((0..self.n)
            .map(|i| (counts[i] > 0).then(|| sums[i] / counts[i] as f64))
            .collect())
    }

    /// Proportion of output variance explained by the OOB predictions. Rows
    /// without any OOB prediction are excluded from the error sum and the
    /// variance; may be negative for useless forests.
    pub fn oob_explained_variance(&self, dataset: &Dataset) -> Result<f64> {
        let preds = self.oob_predict(dataset)?;
        explained_variance(dataset.output(), &preds).map(|ev| ev.0)
    }
}

/// Standard descent of one tree; returns the reached leaf's mean.
pub fn predict_tree(tree: &Tree, x: &[f64]) -> f64 {
    let mut node = &tree.nodes[0];
    while let (Some(split), Some((l, r))) = (node.split, node.children) {
        let next = if x[split.var as usize] <= split.threshold { l } else { r };
        node = &tree.nodes[next as usize];
    }
    node.mean
}

/// Standard descent addressing the query by dataset row.
pub fn predict_row_tree(tree: &Tree, dataset: &Dataset, row: usize) -> f64 {
    let mut node = &tree.nodes[0];
    while let (Some(split), Some((l, r))) = (node.split, node.children) {
        let go_left = dataset.value(row, split.var as usize) <= split.threshold;
        node = &tree.nodes[if go_left { l } else { r } as usize];
    }
    node.mean
}

/// 1 − Σ(y_i − pred_i)² / Σ(y_i − ȳ)², both sums over rows that carry a
/// prediction. Returns (value, covered rows, skipped rows).
pub fn explained_variance(outputs: &[f64], preds: &[Option<f64>]) -> Result<(f64, usize, usize)> {
    if outputs.len() != preds.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} outputs against {} predictions",
            outputs.len(),
            preds.len()
        )));
    }
    let mut sum_y = 0.0;
    let mut covered = 0usize;
    for (y, p) in outputs.iter().zip(preds) {
        if p.is_some() {
            sum_y += y;
            covered += 1;
        }
    }
    if covered == 0 {
        return Err(Error::NoCoverage);
    }
    let mean = sum_y / covered as f64;
    let mut ss_total = 0.0;
    let mut ss_err = 0.0;
    for (y, p) in outputs.iter().zip(preds) {
        if let Some(pred) = p {
            ss_total += (y - mean) * (y - mean);
            ss_err += (y - pred) * (y - pred);
        }
    }
    if ss_total == 0.0 {
        return Err(Error::ConstantOutput);
    }
    Ok((1.0 - ss_err / ss_total, covered, outputs.len() - covered))
}

/// Writes the forest as JSON: params, then per tree the node array and the
/// in-bag/OOB index lists.
pub fn save_forest(forest: &Forest, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer(&mut writer, forest).map_err(|e| Error::Serialization(e.to_string()))?;
    writer.flush().map_err(|e| Error::io(path.as_ref(), e))?;
    Ok(())
}

pub fn load_forest(path: impl AsRef<Path>) -> Result<Forest> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    let forest: Forest =
        serde_json::from_str(&text).map_err(|e| Error::Serialization(e.to_string()))?;
    validate_structure(&forest)?;
    Ok(forest)
}

fn validate_structure(forest: &Forest) -> Result<()> {
    let bad = |msg: String| Err(Error::Serialization(msg));
    if forest.trees.is_empty() {
        return bad("forest holds no trees".into());
    }
    for (t, tree) in forest.trees.iter().enumerate() {
        if tree.nodes.is_empty() {
            return bad(format!("tree {t} has no nodes"));
        }
        for (id, node) in tree.nodes.iter().enumerate() {
            if node.split.is_some() != node.children.is_some() {
                return bad(format!("tree {t} node {id} mixes leaf and split fields"));
            }
            if let Some((l, r)) = node.children {
                let (l, r) = (l as usize, r as usize);
                if l <= id || r <= id || l >= tree.nodes.len() || r >= tree.nodes.len() {
                    return bad(format!("tree {t} node {id} has out-of-order children"));
                }
            }
            if let Some(split) = node.split {
                if split.var as usize >= forest.p {
                    return bad(format!("tree {t} node {id} splits on unknown variable"));
                }
            }
        }
    }
    Ok(())
}

struct OpenNode {
    id: u32,
    start: usize,
    len: usize,
    depth: u16,
}

#[derive(Clone, Copy)]
struct BestSplit {
    var: u32,
    threshold: f64,
    n_left: usize,
    score: f64,
}

fn node_stub(depth: u16) -> TreeNode {
    TreeNode {
        depth,
        split: None,
        children: None,
        mean: 0.0,
        indices: Vec::new(),
    }
}

fn resample(rng: &mut ChaCha8Rng, n: usize, mode: Resampling) -> (Vec<u32>, Vec<u32>) {
    let mut drawn = vec![false; n];
    let mut in_bag: Vec<u32>;
    match mode {
        Resampling::Bootstrap => {
            in_bag = (0..n)
                .map(|_| {
                    let i = rng.gen_range(0..n);
                    drawn[i] = true;
                    i as u32
                })
                .collect();
        }
        Resampling::Subsample { a_n } => {
            let mut pool: Vec<u32> = (0..n as u32).collect();
            in_bag = Vec::with_capacity(a_n);
            for k in 0..a_n {
                let j = rng.gen_range(k..n);
                pool.swap(k, j);
                drawn[pool[k] as usize] = true;
                in_bag.push(pool[k]);
            }
        }
    }
    in_bag.sort_unstable();
    let oob = (0..n as u32).filter(|&i| !drawn[i as usize]).collect();
    (in_bag, oob)
}

fn is_pure(y: &[f64], slice: &[u32]) -> bool {
    let first = y[slice[0] as usize];
    slice.iter().all(|&i| y[i as usize] == first)
}

fn min_child_size(params: &ForestParams, parent: usize) -> usize {
    let balanced = (params.gamma * parent as f64).ceil() as usize;
    params.min_node_size.max(balanced)
}

/// Partial Fisher-Yates draw of `m` distinct variables, sorted ascending.
fn draw_candidates(rng: &mut ChaCha8Rng, pool: &mut [u32], out: &mut Vec<u32>, m: usize) {
    out.clear();
    for k in 0..m {
        let j = rng.gen_range(k..pool.len());
        pool.swap(k, j);
        out.push(pool[k]);
    }
    out.sort_unstable();
}

/// Best admissible split over the candidate variables, maximizing
/// Σ_left²/n_left + Σ_right²/n_right. Candidates ascend and thresholds ascend
/// within each candidate, so score ties keep the lowest variable index, then
/// the lowest threshold.
fn best_split(
    dataset: &Dataset,
    y: &[f64],
    slice: &[u32],
    cand: &[u32],
    pairs: &mut Vec<(f64, f64)>,
    params: &ForestParams,
    sum: f64,
) -> Option<BestSplit> {
    let len = slice.len();
    let min_child = min_child_size(params, len);
    if 2 * min_child > len {
        return None;
    }
    let baseline = sum * sum / len as f64;
    let mut best: Option<BestSplit> = None;
    for &var in cand {
        let col = dataset.column(var as usize);
        pairs.clear();
        pairs.extend(slice.iter().map(|&i| (col[i as usize], y[i as usize])));
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let mut cum = 0.0;
        for k in 0..len - 1 {
            cum += pairs[k].1;
            if pairs[k].0 == pairs[k + 1].0 {
                continue;
            }
            let n_l = k + 1;
            let n_r = len - n_l;
            if n_l < min_child || n_r < min_child {
                continue;
            }
            let rest = sum - cum;
            let score = cum * cum / n_l as f64 + rest * rest / n_r as f64;
            if score > best.map_or(baseline, |b| b.score) {
                // Midpoint between the bounding values; if rounding lands the
                // midpoint on the right value, fall back to the left one so
                // that `x ≤ t` separates exactly n_l observations.
                let mut threshold = 0.5 * (pairs[k].0 + pairs[k + 1].0);
                if threshold >= pairs[k + 1].0 {
                    threshold = pairs[k].0;
                }
                best = Some(BestSplit {
                    var,
                    threshold,
                    n_left: n_l,
                    score,
                });
            }
        }
    }
    best
}

fn grow_tree(dataset: &Dataset, params: &ForestParams, mut rng: ChaCha8Rng) -> Tree {
    let n = dataset.n();
    let p = dataset.p();
    let y = dataset.output();
    let (in_bag, oob) = resample(&mut rng, n, params.resampling);
    let mtry = params.effective_mtry(p);

    // One index buffer per tree, partitioned in place; every queue entry owns
    // a disjoint range. Partitions are stable, and the buffer starts sorted,
    // so every node's range stays ascending.
    let mut buf = in_bag.clone();
    let mut scratch: Vec<u32> = Vec::with_capacity(buf.len());
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(buf.len());
    let mut pool: Vec<u32> = (0..p as u32).collect();
    let mut cand: Vec<u32> = Vec::with_capacity(mtry);

    let mut nodes = vec![node_stub(0)];
    let mut leaves_total = 1usize;
    let mut queue = VecDeque::new();
    queue.push_back(OpenNode {
        id: 0,
        start: 0,
        len: buf.len(),
        depth: 0,
    });

    while let Some(open) = queue.pop_front() {
        let range = open.start..open.start + open.len;
        let sum: f64 = buf[range.clone()].iter().map(|&i| y[i as usize]).sum();
        nodes[open.id as usize].mean = sum / open.len as f64;

        let can_split = open.len >= 2 * params.min_node_size
            && params.max_depth.is_none_or(|d| (open.depth as usize) < d)
            && params.max_leaves.is_none_or(|m| leaves_total < m)
            && !is_pure(y, &buf[range.clone()]);
        let best = if can_split {
            let m = if params.delta > 0.0 && rng.gen::<f64>() < params.delta {
                1
            } else {
                mtry
            };
            draw_candidates(&mut rng, &mut pool, &mut cand, m);
            best_split(dataset, y, &buf[range.clone()], &cand, &mut pairs, params, sum)
        } else {
            None
        };

        match best {
            Some(split) => {
                let col = dataset.column(split.var as usize);
                scratch.clear();
                let mut write = open.start;
                for r in range.clone() {
                    let i = buf[r];
                    if col[i as usize] <= split.threshold {
                        buf[write] = i;
                        write += 1;
                    } else {
                        scratch.push(i);
                    }
                }
                buf[write..range.end].copy_from_slice(&scratch);
                let n_left = write - open.start;
                debug_assert_eq!(n_left, split.n_left);

                let left = nodes.len() as u32;
                let right = left + 1;
                nodes[open.id as usize].split = Some(Split {
                    var: split.var,
                    threshold: split.threshold,
                });
                nodes[open.id as usize].children = Some((left, right));
                nodes.push(node_stub(open.depth + 1));
                nodes.push(node_stub(open.depth + 1));
                leaves_total += 1;
                queue.push_back(OpenNode {
                    id: left,
                    start: open.start,
                    len: n_left,
                    depth: open.depth + 1,
                });
                queue.push_back(OpenNode {
                    id: right,
                    start: open.start + n_left,
                    len: open.len - n_left,
                    depth: open.depth + 1,
                });
            }
            None => {
                nodes[open.id as usize].indices = buf[range].to_vec();
            }
        }
    }
    Tree { nodes, in_bag, oob }
}
