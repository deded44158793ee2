//! Variable subsets, their occurrence frequencies along forest paths, and
//! the two paired subset samplers.
//!
//! Every internal node of every tree contributes one occurrence of the set
//! of distinct split variables on its root-to-self path (own split
//! included). Subsets equal to the full variable set are discarded; the
//! empty set cannot occur. The resulting frequency table p̂ drives the
//! importance sampler; a kernel-weight-proportional Monte-Carlo sampler
//! serves as the ablation baseline.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

use crate::combinatorics::binomial;
use crate::error::{Error, Result};
use crate::forest::Forest;

/// A set of variable indices out of p columns. Bitmask up to p = 64, sorted
/// index list beyond; one run only ever mixes subsets of one representation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub enum VarSubset {
    Bits { p: u16, mask: u64 },
    Sparse { p: u16, vars: Vec<u16> },
}

impl VarSubset {
    pub fn empty(p: usize) -> Self {
        assert!(p >= 1 && p <= u16::MAX as usize);
        if p <= 64 {
            VarSubset::Bits { p: p as u16, mask: 0 }
        } else {
            VarSubset::Sparse {
                p: p as u16,
                vars: Vec::new(),
            }
        }
    }

    pub fn full(p: usize) -> Self {
        let mut s = Self::empty(p);
        for j in 0..p {
            s.insert(j);
        }
        s
    }

    pub fn new(p: usize, vars: impl IntoIterator<Item = usize>) -> Self {
        let mut s = Self::empty(p);
        for j in vars {
            s.insert(j);
        }
        s
    }

    pub fn p(&self) -> usize {
        match self {
            VarSubset::Bits { p, .. } | VarSubset::Sparse { p, .. } => *p as usize,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            VarSubset::Bits { mask, .. } => mask.count_ones() as usize,
            VarSubset::Sparse { vars, .. } => vars.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_full(&self) -> bool {
        self.len() == self.p()
    }

    pub fn contains(&self, j: usize) -> bool {
        match self {
            VarSubset::Bits { mask, .. } => (mask >> j) & 1 == 1,
            VarSubset::Sparse { vars, .. } => vars.binary_search(&(j as u16)).is_ok(),
        }
    }

    pub fn insert(&mut self, j: usize) {
        assert!(j < self.p(), "variable {j} out of range for p = {}", self.p());
        match self {
            VarSubset::Bits { mask, .. } => *mask |= 1 << j,
            VarSubset::Sparse { vars, .. } => {
                if let Err(pos) = vars.binary_search(&(j as u16)) {
                    vars.insert(pos, j as u16);
                }
            }
        }
    }

    pub fn complement(&self) -> Self {
        let p = self.p();
        match self {
            VarSubset::Bits { mask, .. } => {
                let all = if p == 64 { u64::MAX } else { (1u64 << p) - 1 };
                VarSubset::Bits {
                    p: p as u16,
                    mask: all & !mask,
                }
            }
            VarSubset::Sparse { vars, .. } => VarSubset::Sparse {
                p: p as u16,
                vars: (0..p as u16).filter(|v| vars.binary_search(v).is_err()).collect(),
            },
        }
    }

    /// Member variables, ascending.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        let (bits, sparse) = match self {
            VarSubset::Bits { p, mask } => (Some((*p as usize, *mask)), None),
            VarSubset::Sparse { vars, .. } => (None, Some(vars.iter())),
        };
        bits.into_iter()
            .flat_map(|(p, mask)| (0..p).filter(move |j| (mask >> j) & 1 == 1))
            .chain(sparse.into_iter().flatten().map(|&v| v as usize))
    }

    pub fn to_indices(&self) -> Vec<usize> {
        self.iter().collect()
    }
}

/// Formats as 1-based variable numbers joined by '+', e.g. "1+3+5"; the
/// empty set prints "-". Matches the X1..Xp column naming.
impl std::fmt::Display for VarSubset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_empty() {
            return f.write_str("-");
        }
        let mut first = true;
        for j in self.iter() {
            if !first {
                f.write_str("+")?;
            }
            write!(f, "{}", j + 1)?;
            first = false;
        }
        Ok(())
    }
}

/// Occurrence counts of path subsets over a whole forest, in deterministic
/// (ordered-map) iteration order.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetTable {
    counts: BTreeMap<VarSubset, u64>,
    total: u64,
    p: usize,
}

impl SubsetTable {
    pub fn p(&self) -> usize {
        self.p
    }

    /// Sum of stored counts.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn count(&self, subset: &VarSubset) -> u64 {
        self.counts.get(subset).copied().unwrap_or(0)
    }

    /// Normalized occurrence frequency p̂(U); `None` if U never occurred.
    pub fn frequency(&self, subset: &VarSubset) -> Option<f64> {
        self.counts.get(subset).map(|&c| c as f64 / self.total as f64)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VarSubset, u64)> + '_ {
        self.counts.iter().map(|(s, &c)| (s, c))
    }
}

/// Counts, for every internal node of every tree, the distinct split
/// variables on the root-to-node path including the node's own split.
/// Full-set prefixes are discarded.
pub fn extract_path_subsets(forest: &Forest) -> SubsetTable {
    let p = forest.p;
    let mut counts: BTreeMap<VarSubset, u64> = BTreeMap::new();
    let mut total = 0u64;
    let mut stack: Vec<(u32, VarSubset)> = Vec::new();
    for tree in &forest.trees {
        stack.push((0, VarSubset::empty(p)));
        while let Some((id, prefix)) = stack.pop() {
            let node = &tree.nodes[id as usize];
            if let (Some(split), Some((l, r))) = (node.split, node.children) {
                let mut set = prefix;
                set.insert(split.var as usize);
                if !set.is_full() {
                    *counts.entry(set.clone()).or_insert(0) += 1;
                    total += 1;
                }
                stack.push((l, set.clone()));
                stack.push((r, set));
            }
        }
    }
    SubsetTable { counts, total, p }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DrawOrigin {
    Drawn,
    Complement,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DrawEntry {
    pub subset: VarSubset,
    /// Probability with which this entry's pair was drawn. A pair enters the
    /// sample as one unit, so both of its rows carry the same value and the
    /// per-subset correction divides by it.
    pub p_hat: f64,
    pub origin: DrawOrigin,
}

/// 2K entries: each drawn subset immediately followed by its complement.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SubsetDraw {
    pub entries: Vec<DrawEntry>,
    pub k: usize,
}

/// K draws from the path-frequency distribution, each paired with its
/// complement. Both rows of a pair carry the drawn subset's frequency: the
/// pair appears exactly when its drawn half is sampled, so that frequency is
/// the appearance probability the correction must divide by.
pub fn draw_importance(table: &SubsetTable, k: usize, seed: u64) -> Result<SubsetDraw> {
    if table.is_empty() {
        return Err(Error::EmptySubsetTable);
    }
    if k == 0 {
        return Err(Error::InvalidParams("K must be at least 1".into()));
    }
    let items: Vec<(&VarSubset, u64)> = table.iter().collect();
    let mut cumulative = Vec::with_capacity(items.len());
    let mut acc = 0.0;
    for (_, c) in &items {
        acc += *c as f64;
        cumulative.push(acc);
    }
    let total = acc;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(2 * k);
    for _ in 0..k {
        let u = rng.gen::<f64>() * total;
        let idx = cumulative.partition_point(|&c| c <= u).min(items.len() - 1);
        let subset = items[idx].0.clone();
        let p_hat = items[idx].1 as f64 / table.total as f64;
        let complement = subset.complement();
        entries.push(DrawEntry {
            subset,
            p_hat,
            origin: DrawOrigin::Drawn,
        });
        entries.push(DrawEntry {
            subset: complement,
            p_hat,
            origin: DrawOrigin::Complement,
        });
    }
    Ok(SubsetDraw { entries, k })
}

/// K paired draws with subset probability exactly proportional to the
/// Shapley kernel weight: a size s is drawn with probability proportional to
/// (p−1)/(s(p−s)), then a uniform subset of that size. Each entry's `p_hat`
/// is the exact per-subset sampling probability, so the solver's w/p̂
/// correction collapses to equal row weights.
pub fn draw_monte_carlo(p: usize, k: usize, seed: u64) -> Result<SubsetDraw> {
    if p < 2 {
        return Err(Error::InvalidParams(format!(
            "paired sampling needs p >= 2, got {p}"
        )));
    }
    if k == 0 {
        return Err(Error::InvalidParams("K must be at least 1".into()));
    }
    // size_weight[s-1] = Σ_{|U|=s} w(U) = C(p,s) · w(p,s).
    let size_weight: Vec<f64> = (1..p)
        .map(|s| (p - 1) as f64 / (s * (p - s)) as f64)
        .collect();
    let z: f64 = size_weight.iter().sum();
    let subset_prob: Vec<f64> = (1..p)
        .map(|s| size_weight[s - 1] / z / binomial(p, s))
        .collect();
    let mut cumulative = Vec::with_capacity(size_weight.len());
    let mut acc = 0.0;
    for w in &size_weight {
        acc += w;
        cumulative.push(acc);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<usize> = (0..p).collect();
    let mut entries = Vec::with_capacity(2 * k);
    for _ in 0..k {
        let u = rng.gen::<f64>() * acc;
        let s = cumulative.partition_point(|&c| c <= u).min(p - 2) + 1;
        for i in 0..s {
            let j = rng.gen_range(i..p);
            pool.swap(i, j);
        }
        let subset = VarSubset::new(p, pool[..s].iter().copied());
        entries.push(DrawEntry {
            subset: subset.clone(),
            p_hat: subset_prob[s - 1],
            origin: DrawOrigin::Drawn,
        });
        // Pair probability; equals the complement's own draw probability
        // because the kernel is symmetric in s and p−s.
        entries.push(DrawEntry {
            subset: subset.complement(),
            p_hat: subset_prob[s - 1],
            origin: DrawOrigin::Complement,
        });
    }
    Ok(SubsetDraw { entries, k })
}

/// Dumps (subset, count, frequency) rows in table order.
pub fn write_subset_table_csv(table: &SubsetTable, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref()).map_err(|e| Error::Csv {
        path: path.as_ref().into(),
        message: e.to_string(),
    })?;
    writer
        .write_record(["subset", "count", "frequency"])
        .map_err(|e| Error::Csv {
            path: path.as_ref().into(),
            message: e.to_string(),
        })?;
    for (subset, count) in table.iter() {
        let freq = count as f64 / table.total() as f64;
        writer
            .write_record([subset.to_string(), count.to_string(), format!("{freq}")])
            .map_err(|e| Error::Csv {
                path: path.as_ref().into(),
                message: e.to_string(),
            })?;
    }
    writer.flush().map_err(|e| Error::io(path.as_ref(), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{Forest, ForestParams, Split, Tree, TreeNode};

    fn leaf(depth: u16) -> TreeNode {
        TreeNode {
            depth,
            split: None,
            children: None,
            mean: 0.0,
            indices: vec![],
        }
    }

    fn internal(depth: u16, var: u32, left: u32, right: u32) -> TreeNode {
        TreeNode {
            depth,
            split: Some(Split { var, threshold: 0.0 }),
            children: Some((left, right)),
            mean: 0.0,
            indices: vec![],
        }
    }

    fn forest_of(trees: Vec<Tree>, p: usize) -> Forest {
        Forest {
            trees,
            params: ForestParams::default(),
            p,
            n: 1,
            dataset_fingerprint: String::new(),
        }
    }

    #[test]
    fn chain_path_counts_growing_prefixes() {
        // root splits on 5, its left child on 3, that child's left on 2.
        let tree = Tree {
            nodes: vec![
                internal(0, 5, 1, 2),
                internal(1, 3, 3, 4),
                leaf(1),
                internal(2, 2, 5, 6),
                leaf(2),
                leaf(3),
                leaf(3),
            ],
            in_bag: vec![0],
            oob: vec![],
        };
        let table = extract_path_subsets(&forest_of(vec![tree], 8));
        assert_eq!(table.len(), 3);
        assert_eq!(table.count(&VarSubset::new(8, [5])), 1);
        assert_eq!(table.count(&VarSubset::new(8, [3, 5])), 1);
        assert_eq!(table.count(&VarSubset::new(8, [2, 3, 5])), 1);
        assert_eq!(table.total(), 3);
    }

    #[test]
    fn depth_two_tree_counts_per_node() {
        // root splits on 1, both children split on 2 (0-based: 0 and 1).
        let tree = Tree {
            nodes: vec![
                internal(0, 0, 1, 2),
                internal(1, 1, 3, 4),
                internal(1, 1, 5, 6),
                leaf(2),
                leaf(2),
                leaf(2),
                leaf(2),
            ],
            in_bag: vec![0],
            oob: vec![],
        };
        let table = extract_path_subsets(&forest_of(vec![tree], 3));
        assert_eq!(table.count(&VarSubset::new(3, [0])), 1);
        assert_eq!(table.count(&VarSubset::new(3, [0, 1])), 2);
        assert_eq!(table.total(), 3);
    }

    #[test]
    fn repeated_split_variable_keeps_counting_the_same_set() {
        let tree = Tree {
            nodes: vec![internal(0, 0, 1, 2), internal(1, 0, 3, 4), leaf(1), leaf(2), leaf(2)],
            in_bag: vec![0],
            oob: vec![],
        };
        let table = extract_path_subsets(&forest_of(vec![tree], 2));
        assert_eq!(table.count(&VarSubset::new(2, [0])), 2);
        assert_eq!(table.total(), 2);
    }

    #[test]
    fn full_set_prefixes_are_discarded() {
        // p = 2, root splits 0, left child splits 1: the child's prefix is
        // the full set.
        let tree = Tree {
            nodes: vec![internal(0, 0, 1, 2), internal(1, 1, 3, 4), leaf(1), leaf(2), leaf(2)],
            in_bag: vec![0],
            oob: vec![],
        };
        let table = extract_path_subsets(&forest_of(vec![tree], 2));
        assert_eq!(table.len(), 1);
        assert_eq!(table.count(&VarSubset::new(2, [0])), 1);
    }

    #[test]
    fn single_leaf_forest_yields_empty_table_and_draw_errors() {
        let tree = Tree {
            nodes: vec![leaf(0)],
            in_bag: vec![0],
            oob: vec![],
        };
        let table = extract_path_subsets(&forest_of(vec![tree], 4));
        assert!(table.is_empty());
        assert!(matches!(
            draw_importance(&table, 5, 1),
            Err(Error::EmptySubsetTable)
        ));
    }

    #[test]
    fn frequencies_normalize_to_one() {
        let ds = crate::data::generate(&crate::data::GeneratorSpec::new(
            crate::data::Experiment::Exp2,
            300,
            21,
        ))
        .unwrap();
        let forest = crate::forest::fit(
            &ds,
            &ForestParams {
                num_trees: 20,
                seed: 3,
                ..ForestParams::default()
            },
        )
        .unwrap();
        let table = extract_path_subsets(&forest);
        let sum: f64 = table
            .iter()
            .map(|(_, c)| c as f64 / table.total() as f64)
            .sum();
        assert!((sum - 1.0).abs() < 1e-12);
        for (subset, count) in table.iter() {
            assert!(count >= 1);
            assert!(!subset.is_empty() && !subset.is_full());
        }
    }

    /// Independent recursive re-extraction; compared against the iterative
    /// walk over a fitted forest.
    fn recount(
        tree: &Tree,
        id: u32,
        prefix: &VarSubset,
        out: &mut BTreeMap<VarSubset, u64>,
    ) {
        let node = &tree.nodes[id as usize];
        if let (Some(split), Some((l, r))) = (node.split, node.children) {
            let mut set = prefix.clone();
            set.insert(split.var as usize);
            if !set.is_full() {
                *out.entry(set.clone()).or_insert(0) += 1;
            }
            recount(tree, l, &set, out);
            recount(tree, r, &set, out);
        }
    }

    #[test]
    fn extraction_matches_recursive_oracle() {
        let ds = crate::data::generate(&crate::data::GeneratorSpec::new(
            crate::data::Experiment::Exp1a,
            200,
            31,
        ))
        .unwrap();
        let forest = crate::forest::fit(
            &ds,
            &ForestParams {
                num_trees: 10,
                seed: 5,
                ..ForestParams::default()
            },
        )
        .unwrap();
        let table = extract_path_subsets(&forest);
        let mut oracle: BTreeMap<VarSubset, u64> = BTreeMap::new();
        for tree in &forest.trees {
            recount(tree, 0, &VarSubset::empty(forest.p), &mut oracle);
        }
        assert_eq!(table.counts, oracle);
        assert_eq!(table.total(), oracle.values().sum::<u64>());
    }

    fn two_subset_table() -> SubsetTable {
        let mut counts = BTreeMap::new();
        counts.insert(VarSubset::new(3, [0]), 3u64);
        counts.insert(VarSubset::new(3, [1, 2]), 1u64);
        SubsetTable {
            counts,
            total: 4,
            p: 3,
        }
    }

    #[test]
    fn importance_draw_pairs_complements_and_shares_the_pair_probability() {
        let table = two_subset_table();
        let draw = draw_importance(&table, 50, 7).unwrap();
        assert_eq!(draw.entries.len(), 100);
        for pair in draw.entries.chunks(2) {
            assert_eq!(pair[0].origin, DrawOrigin::Drawn);
            assert_eq!(pair[1].origin, DrawOrigin::Complement);
            assert_eq!(pair[1].subset, pair[0].subset.complement());
            assert_eq!(pair[0].subset, pair[1].subset.complement());
            assert_eq!(pair[0].subset.len() + pair[1].subset.len(), 3);
            let expect = table.frequency(&pair[0].subset).unwrap();
            assert_eq!(pair[0].p_hat, expect);
            assert_eq!(pair[1].p_hat, expect);
        }
    }

    #[test]
    fn complements_outside_the_table_still_carry_the_draw_probability() {
        let mut counts = BTreeMap::new();
        counts.insert(VarSubset::new(3, [0]), 5u64);
        let table = SubsetTable {
            counts,
            total: 5,
            p: 3,
        };
        let draw = draw_importance(&table, 4, 9).unwrap();
        for pair in draw.entries.chunks(2) {
            assert_eq!(pair[0].p_hat, 1.0);
            assert!(table.frequency(&pair[1].subset).is_none());
            assert_eq!(pair[1].p_hat, 1.0);
        }
    }

    #[test]
    fn draws_are_deterministic_per_seed() {
        let table = two_subset_table();
        assert_eq!(
            draw_importance(&table, 20, 5).unwrap(),
            draw_importance(&table, 20, 5).unwrap()
        );
        assert_ne!(
            draw_importance(&table, 20, 5).unwrap(),
            draw_importance(&table, 20, 6).unwrap()
        );
        assert_eq!(
            draw_monte_carlo(6, 20, 5).unwrap(),
            draw_monte_carlo(6, 20, 5).unwrap()
        );
    }

    #[test]
    fn importance_draw_frequencies_match_p_hat() {
        // Chi-square goodness of fit at K = 10^5 against the table
        // frequencies 3/4 and 1/4; df = 1, 0.999 quantile ≈ 10.83.
        let table = two_subset_table();
        let k = 100_000usize;
        let draw = draw_importance(&table, k, 12).unwrap();
        let first = VarSubset::new(3, [0]);
        let drawn_first = draw
            .entries
            .iter()
            .filter(|e| e.origin == DrawOrigin::Drawn && e.subset == first)
            .count();
        let expected = [0.75 * k as f64, 0.25 * k as f64];
        let observed = [drawn_first as f64, (k - drawn_first) as f64];
        let chi2: f64 = observed
            .iter()
            .zip(&expected)
            .map(|(o, e)| (o - e) * (o - e) / e)
            .sum();
        assert!(chi2 < 10.83, "chi-square {chi2}");
    }

    #[test]
    fn monte_carlo_p2_draws_singletons_with_exact_probability() {
        let draw = draw_monte_carlo(2, 1000, 3).unwrap();
        let mut seen_first = 0;
        for pair in draw.entries.chunks(2) {
            assert_eq!(pair[0].subset.len(), 1);
            assert_eq!(pair[0].p_hat, 0.5);
            assert_eq!(pair[1].p_hat, 0.5);
            if pair[0].subset.contains(0) {
                seen_first += 1;
            }
        }
        assert!(seen_first > 400 && seen_first < 600);
    }

    #[test]
    fn monte_carlo_p4_prefers_odd_sizes_two_to_one() {
        // Per-subset probabilities: size 1 and 3 → (1/2.75)/4, size 2 →
        // (0.75/2.75)/6; the former is exactly twice the latter.
        let draw = draw_monte_carlo(4, 30_000, 8).unwrap();
        let (mut q1, mut q2) = (None, None);
        let mut size_counts = [0usize; 3];
        for e in draw.entries.iter().step_by(2) {
            size_counts[e.subset.len() - 1] += 1;
            match e.subset.len() {
                1 => q1 = Some(e.p_hat),
                2 => q2 = Some(e.p_hat),
                _ => {}
            }
        }
        let (q1, q2) = (q1.unwrap(), q2.unwrap());
        assert!((q1 / q2 - 2.0).abs() < 1e-12);
        // Size frequencies ∝ (1, 0.75, 1)/2.75 at 30k draws.
        let total = 30_000f64;
        assert!((size_counts[0] as f64 / total - 1.0 / 2.75).abs() < 0.02);
        assert!((size_counts[1] as f64 / total - 0.75 / 2.75).abs() < 0.02);
        assert!((size_counts[2] as f64 / total - 1.0 / 2.75).abs() < 0.02);
    }

    #[test]
    fn monte_carlo_complement_probabilities_are_symmetric() {
        let draw = draw_monte_carlo(7, 500, 11).unwrap();
        for pair in draw.entries.chunks(2) {
            assert_eq!(pair[1].subset, pair[0].subset.complement());
            // w(s) = w(p−s) and C(p,s) = C(p,p−s), so the exact sampling
            // probabilities agree bitwise.
            assert_eq!(pair[0].p_hat.to_bits(), pair[1].p_hat.to_bits());
        }
    }

    #[test]
    fn sparse_representation_covers_large_p() {
        let p = 70;
        let mut s = VarSubset::new(p, [68, 3, 68, 40]);
        assert!(matches!(s, VarSubset::Sparse { .. }));
        assert_eq!(s.len(), 3);
        assert_eq!(s.to_indices(), vec![3, 40, 68]);
        assert!(s.contains(40) && !s.contains(39));
        s.insert(0);
        assert_eq!(s.len(), 4);
        let comp = s.complement();
        assert_eq!(comp.len(), p - 4);
        assert!(!comp.contains(68) && comp.contains(39));
        let mut roundtrip = comp.complement();
        assert_eq!(roundtrip, s);
        roundtrip.insert(1);
        assert_eq!(format!("{}", VarSubset::new(p, [0, 4, 69])), "1+5+70");

        let draw = draw_monte_carlo(p, 50, 2).unwrap();
        for pair in draw.entries.chunks(2) {
            assert_eq!(pair[0].subset.len() + pair[1].subset.len(), p);
        }
    }

    #[test]
    fn bitmask_boundary_at_p64() {
        let s = VarSubset::new(64, [0, 63]);
        assert!(matches!(s, VarSubset::Bits { .. }));
        let comp = s.complement();
        assert_eq!(comp.len(), 62);
        assert!(!comp.contains(63) && comp.contains(62));
    }

    #[test]
    fn table_csv_dump_lists_sorted_indices() {
        let table = two_subset_table();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.csv");
        write_subset_table_csv(&table, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "subset,count,frequency");
        assert!(lines.contains(&"1,3,0.75"));
        assert!(lines.contains(&"2+3,1,0.25"));
    }
}
