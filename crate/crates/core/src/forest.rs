//! Random-forest regression: CART trees with variance-reduction splits,
//! each grown on a bootstrap resample and considering `mtry` random columns
//! per split.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayView1, ArrayView2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const FOREST_FORMAT: &str = "forest";
pub const FOREST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Columns tried per split; `None` means ceil(p / 3).
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    pub seed: u64,
    /// Grow each tree on a bootstrap resample; when false every tree sees
    /// the full training set once.
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 500,
            mtry: None,
            min_leaf: 5,
            seed: 0,
            bootstrap: true,
        }
    }
}

impl ForestConfig {
    pub fn resolved_mtry(&self, p: usize) -> usize {
        self.mtry.unwrap_or_else(|| p.div_ceil(3)).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RegNode {
    Leaf {
        value: f64,
        n: usize,
    },
    Split {
        column: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// A regression tree with nodes in preorder; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegTree {
    pub nodes: Vec<RegNode>,
}

impl RegTree {
    pub fn predict_row(&self, row: ArrayView1<f64>) -> f64 {
        let mut id = 0;
        loop {
            match self.nodes[id] {
                RegNode::Leaf { value, .. } => return value,
                RegNode::Split { column, threshold, left, right } => {
                    id = if row[column] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, RegNode::Leaf { .. })).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub format: String,
    pub version: u32,
    pub config: ForestConfig,
    pub n_features: usize,
    pub trees: Vec<RegTree>,
    /// Training rows left out of each tree's bootstrap sample.
    pub oob_indices: Vec<Vec<usize>>,
}

struct Grower<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [f64],
    mtry: usize,
    min_leaf: usize,
}

struct BestSplit {
    column: usize,
    threshold: f64,
    gain: f64,
}

impl Grower<'_> {
    fn grow<R: Rng>(&self, rows: Vec<usize>, rng: &mut R) -> RegTree {
        let mut tree = RegTree { nodes: Vec::new() };
        self.grow_node(&mut tree, rows, rng);
        tree
    }

    fn grow_node<R: Rng>(&self, tree: &mut RegTree, mut rows: Vec<usize>, rng: &mut R) -> usize {
        let id = tree.nodes.len();
        let n = rows.len();
        let mean = rows.iter().map(|&i| self.y[i]).sum::<f64>() / n as f64;
        tree.nodes.push(RegNode::Leaf { value: mean, n });
        if n < 2 * self.min_leaf {
            return id;
        }
        let Some(best) = self.best_split(&mut rows, rng) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| self.x[[i, best.column]] <= best.threshold);
        let left = self.grow_node(tree, l, rng);
        let right = self.grow_node(tree, r, rng);
        tree.nodes[id] = RegNode::Split {
            column: best.column,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    /// Best variance-reduction split among `mtry` random columns, keeping at
    /// least `min_leaf` rows on each side. Ties keep the first found.
    fn best_split<R: Rng>(&self, rows: &mut [usize], rng: &mut R) -> Option<BestSplit> {
        let p = self.x.ncols();
        let n = rows.len();
        let total: f64 = rows.iter().map(|&i| self.y[i]).sum();
        let parent_score = total * total / n as f64;
        let mut best: Option<BestSplit> = None;
        for column in sample(rng, p, self.mtry.min(p)) {
            rows.sort_by(|&a, &b| self.x[[a, column]].total_cmp(&self.x[[b, column]]));
            let mut left_sum = 0.0;
            for k in 0..n - 1 {
                left_sum += self.y[rows[k]];
                let n_left = k + 1;
                let (a, b) = (self.x[[rows[k], column]], self.x[[rows[k + 1], column]]);
                if a == b || n_left < self.min_leaf || n - n_left < self.min_leaf {
                    continue;
                }
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / n_left as f64
                    + right_sum * right_sum / (n - n_left) as f64;
                let gain = score - parent_score;
                if gain > 1e-12 * (1.0 + parent_score.abs())
                    && best.as_ref().is_none_or(|b| gain > b.gain)
                {
                    let mid = a + (b - a) / 2.0;
                    best = Some(BestSplit {
                        column,
                        threshold: if mid < b { mid } else { a },
                        gain,
                    });
                }
            }
        }
        best
    }
}

pub fn fit_forest(x: ArrayView2<f64>, y: &[f64], cfg: &ForestConfig) -> Result<Forest> {
    let (n, p) = x.dim();
    if y.len() != n {
        return invalid(format!("y has {} entries for {n} rows", y.len()));
    }
    if p == 0 || cfg.n_trees == 0 {
        return invalid("forest needs at least one column and one tree");
    }
    if cfg.min_leaf == 0 {
        return invalid("min_leaf must be at least 1");
    }
    if n == 0 || n < cfg.min_leaf {
        return invalid(format!("forest needs at least min_leaf = {} rows, got {n}", cfg.min_leaf));
    }
    let mtry = cfg.resolved_mtry(p);
    if mtry > p {
        return invalid(format!("mtry {mtry} exceeds column count {p}"));
    }
    if y.iter().any(|v| !v.is_finite()) || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("outcome or covariates contain non-finite values".into()));
    }
    let grower = Grower {
        x,
        y,
        mtry,
        min_leaf: cfg.min_leaf,
    };
    let grown: Vec<(RegTree, Vec<usize>)> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(t as u64);
            let rows: Vec<usize> = if cfg.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut in_bag = vec![false; n];
            rows.iter().for_each(|&i| in_bag[i] = true);
            let oob = (0..n).filter(|&i| !in_bag[i]).collect();
            (grower.grow(rows, &mut rng), oob)
        })
        .collect();
    let (trees, oob_indices) = grown.into_iter().unzip();
    Ok(Forest {
        format: FOREST_FORMAT.to_string(),
        version: FOREST_VERSION,
        config: cfg.clone(),
        n_features: p,
        trees,
        oob_indices,
    })
}

impl Forest {
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.ncols(),
            });
        }
        let k = self.trees.len() as f64;
        Ok((0..x.nrows())
            .into_par_iter()
            .map(|i| self.trees.iter().map(|t| t.predict_row(x.row(i))).sum::<f64>() / k)
            .collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut f, self)?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Forest> {
        let mut s = String::new();
        std::fs::File::open(path)?.read_to_string(&mut s)?;
        let f: Forest = serde_json::from_str(&s)?;
        if f.format != FOREST_FORMAT || f.version != FOREST_VERSION {
            return invalid(format!("unsupported forest artifact {} v{}", f.format, f.version));
        }
        Ok(f)
    }
}

pub fn predict_forest(f: &Forest, x: ArrayView2<f64>) -> Result<Vec<f64>> {
    f.predict(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn data(n: usize, seed: u64) -> (Array2<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, 4), |_| rng.random::<f64>());
        let y = (0..n).map(|i| 5.0 * x[[i, 0]] + (x[[i, 1]] > 0.5) as u8 as f64 + 0.1 * rng.random::<f64>()).collect();
        (x, y)
    }

    fn small() -> ForestConfig {
        ForestConfig { n_trees: 30, ..Default::default() }
    }

    #[test]
    fn constant_outcome() {
        let (x, _) = data(40, 1);
        let f = fit_forest(x.view(), &[3.5; 40], &small()).unwrap();
        assert!(f.predict(x.view()).unwrap().iter().all(|&v| v == 3.5));
        assert!(f.trees.iter().all(|t| t.nodes.len() == 1));
    }

    #[test]
    fn single_leaf_predicts_mean() {
        let (x, y) = data(20, 2);
        let cfg = ForestConfig { n_trees: 1, min_leaf: 20, bootstrap: false, ..Default::default() };
        let f = fit_forest(x.view(), &y, &cfg).unwrap();
        let mean = y.iter().sum::<f64>() / 20.0;
        assert_eq!(f.trees[0].nodes.len(), 1);
        assert!(f.predict(x.view()).unwrap().iter().all(|&v| (v - mean).abs() < 1e-12));
    }

    #[test]
    fn constant_covariates_give_single_leaves() {
        let x = Array2::from_elem((30, 2), 1.0);
        let y: Vec<f64> = (0..30).map(f64::from).collect();
        let f = fit_forest(x.view(), &y, &small()).unwrap();
        assert!(f.trees.iter().all(|t| t.nodes.len() == 1));
    }

    #[test]
    fn leaves_respect_min_leaf_and_bootstrap_size() {
        let (x, y) = data(100, 3);
        let f = fit_forest(x.view(), &y, &small()).unwrap();
        for (tree, oob) in f.trees.iter().zip(&f.oob_indices) {
            let total: usize = tree
                .nodes
                .iter()
                .map(|n| match n {
                    RegNode::Leaf { n, .. } => {
                        assert!(*n >= 5);
                        *n
                    }
                    RegNode::Split { .. } => 0,
                })
                .sum();
            assert_eq!(total, 100);
            assert!(oob.iter().all(|&i| i < 100));
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let (x, y) = data(60, 4);
        let a = fit_forest(x.view(), &y, &small()).unwrap();
        let b = fit_forest(x.view(), &y, &small()).unwrap();
        assert_eq!(a, b);
        let c = fit_forest(x.view(), &y, &ForestConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn tree_order_and_duplication() {
        let (x, y) = data(60, 5);
        let f = fit_forest(x.view(), &y, &small()).unwrap();
        let base = f.predict(x.view()).unwrap();
        let mut rev = f.clone();
        rev.trees.reverse();
        let mut dup = f.clone();
        dup.trees.extend(f.trees.clone());
        for (a, (b, c)) in base.iter().zip(rev.predict(x.view()).unwrap().iter().zip(dup.predict(x.view()).unwrap())) {
            assert!((a - b).abs() < 1e-12 && (a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn errors() {
        let (x, y) = data(10, 6);
        assert!(fit_forest(x.view(), &y, &ForestConfig { min_leaf: 11, ..small() }).is_err());
        assert!(fit_forest(x.view(), &y, &ForestConfig { mtry: Some(5), ..small() }).is_err());
        let f = fit_forest(x.view(), &y, &small()).unwrap();
        assert!(matches!(f.predict(Array2::zeros((1, 3)).view()), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn artifact_round_trip() {
        let (x, y) = data(30, 7);
        let f = fit_forest(x.view(), &y, &small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rf.json");
        f.save(&path).unwrap();
        assert_eq!(Forest::load(&path).unwrap(), f);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn predictions_within_training_range(seed in 0u64..1000, n in 10usize..60) {
            let (x, y) = data(n, seed);
            let f = fit_forest(x.view(), &y, &ForestConfig { n_trees: 5, min_leaf: 2, seed, ..Default::default() }).unwrap();
            let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let probe = Array2::from_shape_fn((20, 4), |(i, j)| (i * 7 + j) as f64 / 10.0 - 0.5);
            for v in f.predict(probe.view()).unwrap() {
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }
}
