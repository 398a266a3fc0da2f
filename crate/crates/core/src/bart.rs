//! Bayesian additive regression trees with per-observation weights.
//!
//! The model is y = sum_j g(x; T_j, M_j) + e with e_i ~ N(0, sigma^2 / w_i).
//! A weight w_i scales row i's error variance, so w = 1 everywhere is the
//! ordinary unweighted model and the code below takes exactly the same path
//! for both.
//!
//! Priors:
//! - a node at depth d splits with probability beta (1 + d)^(-eta);
//! - leaf values are N(0, sigma_mu^2) on the standardized outcome, with
//!   sigma_mu = 0.5 / (k sqrt(J));
//! - sigma^2 ~ InvGamma(nu / 2, nu lambda / 2) with lambda calibrated so that
//!   P(sigma^2 < sigma_ols^2) = q under the prior.
//!
//! Sampling is backfitting MCMC. For each tree in turn we form partial
//! residuals, make one Metropolis-Hastings move (grow, prune or change) with
//! leaf values integrated out, draw the leaf values from their conjugate
//! posterior, and after the sweep draw sigma^2. Split rules are chosen
//! uniformly over covariates that vary at a node and over midpoints between
//! adjacent distinct values; because the rule prior is the same uniform
//! distribution, those terms cancel in every acceptance ratio.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linmod;
use crate::stats;

/// Lower bound for the calibration variance, hit only by a constant outcome.
const MIN_SIGMA2: f64 = 1e-16;

pub const BARTPOST_FORMAT: &str = "bartpost";
pub const BARTPOST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalProbs {
    pub grow: f64,
    pub prune: f64,
    pub change: f64,
}

impl Default for ProposalProbs {
    fn default() -> Self {
        ProposalProbs {
            grow: 0.25,
            prune: 0.25,
            change: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BartConfig {
    pub n_trees: usize,
    pub eta: f64,
    pub beta: f64,
    pub nu: f64,
    pub sigma_quantile: f64,
    pub k_scale: f64,
    pub n_burn: usize,
    pub n_keep: usize,
    pub thin: usize,
    pub proposal_probs: ProposalProbs,
}

impl Default for BartConfig {
    fn default() -> Self {
        BartConfig {
            n_trees: 200,
            eta: 2.0,
            beta: 0.95,
            nu: 3.0,
            sigma_quantile: 0.9,
            k_scale: 2.0,
            n_burn: 1000,
            n_keep: 1000,
            thin: 1,
            proposal_probs: ProposalProbs::default(),
        }
    }
}

impl BartConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return invalid("n_trees must be positive");
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return invalid(format!("beta must lie in (0, 1), got {}", self.beta));
        }
        if !(self.eta >= 0.0) {
            return invalid(format!("eta must be nonnegative, got {}", self.eta));
        }
        if !(self.nu > 0.0) {
            return invalid(format!("nu must be positive, got {}", self.nu));
        }
        if !(self.sigma_quantile > 0.0 && self.sigma_quantile < 1.0) {
            return invalid(format!(
                "sigma_quantile must lie in (0, 1), got {}",
                self.sigma_quantile
            ));
        }
        if !(self.k_scale > 0.0) {
            return invalid("k_scale must be positive");
        }
        if self.n_keep == 0 || self.thin == 0 {
            return invalid("n_keep and thin must be positive");
        }
        let p = self.proposal_probs;
        if [p.grow, p.prune, p.change].iter().any(|&v| !(v >= 0.0))
            || (p.grow + p.prune + p.change - 1.0).abs() > 1e-9
        {
            return invalid("proposal probabilities must be nonnegative and sum to 1");
        }
        Ok(())
    }

    /// Prior probability that a node at `depth` is internal.
    pub fn split_probability(&self, depth: u32) -> f64 {
        self.beta * (1.0 + depth as f64).powf(-self.eta)
    }

    /// sigma_mu on the standardized outcome scale.
    pub fn leaf_prior_sd(&self) -> f64 {
        0.5 / (self.k_scale * (self.n_trees as f64).sqrt())
    }
}

/// Rows with `x[column] <= threshold` go left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRule {
    pub column: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        depth: u32,
        mu: f64,
    },
    Internal {
        depth: u32,
        rule: SplitRule,
        left: usize,
        right: usize,
    },
}

impl Node {
    pub fn depth(&self) -> u32 {
        match self {
            Node::Leaf { depth, .. } | Node::Internal { depth, .. } => *depth,
        }
    }
}

/// A binary regression tree stored as an arena; node 0 is the root.
///
/// While sampling, pruned nodes are recycled through a free list and are
/// unreachable from the root. Trees stored in a posterior are compacted into
/// preorder and have no free slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
    #[serde(skip)]
    free: Vec<usize>,
}

impl Tree {
    pub fn stump(mu: f64) -> Tree {
        Tree {
            nodes: vec![Node::Leaf { depth: 0, mu }],
            free: Vec::new(),
        }
    }

    /// Builds a tree from preorder-compacted nodes, checking its structure.
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Tree> {
        let t = Tree {
            nodes,
            free: Vec::new(),
        };
        t.check()?;
        Ok(t)
    }

    fn check(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return invalid("tree has no nodes");
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![(0usize, 0u32)];
        let (mut leaves, mut internals) = (0usize, 0usize);
        while let Some((id, depth)) = stack.pop() {
            let node = self
                .nodes
                .get(id)
                .ok_or_else(|| Error::InvalidArgument(format!("child index {id} out of range")))?;
            if std::mem::replace(&mut seen[id], true) {
                return invalid(format!("node {id} reachable twice"));
            }
            if node.depth() != depth {
                return invalid(format!("node {id} records depth {} at depth {depth}", node.depth()));
            }
            match node {
                Node::Leaf { mu, .. } => {
                    if !mu.is_finite() {
                        return invalid("non-finite leaf value");
                    }
                    leaves += 1;
                }
                Node::Internal { left, right, rule, .. } => {
                    if !rule.threshold.is_finite() {
                        return invalid("non-finite split threshold");
                    }
                    internals += 1;
                    stack.push((*right, depth + 1));
                    stack.push((*left, depth + 1));
                }
            }
        }
        if leaves != internals + 1 {
            return invalid("leaf count must exceed internal count by one");
        }
        Ok(())
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn is_stump(&self) -> bool {
        matches!(self.nodes[0], Node::Leaf { .. })
    }

    /// Reachable node ids in preorder.
    pub fn preorder(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            out.push(id);
            if let Node::Internal { left, right, .. } = self.nodes[id] {
                stack.push(right);
                stack.push(left);
            }
        }
        out
    }

    pub fn leaves(&self) -> Vec<usize> {
        self.preorder()
            .into_iter()
            .filter(|&id| matches!(self.nodes[id], Node::Leaf { .. }))
            .collect()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().len()
    }

    pub fn internal_count(&self) -> usize {
        self.preorder().len() - self.leaf_count()
    }

    /// Internal nodes whose children are both leaves.
    pub fn prunable(&self) -> Vec<usize> {
        self.preorder()
            .into_iter()
            .filter(|&id| match self.nodes[id] {
                Node::Internal { left, right, .. } => {
                    matches!(self.nodes[left], Node::Leaf { .. })
                        && matches!(self.nodes[right], Node::Leaf { .. })
                }
                Node::Leaf { .. } => false,
            })
            .collect()
    }

    pub fn max_depth(&self) -> u32 {
        self.preorder().iter().map(|&id| self.nodes[id].depth()).max().unwrap_or(0)
    }

    /// Leaf reached by a row, reading covariates through `get`.
    pub fn leaf_index(&self, get: impl Fn(usize) -> f64) -> usize {
        let mut id = 0;
        while let Node::Internal { rule, left, right, .. } = self.nodes[id] {
            id = if get(rule.column) <= rule.threshold { left } else { right };
        }
        id
    }

    pub fn predict_row(&self, row: ArrayView1<f64>) -> f64 {
        match self.nodes[self.leaf_index(|c| row[c])] {
            Node::Leaf { mu, .. } => mu,
            Node::Internal { .. } => unreachable!("leaf_index stops at a leaf"),
        }
    }

    /// Copy with reachable nodes renumbered in preorder.
    pub fn compact(&self) -> Tree {
        let order = self.preorder();
        let mut new_id = vec![usize::MAX; self.nodes.len()];
        for (k, &id) in order.iter().enumerate() {
            new_id[id] = k;
        }
        let nodes = order
            .iter()
            .map(|&id| match &self.nodes[id] {
                Node::Leaf { depth, mu } => Node::Leaf { depth: *depth, mu: *mu },
                Node::Internal { depth, rule, left, right } => Node::Internal {
                    depth: *depth,
                    rule: *rule,
                    left: new_id[*left],
                    right: new_id[*right],
                },
            })
            .collect();
        Tree {
            nodes,
            free: Vec::new(),
        }
    }

    fn alloc(&mut self, node: Node) -> usize {
        match self.free.pop() {
            Some(id) => {
                self.nodes[id] = node;
                id
            }
            None => {
                self.nodes.push(node);
                self.nodes.len() - 1
            }
        }
    }

    fn set_mu(&mut self, id: usize, value: f64) {
        if let Node::Leaf { mu, .. } = &mut self.nodes[id] {
            *mu = value;
        }
    }
}

/// Log prior of the split structure: log p_split(d) for every internal node
/// plus log(1 - p_split(d)) for every leaf.
pub fn tree_log_prior(tree: &Tree, eta: f64, beta: f64) -> f64 {
    let p = |d: u32| beta * (1.0 + d as f64).powf(-eta);
    tree.preorder()
        .into_iter()
        .map(|id| match tree.nodes[id] {
            Node::Leaf { depth, .. } => (1.0 - p(depth)).ln(),
            Node::Internal { depth, .. } => p(depth).ln(),
        })
        .sum()
}

/// Conjugate posterior of a leaf value given residuals `r` with weights `w`,
/// error variance `sigma2` and prior variance `tau2`: returns (mean, variance).
pub fn leaf_posterior(r: &[f64], w: &[f64], sigma2: f64, tau2: f64) -> (f64, f64) {
    let (sw, swr) = r
        .iter()
        .zip(w)
        .fold((0.0, 0.0), |(a, b), (ri, wi)| (a + wi, b + wi * ri));
    posterior_from_stats(sw, swr, sigma2, tau2)
}

fn posterior_from_stats(sum_w: f64, sum_wr: f64, sigma2: f64, tau2: f64) -> (f64, f64) {
    let precision = 1.0 / tau2 + sum_w / sigma2;
    ((sum_wr / sigma2) / precision, 1.0 / precision)
}

/// Log marginal likelihood of one leaf with its value integrated out, up to
/// terms that are the same for every tree structure.
fn leaf_log_ml(sum_w: f64, sum_wr: f64, sigma2: f64, tau2: f64) -> f64 {
    let precision = 1.0 / tau2 + sum_w / sigma2;
    let b = sum_wr / sigma2;
    b * b / (2.0 * precision) - 0.5 * (tau2 * precision).ln()
}

/// Shape and scale of the inverse-gamma full conditional of sigma^2. Rows
/// with zero weight carry no information and are not counted.
pub fn sigma_posterior_params(r: &[f64], w: &[f64], nu: f64, lambda: f64) -> (f64, f64) {
    let n_informative = w.iter().filter(|&&wi| wi > 0.0).count() as f64;
    let ss: f64 = r.iter().zip(w).map(|(ri, wi)| wi * ri * ri).sum();
    ((nu + n_informative) / 2.0, (nu * lambda + ss) / 2.0)
}

pub fn sample_sigma<R: Rng + ?Sized>(r: &[f64], w: &[f64], nu: f64, lambda: f64, rng: &mut R) -> f64 {
    let (shape, scale) = sigma_posterior_params(r, w, nu, lambda);
    sample_inv_gamma(shape, scale, rng)
}

fn sample_inv_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    let g: f64 = Gamma::new(shape, 1.0).expect("positive shape").sample(rng);
    scale / g
}

/// lambda such that P(sigma^2 < sigma2_hat) = q when nu lambda / sigma^2 ~ chi2_nu.
pub fn lambda_from_variance(sigma2_hat: f64, nu: f64, q: f64) -> f64 {
    stats::chi_square_quantile(nu, 1.0 - q) * sigma2_hat / nu
}

/// Calibrates lambda against the residual variance of an OLS fit of y on x.
pub fn calibrate_sigma_prior(x: ArrayView2<f64>, y: &[f64], nu: f64, q: f64) -> Result<f64> {
    let fit = linmod::fit_ols(x, y)?;
    Ok(lambda_from_variance(fit.residual_variance, nu, q))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub center: f64,
    pub scale: f64,
}

impl Standardization {
    /// Centers at the mean and scales the range to one; a constant outcome
    /// keeps scale one.
    fn of(y: &[f64]) -> Standardization {
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        Standardization {
            center: stats::mean(y),
            scale: if range > 0.0 { range } else { 1.0 },
        }
    }

    fn apply(&self, y: f64) -> f64 {
        (y - self.center) / self.scale
    }

    fn invert(&self, z: f64) -> f64 {
        self.center + self.scale * z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub trees: Vec<Tree>,
    /// Error variance on the standardized scale.
    pub sigma2: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MoveStats {
    pub proposed: [u64; 3],
    pub accepted: [u64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BartPosterior {
    pub format: String,
    pub version: u32,
    pub config: BartConfig,
    pub seed: u64,
    pub n_features: usize,
    pub weighted: bool,
    pub standardization: Standardization,
    /// Calibrated sigma prior scale on the standardized outcome.
    pub lambda: f64,
    pub move_stats: MoveStats,
    pub draws: Vec<Draw>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Move {
    Grow,
    Prune,
    Change,
}

/// Everything a single-tree Metropolis-Hastings move needs besides the tree.
struct MoveContext<'a> {
    cols: &'a [Vec<f64>],
    w: &'a [f64],
    sigma2: f64,
    tau2: f64,
    cfg: &'a BartConfig,
}

impl MoveContext<'_> {
    fn move_probs(&self, tree: &Tree) -> (f64, f64, f64) {
        if tree.is_stump() {
            (1.0, 0.0, 0.0)
        } else {
            let p = self.cfg.proposal_probs;
            (p.grow, p.prune, p.change)
        }
    }

    fn stats(&self, rows: &[usize], r: &[f64]) -> (f64, f64) {
        rows.iter()
            .fold((0.0, 0.0), |(a, b), &i| (a + self.w[i], b + self.w[i] * r[i]))
    }

    fn log_ml(&self, rows: &[usize], r: &[f64]) -> f64 {
        let (sw, swr) = self.stats(rows, r);
        leaf_log_ml(sw, swr, self.sigma2, self.tau2)
    }

    fn varies(&self, col: usize, rows: &[usize]) -> bool {
        let c = &self.cols[col];
        let first = c[rows[0]];
        rows.iter().any(|&i| c[i] != first)
    }

    /// Draws a rule uniformly over covariates that vary on `rows` and then
    /// over midpoints of adjacent distinct values; `None` if nothing varies.
    fn draw_rule<R: Rng + ?Sized>(&self, rows: &[usize], rng: &mut R) -> Option<SplitRule> {
        if rows.len() < 2 {
            return None;
        }
        let p = self.cols.len();
        let first = rng.random_range(0..p);
        let column = if self.varies(first, rows) {
            first
        } else {
            let options: Vec<usize> = (0..p).filter(|&c| self.varies(c, rows)).collect();
            if options.is_empty() {
                return None;
            }
            options[rng.random_range(0..options.len())]
        };
        let c = &self.cols[column];
        let mut values: Vec<f64> = rows.iter().map(|&i| c[i]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        let k = rng.random_range(0..values.len() - 1);
        let (lo, hi) = (values[k], values[k + 1]);
        let mid = lo + (hi - lo) / 2.0;
        let threshold = if mid < hi { mid } else { lo };
        Some(SplitRule { column, threshold })
    }

    fn divide(&self, rule: SplitRule, rows: &[usize]) -> (Vec<usize>, Vec<usize>) {
        let c = &self.cols[rule.column];
        rows.iter().partition(|&&i| c[i] <= rule.threshold)
    }

    fn has_weight(&self, rows: &[usize]) -> bool {
        rows.iter().any(|&i| self.w[i] > 0.0)
    }
}

fn rows_in(leaf_of: &[u32], ids: &[usize]) -> Vec<usize> {
    (0..leaf_of.len())
        .filter(|&i| ids.contains(&(leaf_of[i] as usize)))
        .collect()
}

fn finite(log_ratio: f64) -> Result<f64> {
    if log_ratio.is_nan() {
        Err(Error::NonFinite(
            "Metropolis-Hastings ratio is NaN; check outcome scaling".into(),
        ))
    } else {
        Ok(log_ratio)
    }
}

/// One Metropolis-Hastings move on `tree`. `leaf_of[i]` is the leaf holding
/// row i and is kept in sync. Returns the move attempted and whether it was
/// accepted.
fn mh_step<R: Rng + ?Sized>(
    tree: &mut Tree,
    leaf_of: &mut [u32],
    r: &[f64],
    ctx: &MoveContext,
    rng: &mut R,
) -> Result<(Move, bool)> {
    let (pg, pp, _) = ctx.move_probs(tree);
    let u: f64 = rng.random();
    let mv = if u < pg {
        Move::Grow
    } else if u < pg + pp {
        Move::Prune
    } else {
        Move::Change
    };
    let accepted = match mv {
        Move::Grow => grow(tree, leaf_of, r, ctx, rng)?,
        Move::Prune => prune(tree, leaf_of, r, ctx, rng)?,
        Move::Change => change(tree, leaf_of, r, ctx, rng)?,
    };
    Ok((mv, accepted))
}

fn grow<R: Rng + ?Sized>(
    tree: &mut Tree,
    leaf_of: &mut [u32],
    r: &[f64],
    ctx: &MoveContext,
    rng: &mut R,
) -> Result<bool> {
    let leaves = tree.leaves();
    let leaf = leaves[rng.random_range(0..leaves.len())];
    let rows = rows_in(leaf_of, &[leaf]);
    let Some(rule) = ctx.draw_rule(&rows, rng) else {
        return Ok(false);
    };
    let (left_rows, right_rows) = ctx.divide(rule, &rows);
    if !ctx.has_weight(&left_rows) || !ctx.has_weight(&right_rows) {
        return Ok(false);
    }
    let depth = tree.nodes[leaf].depth();
    let cfg = ctx.cfg;
    let (p_here, p_child) = (cfg.split_probability(depth), cfg.split_probability(depth + 1));

    let log_lik = ctx.log_ml(&left_rows, r) + ctx.log_ml(&right_rows, r) - ctx.log_ml(&rows, r);
    let log_prior = p_here.ln() + 2.0 * (1.0 - p_child).ln() - (1.0 - p_here).ln();

    // prunable nodes after the grow: the new node, plus the old ones except
    // its parent, which stops being prunable when its other child was a leaf
    let mut prunable_after = tree.prunable().len() + 1;
    if let Some(parent) = parent_of(tree, leaf) {
        if tree.prunable().contains(&parent) {
            prunable_after -= 1;
        }
    }
    let (pg_before, _, _) = ctx.move_probs(tree);
    let pp_after = cfg.proposal_probs.prune;
    let log_proposal = (pp_after / prunable_after as f64).ln() - (pg_before / leaves.len() as f64).ln();

    let log_alpha = finite(log_lik + log_prior + log_proposal)?;
    if rng.random::<f64>().ln() >= log_alpha {
        return Ok(false);
    }
    let left = tree.alloc(Node::Leaf { depth: depth + 1, mu: 0.0 });
    let right = tree.alloc(Node::Leaf { depth: depth + 1, mu: 0.0 });
    tree.nodes[leaf] = Node::Internal {
        depth,
        rule,
        left,
        right,
    };
    for &i in &left_rows {
        leaf_of[i] = left as u32;
    }
    for &i in &right_rows {
        leaf_of[i] = right as u32;
    }
    Ok(true)
}

fn parent_of(tree: &Tree, child: usize) -> Option<usize> {
    tree.preorder().into_iter().find(|&id| match tree.nodes[id] {
        Node::Internal { left, right, .. } => left == child || right == child,
        Node::Leaf { .. } => false,
    })
}

fn prune<R: Rng + ?Sized>(
    tree: &mut Tree,
    leaf_of: &mut [u32],
    r: &[f64],
    ctx: &MoveContext,
    rng: &mut R,
) -> Result<bool> {
    let candidates = tree.prunable();
    if candidates.is_empty() {
        return Ok(false);
    }
    let node = candidates[rng.random_range(0..candidates.len())];
    let Node::Internal { depth, left, right, .. } = tree.nodes[node] else {
        unreachable!("prunable nodes are internal");
    };
    let left_rows = rows_in(leaf_of, &[left]);
    let right_rows = rows_in(leaf_of, &[right]);
    let rows: Vec<usize> = rows_in(leaf_of, &[left, right]);
    let cfg = ctx.cfg;
    let (p_here, p_child) = (cfg.split_probability(depth), cfg.split_probability(depth + 1));

    let log_lik = ctx.log_ml(&rows, r) - ctx.log_ml(&left_rows, r) - ctx.log_ml(&right_rows, r);
    let log_prior = (1.0 - p_here).ln() - p_here.ln() - 2.0 * (1.0 - p_child).ln();

    let leaves_after = tree.leaf_count() - 1;
    let pg_after = if node == 0 { 1.0 } else { cfg.proposal_probs.grow };
    let (_, pp_before, _) = ctx.move_probs(tree);
    let log_proposal =
        (pg_after / leaves_after as f64).ln() - (pp_before / candidates.len() as f64).ln();

    let log_alpha = finite(log_lik + log_prior + log_proposal)?;
    if rng.random::<f64>().ln() >= log_alpha {
        return Ok(false);
    }
    tree.nodes[node] = Node::Leaf { depth, mu: 0.0 };
    tree.free.push(left);
    tree.free.push(right);
    for &i in &rows {
        leaf_of[i] = node as u32;
    }
    Ok(true)
}

fn change<R: Rng + ?Sized>(
    tree: &mut Tree,
    leaf_of: &mut [u32],
    r: &[f64],
    ctx: &MoveContext,
    rng: &mut R,
) -> Result<bool> {
    let candidates = tree.prunable();
    if candidates.is_empty() {
        return Ok(false);
    }
    let node = candidates[rng.random_range(0..candidates.len())];
    let Node::Internal { depth, left, right, .. } = tree.nodes[node] else {
        unreachable!("prunable nodes are internal");
    };
    let old_left = rows_in(leaf_of, &[left]);
    let old_right = rows_in(leaf_of, &[right]);
    let rows = rows_in(leaf_of, &[left, right]);
    let Some(rule) = ctx.draw_rule(&rows, rng) else {
        return Ok(false);
    };
    let (new_left, new_right) = ctx.divide(rule, &rows);
    if !ctx.has_weight(&new_left) || !ctx.has_weight(&new_right) {
        return Ok(false);
    }
    let log_alpha = finite(
        ctx.log_ml(&new_left, r) + ctx.log_ml(&new_right, r)
            - ctx.log_ml(&old_left, r)
            - ctx.log_ml(&old_right, r),
    )?;
    if rng.random::<f64>().ln() >= log_alpha {
        return Ok(false);
    }
    tree.nodes[node] = Node::Internal {
        depth,
        rule,
        left,
        right,
    };
    for &i in &new_left {
        leaf_of[i] = left as u32;
    }
    for &i in &new_right {
        leaf_of[i] = right as u32;
    }
    Ok(true)
}

/// Gibbs update of every leaf value of `tree`.
fn draw_leaves<R: Rng + ?Sized>(
    tree: &mut Tree,
    leaf_of: &[u32],
    r: &[f64],
    ctx: &MoveContext,
    rng: &mut R,
) {
    let mut sw = vec![0.0; tree.nodes.len()];
    let mut swr = vec![0.0; tree.nodes.len()];
    for (i, &leaf) in leaf_of.iter().enumerate() {
        sw[leaf as usize] += ctx.w[i];
        swr[leaf as usize] += ctx.w[i] * r[i];
    }
    for leaf in tree.leaves() {
        let (mean, var) = posterior_from_stats(sw[leaf], swr[leaf], ctx.sigma2, ctx.tau2);
        let z: f64 = rng.sample(StandardNormal);
        tree.set_mu(leaf, mean + var.sqrt() * z);
    }
}

fn check_weights(w: &[f64], n: usize) -> Result<()> {
    if w.len() != n {
        return invalid(format!("{} weights for {n} rows", w.len()));
    }
    if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return invalid("weights must be finite and nonnegative");
    }
    let mean = stats::mean(w);
    if (mean - 1.0).abs() > 1e-9 {
        return invalid(format!("weights must be normalized to mean 1, mean is {mean}"));
    }
    Ok(())
}

/// Residual variance used to initialize sigma^2 and calibrate its prior: the
/// OLS estimate when the design has full rank and enough rows, otherwise the
/// sample variance of the outcome.
fn initial_variance(x: ArrayView2<f64>, ys: &[f64]) -> f64 {
    let v = match linmod::fit_ols(x, ys) {
        Ok(fit) => fit.residual_variance,
        Err(_) => stats::sample_variance(ys),
    };
    v.max(MIN_SIGMA2)
}

/// Runs the sampler and keeps `n_keep` draws after `n_burn` burn-in sweeps.
/// `weights`, when given, must have mean one; `None` is the unit-weight model.
pub fn fit(
    x: ArrayView2<f64>,
    y: &[f64],
    weights: Option<&[f64]>,
    cfg: &BartConfig,
    seed: u64,
) -> Result<BartPosterior> {
    cfg.validate()?;
    let (n, p) = x.dim();
    if n < 10 {
        return invalid(format!("BART needs at least 10 rows, got {n}"));
    }
    if p == 0 {
        return invalid("BART needs at least one covariate");
    }
    if y.len() != n {
        return invalid(format!("y has {} entries for {n} rows", y.len()));
    }
    if y.iter().any(|v| !v.is_finite()) || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("outcome or covariates contain non-finite values".into()));
    }
    let w: Vec<f64> = match weights {
        Some(w) => {
            check_weights(w, n)?;
            w.to_vec()
        }
        None => vec![1.0; n],
    };

    let standardization = Standardization::of(y);
    let ys: Vec<f64> = y.iter().map(|&v| standardization.apply(v)).collect();
    let cols: Vec<Vec<f64>> = (0..p).map(|j| x.column(j).to_vec()).collect();

    let sigma2_hat = initial_variance(x, &ys);
    let lambda = lambda_from_variance(sigma2_hat, cfg.nu, cfg.sigma_quantile);
    let tau = cfg.leaf_prior_sd();
    let tau2 = tau * tau;
    let mut sigma2 = sigma2_hat;

    let j_trees = cfg.n_trees;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trees: Vec<Tree> = vec![Tree::stump(0.0); j_trees];
    let mut leaf_of: Vec<Vec<u32>> = vec![vec![0; n]; j_trees];
    let mut fits: Vec<Vec<f64>> = vec![vec![0.0; n]; j_trees];
    let mut total = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut move_stats = MoveStats::default();
    let mut draws = Vec::with_capacity(cfg.n_keep);

    let n_iter = cfg.n_burn + cfg.n_keep * cfg.thin;
    for iter in 0..n_iter {
        for j in 0..j_trees {
            for i in 0..n {
                r[i] = ys[i] - total[i] + fits[j][i];
            }
            let ctx = MoveContext {
                cols: &cols,
                w: &w,
                sigma2,
                tau2,
                cfg,
            };
            let (mv, accepted) = mh_step(&mut trees[j], &mut leaf_of[j], &r, &ctx, &mut rng)?;
            let k = mv as usize;
            move_stats.proposed[k] += 1;
            move_stats.accepted[k] += accepted as u64;
            draw_leaves(&mut trees[j], &leaf_of[j], &r, &ctx, &mut rng);
            let tree = &trees[j];
            for i in 0..n {
                let Node::Leaf { mu, .. } = tree.nodes[leaf_of[j][i] as usize] else {
                    unreachable!("rows always sit in leaves");
                };
                total[i] += mu - fits[j][i];
                fits[j][i] = mu;
            }
        }
        // resum to keep the running total free of drift
        total.iter_mut().for_each(|t| *t = 0.0);
        for f in &fits {
            for (t, v) in total.iter_mut().zip(f) {
                *t += v;
            }
        }
        for i in 0..n {
            r[i] = ys[i] - total[i];
        }
        sigma2 = sample_sigma(&r, &w, cfg.nu, lambda, &mut rng);
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::NonFinite(format!("sigma^2 draw {sigma2} at iteration {iter}")));
        }
        if iter >= cfg.n_burn && (iter - cfg.n_burn + 1).is_multiple_of(cfg.thin) {
            draws.push(Draw {
                trees: trees.iter().map(Tree::compact).collect(),
                sigma2,
            });
        }
    }

    Ok(BartPosterior {
        format: BARTPOST_FORMAT.to_string(),
        version: BARTPOST_VERSION,
        config: cfg.clone(),
        seed,
        n_features: p,
        weighted: weights.is_some(),
        standardization,
        lambda,
        move_stats,
        draws,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictOptions {
    pub level: f64,
    /// Add N(0, sigma^2) noise to every draw, giving intervals for new
    /// observations instead of the mean function.
    pub include_noise: bool,
    pub noise_seed: u64,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            level: 0.95,
            include_noise: false,
            noise_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSummary {
    pub post_mean: Vec<f64>,
    pub post_sd: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub n_draws: usize,
    pub level: f64,
}

impl BartPosterior {
    fn check_width(&self, x: ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.ncols(),
            });
        }
        Ok(())
    }

    /// Sigma on the outcome scale for every kept draw.
    pub fn sigma_draws(&self) -> Vec<f64> {
        self.draws
            .iter()
            .map(|d| d.sigma2.sqrt() * self.standardization.scale)
            .collect()
    }

    /// Mean-function draws on the outcome scale, one row per kept draw.
    pub fn predict_draws(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_width(x)?;
        let m = x.nrows();
        let per_draw: Vec<Vec<f64>> = self
            .draws
            .par_iter()
            .map(|draw| {
                (0..m)
                    .map(|i| {
                        let row = x.row(i);
                        let sum: f64 = draw.trees.iter().map(|t| t.predict_row(row)).sum();
                        self.standardization.invert(sum)
                    })
                    .collect()
            })
            .collect();
        let mut out = Array2::zeros((self.draws.len(), m));
        for (d, vals) in per_draw.into_iter().enumerate() {
            for (i, v) in vals.into_iter().enumerate() {
                out[[d, i]] = v;
            }
        }
        Ok(out)
    }

    /// Posterior mean of the mean function.
    pub fn predict_mean(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        let draws = self.predict_draws(x)?;
        Ok(draws.columns().into_iter().map(|c| c.mean().unwrap_or(f64::NAN)).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut f, self)?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<BartPosterior> {
        let mut s = String::new();
        std::fs::File::open(path)?.read_to_string(&mut s)?;
        let post: BartPosterior = serde_json::from_str(&s)?;
        if post.format != BARTPOST_FORMAT || post.version != BARTPOST_VERSION {
            return invalid(format!(
                "unsupported posterior artifact {} v{}",
                post.format, post.version
            ));
        }
        for draw in &post.draws {
            for tree in &draw.trees {
                tree.check()?;
            }
        }
        Ok(post)
    }
}

/// Summarizes a draws-by-rows matrix: mean, sd (n - 1 denominator) and an
/// equal-tailed interval from order statistics, widened if needed so that it
/// contains the mean.
pub fn summarize_draws(draws: &Array2<f64>, level: f64) -> PredictiveSummary {
    let n_draws = draws.nrows();
    let m = draws.ncols();
    let mut s = PredictiveSummary {
        post_mean: Vec::with_capacity(m),
        post_sd: Vec::with_capacity(m),
        ci_low: Vec::with_capacity(m),
        ci_high: Vec::with_capacity(m),
        n_draws,
        level,
    };
    for col in draws.columns() {
        let v = col.to_vec();
        let mean = stats::mean(&v);
        let (lo, hi) = stats::order_statistic_interval(&stats::sorted(&v), level);
        s.post_mean.push(mean);
        s.post_sd.push(stats::sample_sd(&v));
        s.ci_low.push(lo.min(mean));
        s.ci_high.push(hi.max(mean));
    }
    s
}

pub fn predict_posterior(
    post: &BartPosterior,
    x: ArrayView2<f64>,
    opts: &PredictOptions,
) -> Result<PredictiveSummary> {
    if !(opts.level > 0.0 && opts.level < 1.0) {
        return invalid(format!("credible level must lie in (0, 1), got {}", opts.level));
    }
    let mut draws = post.predict_draws(x)?;
    if opts.include_noise {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.noise_seed);
        for (mut row, sigma) in draws.rows_mut().into_iter().zip(post.sigma_draws()) {
            for v in row.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v += sigma * z;
            }
        }
    }
    Ok(summarize_draws(&draws, opts.level))
}
