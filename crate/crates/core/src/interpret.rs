//! Low-prediction outlier flags and a significance-gated classification tree
//! fitted to the resulting label.
//!
//! The tree is a simplified conditional inference tree. At each node every
//! column is tested for association with the label (Welch t for numeric
//! columns, chi-square of independence for categorical ones) and the p-values
//! are Bonferroni-adjusted by the number of columns. The node splits only
//! when the smallest adjusted p-value is below alpha, on that column, at the
//! cut maximizing the 2x2 chi-square statistic of the label.

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::bart::PredictiveSummary;
use crate::data::{ColumnKind, Dataset};
use crate::error::{invalid, Error, Result};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierKind {
    Sd,
    Mad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Lower,
    Upper,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutlierRule {
    pub kind: OutlierKind,
    pub k: f64,
    pub side: Side,
    pub mad_scale: f64,
}

impl Default for OutlierRule {
    fn default() -> Self {
        OutlierRule {
            kind: OutlierKind::Sd,
            k: 2.0,
            side: Side::Lower,
            mad_scale: 1.4826,
        }
    }
}

impl OutlierRule {
    pub fn sd(k: f64) -> Self {
        OutlierRule { kind: OutlierKind::Sd, k, ..Default::default() }
    }

    pub fn mad(k: f64) -> Self {
        OutlierRule { kind: OutlierKind::Mad, k, ..Default::default() }
    }
}

/// Center and half-width of the non-outlying band: (mean, K sd) or
/// (median, K mad_scale MAD).
pub fn outlier_band(values: &[f64], rule: &OutlierRule) -> Result<(f64, f64)> {
    if values.len() < 3 {
        return invalid(format!("outlier rules need at least 3 values, got {}", values.len()));
    }
    if !(rule.k > 0.0) {
        return invalid(format!("K must be positive, got {}", rule.k));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("outlier input contains non-finite values".into()));
    }
    match rule.kind {
        OutlierKind::Sd => Ok((stats::mean(values), rule.k * stats::sample_sd(values))),
        OutlierKind::Mad => {
            if !(rule.mad_scale > 0.0) {
                return invalid("mad_scale must be positive");
            }
            let median = stats::median(values);
            let deviations: Vec<f64> = values.iter().map(|v| (v - median).abs()).collect();
            let mad = stats::median(&deviations);
            if mad == 0.0 {
                return Err(Error::DegenerateSpread(
                    "median absolute deviation is zero; the MAD rule cannot flag anything".into(),
                ));
            }
            Ok((median, rule.k * rule.mad_scale * mad))
        }
    }
}

pub fn detect_outliers(values: &[f64], rule: &OutlierRule) -> Result<Vec<bool>> {
    let (center, half) = outlier_band(values, rule)?;
    let (lo, hi) = (center - half, center + half);
    Ok(values
        .iter()
        .map(|&v| match rule.side {
            Side::Lower => v < lo,
            Side::Upper => v > hi,
            Side::Both => v < lo || v > hi,
        })
        .collect())
}

/// 1 where the posterior mean is flagged by `rule`, else 0.
pub fn low_label(summary: &PredictiveSummary, rule: &OutlierRule) -> Result<Vec<u8>> {
    Ok(detect_outliers(&summary.post_mean, rule)?
        .into_iter()
        .map(u8::from)
        .collect())
}

/// Flags rows whose credible interval lies entirely below the credible
/// interval of the grand mean. `draws` is draws by rows.
pub fn ci_below_grand(draws: &Array2<f64>, summary: &PredictiveSummary) -> Result<Vec<bool>> {
    if draws.ncols() != summary.ci_high.len() || draws.nrows() == 0 {
        return invalid("draws do not match the predictive summary");
    }
    let grand: Vec<f64> = draws.rows().into_iter().map(|r| r.mean().unwrap_or(f64::NAN)).collect();
    let (grand_low, _) = stats::order_statistic_interval(&stats::sorted(&grand), summary.level);
    Ok(summary.ci_high.iter().map(|&h| h < grand_low).collect())
}

/// A covariate as seen by the tree.
#[derive(Debug, Clone, PartialEq)]
pub enum CtreeColumn {
    Numeric { name: String, values: Vec<f64> },
    Categorical { name: String, levels: Vec<String>, codes: Vec<usize> },
}

impl CtreeColumn {
    pub fn name(&self) -> &str {
        match self {
            CtreeColumn::Numeric { name, .. } | CtreeColumn::Categorical { name, .. } => name,
        }
    }

    fn len(&self) -> usize {
        match self {
            CtreeColumn::Numeric { values, .. } => values.len(),
            CtreeColumn::Categorical { codes, .. } => codes.len(),
        }
    }
}

/// Tree columns from a dataset without missing cells. Ordered categoricals
/// are treated as numeric codes.
pub fn ctree_columns(d: &Dataset) -> Result<Vec<CtreeColumn>> {
    d.schema()
        .iter()
        .enumerate()
        .map(|(j, col)| {
            let cells = d.column(j);
            if cells.iter().any(Option::is_none) {
                return invalid(format!("column '{}' has missing values; impute first", col.name));
            }
            let values: Vec<f64> = cells.into_iter().flatten().collect();
            Ok(match &col.kind {
                ColumnKind::Categorical { categories, ordered: false } => CtreeColumn::Categorical {
                    name: col.name.clone(),
                    levels: categories.clone(),
                    codes: values.iter().map(|&v| v as usize).collect(),
                },
                _ => CtreeColumn::Numeric {
                    name: col.name.clone(),
                    values,
                },
            })
        })
        .collect()
}

/// Numeric columns from a design matrix.
pub fn ctree_columns_from_matrix(x: &Array2<f64>, names: &[String]) -> Vec<CtreeColumn> {
    names
        .iter()
        .enumerate()
        .map(|(j, n)| CtreeColumn::Numeric {
            name: n.clone(),
            values: x.column(j).to_vec(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CtreeConfig {
    pub alpha: f64,
    pub min_node: usize,
    pub max_depth: usize,
}

impl Default for CtreeConfig {
    fn default() -> Self {
        CtreeConfig {
            alpha: 0.05,
            min_node: 20,
            max_depth: 5,
        }
    }
}

/// Rows satisfying the split go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CSplit {
    /// x <= threshold
    Threshold(f64),
    /// category in the listed level indices
    Subset(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CNode {
    Leaf {
        n: usize,
        n_low: usize,
        proportion_low: f64,
    },
    Internal {
        column: usize,
        split: CSplit,
        p_adjusted: f64,
        n: usize,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CTree {
    pub nodes: Vec<CNode>,
    pub column_names: Vec<String>,
    /// Level names of categorical columns.
    pub levels: Vec<Option<Vec<String>>>,
    pub config: CtreeConfig,
    pub n: usize,
}

/// Association p-value between a column and the binary label on `rows`.
fn association_p(col: &CtreeColumn, label: &[bool], rows: &[usize]) -> f64 {
    match col {
        CtreeColumn::Numeric { values, .. } => {
            let (a, b): (Vec<f64>, Vec<f64>) = {
                let mut a = Vec::new();
                let mut b = Vec::new();
                for &i in rows {
                    if label[i] { a.push(values[i]) } else { b.push(values[i]) }
                }
                (a, b)
            };
            welch_p(&a, &b)
        }
        CtreeColumn::Categorical { levels, codes, .. } => {
            let mut table = vec![[0usize; 2]; levels.len()];
            for &i in rows {
                table[codes[i]][label[i] as usize] += 1;
            }
            let present: Vec<[usize; 2]> = table.into_iter().filter(|r| r[0] + r[1] > 0).collect();
            if present.len() < 2 {
                return 1.0;
            }
            let n = rows.len() as f64;
            let col_tot = [
                present.iter().map(|r| r[0]).sum::<usize>() as f64,
                present.iter().map(|r| r[1]).sum::<usize>() as f64,
            ];
            let mut chi2 = 0.0;
            for r in &present {
                let row_tot = (r[0] + r[1]) as f64;
                for c in 0..2 {
                    let e = row_tot * col_tot[c] / n;
                    if e > 0.0 {
                        chi2 += (r[c] as f64 - e).powi(2) / e;
                    }
                }
            }
            stats::chi_square_sf(chi2, (present.len() - 1) as f64)
        }
    }
}

/// Two-sided Welch t-test p-value.
fn welch_p(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 1.0;
    }
    let (ma, mb) = (stats::mean(a), stats::mean(b));
    let (va, vb) = (stats::sample_variance(a) / a.len() as f64, stats::sample_variance(b) / b.len() as f64);
    let se2 = va + vb;
    if se2 == 0.0 {
        return if ma == mb { 1.0 } else { 0.0 };
    }
    let t = (ma - mb) / se2.sqrt();
    let term = |v: f64, n: usize| if n > 1 { v * v / (n - 1) as f64 } else { 0.0 };
    let denom = term(va, a.len()) + term(vb, b.len());
    let df = if denom > 0.0 { (se2 * se2 / denom).max(1.0) } else { 1.0 };
    stats::t_two_sided(t, df)
}

/// Pearson chi-square of a 2x2 table given left/right counts and left/right
/// label-one counts.
fn chi2_2x2(n_left: usize, low_left: usize, n_right: usize, low_right: usize) -> f64 {
    let a = low_left as f64;
    let b = (n_left - low_left) as f64;
    let c = low_right as f64;
    let d = (n_right - low_right) as f64;
    let n = a + b + c + d;
    let denom = (a + b) * (c + d) * (a + c) * (b + d);
    if denom == 0.0 {
        0.0
    } else {
        n * (a * d - b * c).powi(2) / denom
    }
}

struct Builder<'a> {
    columns: &'a [CtreeColumn],
    label: &'a [bool],
    cfg: CtreeConfig,
    nodes: Vec<CNode>,
}

impl Builder<'_> {
    fn leaf(&mut self, rows: &[usize]) -> usize {
        let n_low = rows.iter().filter(|&&i| self.label[i]).count();
        self.nodes.push(CNode::Leaf {
            n: rows.len(),
            n_low,
            proportion_low: n_low as f64 / rows.len() as f64,
        });
        self.nodes.len() - 1
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let n_low = rows.iter().filter(|&&i| self.label[i]).count();
        let pure = n_low == 0 || n_low == rows.len();
        if pure || depth >= self.cfg.max_depth || rows.len() < 2 * self.cfg.min_node {
            return self.leaf(&rows);
        }
        let m = self.columns.len() as f64;
        let mut best: Option<(usize, f64)> = None;
        for (j, col) in self.columns.iter().enumerate() {
            let p_adj = (association_p(col, self.label, &rows) * m).min(1.0);
            if best.is_none_or(|(_, b)| p_adj < b) {
                best = Some((j, p_adj));
            }
        }
        let Some((column, p_adjusted)) = best else {
            return self.leaf(&rows);
        };
        if !(p_adjusted < self.cfg.alpha) {
            return self.leaf(&rows);
        }
        let Some(split) = self.best_cut(column, &rows) else {
            return self.leaf(&rows);
        };
        let (l, r): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&i| goes_left(&self.columns[column], &split, i));
        let id = self.nodes.len();
        self.nodes.push(CNode::Leaf { n: 0, n_low: 0, proportion_low: 0.0 });
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = CNode::Internal {
            column,
            split,
            p_adjusted,
            n: rows.len(),
            left,
            right,
        };
        id
    }

    /// Cut of `column` maximizing the label chi-square with at least
    /// `min_node` rows on each side.
    fn best_cut(&self, column: usize, rows: &[usize]) -> Option<CSplit> {
        let min = self.cfg.min_node;
        let n = rows.len();
        let total_low = rows.iter().filter(|&&i| self.label[i]).count();
        let mut best: Option<(f64, CSplit)> = None;
        let mut consider = |n_left: usize, low_left: usize, split: &dyn Fn() -> CSplit| {
            if n_left < min || n - n_left < min {
                return;
            }
            let stat = chi2_2x2(n_left, low_left, n - n_left, total_low - low_left);
            if best.as_ref().is_none_or(|(b, _)| stat > *b) {
                best = Some((stat, split()));
            }
        };
        match &self.columns[column] {
            CtreeColumn::Numeric { values, .. } => {
                let mut sorted = rows.to_vec();
                sorted.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
                let mut low_left = 0;
                for k in 0..n - 1 {
                    low_left += self.label[sorted[k]] as usize;
                    let (a, b) = (values[sorted[k]], values[sorted[k + 1]]);
                    if a == b {
                        continue;
                    }
                    let mid = a + (b - a) / 2.0;
                    let t = if mid < b { mid } else { a };
                    consider(k + 1, low_left, &|| CSplit::Threshold(t));
                }
            }
            CtreeColumn::Categorical { levels, codes, .. } => {
                let mut counts = vec![(0usize, 0usize); levels.len()];
                for &i in rows {
                    counts[codes[i]].0 += 1;
                    counts[codes[i]].1 += self.label[i] as usize;
                }
                let mut present: Vec<usize> = (0..levels.len()).filter(|&l| counts[l].0 > 0).collect();
                present.sort_by(|&a, &b| {
                    let pa = counts[a].1 as f64 / counts[a].0 as f64;
                    let pb = counts[b].1 as f64 / counts[b].0 as f64;
                    pa.total_cmp(&pb).then(a.cmp(&b))
                });
                let (mut n_left, mut low_left) = (0, 0);
                for k in 0..present.len().saturating_sub(1) {
                    n_left += counts[present[k]].0;
                    low_left += counts[present[k]].1;
                    let mut subset = present[..=k].to_vec();
                    subset.sort_unstable();
                    consider(n_left, low_left, &|| CSplit::Subset(subset.clone()));
                }
            }
        }
        best.map(|(_, s)| s)
    }
}

fn goes_left(col: &CtreeColumn, split: &CSplit, i: usize) -> bool {
    match (col, split) {
        (CtreeColumn::Numeric { values, .. }, CSplit::Threshold(t)) => values[i] <= *t,
        (CtreeColumn::Categorical { codes, .. }, CSplit::Subset(s)) => s.contains(&codes[i]),
        _ => false,
    }
}

pub fn fit_ctree(columns: &[CtreeColumn], label: &[bool], cfg: &CtreeConfig) -> Result<CTree> {
    let n = label.len();
    if columns.is_empty() {
        return invalid("tree needs at least one column");
    }
    if let Some(c) = columns.iter().find(|c| c.len() != n) {
        return invalid(format!("column '{}' has {} rows, label has {n}", c.name(), c.len()));
    }
    if !(0.0..=1.0).contains(&cfg.alpha) {
        return invalid(format!("alpha must lie in [0, 1], got {}", cfg.alpha));
    }
    if cfg.min_node == 0 {
        return invalid("min_node must be at least 1");
    }
    if n < 2 * cfg.min_node {
        return invalid(format!("tree needs at least 2 * min_node = {} rows, got {n}", 2 * cfg.min_node));
    }
    let n_low = label.iter().filter(|&&l| l).count();
    if n_low == 0 || n_low == n {
        return invalid("label has a single class");
    }
    for c in columns {
        match c {
            CtreeColumn::Numeric { name, values } if values.iter().any(|v| !v.is_finite()) => {
                return Err(Error::NonFinite(format!("column '{name}' has non-finite values")));
            }
            CtreeColumn::Categorical { name, levels, codes } if codes.iter().any(|&k| k >= levels.len()) => {
                return invalid(format!("column '{name}' has a code outside its levels"));
            }
            _ => {}
        }
    }
    let mut b = Builder {
        columns,
        label,
        cfg: *cfg,
        nodes: Vec::new(),
    };
    b.build((0..n).collect(), 0);
    Ok(CTree {
        nodes: b.nodes,
        column_names: columns.iter().map(|c| c.name().to_string()).collect(),
        levels: columns
            .iter()
            .map(|c| match c {
                CtreeColumn::Categorical { levels, .. } => Some(levels.clone()),
                CtreeColumn::Numeric { .. } => None,
            })
            .collect(),
        config: *cfg,
        n,
    })
}

/// One step on a root-to-leaf path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub column: usize,
    pub split: CSplit,
    /// Whether the path takes the left (split satisfied) branch.
    pub left: bool,
}

impl Condition {
    pub fn holds(&self, columns: &[CtreeColumn], row: usize) -> bool {
        goes_left(&columns[self.column], &self.split, row) == self.left
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafRow {
    pub node: usize,
    pub predicate: String,
    pub n: usize,
    pub n_low: usize,
    pub proportion_low: f64,
    #[serde(skip)]
    pub conditions: Vec<Condition>,
}

impl CTree {
    pub fn depth(&self) -> usize {
        fn go(t: &CTree, id: usize) -> usize {
            match &t.nodes[id] {
                CNode::Leaf { .. } => 0,
                CNode::Internal { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, CNode::Leaf { .. })).count()
    }

    /// Leaf node reached by `row` of `columns`.
    pub fn leaf_of(&self, columns: &[CtreeColumn], row: usize) -> usize {
        let mut id = 0;
        while let CNode::Internal { column, split, left, right, .. } = &self.nodes[id] {
            id = if goes_left(&columns[*column], split, row) { *left } else { *right };
        }
        id
    }

    fn describe(&self, c: &Condition) -> String {
        let name = &self.column_names[c.column];
        match &c.split {
            CSplit::Threshold(t) => format!("{name} {} {t}", if c.left { "<=" } else { ">" }),
            CSplit::Subset(s) => {
                let levels = self.levels[c.column].as_deref().unwrap_or(&[]);
                let names: Vec<&str> = s
                    .iter()
                    .map(|&k| levels.get(k).map_or("?", String::as_str))
                    .collect();
                format!("{name} {} {{{}}}", if c.left { "in" } else { "not in" }, names.join(", "))
            }
        }
    }

    fn split_text(&self, column: usize, split: &CSplit, left: bool) -> String {
        self.describe(&Condition { column, split: split.clone(), left })
    }

    pub fn leaf_report(&self) -> Vec<LeafRow> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, Vec::<Condition>::new())];
        while let Some((id, path)) = stack.pop() {
            match &self.nodes[id] {
                CNode::Leaf { n, n_low, proportion_low } => {
                    let predicate = if path.is_empty() {
                        "all".to_string()
                    } else {
                        path.iter().map(|c| self.describe(c)).collect::<Vec<_>>().join(" & ")
                    };
                    out.push(LeafRow {
                        node: id,
                        predicate,
                        n: *n,
                        n_low: *n_low,
                        proportion_low: *proportion_low,
                        conditions: path,
                    });
                }
                CNode::Internal { column, split, left, right, .. } => {
                    for (child, is_left) in [(*right, false), (*left, true)] {
                        let mut p = path.clone();
                        p.push(Condition { column: *column, split: split.clone(), left: is_left });
                        stack.push((child, p));
                    }
                }
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        self.text_node(0, 0, &mut s);
        s
    }

    fn text_node(&self, id: usize, indent: usize, out: &mut String) {
        let pad = "|   ".repeat(indent);
        match &self.nodes[id] {
            CNode::Leaf { n, proportion_low, .. } => {
                out.push_str(&format!("{pad}[{id}] leaf n = {n}, low = {proportion_low:.4}\n"));
            }
            CNode::Internal { column, split, p_adjusted, n, left, right } => {
                out.push_str(&format!(
                    "{pad}[{id}] {} (n = {n}, p = {p_adjusted:.3e})\n",
                    self.column_names[*column]
                ));
                for (child, is_left) in [(*left, true), (*right, false)] {
                    out.push_str(&format!("{pad}|   {}\n", self.split_text(*column, split, is_left)));
                    self.text_node(child, indent + 2, out);
                }
            }
        }
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph ctree {\n  node [shape=box];\n");
        for (id, node) in self.nodes.iter().enumerate() {
            match node {
                CNode::Leaf { n, proportion_low, .. } => {
                    s.push_str(&format!("  n{id} [label=\"n = {n}\\nlow = {proportion_low:.4}\"];\n"));
                }
                CNode::Internal { column, split, p_adjusted, left, right, .. } => {
                    s.push_str(&format!(
                        "  n{id} [label=\"{}\\np = {p_adjusted:.3e}\", shape=ellipse];\n",
                        escape(&self.column_names[*column])
                    ));
                    for (child, is_left) in [(*left, true), (*right, false)] {
                        let text = self.split_text(*column, split, is_left);
                        let edge = text.split_once(' ').map_or(text.as_str(), |(_, rest)| rest);
                        s.push_str(&format!("  n{id} -> n{child} [label=\"{}\"];\n", escape(edge)));
                    }
                }
            }
        }
        s.push_str("}\n");
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// `node,predicate,n,n_low,proportion_low`
pub fn write_leaf_report<W: Write>(rows: &[LeafRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["node", "predicate", "n", "n_low", "proportion_low"])?;
    for r in rows {
        wr.write_record([
            r.node.to_string(),
            r.predicate.clone(),
            r.n.to_string(),
            r.n_low.to_string(),
            r.proportion_low.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn sd_rule_example() {
        let v = [5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0, -5.0];
        let (c, h) = outlier_band(&v, &OutlierRule::sd(2.0)).unwrap();
        assert!((c - 4.0).abs() < 1e-12);
        assert!((c - h - (4.0 - 2.0 * 10f64.sqrt())).abs() < 1e-12);
        let flags = detect_outliers(&v, &OutlierRule::sd(2.0)).unwrap();
        assert_eq!(flags.iter().filter(|&&f| f).count(), 1);
        assert!(flags[9]);
    }

    #[test]
    fn mad_rule_example() {
        let v = [8.0, 9.0, 10.0, 11.0, 12.0, 0.0];
        let (c, h) = outlier_band(&v, &OutlierRule::mad(2.0)).unwrap();
        assert_eq!(c, 9.5);
        assert!((c - h - (9.5 - 2.0 * 1.4826 * 1.5)).abs() < 1e-12);
        let flags = detect_outliers(&v, &OutlierRule::mad(2.0)).unwrap();
        assert_eq!(flags, vec![false, false, false, false, false, true]);
    }

    #[test]
    fn mad_rule_rejects_zero_spread() {
        let err = detect_outliers(&[3.0; 5], &OutlierRule::mad(2.0)).unwrap_err();
        assert!(matches!(err, Error::DegenerateSpread(_)));
        assert!(detect_outliers(&[1.0, 2.0], &OutlierRule::sd(2.0)).is_err());
        assert!(detect_outliers(&[1.0, 2.0, 3.0], &OutlierRule::sd(0.0)).is_err());
    }

    #[test]
    fn sides() {
        let v = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 10.0, -10.0];
        let rule = |side| OutlierRule { side, ..OutlierRule::sd(1.5) };
        assert_eq!(detect_outliers(&v, &rule(Side::Upper)).unwrap().iter().filter(|&&f| f).count(), 1);
        assert_eq!(detect_outliers(&v, &rule(Side::Both)).unwrap().iter().filter(|&&f| f).count(), 2);
    }

    fn summary(means: Vec<f64>) -> PredictiveSummary {
        let m = means.len();
        PredictiveSummary {
            ci_low: means.clone(),
            ci_high: means.clone(),
            post_sd: vec![0.0; m],
            post_mean: means,
            n_draws: 1,
            level: 0.95,
        }
    }

    #[test]
    fn labels_match_flags() {
        let s = summary(vec![5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0, -5.0]);
        let label = low_label(&s, &OutlierRule::default()).unwrap();
        let flags = detect_outliers(&s.post_mean, &OutlierRule::default()).unwrap();
        assert_eq!(label, flags.iter().map(|&f| f as u8).collect::<Vec<_>>());
        let none = low_label(&summary(vec![1.0, 2.0, 3.0]), &OutlierRule::default()).unwrap();
        assert_eq!(none, vec![0, 0, 0]);
    }

    #[test]
    fn grand_mean_interval_flag() {
        // three draws of four rows; row 3 is far below the rest
        let draws = ndarray::arr2(&[[10.0, 11.0, 9.0, 0.0], [10.5, 10.0, 9.5, 0.5], [9.5, 10.5, 10.0, 1.0]]);
        let s = crate::bart::summarize_draws(&draws, 0.95);
        assert_eq!(ci_below_grand(&draws, &s).unwrap(), vec![false, false, false, true]);
    }

    fn planted(n: usize, noise_cols: usize, seed: u64) -> (Vec<CtreeColumn>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cols = Vec::new();
        for j in 0..=noise_cols {
            cols.push(CtreeColumn::Numeric {
                name: format!("x{}", j + 1),
                values: (0..n).map(|_| rng.sample(StandardNormal)).collect(),
            });
        }
        let CtreeColumn::Numeric { values, .. } = &cols[0] else { unreachable!() };
        let label = values.iter().map(|&v| v > 0.0).collect();
        (cols, label)
    }

    #[test]
    fn planted_split_is_recovered() {
        let (cols, label) = planted(500, 1, 7);
        let t = fit_ctree(&cols, &label, &CtreeConfig::default()).unwrap();
        let CNode::Internal { column, split: CSplit::Threshold(th), p_adjusted, .. } = &t.nodes[0] else {
            panic!("root should split");
        };
        assert_eq!(*column, 0);
        assert!(*p_adjusted < 0.05);
        let CtreeColumn::Numeric { values, .. } = &cols[0] else { unreachable!() };
        let below = values.iter().copied().filter(|&v| v <= 0.0).fold(f64::NEG_INFINITY, f64::max);
        let above = values.iter().copied().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
        assert!(*th >= below && *th < above);
        // both children are pure
        assert_eq!(t.leaf_count(), 2);
    }

    #[test]
    fn closed_gate_gives_one_leaf() {
        let (cols, label) = planted(200, 2, 3);
        let t = fit_ctree(&cols, &label, &CtreeConfig { alpha: 0.0, ..Default::default() }).unwrap();
        assert_eq!(t.nodes.len(), 1);
        let report = t.leaf_report();
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].predicate, "all");
        assert!((report[0].proportion_low - label.iter().filter(|&&l| l).count() as f64 / 200.0).abs() < 1e-15);
    }

    #[test]
    fn preconditions() {
        let (cols, label) = planted(30, 1, 1);
        assert!(fit_ctree(&cols, &label, &CtreeConfig::default()).is_err());
        let (cols, _) = planted(100, 1, 1);
        assert!(fit_ctree(&cols, &[false; 100], &CtreeConfig::default()).is_err());
    }

    #[test]
    fn categorical_split() {
        let n = 200;
        let codes: Vec<usize> = (0..n).map(|i| i % 4).collect();
        let label: Vec<bool> = codes.iter().map(|&c| c == 1 || c == 3).collect();
        let cols = vec![
            CtreeColumn::Categorical {
                name: "g".into(),
                levels: vec!["a".into(), "b".into(), "c".into(), "d".into()],
                codes,
            },
            CtreeColumn::Numeric { name: "z".into(), values: (0..n).map(|i| ((i * 37) % 101) as f64).collect() },
        ];
        let t = fit_ctree(&cols, &label, &CtreeConfig::default()).unwrap();
        let CNode::Internal { column: 0, split: CSplit::Subset(s), .. } = &t.nodes[0] else {
            panic!("root should split on g: {:?}", t.nodes[0]);
        };
        assert_eq!(s, &vec![0, 2]);
        let report = t.leaf_report();
        assert!(report.iter().any(|r| r.predicate == "g in {a, c}" && r.proportion_low == 0.0));
        assert!(t.to_dot().contains("not in {a, c}"));
    }

    #[test]
    fn exports() {
        let (cols, label) = planted(300, 1, 11);
        let t = fit_ctree(&cols, &label, &CtreeConfig::default()).unwrap();
        let text = t.to_text();
        assert!(text.starts_with("[0] x1 (n = 300"));
        assert!(text.contains("leaf n = "));
        let dot = t.to_dot();
        assert!(dot.starts_with("digraph ctree {") && dot.trim_end().ends_with('}'));
        let mut csv = Vec::new();
        write_leaf_report(&t.leaf_report(), &mut csv).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        assert!(csv.starts_with("node,predicate,n,n_low,proportion_low\n"));
        assert_eq!(csv.lines().count(), t.leaf_count() + 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn affine_invariance(seed in 0u64..500, a in 0.1..10.0f64, b in -50.0..50.0f64, mad in proptest::bool::ANY) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = (0..50).map(|_| rng.sample(StandardNormal)).collect();
            let w: Vec<f64> = v.iter().map(|x| a * x + b).collect();
            let rule = if mad { OutlierRule::mad(2.0) } else { OutlierRule::sd(2.0) };
            // skip rows sitting numerically on the cutoff
            let (c, h) = outlier_band(&v, &rule).unwrap();
            prop_assume!(v.iter().all(|x| (x - (c - h)).abs() > 1e-9));
            prop_assert_eq!(detect_outliers(&v, &rule).unwrap(), detect_outliers(&w, &rule).unwrap());
        }

        #[test]
        fn tree_invariants(seed in 0u64..500, alpha in 0.0..0.2f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 240;
            let cols: Vec<CtreeColumn> = (0..3)
                .map(|j| CtreeColumn::Numeric { name: format!("x{j}"), values: (0..n).map(|_| rng.random::<f64>()).collect() })
                .collect();
            let CtreeColumn::Numeric { values: x0, .. } = &cols[0] else { unreachable!() };
            let CtreeColumn::Numeric { values: x1, .. } = &cols[1] else { unreachable!() };
            let label: Vec<bool> = (0..n).map(|i| x0[i] + 0.5 * x1[i] + 0.3 * rng.random::<f64>() > 0.9).collect();
            prop_assume!(label.iter().any(|&l| l) && label.iter().any(|&l| !l));
            let cfg = CtreeConfig { alpha, min_node: 10, max_depth: 4 };
            let t = fit_ctree(&cols, &label, &cfg).unwrap();
            for node in &t.nodes {
                if let CNode::Internal { p_adjusted, .. } = node {
                    prop_assert!(*p_adjusted <= alpha);
                }
            }
            let report = t.leaf_report();
            prop_assert_eq!(report.iter().map(|r| r.n).sum::<usize>(), n);
            for r in &report {
                prop_assert!((0.0..=1.0).contains(&r.proportion_low));
                for i in 0..n {
                    let on_path = r.conditions.iter().all(|c| c.holds(&cols, i));
                    prop_assert_eq!(on_path, t.leaf_of(&cols, i) == r.node);
                }
            }
            let tighter = fit_ctree(&cols, &label, &CtreeConfig { alpha: alpha / 2.0, ..cfg }).unwrap();
            prop_assert!(tighter.nodes.len() <= t.nodes.len());
            prop_assert!(tighter.depth() <= t.depth());
        }
    }
}
