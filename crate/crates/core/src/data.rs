//! Tabular datasets: schema, CSV loading, imputation, population split and
//! cross-validation folds.
//!
//! Cells are stored as `Option<f64>`; `None` is a missing value. Categorical
//! cells hold the index of their category in the column's category list.
//! Models never see a [`Dataset`] directly: [`design_matrix`] expands it into a
//! dense numeric matrix first.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type Cell = Option<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical {
        categories: Vec<String>,
        #[serde(default)]
        ordered: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

impl ColumnSchema {
    pub fn numeric(name: impl Into<String>) -> Self {
        ColumnSchema {
            name: name.into(),
            kind: ColumnKind::Numeric,
        }
    }

    pub fn categorical<S: Into<String>>(name: impl Into<String>, categories: Vec<S>) -> Self {
        ColumnSchema {
            name: name.into(),
            kind: ColumnKind::Categorical {
                categories: categories.into_iter().map(Into::into).collect(),
                ordered: false,
            },
        }
    }

    pub fn ordered<S: Into<String>>(name: impl Into<String>, categories: Vec<S>) -> Self {
        ColumnSchema {
            name: name.into(),
            kind: ColumnKind::Categorical {
                categories: categories.into_iter().map(Into::into).collect(),
                ordered: true,
            },
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, ColumnKind::Categorical { .. })
    }

    pub fn categories(&self) -> Option<&[String]> {
        match &self.kind {
            ColumnKind::Categorical { categories, .. } => Some(categories),
            ColumnKind::Numeric => None,
        }
    }
}

pub fn validate_schema(schema: &[ColumnSchema]) -> Result<()> {
    let mut seen = HashSet::new();
    for col in schema {
        if !seen.insert(col.name.as_str()) {
            return Err(Error::Schema(format!("duplicate column name '{}'", col.name)));
        }
        if let Some(cats) = col.categories() {
            if cats.is_empty() {
                return Err(Error::Schema(format!(
                    "categorical column '{}' has no categories",
                    col.name
                )));
            }
            let mut uniq = HashSet::new();
            for c in cats {
                if !uniq.insert(c.as_str()) {
                    return Err(Error::Schema(format!(
                        "categorical column '{}' lists category '{}' twice",
                        col.name, c
                    )));
                }
            }
        }
    }
    Ok(())
}

/// An immutable table of covariates, an optional outcome and the
/// source/target membership of every row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Vec<ColumnSchema>,
    cells: Vec<Cell>,
    outcome: Option<Vec<Option<f64>>>,
    membership: Vec<bool>,
    row_ids: Vec<String>,
}

impl Dataset {
    /// `rows` is row-major; `membership[i]` is true for source rows (S = 1).
    pub fn new(
        schema: Vec<ColumnSchema>,
        rows: Vec<Vec<Cell>>,
        outcome: Option<Vec<Option<f64>>>,
        membership: Vec<bool>,
        row_ids: Vec<String>,
    ) -> Result<Self> {
        validate_schema(&schema)?;
        let n = rows.len();
        let p = schema.len();
        if membership.len() != n || row_ids.len() != n {
            return invalid(format!(
                "membership ({}) and row_ids ({}) must have one entry per row ({n})",
                membership.len(),
                row_ids.len()
            ));
        }
        if let Some(y) = &outcome {
            if y.len() != n {
                return invalid(format!("outcome has {} entries for {n} rows", y.len()));
            }
            if y.iter().flatten().any(|v| !v.is_finite()) {
                return invalid("outcome contains a non-finite value");
            }
        }
        let mut ids = HashSet::with_capacity(n);
        for id in &row_ids {
            if !ids.insert(id.as_str()) {
                return invalid(format!("duplicate row id '{id}'"));
            }
        }
        let mut cells = Vec::with_capacity(n * p);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != p {
                return invalid(format!("row {i} has {} cells, schema has {p}", row.len()));
            }
            for (j, cell) in row.iter().enumerate() {
                if let Some(v) = cell {
                    check_cell(&schema[j], *v)
                        .map_err(|m| Error::InvalidArgument(format!("row {i}: {m}")))?;
                }
            }
            cells.extend(row);
        }
        Ok(Dataset {
            schema,
            cells,
            outcome,
            membership,
            row_ids,
        })
    }

    pub fn schema(&self) -> &[ColumnSchema] {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.schema.len()
    }

    pub fn cell(&self, row: usize, col: usize) -> Cell {
        self.cells[row * self.schema.len() + col]
    }

    pub fn row(&self, row: usize) -> &[Cell] {
        let p = self.schema.len();
        &self.cells[row * p..(row + 1) * p]
    }

    pub fn column(&self, col: usize) -> Vec<Cell> {
        (0..self.n_rows()).map(|i| self.cell(i, col)).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|c| c.name == name)
    }

    pub fn outcome(&self) -> Option<&[Option<f64>]> {
        self.outcome.as_deref()
    }

    pub fn membership(&self) -> &[bool] {
        &self.membership
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn has_missing(&self) -> bool {
        self.cells.iter().any(Option::is_none)
    }

    /// The outcome as plain reals; fails if it is absent or has a gap.
    pub fn outcome_values(&self) -> Result<Vec<f64>> {
        let y = self
            .outcome
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("dataset has no outcome column".into()))?;
        y.iter()
            .enumerate()
            .map(|(i, v)| {
                v.ok_or_else(|| {
                    Error::InvalidArgument(format!("outcome missing for row '{}'", self.row_ids[i]))
                })
            })
            .collect()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let p = self.schema.len();
        let mut cells = Vec::with_capacity(indices.len() * p);
        for &i in indices {
            cells.extend_from_slice(self.row(i));
        }
        Dataset {
            schema: self.schema.clone(),
            cells,
            outcome: self
                .outcome
                .as_ref()
                .map(|y| indices.iter().map(|&i| y[i]).collect()),
            membership: indices.iter().map(|&i| self.membership[i]).collect(),
            row_ids: indices.iter().map(|&i| self.row_ids[i].clone()).collect(),
        }
    }

    pub fn without_outcome(mut self) -> Dataset {
        self.outcome = None;
        self
    }

    /// Drops covariate columns not named in `keep`, preserving schema order.
    pub fn select_columns(&self, keep: &[&str]) -> Result<Dataset> {
        for name in keep {
            if self.column_index(name).is_none() {
                return Err(Error::Schema(format!("unknown column '{name}'")));
            }
        }
        let cols: Vec<usize> = (0..self.n_cols())
            .filter(|&j| keep.contains(&self.schema[j].name.as_str()))
            .collect();
        let rows = (0..self.n_rows())
            .map(|i| cols.iter().map(|&j| self.cell(i, j)).collect())
            .collect();
        Dataset::new(
            cols.iter().map(|&j| self.schema[j].clone()).collect(),
            rows,
            self.outcome.clone(),
            self.membership.clone(),
            self.row_ids.clone(),
        )
    }

    fn with_cells(&self, cells: Vec<Cell>) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            cells,
            outcome: self.outcome.clone(),
            membership: self.membership.clone(),
            row_ids: self.row_ids.clone(),
        }
    }
}

fn check_cell(col: &ColumnSchema, v: f64) -> std::result::Result<(), String> {
    match &col.kind {
        ColumnKind::Numeric if !v.is_finite() => {
            Err(format!("non-finite value in column '{}'", col.name))
        }
        ColumnKind::Categorical { categories, .. }
            if v < 0.0 || v.fract() != 0.0 || v as usize >= categories.len() =>
        {
            Err(format!("invalid category index {v} in column '{}'", col.name))
        }
        _ => Ok(()),
    }
}

/// Names of the special columns in a CSV file. Columns that are neither in the
/// schema nor named here are ignored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CsvLayout {
    pub id_col: Option<String>,
    pub outcome_col: Option<String>,
    pub membership_col: Option<String>,
}

fn is_missing_token(s: &str) -> bool {
    s.is_empty() || s == "NA"
}

/// Reads a comma-separated file with a header row. Lines starting with `#`
/// are comments. Missing values are empty cells or `NA`.
pub fn load_csv(path: impl AsRef<Path>, schema: &[ColumnSchema], layout: &CsvLayout) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_csv(file, &path.display().to_string(), schema, layout)
}

pub fn read_csv<R: std::io::Read>(
    reader: R,
    source_name: &str,
    schema: &[ColumnSchema],
    layout: &CsvLayout,
) -> Result<Dataset> {
    validate_schema(schema)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let header_line = header.position().map_or(1, |p| p.line() as usize);
    let parse_err = |line: usize, message: String| Error::Parse {
        path: source_name.to_string(),
        line,
        message,
    };
    let find = |name: &str| header.iter().position(|h| h == name);

    let mut col_pos = Vec::with_capacity(schema.len());
    for col in schema {
        let pos = find(&col.name)
            .ok_or_else(|| parse_err(header_line, format!("header lacks schema column '{}'", col.name)))?;
        col_pos.push(pos);
    }
    let special = |name: &Option<String>| -> Result<Option<usize>> {
        match name {
            None => Ok(None),
            Some(n) => find(n)
                .map(Some)
                .ok_or_else(|| parse_err(header_line, format!("header lacks column '{n}'"))),
        }
    };
    let id_pos = special(&layout.id_col)?;
    let y_pos = special(&layout.outcome_col)?;
    let s_pos = special(&layout.membership_col)?;

    let mut rows = Vec::new();
    let mut outcome = Vec::new();
    let mut membership = Vec::new();
    let mut row_ids = Vec::new();
    let mut seen_ids = HashSet::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let mut row = Vec::with_capacity(schema.len());
        for (col, &pos) in schema.iter().zip(&col_pos) {
            let tok = record[pos].trim();
            if is_missing_token(tok) {
                row.push(None);
                continue;
            }
            let value = match &col.kind {
                ColumnKind::Numeric => match tok.parse::<f64>() {
                    Ok(v) if v.is_finite() => v,
                    _ => {
                        return Err(parse_err(
                            line,
                            format!("non-numeric token '{tok}' in numeric column '{}'", col.name),
                        ))
                    }
                },
                ColumnKind::Categorical { categories, .. } => {
                    match categories.iter().position(|c| c == tok) {
                        Some(k) => k as f64,
                        None => {
                            return Err(parse_err(
                                line,
                                format!("unknown category '{tok}' in column '{}'", col.name),
                            ))
                        }
                    }
                }
            };
            row.push(Some(value));
        }
        rows.push(row);

        if let Some(pos) = y_pos {
            let tok = record[pos].trim();
            if is_missing_token(tok) {
                outcome.push(None);
            } else {
                match tok.parse::<f64>() {
                    Ok(v) if v.is_finite() => outcome.push(Some(v)),
                    _ => return Err(parse_err(line, format!("non-numeric outcome '{tok}'"))),
                }
            }
        }
        match s_pos {
            Some(pos) => match record[pos].trim() {
                "1" => membership.push(true),
                "0" => membership.push(false),
                other => {
                    return Err(parse_err(
                        line,
                        format!("membership must be 0 or 1, found '{other}'"),
                    ))
                }
            },
            None => membership.push(true),
        }
        let id = match id_pos {
            Some(pos) => record[pos].trim().to_string(),
            None => (rows.len()).to_string(),
        };
        if !seen_ids.insert(id.clone()) {
            return Err(parse_err(line, format!("duplicate row id '{id}'")));
        }
        row_ids.push(id);
    }
    Dataset::new(
        schema.to_vec(),
        rows,
        y_pos.map(|_| outcome),
        membership,
        row_ids,
    )
}

/// Writes `d` in the format [`load_csv`] reads. Special columns come first in
/// the order id, membership, outcome; each is written only when named in
/// `layout`. `comment` lines are emitted before the header, prefixed by `# `.
pub fn write_csv<W: Write>(
    d: &Dataset,
    mut out: W,
    layout: &CsvLayout,
    comment: Option<&str>,
) -> Result<()> {
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    let mut w = csv::WriterBuilder::new().from_writer(out);
    let mut header: Vec<&str> = Vec::new();
    if let Some(id) = &layout.id_col {
        header.push(id);
    }
    if let Some(s) = &layout.membership_col {
        header.push(s);
    }
    if let Some(y) = &layout.outcome_col {
        header.push(y);
    }
    header.extend(d.schema.iter().map(|c| c.name.as_str()));
    w.write_record(&header)?;

    let mut record: Vec<String> = Vec::with_capacity(header.len());
    for i in 0..d.n_rows() {
        record.clear();
        if layout.id_col.is_some() {
            record.push(d.row_ids[i].clone());
        }
        if layout.membership_col.is_some() {
            record.push(if d.membership[i] { "1" } else { "0" }.to_string());
        }
        if layout.outcome_col.is_some() {
            let v = d.outcome.as_ref().and_then(|y| y[i]);
            record.push(format_cell(v));
        }
        for (j, col) in d.schema.iter().enumerate() {
            let cell = d.cell(i, j);
            record.push(match (cell, col.categories()) {
                (None, _) => "NA".to_string(),
                (Some(v), Some(cats)) => cats[v as usize].clone(),
                (Some(v), None) => v.to_string(),
            });
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

fn format_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputePolicy {
    MeanMode,
    Constant(f64),
}

/// Fills every missing covariate cell. Statistics are pooled over all rows,
/// source and target alike. The outcome is left untouched.
pub fn impute(d: &Dataset, policy: ImputePolicy) -> Result<Dataset> {
    let n = d.n_rows();
    let p = d.n_cols();
    let mut cells = d.cells.clone();
    for (j, col) in d.schema.iter().enumerate() {
        let observed: Vec<f64> = (0..n).filter_map(|i| d.cell(i, j)).collect();
        if observed.len() == n {
            continue;
        }
        let fill = match policy {
            ImputePolicy::Constant(v) => {
                check_cell(col, v).map_err(Error::InvalidArgument)?;
                v
            }
            ImputePolicy::MeanMode => {
                if observed.is_empty() {
                    return Err(Error::AllMissing(col.name.clone()));
                }
                match col.categories() {
                    None => observed.iter().sum::<f64>() / observed.len() as f64,
                    Some(cats) => {
                        let mut counts = vec![0usize; cats.len()];
                        for v in &observed {
                            counts[*v as usize] += 1;
                        }
                        // lowest index wins ties
                        let mut best = 0;
                        for (k, &c) in counts.iter().enumerate() {
                            if c > counts[best] {
                                best = k;
                            }
                        }
                        best as f64
                    }
                }
            }
        };
        for i in 0..n {
            let c = &mut cells[i * p + j];
            if c.is_none() {
                *c = Some(fill);
            }
        }
    }
    Ok(d.with_cells(cells))
}

/// Source (S = 1) and target (S = 0) rows, both keeping any outcome column.
pub fn partition(d: &Dataset) -> Result<(Dataset, Dataset)> {
    let (src, tgt): (Vec<usize>, Vec<usize>) = (0..d.n_rows()).partition(|&i| d.membership[i]);
    if src.is_empty() {
        return Err(Error::EmptyPartition("source"));
    }
    if tgt.is_empty() {
        return Err(Error::EmptyPartition("target"));
    }
    Ok((d.subset(&src), d.subset(&tgt)))
}

/// Source and target rows; the target loses its outcome column.
pub fn split_by_membership(d: &Dataset) -> Result<(Dataset, Dataset)> {
    let (source, target) = partition(d)?;
    Ok((source, target.without_outcome()))
}

/// Dense numeric covariates for model fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub x: Array2<f64>,
    pub names: Vec<String>,
}

/// Column names produced by [`design_matrix`] for `schema`.
pub fn design_names(schema: &[ColumnSchema]) -> Vec<String> {
    let mut names = Vec::new();
    for col in schema {
        match &col.kind {
            ColumnKind::Numeric | ColumnKind::Categorical { ordered: true, .. } => {
                names.push(col.name.clone())
            }
            ColumnKind::Categorical { categories, .. } => {
                for cat in categories.iter().skip(1) {
                    names.push(format!("{}={}", col.name, cat));
                }
            }
        }
    }
    names
}

/// Expands unordered categoricals into indicator columns, dropping the first
/// category as the reference level; ordered categoricals keep their codes.
/// Fails on missing cells.
pub fn design_matrix(d: &Dataset) -> Result<DesignMatrix> {
    let names = design_names(&d.schema);
    let n = d.n_rows();
    let mut x = Array2::<f64>::zeros((n, names.len()));
    for i in 0..n {
        let mut out = 0;
        for (j, col) in d.schema.iter().enumerate() {
            let v = d.cell(i, j).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "missing value in column '{}' for row '{}'; impute first",
                    col.name, d.row_ids[i]
                ))
            })?;
            match &col.kind {
                ColumnKind::Numeric | ColumnKind::Categorical { ordered: true, .. } => {
                    x[[i, out]] = v;
                    out += 1;
                }
                ColumnKind::Categorical { categories, .. } => {
                    let k = v as usize;
                    if k > 0 {
                        x[[i, out + k - 1]] = 1.0;
                    }
                    out += categories.len() - 1;
                }
            }
        }
    }
    Ok(DesignMatrix { x, names })
}

/// Maps design-matrix column names back to the schema columns they came from.
pub fn design_origin(schema: &[ColumnSchema]) -> HashMap<String, String> {
    let mut map = HashMap::new();
    for col in schema {
        match &col.kind {
            ColumnKind::Categorical { categories, ordered: false } => {
                for cat in categories.iter().skip(1) {
                    map.insert(format!("{}={}", col.name, cat), col.name.clone());
                }
            }
            _ => {
                map.insert(col.name.clone(), col.name.clone());
            }
        }
    }
    map
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub n: usize,
    pub k: usize,
    pub assignment: Vec<usize>,
}

impl FoldAssignment {
    /// Builds an assignment from explicit fold labels.
    pub fn from_labels(k: usize, assignment: Vec<usize>) -> Result<Self> {
        if k < 2 {
            return invalid("need at least 2 folds");
        }
        let mut present = vec![false; k];
        for &f in &assignment {
            if f >= k {
                return invalid(format!("fold label {f} out of range for k = {k}"));
            }
            present[f] = true;
        }
        if let Some(f) = present.iter().position(|p| !p) {
            return invalid(format!("fold {f} is empty"));
        }
        Ok(FoldAssignment {
            n: assignment.len(),
            k,
            assignment,
        })
    }

    /// Row indices outside and inside `fold`.
    pub fn train_test(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.n).partition(|&i| self.assignment[i] != fold)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Balanced random assignment of `n` rows to `k` folds.
pub fn kfold(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return invalid(format!("k must be at least 2, got {k}"));
    }
    if k > n {
        return invalid(format!("k = {k} exceeds the number of rows n = {n}"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut assignment = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        assignment[row] = pos % k;
    }
    Ok(FoldAssignment { n, k, assignment })
}
