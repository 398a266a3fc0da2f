//! The pipeline stages behind each subcommand.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use transportlab::bart::{self, BartPosterior, PredictOptions, PredictiveSummary};
use transportlab::data::{self, ColumnSchema, CsvLayout, Dataset};
use transportlab::eval::{self, BartModel, ComparisonTable, ForestModel, TransportData, WeightConfig};
use transportlab::interpret::{self, CTree, OutlierKind, OutlierRule};
use transportlab::synth;
use transportlab::weights::{self, OverlapModel, OverlapReport};

use crate::config::{LoadedConfig, Weighting};

/// Runs `f`, prefixing any error with the stage name.
fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().with_context(|| format!("stage '{name}' failed"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn out_dir(cfg: &LoadedConfig) -> Result<PathBuf> {
    let dir = cfg.output_dir();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |v| v.to_string())
}

// ---------------------------------------------------------------- simulate

pub fn simulate(cfg: &LoadedConfig) -> Result<Vec<PathBuf>> {
    let c = &cfg.config;
    let dir = out_dir(cfg)?;
    let full = stage("simulate", || Ok(synth::generate(&c.simulate.spec(c.seed))?))?;
    let d = if c.simulate.mask_target { synth::mask_target(&full)? } else { full };
    let (source, target) = data::partition(&d)?;
    let layout = c.data.layout();
    let header = cfg.header();
    let mut written = Vec::new();
    for (name, ds) in [("source.csv", &source), ("target.csv", &target), ("merged.csv", &d)] {
        let path = dir.join(name);
        let mut w = create(&path)?;
        data::write_csv(ds, &mut w, &layout, Some(&header))?;
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

// ------------------------------------------------------------------- data

fn read_header(path: &Path) -> Result<Vec<String>> {
    let reader = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let header = reader
        .lines()
        .map_while(|l| l.ok())
        .find(|l| !l.starts_with('#') && !l.trim().is_empty())
        .ok_or_else(|| anyhow!("{} has no header row", path.display()))?;
    Ok(header.split(',').map(|h| h.trim().to_string()).collect())
}

/// Covariate names from a CSV header: every column except the special ones.
fn infer_schema(path: &Path, layout: &CsvLayout) -> Result<Vec<ColumnSchema>> {
    let header = read_header(path)?;
    let special: Vec<&str> = [&layout.id_col, &layout.outcome_col, &layout.membership_col]
        .into_iter()
        .flatten()
        .map(String::as_str)
        .collect();
    Ok(header
        .iter()
        .filter(|h| !special.contains(&h.as_str()))
        .map(ColumnSchema::numeric)
        .collect())
}

fn with_membership(d: Dataset, source: bool) -> Result<Dataset> {
    let n = d.n_rows();
    let rows = (0..n).map(|i| d.row(i).to_vec()).collect();
    Ok(Dataset::new(
        d.schema().to_vec(),
        rows,
        d.outcome().map(<[_]>::to_vec),
        vec![source; n],
        d.row_ids().to_vec(),
    )?)
}

fn concat(a: &Dataset, b: &Dataset) -> Result<Dataset> {
    let rows = (0..a.n_rows())
        .map(|i| a.row(i).to_vec())
        .chain((0..b.n_rows()).map(|i| b.row(i).to_vec()))
        .collect();
    let outcome = match (a.outcome(), b.outcome()) {
        (None, None) => None,
        (ya, yb) => {
            let fill = |y: Option<&[Option<f64>]>, n| y.map_or_else(|| vec![None; n], <[_]>::to_vec);
            let mut v = fill(ya, a.n_rows());
            v.extend(fill(yb, b.n_rows()));
            Some(v)
        }
    };
    let membership = a.membership().iter().chain(b.membership()).copied().collect();
    let ids = a.row_ids().iter().chain(b.row_ids()).cloned().collect();
    Ok(Dataset::new(a.schema().to_vec(), rows, outcome, membership, ids)?)
}

/// Loads the configured data and imputes missing covariates.
pub fn load_data(cfg: &LoadedConfig) -> Result<Dataset> {
    let c = &cfg.config.data;
    stage("load", || {
        let mut layout = c.layout();
        let d = match (&c.merged, &c.source, &c.target) {
            (Some(m), _, _) => {
                let path = cfg.resolve(m);
                let schema = if c.schema.is_empty() { infer_schema(&path, &layout)? } else { c.schema.clone() };
                data::load_csv(&path, &schema, &layout)?
            }
            (None, Some(s), Some(t)) => {
                let (sp, tp) = (cfg.resolve(s), cfg.resolve(t));
                let schema = if c.schema.is_empty() { infer_schema(&sp, &layout)? } else { c.schema.clone() };
                // the membership column is optional in separate files
                layout.membership_col = None;
                let src = with_membership(data::load_csv(&sp, &schema, &layout)?, true)?;
                let mut target_layout = layout.clone();
                if !read_header(&tp)?.contains(&c.outcome_col) {
                    target_layout.outcome_col = None;
                }
                let tgt = with_membership(data::load_csv(&tp, &schema, &target_layout)?, false)?;
                concat(&src, &tgt)?
            }
            _ => bail!("no input data: set data.merged or data.source and data.target"),
        };
        Ok(data::impute(&d, c.impute)?)
    })
}

struct Prepared {
    source: Dataset,
    target: Dataset,
    names: Vec<String>,
    xs: ndarray::Array2<f64>,
    ys: Vec<f64>,
    xt: ndarray::Array2<f64>,
}

fn prepare(d: &Dataset, keep_target_outcome: bool) -> Result<Prepared> {
    stage("split", || {
        let (source, target) = if keep_target_outcome { data::partition(d)? } else { data::split_by_membership(d)? };
        let ds = data::design_matrix(&source)?;
        let dt = data::design_matrix(&target)?;
        let ys = source.outcome_values().context("source outcome")?;
        Ok(Prepared {
            names: ds.names,
            xs: ds.x,
            ys,
            xt: dt.x,
            source,
            target,
        })
    })
}

// ---------------------------------------------------------------- weights

pub struct WeightStage {
    pub model: OverlapModel,
    pub scores_source: Vec<f64>,
    pub scores_target: Vec<f64>,
    pub report: OverlapReport,
    pub raw: Vec<f64>,
    /// Weights passed to the model; `None` for the unweighted path.
    pub weights: Option<Vec<f64>>,
    pub ess: f64,
}

fn weight_stage(cfg: &LoadedConfig, p: &Prepared) -> Result<WeightStage> {
    let o = &cfg.config.overlap;
    let model = stage("overlap", || {
        Ok(weights::fit_overlap(
            p.xs.view(),
            p.xt.view(),
            &p.names,
            Some(&p.ys),
            &o.covariate_policy(),
            &o.logistic,
        )?)
    })?;
    stage("weights", || {
        let scores_source = model.scores(p.xs.view())?;
        let scores_target = model.scores(p.xt.view())?;
        let report = weights::overlap_report(&scores_source, &scores_target, p.target.row_ids(), o.positivity_floor)?;
        let bw = weights::compute_weights(&scores_source, o.clip_rule()?)?;
        let n = p.ys.len();
        let (w, ess) = match o.weighting {
            Weighting::Balancing => (Some(bw.normalized), bw.ess),
            Weighting::Unit => (Some(vec![1.0; n]), n as f64),
            Weighting::None => (None, n as f64),
        };
        Ok(WeightStage {
            model,
            scores_source,
            scores_target,
            report,
            raw: bw.raw,
            weights: w,
            ess,
        })
    })
}

fn write_weights(path: &Path, header: &str, p: &Prepared, ws: &WeightStage) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "# {header}")?;
    writeln!(w, "row_id,score,raw_weight,weight")?;
    for (i, id) in p.source.row_ids().iter().enumerate() {
        let weight = ws.weights.as_ref().map(|v| v[i]);
        writeln!(w, "{id},{},{},{}", ws.scores_source[i], ws.raw[i], fmt_opt(weight))?;
    }
    w.flush()?;
    Ok(())
}

fn overlap_json(ws: &WeightStage, cfg: &LoadedConfig) -> Value {
    json!({
        "covariates": ws.model.selected,
        "coefficients": ws.model.fit.coefficients,
        "converged": ws.model.fit.converged,
        "iterations": ws.model.fit.iterations,
        "weighting": cfg.config.overlap.weighting,
        "clip": cfg.config.overlap.clip,
        "report": ws.report,
    })
}

pub fn weights(cfg: &LoadedConfig) -> Result<Vec<PathBuf>> {
    let d = load_data(cfg)?;
    let p = prepare(&d, false)?;
    let ws = weight_stage(cfg, &p)?;
    let dir = out_dir(cfg)?;
    let wpath = dir.join("weights.csv");
    write_weights(&wpath, &cfg.header(), &p, &ws)?;
    let jpath = dir.join("overlap.json");
    write_json(
        &jpath,
        &json!({
            "schema": 1,
            "config_hash": cfg.hash,
            "seed": cfg.config.seed,
            "ess": ws.ess,
            "positivity_violations": ws.report.positivity_violations,
            "overlap": overlap_json(&ws, cfg),
        }),
    )?;
    Ok(vec![wpath, jpath])
}

// -------------------------------------------------------------- transport

pub struct OutlierColumns {
    pub sd: Vec<bool>,
    /// `None` when the MAD is zero and MAD is not the primary rule.
    pub mad: Option<Vec<bool>>,
    pub low: Vec<u8>,
}

pub fn outlier_columns(summary: &PredictiveSummary, rule: &OutlierRule) -> Result<OutlierColumns> {
    let sd_rule = OutlierRule { kind: OutlierKind::Sd, ..*rule };
    let mad_rule = OutlierRule { kind: OutlierKind::Mad, ..*rule };
    let sd = interpret::detect_outliers(&summary.post_mean, &sd_rule)?;
    let mad = match interpret::detect_outliers(&summary.post_mean, &mad_rule) {
        Ok(f) => Some(f),
        Err(transportlab::Error::DegenerateSpread(_)) if rule.kind == OutlierKind::Sd => None,
        Err(e) => return Err(e.into()),
    };
    let low = interpret::low_label(summary, rule)?;
    Ok(OutlierColumns { sd, mad, low })
}

/// Fits the tree on the low label, or explains why it was skipped.
fn fit_tree(cfg: &LoadedConfig, target: &Dataset, low: &[u8]) -> Result<std::result::Result<CTree, String>> {
    let label: Vec<bool> = low.iter().map(|&l| l == 1).collect();
    let n_low = label.iter().filter(|&&l| l).count();
    if n_low == 0 || n_low == label.len() {
        return Ok(Err(format!("label has a single class ({n_low} of {} flagged)", label.len())));
    }
    let min_rows = 2 * cfg.config.ctree.min_node;
    if label.len() < min_rows {
        return Ok(Err(format!("{} rows, fewer than 2 * min_node = {min_rows}", label.len())));
    }
    let cols = interpret::ctree_columns(target)?;
    Ok(Ok(interpret::fit_ctree(&cols, &label, &cfg.config.ctree)?))
}

fn write_tree(dir: &Path, header: &str, tree: &std::result::Result<CTree, String>) -> Result<Vec<PathBuf>> {
    let txt = dir.join("ctree.txt");
    let mut w = create(&txt)?;
    writeln!(w, "# {header}")?;
    match tree {
        Ok(t) => w.write_all(t.to_text().as_bytes())?,
        Err(reason) => writeln!(w, "tree not fitted: {reason}")?,
    }
    w.flush()?;
    let mut out = vec![txt];
    if let Ok(t) = tree {
        let dot = dir.join("ctree.dot");
        let mut w = create(&dot)?;
        writeln!(w, "// {header}")?;
        w.write_all(t.to_dot().as_bytes())?;
        w.flush()?;
        let leaves = dir.join("leaves.csv");
        let mut w = create(&leaves)?;
        writeln!(w, "# {header}")?;
        interpret::write_leaf_report(&t.leaf_report(), &mut w)?;
        out.extend([dot, leaves]);
    }
    Ok(out)
}

fn tree_json(tree: &std::result::Result<CTree, String>) -> Value {
    match tree {
        Ok(t) => json!({
            "fitted": true,
            "leaves": t.leaf_report(),
            "depth": t.depth(),
        }),
        Err(reason) => json!({ "fitted": false, "reason": reason }),
    }
}

#[derive(Serialize)]
struct PredictionRow<'a> {
    row_id: &'a str,
    post_mean: f64,
    post_sd: f64,
    ci_low: f64,
    ci_high: f64,
    outlier_sd: u8,
    outlier_mad: String,
    low_flag: u8,
    ci_below_grand: u8,
}

fn write_predictions(
    path: &Path,
    header: &str,
    ids: &[String],
    s: &PredictiveSummary,
    oc: &OutlierColumns,
    below: &[bool],
) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "# {header}")?;
    let mut wr = csv::Writer::from_writer(w);
    for (i, id) in ids.iter().enumerate() {
        wr.serialize(PredictionRow {
            row_id: id,
            post_mean: s.post_mean[i],
            post_sd: s.post_sd[i],
            ci_low: s.ci_low[i],
            ci_high: s.ci_high[i],
            outlier_sd: oc.sd[i] as u8,
            outlier_mad: oc.mad.as_ref().map_or_else(|| "NA".into(), |m| (m[i] as u8).to_string()),
            low_flag: oc.low[i],
            ci_below_grand: below[i] as u8,
        })?;
    }
    wr.flush()?;
    Ok(())
}

/// Outputs of a transport run kept in memory for callers and tests.
pub struct TransportResult {
    pub summary: PredictiveSummary,
    pub posterior: BartPosterior,
    pub files: Vec<PathBuf>,
}

pub fn transport(cfg: &LoadedConfig) -> Result<TransportResult> {
    let c = &cfg.config;
    let d = load_data(cfg)?;
    let p = prepare(&d, false)?;
    let ws = weight_stage(cfg, &p)?;
    let posterior = stage("bart", || {
        Ok(bart::fit(p.xs.view(), &p.ys, ws.weights.as_deref(), &c.bart, c.seed)?)
    })?;
    let opts = PredictOptions {
        level: c.predict.level,
        include_noise: c.predict.include_noise,
        noise_seed: c.seed,
    };
    let (summary, below) = stage("predict", || {
        let summary = bart::predict_posterior(&posterior, p.xt.view(), &opts)?;
        let draws = posterior.predict_draws(p.xt.view())?;
        let mean_fn = bart::summarize_draws(&draws, opts.level);
        let below = interpret::ci_below_grand(&draws, &mean_fn)?;
        Ok((summary, below))
    })?;
    let oc = stage("outliers", || outlier_columns(&summary, &c.outliers))?;
    let tree = stage("ctree", || fit_tree(cfg, &p.target, &oc.low))?;

    let dir = out_dir(cfg)?;
    let header = cfg.header();
    let mut files = Vec::new();
    let pred_path = dir.join("predictions.csv");
    write_predictions(&pred_path, &header, p.target.row_ids(), &summary, &oc, &below)?;
    files.push(pred_path);
    let wpath = dir.join("weights.csv");
    write_weights(&wpath, &header, &p, &ws)?;
    files.push(wpath);
    files.extend(write_tree(&dir, &header, &tree)?);
    if c.output.save_model {
        let mpath = dir.join("model.bartpost");
        posterior.save(&mpath)?;
        files.push(mpath);
    }

    let sigma = posterior.sigma_draws();
    let acceptance: Vec<f64> = (0..3)
        .map(|k| {
            let proposed = posterior.move_stats.proposed[k];
            if proposed == 0 { 0.0 } else { posterior.move_stats.accepted[k] as f64 / proposed as f64 }
        })
        .collect();
    let report = json!({
        "schema": 1,
        "config_hash": cfg.hash,
        "seed": c.seed,
        "n_source": p.source.n_rows(),
        "n_target": p.target.n_rows(),
        "ess": ws.ess,
        "positivity_violations": ws.report.positivity_violations,
        "overlap": overlap_json(&ws, cfg),
        "bart": {
            "n_draws": posterior.draws.len(),
            "lambda": posterior.lambda,
            "sigma_mean": sigma.iter().sum::<f64>() / sigma.len() as f64,
            "acceptance": { "grow": acceptance[0], "prune": acceptance[1], "change": acceptance[2] },
            "weighted": posterior.weighted,
        },
        "outliers": {
            "rule": c.outliers,
            "n_flagged": oc.low.iter().filter(|&&l| l == 1).count(),
            "n_outlier_sd": oc.sd.iter().filter(|&&f| f).count(),
            "n_outlier_mad": oc.mad.as_ref().map(|m| m.iter().filter(|&&f| f).count()),
            "n_ci_below_grand": below.iter().filter(|&&f| f).count(),
        },
        "ctree": tree_json(&tree),
    });
    let rpath = dir.join("report.json");
    write_json(&rpath, &report)?;
    files.push(rpath);
    Ok(TransportResult {
        summary,
        posterior,
        files,
    })
}

// --------------------------------------------------------------------- cv

fn write_table(dir: &Path, stem: &str, cfg: &LoadedConfig, table: &ComparisonTable) -> Result<Vec<PathBuf>> {
    let csv_path = dir.join(format!("{stem}.csv"));
    let mut w = create(&csv_path)?;
    writeln!(w, "# {}", cfg.header())?;
    table.write_csv(&mut w)?;
    w.flush()?;
    let json_path = dir.join(format!("{stem}.json"));
    write_json(
        &json_path,
        &json!({
            "schema": 1,
            "config_hash": cfg.hash,
            "seed": cfg.config.seed,
            "table": table,
        }),
    )?;
    Ok(vec![csv_path, json_path])
}

pub fn cv(cfg: &LoadedConfig) -> Result<Vec<PathBuf>> {
    let c = &cfg.config;
    let d = load_data(cfg)?;
    let p = prepare(&d, true)?;
    let y_target = p.target.outcome_values().ok();
    let model = BartModel { config: c.bart.clone() };
    let data = TransportData {
        x_source: p.xs.view(),
        y_source: &p.ys,
        x_target: p.xt.view(),
        y_target: y_target.as_deref(),
        names: &p.names,
    };
    let wcfg = WeightConfig {
        policy: c.overlap.covariate_policy(),
        clip: c.overlap.clip_rule()?,
        logistic: c.overlap.logistic,
    };
    let table = stage("cv", || {
        Ok(eval::compare_transport(&data, &model, &c.eval.settings, &c.data.outcome_col, c.eval.k, c.seed, &wcfg)?)
    })?;
    let dir = out_dir(cfg)?;
    let mut files = write_table(&dir, "comparison", cfg, &table)?;
    if c.eval.compare_models {
        let forest = ForestModel { config: c.forest.clone() };
        let models = stage("compare_models", || {
            Ok(eval::compare_models(&[&model, &forest], p.xs.view(), &p.ys, &c.data.outcome_col, c.eval.k, c.seed)?)
        })?;
        files.extend(write_table(&dir, "models", cfg, &models)?);
    }
    Ok(files)
}

// ------------------------------------------------------- outliers / tree

/// Reads `row_id` and `post_mean` (plus the interval columns when present)
/// from a predictions file.
pub fn read_predictions(path: &Path) -> Result<(Vec<String>, PredictiveSummary)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut rd = csv::Reader::from_reader(body.as_bytes());
    let headers = rd.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let id_col = col("row_id").ok_or_else(|| anyhow!("{} lacks a row_id column", path.display()))?;
    let mean_col = col("post_mean").ok_or_else(|| anyhow!("{} lacks a post_mean column", path.display()))?;
    let (mut ids, mut s) = (Vec::new(), PredictiveSummary {
        post_mean: Vec::new(),
        post_sd: Vec::new(),
        ci_low: Vec::new(),
        ci_high: Vec::new(),
        n_draws: 0,
        level: 0.95,
    });
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        let num = |j: Option<usize>, fallback: f64| -> Result<f64> {
            match j {
                Some(j) => rec[j]
                    .parse()
                    .with_context(|| format!("{} record {}: bad number '{}'", path.display(), line + 1, &rec[j])),
                None => Ok(fallback),
            }
        };
        let m = num(Some(mean_col), 0.0)?;
        ids.push(rec[id_col].to_string());
        s.post_mean.push(m);
        s.post_sd.push(num(col("post_sd"), 0.0)?);
        s.ci_low.push(num(col("ci_low"), m)?);
        s.ci_high.push(num(col("ci_high"), m)?);
    }
    Ok((ids, s))
}

fn predictions_path(cfg: &LoadedConfig, given: Option<&Path>) -> PathBuf {
    given.map_or_else(|| cfg.output_dir().join("predictions.csv"), Path::to_path_buf)
}

pub fn outliers(cfg: &LoadedConfig, predictions: Option<&Path>) -> Result<Vec<PathBuf>> {
    let (ids, s) = read_predictions(&predictions_path(cfg, predictions))?;
    let oc = stage("outliers", || outlier_columns(&s, &cfg.config.outliers))?;
    let dir = out_dir(cfg)?;
    let path = dir.join("outliers.csv");
    let mut w = create(&path)?;
    writeln!(w, "# {}", cfg.header())?;
    writeln!(w, "row_id,post_mean,outlier_sd,outlier_mad,low_flag")?;
    for (i, id) in ids.iter().enumerate() {
        let mad = oc.mad.as_ref().map_or_else(|| "NA".into(), |m| (m[i] as u8).to_string());
        writeln!(w, "{id},{},{},{mad},{}", s.post_mean[i], oc.sd[i] as u8, oc.low[i])?;
    }
    w.flush()?;
    Ok(vec![path])
}

pub fn tree(cfg: &LoadedConfig, predictions: Option<&Path>) -> Result<Vec<PathBuf>> {
    let (ids, s) = read_predictions(&predictions_path(cfg, predictions))?;
    let d = load_data(cfg)?;
    let p = prepare(&d, false)?;
    if ids != p.target.row_ids() {
        bail!("prediction row ids do not match the target rows of the configured data");
    }
    let oc = stage("outliers", || outlier_columns(&s, &cfg.config.outliers))?;
    let t = stage("ctree", || fit_tree(cfg, &p.target, &oc.low))?;
    write_tree(&out_dir(cfg)?, &cfg.header(), &t)
}

// ---------------------------------------------------------------- predict

pub fn predict(cfg: &LoadedConfig, model: &Path, input: &Path) -> Result<Vec<PathBuf>> {
    let post = stage("load_model", || Ok(BartPosterior::load(model)?))?;
    let c = &cfg.config;
    let full = c.data.layout();
    let schema = if c.data.schema.is_empty() { infer_schema(input, &full)? } else { c.data.schema.clone() };
    let layout = CsvLayout { membership_col: None, outcome_col: None, ..full };
    let d = data::impute(&data::load_csv(input, &schema, &layout)?, c.data.impute)?;
    let x = data::design_matrix(&d)?.x;
    let s = stage("predict", || {
        Ok(bart::predict_posterior(
            &post,
            x.view(),
            &PredictOptions { level: c.predict.level, include_noise: c.predict.include_noise, noise_seed: c.seed },
        )?)
    })?;
    let path = out_dir(cfg)?.join("predict.csv");
    let mut w = create(&path)?;
    writeln!(w, "# {}", cfg.header())?;
    writeln!(w, "row_id,post_mean,post_sd,ci_low,ci_high")?;
    for (i, id) in d.row_ids().iter().enumerate() {
        writeln!(w, "{id},{},{},{},{}", s.post_mean[i], s.post_sd[i], s.ci_low[i], s.ci_high[i])?;
    }
    w.flush()?;
    Ok(vec![path])
}
