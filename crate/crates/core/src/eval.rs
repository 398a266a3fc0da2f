//! Prediction metrics, k-fold cross-validation and the transport comparison
//! protocol (unweighted, weighted and target-trained settings).

use std::io::Write;

use ndarray::{ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bart::{self, BartConfig};
use crate::data::{kfold, FoldAssignment};
use crate::error::{invalid, Error, Result};
use crate::forest::{self, ForestConfig};
use crate::linmod::{self, LogisticOptions};
use crate::weights::{self, ClipRule, CovariatePolicy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    /// Out-of-sample 1 - SSE / SST; absent when the truth has no spread.
    pub r2: Option<f64>,
}

fn check_lengths(y_true: &[f64], y_pred: &[f64]) -> Result<()> {
    if y_true.is_empty() || y_true.len() != y_pred.len() {
        return invalid(format!(
            "metrics need equal nonzero lengths, got {} and {}",
            y_true.len(),
            y_pred.len()
        ));
    }
    Ok(())
}

/// RMSE, MAE and R^2; fails when the truth is constant.
pub fn metrics(y_true: &[f64], y_pred: &[f64]) -> Result<Metrics> {
    let m = metrics_lenient(y_true, y_pred)?;
    if m.r2.is_none() {
        return Err(Error::DegenerateSpread("R^2 undefined: truth has zero variance".into()));
    }
    Ok(m)
}

/// As [`metrics`], leaving R^2 empty instead of failing on a constant truth.
pub fn metrics_lenient(y_true: &[f64], y_pred: &[f64]) -> Result<Metrics> {
    check_lengths(y_true, y_pred)?;
    let n = y_true.len() as f64;
    let sse: f64 = y_true.iter().zip(y_pred).map(|(t, p)| (t - p).powi(2)).sum();
    let sae: f64 = y_true.iter().zip(y_pred).map(|(t, p)| (t - p).abs()).sum();
    let mean = y_true.iter().sum::<f64>() / n;
    let sst: f64 = y_true.iter().map(|t| (t - mean).powi(2)).sum();
    Ok(Metrics {
        rmse: (sse / n).sqrt(),
        mae: sae / n,
        r2: (sst > 0.0).then(|| 1.0 - sse / sst),
    })
}

/// Area under the ROC curve of `scores` for `labels`, counting ties as one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return invalid("one label per score required");
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return invalid("AUC needs both classes");
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks over tied groups
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// A model that can be trained and queried inside the CV harness.
pub trait Regressor: Send + Sync {
    fn name(&self) -> String;

    /// Fits on the training rows and predicts the test rows. `weights`, when
    /// present, have mean one.
    fn fit_predict(
        &self,
        x_train: ArrayView2<f64>,
        y_train: &[f64],
        weights: Option<&[f64]>,
        x_test: ArrayView2<f64>,
        seed: u64,
    ) -> Result<Vec<f64>>;
}

fn unweighted_only(name: &str, weights: Option<&[f64]>) -> Result<()> {
    if weights.is_some() {
        return invalid(format!("{name} does not support observation weights"));
    }
    Ok(())
}

/// Predicts the (weighted) training mean everywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanModel;

impl Regressor for MeanModel {
    fn name(&self) -> String {
        "Mean".into()
    }

    fn fit_predict(
        &self,
        _x_train: ArrayView2<f64>,
        y_train: &[f64],
        weights: Option<&[f64]>,
        x_test: ArrayView2<f64>,
        _seed: u64,
    ) -> Result<Vec<f64>> {
        if y_train.is_empty() {
            return invalid("empty training set");
        }
        let mean = match weights {
            Some(w) => {
                let total: f64 = w.iter().sum();
                y_train.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / total
            }
            None => y_train.iter().sum::<f64>() / y_train.len() as f64,
        };
        Ok(vec![mean; x_test.nrows()])
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OlsModel;

impl Regressor for OlsModel {
    fn name(&self) -> String {
        "OLS".into()
    }

    fn fit_predict(
        &self,
        x_train: ArrayView2<f64>,
        y_train: &[f64],
        weights: Option<&[f64]>,
        x_test: ArrayView2<f64>,
        _seed: u64,
    ) -> Result<Vec<f64>> {
        unweighted_only("OLS", weights)?;
        linmod::fit_ols(x_train, y_train)?.predict(x_test)
    }
}

/// Posterior mean of the BART mean function.
#[derive(Debug, Clone, Default)]
pub struct BartModel {
    pub config: BartConfig,
}

impl Regressor for BartModel {
    fn name(&self) -> String {
        "BART".into()
    }

    fn fit_predict(
        &self,
        x_train: ArrayView2<f64>,
        y_train: &[f64],
        weights: Option<&[f64]>,
        x_test: ArrayView2<f64>,
        seed: u64,
    ) -> Result<Vec<f64>> {
        bart::fit(x_train, y_train, weights, &self.config, seed)?.predict_mean(x_test)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ForestModel {
    pub config: ForestConfig,
}

impl Regressor for ForestModel {
    fn name(&self) -> String {
        "Random Forest".into()
    }

    fn fit_predict(
        &self,
        x_train: ArrayView2<f64>,
        y_train: &[f64],
        weights: Option<&[f64]>,
        x_test: ArrayView2<f64>,
        seed: u64,
    ) -> Result<Vec<f64>> {
        unweighted_only("Random Forest", weights)?;
        let cfg = ForestConfig {
            seed,
            ..self.config.clone()
        };
        forest::fit_forest(x_train, y_train, &cfg)?.predict(x_test)
    }
}

/// Seed for fold `fold` derived from the run seed.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed ^ (fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_test: usize,
    pub metrics: Metrics,
    /// ESS of the fold's normalized training weights, for weighted fits.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ess: Option<f64>,
}

/// Mean of per-fold metrics; R^2 averages the folds where it is defined.
pub fn average_metrics(folds: &[FoldMetrics]) -> Metrics {
    let k = folds.len() as f64;
    let r2: Vec<f64> = folds.iter().filter_map(|f| f.metrics.r2).collect();
    Metrics {
        rmse: folds.iter().map(|f| f.metrics.rmse).sum::<f64>() / k,
        mae: folds.iter().map(|f| f.metrics.mae).sum::<f64>() / k,
        r2: (!r2.is_empty()).then(|| r2.iter().sum::<f64>() / r2.len() as f64),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub model: String,
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<FoldMetrics>,
    /// Mean of the fold metrics.
    pub averaged: Metrics,
    /// Metrics over the concatenated held-out predictions.
    pub pooled: Metrics,
    /// Held-out prediction for every row.
    pub predictions: Vec<f64>,
}

fn rows(x: ArrayView2<f64>, idx: &[usize]) -> ndarray::Array2<f64> {
    x.select(Axis(0), idx)
}

fn pick(v: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| v[i]).collect()
}

fn in_fold<T>(fold: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Fold {
        fold,
        source: Box::new(e),
    })
}

pub fn crossvalidate(
    model: &dyn Regressor,
    x: ArrayView2<f64>,
    y: &[f64],
    k: usize,
    seed: u64,
) -> Result<CvResult> {
    let folds = kfold(y.len(), k, seed)?;
    crossvalidate_with_folds(model, x, y, &folds, seed)
}

pub fn crossvalidate_with_folds(
    model: &dyn Regressor,
    x: ArrayView2<f64>,
    y: &[f64],
    folds: &FoldAssignment,
    seed: u64,
) -> Result<CvResult> {
    if x.nrows() != y.len() || folds.n != y.len() {
        return invalid(format!(
            "{} rows, {} outcomes and {} fold labels",
            x.nrows(),
            y.len(),
            folds.n
        ));
    }
    let per_fold: Vec<(Vec<usize>, Vec<f64>)> = (0..folds.k)
        .into_par_iter()
        .map(|f| {
            let (train, test) = folds.train_test(f);
            let pred = in_fold(
                f,
                model.fit_predict(
                    rows(x, &train).view(),
                    &pick(y, &train),
                    None,
                    rows(x, &test).view(),
                    fold_seed(seed, f),
                ),
            )?;
            Ok((test, pred))
        })
        .collect::<Result<_>>()?;
    let mut predictions = vec![f64::NAN; y.len()];
    let mut fold_metrics = Vec::with_capacity(folds.k);
    for (f, (test, pred)) in per_fold.iter().enumerate() {
        for (&i, &p) in test.iter().zip(pred) {
            predictions[i] = p;
        }
        fold_metrics.push(FoldMetrics {
            fold: f,
            n_test: test.len(),
            metrics: in_fold(f, metrics_lenient(&pick(y, test), pred))?,
            ess: None,
        });
    }
    Ok(CvResult {
        model: model.name(),
        k: folds.k,
        seed,
        averaged: average_metrics(&fold_metrics),
        pooled: metrics_lenient(y, &predictions)?,
        folds: fold_metrics,
        predictions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Unweighted,
    Weighted,
    TargetTrained,
}

impl Setting {
    pub const ALL: [Setting; 3] = [Setting::Unweighted, Setting::Weighted, Setting::TargetTrained];

    pub fn as_str(&self) -> &'static str {
        match self {
            Setting::Unweighted => "unweighted",
            Setting::Weighted => "weighted",
            Setting::TargetTrained => "target_trained",
        }
    }
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Setting::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown setting '{s}'")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightConfig {
    pub policy: CovariatePolicy,
    pub clip: ClipRule,
    pub logistic: LogisticOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub setting: String,
    pub averaged: Metrics,
    pub pooled: Metrics,
    pub folds: Vec<FoldMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub outcome: String,
    pub k: usize,
    pub seed: u64,
    pub rows: Vec<ComparisonRow>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

impl ComparisonTable {
    pub fn row(&self, setting: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.setting == setting)
    }

    /// `setting,rmse,mae,r2` with the fold-averaged metrics.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "setting,rmse,mae,r2")?;
        for r in &self.rows {
            let m = r.averaged;
            writeln!(w, "{},{},{},{}", r.setting, m.rmse, m.mae, fmt_opt(m.r2))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Source and target design matrices with their outcomes.
#[derive(Debug, Clone, Copy)]
pub struct TransportData<'a> {
    pub x_source: ArrayView2<'a, f64>,
    pub y_source: &'a [f64],
    pub x_target: ArrayView2<'a, f64>,
    pub y_target: Option<&'a [f64]>,
    pub names: &'a [String],
}

struct FoldOutcome {
    test: Vec<usize>,
    preds: Vec<Vec<f64>>,
    ess: Option<f64>,
}

/// Source and target are each split into k folds. In fold f every model is
/// trained on the source rows outside fold f (or the target rows outside
/// fold f for the target-trained setting) and scored on target fold f. The
/// overlap model for the weighted setting sees only source and target rows
/// outside fold f.
pub fn compare_transport(
    data: &TransportData,
    model: &dyn Regressor,
    settings: &[Setting],
    outcome: &str,
    k: usize,
    seed: u64,
    wcfg: &WeightConfig,
) -> Result<ComparisonTable> {
    if settings.is_empty() {
        return invalid("no settings requested");
    }
    let y_target = match data.y_target {
        Some(y) => y,
        None if settings.contains(&Setting::TargetTrained) => {
            return invalid("target_trained setting requires target labels")
        }
        None => return invalid("target labels are required to score transported predictions"),
    };
    let (n_s, n_t) = (data.x_source.nrows(), data.x_target.nrows());
    if data.y_source.len() != n_s || y_target.len() != n_t {
        return invalid("outcome lengths must match design rows");
    }
    let source_folds = kfold(n_s, k, seed)?;
    let target_folds = kfold(n_t, k, seed.wrapping_add(1))?;

    let outcomes: Vec<FoldOutcome> = (0..k)
        .into_par_iter()
        .map(|f| {
            in_fold(f, {
                let fseed = fold_seed(seed, f);
                let (src_train, _) = source_folds.train_test(f);
                let (tgt_train, tgt_test) = target_folds.train_test(f);
                let xs = rows(data.x_source, &src_train);
                let ys = pick(data.y_source, &src_train);
                let xt_test = rows(data.x_target, &tgt_test);
                let mut ess = None;
                settings
                    .iter()
                    .map(|s| match s {
                        Setting::Unweighted => {
                            model.fit_predict(xs.view(), &ys, None, xt_test.view(), fseed)
                        }
                        Setting::Weighted => {
                            let xt_train = rows(data.x_target, &tgt_train);
                            let overlap = weights::fit_overlap(
                                xs.view(),
                                xt_train.view(),
                                data.names,
                                Some(&ys),
                                &wcfg.policy,
                                &wcfg.logistic,
                            )?;
                            let w = weights::compute_weights(&overlap.scores(xs.view())?, wcfg.clip)?;
                            ess = Some(w.ess);
                            model.fit_predict(xs.view(), &ys, Some(&w.normalized), xt_test.view(), fseed)
                        }
                        Setting::TargetTrained => model.fit_predict(
                            rows(data.x_target, &tgt_train).view(),
                            &pick(y_target, &tgt_train),
                            None,
                            xt_test.view(),
                            fseed,
                        ),
                    })
                    .collect::<Result<Vec<_>>>()
                    .map(|preds| FoldOutcome {
                        test: tgt_test,
                        preds,
                        ess,
                    })
            })
        })
        .collect::<Result<_>>()?;

    let mut table_rows = Vec::with_capacity(settings.len());
    for (si, setting) in settings.iter().enumerate() {
        let mut pooled = vec![f64::NAN; n_t];
        let mut folds = Vec::with_capacity(k);
        for (f, o) in outcomes.iter().enumerate() {
            for (&i, &p) in o.test.iter().zip(&o.preds[si]) {
                pooled[i] = p;
            }
            folds.push(FoldMetrics {
                fold: f,
                n_test: o.test.len(),
                metrics: in_fold(f, metrics_lenient(&pick(y_target, &o.test), &o.preds[si]))?,
                ess: if *setting == Setting::Weighted { o.ess } else { None },
            });
        }
        table_rows.push(ComparisonRow {
            setting: setting.as_str().to_string(),
            averaged: average_metrics(&folds),
            pooled: metrics_lenient(y_target, &pooled)?,
            folds,
        });
    }
    Ok(ComparisonTable {
        outcome: outcome.to_string(),
        k,
        seed,
        rows: table_rows,
    })
}

/// Cross-validates several models on shared folds; one row per model.
pub fn compare_models(
    models: &[&dyn Regressor],
    x: ArrayView2<f64>,
    y: &[f64],
    outcome: &str,
    k: usize,
    seed: u64,
) -> Result<ComparisonTable> {
    let folds = kfold(y.len(), k, seed)?;
    let rows = models
        .iter()
        .map(|m| {
            let cv = crossvalidate_with_folds(*m, x, y, &folds, seed)?;
            Ok(ComparisonRow {
                setting: cv.model,
                averaged: cv.averaged,
                pooled: cv.pooled,
                folds: cv.folds,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ComparisonTable {
        outcome: outcome.to_string(),
        k,
        seed,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    #[test]
    fn metric_examples() {
        let m = metrics_lenient(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert!((m.rmse - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(m.mae, 3.5);
        assert!(m.r2.is_none());
        assert!(matches!(metrics(&[0.0, 0.0], &[3.0, 4.0]), Err(Error::DegenerateSpread(_))));
        let y = [1.0, 2.0, 4.0];
        assert_eq!(metrics(&y, &y).unwrap(), Metrics { rmse: 0.0, mae: 0.0, r2: Some(1.0) });
        let mean = [7.0 / 3.0; 3];
        assert!(metrics(&y, &mean).unwrap().r2.unwrap().abs() < 1e-15);
        assert!(metrics(&y, &y[..2]).is_err());
        assert!(metrics(&[], &[]).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5; 4], &[false, true, false, true]).unwrap(), 0.5);
        assert_eq!(auc(&[0.9, 0.1], &[false, true]).unwrap(), 0.0);
        assert!(auc(&[0.1], &[true]).is_err());
    }

    #[test]
    fn two_fold_mean_trace() {
        let x = Array2::zeros((4, 1));
        let y = [0.0, 0.0, 2.0, 2.0];
        let folds = FoldAssignment::from_labels(2, vec![0, 1, 0, 1]).unwrap();
        let cv = crossvalidate_with_folds(&MeanModel, x.view(), &y, &folds, 0).unwrap();
        assert_eq!(cv.predictions, vec![1.0; 4]);
        assert_eq!(cv.pooled.rmse, 1.0);
        assert_eq!(cv.averaged.rmse, 1.0);
        assert_eq!(cv.folds.len(), 2);
    }

    #[test]
    fn leave_one_out_covers_every_row() {
        let x = Array2::from_shape_fn((6, 1), |(i, _)| i as f64);
        let y: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let cv = crossvalidate(&MeanModel, x.view(), &y, 6, 3).unwrap();
        assert_eq!(cv.folds.len(), 6);
        assert!(cv.folds.iter().all(|f| f.n_test == 1 && f.metrics.r2.is_none()));
        for (i, p) in cv.predictions.iter().enumerate() {
            let expected = (15.0 - i as f64) / 5.0;
            assert!((p - expected).abs() < 1e-12);
        }
        assert_eq!(cv, crossvalidate(&MeanModel, x.view(), &y, 6, 3).unwrap());
    }

    struct Failing;
    impl Regressor for Failing {
        fn name(&self) -> String {
            "failing".into()
        }
        fn fit_predict(&self, _: ArrayView2<f64>, _: &[f64], _: Option<&[f64]>, _: ArrayView2<f64>, _: u64) -> Result<Vec<f64>> {
            invalid("boom")
        }
    }

    #[test]
    fn fold_errors_carry_the_index() {
        let x = Array2::zeros((4, 1));
        let err = crossvalidate(&Failing, x.view(), &[0.0, 1.0, 2.0, 3.0], 2, 0).unwrap_err();
        assert!(matches!(err, Error::Fold { .. }));
    }

    fn transport_data(n: usize) -> (Array2<f64>, Vec<f64>, Array2<f64>, Vec<f64>, Vec<String>) {
        let xs = Array2::from_shape_fn((n, 2), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 10.0);
        let xt = Array2::from_shape_fn((n, 2), |(i, j)| ((i * 5 + j * 2) % 13) as f64 / 10.0 + 0.2);
        let f = |x: ndarray::ArrayView1<f64>| 1.0 + 2.0 * x[0] - x[1];
        let ys = xs.rows().into_iter().enumerate().map(|(i, r)| f(r) + 0.01 * (i % 3) as f64).collect();
        let yt = xt.rows().into_iter().enumerate().map(|(i, r)| f(r) + 0.01 * (i % 2) as f64).collect();
        (xs, ys, xt, yt, vec!["a".into(), "b".into()])
    }

    #[test]
    fn transport_table_has_requested_settings() {
        let (xs, ys, xt, yt, names) = transport_data(40);
        let data = TransportData {
            x_source: xs.view(),
            y_source: &ys,
            x_target: xt.view(),
            y_target: Some(&yt),
            names: &names,
        };
        let wcfg = WeightConfig::default();
        let t = compare_transport(&data, &MeanModel, &Setting::ALL, "y", 4, 1, &wcfg).unwrap();
        let settings: Vec<&str> = t.rows.iter().map(|r| r.setting.as_str()).collect();
        assert_eq!(settings, ["unweighted", "weighted", "target_trained"]);
        assert!(t.row("weighted").unwrap().folds.iter().all(|f| f.ess.is_some()));
        let mut csv = Vec::new();
        t.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("setting,rmse,mae,r2\nunweighted,"));
        assert_eq!(text.lines().count(), 4);
        assert_eq!(t, compare_transport(&data, &MeanModel, &Setting::ALL, "y", 4, 1, &wcfg).unwrap());

        let ols = compare_transport(&data, &OlsModel, &[Setting::Unweighted], "y", 4, 1, &wcfg).unwrap();
        assert!(ols.rows[0].averaged.rmse < 0.05);
    }

    #[test]
    fn transport_needs_target_labels() {
        let (xs, ys, xt, _, names) = transport_data(20);
        let data = TransportData {
            x_source: xs.view(),
            y_source: &ys,
            x_target: xt.view(),
            y_target: None,
            names: &names,
        };
        let err = compare_transport(&data, &MeanModel, &Setting::ALL, "y", 2, 0, &WeightConfig::default()).unwrap_err();
        assert!(err.to_string().contains("target_trained"));
    }

    #[test]
    fn compare_models_rows() {
        let (xs, ys, ..) = transport_data(30);
        let t = compare_models(&[&MeanModel, &OlsModel], xs.view(), &ys, "y", 3, 2).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0].setting, "Mean");
        assert!(t.rows[1].averaged.rmse < t.rows[0].averaged.rmse);
    }

    #[test]
    fn setting_names_round_trip() {
        for s in Setting::ALL {
            assert_eq!(s.as_str().parse::<Setting>().unwrap(), s);
        }
        assert!("both".parse::<Setting>().is_err());
    }

    proptest! {
        #[test]
        fn rmse_dominates_mae(pairs in prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 1..50)) {
            let (t, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let m = metrics_lenient(&t, &p).unwrap();
            prop_assert!(m.rmse >= m.mae * (1.0 - 1e-12));
        }

        #[test]
        fn metrics_permutation_invariant(pairs in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 2..30), rot in 0usize..30) {
            let (t, p): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let r = rot % t.len();
            let (mut t2, mut p2) = (t.clone(), p.clone());
            t2.rotate_left(r);
            p2.rotate_left(r);
            let (a, b) = (metrics_lenient(&t, &p).unwrap(), metrics_lenient(&t2, &p2).unwrap());
            prop_assert!((a.rmse - b.rmse).abs() < 1e-9 && (a.mae - b.mae).abs() < 1e-9);
            match (a.r2, b.r2) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-9),
                (x, y) => prop_assert_eq!(x.is_none(), y.is_none()),
            }
        }
    }
}
