//! Balancing weights from overlap scores.
//!
//! The overlap score is Pr(S = 1 | x). A source row's balancing weight is the
//! inverse odds (1 - p) / p, which is proportional to the target-to-source
//! covariate density ratio. Weights are optionally clipped, then rescaled to
//! mean one so that a uniform weight vector coincides with the unweighted fit.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linmod::{self, LogisticFit, LogisticOptions};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "value", rename_all = "snake_case")]
pub enum ClipRule {
    None,
    /// Cap at a fixed value.
    Absolute(f64),
    /// Cap at the empirical q-quantile of the raw weights.
    Quantile(f64),
}

impl Default for ClipRule {
    fn default() -> Self {
        ClipRule::Quantile(0.99)
    }
}

impl std::fmt::Display for ClipRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClipRule::None => write!(f, "none"),
            ClipRule::Absolute(c) => write!(f, "absolute:{c}"),
            ClipRule::Quantile(q) => write!(f, "quantile:{q}"),
        }
    }
}

impl std::str::FromStr for ClipRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "none" {
            return Ok(ClipRule::None);
        }
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad clip value in '{s}'")))
        };
        match s.split_once(':') {
            Some(("absolute", v)) => Ok(ClipRule::Absolute(parse(v)?)),
            Some(("quantile", v)) => Ok(ClipRule::Quantile(parse(v)?)),
            _ => invalid(format!(
                "clip rule must be 'none', 'absolute:<c>' or 'quantile:<q>', got '{s}'"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancingWeights {
    /// Inverse odds (1 - p) / p per source row.
    pub raw: Vec<f64>,
    /// After clipping and normalization to mean one.
    pub normalized: Vec<f64>,
    pub clip_rule: ClipRule,
    pub ess: f64,
}

/// Inverse odds (1 - p) / p of each overlap score.
pub fn balancing_weights(scores: &[f64]) -> Result<Vec<f64>> {
    scores
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            if p > 0.0 && p < 1.0 {
                Ok((1.0 - p) / p)
            } else {
                invalid(format!("score {p} at position {i} is outside (0, 1)"))
            }
        })
        .collect()
}

pub fn clip_weights(raw: &[f64], rule: ClipRule) -> Result<Vec<f64>> {
    let cap = match rule {
        ClipRule::None => return Ok(raw.to_vec()),
        ClipRule::Absolute(c) => {
            if !(c > 0.0) {
                return invalid(format!("absolute clip value must be positive, got {c}"));
            }
            c
        }
        ClipRule::Quantile(q) => {
            if !(q > 0.5 && q <= 1.0) {
                return invalid(format!("clip quantile must lie in (0.5, 1], got {q}"));
            }
            if raw.is_empty() {
                return Ok(Vec::new());
            }
            stats::quantile_sorted(&stats::sorted(raw), q)
        }
    };
    Ok(raw.iter().map(|&w| w.min(cap)).collect())
}

/// Rescales to mean one.
pub fn normalize_weights(w: &[f64]) -> Result<Vec<f64>> {
    if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return invalid("weights must be finite and nonnegative");
    }
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return invalid("all weights are zero");
    }
    let n = w.len() as f64;
    Ok(w.iter().map(|&v| v * n / total).collect())
}

/// Effective sample size (sum w)^2 / sum w^2.
pub fn ess(w: &[f64]) -> Result<f64> {
    if w.iter().any(|&v| !(v >= 0.0)) {
        return invalid("weights must be nonnegative");
    }
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|v| v * v).sum();
    if !(s2 > 0.0) {
        return invalid("all weights are zero");
    }
    Ok(s * s / s2)
}

/// Raw inverse odds, clipped by `rule`, normalized to mean one.
pub fn compute_weights(scores: &[f64], rule: ClipRule) -> Result<BalancingWeights> {
    let raw = balancing_weights(scores)?;
    let normalized = normalize_weights(&clip_weights(&raw, rule)?)?;
    let ess = ess(&normalized)?;
    Ok(BalancingWeights {
        raw,
        normalized,
        clip_rule: rule,
        ess,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Ten equal-width bins over [0, 1]; the last bin is closed on the right.
pub fn decile_histogram(scores: &[f64]) -> Histogram {
    let mut counts = vec![0; 10];
    for &s in scores {
        let bin = ((s * 10.0).floor() as isize).clamp(0, 9) as usize;
        counts[bin] += 1;
    }
    Histogram {
        edges: (0..=10).map(|k| k as f64 / 10.0).collect(),
        counts,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub score_hist_source: Histogram,
    pub score_hist_target: Histogram,
    /// Fraction of source scores above 0.95.
    pub source_above_095: f64,
    /// Fraction of target scores below 0.05.
    pub target_below_005: f64,
    /// ESS of the unclipped, normalized inverse-odds weights of the source.
    pub ess: f64,
    pub positivity_floor: f64,
    pub positivity_flag: bool,
    /// Target rows whose score falls below the floor.
    pub positivity_violations: Vec<String>,
}

pub const DEFAULT_POSITIVITY_FLOOR: f64 = 0.01;

pub fn overlap_report(
    scores_source: &[f64],
    scores_target: &[f64],
    target_ids: &[String],
    positivity_floor: f64,
) -> Result<OverlapReport> {
    if scores_source.is_empty() || scores_target.is_empty() {
        return invalid("overlap report needs non-empty source and target scores");
    }
    if target_ids.len() != scores_target.len() {
        return invalid("one row id per target score required");
    }
    let frac = |v: &[f64], pred: &dyn Fn(f64) -> bool| {
        v.iter().filter(|&&s| pred(s)).count() as f64 / v.len() as f64
    };
    let raw = balancing_weights(scores_source)?;
    let positivity_violations: Vec<String> = scores_target
        .iter()
        .zip(target_ids)
        .filter(|(&s, _)| s < positivity_floor)
        .map(|(_, id)| id.clone())
        .collect();
    Ok(OverlapReport {
        score_hist_source: decile_histogram(scores_source),
        score_hist_target: decile_histogram(scores_target),
        source_above_095: frac(scores_source, &|s| s > 0.95),
        target_below_005: frac(scores_target, &|s| s < 0.05),
        ess: ess(&normalize_weights(&raw)?)?,
        positivity_floor,
        positivity_flag: !positivity_violations.is_empty(),
        positivity_violations,
    })
}

/// Which covariates enter the overlap-score model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(Default)]
pub enum CovariatePolicy {
    #[default]
    All,
    /// Every covariate except these. A name also drops the indicator columns
    /// `name=level` derived from a categorical column.
    Exclude(Vec<String>),
    /// The k covariates most associated with the outcome in a linear model
    /// fitted on the source rows.
    TopK(usize),
}


/// A fitted overlap-score model over a subset of design columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapModel {
    pub selected: Vec<String>,
    pub columns: Vec<usize>,
    pub fit: LogisticFit,
}

impl OverlapModel {
    /// Scores for rows of the full design matrix the model was selected from.
    pub fn scores(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        linmod::predict_proba(&self.fit, x.select(Axis(1), &self.columns).view())
    }
}

pub fn select_covariates(
    policy: &CovariatePolicy,
    names: &[String],
    x_source: ArrayView2<f64>,
    y_source: Option<&[f64]>,
) -> Result<Vec<usize>> {
    match policy {
        CovariatePolicy::All => Ok((0..names.len()).collect()),
        CovariatePolicy::Exclude(drop) => {
            for d in drop {
                if !names.iter().any(|n| n == d || n.starts_with(&format!("{d}="))) {
                    return invalid(format!("cannot exclude unknown covariate '{d}'"));
                }
            }
            Ok((0..names.len())
                .filter(|&j| {
                    !drop
                        .iter()
                        .any(|d| &names[j] == d || names[j].starts_with(&format!("{d}=")))
                })
                .collect())
        }
        CovariatePolicy::TopK(k) => {
            let y = y_source
                .ok_or_else(|| Error::InvalidArgument("top_k selection needs the source outcome".into()))?;
            if *k == 0 || *k > names.len() {
                return invalid(format!("top_k = {k} must lie in 1..={}", names.len()));
            }
            let ranked = linmod::rank_importance(x_source, y, names)?;
            let keep = linmod::top_k(&ranked, *k);
            Ok((0..names.len()).filter(|&j| keep.contains(&names[j])).collect())
        }
    }
}

/// Fits Pr(S = 1 | x) on the stacked source and target rows.
pub fn fit_overlap(
    x_source: ArrayView2<f64>,
    x_target: ArrayView2<f64>,
    names: &[String],
    y_source: Option<&[f64]>,
    policy: &CovariatePolicy,
    opts: &LogisticOptions,
) -> Result<OverlapModel> {
    if x_source.ncols() != x_target.ncols() || names.len() != x_source.ncols() {
        return Err(Error::DimensionMismatch {
            expected: names.len(),
            got: x_target.ncols(),
        });
    }
    let columns = select_covariates(policy, names, x_source, y_source)?;
    if columns.is_empty() {
        return invalid("covariate policy leaves no covariates");
    }
    let stacked: Array2<f64> = ndarray::concatenate(
        Axis(0),
        &[
            x_source.select(Axis(1), &columns).view(),
            x_target.select(Axis(1), &columns).view(),
        ],
    )
    .expect("column counts agree");
    let labels: Vec<bool> = std::iter::repeat_n(true, x_source.nrows())
        .chain(std::iter::repeat_n(false, x_target.nrows()))
        .collect();
    let fit = linmod::fit_logistic(stacked.view(), &labels, opts)?;
    Ok(OverlapModel {
        selected: columns.iter().map(|&j| names[j].clone()).collect(),
        columns,
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn inverse_odds_examples() {
        let w = balancing_weights(&[0.5, 0.8, 0.2]).unwrap();
        assert_eq!(w[0], 1.0);
        assert_abs_diff_eq!(w[1], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(w[2], 4.0, epsilon = 1e-15);
        assert!(balancing_weights(&[0.0]).is_err());
        assert!(balancing_weights(&[1.0]).is_err());
    }

    #[test]
    fn clipping_examples() {
        assert_eq!(
            clip_weights(&[1.0, 1.0, 1.0, 100.0], ClipRule::Absolute(10.0)).unwrap(),
            vec![1.0, 1.0, 1.0, 10.0]
        );
        assert_eq!(clip_weights(&[3.0, 0.5], ClipRule::None).unwrap(), vec![3.0, 0.5]);
        let q = clip_weights(&[1.0, 2.0, 3.0, 4.0, 100.0], ClipRule::Quantile(0.8)).unwrap();
        assert_eq!(&q[..4], &[1.0, 2.0, 3.0, 4.0]);
        assert_abs_diff_eq!(q[4], 23.2, epsilon = 1e-12);
        assert!(clip_weights(&[1.0], ClipRule::Absolute(0.0)).is_err());
        assert!(clip_weights(&[1.0], ClipRule::Quantile(0.5)).is_err());
        assert!(clip_weights(&[1.0], ClipRule::Quantile(1.1)).is_err());
    }

    #[test]
    fn normalization_examples() {
        let w = normalize_weights(&[2.0, 4.0]).unwrap();
        assert_abs_diff_eq!(w[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 4.0 / 3.0, epsilon = 1e-15);
        assert_eq!(normalize_weights(&[1.0, 1.0, 1.0]).unwrap(), vec![1.0; 3]);
        assert!(normalize_weights(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn ess_examples() {
        assert_eq!(ess(&[1.0; 4]).unwrap(), 4.0);
        assert_eq!(ess(&[1.0, 0.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(ess(&[2.0, 1.0]).unwrap(), 1.8, epsilon = 1e-15);
        assert!(ess(&[0.0]).is_err());
    }

    #[test]
    fn clip_rule_parses() {
        assert_eq!("none".parse::<ClipRule>().unwrap(), ClipRule::None);
        assert_eq!("quantile:0.99".parse::<ClipRule>().unwrap(), ClipRule::Quantile(0.99));
        assert_eq!("absolute:10".parse::<ClipRule>().unwrap(), ClipRule::Absolute(10.0));
        assert!("tanh".parse::<ClipRule>().is_err());
        let r = ClipRule::Quantile(0.95);
        assert_eq!(r.to_string().parse::<ClipRule>().unwrap(), r);
    }

    #[test]
    fn overlap_report_constant_scores() {
        let ids: Vec<String> = (0..3).map(|i| format!("t{i}")).collect();
        let r = overlap_report(&[0.6; 4], &[0.6; 3], &ids, DEFAULT_POSITIVITY_FLOOR).unwrap();
        assert_eq!(r.source_above_095, 0.0);
        assert_eq!(r.target_below_005, 0.0);
        assert!(!r.positivity_flag);
        assert!(r.positivity_violations.is_empty());
        assert_abs_diff_eq!(r.ess, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn overlap_report_flags_low_target_scores() {
        let ids: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let r = overlap_report(&[0.4, 0.99, 0.7], &[0.3, 0.001, 0.5], &ids, 0.01).unwrap();
        assert!(r.positivity_flag);
        assert_eq!(r.positivity_violations, vec!["b".to_string()]);
        assert_eq!(r.score_hist_source.counts.iter().sum::<usize>(), 3);
        assert_eq!(r.score_hist_target.counts.iter().sum::<usize>(), 3);
        assert_abs_diff_eq!(r.source_above_095, 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(r.score_hist_source.counts[9], 1);
        assert_eq!(r.score_hist_target.counts[0], 1);
    }

    #[test]
    fn exclude_policy_drops_indicators() {
        let names: Vec<String> = ["x", "g=b", "g=c", "z"].iter().map(|s| s.to_string()).collect();
        let x = Array2::<f64>::zeros((3, 4));
        let cols = select_covariates(&CovariatePolicy::Exclude(vec!["g".into()]), &names, x.view(), None).unwrap();
        assert_eq!(cols, vec![0, 3]);
        assert!(select_covariates(&CovariatePolicy::Exclude(vec!["q".into()]), &names, x.view(), None).is_err());
        assert!(select_covariates(&CovariatePolicy::TopK(2), &names, x.view(), None).is_err());
    }

    proptest! {
        #[test]
        fn inverse_odds_strictly_decreasing(a in 0.001..0.999f64, b in 0.001..0.999f64) {
            prop_assume!(a < b);
            let w = balancing_weights(&[a, b]).unwrap();
            prop_assert!(w[0] > w[1]);
        }

        #[test]
        fn normalized_mean_is_one_and_scale_free(
            w in prop::collection::vec(0.0..50.0f64, 1..60),
            c in 0.01..100.0f64,
        ) {
            prop_assume!(w.iter().any(|&v| v > 0.0));
            let out = normalize_weights(&w).unwrap();
            let mean = out.iter().sum::<f64>() / out.len() as f64;
            prop_assert!((mean - 1.0).abs() < 1e-10);
            let scaled: Vec<f64> = w.iter().map(|v| v * c).collect();
            let again = normalize_weights(&scaled).unwrap();
            for (a, b) in out.iter().zip(&again) {
                prop_assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
            }
            let e = ess(&out).unwrap();
            prop_assert!(e > 0.0 && e <= out.len() as f64 * (1.0 + 1e-12));
        }

        #[test]
        fn ess_drops_when_one_weight_grows(n in 2usize..40, bump in 0.01..10.0f64, at in 0usize..40) {
            let mut w = vec![1.0; n];
            prop_assert!((ess(&w).unwrap() - n as f64).abs() < 1e-9);
            w[at % n] += bump;
            prop_assert!(ess(&w).unwrap() < n as f64);
        }

        #[test]
        fn pipeline_commutes_with_permutation(
            scores in prop::collection::vec(0.01..0.99f64, 2..50),
            rot in 0usize..50,
        ) {
            let rule = ClipRule::Quantile(0.9);
            let base = compute_weights(&scores, rule).unwrap();
            let k = rot % scores.len();
            let mut permuted = scores.clone();
            permuted.rotate_left(k);
            let other = compute_weights(&permuted, rule).unwrap();
            let mut expected = base.normalized.clone();
            expected.rotate_left(k);
            for (a, b) in expected.iter().zip(&other.normalized) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
