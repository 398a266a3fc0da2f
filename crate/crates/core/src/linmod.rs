//! Linear and logistic regression.
//!
//! OLS goes through a Householder QR of the intercept-augmented design, so
//! exactly collinear columns are reported instead of being silently
//! regularized. Logistic regression is fitted by Newton's method (IRLS) with
//! step halving.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Relative size below which a QR pivot marks its column as dependent.
const RANK_TOL: f64 = 1e-10;

pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    /// Intercept first.
    pub coefficients: Vec<f64>,
    /// SSR / (n - p - 1).
    pub residual_variance: f64,
    pub column_names: Vec<String>,
}

impl LinearFit {
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        check_width(x, self.coefficients.len() - 1)?;
        Ok(x.rows()
            .into_iter()
            .map(|row| linear_predictor(&self.coefficients, row.iter()))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    /// Intercept first.
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Largest absolute component of the score (log-likelihood gradient) at
    /// the returned coefficients.
    pub max_abs_score: f64,
    /// Log-likelihood after each accepted step, starting from the null point.
    pub loglik_trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Coefficient norm beyond which the data are declared separated.
    pub max_coef_norm: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions {
            tol: 1e-8,
            max_iter: 100,
            max_coef_norm: 30.0,
        }
    }
}

fn check_width(x: ArrayView2<f64>, p: usize) -> Result<()> {
    if x.ncols() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: x.ncols(),
        });
    }
    Ok(())
}

fn linear_predictor<'a>(coef: &[f64], row: impl Iterator<Item = &'a f64>) -> f64 {
    coef[0] + coef[1..].iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
}

fn with_intercept(x: ArrayView2<f64>) -> Array2<f64> {
    let (n, p) = x.dim();
    let mut a = Array2::<f64>::ones((n, p + 1));
    a.slice_mut(ndarray::s![.., 1..]).assign(&x);
    a
}

fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

/// Householder QR, LINPACK layout: reflectors below the diagonal, R on and
/// above it with the diagonal kept separately.
struct Qr {
    qr: Array2<f64>,
    rdiag: Vec<f64>,
    dependent: Vec<usize>,
}

impl Qr {
    fn new(mut a: Array2<f64>) -> Qr {
        let (n, m) = a.dim();
        let col_norms: Vec<f64> = (0..m)
            .map(|j| a.column(j).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let mut rdiag = vec![0.0; m];
        let mut dependent = Vec::new();
        for k in 0..m.min(n) {
            let norm = (k..n).map(|i| a[[i, k]] * a[[i, k]]).sum::<f64>().sqrt();
            if norm <= RANK_TOL * col_norms[k] || col_norms[k] == 0.0 {
                dependent.push(k);
                rdiag[k] = 0.0;
                continue;
            }
            let alpha = if a[[k, k]] > 0.0 { -norm } else { norm };
            a[[k, k]] -= alpha;
            let vnorm2: f64 = (k..n).map(|i| a[[i, k]] * a[[i, k]]).sum();
            for j in k + 1..m {
                let dot: f64 = (k..n).map(|i| a[[i, k]] * a[[i, j]]).sum();
                let f = 2.0 * dot / vnorm2;
                for i in k..n {
                    a[[i, j]] -= f * a[[i, k]];
                }
            }
            rdiag[k] = alpha;
        }
        for k in n..m {
            dependent.push(k);
        }
        Qr {
            qr: a,
            rdiag,
            dependent,
        }
    }

    fn apply_qt(&self, y: &mut [f64]) {
        let (n, m) = self.qr.dim();
        for k in 0..m.min(n) {
            if self.rdiag[k] == 0.0 {
                continue;
            }
            let vnorm2: f64 = (k..n).map(|i| self.qr[[i, k]] * self.qr[[i, k]]).sum();
            let dot: f64 = (k..n).map(|i| self.qr[[i, k]] * y[i]).sum();
            let f = 2.0 * dot / vnorm2;
            for (i, yi) in y.iter_mut().enumerate().skip(k) {
                *yi -= f * self.qr[[i, k]];
            }
        }
    }

    /// Least-squares solution; requires full column rank.
    fn solve(&self, y: &[f64]) -> Vec<f64> {
        let m = self.qr.ncols();
        let mut qty = y.to_vec();
        self.apply_qt(&mut qty);
        let mut beta = vec![0.0; m];
        for k in (0..m).rev() {
            let mut acc = qty[k];
            for j in k + 1..m {
                acc -= self.qr[[k, j]] * beta[j];
            }
            beta[k] = acc / self.rdiag[k];
        }
        beta
    }
}

fn rank_error(dependent: &[usize], names: &[String]) -> Error {
    Error::RankDeficient(
        dependent
            .iter()
            .map(|&k| if k == 0 { "(intercept)".to_string() } else { names[k - 1].clone() })
            .collect(),
    )
}

pub fn fit_ols(x: ArrayView2<f64>, y: &[f64]) -> Result<LinearFit> {
    fit_ols_named(x, y, &default_names(x.ncols()))
}

pub fn fit_ols_named(x: ArrayView2<f64>, y: &[f64], names: &[String]) -> Result<LinearFit> {
    let (n, p) = x.dim();
    if y.len() != n {
        return invalid(format!("y has {} entries for {n} rows", y.len()));
    }
    if names.len() != p {
        return invalid(format!("{} names for {p} columns", names.len()));
    }
    if n <= p + 1 {
        return invalid(format!("OLS needs n > p + 1 (n = {n}, p = {p})"));
    }
    let a = with_intercept(x);
    let qr = Qr::new(a.clone());
    if !qr.dependent.is_empty() {
        return Err(rank_error(&qr.dependent, names));
    }
    let coefficients = qr.solve(y);
    let ssr: f64 = a
        .rows()
        .into_iter()
        .zip(y)
        .map(|(row, yi)| {
            let fit: f64 = row.iter().zip(&coefficients).map(|(a, b)| a * b).sum();
            (yi - fit).powi(2)
        })
        .sum();
    Ok(LinearFit {
        coefficients,
        residual_variance: ssr / (n - p - 1) as f64,
        column_names: names.to_vec(),
    })
}

fn sample_sd(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    (v.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Standardized absolute OLS coefficients |b_j| * sd(x_j), largest first,
/// ties broken by name.
pub fn rank_importance(x: ArrayView2<f64>, y: &[f64], names: &[String]) -> Result<Vec<(String, f64)>> {
    let fit = fit_ols_named(x, y, names)?;
    let mut ranked: Vec<(String, f64)> = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let sd = sample_sd(x.column(j).iter().copied());
            (name.clone(), fit.coefficients[j + 1].abs() * sd)
        })
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ranked)
}

/// Names of the `k` most important columns.
pub fn top_k(ranked: &[(String, f64)], k: usize) -> Vec<String> {
    ranked.iter().take(k).map(|(n, _)| n.clone()).collect()
}

pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(eta)) without overflow.
fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

fn loglik(a: &Array2<f64>, s: &[bool], beta: &[f64]) -> f64 {
    a.rows()
        .into_iter()
        .zip(s)
        .map(|(row, &si)| {
            let eta: f64 = row.iter().zip(beta).map(|(x, b)| x * b).sum();
            (if si { eta } else { 0.0 }) - softplus(eta)
        })
        .sum()
}

/// Solves the SPD system `h z = g` in place by Cholesky.
fn cholesky_solve(mut h: Array2<f64>, g: &[f64]) -> Option<Vec<f64>> {
    let m = g.len();
    for j in 0..m {
        let mut d = h[[j, j]];
        for k in 0..j {
            d -= h[[j, k]] * h[[j, k]];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        h[[j, j]] = d;
        for i in j + 1..m {
            let mut v = h[[i, j]];
            for k in 0..j {
                v -= h[[i, k]] * h[[j, k]];
            }
            h[[i, j]] = v / d;
        }
    }
    let mut z = g.to_vec();
    for i in 0..m {
        for k in 0..i {
            z[i] -= h[[i, k]] * z[k];
        }
        z[i] /= h[[i, i]];
    }
    for i in (0..m).rev() {
        for k in i + 1..m {
            z[i] -= h[[k, i]] * z[k];
        }
        z[i] /= h[[i, i]];
    }
    Some(z)
}

/// Maximum-likelihood logistic regression of `s` on `x` (with intercept).
pub fn fit_logistic(x: ArrayView2<f64>, s: &[bool], opts: &LogisticOptions) -> Result<LogisticFit> {
    let (n, p) = x.dim();
    if s.len() != n {
        return invalid(format!("labels have {} entries for {n} rows", s.len()));
    }
    let n_pos = s.iter().filter(|&&v| v).count();
    if n_pos == 0 || n_pos == n {
        return invalid("logistic regression needs both classes present");
    }
    let a = with_intercept(x);
    let qr = Qr::new(a.clone());
    if !qr.dependent.is_empty() {
        return Err(rank_error(&qr.dependent, &default_names(p)));
    }
    let m = p + 1;
    let mut beta = vec![0.0; m];
    let mut ll = loglik(&a, s, &beta);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    let mut max_abs_score;
    loop {
        let mut grad = vec![0.0; m];
        let mut hess = Array2::<f64>::zeros((m, m));
        for (row, &si) in a.rows().into_iter().zip(s) {
            let eta: f64 = row.iter().zip(&beta).map(|(x, b)| x * b).sum();
            let prob = sigmoid(eta);
            let resid = if si { 1.0 } else { 0.0 } - prob;
            let w = prob * (1.0 - prob);
            for j in 0..m {
                grad[j] += row[j] * resid;
                let wj = w * row[j];
                for k in 0..=j {
                    hess[[j, k]] += wj * row[k];
                }
            }
        }
        for j in 0..m {
            for k in 0..j {
                hess[[k, j]] = hess[[j, k]];
            }
        }
        max_abs_score = grad.iter().fold(0.0f64, |acc, g| acc.max(g.abs()));
        if max_abs_score <= opts.tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;
        let Some(step) = cholesky_solve(hess, &grad) else {
            return Err(Error::Separation(
                "information matrix became singular".into(),
            ));
        };
        let slack = 1e-12 * (1.0 + ll.abs());
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, d)| b + scale * d).collect();
            let ll_cand = loglik(&a, s, &cand);
            if ll_cand >= ll - slack {
                accepted = Some((cand, ll_cand.max(ll)));
                break;
            }
            scale *= 0.5;
        }
        let Some((cand, ll_cand)) = accepted else {
            break;
        };
        beta = cand;
        ll = ll_cand;
        trace.push(ll);
        let norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
        if norm > opts.max_coef_norm {
            return Err(Error::Separation(format!(
                "coefficient norm {norm:.1} exceeds {} after {iterations} iterations",
                opts.max_coef_norm
            )));
        }
    }
    let perfectly_classified = a.rows().into_iter().zip(s).all(|(row, &si)| {
        let eta: f64 = row.iter().zip(&beta).map(|(x, b)| x * b).sum();
        (if si { 1.0 } else { 0.0 } - sigmoid(eta)).abs() < 1e-6
    });
    if perfectly_classified {
        return Err(Error::Separation(
            "every row is classified with certainty".into(),
        ));
    }
    Ok(LogisticFit {
        coefficients: beta,
        converged,
        iterations,
        max_abs_score,
        loglik_trace: trace,
    })
}

/// Pr(S = 1 | x), clamped to [1e-12, 1 - 1e-12].
pub fn predict_proba(fit: &LogisticFit, x: ArrayView2<f64>) -> Result<Vec<f64>> {
    check_width(x, fit.coefficients.len() - 1)?;
    Ok(x.rows()
        .into_iter()
        .map(|row| {
            sigmoid(linear_predictor(&fit.coefficients, row.iter())).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn exact_line() {
        let x = array![[1.0], [2.0], [3.0], [4.0]];
        let fit = fit_ols(x.view(), &[2.0, 4.0, 6.0, 8.0]).unwrap();
        assert_abs_diff_eq!(fit.coefficients[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.coefficients[1], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.residual_variance, 0.0, epsilon = 1e-20);
    }

    #[test]
    fn constant_outcome() {
        let x = array![[1.0, 0.3], [2.0, -1.0], [3.0, 0.7], [4.0, 2.0], [0.5, 0.1]];
        let fit = fit_ols(x.view(), &[7.5; 5]).unwrap();
        assert_abs_diff_eq!(fit.coefficients[0], 7.5, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.coefficients[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.coefficients[2], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn duplicated_column_is_rank_deficient() {
        let x = array![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [5.0, 5.0]];
        let names = vec!["a".to_string(), "b".to_string()];
        match fit_ols_named(x.view(), &[1.0, 2.0, 0.0, 1.0], &names).unwrap_err() {
            Error::RankDeficient(cols) => assert_eq!(cols, vec!["b".to_string()]),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn constant_column_collides_with_intercept() {
        let x = array![[1.0, 3.0], [2.0, 3.0], [3.0, 3.0], [5.0, 3.0]];
        assert!(matches!(
            fit_ols(x.view(), &[1.0, 2.0, 0.0, 1.0]),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn residuals_orthogonal_to_design() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_fn((60, 3), |_| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<f64> = (0..60).map(|i| x[[i, 0]] - 2.0 * x[[i, 2]] + rng.sample::<f64, _>(StandardNormal)).collect();
        let fit = fit_ols(x.view(), &y).unwrap();
        let pred = fit.predict(x.view()).unwrap();
        let resid: Vec<f64> = y.iter().zip(&pred).map(|(a, b)| a - b).collect();
        let scale: f64 = y.iter().map(|v| v.abs()).sum();
        assert!(resid.iter().sum::<f64>().abs() <= 1e-8 * scale);
        for j in 0..3 {
            let dot: f64 = resid.iter().zip(x.column(j)).map(|(r, x)| r * x).sum();
            assert!(dot.abs() <= 1e-8 * scale, "column {j}: {dot}");
        }
    }

    #[test]
    fn importance_ranks_by_standardized_coefficient() {
        // x1 and x2 are orthogonal with unit sample sd
        let base = [1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let other = [1.0, 1.0, -1.0, -1.0, 0.0, 0.0];
        let sd1 = sample_sd(base.iter().copied());
        let sd2 = sample_sd(other.iter().copied());
        let mut x = Array2::zeros((6, 2));
        for i in 0..6 {
            x[[i, 0]] = base[i] / sd1;
            x[[i, 1]] = other[i] / sd2;
        }
        let y: Vec<f64> = (0..6).map(|i| 3.0 * x[[i, 0]]).collect();
        let names = vec!["x1".to_string(), "x2".to_string()];
        let ranked = rank_importance(x.view(), &y, &names).unwrap();
        assert_eq!(ranked[0].0, "x1");
        assert_abs_diff_eq!(ranked[0].1, 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(ranked[1].1, 0.0, epsilon = 1e-10);

        let mut scaled = x.clone();
        scaled.column_mut(0).mapv_inplace(|v| v * 10.0);
        let again = rank_importance(scaled.view(), &y, &names).unwrap();
        assert_abs_diff_eq!(again[0].1, 3.0, epsilon = 1e-10);
    }

    #[test]
    fn top_k_takes_the_head() {
        let ranked: Vec<(String, f64)> = [("a", 5.0), ("b", 4.0), ("c", 3.0), ("d", 2.0), ("e", 1.0)]
            .iter()
            .map(|(n, v)| (n.to_string(), *v))
            .collect();
        assert_eq!(top_k(&ranked, 2), vec!["a", "b"]);
    }

    #[test]
    fn importance_ties_are_alphabetical() {
        let x = array![[1.0, 1.0], [-1.0, 1.0], [1.0, -1.0], [-1.0, -1.0], [0.0, 0.0]];
        let y: Vec<f64> = (0..5).map(|i| x[[i, 0]] + x[[i, 1]]).collect();
        let names = vec!["zeta".to_string(), "alpha".to_string()];
        let ranked = rank_importance(x.view(), &y, &names).unwrap();
        assert_eq!(ranked[0].0, "alpha");
    }

    #[test]
    fn intercept_only_matches_log_odds() {
        let x = Array2::<f64>::zeros((8, 0));
        let s = [true, false, false, false, true, false, false, false];
        let fit = fit_logistic(x.view(), &s, &LogisticOptions::default()).unwrap();
        assert!(fit.converged);
        assert_abs_diff_eq!(fit.coefficients[0], (0.25f64 / 0.75).ln(), epsilon = 1e-9);
        assert_abs_diff_eq!(fit.coefficients[0], -1.0986, epsilon = 1e-4);
    }

    #[test]
    fn separation_is_detected() {
        let x = array![[-2.0], [-1.5], [-1.0], [-0.5], [0.5], [1.0], [1.5], [2.0]];
        let s = [false, false, false, false, true, true, true, true];
        let err = fit_logistic(x.view(), &s, &LogisticOptions::default()).unwrap_err();
        assert!(err.to_string().contains("separation: overlap scores degenerate"), "{err}");
    }

    #[test]
    fn large_scale_separation_is_detected() {
        let x = array![[-100.0], [-90.0], [-80.0], [80.0], [90.0], [100.0]];
        let s = [false, false, false, true, true, true];
        assert!(matches!(
            fit_logistic(x.view(), &s, &LogisticOptions::default()),
            Err(Error::Separation(_))
        ));
    }

    fn simulated(n: usize, seed: u64) -> (Array2<f64>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, 1), |_| rng.sample::<f64, _>(StandardNormal));
        let s = (0..n)
            .map(|i| rng.random::<f64>() < sigmoid(0.5 - 1.0 * x[[i, 0]]))
            .collect();
        (x, s)
    }

    #[test]
    fn logistic_recovers_simulated_coefficients() {
        let (x, s) = simulated(50_000, 11);
        let fit = fit_logistic(x.view(), &s, &LogisticOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.max_abs_score <= 1e-8);
        assert!((fit.coefficients[0] - 0.5).abs() < 0.05, "{:?}", fit.coefficients);
        assert!((fit.coefficients[1] + 1.0).abs() < 0.05, "{:?}", fit.coefficients);

        let probs = predict_proba(&fit, x.view()).unwrap();
        let total: f64 = probs.iter().sum();
        let positives = s.iter().filter(|&&v| v).count() as f64;
        assert!((total - positives).abs() < 1e-8, "{total} vs {positives}");
        for w in fit.loglik_trace.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn predict_proba_examples() {
        let fit = LogisticFit {
            coefficients: vec![0.0, 1.0],
            converged: true,
            iterations: 0,
            max_abs_score: 0.0,
            loglik_trace: vec![],
        };
        let p = predict_proba(&fit, array![[0.0], [40.0], [-40.0], [1.0], [2.0]].view()).unwrap();
        assert_eq!(p[0], 0.5);
        assert_eq!(p[1], 1.0 - 1e-12);
        assert_eq!(p[2], 1e-12);
        assert!(p[3] < p[4]);
        assert!(predict_proba(&fit, array![[0.0, 1.0]].view()).is_err());
    }
}
