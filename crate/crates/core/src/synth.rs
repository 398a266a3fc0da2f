//! Synthetic source/target data with a controllable covariate mean shift.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnSchema, Dataset};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Truth {
    /// Friedman #1 on the first five covariates.
    Friedman,
    /// x . beta, with one coefficient per covariate.
    Linear { beta: Vec<f64> },
    Constant { c: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub n_source: usize,
    pub n_target: usize,
    pub p: usize,
    /// Added to every target covariate vector.
    pub shift: Vec<f64>,
    pub truth: Truth,
    pub noise_sd: f64,
    pub seed: u64,
}

impl ShiftSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_source == 0 || self.n_target == 0 {
            return invalid("n_source and n_target must be at least 1");
        }
        if self.p < 5 {
            return invalid(format!("p must be at least 5, got {}", self.p));
        }
        if self.shift.len() != self.p {
            return invalid(format!("shift has {} entries for p = {}", self.shift.len(), self.p));
        }
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return invalid("noise_sd must be finite and nonnegative");
        }
        if let Truth::Linear { beta } = &self.truth {
            if beta.len() != self.p {
                return invalid(format!("beta has {} entries for p = {}", beta.len(), self.p));
            }
        }
        if self.shift.iter().any(|v| !v.is_finite()) {
            return invalid("shift must be finite");
        }
        Ok(())
    }

    /// Shift vector with `amount` on the first `k` covariates and zero elsewhere.
    pub fn leading_shift(p: usize, k: usize, amount: f64) -> Vec<f64> {
        (0..p).map(|j| if j < k { amount } else { 0.0 }).collect()
    }
}

/// The noise-free regression function.
pub fn truth_value(truth: &Truth, x: &[f64]) -> f64 {
    match truth {
        Truth::Friedman => {
            10.0 * (std::f64::consts::PI * x[0] * x[1]).sin()
                + 20.0 * (x[2] - 0.5).powi(2)
                + 10.0 * x[3]
                + 5.0 * x[4]
        }
        Truth::Linear { beta } => x.iter().zip(beta).map(|(a, b)| a * b).sum(),
        Truth::Constant { c } => *c,
    }
}

pub fn covariate_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

/// Source rows first, then target rows, with ids 1..n and the outcome on
/// both sides. Covariates are Uniform(0, 1) for the Friedman truth and
/// standard normal otherwise, before the target shift.
pub fn generate(spec: &ShiftSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_source + spec.n_target;
    let mut rows = Vec::with_capacity(n);
    let mut outcome = Vec::with_capacity(n);
    let mut membership = Vec::with_capacity(n);
    for i in 0..n {
        let source = i < spec.n_source;
        let x: Vec<f64> = (0..spec.p)
            .map(|j| {
                let base = match spec.truth {
                    Truth::Friedman => rng.random::<f64>(),
                    _ => rng.sample::<f64, _>(StandardNormal),
                };
                if source { base } else { base + spec.shift[j] }
            })
            .collect();
        let noise: f64 = rng.sample(StandardNormal);
        outcome.push(Some(truth_value(&spec.truth, &x) + spec.noise_sd * noise));
        rows.push(x.into_iter().map(Some).collect());
        membership.push(source);
    }
    let schema = covariate_names(spec.p).into_iter().map(ColumnSchema::numeric).collect();
    let ids = (1..=n).map(|i| i.to_string()).collect();
    Dataset::new(schema, rows, Some(outcome), membership, ids)
}

/// Copy with the outcome of every target row removed.
pub fn mask_target(d: &Dataset) -> Result<Dataset> {
    let outcome = d.outcome().map(|y| {
        y.iter()
            .zip(d.membership())
            .map(|(&v, &s)| if s { v } else { None })
            .collect()
    });
    let rows = (0..d.n_rows()).map(|i| d.row(i).to_vec()).collect();
    Dataset::new(
        d.schema().to_vec(),
        rows,
        outcome,
        d.membership().to_vec(),
        d.row_ids().to_vec(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::design_matrix;
    use crate::linmod::fit_ols;
    use ndarray::Axis;

    fn spec(truth: Truth) -> ShiftSpec {
        ShiftSpec {
            n_source: 300,
            n_target: 200,
            p: 5,
            shift: vec![0.0; 5],
            truth,
            noise_sd: 1.0,
            seed: 42,
        }
    }

    #[test]
    fn friedman_value() {
        let x = [0.5, 1.0, 0.5, 0.0, 0.0];
        assert!((truth_value(&Truth::Friedman, &x) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn counts_and_determinism() {
        let s = spec(Truth::Friedman);
        let a = generate(&s).unwrap();
        assert_eq!(a.n_rows(), 500);
        assert_eq!(a.membership().iter().filter(|&&m| m).count(), 300);
        assert_eq!(a, generate(&s).unwrap());
        assert_ne!(a, generate(&ShiftSpec { seed: 43, ..s }).unwrap());
    }

    #[test]
    fn constant_truth_without_noise() {
        let d = generate(&ShiftSpec { noise_sd: 0.0, ..spec(Truth::Constant { c: 3.0 }) }).unwrap();
        assert!(d.outcome().unwrap().iter().all(|&v| v == Some(3.0)));
    }

    #[test]
    fn shift_moves_target_means() {
        let s = ShiftSpec {
            n_source: 2000,
            n_target: 2000,
            shift: ShiftSpec::leading_shift(5, 2, 1.0),
            ..spec(Truth::Constant { c: 0.0 })
        };
        let d = generate(&s).unwrap();
        let x = design_matrix(&d).unwrap().x;
        let src = x.slice(ndarray::s![..2000, ..]).mean_axis(Axis(0)).unwrap();
        let tgt = x.slice(ndarray::s![2000.., ..]).mean_axis(Axis(0)).unwrap();
        for j in 0..5 {
            let expected = if j < 2 { 1.0 } else { 0.0 };
            assert!((tgt[j] - src[j] - expected).abs() < 0.1, "column {j}");
        }
    }

    #[test]
    fn ols_recovers_linear_truth() {
        let beta = vec![1.0, -2.0, 0.5, 0.0, 3.0];
        let d = generate(&spec(Truth::Linear { beta: beta.clone() })).unwrap();
        let x = design_matrix(&d).unwrap().x;
        let y = d.outcome_values().unwrap();
        let fit = fit_ols(x.view(), &y).unwrap();
        // standard errors from (X'X)^-1 with the intercept column
        let n = x.nrows();
        let mut xa = ndarray::Array2::<f64>::ones((n, 6));
        xa.slice_mut(ndarray::s![.., 1..]).assign(&x);
        let xtx = xa.t().dot(&xa);
        let inv = invert(&xtx);
        for j in 0..5 {
            let se = (fit.residual_variance * inv[[j + 1, j + 1]]).sqrt();
            assert!((fit.coefficients[j + 1] - beta[j]).abs() < 3.0 * se, "beta {j}");
        }
    }

    /// Gauss-Jordan inverse for the small test matrix.
    fn invert(a: &ndarray::Array2<f64>) -> ndarray::Array2<f64> {
        let n = a.nrows();
        let mut m = ndarray::Array2::<f64>::zeros((n, 2 * n));
        m.slice_mut(ndarray::s![.., ..n]).assign(a);
        for i in 0..n {
            m[[i, n + i]] = 1.0;
        }
        for c in 0..n {
            let piv = (c..n).max_by(|&i, &j| m[[i, c]].abs().total_cmp(&m[[j, c]].abs())).unwrap();
            for k in 0..2 * n {
                m.swap([c, k], [piv, k]);
            }
            let d = m[[c, c]];
            for k in 0..2 * n {
                m[[c, k]] /= d;
            }
            for r in 0..n {
                if r != c {
                    let f = m[[r, c]];
                    for k in 0..2 * n {
                        m[[r, k]] -= f * m[[c, k]];
                    }
                }
            }
        }
        m.slice(ndarray::s![.., n..]).to_owned()
    }

    #[test]
    fn masking_keeps_source_outcomes() {
        let d = generate(&spec(Truth::Friedman)).unwrap();
        let m = mask_target(&d).unwrap();
        for (i, v) in m.outcome().unwrap().iter().enumerate() {
            assert_eq!(v.is_some(), d.membership()[i]);
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(generate(&ShiftSpec { p: 4, shift: vec![0.0; 4], ..spec(Truth::Friedman) }).is_err());
        assert!(generate(&ShiftSpec { n_target: 0, ..spec(Truth::Friedman) }).is_err());
        assert!(generate(&ShiftSpec { noise_sd: -1.0, ..spec(Truth::Friedman) }).is_err());
        assert!(generate(&spec(Truth::Linear { beta: vec![1.0] })).is_err());
    }
}
