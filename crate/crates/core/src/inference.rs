//! Meta-analytic regression of trial-level primary effects on surrogate
//! effects.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::format::sig6;

/// Level of the Pearson interval attached to a fit unless overridden.
pub const DEFAULT_CI_LEVEL: f64 = 0.95;

/// Least-squares fit of `y = beta0 + beta1 x` with its slope test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaFit {
    pub beta0_hat: f64,
    pub beta1_hat: f64,
    pub se_beta1: f64,
    pub t_stat: f64,
    /// Two-sided p-value for `beta1 = 0`.
    pub p_value: f64,
    pub df: usize,
    /// `None` when the responses have no variation.
    pub r_pearson: Option<f64>,
    /// Fisher-z interval; needs at least four pairs.
    pub r_ci: Option<(f64, f64)>,
    pub ci_level: f64,
    pub residuals: Vec<f64>,
    pub weighted: bool,
}

impl MetaFit {
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }

    pub const CSV_HEADER: [&'static str; 10] = ["beta0", "beta1", "se", "t", "p", "df", "r", "r_lo", "r_hi", "weighted"];

    /// One-row CSV (header plus values).
    pub fn to_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map(sig6).unwrap_or_default();
        let row = [
            sig6(self.beta0_hat),
            sig6(self.beta1_hat),
            sig6(self.se_beta1),
            sig6(self.t_stat),
            sig6(self.p_value),
            self.df.to_string(),
            opt(self.r_pearson),
            opt(self.r_ci.map(|c| c.0)),
            opt(self.r_ci.map(|c| c.1)),
            self.weighted.to_string(),
        ];
        format!("{}\n{}\n", Self::CSV_HEADER.join(","), row.join(","))
    }

    /// JSON object with the same fields as the CSV, rounded to six
    /// significant digits.
    pub fn to_json_value(&self) -> serde_json::Value {
        use crate::format::round6;
        serde_json::json!({
            "beta0": round6(self.beta0_hat),
            "beta1": round6(self.beta1_hat),
            "se": round6(self.se_beta1),
            "t": round6(self.t_stat),
            "p": round6(self.p_value),
            "df": self.df,
            "r": self.r_pearson.map(round6),
            "r_lo": self.r_ci.map(|c| round6(c.0)),
            "r_hi": self.r_ci.map(|c| round6(c.1)),
            "weighted": self.weighted,
        })
    }
}

/// Ordinary (or weighted) least squares with a 95% Pearson interval.
pub fn ols_fit(pairs: &[(f64, f64)], weights: Option<&[f64]>) -> Result<MetaFit> {
    ols_fit_at(pairs, weights, DEFAULT_CI_LEVEL)
}

/// Weighted sums over centred data.
struct Moments {
    mean_x: f64,
    mean_y: f64,
    sxx: f64,
    syy: f64,
    sxy: f64,
}

fn moments(pairs: &[(f64, f64)], w: &[f64]) -> Moments {
    let total: f64 = w.iter().sum();
    let mean_x = pairs.iter().zip(w).map(|(p, w)| w * p.0).sum::<f64>() / total;
    let mean_y = pairs.iter().zip(w).map(|(p, w)| w * p.1).sum::<f64>() / total;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&(x, y), &wi) in pairs.iter().zip(w) {
        let (dx, dy) = (x - mean_x, y - mean_y);
        sxx += wi * dx * dx;
        syy += wi * dy * dy;
        sxy += wi * dx * dy;
    }
    Moments {
        mean_x,
        mean_y,
        sxx,
        syy,
        sxy,
    }
}

pub fn ols_fit_at(pairs: &[(f64, f64)], weights: Option<&[f64]>, level: f64) -> Result<MetaFit> {
    let n_t = pairs.len();
    if n_t < 3 {
        return Err(Error::InsufficientData { needed: 3, got: n_t });
    }
    if pairs.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::Domain("non-finite value in regression data".into()));
    }
    let w: Vec<f64> = match weights {
        None => vec![1.0; n_t],
        Some(w) => {
            if w.len() != n_t {
                return Err(Error::Domain(format!("{} weights for {} pairs", w.len(), n_t)));
            }
            if w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(Error::Domain("weights must be positive and finite".into()));
            }
            let total: f64 = w.iter().sum();
            w.iter().map(|x| x * n_t as f64 / total).collect()
        }
    };
    let mo = moments(pairs, &w);
    if mo.sxx <= 0.0 || pairs.iter().all(|p| p.0 == pairs[0].0) {
        return Err(Error::NonIdentifiable(
            "no variation in the surrogate across trials".into(),
        ));
    }
    let beta1 = mo.sxy / mo.sxx;
    let beta0 = mo.mean_y - beta1 * mo.mean_x;
    let residuals: Vec<f64> = pairs.iter().map(|&(x, y)| y - beta0 - beta1 * x).collect();
    let df = n_t - 2;
    let rss: f64 = residuals.iter().zip(&w).map(|(e, w)| w * e * e).sum();
    let se = (rss / df as f64 / mo.sxx).sqrt();
    let (t_stat, p_value) = if se > 0.0 {
        let t = beta1 / se;
        (t, 2.0 * student_t_sf(t.abs(), df as f64)?)
    } else if beta1 != 0.0 {
        (beta1.signum() * f64::INFINITY, 0.0)
    } else {
        (0.0, 1.0)
    };
    let r_pearson = (mo.syy > 0.0).then(|| (mo.sxy / (mo.sxx * mo.syy).sqrt()).clamp(-1.0, 1.0));
    let r_ci = match r_pearson {
        Some(r) if n_t >= 4 => Some(fisher_interval(r, n_t, level)?),
        _ => None,
    };
    Ok(MetaFit {
        beta0_hat: beta0,
        beta1_hat: beta1,
        se_beta1: se,
        t_stat,
        p_value: p_value.clamp(0.0, 1.0),
        df,
        r_pearson,
        r_ci,
        ci_level: level,
        residuals,
        weighted: weights.is_some(),
    })
}

fn fisher_interval(r: f64, n_t: usize, level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("confidence level {level} outside (0,1)")));
    }
    let z = r.atanh();
    let q = Normal::standard().inverse_cdf((1.0 + level) / 2.0);
    let half = q / ((n_t - 3) as f64).sqrt();
    Ok(((z - half).tanh(), (z + half).tanh()))
}

/// Pearson correlation with its Fisher-z confidence interval.
pub fn pearson_ci(pairs: &[(f64, f64)], level: f64) -> Result<(f64, f64, f64)> {
    if pairs.len() < 4 {
        return Err(Error::InsufficientData { needed: 4, got: pairs.len() });
    }
    let mo = moments(pairs, &vec![1.0; pairs.len()]);
    if mo.sxx <= 0.0 || mo.syy <= 0.0 {
        return Err(Error::NonIdentifiable("zero variance in correlation input".into()));
    }
    let r = (mo.sxy / (mo.sxx * mo.syy).sqrt()).clamp(-1.0, 1.0);
    let (lo, hi) = fisher_interval(r, pairs.len(), level)?;
    Ok((r, lo, hi))
}

/// Upper tail `P(T > t)` of Student's t with `df` degrees of freedom.
pub fn student_t_sf(t: f64, df: f64) -> Result<f64> {
    if df.is_nan() || df < 1.0 {
        return Err(Error::Domain(format!("degrees of freedom {df} < 1")));
    }
    if t.is_nan() {
        return Err(Error::Domain("t statistic is NaN".into()));
    }
    if t.is_infinite() {
        return Ok(if t > 0.0 { 0.0 } else { 1.0 });
    }
    let x = df / (df + t * t);
    let tail = 0.5 * beta_reg(df / 2.0, 0.5, x);
    Ok(if t >= 0.0 { tail } else { 1.0 - tail })
}
