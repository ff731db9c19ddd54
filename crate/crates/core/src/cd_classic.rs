//! Two-environment Causal Dantzig and one-vs-rest merging across many
//! environments.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::dataset::{rowwise_kronecker, Dataset, EnvironmentLabels};
use crate::error::{Error, Result};
use crate::gmm::{asymptotic_variance, normal_quantile, wald_from_parts};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CdMode {
    TwoEnv,
    OneVsRest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdFit {
    pub beta_hat: DVector<f64>,
    /// Focal environment of each sub-fit (one-vs-rest) or the coded environment (two-env).
    pub environments: Vec<String>,
    pub per_env_estimates: Vec<DVector<f64>>,
    pub per_env_ci: Vec<(DVector<f64>, DVector<f64>)>,
    /// For one-vs-rest fits, the mean of the per-run standard errors.
    pub se: DVector<f64>,
    pub ci_low: DVector<f64>,
    pub ci_high: DVector<f64>,
    /// Two-sided normal p-values of `beta_hat / se`.
    pub p_values: DVector<f64>,
    pub level: f64,
    pub mode: CdMode,
}

/// Solve `(S₁ - S₀) β = c₁ - c₀` with `S_e = X_eᵀX_e / n_e` and `c_e = X_eᵀY_e / n_e`.
pub fn causal_dantzig_two_env(
    x0: &DMatrix<f64>,
    y0: &DVector<f64>,
    x1: &DMatrix<f64>,
    y1: &DVector<f64>,
) -> Result<DVector<f64>> {
    if x0.ncols() != x1.ncols() || x0.nrows() != y0.len() || x1.nrows() != y1.len() {
        return Err(Error::InvalidInput("environment blocks have inconsistent shapes".into()));
    }
    if x0.nrows() == 0 || x1.nrows() == 0 {
        return Err(Error::InvalidInput("each environment needs at least one observation".into()));
    }
    let (n0, n1) = (x0.nrows() as f64, x1.nrows() as f64);
    let d = x1.tr_mul(x1) / n1 - x0.tr_mul(x0) / n0;
    let c = x1.tr_mul(y1) / n1 - x0.tr_mul(y0) / n0;
    linalg::solve_vec(&d, &c, "causal dantzig")
        .map(|(b, _)| b)
        .map_err(|e| match e {
            Error::Identification { detail, .. } => Error::identification(
                "causal dantzig",
                format!("difference of Gram matrices is singular (environments too similar): {detail}"),
            ),
            other => other,
        })
}

struct ContrastFit {
    beta: DVector<f64>,
    se: DVector<f64>,
    p_values: DVector<f64>,
    ci_low: DVector<f64>,
    ci_high: DVector<f64>,
}

/// Environment `focal` against all other rows pooled, with sandwich intervals
/// from the equivalent just-identified GCD.
fn contrast(data: &Dataset, labels: &EnvironmentLabels, focal: &str, level: f64) -> Result<ContrastFit> {
    let n = data.n();
    let focal_rows = labels.rows_of(focal);
    let rest_rows: Vec<usize> = (0..n).filter(|i| labels.labels()[*i] != focal).collect();
    let (x1, y1) = data.subset_xy(&focal_rows);
    let (x0, y0) = data.subset_xy(&rest_rows);
    let beta = causal_dantzig_two_env(&x0, &y0, &x1, &y1).map_err(|e| match e {
        Error::Identification { stage, detail } => Error::Identification {
            stage: format!("{stage} (environment `{focal}` vs rest)"),
            detail,
        },
        other => other,
    })?;
    let share = focal_rows.len() as f64 / n as f64;
    let e = DMatrix::from_iterator(
        n,
        1,
        labels.labels().iter().map(|l| if l == focal { 1.0 - share } else { -share }),
    );
    let g = rowwise_kronecker(&e, data.x())?;
    let vcov = asymptotic_variance(&g, data.x(), data.y(), &beta, None)?;
    let w = wald_from_parts(&beta, &vcov, n, level)?;
    Ok(ContrastFit {
        beta,
        se: w.se,
        p_values: w.p_values,
        ci_low: w.ci_low,
        ci_high: w.ci_high,
    })
}

fn require_labels(data: &Dataset) -> Result<&EnvironmentLabels> {
    data.labels()
        .ok_or_else(|| Error::InvalidInput("the Causal Dantzig needs categorical environment labels".into()))
}

/// Two-environment fit on a labelled dataset with exactly two environments.
pub fn cd_two_env(data: &Dataset, level: f64) -> Result<CdFit> {
    normal_quantile(level)?;
    let labels = require_labels(data)?;
    if labels.num_levels() != 2 {
        return Err(Error::InvalidInput(format!(
            "two-environment fit needs exactly 2 environments, found {}",
            labels.num_levels()
        )));
    }
    let focal = labels.levels()[0].clone();
    let c = contrast(data, labels, &focal, level)?;
    Ok(CdFit {
        beta_hat: c.beta.clone(),
        environments: vec![focal],
        per_env_estimates: vec![c.beta],
        per_env_ci: vec![(c.ci_low.clone(), c.ci_high.clone())],
        se: c.se,
        ci_low: c.ci_low,
        ci_high: c.ci_high,
        p_values: c.p_values,
        level,
        mode: CdMode::TwoEnv,
    })
}

/// One fit per environment against the pooled rest; estimates are averaged
/// and the interval runs from the smallest lower to the largest upper limit.
pub fn cd_one_vs_rest(data: &Dataset, level: f64) -> Result<CdFit> {
    normal_quantile(level)?;
    let labels = require_labels(data)?;
    let p = data.p();
    let mut environments = Vec::new();
    let mut estimates = Vec::new();
    let mut cis = Vec::new();
    let mut ses = Vec::new();
    for level_name in labels.levels() {
        let c = contrast(data, labels, level_name, level)?;
        environments.push(level_name.clone());
        estimates.push(c.beta);
        cis.push((c.ci_low, c.ci_high));
        ses.push(c.se);
    }
    let k = estimates.len() as f64;
    let beta_hat = estimates.iter().fold(DVector::zeros(p), |acc, b| acc + b) / k;
    let se = ses.iter().fold(DVector::zeros(p), |acc, s| acc + s) / k;
    let ci_low = DVector::from_iterator(
        p,
        (0..p).map(|j| cis.iter().map(|(l, _)| l[j]).fold(f64::INFINITY, f64::min)),
    );
    let ci_high = DVector::from_iterator(
        p,
        (0..p).map(|j| cis.iter().map(|(_, h)| h[j]).fold(f64::NEG_INFINITY, f64::max)),
    );
    let p_values = DVector::from_iterator(
        p,
        (0..p).map(|j| match se[j] > 0.0 {
            true => erfc((beta_hat[j] / se[j]).abs() / std::f64::consts::SQRT_2),
            false if beta_hat[j] == 0.0 => 1.0,
            false => 0.0,
        }),
    );
    Ok(CdFit {
        p_values,
        beta_hat,
        environments,
        per_env_estimates: estimates,
        per_env_ci: cis,
        se,
        ci_low,
        ci_high,
        level,
        mode: CdMode::OneVsRest,
    })
}

/// Two-environment fit when `r = 2`, one-vs-rest otherwise.
pub fn cd_fit(data: &Dataset, level: f64) -> Result<CdFit> {
    match require_labels(data)?.num_levels() {
        2 => cd_two_env(data, level),
        _ => cd_one_vs_rest(data, level),
    }
}
