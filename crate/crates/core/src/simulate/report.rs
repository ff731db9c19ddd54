use serde::{Deserialize, Serialize};

use super::generators::median;
use super::monte_carlo::Estimate;
use super::scenario::ScenarioConfig;
use crate::error::{Error, Result};

/// Summary of one coefficient across successful replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefStats {
    pub coefficient: usize,
    pub truth: f64,
    pub mean: f64,
    pub mean_bias: f64,
    /// Sample standard deviation of the estimates; absent with one replicate.
    pub emp_sd: Option<f64>,
    pub mean_se: f64,
    pub coverage: f64,
    pub median_width: f64,
}

impl CoefStats {
    pub(crate) fn from_estimates(j: usize, truth: f64, ok: &[&Estimate]) -> Self {
        let m = ok.len() as f64;
        let values: Vec<f64> = ok.iter().map(|e| e.beta[j]).collect();
        let mean = values.iter().sum::<f64>() / m;
        let emp_sd = (ok.len() > 1)
            .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt());
        let covered = ok
            .iter()
            .filter(|e| e.ci_low[j] <= truth && truth <= e.ci_high[j])
            .count();
        let widths: Vec<f64> = ok.iter().map(|e| e.ci_high[j] - e.ci_low[j]).collect();
        Self {
            coefficient: j,
            truth,
            mean,
            mean_bias: mean - truth,
            emp_sd,
            mean_se: ok.iter().map(|e| e.se[j]).sum::<f64>() / m,
            coverage: covered as f64 / m,
            median_width: median(&widths),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub name: String,
    pub successes: usize,
    pub failures: usize,
    pub coefficients: Vec<CoefStats>,
    /// Per-replicate point estimates; `None` where the fit failed.
    pub estimates: Vec<Option<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub scenario: ScenarioConfig,
    pub replicates: usize,
    pub level: f64,
    pub truth: Vec<f64>,
    pub estimators: Vec<EstimatorReport>,
}

/// Format with `digits` significant digits, trailing zeros removed.
pub fn fmt_sig(v: f64, digits: usize) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    let s = if !(-5..15).contains(&exp) {
        format!("{:.*e}", digits.saturating_sub(1), v)
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        format!("{v:.decimals$}")
    };
    trim_zeros(&s)
}

fn trim_zeros(s: &str) -> String {
    let (mantissa, exp) = match s.find('e') {
        Some(i) => (&s[..i], &s[i..]),
        None => (s, ""),
    };
    let mantissa = if mantissa.contains('.') {
        mantissa.trim_end_matches('0').trim_end_matches('.')
    } else {
        mantissa
    };
    format!("{mantissa}{exp}")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| fmt_sig(x, 6)).unwrap_or_else(|| "NA".into())
}

pub const TSV_HEADER: &str =
    "estimator\tcoefficient\ttruth\tmean\tmean_bias\temp_sd\tmean_se\tcoverage\tmedian_width\tsuccesses\tfailures";

impl McReport {
    pub fn estimator(&self, name: &str) -> Option<&EstimatorReport> {
        self.estimators.iter().find(|e| e.name == name)
    }

    /// One row per estimator × coefficient, 6 significant digits.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(TSV_HEADER);
        out.push('\n');
        for est in &self.estimators {
            for c in &est.coefficients {
                let row = [
                    est.name.clone(),
                    format!("b{}", c.coefficient + 1),
                    fmt_sig(c.truth, 6),
                    fmt_sig(c.mean, 6),
                    fmt_sig(c.mean_bias, 6),
                    opt(c.emp_sd),
                    fmt_sig(c.mean_se, 6),
                    fmt_sig(c.coverage, 6),
                    fmt_sig(c.median_width, 6),
                    est.successes.to_string(),
                    est.failures.to_string(),
                ];
                out.push_str(&row.join("\t"));
                out.push('\n');
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    /// Per-replicate estimates, one row per replicate, `NA` for failed fits.
    pub fn estimates_tsv(&self) -> String {
        let mut header = vec!["replicate".to_string()];
        for est in &self.estimators {
            for j in 0..self.truth.len() {
                header.push(format!("{}_b{}", est.name, j + 1));
            }
        }
        let mut out = header.join("\t");
        out.push('\n');
        for i in 0..self.replicates {
            let mut row = vec![i.to_string()];
            for est in &self.estimators {
                match &est.estimates[i] {
                    Some(b) => row.extend(b.iter().map(|v| v.to_string())),
                    None => row.extend(std::iter::repeat_n("NA".to_string(), self.truth.len())),
                }
            }
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out
    }

    /// Coverage and median interval width per coefficient, one row per estimator.
    pub fn summary_table(&self) -> String {
        let p = self.truth.len();
        let mut header = vec!["estimator".to_string()];
        header.extend((1..=p).map(|j| format!("coverage_b{j}")));
        header.extend((1..=p).map(|j| format!("width_b{j}")));
        header.extend((1..=p).map(|j| format!("mean_b{j}")));
        header.extend((1..=p).map(|j| format!("sd_b{j}")));
        let mut out = header.join("\t");
        out.push('\n');
        for est in &self.estimators {
            let mut row = vec![est.name.clone()];
            row.extend(est.coefficients.iter().map(|c| format!("{:.2}", c.coverage)));
            row.extend(est.coefficients.iter().map(|c| format!("{:.2}", c.median_width)));
            row.extend(est.coefficients.iter().map(|c| format!("{:.3}", c.mean)));
            row.extend(est.coefficients.iter().map(|c| c.emp_sd.map_or("NA".into(), |s| format!("{s:.3}"))));
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out
    }
}
