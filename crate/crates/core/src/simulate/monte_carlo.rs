use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use super::generators::{discretize_env, generate_with, replicate_rng, DiscretizeRule};
use super::report::{CoefStats, EstimatorReport, McReport};
use super::scenario::ScenarioConfig;
use crate::cd_classic::{cd_fit, cd_two_env};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gmm::{fit, FitOptions, Weighting};
use crate::moments::MomentSpec;

/// Largest tolerated fraction of failed fits per estimator.
pub const MAX_FAILURE_RATE: f64 = 0.05;

/// An estimator that can be run on every replicate.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Estimator {
    /// Two-step GCD on all instruments.
    Gcd,
    /// GCD on a subset of instrument columns (0-based).
    GcdSubset(Vec<usize>),
    /// Two-step optimal IV.
    Iv,
    /// IV with the two-stage least squares weight.
    Tsls,
    Hybrid,
    Ols,
    /// Causal Dantzig on the dataset's environment labels.
    Cd,
    /// Causal Dantzig after a median split of the first instrument.
    CdMedianSplit,
}

impl Estimator {
    pub fn name(&self) -> String {
        match self {
            Estimator::Gcd => "gcd".into(),
            Estimator::GcdSubset(cols) => {
                let parts: Vec<String> = cols.iter().map(|c| format!("e{}", c + 1)).collect();
                format!("gcd_{}", parts.join("_"))
            }
            Estimator::Iv => "iv".into(),
            Estimator::Tsls => "tsls".into(),
            Estimator::Hybrid => "hybrid".into(),
            Estimator::Ols => "ols".into(),
            Estimator::Cd => "cd".into(),
            Estimator::CdMedianSplit => "cd_median".into(),
        }
    }

    /// Fit on one dataset.
    pub fn estimate(&self, data: &Dataset, level: f64) -> Result<Estimate> {
        let opts = |weighting| FitOptions { weighting, level };
        let gmm = |spec: MomentSpec, data: &Dataset, w: Weighting| {
            fit(&spec, data, &opts(w)).map(|f| Estimate {
                beta: f.beta_hat,
                se: f.se,
                ci_low: f.ci_low,
                ci_high: f.ci_high,
            })
        };
        let cd = |f: crate::cd_classic::CdFit| Estimate {
            beta: f.beta_hat,
            se: f.se,
            ci_low: f.ci_low,
            ci_high: f.ci_high,
        };
        match self {
            Estimator::Gcd => gmm(MomentSpec::gcd(), data, Weighting::TwoStep),
            Estimator::GcdSubset(cols) => gmm(MomentSpec::gcd(), &data.select_instruments(cols)?, Weighting::TwoStep),
            Estimator::Iv => gmm(MomentSpec::iv(), data, Weighting::TwoStep),
            Estimator::Tsls => gmm(MomentSpec::iv(), data, Weighting::Tsls),
            Estimator::Hybrid => gmm(MomentSpec::hybrid(), data, Weighting::TwoStep),
            Estimator::Ols => gmm(MomentSpec::ols(), data, Weighting::TwoStep),
            Estimator::Cd => cd_fit(data, level).map(cd),
            Estimator::CdMedianSplit => {
                let col: Vec<f64> = data.e().column(0).iter().copied().collect();
                let labels = discretize_env(&col, DiscretizeRule::Median)?;
                let split = Dataset::from_environments(data.x().clone(), data.y().clone(), labels)?;
                cd_two_env(&split, level).map(cd)
            }
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Ok(match s.as_str() {
            "gcd" => Estimator::Gcd,
            "iv" => Estimator::Iv,
            "tsls" => Estimator::Tsls,
            "hybrid" => Estimator::Hybrid,
            "ols" => Estimator::Ols,
            "cd" => Estimator::Cd,
            "cd_median" => Estimator::CdMedianSplit,
            other => {
                // gcd_e1, gcd_e1_e2, ...
                let cols = other
                    .strip_prefix("gcd_")
                    .and_then(|rest| {
                        rest.split('_')
                            .map(|t| {
                                t.strip_prefix('e')
                                    .and_then(|d| d.parse::<usize>().ok())
                                    .filter(|&d| d >= 1)
                                    .map(|d| d - 1)
                            })
                            .collect::<Option<Vec<_>>>()
                    })
                    .ok_or_else(|| {
                        Error::InvalidInput(format!(
                            "unknown estimator `{other}`; valid: gcd, gcd_e<k>[_e<k>...], iv, tsls, hybrid, ols, cd, cd_median"
                        ))
                    })?;
                Estimator::GcdSubset(cols)
            }
        })
    }
}

/// Point estimate and Wald interval from one fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub beta: DVector<f64>,
    pub se: DVector<f64>,
    pub ci_low: DVector<f64>,
    pub ci_high: DVector<f64>,
}

/// Default estimator set of each named scenario.
pub fn default_estimators(name: &str) -> Vec<Estimator> {
    match name {
        "fig2" => vec![Estimator::Gcd, Estimator::CdMedianSplit, Estimator::Ols],
        "table1" => vec![
            Estimator::Gcd,
            Estimator::GcdSubset(vec![0]),
            Estimator::GcdSubset(vec![1]),
            Estimator::Ols,
        ],
        "model1" | "model2" => vec![Estimator::Iv, Estimator::Gcd, Estimator::Hybrid],
        "do" => vec![Estimator::Iv, Estimator::Gcd],
        _ => vec![Estimator::Gcd, Estimator::Ols],
    }
}

/// Default replicate count of each named scenario.
pub fn default_replicates(name: &str) -> usize {
    match name {
        "table1" => 500,
        _ => 1000,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Serial,
    /// Replicates run on the rayon pool; identical to `Serial` without the
    /// `parallel` feature.
    #[default]
    Parallel,
}

type ReplicateResult = Vec<std::result::Result<Estimate, String>>;

fn run_replicate(config: &ScenarioConfig, estimators: &[Estimator], level: f64, index: usize) -> ReplicateResult {
    let mut rng = replicate_rng(config.seed, index as u64);
    match generate_with(config, &mut rng) {
        Ok(data) => estimators
            .iter()
            .map(|est| est.estimate(&data, level).map_err(|e| e.to_string()))
            .collect(),
        Err(e) => vec![Err(format!("data generation: {e}")); estimators.len()],
    }
}

/// Run `replicates` independent datasets through every estimator.
pub fn run_monte_carlo(
    config: &ScenarioConfig,
    estimators: &[Estimator],
    replicates: usize,
    level: f64,
) -> Result<McReport> {
    run_monte_carlo_with(config, estimators, replicates, level, Execution::default())
}

pub fn run_monte_carlo_with(
    config: &ScenarioConfig,
    estimators: &[Estimator],
    replicates: usize,
    level: f64,
    execution: Execution,
) -> Result<McReport> {
    if replicates == 0 {
        return Err(Error::InvalidInput("at least one replicate is required".into()));
    }
    if estimators.is_empty() {
        return Err(Error::InvalidInput("no estimators given".into()));
    }
    crate::gmm::normal_quantile(level)?;
    config.validate()?;

    let results: Vec<ReplicateResult> = match execution {
        #[cfg(feature = "parallel")]
        Execution::Parallel => (0..replicates)
            .into_par_iter()
            .map(|i| run_replicate(config, estimators, level, i))
            .collect(),
        _ => (0..replicates)
            .map(|i| run_replicate(config, estimators, level, i))
            .collect(),
    };

    let truth = config.true_beta();
    let mut reports = Vec::with_capacity(estimators.len());
    for (k, est) in estimators.iter().enumerate() {
        let outcomes: Vec<&std::result::Result<Estimate, String>> = results.iter().map(|r| &r[k]).collect();
        let failures = outcomes.iter().filter(|o| o.is_err()).count();
        if failures as f64 > MAX_FAILURE_RATE * replicates as f64 {
            let first = outcomes
                .iter()
                .find_map(|o| o.as_ref().err())
                .cloned()
                .unwrap_or_default();
            return Err(Error::Simulation(format!(
                "estimator `{est}` failed on {failures} of {replicates} replicates (first error: {first})"
            )));
        }
        let ok: Vec<&Estimate> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
        let p = ok.first().map(|e| e.beta.len()).unwrap_or(truth.len());
        if p != truth.len() {
            return Err(Error::Simulation(format!(
                "estimator `{est}` returned {p} coefficients, truth has {}",
                truth.len()
            )));
        }
        let coefficients = (0..p).map(|j| CoefStats::from_estimates(j, truth[j], &ok)).collect();
        let estimates = outcomes
            .iter()
            .map(|o| o.as_ref().ok().map(|e| e.beta.iter().copied().collect()))
            .collect();
        reports.push(EstimatorReport {
            name: est.name(),
            successes: ok.len(),
            failures,
            coefficients,
            estimates,
        });
    }
    Ok(McReport {
        scenario: config.clone(),
        replicates,
        level,
        truth,
        estimators: reports,
    })
}
