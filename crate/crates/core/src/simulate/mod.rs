//! Structural equation model scenarios and Monte Carlo studies.

mod generators;
mod monte_carlo;
mod report;
mod scenario;

pub use generators::{
    discretize_env, gen_do_intervention, gen_mean_shift, gen_mean_var_shift, gen_noise_shift, gen_overid_sem,
    generate, generate_with, replicate_rng, DiscretizeRule,
};
pub use monte_carlo::{
    default_estimators, default_replicates, run_monte_carlo, run_monte_carlo_with, Estimate, Estimator, Execution,
    MAX_FAILURE_RATE,
};
pub use report::{fmt_sig, CoefStats, EstimatorReport, McReport, TSV_HEADER};
pub use scenario::{EDist, Model, ScenarioConfig, ScenarioFile, SCENARIO_NAMES};
