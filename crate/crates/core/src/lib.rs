//! Causal effect estimation with instruments and environments.
//!
//! Instrumental variables, the Causal Dantzig, the Generalized Causal
//! Dantzig (GCD) and hybrid IV+GCD estimators are all linear GMM estimators
//! `argmin_β m̂(β)ᵀ W m̂(β)` with `m̂(β) = (1/n) Gᵀ(Y - Xβ)`; they differ only
//! in the instrument block `G`:
//!
//! | family   | `G`            |
//! |----------|----------------|
//! | IV       | `E`            |
//! | GCD      | `E • X`        |
//! | hybrid   | `[E, E • X]`   |
//! | OLS      | `X`            |
//!
//! where `•` is the row-wise Kronecker product. The [`simulate`] module
//! generates data from structural equation models and runs Monte Carlo
//! coverage studies; replicates run on rayon when the `parallel` feature is
//! enabled (the default).

pub mod cd_classic;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod gmm;
pub mod linalg;
pub mod moments;
pub mod simulate;

pub use cd_classic::{causal_dantzig_two_env, cd_fit, cd_one_vs_rest, cd_two_env, CdFit, CdMode};
pub use dataset::{
    center_columns, encode_environments, load_csv, read_csv, rowwise_kronecker, ColumnRoles, Dataset,
    EnvironmentLabels, InstrumentColumns,
};
pub use error::{Error, ParseError, Result};
pub use gmm::{
    asymptotic_variance, efficient_variance, fit, solve_just_identified, solve_weighted, tsls_weight,
    two_step_weight, wald_inference, FitOptions, GmmFit, Identification, WeightMatrix, Weighting,
};
pub use moments::{instrument_block, moment_jacobian, sample_moment, HybridFirstBlock, MomentFamily, MomentSpec};
