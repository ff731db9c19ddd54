//! Data generators for each structural equation model.
//!
//! Instruments are drawn raw, enter the structural equations raw, and are
//! returned sample-centered in the dataset.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::scenario::{EDist, Model, ScenarioConfig};
use crate::dataset::{Dataset, EnvironmentLabels};
use crate::error::{Error, Result};

/// Independent stream for replicate `index` of a run seeded with `seed`.
///
/// Streams depend only on `(seed, index)`, so replicates can be generated
/// in any order or concurrently.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn draw_e<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> f64 {
    match cfg.e_dist {
        EDist::Uniform01 => rng.random::<f64>(),
        EDist::Bernoulli => f64::from(u8::from(rng.random_bool(cfg.e_prob))),
        EDist::TwoPoint => {
            if rng.random_bool(cfg.e_prob) {
                cfg.e_high
            } else {
                cfg.e_low
            }
        }
    }
}

/// Univariate `X = f(h) + R·E + scale(E)·ε_X`, `Y = g(h) + β·X + ε_Y`.
fn univariate<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    rng: &mut R,
    shift: f64,
    noise_scale: impl Fn(f64) -> f64,
) -> Result<Dataset> {
    cfg.validate()?;
    let n = cfg.n;
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut e = Vec::with_capacity(n);
    for _ in 0..n {
        let ei = draw_e(cfg, rng);
        let h = normal(rng);
        let ex = normal(rng);
        let ey = normal(rng);
        let xi = cfg.f_slope * h + shift * ei + noise_scale(ei) * ex;
        x.push(xi);
        y.push(cfg.g_slope * h + cfg.beta * xi + ey);
        e.push(ei);
    }
    Dataset::from_instruments(
        DMatrix::from_column_slice(n, 1, &x),
        DVector::from_vec(y),
        DMatrix::from_column_slice(n, 1, &e),
    )
}

pub fn gen_mean_shift<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Dataset> {
    univariate(cfg, rng, cfg.r_shift, |_| 1.0)
}

pub fn gen_noise_shift<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Dataset> {
    univariate(cfg, rng, 0.0, |e| cfg.alpha_v * e + cfg.alpha_0)
}

pub fn gen_mean_var_shift<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Dataset> {
    univariate(cfg, rng, cfg.r_shift, |e| cfg.alpha_v * e + cfg.alpha_0)
}

/// Mixture of observational rows and rows with `X` forced to `x_do`.
///
/// Rows carry environment labels `intv` / `obs`; the instrument is the
/// centered indicator of `intv`.
pub fn gen_do_intervention<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Dataset> {
    cfg.validate()?;
    let n = cfg.n;
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let intervened = rng.random_bool(cfg.do_prob);
        let h = normal(rng);
        let ex = normal(rng);
        let ey = normal(rng);
        let xi = if intervened { cfg.x_do } else { cfg.f_slope * h + ex };
        x.push(xi);
        y.push(cfg.g_slope * h + cfg.beta * xi + ey);
        labels.push(if intervened { "intv" } else { "obs" });
    }
    Dataset::from_environments(
        DMatrix::from_column_slice(n, 1, &x),
        DVector::from_vec(y),
        EnvironmentLabels::new(labels)?,
    )
}

/// Over-identified SEM with hidden confounder `h`:
///
/// ```text
/// E1 ~ Bernoulli(1/2), E2 ~ U(0, 1)
/// X2 = h + (1 + 3 E1 + 5 E2) ε2
/// Y  = h + β X2 + εy
/// X1 = Y + X2 + (1 + 3 E1) ε1
/// X3 = h + X1 + (1 + 5 E2) ε3
/// ```
pub fn gen_overid_sem<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Dataset> {
    cfg.validate()?;
    let n = cfg.n;
    let mut x = DMatrix::zeros(n, 3);
    let mut y = DVector::zeros(n);
    let mut e = DMatrix::zeros(n, 2);
    for i in 0..n {
        let e1 = f64::from(u8::from(rng.random_bool(0.5)));
        let e2: f64 = rng.random();
        let h = normal(rng);
        let eps1 = normal(rng);
        let eps2 = normal(rng);
        let eps3 = normal(rng);
        let eps_y = normal(rng);
        let x2 = h + (1.0 + 3.0 * e1 + 5.0 * e2) * eps2;
        let yi = h + cfg.beta * x2 + eps_y;
        let x1 = yi + x2 + (1.0 + 3.0 * e1) * eps1;
        let x3 = h + x1 + (1.0 + 5.0 * e2) * eps3;
        x[(i, 0)] = x1;
        x[(i, 1)] = x2;
        x[(i, 2)] = x3;
        y[i] = yi;
        e[(i, 0)] = e1;
        e[(i, 1)] = e2;
    }
    Dataset::from_instruments(x, y, e)?.with_names(
        "y",
        vec!["x1".into(), "x2".into(), "x3".into()],
        vec!["e1".into(), "e2".into()],
    )
}

/// Draw one dataset for `cfg` from `rng`.
///
/// Applies `center_xy` when set.
pub fn generate_with<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Dataset> {
    let data = match cfg.model {
        Model::MeanShift => gen_mean_shift(cfg, rng),
        Model::NoiseShift => gen_noise_shift(cfg, rng),
        Model::MeanVarShift => gen_mean_var_shift(cfg, rng),
        Model::DoIntervention => gen_do_intervention(cfg, rng),
        Model::OveridSem => gen_overid_sem(cfg, rng),
    }?;
    Ok(if cfg.center_xy { data.center_xy() } else { data })
}

/// Draw one dataset from the stream seeded by `cfg.seed`.
pub fn generate(cfg: &ScenarioConfig) -> Result<Dataset> {
    generate_with(cfg, &mut replicate_rng(cfg.seed, 0))
}

/// How a continuous instrument is split into two environments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiscretizeRule {
    /// Label `1` strictly above the sample median, `0` otherwise.
    #[default]
    Median,
}

pub fn discretize_env(column: &[f64], rule: DiscretizeRule) -> Result<EnvironmentLabels> {
    if column.is_empty() {
        return Err(Error::InvalidInput("cannot discretize an empty column".into()));
    }
    let threshold = match rule {
        DiscretizeRule::Median => median(column),
    };
    EnvironmentLabels::new(column.iter().map(|&v| if v > threshold { "1" } else { "0" }))
        .map_err(|_| Error::InvalidInput("median split produced a single environment (constant column?)".into()))
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}
