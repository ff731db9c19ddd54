//! Linear GMM: weighted solves, two-step optimal weighting, sandwich
//! variance and Wald inference.
//!
//! Conventions: `vcov` is the asymptotic covariance of `√n (β̂ - β₀)`, so
//! per-sample standard errors are `sqrt(diag(vcov) / n)`. Inference uses the
//! standard normal reference distribution.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, RANK_TOL};
use crate::moments::{instrument_block, jacobian_from_block, MomentSpec};

/// A symmetric positive definite GMM weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix(DMatrix<f64>);

impl WeightMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::Weight(format!("weight must be square, got {:?}", m.shape())));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Weight("weight has non-finite entries".into()));
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-10 * scale {
            return Err(Error::Weight(format!("weight is not symmetric (max asymmetry {asym:.3e})")));
        }
        let mut sym = m;
        linalg::symmetrize(&mut sym);
        let eig = SymmetricEigen::new(sym.clone()).eigenvalues;
        let (min, max) = (eig.min(), eig.max());
        if max <= 0.0 || min <= RANK_TOL * max {
            return Err(Error::Weight(format!(
                "weight is not positive definite (eigenvalue range [{min:.3e}, {max:.3e}])"
            )));
        }
        Ok(Self(sym))
    }

    pub fn identity(k: usize) -> Self {
        Self(DMatrix::identity(k, k))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// Condition number (ratio of extreme eigenvalues).
    pub fn condition(&self) -> f64 {
        let e = SymmetricEigen::new(self.0.clone()).eigenvalues;
        e.max() / e.min()
    }
}

/// How the weight is chosen for over-identified fits.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Weighting {
    /// Pilot fit with `((1/n) GᵀG)⁻¹`, then the residual-based optimal weight.
    #[default]
    TwoStep,
    /// `((1/n) GᵀG)⁻¹`; for the IV family this is two-stage least squares.
    Tsls,
    Identity,
    Fixed(WeightMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub weighting: Weighting,
    /// Confidence level of the reported intervals.
    pub level: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            weighting: Weighting::TwoStep,
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Identification {
    JustIdentified,
    OverIdentified,
}

impl Identification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Identification::JustIdentified => "just-identified",
            Identification::OverIdentified => "over-identified",
        }
    }
}

/// Weight used for the final solve.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightUsed {
    /// k = p: the estimate does not depend on the weight.
    JustIdentified,
    Matrix(WeightMatrix),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    /// Condition number of the final (weighted) solve.
    pub solve_condition: f64,
    /// Condition number of `(1/n) GᵀX`.
    pub jacobian_condition: f64,
    pub weight_condition: Option<f64>,
    /// Ridges added to near-singular matrices, by name.
    pub ridges: Vec<(String, f64)>,
    pub two_step: bool,
    /// Coefficients whose standard error is zero.
    pub degenerate_ci: Vec<usize>,
    /// `√n` times the smallest singular value of the Jacobian after scaling
    /// each moment and exposure column to unit second moment. Behaves like
    /// a first-stage z statistic; near zero when instruments carry no
    /// information about the exposures.
    pub identification_strength: f64,
    /// `identification_strength` below [`WEAK_IDENTIFICATION`].
    pub weak_identification: bool,
}

/// Threshold on [`Diagnostics::identification_strength`] for flagging weak identification.
pub const WEAK_IDENTIFICATION: f64 = 2.0;

/// See [`Diagnostics::identification_strength`].
pub fn identification_strength(g: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    let n = g.nrows() as f64;
    let rms = |m: &DMatrix<f64>| -> Vec<f64> { m.column_iter().map(|c| (c.norm_squared() / n).sqrt()).collect() };
    let (sg, sx) = (rms(g), rms(x));
    let mut m = jacobian_from_block(g, x);
    for a in 0..m.nrows() {
        for b in 0..m.ncols() {
            let scale = sg[a] * sx[b];
            m[(a, b)] = if scale > 0.0 { m[(a, b)] / scale } else { 0.0 };
        }
    }
    let smallest = linalg::singular_values(&m).get(x.ncols() - 1).copied().unwrap_or(0.0);
    n.sqrt() * smallest
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub beta_hat: DVector<f64>,
    pub spec: MomentSpec,
    pub weight: WeightUsed,
    pub vcov: DMatrix<f64>,
    pub se: DVector<f64>,
    pub level: f64,
    pub ci_low: DVector<f64>,
    pub ci_high: DVector<f64>,
    pub p_values: DVector<f64>,
    pub identification: Identification,
    pub n: usize,
    pub diagnostics: Diagnostics,
}

/// Minimizer of `m̂(β)ᵀ W m̂(β)` with `m̂(β) = (1/n) Gᵀ(Y - Xβ)`.
pub fn solve_weighted(
    g: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &WeightMatrix,
) -> Result<DVector<f64>> {
    solve_weighted_cond(g, x, y, w).map(|(b, _)| b)
}

fn solve_weighted_cond(
    g: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &WeightMatrix,
) -> Result<(DVector<f64>, f64)> {
    if w.dim() != g.ncols() {
        return Err(Error::Weight(format!(
            "weight is {}×{} but there are {} moments",
            w.dim(),
            w.dim(),
            g.ncols()
        )));
    }
    let n = g.nrows() as f64;
    let a = g.tr_mul(x) / n;
    let c = g.tr_mul(y) / n;
    let (rank, _) = linalg::rank_and_condition(&a);
    if rank < x.ncols() {
        return Err(Error::identification(
            "weighted solve",
            format!(
                "GᵀX has column rank {rank} < p = {}; {} dimension(s) not identified",
                x.ncols(),
                x.ncols() - rank
            ),
        ));
    }
    // ‖m̂‖²_W = ‖Lᵀ(c - Aβ)‖² with W = L Lᵀ
    let chol = w
        .matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Weight("weight is not positive definite".into()))?;
    let lt = chol.l().transpose();
    linalg::solve_vec(&(&lt * &a), &(&lt * &c), "weighted solve")
}

/// `(GᵀX)⁻¹ GᵀY` for a square system.
pub fn solve_just_identified(g: &DMatrix<f64>, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    solve_just_identified_cond(g, x, y).map(|(b, _)| b)
}

fn solve_just_identified_cond(
    g: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, f64)> {
    if g.ncols() != x.ncols() {
        return Err(Error::identification(
            "just-identified solve",
            format!("{} moments for {} parameters", g.ncols(), x.ncols()),
        ));
    }
    let a = g.tr_mul(x);
    let c = g.tr_mul(y);
    linalg::solve_vec(&a, &c, "just-identified solve")
}

/// Two-stage least squares weight `((1/n) EᵀE)⁻¹`.
pub fn tsls_weight(e: &DMatrix<f64>) -> Result<WeightMatrix> {
    let n = e.nrows() as f64;
    let gram = e.tr_mul(e) / n;
    let (inv, _) = linalg::spd_inverse_strict(&gram, "(1/n) EᵀE")?;
    WeightMatrix::new(inv)
}

/// Residual-based optimal weight `((1/n) Gᵀ diag(δ̂²) G)⁻¹` at a pilot estimate.
pub fn two_step_weight(
    g: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta_pilot: &DVector<f64>,
) -> Result<WeightMatrix> {
    two_step_weight_ridged(g, x, y, beta_pilot).map(|(w, _)| w)
}

fn two_step_weight_ridged(
    g: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta_pilot: &DVector<f64>,
) -> Result<(WeightMatrix, Option<f64>)> {
    if beta_pilot.iter().any(|b| !b.is_finite()) {
        return Err(Error::InvalidInput("pilot estimate is not finite".into()));
    }
    let resid = y - x * beta_pilot;
    if resid.iter().all(|r| *r == 0.0) {
        return Err(Error::DegenerateWeight(
            "all pilot residuals are zero (noiseless data); the residual-based weight does not exist".into(),
        ));
    }
    let v = moment_covariance(g, &resid);
    let inv = linalg::spd_inverse_ridged(&v, "(1/n) Gᵀ Σ̂ G")?;
    Ok((WeightMatrix::new(inv.inverse)?, inv.ridge))
}

/// `(1/n) Σ δ_i² g_i g_iᵀ`.
fn moment_covariance(g: &DMatrix<f64>, resid: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = g.clone();
    for (mut row, r) in scaled.row_iter_mut().zip(resid.iter()) {
        row *= *r;
    }
    let mut v = scaled.tr_mul(&scaled) / g.nrows() as f64;
    linalg::symmetrize(&mut v);
    v
}

/// Sandwich covariance `(MᵀWM)⁻¹ MᵀWVWM (MᵀWM)⁻¹` of `√n (β̂ - β₀)`.
///
/// `w_used = None` stands for a just-identified fit, where any weight gives
/// the same value; the identity is used.
pub fn asymptotic_variance(
    g: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta_hat: &DVector<f64>,
    w_used: Option<&WeightMatrix>,
) -> Result<DMatrix<f64>> {
    let k = g.ncols();
    let identity;
    let w = match w_used {
        Some(w) => w.matrix(),
        None => {
            identity = DMatrix::identity(k, k);
            &identity
        }
    };
    if w.nrows() != k {
        return Err(Error::Inference(format!("weight dimension {} != {k} moments", w.nrows())));
    }
    let m = jacobian_from_block(g, x);
    let resid = y - x * beta_hat;
    let v = moment_covariance(g, &resid);
    let mtw = m.tr_mul(w);
    let bread = &mtw * &m;
    let h = linalg::solve_full_rank(&bread, &mtw, "sandwich")
        .map_err(|e| Error::Inference(format!("MᵀWM is singular: {e}")))?
        .0;
    let mut sigma = &h * v * h.transpose();
    linalg::symmetrize(&mut sigma);
    Ok(sigma)
}

/// Efficient-weight covariance `(Mᵀ V̂⁻¹ M)⁻¹`, with `V̂` at `beta_hat`.
pub fn efficient_variance(
    g: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta_hat: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let m = jacobian_from_block(g, x);
    let resid = y - x * beta_hat;
    let v = moment_covariance(g, &resid);
    let vinv = linalg::spd_inverse_ridged(&v, "V̂")?.inverse;
    let info = m.tr_mul(&vinv) * &m;
    let p = info.nrows();
    let mut sigma = linalg::solve_full_rank(&info, &DMatrix::identity(p, p), "efficient variance")
        .map_err(|e| Error::Inference(e.to_string()))?
        .0;
    linalg::symmetrize(&mut sigma);
    Ok(sigma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaldInference {
    pub se: DVector<f64>,
    pub ci_low: DVector<f64>,
    pub ci_high: DVector<f64>,
    pub p_values: DVector<f64>,
    /// Coefficients with zero standard error.
    pub degenerate: Vec<usize>,
}

/// Two-sided standard normal quantile for a confidence level.
pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("confidence level {level} not in (0, 1)")));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(1.0 - (1.0 - level) / 2.0))
}

pub fn wald_inference(fit: &GmmFit, level: f64) -> Result<WaldInference> {
    wald_from_parts(&fit.beta_hat, &fit.vcov, fit.n, level)
}

pub(crate) fn wald_from_parts(beta: &DVector<f64>, vcov: &DMatrix<f64>, n: usize, level: f64) -> Result<WaldInference> {
    let z = normal_quantile(level)?;
    let p = beta.len();
    let se = DVector::from_iterator(p, (0..p).map(|j| (vcov[(j, j)].max(0.0) / n as f64).sqrt()));
    let ci_low = DVector::from_iterator(p, (0..p).map(|j| beta[j] - z * se[j]));
    let ci_high = DVector::from_iterator(p, (0..p).map(|j| beta[j] + z * se[j]));
    let mut degenerate = Vec::new();
    let p_values = DVector::from_iterator(
        p,
        (0..p).map(|j| {
            if se[j] > 0.0 {
                erfc((beta[j] / se[j]).abs() / std::f64::consts::SQRT_2)
            } else {
                degenerate.push(j);
                if beta[j] == 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }),
    );
    Ok(WaldInference {
        se,
        ci_low,
        ci_high,
        p_values,
        degenerate,
    })
}

/// Fit a GMM estimator of family `spec` on `data`.
///
/// Just-identified problems are solved directly. Over-identified problems
/// use the weighting in `options`; the default two-step procedure starts
/// from the pilot weight `((1/n) GᵀG)⁻¹`.
pub fn fit(spec: &MomentSpec, data: &Dataset, options: &FitOptions) -> Result<GmmFit> {
    normal_quantile(options.level)?;
    let g = instrument_block(spec, data);
    fit_with_block(*spec, &g, data.x(), data.y(), options)
}

pub(crate) fn fit_with_block(
    spec: MomentSpec,
    g: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    options: &FitOptions,
) -> Result<GmmFit> {
    let (n, p, k) = (x.nrows(), x.ncols(), g.ncols());
    if k < p {
        return Err(Error::identification(
            spec.name(),
            format!("under-identified: {k} moment conditions for {p} parameters"),
        ));
    }
    let strength = identification_strength(g, x);
    let mut diagnostics = Diagnostics {
        jacobian_condition: linalg::rank_and_condition(&jacobian_from_block(g, x)).1,
        identification_strength: strength,
        weak_identification: strength < WEAK_IDENTIFICATION,
        ..Default::default()
    };
    let (beta_hat, weight, identification) = if k == p {
        let (b, cond) = solve_just_identified_cond(g, x, y).map_err(|e| e.at_stage(spec.name()))?;
        diagnostics.solve_condition = cond;
        (b, WeightUsed::JustIdentified, Identification::JustIdentified)
    } else {
        let w = match &options.weighting {
            Weighting::Identity => WeightMatrix::identity(k),
            Weighting::Fixed(w) => w.clone(),
            Weighting::Tsls => {
                let gram = g.tr_mul(g) / n as f64;
                let (inv, _) = linalg::spd_inverse_strict(&gram, "(1/n) GᵀG").map_err(|e| e.at_stage("tsls weight"))?;
                WeightMatrix::new(inv)?
            }
            Weighting::TwoStep => {
                let gram = g.tr_mul(g) / n as f64;
                let pilot_w = linalg::spd_inverse_ridged(&gram, "(1/n) GᵀG").map_err(|e| e.at_stage("pilot weight"))?;
                if let Some(r) = pilot_w.ridge {
                    diagnostics.ridges.push(("pilot weight".into(), r));
                }
                let pilot_w = WeightMatrix::new(pilot_w.inverse).map_err(|e| e.at_stage("pilot weight"))?;
                let (pilot, _) = solve_weighted_cond(g, x, y, &pilot_w).map_err(|e| e.at_stage("pilot fit"))?;
                let (w, ridge) = two_step_weight_ridged(g, x, y, &pilot).map_err(|e| e.at_stage("two-step weight"))?;
                if let Some(r) = ridge {
                    diagnostics.ridges.push(("two-step weight".into(), r));
                }
                diagnostics.two_step = true;
                w
            }
        };
        let (b, cond) = solve_weighted_cond(g, x, y, &w).map_err(|e| e.at_stage("final fit"))?;
        diagnostics.solve_condition = cond;
        diagnostics.weight_condition = Some(w.condition());
        (b, WeightUsed::Matrix(w), Identification::OverIdentified)
    };
    let w_ref = match &weight {
        WeightUsed::Matrix(w) => Some(w),
        WeightUsed::JustIdentified => None,
    };
    let vcov = asymptotic_variance(g, x, y, &beta_hat, w_ref).map_err(|e| e.at_stage("variance"))?;
    let wald = wald_from_parts(&beta_hat, &vcov, n, options.level)?;
    diagnostics.degenerate_ci = wald.degenerate.clone();
    Ok(GmmFit {
        beta_hat,
        spec,
        weight,
        vcov,
        se: wald.se,
        level: options.level,
        ci_low: wald.ci_low,
        ci_high: wald.ci_high,
        p_values: wald.p_values,
        identification,
        n,
        diagnostics,
    })
}
