//! Instrument blocks and linear sample moments for each estimator family.
//!
//! Every family shares the moment function `g_i(β) = G_i (Y_i - X_i^T β)`
//! and differs only in the instrument block `G`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{rowwise_kronecker, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MomentFamily {
    /// `G = E`.
    Iv,
    /// `G = E • X`.
    Gcd,
    /// IV and GCD blocks stacked.
    Hybrid,
    /// `G = X`.
    Ols,
}

/// First block of the hybrid moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HybridFirstBlock {
    /// `[E | E • X]`: IV moments stacked on GCD moments.
    #[default]
    Instruments,
    /// `[X | E • X]`: the exposure block printed in some formulations.
    /// Not valid under hidden confounding; kept for comparison only.
    Exposures,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MomentSpec {
    pub family: MomentFamily,
    #[serde(default)]
    pub hybrid_first_block: HybridFirstBlock,
}

impl MomentSpec {
    pub const fn new(family: MomentFamily) -> Self {
        Self {
            family,
            hybrid_first_block: HybridFirstBlock::Instruments,
        }
    }

    pub const fn iv() -> Self {
        Self::new(MomentFamily::Iv)
    }

    pub const fn gcd() -> Self {
        Self::new(MomentFamily::Gcd)
    }

    pub const fn hybrid() -> Self {
        Self::new(MomentFamily::Hybrid)
    }

    pub const fn ols() -> Self {
        Self::new(MomentFamily::Ols)
    }

    pub const fn hybrid_literal() -> Self {
        Self {
            family: MomentFamily::Hybrid,
            hybrid_first_block: HybridFirstBlock::Exposures,
        }
    }

    /// Number of moment conditions `k` for `p` exposures and `q` instruments.
    pub fn moment_count(&self, p: usize, q: usize) -> usize {
        match self.family {
            MomentFamily::Iv => q,
            MomentFamily::Gcd => p * q,
            MomentFamily::Hybrid => match self.hybrid_first_block {
                HybridFirstBlock::Instruments => q + p * q,
                HybridFirstBlock::Exposures => p + p * q,
            },
            MomentFamily::Ols => p,
        }
    }

    pub fn name(&self) -> &'static str {
        match (self.family, self.hybrid_first_block) {
            (MomentFamily::Iv, _) => "iv",
            (MomentFamily::Gcd, _) => "gcd",
            (MomentFamily::Hybrid, HybridFirstBlock::Instruments) => "hybrid",
            (MomentFamily::Hybrid, HybridFirstBlock::Exposures) => "hybrid-literal",
            (MomentFamily::Ols, _) => "ols",
        }
    }
}

/// The n×k instrument block `G` for `spec`.
///
/// Hybrid columns are ordered with the first block before the GCD block.
pub fn instrument_block(spec: &MomentSpec, data: &Dataset) -> DMatrix<f64> {
    let gcd = || rowwise_kronecker(data.e(), data.x()).expect("dataset rows agree");
    match spec.family {
        MomentFamily::Iv => data.e().clone(),
        MomentFamily::Gcd => gcd(),
        MomentFamily::Ols => data.x().clone(),
        MomentFamily::Hybrid => {
            let first = match spec.hybrid_first_block {
                HybridFirstBlock::Instruments => data.e(),
                HybridFirstBlock::Exposures => data.x(),
            };
            let second = gcd();
            let n = data.n();
            let mut g = DMatrix::zeros(n, first.ncols() + second.ncols());
            g.columns_mut(0, first.ncols()).copy_from(first);
            g.columns_mut(first.ncols(), second.ncols()).copy_from(&second);
            g
        }
    }
}

/// `(1/n) G^T (Y - X β)` for a precomputed block.
pub fn moment_from_block(g: &DMatrix<f64>, x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>) -> DVector<f64> {
    let resid = y - x * beta;
    g.tr_mul(&resid) / g.nrows() as f64
}

pub fn sample_moment(spec: &MomentSpec, data: &Dataset, beta: &DVector<f64>) -> Result<DVector<f64>> {
    if beta.len() != data.p() {
        return Err(Error::InvalidInput(format!(
            "beta has length {} but there are {} exposures",
            beta.len(),
            data.p()
        )));
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::InvalidInput("beta must be finite".into()));
    }
    let g = instrument_block(spec, data);
    Ok(moment_from_block(&g, data.x(), data.y(), beta))
}

/// `(1/n) G^T X`.
///
/// The derivative of [`sample_moment`] in β is the negation of this matrix.
/// Sign conventions cancel in every solve and sandwich expression.
pub fn moment_jacobian(spec: &MomentSpec, data: &Dataset) -> DMatrix<f64> {
    let g = instrument_block(spec, data);
    jacobian_from_block(&g, data.x())
}

pub fn jacobian_from_block(g: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    g.tr_mul(x) / g.nrows() as f64
}
