use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Structural equation model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    /// `X = f(h) + R·E + ε_X`
    MeanShift,
    /// `X = f(h) + (α_v·E + α_0)·ε_X`
    NoiseShift,
    /// `X = f(h) + R·E + (α_v·E + α_0)·ε_X`
    MeanVarShift,
    /// `X = x` in the interventional environment, `f(h) + ε_X` otherwise.
    DoIntervention,
    /// Three exposures, two instruments, true effect `(0, β, 0)`.
    OveridSem,
}

/// Distribution of the raw (uncentered) instrument in the univariate models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EDist {
    Uniform01,
    /// `{0, 1}` with `P(1) = e_prob`.
    Bernoulli,
    /// `{e_low, e_high}` with `P(e_high) = e_prob`.
    TwoPoint,
}

/// A fully parameterized scenario. Confounder loadings are linear:
/// `f(h) = f_slope·h`, `g(h) = g_slope·h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub model: Model,
    pub n: usize,
    pub beta: f64,
    /// Mean-shift coefficient `R`.
    pub r_shift: f64,
    pub alpha_v: f64,
    pub alpha_0: f64,
    pub f_slope: f64,
    pub g_slope: f64,
    /// Intervention value `x`.
    pub x_do: f64,
    /// Probability of the interventional environment.
    pub do_prob: f64,
    pub e_dist: EDist,
    pub e_prob: f64,
    pub e_low: f64,
    pub e_high: f64,
    /// Center X and Y in each generated dataset before fitting.
    pub center_xy: bool,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            model: Model::MeanVarShift,
            n: 100,
            beta: 1.0,
            r_shift: 0.0,
            alpha_v: 0.0,
            alpha_0: 1.0,
            f_slope: 1.0,
            g_slope: 1.0,
            x_do: 3.0,
            do_prob: 0.5,
            e_dist: EDist::Uniform01,
            e_prob: 0.5,
            e_low: -1.0,
            e_high: 1.0,
            center_xy: false,
            seed: 0,
        }
    }
}

/// Names accepted by [`ScenarioConfig::named`].
pub const SCENARIO_NAMES: [&str; 5] = ["fig2", "table1", "model1", "model2", "do"];

impl ScenarioConfig {
    /// Continuous-environment noise shift: `f(h) = 9h`, `g(h) = 3h`,
    /// `(α_0, α_v) = (1, 10)`, `E ~ U[0, 1]`, `n = 100`.
    pub fn fig2() -> Self {
        Self {
            model: Model::NoiseShift,
            n: 100,
            f_slope: 9.0,
            g_slope: 3.0,
            alpha_0: 1.0,
            alpha_v: 10.0,
            ..Self::default()
        }
    }

    /// Over-identified SEM at `n = 200`.
    pub fn table1() -> Self {
        Self {
            model: Model::OveridSem,
            n: 200,
            ..Self::default()
        }
    }

    /// Strong mean shift, weak noise shift: `R = 5`, `α_v = 1`.
    ///
    /// X and Y are centered before fitting so the GCD block `E • X` carries
    /// only the variance shift.
    pub fn model1() -> Self {
        Self {
            model: Model::MeanVarShift,
            center_xy: true,
            n: 100,
            r_shift: 5.0,
            alpha_v: 1.0,
            alpha_0: 1.0,
            ..Self::default()
        }
    }

    /// Weak mean shift, strong noise shift: `R = 1`, `α_v = 5`.
    pub fn model2() -> Self {
        Self {
            r_shift: 1.0,
            alpha_v: 5.0,
            ..Self::model1()
        }
    }

    /// Observational plus hard-intervention data at `n = 500`, `x = 3`.
    pub fn do_intervention() -> Self {
        Self {
            model: Model::DoIntervention,
            n: 500,
            x_do: 3.0,
            do_prob: 0.5,
            ..Self::default()
        }
    }

    pub fn named(name: &str) -> Result<Self> {
        match name {
            "fig2" => Ok(Self::fig2()),
            "table1" => Ok(Self::table1()),
            "model1" => Ok(Self::model1()),
            "model2" => Ok(Self::model2()),
            "do" => Ok(Self::do_intervention()),
            other => Err(Error::InvalidInput(format!(
                "unknown scenario `{other}`; valid names: {}",
                SCENARIO_NAMES.join(", ")
            ))),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// True causal parameter vector.
    pub fn true_beta(&self) -> Vec<f64> {
        match self.model {
            Model::OveridSem => vec![0.0, self.beta, 0.0],
            _ => vec![self.beta],
        }
    }

    /// Smallest and largest value the raw instrument can take.
    pub fn e_range(&self) -> (f64, f64) {
        match self.e_dist {
            EDist::Uniform01 | EDist::Bernoulli => (0.0, 1.0),
            EDist::TwoPoint => (self.e_low.min(self.e_high), self.e_low.max(self.e_high)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.n < 2 {
            return bad(format!("n must be at least 2, got {}", self.n));
        }
        let params = [
            self.beta,
            self.r_shift,
            self.alpha_v,
            self.alpha_0,
            self.f_slope,
            self.g_slope,
            self.x_do,
            self.e_low,
            self.e_high,
        ];
        if params.iter().any(|v| !v.is_finite()) {
            return bad("scenario parameters must be finite".into());
        }
        if !(0.0..=1.0).contains(&self.e_prob) || !(0.0..=1.0).contains(&self.do_prob) {
            return bad("probabilities must lie in [0, 1]".into());
        }
        if matches!(self.model, Model::NoiseShift | Model::MeanVarShift) {
            let (lo, hi) = self.e_range();
            let min_scale = (self.alpha_v * lo + self.alpha_0).min(self.alpha_v * hi + self.alpha_0);
            if min_scale <= 0.0 {
                return bad(format!(
                    "noise scale α_v·E + α_0 must stay positive over the instrument range, minimum is {min_scale}"
                ));
            }
        }
        Ok(())
    }

    /// Parse a flat key-value (TOML) scenario description.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidInput(format!("scenario config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }
}

/// A scenario file: the scenario keys plus optional run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    #[serde(flatten)]
    pub scenario: ScenarioConfig,
    #[serde(default, alias = "N")]
    pub replicates: Option<usize>,
    #[serde(default)]
    pub estimators: Option<Vec<String>>,
    #[serde(default)]
    pub level: Option<f64>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        let f: Self = toml::from_str(text).map_err(|e| Error::InvalidInput(format!("scenario config: {e}")))?;
        f.scenario.validate()?;
        Ok(f)
    }
}
