use serde::{Deserialize, Serialize};

use super::AnfisError;

/// Which denominator the Gaussian exponent uses.
///
/// `TwoSigma` evaluates `exp(-(x-c)^2 / (2σ)^2)`; `Standard` evaluates the
/// textbook `exp(-(x-c)^2 / (2σ^2))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaussianForm {
    #[default]
    TwoSigma,
    Standard,
}

impl GaussianForm {
    /// `k` in the exponent denominator `k·σ²`.
    #[inline]
    fn denom_factor(self) -> f64 {
        match self {
            GaussianForm::TwoSigma => 4.0,
            GaussianForm::Standard => 2.0,
        }
    }
}

/// Gaussian membership function `a·exp(-(x-c)² / (kσ²))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianMf {
    pub amplitude: f64,
    pub center: f64,
    pub sigma: f64,
}

/// Partial derivatives of a membership degree with respect to `(a, c, σ)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MfPartials {
    pub amplitude: f64,
    pub center: f64,
    pub sigma: f64,
}

impl GaussianMf {
    pub fn new(amplitude: f64, center: f64, sigma: f64) -> Result<Self, AnfisError> {
        let mf = Self {
            amplitude,
            center,
            sigma,
        };
        mf.validate()?;
        Ok(mf)
    }

    pub fn validate(&self) -> Result<(), AnfisError> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(AnfisError::InvalidParameter(format!(
                "membership width must be positive and finite, got {}",
                self.sigma
            )));
        }
        if !self.amplitude.is_finite() || !self.center.is_finite() {
            return Err(AnfisError::InvalidParameter(
                "membership amplitude and center must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Membership degree of `x`.
    pub fn eval(&self, x: f64, form: GaussianForm) -> Result<f64, AnfisError> {
        if !x.is_finite() {
            return Err(AnfisError::NonFiniteInput);
        }
        Ok(self.degree(x, form))
    }

    /// Unchecked evaluation for the hot path; callers validate inputs once.
    #[inline]
    pub(crate) fn degree(&self, x: f64, form: GaussianForm) -> f64 {
        let d = x - self.center;
        let denom = form.denom_factor() * self.sigma * self.sigma;
        self.amplitude * (-(d * d) / denom).exp()
    }

    /// Degree together with its partial derivatives.
    #[inline]
    pub(crate) fn degree_with_partials(&self, x: f64, form: GaussianForm) -> (f64, MfPartials) {
        let k = form.denom_factor();
        let d = x - self.center;
        let s = self.sigma;
        let denom = k * s * s;
        let shape = (-(d * d) / denom).exp();
        let mu = self.amplitude * shape;
        let partials = MfPartials {
            amplitude: shape,
            center: mu * 2.0 * d / denom,
            sigma: mu * 2.0 * d * d / (k * s * s * s),
        };
        (mu, partials)
    }
}
