//! Five-layer Takagi–Sugeno ANFIS classifier.
//!
//! Layers: Gaussian membership → rule firing strength (product) →
//! normalization → affine rule consequents weighted by normalized strength →
//! summation. The summed output is passed through a logistic link for
//! probabilities; the classifier fires on `probability >= threshold`.
//!
//! Training is hybrid: consequents are solved in closed form by ridge least
//! squares, premise parameters `(a, c, σ)` take ADAM steps on binary
//! cross-entropy. See [`train`].

mod document;
mod membership;
pub mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::Scaler;

pub use document::{DocumentError, MODEL_DOCUMENT_VERSION};
pub use membership::{GaussianForm, GaussianMf};
pub use train::{
    adam_step, bce_loss, fit, premise_gradients, solve_consequents, AdamState, FoldReport,
    PremiseGradient, TrainConfig, TrainReport,
};

/// Strength sums below this are treated as "no rule fires".
pub const DEGENERATE_STRENGTH_SUM: f64 = 1e-300;

/// Default decision threshold on the logistic-linked output.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum AnfisError {
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("degenerate labels: training data must contain both classes")]
    DegenerateLabels,
    #[error("empty training data")]
    EmptyData,
    #[error("{0}")]
    SingularSystem(String),
    #[error(transparent)]
    Document(#[from] DocumentError),
}

/// Full grid partition: one rule per combination of membership indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleBase {
    n_inputs: usize,
    mfs_per_input: usize,
    rules: Vec<Vec<usize>>,
}

impl RuleBase {
    /// Builds the grid in lexicographic order, first input varying slowest.
    pub fn grid(n_inputs: usize, mfs_per_input: usize) -> Result<Self, AnfisError> {
        if n_inputs == 0 {
            return Err(AnfisError::InvalidParameter("n_inputs must be >= 1".into()));
        }
        if mfs_per_input == 0 {
            return Err(AnfisError::InvalidParameter(
                "mfs_per_input must be >= 1".into(),
            ));
        }
        let count = u32::try_from(n_inputs)
            .ok()
            .and_then(|n| mfs_per_input.checked_pow(n))
            .filter(|&c| c <= 1 << 20)
            .ok_or_else(|| {
                AnfisError::InvalidParameter(format!(
                    "rule grid {mfs_per_input}^{n_inputs} is too large"
                ))
            })?;
        let mut rules = Vec::with_capacity(count);
        let mut idx = vec![0usize; n_inputs];
        for _ in 0..count {
            rules.push(idx.clone());
            for pos in (0..n_inputs).rev() {
                idx[pos] += 1;
                if idx[pos] < mfs_per_input {
                    break;
                }
                idx[pos] = 0;
            }
        }
        Ok(Self {
            n_inputs,
            mfs_per_input,
            rules,
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn mfs_per_input(&self) -> usize {
        self.mfs_per_input
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn rules(&self) -> &[Vec<usize>] {
        &self.rules
    }
}

/// Affine consequent per rule: `n_inputs` weights followed by a bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsequentParams {
    n_inputs: usize,
    coefficients: Vec<Vec<f64>>,
}

impl ConsequentParams {
    pub fn zeros(n_rules: usize, n_inputs: usize) -> Self {
        Self {
            n_inputs,
            coefficients: vec![vec![0.0; n_inputs + 1]; n_rules],
        }
    }

    pub fn from_rows(n_inputs: usize, rows: Vec<Vec<f64>>) -> Result<Self, AnfisError> {
        for row in &rows {
            if row.len() != n_inputs + 1 {
                return Err(AnfisError::DimensionMismatch {
                    expected: n_inputs + 1,
                    got: row.len(),
                });
            }
        }
        Ok(Self {
            n_inputs,
            coefficients: rows,
        })
    }

    pub fn n_rules(&self) -> usize {
        self.coefficients.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn row(&self, rule: usize) -> &[f64] {
        &self.coefficients[rule]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.coefficients
    }

    /// Flattened rule-major view, `n_rules * (n_inputs + 1)` values.
    pub fn flat(&self) -> Vec<f64> {
        self.coefficients.iter().flatten().copied().collect()
    }

    pub(crate) fn from_flat(n_rules: usize, n_inputs: usize, flat: &[f64]) -> Self {
        let width = n_inputs + 1;
        debug_assert_eq!(flat.len(), n_rules * width);
        Self {
            n_inputs,
            coefficients: flat.chunks(width).map(<[f64]>::to_vec).collect(),
        }
    }
}

/// Per-rule affine outputs `f_i = p_i·x + r_i`.
pub fn rule_outputs(consequents: &ConsequentParams, x: &[f64]) -> Result<Vec<f64>, AnfisError> {
    if x.len() != consequents.n_inputs {
        return Err(AnfisError::DimensionMismatch {
            expected: consequents.n_inputs,
            got: x.len(),
        });
    }
    Ok(consequents
        .coefficients
        .iter()
        .map(|row| affine(row, x))
        .collect())
}

#[inline]
pub(crate) fn affine(row: &[f64], x: &[f64]) -> f64 {
    let (weights, bias) = row.split_at(x.len());
    weights.iter().zip(x).map(|(p, v)| p * v).sum::<f64>() + bias[0]
}

/// Normalized firing strengths. Falls back to uniform weights when the sum
/// underflows [`DEGENERATE_STRENGTH_SUM`].
pub fn normalize_strengths(w: &[f64]) -> Vec<f64> {
    let sum: f64 = w.iter().sum();
    if sum < DEGENERATE_STRENGTH_SUM {
        let n = w.len().max(1) as f64;
        return vec![1.0 / n; w.len()];
    }
    w.iter().map(|wi| wi / sum).collect()
}

#[inline]
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Output of [`AnfisModel::classify`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub probability: f64,
    pub label: u8,
}

/// A trained (or freshly initialized) ANFIS classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct AnfisModel {
    pub(crate) feature_names: Vec<String>,
    pub(crate) form: GaussianForm,
    pub(crate) memberships: Vec<Vec<GaussianMf>>,
    pub(crate) rules: RuleBase,
    pub(crate) consequents: ConsequentParams,
    pub(crate) threshold: f64,
    pub(crate) scaler: Option<Scaler>,
}

impl AnfisModel {
    /// Evenly spaced centers over each `(min, max)` range, `σ = spacing / 2`,
    /// unit amplitude, zero consequents.
    pub fn init_grid(
        n_inputs: usize,
        mfs_per_input: usize,
        ranges: &[(f64, f64)],
    ) -> Result<Self, AnfisError> {
        if n_inputs == 0 {
            return Err(AnfisError::InvalidParameter("n_inputs must be >= 1".into()));
        }
        if mfs_per_input < 2 {
            return Err(AnfisError::InvalidParameter(
                "mfs_per_input must be >= 2".into(),
            ));
        }
        if ranges.len() != n_inputs {
            return Err(AnfisError::DimensionMismatch {
                expected: n_inputs,
                got: ranges.len(),
            });
        }
        let mut memberships = Vec::with_capacity(n_inputs);
        for &(lo, hi) in ranges {
            if !lo.is_finite() || !hi.is_finite() || hi < lo {
                return Err(AnfisError::InvalidParameter(format!(
                    "invalid feature range [{lo}, {hi}]"
                )));
            }
            let mut spacing = (hi - lo) / (mfs_per_input - 1) as f64;
            // Constant feature: keep the grid well-formed around the value.
            if spacing <= 0.0 {
                spacing = 1.0;
            }
            let mfs = (0..mfs_per_input)
                .map(|m| GaussianMf {
                    amplitude: 1.0,
                    center: lo + spacing * m as f64,
                    sigma: spacing / 2.0,
                })
                .collect();
            memberships.push(mfs);
        }
        let rules = RuleBase::grid(n_inputs, mfs_per_input)?;
        let consequents = ConsequentParams::zeros(rules.len(), n_inputs);
        Ok(Self {
            feature_names: (0..n_inputs).map(|i| format!("x{i}")).collect(),
            form: GaussianForm::default(),
            memberships,
            rules,
            consequents,
            threshold: DEFAULT_THRESHOLD,
            scaler: None,
        })
    }

    /// Assembles a model from explicit parts, checking dimensions.
    pub fn from_parts(
        memberships: Vec<Vec<GaussianMf>>,
        consequents: ConsequentParams,
    ) -> Result<Self, AnfisError> {
        let n_inputs = memberships.len();
        let mfs_per_input = memberships.first().map_or(0, Vec::len);
        let rules = RuleBase::grid(n_inputs, mfs_per_input)?;
        let model = Self {
            feature_names: (0..n_inputs).map(|i| format!("x{i}")).collect(),
            form: GaussianForm::default(),
            memberships,
            rules,
            consequents,
            threshold: DEFAULT_THRESHOLD,
            scaler: None,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), AnfisError> {
        let n = self.rules.n_inputs();
        if self.memberships.len() != n {
            return Err(AnfisError::DimensionMismatch {
                expected: n,
                got: self.memberships.len(),
            });
        }
        for mfs in &self.memberships {
            if mfs.len() != self.rules.mfs_per_input() {
                return Err(AnfisError::DimensionMismatch {
                    expected: self.rules.mfs_per_input(),
                    got: mfs.len(),
                });
            }
            for mf in mfs {
                mf.validate()?;
            }
        }
        if self.consequents.n_rules() != self.rules.len() {
            return Err(AnfisError::DimensionMismatch {
                expected: self.rules.len(),
                got: self.consequents.n_rules(),
            });
        }
        if self.consequents.n_inputs() != n {
            return Err(AnfisError::DimensionMismatch {
                expected: n,
                got: self.consequents.n_inputs(),
            });
        }
        if self.feature_names.len() != n {
            return Err(AnfisError::DimensionMismatch {
                expected: n,
                got: self.feature_names.len(),
            });
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(AnfisError::InvalidParameter(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        if let Some(scaler) = &self.scaler {
            if scaler.len() != n {
                return Err(AnfisError::DimensionMismatch {
                    expected: n,
                    got: scaler.len(),
                });
            }
        }
        Ok(())
    }

    pub fn n_inputs(&self) -> usize {
        self.rules.n_inputs()
    }

    pub fn n_rules(&self) -> usize {
        self.rules.len()
    }

    pub fn rule_base(&self) -> &RuleBase {
        &self.rules
    }

    pub fn memberships(&self) -> &[Vec<GaussianMf>] {
        &self.memberships
    }

    pub fn consequents(&self) -> &ConsequentParams {
        &self.consequents
    }

    pub fn set_consequents(&mut self, consequents: ConsequentParams) -> Result<(), AnfisError> {
        if consequents.n_rules() != self.n_rules() || consequents.n_inputs() != self.n_inputs() {
            return Err(AnfisError::DimensionMismatch {
                expected: self.n_rules() * (self.n_inputs() + 1),
                got: consequents.n_rules() * (consequents.n_inputs() + 1),
            });
        }
        self.consequents = consequents;
        Ok(())
    }

    pub fn form(&self) -> GaussianForm {
        self.form
    }

    pub fn with_form(mut self, form: GaussianForm) -> Self {
        self.form = form;
        self
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn set_threshold(&mut self, threshold: f64) -> Result<(), AnfisError> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(AnfisError::InvalidParameter(format!(
                "threshold must lie in (0, 1), got {threshold}"
            )));
        }
        self.threshold = threshold;
        Ok(())
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn set_feature_names(&mut self, names: Vec<String>) -> Result<(), AnfisError> {
        if names.len() != self.n_inputs() {
            return Err(AnfisError::DimensionMismatch {
                expected: self.n_inputs(),
                got: names.len(),
            });
        }
        self.feature_names = names;
        Ok(())
    }

    pub fn scaler(&self) -> Option<&Scaler> {
        self.scaler.as_ref()
    }

    pub fn set_scaler(&mut self, scaler: Option<Scaler>) -> Result<(), AnfisError> {
        if let Some(s) = &scaler {
            if s.len() != self.n_inputs() {
                return Err(AnfisError::DimensionMismatch {
                    expected: self.n_inputs(),
                    got: s.len(),
                });
            }
        }
        self.scaler = scaler;
        Ok(())
    }

    /// Premise parameters flattened as `[a, c, σ]` per membership function,
    /// input-major.
    pub fn premise_params(&self) -> Vec<f64> {
        self.memberships
            .iter()
            .flatten()
            .flat_map(|mf| [mf.amplitude, mf.center, mf.sigma])
            .collect()
    }

    pub fn set_premise_params(&mut self, params: &[f64]) -> Result<(), AnfisError> {
        let expected = self.n_inputs() * self.rules.mfs_per_input() * 3;
        if params.len() != expected {
            return Err(AnfisError::DimensionMismatch {
                expected,
                got: params.len(),
            });
        }
        let mut chunks = params.chunks_exact(3);
        for mf in self.memberships.iter_mut().flatten() {
            let c = chunks.next().expect("length checked above");
            mf.amplitude = c[0];
            mf.center = c[1];
            mf.sigma = c[2];
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<(), AnfisError> {
        if x.len() != self.n_inputs() {
            return Err(AnfisError::DimensionMismatch {
                expected: self.n_inputs(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(AnfisError::NonFiniteInput);
        }
        Ok(())
    }

    /// Layer-1 degrees, `[input][mf]`.
    pub(crate) fn degrees(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.memberships
            .iter()
            .zip(x)
            .map(|(mfs, &v)| mfs.iter().map(|mf| mf.degree(v, self.form)).collect())
            .collect()
    }

    /// Layer-2 firing strengths: product of each rule's membership degrees.
    pub fn firing_strengths(&self, x: &[f64]) -> Result<Vec<f64>, AnfisError> {
        self.check_input(x)?;
        let mu = self.degrees(x);
        Ok(self
            .rules
            .rules()
            .iter()
            .map(|rule| rule.iter().enumerate().map(|(j, &m)| mu[j][m]).product())
            .collect())
    }

    /// Layer-5 output `Σ w̄_i f_i`.
    pub fn predict_raw(&self, x: &[f64]) -> Result<f64, AnfisError> {
        let w = self.firing_strengths(x)?;
        let wn = normalize_strengths(&w);
        let f = rule_outputs(&self.consequents, x)?;
        Ok(wn.iter().zip(&f).map(|(a, b)| a * b).sum())
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, AnfisError> {
        self.predict_raw(x).map(logistic)
    }

    /// Label 1 (attack) iff `logistic(y_raw) >= threshold`; ties go to 1.
    pub fn classify(&self, x: &[f64]) -> Result<Classification, AnfisError> {
        let probability = self.predict_proba(x)?;
        Ok(Classification {
            probability,
            label: u8::from(probability >= self.threshold),
        })
    }

    /// Applies the embedded scaler (if any) to a raw feature vector.
    pub fn scale_input(&self, raw: &[f64]) -> Result<Vec<f64>, AnfisError> {
        if raw.len() != self.n_inputs() {
            return Err(AnfisError::DimensionMismatch {
                expected: self.n_inputs(),
                got: raw.len(),
            });
        }
        Ok(match &self.scaler {
            Some(s) => s.transform_row(raw),
            None => raw.to_vec(),
        })
    }
}
