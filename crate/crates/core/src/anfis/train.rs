//! Hybrid training: closed-form consequents, ADAM on premises.
//!
//! One epoch is a forward pass that re-solves the consequents by ridge least
//! squares, followed by a single full-batch ADAM step on the premise
//! parameters against mean binary cross-entropy.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    logistic, AnfisError, AnfisModel, ConsequentParams, GaussianForm, DEGENERATE_STRENGTH_SUM,
};
use crate::metrics::{self, EvalReport};
use crate::preprocess::stratified_kfold;

/// Probabilities are clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]` before the log.
pub const PROB_CLAMP: f64 = 1e-12;
/// Lower bound applied to every σ after a premise update.
pub const SIGMA_FLOOR: f64 = 1e-4;

/// Rows per block when accumulating the normal equations.
const GRAM_BLOCK: usize = 512;
/// Fixed reduction width; results do not depend on the thread pool size.
const REDUCTION_GROUPS: usize = 8;
const GRADIENT_CHUNK: usize = 1024;
/// `λ = 0` solves are refused above this (Cholesky-pivot) condition estimate.
const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub k_folds: usize,
    pub ridge_lambda: f64,
    pub mfs_per_input: usize,
    /// Use `2σ²` in the Gaussian exponent instead of `(2σ)²`.
    pub standard_gaussian: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            k_folds: 5,
            ridge_lambda: 1e-6,
            mfs_per_input: 2,
            standard_gaussian: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AnfisError> {
        let bad = |msg: &str| Err(AnfisError::InvalidConfig(msg.to_string()));
        if self.epochs < 1 {
            return bad("epochs must be >= 1");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be > 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("ADAM betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("ADAM epsilon must be > 0");
        }
        if self.k_folds < 2 {
            return bad("k_folds must be >= 2");
        }
        if !(self.ridge_lambda >= 0.0) || !self.ridge_lambda.is_finite() {
            return bad("ridge_lambda must be >= 0");
        }
        if self.mfs_per_input < 2 {
            return bad("mfs_per_input must be >= 2");
        }
        Ok(())
    }

    pub fn gaussian_form(&self) -> GaussianForm {
        if self.standard_gaussian {
            GaussianForm::Standard
        } else {
            GaussianForm::TwoSigma
        }
    }
}

/// Metrics for one held-out fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean binary cross-entropy after each epoch's consequent solve.
    pub epoch_losses: Vec<f64>,
    pub folds: Vec<FoldReport>,
    /// Digest of the final parameter values.
    pub snapshot_id: String,
}

/// ADAM first/second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// Bias-corrected ADAM update. `step` is 1-based.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    step: u64,
    config: &TrainConfig,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    assert_eq!(params.len(), state.v.len());
    assert!(step >= 1, "ADAM step index is 1-based");
    let t = step.min(i32::MAX as u64) as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
    }
}

fn check_samples(model: &AnfisModel, x: &[Vec<f64>], n_targets: usize) -> Result<(), AnfisError> {
    if x.is_empty() {
        return Err(AnfisError::EmptyData);
    }
    if x.len() != n_targets {
        return Err(AnfisError::DimensionMismatch {
            expected: x.len(),
            got: n_targets,
        });
    }
    for row in x {
        if row.len() != model.n_inputs() {
            return Err(AnfisError::DimensionMismatch {
                expected: model.n_inputs(),
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(AnfisError::NonFiniteInput);
        }
    }
    Ok(())
}

/// Normalized strengths for one sample, written into `out`.
fn normalized_strengths_into(model: &AnfisModel, x: &[f64], mu: &mut [Vec<f64>], out: &mut [f64]) {
    for (j, mfs) in model.memberships.iter().enumerate() {
        for (m, mf) in mfs.iter().enumerate() {
            mu[j][m] = mf.degree(x[j], model.form);
        }
    }
    let mut sum = 0.0;
    for (i, rule) in model.rules.rules().iter().enumerate() {
        let w: f64 = rule.iter().enumerate().map(|(j, &m)| mu[j][m]).product();
        out[i] = w;
        sum += w;
    }
    if sum < DEGENERATE_STRENGTH_SUM {
        out.fill(1.0 / out.len() as f64);
    } else {
        out.iter_mut().for_each(|w| *w /= sum);
    }
}

/// Fills one design-matrix row: per rule `[w̄·x_1 .. w̄·x_n, w̄]`.
fn design_row(model: &AnfisModel, x: &[f64], mu: &mut [Vec<f64>], wn: &mut [f64], row: &mut [f64]) {
    normalized_strengths_into(model, x, mu, wn);
    let width = x.len() + 1;
    for (i, &w) in wn.iter().enumerate() {
        let dst = &mut row[i * width..(i + 1) * width];
        for (d, v) in dst.iter_mut().zip(x) {
            *d = w * v;
        }
        dst[width - 1] = w;
    }
}

fn scratch(model: &AnfisModel) -> (Vec<Vec<f64>>, Vec<f64>) {
    (
        vec![vec![0.0; model.rules.mfs_per_input()]; model.n_inputs()],
        vec![0.0; model.n_rules()],
    )
}

/// Accumulates `AᵀA` and `Aᵀy` over the samples.
fn normal_equations(model: &AnfisModel, x: &[Vec<f64>], y: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let p = model.n_rules() * (model.n_inputs() + 1);
    let group_len = x.len().div_ceil(REDUCTION_GROUPS).max(1);
    let partials: Vec<(DMatrix<f64>, DVector<f64>)> = x
        .par_chunks(group_len)
        .zip(y.par_chunks(group_len))
        .map(|(xs, ys)| {
            let (mut mu, mut wn) = scratch(model);
            let mut gram = DMatrix::<f64>::zeros(p, p);
            let mut rhs = DVector::<f64>::zeros(p);
            let mut row = vec![0.0; p];
            for (xb, yb) in xs.chunks(GRAM_BLOCK).zip(ys.chunks(GRAM_BLOCK)) {
                let mut block = DMatrix::<f64>::zeros(xb.len(), p);
                for (r, sample) in xb.iter().enumerate() {
                    design_row(model, sample, &mut mu, &mut wn, &mut row);
                    for (c, v) in row.iter().enumerate() {
                        block[(r, c)] = *v;
                    }
                }
                gram.gemm_tr(1.0, &block, &block, 1.0);
                let yv = DVector::from_column_slice(yb);
                rhs.gemv_tr(1.0, &block, &yv, 1.0);
            }
            (gram, rhs)
        })
        .collect();
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    for (g, b) in partials {
        gram += g;
        rhs += b;
    }
    (gram, rhs)
}

/// Ridge least-squares solve of the consequent parameters,
/// `min ‖Aθ − y‖² + λ‖θ‖²`. Does not modify the model.
pub fn solve_consequents(
    model: &AnfisModel,
    x: &[Vec<f64>],
    targets: &[f64],
    lambda: f64,
) -> Result<ConsequentParams, AnfisError> {
    check_samples(model, x, targets.len())?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(AnfisError::InvalidParameter(format!(
            "ridge lambda must be >= 0, got {lambda}"
        )));
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(AnfisError::NonFiniteInput);
    }
    let (mut gram, rhs) = normal_equations(model, x, targets);
    let p = gram.nrows();
    for i in 0..p {
        gram[(i, i)] += lambda;
    }
    let singular = || {
        AnfisError::SingularSystem(format!(
            "consequent normal equations are singular or ill-conditioned \
             ({p} unknowns, {} samples); use a ridge lambda > 0",
            x.len()
        ))
    };
    let chol = nalgebra::linalg::Cholesky::new(gram).ok_or_else(singular)?;
    if lambda == 0.0 {
        let diag = chol.l_dirty().diagonal();
        let max = diag.iter().cloned().fold(0.0f64, f64::max);
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min > 0.0) || (max / min).powi(2) > MAX_CONDITION {
            return Err(singular());
        }
    }
    let theta = chol.solve(&rhs);
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(singular());
    }
    Ok(ConsequentParams::from_flat(
        model.n_rules(),
        model.n_inputs(),
        theta.as_slice(),
    ))
}

/// Ridge objective `‖Aθ − y‖² + λ‖θ‖²` for the model's current consequents.
pub fn ridge_objective(model: &AnfisModel, x: &[Vec<f64>], targets: &[f64], lambda: f64) -> f64 {
    let sse: f64 = x
        .iter()
        .zip(targets)
        .map(|(xi, t)| {
            let y = model.predict_raw(xi).unwrap_or(f64::NAN);
            (y - t) * (y - t)
        })
        .sum();
    let norm: f64 = model.consequents.flat().iter().map(|v| v * v).sum();
    sse + lambda * norm
}

pub fn mean_squared_error(model: &AnfisModel, x: &[Vec<f64>], targets: &[f64]) -> f64 {
    ridge_objective(model, x, targets, 0.0) / x.len() as f64
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

#[inline]
fn bce(p: f64, label: f64) -> f64 {
    let p = clamp_prob(p);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

fn check_labels(labels: &[u8]) -> Result<(), AnfisError> {
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(AnfisError::InvalidParameter(format!(
            "labels must be 0 or 1, found {bad}"
        )));
    }
    Ok(())
}

/// Mean binary cross-entropy of `logistic(y_raw)` against 0/1 labels.
pub fn bce_loss(model: &AnfisModel, x: &[Vec<f64>], labels: &[u8]) -> Result<f64, AnfisError> {
    check_samples(model, x, labels.len())?;
    check_labels(labels)?;
    let total: f64 = x
        .iter()
        .zip(labels)
        .map(|(xi, &l)| {
            let y = model.predict_raw(xi).expect("inputs validated");
            bce(logistic(y), f64::from(l))
        })
        .sum();
    Ok(total / x.len() as f64)
}

/// Mean-BCE gradient with respect to every premise parameter, laid out like
/// [`AnfisModel::premise_params`].
#[derive(Debug, Clone, PartialEq)]
pub struct PremiseGradient {
    pub values: Vec<f64>,
    pub loss: f64,
}

impl PremiseGradient {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Analytic gradient of mean BCE with respect to `(a, c, σ)` of every
/// membership function, consequents held fixed. Samples whose probability
/// sits in the clamped region contribute zero, matching the clamped loss.
pub fn premise_gradients(
    model: &AnfisModel,
    x: &[Vec<f64>],
    labels: &[u8],
) -> Result<PremiseGradient, AnfisError> {
    check_samples(model, x, labels.len())?;
    check_labels(labels)?;
    let n_in = model.n_inputs();
    let n_mf = model.rules.mfs_per_input();
    let n_params = n_in * n_mf * 3;

    let partials: Vec<(Vec<f64>, f64)> = x
        .par_chunks(GRADIENT_CHUNK)
        .zip(labels.par_chunks(GRADIENT_CHUNK))
        .map(|(xs, ls)| {
            let mut grad = vec![0.0; n_params];
            let mut loss = 0.0;
            let mut mu = vec![vec![0.0; n_mf]; n_in];
            let mut dmu = vec![vec![Default::default(); n_mf]; n_in];
            let mut acc = vec![vec![0.0; n_mf]; n_in];
            let n_rules = model.n_rules();
            let mut w = vec![0.0; n_rules];
            let mut f = vec![0.0; n_rules];
            let mut prefix = vec![0.0; n_in + 1];
            for (xi, &label) in xs.iter().zip(ls) {
                for j in 0..n_in {
                    for m in 0..n_mf {
                        let (d, p) =
                            model.memberships[j][m].degree_with_partials(xi[j], model.form);
                        mu[j][m] = d;
                        dmu[j][m] = p;
                    }
                }
                let mut sum = 0.0;
                for (i, rule) in model.rules.rules().iter().enumerate() {
                    w[i] = rule.iter().enumerate().map(|(j, &m)| mu[j][m]).product();
                    f[i] = super::affine(model.consequents.row(i), xi);
                    sum += w[i];
                }
                let degenerate = sum < DEGENERATE_STRENGTH_SUM;
                let y = if degenerate {
                    f.iter().sum::<f64>() / n_rules as f64
                } else {
                    w.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>() / sum
                };
                let t = f64::from(label);
                let p_raw = logistic(y);
                loss += bce(p_raw, t);
                if degenerate || !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p_raw) {
                    continue;
                }
                let g_y = p_raw - t;
                acc.iter_mut().for_each(|a| a.fill(0.0));
                for (i, rule) in model.rules.rules().iter().enumerate() {
                    let coef = g_y * (f[i] - y) / sum;
                    if coef == 0.0 {
                        continue;
                    }
                    // Product of the other inputs' degrees via prefix/suffix.
                    prefix[0] = 1.0;
                    for (j, &m) in rule.iter().enumerate() {
                        prefix[j + 1] = prefix[j] * mu[j][m];
                    }
                    let mut suffix = 1.0;
                    for j in (0..n_in).rev() {
                        let m = rule[j];
                        acc[j][m] += coef * prefix[j] * suffix;
                        suffix *= mu[j][m];
                    }
                }
                for j in 0..n_in {
                    for m in 0..n_mf {
                        let a = acc[j][m];
                        if a == 0.0 {
                            continue;
                        }
                        let base = (j * n_mf + m) * 3;
                        grad[base] += a * dmu[j][m].amplitude;
                        grad[base + 1] += a * dmu[j][m].center;
                        grad[base + 2] += a * dmu[j][m].sigma;
                    }
                }
            }
            (grad, loss)
        })
        .collect();

    let n = x.len() as f64;
    let mut values = vec![0.0; n_params];
    let mut loss = 0.0;
    for (g, l) in partials {
        for (v, gi) in values.iter_mut().zip(g) {
            *v += gi;
        }
        loss += l;
    }
    values.iter_mut().for_each(|v| *v /= n);
    Ok(PremiseGradient {
        values,
        loss: loss / n,
    })
}

/// Least-squares targets: labels mapped onto `{-1, +1}` so the logistic
/// decision boundary `y_raw = 0` sits midway between the classes.
pub fn lsq_targets(labels: &[u8]) -> Vec<f64> {
    labels
        .iter()
        .map(|&l| if l == 1 { 1.0 } else { -1.0 })
        .collect()
}

fn both_classes(labels: &[u8]) -> bool {
    labels.contains(&0) && labels.contains(&1)
}

/// Trains `model` in place on all samples.
pub fn fit(
    model: &mut AnfisModel,
    x: &[Vec<f64>],
    labels: &[u8],
    config: &TrainConfig,
) -> Result<TrainReport, AnfisError> {
    config.validate()?;
    check_samples(model, x, labels.len())?;
    check_labels(labels)?;
    if !both_classes(labels) {
        return Err(AnfisError::DegenerateLabels);
    }
    model.form = config.gaussian_form();
    let targets = lsq_targets(labels);
    let mut params = model.premise_params();
    let mut state = AdamState::new(params.len());
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let consequents = solve_consequents(model, x, &targets, config.ridge_lambda)?;
        model.consequents = consequents;
        let grad = premise_gradients(model, x, labels)?;
        if !grad.loss.is_finite() {
            return Err(AnfisError::InvalidParameter(format!(
                "non-finite loss at epoch {epoch}"
            )));
        }
        epoch_losses.push(grad.loss);
        log::debug!("epoch {epoch}: bce {:.6}", grad.loss);
        adam_step(&mut params, &grad.values, &mut state, epoch as u64, config);
        for sigma in params.iter_mut().skip(2).step_by(3) {
            *sigma = sigma.max(SIGMA_FLOOR);
        }
        model.set_premise_params(&params)?;
    }
    // Consequents consistent with the final premises.
    model.consequents = solve_consequents(model, x, &targets, config.ridge_lambda)?;

    Ok(TrainReport {
        epoch_losses,
        folds: Vec::new(),
        snapshot_id: snapshot_id(model),
    })
}

/// Per-feature `(min, max)` over the rows.
pub fn feature_ranges(x: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let n = x.first().map_or(0, Vec::len);
    let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); n];
    for row in x {
        for (r, &v) in ranges.iter_mut().zip(row) {
            r.0 = r.0.min(v);
            r.1 = r.1.max(v);
        }
    }
    ranges
}

/// Fresh grid model over the observed ranges of `x`.
pub fn init_for(x: &[Vec<f64>], config: &TrainConfig) -> Result<AnfisModel, AnfisError> {
    if x.is_empty() {
        return Err(AnfisError::EmptyData);
    }
    let ranges = feature_ranges(x);
    Ok(
        AnfisModel::init_grid(ranges.len(), config.mfs_per_input, &ranges)?
            .with_form(config.gaussian_form()),
    )
}

/// Stratified k-fold cross-validation; each fold trains a fresh grid model.
pub fn cross_validate(
    x: &[Vec<f64>],
    labels: &[u8],
    config: &TrainConfig,
) -> Result<Vec<FoldReport>, AnfisError> {
    config.validate()?;
    if x.is_empty() {
        return Err(AnfisError::EmptyData);
    }
    if !both_classes(labels) {
        return Err(AnfisError::DegenerateLabels);
    }
    let folds = stratified_kfold(labels, config.k_folds, config.seed)
        .map_err(|e| AnfisError::InvalidConfig(e.to_string()))?;
    let mut reports = Vec::with_capacity(config.k_folds);
    for k in 0..config.k_folds {
        let (mut tx, mut ty, mut vx, mut vy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (i, &f) in folds.iter().enumerate() {
            if f == k {
                vx.push(x[i].clone());
                vy.push(labels[i]);
            } else {
                tx.push(x[i].clone());
                ty.push(labels[i]);
            }
        }
        let mut model = init_for(&tx, config)?;
        fit(&mut model, &tx, &ty, config)?;
        let report = evaluate(&model, &vx, &vy)?;
        log::info!(
            "fold {k}: accuracy {:?} fpr {:?}",
            report.accuracy,
            report.fpr
        );
        reports.push(FoldReport {
            fold: k,
            train_size: tx.len(),
            test_size: vx.len(),
            report,
        });
    }
    Ok(reports)
}

/// Classifies every row and scores against `labels`. AUC is omitted when
/// only one class is present.
pub fn evaluate(
    model: &AnfisModel,
    x: &[Vec<f64>],
    labels: &[u8],
) -> Result<EvalReport, AnfisError> {
    let mut probs = Vec::with_capacity(x.len());
    let mut preds = Vec::with_capacity(x.len());
    for xi in x {
        let c = model.classify(xi)?;
        probs.push(c.probability);
        preds.push(c.label);
    }
    let cm = metrics::confusion(&preds, labels)
        .map_err(|e| AnfisError::InvalidParameter(e.to_string()))?;
    let auc = metrics::roc_auc(&probs, labels).ok().map(|r| r.auc);
    let mut report =
        metrics::scores(&cm).map_err(|e| AnfisError::InvalidParameter(e.to_string()))?;
    report.auc = auc;
    report.threshold = model.threshold;
    Ok(report)
}

/// Short digest of the model's numeric parameters.
pub fn snapshot_id(model: &AnfisModel) -> String {
    let mut hasher = Sha256::new();
    for v in model
        .premise_params()
        .iter()
        .chain(model.consequents.flat().iter())
    {
        hasher.update(v.to_bits().to_le_bytes());
    }
    hasher.update(model.threshold.to_bits().to_le_bytes());
    hex::encode(&hasher.finalize()[..8])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anfis::GaussianMf;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
            .collect()
    }

    #[test]
    fn recovers_single_rule_affine_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_rows(&mut rng, 200, 3);
        let theta = [0.7, -1.3, 2.1, 0.25];
        let y: Vec<f64> = x.iter().map(|r| super::super::affine(&theta, r)).collect();
        let model = AnfisModel::from_parts(
            vec![vec![GaussianMf::new(1.0, 0.5, 0.5).unwrap()]; 3],
            ConsequentParams::zeros(1, 3),
        )
        .unwrap();
        let c = solve_consequents(&model, &x, &y, 0.0).unwrap();
        for (got, want) in c.row(0).iter().zip(theta) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn zero_target_gives_zero_consequents() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_rows(&mut rng, 50, 2);
        let model = AnfisModel::init_grid(2, 2, &[(0.0, 1.0); 2]).unwrap();
        let c = solve_consequents(&model, &x, &vec![0.0; 50], 1e-6).unwrap();
        assert!(c.flat().iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn lambda_zero_on_rank_deficient_system_is_refused() {
        // Two identical samples cannot determine 3 unknowns.
        let x = vec![vec![0.5, 0.5]; 2];
        let model = AnfisModel::from_parts(
            vec![vec![GaussianMf::new(1.0, 0.5, 0.5).unwrap()]; 2],
            ConsequentParams::zeros(1, 2),
        )
        .unwrap();
        let err = solve_consequents(&model, &x, &[1.0, 1.0], 0.0).unwrap_err();
        assert!(err.to_string().contains("lambda > 0"), "{err}");
        assert!(solve_consequents(&model, &x, &[1.0, 1.0], 1e-6).is_ok());
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let cfg = TrainConfig::default();
        let mut p = vec![0.3, -1.0, 2.0];
        let orig = p.clone();
        let mut st = AdamState::new(3);
        for t in 1..=10 {
            adam_step(&mut p, &[0.0; 3], &mut st, t, &cfg);
        }
        assert_eq!(p, orig);
    }

    #[test]
    fn adam_constant_gradient_step_tends_to_lr_sign() {
        let cfg = TrainConfig::default();
        let mut p = vec![0.0, 0.0];
        let mut st = AdamState::new(2);
        let mut last = [0.0; 2];
        for t in 1..=2000 {
            let before = p.clone();
            adam_step(&mut p, &[0.5, -3.0], &mut st, t, &cfg);
            last = [p[0] - before[0], p[1] - before[1]];
        }
        assert!((last[0] + cfg.learning_rate).abs() < 1e-9);
        assert!((last[1] - cfg.learning_rate).abs() < 1e-9);
    }

    #[test]
    fn adam_is_deterministic() {
        let cfg = TrainConfig::default();
        let run = || {
            let mut p = vec![0.1, 0.2, 0.3];
            let mut st = AdamState::new(3);
            for t in 1..=50 {
                let g: Vec<f64> = p.iter().map(|v: &f64| v.sin() * t as f64).collect();
                adam_step(&mut p, &g, &mut st, t, &cfg);
            }
            p.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn fit_rejects_bad_input() {
        let x = vec![vec![0.1], vec![0.2]];
        let mut m = AnfisModel::init_grid(1, 2, &[(0.0, 1.0)]).unwrap();
        let err = fit(&mut m, &x, &[1, 1], &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, AnfisError::DegenerateLabels));
        assert!(err.to_string().contains("degenerate labels"));
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            fit(&mut m, &x, &[0, 1], &cfg),
            Err(AnfisError::InvalidConfig(_))
        ));
    }

    #[test]
    fn saturated_correct_predictions_have_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_rows(&mut rng, 40, 2);
        let labels: Vec<u8> = x.iter().map(|r| u8::from(r[0] > 0.5)).collect();
        // Consequent f = 200·(x0 - 0.5): far into the clamped tails for all
        // but samples very near the boundary, which we drop.
        let keep: Vec<usize> = (0..x.len())
            .filter(|&i| (x[i][0] - 0.5).abs() > 0.2)
            .collect();
        let xs: Vec<Vec<f64>> = keep.iter().map(|&i| x[i].clone()).collect();
        let ls: Vec<u8> = keep.iter().map(|&i| labels[i]).collect();
        let mut m = AnfisModel::init_grid(2, 2, &[(0.0, 1.0); 2]).unwrap();
        m.consequents = ConsequentParams::from_rows(2, vec![vec![200.0, 0.0, -100.0]; 4]).unwrap();
        let g = premise_gradients(&m, &xs, &ls).unwrap();
        assert!(g.norm() < 1e-8, "{}", g.norm());
    }
}
