//! Random models, finite-difference gradients and a directly assembled
//! least-squares design matrix.

use fasa_core::anfis::train::{bce_loss, premise_gradients, solve_consequents};
use fasa_core::anfis::{
    normalize_strengths, AnfisModel, ConsequentParams, GaussianForm, GaussianMf,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Two membership functions per input, random shapes and consequents.
pub fn random_model(rng: &mut ChaCha8Rng, n_in: usize, form: GaussianForm) -> AnfisModel {
    let memberships = (0..n_in)
        .map(|_| {
            (0..2)
                .map(|_| {
                    GaussianMf::new(
                        rng.random_range(0.6..1.0),
                        rng.random_range(0.0..1.0),
                        rng.random_range(0.3..1.0),
                    )
                    .unwrap()
                })
                .collect()
        })
        .collect();
    let n_rules = 1 << n_in;
    let rows = (0..n_rules)
        .map(|_| (0..=n_in).map(|_| rng.random_range(-1.5..1.5)).collect())
        .collect();
    AnfisModel::from_parts(
        memberships,
        ConsequentParams::from_rows(n_in, rows).unwrap(),
    )
    .unwrap()
    .with_form(form)
}

pub fn unit_samples(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<u8>) {
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let y = (0..n).map(|i| (i % 2) as u8).collect();
    (x, y)
}

/// Largest relative error between analytic and central-difference premise
/// gradients. The denominator is floored at 1e-6 so near-zero components
/// compare absolutely.
pub fn gradient_error(model: &AnfisModel, x: &[Vec<f64>], y: &[u8]) -> f64 {
    let analytic = premise_gradients(model, x, y).unwrap().values;
    let base = model.premise_params();
    let mut worst: f64 = 0.0;
    for (i, g) in analytic.iter().enumerate() {
        let mut plus = model.clone();
        let mut minus = model.clone();
        let mut p = base.clone();
        p[i] += FD_STEP;
        plus.set_premise_params(&p).unwrap();
        p[i] -= 2.0 * FD_STEP;
        minus.set_premise_params(&p).unwrap();
        let numeric =
            (bce_loss(&plus, x, y).unwrap() - bce_loss(&minus, x, y).unwrap()) / (2.0 * FD_STEP);
        let scale = g.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((g - numeric).abs() / scale);
    }
    worst
}

/// Worst gradient error over `n` random models with 2 to 4 inputs,
/// alternating Gaussian forms.
pub fn gradient_sweep(n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for k in 0..n {
        let n_in = 2 + k % 3;
        let form = if k % 2 == 0 {
            GaussianForm::TwoSigma
        } else {
            GaussianForm::Standard
        };
        let model = random_model(&mut rng, n_in, form);
        let (x, y) = unit_samples(&mut rng, 24, n_in);
        worst = worst.max(gradient_error(&model, &x, &y));
    }
    worst
}

/// Largest coefficient error recovering a single-rule affine map from 100
/// exact samples with `λ = 0`.
pub fn affine_recovery_error(seed: u64, d: usize, theta: &[f64]) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = &theta[..=d];
    let x: Vec<Vec<f64>> = (0..100)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let y: Vec<f64> = x
        .iter()
        .map(|r| r.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() + theta[d])
        .collect();
    let mf = GaussianMf::new(1.0, 0.0, 1.0).unwrap();
    let model = AnfisModel::from_parts(vec![vec![mf]; d], ConsequentParams::zeros(1, d)).unwrap();
    let c = solve_consequents(&model, &x, &y, 0.0).unwrap();
    c.row(0)
        .iter()
        .zip(theta)
        .map(|(g, w)| (g - w).abs())
        .fold(0.0, f64::max)
}

/// Design-matrix row built straight from the firing strengths:
/// `w̄_r · [x, 1]` for every rule `r`.
pub fn design_row(model: &AnfisModel, x: &[f64]) -> Vec<f64> {
    let wn = normalize_strengths(&model.firing_strengths(x).unwrap());
    let mut row = Vec::new();
    for w in wn {
        row.extend(x.iter().map(|v| w * v));
        row.push(w);
    }
    row
}

/// Largest `|Aᵀr|_j / (‖A_j‖·‖y‖)` after a `λ = 0` solve on a well-separated
/// grid model with noisy nonlinear targets.
pub fn orthogonality_ratio(seed: u64, d: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let memberships = (0..d)
        .map(|_| {
            [0.0, 1.0]
                .iter()
                .map(|&c| {
                    GaussianMf::new(
                        1.0,
                        c + rng.random_range(-0.1..0.1),
                        rng.random_range(0.25..0.4),
                    )
                    .unwrap()
                })
                .collect()
        })
        .collect();
    let model = AnfisModel::from_parts(memberships, ConsequentParams::zeros(1 << d, d)).unwrap();
    let x: Vec<Vec<f64>> = (0..300)
        .map(|_| (0..d).map(|_| rng.random_range(-0.5..1.5)).collect())
        .collect();
    let y: Vec<f64> = x
        .iter()
        .map(|r| (3.0 * r[0]).sin() + rng.random_range(-0.1..0.1))
        .collect();
    let theta = solve_consequents(&model, &x, &y, 0.0).unwrap().flat();
    let a: Vec<Vec<f64>> = x.iter().map(|r| design_row(&model, r)).collect();
    let resid: Vec<f64> = a
        .iter()
        .zip(&y)
        .map(|(row, yi)| yi - row.iter().zip(&theta).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    let y_norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    (0..theta.len())
        .map(|j| {
            let col = a.iter().map(|r| r[j] * r[j]).sum::<f64>().sqrt();
            let dot: f64 = a.iter().zip(&resid).map(|(r, e)| r[j] * e).sum();
            dot.abs() / (col * y_norm)
        })
        .fold(0.0, f64::max)
}
