//! Brute-force metric recomputation.

use fasa_core::metrics::{confusion, roc_auc, scores};

/// Pairwise AUC: the share of (positive, negative) pairs ranked correctly,
/// ties counting half.
pub fn pairwise_auc(s: &[f64], y: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in s.iter().enumerate() {
        if y[i] != 1 {
            continue;
        }
        for (j, &sj) in s.iter().enumerate() {
            if y[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Compares the library's confusion counts and scores with direct
/// counting; returns a description of the first mismatch.
pub fn check_scores(pred: &[u8], truth: &[u8]) -> Result<(), String> {
    let cm = confusion(pred, truth).map_err(|e| e.to_string())?;
    let count = |p: u8, t: u8| {
        pred.iter()
            .zip(truth)
            .filter(|&(&a, &b)| a == p && b == t)
            .count() as u64
    };
    let (tp, fp, tn, fn_) = (count(1, 1), count(1, 0), count(0, 0), count(0, 1));
    if (cm.tp, cm.fp, cm.tn, cm.fn_) != (tp, fp, tn, fn_) {
        return Err(format!(
            "confusion {cm:?} vs counted {:?}",
            (tp, fp, tn, fn_)
        ));
    }
    let r = scores(&cm).map_err(|e| e.to_string())?;
    let div = |a: u64, b: u64| {
        if b == 0 {
            None
        } else {
            Some(a as f64 / b as f64)
        }
    };
    let want = [
        (
            "accuracy",
            r.accuracy,
            Some((tp + tn) as f64 / pred.len() as f64),
        ),
        ("precision", r.precision, div(tp, tp + fp)),
        ("recall", r.recall, div(tp, tp + fn_)),
        ("fpr", r.fpr, div(fp, fp + tn)),
    ];
    for (name, got, expected) in want {
        if got != expected {
            return Err(format!("{name}: {got:?} vs {expected:?}"));
        }
    }
    match (r.precision, r.recall, r.f1) {
        (Some(p), Some(q), Some(f)) if (f - 2.0 * p * q / (p + q)).abs() < 1e-12 => {}
        (Some(p), Some(q), None) if p + q == 0.0 => {}
        (None, _, None) | (_, None, None) => {}
        other => return Err(format!("f1 inconsistent: {other:?}")),
    }
    Ok(())
}

/// Library AUC versus the pairwise count; both classes must be present.
pub fn check_auc(s: &[f64], y: &[u8]) -> Result<(), String> {
    let roc = roc_auc(s, y).map_err(|e| e.to_string())?;
    let want = pairwise_auc(s, y);
    if (roc.auc - want).abs() >= 1e-12 {
        return Err(format!("auc {} vs pairwise {}", roc.auc, want));
    }
    Ok(())
}
