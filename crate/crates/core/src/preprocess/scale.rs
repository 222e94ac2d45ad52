use serde::{Deserialize, Serialize};

use super::{column_key, Dataset, PreprocessError};

/// Per-feature min-max scaler. Values outside the fitted range map outside
/// `[0, 1]`; they are not clamped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub features: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Scaler {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// A constant feature (max == min) maps to 0.
    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&x, (&lo, &hi))| {
                let span = hi - lo;
                if span > 0.0 {
                    (x - lo) / span
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn inverse_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&x, (&lo, &hi))| x * (hi - lo) + lo)
            .collect()
    }
}

pub fn fit_scaler(ds: &Dataset) -> Scaler {
    let n = ds.columns.len();
    let mut min = vec![f64::INFINITY; n];
    let mut max = vec![f64::NEG_INFINITY; n];
    for row in &ds.rows {
        for (j, &v) in row.iter().enumerate() {
            min[j] = min[j].min(v);
            max[j] = max[j].max(v);
        }
    }
    if ds.rows.is_empty() {
        min.fill(0.0);
        max.fill(0.0);
    }
    Scaler {
        features: ds.columns.clone(),
        min,
        max,
    }
}

pub fn apply_scaler(mut ds: Dataset, scaler: &Scaler) -> Result<Dataset, PreprocessError> {
    let same = ds.columns.len() == scaler.features.len()
        && ds
            .columns
            .iter()
            .zip(&scaler.features)
            .all(|(a, b)| column_key(a) == column_key(b));
    if !same {
        return Err(PreprocessError::ScalerMismatch {
            expected: scaler.features.clone(),
            found: ds.columns.clone(),
        });
    }
    for row in &mut ds.rows {
        *row = scaler.transform_row(row);
    }
    Ok(ds)
}
