//! Flow-record preprocessing for CICFlowMeter-style CSV exports.
//!
//! The full pipeline (see [`run_pipeline`]) encodes labels, rebalances the
//! classes, removes constant / identifier / non-finite data, prunes highly
//! correlated columns, ranks features and keeps the configured subset.
//! Column names are matched on a normalized key (trimmed, case-folded,
//! underscores read as spaces), so `" Init_Win_bytes_forward"` and
//! `"Init Win bytes forward"` refer to the same column.

mod clean;
mod io;
mod scale;
mod select;
mod split;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use clean::{
    drop_categorical, drop_constant_columns, drop_nonfinite_rows, encode_labels, fix_init_win,
    resample, select_subset,
};
pub use io::{load_csv, load_csv_resampled, write_csv, LoadOptions};
pub use scale::{apply_scaler, fit_scaler, Scaler};
pub use select::{
    prune_correlated, prune_correlated_with_priority, rank_features, select_features,
    FeatureImportance, RankOptions,
};
pub use split::{stratified_kfold, stratified_split, stratified_subsample};

/// Flag and bulk columns that are constant across the SYN captures.
pub const CONSTANT_COLUMNS: [&str; 12] = [
    "Bwd PSH Flags",
    "Fwd URG Flags",
    "Bwd URG Flags",
    "FIN Flag Count",
    "Fwd Avg Bytes/Bulk",
    "Fwd Avg Packets/Bulk",
    "Fwd Avg Bulk Rate",
    "Bwd Avg Bytes/Bulk",
    "PSH Flag Count",
    "ECE Flag Count",
    "Bwd Avg Packets/Bulk",
    "Bwd Avg Bulk Rate",
];

/// Identifier columns whose values depend on the capture network.
pub const CATEGORICAL_COLUMNS: [&str; 8] = [
    "Source Port",
    "Destination Port",
    "Source IP",
    "Destination IP",
    "Flow ID",
    "SimillarHTTP",
    "Unnamed: 0",
    "Timestamp",
];

/// Columns whose `-1` sentinel is rewritten to 0.
pub const INIT_WIN_COLUMNS: [&str; 2] = ["Init Win bytes forward", "Init Win bytes backward"];

/// Default selected feature set for the CIC SYN model.
pub const SELECTED_FEATURES: [&str; 7] = [
    "Total Length of Fwd Packets",
    "Fwd Packet Length Mean",
    "ACK Flag Count",
    "URG Flag Count",
    "Init Win bytes forward",
    "min seg size forward",
    "Inbound",
];

pub const DEFAULT_LABEL_COLUMN: &str = "Label";

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("label column {0:?} not found in header")]
    MissingLabelColumn(String),
    #[error("line {line}, column {column:?}: cannot parse {value:?} as a number")]
    Parse {
        line: u64,
        column: String,
        value: String,
    },
    #[error("line {line}: expected {expected} fields, found {found}")]
    RowLength {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("headers differ between input files ({0})")]
    HeaderMismatch(String),
    #[error("unknown label {0:?} (expected BENIGN or Syn)")]
    UnknownLabel(String),
    #[error("labels have not been encoded yet")]
    LabelsNotEncoded,
    #[error("data must contain both BENIGN and SYN rows")]
    SingleClass,
    #[error("benign fraction {fraction} unreachable: need {needed} SYN rows, have {available}")]
    FractionUnreachable {
        fraction: f64,
        needed: usize,
        available: usize,
    },
    #[error("selected features missing from data: {0:?}")]
    MissingFeatures(Vec<String>),
    #[error("feature selection list is empty")]
    EmptySelection,
    #[error("feature {0:?} listed more than once")]
    DuplicateFeature(String),
    #[error("k = {k} folds exceeds the minority class count {minority}")]
    TooManyFolds { k: usize, minority: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("scaler features {expected:?} do not match data columns {found:?}")]
    ScalerMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },
}

/// Normalized matching key for a column name.
pub fn column_key(name: &str) -> String {
    name.trim()
        .replace('_', " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Label values: raw strings as read, or 0 (BENIGN) / 1 (SYN) once encoded.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Raw(Vec<String>),
    Encoded(Vec<u8>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Raw(v) => v.len(),
            Labels::Encoded(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn subset(&self, idx: &[usize]) -> Labels {
        match self {
            Labels::Raw(v) => Labels::Raw(idx.iter().map(|&i| v[i].clone()).collect()),
            Labels::Encoded(v) => Labels::Encoded(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// Non-numeric column carried until it is dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct TextColumn {
    pub name: String,
    pub values: Vec<String>,
}

/// Column-named numeric matrix with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Labels,
    pub text_columns: Vec<TextColumn>,
    /// Human-readable log of the steps applied so far.
    pub notes: Vec<String>,
}

impl Dataset {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<f64>>, labels: Vec<u8>) -> Self {
        Self {
            columns,
            rows,
            labels: Labels::Encoded(labels),
            text_columns: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len() + self.text_columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        let key = column_key(name);
        self.columns.iter().position(|c| column_key(c) == key)
    }

    pub fn column(&self, idx: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[idx]).collect()
    }

    pub fn encoded_labels(&self) -> Result<&[u8], PreprocessError> {
        match &self.labels {
            Labels::Encoded(v) => Ok(v),
            Labels::Raw(_) => Err(PreprocessError::LabelsNotEncoded),
        }
    }

    pub fn class_counts(&self) -> Result<(usize, usize), PreprocessError> {
        let l = self.encoded_labels()?;
        let syn = l.iter().filter(|&&v| v == 1).count();
        Ok((l.len() - syn, syn))
    }

    /// Rows at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            columns: self.columns.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: self.labels.subset(idx),
            text_columns: self
                .text_columns
                .iter()
                .map(|t| TextColumn {
                    name: t.name.clone(),
                    values: idx.iter().map(|&i| t.values[i].clone()).collect(),
                })
                .collect(),
            notes: self.notes.clone(),
        }
    }

    /// Appends the rows of `other`, which must have the same layout.
    pub fn append(&mut self, other: Dataset) -> Result<(), PreprocessError> {
        let same_text = self.text_columns.len() == other.text_columns.len()
            && self
                .text_columns
                .iter()
                .zip(&other.text_columns)
                .all(|(a, b)| a.name == b.name);
        if self.columns != other.columns || !same_text {
            return Err(PreprocessError::HeaderMismatch(
                "column layouts differ".into(),
            ));
        }
        match (&mut self.labels, other.labels) {
            (Labels::Raw(a), Labels::Raw(b)) => a.extend(b),
            (Labels::Encoded(a), Labels::Encoded(b)) => a.extend(b),
            _ => return Err(PreprocessError::LabelsNotEncoded),
        }
        self.rows.extend(other.rows);
        for (t, o) in self.text_columns.iter_mut().zip(other.text_columns) {
            t.values.extend(o.values);
        }
        self.notes.extend(other.notes);
        Ok(())
    }

    /// Keeps only the numeric columns at `keep`, in that order.
    pub(crate) fn retain_columns(&mut self, keep: &[usize]) {
        self.columns = keep.iter().map(|&i| self.columns[i].clone()).collect();
        for row in &mut self.rows {
            *row = keep.iter().map(|&i| row[i]).collect();
        }
    }

    pub(crate) fn retain_rows(&mut self, keep: &[bool]) {
        let idx: Vec<usize> = (0..self.rows.len()).filter(|&i| keep[i]).collect();
        let notes = std::mem::take(&mut self.notes);
        *self = self.subset(&idx);
        self.notes = notes;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub label_column: String,
    /// Always dropped when present, in addition to data-driven constant columns.
    pub drop_constant: Vec<String>,
    pub drop_categorical: Vec<String>,
    pub correlation_threshold: f64,
    /// Benign share after resampling; `None` skips resampling.
    pub benign_fraction: Option<f64>,
    /// Features kept by the selection step; empty keeps everything.
    pub selected_features: Vec<String>,
    pub rank_trees: usize,
    pub rank_depth: usize,
    pub seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            label_column: DEFAULT_LABEL_COLUMN.into(),
            drop_constant: CONSTANT_COLUMNS.iter().map(|s| s.to_string()).collect(),
            drop_categorical: CATEGORICAL_COLUMNS.iter().map(|s| s.to_string()).collect(),
            correlation_threshold: 0.8,
            benign_fraction: Some(0.2),
            selected_features: SELECTED_FEATURES.iter().map(|s| s.to_string()).collect(),
            rank_trees: 10,
            rank_depth: 4,
            seed: 0,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        if !(self.correlation_threshold > 0.0 && self.correlation_threshold <= 1.0) {
            return Err(PreprocessError::InvalidConfig(format!(
                "correlation threshold must lie in (0, 1], got {}",
                self.correlation_threshold
            )));
        }
        if let Some(f) = self.benign_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(PreprocessError::InvalidConfig(format!(
                    "benign fraction must lie in (0, 1), got {f}"
                )));
            }
        }
        if self.rank_trees == 0 || self.rank_depth == 0 {
            return Err(PreprocessError::InvalidConfig(
                "rank_trees and rank_depth must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Row/column counts around one pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub rows_before: usize,
    pub rows_after: usize,
    pub columns_before: usize,
    pub columns_after: usize,
}

pub const MANIFEST_VERSION: &str = "fasa-preprocess/1";

/// Written next to the cleaned CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessManifest {
    pub version: String,
    pub features: Vec<String>,
    pub label_column: String,
    pub rows: usize,
    pub benign: usize,
    pub syn: usize,
    /// Fitted on the whole cleaned output.
    pub scaler: Scaler,
    pub stages: Vec<StageReport>,
    pub importance: Vec<FeatureImportance>,
    pub notes: Vec<String>,
}

/// Runs every stage in order and returns the cleaned (unscaled) dataset.
///
/// Configured selected features are scanned first by the correlation step
/// and exempt from the data-driven constant check, so the selection step
/// cannot lose them to an earlier stage.
pub fn run_pipeline(
    mut ds: Dataset,
    config: &PreprocessConfig,
) -> Result<(Dataset, PreprocessManifest), PreprocessError> {
    config.validate()?;
    let mut stages = Vec::new();
    macro_rules! stage {
        ($name:expr, $body:expr) => {{
            let (rb, cb) = (ds.n_rows(), ds.n_columns());
            ds = $body;
            let report = StageReport {
                stage: $name.to_string(),
                rows_before: rb,
                rows_after: ds.n_rows(),
                columns_before: cb,
                columns_after: ds.n_columns(),
            };
            log::info!(
                "{:<22} rows {:>8} -> {:<8} columns {:>3} -> {}",
                report.stage,
                rb,
                report.rows_after,
                cb,
                report.columns_after
            );
            stages.push(report);
        }};
    }

    stage!("encode_labels", encode_labels(ds)?);
    if let Some(fraction) = config.benign_fraction {
        stage!("resample", resample(ds, fraction, config.seed)?);
    }
    let protected = &config.selected_features;
    stage!(
        "drop_constant_columns",
        clean::drop_constant_columns_except(ds, &config.drop_constant, protected)
    );
    stage!("fix_init_win", fix_init_win(ds));
    stage!("drop_nonfinite_rows", drop_nonfinite_rows(ds));
    stage!(
        "drop_categorical",
        clean::drop_categorical_named(ds, &config.drop_categorical)
    );
    stage!(
        "prune_correlated",
        prune_correlated_with_priority(ds, config.correlation_threshold, protected)
    );

    let importance = if ds.n_rows() >= 2 && ds.class_counts().is_ok_and(|(b, s)| b > 0 && s > 0) {
        rank_features(
            &ds,
            &RankOptions {
                trees: config.rank_trees,
                max_depth: config.rank_depth,
                seed: config.seed,
                ..RankOptions::default()
            },
        )?
    } else {
        Vec::new()
    };

    if !config.selected_features.is_empty() {
        stage!(
            "select_features",
            select_features(ds, &config.selected_features)?
        );
    }

    let scaler = fit_scaler(&ds);
    let (benign, syn) = ds.class_counts()?;
    let manifest = PreprocessManifest {
        version: MANIFEST_VERSION.into(),
        features: ds.columns.clone(),
        label_column: config.label_column.clone(),
        rows: ds.n_rows(),
        benign,
        syn,
        scaler,
        stages,
        importance,
        notes: ds.notes.clone(),
    };
    Ok((ds, manifest))
}
