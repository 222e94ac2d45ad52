//! Versioned JSON model document.
//!
//! A document is self-contained: it carries the feature names and the
//! min-max scaler used at training time alongside the fuzzy parameters.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AnfisError, AnfisModel, ConsequentParams, GaussianForm, GaussianMf, RuleBase};
use crate::preprocess::Scaler;

pub const MODEL_DOCUMENT_VERSION: &str = "fasa-anfis/1";

#[derive(Debug, Error)]
pub enum DocumentError {
    #[error("malformed model document at byte {offset}: {message}")]
    Malformed { offset: usize, message: String },
    #[error("unsupported model document version {found:?} (expected {MODEL_DOCUMENT_VERSION:?})")]
    Version { found: String },
    #[error("model document is missing the \"version\" field")]
    MissingVersion,
    #[error("inconsistent model document: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    version: String,
    n_inputs: usize,
    mfs_per_input: usize,
    gaussian_form: GaussianForm,
    feature_names: Vec<String>,
    /// `[input][mf] = [a, c, σ]`
    memberships: Vec<Vec<[f64; 3]>>,
    /// One row per rule, `n_inputs` weights then bias.
    consequents: Vec<Vec<f64>>,
    threshold: f64,
    scaler: Option<Scaler>,
}

/// Converts a serde_json line/column position into a byte offset.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

fn malformed(text: &str, err: &serde_json::Error) -> DocumentError {
    DocumentError::Malformed {
        offset: byte_offset(text, err.line(), err.column()),
        message: err.to_string(),
    }
}

impl AnfisModel {
    /// Pretty-printed JSON document.
    pub fn to_document(&self) -> String {
        let doc = ModelDocument {
            version: MODEL_DOCUMENT_VERSION.to_string(),
            n_inputs: self.n_inputs(),
            mfs_per_input: self.rules.mfs_per_input(),
            gaussian_form: self.form,
            feature_names: self.feature_names.clone(),
            memberships: self
                .memberships
                .iter()
                .map(|mfs| {
                    mfs.iter()
                        .map(|m| [m.amplitude, m.center, m.sigma])
                        .collect()
                })
                .collect(),
            consequents: self.consequents.rows().to_vec(),
            threshold: self.threshold,
            scaler: self.scaler.clone(),
        };
        let mut text = serde_json::to_string_pretty(&doc).expect("model document serializes");
        text.push('\n');
        text
    }

    pub fn from_document(text: &str) -> Result<Self, AnfisError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| malformed(text, &e))?;
        match value.get("version") {
            None => return Err(DocumentError::MissingVersion.into()),
            Some(serde_json::Value::String(v)) if v == MODEL_DOCUMENT_VERSION => {}
            Some(other) => {
                let found = other
                    .as_str()
                    .map(str::to_string)
                    .unwrap_or_else(|| other.to_string());
                return Err(DocumentError::Version { found }.into());
            }
        }
        let doc: ModelDocument = serde_json::from_str(text).map_err(|e| malformed(text, &e))?;
        let inconsistent = |msg: String| AnfisError::from(DocumentError::Inconsistent(msg));
        if doc.memberships.len() != doc.n_inputs {
            return Err(inconsistent(format!(
                "{} membership lists for {} inputs",
                doc.memberships.len(),
                doc.n_inputs
            )));
        }
        let rules = RuleBase::grid(doc.n_inputs, doc.mfs_per_input)?;
        let memberships: Vec<Vec<GaussianMf>> = doc
            .memberships
            .iter()
            .map(|mfs| {
                mfs.iter()
                    .map(|p| GaussianMf {
                        amplitude: p[0],
                        center: p[1],
                        sigma: p[2],
                    })
                    .collect()
            })
            .collect();
        if doc.consequents.len() != rules.len() {
            return Err(inconsistent(format!(
                "{} consequent rows for {} rules",
                doc.consequents.len(),
                rules.len()
            )));
        }
        let consequents = ConsequentParams::from_rows(doc.n_inputs, doc.consequents)?;
        let model = AnfisModel {
            feature_names: doc.feature_names,
            form: doc.gaussian_form,
            memberships,
            rules,
            consequents,
            threshold: doc.threshold,
            scaler: doc.scaler,
        };
        model.validate().map_err(|e| inconsistent(e.to_string()))?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_model() -> AnfisModel {
        let mut m = AnfisModel::init_grid(2, 2, &[(0.0, 1.0), (-1.0, 3.0)]).unwrap();
        m.consequents = ConsequentParams::from_rows(
            2,
            vec![
                vec![0.1, -0.2, 0.3],
                vec![1.0 / 3.0, 2.0f64.sqrt(), -7.5e-9],
                vec![0.0, 0.0, 1.0],
                vec![-4.0, 5.5, std::f64::consts::PI],
            ],
        )
        .unwrap();
        m.set_feature_names(vec!["syn_ratio".into(), "ack_ratio".into()])
            .unwrap();
        m
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let m = sample_model();
        let back = AnfisModel::from_document(&m.to_document()).unwrap();
        assert_eq!(back, m);
        for x in [[0.1, 0.2], [0.77, -0.4], [1e-3, 2.9]] {
            assert_eq!(
                back.predict_raw(&x).unwrap().to_bits(),
                m.predict_raw(&x).unwrap().to_bits()
            );
        }
    }

    #[test]
    fn truncated_document_reports_offset() {
        let text = sample_model().to_document();
        let cut = &text[..text.len() / 2];
        let err = AnfisModel::from_document(cut).unwrap_err();
        match err {
            AnfisError::Document(DocumentError::Malformed { offset, .. }) => {
                assert!(offset > 0 && offset <= cut.len(), "offset {offset}");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(AnfisModel::from_document("")
            .unwrap_err()
            .to_string()
            .contains("byte 0"));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let text = sample_model()
            .to_document()
            .replace(MODEL_DOCUMENT_VERSION, "fasa-anfis/99");
        let err = AnfisModel::from_document(&text).unwrap_err();
        assert!(matches!(
            err,
            AnfisError::Document(DocumentError::Version { ref found }) if found == "fasa-anfis/99"
        ));
    }

    #[test]
    fn offset_conversion() {
        let t = "ab\ncde\nf";
        assert_eq!(byte_offset(t, 1, 1), 0);
        assert_eq!(byte_offset(t, 2, 2), 4);
        assert_eq!(byte_offset(t, 3, 1), 7);
    }
}
