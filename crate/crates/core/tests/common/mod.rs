//! Reference models and fixtures shared by the property tests and the
//! acceptance runner. Each test binary uses a different subset.
#![allow(dead_code)]

pub mod anfis;
pub mod data;
pub mod flow;
pub mod oracle;
