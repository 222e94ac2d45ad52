use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    column_key, Dataset, Labels, PreprocessError, CATEGORICAL_COLUMNS, CONSTANT_COLUMNS,
    INIT_WIN_COLUMNS,
};

/// `BENIGN` → 0, `Syn` → 1 (case-insensitive); already-encoded `0`/`1` pass.
pub(crate) fn parse_label(raw: &str) -> Result<u8, PreprocessError> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "benign" | "0" => Ok(0),
        "syn" | "1" => Ok(1),
        _ => Err(PreprocessError::UnknownLabel(raw.trim().to_string())),
    }
}

pub fn encode_labels(mut ds: Dataset) -> Result<Dataset, PreprocessError> {
    if let Labels::Raw(raw) = &ds.labels {
        let encoded = raw
            .iter()
            .map(|s| parse_label(s))
            .collect::<Result<Vec<_>, _>>()?;
        ds.labels = Labels::Encoded(encoded);
        ds.notes.push("labels encoded: BENIGN=0, Syn=1".into());
    }
    Ok(ds)
}

/// SYN rows needed so benign rows form `fraction` of the total.
pub(crate) fn syn_target(benign: usize, fraction: f64) -> usize {
    (benign as f64 * (1.0 - fraction) / fraction).round() as usize
}

/// Seeded uniform choice of `k` of `n` positions, ascending.
pub fn select_subset(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, k.min(n)).into_vec();
    idx.sort_unstable();
    idx
}

/// Keeps every benign row and a seeded uniform subset of SYN rows. Row order
/// is preserved.
pub fn resample(ds: Dataset, benign_fraction: f64, seed: u64) -> Result<Dataset, PreprocessError> {
    if !(benign_fraction > 0.0 && benign_fraction < 1.0) {
        return Err(PreprocessError::InvalidConfig(format!(
            "benign fraction must lie in (0, 1), got {benign_fraction}"
        )));
    }
    let labels = ds.encoded_labels()?;
    let (benign, syn) = ds.class_counts()?;
    if benign == 0 || syn == 0 {
        return Err(PreprocessError::SingleClass);
    }
    let needed = syn_target(benign, benign_fraction);
    if needed > syn {
        return Err(PreprocessError::FractionUnreachable {
            fraction: benign_fraction,
            needed,
            available: syn,
        });
    }
    let chosen = select_subset(syn, needed, seed);
    let mut keep = Vec::with_capacity(labels.len());
    let (mut ordinal, mut cursor) = (0usize, 0usize);
    for &l in labels {
        if l == 0 {
            keep.push(true);
        } else {
            let hit = cursor < chosen.len() && chosen[cursor] == ordinal;
            cursor += usize::from(hit);
            ordinal += 1;
            keep.push(hit);
        }
    }
    let mut out = ds;
    out.retain_rows(&keep);
    out.notes.push(format!(
        "resampled: {benign} benign kept, {needed} of {syn} SYN kept (benign fraction {benign_fraction})"
    ));
    Ok(out)
}

fn is_constant(ds: &Dataset, col: usize) -> bool {
    let mut it = ds.rows.iter().map(|r| r[col]);
    let Some(first) = it.next() else {
        return false;
    };
    it.all(|v| v == first || (v.is_nan() && first.is_nan()))
}

/// Drops the listed flag/bulk columns and any other column holding a single
/// value.
pub fn drop_constant_columns(ds: Dataset) -> Dataset {
    let named: Vec<String> = CONSTANT_COLUMNS.iter().map(|s| s.to_string()).collect();
    drop_constant_columns_except(ds, &named, &[])
}

/// As [`drop_constant_columns`] with an explicit name list; `protected`
/// columns are never dropped for being constant.
pub fn drop_constant_columns_except(
    mut ds: Dataset,
    named: &[String],
    protected: &[String],
) -> Dataset {
    let named: HashSet<String> = named.iter().map(|n| column_key(n)).collect();
    let protected: HashSet<String> = protected.iter().map(|n| column_key(n)).collect();
    let mut dropped = Vec::new();
    let keep: Vec<usize> = (0..ds.columns.len())
        .filter(|&i| {
            let key = column_key(&ds.columns[i]);
            let drop = named.contains(&key) || (!protected.contains(&key) && is_constant(&ds, i));
            if drop {
                dropped.push(ds.columns[i].clone());
            }
            !drop
        })
        .collect();
    ds.retain_columns(&keep);
    let before = ds.text_columns.len();
    ds.text_columns.retain(|t| {
        let drop = named.contains(&column_key(&t.name));
        if drop {
            dropped.push(t.name.clone());
        }
        !drop
    });
    if !dropped.is_empty() || before != ds.text_columns.len() {
        ds.notes
            .push(format!("dropped constant columns: {}", dropped.join(", ")));
    }
    ds
}

/// Rewrites the `-1` initial-window sentinel to 0.
pub fn fix_init_win(mut ds: Dataset) -> Dataset {
    let cols: Vec<usize> = INIT_WIN_COLUMNS
        .iter()
        .filter_map(|c| ds.column_index(c))
        .collect();
    let mut fixed = 0usize;
    for row in &mut ds.rows {
        for &c in &cols {
            if row[c] == -1.0 {
                row[c] = 0.0;
                fixed += 1;
            }
        }
    }
    if fixed > 0 {
        ds.notes
            .push(format!("init window: {fixed} values of -1 set to 0"));
    }
    ds
}

/// Removes rows with NaN or ±∞ in any numeric column.
pub fn drop_nonfinite_rows(mut ds: Dataset) -> Dataset {
    let keep: Vec<bool> = ds
        .rows
        .iter()
        .map(|r| r.iter().all(|v| v.is_finite()))
        .collect();
    let removed = keep.iter().filter(|k| !**k).count();
    let had_rows = !ds.is_empty();
    ds.retain_rows(&keep);
    ds.notes
        .push(format!("dropped {removed} rows with NaN/inf"));
    if had_rows && ds.is_empty() {
        log::warn!("every row contained a non-finite value; dataset is now empty");
        ds.notes
            .push("warning: no rows left after non-finite filter".into());
    }
    ds
}

/// Drops the network-specific identifier columns, plus any remaining text
/// column.
pub fn drop_categorical(ds: Dataset) -> Dataset {
    let named: Vec<String> = CATEGORICAL_COLUMNS.iter().map(|s| s.to_string()).collect();
    drop_categorical_named(ds, &named)
}

pub fn drop_categorical_named(mut ds: Dataset, named: &[String]) -> Dataset {
    let named: HashSet<String> = named.iter().map(|n| column_key(n)).collect();
    let mut dropped: Vec<String> = ds.text_columns.drain(..).map(|t| t.name).collect();
    let keep: Vec<usize> = (0..ds.columns.len())
        .filter(|&i| {
            let drop = named.contains(&column_key(&ds.columns[i]));
            if drop {
                dropped.push(ds.columns[i].clone());
            }
            !drop
        })
        .collect();
    ds.retain_columns(&keep);
    if !dropped.is_empty() {
        ds.notes.push(format!(
            "dropped categorical columns: {}",
            dropped.join(", ")
        ));
    }
    ds
}
