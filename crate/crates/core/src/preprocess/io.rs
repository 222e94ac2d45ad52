use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::clean::{parse_label, select_subset};
use super::{
    column_key, Dataset, Labels, PreprocessError, TextColumn, CATEGORICAL_COLUMNS,
    DEFAULT_LABEL_COLUMN,
};

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub label_column: String,
    /// Columns always read as text regardless of content.
    pub text_columns: Vec<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            label_column: DEFAULT_LABEL_COLUMN.into(),
            text_columns: CATEGORICAL_COLUMNS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

fn open(path: &Path) -> Result<csv::Reader<File>, PreprocessError> {
    let file = File::open(path).map_err(|source| PreprocessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file))
}

fn parse_number(raw: &str) -> Option<f64> {
    let t = raw.trim();
    if t.is_empty() {
        return Some(f64::NAN);
    }
    t.parse::<f64>().ok()
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ColumnKind {
    Numeric,
    Text,
    Label,
}

struct Layout {
    names: Vec<String>,
    kinds: Vec<ColumnKind>,
}

impl Layout {
    fn from_header(
        header: &csv::StringRecord,
        first: Option<&csv::StringRecord>,
        opts: &LoadOptions,
    ) -> Result<Self, PreprocessError> {
        let label_key = column_key(&opts.label_column);
        let text_keys: HashSet<String> = opts.text_columns.iter().map(|c| column_key(c)).collect();
        let names: Vec<String> = header.iter().map(|h| h.trim().to_string()).collect();
        let mut kinds = Vec::with_capacity(names.len());
        let mut found_label = false;
        for (i, name) in names.iter().enumerate() {
            let key = column_key(name);
            let kind = if key == label_key && !found_label {
                found_label = true;
                ColumnKind::Label
            } else if text_keys.contains(&key) {
                ColumnKind::Text
            } else {
                match first.and_then(|r| r.get(i)) {
                    Some(v) if parse_number(v).is_none() => ColumnKind::Text,
                    _ => ColumnKind::Numeric,
                }
            };
            kinds.push(kind);
        }
        if !found_label {
            return Err(PreprocessError::MissingLabelColumn(
                opts.label_column.clone(),
            ));
        }
        Ok(Self { names, kinds })
    }

    fn label_index(&self) -> usize {
        self.kinds
            .iter()
            .position(|k| *k == ColumnKind::Label)
            .expect("layout always has a label column")
    }

    fn keys(&self) -> Vec<String> {
        self.names.iter().map(|n| column_key(n)).collect()
    }

    fn empty_dataset(&self) -> Dataset {
        let mut ds = Dataset {
            columns: Vec::new(),
            rows: Vec::new(),
            labels: Labels::Raw(Vec::new()),
            text_columns: Vec::new(),
            notes: Vec::new(),
        };
        for (name, kind) in self.names.iter().zip(&self.kinds) {
            match kind {
                ColumnKind::Numeric => ds.columns.push(name.clone()),
                ColumnKind::Text => ds.text_columns.push(TextColumn {
                    name: name.clone(),
                    values: Vec::new(),
                }),
                ColumnKind::Label => {}
            }
        }
        ds
    }

    fn push_record(
        &self,
        ds: &mut Dataset,
        rec: &csv::StringRecord,
    ) -> Result<(), PreprocessError> {
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != self.names.len() {
            return Err(PreprocessError::RowLength {
                line,
                expected: self.names.len(),
                found: rec.len(),
            });
        }
        let mut row = Vec::with_capacity(ds.columns.len());
        let mut text_idx = 0;
        for ((value, kind), name) in rec.iter().zip(&self.kinds).zip(&self.names) {
            match kind {
                ColumnKind::Numeric => {
                    row.push(parse_number(value).ok_or_else(|| PreprocessError::Parse {
                        line,
                        column: name.clone(),
                        value: value.to_string(),
                    })?);
                }
                ColumnKind::Text => {
                    ds.text_columns[text_idx]
                        .values
                        .push(value.trim().to_string());
                    text_idx += 1;
                }
                ColumnKind::Label => {
                    if let Labels::Raw(v) = &mut ds.labels {
                        v.push(value.trim().to_string());
                    }
                }
            }
        }
        ds.rows.push(row);
        Ok(())
    }
}

/// Reads a headered CSV. Numeric cells may be `inf`/`Infinity`/`NaN`; empty
/// cells read as NaN. Labels are kept as raw strings until
/// [`encode_labels`](super::encode_labels).
pub fn load_csv(path: &Path, opts: &LoadOptions) -> Result<Dataset, PreprocessError> {
    let mut reader = open(path)?;
    let header = reader.headers()?.clone();
    let mut records = reader.records();
    let first = records.next().transpose()?;
    let layout = Layout::from_header(&header, first.as_ref(), opts)?;
    let mut ds = layout.empty_dataset();
    if let Some(rec) = first {
        layout.push_record(&mut ds, &rec)?;
    }
    for rec in records {
        layout.push_record(&mut ds, &rec?)?;
    }
    if ds.is_empty() {
        log::warn!("{}: no data rows", path.display());
        ds.notes
            .push(format!("{}: header only, no data rows", path.display()));
    } else {
        ds.notes.push(format!(
            "loaded {} rows from {}",
            ds.n_rows(),
            path.display()
        ));
    }
    Ok(ds)
}

/// Loads several CSVs with identical headers, keeping every benign row and a
/// seeded uniform subset of SYN rows so that benign rows make up
/// `benign_fraction` of the result. Only selected rows are materialized.
///
/// The selection matches [`resample`](super::resample) applied to the
/// concatenation of the files.
pub fn load_csv_resampled(
    paths: &[&Path],
    opts: &LoadOptions,
    benign_fraction: f64,
    seed: u64,
) -> Result<Dataset, PreprocessError> {
    if !(benign_fraction > 0.0 && benign_fraction < 1.0) {
        return Err(PreprocessError::InvalidConfig(format!(
            "benign fraction must lie in (0, 1), got {benign_fraction}"
        )));
    }
    // Pass 1: class counts.
    let mut keys: Option<Vec<String>> = None;
    let (mut benign, mut syn) = (0usize, 0usize);
    for path in paths {
        let mut reader = open(path)?;
        let header = reader.headers()?.clone();
        let mut records = reader.records();
        let first = records.next().transpose()?;
        let layout = Layout::from_header(&header, first.as_ref(), opts)?;
        match &keys {
            None => keys = Some(layout.keys()),
            Some(k) if *k != layout.keys() => {
                return Err(PreprocessError::HeaderMismatch(path.display().to_string()))
            }
            _ => {}
        }
        let li = layout.label_index();
        for rec in first.into_iter().map(Ok).chain(records) {
            let rec = rec?;
            match parse_label(rec.get(li).unwrap_or(""))? {
                0 => benign += 1,
                _ => syn += 1,
            }
        }
    }
    if benign == 0 || syn == 0 {
        return Err(PreprocessError::SingleClass);
    }
    let needed = super::clean::syn_target(benign, benign_fraction);
    if needed > syn {
        return Err(PreprocessError::FractionUnreachable {
            fraction: benign_fraction,
            needed,
            available: syn,
        });
    }
    let chosen = select_subset(syn, needed, seed);

    // Pass 2: materialize.
    let mut out: Option<Dataset> = None;
    let mut syn_ordinal = 0usize;
    let mut cursor = 0usize;
    for path in paths {
        let mut reader = open(path)?;
        let header = reader.headers()?.clone();
        let mut records = reader.records();
        let first = records.next().transpose()?;
        let layout = Layout::from_header(&header, first.as_ref(), opts)?;
        let ds = out.get_or_insert_with(|| layout.empty_dataset());
        let li = layout.label_index();
        for rec in first.into_iter().map(Ok).chain(records) {
            let rec = rec?;
            let keep = match parse_label(rec.get(li).unwrap_or(""))? {
                0 => true,
                _ => {
                    let hit = cursor < chosen.len() && chosen[cursor] == syn_ordinal;
                    if hit {
                        cursor += 1;
                    }
                    syn_ordinal += 1;
                    hit
                }
            };
            if keep {
                layout.push_record(ds, &rec)?;
            }
        }
    }
    let mut ds = out.expect("at least one path");
    ds.notes.push(format!(
        "streamed resample: kept {benign} benign and {needed} of {syn} SYN rows (benign fraction {benign_fraction})"
    ));
    Ok(ds)
}

/// Writes numeric columns plus an encoded `Label` column.
pub fn write_csv(ds: &Dataset, path: &Path, label_column: &str) -> Result<(), PreprocessError> {
    let labels = ds.encoded_labels()?;
    let io_err = |source| PreprocessError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    let mut header: Vec<&str> = ds.columns.iter().map(String::as_str).collect();
    header.push(label_column);
    let mut wr = csv::Writer::from_writer(&mut w);
    wr.write_record(&header)?;
    let mut fields = Vec::with_capacity(header.len());
    for (row, label) in ds.rows.iter().zip(labels) {
        fields.clear();
        fields.extend(row.iter().map(|v| v.to_string()));
        fields.push(label.to_string());
        wr.write_record(&fields)?;
    }
    wr.flush().map_err(io_err)?;
    drop(wr);
    w.flush().map_err(io_err)?;
    Ok(())
}
