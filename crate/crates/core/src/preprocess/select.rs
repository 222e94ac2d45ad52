use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{column_key, Dataset, PreprocessError};

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa.sqrt() * sbb.sqrt())
}

/// Drops every column whose |Pearson r| with an already kept column exceeds
/// `threshold`, scanning left to right.
pub fn prune_correlated(ds: Dataset, threshold: f64) -> Dataset {
    prune_correlated_with_priority(ds, threshold, &[])
}

/// As [`prune_correlated`], but columns named in `priority` are scanned
/// first (in their listed order). Surviving columns keep their original
/// positions.
pub fn prune_correlated_with_priority(
    mut ds: Dataset,
    threshold: f64,
    priority: &[String],
) -> Dataset {
    if ds.n_rows() < 2 {
        return ds;
    }
    let mut order: Vec<usize> = Vec::with_capacity(ds.columns.len());
    for name in priority {
        if let Some(i) = ds.column_index(name) {
            if !order.contains(&i) {
                order.push(i);
            }
        }
    }
    for i in 0..ds.columns.len() {
        if !order.contains(&i) {
            order.push(i);
        }
    }

    let columns: Vec<Vec<f64>> = (0..ds.columns.len()).map(|i| ds.column(i)).collect();
    let mut kept: Vec<usize> = Vec::new();
    let mut dropped = Vec::new();
    for &i in &order {
        let clash = kept
            .iter()
            .find(|&&k| pearson(&columns[k], &columns[i]).abs() > threshold);
        match clash {
            Some(&k) => dropped.push(format!("{} (vs {})", ds.columns[i], ds.columns[k])),
            None => kept.push(i),
        }
    }
    kept.sort_unstable();
    ds.retain_columns(&kept);
    if !dropped.is_empty() {
        ds.notes.push(format!(
            "dropped correlated columns (|r| > {threshold}): {}",
            dropped.join(", ")
        ));
    }
    ds
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub name: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankOptions {
    pub trees: usize,
    pub max_depth: usize,
    pub seed: u64,
    /// Bootstrap size cap per tree.
    pub max_samples: usize,
    /// Nodes smaller than this are not split.
    pub min_split: usize,
}

impl Default for RankOptions {
    fn default() -> Self {
        Self {
            trees: 10,
            max_depth: 4,
            seed: 0,
            max_samples: 5000,
            min_split: 2,
        }
    }
}

fn gini(pos: f64, total: f64) -> f64 {
    if total == 0.0 {
        return 0.0;
    }
    let p = pos / total;
    2.0 * p * (1.0 - p)
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

fn best_split(ds: &Dataset, labels: &[u8], idx: &[usize]) -> Option<Split> {
    let n = idx.len() as f64;
    let pos_total = idx.iter().filter(|&&i| labels[i] == 1).count() as f64;
    let parent = gini(pos_total, n);
    if parent == 0.0 {
        return None;
    }
    let mut best: Option<Split> = None;
    let mut sorted = idx.to_vec();
    for f in 0..ds.columns.len() {
        sorted.sort_by(|&a, &b| ds.rows[a][f].total_cmp(&ds.rows[b][f]).then(a.cmp(&b)));
        let mut left_pos = 0.0;
        for k in 0..sorted.len() - 1 {
            left_pos += f64::from(labels[sorted[k]]);
            let (lo, hi) = (ds.rows[sorted[k]][f], ds.rows[sorted[k + 1]][f]);
            if lo == hi {
                continue;
            }
            let nl = (k + 1) as f64;
            let nr = n - nl;
            let child = (nl * gini(left_pos, nl) + nr * gini(pos_total - left_pos, nr)) / n;
            let gain = n * (parent - child);
            if gain > best.as_ref().map_or(1e-12, |b| b.gain) {
                best = Some(Split {
                    feature: f,
                    threshold: lo + (hi - lo) / 2.0,
                    gain,
                });
            }
        }
    }
    best
}

fn grow(
    ds: &Dataset,
    labels: &[u8],
    idx: Vec<usize>,
    depth: usize,
    opts: &RankOptions,
    gains: &mut [f64],
) {
    if depth >= opts.max_depth || idx.len() < opts.min_split.max(2) {
        return;
    }
    let Some(split) = best_split(ds, labels, &idx) else {
        return;
    };
    gains[split.feature] += split.gain;
    let (left, right): (Vec<usize>, Vec<usize>) = idx
        .into_iter()
        .partition(|&i| ds.rows[i][split.feature] <= split.threshold);
    grow(ds, labels, left, depth + 1, opts, gains);
    grow(ds, labels, right, depth + 1, opts, gains);
}

/// Split-gain importance from bagged depth-limited CART trees (Gini),
/// normalized to sum 1, highest first.
pub fn rank_features(
    ds: &Dataset,
    opts: &RankOptions,
) -> Result<Vec<FeatureImportance>, PreprocessError> {
    if opts.trees == 0 || opts.max_depth == 0 || opts.max_samples == 0 {
        return Err(PreprocessError::InvalidConfig(
            "ranking needs trees, depth and sample cap >= 1".into(),
        ));
    }
    let labels = ds.encoded_labels()?;
    let (benign, syn) = ds.class_counts()?;
    if benign == 0 || syn == 0 {
        return Err(PreprocessError::SingleClass);
    }
    let n_features = ds.columns.len();
    let mut gains = vec![0.0; n_features];
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let draw = ds.n_rows().min(opts.max_samples);
    for _ in 0..opts.trees {
        let idx: Vec<usize> = (0..draw)
            .map(|_| rng.random_range(0..ds.n_rows()))
            .collect();
        grow(ds, labels, idx, 0, opts, &mut gains);
    }
    let total: f64 = gains.iter().sum();
    let mut ranked: Vec<FeatureImportance> = ds
        .columns
        .iter()
        .zip(&gains)
        .map(|(name, &g)| FeatureImportance {
            name: name.clone(),
            score: if total > 0.0 {
                g / total
            } else {
                1.0 / n_features as f64
            },
        })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(ranked)
}

/// Keeps exactly the named columns, in the given order.
pub fn select_features(mut ds: Dataset, names: &[String]) -> Result<Dataset, PreprocessError> {
    if names.is_empty() {
        return Err(PreprocessError::EmptySelection);
    }
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(column_key(n)) {
            return Err(PreprocessError::DuplicateFeature(n.clone()));
        }
    }
    let missing: Vec<String> = names
        .iter()
        .filter(|n| ds.column_index(n).is_none())
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(PreprocessError::MissingFeatures(missing));
    }
    let keep: Vec<usize> = names
        .iter()
        .map(|n| ds.column_index(n).expect("checked above"))
        .collect();
    ds.retain_columns(&keep);
    ds.notes
        .push(format!("selected {} features", ds.columns.len()));
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn from_columns(names: &[&str], cols: &[Vec<f64>], labels: Vec<u8>) -> Dataset {
        let rows = (0..cols[0].len())
            .map(|r| cols.iter().map(|c| c[r]).collect())
            .collect();
        Dataset::new(names.iter().map(|s| s.to_string()).collect(), rows, labels)
    }

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        (0..n).map(|_| normal.sample(&mut rng)).collect()
    }

    #[test]
    fn duplicate_column_dropped() {
        let a = noise(50, 1);
        let ds = from_columns(&["a", "b"], &[a.clone(), a], vec![0; 50]);
        assert_eq!(prune_correlated(ds, 0.8).columns, vec!["a"]);
    }

    #[test]
    fn independent_columns_kept() {
        let (a, b) = (noise(1000, 2), noise(1000, 3));
        assert!(pearson(&a, &b).abs() < 0.8);
        let ds = from_columns(&["a", "b"], &[a, b], vec![0; 1000]);
        assert_eq!(prune_correlated(ds, 0.8).columns, vec!["a", "b"]);
    }

    #[test]
    fn scaled_copy_dropped_and_idempotent() {
        let a = noise(200, 4);
        let eps = noise(200, 5);
        let b: Vec<f64> = a
            .iter()
            .zip(&eps)
            .map(|(x, e)| 2.0 * x + 1e-3 * e)
            .collect();
        let c = noise(200, 6);
        let ds = from_columns(&["a", "b", "c"], &[a, b, c], vec![0; 200]);
        let once = prune_correlated(ds, 0.8);
        assert_eq!(once.columns, vec!["a", "c"]);
        let mut twice = prune_correlated(once.clone(), 0.8);
        twice.notes = once.notes.clone();
        assert_eq!(twice, once);
    }

    #[test]
    fn priority_column_survives() {
        let a = noise(100, 7);
        let ds = from_columns(&["a", "b"], &[a.clone(), a], vec![0; 100]);
        let out = prune_correlated_with_priority(ds, 0.8, &["b".to_string()]);
        assert_eq!(out.columns, vec!["b"]);
    }

    #[test]
    fn leaky_feature_ranked_first() {
        let n = 400;
        let labels: Vec<u8> = (0..n).map(|i| (i % 3 == 0) as u8).collect();
        let leak: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
        let ds = from_columns(
            &["n1", "leak", "n2"],
            &[noise(n, 8), leak, noise(n, 9)],
            labels,
        );
        let ranked = rank_features(&ds, &RankOptions::default()).unwrap();
        assert_eq!(ranked[0].name, "leak");
        assert!(ranked[0].score > 0.999, "{}", ranked[0].score);
        let sum: f64 = ranked.iter().map(|r| r.score).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn informative_beats_noise() {
        let n = 600;
        let signal = noise(n, 10);
        let jitter = noise(n, 11);
        let labels: Vec<u8> = signal
            .iter()
            .zip(&jitter)
            .map(|(s, j)| (s + 0.3 * j > 0.0) as u8)
            .collect();
        let ds = from_columns(
            &["n1", "n2", "signal", "n3"],
            &[noise(n, 12), noise(n, 13), signal, noise(n, 14)],
            labels,
        );
        let opts = RankOptions {
            seed: 3,
            ..RankOptions::default()
        };
        let ranked = rank_features(&ds, &opts).unwrap();
        assert_eq!(ranked[0].name, "signal");
        assert_eq!(ranked, rank_features(&ds, &opts).unwrap());
    }

    #[test]
    fn single_class_rank_fails() {
        let ds = from_columns(&["a"], &[noise(10, 1)], vec![1; 10]);
        assert!(matches!(
            rank_features(&ds, &RankOptions::default()),
            Err(PreprocessError::SingleClass)
        ));
    }

    #[test]
    fn selection_rules() {
        let ds = from_columns(
            &["a", "b", "c"],
            &[vec![1.0], vec![2.0], vec![3.0]],
            vec![0],
        );
        let out = select_features(ds.clone(), &["c".into(), "a".into()]).unwrap();
        assert_eq!(out.columns, vec!["c", "a"]);
        assert_eq!(out.rows, vec![vec![3.0, 1.0]]);
        assert!(matches!(
            select_features(ds.clone(), &[]),
            Err(PreprocessError::EmptySelection)
        ));
        assert!(matches!(
            select_features(ds.clone(), &["a".into(), "A".into()]),
            Err(PreprocessError::DuplicateFeature(_))
        ));
        match select_features(ds, &["a".into(), "zz".into(), "yy".into()]) {
            Err(PreprocessError::MissingFeatures(m)) => assert_eq!(m, vec!["zz", "yy"]),
            other => panic!("{other:?}"),
        }
    }
}
