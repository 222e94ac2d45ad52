use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::PreprocessError;

fn class_indices(labels: &[u8], rng: &mut ChaCha8Rng) -> [Vec<usize>; 2] {
    let mut by_class = [Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        by_class[usize::from(l.min(1))].push(i);
    }
    for c in &mut by_class {
        c.shuffle(rng);
    }
    by_class
}

/// Fold index in `0..k` for every sample. Each class is shuffled and dealt
/// round-robin; the dealer position carries over from one class to the next
/// so fold sizes stay within one of each other.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<Vec<usize>, PreprocessError> {
    if k < 2 {
        return Err(PreprocessError::InvalidConfig(format!(
            "k-fold needs k >= 2, got {k}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let by_class = class_indices(labels, &mut rng);
    let minority = by_class[0].len().min(by_class[1].len());
    if k > minority {
        return Err(PreprocessError::TooManyFolds { k, minority });
    }
    let mut folds = vec![0; labels.len()];
    let mut next = 0;
    for class in &by_class {
        for &i in class {
            folds[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok(folds)
}

/// Stratified train/test split; returns sorted `(train, test)` indices.
pub fn stratified_split(
    labels: &[u8],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), PreprocessError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(PreprocessError::InvalidConfig(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for class in class_indices(labels, &mut rng) {
        let n_test = (class.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&class[..n_test]);
        train.extend_from_slice(&class[n_test..]);
    }
    if train.is_empty() || test.is_empty() {
        return Err(PreprocessError::InvalidConfig(
            "split leaves an empty train or test set".into(),
        ));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// `n` sorted indices with class proportions preserved (largest remainder).
pub fn stratified_subsample(labels: &[u8], n: usize, seed: u64) -> Vec<usize> {
    if n >= labels.len() {
        return (0..labels.len()).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let by_class = class_indices(labels, &mut rng);
    let total = labels.len() as f64;
    let exact: Vec<f64> = by_class
        .iter()
        .map(|c| c.len() as f64 * n as f64 / total)
        .collect();
    let mut take: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    if take.iter().sum::<usize>() < n {
        let c = if exact[0].fract() >= exact[1].fract() {
            0
        } else {
            1
        };
        take[c] += 1;
    }
    let mut out: Vec<usize> = by_class
        .iter()
        .zip(&take)
        .flat_map(|(c, &t)| c[..t.min(c.len())].iter().copied())
        .collect();
    out.sort_unstable();
    out
}
