use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` uniform points in the unit square kept when `label` returns a class.
pub fn dataset(
    n: usize,
    seed: u64,
    label: impl Fn(f64, f64) -> Option<u8>,
) -> (Vec<Vec<f64>>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut x, mut y) = (Vec::new(), Vec::new());
    while x.len() < n {
        let (a, b): (f64, f64) = (rng.random(), rng.random());
        if let Some(l) = label(a, b) {
            x.push(vec![a, b]);
            y.push(l);
        }
    }
    (x, y)
}

/// `x1 + x2 > 1`, with a 0.05 empty margin around the boundary.
pub fn separable(a: f64, b: f64) -> Option<u8> {
    let s = a + b - 1.0;
    (s.abs() > 0.05).then_some(u8::from(s > 0.0))
}

/// Opposite quadrants share a class, with a 0.05 margin on both axes.
pub fn xor(a: f64, b: f64) -> Option<u8> {
    ((a - 0.5).abs() > 0.05 && (b - 0.5).abs() > 0.05).then_some(u8::from((a > 0.5) != (b > 0.5)))
}
