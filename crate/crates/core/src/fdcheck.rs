//! Central finite-difference oracle used by the test suites to validate
//! reverse-mode gradients. Deliberately knows nothing about tapes: it only
//! perturbs raw arrays and re-evaluates a closure.

use crate::array::NumArray;

/// Central differences of a scalar function at `at`, step `h` per coordinate.
pub fn central_diff(
    mut f: impl FnMut(&[NumArray]) -> f64,
    at: &[NumArray],
    h: f64,
) -> Vec<NumArray> {
    let mut grads = Vec::with_capacity(at.len());
    for p in 0..at.len() {
        let mut g = NumArray::zeros(at[p].shape().to_vec());
        for i in 0..at[p].numel() {
            let mut plus = at.to_vec();
            plus[p].data_mut()[i] += h;
            let mut minus = at.to_vec();
            minus[p].data_mut()[i] -= h;
            g.data_mut()[i] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        grads.push(g);
    }
    grads
}

/// Worst per-coordinate relative discrepancy between two gradient sets.
/// `floor` guards the denominator so near-zero coordinates are compared on
/// an absolute scale.
pub fn max_rel_err(a: &[NumArray], b: &[NumArray], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut worst: f64 = 0.0;
    for (ga, gb) in a.iter().zip(b) {
        assert_eq!(ga.shape(), gb.shape());
        for (&x, &y) in ga.data().iter().zip(gb.data()) {
            let denom = x.abs().max(y.abs()).max(floor);
            worst = worst.max((x - y).abs() / denom);
        }
    }
    worst
}
