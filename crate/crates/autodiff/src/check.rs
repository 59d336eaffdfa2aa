//! Central finite-difference gradient checking.
//!
//! These helpers only ever evaluate the forward value of the loss, so they
//! serve as an oracle that is independent of the reverse sweep.

use crate::tensor::ParamStore;

/// Central-difference estimate of `d loss / d params`, flattened in store
/// order.
pub fn numeric_gradient(
    params: &ParamStore,
    step: f64,
    mut loss: impl FnMut(&ParamStore) -> f64,
) -> Vec<f64> {
    let base = params.flat_values();
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(base.len());
    let mut work = base.clone();
    for i in 0..base.len() {
        work[i] = base[i] + step;
        probe.load_flat(&work).expect("same layout");
        let plus = loss(&probe);
        work[i] = base[i] - step;
        probe.load_flat(&work).expect("same layout");
        let minus = loss(&probe);
        work[i] = base[i];
        out.push((plus - minus) / (2.0 * step));
    }
    out
}

/// All accumulated gradients flattened in store order (zeros where absent).
pub fn flat_grads(params: &ParamStore) -> Vec<f64> {
    params
        .iter()
        .flat_map(|(_, t)| match t.grad() {
            Some(g) => g.to_vec(),
            None => vec![0.0; t.len()],
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`; zero when both are zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}
