//! Central finite differences for verifying analytic gradients.

use crate::tensor::{Gradients, ParamStore};

pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let plus = f(&probe);
            probe[i] = x[i] - h;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// `‖a − n‖ / max(‖a‖ + ‖n‖, floor)`. The floor keeps groups whose true
/// gradient is (near) zero from turning finite-difference noise into a large ratio.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    const FLOOR: f64 = 1e-6;
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / scale.max(FLOOR)
}

#[derive(Debug, Clone)]
pub struct GroupError {
    pub name: String,
    pub checked: usize,
    pub relative_error: f64,
}

/// Compares `analytic` against central differences of `loss` for every
/// parameter tensor, probing at most `max_coords` evenly spaced coordinates each.
pub fn check_params(
    store: &ParamStore,
    analytic: &Gradients,
    loss: impl Fn(&ParamStore) -> f64,
    h: f64,
    max_coords: usize,
) -> Vec<GroupError> {
    let mut out = Vec::new();
    let mut probe = store.clone();
    for (gi, name) in store.names().iter().enumerate() {
        let n = store.values()[gi].data.len();
        let stride = n.div_ceil(max_coords.max(1)).max(1);
        let coords: Vec<usize> = (0..n).step_by(stride).collect();
        let mut a = Vec::with_capacity(coords.len());
        let mut num = Vec::with_capacity(coords.len());
        for &j in &coords {
            let orig = store.values()[gi].data[j];
            probe.values_mut()[gi].data[j] = orig + h;
            let plus = loss(&probe);
            probe.values_mut()[gi].data[j] = orig - h;
            let minus = loss(&probe);
            probe.values_mut()[gi].data[j] = orig;
            num.push((plus - minus) / (2.0 * h));
            a.push(analytic.0[gi].data[j]);
        }
        out.push(GroupError {
            name: name.clone(),
            checked: coords.len(),
            relative_error: relative_error(&a, &num),
        });
    }
    out
}
