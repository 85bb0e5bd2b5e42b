//! Central finite-difference check of analytic gradients.

use rand::seq::index::sample;
use rand::Rng;

use super::Parameters;

/// Parameters below this magnitude are compared absolutely.
const GRAD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Parameters skipped because the perturbation crossed a relu kink.
    pub skipped: usize,
}

/// |a − n| / max(|a|, |n|, 1e-6). A sign flip scores 2.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Compares `analytic` (flat, in parameter order) against central
/// differences of `loss` at step `eps`.
///
/// `loss` returns the scalar loss and a relu activation pattern; a
/// parameter whose ±eps perturbations yield different patterns sits on a
/// kink with no defined derivative and is skipped. With `max_params` set and
/// smaller than the parameter count, a random subset of that size is checked.
pub fn gradient_check<M, F, R>(
    model: &M,
    loss: F,
    analytic: &[f64],
    eps: f64,
    max_params: Option<usize>,
    rng: &mut R,
) -> GradCheckReport
where
    M: Parameters + Clone,
    F: Fn(&M) -> (f64, Vec<i8>),
    R: Rng + ?Sized,
{
    let base = model.flat_params();
    assert_eq!(base.len(), analytic.len(), "gradient length");
    let indices: Vec<usize> = match max_params {
        Some(n) if n < base.len() => sample(rng, base.len(), n).into_vec(),
        _ => (0..base.len()).collect(),
    };
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut params = base.clone();
    for i in indices {
        params[i] = base[i] + eps;
        probe.set_flat_params(&params);
        let (plus, pattern_plus) = loss(&probe);
        params[i] = base[i] - eps;
        probe.set_flat_params(&params);
        let (minus, pattern_minus) = loss(&probe);
        params[i] = base[i];
        if pattern_plus != pattern_minus {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * eps);
        report.max_relative_error = report.max_relative_error.max(relative_error(analytic[i], numeric));
        report.checked += 1;
    }
    report
}
