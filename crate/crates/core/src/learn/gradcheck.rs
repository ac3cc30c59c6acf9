/// Outcome of comparing analytic gradients against central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Relative error with the denominator floored at 1e-3, so gradients that are
/// numerically zero on both sides compare as equal.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Central-difference check of `analytic` (dLoss/dParams) at `params`, with
/// step `h`. `loss` evaluates the loss at a perturbed flat parameter vector.
pub fn finite_difference_check(
    params: &[f64],
    analytic: &[f64],
    h: f64,
    mut loss: impl FnMut(&[f64]) -> f64,
) -> GradCheck {
    assert_eq!(params.len(), analytic.len(), "one analytic derivative per parameter");
    let mut p = params.to_vec();
    let mut max_rel_error: f64 = 0.0;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = loss(&p);
        p[i] = orig - h;
        let down = loss(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        max_rel_error = max_rel_error.max(relative_error(analytic[i], numeric));
    }
    GradCheck { max_rel_error, checked: p.len() }
}
