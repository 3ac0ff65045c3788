//! Central-difference gradient verification over a flat parameter vector.

/// Worst observed disagreement between analytic and numeric gradients.
#[derive(Clone, Copy, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
}

/// Compares `analytic` against central differences of `f` at `theta` for the
/// given coordinate indices. Relative error per coordinate is
/// |a - n| / max(|a|, |n|, 1e-8).
pub fn finite_diff_check(
    mut f: impl FnMut(&[f64]) -> f64,
    theta: &[f64],
    analytic: &[f64],
    indices: &[usize],
    h: f64,
) -> GradCheckReport {
    assert_eq!(
        theta.len(),
        analytic.len(),
        "gradient length must match parameter length"
    );
    assert!(h > 0.0, "step size must be positive");
    let mut work = theta.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked: 0,
    };
    for &i in indices {
        let orig = work[i];
        work[i] = orig + h;
        let plus = f(&work);
        work[i] = orig - h;
        let minus = f(&work);
        work[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        report.checked += 1;
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_index = i;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    report
}
