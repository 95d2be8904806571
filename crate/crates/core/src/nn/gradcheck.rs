use super::Params;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// (tensor index, element index) of the worst relative error.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Compares `analytic` against central differences of `loss` with step `h`
/// for every parameter. Relative error is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<P, F>(params: &P, analytic: &P, mut loss: F, h: f64) -> GradCheckReport
where
    P: Params + Clone,
    F: FnMut(&P) -> f64,
{
    let mut probe = params.clone();
    let analytic = analytic.tensors();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    for (ti, grad) in analytic.iter().enumerate() {
        for (j, &a) in grad.iter().enumerate() {
            let orig = probe.tensors()[ti][j];
            probe.tensors_mut()[ti][j] = orig + h;
            let up = loss(&probe);
            probe.tensors_mut()[ti][j] = orig - h;
            let down = loss(&probe);
            probe.tensors_mut()[ti][j] = orig;

            let numeric = (up - down) / (2.0 * h);
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (ti, j);
            }
        }
    }
    report
}
