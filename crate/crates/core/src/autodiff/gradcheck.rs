use super::{AutodiffError, Matrix, Tape, Var};

/// Outcome of comparing tape gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over coordinates of `|ad - fd| / (|fd| + 1e-8)`.
    pub max_relative_error: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

/// Checks the gradient of `f` at `point` against central finite differences
/// with the given `step`.
///
/// `f` receives a fresh tape and one leaf per input matrix and must return a
/// scalar node. Results are meaningless at kinks of `f` (e.g. a clamp exactly
/// at its threshold); that is not reported as an error.
pub fn grad_check<F>(f: F, point: &[Matrix], step: f64) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    let eval = |inputs: &[Matrix]| -> Result<f64, AutodiffError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|m| tape.constant(m.clone())).collect();
        let root = f(&mut tape, &vars)?;
        Ok(tape.value(root).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|m| tape.leaf(m.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let grads = tape.backward(root)?;

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut probe: Vec<Matrix> = point.to_vec();
    for (input, (&var, m)) in vars.iter().zip(point).enumerate() {
        let analytic = grads.wrt(var, m.shape());
        for k in 0..m.len() {
            let orig = m.as_slice()[k];
            probe[input].as_mut_slice()[k] = orig + step;
            let up = eval(&probe)?;
            probe[input].as_mut_slice()[k] = orig - step;
            let down = eval(&probe)?;
            probe[input].as_mut_slice()[k] = orig;

            let numeric = (up - down) / (2.0 * step);
            let ad = analytic.as_slice()[k];
            let rel = (ad - numeric).abs() / (numeric.abs() + 1e-8);
            if rel > report.max_relative_error || rel.is_nan() {
                report = GradCheckReport {
                    max_relative_error: rel,
                    worst: (input, k),
                    analytic: ad,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}
