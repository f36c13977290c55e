//! Central finite-difference oracle for tape gradients.

use super::matrix::DenseMatrix;
use super::tape::{Tape, Var};
use crate::error::Result;

/// Denominator guard in the relative-error measure.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |g_analytic − g_fd| / (|g_fd| + 1e-8)` over every checked entry.
    pub max_rel_error: f64,
    /// `(input index, flat entry index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub entries_checked: usize,
}

/// Compares reverse-mode gradients of `build` against central differences.
///
/// `build` receives a fresh tape with every input registered as a leaf, in
/// order, and must return a scalar. The numeric side only runs forward passes.
pub fn check_gradients<F>(inputs: &[DenseMatrix], build: F, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let evaluate = |values: &[DenseMatrix]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.leaf(v.clone())).collect();
        let out = build(&mut tape, &vars)?;
        tape.scalar(out)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.leaf(v.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let analytic = tape.backward(out)?.into_leaf_grads();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        entries_checked: 0,
    };
    let mut probe: Vec<DenseMatrix> = inputs.to_vec();
    for (which, grad) in analytic.iter().enumerate() {
        for k in 0..probe[which].len() {
            let original = probe[which].as_slice()[k];
            probe[which].as_mut_slice()[k] = original + step;
            let plus = evaluate(&probe)?;
            probe[which].as_mut_slice()[k] = original - step;
            let minus = evaluate(&probe)?;
            probe[which].as_mut_slice()[k] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let exact = grad.as_slice()[k];
            let rel = (exact - numeric).abs() / (numeric.abs() + REL_ERROR_FLOOR);
            report.entries_checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = rel;
                report.worst = Some((which, k));
                report.analytic_at_worst = exact;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}
