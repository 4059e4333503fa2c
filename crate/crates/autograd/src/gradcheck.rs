//! Central finite-difference gradient checks.

use crate::error::{AutogradError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Outcome of comparing analytic and numerical gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// (input index, flat element index) of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
    /// Every perturbed entry, in the order checked.
    pub entries: Vec<EntryCheck>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntryCheck {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl EntryCheck {
    pub fn relative_error(&self) -> f64 {
        relative_error(self.analytic, self.numeric)
    }
}

/// `|a − n| / max(|a|, |n|, 1e−8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Checks `f` at `point` over every element; returns the max relative error.
pub fn grad_check<F>(f: F, point: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let report = grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(point), h, None)?;
    Ok(report.max_relative_error)
}

/// Checks a scalar function of several inputs.
///
/// With `max_entries = Some(m)`, at most `m` evenly spaced elements of each
/// input are perturbed, always including the first and last.
pub fn grad_check_many<F>(
    f: F,
    points: &[Tensor],
    h: f64,
    max_entries: Option<usize>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.param(p)).collect();
    let loss = f(&mut tape, &vars)?;
    if tape.value(loss).numel() != 1 {
        return Err(AutogradError::NotScalar(tape.shape(loss).to_vec()));
    }
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(points)
        .map(|(&v, p)| {
            tape.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; p.numel()])
        })
        .collect();
    drop(tape);

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|p| tape.param(p)).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: (0, 0),
        checked: 0,
        entries: Vec::new(),
    };
    let mut work: Vec<Tensor> = points.to_vec();
    for (input, grads) in analytic.iter().enumerate() {
        for idx in sample_indices(grads.len(), max_entries) {
            let orig = work[input].data()[idx];
            work[input].data_mut()[idx] = orig + h;
            let plus = eval(&work)?;
            work[input].data_mut()[idx] = orig - h;
            let minus = eval(&work)?;
            work[input].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(grads[idx], numeric);
            report.checked += 1;
            report.entries.push(EntryCheck {
                input,
                index: idx,
                analytic: grads[idx],
                numeric,
            });
            if err > report.max_relative_error || err.is_nan() {
                report.max_relative_error = err;
                report.worst = (input, idx);
            }
        }
    }
    Ok(report)
}

fn sample_indices(len: usize, max_entries: Option<usize>) -> Vec<usize> {
    match max_entries {
        Some(m) if m < len && m >= 2 => {
            let mut idx: Vec<usize> = (0..m).map(|i| i * (len - 1) / (m - 1)).collect();
            idx.dedup();
            idx
        }
        Some(1) if len > 1 => vec![0],
        _ => (0..len).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let p = Tensor::from_vec(vec![1.0, 2.0]);
        let err = grad_check(
            |t, x| {
                let sq = t.mul(x, x)?;
                t.sum(sq, None)
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn sampled_indices_cover_ends() {
        assert_eq!(sample_indices(10, Some(3)), vec![0, 4, 9]);
        assert_eq!(sample_indices(3, Some(10)), vec![0, 1, 2]);
        assert_eq!(sample_indices(4, None), vec![0, 1, 2, 3]);
    }
}
