//! Central finite-difference gradient checker.

use crate::error::{Result, TensorError};
use crate::{Tape, Tensor, Var};

/// Denominator floor for relative errors, so entries whose true gradient is
/// numerically zero are judged on an absolute scale instead.
pub const DEFAULT_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Relative error per input, per element.
    pub errors: Vec<Vec<f64>>,
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    /// `(input, element)` of the largest error.
    pub worst: (usize, usize),
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>], grad: bool) -> Result<(Tape<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| if grad { tape.param(t) } else { tape.constant(t) }).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.scalar(out)?;
    if !v.is_finite() {
        return Err(TensorError::NonFinite(format!("function value {v}")));
    }
    Ok((tape, vars, out))
}

/// Compares the tape gradient of scalar `f` against central differences with step `h`.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    grad_check_with_floor(f, inputs, h, tol, DEFAULT_FLOOR)
}

pub fn grad_check_with_floor<F>(f: F, inputs: &[Tensor<f64>], h: f64, tol: f64, floor: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&h) {
        return Err(TensorError::config("grad_check", format!("step {h} outside [1e-7, 1e-3]")));
    }
    let (mut tape, vars, out) = evaluate(&f, inputs, true)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();
    drop(tape);

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut errors = Vec::with_capacity(inputs.len());
    let (mut max, mut sum, mut count, mut worst) = (0.0f64, 0.0f64, 0usize, (0, 0));
    for i in 0..inputs.len() {
        let mut errs = Vec::with_capacity(inputs[i].numel());
        for j in 0..inputs[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let (t, _, o) = evaluate(&f, &work, false)?;
            let plus = t.scalar(o)?;
            work[i].data_mut()[j] = orig - h;
            let (t, _, o) = evaluate(&f, &work, false)?;
            let minus = t.scalar(o)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[i][j];
            if !a.is_finite() {
                return Err(TensorError::NonFinite(format!("analytic gradient of input {i} element {j}")));
            }
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if err > max {
                max = err;
                worst = (i, j);
            }
            sum += err;
            count += 1;
            errs.push(err);
        }
        errors.push(errs);
    }
    Ok(GradCheckReport {
        errors,
        max_rel_err: max,
        mean_rel_err: if count == 0 { 0.0 } else { sum / count as f64 },
        worst,
        tol,
    })
}
