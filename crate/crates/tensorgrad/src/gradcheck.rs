//! Central finite-difference gradient checking in double precision.

use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Floor on the relative-error denominator.
pub const FD_EPS: f64 = 1e-8;
/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input index, flat coordinate) of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_EPS)
}

fn eval_scalar<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(TensorError::NonScalarFunction(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Compares tape gradients of `f` against central differences with step `h`.
///
/// Returns the maximum over every input coordinate of
/// `|analytic - numeric| / max(|analytic|, |numeric|, FD_EPS)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    check_impl(f, inputs, h, &vec![Coverage::All; inputs.len()])
}

/// Which coordinates of each input to perturb.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coverage {
    All,
    /// At most this many evenly strided coordinates.
    Strided(usize),
    /// The coordinates with the largest analytic gradient magnitude.
    Largest(usize),
    None,
}

impl Coverage {
    fn select(self, analytic: &Tensor<f64>) -> Vec<usize> {
        let n = analytic.numel();
        match self {
            Coverage::All => (0..n).collect(),
            Coverage::Strided(p) if p > 0 => (0..n).step_by(n.div_ceil(p).max(1)).collect(),
            Coverage::Largest(p) => {
                let mut idx: Vec<usize> = (0..n).collect();
                let g = analytic.data();
                idx.sort_by(|&a, &b| g[b].abs().total_cmp(&g[a].abs()).then(a.cmp(&b)));
                idx.truncate(p);
                idx.sort_unstable();
                idx
            }
            _ => Vec::new(),
        }
    }
}

/// Like [`grad_check`] but perturbs only the coordinates picked by `coverage[i]` for input `i`.
pub fn grad_check_coverage<F>(
    f: F,
    inputs: &[Tensor<f64>],
    h: f64,
    coverage: &[Coverage],
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if coverage.len() != inputs.len() {
        return Err(TensorError::invalid("grad_check", "one coverage entry per input required"));
    }
    check_impl(f, inputs, h, coverage)
}

/// Like [`grad_check`] but perturbs at most `per_input` evenly strided
/// coordinates of each input.
pub fn grad_check_sampled<F>(
    f: F,
    inputs: &[Tensor<f64>],
    h: f64,
    per_input: usize,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    check_impl(f, inputs, h, &vec![Coverage::Strided(per_input); inputs.len()])
}

fn check_impl<F>(f: F, inputs: &[Tensor<f64>], h: f64, coverage: &[Coverage]) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(TensorError::invalid("grad_check", "step must be positive"));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let shape = tape.value(out).shape().to_vec();
    if tape.value(out).numel() != 1 {
        return Err(TensorError::NonScalarFunction(shape));
    }
    tape.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (ii, v) in vars.iter().enumerate() {
        let analytic = tape.grad(*v).expect("leaf has a gradient").clone();
        for k in coverage[ii].select(&analytic) {
            let x0 = inputs[ii].data()[k];
            work[ii].data_mut()[k] = x0 + h;
            let fp = eval_scalar(&f, &work)?;
            work[ii].data_mut()[k] = x0 - h;
            let fm = eval_scalar(&f, &work)?;
            work[ii].data_mut()[k] = x0;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.data()[k];
            let err = relative_error(a, numeric);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((ii, k));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
