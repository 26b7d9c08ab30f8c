use super::shape::Tensor;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over components of `|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)`.
    pub max_rel_error: f64,
    /// (input, flat component) where the maximum was attained.
    pub worst: Option<(usize, usize)>,
    /// Set when the function value or a gradient was not finite; the
    /// check counts as failed.
    pub non_finite: Option<String>,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.non_finite.is_none() && self.max_rel_error <= tol
    }
}

fn evaluate<F>(f: &F, point: &[Tensor], requires_grad: bool) -> Result<(Tape, Vec<Var>, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let inputs: Vec<Var> = point.iter().map(|t| tape.leaf(t.clone(), requires_grad)).collect();
    let out = f(&mut tape, &inputs)?;
    Ok((tape, inputs, out))
}

fn scalar_of(tape: &Tape, v: Var) -> Result<f64> {
    tape.value(v)
        .item()
        .ok_or_else(|| Error::NonScalarRoot(tape.shape(v).clone()))
}

/// Analytic and central-difference derivative of one input component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentCheck {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl ComponentCheck {
    /// `|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)`.
    pub fn rel_error(&self) -> f64 {
        (self.analytic - self.numeric).abs() / (self.analytic.abs() + self.numeric.abs()).max(1e-8)
    }
}

/// Every component's analytic and finite-difference derivative, together
/// with `f(point)`. Non-finite values are returned as they are.
pub fn grad_components<F>(f: F, point: &[Tensor], step: f64) -> Result<(f64, Vec<ComponentCheck>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if step.is_nan() || step <= 0.0 {
        return Err(Error::invalid(format!("grad_check step must be positive, got {step}")));
    }
    let (mut tape, inputs, out) = evaluate(&f, point, true)?;
    let f0 = scalar_of(&tape, out)?;
    if !f0.is_finite() {
        return Ok((f0, Vec::new()));
    }
    tape.backward(out)?;
    let mut checks = Vec::new();
    let mut shifted = point.to_vec();
    for (i, &v) in inputs.iter().enumerate() {
        let g_ad = tape
            .grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(point[i].shape().clone()));
        for j in 0..point[i].numel() {
            let x = point[i].data()[j];
            shifted[i].data_mut()[j] = x + step;
            let (t, _, o) = evaluate(&f, &shifted, false)?;
            let fp = scalar_of(&t, o)?;
            shifted[i].data_mut()[j] = x - step;
            let (t, _, o) = evaluate(&f, &shifted, false)?;
            let fm = scalar_of(&t, o)?;
            shifted[i].data_mut()[j] = x;
            checks.push(ComponentCheck {
                input: i,
                index: j,
                analytic: g_ad.data()[j],
                numeric: (fp - fm) / (2.0 * step),
            });
        }
    }
    Ok((f0, checks))
}

/// Checks the gradient of the scalar function `f` at `point` against central
/// finite differences with the given `step`.
pub fn grad_check<F>(f: F, point: &[Tensor], step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (f0, checks) = grad_components(f, point, step)?;
    if !f0.is_finite() {
        return Ok(GradCheckReport {
            max_rel_error: f64::INFINITY,
            worst: None,
            non_finite: Some(format!("f(point) = {f0}")),
        });
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        non_finite: None,
    };
    for c in &checks {
        if !(c.analytic.is_finite() && c.numeric.is_finite()) {
            report.max_rel_error = f64::INFINITY;
            report.worst = Some((c.input, c.index));
            report.non_finite = Some(format!(
                "input {} component {}: analytic {}, finite difference {}",
                c.input, c.index, c.analytic, c.numeric
            ));
            return Ok(report);
        }
        let err = c.rel_error();
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((c.input, c.index));
        }
    }
    Ok(report)
}
