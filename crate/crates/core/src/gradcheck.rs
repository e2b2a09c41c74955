//! Central-difference gradient checking.

// Only needed when no dependency links std.
#[allow(unused_imports)]
use num_traits::Float;
use crate::error::{bail, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Fourth-order central difference of `f(k)`, the function sampled at
/// `x + k*h`. Round-off stays near `eps/h` while truncation drops to `h^4`,
/// so steps around 1e-3 resolve gradients far below 1e-6.
pub fn central_difference(f: &mut dyn FnMut(f64) -> Result<f64>, h: f64) -> Result<f64> {
    let (p2, p1, m1, m2) = (f(2.0)?, f(1.0)?, f(-1.0)?, f(-2.0)?);
    Ok((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h))
}

/// Largest relative disagreement between the tape gradient of `f` at `x`
/// and [`central_difference`] with step `h`:
/// `max_i |analytic_i - fd_i| / (|analytic_i| + 1e-8)`.
///
/// `f` receives a fresh tape and the tracked input, and must return a
/// scalar.
pub fn finite_difference_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |input: &Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.constant(input.clone())?;
        let out = f(&mut t, v)?;
        Ok(t.value(out).item())
    };

    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone().with_requires_grad())?;
    let out = f(&mut tape, xv)?;
    if tape.value(out).len() != 1 {
        bail!(Contract, "finite_difference_check needs a scalar function");
    }
    let grads = tape.backward(out)?;
    let zeros = alloc::vec![0.0; x.len()];
    let analytic = grads.get(xv).unwrap_or(&zeros);

    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        let mut at = |k: f64| -> Result<f64> {
            probe.data_mut()[i] = orig + k * h;
            eval(&probe)
        };
        let fd = central_difference(&mut at, h)?;
        probe.data_mut()[i] = orig;
        let rel = (analytic[i] - fd).abs() / (analytic[i].abs() + 1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
