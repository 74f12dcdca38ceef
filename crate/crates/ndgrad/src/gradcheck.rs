use crate::error::{GradError, Result};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Compares the tape gradient of a scalar function against central
/// differences.
///
/// Returns `max_i |analytic_i - numeric_i| / max(1, |analytic_i|, |numeric_i|)`.
/// Run it at `f64`; at `f32` the truncation/rounding trade-off makes any
/// tolerance below ~1e-2 meaningless.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, step: f64) -> Result<f64>
where
    T: Real,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(GradError::invalid("grad_check", "step must be positive"));
    }
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone().with_grad(true));
    let loss = f(&mut tape, xv)?;
    let analytic = tape.backward(loss)?.take(xv).expect("leaf requires grad");

    let eval = |point: Tensor<T>, coordinate: usize| -> Result<f64> {
        let mut tape = Tape::new();
        let xv = tape.constant(point);
        let value = match f(&mut tape, xv) {
            Ok(out) => tape.value(out)?.item()?.as_f64(),
            Err(GradError::NonFinite { .. }) => f64::NAN,
            Err(e) => return Err(e),
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(GradError::NonFiniteAt { coordinate })
        }
    };

    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.clone().with_grad(false);
        let mut minus = plus.clone();
        plus.data_mut()[i] = T::of(x.data()[i].as_f64() + step);
        minus.data_mut()[i] = T::of(x.data()[i].as_f64() - step);
        // Difference of the actually representable points.
        let span = plus.data()[i].as_f64() - minus.data()[i].as_f64();
        let numeric = (eval(plus, i)? - eval(minus, i)?) / span;
        let a = analytic.data()[i].as_f64();
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        worst = worst.max(err);
    }
    Ok(worst)
}
