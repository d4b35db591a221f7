use thiserror::Error;

use super::tape::{NodeId, Tape};
use super::tensor::TensorBuf;
use crate::real::Real;

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error("step {step} is below the reliable floor {floor} for this precision")]
    StepTooSmall { step: f64, floor: f64 },
    #[error("function under test failed: {0}")]
    Function(#[from] super::tape::TapeError),
}

/// Compares the analytic gradient of a scalar function against central
/// differences, one coordinate at a time.
///
/// `f` must build the function from recorded ops: it receives a fresh tape
/// and the input leaf, and returns the scalar root. Returns the maximum over
/// coordinates of |analytic - central| / max(1, |central|).
pub fn grad_check<T, F>(f: F, point: &TensorBuf<T>, step: f64) -> Result<f64, GradCheckError>
where
    T: Real,
    F: Fn(&mut Tape<T>, NodeId) -> Result<NodeId, super::tape::TapeError>,
{
    // Central differences lose all signal once the step drowns in rounding;
    // refuse steps the precision cannot support rather than reporting noise.
    let floor = T::epsilon().as_f64() * 100.0;
    if step < floor {
        return Err(GradCheckError::StepTooSmall { step, floor });
    }

    let analytic = {
        let mut tape = Tape::new();
        let x = tape.param(point.clone());
        let root = f(&mut tape, x)?;
        let grads = tape.backward(root)?;
        grads.dense(&tape, x)
    };

    let eval = |p: &TensorBuf<T>| -> Result<f64, GradCheckError> {
        let mut tape = Tape::new();
        let x = tape.constant(p.clone());
        let root = f(&mut tape, x)?;
        Ok(tape.value(root).item().as_f64())
    };

    let h = T::from_f64(step);
    let mut worst = 0.0f64;
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data[i] = plus.data[i] + h;
        let mut minus = point.clone();
        minus.data[i] = minus.data[i] - h;
        let central = (eval(&plus)? - eval(&minus)?) / (2.0 * step);
        let err = (analytic.data[i].as_f64() - central).abs() / central.abs().max(1.0);
        if err > worst {
            worst = err;
        }
    }
    Ok(worst)
}
