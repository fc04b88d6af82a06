use crate::error::{Error, Result};
use crate::grid::VectorField;
use crate::optim::Method;
use crate::scalar::Real;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Step rule applied to one velocity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateRule {
    pub method: Method,
    pub step_size: f64,
}

/// Per-component first and second moment accumulators.
#[derive(Clone, Debug, Default)]
pub struct MomentState<T> {
    first: Vec<T>,
    second: Vec<T>,
    steps: i32,
}

impl<T: Real> MomentState<T> {
    pub fn new() -> Self {
        Self {
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn reset(&mut self) {
        *self = Self::new();
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }
}

/// Applies one update to `v` in place.
pub fn update_velocity<T: Real>(
    v: &mut VectorField<T>,
    grad: &VectorField<T>,
    rule: &UpdateRule,
    state: &mut MomentState<T>,
) -> Result<()> {
    v.shape().ensure_same(grad.shape(), "update_velocity")?;
    if !grad.is_finite() {
        return Err(Error::NumericFailure(format!(
            "non-finite velocity gradient after {} updates",
            state.steps
        )));
    }
    let lr = T::lit(rule.step_size);
    match rule.method {
        Method::SteepestDescent => v.add_scaled(grad, -lr),
        Method::AdaptiveMoments => {
            let n = grad.values().len();
            if state.first.len() != n {
                state.first = vec![T::zero(); n];
                state.second = vec![T::zero(); n];
                state.steps = 0;
            }
            state.steps += 1;
            let (b1, b2) = (T::lit(BETA1), T::lit(BETA2));
            let c1 = T::one() - T::lit(BETA1.powi(state.steps));
            let c2 = T::one() - T::lit(BETA2.powi(state.steps));
            let eps = T::lit(ADAM_EPS);
            for (((x, &g), m), s) in v
                .values_mut()
                .iter_mut()
                .zip(grad.values())
                .zip(state.first.iter_mut())
                .zip(state.second.iter_mut())
            {
                *m = b1 * *m + (T::one() - b1) * g;
                *s = b2 * *s + (T::one() - b2) * g * g;
                *x -= lr * (*m / c1) / ((*s / c2).sqrt() + eps);
            }
        }
    }
    if !v.is_finite() {
        return Err(Error::NumericFailure("velocity became non-finite".into()));
    }
    Ok(())
}
