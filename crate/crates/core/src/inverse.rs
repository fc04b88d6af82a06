//! Numeric inversion of deformation maps that do not come from a velocity field.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{sample_gradient, sample_vec, splat_vec, DeformationMap, ScalarField, VectorField};
use crate::optim::{update_velocity, Method, MomentState, UpdateRule};
use crate::scalar::Real;

/// Stopping rule and failure threshold for [`numeric_inverse`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InverseConfig {
    pub max_iters: usize,
    pub step: f64,
    /// Stop once an accepted step improves the objective by less than this.
    pub tol: f64,
    /// Largest acceptable final objective, in squared voxels.
    pub threshold: f64,
}

impl Default for InverseConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            step: 1e-2,
            tol: 1e-8,
            threshold: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct InverseResult<T> {
    pub map: DeformationMap<T>,
    /// Final symmetric objective.
    pub residual: T,
    /// Objective at the start and after every accepted step.
    pub history: Vec<T>,
    pub iterations: usize,
}

struct Objective<'a, T> {
    map: &'a DeformationMap<T>,
    components: Vec<ScalarField<T>>,
    interior: Vec<usize>,
}

impl<'a, T: Real> Objective<'a, T> {
    fn new(map: &'a DeformationMap<T>) -> Self {
        let shape = map.shape();
        let components = (0..shape.ndim()).map(|c| map.displacement().component(c)).collect();
        Self {
            map,
            components,
            interior: shape.interior_indices(1),
        }
    }

    /// Residual vectors `Φ∘φ(x) - x` and `φ∘Φ(x) - x` over the interior.
    fn residuals(&self, w: &VectorField<T>) -> (Vec<[T; 3]>, Vec<[T; 3]>) {
        let shape = self.map.shape();
        let d = shape.ndim();
        let u = self.map.displacement().values();
        self.interior
            .par_iter()
            .map(|&x| {
                let wx = w.at(x);
                let ux = self.map.displacement().at(x);
                let c = shape.coords(x);
                let mut p = [T::zero(); 3];
                for a in 0..d {
                    p[a] = T::from_usize_lossy(c[a]) + wx[a];
                }
                let up = sample_vec(shape, u, &p);
                let wq = sample_vec(shape, w.values(), &self.map.point(x));
                let mut ra = [T::zero(); 3];
                let mut rb = [T::zero(); 3];
                for a in 0..d {
                    ra[a] = wx[a] + up[a];
                    rb[a] = ux[a] + wq[a];
                }
                (ra, rb)
            })
            .unzip()
    }

    fn value(&self, w: &VectorField<T>) -> T {
        let d = self.map.shape().ndim();
        let (ra, rb) = self.residuals(w);
        let sum = ra
            .iter()
            .chain(&rb)
            .fold(T::zero(), |acc, r| acc + r[..d].iter().fold(T::zero(), |s, &x| s + x * x));
        sum / T::from_usize_lossy(self.interior.len().max(1))
    }

    fn gradient(&self, w: &VectorField<T>) -> VectorField<T> {
        let shape = self.map.shape();
        let d = shape.ndim();
        let scale = T::lit(2.0) / T::from_usize_lossy(self.interior.len().max(1));
        let (ra, rb) = self.residuals(w);
        let mut g = vec![T::zero(); shape.len() * d];
        let mut pushed = vec![T::zero(); shape.len() * d];
        for (k, &x) in self.interior.iter().enumerate() {
            let c = shape.coords(x);
            let wx = w.at(x);
            let mut p = [T::zero(); 3];
            for a in 0..d {
                p[a] = T::from_usize_lossy(c[a]) + wx[a];
            }
            // d(Φ∘φ)/dφ = I + Du(φ(x))
            for (j, comp) in self.components.iter().enumerate() {
                let du = sample_gradient(shape, comp.values(), &p);
                for a in 0..d {
                    g[x * d + a] += scale * ra[k][j] * du[a];
                }
            }
            for a in 0..d {
                g[x * d + a] += scale * ra[k][a];
                pushed[x * d + a] = scale * rb[k][a];
            }
        }
        let spread = splat_vec(&VectorField::from_raw(shape.clone(), pushed), self.map);
        for (gi, &s) in g.iter_mut().zip(spread.values()) {
            *gi += s;
        }
        VectorField::from_raw(shape.clone(), g)
    }
}

/// Minimizes `mean ‖Φ∘φ - Id‖² + ‖φ∘Φ - Id‖²` over interior voxels, starting
/// from the negated displacement.
///
/// Steps that would raise the objective are rejected and the step size halved,
/// so `history` never increases.
pub fn numeric_inverse<T: Real>(map: &DeformationMap<T>, config: &InverseConfig) -> Result<InverseResult<T>> {
    if !map.displacement().is_finite() {
        return Err(Error::invalid("map has non-finite displacement"));
    }
    if !(config.step > 0.0) || !(config.tol >= 0.0) {
        return Err(Error::InvalidConfig("inverse step must be > 0 and tol >= 0".into()));
    }
    let objective = Objective::new(map);
    let mut w = map.displacement().scaled(-T::one());
    let mut current = objective.value(&w);
    let mut history = vec![current];
    let mut state = MomentState::new();
    let mut rule = UpdateRule {
        method: Method::AdaptiveMoments,
        step_size: config.step,
    };
    let mut iterations = 0;
    while iterations < config.max_iters && current > T::zero() {
        iterations += 1;
        let grad = objective.gradient(&w);
        let mut candidate = w.clone();
        let mut trial_state = state.clone();
        update_velocity(&mut candidate, &grad, &rule, &mut trial_state)?;
        let value = objective.value(&candidate);
        if !value.is_finite() {
            return Err(Error::NumericFailure("inverse objective became non-finite".into()));
        }
        if value <= current {
            let gain = current - value;
            w = candidate;
            state = trial_state;
            current = value;
            history.push(current);
            if gain < T::lit(config.tol) {
                break;
            }
        } else {
            rule.step_size *= 0.5;
            if rule.step_size < config.step * 1e-6 {
                break;
            }
        }
    }
    let residual = current.to_f64_lossy();
    if residual > config.threshold {
        return Err(Error::NonInvertible {
            residual,
            threshold: config.threshold,
        });
    }
    Ok(InverseResult {
        map: DeformationMap::from_displacement(w),
        residual: current,
        history,
        iterations,
    })
}
