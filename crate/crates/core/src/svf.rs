//! Stationary velocity field exponentiation and map algebra.
//!
//! `Φ^v_{s,t}` is the flow of the stationary field `v` from time `s` to `t`.
//! For stationary fields the flow is a one-parameter group, so
//! `Φ^v_{s,t} = exp((t - s) v)` and no trajectory needs to be stored.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{sample_vec, DeformationMap, VectorField};
use crate::scalar::Real;

/// Default number of scaling-and-squaring steps.
pub const DEFAULT_SQUARING_STEPS: usize = 6;

/// `outer ∘ inner`, evaluated by interpolating `outer`'s displacement at `inner(x)`.
pub fn compose<T: Real>(outer: &DeformationMap<T>, inner: &DeformationMap<T>) -> Result<DeformationMap<T>> {
    outer.shape().ensure_same(inner.shape(), "compose")?;
    Ok(compose_unchecked(outer, inner))
}

pub(crate) fn compose_unchecked<T: Real>(outer: &DeformationMap<T>, inner: &DeformationMap<T>) -> DeformationMap<T> {
    let shape = inner.shape();
    let d = shape.ndim();
    let [nx, ..] = shape.extents3();
    let uo = outer.displacement().values();
    let ui = inner.displacement().values();
    let mut out = vec![T::zero(); ui.len()];
    // one x-row per chunk, so only the x coordinate varies inside a chunk
    out.par_chunks_mut(nx * d)
        .enumerate()
        .for_each(|(row, chunk)| {
            let c = shape.coords(row * nx);
            let y = T::from_usize_lossy(c[1]);
            let z = T::from_usize_lossy(c[2]);
            let base = row * nx * d;
            let mut x = T::zero();
            for (k, u) in chunk.chunks_exact_mut(d).enumerate() {
                let own = &ui[base + k * d..base + k * d + d];
                let mut p = [x + own[0], y + own[1], z];
                if d == 3 {
                    p[2] = z + own[2];
                }
                let s = sample_vec(shape, uo, &p);
                for a in 0..d {
                    u[a] = own[a] + s[a];
                }
                x += T::one();
            }
        });
    DeformationMap::from_displacement(VectorField::from_raw(shape.clone(), out))
}

/// `exp(t_m v)` at the midpoints `t_m = (m + 1/2) / samples`.
///
/// The first map is integrated by scaling and squaring; each later one adds a
/// single composition with `exp(v / samples)`.
pub(crate) fn midpoint_flows<T: Real>(v: &VectorField<T>, samples: usize, steps: usize) -> Result<Vec<DeformationMap<T>>> {
    let half = integrate(&v.scaled(T::one() / T::from_usize_lossy(2 * samples)), steps)?;
    let stride = compose_unchecked(&half, &half);
    let mut out = Vec::with_capacity(samples);
    out.push(half);
    for m in 1..samples {
        let next = compose_unchecked(&stride, &out[m - 1]);
        out.push(next);
    }
    Ok(out)
}

/// `Φ^v_{0,1}` by scaling and squaring: `Id + v / 2^K` composed with itself `K` times.
pub fn integrate<T: Real>(v: &VectorField<T>, steps: usize) -> Result<DeformationMap<T>> {
    if steps < 1 {
        return Err(Error::invalid("scaling and squaring needs at least one step"));
    }
    if !v.is_finite() {
        return Err(Error::invalid("velocity field has non-finite components"));
    }
    let scale = T::one() / T::lit(2f64.powi(steps as i32));
    let mut phi = DeformationMap::from_displacement(v.scaled(scale));
    for _ in 0..steps {
        phi = compose_unchecked(&phi, &phi);
    }
    Ok(phi)
}

/// `Φ^v_{1,0}`, the inverse flow, obtained by integrating `-v`.
pub fn integrate_inverse<T: Real>(v: &VectorField<T>, steps: usize) -> Result<DeformationMap<T>> {
    integrate(&v.scaled(-T::one()), steps)
}

/// `Φ^v_{s,t} = exp((t - s) v)` for `s, t ∈ [0, 1]`.
pub fn integrate_partial<T: Real>(v: &VectorField<T>, s: T, t: T, steps: usize) -> Result<DeformationMap<T>> {
    let unit = |x: T| x >= T::zero() && x <= T::one();
    if !(unit(s) && unit(t)) {
        return Err(Error::invalid(format!("flow times must lie in [0, 1], got s={s}, t={t}")));
    }
    integrate(&v.scaled(t - s), steps)
}
