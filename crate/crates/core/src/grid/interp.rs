//! Clamp-to-border multilinear sampling, warping, and its adjoint.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{DeformationMap, GridShape, LabelField, ScalarField, VectorField};
use crate::scalar::Real;

/// Corner indices and multilinear weights of the cell containing a point.
///
/// Only the first `count` entries are used (4 in 2D, 8 in 3D).
#[derive(Clone, Copy, Debug)]
pub(crate) struct Stencil<T> {
    pub idx: [usize; 8],
    pub w: [T; 8],
    pub count: usize,
}

#[inline]
fn axis_cell<T: Real>(c: T, n: usize) -> (usize, T) {
    let hi = T::from_usize_lossy(n - 1);
    let c = c.max(T::zero()).min(hi);
    // c >= 0, so truncation is floor
    let i0 = (c.to_f64_lossy() as usize).min(n - 2);
    (i0, c - T::from_usize_lossy(i0))
}

#[inline]
pub(crate) fn stencil<T: Real>(shape: &GridShape, p: &[T; 3]) -> Stencil<T> {
    let [nx, ny, nz] = shape.extents3();
    let (x0, fx) = axis_cell(p[0], nx);
    let (y0, fy) = axis_cell(p[1], ny);
    let one = T::one();
    let base = x0 + nx * y0;
    if shape.ndim() == 2 {
        return Stencil {
            idx: [base, base + 1, base + nx, base + nx + 1, 0, 0, 0, 0],
            w: [
                (one - fx) * (one - fy),
                fx * (one - fy),
                (one - fx) * fy,
                fx * fy,
                T::zero(),
                T::zero(),
                T::zero(),
                T::zero(),
            ],
            count: 4,
        };
    }
    let (z0, fz) = axis_cell(p[2], nz);
    let base = base + nx * ny * z0;
    let sz = nx * ny;
    Stencil {
        idx: [
            base,
            base + 1,
            base + nx,
            base + nx + 1,
            base + sz,
            base + sz + 1,
            base + sz + nx,
            base + sz + nx + 1,
        ],
        w: [
            (one - fx) * (one - fy) * (one - fz),
            fx * (one - fy) * (one - fz),
            (one - fx) * fy * (one - fz),
            fx * fy * (one - fz),
            (one - fx) * (one - fy) * fz,
            fx * (one - fy) * fz,
            (one - fx) * fy * fz,
            fx * fy * fz,
        ],
        count: 8,
    }
}

/// Samples a scalar buffer at `p` (no validation).
#[inline]
pub(crate) fn sample<T: Real>(shape: &GridShape, values: &[T], p: &[T; 3]) -> T {
    let s = stencil(shape, p);
    let mut acc = T::zero();
    for k in 0..s.count {
        acc += s.w[k] * values[s.idx[k]];
    }
    acc
}

/// Samples an interleaved vector buffer at `p` (no validation).
#[inline]
pub(crate) fn sample_vec<T: Real>(shape: &GridShape, values: &[T], p: &[T; 3]) -> [T; 3] {
    let d = shape.ndim();
    let s = stencil(shape, p);
    let mut acc = [T::zero(); 3];
    for k in 0..s.count {
        let base = s.idx[k] * d;
        for a in 0..d {
            acc[a] += s.w[k] * values[base + a];
        }
    }
    acc
}

/// Gradient of the multilinear interpolant of `values` at `p`, in voxel units.
///
/// Inside a cell this is the exact cell slope. On a node the two neighbouring
/// slopes are averaged, and the clamped exterior has zero slope.
pub(crate) fn sample_gradient<T: Real>(shape: &GridShape, values: &[T], p: &[T; 3]) -> [T; 3] {
    let dims = shape.extents3();
    let mut g = [T::zero(); 3];
    for a in 0..shape.ndim() {
        let hi = T::from_usize_lossy(dims[a] - 1);
        let c = p[a];
        if c < T::zero() || c > hi {
            continue;
        }
        let at = |x: T| {
            let mut q = *p;
            q[a] = x;
            sample(shape, values, &q)
        };
        let lo = c.floor();
        g[a] = if c > lo {
            at(lo + T::one()) - at(lo)
        } else {
            let right = if c < hi { at(c + T::one()) - at(c) } else { T::zero() };
            let left = if c > T::zero() { at(c) - at(c - T::one()) } else { T::zero() };
            (right + left) * T::lit(0.5)
        };
    }
    g
}

fn point3<T: Real>(shape: &GridShape, point: &[T]) -> Result<[T; 3]> {
    if point.len() != shape.ndim() {
        return Err(Error::invalid(format!(
            "point has {} components for a {}-D grid",
            point.len(),
            shape.ndim()
        )));
    }
    if point.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("non-finite point component"));
    }
    let mut p = [T::zero(); 3];
    p[..point.len()].copy_from_slice(point);
    Ok(p)
}

/// Multilinear interpolation with clamp-to-border coordinates.
pub fn interpolate<T: Real>(field: &ScalarField<T>, point: &[T]) -> Result<T> {
    let p = point3(field.shape(), point)?;
    Ok(sample(field.shape(), field.values(), &p))
}

/// Componentwise [`interpolate`] of a vector field.
pub fn interpolate_vec<T: Real>(field: &VectorField<T>, point: &[T]) -> Result<Vec<T>> {
    let p = point3(field.shape(), point)?;
    let v = sample_vec(field.shape(), field.values(), &p);
    Ok(v[..field.ndim()].to_vec())
}

/// Pulls `image` back through `map`: `out(x) = image(Φ(x))`.
pub fn warp<T: Real>(image: &ScalarField<T>, map: &DeformationMap<T>) -> Result<ScalarField<T>> {
    image.shape().ensure_same(map.shape(), "warp")?;
    Ok(warp_unchecked(image, map))
}

pub(crate) fn warp_unchecked<T: Real>(image: &ScalarField<T>, map: &DeformationMap<T>) -> ScalarField<T> {
    let shape = image.shape();
    let values: Vec<T> = (0..shape.len())
        .into_par_iter()
        .with_min_len(1024)
        .map(|i| sample(shape, image.values(), &map.point(i)))
        .collect();
    ScalarField::new(shape.clone(), values).expect("shape preserved")
}

/// Nearest-neighbour label pullback: labels are never blended.
pub fn warp_labels<T: Real>(labels: &LabelField, map: &DeformationMap<T>) -> Result<LabelField> {
    labels.shape().ensure_same(map.shape(), "warp_labels")?;
    let shape = labels.shape();
    let dims = shape.dims();
    let out = (0..shape.len())
        .map(|i| {
            let p = map.point(i);
            let mut c = [0usize; 3];
            for (a, &n) in dims.iter().enumerate() {
                let x = p[a].max(T::zero()).min(T::from_usize_lossy(n - 1));
                // x >= 0, so round() is round-half-up
                c[a] = x.round().to_usize().unwrap_or(0);
            }
            labels.labels()[shape.index(&c[..dims.len()])]
        })
        .collect();
    Ok(labels.with_labels(out))
}

/// Adjoint of [`warp`] with respect to the image: scatters `weights(x)` into
/// the voxels that `Φ(x)` interpolates from.
pub(crate) fn splat<T: Real>(weights: &ScalarField<T>, map: &DeformationMap<T>) -> ScalarField<T> {
    let shape = weights.shape();
    let mut out = vec![T::zero(); shape.len()];
    for i in 0..shape.len() {
        let s = stencil(shape, &map.point(i));
        let r = weights.values()[i];
        for k in 0..s.count {
            out[s.idx[k]] += s.w[k] * r;
        }
    }
    ScalarField::new(shape.clone(), out).expect("shape preserved")
}

/// Vector counterpart of [`splat`] for interleaved fields.
pub(crate) fn splat_vec<T: Real>(weights: &VectorField<T>, map: &DeformationMap<T>) -> VectorField<T> {
    let shape = weights.shape();
    let d = shape.ndim();
    let mut out = vec![T::zero(); shape.len() * d];
    for i in 0..shape.len() {
        let s = stencil(shape, &map.point(i));
        let r = &weights.values()[i * d..(i + 1) * d];
        for k in 0..s.count {
            let base = s.idx[k] * d;
            for a in 0..d {
                out[base + a] += s.w[k] * r[a];
            }
        }
    }
    VectorField::from_raw(shape.clone(), out)
}
