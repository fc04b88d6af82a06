//! Finite-difference operators: image gradients, map Jacobians, and Hessians.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{DeformationMap, GridShape, ScalarField, VectorField};
use crate::scalar::Real;

/// First derivative along axis `a` of a strided buffer at voxel `i`, in voxel units.
///
/// Central difference on the interior, one-sided at the two ends.
#[inline]
fn d1<T: Real>(values: &[T], stride: usize, comp_stride: usize, i: usize, pos: usize, n: usize) -> T {
    let at = |j: usize| values[j * comp_stride];
    if pos == 0 {
        at(i + stride) - at(i)
    } else if pos == n - 1 {
        at(i) - at(i - stride)
    } else {
        (at(i + stride) - at(i - stride)) * T::lit(0.5)
    }
}

pub(crate) fn gradient_with_spacing<T: Real>(field: &ScalarField<T>, use_spacing: bool) -> VectorField<T> {
    let shape = field.shape();
    let d = shape.ndim();
    let dims = shape.extents3();
    let strides = shape.strides3();
    let inv_h: Vec<T> = shape
        .spacing()
        .iter()
        .map(|&h| if use_spacing { T::lit(1.0 / h) } else { T::one() })
        .collect();
    let vals = field.values();
    let mut out = vec![T::zero(); shape.len() * d];
    out.par_chunks_mut(d)
        .with_min_len(512)
        .enumerate()
        .for_each(|(i, g)| {
            let c = shape.coords(i);
            for a in 0..d {
                g[a] = d1(vals, strides[a], 1, i, c[a], dims[a]) * inv_h[a];
            }
        });
    VectorField::from_raw(shape.clone(), out)
}

/// Spatial gradient of an image, divided by the grid spacing.
pub fn gradient<T: Real>(field: &ScalarField<T>) -> VectorField<T> {
    gradient_with_spacing(field, true)
}

#[inline]
fn det<T: Real>(m: &[[T; 3]; 3], d: usize) -> T {
    if d == 2 {
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    } else {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }
}

/// Finite-difference Jacobian of `Φ = Id + u` at voxel `i`: `m[k][a] = ∂Φ_k/∂x_a`.
#[inline]
pub(crate) fn jacobian_matrix<T: Real>(map: &DeformationMap<T>, i: usize) -> [[T; 3]; 3] {
    let shape = map.shape();
    let d = shape.ndim();
    let dims = shape.extents3();
    let strides = shape.strides3();
    let u = map.displacement().values();
    let c = shape.coords(i);
    let mut m = [[T::zero(); 3]; 3];
    for (k, row) in m.iter_mut().enumerate().take(d) {
        let comp = &u[k..];
        for (a, entry) in row.iter_mut().enumerate().take(d) {
            let du = d1(comp, strides[a], d, i, c[a], dims[a]);
            *entry = if a == k { T::one() + du } else { du };
        }
    }
    m
}

/// Per-voxel determinant of the finite-difference Jacobian of `Φ = Id + u`.
///
/// Derivatives are taken in voxel units, so the result is spacing independent.
pub fn jacobian_determinant<T: Real>(map: &DeformationMap<T>) -> ScalarField<T> {
    let shape = map.shape();
    let d = shape.ndim();
    let values: Vec<T> = (0..shape.len())
        .into_par_iter()
        .with_min_len(512)
        .map(|i| det(&jacobian_matrix(map, i), d))
        .collect();
    ScalarField::new(shape.clone(), values).expect("shape preserved")
}

/// Hessians of every component of a vector-valued grid function, per voxel.
///
/// Entry `(voxel, k, a, b)` is `∂²f_k / ∂x_a ∂x_b` in voxel units.
#[derive(Clone, Debug)]
pub struct Hessians<T> {
    shape: GridShape,
    values: Vec<T>,
}

impl<T: Real> Hessians<T> {
    #[inline]
    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    #[inline]
    pub fn get(&self, voxel: usize, component: usize, a: usize, b: usize) -> T {
        let d = self.shape.ndim();
        self.values[((voxel * d + component) * d + a) * d + b]
    }

    /// `Σ_k ‖H_k‖²_F` at a voxel.
    pub fn frobenius_sq(&self, voxel: usize) -> T {
        let d = self.shape.ndim();
        let n = d * d * d;
        self.values[voxel * n..(voxel + 1) * n]
            .iter()
            .map(|&h| h * h)
            .sum()
    }
}

/// Second-difference stencil for `∂²/∂x_a∂x_b`, as (offset, weight) pairs.
///
/// Offsets are signed linear-index displacements from the stencil centre.
pub(crate) fn second_diff_stencil(strides: &[usize; 3], a: usize, b: usize) -> Vec<(isize, f64)> {
    let sa = strides[a] as isize;
    let sb = strides[b] as isize;
    if a == b {
        vec![(sa, 1.0), (0, -2.0), (-sa, 1.0)]
    } else {
        vec![
            (sa + sb, 0.25),
            (sa - sb, -0.25),
            (-sa + sb, -0.25),
            (-sa - sb, 0.25),
        ]
    }
}

/// Voxel used as stencil centre: the voxel itself, pulled one step inward on borders.
#[inline]
pub(crate) fn stencil_center(shape: &GridShape, i: usize) -> usize {
    let mut c = shape.coords(i);
    for (a, &n) in shape.dims().iter().enumerate() {
        c[a] = c[a].clamp(1, n - 2);
    }
    shape.index(&c[..shape.ndim()])
}

pub(crate) fn ensure_hessian_extent(shape: &GridShape) -> Result<()> {
    if let Some(n) = shape.dims().iter().find(|&&n| n < 3) {
        return Err(Error::invalid(format!(
            "second derivatives need extents >= 3, got {n}"
        )));
    }
    Ok(())
}

/// Componentwise Hessians of a vector field (central second differences).
pub fn vector_hessians<T: Real>(field: &VectorField<T>) -> Result<Hessians<T>> {
    let shape = field.shape();
    ensure_hessian_extent(shape)?;
    let d = shape.ndim();
    let strides = shape.strides3();
    let stencils: Vec<Vec<(isize, T)>> = (0..d * d)
        .map(|ab| {
            second_diff_stencil(&strides, ab / d, ab % d)
                .into_iter()
                .map(|(o, w)| (o, T::lit(w)))
                .collect()
        })
        .collect();
    let vals = field.values();
    let block = d * d * d;
    let mut out = vec![T::zero(); shape.len() * block];
    out.par_chunks_mut(block)
        .with_min_len(256)
        .enumerate()
        .for_each(|(i, h)| {
            let center = stencil_center(shape, i) as isize;
            for k in 0..d {
                for ab in 0..d * d {
                    let mut acc = T::zero();
                    for &(o, w) in &stencils[ab] {
                        acc += w * vals[(center + o) as usize * d + k];
                    }
                    h[k * d * d + ab] = acc;
                }
            }
        });
    Ok(Hessians {
        shape: shape.clone(),
        values: out,
    })
}

/// Hessians of each component of `Φ`; equal to those of its displacement.
pub fn hessian_components<T: Real>(map: &DeformationMap<T>) -> Result<Hessians<T>> {
    vector_hessians(map.displacement())
}
