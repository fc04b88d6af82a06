use crate::error::Result;
use crate::grid::{ensure_hessian_extent, second_diff_stencil, vector_hessians, VectorField};
use crate::scalar::Real;

/// Gradient of [`velocity_bending`](crate::losses::velocity_bending) with respect to every component of `v`.
///
/// Exact adjoint of the second-difference stencils: `(2 / n_int) Σ_x Dᵀ D v`,
/// summed over the interior voxels the penalty averages.
pub fn regularizer_gradient<T: Real>(v: &VectorField<T>) -> Result<VectorField<T>> {
    let shape = v.shape();
    ensure_hessian_extent(shape)?;
    let d = shape.ndim();
    let h = vector_hessians(v)?;
    let strides = shape.strides3();
    let stencils: Vec<Vec<(isize, T)>> = (0..d * d)
        .map(|ab| {
            second_diff_stencil(&strides, ab / d, ab % d)
                .into_iter()
                .map(|(o, w)| (o, T::lit(w)))
                .collect()
        })
        .collect();
    let interior = shape.interior_indices(1);
    let scale = T::lit(2.0) / T::from_usize_lossy(interior.len());
    let mut g = vec![T::zero(); v.values().len()];
    for &x in &interior {
        for k in 0..d {
            for (ab, stencil) in stencils.iter().enumerate() {
                let hv = scale * h.get(x, k, ab / d, ab % d);
                for &(o, w) in stencil {
                    let y = (x as isize + o) as usize;
                    g[y * d + k] += hv * w;
                }
            }
        }
    }
    Ok(VectorField::from_raw(shape.clone(), g))
}
