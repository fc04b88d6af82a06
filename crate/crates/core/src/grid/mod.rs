//! Dense regular-grid containers and the sampling and derivative primitives
//! every other module builds on.
//!
//! Coordinates are in voxel units throughout; spacing only enters [`gradient`].
//! Sampling outside the domain clamps coordinates to the border.

mod diff;
mod field;
mod filter;
mod interp;
mod shape;

pub use diff::{gradient, hessian_components, jacobian_determinant, vector_hessians, Hessians};
pub use field::{DeformationMap, LabelField, ScalarField, VectorField};
pub use filter::{gaussian_smooth, gaussian_smooth_vec};
pub use interp::{interpolate, interpolate_vec, warp, warp_labels};
pub use shape::GridShape;

pub(crate) use diff::{ensure_hessian_extent, jacobian_matrix, second_diff_stencil};
pub(crate) use interp::{sample_gradient, sample_vec, splat, splat_vec, warp_unchecked};
