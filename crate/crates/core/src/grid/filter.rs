use crate::grid::{ScalarField, VectorField};
use crate::scalar::Real;

fn kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= s);
    k
}

fn convolve_axis<T: Real>(values: &mut [T], dims: [usize; 3], axis: usize, k: &[f64]) {
    let strides = [1, dims[0], dims[0] * dims[1]];
    let n = dims[axis];
    let radius = (k.len() / 2) as isize;
    let kt: Vec<T> = k.iter().map(|&w| T::lit(w)).collect();
    let mut line = vec![T::zero(); n];
    let total: usize = dims.iter().product();
    for start in 0..total {
        let c = [start % dims[0], (start / dims[0]) % dims[1], start / (dims[0] * dims[1])];
        if c[axis] != 0 {
            continue;
        }
        for (p, l) in line.iter_mut().enumerate() {
            *l = values[start + p * strides[axis]];
        }
        for p in 0..n {
            let mut acc = T::zero();
            for (j, &w) in kt.iter().enumerate() {
                let q = (p as isize + j as isize - radius).clamp(0, n as isize - 1) as usize;
                acc += w * line[q];
            }
            values[start + p * strides[axis]] = acc;
        }
    }
}

/// Separable Gaussian blur with clamp-to-border extension.
pub fn gaussian_smooth<T: Real>(field: &ScalarField<T>, sigma: f64) -> ScalarField<T> {
    let mut out = field.clone();
    if sigma <= 0.0 {
        return out;
    }
    let k = kernel(sigma);
    let dims = field.shape().extents3();
    for axis in 0..field.shape().ndim() {
        convolve_axis(out.values_mut(), dims, axis, &k);
    }
    out
}

/// [`gaussian_smooth`] applied to each component.
pub fn gaussian_smooth_vec<T: Real>(field: &VectorField<T>, sigma: f64) -> VectorField<T> {
    let d = field.ndim();
    let comps: Vec<ScalarField<T>> = (0..d)
        .map(|c| gaussian_smooth(&field.component(c), sigma))
        .collect();
    let mut values = Vec::with_capacity(field.values().len());
    for i in 0..field.shape().len() {
        for comp in &comps {
            values.push(comp.values()[i]);
        }
    }
    VectorField::from_raw(field.shape().clone(), values)
}
