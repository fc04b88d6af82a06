use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::VectorField;
use crate::scalar::Real;

/// Central finite-difference gradient of `energy` at `v`, one component at a time.
///
/// Costs two energy evaluations per component; meant for small test grids.
pub fn fd_gradient<T, F>(energy: F, v: &VectorField<T>, epsilon: T) -> Result<VectorField<T>>
where
    T: Real,
    F: Fn(&VectorField<T>) -> Result<T> + Sync,
{
    if !(epsilon > T::zero()) {
        return Err(Error::invalid("finite-difference epsilon must be > 0"));
    }
    let two_eps = epsilon + epsilon;
    let g = (0..v.values().len())
        .into_par_iter()
        .map(|c| {
            let mut w = v.clone();
            w.values_mut()[c] = v.values()[c] + epsilon;
            let plus = energy(&w)?;
            w.values_mut()[c] = v.values()[c] - epsilon;
            let minus = energy(&w)?;
            Ok((plus - minus) / two_eps)
        })
        .collect::<Result<Vec<T>>>()?;
    Ok(VectorField::from_raw(v.shape().clone(), g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;

    #[test]
    fn quadratic_and_constant_energies() {
        let s = GridShape::new(&[4, 3]).unwrap();
        let v = VectorField::from_fn(s, |c| [c[0] as f64 - 1.5, 0.25 * c[1] as f64, 0.0]);
        let g = fd_gradient(|w: &VectorField<f64>| Ok(0.5 * w.dot(w)), &v, 1e-3).unwrap();
        for (a, b) in g.values().iter().zip(v.values()) {
            assert!((a - b).abs() < 1e-9);
        }
        let g = fd_gradient(|_: &VectorField<f64>| Ok(3.0), &v, 1e-3).unwrap();
        assert!(g.values().iter().all(|&x| x == 0.0));
        assert!(fd_gradient(|_: &VectorField<f64>| Ok(0.0), &v, 0.0).is_err());
    }
}
