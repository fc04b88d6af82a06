//! Objective terms: image similarity, bending regularizers, and the two
//! pairwise alignment losses.
//!
//! Every spatial integral is discretized as a voxel mean.

use crate::error::{Error, Result};
use crate::grid::{hessian_components, vector_hessians, warp, DeformationMap, ScalarField, VectorField};
use crate::scalar::Real;
use crate::svf::{compose, integrate, integrate_inverse};

/// Minimum standard deviation accepted by [`ncc_loss`].
pub const NCC_MIN_STD: f64 = 1e-8;

/// Image dissimilarity measure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Similarity {
    #[default]
    Mse,
    Ncc,
}

impl Similarity {
    pub fn eval<T: Real>(self, a: &ScalarField<T>, b: &ScalarField<T>) -> Result<T> {
        match self {
            Similarity::Mse => mse(a, b),
            Similarity::Ncc => ncc_loss(a, b),
        }
    }

    /// Derivative of `eval(a, b)` with respect to each voxel of `a`.
    pub fn residual<T: Real>(self, a: &ScalarField<T>, b: &ScalarField<T>) -> Result<ScalarField<T>> {
        a.shape().ensure_same(b.shape(), "similarity residual")?;
        let n = T::from_usize_lossy(a.len());
        match self {
            Similarity::Mse => {
                let two_n = T::lit(2.0) / n;
                let vals = a
                    .values()
                    .iter()
                    .zip(b.values())
                    .map(|(&x, &y)| two_n * (x - y))
                    .collect();
                ScalarField::new(a.shape().clone(), vals)
            }
            Similarity::Ncc => {
                let st = centered_stats(a, b)?;
                let norm = (st.saa * st.sbb).sqrt();
                let rho = st.sab / norm;
                let vals = a
                    .values()
                    .iter()
                    .zip(b.values())
                    .map(|(&x, &y)| -((y - st.mb) / norm - rho * (x - st.ma) / st.saa))
                    .collect();
                ScalarField::new(a.shape().clone(), vals)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Similarity::Mse => "mse",
            Similarity::Ncc => "ncc",
        }
    }
}

impl std::str::FromStr for Similarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Similarity::Mse),
            "ncc" => Ok(Similarity::Ncc),
            other => Err(Error::InvalidConfig(format!("unknown similarity '{other}'"))),
        }
    }
}

/// Mean of squared voxel differences.
pub fn mse<T: Real>(a: &ScalarField<T>, b: &ScalarField<T>) -> Result<T> {
    a.shape().ensure_same(b.shape(), "mse")?;
    let sum: T = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    Ok(sum / T::from_usize_lossy(a.len()))
}

struct CenteredStats<T> {
    ma: T,
    mb: T,
    saa: T,
    sbb: T,
    sab: T,
}

fn centered_stats<T: Real>(a: &ScalarField<T>, b: &ScalarField<T>) -> Result<CenteredStats<T>> {
    a.shape().ensure_same(b.shape(), "ncc")?;
    let n = T::from_usize_lossy(a.len());
    let ma = a.mean();
    let mb = b.mean();
    let (mut saa, mut sbb, mut sab) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.values().iter().zip(b.values()) {
        let (dx, dy) = (x - ma, y - mb);
        saa += dx * dx;
        sbb += dy * dy;
        sab += dx * dy;
    }
    let min_var = T::lit(NCC_MIN_STD * NCC_MIN_STD) * n;
    if saa <= min_var || sbb <= min_var {
        return Err(Error::DegenerateSimilarity(
            "NCC undefined for a near-constant image".into(),
        ));
    }
    Ok(CenteredStats { ma, mb, saa, sbb, sab })
}

/// `1 - ρ(a, b)` with ρ the global Pearson correlation; lies in `[0, 2]`.
pub fn ncc_loss<T: Real>(a: &ScalarField<T>, b: &ScalarField<T>) -> Result<T> {
    let st = centered_stats(a, b)?;
    let rho = st.sab / (st.saa * st.sbb).sqrt();
    Ok((T::one() - rho).max(T::zero()).min(T::lit(2.0)))
}

/// Mean over interior voxels of `Σ_k ‖H_k(Φ)‖²_F`.
pub fn bending_energy<T: Real>(map: &DeformationMap<T>) -> Result<T> {
    let h = hessian_components(map)?;
    Ok(interior_mean(&h))
}

/// The same Hessian penalty applied to a velocity field, `Reg(v)`.
pub fn velocity_bending<T: Real>(v: &VectorField<T>) -> Result<T> {
    let h = vector_hessians(v)?;
    Ok(interior_mean(&h))
}

fn interior_mean<T: Real>(h: &crate::grid::Hessians<T>) -> T {
    let idx = h.shape().interior_indices(1);
    let sum: T = idx.iter().map(|&i| h.frobenius_sq(i)).sum();
    sum / T::from_usize_lossy(idx.len())
}

/// Similarity of two images after both are pulled into atlas space.
///
/// `fwd_*` are `Φ_{0,1}` maps, so `I ∘ Φ_{0,1}` lives on the atlas grid.
pub fn pair_atlas_loss<T: Real>(
    sim: Similarity,
    image_i: &ScalarField<T>,
    image_j: &ScalarField<T>,
    fwd_i: &DeformationMap<T>,
    fwd_j: &DeformationMap<T>,
) -> Result<T> {
    sim.eval(&warp(image_i, fwd_i)?, &warp(image_j, fwd_j)?)
}

/// Similarity of each image carried into the other's space through the atlas.
///
/// `sim(I_i ∘ (Φ^i_{0,1} ∘ Φ^j_{1,0}), I_j) + sim(I_j ∘ (Φ^j_{0,1} ∘ Φ^i_{1,0}), I_i)`,
/// with the two maps composed first and the image resampled once.
pub fn pair_image_loss<T: Real>(
    sim: Similarity,
    image_i: &ScalarField<T>,
    image_j: &ScalarField<T>,
    fwd_i: &DeformationMap<T>,
    inv_i: &DeformationMap<T>,
    fwd_j: &DeformationMap<T>,
    inv_j: &DeformationMap<T>,
) -> Result<T> {
    let i_to_j = warp(image_i, &compose(fwd_i, inv_j)?)?;
    let j_to_i = warp(image_j, &compose(fwd_j, inv_i)?)?;
    Ok(sim.eval(&i_to_j, image_j)? + sim.eval(&j_to_i, image_i)?)
}

/// Objective weights: data term, regularizer λ, and pairwise γ₁ / γ₂.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub sim_weight: f64,
    pub lambda: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            sim_weight: 1.0,
            lambda: 0.0,
            gamma1: 0.0,
            gamma2: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("sim_weight", self.sim_weight),
            ("lambda", self.lambda),
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} = {w} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn has_pairwise(&self) -> bool {
        self.gamma1 > 0.0 || self.gamma2 > 0.0
    }
}

/// Per-term breakdown of the bracketed per-pair objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairObjective<T> {
    pub sim_i: T,
    pub sim_j: T,
    pub reg_i: T,
    pub reg_j: T,
    pub pair_atlas: T,
    pub pair_image: T,
    pub total: T,
}

/// Per-pair objective with bending of `Φ_{1,0}` as regularizer.
///
/// `total = w·(sim_i + sim_j) + λ·(reg_i + reg_j) + γ₁·pair_atlas + γ₂·pair_image`.
#[allow(clippy::too_many_arguments)]
pub fn total_pair_objective<T: Real>(
    atlas: &ScalarField<T>,
    image_i: &ScalarField<T>,
    image_j: &ScalarField<T>,
    v_i: &VectorField<T>,
    v_j: &VectorField<T>,
    weights: &LossWeights,
    sim: Similarity,
    steps: usize,
) -> Result<PairObjective<T>> {
    weights.validate()?;
    let fwd_i = integrate(v_i, steps)?;
    let inv_i = integrate_inverse(v_i, steps)?;
    let fwd_j = integrate(v_j, steps)?;
    let inv_j = integrate_inverse(v_j, steps)?;
    let sim_i = sim.eval(&warp(atlas, &inv_i)?, image_i)?;
    let sim_j = sim.eval(&warp(atlas, &inv_j)?, image_j)?;
    let reg_i = bending_energy(&inv_i)?;
    let reg_j = bending_energy(&inv_j)?;
    let pair_atlas = if weights.gamma1 > 0.0 {
        pair_atlas_loss(sim, image_i, image_j, &fwd_i, &fwd_j)?
    } else {
        T::zero()
    };
    let pair_image = if weights.gamma2 > 0.0 {
        pair_image_loss(sim, image_i, image_j, &fwd_i, &inv_i, &fwd_j, &inv_j)?
    } else {
        T::zero()
    };
    let total = T::lit(weights.sim_weight) * (sim_i + sim_j)
        + T::lit(weights.lambda) * (reg_i + reg_j)
        + T::lit(weights.gamma1) * pair_atlas
        + T::lit(weights.gamma2) * pair_image;
    Ok(PairObjective {
        sim_i,
        sim_j,
        reg_i,
        reg_j,
        pair_atlas,
        pair_image,
        total,
    })
}
