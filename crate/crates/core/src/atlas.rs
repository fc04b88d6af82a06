//! Atlas initialization, the closed-form backward/forward atlas updates, and
//! the gradient-learned atlas with per-epoch accumulation.

use crate::error::{Error, Result};
use crate::grid::{splat, warp, DeformationMap, LabelField, ScalarField, VectorField};
use crate::scalar::Real;

/// Guard on the per-voxel Jacobian weight sum of the forward atlas.
pub const FORWARD_WEIGHT_EPS: f64 = 1e-8;

/// A population of images with optional segmentations.
#[derive(Clone, Debug)]
pub struct Cohort<T> {
    images: Vec<ScalarField<T>>,
    labels: Option<Vec<LabelField>>,
}

impl<T: Real> Cohort<T> {
    pub fn new(images: Vec<ScalarField<T>>, labels: Option<Vec<LabelField>>) -> Result<Self> {
        if images.len() < 2 {
            return Err(Error::invalid(format!(
                "cohort needs at least 2 images, got {}",
                images.len()
            )));
        }
        let shape = images[0].shape();
        for (i, im) in images.iter().enumerate() {
            if im.shape().dims() != shape.dims() {
                return Err(Error::shape(format!(
                    "member {i} has extents {:?}, member 0 has {:?}",
                    im.shape().dims(),
                    shape.dims()
                )));
            }
        }
        if let Some(ls) = &labels {
            if ls.len() != images.len() {
                return Err(Error::invalid(format!(
                    "{} label fields for {} images",
                    ls.len(),
                    images.len()
                )));
            }
            for (i, l) in ls.iter().enumerate() {
                if l.shape().dims() != shape.dims() {
                    return Err(Error::shape(format!("labels of member {i} do not match image extents")));
                }
            }
        }
        Ok(Self { images, labels })
    }

    #[inline]
    pub fn images(&self) -> &[ScalarField<T>] {
        &self.images
    }

    #[inline]
    pub fn labels(&self) -> Option<&[LabelField]> {
        self.labels.as_deref()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.images.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn shape(&self) -> &crate::grid::GridShape {
        self.images[0].shape()
    }
}

fn ensure_nonempty<T>(fields: &[ScalarField<T>], what: &str) -> Result<()> {
    if fields.is_empty() {
        return Err(Error::invalid(format!("{what}: empty input")));
    }
    Ok(())
}

fn voxel_mean<T: Real>(fields: &[ScalarField<T>], what: &str) -> Result<ScalarField<T>> {
    ensure_nonempty(fields, what)?;
    let shape = fields[0].shape();
    for f in fields {
        shape.ensure_same(f.shape(), what)?;
    }
    let n = T::from_usize_lossy(fields.len());
    let mut acc = vec![T::zero(); shape.len()];
    for f in fields {
        for (a, &v) in acc.iter_mut().zip(f.values()) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= n);
    ScalarField::new(shape.clone(), acc)
}

/// Voxelwise mean of the cohort images.
pub fn init_atlas<T: Real>(images: &[ScalarField<T>]) -> Result<ScalarField<T>> {
    voxel_mean(images, "init_atlas")
}

/// Backward-model atlas: plain mean of images already pulled into atlas space.
pub fn atlas_backward<T: Real>(warped: &[ScalarField<T>]) -> Result<ScalarField<T>> {
    voxel_mean(warped, "atlas_backward")
}

/// Forward-model atlas: Jacobian-weighted mean `Σ w_i I_i∘Φ_i / Σ w_i`.
///
/// `warped[i] = I_i ∘ Φ^{v_i}_{0,1}` and `jac_dets[i] = |DΦ^{v_i}_{0,1}|`.
pub fn atlas_forward<T: Real>(warped: &[ScalarField<T>], jac_dets: &[ScalarField<T>]) -> Result<ScalarField<T>> {
    ensure_nonempty(warped, "atlas_forward")?;
    if warped.len() != jac_dets.len() {
        return Err(Error::invalid(format!(
            "atlas_forward: {} images but {} weight fields",
            warped.len(),
            jac_dets.len()
        )));
    }
    let shape = warped[0].shape();
    for (w, j) in warped.iter().zip(jac_dets) {
        shape.ensure_same(w.shape(), "atlas_forward")?;
        shape.ensure_same(j.shape(), "atlas_forward")?;
    }
    let eps = T::lit(FORWARD_WEIGHT_EPS);
    let mut out = Vec::with_capacity(shape.len());
    for x in 0..shape.len() {
        let mut num = T::zero();
        let mut den = T::zero();
        for (w, j) in warped.iter().zip(jac_dets) {
            num += w.values()[x] * j.values()[x];
            den += j.values()[x];
        }
        if den <= eps || !den.is_finite() {
            return Err(Error::DegenerateWeights {
                voxel: x,
                sum: den.to_f64_lossy(),
                eps: FORWARD_WEIGHT_EPS,
            });
        }
        out.push(num / den);
    }
    ScalarField::new(shape.clone(), out)
}

/// Forward data term discretized in atlas space by change of variables:
/// `Σ_i mean(|DΦ_i| (𝓘 - I_i∘Φ_i)²)`. Its exact per-voxel minimizer is
/// [`atlas_forward`].
pub fn forward_data_term_atlas_space<T: Real>(
    atlas: &ScalarField<T>,
    warped: &[ScalarField<T>],
    jac_dets: &[ScalarField<T>],
) -> Result<T> {
    let n = T::from_usize_lossy(atlas.len());
    let mut total = T::zero();
    for (w, j) in warped.iter().zip(jac_dets) {
        atlas.shape().ensure_same(w.shape(), "forward data term")?;
        atlas.shape().ensure_same(j.shape(), "forward data term")?;
        let s: T = atlas
            .values()
            .iter()
            .zip(w.values())
            .zip(j.values())
            .map(|((&a, &b), &jd)| jd * (a - b) * (a - b))
            .sum();
        total += s / n;
    }
    Ok(total)
}

/// Gradient of `mean((𝓘∘Φ_{1,0} - I)²)` with respect to every atlas voxel.
///
/// Computed as the exact adjoint of the warp: the residual `2(𝓘∘Φ_{1,0} - I)/|Ω|`
/// is scattered back through the interpolation weights of `Φ_{1,0}`. In the
/// continuum this equals `2(𝓘 - I∘Φ_{0,1})|DΦ_{0,1}| / |Ω|`.
pub fn atlas_data_gradient<T: Real>(
    atlas: &ScalarField<T>,
    image: &ScalarField<T>,
    inv_map: &DeformationMap<T>,
) -> Result<ScalarField<T>> {
    let pulled = warp(atlas, inv_map)?;
    let residual = crate::losses::Similarity::Mse.residual(&pulled, image)?;
    Ok(splat(&residual, inv_map))
}

/// Adjoint-based atlas gradient for an arbitrary similarity.
pub(crate) fn atlas_similarity_gradient<T: Real>(
    sim: crate::losses::Similarity,
    atlas: &ScalarField<T>,
    image: &ScalarField<T>,
    inv_map: &DeformationMap<T>,
) -> Result<ScalarField<T>> {
    let pulled = warp(atlas, inv_map)?;
    let residual = sim.residual(&pulled, image)?;
    Ok(splat(&residual, inv_map))
}

/// How the atlas is refreshed during optimization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AtlasMode {
    /// Jacobian-weighted mean of the warped images.
    #[default]
    ClosedFormForward,
    /// Plain mean of the warped images.
    ClosedFormBackward,
    /// Gradient descent on the atlas voxels, one step per epoch.
    Learned,
}

impl AtlasMode {
    pub fn name(self) -> &'static str {
        match self {
            AtlasMode::ClosedFormForward => "closed_form_forward",
            AtlasMode::ClosedFormBackward => "closed_form_backward",
            AtlasMode::Learned => "learned",
        }
    }
}

impl std::str::FromStr for AtlasMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "closed_form_forward" => Ok(AtlasMode::ClosedFormForward),
            "closed_form_backward" => Ok(AtlasMode::ClosedFormBackward),
            "learned" => Ok(AtlasMode::Learned),
            other => Err(Error::InvalidConfig(format!("unknown atlas mode '{other}'"))),
        }
    }
}

/// The evolving atlas, one velocity per cohort image, and the learned-atlas accumulator.
#[derive(Clone, Debug)]
pub struct AtlasState<T> {
    pub atlas: ScalarField<T>,
    pub velocities: Vec<VectorField<T>>,
    pub mode: AtlasMode,
    accumulated_gradient: ScalarField<T>,
    epoch_open: bool,
}

impl<T: Real> AtlasState<T> {
    /// Zero velocities, empty accumulator.
    pub fn new(atlas: ScalarField<T>, count: usize, mode: AtlasMode) -> Self {
        let shape = atlas.shape().clone();
        Self {
            velocities: (0..count).map(|_| VectorField::zeros(shape.clone())).collect(),
            accumulated_gradient: ScalarField::zeros(shape),
            atlas,
            mode,
            epoch_open: false,
        }
    }

    pub fn accumulated_gradient(&self) -> &ScalarField<T> {
        &self.accumulated_gradient
    }

    /// Starts accumulating a new epoch of atlas gradients.
    pub fn begin_epoch(&mut self) {
        self.accumulated_gradient.values_mut().iter_mut().for_each(|g| *g = T::zero());
        self.epoch_open = true;
    }

    /// Adds one batch contribution to the accumulator.
    pub fn accumulate(&mut self, contribution: &ScalarField<T>) -> Result<()> {
        if self.mode != AtlasMode::Learned {
            return Err(Error::Sequencing(format!(
                "atlas gradients are only accumulated in learned mode, not {}",
                self.mode.name()
            )));
        }
        if !self.epoch_open {
            return Err(Error::Sequencing("accumulate called outside an epoch".into()));
        }
        self.accumulated_gradient
            .shape()
            .ensure_same(contribution.shape(), "accumulate")?;
        for (a, &c) in self
            .accumulated_gradient
            .values_mut()
            .iter_mut()
            .zip(contribution.values())
        {
            *a += c;
        }
        Ok(())
    }

    /// Marks the current epoch's accumulation complete.
    pub fn end_epoch(&mut self) {
        self.epoch_open = false;
    }

    /// `atlas ← clamp(atlas - step·g, 0, 1)`, then resets the accumulator.
    pub fn apply_learned_update(&mut self, step: T) -> Result<()> {
        if self.mode != AtlasMode::Learned {
            return Err(Error::Sequencing(format!(
                "learned update requested in {} mode",
                self.mode.name()
            )));
        }
        if self.epoch_open {
            return Err(Error::Sequencing(
                "learned atlas update requested before the epoch's accumulation finished".into(),
            ));
        }
        for (a, &g) in self
            .atlas
            .values_mut()
            .iter_mut()
            .zip(self.accumulated_gradient.values())
        {
            *a = (*a - step * g).max(T::zero()).min(T::one());
        }
        self.accumulated_gradient
            .values_mut()
            .iter_mut()
            .for_each(|g| *g = T::zero());
        Ok(())
    }

    /// Shifts the atlas so its mean intensity equals `target`, clamped to `[0, 1]`.
    pub fn recenter_mean(&mut self, target: T) {
        let shift = target - self.atlas.mean();
        for a in self.atlas.values_mut() {
            *a = (*a + shift).max(T::zero()).min(T::one());
        }
    }
}
