use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{
    jacobian_determinant, jacobian_matrix, sample_gradient, sample_vec, splat_vec, warp_unchecked, DeformationMap,
    ScalarField, VectorField,
};
use crate::losses::{velocity_bending, LossWeights, Similarity};
use crate::optim::regularizer_gradient;
use crate::scalar::Real;
use crate::svf::{compose_unchecked, integrate, integrate_inverse, midpoint_flows};

/// Every unordered pair `(i, j)` with `i < j`.
pub fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

/// A random disjoint pairing of `0..n`.
///
/// For odd `n` the leftover index is paired with the first index of the shuffle.
pub fn random_pairs<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut pairs: Vec<(usize, usize)> = idx
        .chunks_exact(2)
        .map(|c| (c[0].min(c[1]), c[0].max(c[1])))
        .collect();
    if n % 2 == 1 && n > 1 {
        let (a, b) = (idx[n - 1], idx[0]);
        pairs.push((a.min(b), a.max(b)));
    }
    pairs
}

/// Weighted energy terms; `total` is their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnergyBreakdown<T> {
    pub sim: T,
    pub reg: T,
    pub pair_atlas: T,
    pub pair_image: T,
    pub total: T,
}

/// Per-velocity gradients of the pairwise energy plus the energy they belong to.
#[derive(Clone, Debug)]
pub struct GradientReport<T> {
    pub gradients: Vec<VectorField<T>>,
    pub energy: EnergyBreakdown<T>,
    /// Largest per-voxel vector norm over all gradients.
    pub max_norm: T,
    /// `Φ_{0,1}` of every velocity at which the gradient was taken.
    pub forward_maps: Vec<DeformationMap<T>>,
    /// `Φ_{1,0}` of every velocity at which the gradient was taken.
    pub inverse_maps: Vec<DeformationMap<T>>,
}

struct MapCache<T> {
    fwd: Vec<DeformationMap<T>>,
    inv: Vec<DeformationMap<T>>,
    /// `I_j ∘ Φ^j_{0,1}`.
    pulled: Vec<ScalarField<T>>,
}

impl<T: Real> MapCache<T> {
    fn build(images: &[ScalarField<T>], velocities: &[VectorField<T>], steps: usize) -> Result<Self> {
        let parts = images
            .par_iter()
            .zip(velocities.par_iter())
            .map(|(img, v)| {
                let fwd = integrate(v, steps)?;
                let inv = integrate_inverse(v, steps)?;
                let pulled = warp_unchecked(img, &fwd);
                Ok((fwd, inv, pulled))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut cache = MapCache {
            fwd: Vec::with_capacity(parts.len()),
            inv: Vec::with_capacity(parts.len()),
            pulled: Vec::with_capacity(parts.len()),
        };
        for (f, i, p) in parts {
            cache.fwd.push(f);
            cache.inv.push(i);
            cache.pulled.push(p);
        }
        Ok(cache)
    }
}

struct Problem<'a, T> {
    images: &'a [ScalarField<T>],
    atlas: &'a ScalarField<T>,
    velocities: &'a [VectorField<T>],
    weights: LossWeights,
    sim: Similarity,
    t_samples: usize,
    steps: usize,
}

fn validate<T: Real>(p: &Problem<'_, T>, pairs: &[(usize, usize)]) -> Result<()> {
    p.weights.validate()?;
    if p.t_samples < 1 || p.steps < 1 {
        return Err(Error::invalid("quadrature samples and squaring steps must be >= 1"));
    }
    if p.images.len() != p.velocities.len() {
        return Err(Error::invalid(format!(
            "{} images but {} velocities",
            p.images.len(),
            p.velocities.len()
        )));
    }
    if p.weights.has_pairwise() && p.images.len() < 2 {
        return Err(Error::invalid("pairwise terms need at least 2 images"));
    }
    let shape = p.atlas.shape();
    for (im, v) in p.images.iter().zip(p.velocities) {
        shape.ensure_same(im.shape(), "pairwise gradient")?;
        shape.ensure_same(v.shape(), "pairwise gradient")?;
    }
    for &(i, j) in pairs {
        if i == j || i >= p.images.len() || j >= p.images.len() {
            return Err(Error::invalid(format!("invalid pair ({i}, {j})")));
        }
    }
    Ok(())
}

fn partners(n: usize, pairs: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); n];
    for &(i, j) in pairs {
        out[i].push(j);
        out[j].push(i);
    }
    out
}

/// Sensitivity of image `i`'s energy share to its end maps, as interleaved
/// covector fields: `inverse` pairs with `Φ_{1,0}`, `forward` with `Φ_{0,1}`.
struct EndSensitivities<T> {
    inverse: Option<Vec<T>>,
    forward: Option<Vec<T>>,
}

/// `DΦ(p)` of a map sampled at an arbitrary point, from the exact cell slopes
/// of its displacement components.
fn map_jacobian_at<T: Real>(components: &[ScalarField<T>], p: &[T; 3]) -> [[T; 3]; 3] {
    let mut m = [[T::zero(); 3]; 3];
    for (k, comp) in components.iter().enumerate() {
        let g = sample_gradient(comp.shape(), comp.values(), p);
        for a in 0..components.len() {
            m[k][a] = g[a] + if a == k { T::one() } else { T::zero() };
        }
    }
    m
}

fn displacement_components<T: Real>(map: &DeformationMap<T>) -> Vec<ScalarField<T>> {
    let shape = map.shape();
    let d = shape.ndim();
    let u = map.displacement().values();
    (0..d)
        .map(|k| {
            let vals = (0..shape.len()).map(|i| u[i * d + k]).collect();
            ScalarField::new(shape.clone(), vals).expect("shape preserved")
        })
        .collect()
}

/// `out[x] += r[x] · Mᵀ(x) · ∇image(q(x))`, with `M = Id` when `outer` is absent.
fn add_covector<T: Real>(
    out: &mut [T],
    r: &ScalarField<T>,
    image: &ScalarField<T>,
    q: &DeformationMap<T>,
    outer: Option<(&[ScalarField<T>], &DeformationMap<T>)>,
) {
    let shape = r.shape();
    let d = shape.ndim();
    out.par_chunks_mut(d)
        .with_min_len(256)
        .enumerate()
        .for_each(|(x, o)| {
            let g = sample_gradient(shape, image.values(), &q.point(x));
            let g = match outer {
                None => g,
                Some((comps, inner)) => {
                    let m = map_jacobian_at(comps, &inner.point(x));
                    let mut h = [T::zero(); 3];
                    for (a, ha) in h.iter_mut().enumerate().take(d) {
                        for k in 0..d {
                            *ha += m[k][a] * g[k];
                        }
                    }
                    h
                }
            };
            let rx = r.values()[x];
            for a in 0..d {
                o[a] += rx * g[a];
            }
        });
}

fn end_sensitivities<T: Real>(
    p: &Problem<'_, T>,
    cache: &MapCache<T>,
    i: usize,
    partners: &[usize],
    multiplicity: usize,
) -> Result<EndSensitivities<T>> {
    let w = p.weights;
    let shape = p.atlas.shape();
    let len = shape.len() * shape.ndim();
    let image = &p.images[i];
    let mut inverse = None;
    let mut forward = None;

    if w.sim_weight > 0.0 {
        let g = inverse.get_or_insert_with(|| vec![T::zero(); len]);
        let pulled = warp_unchecked(p.atlas, &cache.inv[i]);
        let scale = T::lit(w.sim_weight) * T::from_usize_lossy(multiplicity);
        let r = p.sim.residual(&pulled, image)?.map(|x| x * scale);
        add_covector(g, &r, p.atlas, &cache.inv[i], None);
    }
    if w.gamma1 > 0.0 {
        for &j in partners {
            let g = forward.get_or_insert_with(|| vec![T::zero(); len]);
            let r = p.sim.residual(&cache.pulled[i], &cache.pulled[j])?.map(|x| x * T::lit(w.gamma1));
            add_covector(g, &r, image, &cache.fwd[i], None);
        }
    }
    if w.gamma2 > 0.0 {
        for &j in partners {
            let carry = compose_unchecked(&cache.fwd[i], &cache.inv[j]);
            let r = p.sim.residual(&warp_unchecked(image, &carry), &p.images[j])?.map(|x| x * T::lit(w.gamma2));
            let mut q = vec![T::zero(); len];
            add_covector(&mut q, &r, image, &carry, None);
            let pushed = splat_vec(&VectorField::from_raw(shape.clone(), q), &cache.inv[j]);
            add_into(forward.get_or_insert_with(|| vec![T::zero(); len]), pushed.values());

            let carry = compose_unchecked(&cache.fwd[j], &cache.inv[i]);
            let r = p.sim.residual(&warp_unchecked(&p.images[j], &carry), image)?.map(|x| x * T::lit(w.gamma2));
            let comps = displacement_components(&cache.fwd[j]);
            let g = inverse.get_or_insert_with(|| vec![T::zero(); len]);
            add_covector(g, &r, &p.images[j], &carry, Some((&comps, &cache.inv[i])));
        }
    }
    Ok(EndSensitivities { inverse, forward })
}

fn add_into<T: Real>(acc: &mut [T], other: &[T]) {
    for (a, &b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}

/// `g[z] += coef · |DΦ_a(z)| · DΦ_b(z)ᵀ · G(Φ_c(z))`.
fn transport<T: Real>(
    g: &mut [T],
    coef: T,
    sens: &[T],
    jac_map: &DeformationMap<T>,
    chain_map: &DeformationMap<T>,
    sample_map: &DeformationMap<T>,
) {
    let shape = jac_map.shape();
    let d = shape.ndim();
    let det = jacobian_determinant(jac_map);
    g.par_chunks_mut(d)
        .with_min_len(256)
        .enumerate()
        .for_each(|(z, gz)| {
            let s = sample_vec(shape, sens, &sample_map.point(z));
            let m = jacobian_matrix(chain_map, z);
            let c = coef * det.values()[z];
            for (a, ga) in gz.iter_mut().enumerate() {
                let mut acc = T::zero();
                for k in 0..d {
                    acc += m[k][a] * s[k];
                }
                *ga += c * acc;
            }
        });
}

/// Gradient of image `i`'s share of the energy with respect to `v_i`.
///
/// End-map sensitivities are carried along the flow by midpoint quadrature:
/// `-∫ |DΦ_{t,1}| DΦ_{t,0}ᵀ G_inv∘Φ_{t,1} dt + ∫ |DΦ_{t,0}| DΦ_{t,1}ᵀ G_fwd∘Φ_{t,0} dt`.
fn image_gradient<T: Real>(
    p: &Problem<'_, T>,
    cache: &MapCache<T>,
    i: usize,
    partners: &[usize],
    multiplicity: usize,
) -> Result<VectorField<T>> {
    let v = &p.velocities[i];
    let shape = v.shape();
    let w = p.weights;
    let mut g = vec![T::zero(); v.values().len()];
    if multiplicity == 0 {
        return Ok(VectorField::from_raw(shape.clone(), g));
    }
    let sens = end_sensitivities(p, cache, i, partners, multiplicity)?;
    let tq = T::from_usize_lossy(p.t_samples);
    if sens.inverse.is_some() || sens.forward.is_some() {
        let backward = midpoint_flows(&v.scaled(-T::one()), p.t_samples, p.steps)?;
        let forward = midpoint_flows(v, p.t_samples, p.steps)?;
        for m in 0..p.t_samples {
            // Φ_{t,0} = exp(-t v), Φ_{t,1} = exp((1 - t) v) and 1 - t_m = t_{T-1-m}
            let phi_t0 = &backward[m];
            let phi_t1 = &forward[p.t_samples - 1 - m];
            if let Some(s) = &sens.inverse {
                transport(&mut g, -T::one() / tq, s, phi_t1, phi_t0, phi_t1);
            }
            if let Some(s) = &sens.forward {
                transport(&mut g, T::one() / tq, s, phi_t0, phi_t1, phi_t0);
            }
        }
    }

    let mut grad = VectorField::from_raw(shape.clone(), g);
    if w.lambda > 0.0 {
        let scale = T::lit(w.lambda) * T::from_usize_lossy(multiplicity);
        grad.add_scaled(&regularizer_gradient(v)?, scale);
    }
    if !grad.is_finite() {
        return Err(Error::NumericFailure(format!("non-finite gradient for image {i}")));
    }
    Ok(grad)
}

fn energy_from_cache<T: Real>(
    p: &Problem<'_, T>,
    cache: &MapCache<T>,
    pairs: &[(usize, usize)],
    multiplicity: &[usize],
) -> Result<EnergyBreakdown<T>> {
    let w = p.weights;
    let per_image = (0..p.images.len())
        .into_par_iter()
        .map(|i| {
            let c = T::from_usize_lossy(multiplicity[i]);
            if multiplicity[i] == 0 {
                return Ok((T::zero(), T::zero()));
            }
            let sim = if w.sim_weight > 0.0 {
                p.sim.eval(&warp_unchecked(p.atlas, &cache.inv[i]), &p.images[i])? * T::lit(w.sim_weight) * c
            } else {
                T::zero()
            };
            let reg = if w.lambda > 0.0 {
                velocity_bending(&p.velocities[i])? * T::lit(w.lambda) * c
            } else {
                T::zero()
            };
            Ok((sim, reg))
        })
        .collect::<Result<Vec<_>>>()?;
    let per_pair = pairs
        .par_iter()
        .map(|&(i, j)| {
            let pa = if w.gamma1 > 0.0 {
                p.sim.eval(&cache.pulled[i], &cache.pulled[j])? * T::lit(w.gamma1)
            } else {
                T::zero()
            };
            let pi = if w.gamma2 > 0.0 {
                let i_to_j = warp_unchecked(&p.images[i], &compose_unchecked(&cache.fwd[i], &cache.inv[j]));
                let j_to_i = warp_unchecked(&p.images[j], &compose_unchecked(&cache.fwd[j], &cache.inv[i]));
                (p.sim.eval(&i_to_j, &p.images[j])? + p.sim.eval(&j_to_i, &p.images[i])?) * T::lit(w.gamma2)
            } else {
                T::zero()
            };
            Ok((pa, pi))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut e = EnergyBreakdown::default();
    for (s, r) in per_image {
        e.sim += s;
        e.reg += r;
    }
    for (a, b) in per_pair {
        e.pair_atlas += a;
        e.pair_image += b;
    }
    e.total = e.sim + e.reg + e.pair_atlas + e.pair_image;
    Ok(e)
}

fn multiplicities(n: usize, pairs: &[(usize, usize)]) -> Vec<usize> {
    partners(n, pairs).iter().map(Vec::len).collect()
}

/// Discrete pairwise energy over `pairs`:
/// `Σ_(i,j) [w·(sim_i + sim_j) + λ·(Reg(v_i) + Reg(v_j)) + γ₁·pair_atlas + γ₂·pair_image]`,
/// with `Reg` the velocity Hessian penalty.
#[allow(clippy::too_many_arguments)]
pub fn pairwise_energy<T: Real>(
    images: &[ScalarField<T>],
    atlas: &ScalarField<T>,
    velocities: &[VectorField<T>],
    weights: &LossWeights,
    sim: Similarity,
    pairs: &[(usize, usize)],
    steps: usize,
) -> Result<EnergyBreakdown<T>> {
    let p = Problem {
        images,
        atlas,
        velocities,
        weights: *weights,
        sim,
        t_samples: 1,
        steps,
    };
    validate(&p, pairs)?;
    let cache = MapCache::build(images, velocities, steps)?;
    energy_from_cache(&p, &cache, pairs, &multiplicities(images.len(), pairs))
}

/// Gradient of `w·sim(𝓘∘Φ^v_{1,0}, I) + λ·Reg(v)` with respect to `v`.
///
/// The data part is the time integral
/// `-2/|Ω| ∫ |DΦ_{t,1}| (𝓘∘Φ_{t,0} - I∘Φ_{t,1}) ∇(𝓘∘Φ_{t,0}) dt`
/// by midpoint quadrature with `t_samples` nodes.
#[allow(clippy::too_many_arguments)]
pub fn el_gradient_vanilla<T: Real>(
    atlas: &ScalarField<T>,
    image: &ScalarField<T>,
    v: &VectorField<T>,
    weights: &LossWeights,
    sim: Similarity,
    t_samples: usize,
    steps: usize,
) -> Result<VectorField<T>> {
    let weights = LossWeights {
        gamma1: 0.0,
        gamma2: 0.0,
        ..*weights
    };
    let images = std::slice::from_ref(image);
    let velocities = std::slice::from_ref(v);
    let p = Problem {
        images,
        atlas,
        velocities,
        weights,
        sim,
        t_samples,
        steps,
    };
    validate(&p, &[])?;
    let cache = MapCache::build(images, velocities, steps)?;
    image_gradient(&p, &cache, 0, &[], 1)
}

/// Gradients of the pairwise energy over `pairs` with respect to every velocity.
///
/// Image `i` with partner set `P(i)` collects `|P(i)|` copies of its data and
/// regularizer gradients, the atlas-space pair term driving `I_i∘Φ_{0,1}` toward
/// the mean over `P(i) ∪ {i}`, the image-space term toward the Jacobian-weighted
/// mean, and one cross term per partner.
#[allow(clippy::too_many_arguments)]
pub fn el_gradient_pairwise<T: Real>(
    images: &[ScalarField<T>],
    atlas: &ScalarField<T>,
    velocities: &[VectorField<T>],
    weights: &LossWeights,
    sim: Similarity,
    pairs: &[(usize, usize)],
    t_samples: usize,
    steps: usize,
) -> Result<GradientReport<T>> {
    let p = Problem {
        images,
        atlas,
        velocities,
        weights: *weights,
        sim,
        t_samples,
        steps,
    };
    validate(&p, pairs)?;
    let cache = MapCache::build(images, velocities, steps)?;
    let part = partners(images.len(), pairs);
    let mult: Vec<usize> = part.iter().map(Vec::len).collect();
    let energy = energy_from_cache(&p, &cache, pairs, &mult)?;
    let gradients = (0..images.len())
        .into_par_iter()
        .map(|i| image_gradient(&p, &cache, i, &part[i], mult[i]))
        .collect::<Result<Vec<_>>>()?;
    let max_norm = gradients
        .iter()
        .map(|g| g.max_norm())
        .fold(T::zero(), |a, b| a.max(b));
    Ok(GradientReport {
        gradients,
        energy,
        max_norm,
        forward_maps: cache.fwd,
        inverse_maps: cache.inv,
    })
}
