//! Seeded synthetic cohorts with known deformations, plus intensity normalization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::atlas::Cohort;
use crate::error::{Error, Result};
use crate::eval::count_folds;
use crate::grid::{gaussian_smooth, gaussian_smooth_vec, warp, warp_labels, DeformationMap, GridShape, LabelField, ScalarField, VectorField};
use crate::scalar::Real;
use crate::svf::{compose, integrate, integrate_inverse};

/// Squaring steps used for ground-truth maps.
const TRUTH_STEPS: usize = 7;
const MAX_TRIES: usize = 100;
/// Blur applied to the template intensities so edges are resolvable by gradients.
const TEMPLATE_BLUR: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub dims: Vec<usize>,
    pub count: usize,
    pub structures: u32,
    /// Largest velocity norm, in voxels.
    pub velocity_scale: f64,
    /// Gaussian σ of the velocity noise, in voxels.
    pub smoothness: f64,
    /// Bound on log-scale, shear and rotation (radians); translations are
    /// bounded by `affine_scale · extent / 2`.
    pub affine_scale: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dims: vec![64, 64],
            count: 8,
            structures: 3,
            velocity_scale: 3.0,
            smoothness: 6.0,
            affine_scale: 0.1,
            noise_sigma: 0.02,
            seed: 17,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        GridShape::new(&self.dims)?;
        if self.count < 2 {
            return Err(Error::InvalidConfig("synthetic cohort needs count >= 2".into()));
        }
        if self.structures < 1 {
            return Err(Error::InvalidConfig("structures must be >= 1".into()));
        }
        let nonneg = [
            ("velocity_scale", self.velocity_scale),
            ("affine_scale", self.affine_scale),
            ("noise_sigma", self.noise_sigma),
        ];
        for (name, x) in nonneg {
            if !(x >= 0.0) || !x.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0")));
            }
        }
        if !(self.smoothness > 0.0) || !self.smoothness.is_finite() {
            return Err(Error::InvalidConfig("smoothness must be > 0".into()));
        }
        Ok(())
    }
}

/// A generated cohort with its template and exact maps.
///
/// `images[i] = template ∘ inverse[i]`, and `forward[i]` undoes `inverse[i]`,
/// matching the `Φ_{0,1}` / `Φ_{1,0}` roles of registered velocities.
#[derive(Clone, Debug)]
pub struct SynthCohort<T> {
    pub cohort: Cohort<T>,
    pub template: ScalarField<T>,
    pub template_labels: LabelField,
    pub forward: Vec<DeformationMap<T>>,
    pub inverse: Vec<DeformationMap<T>>,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-image seed derived from the cohort seed.
pub fn image_seed(seed: u64, index: usize) -> u64 {
    mix(seed ^ mix(index as u64 + 1))
}

/// Nested ellipses (ellipsoids in 3D), label `k` inside shell `k`, intensities
/// rising from 0.4 to 1.0 toward the core.
pub fn template(shape: &GridShape, structures: u32) -> (ScalarField<f64>, LabelField) {
    let d = shape.ndim();
    let dims = shape.extents3();
    let k_total = structures as f64;
    let label_at = |c: [usize; 3]| -> u32 {
        let mut label = 0;
        for k in 1..=structures {
            let s = 1.0 - 0.6 * (k - 1) as f64 / k_total;
            let mut r2 = 0.0;
            for a in 0..d {
                let n = dims[a] as f64;
                let centre = (n - 1.0) / 2.0 + (k - 1) as f64 * n / 64.0 * [1.5, 1.0, 0.5][a];
                let semi = s * n * [0.34, 0.28, 0.3][a];
                r2 += ((c[a] as f64 - centre) / semi).powi(2);
            }
            if r2 <= 1.0 {
                label = k;
            }
        }
        label
    };
    let mut labels = Vec::with_capacity(shape.len());
    for i in 0..shape.len() {
        labels.push(label_at(shape.coords(i)));
    }
    let intensity = |l: u32| -> f64 {
        match l {
            0 => 0.0,
            _ if structures == 1 => 1.0,
            _ => 0.4 + 0.6 * (l - 1) as f64 / (k_total - 1.0),
        }
    };
    let image = ScalarField::new(shape.clone(), labels.iter().map(|&l| intensity(l)).collect()).expect("shape");
    let labels = LabelField::new(shape.clone(), labels, structures).expect("labels within range");
    (gaussian_smooth(&image, TEMPLATE_BLUR), labels)
}

/// Smoothed white noise rescaled so its largest vector norm is `scale`.
pub fn random_smooth_velocity<R: Rng + ?Sized>(shape: &GridShape, scale: f64, sigma: f64, rng: &mut R) -> VectorField<f64> {
    let d = shape.ndim();
    let noise: Vec<f64> = (0..shape.len() * d).map(|_| StandardNormal.sample(rng)).collect();
    let raw = VectorField::new(shape.clone(), noise).expect("shape");
    let smooth = gaussian_smooth_vec(&raw, sigma);
    let m = smooth.max_norm();
    if scale == 0.0 || m == 0.0 {
        return VectorField::zeros(shape.clone());
    }
    smooth.scaled(scale / m)
}

type Mat = [[f64; 3]; 3];

fn matmul(a: &Mat, b: &Mat) -> Mat {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

fn inverse3(m: &Mat) -> Mat {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            inv[i][j] = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / det;
        }
    }
    inv
}

fn rotation(axis: usize, angle: f64) -> Mat {
    let (s, c) = angle.sin_cos();
    let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
    let mut r = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    r[a][a] = c;
    r[a][b] = -s;
    r[b][a] = s;
    r[b][b] = c;
    r
}

/// Random affine map about the grid centre and its exact inverse.
fn random_affine<R: Rng + ?Sized>(shape: &GridShape, bound: f64, rng: &mut R) -> (DeformationMap<f64>, DeformationMap<f64>) {
    let d = shape.ndim();
    let dims = shape.extents3();
    let mut u = |b: f64| if b > 0.0 { rng.random_range(-b..=b) } else { 0.0 };
    let mut scale = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut shear = scale;
    for a in 0..d {
        scale[a][a] = u(bound).exp();
    }
    for a in 0..d {
        for b in a + 1..d {
            shear[a][b] = u(bound);
        }
    }
    let rot = if d == 2 {
        rotation(2, u(bound))
    } else {
        let r = matmul(&rotation(0, u(bound)), &rotation(1, u(bound)));
        matmul(&r, &rotation(2, u(bound)))
    };
    let m = matmul(&rot, &matmul(&scale, &shear));
    let minv = inverse3(&m);
    let mut centre = [0.0; 3];
    let mut shift = [0.0; 3];
    for a in 0..d {
        centre[a] = (dims[a] as f64 - 1.0) / 2.0;
        shift[a] = u(bound * dims[a] as f64 / 2.0);
    }
    let apply = move |mat: Mat, pre: [f64; 3], post: [f64; 3]| {
        move |x: [f64; 3]| {
            let mut y = [0.0; 3];
            for i in 0..d {
                let mut acc = post[i];
                for j in 0..d {
                    acc += mat[i][j] * (x[j] - pre[j]);
                }
                y[i] = acc;
            }
            y
        }
    };
    let mut fwd_post = [0.0; 3];
    let mut inv_pre = [0.0; 3];
    for a in 0..3 {
        fwd_post[a] = centre[a] + shift[a];
        inv_pre[a] = centre[a] + shift[a];
    }
    let map = DeformationMap::from_fn(shape.clone(), apply(m, centre, fwd_post));
    let inv = DeformationMap::from_fn(shape.clone(), apply(minv, inv_pre, centre));
    (map, inv)
}

struct Member {
    image: ScalarField<f64>,
    labels: LabelField,
    forward: DeformationMap<f64>,
    inverse: DeformationMap<f64>,
}

fn generate_member(
    config: &SynthConfig,
    shape: &GridShape,
    tpl: &ScalarField<f64>,
    tpl_labels: &LabelField,
    index: usize,
) -> Result<Member> {
    let mut rng = ChaCha8Rng::seed_from_u64(image_seed(config.seed, index));
    for _ in 0..MAX_TRIES {
        let (aff, aff_inv) = random_affine(shape, config.affine_scale, &mut rng);
        let v = random_smooth_velocity(shape, config.velocity_scale, config.smoothness, &mut rng);
        let inverse = compose(&integrate_inverse(&v, TRUTH_STEPS)?, &aff)?;
        let forward = compose(&aff_inv, &integrate(&v, TRUTH_STEPS)?)?;
        if count_folds(&inverse) > 0 || count_folds(&forward) > 0 {
            continue;
        }
        let mut image = warp(tpl, &inverse)?;
        if config.noise_sigma > 0.0 {
            for x in image.values_mut() {
                let n: f64 = StandardNormal.sample(&mut rng);
                *x = (*x + config.noise_sigma * n).clamp(0.0, 1.0);
            }
        }
        let image = normalize_intensity(&image)?;
        let labels = warp_labels(tpl_labels, &inverse)?;
        return Ok(Member {
            image,
            labels,
            forward,
            inverse,
        });
    }
    Err(Error::Infeasible(format!(
        "image {index}: no fold-free deformation in {MAX_TRIES} draws"
    )))
}

/// Generates a cohort; identical configs give bitwise-identical output.
pub fn generate<T: Real>(config: &SynthConfig) -> Result<SynthCohort<T>> {
    config.validate()?;
    let shape = GridShape::new(&config.dims)?;
    let (raw, tpl_labels) = template(&shape, config.structures);
    let tpl = normalize_intensity(&raw)?;
    let members = (0..config.count)
        .into_par_iter()
        .map(|i| generate_member(config, &shape, &tpl, &tpl_labels, i))
        .collect::<Result<Vec<_>>>()?;
    let cast_map = |m: &DeformationMap<f64>| DeformationMap::from_displacement(m.displacement().cast::<T>());
    let images = members.iter().map(|m| m.image.cast::<T>()).collect();
    let labels = members.iter().map(|m| m.labels.clone()).collect();
    Ok(SynthCohort {
        cohort: Cohort::new(images, Some(labels))?,
        template: tpl.cast(),
        template_labels: tpl_labels,
        forward: members.iter().map(|m| cast_map(&m.forward)).collect(),
        inverse: members.iter().map(|m| cast_map(&m.inverse)).collect(),
    })
}

/// Linearly interpolated order statistic at percentile `p` of sorted values.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = rank - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Maps the 0.1th and 99.9th percentiles to 0 and 1, then clamps to `[0, 1]`.
pub fn normalize_intensity<T: Real>(image: &ScalarField<T>) -> Result<ScalarField<T>> {
    let mut sorted: Vec<f64> = image.values().iter().map(|v| v.to_f64_lossy()).collect();
    if sorted.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("image has non-finite intensities"));
    }
    sorted.sort_by(f64::total_cmp);
    let lo = percentile(&sorted, 0.1);
    let hi = percentile(&sorted, 99.9);
    if !(hi > lo) {
        return Err(Error::DegenerateIntensity(format!(
            "percentile range [{lo}, {hi}] is empty"
        )));
    }
    let (lo_t, span) = (T::lit(lo), T::lit(hi - lo));
    Ok(image.map(|v| ((v - lo_t) / span).max(T::zero()).min(T::one())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            dims: vec![32, 32],
            count: 3,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = generate::<f64>(&small()).unwrap();
        let b = generate::<f64>(&small()).unwrap();
        for i in 0..3 {
            assert_eq!(a.cohort.images()[i], b.cohort.images()[i]);
            assert_eq!(a.forward[i], b.forward[i]);
        }
        let c = generate::<f64>(&SynthConfig { seed: 18, ..small() }).unwrap();
        assert_ne!(a.cohort.images()[0], c.cohort.images()[0]);
    }

    #[test]
    fn undeformed_config_copies_template() {
        let cfg = SynthConfig {
            velocity_scale: 0.0,
            affine_scale: 0.0,
            noise_sigma: 0.0,
            ..small()
        };
        let s = generate::<f64>(&cfg).unwrap();
        for i in 0..3 {
            assert_eq!(s.cohort.images()[i], s.template);
            assert_eq!(&s.cohort.labels().unwrap()[i], &s.template_labels);
        }
    }

    #[test]
    fn maps_are_fold_free_and_mutually_inverse() {
        let s = generate::<f64>(&small()).unwrap();
        let shape = s.template.shape().clone();
        for i in 0..3 {
            assert_eq!(count_folds(&s.forward[i]), 0);
            assert_eq!(count_folds(&s.inverse[i]), 0);
            let round = compose(&s.forward[i], &s.inverse[i]).unwrap();
            for x in shape.interior_indices(6) {
                let u = round.displacement().at(x);
                assert!(u[0].hypot(u[1]) < 0.5);
            }
            let mut seen: Vec<u32> = s.cohort.labels().unwrap()[i].labels().to_vec();
            seen.sort_unstable();
            seen.dedup();
            assert_eq!(seen, vec![0, 1, 2, 3]);
        }
    }

    #[test]
    fn template_structures_are_nested_and_large() {
        let shape = GridShape::new(&[64, 64]).unwrap();
        let (img, labels) = template(&shape, 3);
        for k in 1..=3 {
            let count = labels.labels().iter().filter(|&&l| l == k).count();
            assert!(count >= 100, "structure {k} has {count} voxels");
        }
        assert_eq!(labels.labels()[shape.index(&[31, 31])], 3);
        assert_eq!(labels.labels()[0], 0);
        assert!(img.values().iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
    }

    #[test]
    fn velocity_scale_is_max_norm() {
        let shape = GridShape::new(&[20, 20]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_smooth_velocity(&shape, 2.5, 3.0, &mut rng);
        assert!((v.max_norm() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn affine_inverse_is_exact() {
        let shape = GridShape::new(&[16, 16]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (m, minv) = random_affine(&shape, 0.2, &mut rng);
        // exact wherever the inner map stays inside the grid
        let roundtrip = compose(&minv, &m).unwrap();
        for x in 0..shape.len() {
            let p = m.point(x);
            if p[..2].iter().all(|&c| (0.0..=15.0).contains(&c)) {
                let u = roundtrip.displacement().at(x);
                assert!(u[0].abs() < 1e-9 && u[1].abs() < 1e-9);
            }
        }
    }

    #[test]
    fn normalization_matches_sort_oracle() {
        let shape = GridShape::new(&[1000, 2]).unwrap();
        let img = ScalarField::from_fn(shape, |c| ((c[0] * 7919 + c[1] * 13) % 1000) as f64 * 0.37 - 5.0);
        let out = normalize_intensity(&img).unwrap();
        let mut sorted = img.values().to_vec();
        sorted.sort_by(f64::total_cmp);
        let oracle = |p: f64| {
            let r = p / 100.0 * 1999.0;
            let i = r as usize;
            sorted[i] + (r - i as f64) * (sorted[i + 1] - sorted[i])
        };
        let (lo, hi) = (oracle(0.1), oracle(99.9));
        for (&a, &b) in img.values().iter().zip(out.values()) {
            let expected = ((a - lo) / (hi - lo)).clamp(0.0, 1.0);
            assert!((expected - b).abs() < 1e-9);
        }
        assert!(out.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn normalization_rejects_constant_and_is_monotone() {
        let shape = GridShape::new(&[6, 6]).unwrap();
        assert!(matches!(
            normalize_intensity(&ScalarField::filled(shape.clone(), 0.3f64)),
            Err(Error::DegenerateIntensity(_))
        ));
        let img = ScalarField::from_fn(shape, |c| (c[0] as f64 - 2.5).powi(3) + c[1] as f64);
        let out = normalize_intensity(&img).unwrap();
        for i in 0..img.len() {
            for j in 0..img.len() {
                if img.values()[i] <= img.values()[j] {
                    assert!(out.values()[i] <= out.values()[j]);
                }
            }
        }
    }
}
