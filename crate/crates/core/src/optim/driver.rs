use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::atlas::{
    atlas_backward, atlas_forward, atlas_similarity_gradient, init_atlas, AtlasMode, AtlasState, Cohort,
};
use crate::error::{Error, Result};
use crate::eval::count_folds;
use crate::grid::{jacobian_determinant, warp, warp_unchecked, DeformationMap, ScalarField, VectorField};
use crate::losses::{bending_energy, velocity_bending};
use crate::optim::{
    all_pairs, el_gradient_pairwise, el_gradient_vanilla, random_pairs, update_velocity, EnergyBreakdown,
    MomentState, OptimConfig, PairSampling,
};
use crate::scalar::Real;
use crate::svf::{integrate, integrate_inverse};

/// Column header of the per-epoch training log.
pub const LOG_HEADER: &str = "epoch,total,sim,reg,pair_atlas,pair_image,folds,wall_time,map_bending";

/// One row of the training log.
///
/// Loss terms are weighted and evaluated at the start of the epoch; `reg` is the
/// optimized velocity penalty, `map_bending` the mean bending energy of the
/// `Φ_{1,0}` maps, and `folds` the mean fold count per map.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub total: f64,
    pub sim: f64,
    pub reg: f64,
    pub pair_atlas: f64,
    pub pair_image: f64,
    pub folds: f64,
    pub wall_time: f64,
    pub map_bending: f64,
}

impl EpochLog {
    fn from_energy<T: Real>(epoch: usize, e: &EnergyBreakdown<T>) -> Self {
        Self {
            epoch,
            total: e.total.to_f64_lossy(),
            sim: e.sim.to_f64_lossy(),
            reg: e.reg.to_f64_lossy(),
            pair_atlas: e.pair_atlas.to_f64_lossy(),
            pair_image: e.pair_image.to_f64_lossy(),
            folds: 0.0,
            wall_time: 0.0,
            map_bending: 0.0,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.total,
            self.sim,
            self.reg,
            self.pair_atlas,
            self.pair_image,
            self.folds,
            self.wall_time,
            self.map_bending
        )
    }
}

/// Outcome of [`run_atlas_build`].
#[derive(Clone, Debug)]
pub struct BuildResult<T> {
    pub state: AtlasState<T>,
    pub log: Vec<EpochLog>,
    /// Atlas after every refresh, tagged with the epoch.
    pub snapshots: Vec<(usize, ScalarField<T>)>,
    pub forward_maps: Vec<DeformationMap<T>>,
    pub inverse_maps: Vec<DeformationMap<T>>,
}

/// Outcome of [`register`].
#[derive(Clone, Debug)]
pub struct RegisterResult<T> {
    pub velocity: VectorField<T>,
    pub forward: DeformationMap<T>,
    pub inverse: DeformationMap<T>,
    pub log: Vec<EpochLog>,
}

fn tag_epoch(epoch: usize, e: Error) -> Error {
    match e {
        Error::NumericFailure(msg) => Error::NumericFailure(format!("epoch {epoch}: {msg}")),
        other => other,
    }
}

fn closed_form_atlas<T: Real>(
    images: &[ScalarField<T>],
    velocities: &[VectorField<T>],
    mode: AtlasMode,
    steps: usize,
) -> Result<ScalarField<T>> {
    let parts = images
        .par_iter()
        .zip(velocities.par_iter())
        .map(|(img, v)| {
            let fwd = integrate(v, steps)?;
            Ok((warp_unchecked(img, &fwd), jacobian_determinant(&fwd)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (warped, jac): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    match mode {
        AtlasMode::ClosedFormForward => atlas_forward(&warped, &jac),
        AtlasMode::ClosedFormBackward => atlas_backward(&warped),
        AtlasMode::Learned => Err(Error::Sequencing("closed-form refresh in learned mode".into())),
    }
}

fn map_stats<T: Real>(maps: &[DeformationMap<T>]) -> Result<(f64, f64)> {
    let stats = maps
        .par_iter()
        .map(|m| Ok((count_folds(m) as f64, bending_energy(m)?.to_f64_lossy())))
        .collect::<Result<Vec<_>>>()?;
    let n = stats.len().max(1) as f64;
    let folds = stats.iter().map(|s| s.0).sum::<f64>() / n;
    let bending = stats.iter().map(|s| s.1).sum::<f64>() / n;
    Ok((folds, bending))
}

/// Alternating atlas building.
///
/// Starts from the mean image and zero velocities. Each epoch draws pairs,
/// takes one update of every velocity along its pairwise gradient, and then
/// either applies the learned atlas step or, every `atlas_refresh_period`
/// epochs, recomputes the closed-form atlas from the current maps.
pub fn run_atlas_build<T: Real>(cohort: &Cohort<T>, config: &OptimConfig) -> Result<BuildResult<T>> {
    config.validate()?;
    let images = cohort.images();
    let n = images.len();
    let mut state = AtlasState::new(init_atlas(images)?, n, config.atlas_mode);
    let target_mean = state.atlas.mean();
    let mut moments: Vec<MomentState<T>> = (0..n).map(|_| MomentState::new()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let rule = config.update_rule();
    let start = Instant::now();
    let mut log = Vec::with_capacity(config.epochs);
    let mut snapshots = Vec::new();

    for epoch in 1..=config.epochs {
        let pairs = match config.pair_sampling {
            PairSampling::AllPairs => all_pairs(n),
            PairSampling::RandomPairsPerEpoch => random_pairs(n, &mut rng),
        };
        let report = el_gradient_pairwise(
            images,
            &state.atlas,
            &state.velocities,
            &config.weights,
            config.similarity,
            &pairs,
            config.quadrature_samples,
            config.squaring_steps,
        )
        .map_err(|e| tag_epoch(epoch, e))?;
        if !report.energy.total.is_finite() {
            return Err(Error::NumericFailure(format!("epoch {epoch}: non-finite energy")));
        }
        let mut row = EpochLog::from_energy(epoch, &report.energy);
        let (folds, bending) = map_stats(&report.inverse_maps)?;
        row.folds = folds;
        row.map_bending = bending;

        if config.atlas_mode == AtlasMode::Learned {
            let mut count = vec![0usize; n];
            for &(i, j) in &pairs {
                count[i] += 1;
                count[j] += 1;
            }
            let contributions = (0..n)
                .into_par_iter()
                .map(|i| {
                    let g = atlas_similarity_gradient(config.similarity, &state.atlas, &images[i], &report.inverse_maps[i])?;
                    let scale = T::lit(config.weights.sim_weight) * T::from_usize_lossy(count[i]);
                    Ok(g.map(|x| x * scale))
                })
                .collect::<Result<Vec<_>>>()?;
            state.begin_epoch();
            for c in &contributions {
                state.accumulate(c)?;
            }
            state.end_epoch();
        }

        for ((v, g), m) in state
            .velocities
            .iter_mut()
            .zip(&report.gradients)
            .zip(moments.iter_mut())
        {
            update_velocity(v, g, &rule, m).map_err(|e| tag_epoch(epoch, e))?;
        }

        let refresh = epoch % config.atlas_refresh_period == 0;
        match config.atlas_mode {
            AtlasMode::Learned => {
                state.apply_learned_update(T::lit(config.atlas_step))?;
                if config.similarity == crate::losses::Similarity::Ncc {
                    state.recenter_mean(target_mean);
                }
            }
            mode if refresh => {
                state.atlas = closed_form_atlas(images, &state.velocities, mode, config.squaring_steps)
                    .map_err(|e| tag_epoch(epoch, e))?;
                if config.reset_momentum {
                    moments.iter_mut().for_each(MomentState::reset);
                }
            }
            _ => {}
        }
        if refresh {
            snapshots.push((epoch, state.atlas.clone()));
        }
        if config.log_wall_time {
            row.wall_time = start.elapsed().as_secs_f64();
        }
        log.push(row);
    }

    let maps = state
        .velocities
        .par_iter()
        .map(|v| Ok((integrate(v, config.squaring_steps)?, integrate_inverse(v, config.squaring_steps)?)))
        .collect::<Result<Vec<_>>>()?;
    let (forward_maps, inverse_maps) = maps.into_iter().unzip();
    Ok(BuildResult {
        state,
        log,
        snapshots,
        forward_maps,
        inverse_maps,
    })
}

/// Registers one image to a frozen atlas with the vanilla objective
/// `w·sim(𝓘∘Φ_{1,0}, I) + λ·Reg(v)`, starting from `v = 0`.
pub fn register<T: Real>(atlas: &ScalarField<T>, image: &ScalarField<T>, config: &OptimConfig) -> Result<RegisterResult<T>> {
    let mut check = config.clone();
    check.atlas_mode = AtlasMode::Learned;
    check.validate()?;
    atlas.shape().ensure_same(image.shape(), "register")?;
    let weights = crate::losses::LossWeights {
        gamma1: 0.0,
        gamma2: 0.0,
        ..config.weights
    };
    let rule = config.update_rule();
    let mut v = VectorField::zeros(atlas.shape().clone());
    let mut moments = MomentState::new();
    let mut log = Vec::with_capacity(config.epochs);
    let start = Instant::now();
    for epoch in 1..=config.epochs {
        let inv = integrate_inverse(&v, config.squaring_steps)?;
        let sim = config.similarity.eval(&warp(atlas, &inv)?, image)? * T::lit(weights.sim_weight);
        let reg = if weights.lambda > 0.0 {
            velocity_bending(&v)? * T::lit(weights.lambda)
        } else {
            T::zero()
        };
        let energy = EnergyBreakdown {
            sim,
            reg,
            total: sim + reg,
            ..EnergyBreakdown::default()
        };
        if !energy.total.is_finite() {
            return Err(Error::NumericFailure(format!("epoch {epoch}: non-finite energy")));
        }
        let mut row = EpochLog::from_energy(epoch, &energy);
        row.folds = count_folds(&inv) as f64;
        row.map_bending = bending_energy(&inv)?.to_f64_lossy();
        let g = el_gradient_vanilla(
            atlas,
            image,
            &v,
            &weights,
            config.similarity,
            config.quadrature_samples,
            config.squaring_steps,
        )
        .map_err(|e| tag_epoch(epoch, e))?;
        update_velocity(&mut v, &g, &rule, &mut moments).map_err(|e| tag_epoch(epoch, e))?;
        if config.log_wall_time {
            row.wall_time = start.elapsed().as_secs_f64();
        }
        log.push(row);
    }
    Ok(RegisterResult {
        forward: integrate(&v, config.squaring_steps)?,
        inverse: integrate_inverse(&v, config.squaring_steps)?,
        velocity: v,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;
    use crate::losses::{LossWeights, Similarity};
    use crate::optim::{pairwise_energy, Method};

    fn blob(shape: &GridShape, cx: f64, cy: f64, r: f64) -> ScalarField<f64> {
        ScalarField::from_fn(shape.clone(), |c| {
            let dx = c[0] as f64 - cx;
            let dy = c[1] as f64 - cy;
            (-(dx * dx + dy * dy) / (2.0 * r * r)).exp()
        })
    }

    fn small_config() -> OptimConfig {
        OptimConfig {
            epochs: 6,
            atlas_refresh_period: 2,
            quadrature_samples: 3,
            squaring_steps: 4,
            weights: LossWeights {
                sim_weight: 10.0,
                lambda: 1.0,
                gamma1: 0.5,
                gamma2: 0.5,
            },
            ..OptimConfig::default()
        }
    }

    #[test]
    fn identical_cohort_stays_put() {
        let s = GridShape::new(&[16, 16]).unwrap();
        let img = blob(&s, 8.0, 7.0, 3.0);
        let cohort = Cohort::new(vec![img.clone(); 4], None).unwrap();
        let r = run_atlas_build(&cohort, &small_config()).unwrap();
        assert!(r.log[0].total < 1e-12);
        assert!(r.log.last().unwrap().total < 1e-4);
        for (a, b) in r.state.atlas.values().iter().zip(img.values()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(r.snapshots.len(), 3);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let s = GridShape::new(&[16, 16]).unwrap();
        let imgs = vec![blob(&s, 7.0, 8.0, 3.0), blob(&s, 9.0, 7.5, 2.5), blob(&s, 8.0, 8.5, 3.2), blob(&s, 8.5, 6.5, 2.8)];
        let cohort = Cohort::new(imgs, None).unwrap();
        let a = run_atlas_build(&cohort, &small_config()).unwrap();
        let b = run_atlas_build(&cohort, &small_config()).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.state.atlas, b.state.atlas);
        assert_eq!(a.state.velocities, b.state.velocities);
        assert!(a.log.iter().all(|r| r.wall_time == 0.0));
    }

    #[test]
    fn ncc_with_closed_form_rejected() {
        let s = GridShape::new(&[8, 8]).unwrap();
        let cohort = Cohort::new(vec![blob(&s, 4.0, 4.0, 2.0); 2], None).unwrap();
        let cfg = OptimConfig {
            similarity: Similarity::Ncc,
            ..small_config()
        };
        assert!(matches!(run_atlas_build(&cohort, &cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn learned_ncc_mode_runs() {
        let s = GridShape::new(&[16, 16]).unwrap();
        let imgs = vec![blob(&s, 7.0, 8.0, 3.0), blob(&s, 9.0, 7.5, 2.5)];
        let cohort = Cohort::new(imgs, None).unwrap();
        let cfg = OptimConfig {
            similarity: Similarity::Ncc,
            atlas_mode: AtlasMode::Learned,
            weights: LossWeights {
                sim_weight: 1.0,
                lambda: 0.1,
                gamma1: 0.0,
                gamma2: 0.2,
            },
            ..small_config()
        };
        let r = run_atlas_build(&cohort, &cfg).unwrap();
        assert!(r.log.iter().all(|row| row.total.is_finite()));
        assert!(r.state.atlas.values().iter().all(|&a| (0.0..=1.0).contains(&a)));
    }

    #[test]
    fn steepest_descent_energy_non_increasing() {
        let s = GridShape::new(&[16, 16]).unwrap();
        let imgs = vec![blob(&s, 7.0, 8.0, 3.0), blob(&s, 9.0, 7.5, 2.5), blob(&s, 8.0, 8.5, 3.2)];
        let atlas = blob(&s, 8.0, 8.0, 2.9);
        let w = LossWeights {
            sim_weight: 1.0,
            lambda: 0.05,
            gamma1: 0.3,
            gamma2: 0.3,
        };
        let pairs = all_pairs(3);
        let mut vs = vec![VectorField::zeros(s.clone()); 3];
        let rule = crate::optim::UpdateRule {
            method: Method::SteepestDescent,
            step_size: 20.0,
        };
        let mut ms: Vec<MomentState<f64>> = vec![MomentState::new(); 3];
        let mut prev = f64::INFINITY;
        for _ in 0..50 {
            let r = el_gradient_pairwise(&imgs, &atlas, &vs, &w, Similarity::Mse, &pairs, 8, 6).unwrap();
            assert!(r.energy.total <= prev + 1e-15, "{} > {prev}", r.energy.total);
            prev = r.energy.total;
            for ((v, g), m) in vs.iter_mut().zip(&r.gradients).zip(ms.iter_mut()) {
                update_velocity(v, g, &rule, m).unwrap();
            }
        }
        let e = pairwise_energy(&imgs, &atlas, &vs, &w, Similarity::Mse, &pairs, 6).unwrap();
        assert!(e.total <= prev);
    }

    #[test]
    fn register_identity_and_translation() {
        let s = GridShape::new(&[24, 24]).unwrap();
        let atlas = blob(&s, 12.0, 12.0, 3.5);
        let cfg = OptimConfig {
            epochs: 150,
            step_size: 0.05,
            quadrature_samples: 4,
            weights: LossWeights {
                sim_weight: 10.0,
                lambda: 0.1,
                gamma1: 0.0,
                gamma2: 0.0,
            },
            ..OptimConfig::default()
        };
        let r = register(&atlas, &atlas, &cfg).unwrap();
        assert!(r.velocity.max_abs() < 0.1);
        let moved = blob(&s, 13.0, 11.5, 3.5);
        let r = register(&atlas, &moved, &cfg).unwrap();
        let err = crate::losses::mse(&warp(&atlas, &r.inverse).unwrap(), &moved).unwrap();
        assert!(err < 1e-3, "{err}");
        assert_eq!(register(&atlas, &moved, &cfg).unwrap().velocity, r.velocity);
    }
}
