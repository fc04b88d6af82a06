//! Velocity-field gradients, parameter updates, and the alternating
//! atlas-building driver.

mod driver;
mod fd;
mod gradient;
mod regularizer;
mod update;

pub use driver::{register, run_atlas_build, BuildResult, EpochLog, RegisterResult, LOG_HEADER};
pub use fd::fd_gradient;
pub use gradient::{
    all_pairs, el_gradient_pairwise, el_gradient_vanilla, pairwise_energy, random_pairs, EnergyBreakdown,
    GradientReport,
};
pub use regularizer::regularizer_gradient;
pub use update::{update_velocity, MomentState, UpdateRule};

use crate::atlas::AtlasMode;
use crate::error::{Error, Result};
use crate::losses::{LossWeights, Similarity};

/// Parameter update scheme for the velocities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Method {
    SteepestDescent,
    #[default]
    AdaptiveMoments,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::SteepestDescent => "steepest_descent",
            Method::AdaptiveMoments => "adaptive_moments",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "steepest_descent" => Ok(Method::SteepestDescent),
            "adaptive_moments" => Ok(Method::AdaptiveMoments),
            other => Err(Error::InvalidConfig(format!("unknown method '{other}'"))),
        }
    }
}

/// Which image pairs enter each epoch's objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PairSampling {
    /// Every unordered pair `i < j`.
    AllPairs,
    /// A fresh random disjoint pairing each epoch.
    #[default]
    RandomPairsPerEpoch,
}

impl PairSampling {
    pub fn name(self) -> &'static str {
        match self {
            PairSampling::AllPairs => "all_pairs",
            PairSampling::RandomPairsPerEpoch => "random_pairs_per_epoch",
        }
    }
}

impl std::str::FromStr for PairSampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all_pairs" => Ok(PairSampling::AllPairs),
            "random_pairs_per_epoch" => Ok(PairSampling::RandomPairsPerEpoch),
            other => Err(Error::InvalidConfig(format!("unknown pair sampling '{other}'"))),
        }
    }
}

/// Optimizer, quadrature, and schedule settings.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub step_size: f64,
    pub method: Method,
    pub epochs: usize,
    /// Closed-form atlas refresh period, in epochs.
    pub atlas_refresh_period: usize,
    /// Midpoint samples of the time integral.
    pub quadrature_samples: usize,
    pub squaring_steps: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub similarity: Similarity,
    pub pair_sampling: PairSampling,
    pub atlas_mode: AtlasMode,
    /// Step of the learned atlas update.
    pub atlas_step: f64,
    /// Clear the adaptive moments whenever the closed-form atlas is refreshed.
    pub reset_momentum: bool,
    /// Record elapsed seconds in the log; off keeps logs reproducible.
    pub log_wall_time: bool,
    /// Worker cap; 0 lets the thread pool decide.
    pub threads: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            step_size: 0.05,
            method: Method::AdaptiveMoments,
            epochs: 200,
            atlas_refresh_period: 10,
            quadrature_samples: 8,
            squaring_steps: crate::svf::DEFAULT_SQUARING_STEPS,
            seed: 17,
            weights: LossWeights {
                sim_weight: 10.0,
                lambda: 2.0,
                gamma1: 0.0,
                gamma2: 0.0,
            },
            similarity: Similarity::Mse,
            pair_sampling: PairSampling::RandomPairsPerEpoch,
            atlas_mode: AtlasMode::ClosedFormForward,
            atlas_step: 100.0,
            reset_momentum: false,
            log_wall_time: false,
            threads: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return bad(format!("step_size = {} must be finite and > 0", self.step_size));
        }
        for (name, n) in [
            ("epochs", self.epochs),
            ("atlas_refresh_period", self.atlas_refresh_period),
            ("quadrature_samples", self.quadrature_samples),
            ("squaring_steps", self.squaring_steps),
        ] {
            if n < 1 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if !(self.atlas_step.is_finite() && self.atlas_step >= 0.0) {
            return bad(format!("atlas_step = {} must be finite and >= 0", self.atlas_step));
        }
        self.weights.validate()?;
        if self.similarity == Similarity::Ncc && self.atlas_mode != AtlasMode::Learned {
            return bad(format!(
                "ncc similarity has no closed-form atlas; atlas_mode {} requires mse",
                self.atlas_mode.name()
            ));
        }
        Ok(())
    }

    pub(crate) fn update_rule(&self) -> UpdateRule {
        UpdateRule {
            method: self.method,
            step_size: self.step_size,
        }
    }
}
