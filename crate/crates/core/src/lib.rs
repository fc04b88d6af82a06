//! Groupwise diffeomorphic atlas building with stationary velocity fields.
//!
//! Images are registered to a shared atlas through velocity fields integrated
//! by scaling and squaring. The atlas is either refreshed in closed form or
//! learned by gradient steps, and optional pairwise losses align cohort images
//! to each other in atlas space or, through the atlas, in image space.
//!
//! All numerics are generic over [`Real`] (`f32` or `f64`); the aliases below
//! name the common concrete types.

pub mod atlas;
pub mod config;
pub mod error;
pub mod eval;
pub mod grid;
pub mod inverse;
pub mod io;
pub mod losses;
pub mod optim;
pub mod scalar;
pub mod svf;
pub mod synth;

pub use atlas::{AtlasMode, AtlasState, Cohort};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use eval::{evaluate, EvalOptions, EvalReport};
pub use grid::{DeformationMap, GridShape, LabelField, ScalarField, VectorField};
pub use inverse::{numeric_inverse, InverseConfig};
pub use losses::{LossWeights, Similarity};
pub use optim::{register, run_atlas_build, OptimConfig};
pub use scalar::Real;
pub use synth::{generate, SynthConfig};

pub type ScalarField64 = ScalarField<f64>;
pub type ScalarField32 = ScalarField<f32>;
pub type VectorField64 = VectorField<f64>;
pub type VectorField32 = VectorField<f32>;
pub type DeformationMap64 = DeformationMap<f64>;
pub type DeformationMap32 = DeformationMap<f32>;
pub type Cohort64 = Cohort<f64>;
pub type Cohort32 = Cohort<f32>;
