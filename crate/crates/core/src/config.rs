//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, unknown keys are rejected.
//! Optimizer keys mirror [`OptimConfig`] field names, weight keys mirror
//! [`LossWeights`](crate::losses::LossWeights), and `seed` seeds both synthesis
//! and optimization.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::EvalOptions;
use crate::inverse::InverseConfig;
use crate::optim::OptimConfig;
use crate::synth::SynthConfig;

/// Every setting a subcommand may read.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub optim: OptimConfig,
    pub synth: SynthConfig,
    pub inverse: InverseConfig,
    pub eval: EvalOptions,
}

/// Accepted keys, in the order [`RunConfig::to_text`] writes them.
pub const KEYS: &[&str] = &[
    "seed",
    "threads",
    "step_size",
    "method",
    "epochs",
    "atlas_refresh_period",
    "quadrature_samples",
    "squaring_steps",
    "sim_weight",
    "lambda",
    "gamma1",
    "gamma2",
    "similarity",
    "pair_sampling",
    "atlas_mode",
    "atlas_step",
    "reset_momentum",
    "log_wall_time",
    "dims",
    "count",
    "structures",
    "velocity_scale",
    "smoothness",
    "affine_scale",
    "noise_sigma",
    "max_iters",
    "inverse_step",
    "tol",
    "inverse_threshold",
    "pairwise_atlas",
    "image_space",
];

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::InvalidConfig(format!("{key} = {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("{key} = {value:?}: expected true or false"))),
    }
}

fn parse_dims(value: &str) -> Result<Vec<usize>> {
    value
        .split(|c: char| c == 'x' || c == ',' || c.is_ascii_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| parse::<usize>("dims", s))
        .collect()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let o = &mut self.optim;
        let w = &mut o.weights;
        let s = &mut self.synth;
        let inv = &mut self.inverse;
        match key {
            "seed" => {
                o.seed = parse(key, value)?;
                s.seed = o.seed;
            }
            "threads" => o.threads = parse(key, value)?,
            "step_size" => o.step_size = parse(key, value)?,
            "method" => o.method = parse(key, value)?,
            "epochs" => o.epochs = parse(key, value)?,
            "atlas_refresh_period" => o.atlas_refresh_period = parse(key, value)?,
            "quadrature_samples" => o.quadrature_samples = parse(key, value)?,
            "squaring_steps" => o.squaring_steps = parse(key, value)?,
            "sim_weight" => w.sim_weight = parse(key, value)?,
            "lambda" => w.lambda = parse(key, value)?,
            "gamma1" => w.gamma1 = parse(key, value)?,
            "gamma2" => w.gamma2 = parse(key, value)?,
            "similarity" => o.similarity = parse(key, value)?,
            "pair_sampling" => o.pair_sampling = parse(key, value)?,
            "atlas_mode" => o.atlas_mode = parse(key, value)?,
            "atlas_step" => o.atlas_step = parse(key, value)?,
            "reset_momentum" => o.reset_momentum = parse_bool(key, value)?,
            "log_wall_time" => o.log_wall_time = parse_bool(key, value)?,
            "dims" => s.dims = parse_dims(value)?,
            "count" => s.count = parse(key, value)?,
            "structures" => s.structures = parse(key, value)?,
            "velocity_scale" => s.velocity_scale = parse(key, value)?,
            "smoothness" => s.smoothness = parse(key, value)?,
            "affine_scale" => s.affine_scale = parse(key, value)?,
            "noise_sigma" => s.noise_sigma = parse(key, value)?,
            "max_iters" => inv.max_iters = parse(key, value)?,
            "inverse_step" => inv.step = parse(key, value)?,
            "tol" => inv.tol = parse(key, value)?,
            "inverse_threshold" => inv.threshold = parse(key, value)?,
            "pairwise_atlas" => self.eval.pairwise_atlas = parse_bool(key, value)?,
            "image_space" => self.eval.image_space = parse_bool(key, value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Defaults overridden by the lines of `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::InvalidConfig(format!("line {}: {}", n + 1, strip(e))))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Canonical text form; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let o = &self.optim;
        let w = &o.weights;
        let s = &self.synth;
        let inv = &self.inverse;
        let dims: Vec<String> = s.dims.iter().map(|d| d.to_string()).collect();
        let values: Vec<String> = vec![
            o.seed.to_string(),
            o.threads.to_string(),
            o.step_size.to_string(),
            o.method.name().into(),
            o.epochs.to_string(),
            o.atlas_refresh_period.to_string(),
            o.quadrature_samples.to_string(),
            o.squaring_steps.to_string(),
            w.sim_weight.to_string(),
            w.lambda.to_string(),
            w.gamma1.to_string(),
            w.gamma2.to_string(),
            o.similarity.name().into(),
            o.pair_sampling.name().into(),
            o.atlas_mode.name().into(),
            o.atlas_step.to_string(),
            o.reset_momentum.to_string(),
            o.log_wall_time.to_string(),
            dims.join("x"),
            s.count.to_string(),
            s.structures.to_string(),
            s.velocity_scale.to_string(),
            s.smoothness.to_string(),
            s.affine_scale.to_string(),
            s.noise_sigma.to_string(),
            inv.max_iters.to_string(),
            inv.step.to_string(),
            inv.tol.to_string(),
            inv.threshold.to_string(),
            self.eval.pairwise_atlas.to_string(),
            self.eval.image_space.to_string(),
        ];
        KEYS.iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::InvalidConfig(m) => m,
        other => other.to_string(),
    }
}
