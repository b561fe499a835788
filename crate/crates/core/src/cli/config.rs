use std::str::FromStr;

use thiserror::Error;

use crate::pnp::RansacConfig;
use crate::refine::{IterationOverride, RefineConfig};
use crate::tracking::TrackerConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

const MAX_ITERATION_OVERRIDES: usize = 64;

/// Applies one key; `Ok(false)` when the key is unknown.
type Setter<C> = fn(&mut C, &str, &str) -> Result<bool, String>;

fn value<T: FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse::<T>().map_err(|_| format!("bad value `{v}` for `{key}`"))
}

fn set_ransac(c: &mut RansacConfig, key: &str, v: &str) -> Result<bool, String> {
    match key {
        "max_iterations" => c.max_iterations = value(key, v)?,
        "reproj_threshold_px" => c.reproj_threshold_px = value(key, v)?,
        "min_inliers" => c.min_inliers = value(key, v)?,
        "confidence_early_exit" => c.confidence_early_exit = value(key, v)?,
        "seed" => c.seed = value(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn set_refine(c: &mut RefineConfig, key: &str, v: &str) -> Result<bool, String> {
    if let Some(k) = key.strip_prefix("ransac.") {
        return set_ransac(&mut c.ransac, k, v);
    }
    if let Some(rest) = key.strip_prefix("iteration.") {
        let Some((i, k)) = rest.split_once('.') else {
            return Ok(false);
        };
        let i: usize = value(key, i)?;
        if i >= MAX_ITERATION_OVERRIDES {
            return Err(format!("iteration index {i} out of range"));
        }
        if c.per_iteration.len() <= i {
            c.per_iteration.resize(i + 1, IterationOverride::default());
        }
        match k {
            "tau_v" => c.per_iteration[i].tau_v = Some(value(key, v)?),
            "reproj_threshold_px" => c.per_iteration[i].reproj_threshold_px = Some(value(key, v)?),
            _ => return Ok(false),
        }
        return Ok(true);
    }
    match key {
        "iterations" => c.iterations = value(key, v)?,
        "tau_v" => c.tau_v = value(key, v)?,
        "online_rendering" => c.online_rendering = value(key, v)?,
        "crop_size" => c.crop_size = value(key, v)?,
        "crop_pad" => c.crop_pad = value(key, v)?,
        "max_correspondences" => c.max_correspondences = value(key, v)?,
        "splat_radius" => c.splat_radius = value(key, v)?,
        "seed" => c.seed = value(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn set_tracker(c: &mut TrackerConfig, key: &str, v: &str) -> Result<bool, String> {
    if let Some(k) = key.strip_prefix("ransac.") {
        return set_ransac(&mut c.ransac, k, v);
    }
    if let Some(k) = key.strip_prefix("refine.") {
        return set_refine(&mut c.refine, k, v);
    }
    match key {
        "tau_i" => c.tau_i = value(key, v)?,
        "mix_ratio" => c.mix_ratio = value(key, v)?,
        "max_correspondences" => c.max_correspondences = value(key, v)?,
        "propagation" => c.propagation = value(key, v)?,
        "reacquire_horizon" => c.reacquire_horizon = value(key, v)?,
        "seed" => c.seed = value(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Flat `key = value` lines over defaults; `#` starts a comment. Unknown and
/// repeated keys are errors.
fn parse_flat<C: Default>(text: &str, set: Setter<C>) -> Result<C, ConfigError> {
    let mut cfg = C::default();
    let mut seen: Vec<String> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| ConfigError::Parse { line: i + 1, message };
        let (k, v) = line.split_once('=').ok_or_else(|| err("expected `key = value`".into()))?;
        let (k, v) = (k.trim(), v.trim());
        if seen.iter().any(|s| s == k) {
            return Err(err(format!("duplicate key `{k}`")));
        }
        seen.push(k.to_string());
        if !set(&mut cfg, k, v).map_err(err)? {
            return Err(err(format!("unknown key `{k}`")));
        }
    }
    Ok(cfg)
}

pub fn parse_refine_config(text: &str) -> Result<RefineConfig, ConfigError> {
    let cfg = parse_flat(text, set_refine)?;
    cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(cfg)
}

pub fn parse_tracker_config(text: &str) -> Result<TrackerConfig, ConfigError> {
    let cfg = parse_flat(text, set_tracker)?;
    cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(cfg)
}
