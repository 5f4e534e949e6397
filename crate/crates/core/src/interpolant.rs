//! The straight-line path `x_t = t·x_* + (1−t)·x_0` between a noise sample
//! `x_0` (t = 0) and a data sample `x_*` (t = 1), its velocity target, and
//! the conversions from a velocity prediction to endpoint and score
//! estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Points within this distance of t = 1 are treated as the score singularity.
pub const SINGULARITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct PathPoint {
    pub x_star: Tensor,
    pub x0: Tensor,
    pub t: f64,
    pub x_t: Tensor,
    pub v_target: Tensor,
}

/// Time range on which stochastic sampling runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeWindow {
    pub t_min: f64,
    pub t_max: f64,
}

impl Default for TimeWindow {
    fn default() -> Self {
        Self {
            t_min: 1e-3,
            t_max: 1.0 - 1e-3,
        }
    }
}

impl TimeWindow {
    pub fn new(t_min: f64, t_max: f64) -> Result<Self> {
        let w = Self { t_min, t_max };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if 0.0 <= self.t_min && self.t_min < self.t_max && self.t_max <= 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "time window [{}, {}] must satisfy 0 <= t_min < t_max <= 1",
                self.t_min, self.t_max
            )))
        }
    }

    pub fn contains(&self, t: f64) -> bool {
        self.t_min <= t && t <= self.t_max
    }
}

pub(crate) fn check_unit_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("time {t} outside [0, 1]")))
    }
}

/// One interpolant value; `x_t` is computed as `t·x_* + (1−t)·x_0` per entry.
pub fn lerp(x_star: f64, x0: f64, t: f64) -> f64 {
    t * x_star + (1.0 - t) * x0
}

pub fn interpolate(x_star: &Tensor, x0: &Tensor, t: f64) -> Result<PathPoint> {
    x_star.same_shape(x0)?;
    check_unit_time(t)?;
    let x_t = x_star.zip_map(x0, |a, b| lerp(a, b, t))?;
    let v_target = x_star.sub(x0)?;
    Ok(PathPoint {
        x_star: x_star.clone(),
        x0: x0.clone(),
        t,
        x_t,
        v_target,
    })
}

/// Endpoint estimates implied by velocity `v` at `(x_t, t)`:
/// `x̂_* = x_t + (1−t)·v`, `ε̂ = x_t − t·v`.
pub fn velocity_to_endpoint(x_t: &Tensor, t: f64, v: &Tensor) -> Result<(Tensor, Tensor)> {
    check_unit_time(t)?;
    let x_star = x_t.zip_map(v, |x, v| x + (1.0 - t) * v)?;
    let eps = x_t.zip_map(v, |x, v| x - t * v)?;
    Ok((x_star, eps))
}

/// Score of the interpolant marginal implied by velocity `v`:
/// `−ε̂/(1−t) = (t·v − x_t)/(1−t)`.
pub fn velocity_to_score(x_t: &Tensor, t: f64, v: &Tensor) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("time {t} outside [0, 1]")));
    }
    if t >= 1.0 - SINGULARITY_TOL {
        return Err(Error::Singularity(t));
    }
    let denom = 1.0 - t;
    x_t.zip_map(v, |x, v| (t * v - x) / denom)
}
