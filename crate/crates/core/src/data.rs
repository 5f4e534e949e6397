//! Synthetic 2-D datasets.
//!
//! * `gaussian_ring`: `k` isotropic Gaussians (std `σ`) centred at
//!   `radius·(cos 2πj/k, sin 2πj/k)`; label `j`.
//! * `two_moons`: label `c ∈ {0,1}`, `θ ~ U[0, π)`; class 0 at
//!   `(cos θ, sin θ)`, class 1 at `(1 − cos θ, 0.5 − sin θ)`; plus `σ`
//!   Gaussian jitter.
//! * `checkerboard`: `cells × cells` board on `[−extent, extent]²`; points
//!   uniform over the squares with even `row + col`; label = index of the
//!   square among those; plus `σ` jitter.
//!
//! Per point the draw order is: label, then shape randomness, then jitter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    GaussianRing,
    TwoMoons,
    Checkerboard,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::GaussianRing => "gaussian_ring",
            DatasetKind::TwoMoons => "two_moons",
            DatasetKind::Checkerboard => "checkerboard",
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_ring" | "ring" => Ok(Self::GaussianRing),
            "two_moons" | "moons" => Ok(Self::TwoMoons),
            "checkerboard" => Ok(Self::Checkerboard),
            other => Err(Error::InvalidArgument(format!("unknown dataset kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n: usize,
    pub seed: u64,
    /// Ring component count.
    pub components: usize,
    pub radius: f64,
    /// Jitter std; `None` picks the kind default (ring 0.3, moons 0.05,
    /// checkerboard 0).
    pub std: Option<f64>,
    pub extent: f64,
    pub cells: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kind: DatasetKind::GaussianRing,
            n: 20_000,
            seed: 0,
            components: 8,
            radius: 4.0,
            std: None,
            extent: 2.0,
            cells: 4,
        }
    }
}

impl DatasetSpec {
    pub fn ring(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            ..Self::default()
        }
    }

    pub fn jitter(&self) -> f64 {
        self.std.unwrap_or(match self.kind {
            DatasetKind::GaussianRing => 0.3,
            DatasetKind::TwoMoons => 0.05,
            DatasetKind::Checkerboard => 0.0,
        })
    }

    pub fn class_count(&self) -> usize {
        match self.kind {
            DatasetKind::GaussianRing => self.components,
            DatasetKind::TwoMoons => 2,
            DatasetKind::Checkerboard => (self.cells * self.cells).div_ceil(2),
        }
    }

    /// Centre of each ring component.
    pub fn ring_centers(&self) -> Vec<[f64; 2]> {
        let k = self.components;
        (0..k)
            .map(|j| {
                let a = std::f64::consts::TAU * j as f64 / k as f64;
                [self.radius * a.cos(), self.radius * a.sin()]
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.n == 0 {
            return bad("dataset needs n >= 1");
        }
        if !(self.jitter() >= 0.0 && self.jitter().is_finite()) {
            return bad("std must be finite and >= 0");
        }
        match self.kind {
            DatasetKind::GaussianRing if self.components == 0 => bad("ring needs k >= 1"),
            DatasetKind::Checkerboard if self.cells == 0 || !(self.extent > 0.0) => {
                bad("checkerboard needs cells >= 1 and extent > 0")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub points: Tensor,
    pub labels: Option<Vec<usize>>,
    pub spec: DatasetSpec,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    /// Points without a generating spec (e.g. loaded from CSV).
    pub fn from_points(points: Tensor, labels: Option<Vec<usize>>) -> Result<Self> {
        if points.rows() == 0 {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        if let Some(l) = &labels {
            if l.len() != points.rows() {
                return Err(Error::InvalidArgument("label count differs from point count".into()));
            }
        }
        Ok(Self {
            spec: DatasetSpec {
                n: points.rows(),
                ..DatasetSpec::default()
            },
            points,
            labels,
        })
    }
}

pub fn make_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let std = spec.jitter();
    let mut data = Vec::with_capacity(spec.n * 2);
    let mut labels = Vec::with_capacity(spec.n);
    let centers = spec.ring_centers();
    let cell = 2.0 * spec.extent / spec.cells as f64;
    let black: Vec<(usize, usize)> = (0..spec.cells)
        .flat_map(|r| (0..spec.cells).map(move |c| (r, c)))
        .filter(|(r, c)| (r + c) % 2 == 0)
        .collect();
    for _ in 0..spec.n {
        let (label, base) = match spec.kind {
            DatasetKind::GaussianRing => {
                let j = rng.below(spec.components);
                (j, centers[j])
            }
            DatasetKind::TwoMoons => {
                let c = rng.below(2);
                let theta = std::f64::consts::PI * rng.uniform();
                let p = if c == 0 {
                    [theta.cos(), theta.sin()]
                } else {
                    [1.0 - theta.cos(), 0.5 - theta.sin()]
                };
                (c, p)
            }
            DatasetKind::Checkerboard => {
                let j = rng.below(black.len());
                let (r, c) = black[j];
                let x = -spec.extent + (c as f64 + rng.uniform()) * cell;
                let y = -spec.extent + (r as f64 + rng.uniform()) * cell;
                (j, [x, y])
            }
        };
        let jx = rng.normal();
        let jy = rng.normal();
        data.push(base[0] + std * jx);
        data.push(base[1] + std * jy);
        labels.push(label);
    }
    Ok(Dataset {
        points: Tensor::new(vec![spec.n, 2], data)?,
        labels: Some(labels),
        spec: spec.clone(),
    })
}
