//! Two-sample distances between point clouds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::numerics::{Rng, Tensor};

pub const DEFAULT_PROJECTIONS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    SlicedW2,
    EnergyDistance,
}

impl MetricName {
    pub fn name(self) -> &'static str {
        match self {
            MetricName::SlicedW2 => "sliced_w2",
            MetricName::EnergyDistance => "energy_distance",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub name: MetricName,
    pub value: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub seed: u64,
}

impl MetricResult {
    pub const CSV_HEADER: &'static str = "metric,value,n_a,n_b,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.name.name(),
            self.value,
            self.n_a,
            self.n_b,
            self.seed
        )
    }
}

fn check_pair(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::InvalidArgument("point sets must be non-empty".into()));
    }
    if a.cols() != b.cols() {
        return dim_err(format!("dimension {} vs {}", a.cols(), b.cols()));
    }
    Ok(())
}

/// Squared 2-Wasserstein distance between two 1-D empirical measures,
/// computed exactly as `∫₀¹ (F_a⁻¹(u) − F_b⁻¹(u))² du`. Both quantile
/// functions are step functions, so the integral is a sum over the merged
/// breakpoints `{i/n_a} ∪ {j/n_b}` with each piece evaluated at its
/// midpoint. Inputs are sorted in place.
pub fn w2_squared_1d(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len(), b.len());
    if na == nb {
        let s: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
        return s / na as f64;
    }
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = 0.0;
    let mut total = 0.0;
    while i < na && j < nb {
        // compare (i+1)/na with (j+1)/nb exactly
        let lhs = (i + 1) as u128 * nb as u128;
        let rhs = (j + 1) as u128 * na as u128;
        let next = if lhs <= rhs {
            (i + 1) as f64 / na as f64
        } else {
            (j + 1) as f64 / nb as f64
        };
        let d = a[i] - b[j];
        total += (next - prev) * d * d;
        prev = next;
        if lhs <= rhs {
            i += 1;
        }
        if rhs <= lhs {
            j += 1;
        }
    }
    total
}

/// Random unit directions for slicing, drawn from `Rng::new(seed)`.
pub fn projection_directions(dim: usize, n_proj: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = Rng::new(seed);
    (0..n_proj)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

fn project(points: &Tensor, dir: &[f64]) -> Vec<f64> {
    (0..points.rows())
        .map(|i| points.row(i).iter().zip(dir).map(|(p, d)| p * d).sum())
        .collect()
}

/// Square root of the mean squared 1-D W2 over `n_proj` random directions.
pub fn sliced_w2(a: &Tensor, b: &Tensor, n_proj: usize, seed: u64) -> Result<MetricResult> {
    check_pair(a, b)?;
    if n_proj == 0 {
        return Err(Error::InvalidArgument("n_proj must be >= 1".into()));
    }
    let dirs = projection_directions(a.cols(), n_proj, seed);
    let per: Vec<f64> = dirs
        .par_iter()
        .map(|d| w2_squared_1d(&mut project(a, d), &mut project(b, d)))
        .collect();
    let mean = per.iter().sum::<f64>() / n_proj as f64;
    Ok(MetricResult {
        name: MetricName::SlicedW2,
        value: mean.sqrt(),
        n_a: a.rows(),
        n_b: b.rows(),
        seed,
    })
}

fn mean_pair_distance(a: &Tensor, b: &Tensor) -> f64 {
    let row_sums: Vec<f64> = (0..a.rows())
        .into_par_iter()
        .map(|i| {
            let p = a.row(i);
            (0..b.rows())
                .map(|j| {
                    p.iter()
                        .zip(b.row(j))
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                        .sqrt()
                })
                .sum::<f64>()
        })
        .collect();
    row_sums.iter().sum::<f64>() / (a.rows() as f64 * b.rows() as f64)
}

/// `2·E‖a−b‖ − E‖a−a′‖ − E‖b−b′‖` over all ordered pairs (diagonal
/// included), clamped at zero against roundoff.
pub fn energy_distance(a: &Tensor, b: &Tensor) -> Result<MetricResult> {
    check_pair(a, b)?;
    let cross = mean_pair_distance(a, b);
    let within_a = mean_pair_distance(a, a);
    let within_b = mean_pair_distance(b, b);
    let value = (2.0 * cross - within_a - within_b).max(0.0);
    Ok(MetricResult {
        name: MetricName::EnergyDistance,
        value,
        n_a: a.rows(),
        n_b: b.rows(),
        seed: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::{any, prop_assert, proptest};

    fn col(v: &[f64]) -> Tensor {
        Tensor::matrix(v.len(), 1, v.to_vec())
    }

    #[test]
    fn identical_sets_are_zero() {
        let mut rng = Rng::new(1);
        let a = rng.sample_normal(&[200, 2]);
        assert_eq!(sliced_w2(&a, &a, 32, 5).unwrap().value, 0.0);
        assert_eq!(energy_distance(&a, &a).unwrap().value, 0.0);
    }

    #[test]
    fn two_point_masses() {
        for seed in 0..5 {
            let r = sliced_w2(&col(&[0.0]), &col(&[1.0]), 7, seed).unwrap();
            assert!((r.value - 1.0).abs() < 1e-15);
        }
        let a = Tensor::matrix(1, 2, vec![0.0, 0.0]);
        let b = Tensor::matrix(1, 2, vec![3.0, 4.0]);
        assert!((energy_distance(&a, &b).unwrap().value - 10.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            sliced_w2(&Tensor::zeros(&[3, 2]), &Tensor::zeros(&[3, 1]), 4, 0),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            energy_distance(&Tensor::zeros(&[3, 2]), &Tensor::zeros(&[3, 3])),
            Err(Error::Dimension(_))
        ));
    }

    /// Independent oracle: evaluate both empirical quantile functions on a
    /// fine uniform grid of `u` aligned to every breakpoint.
    fn grid_w2_sq(a: &[f64], b: &[f64]) -> f64 {
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let m = a.len() * b.len() * 2;
        let q = |s: &[f64], u: f64| s[((u * s.len() as f64).floor() as usize).min(s.len() - 1)];
        (0..m)
            .map(|k| {
                let u = (k as f64 + 0.5) / m as f64;
                (q(&a, u) - q(&b, u)).powi(2)
            })
            .sum::<f64>()
            / m as f64
    }

    #[test]
    fn one_dimensional_reduces_to_exact_w2() {
        let mut rng = Rng::new(8);
        for (na, nb) in [(30, 30), (17, 40), (9, 4)] {
            let a: Vec<f64> = (0..na).map(|_| rng.normal()).collect();
            let b: Vec<f64> = (0..nb).map(|_| 1.0 + 2.0 * rng.normal()).collect();
            let exact = grid_w2_sq(&a, &b).sqrt();
            let got = sliced_w2(&col(&a), &col(&b), 16, 3).unwrap().value;
            assert!((got - exact).abs() < 1e-12, "{na}x{nb}: {got} vs {exact}");
        }
    }

    proptest! {
        #[test]
        fn symmetric_and_nonnegative(seed in any::<u64>(), na in 1usize..30, nb in 1usize..30) {
            let mut rng = Rng::new(seed);
            let a = rng.sample_normal(&[na, 2]);
            let b = rng.sample_normal(&[nb, 2]).map(|v| v + 0.5);
            let s1 = sliced_w2(&a, &b, 8, seed).unwrap().value;
            let s2 = sliced_w2(&b, &a, 8, seed).unwrap().value;
            prop_assert!((s1 - s2).abs() < 1e-12);
            let e1 = energy_distance(&a, &b).unwrap().value;
            let e2 = energy_distance(&b, &a).unwrap().value;
            prop_assert!(e1 >= 0.0);
            prop_assert!((e1 - e2).abs() < 1e-12);
        }
    }
}
