//! RBF similarity `k(a, b) = exp(-|a - b|^2 / sigma^2)` and bandwidth selection.

use ndarray::ArrayView2;
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_pool::median;
use crate::seed::{self, Domain};

/// Rows above which [`kernel_row`] fans out across threads.
const PAR_THRESHOLD: usize = 8192;

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(
        a.len(),
        b.len(),
        "dimension mismatch: {} vs {}",
        a.len(),
        b.len()
    );
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// RBF similarity in (0, 1]. Panics on mismatched dimensions or `sigma <= 0`.
#[inline]
pub fn rbf(a: &[f64], b: &[f64], sigma: f64) -> f64 {
    assert!(sigma > 0.0, "bandwidth must be positive, got {sigma}");
    (-squared_distance(a, b) / (sigma * sigma)).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum BandwidthRule {
    Fixed(f64),
    /// Median pairwise distance over a seeded subsample of this many points.
    MedianHeuristic {
        subsample: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub rule: BandwidthRule,
    /// Used when the median heuristic hits a degenerate (all-identical) subsample.
    pub fallback_sigma: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            rule: BandwidthRule::MedianHeuristic { subsample: 1024 },
            fallback_sigma: 1.0,
        }
    }
}

impl KernelConfig {
    pub fn fixed(sigma: f64) -> Self {
        KernelConfig {
            rule: BandwidthRule::Fixed(sigma),
            fallback_sigma: sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.rule {
            BandwidthRule::Fixed(s) if !(s > 0.0 && s.is_finite()) => Err(Error::Config(format!(
                "fixed bandwidth must be positive, got {s}"
            ))),
            BandwidthRule::MedianHeuristic { subsample } if subsample < 2 => Err(Error::Config(
                format!("median heuristic needs a subsample of at least 2, got {subsample}"),
            )),
            _ if !(self.fallback_sigma > 0.0 && self.fallback_sigma.is_finite()) => {
                Err(Error::Config(format!(
                    "fallback bandwidth must be positive, got {}",
                    self.fallback_sigma
                )))
            }
            _ => Ok(()),
        }
    }

    /// Resolves the bandwidth over `rows` of `features`.
    pub fn resolve(&self, features: ArrayView2<'_, f64>, rows: &[usize], seed: u64) -> Result<f64> {
        self.validate()?;
        match self.rule {
            BandwidthRule::Fixed(s) => Ok(s),
            BandwidthRule::MedianHeuristic { subsample } => {
                median_bandwidth(features, rows, subsample, seed)
            }
        }
    }

    /// Like [`resolve`](Self::resolve) but falls back to `fallback_sigma` on a
    /// degenerate subsample.
    pub fn resolve_or_fallback(
        &self,
        features: ArrayView2<'_, f64>,
        rows: &[usize],
        seed: u64,
    ) -> Result<f64> {
        match self.resolve(features, rows, seed) {
            Err(Error::DegenerateBandwidth(n)) => {
                log::warn!(
                    "degenerate bandwidth over {n} points, using fixed sigma {}",
                    self.fallback_sigma
                );
                Ok(self.fallback_sigma)
            }
            other => other,
        }
    }
}

/// Median pairwise Euclidean distance over a seeded subsample of `rows`.
///
/// Uses every row when there are at most `subsample` of them.
pub fn median_bandwidth(
    features: ArrayView2<'_, f64>,
    rows: &[usize],
    subsample: usize,
    seed: u64,
) -> Result<f64> {
    if subsample < 2 {
        return Err(Error::Config(format!(
            "median heuristic needs a subsample of at least 2, got {subsample}"
        )));
    }
    let chosen: Vec<usize> = if rows.len() > subsample {
        let mut rng = seed::rng(Domain::Bandwidth, &[seed]);
        let mut picked: Vec<usize> = index::sample(&mut rng, rows.len(), subsample)
            .into_iter()
            .map(|i| rows[i])
            .collect();
        picked.sort_unstable();
        picked
    } else {
        rows.to_vec()
    };
    let feats = features.as_standard_layout();
    let row = |i: usize| feats.row(i).to_slice().unwrap();
    let mut dists = Vec::with_capacity(chosen.len() * chosen.len().saturating_sub(1) / 2);
    for (a, &i) in chosen.iter().enumerate() {
        for &j in &chosen[a + 1..] {
            dists.push(squared_distance(row(i), row(j)).sqrt());
        }
    }
    if dists.is_empty() {
        return Err(Error::DegenerateBandwidth(chosen.len()));
    }
    let m = median(&mut dists);
    if m > 0.0 {
        Ok(m)
    } else {
        Err(Error::DegenerateBandwidth(chosen.len()))
    }
}

/// Similarities between `candidate` and every row of `features`.
pub fn kernel_row(candidate: &[f64], features: ArrayView2<'_, f64>, sigma: f64) -> Vec<f64> {
    let rows: Vec<usize> = (0..features.nrows()).collect();
    kernel_row_subset(candidate, features, &rows, sigma)
}

/// Similarities between `candidate` and the listed rows of `features`, in `rows` order.
pub fn kernel_row_subset(
    candidate: &[f64],
    features: ArrayView2<'_, f64>,
    rows: &[usize],
    sigma: f64,
) -> Vec<f64> {
    assert_eq!(candidate.len(), features.ncols(), "dimension mismatch");
    assert!(sigma > 0.0, "bandwidth must be positive, got {sigma}");
    let inv = 1.0 / (sigma * sigma);
    let sim = |&i: &usize| {
        let d: f64 = candidate
            .iter()
            .zip(features.row(i))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        (-d * inv).exp()
    };
    if rows.len() >= PAR_THRESHOLD {
        rows.par_iter().map(sim).collect()
    } else {
        rows.iter().map(sim).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    #[test]
    fn identical_points_have_unit_similarity() {
        assert_eq!(rbf(&[0.3, -2.0], &[0.3, -2.0], 0.7), 1.0);
    }

    #[test]
    fn one_bandwidth_apart_is_exp_minus_one() {
        let s = 1.7;
        let v = rbf(&[0.0, 0.0], &[s, 0.0], s);
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.367879).abs() < 1e-6);
    }

    #[test]
    #[should_panic(expected = "dimension mismatch")]
    fn mismatched_dimensions_panic() {
        rbf(&[0.0], &[0.0, 1.0], 1.0);
    }

    #[test]
    fn median_of_three_points_on_a_line() {
        let f = array![[0.0], [1.0], [2.0]];
        assert_eq!(
            median_bandwidth(f.view(), &[0, 1, 2], 1024, 0).unwrap(),
            1.0
        );
    }

    #[test]
    fn identical_points_are_degenerate() {
        let f = Array2::from_elem((5, 2), 3.0);
        assert!(matches!(
            median_bandwidth(f.view(), &[0, 1, 2, 3, 4], 16, 0),
            Err(Error::DegenerateBandwidth(5))
        ));
        let cfg = KernelConfig::default();
        assert_eq!(
            cfg.resolve_or_fallback(f.view(), &[0, 1, 2], 0).unwrap(),
            1.0
        );
    }

    #[test]
    fn median_scales_with_features() {
        let f = array![[0.0, 1.0], [2.0, -1.0], [0.5, 0.5], [3.0, 3.0]];
        let rows = [0, 1, 2, 3];
        let base = median_bandwidth(f.view(), &rows, 2, 9).unwrap();
        let scaled = (&f * 4.5).to_owned();
        let s = median_bandwidth(scaled.view(), &rows, 2, 9).unwrap();
        assert!((s - 4.5 * base).abs() < 1e-12);
    }

    #[test]
    fn subsample_below_two_is_rejected() {
        let f = array![[0.0], [1.0]];
        assert!(matches!(
            median_bandwidth(f.view(), &[0, 1], 1, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn kernel_row_hits_one_on_a_copy() {
        let f = array![[0.0, 0.0], [1.0, 2.0], [3.0, 1.0], [-1.0, 0.5]];
        let row = kernel_row(&[-1.0, 0.5], f.view(), 2.0);
        assert_eq!(row.len(), 4);
        assert_eq!(row[3], 1.0);
        let single = array![[1.0, 1.0]];
        assert_eq!(
            kernel_row(&[0.0, 0.0], single.view(), 0.5),
            vec![rbf(&[0.0, 0.0], &[1.0, 1.0], 0.5)]
        );
    }

    #[test]
    fn kernel_row_matches_scalar_loop() {
        let mut rng = seed::rng(Domain::Bandwidth, &[42]);
        use rand::Rng;
        let f = Array2::from_shape_fn((1000, 5), |_| rng.random_range(-3.0..3.0));
        let c: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
        let row = kernel_row(&c, f.view(), 1.3);
        for (got, x) in row.iter().zip(f.rows()) {
            let expect = rbf(&c, x.to_slice().unwrap(), 1.3);
            assert!((got - expect).abs() <= 1e-12 * expect.abs().max(f64::MIN_POSITIVE));
        }
    }

    proptest! {
        #[test]
        fn rbf_is_symmetric_bounded_and_monotone_in_sigma(
            a in proptest::collection::vec(-10.0f64..10.0, 3),
            b in proptest::collection::vec(-10.0f64..10.0, 3),
            sigma in 0.05f64..20.0,
        ) {
            let k = rbf(&a, &b, sigma);
            prop_assert_eq!(k, rbf(&b, &a, sigma));
            prop_assert!((0.0..=1.0).contains(&k));
            prop_assert!(rbf(&a, &b, 2.0 * sigma) >= k);
        }

        #[test]
        fn kernel_row_is_permutation_equivariant(
            pts in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 2), 2..20),
            shift in 0usize..20,
        ) {
            let n = pts.len();
            let f = Array2::from_shape_fn((n, 2), |(i, j)| pts[i][j]);
            let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
            let g = Array2::from_shape_fn((n, 2), |(i, j)| pts[perm[i]][j]);
            let c = [0.25, -0.5];
            let rf = kernel_row(&c, f.view(), 1.1);
            let rg = kernel_row(&c, g.view(), 1.1);
            for i in 0..n {
                prop_assert_eq!(rg[i], rf[perm[i]]);
            }
        }
    }
}
