//! Generalized kernel coverage and its greedy maximizers.
//!
//! For a reference set `U` and a chosen set `S`, coverage is
//! `C(S) = (1/|U|) * sum_{u in U} max_{s in S} k(u, s)`, with the maximum over an
//! empty set taken as 0. MaxHerding grows `S` one point at a time, always
//! adding the candidate with the largest coverage gain.
//!
//! Greedy steps here are evaluated lazily: coverage is submodular, so a gain
//! computed at an earlier step is an upper bound on the current gain. Because
//! every gain is a sum of terms that can only shrink, the bound also holds
//! exactly in floating point, and the lazy result is index-for-index the plain
//! greedy result (ties go to the lowest pool index).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::{ArrayView2, CowArray, Ix2};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_pool::FeaturePool;
use crate::kernel::{squared_distance, KernelConfig};
use crate::seed::{self, Domain};

/// Mean of `terms`, summed in ascending order.
pub(crate) fn sorted_mean(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum::<f64>() / terms.len() as f64
}

/// Sorted, duplicate-free copy of an index set.
pub(crate) fn canonical(indices: &[usize]) -> Vec<usize> {
    let mut v = indices.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

fn minus(set: &[usize], remove: &[usize]) -> Vec<usize> {
    let remove = canonical(remove);
    set.iter()
        .copied()
        .filter(|i| remove.binary_search(i).is_err())
        .collect()
}

struct Rows<'a> {
    feats: CowArray<'a, f64, Ix2>,
}

impl<'a> Rows<'a> {
    fn new(features: ArrayView2<'a, f64>) -> Self {
        Rows {
            feats: if features.is_standard_layout() {
                CowArray::from(features)
            } else {
                CowArray::from(features.as_standard_layout().into_owned())
            },
        }
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        self.feats.row(i).to_slice().expect("standard layout")
    }

    fn check(&self, indices: &[usize], what: &str) -> Result<()> {
        match indices.iter().find(|&&i| i >= self.feats.nrows()) {
            Some(i) => Err(Error::Contract(format!(
                "{what} index {i} outside pool of {}",
                self.feats.nrows()
            ))),
            None => Ok(()),
        }
    }
}

/// Running per-reference maximum similarity to the chosen set.
#[derive(Clone, Debug)]
pub struct CoverageState {
    reference: Vec<usize>,
    /// Reference feature rows, copied out contiguously.
    ref_rows: Vec<f64>,
    dim: usize,
    conditioning: Vec<usize>,
    selected: Vec<usize>,
    max_sim: Vec<f64>,
    /// Squared distance beyond which a point cannot raise `max_sim[i]`.
    reach: Vec<f64>,
    sigma2: f64,
}

impl CoverageState {
    /// Starts from the conditioning set: each entry of `max_sim` is the best
    /// similarity to any conditioning point, or 0 when there is none.
    pub fn new(
        features: ArrayView2<'_, f64>,
        reference: &[usize],
        conditioning: &[usize],
        sigma: f64,
    ) -> Result<Self> {
        let rows = Rows::new(features);
        Self::with_rows(&rows, reference, conditioning, sigma)
    }

    fn with_rows(
        rows: &Rows<'_>,
        reference: &[usize],
        conditioning: &[usize],
        sigma: f64,
    ) -> Result<Self> {
        let reference = canonical(reference);
        if reference.is_empty() {
            return Err(Error::Contract(
                "coverage over an empty reference set".into(),
            ));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!(
                "bandwidth must be positive, got {sigma}"
            )));
        }
        rows.check(&reference, "reference")?;
        let conditioning = canonical(conditioning);
        rows.check(&conditioning, "conditioning")?;
        let dim = rows.feats.ncols();
        let mut state = CoverageState {
            max_sim: vec![0.0; reference.len()],
            reach: vec![f64::INFINITY; reference.len()],
            ref_rows: reference
                .iter()
                .flat_map(|&u| rows.row(u))
                .copied()
                .collect(),
            dim,
            reference,
            conditioning: Vec::new(),
            selected: Vec::new(),
            sigma2: sigma * sigma,
        };
        for &c in &conditioning {
            state.absorb(rows, c);
        }
        state.conditioning = conditioning;
        Ok(state)
    }

    /// `exp(-d2 / sigma2) > m` needs `d2 < -sigma2 ln m`. The slack keeps the
    /// cutoff safely past any rounding in `exp`, so skipping beyond it never
    /// changes a result.
    fn reach_of(&self, m: f64) -> f64 {
        if m > 0.0 {
            self.sigma2 * (-m.ln() * (1.0 + 1e-6) + 1e-12)
        } else {
            f64::INFINITY
        }
    }

    fn absorb(&mut self, rows: &Rows<'_>, point: usize) {
        let p = rows.row(point);
        for (i, u) in self.ref_rows.chunks_exact(self.dim).enumerate() {
            let d2 = squared_distance(u, p);
            if d2 > self.reach[i] {
                continue;
            }
            let k = (-d2 / self.sigma2).exp();
            if k > self.max_sim[i] {
                self.max_sim[i] = k;
                self.reach[i] = self.reach_of(k);
            }
        }
    }

    /// Coverage after adding `candidate`, with the per-reference terms summed
    /// in ascending order so the result does not depend on row order.
    fn value_with(&self, rows: &Rows<'_>, candidate: usize) -> f64 {
        let c = rows.row(candidate);
        let mut terms: Vec<f64> = self
            .max_sim
            .iter()
            .zip(&self.reach)
            .zip(self.ref_rows.chunks_exact(self.dim))
            .map(|((&m, &r), u)| {
                let d2 = squared_distance(u, c);
                if d2 > r {
                    m
                } else {
                    m.max((-d2 / self.sigma2).exp())
                }
            })
            .collect();
        sorted_mean(&mut terms)
    }

    /// Unnormalized gain `sum_u max(0, k(u, c) - max_sim[u])` of adding `candidate`.
    fn raw_gain(&self, rows: &Rows<'_>, candidate: usize) -> f64 {
        let c = rows.row(candidate);
        let mut acc = 0.0;
        let refs = self.ref_rows.chunks_exact(self.dim);
        for ((&m, &r), u) in self.max_sim.iter().zip(&self.reach).zip(refs) {
            let d2 = squared_distance(u, c);
            if d2 > r {
                continue;
            }
            let k = (-d2 / self.sigma2).exp();
            if k > m {
                acc += k - m;
            }
        }
        acc
    }

    /// Coverage increase from adding `candidate`.
    pub fn gain(&self, features: ArrayView2<'_, f64>, candidate: usize) -> f64 {
        self.raw_gain(&Rows::new(features), candidate) / self.reference.len() as f64
    }

    pub fn add(&mut self, features: ArrayView2<'_, f64>, candidate: usize) {
        self.absorb(&Rows::new(features), candidate);
        self.selected.push(candidate);
    }

    /// Mean of `max_sim`.
    pub fn value(&self) -> f64 {
        self.max_sim.iter().sum::<f64>() / self.max_sim.len() as f64
    }

    pub fn max_sim(&self) -> &[f64] {
        &self.max_sim
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn reference(&self) -> &[usize] {
        &self.reference
    }

    pub fn conditioning(&self) -> &[usize] {
        &self.conditioning
    }
}

pub fn coverage_value(state: &CoverageState) -> f64 {
    state.value()
}

/// Coverage of `reference` by `chosen` (no separate conditioning set).
pub fn coverage_of(
    features: ArrayView2<'_, f64>,
    reference: &[usize],
    chosen: &[usize],
    sigma: f64,
) -> Result<f64> {
    Ok(CoverageState::new(features, reference, chosen, sigma)?.value())
}

/// Relative width, per reference point, of the near-tie window.
const NEAR_TIE: f64 = 1e-12;

#[derive(Clone, Copy, Debug)]
struct Bound {
    gain: f64,
    index: usize,
}

impl PartialEq for Bound {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Bound {}

impl PartialOrd for Bound {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Bound {
    // Larger gain first, then lower index.
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain
            .total_cmp(&other.gain)
            .then_with(|| other.index.cmp(&self.index))
    }
}

/// Result of a greedy herding run.
#[derive(Clone, Debug, PartialEq)]
pub struct Herding {
    /// Picks in selection order.
    pub selected: Vec<usize>,
    /// Coverage after each pick.
    pub coverage: Vec<f64>,
    /// Coverage from the conditioning set alone.
    pub initial_coverage: f64,
}

/// Greedy MaxHerding over `reference`, conditioned on `conditioning`.
///
/// Candidates are the reference points not already in the conditioning set.
pub fn maxherding(
    features: ArrayView2<'_, f64>,
    reference: &[usize],
    conditioning: &[usize],
    budget: usize,
    sigma: f64,
) -> Result<Herding> {
    let rows = Rows::new(features);
    let mut state = CoverageState::with_rows(&rows, reference, conditioning, sigma)?;
    let candidates = minus(state.reference(), state.conditioning());
    if budget > candidates.len() {
        return Err(Error::Budget(format!(
            "herding budget {budget} exceeds {} available candidates",
            candidates.len()
        )));
    }
    let initial_coverage = state.value();
    let mut out = Herding {
        selected: Vec::with_capacity(budget),
        coverage: Vec::with_capacity(budget),
        initial_coverage,
    };
    if budget == 0 {
        return Ok(out);
    }

    let gains: Vec<f64> = candidates
        .par_iter()
        .map(|&c| state.raw_gain(&rows, c))
        .collect();
    let mut heap: BinaryHeap<Bound> = candidates
        .iter()
        .zip(gains)
        .map(|(&index, gain)| Bound { gain, index })
        .collect();
    let mut fresh = vec![true; features.nrows()];

    // Gains within this window of the best are re-ranked by exact coverage.
    let window = NEAR_TIE * state.reference.len().max(1) as f64;
    while out.selected.len() < budget {
        let top = heap.pop().expect("heap holds the remaining candidates");
        if !fresh[top.index] {
            fresh[top.index] = true;
            heap.push(Bound {
                gain: state.raw_gain(&rows, top.index),
                index: top.index,
            });
            continue;
        }
        let mut tied = vec![top];
        while heap.peek().is_some_and(|b| b.gain >= top.gain - window) {
            let b = heap.pop().unwrap();
            if fresh[b.index] {
                tied.push(b);
                continue;
            }
            fresh[b.index] = true;
            let current = Bound {
                gain: state.raw_gain(&rows, b.index),
                index: b.index,
            };
            if current.gain >= top.gain - window {
                tied.push(current);
            } else {
                heap.push(current);
            }
        }
        let pick = if tied.len() == 1 {
            top.index
        } else {
            let mut best = (f64::NEG_INFINITY, usize::MAX);
            for b in &tied {
                let v = state.value_with(&rows, b.index);
                if v > best.0 || (v == best.0 && b.index < best.1) {
                    best = (v, b.index);
                }
            }
            best.1
        };
        heap.extend(tied.into_iter().filter(|b| b.index != pick));
        state.absorb(&rows, pick);
        state.selected.push(pick);
        out.selected.push(pick);
        out.coverage.push(state.value());
        for b in heap.iter() {
            fresh[b.index] = false;
        }
    }
    Ok(out)
}

pub fn maxherding_select(
    features: ArrayView2<'_, f64>,
    reference: &[usize],
    conditioning: &[usize],
    budget: usize,
    sigma: f64,
) -> Result<Vec<usize>> {
    Ok(maxherding(features, reference, conditioning, budget, sigma)?.selected)
}

/// k-center greedy: repeatedly take the candidate farthest from everything
/// chosen or conditioned on. With nothing to measure against, the first pick
/// is the lowest candidate index.
pub fn kcenter_greedy(
    features: ArrayView2<'_, f64>,
    reference: &[usize],
    conditioning: &[usize],
    budget: usize,
) -> Result<Vec<usize>> {
    let rows = Rows::new(features);
    let reference = canonical(reference);
    let conditioning = canonical(conditioning);
    rows.check(&reference, "reference")?;
    rows.check(&conditioning, "conditioning")?;
    let mut candidates = minus(&reference, &conditioning);
    if budget > candidates.len() {
        return Err(Error::Budget(format!(
            "k-center budget {budget} exceeds {} available candidates",
            candidates.len()
        )));
    }
    let mut min_d: Vec<f64> = candidates
        .iter()
        .map(|&c| {
            conditioning
                .iter()
                .map(|&l| squared_distance(rows.row(c), rows.row(l)))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut out = Vec::with_capacity(budget);
    while out.len() < budget {
        let pos = if out.is_empty() && conditioning.is_empty() {
            0
        } else {
            // Candidates are in ascending index order, so the first maximum wins ties.
            let mut best = 0;
            for i in 1..candidates.len() {
                if min_d[i] > min_d[best] {
                    best = i;
                }
            }
            best
        };
        let pick = candidates.remove(pos);
        min_d.remove(pos);
        let p = rows.row(pick);
        for (d, &c) in min_d.iter_mut().zip(&candidates) {
            let nd = squared_distance(rows.row(c), p);
            if nd < *d {
                *d = nd;
            }
        }
        out.push(pick);
    }
    Ok(out)
}

/// Memory-bounded herding: the reference set is split into `splits` seeded
/// random parts, each part receives a budget share proportional to its size
/// (largest-remainder rounding), and parts are herded one after another, each
/// conditioned on everything picked in earlier parts.
pub fn split_and_herd(
    features: ArrayView2<'_, f64>,
    reference: &[usize],
    budget: usize,
    splits: usize,
    sigma: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    let mut reference = canonical(reference);
    if splits == 0 {
        return Err(Error::Config("split count must be at least 1".into()));
    }
    if splits > budget {
        return Err(Error::Config(format!(
            "split count {splits} exceeds budget {budget}"
        )));
    }
    if splits > reference.len() {
        return Err(Error::Config(format!(
            "split count {splits} exceeds reference size {}",
            reference.len()
        )));
    }
    if budget > reference.len() {
        return Err(Error::Budget(format!(
            "budget {budget} exceeds reference size {}",
            reference.len()
        )));
    }
    if splits > 1 {
        reference.shuffle(&mut seed::rng(Domain::Split, &[seed]));
    }
    let n = reference.len();
    let (base, extra) = (n / splits, n % splits);
    let mut parts = Vec::with_capacity(splits);
    let mut start = 0;
    for s in 0..splits {
        let len = base + usize::from(s < extra);
        parts.push(canonical(&reference[start..start + len]));
        start += len;
    }
    let sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
    let shares = largest_remainder(budget, &sizes);

    let mut selected: Vec<usize> = Vec::with_capacity(budget);
    for (part, share) in parts.iter().zip(shares) {
        if share == 0 {
            continue;
        }
        let picks = maxherding_select(features, part, &selected, share, sigma)?;
        selected.extend(picks);
    }
    Ok(selected)
}

/// Splits `total` across parts in proportion to `sizes`; leftover units go to
/// the largest fractional remainders, lowest part first on ties.
pub fn largest_remainder(total: usize, sizes: &[usize]) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return vec![0; sizes.len()];
    }
    let mut shares: Vec<usize> = sizes.iter().map(|&s| total * s / n).collect();
    let assigned: usize = shares.iter().sum();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(total * sizes[i] % n), i));
    for &i in order.iter().take(total - assigned) {
        shares[i] += 1;
    }
    shares
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiversitySelector {
    MaxHerding,
    KCenter,
}

/// Settings for the representation-based candidate stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageOneConfig {
    /// Representatives picked per image.
    pub per_image: usize,
    /// Fraction of the merged per-image picks kept by the global pass.
    pub global_fraction: f64,
    pub kernel: KernelConfig,
    /// Condition both passes on already-labeled pixels.
    pub condition_on_labeled: bool,
    pub selector: DiversitySelector,
}

impl Default for StageOneConfig {
    fn default() -> Self {
        StageOneConfig {
            per_image: 50,
            global_fraction: 0.5,
            kernel: KernelConfig::default(),
            condition_on_labeled: true,
            selector: DiversitySelector::MaxHerding,
        }
    }
}

impl StageOneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.per_image == 0 {
            return Err(Error::Config(
                "per-image representative count must be >= 1".into(),
            ));
        }
        if !(self.global_fraction > 0.0 && self.global_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "global fraction must lie in (0, 1], got {}",
                self.global_fraction
            )));
        }
        self.kernel.validate()
    }

    /// Size of the global pool kept out of `merged` local picks.
    pub fn global_size(&self, merged: usize) -> usize {
        let exact = self.global_fraction * merged as f64;
        ((exact - 1e-9).ceil().max(0.0) as usize).min(merged)
    }
}

/// Output of the two-step candidate selection.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidatePool {
    /// Union of the per-image picks, image by image.
    pub merged: Vec<usize>,
    /// Global picks in selection order.
    pub candidates: Vec<usize>,
    /// Bandwidth used for each image (None for skipped images or k-center).
    pub local_sigmas: Vec<Option<f64>>,
    pub global_sigma: Option<f64>,
}

/// Per-image selection over each image's unlabeled pixels, then a global pass
/// over the merged picks.
///
/// `labeled` may be in any order. Images without unlabeled pixels are skipped;
/// images with fewer unlabeled pixels than `per_image` contribute all of them.
pub fn local_then_global(
    pool: &FeaturePool,
    labeled: &[usize],
    config: &StageOneConfig,
    seed: u64,
) -> Result<CandidatePool> {
    config.validate()?;
    let features = pool.features();
    let mut is_labeled = vec![false; pool.len()];
    for &l in labeled {
        if l >= pool.len() {
            return Err(Error::Contract(format!("labeled index {l} outside pool")));
        }
        is_labeled[l] = true;
    }

    let local: Vec<Result<(Vec<usize>, Option<f64>)>> = (0..pool.n_images())
        .into_par_iter()
        .map(|image| {
            let range = pool.image_range(image);
            let (unlabeled, image_labeled): (Vec<usize>, Vec<usize>) =
                range.partition(|&i| !is_labeled[i]);
            if unlabeled.is_empty() {
                log::info!("image {image} has no unlabeled pixels; skipped");
                return Ok((Vec::new(), None));
            }
            let k = config.per_image.min(unlabeled.len());
            let conditioning: &[usize] = if config.condition_on_labeled {
                &image_labeled
            } else {
                &[]
            };
            match config.selector {
                DiversitySelector::MaxHerding => {
                    let sigma = config.kernel.resolve_or_fallback(
                        features,
                        &unlabeled,
                        seed::derive(Domain::Bandwidth, &[seed, image as u64]),
                    )?;
                    let picks = maxherding_select(features, &unlabeled, conditioning, k, sigma)?;
                    Ok((picks, Some(sigma)))
                }
                DiversitySelector::KCenter => {
                    Ok((kcenter_greedy(features, &unlabeled, conditioning, k)?, None))
                }
            }
        })
        .collect();

    let mut merged = Vec::new();
    let mut local_sigmas = Vec::with_capacity(pool.n_images());
    for r in local {
        let (picks, sigma) = r?;
        merged.extend(picks);
        local_sigmas.push(sigma);
    }
    if merged.is_empty() {
        return Ok(CandidatePool {
            merged,
            candidates: Vec::new(),
            local_sigmas,
            global_sigma: None,
        });
    }

    let m = config.global_size(merged.len());
    let conditioning: Vec<usize> = if config.condition_on_labeled {
        labeled.to_vec()
    } else {
        Vec::new()
    };
    let (candidates, global_sigma) = match config.selector {
        DiversitySelector::MaxHerding => {
            let all: Vec<usize> = (0..pool.len()).collect();
            let sigma = config.kernel.resolve_or_fallback(
                features,
                &all,
                seed::derive(Domain::Bandwidth, &[seed, u64::MAX]),
            )?;
            (
                maxherding_select(features, &merged, &conditioning, m, sigma)?,
                Some(sigma),
            )
        }
        DiversitySelector::KCenter => (kcenter_greedy(features, &merged, &conditioning, m)?, None),
    };
    Ok(CandidatePool {
        merged,
        candidates,
        local_sigmas,
        global_sigma,
    })
}
