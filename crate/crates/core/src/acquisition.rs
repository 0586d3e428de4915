//! Uncertainty scores over predictive ensembles and the selection rules that
//! turn scores into picks. Every score is in nats and higher means more
//! uncertain.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::Gumbel;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_pool::{FeaturePool, FeatureProvider};
use crate::head::{HeadParams, PROB_FLOOR};
use crate::seed::{self, Domain};

/// Slack allowed on a distribution's sum.
pub const SUM_TOLERANCE: f64 = 1e-6;
/// Negative mutual information down to this is treated as rounding noise.
pub const MI_CLAMP: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Random,
    Entropy,
    Margin,
    Bald,
    Dald,
    Ebald,
    Edald,
    PowerBald,
    PowerDald,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Random,
        Method::Entropy,
        Method::Margin,
        Method::Bald,
        Method::Dald,
        Method::Ebald,
        Method::Edald,
        Method::PowerBald,
        Method::PowerDald,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::Entropy => "entropy",
            Method::Margin => "margin",
            Method::Bald => "bald",
            Method::Dald => "dald",
            Method::Ebald => "ebald",
            Method::Edald => "edald",
            Method::PowerBald => "power_bald",
            Method::PowerDald => "power_dald",
        }
    }

    /// Needs a trained head to score.
    pub fn needs_head(self) -> bool {
        self != Method::Random
    }

    /// Scores by disagreement across an ensemble.
    pub fn needs_ensemble(self) -> bool {
        !matches!(self, Method::Random | Method::Entropy | Method::Margin)
    }

    pub fn uses_dropout(self) -> bool {
        matches!(self, Method::Bald | Method::Ebald | Method::PowerBald)
    }

    pub fn is_power(self) -> bool {
        matches!(self, Method::PowerBald | Method::PowerDald)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == norm || m.name().replace('_', "") == norm)
            .ok_or_else(|| {
                let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::Config(format!(
                    "unknown method {s:?}; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionConfig {
    pub method: Method,
    pub mc_samples: usize,
    pub power_beta: f64,
    pub dropout_rate: f64,
    pub seed: u64,
    /// Test hook: every dropout pass of a pixel reuses the same mask.
    #[serde(default)]
    pub tie_dropout_masks: bool,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        AcquisitionConfig {
            method: Method::Edald,
            mc_samples: 5,
            power_beta: 1.0,
            dropout_rate: 0.5,
            seed: 0,
            tie_dropout_masks: false,
        }
    }
}

impl AcquisitionConfig {
    pub fn with_method(method: Method) -> Self {
        AcquisitionConfig {
            method,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mc_samples == 0 {
            return Err(Error::Config("mc_samples must be at least 1".into()));
        }
        if self.method.needs_ensemble() && self.mc_samples < 2 {
            return Err(Error::Config(format!(
                "{} needs at least 2 ensemble members, got {}",
                self.method, self.mc_samples
            )));
        }
        if self.method.is_power() && !(self.power_beta >= 0.0 && self.power_beta.is_finite()) {
            return Err(Error::Config(format!(
                "power beta must be >= 0, got {}",
                self.power_beta
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.method.uses_dropout() && self.dropout_rate == 0.0 {
            return Err(Error::Config(format!(
                "{} needs a positive dropout rate",
                self.method
            )));
        }
        Ok(())
    }
}

pub fn check_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Contract("empty probability vector".into()));
    }
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Contract(format!(
            "probabilities must be finite and >= 0: {p:?}"
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::Contract(format!(
            "probabilities sum to {sum}, not 1"
        )));
    }
    Ok(())
}

fn entropy_unchecked(p: &[f64]) -> f64 {
    let mut h = 0.0;
    for &v in p {
        if v > 0.0 {
            h -= v * v.ln();
        }
    }
    h
}

/// Shannon entropy in nats, `0 log 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    check_distribution(p)?;
    Ok(entropy_unchecked(p))
}

/// Entropy of a head output, with probabilities floored before the log.
fn head_entropy(p: &[f64]) -> f64 {
    let mut h = 0.0;
    for &v in p {
        h -= v * v.max(PROB_FLOOR).ln();
    }
    h.max(0.0)
}

/// `1 - (p_(1) - p_(2))`: 0 for a confident prediction, 1 for a two-way tie.
pub fn margin_score(p: &[f64]) -> Result<f64> {
    check_distribution(p)?;
    if p.len() < 2 {
        return Err(Error::Contract("margin needs at least 2 classes".into()));
    }
    Ok(margin_unchecked(p))
}

fn margin_unchecked(p: &[f64]) -> f64 {
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &v in p {
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    1.0 - (first - second)
}

/// Predictive distributions from `M` stochastic passes, plus an optional
/// independent pass for the entropy term.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbEnsemble {
    members: Vec<Vec<f64>>,
    extra: Option<Vec<f64>>,
}

impl ProbEnsemble {
    pub fn new(members: Vec<Vec<f64>>, extra: Option<Vec<f64>>) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(Error::Contract("ensemble needs at least one member".into()));
        };
        let c = first.len();
        for m in members.iter().chain(extra.iter()) {
            if m.len() != c {
                return Err(Error::Contract(
                    "ensemble members disagree on class count".into(),
                ));
            }
            check_distribution(m)?;
        }
        Ok(ProbEnsemble { members, extra })
    }

    pub fn members(&self) -> &[Vec<f64>] {
        &self.members
    }

    pub fn extra(&self) -> Option<&[f64]> {
        self.extra.as_deref()
    }

    pub fn n_classes(&self) -> usize {
        self.members[0].len()
    }
}

/// `H(mean) - mean(H)` before any clamping. Members are summed in a canonical
/// order so the result does not depend on how they were listed.
pub fn mutual_information_raw(members: &[Vec<f64>]) -> f64 {
    let mut sorted: Vec<&Vec<f64>> = members.iter().collect();
    sorted.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let m = sorted.len() as f64;
    let c = sorted[0].len();
    let mut mean = vec![0.0; c];
    let mut mean_h = 0.0;
    for p in &sorted {
        for (acc, v) in mean.iter_mut().zip(p.iter()) {
            *acc += v;
        }
        mean_h += entropy_unchecked(p);
    }
    for v in mean.iter_mut() {
        *v /= m;
    }
    entropy_unchecked(&mean) - mean_h / m
}

/// Mutual information between the prediction and the ensemble draw.
///
/// Exactly 0 when every member is identical. Small negative rounding residue
/// (down to `-1e-9`) is clamped to 0.
pub fn mutual_information(ens: &ProbEnsemble) -> Result<f64> {
    if ens.members.len() < 2 {
        return Err(Error::Contract(format!(
            "mutual information needs at least 2 members, got {}",
            ens.members.len()
        )));
    }
    if ens.members.iter().all(|m| *m == ens.members[0]) {
        return Ok(0.0);
    }
    let mi = mutual_information_raw(&ens.members);
    if mi >= 0.0 {
        Ok(mi)
    } else if mi >= -MI_CLAMP {
        Ok(0.0)
    } else {
        Err(Error::Contract(format!(
            "mutual information {mi} is negative"
        )))
    }
}

/// The two terms of the entropy-augmented score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreParts {
    pub disagreement: f64,
    pub entropy: f64,
}

impl ScoreParts {
    pub fn total(self) -> f64 {
        self.disagreement + self.entropy
    }
}

/// Scores pixels of a pool against a frozen head.
pub struct Scorer<'a> {
    pub pool: &'a FeaturePool,
    pub provider: &'a FeatureProvider,
    pub head: &'a HeadParams,
    pub config: &'a AcquisitionConfig,
}

impl<'a> Scorer<'a> {
    pub fn new(
        pool: &'a FeaturePool,
        provider: &'a FeatureProvider,
        head: &'a HeadParams,
        config: &'a AcquisitionConfig,
    ) -> Result<Self> {
        config.validate()?;
        if head.dim() != pool.dim() || head.classes() != pool.n_classes() {
            return Err(Error::Contract(format!(
                "head shape ({} -> {}) does not match pool ({} -> {})",
                head.dim(),
                head.classes(),
                pool.dim(),
                pool.n_classes()
            )));
        }
        Ok(Scorer {
            pool,
            provider,
            head,
            config,
        })
    }

    fn base_prediction(&self, pixel: usize) -> Vec<f64> {
        let x = self.pool.feature(pixel).to_vec();
        self.head.predict_one(&x)
    }

    /// Head predictions on feature draws `1..=M`, plus draw 0 as the extra member.
    pub fn feature_ensemble(&self, pixel: usize) -> Result<ProbEnsemble> {
        let seed = self.config.seed;
        let draws =
            self.provider
                .sample_features(self.pool, pixel, self.config.mc_samples, seed)?;
        let members = draws.iter().map(|z| self.head.predict_one(z)).collect();
        let z0 = self.provider.sample(self.pool, pixel, 0, seed)?;
        ProbEnsemble::new(members, Some(self.head.predict_one(&z0)))
    }

    /// Dropout passes `1..=M` on the base feature, plus pass 0 as the extra member.
    pub fn dropout_ensemble(&self, pixel: usize) -> Result<ProbEnsemble> {
        let x = self.pool.feature(pixel).to_vec();
        let rate = self.config.dropout_rate;
        let pass = |m: usize| {
            let m = if self.config.tie_dropout_masks { 1 } else { m };
            let s = seed::derive(Domain::Dropout, &[self.config.seed, pixel as u64, m as u64]);
            self.head.predict_dropout(&x, rate, s)
        };
        let members = (1..=self.config.mc_samples).map(pass).collect();
        ProbEnsemble::new(members, Some(pass(0)))
    }

    fn parts(&self, ens: &ProbEnsemble) -> Result<ScoreParts> {
        Ok(ScoreParts {
            disagreement: mutual_information(ens)?,
            entropy: head_entropy(ens.extra().expect("scorer ensembles carry an extra pass")),
        })
    }

    pub fn edald_parts(&self, pixel: usize) -> Result<ScoreParts> {
        self.parts(&self.feature_ensemble(pixel)?)
    }

    pub fn ebald_parts(&self, pixel: usize) -> Result<ScoreParts> {
        self.parts(&self.dropout_ensemble(pixel)?)
    }

    pub fn dald(&self, pixel: usize) -> Result<f64> {
        Ok(self.edald_parts(pixel)?.disagreement)
    }

    pub fn edald(&self, pixel: usize) -> Result<f64> {
        Ok(self.edald_parts(pixel)?.total())
    }

    pub fn bald(&self, pixel: usize) -> Result<f64> {
        Ok(self.ebald_parts(pixel)?.disagreement)
    }

    pub fn ebald(&self, pixel: usize) -> Result<f64> {
        Ok(self.ebald_parts(pixel)?.total())
    }

    pub fn entropy(&self, pixel: usize) -> f64 {
        head_entropy(&self.base_prediction(pixel))
    }

    pub fn margin(&self, pixel: usize) -> f64 {
        margin_unchecked(&self.base_prediction(pixel))
    }

    /// Score under the configured method. `random` has no score.
    pub fn score(&self, pixel: usize) -> Result<f64> {
        match self.config.method {
            Method::Random => Err(Error::Config("random sampling has no score".into())),
            Method::Entropy => Ok(self.entropy(pixel)),
            Method::Margin => Ok(self.margin(pixel)),
            Method::Bald | Method::PowerBald => self.bald(pixel),
            Method::Ebald => self.ebald(pixel),
            Method::Dald | Method::PowerDald => self.dald(pixel),
            Method::Edald => self.edald(pixel),
        }
    }

    pub fn score_all(&self, pixels: &[usize]) -> Result<Vec<f64>> {
        pixels.par_iter().map(|&p| self.score(p)).collect()
    }
}

/// Samples `b` distinct indices without replacement, each draw proportional
/// to `s_i^beta` among those not yet drawn.
///
/// Implemented with Gumbel-top-k keys `beta ln s_i + G_i`. The support is the
/// strictly positive scores, or every index when all scores are zero.
pub fn power_sample(scores: &[f64], beta: f64, b: usize, seed: u64) -> Result<Vec<usize>> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!(
            "power beta must be >= 0, got {beta}"
        )));
    }
    if scores.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::Contract(
            "power sampling needs finite nonnegative scores".into(),
        ));
    }
    let mut support: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] > 0.0).collect();
    let all_zero = support.is_empty();
    if all_zero {
        support = (0..scores.len()).collect();
    }
    if b > support.len() {
        return Err(Error::Budget(format!(
            "cannot draw {b} indices from a support of {}",
            support.len()
        )));
    }
    let gumbel = Gumbel::new(0.0, 1.0).expect("unit Gumbel");
    let mut rng = seed::rng(Domain::Acquisition, &[seed]);
    let mut keyed: Vec<(f64, usize)> = support
        .into_iter()
        .map(|i| {
            let g: f64 = rng.sample(gumbel);
            let base = if all_zero { 0.0 } else { beta * scores[i].ln() };
            (base + g, i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(keyed.into_iter().take(b).map(|(_, i)| i).collect())
}

/// Indices of the `b` largest scores, descending, lowest index first on ties.
pub fn top_b(scores: &[f64], b: usize) -> Result<Vec<usize>> {
    if b > scores.len() {
        return Err(Error::Budget(format!(
            "cannot take the top {b} of {} scores",
            scores.len()
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    order.truncate(b);
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_pool::{generate_synthetic, SyntheticTaskSpec};
    use crate::oracle;
    use proptest::prelude::*;
    use rand::Rng;

    const LN2: f64 = std::f64::consts::LN_2;

    fn random_dist(rng: &mut seed::StreamRng, c: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..c).map(|_| rng.random::<f64>().powi(3)).collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|v| v / s).collect()
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&[1.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!((entropy(&[0.25; 4]).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert!((entropy(&[0.5, 0.5]).unwrap() - LN2).abs() < 1e-15);
        assert!(matches!(entropy(&[0.5, 0.6]), Err(Error::Contract(_))));
        assert!(matches!(entropy(&[-0.1, 1.1]), Err(Error::Contract(_))));
    }

    #[test]
    fn margin_examples() {
        assert_eq!(margin_score(&[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(margin_score(&[0.5, 0.5]).unwrap(), 1.0);
        assert!((margin_score(&[0.6, 0.3, 0.1]).unwrap() - 0.7).abs() < 1e-15);
        assert!(matches!(margin_score(&[1.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn mutual_information_examples() {
        let same = ProbEnsemble::new(vec![vec![0.3, 0.7]; 4], None).unwrap();
        assert_eq!(mutual_information(&same).unwrap(), 0.0);
        let split = ProbEnsemble::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], None).unwrap();
        assert!((mutual_information(&split).unwrap() - LN2).abs() < 1e-15);
        let one = ProbEnsemble::new(vec![vec![0.5, 0.5]], None).unwrap();
        assert!(matches!(mutual_information(&one), Err(Error::Contract(_))));
    }

    #[test]
    fn mutual_information_matches_reference() {
        let mut rng = seed::rng(Domain::Acquisition, &[11]);
        for _ in 0..1000 {
            let members: Vec<Vec<f64>> = (0..5).map(|_| random_dist(&mut rng, 3)).collect();
            let ens = ProbEnsemble::new(members.clone(), None).unwrap();
            let got = mutual_information(&ens).unwrap();
            assert!((got - oracle::mutual_information_reference(&members)).abs() < 1e-12);
        }
    }

    #[test]
    fn ensemble_rejects_bad_members() {
        assert!(ProbEnsemble::new(vec![], None).is_err());
        assert!(ProbEnsemble::new(vec![vec![0.5, 0.5], vec![1.0]], None).is_err());
        assert!(ProbEnsemble::new(vec![vec![0.5, 0.5]], Some(vec![0.2, 0.2])).is_err());
    }

    #[test]
    fn top_b_examples() {
        assert_eq!(top_b(&[3.0, 1.0, 2.0], 2).unwrap(), vec![0, 2]);
        assert_eq!(top_b(&[1.0; 4], 2).unwrap(), vec![0, 1]);
        assert!(matches!(top_b(&[1.0], 2), Err(Error::Budget(_))));
    }

    #[test]
    fn top_b_matches_full_sort() {
        let mut rng = seed::rng(Domain::Acquisition, &[3]);
        for _ in 0..1000 {
            let n = rng.random_range(1..40);
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.random_range(0..6) as f64) * 0.5)
                .collect();
            let b = rng.random_range(0..=n);
            assert_eq!(
                top_b(&scores, b).unwrap(),
                oracle::top_b_reference(&scores, b)
            );
        }
    }

    #[test]
    fn power_sample_degenerate_support() {
        for s in 0..100 {
            assert_eq!(power_sample(&[1.0, 0.0, 0.0], 1.0, 1, s).unwrap(), vec![0]);
        }
        assert!(matches!(
            power_sample(&[1.0, 0.0, 0.0], 1.0, 2, 0),
            Err(Error::Budget(_))
        ));
        let all = power_sample(&[0.0; 5], 2.0, 5, 1).unwrap();
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn power_sample_is_reproducible_and_distinct() {
        let scores = [0.1, 0.4, 0.0, 0.9, 0.3, 0.2];
        let a = power_sample(&scores, 1.0, 4, 77).unwrap();
        assert_eq!(a, power_sample(&scores, 1.0, 4, 77).unwrap());
        let mut d = a.clone();
        d.sort();
        d.dedup();
        assert_eq!(d.len(), 4);
        assert!(!a.contains(&2));
    }

    #[test]
    fn power_sample_first_draw_is_proportional() {
        let scores = [1.0, 2.0, 3.0, 4.0];
        let trials = 40_000;
        let mut counts = [0usize; 4];
        for t in 0..trials {
            counts[power_sample(&scores, 1.0, 1, t).unwrap()[0]] += 1;
        }
        for (i, c) in counts.iter().enumerate() {
            let expect = scores[i] / 10.0;
            assert!(
                (*c as f64 / trials as f64 - expect).abs() < 0.01,
                "{counts:?}"
            );
        }
    }

    fn scoring_fixture() -> (FeaturePool, HeadParams) {
        let spec = SyntheticTaskSpec {
            n_images: 1,
            image_side: 10,
            n_classes: 3,
            feature_dim: 4,
            ..Default::default()
        };
        let pool = generate_synthetic(&spec, 5).unwrap();
        let head = HeadParams::init(4, 16, 3, 9);
        (pool, head)
    }

    #[test]
    fn deterministic_provider_reduces_edald_to_entropy() {
        let (pool, head) = scoring_fixture();
        let cfg = AcquisitionConfig::default();
        let provider = FeatureProvider::Deterministic;
        let scorer = Scorer::new(&pool, &provider, &head, &cfg).unwrap();
        let all: Vec<usize> = (0..pool.len()).collect();
        let mut by_edald = Vec::new();
        let mut by_entropy = Vec::new();
        for &p in &all {
            let parts = scorer.edald_parts(p).unwrap();
            assert_eq!(parts.disagreement, 0.0);
            assert_eq!(scorer.dald(p).unwrap(), 0.0);
            assert_eq!(parts.entropy, scorer.entropy(p));
            by_edald.push(parts.total());
            by_entropy.push(scorer.entropy(p));
        }
        assert_eq!(
            top_b(&by_edald, all.len()).unwrap(),
            top_b(&by_entropy, all.len()).unwrap()
        );
    }

    #[test]
    fn edald_decomposes_and_dominates_dald() {
        let (pool, head) = scoring_fixture();
        let provider = FeatureProvider::gaussian(0.5).unwrap();
        for s in 0..5u64 {
            let cfg = AcquisitionConfig {
                seed: s,
                ..Default::default()
            };
            let scorer = Scorer::new(&pool, &provider, &head, &cfg).unwrap();
            for p in 0..pool.len() {
                let parts = scorer.edald_parts(p).unwrap();
                let dald = scorer.dald(p).unwrap();
                let edald = scorer.edald(p).unwrap();
                assert_eq!(edald, dald + parts.entropy);
                assert!(edald >= dald);
                assert_eq!(edald, scorer.edald(p).unwrap());
            }
        }
    }

    #[test]
    fn dald_is_bounded_by_log_classes() {
        let (pool, _) = scoring_fixture();
        let mut head = HeadParams::init(4, 16, 3, 2);
        head.w2 *= 20.0;
        let provider = FeatureProvider::gaussian(50.0).unwrap();
        let cfg = AcquisitionConfig {
            mc_samples: 8,
            ..Default::default()
        };
        let scorer = Scorer::new(&pool, &provider, &head, &cfg).unwrap();
        for p in 0..pool.len() {
            let d = scorer.dald(p).unwrap();
            assert!((0.0..=3f64.ln() + 1e-12).contains(&d));
        }
    }

    #[test]
    fn tied_dropout_masks_zero_bald() {
        let (pool, head) = scoring_fixture();
        let provider = FeatureProvider::Deterministic;
        let cfg = AcquisitionConfig {
            method: Method::Bald,
            tie_dropout_masks: true,
            ..Default::default()
        };
        let scorer = Scorer::new(&pool, &provider, &head, &cfg).unwrap();
        for p in 0..20 {
            assert_eq!(scorer.bald(p).unwrap(), 0.0);
        }
        let cfg = AcquisitionConfig {
            method: Method::Ebald,
            ..Default::default()
        };
        let scorer = Scorer::new(&pool, &provider, &head, &cfg).unwrap();
        for p in 0..20 {
            let parts = scorer.ebald_parts(p).unwrap();
            assert_eq!(
                scorer.ebald(p).unwrap(),
                scorer.bald(p).unwrap() + parts.entropy
            );
            assert!(
                (scorer.ebald(p).unwrap() - scorer.bald(p).unwrap() - parts.entropy).abs() < 1e-12
            );
            assert!(parts.entropy >= 0.0);
            assert_eq!(scorer.bald(p).unwrap(), scorer.bald(p).unwrap());
        }
    }

    #[test]
    fn config_validation() {
        let bad = AcquisitionConfig {
            method: Method::Bald,
            dropout_rate: 0.0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = AcquisitionConfig {
            method: Method::Dald,
            mc_samples: 1,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = AcquisitionConfig {
            method: Method::PowerDald,
            power_beta: -1.0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        assert!(AcquisitionConfig {
            method: Method::Entropy,
            mc_samples: 1,
            ..Default::default()
        }
        .validate()
        .is_ok());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("powerDALD".parse::<Method>().unwrap(), Method::PowerDald);
        assert!("balentacq".parse::<Method>().is_err());
    }

    fn dist_strategy(c: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, c).prop_filter_map("nonzero", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn entropy_and_margin_are_permutation_invariant(p in dist_strategy(5), shift in 0usize..5) {
            let q: Vec<f64> = (0..5).map(|i| p[(i + shift) % 5]).collect();
            prop_assert!((entropy(&p).unwrap() - entropy(&q).unwrap()).abs() < 1e-15);
            prop_assert_eq!(margin_score(&p).unwrap(), margin_score(&q).unwrap());
        }

        #[test]
        fn mutual_information_is_member_order_invariant_and_bounded(
            members in proptest::collection::vec(dist_strategy(4), 2..8),
            shift in 0usize..8,
        ) {
            let n = members.len();
            let rotated: Vec<Vec<f64>> = (0..n).map(|i| members[(i + shift) % n].clone()).collect();
            let a = mutual_information(&ProbEnsemble::new(members.clone(), None).unwrap()).unwrap();
            let b = mutual_information(&ProbEnsemble::new(rotated, None).unwrap()).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!(a >= 0.0 && a <= 4f64.ln() + 1e-9);
            let mean: Vec<f64> = (0..4).map(|c| members.iter().map(|m| m[c]).sum::<f64>() / n as f64).collect();
            prop_assert!(a <= entropy_unchecked(&mean) + 1e-12);
        }
    }
}
