//! Brute-force reference implementations.
//!
//! These recompute each quantity straight from its definition, sharing no
//! code with the fast paths they check. They are slow on purpose.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::acquisition::{mutual_information, top_b, ProbEnsemble};
use crate::coverage::{kcenter_greedy, maxherding_select};
use crate::head::{HeadParams, BN_EPS, GROUP_NAMES, PROB_FLOOR};
use crate::metrics::miou;
use crate::seed::{self, Domain};

fn dist2(features: ArrayView2<'_, f64>, a: usize, b: usize) -> f64 {
    let mut acc = 0.0;
    for (x, y) in features.row(a).iter().zip(features.row(b).iter()) {
        acc += (x - y) * (x - y);
    }
    acc
}

/// Coverage of `chosen` over `reference`, evaluated term by term. Terms are
/// added smallest first so the value is a function of the point sets alone.
pub fn coverage_direct(
    features: ArrayView2<'_, f64>,
    reference: &[usize],
    chosen: &[usize],
    sigma: f64,
) -> f64 {
    let mut terms = Vec::with_capacity(reference.len());
    for &u in reference {
        let mut best = 0.0f64;
        for &s in chosen {
            best = best.max((-dist2(features, u, s) / (sigma * sigma)).exp());
        }
        terms.push(best);
    }
    terms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut total = 0.0;
    for t in terms {
        total += t;
    }
    total / reference.len() as f64
}

fn dedup_sorted(v: &[usize]) -> Vec<usize> {
    let mut v = v.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

/// Greedy selection where every step re-evaluates full coverage for every
/// remaining candidate and keeps the first strict maximum.
pub fn greedy_coverage_exhaustive(
    features: ArrayView2<'_, f64>,
    reference: &[usize],
    conditioning: &[usize],
    budget: usize,
    sigma: f64,
) -> Vec<usize> {
    let reference = dedup_sorted(reference);
    let mut chosen = dedup_sorted(conditioning);
    let mut remaining: Vec<usize> = reference
        .iter()
        .copied()
        .filter(|i| !chosen.contains(i))
        .collect();
    let mut picks = Vec::new();
    for _ in 0..budget {
        let mut best: Option<(f64, usize)> = None;
        for (pos, &c) in remaining.iter().enumerate() {
            chosen.push(c);
            let v = coverage_direct(features, &reference, &chosen, sigma);
            chosen.pop();
            if best.is_none_or(|(bv, _)| v > bv) {
                best = Some((v, pos));
            }
        }
        let (_, pos) = best.expect("budget within candidates");
        let c = remaining.remove(pos);
        chosen.push(c);
        picks.push(c);
    }
    picks
}

/// Farthest-point selection by recomputing every min-distance from scratch.
pub fn farthest_point_exhaustive(
    features: ArrayView2<'_, f64>,
    reference: &[usize],
    conditioning: &[usize],
    budget: usize,
) -> Vec<usize> {
    let reference = dedup_sorted(reference);
    let mut chosen = dedup_sorted(conditioning);
    let mut remaining: Vec<usize> = reference
        .iter()
        .copied()
        .filter(|i| !chosen.contains(i))
        .collect();
    let mut picks = Vec::new();
    for _ in 0..budget {
        let pos = if chosen.is_empty() {
            0
        } else {
            let mut best = (f64::NEG_INFINITY, 0);
            for (pos, &c) in remaining.iter().enumerate() {
                let d = chosen
                    .iter()
                    .map(|&s| dist2(features, c, s).sqrt())
                    .fold(f64::INFINITY, f64::min);
                if d > best.0 {
                    best = (d, pos);
                }
            }
            best.1
        };
        let c = remaining.remove(pos);
        chosen.push(c);
        picks.push(c);
    }
    picks
}

/// `H(mean) - mean H`, straight from the definition.
pub fn mutual_information_reference(members: &[Vec<f64>]) -> f64 {
    let h = |p: &[f64]| -> f64 { p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum() };
    let m = members.len() as f64;
    let c = members[0].len();
    let mean: Vec<f64> = (0..c)
        .map(|k| members.iter().map(|p| p[k]).sum::<f64>() / m)
        .collect();
    h(&mean) - members.iter().map(|p| h(p)).sum::<f64>() / m
}

/// Indices sorted by descending score with a full stable sort.
pub fn top_b_reference(scores: &[f64], b: usize) -> Vec<usize> {
    let mut pairs: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
    pairs.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap());
    pairs.into_iter().take(b).map(|(i, _)| i).collect()
}

/// mIoU from an explicit confusion matrix (rows: truth, columns: prediction).
pub fn confusion_miou(
    pred: &[usize],
    truth: &[usize],
    n_classes: usize,
) -> (f64, Vec<Option<f64>>) {
    let mut m = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        m[t][p] += 1;
    }
    let per: Vec<Option<f64>> = (0..n_classes)
        .map(|c| {
            let row: u64 = m[c].iter().sum();
            let col: u64 = (0..n_classes).map(|r| m[r][c]).sum();
            let union = row + col - m[c][c];
            if union == 0 {
                None
            } else {
                Some(m[c][c] as f64 / union as f64)
            }
        })
        .collect();
    let present: Vec<f64> = per.iter().filter_map(|v| *v).collect();
    (present.iter().sum::<f64>() / present.len() as f64, per)
}

/// Train-mode mean cross-entropy written with whole-matrix operations.
pub fn reference_train_loss(p: &HeadParams, x: ArrayView2<'_, f64>, labels: &[usize]) -> f64 {
    let n = x.nrows();
    let pre = x.dot(&p.w1.t()) + &p.b1;
    let (mean, var) = if n >= 2 {
        let mean = pre.mean_axis(Axis(0)).unwrap();
        let var = pre.var_axis(Axis(0), 0.0);
        (mean, var)
    } else {
        (p.running_mean.clone(), p.running_var.clone())
    };
    let std: Array1<f64> = var.mapv(|v| (v + BN_EPS).sqrt());
    let xhat = (&pre - &mean) / &std;
    let act = (xhat * &p.norm_gain + &p.norm_bias).mapv(|v| v.max(0.0));
    let logits = act.dot(&p.w2.t()) + &p.b2;
    let mut loss = 0.0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let prob = (row[labels[i]] - max).exp() / z;
        loss -= prob.max(PROB_FLOOR).ln();
    }
    loss / n as f64
}

/// Central differences of [`reference_train_loss`] for every trainable group,
/// in the head's group order.
pub fn finite_difference_gradients(
    params: &HeadParams,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    step: f64,
) -> Vec<Vec<f64>> {
    let mut work = params.clone();
    let sizes: Vec<usize> = work.trainable_mut().iter().map(|g| g.len()).collect();
    let mut out = Vec::with_capacity(sizes.len());
    for (g, &len) in sizes.iter().enumerate() {
        let mut grad = vec![0.0; len];
        for (i, slot) in grad.iter_mut().enumerate() {
            let orig = work.trainable_mut()[g][i];
            work.trainable_mut()[g][i] = orig + step;
            let up = reference_train_loss(&work, x, labels);
            work.trainable_mut()[g][i] = orig - step;
            let down = reference_train_loss(&work, x, labels);
            work.trainable_mut()[g][i] = orig;
            *slot = (up - down) / (2.0 * step);
        }
        out.push(grad);
    }
    out
}

/// Below this norm a gradient group counts as identically zero (batch norm
/// makes the first-layer bias gradient vanish exactly), and the difference is
/// compared in absolute terms.
pub const VANISHING_GRADIENT: f64 = 1e-8;

#[derive(Clone, Copy, Debug)]
pub struct GroupError {
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    pub diff_norm: f64,
}

impl GroupError {
    pub fn relative(&self) -> f64 {
        let scale = self.analytic_norm.max(self.numeric_norm);
        if scale == 0.0 {
            0.0
        } else {
            self.diff_norm / scale
        }
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.relative() < tol || self.diff_norm < VANISHING_GRADIENT
    }
}

pub fn gradient_group_error(analytic: &[f64], numeric: &[f64]) -> GroupError {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    GroupError {
        analytic_norm: norm(&mut analytic.iter().copied()),
        numeric_norm: norm(&mut numeric.iter().copied()),
        diff_norm: norm(&mut analytic.iter().zip(numeric).map(|(a, b)| a - b)),
    }
}

/// Random gradient-check instance: `(params, features, labels)`.
pub fn random_head_instance(seed: u64) -> (HeadParams, Array2<f64>, Vec<usize>) {
    let mut rng = seed::rng(Domain::Training, &[seed, 0xfd]);
    let d = rng.random_range(1..=8);
    let h = rng.random_range(2..=16);
    let c = rng.random_range(2..=5);
    let n = rng.random_range(2..=7);
    let mut p = HeadParams::init(d, h, c, seed);
    for v in p.norm_gain.iter_mut() {
        *v = rng.random_range(0.5..1.5);
    }
    for v in p.norm_bias.iter_mut() {
        *v = rng.random_range(-0.5..0.5);
    }
    let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
    let y = (0..n).map(|_| rng.random_range(0..c)).collect();
    (p, x, y)
}

fn random_points(rng: &mut seed::StreamRng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0))
}

fn random_dist(rng: &mut seed::StreamRng, c: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..c).map(|_| rng.random::<f64>().powi(2)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

#[derive(Clone, Debug)]
pub struct OracleReport {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    pub seconds: f64,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

fn timed(name: &'static str, cases: usize, check: impl FnMut(usize) -> bool) -> OracleReport {
    let start = Instant::now();
    let failures = (0..cases).map(check).filter(|ok| !ok).count();
    OracleReport {
        name,
        cases,
        failures,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Runs every fast path against its brute-force reference.
pub fn run_oracle_suite(seed: u64) -> Vec<OracleReport> {
    let rng_for = |tag: u64, case: usize| seed::rng(Domain::Acquisition, &[seed, tag, case as u64]);
    vec![
        timed("maxherding vs exhaustive coverage", 200, |case| {
            let mut rng = rng_for(1, case);
            let n = rng.random_range(2..=12);
            let d = rng.random_range(1..=4);
            let f = random_points(&mut rng, n, d);
            let all: Vec<usize> = (0..n).collect();
            let cond: Vec<usize> = all
                .iter()
                .copied()
                .filter(|_| rng.random_bool(0.2))
                .collect();
            let budget = rng.random_range(0..=n - cond.len());
            let sigma = rng.random_range(0.3..3.0);
            maxherding_select(f.view(), &all, &cond, budget, sigma).ok()
                == Some(greedy_coverage_exhaustive(
                    f.view(),
                    &all,
                    &cond,
                    budget,
                    sigma,
                ))
        }),
        timed("k-center vs exhaustive farthest point", 200, |case| {
            let mut rng = rng_for(2, case);
            let n = rng.random_range(2..=12);
            let d = rng.random_range(1..=4);
            let f = random_points(&mut rng, n, d);
            let all: Vec<usize> = (0..n).collect();
            let cond: Vec<usize> = all
                .iter()
                .copied()
                .filter(|_| rng.random_bool(0.2))
                .collect();
            let budget = rng.random_range(0..=n - cond.len());
            kcenter_greedy(f.view(), &all, &cond, budget).ok()
                == Some(farthest_point_exhaustive(f.view(), &all, &cond, budget))
        }),
        timed("mutual information vs definition", 10_000, |case| {
            let mut rng = rng_for(3, case);
            let c = rng.random_range(2..=10);
            let members: Vec<Vec<f64>> = (0..rng.random_range(2..=8))
                .map(|_| random_dist(&mut rng, c))
                .collect();
            let reference = mutual_information_reference(&members);
            ProbEnsemble::new(members, None)
                .and_then(|e| mutual_information(&e))
                .is_ok_and(|v| (v - reference.max(0.0)).abs() < 1e-12)
        }),
        timed("top-b vs full sort", 1000, |case| {
            let mut rng = rng_for(4, case);
            let n = rng.random_range(1..50);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64).collect();
            let b = rng.random_range(0..=n);
            top_b(&scores, b).ok() == Some(top_b_reference(&scores, b))
        }),
        timed("mIoU vs confusion matrix", 1000, |case| {
            let mut rng = rng_for(5, case);
            let c = rng.random_range(2..8);
            let n = rng.random_range(1..100);
            let p: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
            let g: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
            miou(&p, &g, c).ok() == Some(confusion_miou(&p, &g, c))
        }),
        timed("head gradients vs finite differences", 20, |case| {
            let (p, x, y) = random_head_instance(seed.wrapping_add(case as u64));
            let Ok((_, g)) = p.loss_and_grad(x.view(), &y) else {
                return false;
            };
            let fd = finite_difference_gradients(&p, x.view(), &y, 1e-5);
            (0..GROUP_NAMES.len()).all(|k| gradient_group_error(g.groups()[k], &fd[k]).passes(1e-4))
        }),
    ]
}
