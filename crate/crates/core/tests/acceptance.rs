//! Acceptance checks. Runs as a plain binary (`harness = false`) so every
//! criterion prints its own PASS/FAIL line, even when all of them pass.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use pixel_al::acquisition::{
    mutual_information_raw, power_sample, top_b, AcquisitionConfig, Method, Scorer,
};
use pixel_al::coverage::{
    coverage_of, maxherding, maxherding_select, split_and_herd, CoverageState,
};
use pixel_al::experiment::{run_experiment, run_round, RoundConfig, RoundState, METRICS_FILE};
use pixel_al::feature_pool::{
    generate_synthetic, FeaturePool, FeatureProvider, LabelGeometry, SyntheticTaskSpec,
};
use pixel_al::head::{HeadParams, GROUP_NAMES, PROB_FLOOR};
use pixel_al::kernel::median_bandwidth;
use pixel_al::metrics::{mean_std, miou};
use pixel_al::oracle::{
    confusion_miou, finite_difference_gradients, gradient_group_error, greedy_coverage_exhaustive,
    random_head_instance,
};
use pixel_al::report::{write_metrics_csv, MetricsRow};
use pixel_al::seed::{self, Domain, StreamRng};

type Check = fn() -> Outcome;

struct Outcome {
    ok: bool,
    detail: String,
}

impl Outcome {
    fn new(ok: bool, detail: impl Into<String>) -> Self {
        Outcome {
            ok,
            detail: detail.into(),
        }
    }
}

fn rng(tag: u64, case: usize) -> StreamRng {
    seed::rng(Domain::Acquisition, &[0xacce, tag, case as u64])
}

fn points(rng: &mut StreamRng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0))
}

/// Points around a handful of random centers, closer to what pixel features look like.
fn clustered(rng: &mut StreamRng, n: usize, d: usize) -> Array2<f64> {
    let k = rng.random_range(2..=6);
    let centers = points(rng, k, d).mapv(|v| 2.0 * v);
    let mut out = Array2::zeros((n, d));
    for i in 0..n {
        let c = rng.random_range(0..k);
        for j in 0..d {
            out[[i, j]] = centers[[c, j]] + rng.random_range(-0.7..0.7);
        }
    }
    out
}

fn dist(rng: &mut StreamRng, c: usize) -> Vec<f64> {
    let sharp = rng.random_range(1..=6);
    let raw: Vec<f64> = (0..c).map(|_| rng.random::<f64>().powi(sharp)).collect();
    let s: f64 = raw.iter().sum();
    if s == 0.0 {
        return vec![1.0 / c as f64; c];
    }
    raw.iter().map(|v| v / s).collect()
}

fn herding_oracle() -> Outcome {
    let mut steps = 0;
    let mut mismatched = 0;
    for case in 0..200 {
        let mut r = rng(1, case);
        let n = r.random_range(2..=12);
        let d = r.random_range(1..=4);
        let f = points(&mut r, n, d);
        let all: Vec<usize> = (0..n).collect();
        let cond: Vec<usize> = all.iter().copied().filter(|_| r.random_bool(0.2)).collect();
        let budget = n - cond.len();
        let sigma = r.random_range(0.3..3.0);
        let fast = maxherding_select(f.view(), &all, &cond, budget, sigma).unwrap();
        let slow = greedy_coverage_exhaustive(f.view(), &all, &cond, budget, sigma);
        steps += budget;
        // Once a step diverges every later step is measured against a different set.
        mismatched += match fast.iter().zip(&slow).position(|(a, b)| a != b) {
            Some(p) => budget - p,
            None => 0,
        };
    }
    Outcome::new(
        mismatched == 0,
        format!("{} of {steps} steps match", steps - mismatched),
    )
}

fn monotone_and_submodular() -> Outcome {
    const SLACK: f64 = 1e-9;
    let mut checks = 0usize;
    let mut violations = 0usize;
    for case in 0..100 {
        let mut r = rng(2, case);
        let d = r.random_range(1..=8);
        let f = clustered(&mut r, 500, d);
        let all: Vec<usize> = (0..500).collect();
        let sigma = median_bandwidth(f.view(), &all, 1024, case as u64).unwrap();
        let h = maxherding(f.view(), &all, &[], 50, sigma).unwrap();
        let mut prev = h.initial_coverage;
        let mut prev_gain = f64::INFINITY;
        for &v in &h.coverage {
            let gain = v - prev;
            checks += 2;
            violations += usize::from(gain < -SLACK) + usize::from(gain > prev_gain + SLACK);
            prev = v;
            prev_gain = gain;
        }
        // Nested sets A within B built from random points: gain under A >= gain under B.
        let big: Vec<usize> = (0..30).map(|_| r.random_range(0..500)).collect();
        let small = &big[..r.random_range(0..30)];
        let sa = CoverageState::new(f.view(), &all, small, sigma).unwrap();
        let sb = CoverageState::new(f.view(), &all, &big, sigma).unwrap();
        checks += 1;
        violations += usize::from(sb.value() < sa.value() - SLACK);
        for _ in 0..20 {
            let x = r.random_range(0..500);
            checks += 1;
            violations += usize::from(sa.gain(f.view(), x) < sb.gain(f.view(), x) - SLACK);
        }
    }
    Outcome::new(
        violations == 0,
        format!("{violations} violations in {checks} checks"),
    )
}

fn mi_bounds() -> Outcome {
    let mut bad = 0;
    let mut lowest = f64::INFINITY;
    for case in 0..100_000 {
        let mut r = rng(3, case);
        let c = r.random_range(2..=10);
        let m = r.random_range(1..=8);
        let members: Vec<Vec<f64>> = match case % 10 {
            // identical members
            0 => vec![dist(&mut r, c); m],
            // one-hot members
            1 => (0..m)
                .map(|_| {
                    let mut p = vec![0.0; c];
                    p[r.random_range(0..c)] = 1.0;
                    p
                })
                .collect(),
            _ => (0..m).map(|_| dist(&mut r, c)).collect(),
        };
        let mi = mutual_information_raw(&members);
        lowest = lowest.min(mi);
        if !(mi >= -1e-9 && mi <= (c as f64).ln() + 1e-9) {
            bad += 1;
        }
    }
    Outcome::new(
        bad == 0,
        format!("{bad} out of bounds, minimum {lowest:.3e}"),
    )
}

fn random_pool(r: &mut StreamRng, seed: u64) -> FeaturePool {
    let spec = SyntheticTaskSpec {
        n_images: r.random_range(1..=4),
        image_side: 5,
        n_classes: r.random_range(2..=6),
        feature_dim: r.random_range(2..=8),
        cluster_spread: r.random_range(0.3..2.0),
        label_geometry: LabelGeometry::Voronoi,
    };
    let side = (5..).find(|s| spec.n_images * s * s >= 100).unwrap();
    let spec = SyntheticTaskSpec {
        image_side: side,
        ..spec
    };
    generate_synthetic(&spec, seed).unwrap()
}

fn floored_entropy(p: &[f64]) -> f64 {
    -p.iter().map(|&v| v * v.max(PROB_FLOOR).ln()).sum::<f64>()
}

fn edald_decomposition() -> Outcome {
    let mut cases = 0;
    let mut worst = 0.0f64;
    for pool_case in 0..100 {
        let mut r = rng(4, pool_case);
        let pool = random_pool(&mut r, pool_case as u64);
        let head = HeadParams::init(
            pool.dim(),
            r.random_range(4..=32),
            pool.n_classes(),
            pool_case as u64,
        );
        let provider = FeatureProvider::gaussian(r.random_range(0.01..1.0)).unwrap();
        let config = AcquisitionConfig {
            mc_samples: r.random_range(2..=8),
            seed: pool_case as u64,
            ..AcquisitionConfig::with_method(Method::Edald)
        };
        let scorer = Scorer::new(&pool, &provider, &head, &config).unwrap();
        for p in 0..100 {
            let ens = scorer.feature_ensemble(p).unwrap();
            let extra = floored_entropy(ens.extra().unwrap()).max(0.0);
            let gap = (scorer.edald(p).unwrap() - (scorer.dald(p).unwrap() + extra)).abs();
            worst = worst.max(gap);
            cases += 1;
        }
    }
    let mut ranking_ok = 0;
    for pool_case in 0..20 {
        let mut r = rng(40, pool_case);
        let pool = random_pool(&mut r, 1000 + pool_case as u64);
        let head = HeadParams::init(pool.dim(), 16, pool.n_classes(), pool_case as u64);
        let config = AcquisitionConfig::with_method(Method::Edald);
        let scorer = Scorer::new(&pool, &FeatureProvider::Deterministic, &head, &config).unwrap();
        let pixels: Vec<usize> = (0..100).collect();
        let ed: Vec<f64> = pixels.iter().map(|&p| scorer.edald(p).unwrap()).collect();
        let en: Vec<f64> = pixels.iter().map(|&p| scorer.entropy(p)).collect();
        ranking_ok += usize::from(top_b(&ed, 100).unwrap() == top_b(&en, 100).unwrap());
    }
    Outcome::new(
        worst <= 1e-12 && ranking_ok == 20,
        format!("{cases} cases, max gap {worst:.2e}; rankings equal on {ranking_ok}/20 pools"),
    )
}

fn split_consistency() -> Outcome {
    let mut identical = 0;
    for case in 0..50 {
        let mut r = rng(5, case);
        let n = r.random_range(10..=200);
        let d = r.random_range(1..=6);
        let f = clustered(&mut r, n, d);
        let all: Vec<usize> = (0..n).collect();
        let sigma = median_bandwidth(f.view(), &all, 1024, 0).unwrap();
        let budget = r.random_range(1..=10.min(n));
        let full = maxherding_select(f.view(), &all, &[], budget, sigma).unwrap();
        let one = split_and_herd(f.view(), &all, budget, 1, sigma, case as u64).unwrap();
        identical += usize::from(full == one);
    }
    let mut worst = f64::INFINITY;
    for case in 0..50 {
        let mut r = rng(50, case);
        let n = r.random_range(40..=200);
        let d = r.random_range(1..=6);
        let f = clustered(&mut r, n, d);
        let all: Vec<usize> = (0..n).collect();
        let sigma = median_bandwidth(f.view(), &all, 1024, 0).unwrap();
        let full = maxherding_select(f.view(), &all, &[], 10, sigma).unwrap();
        let full_value = coverage_of(f.view(), &all, &full, sigma).unwrap();
        for splits in [2, 4] {
            let picks = split_and_herd(f.view(), &all, 10, splits, sigma, case as u64).unwrap();
            worst = worst.min(coverage_of(f.view(), &all, &picks, sigma).unwrap() / full_value);
        }
    }
    Outcome::new(
        identical == 50 && worst >= 0.95,
        format!("splits=1 identical on {identical}/50; worst split ratio {worst:.4}"),
    )
}

fn gradient_check() -> Outcome {
    let mut worst = 0.0f64;
    let mut failed = Vec::new();
    for s in 0..20 {
        let (p, x, y) = random_head_instance(1000 + s);
        let (_, grads) = p.loss_and_grad(x.view(), &y).unwrap();
        let numeric = finite_difference_gradients(&p, x.view(), &y, 1e-5);
        for (g, (a, n)) in grads.groups().iter().zip(&numeric).enumerate() {
            let e = gradient_group_error(a, n);
            if e.analytic_norm.max(e.numeric_norm) > 1e-8 {
                worst = worst.max(e.relative());
            }
            if !e.passes(1e-4) {
                failed.push(format!("{s}:{}", GROUP_NAMES[g]));
            }
        }
    }
    Outcome::new(
        failed.is_empty(),
        format!("worst relative error {worst:.2e}; failing groups {failed:?}"),
    )
}

fn power_limits() -> Outcome {
    const DRAWS: usize = 100_000;
    let scores = [0.3, 0.05, 0.9, 0.7, 0.12, 0.5, 0.01, 0.8, 0.33, 0.6];
    let mut counts = [0usize; 10];
    for t in 0..DRAWS {
        counts[power_sample(&scores, 0.0, 1, t as u64).unwrap()[0]] += 1;
    }
    let expected = DRAWS as f64 / 10.0;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let p = 1.0 - ChiSquared::new(9.0).unwrap().cdf(stat);
    let mut first = 0;
    for t in 0..DRAWS {
        first += usize::from(power_sample(&[0.9, 0.5, 0.1], 64.0, 1, t as u64).unwrap()[0] == 0);
    }
    let freq = first as f64 / DRAWS as f64;
    Outcome::new(
        p > 0.001 && freq > 0.999,
        format!("beta=0 chi2 {stat:.2} (p = {p:.3}); beta=64 picks index 0 at {freq:.5}"),
    )
}

fn protocol_invariants() -> Outcome {
    let pool = generate_synthetic(&SyntheticTaskSpec::default(), 0).unwrap();
    let provider = FeatureProvider::gaussian_default(&pool);
    let config = RoundConfig {
        record_wall_time: false,
        ..Default::default()
    };
    let b = config.budget.resolve(&pool);
    let seeds = [0u64, 1, 2];
    let mut broken = Vec::new();
    let mut history = Vec::new();
    let mut selections = Vec::new();
    for &s in &seeds {
        let mut state = RoundState::new(&pool, s);
        for r in 1..=config.rounds {
            run_round(&mut state, &pool, &provider, &config).unwrap();
            if !state.is_partition(pool.len()) || state.labeled.len() != r * b {
                broken.push(format!("seed {s} round {r}"));
            }
        }
        history.extend(state.history);
        selections.push(state.selections);
    }
    let dir = tempfile::tempdir().unwrap();
    let rerun = run_experiment(&pool, &provider, &config, &seeds, Some(dir.path())).unwrap();
    let first_csv = dir.path().join("first.csv");
    let rows: Vec<MetricsRow> = history.iter().map(MetricsRow::from).collect();
    write_metrics_csv(&first_csv, &rows).unwrap();
    let identical = std::fs::read(&first_csv).unwrap()
        == std::fs::read(dir.path().join(METRICS_FILE)).unwrap()
        && rerun.records == history
        && rerun
            .states
            .iter()
            .map(|s| &s.selections)
            .eq(selections.iter());
    Outcome::new(
        broken.is_empty() && identical,
        format!(
            "b = {b}, {} rounds x {} seeds; invariant breaks {broken:?}; reruns identical: {identical}",
            config.rounds,
            seeds.len()
        ),
    )
}

fn directional() -> Outcome {
    let spec = SyntheticTaskSpec {
        n_images: 8,
        image_side: 32,
        n_classes: 4,
        label_geometry: LabelGeometry::Voronoi,
        ..Default::default()
    };
    let pool = generate_synthetic(&spec, 7).unwrap();
    let provider = FeatureProvider::gaussian_default(&pool);
    let seeds: Vec<u64> = (0..10).collect();
    let arm = |method: Method, two_stage: bool| {
        let config = RoundConfig {
            stage1_enabled: two_stage,
            acquisition: AcquisitionConfig::with_method(method),
            record_wall_time: false,
            ..Default::default()
        };
        let res = run_experiment(&pool, &provider, &config, &seeds, None).unwrap();
        let finals: Vec<f64> = res
            .records
            .iter()
            .filter(|r| r.round == config.rounds)
            .map(|r| r.pixel_accuracy)
            .collect();
        mean_std(&finals)
    };
    let edald = arm(Method::Edald, true);
    let random = arm(Method::Random, false);
    let herd_entropy = arm(Method::Entropy, true);
    let entropy = arm(Method::Entropy, false);
    let show = |(m, s): (f64, f64)| format!("{m:.4} +- {s:.4}");
    Outcome::new(
        edald.0 >= random.0 && herd_entropy.0 >= entropy.0,
        format!(
            "final accuracy: two-stage eDALD {} vs random {}; herding->entropy {} vs entropy {}",
            show(edald),
            show(random),
            show(herd_entropy),
            show(entropy)
        ),
    )
}

fn miou_oracle() -> Outcome {
    let mut mismatches = 0;
    for case in 0..1000 {
        let mut r = rng(10, case);
        let c = r.random_range(2..=12);
        let n = r.random_range(1..=300);
        let truth: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
        let flip = r.random::<f64>();
        let pred: Vec<usize> = truth
            .iter()
            .map(|&t| {
                if r.random::<f64>() < flip {
                    r.random_range(0..c)
                } else {
                    t
                }
            })
            .collect();
        let fast = miou(&pred, &truth, c).unwrap();
        let slow = confusion_miou(&pred, &truth, c);
        mismatches += usize::from(fast.0.to_bits() != slow.0.to_bits() || fast.1 != slow.1);
    }
    Outcome::new(
        mismatches == 0,
        format!("{mismatches} mismatches in 1000 cases"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, Option<Duration>, Check); 10] = [
        (
            "1 herding equals exhaustive greedy",
            Some(Duration::from_secs(10)),
            herding_oracle,
        ),
        (
            "2 coverage monotone, diminishing returns",
            Some(Duration::from_secs(30)),
            monotone_and_submodular,
        ),
        (
            "3 mutual information within [0, ln C]",
            Some(Duration::from_secs(10)),
            mi_bounds,
        ),
        ("4 eDALD = DALD + entropy", None, edald_decomposition),
        ("5 split-and-herd consistency", None, split_consistency),
        (
            "6 head gradient check",
            Some(Duration::from_secs(20)),
            gradient_check,
        ),
        ("7 power sampling limits", None, power_limits),
        (
            "8 protocol invariants and reruns",
            Some(Duration::from_secs(300)),
            protocol_invariants,
        ),
        (
            "9 directional efficacy",
            Some(Duration::from_secs(600)),
            directional,
        ),
        ("10 mIoU equals confusion matrix", None, miou_oracle),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, limit, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let out = check();
        let took = start.elapsed();
        let in_time = limit.is_none_or(|l| took <= l);
        let ok = out.ok && in_time;
        failed += usize::from(!ok);
        let limit = limit.map_or(String::new(), |l| format!(" / {}s", l.as_secs()));
        println!(
            "{} {name}: {} [{:.2}s{limit}]",
            if ok { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
