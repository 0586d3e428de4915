//! Multi-round active learning: candidate selection, acquisition, annotation,
//! retraining and evaluation, with per-round checkpoints.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::acquisition::{power_sample, top_b, AcquisitionConfig, Method, Scorer};
use crate::coverage::{local_then_global, StageOneConfig};
use crate::error::{Error, Result};
use crate::feature_pool::{FeaturePool, FeatureProvider};
use crate::head::{train_head, HeadParams, TrainConfig};
use crate::metrics::{evaluate, Evaluation};
use crate::report::{self, AggregateRow, MetricsRow};
use crate::seed::{self, Domain};

/// Per-round budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Pixels(usize),
    /// Fraction of the number of images, rounded, at least 1.
    PerImage(f64),
}

impl Budget {
    pub fn resolve(self, pool: &FeaturePool) -> usize {
        match self {
            Budget::Pixels(b) => b,
            Budget::PerImage(f) => ((f * pool.n_images() as f64).round() as usize).max(1),
        }
    }
}

/// From round `after_round + 1` on, skip candidate selection and acquire with
/// `method` over all unlabeled pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSwitch {
    pub after_round: usize,
    pub method: Method,
}

impl FromStr for PhaseSwitch {
    type Err = Error;

    /// Parses `switch@<round>:<method>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::Config(format!(
                "schedule must look like switch@10:margin, got {s:?}"
            ))
        };
        let rest = s.trim().strip_prefix("switch@").ok_or_else(bad)?;
        let (round, method) = rest.split_once(':').ok_or_else(bad)?;
        Ok(PhaseSwitch {
            after_round: round.trim().parse().map_err(|_| bad())?,
            method: method.parse()?,
        })
    }
}

impl fmt::Display for PhaseSwitch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "switch@{}:{}", self.after_round, self.method)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSet {
    /// Every pixel with ground truth.
    Annotated,
    Indices(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundConfig {
    pub rounds: usize,
    pub budget: Budget,
    pub stage_one: StageOneConfig,
    pub stage1_enabled: bool,
    pub acquisition: AcquisitionConfig,
    pub train: TrainConfig,
    pub schedule: Option<PhaseSwitch>,
    pub eval: EvalSet,
    /// When off, the wall-time column is written as 0 so reruns are byte-identical.
    pub record_wall_time: bool,
}

impl Default for RoundConfig {
    fn default() -> Self {
        RoundConfig {
            rounds: 10,
            budget: Budget::PerImage(0.1),
            stage_one: StageOneConfig::default(),
            stage1_enabled: true,
            acquisition: AcquisitionConfig::default(),
            train: TrainConfig::default(),
            schedule: None,
            eval: EvalSet::Annotated,
            record_wall_time: true,
        }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        match self.budget {
            Budget::Pixels(0) => return Err(Error::Config("budget must be >= 1".into())),
            Budget::PerImage(f) if !(f > 0.0 && f.is_finite()) => {
                return Err(Error::Config(format!(
                    "budget fraction must be positive, got {f}"
                )))
            }
            _ => {}
        }
        self.stage_one.validate()?;
        self.acquisition.validate()?;
        if let Some(s) = self.schedule {
            AcquisitionConfig {
                method: s.method,
                ..self.acquisition.clone()
            }
            .validate()?;
        }
        self.train.validate()
    }

    /// Acquisition method used in 1-based round `round`.
    pub fn method_at(&self, round: usize) -> Method {
        match self.schedule {
            Some(s) if round > s.after_round => s.method,
            _ => self.acquisition.method,
        }
    }

    pub fn stage1_at(&self, round: usize) -> bool {
        match self.schedule {
            Some(s) if round > s.after_round => false,
            _ => self.stage1_enabled,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub seed: u64,
    pub round: usize,
    pub labeled_count: usize,
    pub pixel_accuracy: f64,
    pub miou: f64,
    pub per_class_iou: Vec<Option<f64>>,
    pub wall_time_s: f64,
}

/// Labeled/unlabeled bookkeeping for one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundState {
    pub seed: u64,
    /// Rounds completed so far.
    pub round: usize,
    /// `(pixel, class)` in annotation order.
    pub labeled: Vec<(usize, u16)>,
    /// Sorted unlabeled pixel indices.
    pub unlabeled: Vec<usize>,
    pub history: Vec<MetricsRecord>,
    /// Pixels picked in each completed round.
    pub selections: Vec<Vec<usize>>,
    #[serde(skip)]
    pub head: Option<HeadParams>,
}

impl RoundState {
    pub fn new(pool: &FeaturePool, seed: u64) -> Self {
        RoundState {
            seed,
            round: 0,
            labeled: Vec::new(),
            unlabeled: (0..pool.len()).collect(),
            history: Vec::new(),
            selections: Vec::new(),
            head: None,
        }
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        self.labeled.iter().map(|&(i, _)| i).collect()
    }

    /// Labeled and unlabeled are disjoint and together cover `0..n`.
    pub fn is_partition(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for i in self
            .labeled_indices()
            .into_iter()
            .chain(self.unlabeled.iter().copied())
        {
            if i >= n || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        seen.into_iter().all(|s| s)
    }
}

/// Seeds for the independent random streams of one round.
fn round_seed(seed: u64, round: usize, purpose: u64) -> u64 {
    seed::derive(Domain::Round, &[seed, round as u64, purpose])
}

const STAGE_ONE: u64 = 1;
const RANDOM_PICK: u64 = 2;
const SCORING: u64 = 3;
const TRAINING: u64 = 4;

/// Picks this round's pixels without touching the state.
pub fn select(
    state: &RoundState,
    pool: &FeaturePool,
    provider: &FeatureProvider,
    config: &RoundConfig,
) -> Result<Vec<usize>> {
    let round = state.round + 1;
    let b = config.budget.resolve(pool);
    if state.unlabeled.len() < b {
        return Err(Error::Budget(format!(
            "round {round}: budget {b} exceeds the {} unlabeled pixels",
            state.unlabeled.len()
        )));
    }
    let method = config.method_at(round);
    let candidates = if config.stage1_at(round) {
        let labeled = state.labeled_indices();
        local_then_global(
            pool,
            &labeled,
            &config.stage_one,
            round_seed(state.seed, round, STAGE_ONE),
        )?
        .candidates
    } else {
        state.unlabeled.clone()
    };
    if b > candidates.len() {
        return Err(Error::Budget(format!(
            "round {round}: budget {b} exceeds the {} candidates",
            candidates.len()
        )));
    }

    let uniform = |from: &[usize]| -> Vec<usize> {
        let mut rng = seed::rng_from(round_seed(state.seed, round, RANDOM_PICK));
        index::sample(&mut rng, from.len(), b)
            .into_iter()
            .map(|i| from[i])
            .collect()
    };
    let head = match (&state.head, method) {
        (_, Method::Random) => return Ok(uniform(&candidates)),
        (None, _) if config.stage1_at(round) => return Ok(candidates[..b].to_vec()),
        (None, _) => return Ok(uniform(&state.unlabeled)),
        (Some(h), _) => h,
    };

    let acq = AcquisitionConfig {
        method,
        seed: round_seed(state.seed, round, SCORING),
        ..config.acquisition.clone()
    };
    let scores = Scorer::new(pool, provider, head, &acq)?.score_all(&candidates)?;
    let picks = if method.is_power() {
        power_sample(&scores, acq.power_beta, b, acq.seed)?
    } else {
        top_b(&scores, b)?
    };
    Ok(picks.into_iter().map(|i| candidates[i]).collect())
}

fn eval_indices(pool: &FeaturePool, config: &RoundConfig) -> Vec<usize> {
    match &config.eval {
        EvalSet::Annotated => pool.annotated_indices(),
        EvalSet::Indices(v) => v.clone(),
    }
}

/// Runs one round: select, annotate, retrain from scratch, evaluate.
pub fn run_round(
    state: &mut RoundState,
    pool: &FeaturePool,
    provider: &FeatureProvider,
    config: &RoundConfig,
) -> Result<MetricsRecord> {
    let start = Instant::now();
    let round = state.round + 1;
    let picks = select(state, pool, provider, config)?;

    let oracle = pool.annotation_oracle();
    let mut revealed = Vec::with_capacity(picks.len());
    for &p in &picks {
        let y = oracle
            .annotate(p)
            .ok_or_else(|| Error::Label(format!("pixel {p} has no ground truth to reveal")))?;
        revealed.push((p, y));
    }
    let mut taken = picks.clone();
    taken.sort_unstable();
    let before = state.unlabeled.len();
    state.unlabeled.retain(|i| taken.binary_search(i).is_err());
    if before - state.unlabeled.len() != picks.len() {
        return Err(Error::Contract(format!(
            "round {round}: selection left the unlabeled set"
        )));
    }
    state.labeled.extend(revealed);

    let idx = state.labeled_indices();
    let x = pool.features().select(ndarray::Axis(0), &idx);
    let y: Vec<usize> = state.labeled.iter().map(|&(_, c)| c as usize).collect();
    let train = TrainConfig {
        seed: round_seed(state.seed, round, TRAINING),
        ..config.train.clone()
    };
    let fit = train_head(x.view(), &y, pool.n_classes(), &train)?;
    let Evaluation {
        pixel_accuracy,
        miou,
        per_class_iou,
    } = evaluate(&fit.params, pool, &eval_indices(pool, config))?;

    state.head = Some(fit.params);
    state.round = round;
    state.selections.push(picks);
    let record = MetricsRecord {
        seed: state.seed,
        round,
        labeled_count: state.labeled.len(),
        pixel_accuracy,
        miou,
        per_class_iou,
        wall_time_s: if config.record_wall_time {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        },
    };
    state.history.push(record.clone());
    Ok(record)
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    config: RoundConfig,
    pool_len: usize,
    state: RoundState,
}

const STATE_FILE: &str = "state.json";
const HEAD_FILE: &str = "head.bin";
pub const METRICS_FILE: &str = "metrics.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

fn save_checkpoint(
    dir: &Path,
    config: &RoundConfig,
    pool: &FeaturePool,
    state: &RoundState,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    if let Some(h) = &state.head {
        let tmp = dir.join(format!("{HEAD_FILE}.tmp"));
        h.save(&tmp)?;
        fs::rename(tmp, dir.join(HEAD_FILE))?;
    }
    let ck = Checkpoint {
        config: config.clone(),
        pool_len: pool.len(),
        state: state.clone(),
    };
    let tmp = dir.join(format!("{STATE_FILE}.tmp"));
    fs::write(&tmp, serde_json::to_vec_pretty(&ck)?)?;
    fs::rename(tmp, dir.join(STATE_FILE))?;
    report::write_metrics_csv(&dir.join(METRICS_FILE), &rows(&state.history))?;
    Ok(())
}

fn load_checkpoint(
    dir: &Path,
    config: &RoundConfig,
    pool: &FeaturePool,
) -> Result<Option<RoundState>> {
    let path = dir.join(STATE_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let ck: Checkpoint = serde_json::from_slice(&fs::read(&path)?)?;
    if ck.config != *config || ck.pool_len != pool.len() {
        return Err(Error::Config(format!(
            "{} was written for a different configuration or pool; use a fresh output directory",
            path.display()
        )));
    }
    let mut state = ck.state;
    if state.round > 0 {
        state.head = Some(HeadParams::load(&dir.join(HEAD_FILE))?);
    }
    if !state.is_partition(pool.len()) {
        return Err(Error::Format(format!(
            "{} holds an inconsistent partition",
            path.display()
        )));
    }
    Ok(Some(state))
}

fn rows(history: &[MetricsRecord]) -> Vec<MetricsRow> {
    history.iter().map(MetricsRow::from).collect()
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub records: Vec<MetricsRecord>,
    pub aggregate: Vec<AggregateRow>,
    pub states: Vec<RoundState>,
}

/// Runs every seed for `config.rounds` rounds.
///
/// With `out`, each seed checkpoints to `out/seed_<s>/` after every round and
/// resumes from there; the combined `metrics.csv` and `aggregate.csv` are
/// written to `out` at the end.
pub fn run_experiment(
    pool: &FeaturePool,
    provider: &FeatureProvider,
    config: &RoundConfig,
    seeds: &[u64],
    out: Option<&Path>,
) -> Result<ExperimentResult> {
    config.validate()?;
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let mut states = Vec::with_capacity(seeds.len());
    for &s in seeds {
        let dir = out.map(|o| seed_dir(o, s));
        let mut state = match &dir {
            Some(d) => {
                load_checkpoint(d, config, pool)?.unwrap_or_else(|| RoundState::new(pool, s))
            }
            None => RoundState::new(pool, s),
        };
        if state.round > 0 {
            log::info!("seed {s}: resuming after round {}", state.round);
        }
        while state.round < config.rounds {
            let rec = run_round(&mut state, pool, provider, config)?;
            log::info!(
                "seed {s} round {}: {} labeled, accuracy {:.4}, mIoU {:.4}",
                rec.round,
                rec.labeled_count,
                rec.pixel_accuracy,
                rec.miou
            );
            if let Some(d) = &dir {
                save_checkpoint(d, config, pool, &state)?;
            }
        }
        states.push(state);
    }
    let records: Vec<MetricsRecord> = states.iter().flat_map(|s| s.history.clone()).collect();
    let all_rows = rows(&records);
    let aggregate = report::aggregate(&all_rows);
    if let Some(o) = out {
        report::write_metrics_csv(&o.join(METRICS_FILE), &all_rows)?;
        report::write_aggregate_csv(&o.join(AGGREGATE_FILE), &aggregate)?;
    }
    Ok(ExperimentResult {
        records,
        aggregate,
        states,
    })
}

/// Per-image representative counts of the sensitivity grid.
pub const SWEEP_PER_IMAGE: [usize; 3] = [20, 50, 100];
/// Global fractions of the sensitivity grid.
pub const SWEEP_GLOBAL_FRACTION: [f64; 3] = [0.25, 0.4, 0.5];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub per_image: usize,
    pub global_fraction: f64,
    pub final_accuracy_mean: f64,
    pub final_accuracy_std: f64,
    pub final_miou_mean: f64,
    pub final_miou_std: f64,
}

/// Runs the full grid of per-image counts and global fractions, one
/// experiment per cell under `out/K<k>_frac<f>/`.
pub fn run_sweep(
    pool: &FeaturePool,
    provider: &FeatureProvider,
    base: &RoundConfig,
    seeds: &[u64],
    out: Option<&Path>,
) -> Result<Vec<SweepRow>> {
    let mut summary = Vec::new();
    for k in SWEEP_PER_IMAGE {
        for frac in SWEEP_GLOBAL_FRACTION {
            let mut cfg = base.clone();
            cfg.stage_one.per_image = k;
            cfg.stage_one.global_fraction = frac;
            let dir = out.map(|o| o.join(format!("K{k}_frac{frac}")));
            let res = run_experiment(pool, provider, &cfg, seeds, dir.as_deref())?;
            let last = res.aggregate.last().expect("at least one round");
            summary.push(SweepRow {
                per_image: k,
                global_fraction: frac,
                final_accuracy_mean: last.pixel_accuracy_mean,
                final_accuracy_std: last.pixel_accuracy_std,
                final_miou_mean: last.miou_mean,
                final_miou_std: last.miou_std,
            });
        }
    }
    if let Some(o) = out {
        report::write_csv(&o.join("sweep.csv"), &summary)?;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_pool::{generate_synthetic, SyntheticTaskSpec};

    fn small_pool() -> FeaturePool {
        let spec = SyntheticTaskSpec {
            n_images: 4,
            image_side: 8,
            n_classes: 3,
            feature_dim: 4,
            ..Default::default()
        };
        generate_synthetic(&spec, 1).unwrap()
    }

    fn quick(method: Method) -> RoundConfig {
        RoundConfig {
            rounds: 3,
            budget: Budget::Pixels(2),
            stage_one: StageOneConfig {
                per_image: 5,
                ..Default::default()
            },
            acquisition: AcquisitionConfig::with_method(method),
            train: TrainConfig {
                max_iterations: 200,
                ..Default::default()
            },
            record_wall_time: false,
            ..Default::default()
        }
    }

    #[test]
    fn budget_resolution() {
        let pool = small_pool();
        assert_eq!(Budget::PerImage(0.1).resolve(&pool), 1);
        assert_eq!(Budget::PerImage(1.0).resolve(&pool), 4);
        assert_eq!(Budget::Pixels(7).resolve(&pool), 7);
    }

    #[test]
    fn schedule_parsing() {
        let s: PhaseSwitch = "switch@10:margin".parse().unwrap();
        assert_eq!(
            s,
            PhaseSwitch {
                after_round: 10,
                method: Method::Margin
            }
        );
        assert_eq!(s.to_string(), "switch@10:margin");
        assert!("switch10:margin".parse::<PhaseSwitch>().is_err());
        assert!("switch@x:margin".parse::<PhaseSwitch>().is_err());
        let cfg = RoundConfig {
            schedule: Some(s),
            ..Default::default()
        };
        assert_eq!(cfg.method_at(10), Method::Edald);
        assert!(cfg.stage1_at(10));
        assert_eq!(cfg.method_at(11), Method::Margin);
        assert!(!cfg.stage1_at(11));
    }

    #[test]
    fn round_grows_labeled_set_by_budget() {
        let pool = small_pool();
        let cfg = quick(Method::Edald);
        let provider = FeatureProvider::gaussian_default(&pool);
        let mut state = RoundState::new(&pool, 3);
        for r in 1..=3 {
            let before: Vec<usize> = state.unlabeled.clone();
            let rec = run_round(&mut state, &pool, &provider, &cfg).unwrap();
            assert_eq!(rec.labeled_count, 2 * r);
            assert!(state.is_partition(pool.len()));
            for p in state.selections.last().unwrap() {
                assert!(before.contains(p));
            }
        }
    }

    #[test]
    fn over_budget_names_the_round() {
        let pool = small_pool();
        let mut cfg = quick(Method::Entropy);
        cfg.budget = Budget::Pixels(50);
        let err = run_round(
            &mut RoundState::new(&pool, 0),
            &pool,
            &FeatureProvider::Deterministic,
            &cfg,
        )
        .unwrap_err();
        assert!(
            matches!(&err, Error::Budget(m) if m.contains("round 1")),
            "{err}"
        );
    }

    #[test]
    fn random_one_stage_is_reproducible() {
        let pool = small_pool();
        let mut cfg = quick(Method::Random);
        cfg.stage1_enabled = false;
        let a = run_experiment(&pool, &FeatureProvider::Deterministic, &cfg, &[5], None).unwrap();
        let b = run_experiment(&pool, &FeatureProvider::Deterministic, &cfg, &[5], None).unwrap();
        assert_eq!(a.states[0].selections, b.states[0].selections);
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn degenerate_funnel_matches_one_stage() {
        let pool = small_pool();
        let mut two = quick(Method::Entropy);
        two.rounds = 2;
        two.budget = Budget::Pixels(1);
        two.stage_one.per_image = 64;
        two.stage_one.global_fraction = 1.0;
        let mut state = RoundState::new(&pool, 0);
        run_round(&mut state, &pool, &FeatureProvider::Deterministic, &two).unwrap();
        let b = state.unlabeled.len();
        let mut full_two = two.clone();
        full_two.budget = Budget::Pixels(b);
        let mut one = full_two.clone();
        one.stage1_enabled = false;
        let mut a = select(&state, &pool, &FeatureProvider::Deterministic, &full_two).unwrap();
        let mut c = select(&state, &pool, &FeatureProvider::Deterministic, &one).unwrap();
        a.sort();
        c.sort();
        assert_eq!(a, c);
        assert_eq!(a, state.unlabeled);
    }

    #[test]
    fn checkpoints_resume_to_the_same_result() {
        let pool = small_pool();
        let cfg = quick(Method::Margin);
        let provider = FeatureProvider::Deterministic;
        let full_dir = tempfile::tempdir().unwrap();
        let full = run_experiment(&pool, &provider, &cfg, &[1, 2], Some(full_dir.path())).unwrap();

        let part_dir = tempfile::tempdir().unwrap();
        let short = RoundConfig {
            rounds: 1,
            ..cfg.clone()
        };
        run_experiment(&pool, &provider, &short, &[1, 2], Some(part_dir.path())).unwrap();
        // A shorter run cannot be resumed under a different configuration...
        assert!(matches!(
            run_experiment(&pool, &provider, &cfg, &[1, 2], Some(part_dir.path())),
            Err(Error::Config(_))
        ));
        // ...but a run interrupted mid-way picks up from its last round.
        let mid_dir = tempfile::tempdir().unwrap();
        let mut state = RoundState::new(&pool, 1);
        run_round(&mut state, &pool, &provider, &cfg).unwrap();
        save_checkpoint(&seed_dir(mid_dir.path(), 1), &cfg, &pool, &state).unwrap();
        let resumed =
            run_experiment(&pool, &provider, &cfg, &[1, 2], Some(mid_dir.path())).unwrap();
        assert_eq!(resumed.records, full.records);
        for f in [METRICS_FILE, AGGREGATE_FILE] {
            assert_eq!(
                fs::read(full_dir.path().join(f)).unwrap(),
                fs::read(mid_dir.path().join(f)).unwrap()
            );
        }
    }

    #[test]
    fn phase_switch_runs_through() {
        let pool = small_pool();
        let mut cfg = quick(Method::Edald);
        cfg.rounds = 4;
        cfg.budget = Budget::Pixels(1);
        cfg.schedule = Some("switch@2:margin".parse().unwrap());
        let res = run_experiment(
            &pool,
            &FeatureProvider::gaussian_default(&pool),
            &cfg,
            &[0],
            None,
        )
        .unwrap();
        assert_eq!(res.records.len(), 4);
        assert_eq!(res.states[0].labeled.len(), 4);
    }
}
