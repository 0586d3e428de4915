use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pixel_al::acquisition::{AcquisitionConfig, Method};
use pixel_al::config::expand_args;
use pixel_al::coverage::{DiversitySelector, StageOneConfig};
use pixel_al::experiment::{run_experiment, run_sweep, Budget, PhaseSwitch, RoundConfig};
use pixel_al::feature_pool::{
    generate_synthetic, import_features, FeaturePool, FeatureProvider, ReplaySamples,
    SyntheticTaskSpec,
};
use pixel_al::head::TrainConfig;
use pixel_al::kernel::KernelConfig;
use pixel_al::oracle::run_oracle_suite;
use pixel_al::report::{aggregate, read_metrics_csv, render_svg, write_aggregate_csv, CurveMetric};
use pixel_al::{Error, Result};

#[derive(Parser)]
#[command(
    name = "pixel-al",
    version,
    about = "Low-budget pixel active learning runner"
)]
#[command(args_override_self = true)]
struct Cli {
    /// Flat key = value file of flags; command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment over one or more seeds.
    Run(RunArgs),
    /// Run the per-image count by global fraction grid.
    Sweep(RunArgs),
    /// Aggregate a metrics CSV per round and optionally plot it.
    ExportCurve(ExportArgs),
    /// Check the fast paths against brute-force references.
    OracleCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderKind {
    Deterministic,
    Gaussian,
    Replay,
}

#[derive(Clone, Copy, ValueEnum)]
enum SelectorKind {
    Herding,
    Kcenter,
}

#[derive(Args)]
struct RunArgs {
    /// Feature file to import.
    #[arg(long, conflicts_with = "synthetic")]
    pool: Option<PathBuf>,
    /// Synthetic task, e.g. images=4,side=64,classes=4,dim=8,spread=1.0,geometry=voronoi
    #[arg(long)]
    synthetic: Option<String>,
    /// Seed for synthetic task generation.
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    #[arg(long, value_enum, default_value = "gaussian")]
    provider: ProviderKind,
    /// Gaussian noise scale; defaults to 0.1 x the median feature norm.
    #[arg(long)]
    eta: Option<f64>,
    /// Samples file for the replay provider.
    #[arg(long)]
    samples: Option<PathBuf>,
    #[arg(long, default_value = "edald")]
    method: String,
    /// Skip candidate selection and score every unlabeled pixel.
    #[arg(long)]
    one_stage: bool,
    #[arg(long, value_enum, default_value = "herding")]
    selector: SelectorKind,
    #[arg(long, default_value_t = 10)]
    rounds: usize,
    /// Pixels per round.
    #[arg(long, conflicts_with = "budget_frac")]
    budget: Option<usize>,
    /// Pixels per round as a fraction of the number of images.
    #[arg(long, default_value_t = 0.1)]
    budget_frac: f64,
    /// Representatives per image.
    #[arg(long = "K", default_value_t = 50)]
    k: usize,
    #[arg(long, default_value_t = 0.5)]
    global_frac: f64,
    /// Fixed kernel bandwidth instead of the median heuristic.
    #[arg(long)]
    sigma: Option<f64>,
    /// Do not condition candidate selection on labeled pixels.
    #[arg(long)]
    no_condition: bool,
    #[arg(long, default_value_t = 5)]
    mc_samples: usize,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    #[arg(long, default_value_t = 5000)]
    max_iterations: usize,
    #[arg(long, default_value_t = 128)]
    hidden: usize,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[arg(long)]
    out: PathBuf,
    /// e.g. switch@10:margin
    #[arg(long)]
    schedule: Option<String>,
    /// Write 0 in the wall-time column so reruns are byte-identical.
    #[arg(long)]
    no_wall_time: bool,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Also render an SVG learning curve here.
    #[arg(long)]
    plot: Option<PathBuf>,
    #[arg(long, default_value = "miou")]
    metric: String,
}

fn load_pool(a: &RunArgs) -> Result<FeaturePool> {
    match (&a.pool, &a.synthetic) {
        (Some(p), _) => import_features(p),
        (None, spec) => {
            let spec: SyntheticTaskSpec = match spec {
                Some(s) => s.parse()?,
                None => SyntheticTaskSpec::default(),
            };
            generate_synthetic(&spec, a.data_seed)
        }
    }
}

fn provider(a: &RunArgs, pool: &FeaturePool) -> Result<FeatureProvider> {
    match a.provider {
        ProviderKind::Deterministic => Ok(FeatureProvider::Deterministic),
        ProviderKind::Gaussian => match a.eta {
            Some(eta) => FeatureProvider::gaussian(eta),
            None => Ok(FeatureProvider::gaussian_default(pool)),
        },
        ProviderKind::Replay => {
            let path = a
                .samples
                .as_deref()
                .ok_or_else(|| Error::Config("the replay provider needs --samples".into()))?;
            Ok(FeatureProvider::Replay(ReplaySamples::load(
                path,
                pool.dim(),
            )?))
        }
    }
}

fn round_config(a: &RunArgs) -> Result<RoundConfig> {
    let cfg = RoundConfig {
        rounds: a.rounds,
        budget: match a.budget {
            Some(b) => Budget::Pixels(b),
            None => Budget::PerImage(a.budget_frac),
        },
        stage_one: StageOneConfig {
            per_image: a.k,
            global_fraction: a.global_frac,
            kernel: a
                .sigma
                .map_or_else(KernelConfig::default, KernelConfig::fixed),
            condition_on_labeled: !a.no_condition,
            selector: match a.selector {
                SelectorKind::Herding => DiversitySelector::MaxHerding,
                SelectorKind::Kcenter => DiversitySelector::KCenter,
            },
        },
        stage1_enabled: !a.one_stage,
        acquisition: AcquisitionConfig {
            method: a.method.parse::<Method>()?,
            mc_samples: a.mc_samples,
            power_beta: a.beta,
            dropout_rate: a.dropout,
            ..Default::default()
        },
        train: TrainConfig {
            max_iterations: a.max_iterations,
            hidden: a.hidden,
            ..Default::default()
        },
        schedule: a
            .schedule
            .as_deref()
            .map(str::parse::<PhaseSwitch>)
            .transpose()?,
        record_wall_time: !a.no_wall_time,
        ..Default::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn run(a: &RunArgs, sweep: bool) -> Result<()> {
    let cfg = round_config(a)?;
    let pool = load_pool(a)?;
    let provider = provider(a, &pool)?;
    std::fs::create_dir_all(&a.out)?;
    if sweep {
        for row in run_sweep(&pool, &provider, &cfg, &a.seeds, Some(&a.out))? {
            println!(
                "K={:<3} frac={:<4} final mIoU {:.4} +- {:.4}  accuracy {:.4} +- {:.4}",
                row.per_image,
                row.global_fraction,
                row.final_miou_mean,
                row.final_miou_std,
                row.final_accuracy_mean,
                row.final_accuracy_std
            );
        }
    } else {
        let res = run_experiment(&pool, &provider, &cfg, &a.seeds, Some(&a.out))?;
        for r in &res.aggregate {
            println!(
                "round {:>2}: mIoU {:.4} +- {:.4}  accuracy {:.4} +- {:.4}",
                r.round, r.miou_mean, r.miou_std, r.pixel_accuracy_mean, r.pixel_accuracy_std
            );
        }
    }
    Ok(())
}

fn export(a: &ExportArgs) -> Result<()> {
    let metric: CurveMetric = a.metric.parse()?;
    let agg = aggregate(&read_metrics_csv(&a.input)?);
    write_aggregate_csv(&a.output, &agg)?;
    if let Some(plot) = &a.plot {
        let title = a
            .input
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or("learning curve");
        std::fs::write(plot, render_svg(&agg, metric, title))?;
    }
    Ok(())
}

fn oracle_check(seed: u64) -> Result<bool> {
    let reports = run_oracle_suite(seed);
    for r in &reports {
        println!(
            "{} {:<40} {:>6} cases {:>4} failures {:>7.2}s",
            if r.passed() { "PASS" } else { "FAIL" },
            r.name,
            r.cases,
            r.failures,
            r.seconds
        );
    }
    Ok(reports.iter().all(|r| r.passed()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = match expand_args(std::env::args().collect(), "--config") {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let cli = Cli::parse_from(args);
    let outcome = match &cli.command {
        Command::Run(a) => run(a, false).map(|_| true),
        Command::Sweep(a) => run(a, true).map(|_| true),
        Command::ExportCurve(a) => export(a).map(|_| true),
        Command::OracleCheck { seed } => oracle_check(*seed),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
