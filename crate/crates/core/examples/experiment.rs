//! Compares two-stage eDALD with random sampling over a few seeds, writes the
//! learning curves and renders one of them.

use pixel_al::acquisition::{AcquisitionConfig, Method};
use pixel_al::experiment::{run_experiment, RoundConfig, AGGREGATE_FILE};
use pixel_al::feature_pool::{generate_synthetic, FeatureProvider, SyntheticTaskSpec};
use pixel_al::report::{render_svg, CurveMetric};

fn main() -> pixel_al::Result<()> {
    let pool = generate_synthetic(
        &SyntheticTaskSpec {
            n_images: 8,
            image_side: 24,
            ..Default::default()
        },
        0,
    )?;
    let provider = FeatureProvider::gaussian_default(&pool);
    let out = std::env::temp_dir().join("pixel-al-example");
    let seeds = [0, 1, 2];
    for (name, method, two_stage) in [
        ("edald", Method::Edald, true),
        ("random", Method::Random, false),
    ] {
        let config = RoundConfig {
            rounds: 6,
            stage1_enabled: two_stage,
            acquisition: AcquisitionConfig::with_method(method),
            ..Default::default()
        };
        let dir = out.join(name);
        let _ = std::fs::remove_dir_all(&dir);
        let res = run_experiment(&pool, &provider, &config, &seeds, Some(&dir))?;
        println!("{name}:");
        for r in &res.aggregate {
            println!(
                "  round {:>2}  labeled {:>4.1}  accuracy {:.4} +- {:.4}  mIoU {:.4} +- {:.4}",
                r.round,
                r.labeled_count_mean,
                r.pixel_accuracy_mean,
                r.pixel_accuracy_std,
                r.miou_mean,
                r.miou_std
            );
        }
        std::fs::write(
            dir.join("curve.svg"),
            render_svg(&res.aggregate, CurveMetric::Miou, name),
        )?;
        println!("  wrote {}", dir.join(AGGREGATE_FILE).display());
    }
    Ok(())
}
