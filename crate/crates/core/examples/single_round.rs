//! Steps through a few rounds by hand and shows what each one picked.

use pixel_al::experiment::{run_round, Budget, RoundConfig, RoundState};
use pixel_al::feature_pool::{generate_synthetic, FeatureProvider, SyntheticTaskSpec};

fn main() -> pixel_al::Result<()> {
    let pool = generate_synthetic(
        &SyntheticTaskSpec {
            n_images: 4,
            image_side: 24,
            ..Default::default()
        },
        0,
    )?;
    let provider = FeatureProvider::gaussian_default(&pool);
    let config = RoundConfig {
        rounds: 4,
        budget: Budget::Pixels(2),
        record_wall_time: false,
        ..Default::default()
    };
    let mut state = RoundState::new(&pool, 0);
    for _ in 0..config.rounds {
        let rec = run_round(&mut state, &pool, &provider, &config)?;
        let picks = state.selections.last().unwrap();
        let refs: Vec<String> = picks
            .iter()
            .map(|&p| {
                let r = pool.pixel(p);
                format!("img{}({},{})", r.image_id, r.row, r.col)
            })
            .collect();
        println!(
            "round {} [{}]: picked {} -> {} labeled, accuracy {:.4}, mIoU {:.4}",
            rec.round,
            config.method_at(rec.round).name(),
            refs.join(" "),
            rec.labeled_count,
            rec.pixel_accuracy,
            rec.miou
        );
    }
    assert!(state.is_partition(pool.len()));
    Ok(())
}
