//! Stage one on its own: per-image herding, then a global herding pass over
//! the merged picks, conditioned on what is already labeled.

use pixel_al::coverage::{local_then_global, StageOneConfig};
use pixel_al::feature_pool::{generate_synthetic, SyntheticTaskSpec};

fn main() -> pixel_al::Result<()> {
    let spec = SyntheticTaskSpec {
        n_images: 3,
        image_side: 24,
        ..Default::default()
    };
    let pool = generate_synthetic(&spec, 0)?;
    let config = StageOneConfig {
        per_image: 20,
        global_fraction: 0.5,
        ..Default::default()
    };
    let labeled = [pool.image_range(1).start + 5];
    let c = local_then_global(&pool, &labeled, &config, 0)?;
    println!(
        "merged {} local picks into {} candidates",
        c.merged.len(),
        c.candidates.len()
    );
    for (img, s) in c.local_sigmas.iter().enumerate() {
        println!("image {img}: bandwidth {s:.3?}");
    }
    println!("global bandwidth {:.3?}", c.global_sigma);
    let oracle = pool.annotation_oracle();
    let mut per_class = vec![0usize; pool.n_classes()];
    for &p in &c.candidates {
        if let Some(y) = oracle.annotate(p) {
            per_class[y as usize] += 1;
        }
    }
    println!("candidate classes {per_class:?}");
    Ok(())
}
