//! Scores a few pixels under every acquisition method with a freshly trained head.

use ndarray::Array2;
use pixel_al::acquisition::{AcquisitionConfig, Method, Scorer};
use pixel_al::feature_pool::{generate_synthetic, FeatureProvider, SyntheticTaskSpec};
use pixel_al::head::{train_head, TrainConfig};

fn main() -> pixel_al::Result<()> {
    let pool = generate_synthetic(
        &SyntheticTaskSpec {
            n_images: 2,
            image_side: 16,
            ..Default::default()
        },
        1,
    )?;
    let oracle = pool.annotation_oracle();
    let train: Vec<usize> = (0..pool.len()).step_by(97).collect();
    let x = Array2::from_shape_fn((train.len(), pool.dim()), |(i, j)| {
        pool.feature(train[i])[j]
    });
    let y: Vec<usize> = train
        .iter()
        .map(|&i| oracle.annotate(i).unwrap() as usize)
        .collect();
    let head = train_head(x.view(), &y, pool.n_classes(), &TrainConfig::default())?.params;
    let provider = FeatureProvider::gaussian_default(&pool);

    let methods = [
        Method::Entropy,
        Method::Margin,
        Method::Bald,
        Method::Ebald,
        Method::Dald,
        Method::Edald,
    ];
    print!("{:>6}", "pixel");
    for m in methods {
        print!("{:>9}", m.name());
    }
    println!();
    for pixel in [3, 40, 200, 401] {
        print!("{pixel:>6}");
        for m in methods {
            let config = AcquisitionConfig::with_method(m);
            print!(
                "{:>9.4}",
                Scorer::new(&pool, &provider, &head, &config)?.score(pixel)?
            );
        }
        println!();
    }
    Ok(())
}
