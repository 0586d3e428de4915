//! Generates a small synthetic segmentation pool, round-trips it through the
//! text feature format and draws a few noisy feature samples.

use pixel_al::feature_pool::{
    generate_synthetic, read_features, FeatureProvider, SyntheticTaskSpec,
};

fn main() -> pixel_al::Result<()> {
    let spec: SyntheticTaskSpec =
        "images=2,side=16,classes=3,dim=4,spread=0.8,geometry=stripes".parse()?;
    let pool = generate_synthetic(&spec, 7)?;
    println!(
        "{} pixels over {} images, {} classes, dim {}",
        pool.len(),
        pool.n_images(),
        pool.n_classes(),
        pool.dim()
    );

    let mut buf = Vec::new();
    pool.write_features(&mut buf)?;
    let back = read_features(buf.as_slice())?;
    assert_eq!(back.features(), pool.features());
    println!("text export: {} bytes, re-import matches", buf.len());

    let provider = FeatureProvider::gaussian_default(&pool);
    let oracle = pool.annotation_oracle();
    for pixel in [0, 100, 300] {
        let draws = provider.sample_features(&pool, pixel, 3, 0)?;
        println!("pixel {pixel} (class {:?})", oracle.annotate(pixel));
        println!("  base  {:.3?}", pool.feature(pixel).to_vec());
        for z in draws {
            println!("  draw  {z:.3?}");
        }
    }
    Ok(())
}
