//! Stochastic batch selection: draw frequencies under several temperatures.

use pixel_al::acquisition::{power_sample, top_b};

fn main() -> pixel_al::Result<()> {
    let scores = [0.9, 0.5, 0.3, 0.1, 0.05];
    println!("top-2: {:?}", top_b(&scores, 2)?);
    for beta in [0.0, 1.0, 4.0, 64.0] {
        let mut counts = [0usize; 5];
        let draws = 20_000;
        for seed in 0..draws {
            counts[power_sample(&scores, beta, 1, seed)?[0]] += 1;
        }
        let freq: Vec<String> = counts
            .iter()
            .map(|&c| format!("{:.3}", c as f64 / draws as f64))
            .collect();
        println!("beta {beta:>4}: first-draw frequencies {}", freq.join(" "));
    }
    println!(
        "batch of 3 at beta 1: {:?}",
        power_sample(&scores, 1.0, 3, 11)?
    );
    Ok(())
}
