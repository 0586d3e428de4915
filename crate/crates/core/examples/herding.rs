//! MaxHerding against k-center greedy on a clustered point cloud.

use ndarray::Array2;
use pixel_al::coverage::{coverage_of, kcenter_greedy, maxherding, split_and_herd};
use pixel_al::kernel::median_bandwidth;
use pixel_al::seed::{self, Domain};
use rand::Rng;

fn main() -> pixel_al::Result<()> {
    let mut rng = seed::rng(Domain::Synthetic, &[3]);
    let centers = [[0.0, 0.0], [4.0, 0.0], [0.0, 4.0], [6.0, 6.0]];
    let x = Array2::from_shape_fn((400, 2), |(i, j)| {
        centers[i % 4][j] + rng.random_range(-1.0..1.0)
    });
    let all: Vec<usize> = (0..x.nrows()).collect();
    let sigma = median_bandwidth(x.view(), &all, 1024, 0)?;
    println!("median-heuristic bandwidth {sigma:.3}");

    let h = maxherding(x.view(), &all, &[], 8, sigma)?;
    for (i, (p, c)) in h.selected.iter().zip(&h.coverage).enumerate() {
        println!(
            "step {i}: pick {p:>3} at {:.2?}, coverage {c:.4}",
            x.row(*p).to_vec()
        );
    }

    let kc = kcenter_greedy(x.view(), &all, &[], 8)?;
    let split = split_and_herd(x.view(), &all, 8, 4, sigma, 0)?;
    println!(
        "k-center coverage      {:.4}",
        coverage_of(x.view(), &all, &kc, sigma)?
    );
    println!(
        "split-and-herd (4)     {:.4}",
        coverage_of(x.view(), &all, &split, sigma)?
    );
    println!("maxherding coverage    {:.4}", h.coverage.last().unwrap());
    Ok(())
}
