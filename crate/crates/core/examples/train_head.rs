//! Trains the classifier head on a handful of labeled pixels, checks the
//! analytic gradient and round-trips a checkpoint.

use ndarray::Array2;
use pixel_al::feature_pool::{generate_synthetic, SyntheticTaskSpec};
use pixel_al::head::{train_head, HeadParams, TrainConfig, GROUP_NAMES};
use pixel_al::metrics::evaluate;
use pixel_al::oracle::{finite_difference_gradients, gradient_group_error};

fn main() -> pixel_al::Result<()> {
    let pool = generate_synthetic(&SyntheticTaskSpec::default(), 2)?;
    let oracle = pool.annotation_oracle();
    let picked: Vec<usize> = (0..pool.len()).step_by(1021).collect();
    let x = Array2::from_shape_fn((picked.len(), pool.dim()), |(i, j)| {
        pool.feature(picked[i])[j]
    });
    let y: Vec<usize> = picked
        .iter()
        .map(|&i| oracle.annotate(i).unwrap() as usize)
        .collect();

    let small = HeadParams::init(pool.dim(), 6, pool.n_classes(), 0);
    let (_, grads) = small.loss_and_grad(x.view(), &y)?;
    let numeric = finite_difference_gradients(&small, x.view(), &y, 1e-5);
    for ((name, a), n) in GROUP_NAMES.iter().zip(grads.groups()).zip(&numeric) {
        let e = gradient_group_error(a, n);
        println!(
            "grad {name:<9} |a| {:.2e}  |a - fd| {:.2e}  {}",
            e.analytic_norm,
            e.diff_norm,
            if e.passes(1e-4) { "ok" } else { "MISMATCH" }
        );
    }

    let out = train_head(x.view(), &y, pool.n_classes(), &TrainConfig::default())?;
    println!(
        "{} labeled pixels: loss {:.4} -> {:.4} after {} iterations, labeled accuracy {:.3}",
        picked.len(),
        out.initial_loss,
        out.loss,
        out.iterations,
        out.accuracy
    );
    let eval = evaluate(&out.params, &pool, &pool.annotated_indices())?;
    println!(
        "pool accuracy {:.4}, mIoU {:.4}",
        eval.pixel_accuracy, eval.miou
    );

    let mut buf = Vec::new();
    out.params.write_checkpoint(&mut buf)?;
    assert_eq!(HeadParams::read_checkpoint(buf.as_slice())?, out.params);
    println!("checkpoint: {} bytes", buf.len());
    Ok(())
}
