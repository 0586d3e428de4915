//! Segmentation metrics and cross-seed aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_pool::FeaturePool;
use crate::head::{argmax, HeadParams};

/// Mean IoU over classes present in the prediction or the ground truth.
///
/// Classes absent from both get `None` in the per-class vector and are left
/// out of the mean.
pub fn miou(
    predictions: &[usize],
    ground_truth: &[usize],
    n_classes: usize,
) -> Result<(f64, Vec<Option<f64>>)> {
    if predictions.len() != ground_truth.len() {
        return Err(Error::Contract(format!(
            "{} predictions but {} ground-truth labels",
            predictions.len(),
            ground_truth.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Contract("mIoU of an empty label vector".into()));
    }
    let mut tp = vec![0u64; n_classes];
    let mut fp = vec![0u64; n_classes];
    let mut fn_ = vec![0u64; n_classes];
    for (&p, &g) in predictions.iter().zip(ground_truth) {
        if p >= n_classes || g >= n_classes {
            return Err(Error::Label(format!(
                "class id outside {n_classes} classes"
            )));
        }
        if p == g {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[g] += 1;
        }
    }
    let per_class: Vec<Option<f64>> = (0..n_classes)
        .map(|c| {
            let denom = tp[c] + fp[c] + fn_[c];
            (denom > 0).then(|| tp[c] as f64 / denom as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    Ok((mean, per_class))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub pixel_accuracy: f64,
    pub miou: f64,
    pub per_class_iou: Vec<Option<f64>>,
}

/// Scores the head's inference-mode predictions against ground truth on
/// `eval_indices`.
pub fn evaluate(
    head: &HeadParams,
    pool: &FeaturePool,
    eval_indices: &[usize],
) -> Result<Evaluation> {
    if eval_indices.is_empty() {
        return Err(Error::Contract("empty evaluation set".into()));
    }
    let oracle = pool.annotation_oracle();
    let mut preds = Vec::with_capacity(eval_indices.len());
    let mut truth = Vec::with_capacity(eval_indices.len());
    for &i in eval_indices {
        if i >= pool.len() {
            return Err(Error::Contract(format!(
                "evaluation index {i} outside pool"
            )));
        }
        let y = oracle
            .annotate(i)
            .ok_or_else(|| Error::Label(format!("pixel {i} has no ground truth")))?;
        let x = pool.feature(i).to_vec();
        preds.push(argmax(&head.predict_one(&x)));
        truth.push(y as usize);
    }
    let correct = preds.iter().zip(&truth).filter(|(p, t)| p == t).count();
    let (miou, per_class_iou) = miou(&preds, &truth, pool.n_classes())?;
    Ok(Evaluation {
        pixel_accuracy: correct as f64 / preds.len() as f64,
        miou,
        per_class_iou,
    })
}

/// Mean and sample standard deviation (`n - 1`); the deviation of one value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}
