//! Categorical cross-entropy over dense per-pixel logits.

use std::sync::Arc;

use super::tape::{finish, Step};
use super::tensor::Tensor;
use crate::{Error, Result};

/// Mean over non-ignored pixels of -log softmax(logits)[label].
///
/// `logits` is K x H x W; `labels` holds H*W class indices in row-major
/// order, each in [0, K) or equal to `ignore_index`.
pub fn cross_entropy(logits: &Tensor, labels: &[i64], ignore_index: i64) -> Result<Tensor> {
    let &[classes, h, w] = logits.shape() else {
        return Err(Error::Shape {
            op: "cross_entropy",
            shape: logits.shape().to_vec(),
            msg: "expected K x H x W logits".into(),
        });
    };
    let plane = h * w;
    if labels.len() != plane {
        return Err(Error::Dimension {
            op: "cross_entropy",
            lhs: vec![classes, h, w],
            rhs: vec![labels.len()],
        });
    }

    let z = logits.data();
    let mut probs = vec![0.0; classes * plane];
    let mut loss_sum = 0.0;
    let mut n_valid = 0usize;
    for p in 0..plane {
        let label = labels[p];
        // Softmax is saved for every pixel; ignored pixels contribute no loss
        // and no gradient but keep the buffer layout uniform.
        let mut max = f64::NEG_INFINITY;
        for k in 0..classes {
            max = max.max(z[k * plane + p]);
        }
        let mut denom = 0.0;
        for k in 0..classes {
            let e = (z[k * plane + p] - max).exp();
            probs[k * plane + p] = e;
            denom += e;
        }
        for k in 0..classes {
            probs[k * plane + p] /= denom;
        }
        if label == ignore_index {
            continue;
        }
        if label < 0 || label as usize >= classes {
            return Err(Error::Label { label, classes });
        }
        let lse = max + denom.ln();
        loss_sum += lse - z[label as usize * plane + p];
        n_valid += 1;
    }
    if n_valid == 0 {
        return Err(Error::DegenerateBatch(
            "cross_entropy: every pixel carries the ignore index",
        ));
    }

    let step = Step::CrossEntropy {
        probs: probs.into(),
        labels: labels.to_vec().into(),
        classes,
        plane,
        n_valid,
        ignore_index,
    };
    finish(
        "cross_entropy",
        &[logits],
        step,
        vec![],
        vec![loss_sum / n_valid as f64],
    )
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn cross_entropy_backward(
    probs: &Arc<[f64]>,
    labels: &Arc<[i64]>,
    classes: usize,
    plane: usize,
    n_valid: usize,
    ignore_index: i64,
    grad: f64,
) -> Vec<f64> {
    let scale = grad / n_valid as f64;
    let mut out = vec![0.0; classes * plane];
    for (p, &label) in labels.iter().enumerate() {
        if label == ignore_index {
            continue;
        }
        for k in 0..classes {
            let indicator = (k as i64 == label) as u8 as f64;
            out[k * plane + p] = scale * (probs[k * plane + p] - indicator);
        }
    }
    out
}
