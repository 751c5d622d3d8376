//! Evaluation metrics and representation analysis: confusion matrices and
//! mIoU, plus the layer-wise texture/shape dimensionality estimate built on
//! a mutual-information lower bound over style-transfer image pairs.

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::nets::{decode, encode, Decoder, Encoder, NUM_STAGES};
use crate::numeric;
use crate::stylize::{extract_stats, wct_transfer, DEFAULT_EPSILON};
use crate::synthdata::{generate_sample, generate_style_image, DomainSpec};
use crate::{Error, Result};

/// K x K counts; rows are ground truth, columns are predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> ConfusionMatrix {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn record(&mut self, truth: usize, prediction: usize) {
        self.counts[truth * self.num_classes + prediction] += 1;
    }

    /// Accumulate pixel-wise counts, skipping `ignore_index` ground truth.
    pub fn accumulate(&mut self, truth: &[i64], prediction: &[i64], ignore_index: i64) -> Result<()> {
        if truth.len() != prediction.len() {
            return Err(Error::Dimension {
                op: "confusion",
                lhs: vec![truth.len()],
                rhs: vec![prediction.len()],
            });
        }
        let k = self.num_classes as i64;
        for (&t, &p) in truth.iter().zip(prediction) {
            if t == ignore_index {
                continue;
            }
            if t < 0 || t >= k || p < 0 || p >= k {
                return Err(Error::Label {
                    label: if t < 0 || t >= k { t } else { p },
                    classes: self.num_classes,
                });
            }
            self.record(t as usize, p as usize);
        }
        Ok(())
    }

    pub fn get(&self, truth: usize, prediction: usize) -> u64 {
        self.counts[truth * self.num_classes + prediction]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        let header: Vec<String> = (0..self.num_classes).map(|c| format!("pred_{c}")).collect();
        writeln!(w, "truth,{}", header.join(","))?;
        for t in 0..self.num_classes {
            let row: Vec<String> = (0..self.num_classes)
                .map(|p| self.get(t, p).to_string())
                .collect();
            writeln!(w, "{t},{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Per-class IoU (None when a class has zero union) and their mean.
#[derive(Clone, Debug)]
pub struct IouReport {
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

/// IoU_k = TP / (TP + FP + FN); classes absent from both truth and
/// prediction are excluded from the mean.
pub fn miou(confusion: &ConfusionMatrix) -> Result<IouReport> {
    if confusion.total() == 0 {
        return Err(Error::Metric("miou over an empty confusion matrix"));
    }
    let k = confusion.num_classes;
    let mut per_class = Vec::with_capacity(k);
    let mut sum = 0.0;
    let mut counted = 0usize;
    for c in 0..k {
        let tp = confusion.get(c, c);
        let row: u64 = (0..k).map(|p| confusion.get(c, p)).sum();
        let col: u64 = (0..k).map(|t| confusion.get(t, c)).sum();
        let union = row + col - tp;
        if union == 0 {
            per_class.push(None);
        } else {
            let iou = tp as f64 / union as f64;
            per_class.push(Some(iou));
            sum += iou;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::Metric("no class has a nonzero union"));
    }
    Ok(IouReport {
        per_class,
        mean: sum / counted as f64,
    })
}

/// Mutual-information lower bound -0.5 * log(1 - corr) with Pearson
/// correlation, clamped so the argument stays at least 1e-8.
pub fn mi_lower_bound(z_a: &[f64], z_b: &[f64]) -> Result<f64> {
    if z_a.len() != z_b.len() || z_a.len() < 2 {
        return Err(Error::Dimension {
            op: "mi_lower_bound",
            lhs: vec![z_a.len()],
            rhs: vec![z_b.len()],
        });
    }
    let n = z_a.len() as f64;
    let mean_a = z_a.iter().sum::<f64>() / n;
    let mean_b = z_b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&a, &b) in z_a.iter().zip(z_b) {
        let da = a - mean_a;
        let db = b - mean_b;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(Error::DegenerateInput("mi_lower_bound: zero variance input"));
    }
    let corr = cov / (var_a.sqrt() * var_b.sqrt());
    let arg = (1.0 - corr).max(1e-8);
    Ok(-0.5 * arg.ln())
}

/// One pair set: all four stylizations of two contents x two styles. The
/// shared image anchors both the texture pair (same style, other content)
/// and the shape pair (same content, other style); the doubly-different
/// image feeds the baseline score.
#[derive(Clone)]
pub struct PairImages {
    pub shared: Tensor,
    pub texture_partner: Tensor,
    pub shape_partner: Tensor,
    pub unrelated: Tensor,
}

pub struct PairSet {
    pub sets: Vec<PairImages>,
}

/// Build pair sets with the style transfer module: texture pairs share one
/// style across two contents, shape pairs share one content across two
/// styles.
pub fn build_pair_sets(domain: &DomainSpec, count: usize, seed: u64) -> Result<PairSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(numeric::derive_seed(seed, "pair-sets"));
    let mut sets = Vec::with_capacity(count);
    for i in 0..count {
        let c1 = generate_sample(domain, numeric::derive_seed(seed, &format!("pair-c1-{i}")))?;
        let c2 = generate_sample(domain, numeric::derive_seed(seed, &format!("pair-c2-{i}")))?;
        let s1 = extract_stats(&generate_style_image(rng.gen()).image)?;
        let s2 = extract_stats(&generate_style_image(rng.gen()).image)?;
        sets.push(PairImages {
            shared: wct_transfer(&c1.image, &s1, DEFAULT_EPSILON)?,
            texture_partner: wct_transfer(&c2.image, &s1, DEFAULT_EPSILON)?,
            shape_partner: wct_transfer(&c1.image, &s2, DEFAULT_EPSILON)?,
            unrelated: wct_transfer(&c2.image, &s2, DEFAULT_EPSILON)?,
        });
    }
    Ok(PairSet { sets })
}

/// Per-layer semantic-concept percentages.
#[derive(Clone, Debug)]
pub struct LayerDimensionality {
    pub layer: usize,
    pub texture_score: f64,
    pub shape_score: f64,
    pub baseline_score: f64,
    pub texture_pct: f64,
    pub shape_pct: f64,
    pub residual_pct: f64,
}

const MAX_FEATURE_COORDS: usize = 4096;

fn subsample_indices(len: usize, seed: u64) -> Vec<usize> {
    if len <= MAX_FEATURE_COORDS {
        return (0..len).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(numeric::derive_seed(seed, "subsample"));
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut rng);
    idx.truncate(MAX_FEATURE_COORDS);
    idx.sort_unstable();
    idx
}

/// Estimate per-layer texture/shape/residual percentages of an encoder's
/// latent representation: average the MI lower bound over texture pairs,
/// shape pairs, and unrelated pairs, then take a softmax over the three
/// scores.
pub fn dimensionality(encoder: &Encoder, pairs: &PairSet) -> Result<Vec<LayerDimensionality>> {
    if pairs.sets.is_empty() {
        return Err(Error::DegenerateInput("dimensionality: empty pair set"));
    }
    let mut texture_sum = vec![0.0; NUM_STAGES];
    let mut shape_sum = vec![0.0; NUM_STAGES];
    let mut baseline_sum = vec![0.0; NUM_STAGES];

    for set in &pairs.sets {
        let shared = encode(encoder, &set.shared)?;
        let texture = encode(encoder, &set.texture_partner)?;
        let shape = encode(encoder, &set.shape_partner)?;
        let unrelated = encode(encoder, &set.unrelated)?;
        for l in 0..NUM_STAGES {
            let idx = subsample_indices(shared.layers[l].len(), l as u64);
            let pick = |t: &Tensor| -> Vec<f64> {
                idx.iter().map(|&i| t.data()[i]).collect()
            };
            let z_shared = pick(&shared.layers[l]);
            texture_sum[l] += mi_lower_bound(&z_shared, &pick(&texture.layers[l]))?;
            shape_sum[l] += mi_lower_bound(&z_shared, &pick(&shape.layers[l]))?;
            baseline_sum[l] += mi_lower_bound(&z_shared, &pick(&unrelated.layers[l]))?;
        }
    }

    let n = pairs.sets.len() as f64;
    Ok((0..NUM_STAGES)
        .map(|l| {
            let scores = [texture_sum[l] / n, shape_sum[l] / n, baseline_sum[l] / n];
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let denom: f64 = exps.iter().sum();
            LayerDimensionality {
                layer: l,
                texture_score: scores[0],
                shape_score: scores[1],
                baseline_score: scores[2],
                texture_pct: 100.0 * exps[0] / denom,
                shape_pct: 100.0 * exps[1] / denom,
                residual_pct: 100.0 * exps[2] / denom,
            }
        })
        .collect())
}

/// Evaluation of one model on one domain over a seeded sample set.
pub struct EvalResult {
    pub confusion: ConfusionMatrix,
    pub report: IouReport,
}

/// Class predictions for one image: per-pixel argmax over logits.
pub fn predict(encoder: &Encoder, decoder: &Decoder, image: &Tensor) -> Result<Vec<i64>> {
    let logits = decode(decoder, &encode(encoder, image)?)?;
    let &[k, h, w] = logits.shape() else {
        unreachable!("decode returns K x H x W");
    };
    let plane = h * w;
    let data = logits.data();
    let mut out = vec![0i64; plane];
    for p in 0..plane {
        let mut best = 0usize;
        let mut best_v = data[p];
        for c in 1..k {
            let v = data[c * plane + p];
            if v > best_v {
                best_v = v;
                best = c;
            }
        }
        out[p] = best as i64;
    }
    Ok(out)
}

/// Whole-image inference over `n_samples` deterministic samples of a domain.
/// `sample_offset` selects the (held-out) index range.
pub fn evaluate(
    encoder: &Encoder,
    decoder: &Decoder,
    domain: &DomainSpec,
    n_samples: usize,
    sample_offset: u64,
) -> Result<EvalResult> {
    if decoder.config.num_classes != domain.num_classes() {
        return Err(Error::config(format!(
            "model predicts {} classes but domain {} has {}",
            decoder.config.num_classes,
            domain.name,
            domain.num_classes()
        )));
    }
    let mut confusion = ConfusionMatrix::new(domain.num_classes());
    for i in 0..n_samples {
        let sample = generate_sample(domain, sample_offset + i as u64)?;
        let pred = predict(encoder, decoder, &sample.image)?;
        confusion.accumulate(&sample.label.data, &pred, -1)?;
    }
    let report = miou(&confusion)?;
    Ok(EvalResult { confusion, report })
}
