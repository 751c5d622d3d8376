//! Texture descriptors and losses.
//!
//! The texture extraction operator turns a C x H x W feature map into its
//! channel Gram matrix G[i][j] = F_i . F_j / (C*H*W), where F_i is channel
//! i's flattened activations. Random Style Masking thresholds the difference
//! between stylized-image and original-image Grams to select the entries
//! attributable to the injected random style. The two texture losses compare
//! Gram matrices in the Frobenius norm with per-layer weights.

use std::io::Write;

use crate::autodiff::{ops, Tensor};
use crate::nets::FeatureStack;
use crate::{Error, Result};

/// Normalized channel Gram matrix of one feature layer.
#[derive(Clone)]
pub struct GramMatrix {
    /// C x C values, already divided by C*H*W.
    pub values: Tensor,
    /// Zero-based encoder layer index this Gram was taken from.
    pub layer: usize,
    /// The divisor that was applied (C*H*W).
    pub normalizer: f64,
}

/// Boolean RSM mask over Gram entries, stored as 0/1 values so it can be
/// multiplied elementwise into a loss term. Masks are constants: no gradient
/// flows through the thresholding that produced them.
#[derive(Clone)]
pub struct Mask {
    pub values: Tensor,
    pub tau: f64,
}

impl Mask {
    /// All-ones mask, the no-masking arm.
    pub fn ones(side: usize, tau: f64) -> Mask {
        Mask {
            values: Tensor::full(&[side, side], 1.0).expect("finite"),
            tau,
        }
    }

    /// Fraction of selected entries; a training diagnostic.
    pub fn occupancy(&self) -> f64 {
        let n = self.values.len();
        if n == 0 {
            return 0.0;
        }
        self.values.data().iter().sum::<f64>() / n as f64
    }
}

/// Texture extraction operator: the normalized Gram matrix of a feature map.
/// Differentiable with respect to the features.
pub fn gram(features: &Tensor, layer: usize) -> Result<GramMatrix> {
    let &[c, h, w] = features.shape() else {
        return Err(Error::Shape {
            op: "gram",
            shape: features.shape().to_vec(),
            msg: "expected a C x H x W feature map".into(),
        });
    };
    let flat = ops::reshape(features, &[c, h * w])?;
    let unnormalized = ops::matmul(&flat, &ops::transpose(&flat)?)?;
    let normalizer = (c * h * w) as f64;
    Ok(GramMatrix {
        values: ops::scalar_mul(&unnormalized, 1.0 / normalizer)?,
        layer,
        normalizer,
    })
}

/// Gram matrices for every layer of a feature stack.
pub fn gram_stack(stack: &FeatureStack) -> Result<Vec<GramMatrix>> {
    stack
        .layers
        .iter()
        .enumerate()
        .map(|(l, f)| gram(f, l))
        .collect()
}

/// Random Style Masking: select entries where the stylized-minus-original
/// Gram difference strictly exceeds tau. Inputs are read as constants.
pub fn rsm_mask(gram_sr: &GramMatrix, gram_s: &GramMatrix, tau: f64) -> Result<Mask> {
    if gram_sr.values.shape() != gram_s.values.shape() {
        return Err(Error::Dimension {
            op: "rsm_mask",
            lhs: gram_sr.values.shape().to_vec(),
            rhs: gram_s.values.shape().to_vec(),
        });
    }
    let data: Vec<f64> = gram_sr
        .values
        .data()
        .iter()
        .zip(gram_s.values.data())
        .map(|(sr, s)| if sr - s > tau { 1.0 } else { 0.0 })
        .collect();
    Ok(Mask {
        values: Tensor::from_vec(gram_sr.values.shape().to_vec(), data)?,
        tau,
    })
}

fn check_layer_counts(op: &'static str, a: usize, b: usize, weights: usize) -> Result<()> {
    if a != b || a != weights {
        return Err(Error::contract(format!(
            "{op}: got {a} and {b} Gram layers with {weights} weights"
        )));
    }
    Ok(())
}

/// Texture regularization: sum over layers of u_l * ||G_ref - G_task||_F.
/// The normalization by C*H*W already lives inside the Grams. Reference
/// Grams come from the frozen encoder and are detached; gradient flows only
/// into the task Grams.
pub fn texture_reg_loss(
    grams_ref: &[GramMatrix],
    grams_task: &[GramMatrix],
    u: &[f64],
) -> Result<Tensor> {
    check_layer_counts("texture_reg_loss", grams_ref.len(), grams_task.len(), u.len())?;
    let mut total = Tensor::scalar(0.0)?;
    for ((gr, gt), &weight) in grams_ref.iter().zip(grams_task).zip(u) {
        let diff = ops::sub(&gr.values.detach(), &gt.values)?;
        let term = ops::scalar_mul(&ops::frobenius_norm(&diff)?, weight)?;
        total = ops::add(&total, &term)?;
    }
    Ok(total)
}

/// Texture generalization: sum over layers of
/// v_l * ||(G_style - G_stylized) (x) M||_F with constant masks. Gradient
/// flows into both Gram arguments.
pub fn texture_gen_loss(
    grams_style: &[GramMatrix],
    grams_stylized: &[GramMatrix],
    masks: &[Mask],
    v: &[f64],
) -> Result<Tensor> {
    check_layer_counts(
        "texture_gen_loss",
        grams_style.len(),
        grams_stylized.len(),
        v.len(),
    )?;
    if masks.len() != grams_style.len() {
        return Err(Error::contract(format!(
            "texture_gen_loss: {} masks for {} layers",
            masks.len(),
            grams_style.len()
        )));
    }
    let mut total = Tensor::scalar(0.0)?;
    for (((gr, gsr), mask), &weight) in grams_style
        .iter()
        .zip(grams_stylized)
        .zip(masks)
        .zip(v)
    {
        if gr.values.shape() != gsr.values.shape() {
            return Err(Error::Dimension {
                op: "texture_gen_loss",
                lhs: gr.values.shape().to_vec(),
                rhs: gsr.values.shape().to_vec(),
            });
        }
        let diff = ops::sub(&gr.values, &gsr.values)?;
        let masked = ops::mul(&diff, &mask.values.detach())?;
        let term = ops::scalar_mul(&ops::frobenius_norm(&masked)?, weight)?;
        total = ops::add(&total, &term)?;
    }
    Ok(total)
}

/// Ablation arm that skips the texture extraction operator: direct feature
/// consistency, sum over layers of w_l * ||F_a - F_b||_F / (C*H*W).
pub fn raw_feature_consistency(
    features_a: &FeatureStack,
    features_b: &FeatureStack,
    weights: &[f64],
) -> Result<Tensor> {
    check_layer_counts(
        "raw_feature_consistency",
        features_a.len(),
        features_b.len(),
        weights.len(),
    )?;
    let mut total = Tensor::scalar(0.0)?;
    for ((fa, fb), &weight) in features_a.layers.iter().zip(&features_b.layers).zip(weights) {
        if fa.shape() != fb.shape() {
            return Err(Error::Dimension {
                op: "raw_feature_consistency",
                lhs: fa.shape().to_vec(),
                rhs: fb.shape().to_vec(),
            });
        }
        let n: usize = fa.shape().iter().product();
        let diff = ops::sub(fa, fb)?;
        let term = ops::scalar_mul(&ops::frobenius_norm(&diff)?, weight / n as f64)?;
        total = ops::add(&total, &term)?;
    }
    Ok(total)
}

impl GramMatrix {
    /// Debug export: one header line with layer metadata, then row-major
    /// values.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let side = self.values.shape()[0];
        writeln!(
            w,
            "# layer={} side={} normalizer={}",
            self.layer, side, self.normalizer
        )?;
        for row in 0..side {
            let cells: Vec<String> = (0..side)
                .map(|col| format!("{:.12e}", self.values.data()[row * side + col]))
                .collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{backward, gradcheck, watch, Tape};
    use crate::numeric;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn feat(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn rand_feat(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor {
        let data: Vec<f64> = (0..c * h * w).map(|_| rng.gen_range(-1.5..1.5)).collect();
        feat(&[c, h, w], &data)
    }

    /// Double-loop evaluation of the Gram definition.
    fn gram_oracle(c: usize, h: usize, w: usize, data: &[f64]) -> Vec<f64> {
        let hw = h * w;
        let mut out = vec![0.0; c * c];
        for i in 0..c {
            for j in 0..c {
                let mut dot = 0.0;
                for p in 0..hw {
                    dot += data[i * hw + p] * data[j * hw + p];
                }
                out[i * c + j] = dot / (c * h * w) as f64;
            }
        }
        out
    }

    #[test]
    fn zero_features_give_zero_gram() {
        let g = gram(&Tensor::zeros(&[3, 2, 2]), 0).unwrap();
        assert!(g.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_element_feature_is_its_own_gram() {
        let g = gram(&feat(&[1, 1, 1], &[1.0]), 0).unwrap();
        assert_eq!(g.values.data(), &[1.0]);
    }

    #[test]
    fn hand_example_matches_definition() {
        // C=2, H=1, W=2, rows [1,2] and [3,4]: unnormalized [[5,11],[11,25]],
        // divided by C*H*W = 4.
        let g = gram(&feat(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]), 1).unwrap();
        assert_eq!(g.values.data(), &[1.25, 2.75, 2.75, 6.25]);
        assert_eq!(g.normalizer, 4.0);
    }

    #[test]
    fn gram_matches_double_loop_oracle_and_is_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let (c, h, w) = (
                rng.gen_range(1..6usize),
                rng.gen_range(1..5usize),
                rng.gen_range(1..5usize),
            );
            let f = rand_feat(&mut rng, c, h, w);
            let g = gram(&f, 0).unwrap();
            let oracle = gram_oracle(c, h, w, f.data());
            for (a, b) in g.values.data().iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12);
            }
            // Exact symmetry.
            for i in 0..c {
                for j in 0..c {
                    assert_eq!(g.values.data()[i * c + j], g.values.data()[j * c + i]);
                }
            }
            // Numerically positive semidefinite.
            let min_eig = numeric::min_eigenvalue(c, g.values.data());
            assert!(min_eig >= -1e-8, "min eigenvalue {min_eig}");
        }
    }

    #[test]
    fn rsm_mask_thresholds_strictly() {
        let mk = |vals: &[f64]| GramMatrix {
            values: feat(&[1, 3], vals).detach(),
            layer: 0,
            normalizer: 1.0,
        };
        // Shape 1x3 keeps the hand case readable; rsm_mask only requires
        // matching shapes.
        let sr = mk(&[0.05, 0.15, -0.2]);
        let s = mk(&[0.0, 0.0, 0.0]);
        let mask = rsm_mask(&sr, &s, 0.1).unwrap();
        assert_eq!(mask.values.data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn identical_grams_give_empty_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = rand_feat(&mut rng, 4, 3, 3);
        let g = gram(&f, 0).unwrap();
        let mask = rsm_mask(&g, &g, 0.1).unwrap();
        assert!(mask.values.data().iter().all(|&v| v == 0.0));
        assert_eq!(mask.occupancy(), 0.0);
    }

    #[test]
    fn mask_matches_brute_force_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let side = 8;
            let a: Vec<f64> = (0..side * side).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let b: Vec<f64> = (0..side * side).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let tau = 0.1;
            let ga = GramMatrix {
                values: feat(&[side, side], &a),
                layer: 0,
                normalizer: 1.0,
            };
            let gb = GramMatrix {
                values: feat(&[side, side], &b),
                layer: 0,
                normalizer: 1.0,
            };
            let mask = rsm_mask(&ga, &gb, tau).unwrap();
            for ((&ma, &va), &vb) in mask.values.data().iter().zip(&a).zip(&b) {
                let expect = if va - vb > tau { 1.0 } else { 0.0 };
                assert_eq!(ma, expect);
            }
        }
    }

    #[test]
    fn identical_gram_sets_give_zero_reg_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let grams: Vec<GramMatrix> = (0..4)
            .map(|l| gram(&rand_feat(&mut rng, 3, 2, 2), l).unwrap())
            .collect();
        let loss = texture_reg_loss(&grams, &grams, &[5e-3, 5e-4, 5e-5, 5e-6]).unwrap();
        assert_eq!(loss.item().unwrap(), 0.0);
    }

    #[test]
    fn one_by_one_gram_reg_loss_is_weighted_abs_difference() {
        let ga = GramMatrix {
            values: feat(&[1, 1], &[2.0]),
            layer: 0,
            normalizer: 1.0,
        };
        let gb = GramMatrix {
            values: feat(&[1, 1], &[2.7]),
            layer: 0,
            normalizer: 1.0,
        };
        let loss = texture_reg_loss(&[ga], &[gb], &[5e-3]).unwrap();
        assert!((loss.item().unwrap() - 5e-3 * 0.7).abs() < 1e-15);
    }

    #[test]
    fn reg_loss_is_additive_over_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let refs: Vec<GramMatrix> = (0..2)
            .map(|l| gram(&rand_feat(&mut rng, 3, 2, 2), l).unwrap())
            .collect();
        let tasks: Vec<GramMatrix> = (0..2)
            .map(|l| gram(&rand_feat(&mut rng, 3, 2, 2), l).unwrap())
            .collect();
        let u = [5e-3, 5e-4];
        let both = texture_reg_loss(&refs, &tasks, &u).unwrap().item().unwrap();
        let first = texture_reg_loss(&refs[..1], &tasks[..1], &u[..1])
            .unwrap()
            .item()
            .unwrap();
        let second = texture_reg_loss(&refs[1..], &tasks[1..], &u[1..])
            .unwrap()
            .item()
            .unwrap();
        assert!((both - (first + second)).abs() < 1e-12);
    }

    #[test]
    fn reg_loss_gradient_flows_only_into_task_grams() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f_ref = rand_feat(&mut rng, 3, 2, 2);
        let f_task = rand_feat(&mut rng, 3, 2, 2);
        let _tape = Tape::begin();
        let ref_w = watch(&f_ref).unwrap();
        let task_w = watch(&f_task).unwrap();
        let g_ref = gram(&ref_w, 0).unwrap();
        let g_task = gram(&task_w, 0).unwrap();
        let loss = texture_reg_loss(&[g_ref], &[g_task], &[1.0]).unwrap();
        let grads = backward(&loss).unwrap();
        assert!(grads.get(&task_w).is_some());
        // The reference side is detached inside the loss.
        assert!(grads.get(&ref_w).is_none());
    }

    #[test]
    fn gen_loss_zero_when_mask_empty_and_bounded_by_unmasked() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let c = 4;
        let g_r: Vec<GramMatrix> = (0..2)
            .map(|l| gram(&rand_feat(&mut rng, c, 3, 3), l).unwrap())
            .collect();
        let g_sr: Vec<GramMatrix> = (0..2)
            .map(|l| gram(&rand_feat(&mut rng, c, 3, 3), l).unwrap())
            .collect();
        let v = [5e-3, 5e-4];

        let zero_masks: Vec<Mask> = (0..2)
            .map(|_| Mask {
                values: Tensor::zeros(&[c, c]),
                tau: f64::INFINITY,
            })
            .collect();
        let zero = texture_gen_loss(&g_r, &g_sr, &zero_masks, &v).unwrap();
        assert_eq!(zero.item().unwrap(), 0.0);

        let full_masks: Vec<Mask> = (0..2).map(|_| Mask::ones(c, 0.0)).collect();
        let full = texture_gen_loss(&g_r, &g_sr, &full_masks, &v).unwrap();
        // With all-ones masks the loss matches the reg-loss structure.
        let as_reg = texture_reg_loss(&g_r, &g_sr, &v).unwrap();
        assert!((full.item().unwrap() - as_reg.item().unwrap()).abs() < 1e-12);

        // Any mask keeps the loss at or below the unmasked value.
        let random_masks: Vec<Mask> = (0..2)
            .map(|_| Mask {
                values: Tensor::from_vec(
                    vec![c, c],
                    (0..c * c)
                        .map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
                        .collect(),
                )
                .unwrap(),
                tau: 0.1,
            })
            .collect();
        let masked = texture_gen_loss(&g_r, &g_sr, &random_masks, &v).unwrap();
        assert!(masked.item().unwrap() <= full.item().unwrap() + 1e-15);
    }

    #[test]
    fn gen_loss_gradient_flows_into_both_gram_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let f_r = rand_feat(&mut rng, 3, 2, 2);
        let f_sr = rand_feat(&mut rng, 3, 2, 2);
        let _tape = Tape::begin();
        let r_w = watch(&f_r).unwrap();
        let sr_w = watch(&f_sr).unwrap();
        let g_r = gram(&r_w, 0).unwrap();
        let g_sr = gram(&sr_w, 0).unwrap();
        let mask = Mask::ones(3, 0.1);
        let loss = texture_gen_loss(&[g_r], &[g_sr], &[mask], &[1.0]).unwrap();
        let grads = backward(&loss).unwrap();
        assert!(grads.get(&r_w).is_some());
        assert!(grads.get(&sr_w).is_some());
    }

    #[test]
    fn mask_is_insensitive_to_sub_threshold_perturbations() {
        // Perturbing the original-image Gram by less than the margin to tau
        // leaves the mask unchanged, so the loss's gradient structure is
        // unchanged too.
        let sr = GramMatrix {
            values: feat(&[2, 2], &[0.3, 0.05, 0.0, 0.25]),
            layer: 0,
            normalizer: 1.0,
        };
        let s = GramMatrix {
            values: feat(&[2, 2], &[0.0; 4]),
            layer: 0,
            normalizer: 1.0,
        };
        let tau = 0.1;
        let base = rsm_mask(&sr, &s, tau).unwrap();
        // Margins to the threshold are 0.2, 0.05, 0.1, 0.15; perturb by 0.04.
        let s2 = GramMatrix {
            values: feat(&[2, 2], &[0.04, -0.004, 0.04, -0.04]),
            layer: 0,
            normalizer: 1.0,
        };
        let perturbed = rsm_mask(&sr, &s2, tau).unwrap();
        assert_eq!(base.values.data(), perturbed.values.data());
    }

    #[test]
    fn raw_consistency_matches_hand_values() {
        let a = FeatureStack {
            layers: vec![feat(&[1, 1, 1], &[2.0])],
        };
        let b = FeatureStack {
            layers: vec![feat(&[1, 1, 1], &[2.5])],
        };
        let loss = raw_feature_consistency(&a, &b, &[1.0]).unwrap();
        assert!((loss.item().unwrap() - 0.5).abs() < 1e-15);
        let identical = raw_feature_consistency(&a, &a, &[1.0]).unwrap();
        assert_eq!(identical.item().unwrap(), 0.0);
    }

    #[test]
    fn raw_consistency_scales_linearly_with_difference() {
        let a = FeatureStack {
            layers: vec![feat(&[2, 1, 1], &[1.0, -1.0])],
        };
        let b = FeatureStack {
            layers: vec![feat(&[2, 1, 1], &[0.0, 0.0])],
        };
        let c = FeatureStack {
            layers: vec![feat(&[2, 1, 1], &[3.0, -3.0])],
        };
        let one = raw_feature_consistency(&a, &b, &[1.0]).unwrap().item().unwrap();
        let three = raw_feature_consistency(&c, &b, &[1.0]).unwrap().item().unwrap();
        assert!((three - 3.0 * one).abs() < 1e-12);
    }

    #[test]
    fn texture_losses_pass_finite_difference_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let f_ref = rand_feat(&mut rng, 3, 2, 2);
        let f_task = rand_feat(&mut rng, 3, 2, 2);
        let refs = vec![gram(&f_ref, 0).unwrap()];
        let err = gradcheck::finite_difference_check(
            move |x| {
                let g = gram(x, 0)?;
                texture_reg_loss(&refs, &[g], &[5e-1])
            },
            &f_task,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "reg loss error {err}");

        let f_r = rand_feat(&mut rng, 3, 2, 2);
        let f_sr = rand_feat(&mut rng, 3, 2, 2);
        let mask = Mask {
            values: Tensor::from_vec(
                vec![3, 3],
                (0..9).map(|i| (i % 2) as f64).collect(),
            )
            .unwrap(),
            tau: 0.1,
        };
        let g_r = gram(&f_r, 0).unwrap();
        let err = gradcheck::finite_difference_check(
            move |x| {
                let g_sr = gram(x, 0)?;
                texture_gen_loss(&[g_r.clone()], &[g_sr], &[mask.clone()], &[5e-1])
            },
            &f_sr,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "gen loss error {err}");
    }

    #[test]
    fn gram_csv_has_header_and_rows() {
        let g = gram(&feat(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]), 2).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("# layer=2 side=2 normalizer=4"));
        assert_eq!(lines[1].split(',').count(), 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn gram_symmetry_and_psd_hold_for_any_features(
            c in 1usize..5,
            h in 1usize..4,
            w in 1usize..4,
            seed in 0u64..10_000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = rand_feat(&mut rng, c, h, w);
            let g = gram(&f, 0).unwrap();
            for i in 0..c {
                for j in 0..c {
                    prop_assert_eq!(
                        g.values.data()[i * c + j],
                        g.values.data()[j * c + i]
                    );
                }
            }
            prop_assert!(numeric::min_eigenvalue(c, g.values.data()) >= -1e-8);
        }
    }

    /// Brute-force biased MMD^2 with kernel (x . y)^2 over the per-position
    /// feature columns, times N^2. Equals the squared Frobenius distance of
    /// the unnormalized Grams.
    #[test]
    fn unnormalized_gram_distance_equals_polynomial_mmd() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let c = rng.gen_range(2..5usize);
            let n = 16usize;
            let fa: Vec<f64> = (0..c * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let fb: Vec<f64> = (0..c * n).map(|_| rng.gen_range(-1.0..1.0)).collect();

            // Unnormalized Grams via the engine.
            let ta = feat(&[c, 1, n], &fa);
            let tb = feat(&[c, 1, n], &fb);
            let ga = gram(&ta, 0).unwrap();
            let gb = gram(&tb, 0).unwrap();
            let norm = (c * n) as f64;
            let fro2: f64 = ga
                .values
                .data()
                .iter()
                .zip(gb.values.data())
                .map(|(a, b)| {
                    let d = (a - b) * norm;
                    d * d
                })
                .sum();

            // Double loop over positions with kernel k(x, y) = (x . y)^2.
            let col = |f: &[f64], p: usize| -> Vec<f64> {
                (0..c).map(|i| f[i * n + p]).collect()
            };
            let k = |x: &[f64], y: &[f64]| -> f64 {
                let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
                dot * dot
            };
            let mut kaa = 0.0;
            let mut kbb = 0.0;
            let mut kab = 0.0;
            for p in 0..n {
                for q in 0..n {
                    kaa += k(&col(&fa, p), &col(&fa, q));
                    kbb += k(&col(&fb, p), &col(&fb, q));
                    kab += k(&col(&fa, p), &col(&fb, q));
                }
            }
            let mmd2_scaled = kaa + kbb - 2.0 * kab;
            let rel = (fro2 - mmd2_scaled).abs() / mmd2_scaled.abs().max(1e-300);
            assert!(rel < 1e-9, "relative error {rel}");
        }
    }
}
