//! Finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use super::{backward, conv, loss, ops, watch, Tape};
use crate::{Error, Result};

/// Compare the analytic gradient of a scalar-valued function against central
/// differences, returning the worst relative error
/// |analytic - numeric| / max(1, |analytic|) over all coordinates.
pub fn finite_difference_check<F>(f: F, input: &Tensor, epsilon: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::contract(format!(
            "epsilon must lie in (0, 1e-2], got {epsilon}"
        )));
    }

    let analytic = {
        let _tape = Tape::begin();
        let x = watch(input)?;
        let y = f(&x)?;
        if y.len() != 1 {
            return Err(Error::contract(
                "finite_difference_check requires a scalar-valued function",
            ));
        }
        if y.node().is_none() {
            // The output never touched the input: a constant function.
            vec![0.0; input.len()]
        } else {
            let grads = backward(&y)?;
            match grads.get(&x) {
                Some(g) => g.data().to_vec(),
                // Input unreachable from the output: gradient is identically 0.
                None => vec![0.0; input.len()],
            }
        }
    };

    let mut worst = 0.0f64;
    let mut values = input.data().to_vec();
    for i in 0..values.len() {
        let orig = values[i];
        values[i] = orig + epsilon;
        let plus = f(&Tensor::from_vec(input.shape().to_vec(), values.clone())?)?.item()?;
        values[i] = orig - epsilon;
        let minus = f(&Tensor::from_vec(input.shape().to_vec(), values.clone())?)?.item()?;
        values[i] = orig;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Worst relative finite-difference error for one named primitive.
#[derive(Debug, Clone)]
pub struct PrimitiveCheck {
    pub name: &'static str,
    pub worst: f64,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

/// Scalarizer with a non-constant Jacobian, so checks exercise chain rule.
fn sq_sum(t: &Tensor) -> Result<Tensor> {
    ops::sum(&ops::mul(t, t)?)
}

/// Random values bounded away from zero, for kinked ops like relu.
fn rand_tensor_off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.2..1.5);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

/// Run every differentiable primitive through finite differences on small
/// randomized shapes, one entry per primitive with the worst error seen
/// across `seeds` draws.
pub fn primitive_suite(seeds: u64) -> Result<Vec<PrimitiveCheck>> {
    let eps = 1e-5;
    let mut results: Vec<PrimitiveCheck> = Vec::new();
    let push = |name: &'static str, err: f64, out: &mut Vec<PrimitiveCheck>| {
        if let Some(entry) = out.iter_mut().find(|e| e.name == name) {
            entry.worst = entry.worst.max(err);
        } else {
            out.push(PrimitiveCheck { name, worst: err });
        }
    };

    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(0xAD0 + seed);

        let a = rand_tensor(&mut rng, &[2, 3], -2.0, 2.0);
        let b = rand_tensor(&mut rng, &[2, 3], -2.0, 2.0);

        let bc = b.clone();
        let err = finite_difference_check(
            move |x| ops::sum(&ops::add(x, &bc)?),
            &a,
            eps,
        )?;
        push("add", err, &mut results);

        let bc = b.clone();
        let err =
            finite_difference_check(move |x| ops::sum(&ops::sub(&bc, x)?), &a, eps)?;
        push("sub", err, &mut results);

        let bc = b.clone();
        let err =
            finite_difference_check(move |x| ops::sum(&ops::mul(x, &bc)?), &a, eps)?;
        push("mul-elementwise", err, &mut results);

        let err =
            finite_difference_check(|x| ops::sum(&ops::scalar_mul(x, -1.75)?), &a, eps)?;
        push("scalar-mul", err, &mut results);

        let err = finite_difference_check(|x| ops::sum(&ops::mul(x, x)?), &a, eps)?;
        push("sum", err, &mut results);

        let err = finite_difference_check(|x| ops::mean(&ops::mul(x, x)?), &a, eps)?;
        push("mean", err, &mut results);

        let err = finite_difference_check(|x| ops::frobenius_norm(x), &a, eps)?;
        push("frobenius-norm", err, &mut results);

        let m = rand_tensor(&mut rng, &[3, 2], -2.0, 2.0);
        let right = rand_tensor(&mut rng, &[2, 4], -2.0, 2.0);
        let rc = right.clone();
        let err = finite_difference_check(
            move |x| ops::frobenius_norm(&ops::matmul(x, &rc)?),
            &m,
            eps,
        )?;
        push("matmul", err, &mut results);
        let mc = m.clone();
        let err = finite_difference_check(
            move |x| ops::frobenius_norm(&ops::matmul(&mc, x)?),
            &right,
            eps,
        )?;
        push("matmul", err, &mut results);

        let ba = rand_tensor(&mut rng, &[2, 2, 3], -2.0, 2.0);
        let bb = rand_tensor(&mut rng, &[2, 3, 2], -2.0, 2.0);
        let bbc = bb.clone();
        let err = finite_difference_check(
            move |x| ops::frobenius_norm(&ops::batched_matmul(x, &bbc)?),
            &ba,
            eps,
        )?;
        push("batched-matmul", err, &mut results);
        let bac = ba.clone();
        let err = finite_difference_check(
            move |x| ops::frobenius_norm(&ops::batched_matmul(&bac, x)?),
            &bb,
            eps,
        )?;
        push("batched-matmul", err, &mut results);

        let err = finite_difference_check(
            |x| ops::frobenius_norm(&ops::transpose(x)?),
            &rand_tensor(&mut rng, &[3, 4], -2.0, 2.0),
            eps,
        )?;
        push("transpose", err, &mut results);

        let err = finite_difference_check(
            |x| ops::frobenius_norm(&ops::reshape(x, &[6])?),
            &rand_tensor(&mut rng, &[2, 3], -2.0, 2.0),
            eps,
        )?;
        push("reshape", err, &mut results);

        let err = finite_difference_check(
            |x| ops::sum(&ops::relu(x)?),
            &rand_tensor_off_zero(&mut rng, &[3, 3]),
            eps,
        )?;
        push("relu", err, &mut results);

        // conv2d: gradients w.r.t. input, kernel and bias.
        let img = rand_tensor(&mut rng, &[2, 4, 4], -1.0, 1.0);
        let ker = rand_tensor(&mut rng, &[3, 2, 3, 3], -1.0, 1.0);
        let bias = rand_tensor(&mut rng, &[3], -0.5, 0.5);
        let (k2, b2) = (ker.clone(), bias.clone());
        let err = finite_difference_check(
            move |x| sq_sum(&conv::conv2d(x, &k2, Some(&b2), 1, 1)?),
            &img,
            eps,
        )?;
        push("conv2d", err, &mut results);
        let (i2, b2) = (img.clone(), bias.clone());
        let err = finite_difference_check(
            move |x| sq_sum(&conv::conv2d(&i2, x, Some(&b2), 1, 1)?),
            &ker,
            eps,
        )?;
        push("conv2d", err, &mut results);
        let (i2, k2) = (img.clone(), ker.clone());
        let err = finite_difference_check(
            move |x| sq_sum(&conv::conv2d(&i2, &k2, Some(x), 1, 1)?),
            &bias,
            eps,
        )?;
        push("conv2d", err, &mut results);

        let err = finite_difference_check(
            |x| sq_sum(&conv::max_pool2(x)?),
            &rand_tensor(&mut rng, &[2, 4, 4], -1.0, 1.0),
            eps,
        )?;
        push("max-pool2", err, &mut results);

        let err = finite_difference_check(
            |x| sq_sum(&conv::avg_pool2(x)?),
            &rand_tensor(&mut rng, &[2, 4, 4], -1.0, 1.0),
            eps,
        )?;
        push("avg-pool2", err, &mut results);

        let err = finite_difference_check(
            |x| sq_sum(&conv::bilinear_upsample(x, 2)?),
            &rand_tensor(&mut rng, &[1, 3, 3], -1.0, 1.0),
            eps,
        )?;
        push("bilinear-upsample", err, &mut results);

        let classes = 3;
        let labels: Vec<i64> = (0..4)
            .map(|_| {
                if rng.gen_bool(0.2) {
                    255
                } else {
                    rng.gen_range(0..classes as i64)
                }
            })
            .collect();
        // Guarantee at least one scored pixel.
        let mut labels = labels;
        labels[0] = 0;
        let z = rand_tensor(&mut rng, &[classes, 2, 2], -2.0, 2.0);
        let err = finite_difference_check(
            move |x| loss::cross_entropy(x, &labels, 255),
            &z,
            eps,
        )?;
        push("cross_entropy", err, &mut results);
    }
    Ok(results)
}
