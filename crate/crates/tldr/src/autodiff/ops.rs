//! Forward implementations of the tensor primitives and the per-step
//! vector-Jacobian products used by the reverse sweep.

use super::conv;
use super::loss;
use super::tape::{finish, Step};
use super::tensor::Tensor;
use crate::{Error, Result};

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    finish("add", &[a, b], Step::Add, a.shape().to_vec(), data)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("sub", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    finish("sub", &[a, b], Step::Sub, a.shape().to_vec(), data)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    let step = Step::Mul {
        a: a.data_arc(),
        b: b.data_arc(),
    };
    finish("mul", &[a, b], step, a.shape().to_vec(), data)
}

pub fn scalar_mul(a: &Tensor, factor: f64) -> Result<Tensor> {
    if !factor.is_finite() {
        return Err(Error::Numeric("scalar_mul"));
    }
    let data = a.data().iter().map(|x| x * factor).collect();
    let step = Step::ScalarMul { factor };
    finish("scalar_mul", &[a], step, a.shape().to_vec(), data)
}

pub fn sum(a: &Tensor) -> Result<Tensor> {
    let total = a.data().iter().sum();
    finish("sum", &[a], Step::Sum { n: a.len() }, vec![], vec![total])
}

pub fn mean(a: &Tensor) -> Result<Tensor> {
    if a.is_empty() {
        return Err(Error::Shape {
            op: "mean",
            shape: a.shape().to_vec(),
            msg: "empty tensor".into(),
        });
    }
    let n = a.len();
    let total: f64 = a.data().iter().sum();
    finish("mean", &[a], Step::Mean { n }, vec![], vec![total / n as f64])
}

/// Square root of the sum of squared entries; the matrix l2 norm used by the
/// texture losses. Gradient at the origin is defined as zero.
pub fn frobenius_norm(a: &Tensor) -> Result<Tensor> {
    let norm = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let step = Step::FrobeniusNorm {
        input: a.data_arc(),
        norm,
    };
    finish("frobenius_norm", &[a], step, vec![], vec![norm])
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (&[m, k], &[k2, n]) = (a.shape(), b.shape()) else {
        return Err(Error::Dimension {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    };
    if k != k2 {
        return Err(Error::Dimension {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; m * n];
    matmul_raw(a.data(), b.data(), m, k, n, &mut out);
    let step = Step::Matmul {
        a: a.data_arc(),
        b: b.data_arc(),
        m,
        k,
        n,
    };
    finish("matmul", &[a, b], step, vec![m, n], out)
}

pub fn batched_matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (&[ba, m, k], &[bb, k2, n]) = (a.shape(), b.shape()) else {
        return Err(Error::Dimension {
            op: "batched_matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    };
    if ba != bb || k != k2 {
        return Err(Error::Dimension {
            op: "batched_matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; ba * m * n];
    for i in 0..ba {
        matmul_raw(
            &a.data()[i * m * k..(i + 1) * m * k],
            &b.data()[i * k * n..(i + 1) * k * n],
            m,
            k,
            n,
            &mut out[i * m * n..(i + 1) * m * n],
        );
    }
    let step = Step::BatchedMatmul {
        a: a.data_arc(),
        b: b.data_arc(),
        batch: ba,
        m,
        k,
        n,
    };
    finish("batched_matmul", &[a, b], step, vec![ba, m, n], out)
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let &[rows, cols] = a.shape() else {
        return Err(Error::Shape {
            op: "transpose",
            shape: a.shape().to_vec(),
            msg: "expected a rank-2 tensor".into(),
        });
    };
    let mut out = vec![0.0; rows * cols];
    transpose_raw(a.data(), rows, cols, &mut out);
    let step = Step::Transpose { rows, cols };
    finish("transpose", &[a], step, vec![cols, rows], out)
}

pub fn reshape(a: &Tensor, new_shape: &[usize]) -> Result<Tensor> {
    if new_shape.iter().product::<usize>() != a.len() {
        return Err(Error::Shape {
            op: "reshape",
            shape: new_shape.to_vec(),
            msg: format!("cannot hold {} values", a.len()),
        });
    }
    // Data is shared; only the shape changes.
    let data = a.data().to_vec();
    finish("reshape", &[a], Step::Reshape, new_shape.to_vec(), data)
}

pub fn relu(a: &Tensor) -> Result<Tensor> {
    let data = a.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
    let step = Step::Relu { input: a.data_arc() };
    finish("relu", &[a], step, a.shape().to_vec(), data)
}

// ── raw kernels shared by forward and backward ───────────────────────

/// out += is implicit: caller provides a zeroed buffer. Loop order keeps the
/// innermost accumulation over contiguous rows of `b`.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == 0.0 {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
}

/// out = a (m x n) * b^T where b is (k x n): out[i][j] = dot(a_row_i, b_row_j).
pub(crate) fn matmul_bt_raw(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let b_row = &b[j * n..(j + 1) * n];
            out[i * k + j] = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    }
}

/// out += a^T (k x m) * g (m x n) where a is (m x k).
pub(crate) fn matmul_at_raw(a: &[f64], g: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == 0.0 {
                continue;
            }
            let out_row = &mut out[kk * n..(kk + 1) * n];
            for (o, gv) in out_row.iter_mut().zip(g_row) {
                *o += aik * gv;
            }
        }
    }
}

pub(crate) fn transpose_raw(a: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
}

// ── reverse dispatch ─────────────────────────────────────────────────

/// Gradients for each operand slot of one recorded step. Slots whose operand
/// is a constant (`wanted[slot] == false`) are skipped.
pub(crate) fn step_backward(
    step: &Step,
    grad: &[f64],
    wanted: &[bool],
) -> Vec<Option<Vec<f64>>> {
    let want = |slot: usize| wanted.get(slot).copied().unwrap_or(false);
    match step {
        Step::Leaf => Vec::new(),
        Step::Add => vec![
            want(0).then(|| grad.to_vec()),
            want(1).then(|| grad.to_vec()),
        ],
        Step::Sub => vec![
            want(0).then(|| grad.to_vec()),
            want(1).then(|| grad.iter().map(|g| -g).collect()),
        ],
        Step::Mul { a, b } => vec![
            want(0).then(|| grad.iter().zip(b.iter()).map(|(g, y)| g * y).collect()),
            want(1).then(|| grad.iter().zip(a.iter()).map(|(g, x)| g * x).collect()),
        ],
        Step::ScalarMul { factor } => {
            vec![want(0).then(|| grad.iter().map(|g| g * factor).collect())]
        }
        Step::Sum { n } => vec![want(0).then(|| vec![grad[0]; *n])],
        Step::Mean { n } => vec![want(0).then(|| vec![grad[0] / *n as f64; *n])],
        Step::FrobeniusNorm { input, norm } => vec![want(0).then(|| {
            if *norm == 0.0 {
                vec![0.0; input.len()]
            } else {
                let scale = grad[0] / norm;
                input.iter().map(|x| x * scale).collect()
            }
        })],
        Step::Matmul { a, b, m, k, n } => {
            let da = want(0).then(|| {
                let mut out = vec![0.0; m * k];
                matmul_bt_raw(grad, b, *m, *n, *k, &mut out);
                out
            });
            let db = want(1).then(|| {
                let mut out = vec![0.0; k * n];
                matmul_at_raw(a, grad, *m, *k, *n, &mut out);
                out
            });
            vec![da, db]
        }
        Step::BatchedMatmul {
            a,
            b,
            batch,
            m,
            k,
            n,
        } => {
            let da = want(0).then(|| {
                let mut out = vec![0.0; batch * m * k];
                for i in 0..*batch {
                    matmul_bt_raw(
                        &grad[i * m * n..(i + 1) * m * n],
                        &b[i * k * n..(i + 1) * k * n],
                        *m,
                        *n,
                        *k,
                        &mut out[i * m * k..(i + 1) * m * k],
                    );
                }
                out
            });
            let db = want(1).then(|| {
                let mut out = vec![0.0; batch * k * n];
                for i in 0..*batch {
                    matmul_at_raw(
                        &a[i * m * k..(i + 1) * m * k],
                        &grad[i * m * n..(i + 1) * m * n],
                        *m,
                        *k,
                        *n,
                        &mut out[i * k * n..(i + 1) * k * n],
                    );
                }
                out
            });
            vec![da, db]
        }
        Step::Transpose { rows, cols } => vec![want(0).then(|| {
            // grad has the transposed shape (cols x rows); transpose it back.
            let mut out = vec![0.0; rows * cols];
            transpose_raw(grad, *cols, *rows, &mut out);
            out
        })],
        Step::Reshape => vec![want(0).then(|| grad.to_vec())],
        Step::Relu { input } => vec![want(0).then(|| {
            grad.iter()
                .zip(input.iter())
                .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                .collect()
        })],
        Step::Conv2d {
            input,
            kernel,
            in_shape,
            k_shape,
            stride,
            pad,
        } => conv::conv2d_backward(input, kernel, *in_shape, *k_shape, *stride, *pad, grad, wanted),
        Step::MaxPool2 { argmax, in_len } => vec![want(0).then(|| {
            let mut out = vec![0.0; *in_len];
            for (g, &src) in grad.iter().zip(argmax.iter()) {
                out[src] += g;
            }
            out
        })],
        Step::AvgPool2 { in_shape } => {
            vec![want(0).then(|| conv::avg_pool2_backward(*in_shape, grad))]
        }
        Step::BilinearUpsample { in_shape, scale } => {
            vec![want(0).then(|| conv::bilinear_upsample_backward(*in_shape, *scale, grad))]
        }
        Step::CrossEntropy {
            probs,
            labels,
            classes,
            plane,
            n_valid,
            ignore_index,
        } => vec![want(0).then(|| {
            loss::cross_entropy_backward(probs, labels, *classes, *plane, *n_valid, *ignore_index, grad[0])
        })],
    }
}
