use std::fmt;
use std::sync::Arc;

use crate::{Error, Result};

/// Identity of a tensor on the thread's current tape. The generation counter
/// distinguishes tapes; a tensor whose generation does not match the active
/// tape is treated as a constant.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NodeRef {
    pub(crate) gen: u64,
    pub(crate) id: usize,
}

/// Dense n-dimensional array of f64 values in row-major order.
///
/// Tensors are immutable after creation; clones share storage. A tensor may
/// carry a [`NodeRef`] tying it to the tape that recorded it, in which case
/// [`crate::autodiff::backward`] can produce a gradient for it.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<[f64]>,
    node: Option<NodeRef>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(op))
    }
}

impl Tensor {
    /// Build a tensor from raw values, validating element count and
    /// finiteness.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        if numel(&shape) != data.len() {
            return Err(Error::Shape {
                op: "from_vec",
                shape,
                msg: format!("shape does not match {} data values", data.len()),
            });
        }
        check_finite("from_vec", &data)?;
        Ok(Tensor {
            shape,
            data: data.into(),
            node: None,
        })
    }

    /// Rank-0 tensor holding a single value.
    pub fn scalar(value: f64) -> Result<Tensor> {
        Tensor::from_vec(vec![], vec![value])
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor {
            data: vec![0.0; numel(shape)].into(),
            shape: shape.to_vec(),
            node: None,
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Tensor> {
        Tensor::from_vec(shape.to_vec(), vec![value; numel(shape)])
    }

    pub(crate) fn raw(shape: Vec<usize>, data: Arc<[f64]>, node: Option<NodeRef>) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor { shape, data, node }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_arc(&self) -> Arc<[f64]> {
        Arc::clone(&self.data)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::contract(format!(
                "item() on non-scalar tensor of shape {:?}",
                self.shape
            )))
        }
    }

    pub fn node(&self) -> Option<NodeRef> {
        self.node
    }

    /// Copy of this tensor with no tape identity; gradients stop here.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    /// Max over |a - b| of two same-shape tensors. Handy in tests.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::Dimension {
                op: "max_abs_diff",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &preview)
            .field("tracked", &self.node.is_some())
            .finish()
    }
}
