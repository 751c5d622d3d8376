//! Per-step recording of applied primitives and the reverse sweep over them.
//!
//! A [`Tape`] is installed on the current thread for the duration of one
//! differentiated computation (one training step, one gradient check). Ops
//! record a node whenever at least one input is tracked on the active tape.
//! [`backward`] consumes the tape, visiting nodes exactly once in reverse
//! forward order, and returns a gradient per tracked tensor.

use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::ops;
use super::tensor::{check_finite, numel, NodeRef, Tensor};
use crate::{Error, Result};

/// Saved context needed to propagate a gradient through one primitive.
/// Operand slots line up with `Node::parents`.
pub(crate) enum Step {
    Leaf,
    Add,
    Sub,
    Mul {
        a: Arc<[f64]>,
        b: Arc<[f64]>,
    },
    ScalarMul {
        factor: f64,
    },
    Sum {
        n: usize,
    },
    Mean {
        n: usize,
    },
    FrobeniusNorm {
        input: Arc<[f64]>,
        norm: f64,
    },
    Matmul {
        a: Arc<[f64]>,
        b: Arc<[f64]>,
        m: usize,
        k: usize,
        n: usize,
    },
    BatchedMatmul {
        a: Arc<[f64]>,
        b: Arc<[f64]>,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose {
        rows: usize,
        cols: usize,
    },
    Reshape,
    Relu {
        input: Arc<[f64]>,
    },
    Conv2d {
        input: Arc<[f64]>,
        kernel: Arc<[f64]>,
        in_shape: [usize; 3],
        k_shape: [usize; 4],
        stride: usize,
        pad: usize,
    },
    MaxPool2 {
        argmax: Vec<usize>,
        in_len: usize,
    },
    AvgPool2 {
        in_shape: [usize; 3],
    },
    BilinearUpsample {
        in_shape: [usize; 3],
        scale: usize,
    },
    CrossEntropy {
        probs: Arc<[f64]>,
        labels: Arc<[i64]>,
        classes: usize,
        plane: usize,
        n_valid: usize,
        ignore_index: i64,
    },
}

pub(crate) struct Node {
    /// Tape ids of the tracked operands, slot-aligned with the step.
    parents: Vec<Option<usize>>,
    step: Step,
    shape: Vec<usize>,
}

struct TapeData {
    gen: u64,
    nodes: Vec<Node>,
}

thread_local! {
    static ACTIVE: RefCell<Option<TapeData>> = const { RefCell::new(None) };
}

static NEXT_GEN: AtomicU64 = AtomicU64::new(1);

/// RAII guard for the thread's recording scope. Created at the start of a
/// differentiated computation; dropping it discards any unconsumed record.
/// One tape per thread at a time; no higher-order gradients.
pub struct Tape {
    gen: u64,
}

impl Tape {
    pub fn begin() -> Tape {
        let gen = NEXT_GEN.fetch_add(1, Ordering::Relaxed);
        ACTIVE.with(|a| {
            let mut slot = a.borrow_mut();
            assert!(
                slot.is_none(),
                "a tape is already active on this thread; nested tapes are unsupported"
            );
            *slot = Some(TapeData {
                gen,
                nodes: Vec::new(),
            });
        });
        Tape { gen }
    }

    pub fn generation(&self) -> u64 {
        self.gen
    }
}

impl Drop for Tape {
    fn drop(&mut self) {
        ACTIVE.with(|a| {
            let mut slot = a.borrow_mut();
            if slot.as_ref().map(|t| t.gen) == Some(self.gen) {
                *slot = None;
            }
        });
    }
}

pub fn is_recording() -> bool {
    ACTIVE.with(|a| a.borrow().is_some())
}

/// Mark a tensor as a differentiation root on the active tape. Returns a
/// tracked copy sharing storage with the input.
pub fn watch(t: &Tensor) -> Result<Tensor> {
    ACTIVE.with(|a| {
        let mut slot = a.borrow_mut();
        let tape = slot
            .as_mut()
            .ok_or_else(|| Error::contract("watch() requires an active tape"))?;
        let id = tape.nodes.len();
        tape.nodes.push(Node {
            parents: Vec::new(),
            step: Step::Leaf,
            shape: t.shape().to_vec(),
        });
        Ok(Tensor::raw(
            t.shape().to_vec(),
            t.data_arc(),
            Some(NodeRef { gen: tape.gen, id }),
        ))
    })
}

/// Construct the output tensor of a primitive, recording a node when any
/// operand is tracked on the active tape. Callers have already validated
/// shapes and finiteness of `data`.
pub(crate) fn emit(
    parents: &[&Tensor],
    step: Step,
    shape: Vec<usize>,
    data: Vec<f64>,
) -> Tensor {
    debug_assert_eq!(numel(&shape), data.len());
    let data: Arc<[f64]> = data.into();
    let node = ACTIVE.with(|a| {
        let mut slot = a.borrow_mut();
        let tape = slot.as_mut()?;
        let ids: Vec<Option<usize>> = parents
            .iter()
            .map(|p| p.node().filter(|n| n.gen == tape.gen).map(|n| n.id))
            .collect();
        if ids.iter().all(Option::is_none) {
            return None;
        }
        let id = tape.nodes.len();
        tape.nodes.push(Node {
            parents: ids,
            step,
            shape: shape.clone(),
        });
        Some(NodeRef { gen: tape.gen, id })
    });
    Tensor::raw(shape, data, node)
}

/// Gradients produced by one [`backward`] call, addressed by the tracked
/// tensors they belong to.
pub struct GradientMap {
    gen: u64,
    grads: Vec<Option<Tensor>>,
}

impl GradientMap {
    /// Gradient of the backward root with respect to `t`, if `t` was tracked
    /// on the consumed tape and reachable from the root.
    pub fn get(&self, t: &Tensor) -> Option<&Tensor> {
        let node = t.node().filter(|n| n.gen == self.gen)?;
        self.grads.get(node.id).and_then(Option::as_ref)
    }

    pub fn get_node(&self, node: NodeRef) -> Option<&Tensor> {
        if node.gen != self.gen {
            return None;
        }
        self.grads.get(node.id).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, grad: &[f64]) {
    match slot {
        Some(existing) => {
            for (e, g) in existing.iter_mut().zip(grad) {
                *e += g;
            }
        }
        None => *slot = Some(grad.to_vec()),
    }
}

/// Propagate d(loss)/d(node) through the record in reverse. The root must be
/// a scalar on the active tape; the tape is consumed (discarded) afterwards.
pub fn backward(loss: &Tensor) -> Result<GradientMap> {
    if loss.len() != 1 {
        return Err(Error::contract(format!(
            "backward root must be scalar, got shape {:?}",
            loss.shape()
        )));
    }
    let root = loss
        .node()
        .ok_or_else(|| Error::contract("backward root is not tracked on any tape"))?;
    let tape = ACTIVE.with(|a| {
        let mut slot = a.borrow_mut();
        match slot.as_ref() {
            Some(t) if t.gen == root.gen => Ok(slot.take().unwrap()),
            _ => Err(Error::contract(
                "backward root does not belong to the active tape",
            )),
        }
    })?;

    let mut grads: Vec<Option<Vec<f64>>> = (0..tape.nodes.len()).map(|_| None).collect();
    grads[root.id] = Some(vec![1.0]);

    for id in (0..=root.id).rev() {
        if grads[id].is_none() {
            continue;
        }
        let node = &tape.nodes[id];
        if matches!(node.step, Step::Leaf) {
            continue;
        }
        // Parents always precede children in forward order.
        let (before, rest) = grads.split_at_mut(id);
        let grad_out = rest[0].as_ref().expect("checked above");
        let wanted: Vec<bool> = node.parents.iter().map(Option::is_some).collect();
        let parent_grads = ops::step_backward(&node.step, grad_out, &wanted);
        debug_assert_eq!(parent_grads.len(), node.parents.len());
        for (pid, pgrad) in node.parents.iter().zip(parent_grads) {
            if let (Some(pid), Some(pgrad)) = (pid, pgrad) {
                accumulate(&mut before[*pid], &pgrad);
            }
        }
    }

    let grads = grads
        .into_iter()
        .enumerate()
        .map(|(id, g)| {
            g.map(|data| Tensor::raw(tape.nodes[id].shape.clone(), data.into(), None))
        })
        .collect();
    Ok(GradientMap {
        gen: tape.gen,
        grads,
    })
}

/// Forward-op helper: validate output finiteness then emit.
pub(crate) fn finish(
    op: &'static str,
    parents: &[&Tensor],
    step: Step,
    shape: Vec<usize>,
    data: Vec<f64>,
) -> Result<Tensor> {
    check_finite(op, &data)?;
    Ok(emit(parents, step, shape, data))
}
