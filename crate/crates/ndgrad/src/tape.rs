use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{GradError, Result};
use crate::fault;
use crate::ops::{self, Broadcast, ConvGeom, PoolGeom};
use crate::primitive::Primitive;
use crate::real::Real;
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

/// Recorded primitive application with the inputs and activations its
/// backward rule needs.
#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Add {
        a: usize,
        b: usize,
        ba: Broadcast,
        bb: Broadcast,
    },
    Sub {
        a: usize,
        b: usize,
        ba: Broadcast,
        bb: Broadcast,
    },
    Mul {
        a: usize,
        b: usize,
        ba: Broadcast,
        bb: Broadcast,
    },
    Scale {
        x: usize,
        factor: T,
    },
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Conv2d {
        x: usize,
        w: usize,
        cols: Vec<T>,
        geom: ConvGeom,
    },
    MaxPool2d {
        x: usize,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        x: usize,
        geom: PoolGeom,
    },
    Relu {
        x: usize,
    },
    Sigmoid {
        x: usize,
    },
    Softmax {
        x: usize,
    },
    LogSoftmax {
        x: usize,
    },
    Sum {
        x: usize,
    },
    Mean {
        x: usize,
    },
    Reshape {
        x: usize,
    },
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Slice {
        x: usize,
        axis: usize,
        start: usize,
    },
    Sign {
        x: usize,
    },
    Clamp {
        x: usize,
        lo: T,
        hi: T,
    },
    GatherRows {
        x: usize,
        rows: Vec<usize>,
    },
    ScatterRows {
        x: usize,
        rows: Vec<usize>,
    },
}

impl<T> Op<T> {
    pub(crate) fn primitive(&self) -> Option<Primitive> {
        Some(match self {
            Op::Leaf => return None,
            Op::Add { .. } => Primitive::Add,
            Op::Sub { .. } => Primitive::Sub,
            Op::Mul { .. } => Primitive::Mul,
            Op::Scale { .. } => Primitive::Scale,
            Op::MatMul { .. } => Primitive::MatMul,
            Op::Conv2d { .. } => Primitive::Conv2d,
            Op::MaxPool2d { .. } => Primitive::MaxPool2d,
            Op::GlobalAvgPool { .. } => Primitive::GlobalAvgPool,
            Op::Relu { .. } => Primitive::Relu,
            Op::Sigmoid { .. } => Primitive::Sigmoid,
            Op::Softmax { .. } => Primitive::Softmax,
            Op::LogSoftmax { .. } => Primitive::LogSoftmax,
            Op::Sum { .. } => Primitive::Sum,
            Op::Mean { .. } => Primitive::Mean,
            Op::Reshape { .. } => Primitive::Reshape,
            Op::Concat { .. } => Primitive::Concat,
            Op::Slice { .. } => Primitive::Slice,
            Op::Sign { .. } => Primitive::Sign,
            Op::Clamp { .. } => Primitive::Clamp,
            Op::GatherRows { .. } => Primitive::GatherRows,
            Op::ScatterRows { .. } => Primitive::ScatterRows,
        })
    }
}

#[derive(Debug)]
pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub needs_grad: bool,
}

/// Wengert list of one forward pass. Nodes are appended in execution order,
/// so the list is always topologically sorted.
#[derive(Debug)]
pub struct Tape<T> {
    id: u64,
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. It participates in differentiation iff
    /// `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs_grad = tensor.requires_grad();
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            needs_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Records a constant (never differentiated).
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_grad(false))
    }

    pub fn value(&self, v: Var) -> Result<&Tensor<T>> {
        Ok(&self.nodes[self.index(v)?].value)
    }

    pub fn shape(&self, v: Var) -> Result<&[usize]> {
        Ok(self.value(v)?.shape())
    }

    pub(crate) fn index(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(GradError::ForeignVar);
        }
        Ok(v.index)
    }

    pub(crate) fn node(&self, index: usize) -> &Node<T> {
        &self.nodes[index]
    }

    /// Appends the result of a primitive after checking it is finite.
    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Result<Var> {
        if !value.is_finite() {
            let prim = op.primitive().expect("leaves are pushed via leaf()");
            return Err(GradError::NonFinite { op: prim.name() });
        }
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        })
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Every leaf created with `requires_grad` receives d(loss)/d(leaf);
    /// leaves the loss does not depend on receive zeros. Contributions from
    /// several consumers of one value are summed.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = self.index(loss)?;
        let loss_value = &self.nodes[root].value;
        if loss_value.numel() != 1 {
            return Err(GradError::NotScalar(loss_value.shape().to_vec()));
        }

        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[root].needs_grad {
            grads[root] = Some(vec![T::one()]);
        }
        let faulty = fault::current();

        for index in (0..=root).rev() {
            let node = &self.nodes[index];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                continue;
            }
            let Some(upstream) = grads[index].take() else {
                continue;
            };
            let mut contributions = ops::backward(self, index, &upstream);
            if faulty.is_some() && faulty == node.op.primitive() {
                for (_, g) in contributions.iter_mut() {
                    g.iter_mut()
                        .for_each(|v| *v = *v * T::of(1.5) + T::of(1e-3));
                }
            }
            for (input, g) in contributions {
                if !self.nodes[input].needs_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match (&node.op, node.needs_grad) {
                (Op::Leaf, true) => {
                    let data = g.unwrap_or_else(|| vec![T::zero(); node.value.numel()]);
                    Some(
                        Tensor::new(node.value.shape(), data)
                            .expect("gradient matches value shape"),
                    )
                }
                _ => None,
            })
            .collect();
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }
}

/// Gradients of one backward sweep, indexed by leaf.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for a `requires_grad` leaf; `None` for anything else.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get_mut(v.index).and_then(Option::take)
    }
}
