//! Reverse-mode automatic differentiation over a recorded op list.
//!
//! A [`Tape`] owns every intermediate tensor of one forward pass. Ops are
//! appended in execution order, so inputs always precede their consumers
//! and the backward sweep is a single reverse walk. Forward values are
//! computed eagerly by the same kernels the inference paths use
//! ([`crate::ops`], [`crate::conv`], [`crate::loss`]), which keeps the two
//! code paths numerically identical.

use std::sync::Arc;

use crate::conv::{self, Padding};
use crate::error::{Error, Result};
use crate::loss;
use crate::ops::{self, PoolMode};
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Input,
    Relu { x: NodeId },
    Sigmoid { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: Real },
    Concat0 { a: NodeId, b: NodeId },
    Upsample2x { x: NodeId },
    Linear { x: NodeId, w: NodeId, b: NodeId },
    PoolSpatial { x: NodeId, mode: PoolMode },
    PoolChannel { x: NodeId, mode: PoolMode },
    SpatialMap { x: NodeId, inv: Arc<Vec<u32>> },
    ResidualGate { a: NodeId, f: NodeId },
    Reshape { x: NodeId },
    SumAll { x: NodeId },
    Conv3d { x: NodeId, w: NodeId, b: NodeId, stride: usize, padding: Padding },
    CeLoss { p: NodeId, g: Arc<Tensor> },
    WeightedDice { p: NodeId, g: Arc<Tensor>, w: Arc<Tensor>, eps: Real },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Relu { .. } => "relu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Concat0 { .. } => "concat0",
            Op::Upsample2x { .. } => "upsample2x",
            Op::Linear { .. } => "linear",
            Op::PoolSpatial { .. } => "pool_spatial",
            Op::PoolChannel { .. } => "pool_channel",
            Op::SpatialMap { .. } => "spatial_map",
            Op::ResidualGate { .. } => "residual_gate",
            Op::Reshape { .. } => "reshape",
            Op::SumAll { .. } => "sum_all",
            Op::Conv3d { .. } => "conv3d",
            Op::CeLoss { .. } => "ce_loss",
            Op::WeightedDice { .. } => "weighted_dice",
        }
    }
}

#[derive(Default)]
pub struct Tape {
    values: Vec<Tensor>,
    ops: Vec<Op>,
    grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }

    /// Gradient of the last `backward` target with respect to this node,
    /// if the node participated.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.ops[id.0].name()
    }

    /// Names of all recorded ops in tape order, for structural assertions
    /// (e.g. that a permutation-free configuration records no
    /// `spatial_map`).
    pub fn op_names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.ops.iter().map(Op::name)
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.values.push(value);
        self.ops.push(op);
        NodeId(self.values.len() - 1)
    }

    /// Registers a leaf tensor (network input, parameter, constant).
    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Input)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = ops::relu(self.value(x));
        self.push(v, Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = ops::sigmoid(self.value(x));
        self.push(v, Op::Sigmoid { x })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::mul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: NodeId, c: Real) -> NodeId {
        let v = ops::scale(self.value(x), c);
        self.push(v, Op::Scale { x, c })
    }

    pub fn concat0(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::concat0(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Concat0 { a, b }))
    }

    pub fn upsample2x(&mut self, x: NodeId) -> Result<NodeId> {
        let v = ops::upsample2x(self.value(x))?;
        Ok(self.push(v, Op::Upsample2x { x }))
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::linear(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(v, Op::Linear { x, w, b }))
    }

    pub fn pool_spatial(&mut self, x: NodeId, mode: PoolMode) -> Result<NodeId> {
        let v = ops::pool_spatial(self.value(x), mode)?;
        Ok(self.push(v, Op::PoolSpatial { x, mode }))
    }

    pub fn pool_channel(&mut self, x: NodeId, mode: PoolMode) -> Result<NodeId> {
        let v = ops::pool_channel(self.value(x), mode)?;
        Ok(self.push(v, Op::PoolChannel { x, mode }))
    }

    /// Gather by `fwd` on the flattened spatial axes; `inv` must be the
    /// inverse permutation and drives the backward pass.
    pub fn spatial_map(
        &mut self,
        x: NodeId,
        fwd: Arc<Vec<u32>>,
        inv: Arc<Vec<u32>>,
    ) -> Result<NodeId> {
        debug_assert!(fwd.iter().enumerate().all(|(j, &s)| inv[s as usize] == j as u32));
        let v = ops::apply_spatial_map(self.value(x), &fwd)?;
        Ok(self.push(v, Op::SpatialMap { x, inv }))
    }

    pub fn residual_gate(&mut self, a: NodeId, f: NodeId) -> Result<NodeId> {
        let v = ops::residual_gate(self.value(a), self.value(f))?;
        Ok(self.push(v, Op::ResidualGate { a, f }))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(x).reshaped(shape)?;
        Ok(self.push(v, Op::Reshape { x }))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let v = ops::sum_all(self.value(x));
        self.push(v, Op::SumAll { x })
    }

    pub fn conv3d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        padding: Padding,
    ) -> Result<NodeId> {
        let v = conv::conv3d(self.value(x), self.value(w), self.value(b), stride, padding)?;
        Ok(self.push(v, Op::Conv3d { x, w, b, stride, padding }))
    }

    /// Mean binary cross-entropy of probabilities `p` against the constant
    /// binary mask `g`.
    pub fn ce_loss(&mut self, p: NodeId, g: &Tensor) -> Result<NodeId> {
        let v = Tensor::scalar(loss::ce_loss(self.value(p), g)?);
        Ok(self.push(v, Op::CeLoss { p, g: Arc::new(g.clone()) }))
    }

    /// Weighted soft-Dice loss of `p` against constant mask `g` with
    /// constant per-voxel weights `w`.
    pub fn weighted_dice_loss(
        &mut self,
        p: NodeId,
        g: &Tensor,
        w: &Tensor,
        eps: Real,
    ) -> Result<NodeId> {
        let v = Tensor::scalar(loss::weighted_soft_dice(self.value(p), g, w, eps)?);
        Ok(self.push(
            v,
            Op::WeightedDice { p, g: Arc::new(g.clone()), w: Arc::new(w.clone()), eps },
        ))
    }

    /// Reverse sweep from a scalar `target`. Gradients of every node that
    /// participates in the target are available via [`Tape::grad`]
    /// afterwards.
    pub fn backward(&mut self, target: NodeId) -> Result<()> {
        if self.value(target).len() != 1 {
            return Err(Error::NonScalarLoss {
                shape: self.value(target).shape().to_vec(),
            });
        }
        self.grads = (0..self.values.len()).map(|_| None).collect();
        self.grads[target.0] = Some(Tensor::scalar(1.0));

        for i in (0..=target.0).rev() {
            // Inputs of node i are strictly earlier on the tape, so the
            // split keeps the borrow checker happy without cloning grads.
            let (lo_vals, hi_vals) = self.values.split_at(i);
            let (lo_grads, hi_grads) = self.grads.split_at_mut(i);
            let Some(gy) = hi_grads[0].as_ref() else { continue };
            let val = |id: NodeId| &lo_vals[id.0];
            match &self.ops[i] {
                Op::Input => {}
                Op::Relu { x } => {
                    acc(&mut lo_grads[x.0], ops::d_relu(val(*x), gy));
                }
                Op::Sigmoid { x } => {
                    acc(&mut lo_grads[x.0], ops::d_sigmoid(&hi_vals[0], gy));
                }
                Op::Add { a, b } => {
                    acc(&mut lo_grads[a.0], gy.clone());
                    acc(&mut lo_grads[b.0], gy.clone());
                }
                Op::Mul { a, b } => {
                    let da = ops::mul(gy, val(*b)).expect("recorded shapes agree");
                    let db = ops::mul(gy, val(*a)).expect("recorded shapes agree");
                    acc(&mut lo_grads[a.0], da);
                    acc(&mut lo_grads[b.0], db);
                }
                Op::Scale { x, c } => {
                    acc(&mut lo_grads[x.0], ops::scale(gy, *c));
                }
                Op::Concat0 { a, b } => {
                    let (da, db, _) = ops::d_concat0(gy, val(*a).shape()[0]);
                    acc(&mut lo_grads[a.0], da);
                    acc(&mut lo_grads[b.0], db);
                }
                Op::Upsample2x { x } => {
                    acc(&mut lo_grads[x.0], ops::d_upsample2x(gy));
                }
                Op::Linear { x, w, b } => {
                    let (dx, dw, db) = ops::d_linear(val(*x), val(*w), gy);
                    acc(&mut lo_grads[x.0], dx);
                    acc(&mut lo_grads[w.0], dw);
                    acc(&mut lo_grads[b.0], db);
                }
                Op::PoolSpatial { x, mode } => {
                    acc(&mut lo_grads[x.0], ops::d_pool_spatial(val(*x), gy, *mode));
                }
                Op::PoolChannel { x, mode } => {
                    acc(&mut lo_grads[x.0], ops::d_pool_channel(val(*x), gy, *mode));
                }
                Op::SpatialMap { x, inv, .. } => {
                    let dx = ops::apply_spatial_map(gy, inv).expect("recorded shapes agree");
                    acc(&mut lo_grads[x.0], dx);
                }
                Op::ResidualGate { a, f } => {
                    let (da, df) = ops::d_residual_gate(val(*a), val(*f), gy);
                    acc(&mut lo_grads[a.0], da);
                    acc(&mut lo_grads[f.0], df);
                }
                Op::Reshape { x } => {
                    let dx = gy.reshaped(val(*x).shape()).expect("same element count");
                    acc(&mut lo_grads[x.0], dx);
                }
                Op::SumAll { x } => {
                    acc(&mut lo_grads[x.0], Tensor::full(val(*x).shape(), gy.item()));
                }
                Op::Conv3d { x, w, b, stride, padding } => {
                    let (dx, dw, db) =
                        conv::conv3d_backward(val(*x), val(*w), gy, *stride, *padding)
                            .expect("recorded shapes agree");
                    acc(&mut lo_grads[x.0], dx);
                    acc(&mut lo_grads[w.0], dw);
                    acc(&mut lo_grads[b.0], db);
                }
                Op::CeLoss { p, g } => {
                    let dp = ops::scale(
                        &loss::ce_grad(val(*p), g).expect("recorded shapes agree"),
                        gy.item(),
                    );
                    acc(&mut lo_grads[p.0], dp);
                }
                Op::WeightedDice { p, g, w, eps } => {
                    let dp = ops::scale(
                        &loss::weighted_soft_dice_grad(val(*p), g, w, *eps)
                            .expect("recorded shapes agree"),
                        gy.item(),
                    );
                    acc(&mut lo_grads[p.0], dp);
                }
            }
        }
        Ok(())
    }
}

fn acc(slot: &mut Option<Tensor>, t: Tensor) {
    match slot {
        Some(existing) => ops::accumulate(existing, &t),
        None => *slot = Some(t),
    }
}
