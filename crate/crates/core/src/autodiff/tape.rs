use super::conv::{self, Geom};
use super::scalar::{gemm, MatRef};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Lower clamp applied to inputs of `log`.
pub const LOG_FLOOR: f64 = 1e-12;
/// Probability clamp used by binary cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds with their attributes.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    /// `[x: B×In, w: In×Out, b: Out] -> B×Out`
    Affine,
    /// `[x: B×C×H×W, w: O×C×4×4, b: O] -> B×O×H/2×W/2`
    Conv2d,
    /// `[x: B×C×H×W, w: C×O×4×4, b: O] -> B×O×2H×2W`
    Conv2dTranspose,
    Relu,
    Sigmoid,
    Softmax { axis: usize },
    Add,
    Sub,
    Mul,
    Exp,
    /// Natural log of `max(x, LOG_FLOOR)`.
    Log,
    /// Subgradient at zero is zero.
    Abs,
    Scale(f64),
    AddScalar(f64),
    ReduceSum { axes: Vec<usize> },
    ReduceMean { axes: Vec<usize> },
    Concat { axis: usize },
    Reshape { shape: Vec<usize> },
    /// Elementwise Bernoulli negative log-likelihood `[probs, targets]`.
    BinaryCrossEntropy,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Affine => "affine",
            OpKind::Conv2d => "conv2d",
            OpKind::Conv2dTranspose => "conv2d_transpose",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Softmax { .. } => "softmax",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Abs => "abs",
            OpKind::Scale(_) => "scale",
            OpKind::AddScalar(_) => "add_scalar",
            OpKind::ReduceSum { .. } => "reduce_sum",
            OpKind::ReduceMean { .. } => "reduce_mean",
            OpKind::Concat { .. } => "concat",
            OpKind::Reshape { .. } => "reshape",
            OpKind::BinaryCrossEntropy => "binary_cross_entropy",
        }
    }
}

struct Node<S> {
    value: Tensor<S>,
    /// `None` for leaves.
    op: Option<OpKind>,
    inputs: Vec<Var>,
    cache: Option<Vec<S>>,
    needs_grad: bool,
}

/// Wengert list of executed operations, replayed in reverse by [`Tape::backward`].
///
/// Entries are appended in execution order, so every entry's inputs precede it.
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    consumed: bool,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Its gradient buffer is filled by [`Tape::backward`]
    /// when the tensor requires grad.
    pub fn leaf(&mut self, tensor: Tensor<S>) -> Var {
        self.push(tensor, None, vec![], None)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, mut tensor: Tensor<S>) -> Var {
        tensor.set_requires_grad(false);
        self.leaf(tensor)
    }

    /// Hash of the sign pattern at every non-differentiable point (relu and abs
    /// inputs). Two evaluations with equal signatures lie on the same smooth piece.
    pub fn kink_signature(&self) -> u64 {
        // FNV-1a over one bit per element
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for node in &self.nodes {
            if matches!(node.op, Some(OpKind::Relu) | Some(OpKind::Abs)) {
                for &v in self.nodes[node.inputs[0].0].value.data() {
                    h ^= (v > S::zero()) as u64 + 2 * (v < S::zero()) as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Whether gradients flow back through `v`.
    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[S] {
        self.nodes[v.0].value.data()
    }

    /// Gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.nodes[v.0].value.grad()
    }

    /// Moves a leaf tensor (with its gradient) out of the tape.
    pub fn take(&mut self, v: Var) -> Tensor<S> {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros(vec![0]))
    }

    fn push(&mut self, value: Tensor<S>, op: Option<OpKind>, inputs: Vec<Var>, cache: Option<Vec<S>>) -> Var {
        let needs_grad = match op {
            None => value.requires_grad(),
            Some(_) => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            inputs,
            cache,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Executes `kind` on `inputs` and records it.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let name = kind.name();
        let (data, shape, mut cache) = self.forward(&kind, inputs)?;
        if !inputs.iter().any(|v| self.nodes[v.0].needs_grad) {
            cache = None;
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: name, index });
        }
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Some(kind), inputs.to_vec(), cache))
    }

    fn expect_arity(kind: &OpKind, inputs: &[Var], n: usize) -> Result<()> {
        if inputs.len() != n {
            return Err(Error::invalid(
                kind.name(),
                format!("expected {n} inputs, got {}", inputs.len()),
            ));
        }
        Ok(())
    }

    fn forward(&self, kind: &OpKind, inputs: &[Var]) -> Result<(Vec<S>, Vec<usize>, Option<Vec<S>>)> {
        let name = kind.name();
        match kind {
            OpKind::Affine => {
                Self::expect_arity(kind, inputs, 3)?;
                let (x, w, b) = (self.value(inputs[0]), self.value(inputs[1]), self.value(inputs[2]));
                let (batch, fan_in, fan_out) = affine_dims(x.shape(), w.shape(), b.shape())?;
                let mut out = vec![S::zero(); batch * fan_out];
                for row in out.chunks_mut(fan_out) {
                    row.copy_from_slice(b.data());
                }
                gemm(
                    MatRef::new(x.data(), batch, fan_in),
                    MatRef::new(w.data(), fan_in, fan_out),
                    S::one(),
                    &mut out,
                );
                Ok((out, vec![batch, fan_out], None))
            }
            OpKind::Conv2d => {
                Self::expect_arity(kind, inputs, 3)?;
                let (x, w, b) = (self.value(inputs[0]), self.value(inputs[1]), self.value(inputs[2]));
                let (g, out_ch, batched) = conv_dims(x.shape(), w.shape(), b.shape())?;
                let fwd = conv::conv2d_forward(x.data(), g, w.data(), b.data(), out_ch);
                let (oh, ow) = (conv::conv_out_size(g.height), conv::conv_out_size(g.width));
                let shape = if batched {
                    vec![g.batch, out_ch, oh, ow]
                } else {
                    vec![out_ch, oh, ow]
                };
                Ok((fwd.out, shape, Some(fwd.col)))
            }
            OpKind::Conv2dTranspose => {
                Self::expect_arity(kind, inputs, 3)?;
                let (x, w, b) = (self.value(inputs[0]), self.value(inputs[1]), self.value(inputs[2]));
                let (in_ch, g, batched) = conv_transpose_dims(x.shape(), w.shape(), b.shape())?;
                let out = conv::conv_transpose_forward(x.data(), in_ch, g, w.data(), b.data());
                let shape = if batched {
                    vec![g.batch, g.channels, g.height, g.width]
                } else {
                    vec![g.channels, g.height, g.width]
                };
                Ok((out, shape, None))
            }
            OpKind::Relu | OpKind::Sigmoid | OpKind::Exp | OpKind::Log | OpKind::Abs | OpKind::Scale(_) | OpKind::AddScalar(_) => {
                Self::expect_arity(kind, inputs, 1)?;
                let x = self.value(inputs[0]);
                let f: Box<dyn Fn(S) -> S> = match kind {
                    OpKind::Relu => Box::new(|v: S| if v > S::zero() { v } else { S::zero() }),
                    OpKind::Sigmoid => Box::new(sigmoid),
                    OpKind::Exp => Box::new(|v: S| v.exp()),
                    OpKind::Log => {
                        let floor = S::from_f64_lossy(LOG_FLOOR);
                        Box::new(move |v: S| v.max(floor).ln())
                    }
                    OpKind::Abs => Box::new(|v: S| v.abs()),
                    OpKind::Scale(c) => {
                        let c = S::from_f64_lossy(*c);
                        Box::new(move |v: S| v * c)
                    }
                    OpKind::AddScalar(c) => {
                        let c = S::from_f64_lossy(*c);
                        Box::new(move |v: S| v + c)
                    }
                    _ => unreachable!(),
                };
                Ok((x.data().iter().map(|&v| f(v)).collect(), x.shape().to_vec(), None))
            }
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::BinaryCrossEntropy => {
                Self::expect_arity(kind, inputs, 2)?;
                let (a, b) = (self.value(inputs[0]), self.value(inputs[1]));
                if a.shape() != b.shape() {
                    return Err(Error::ShapeMismatch {
                        op: name,
                        lhs: a.shape().to_vec(),
                        rhs: b.shape().to_vec(),
                    });
                }
                let it = a.data().iter().zip(b.data());
                let data: Vec<S> = match kind {
                    OpKind::Add => it.map(|(&x, &y)| x + y).collect(),
                    OpKind::Sub => it.map(|(&x, &y)| x - y).collect(),
                    OpKind::Mul => it.map(|(&x, &y)| x * y).collect(),
                    OpKind::BinaryCrossEntropy => it.map(|(&p, &t)| bce(p, t)).collect(),
                    _ => unreachable!(),
                };
                Ok((data, a.shape().to_vec(), None))
            }
            OpKind::Softmax { axis } => {
                Self::expect_arity(kind, inputs, 1)?;
                let x = self.value(inputs[0]);
                let (outer, len, inner) = split_axis(name, x.shape(), *axis)?;
                Ok((softmax(x.data(), outer, len, inner), x.shape().to_vec(), None))
            }
            OpKind::ReduceSum { axes } | OpKind::ReduceMean { axes } => {
                Self::expect_arity(kind, inputs, 1)?;
                let x = self.value(inputs[0]);
                let plan = ReducePlan::new(name, x.shape(), axes)?;
                let mut out = vec![S::zero(); plan.out_len];
                plan.for_each(|i, o| out[o] = out[o] + x.data()[i]);
                if matches!(kind, OpKind::ReduceMean { .. }) {
                    let inv = S::one() / S::from_usize(plan.group).unwrap();
                    out.iter_mut().for_each(|v| *v = *v * inv);
                }
                Ok((out, plan.out_shape, None))
            }
            OpKind::Concat { axis } => {
                if inputs.is_empty() {
                    return Err(Error::invalid(name, "no inputs"));
                }
                let first = self.value(inputs[0]).shape().to_vec();
                if *axis >= first.len() {
                    return Err(Error::invalid(name, format!("axis {axis} out of range for {first:?}")));
                }
                let mut out_shape = first.clone();
                out_shape[*axis] = 0;
                for &v in inputs {
                    let s = self.shape(v);
                    let compatible = s.len() == first.len()
                        && s.iter().zip(&first).enumerate().all(|(d, (a, b))| d == *axis || a == b);
                    if !compatible {
                        return Err(Error::ShapeMismatch {
                            op: name,
                            lhs: first.clone(),
                            rhs: s.to_vec(),
                        });
                    }
                    out_shape[*axis] += s[*axis];
                }
                let outer: usize = first[..*axis].iter().product();
                let inner: usize = first[axis + 1..].iter().product();
                let mut out = Vec::with_capacity(out_shape.iter().product());
                for o in 0..outer {
                    for &v in inputs {
                        let chunk = self.shape(v)[*axis] * inner;
                        out.extend_from_slice(&self.data(v)[o * chunk..][..chunk]);
                    }
                }
                Ok((out, out_shape, None))
            }
            OpKind::Reshape { shape } => {
                Self::expect_arity(kind, inputs, 1)?;
                let x = self.value(inputs[0]);
                if shape.iter().product::<usize>() != x.numel() {
                    return Err(Error::ShapeMismatch {
                        op: name,
                        lhs: x.shape().to_vec(),
                        rhs: shape.clone(),
                    });
                }
                Ok((x.data().to_vec(), shape.clone(), None))
            }
        }
    }

    /// Reverse-mode sweep from a scalar `loss`, accumulating into the
    /// gradient buffers of every leaf that requires grad.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let shape = self.shape(loss).to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        self.consumed = true;

        let mut adjoints: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        adjoints[loss.0] = Some(vec![S::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = adjoints[idx].take() else { continue };
            let node = &self.nodes[idx];
            let Some(kind) = node.op.clone() else {
                // leaf: hand the adjoint back to it
                adjoints[idx] = Some(g);
                continue;
            };
            if !node.needs_grad {
                continue;
            }
            let input_grads = self.vjp(idx, &kind, &g);
            for (input, grad) in self.nodes[idx].inputs.clone().into_iter().zip(input_grads) {
                let Some(grad) = grad else { continue };
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                match adjoints[input.0].as_mut() {
                    Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, &d)| *a = *a + d),
                    None => adjoints[input.0] = Some(grad),
                }
            }
        }

        for (node, adj) in self.nodes.iter_mut().zip(adjoints) {
            if node.op.is_none() && node.needs_grad {
                if let Some(adj) = adj {
                    node.value.accumulate_grad(&adj);
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian product of node `idx` for output adjoint `g`.
    fn vjp(&self, idx: usize, kind: &OpKind, g: &[S]) -> Vec<Option<Vec<S>>> {
        let node = &self.nodes[idx];
        let ins: Vec<&Tensor<S>> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let y = node.value.data();
        let wants = |i: usize| self.nodes[node.inputs[i].0].needs_grad;
        match kind {
            OpKind::Affine => {
                let (x, w) = (ins[0], ins[1]);
                let (batch, fan_in, fan_out) = (x.shape()[0], x.shape()[1], w.shape()[1]);
                let dx = wants(0).then(|| {
                    let mut dx = vec![S::zero(); batch * fan_in];
                    gemm(
                        MatRef::new(g, batch, fan_out),
                        MatRef::new(w.data(), fan_in, fan_out).t(),
                        S::zero(),
                        &mut dx,
                    );
                    dx
                });
                let dw = wants(1).then(|| {
                    let mut dw = vec![S::zero(); fan_in * fan_out];
                    gemm(
                        MatRef::new(x.data(), batch, fan_in).t(),
                        MatRef::new(g, batch, fan_out),
                        S::zero(),
                        &mut dw,
                    );
                    dw
                });
                let db = wants(2).then(|| {
                    let mut db = vec![S::zero(); fan_out];
                    for row in g.chunks(fan_out) {
                        db.iter_mut().zip(row).for_each(|(a, &r)| *a = *a + r);
                    }
                    db
                });
                vec![dx, dw, db]
            }
            OpKind::Conv2d => {
                let (g_geom, out_ch, _) =
                    conv_dims(ins[0].shape(), ins[1].shape(), ins[2].shape()).expect("validated in forward");
                let col = node.cache.as_ref().expect("conv2d caches its patch matrix");
                let grads = conv::conv2d_backward(g, col, g_geom, ins[1].data(), out_ch);
                vec![
                    wants(0).then_some(grads.dx),
                    wants(1).then_some(grads.dw),
                    wants(2).then_some(grads.db),
                ]
            }
            OpKind::Conv2dTranspose => {
                let (in_ch, geom, _) =
                    conv_transpose_dims(ins[0].shape(), ins[1].shape(), ins[2].shape()).expect("validated in forward");
                let grads = conv::conv_transpose_backward(g, ins[0].data(), in_ch, geom, ins[1].data());
                vec![
                    wants(0).then_some(grads.dx),
                    wants(1).then_some(grads.dw),
                    wants(2).then_some(grads.db),
                ]
            }
            OpKind::Relu => {
                let x = ins[0].data();
                vec![Some(
                    g.iter()
                        .zip(x)
                        .map(|(&g, &x)| if x > S::zero() { g } else { S::zero() })
                        .collect(),
                )]
            }
            OpKind::Sigmoid => vec![Some(g.iter().zip(y).map(|(&g, &y)| g * y * (S::one() - y)).collect())],
            OpKind::Exp => vec![Some(g.iter().zip(y).map(|(&g, &y)| g * y).collect())],
            OpKind::Log => {
                let floor = S::from_f64_lossy(LOG_FLOOR);
                vec![Some(g.iter().zip(ins[0].data()).map(|(&g, &x)| g / x.max(floor)).collect())]
            }
            OpKind::Abs => vec![Some(
                g.iter()
                    .zip(ins[0].data())
                    .map(|(&g, &x)| {
                        if x > S::zero() {
                            g
                        } else if x < S::zero() {
                            -g
                        } else {
                            S::zero()
                        }
                    })
                    .collect(),
            )],
            OpKind::Scale(c) => {
                let c = S::from_f64_lossy(*c);
                vec![Some(g.iter().map(|&g| g * c).collect())]
            }
            OpKind::AddScalar(_) | OpKind::Reshape { .. } => vec![Some(g.to_vec())],
            OpKind::Add => vec![wants(0).then(|| g.to_vec()), wants(1).then(|| g.to_vec())],
            OpKind::Sub => vec![wants(0).then(|| g.to_vec()), wants(1).then(|| g.iter().map(|&v| -v).collect())],
            OpKind::Mul => {
                let (a, b) = (ins[0].data(), ins[1].data());
                vec![
                    wants(0).then(|| g.iter().zip(b).map(|(&g, &b)| g * b).collect()),
                    wants(1).then(|| g.iter().zip(a).map(|(&g, &a)| g * a).collect()),
                ]
            }
            OpKind::BinaryCrossEntropy => {
                let (p, t) = (ins[0].data(), ins[1].data());
                vec![
                    wants(0).then(|| {
                        g.iter()
                            .zip(p.iter().zip(t))
                            .map(|(&g, (&p, &t))| {
                                let pc = clamp_prob(p);
                                g * (pc - t) / (pc * (S::one() - pc))
                            })
                            .collect()
                    }),
                    wants(1).then(|| {
                        g.iter()
                            .zip(p)
                            .map(|(&g, &p)| {
                                let pc = clamp_prob(p);
                                g * ((S::one() - pc).ln() - pc.ln())
                            })
                            .collect()
                    }),
                ]
            }
            OpKind::Softmax { axis } => {
                let (outer, len, inner) = split_axis("softmax", node.value.shape(), *axis).expect("validated");
                let mut dx = vec![S::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * len + k) * inner + i;
                        let dot: S = (0..len).map(|k| g[at(k)] * y[at(k)]).sum();
                        for k in 0..len {
                            dx[at(k)] = y[at(k)] * (g[at(k)] - dot);
                        }
                    }
                }
                vec![Some(dx)]
            }
            OpKind::ReduceSum { axes } | OpKind::ReduceMean { axes } => {
                let plan = ReducePlan::new("reduce", ins[0].shape(), axes).expect("validated");
                let scale = if matches!(kind, OpKind::ReduceMean { .. }) {
                    S::one() / S::from_usize(plan.group).unwrap()
                } else {
                    S::one()
                };
                let mut dx = vec![S::zero(); ins[0].numel()];
                plan.for_each(|i, o| dx[i] = g[o] * scale);
                vec![Some(dx)]
            }
            OpKind::Concat { axis } => {
                let outer: usize = node.value.shape()[..*axis].iter().product();
                let inner: usize = node.value.shape()[axis + 1..].iter().product();
                let mut grads: Vec<Vec<S>> = ins.iter().map(|t| Vec::with_capacity(t.numel())).collect();
                let mut offset = 0;
                for _ in 0..outer {
                    for (k, t) in ins.iter().enumerate() {
                        let chunk = t.shape()[*axis] * inner;
                        grads[k].extend_from_slice(&g[offset..offset + chunk]);
                        offset += chunk;
                    }
                }
                grads
                    .into_iter()
                    .enumerate()
                    .map(|(k, gk)| wants(k).then_some(gk))
                    .collect()
            }
        }
    }

    // Convenience wrappers. Each records exactly one tape entry.

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Affine, &[x, w, b])
    }
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Conv2d, &[x, w, b])
    }
    pub fn conv2d_transpose(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Conv2dTranspose, &[x, w, b])
    }
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Relu, &[x])
    }
    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Sigmoid, &[x])
    }
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.apply(OpKind::Softmax { axis }, &[x])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Mul, &[a, b])
    }
    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Exp, &[x])
    }
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Log, &[x])
    }
    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Abs, &[x])
    }
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.apply(OpKind::Scale(c), &[x])
    }
    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.apply(OpKind::AddScalar(c), &[x])
    }
    pub fn reduce_sum(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.apply(OpKind::ReduceSum { axes: axes.to_vec() }, &[x])
    }
    pub fn reduce_mean(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.apply(OpKind::ReduceMean { axes: axes.to_vec() }, &[x])
    }
    /// Sum over every axis, producing a scalar.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        self.reduce_sum(x, &axes)
    }
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        self.apply(OpKind::Concat { axis }, xs)
    }
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.apply(OpKind::Reshape { shape: shape.to_vec() }, &[x])
    }
    pub fn binary_cross_entropy(&mut self, probs: Var, targets: Var) -> Result<Var> {
        self.apply(OpKind::BinaryCrossEntropy, &[probs, targets])
    }
}

fn sigmoid<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

fn clamp_prob<S: Scalar>(p: S) -> S {
    let eps = S::from_f64_lossy(BCE_EPS);
    p.max(eps).min(S::one() - eps)
}

fn bce<S: Scalar>(p: S, t: S) -> S {
    let pc = clamp_prob(p);
    -(t * pc.ln() + (S::one() - t) * (S::one() - pc).ln())
}

/// Max-subtracted softmax along the middle axis of an `outer × len × inner` view.
pub(crate) fn softmax<S: Scalar>(x: &[S], outer: usize, len: usize, inner: usize) -> Vec<S> {
    let mut y = vec![S::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let max = (0..len).map(|k| x[at(k)]).fold(S::neg_infinity(), S::max);
            let mut total = S::zero();
            for k in 0..len {
                let e = (x[at(k)] - max).exp();
                y[at(k)] = e;
                total = total + e;
            }
            for k in 0..len {
                y[at(k)] = y[at(k)] / total;
            }
        }
    }
    y
}

fn split_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::invalid(op, format!("axis {axis} out of range for {shape:?}")));
    }
    Ok((
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    ))
}

fn affine_dims(x: &[usize], w: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    if x.len() != 2 || w.len() != 2 || x[1] != w[0] {
        return Err(Error::ShapeMismatch {
            op: "affine",
            lhs: x.to_vec(),
            rhs: w.to_vec(),
        });
    }
    if b != [w[1]] {
        return Err(Error::ShapeMismatch {
            op: "affine",
            lhs: w.to_vec(),
            rhs: b.to_vec(),
        });
    }
    Ok((x[0], x[1], w[1]))
}

fn image_dims(op: &'static str, x: &[usize]) -> Result<(usize, usize, usize, usize, bool)> {
    match *x {
        [b, c, h, w] => Ok((b, c, h, w, true)),
        [c, h, w] => Ok((1, c, h, w, false)),
        _ => Err(Error::invalid(op, format!("expected C×H×W or B×C×H×W input, got {x:?}"))),
    }
}

fn conv_dims(x: &[usize], w: &[usize], b: &[usize]) -> Result<(Geom, usize, bool)> {
    let (batch, channels, height, width, batched) = image_dims("conv2d", x)?;
    if height % 2 != 0 || width % 2 != 0 || height < 2 || width < 2 {
        return Err(Error::invalid("conv2d", format!("spatial dims must be even, got {x:?}")));
    }
    if w.len() != 4 || w[1] != channels || w[2] != conv::KERNEL || w[3] != conv::KERNEL {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            lhs: x.to_vec(),
            rhs: w.to_vec(),
        });
    }
    if b != [w[0]] {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            lhs: w.to_vec(),
            rhs: b.to_vec(),
        });
    }
    Ok((
        Geom {
            batch,
            channels,
            height,
            width,
        },
        w[0],
        batched,
    ))
}

/// Returns input channels and the geometry of the (upsampled) output.
fn conv_transpose_dims(x: &[usize], w: &[usize], b: &[usize]) -> Result<(usize, Geom, bool)> {
    let (batch, channels, height, width, batched) = image_dims("conv2d_transpose", x)?;
    if w.len() != 4 || w[0] != channels || w[2] != conv::KERNEL || w[3] != conv::KERNEL {
        return Err(Error::ShapeMismatch {
            op: "conv2d_transpose",
            lhs: x.to_vec(),
            rhs: w.to_vec(),
        });
    }
    if b != [w[1]] {
        return Err(Error::ShapeMismatch {
            op: "conv2d_transpose",
            lhs: w.to_vec(),
            rhs: b.to_vec(),
        });
    }
    Ok((
        channels,
        Geom {
            batch,
            channels: w[1],
            height: height * 2,
            width: width * 2,
        },
        batched,
    ))
}

/// Maps input flat indices to output flat indices of an axis reduction.
struct ReducePlan {
    in_shape: Vec<usize>,
    out_strides: Vec<usize>,
    out_shape: Vec<usize>,
    out_len: usize,
    group: usize,
}

impl ReducePlan {
    fn new(op: &'static str, shape: &[usize], axes: &[usize]) -> Result<Self> {
        let mut reduced = vec![false; shape.len()];
        for &a in axes {
            if a >= shape.len() {
                return Err(Error::invalid(op, format!("axis {a} out of range for {shape:?}")));
            }
            reduced[a] = true;
        }
        let out_shape: Vec<usize> = shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| !r)
            .map(|(&d, _)| d)
            .collect();
        let mut out_strides = vec![0; shape.len()];
        let mut stride = 1;
        for d in (0..shape.len()).rev() {
            if !reduced[d] {
                out_strides[d] = stride;
                stride *= shape[d];
            }
        }
        let group = shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| r)
            .map(|(&d, _)| d)
            .product();
        Ok(ReducePlan {
            in_shape: shape.to_vec(),
            out_len: out_shape.iter().product(),
            out_shape,
            out_strides,
            group,
        })
    }

    fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        let total: usize = self.in_shape.iter().product();
        let rank = self.in_shape.len();
        let mut idx = vec![0usize; rank];
        let mut out = 0usize;
        for i in 0..total {
            f(i, out);
            for d in (0..rank).rev() {
                idx[d] += 1;
                out += self.out_strides[d];
                if idx[d] < self.in_shape[d] {
                    break;
                }
                out -= self.out_strides[d] * idx[d];
                idx[d] = 0;
            }
        }
    }
}
