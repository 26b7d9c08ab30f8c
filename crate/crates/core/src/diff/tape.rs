use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::kernels;
use super::shape::{Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The closed set of differentiable operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Neg,
    Exp,
    Log,
    Log1p,
    Sigmoid,
    Tanh,
    Softplus,
    /// Fused `ln(softplus(x))`.
    LogSoftplus,
    Max2,
    Min2,
    Relu,
    SumAxis,
    MaxAxis,
    MinAxis,
    MeanAxis,
    LogSumExp2,
    LogSumExpAxis,
    Log1mExp,
    Scale,
    BroadcastTo,
    Reshape,
    IndexSelect,
}

impl Primitive {
    pub const ALL: [Primitive; 25] = [
        Primitive::Add,
        Primitive::Sub,
        Primitive::Mul,
        Primitive::Neg,
        Primitive::Exp,
        Primitive::Log,
        Primitive::Log1p,
        Primitive::Sigmoid,
        Primitive::Tanh,
        Primitive::Softplus,
        Primitive::LogSoftplus,
        Primitive::Max2,
        Primitive::Min2,
        Primitive::Relu,
        Primitive::SumAxis,
        Primitive::MaxAxis,
        Primitive::MinAxis,
        Primitive::MeanAxis,
        Primitive::LogSumExp2,
        Primitive::LogSumExpAxis,
        Primitive::Log1mExp,
        Primitive::Scale,
        Primitive::BroadcastTo,
        Primitive::Reshape,
        Primitive::IndexSelect,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Neg => "neg",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Log1p => "log1p",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Tanh => "tanh",
            Primitive::Softplus => "softplus",
            Primitive::LogSoftplus => "log_softplus",
            Primitive::Max2 => "max2",
            Primitive::Min2 => "min2",
            Primitive::Relu => "relu",
            Primitive::SumAxis => "sum_axis",
            Primitive::MaxAxis => "max_axis",
            Primitive::MinAxis => "min_axis",
            Primitive::MeanAxis => "mean_axis",
            Primitive::LogSumExp2 => "logsumexp2",
            Primitive::LogSumExpAxis => "logsumexp_axis",
            Primitive::Log1mExp => "log1mexp",
            Primitive::Scale => "scale",
            Primitive::BroadcastTo => "broadcast_to",
            Primitive::Reshape => "reshape",
            Primitive::IndexSelect => "index_select",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Primitive::Add
            | Primitive::Sub
            | Primitive::Mul
            | Primitive::Max2
            | Primitive::Min2
            | Primitive::LogSumExp2 => 2,
            _ => 1,
        }
    }

    fn is_elementwise_unary(self) -> bool {
        matches!(
            self,
            Primitive::Neg
                | Primitive::Exp
                | Primitive::Log
                | Primitive::Log1p
                | Primitive::Sigmoid
                | Primitive::Tanh
                | Primitive::Softplus
                | Primitive::LogSoftplus
                | Primitive::Relu
                | Primitive::Log1mExp
                | Primitive::Scale
        )
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Primitive {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Primitive::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::UnknownPrimitive(s.to_string()))
    }
}

/// Non-array arguments of a primitive.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Attrs {
    pub axis: Option<usize>,
    pub scalar: Option<f64>,
    pub shape: Option<Shape>,
    pub indices: Option<Vec<usize>>,
}

impl Attrs {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn axis(axis: usize) -> Self {
        Self {
            axis: Some(axis),
            ..Self::default()
        }
    }

    pub fn scalar(c: f64) -> Self {
        Self {
            scalar: Some(c),
            ..Self::default()
        }
    }

    pub fn shape(shape: impl Into<Shape>) -> Self {
        Self {
            shape: Some(shape.into()),
            ..Self::default()
        }
    }

    pub fn select(axis: usize, indices: Vec<usize>) -> Self {
        Self {
            axis: Some(axis),
            indices: Some(indices),
            ..Self::default()
        }
    }
}

struct Node {
    value: Tensor,
    primitive: Option<Primitive>,
    attrs: Attrs,
    parents: Vec<Var>,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Leaf gradients produced by one [`Tape::backward`] sweep.
#[derive(Debug, Clone, Default)]
pub struct Gradients(BTreeMap<Var, Tensor>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0.get(&v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Var, &Tensor)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Upstream gradient times local derivative, where a zero on either side
/// wins over an infinity on the other. This is what makes `relu` at 0 and the
/// BCE cap contribute exactly no gradient.
#[inline]
fn chain(g: f64, d: f64) -> f64 {
    if g == 0.0 || d == 0.0 {
        0.0
    } else {
        g * d
    }
}

/// Splits `shape` around `axis` into (outer, len, inner).
fn axis_split(shape: &Shape, axis: usize) -> (usize, usize, usize) {
    let dims = shape.dims();
    let outer = dims[..axis].iter().product();
    let inner = dims[axis + 1..].iter().product();
    (outer, dims[axis], inner)
}

fn remove_axis(shape: &Shape, axis: usize) -> Shape {
    let mut dims = shape.dims().to_vec();
    dims.remove(axis);
    Shape::new(dims)
}

fn unary_forward(p: Primitive, x: f64, c: f64) -> f64 {
    match p {
        Primitive::Neg => -x,
        Primitive::Exp => x.exp(),
        Primitive::Log => x.ln(),
        Primitive::Log1p => x.ln_1p(),
        Primitive::Sigmoid => kernels::sigmoid(x),
        Primitive::Tanh => x.tanh(),
        Primitive::Softplus => kernels::softplus(x),
        Primitive::LogSoftplus => kernels::log_softplus(x),
        Primitive::Relu => x.max(0.0),
        Primitive::Log1mExp => kernels::log1mexp(x),
        Primitive::Scale => c * x,
        _ => unreachable!("{p} is not unary"),
    }
}

/// d out / d x given input `x` and output `y`.
fn unary_derivative(p: Primitive, x: f64, y: f64, c: f64) -> f64 {
    match p {
        Primitive::Neg => -1.0,
        Primitive::Exp => y,
        Primitive::Log => 1.0 / x,
        Primitive::Log1p => 1.0 / (1.0 + x),
        Primitive::Sigmoid => y * (1.0 - y),
        Primitive::Tanh => 1.0 - y * y,
        Primitive::Softplus => -(-y).exp_m1(),
        Primitive::LogSoftplus => kernels::log_softplus_grad_from(x, y),
        // The derivative at exactly 0 is taken as 0.
        Primitive::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Primitive::Log1mExp => kernels::log1mexp_grad(x),
        Primitive::Scale => c,
        _ => unreachable!("{p} is not unary"),
    }
}

fn binary_forward(p: Primitive, a: f64, b: f64) -> f64 {
    match p {
        Primitive::Add => a + b,
        Primitive::Sub => a - b,
        Primitive::Mul => a * b,
        Primitive::Max2 => a.max(b),
        Primitive::Min2 => a.min(b),
        Primitive::LogSumExp2 => kernels::logsumexp2(a, b),
        _ => unreachable!("{p} is not binary"),
    }
}

/// (d out / d a, d out / d b). Ties of max2/min2 split the gradient evenly.
fn binary_derivative(p: Primitive, a: f64, b: f64, y: f64) -> (f64, f64) {
    match p {
        Primitive::Add => (1.0, 1.0),
        Primitive::Sub => (1.0, -1.0),
        Primitive::Mul => (b, a),
        Primitive::Max2 => {
            if a > b {
                (1.0, 0.0)
            } else if a < b {
                (0.0, 1.0)
            } else {
                (0.5, 0.5)
            }
        }
        Primitive::Min2 => {
            if a < b {
                (1.0, 0.0)
            } else if a > b {
                (0.0, 1.0)
            } else {
                (0.5, 0.5)
            }
        }
        Primitive::LogSumExp2 => {
            if y == f64::NEG_INFINITY {
                (0.5, 0.5)
            } else {
                ((a - y).exp(), (b - y).exp())
            }
        }
        _ => unreachable!("{p} is not binary"),
    }
}

/// A define-by-run differentiation tape.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(
        &mut self,
        value: Tensor,
        primitive: Option<Primitive>,
        attrs: Attrs,
        parents: Vec<Var>,
        requires_grad: bool,
    ) -> Var {
        self.nodes.push(Node {
            value,
            primitive,
            attrs,
            parents,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, None, Attrs::none(), Vec::new(), requires_grad)
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(Tensor::scalar(x))
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &Shape {
        self.node(v).value.shape()
    }

    /// Gradient accumulated by all `backward` calls since the last
    /// [`Tape::zero_grad`].
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.node(v).grad.as_ref()
    }

    pub fn primitive(&self, v: Var) -> Option<Primitive> {
        self.node(v).primitive
    }

    pub fn parents(&self, v: Var) -> &[Var] {
        &self.node(v).parents
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Applies `primitive` to `inputs`, recording it for backward.
    pub fn apply(&mut self, primitive: Primitive, inputs: &[Var], attrs: &Attrs) -> Result<Var> {
        if inputs.len() != primitive.arity() {
            return Err(Error::invalid(format!(
                "{primitive} takes {} input(s), got {}",
                primitive.arity(),
                inputs.len()
            )));
        }
        for &v in inputs {
            if v.0 >= self.nodes.len() {
                return Err(Error::IndexOutOfRange {
                    index: v.0,
                    len: self.nodes.len(),
                });
            }
        }
        let value = self.forward(primitive, inputs, attrs)?;
        let requires_grad = inputs.iter().any(|&v| self.node(v).requires_grad);
        Ok(self.push(value, Some(primitive), attrs.clone(), inputs.to_vec(), requires_grad))
    }

    /// Same as [`Tape::apply`] with the primitive given by name.
    pub fn apply_named(&mut self, name: &str, inputs: &[Var], attrs: &Attrs) -> Result<Var> {
        self.apply(name.parse()?, inputs, attrs)
    }

    fn forward(&self, p: Primitive, inputs: &[Var], attrs: &Attrs) -> Result<Tensor> {
        let x = self.value(inputs[0]);
        if p.is_elementwise_unary() {
            let c = if p == Primitive::Scale {
                attrs.scalar.ok_or(Error::MissingAttr {
                    op: "scale",
                    attr: "scalar",
                })?
            } else {
                0.0
            };
            let data = x.data().iter().map(|&v| unary_forward(p, v, c)).collect();
            return Ok(Tensor::from_parts(data, x.shape().clone()));
        }
        match p {
            Primitive::Add
            | Primitive::Sub
            | Primitive::Mul
            | Primitive::Max2
            | Primitive::Min2
            | Primitive::LogSumExp2 => {
                let y = self.value(inputs[1]);
                let out = x.shape().broadcast_with(y.shape(), p.name())?;
                if x.shape() == y.shape() {
                    let data = x
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&a, &b)| binary_forward(p, a, b))
                        .collect();
                    return Ok(Tensor::from_parts(data, out));
                }
                let ia = x.shape().broadcast_index_map(&out);
                let ib = y.shape().broadcast_index_map(&out);
                let data = ia
                    .iter()
                    .zip(&ib)
                    .map(|(&i, &j)| binary_forward(p, x.data()[i], y.data()[j]))
                    .collect();
                Ok(Tensor::from_parts(data, out))
            }
            Primitive::SumAxis
            | Primitive::MaxAxis
            | Primitive::MinAxis
            | Primitive::MeanAxis
            | Primitive::LogSumExpAxis => {
                let axis = self.checked_axis(p, x.shape(), attrs)?;
                let (outer, len, inner) = axis_split(x.shape(), axis);
                let mut data = Vec::with_capacity(outer * inner);
                let xd = x.data();
                for o in 0..outer {
                    for i in 0..inner {
                        let slice = (0..len).map(|k| xd[(o * len + k) * inner + i]);
                        data.push(reduce(p, slice, len));
                    }
                }
                Ok(Tensor::from_parts(data, remove_axis(x.shape(), axis)))
            }
            Primitive::BroadcastTo => {
                let target = attrs.shape.as_ref().ok_or(Error::MissingAttr {
                    op: "broadcast_to",
                    attr: "shape",
                })?;
                x.shape().check_expands_to(target)?;
                let map = x.shape().broadcast_index_map(target);
                let data = map.iter().map(|&i| x.data()[i]).collect();
                Ok(Tensor::from_parts(data, target.clone()))
            }
            Primitive::Reshape => {
                let target = attrs.shape.as_ref().ok_or(Error::MissingAttr {
                    op: "reshape",
                    attr: "shape",
                })?;
                if target.numel() != x.numel() {
                    return Err(Error::ShapeMismatch {
                        op: "reshape",
                        lhs: x.shape().clone(),
                        rhs: target.clone(),
                    });
                }
                Ok(Tensor::from_parts(x.data().to_vec(), target.clone()))
            }
            Primitive::IndexSelect => {
                let axis = self.checked_axis(p, x.shape(), attrs)?;
                let indices = attrs.indices.as_ref().ok_or(Error::MissingAttr {
                    op: "index_select",
                    attr: "indices",
                })?;
                let (outer, len, inner) = axis_split(x.shape(), axis);
                if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
                    return Err(Error::IndexOutOfRange { index: bad, len });
                }
                let mut data = Vec::with_capacity(outer * indices.len() * inner);
                for o in 0..outer {
                    for &k in indices {
                        let start = (o * len + k) * inner;
                        data.extend_from_slice(&x.data()[start..start + inner]);
                    }
                }
                let mut dims = x.shape().dims().to_vec();
                dims[axis] = indices.len();
                Ok(Tensor::from_parts(data, Shape::new(dims)))
            }
            _ => unreachable!(),
        }
    }

    fn checked_axis(&self, p: Primitive, shape: &Shape, attrs: &Attrs) -> Result<usize> {
        let axis = attrs.axis.ok_or(Error::MissingAttr {
            op: p.name(),
            attr: "axis",
        })?;
        if axis >= shape.rank() {
            return Err(Error::invalid(format!(
                "{p}: axis {axis} out of range for shape {shape}"
            )));
        }
        Ok(axis)
    }

    /// Reverse sweep from a scalar `root`. Gradients are added into every
    /// `requires_grad` node reached, so calling this twice without
    /// [`Tape::zero_grad`] doubles them. The returned map holds only this
    /// sweep's contributions to leaf nodes.
    pub fn backward(&mut self, root: Var) -> Result<Gradients> {
        let root_shape = self.shape(root);
        if !root_shape.is_scalar() {
            return Err(Error::NonScalarRoot(root_shape.clone()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0]);
        let mut out = BTreeMap::new();
        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Some(p) = self.nodes[i].primitive {
                let node = &self.nodes[i];
                let contributions = self.vjp(p, node, &g);
                for (parent, cg) in node.parents.iter().zip(contributions) {
                    let Some(cg) = cg else { continue };
                    match &mut adj[parent.0] {
                        Some(acc) => acc.iter_mut().zip(&cg).for_each(|(a, b)| *a += b),
                        slot => *slot = Some(cg),
                    }
                }
            }
            let node = &mut self.nodes[i];
            if node.primitive.is_none() {
                out.insert(Var(i), Tensor::from_parts(g.clone(), node.value.shape().clone()));
            }
            match &mut node.grad {
                Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot => *slot = Some(Tensor::from_parts(g, node.value.shape().clone())),
            }
        }
        Ok(Gradients(out))
    }

    /// Vector-Jacobian products of one node, one entry per parent (`None` for
    /// parents that do not need a gradient).
    fn vjp(&self, p: Primitive, node: &Node, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let wants = |k: usize| self.node(node.parents[k]).requires_grad;
        let x = self.value(node.parents[0]);
        let y = &node.value;
        if p.is_elementwise_unary() {
            let c = node.attrs.scalar.unwrap_or(0.0);
            let gx = x
                .data()
                .iter()
                .zip(y.data())
                .zip(g)
                .map(|((&xv, &yv), &gv)| chain(gv, unary_derivative(p, xv, yv, c)))
                .collect();
            return vec![Some(gx)];
        }
        match p {
            Primitive::Add
            | Primitive::Sub
            | Primitive::Mul
            | Primitive::Max2
            | Primitive::Min2
            | Primitive::LogSumExp2 => {
                let b = self.value(node.parents[1]);
                let out = y.shape();
                if x.shape() == out && b.shape() == out {
                    let (xd, bd, yd) = (x.data(), b.data(), y.data());
                    let mut ga = wants(0).then(|| Vec::with_capacity(g.len()));
                    let mut gb = wants(1).then(|| Vec::with_capacity(g.len()));
                    for k in 0..g.len() {
                        let (da, db) = binary_derivative(p, xd[k], bd[k], yd[k]);
                        if let Some(ga) = &mut ga {
                            ga.push(chain(g[k], da));
                        }
                        if let Some(gb) = &mut gb {
                            gb.push(chain(g[k], db));
                        }
                    }
                    return vec![ga, gb];
                }
                let ia = x.shape().broadcast_index_map(out);
                let ib = b.shape().broadcast_index_map(out);
                let mut ga = wants(0).then(|| vec![0.0; x.numel()]);
                let mut gb = wants(1).then(|| vec![0.0; b.numel()]);
                for k in 0..out.numel() {
                    let (av, bv) = (x.data()[ia[k]], b.data()[ib[k]]);
                    let (da, db) = binary_derivative(p, av, bv, y.data()[k]);
                    if let Some(ga) = &mut ga {
                        ga[ia[k]] += chain(g[k], da);
                    }
                    if let Some(gb) = &mut gb {
                        gb[ib[k]] += chain(g[k], db);
                    }
                }
                vec![ga, gb]
            }
            Primitive::SumAxis
            | Primitive::MaxAxis
            | Primitive::MinAxis
            | Primitive::MeanAxis
            | Primitive::LogSumExpAxis => {
                let axis = node.attrs.axis.expect("validated in forward");
                let (outer, len, inner) = axis_split(x.shape(), axis);
                let xd = x.data();
                let mut gx = vec![0.0; x.numel()];
                for o in 0..outer {
                    for i in 0..inner {
                        let r = o * inner + i;
                        let (gr, yr) = (g[r], y.data()[r]);
                        let at = |k: usize| (o * len + k) * inner + i;
                        match p {
                            Primitive::SumAxis => (0..len).for_each(|k| gx[at(k)] = gr),
                            Primitive::MeanAxis => (0..len).for_each(|k| gx[at(k)] = gr / len as f64),
                            Primitive::MaxAxis | Primitive::MinAxis => {
                                let ties = (0..len).filter(|&k| xd[at(k)] == yr).count();
                                for k in 0..len {
                                    if xd[at(k)] == yr {
                                        gx[at(k)] = gr / ties as f64;
                                    }
                                }
                            }
                            Primitive::LogSumExpAxis => {
                                for k in 0..len {
                                    let w = if yr == f64::NEG_INFINITY {
                                        1.0 / len as f64
                                    } else {
                                        (xd[at(k)] - yr).exp()
                                    };
                                    gx[at(k)] = chain(gr, w);
                                }
                            }
                            _ => unreachable!(),
                        }
                    }
                }
                vec![Some(gx)]
            }
            Primitive::BroadcastTo => {
                let map = x.shape().broadcast_index_map(y.shape());
                let mut gx = vec![0.0; x.numel()];
                for (k, &src) in map.iter().enumerate() {
                    gx[src] += g[k];
                }
                vec![Some(gx)]
            }
            Primitive::Reshape => vec![Some(g.to_vec())],
            Primitive::IndexSelect => {
                let axis = node.attrs.axis.expect("validated in forward");
                let indices = node.attrs.indices.as_ref().expect("validated in forward");
                let (outer, len, inner) = axis_split(x.shape(), axis);
                let mut gx = vec![0.0; x.numel()];
                let mut src = 0;
                for o in 0..outer {
                    for &k in indices {
                        let start = (o * len + k) * inner;
                        for j in 0..inner {
                            gx[start + j] += g[src];
                            src += 1;
                        }
                    }
                }
                vec![Some(gx)]
            }
            _ => unreachable!(),
        }
    }

    /// Smallest distance from a non-differentiable point over every
    /// gradient-carrying `max2`/`min2`/`relu`/`max_axis`/`min_axis` node:
    /// `|a - b|` for the binary ops, `|x|` for relu, and the gap between the
    /// extremum and the runner-up for the reductions. `INFINITY` when the
    /// tape has no such node.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        let mut note = |gap: f64| {
            // NaN counts as sitting on a kink.
            margin = if gap >= 0.0 { margin.min(gap) } else { 0.0 };
        };
        for node in self.nodes.iter().filter(|n| n.requires_grad) {
            let Some(p) = node.primitive else { continue };
            let x = self.value(node.parents[0]);
            match p {
                Primitive::Max2 | Primitive::Min2 => {
                    let b = self.value(node.parents[1]);
                    let out = node.value.shape();
                    let ia = x.shape().broadcast_index_map(out);
                    let ib = b.shape().broadcast_index_map(out);
                    for k in 0..out.numel() {
                        let (av, bv) = (x.data()[ia[k]], b.data()[ib[k]]);
                        if av.is_infinite() && bv.is_infinite() && av == bv {
                            note(0.0);
                        } else {
                            note((av - bv).abs());
                        }
                    }
                }
                Primitive::Relu => x.data().iter().for_each(|v| note(v.abs())),
                Primitive::MaxAxis | Primitive::MinAxis => {
                    let axis = node.attrs.axis.expect("validated in forward");
                    let (outer, len, inner) = axis_split(x.shape(), axis);
                    if len < 2 {
                        continue;
                    }
                    for o in 0..outer {
                        for i in 0..inner {
                            let mut vals: Vec<f64> = (0..len).map(|k| x.data()[(o * len + k) * inner + i]).collect();
                            vals.sort_by(|a, b| a.total_cmp(b));
                            let gap = if p == Primitive::MaxAxis {
                                vals[len - 1] - vals[len - 2]
                            } else {
                                vals[1] - vals[0]
                            };
                            note(gap);
                        }
                    }
                }
                _ => {}
            }
        }
        margin
    }
}

fn reduce(p: Primitive, slice: impl Iterator<Item = f64>, len: usize) -> f64 {
    match p {
        Primitive::SumAxis => slice.sum(),
        Primitive::MeanAxis => slice.sum::<f64>() / len as f64,
        Primitive::MaxAxis => slice.fold(f64::NEG_INFINITY, f64::max),
        Primitive::MinAxis => slice.fold(f64::INFINITY, f64::min),
        Primitive::LogSumExpAxis => {
            let vals: Vec<f64> = slice.collect();
            let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if m.is_infinite() {
                return m;
            }
            m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
        }
        _ => unreachable!(),
    }
}

macro_rules! unary_ops {
    ($($(#[$doc:meta])* $name:ident => $prim:ident),* $(,)?) => {
        impl Tape {
            $(
                $(#[$doc])*
                pub fn $name(&mut self, x: Var) -> Result<Var> {
                    self.apply(Primitive::$prim, &[x], &Attrs::none())
                }
            )*
        }
    };
}

macro_rules! binary_ops {
    ($($(#[$doc:meta])* $name:ident => $prim:ident),* $(,)?) => {
        impl Tape {
            $(
                $(#[$doc])*
                pub fn $name(&mut self, a: Var, b: Var) -> Result<Var> {
                    self.apply(Primitive::$prim, &[a, b], &Attrs::none())
                }
            )*
        }
    };
}

macro_rules! axis_ops {
    ($($name:ident => $prim:ident),* $(,)?) => {
        impl Tape {
            $(
                pub fn $name(&mut self, x: Var, axis: usize) -> Result<Var> {
                    self.apply(Primitive::$prim, &[x], &Attrs::axis(axis))
                }
            )*
        }
    };
}

unary_ops! {
    neg => Neg,
    exp => Exp,
    /// Natural log; its derivative at 0 is dropped when the upstream
    /// gradient is 0 (see `relu`).
    log => Log,
    log1p => Log1p,
    sigmoid => Sigmoid,
    tanh => Tanh,
    softplus => Softplus,
    /// `ln(softplus(x))`, fused so very negative inputs do not underflow.
    log_softplus => LogSoftplus,
    relu => Relu,
    /// `ln(1 - e^x)` for `x <= 0`.
    log1mexp => Log1mExp,
}

binary_ops! {
    add => Add,
    sub => Sub,
    mul => Mul,
    max2 => Max2,
    min2 => Min2,
    logsumexp2 => LogSumExp2,
}

axis_ops! {
    sum_axis => SumAxis,
    max_axis => MaxAxis,
    min_axis => MinAxis,
    mean_axis => MeanAxis,
    logsumexp_axis => LogSumExpAxis,
}

impl Tape {
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.apply(Primitive::Scale, &[x], &Attrs::scalar(c))
    }

    pub fn broadcast_to(&mut self, x: Var, target: impl Into<Shape>) -> Result<Var> {
        self.apply(Primitive::BroadcastTo, &[x], &Attrs::shape(target))
    }

    pub fn reshape(&mut self, x: Var, target: impl Into<Shape>) -> Result<Var> {
        self.apply(Primitive::Reshape, &[x], &Attrs::shape(target))
    }

    pub fn index_select(&mut self, x: Var, axis: usize, indices: Vec<usize>) -> Result<Var> {
        self.apply(Primitive::IndexSelect, &[x], &Attrs::select(axis, indices))
    }

    /// `x + c` for a scalar constant.
    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let c = self.scalar(c);
        self.add(x, c)
    }

    /// Sum of every element, as a scalar.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        let flat = self.reshape(x, vec![n])?;
        self.sum_axis(flat, 0)
    }

    /// Mean of every element, as a scalar. NaN for an empty input.
    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        let flat = self.reshape(x, vec![n])?;
        self.mean_axis(flat, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn scalar_param(t: &mut Tape, x: f64) -> Var {
        t.param(Tensor::scalar(x))
    }

    #[test]
    fn names_roundtrip_and_unknown_rejected() {
        for p in Primitive::ALL {
            assert_eq!(p.name().parse::<Primitive>().unwrap(), p);
        }
        assert!(matches!("conv2d".parse::<Primitive>(), Err(Error::UnknownPrimitive(_))));
        let mut t = Tape::new();
        let x = t.scalar(1.0);
        assert!(t.apply_named("bogus", &[x], &Attrs::none()).is_err());
    }

    #[test]
    fn forward_examples() {
        let mut t = Tape::new();
        let z = t.scalar(0.0);
        let sp = t.softplus(z).unwrap();
        assert!((t.value(sp).item().unwrap() - LN2).abs() < 1e-15);
        let lse = t.logsumexp2(z, z).unwrap();
        assert!((t.value(lse).item().unwrap() - LN2).abs() < 1e-15);
        let x = t.scalar(-0.105_360_515_657_826_3);
        let l = t.log1mexp(x).unwrap();
        assert!((t.value(l).item().unwrap() - -std::f64::consts::LN_10).abs() < 1e-9);
    }

    #[test]
    fn softplus_grad_at_zero() {
        let mut t = Tape::new();
        let x = scalar_param(&mut t, 0.0);
        let y = t.softplus(x).unwrap();
        t.backward(y).unwrap();
        assert!((t.grad(x).unwrap().item().unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn log_temperature_softplus_grad() {
        // d/dd log(T softplus(d/T)) at d=0, T=1 is 0.5 / ln 2.
        let mut t = Tape::new();
        let d = scalar_param(&mut t, 0.0);
        let s = t.scale(d, 1.0).unwrap();
        let sp = t.softplus(s).unwrap();
        let ts = t.scale(sp, 1.0).unwrap();
        let y = t.log(ts).unwrap();
        t.backward(y).unwrap();
        let g = t.grad(d).unwrap().item().unwrap();
        assert!((g - 0.721_347_520_444_481_7).abs() < 1e-12, "{g}");
    }

    #[test]
    fn max2_tie_splits() {
        let mut t = Tape::new();
        let a = scalar_param(&mut t, 1.0);
        let b = scalar_param(&mut t, 1.0);
        let y = t.max2(a, b).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(a).unwrap().item(), Some(0.5));
        assert_eq!(t.grad(b).unwrap().item(), Some(0.5));
    }

    #[test]
    fn relu_grad_at_zero_is_zero() {
        let mut t = Tape::new();
        let x = scalar_param(&mut t, 0.0);
        let y = t.relu(x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap().item(), Some(0.0));
    }

    #[test]
    fn log_of_relu_zero_gives_zero_grad() {
        let mut t = Tape::new();
        let x = scalar_param(&mut t, -1.0);
        let r = t.relu(x).unwrap();
        let y = t.log(r).unwrap();
        assert_eq!(t.value(y).item(), Some(f64::NEG_INFINITY));
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap().item(), Some(0.0));
    }

    #[test]
    fn backward_twice_accumulates() {
        let mut t = Tape::new();
        let x = scalar_param(&mut t, 2.0);
        let y = t.mul(x, x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap().item(), Some(4.0));
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap().item(), Some(8.0));
        t.zero_grad();
        assert!(t.grad(x).is_none());
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn shape_mismatch_names_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let b = t.constant(Tensor::vector(vec![1.0, 2.0]));
        let err = t.add(a, b).unwrap_err();
        assert!(err.to_string().contains("(3,)") && err.to_string().contains("(2,)"));
    }

    #[test]
    fn broadcast_binary_reduces_grad() {
        let mut t = Tape::new();
        let a = t.param(Tensor::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![3, 2]).unwrap());
        let b = t.param(Tensor::vector(vec![10.0, 20.0]));
        let s = t.mul(a, b).unwrap();
        let y = t.sum_all(s).unwrap();
        assert_eq!(t.value(y).item(), Some(10.0 * 9.0 + 20.0 * 12.0));
        t.backward(y).unwrap();
        assert_eq!(t.grad(b).unwrap().data(), &[9.0, 12.0]);
        assert_eq!(t.grad(a).unwrap().data(), &[10.0, 20.0, 10.0, 20.0, 10.0, 20.0]);
    }

    #[test]
    fn index_select_scatters() {
        let mut t = Tape::new();
        let x = t.param(Tensor::new((0..6).map(f64::from).collect(), vec![3, 2]).unwrap());
        let sel = t.index_select(x, 0, vec![2, 2, 0]).unwrap();
        assert_eq!(t.value(sel).data(), &[4.0, 5.0, 4.0, 5.0, 0.0, 1.0]);
        let y = t.sum_all(sel).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
        assert!(matches!(
            t.index_select(x, 0, vec![3]),
            Err(Error::IndexOutOfRange { index: 3, len: 3 })
        ));
    }

    #[test]
    fn reductions() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![1.0, 5.0, 3.0, 2.0], vec![2, 2]).unwrap());
        let mx = t.max_axis(x, 0).unwrap();
        assert_eq!(t.value(mx).data(), &[3.0, 5.0]);
        let mn = t.min_axis(x, 1).unwrap();
        assert_eq!(t.value(mn).data(), &[1.0, 2.0]);
        let mean = t.mean_axis(x, 0).unwrap();
        assert_eq!(t.value(mean).data(), &[2.0, 3.5]);
        let lse = t.logsumexp_axis(x, 1).unwrap();
        let want = (1f64.exp() + 5f64.exp()).ln();
        assert!((t.value(lse).data()[0] - want).abs() < 1e-14);
        assert!(t.sum_axis(x, 2).is_err());
    }

    #[test]
    fn kink_margin_detects_ties() {
        let mut t = Tape::new();
        let a = t.param(Tensor::vector(vec![1.0, 2.0]));
        let b = t.constant(Tensor::vector(vec![1.5, 2.0005]));
        t.max2(a, b).unwrap();
        assert!((t.kink_margin() - 0.0005).abs() < 1e-12);
        let mut clean = Tape::new();
        let x = clean.param(Tensor::scalar(1.0));
        clean.exp(x).unwrap();
        assert_eq!(clean.kink_margin(), f64::INFINITY);
    }
}
