use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels;
use super::TensorGrid;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    id: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.id
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Constant,
    Conv2d { input: usize, kernel: usize, bias: usize },
    Relu(usize),
    Sigmoid(usize),
    MaxPool2 { input: usize, argmax: Vec<u32> },
    Upsample2(usize),
    Concat { a: usize, b: usize },
    Add(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    Sum(usize),
    Ln(usize, T),
}

#[derive(Debug)]
struct Node<T> {
    value: TensorGrid<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of differentiable operations.
///
/// Nodes are stored in execution order, so every parent precedes its
/// children and a single reverse sweep visits each node once.
#[derive(Debug)]
pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Gradients of a scalar loss with respect to every tracked leaf.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    tape: u64,
    leaves: Vec<Option<TensorGrid<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when `var` is not a tracked leaf of the differentiated tape.
    pub fn get(&self, var: Var) -> Option<&TensorGrid<T>> {
        if var.tape != self.tape {
            return None;
        }
        self.leaves.get(var.id).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<TensorGrid<T>> {
        if var.tape != self.tape {
            return None;
        }
        self.leaves.get_mut(var.id).and_then(Option::take)
    }
}

fn check_finite<T: Scalar>(values: &[T], op: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: TensorGrid<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var { tape: self.id, id: self.nodes.len() - 1 }
    }

    fn node(&self, v: Var) -> Result<&Node<T>> {
        if v.tape != self.id {
            return Err(Error::Tape("variable belongs to a different tape".into()));
        }
        self.nodes.get(v.id).ok_or_else(|| Error::Tape("unknown variable".into()))
    }

    fn grad_flag(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.id].requires_grad)
    }

    /// Records a tracked leaf: it receives a gradient on [`Tape::backward`].
    pub fn leaf(&mut self, value: TensorGrid<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records an untracked input.
    pub fn constant(&mut self, value: TensorGrid<T>) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> Result<&TensorGrid<T>> {
        Ok(&self.node(v)?.value)
    }

    /// Value of a single-element variable.
    pub fn scalar(&self, v: Var) -> Result<T> {
        let value = self.value(v)?;
        if !value.is_scalar() {
            return Err(Error::Dimension(format!("expected a scalar, got shape {:?}", value.shape())));
        }
        Ok(value.values()[0])
    }

    pub fn requires_grad(&self, v: Var) -> Result<bool> {
        Ok(self.node(v)?.requires_grad)
    }

    /// 3x3 convolution, zero padding 1, stride 1.
    /// `input: [Cin,H,W]`, `kernel: [Cout,Cin,3,3]`, `bias: [Cout]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (cin, h, w) = self.node(input)?.value.dims3()?;
        let kshape = self.node(kernel)?.value.shape().to_vec();
        let &[cout, kcin, 3, 3] = kshape.as_slice() else {
            return Err(Error::Dimension(format!("kernel must be [Cout,Cin,3,3], got {kshape:?}")));
        };
        if kcin != cin {
            return Err(Error::Dimension(format!("input has {cin} channels, kernel expects {kcin}")));
        }
        if self.node(bias)?.value.shape() != [cout] {
            return Err(Error::Dimension(format!(
                "bias must be [{cout}], got {:?}",
                self.nodes[bias.id].value.shape()
            )));
        }
        let out = kernels::conv3_forward(
            self.nodes[input.id].value.values(),
            (cin, h, w),
            self.nodes[kernel.id].value.values(),
            self.nodes[bias.id].value.values(),
            cout,
        );
        check_finite(&out, "conv2d")?;
        let rg = self.grad_flag(&[input, kernel, bias]);
        Ok(self.push(
            TensorGrid::from_raw(vec![cout, h, w], out),
            Op::Conv2d { input: input.id, kernel: kernel.id, bias: bias.id },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let src = &self.node(x)?.value;
        let out: Vec<T> = src.values().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let shape = src.shape().to_vec();
        let rg = self.grad_flag(&[x]);
        Ok(self.push(TensorGrid::from_raw(shape, out), Op::Relu(x.id), rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let src = &self.node(x)?.value;
        let out: Vec<T> = src.values().iter().map(|&v| sigmoid(v)).collect();
        let shape = src.shape().to_vec();
        let rg = self.grad_flag(&[x]);
        Ok(self.push(TensorGrid::from_raw(shape, out), Op::Sigmoid(x.id), rg))
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.node(x)?.value.dims3()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Dimension(format!("maxpool2 needs even extents, got {h}x{w}")));
        }
        let (out, argmax) = kernels::maxpool2_forward(self.nodes[x.id].value.values(), (c, h, w));
        let rg = self.grad_flag(&[x]);
        Ok(self.push(
            TensorGrid::from_raw(vec![c, h / 2, w / 2], out),
            Op::MaxPool2 { input: x.id, argmax },
            rg,
        ))
    }

    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.node(x)?.value.dims3()?;
        let out = kernels::upsample2_forward(self.nodes[x.id].value.values(), (c, h, w));
        let rg = self.grad_flag(&[x]);
        Ok(self.push(TensorGrid::from_raw(vec![c, 2 * h, 2 * w], out), Op::Upsample2(x.id), rg))
    }

    /// Stacks `b`'s channels after `a`'s.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, ha, wa) = self.node(a)?.value.dims3()?;
        let (cb, hb, wb) = self.node(b)?.value.dims3()?;
        if (ha, wa) != (hb, wb) {
            return Err(Error::Dimension(format!("cannot concat {ha}x{wa} with {hb}x{wb}")));
        }
        let mut out = Vec::with_capacity((ca + cb) * ha * wa);
        out.extend_from_slice(self.nodes[a.id].value.values());
        out.extend_from_slice(self.nodes[b.id].value.values());
        let rg = self.grad_flag(&[a, b]);
        Ok(self.push(TensorGrid::from_raw(vec![ca + cb, ha, wa], out), Op::Concat { a: a.id, b: b.id }, rg))
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<Vec<usize>> {
        let sa = self.node(a)?.value.shape();
        let sb = self.node(b)?.value.shape();
        if sa != sb {
            return Err(Error::Dimension(format!("{op}: shape {sa:?} vs {sb:?}")));
        }
        Ok(sa.to_vec())
    }

    fn zip_with(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let shape = self.same_shape(a, b, name)?;
        let out: Vec<T> = self.nodes[a.id]
            .value
            .values()
            .iter()
            .zip(self.nodes[b.id].value.values())
            .map(|(&x, &y)| f(x, y))
            .collect();
        check_finite(&out, name)?;
        let rg = self.grad_flag(&[a, b]);
        Ok(self.push(TensorGrid::from_raw(shape, out), op, rg))
    }

    /// Elementwise sum of equally shaped grids.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a.id, b.id))
    }

    /// Elementwise product of equally shaped grids.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a.id, b.id))
    }

    /// Elementwise quotient; a zero divisor is reported as a non-finite result.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "div", |x, y| x / y, Op::Div(a.id, b.id))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let src = &self.node(x)?.value;
        let out: Vec<T> = src.values().iter().map(|&v| v * factor).collect();
        check_finite(&out, "scale")?;
        let shape = src.shape().to_vec();
        let rg = self.grad_flag(&[x]);
        Ok(self.push(TensorGrid::from_raw(shape, out), Op::Scale(x.id, factor), rg))
    }

    pub fn add_scalar(&mut self, x: Var, offset: T) -> Result<Var> {
        let src = &self.node(x)?.value;
        let out: Vec<T> = src.values().iter().map(|&v| v + offset).collect();
        check_finite(&out, "add_scalar")?;
        let shape = src.shape().to_vec();
        let rg = self.grad_flag(&[x]);
        Ok(self.push(TensorGrid::from_raw(shape, out), Op::AddScalar(x.id), rg))
    }

    /// Sum of all elements as a `[1]` grid.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.node(x)?.value.values().iter().fold(T::zero(), |a, &v| a + v);
        check_finite(&[total], "sum")?;
        let rg = self.grad_flag(&[x]);
        Ok(self.push(TensorGrid::scalar(total), Op::Sum(x.id), rg))
    }

    /// Elementwise `ln(max(x, floor))`; the gradient is zero where `x <= floor`.
    pub fn ln(&mut self, x: Var, floor: T) -> Result<Var> {
        let src = &self.node(x)?.value;
        let out: Vec<T> = src.values().iter().map(|&v| v.max(floor).ln()).collect();
        check_finite(&out, "ln")?;
        let shape = src.shape().to_vec();
        let rg = self.grad_flag(&[x]);
        Ok(self.push(TensorGrid::from_raw(shape, out), Op::Ln(x.id, floor), rg))
    }

    /// Reverse sweep from a scalar `loss`. A tape can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::Tape("backward already ran on this tape".into()));
        }
        if loss.tape != self.id {
            return Err(Error::Tape("loss is detached from this tape".into()));
        }
        let root = self.node(loss)?;
        if !root.value.is_scalar() {
            return Err(Error::Tape(format!("loss must be scalar, got shape {:?}", root.value.shape())));
        }
        self.consumed = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        if self.nodes[loss.id].requires_grad {
            grads[loss.id] = Some(vec![T::one()]);
        }
        for id in (0..=loss.id).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            if matches!(self.nodes[id].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads)?;
        }

        let leaves = self
            .nodes
            .iter()
            .enumerate()
            .map(|(id, node)| match node.op {
                Op::Leaf => {
                    let values = grads[id].take().unwrap_or_else(|| vec![T::zero(); node.value.len()]);
                    Some(TensorGrid::from_raw(node.value.shape().to_vec(), values))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { tape: self.id, leaves })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], id: usize, contribution: impl FnOnce() -> Vec<T>) {
        if !self.nodes[id].requires_grad {
            return;
        }
        let c = contribution();
        match &mut grads[id] {
            Some(existing) => existing.iter_mut().zip(c).for_each(|(e, v)| *e += v),
            slot => *slot = Some(c),
        }
    }

    fn propagate(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf | Op::Constant => {}
            &Op::Conv2d { input, kernel, bias } => {
                let (cin, h, w) = self.nodes[input].value.dims3()?;
                let cout = self.nodes[bias].value.len();
                let want = (
                    self.nodes[input].requires_grad,
                    self.nodes[kernel].requires_grad,
                    self.nodes[bias].requires_grad,
                );
                let (di, dk, db) = kernels::conv3_backward(
                    self.nodes[input].value.values(),
                    (cin, h, w),
                    self.nodes[kernel].value.values(),
                    cout,
                    g,
                    want,
                );
                if let Some(di) = di {
                    self.accumulate(grads, input, || di);
                }
                if let Some(dk) = dk {
                    self.accumulate(grads, kernel, || dk);
                }
                if let Some(db) = db {
                    self.accumulate(grads, bias, || db);
                }
            }
            &Op::Relu(x) => {
                let xv = self.nodes[x].value.values();
                self.accumulate(grads, x, || {
                    xv.iter().zip(g).map(|(&v, &gi)| if v > T::zero() { gi } else { T::zero() }).collect()
                });
            }
            &Op::Sigmoid(x) => {
                let yv = node.value.values();
                self.accumulate(grads, x, || yv.iter().zip(g).map(|(&y, &gi)| gi * y * (T::one() - y)).collect());
            }
            Op::MaxPool2 { input, argmax } => {
                let n_in = self.nodes[*input].value.len();
                self.accumulate(grads, *input, || {
                    let mut d = vec![T::zero(); n_in];
                    for (&a, &gi) in argmax.iter().zip(g) {
                        d[a as usize] += gi;
                    }
                    d
                });
            }
            &Op::Upsample2(x) => {
                let dims = self.nodes[x].value.dims3()?;
                self.accumulate(grads, x, || kernels::upsample2_backward(g, dims));
            }
            &Op::Concat { a, b } => {
                let na = self.nodes[a].value.len();
                self.accumulate(grads, a, || g[..na].to_vec());
                self.accumulate(grads, b, || g[na..].to_vec());
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, || g.to_vec());
                self.accumulate(grads, b, || g.to_vec());
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.nodes[a].value.values(), self.nodes[b].value.values());
                self.accumulate(grads, a, || g.iter().zip(bv).map(|(&gi, &y)| gi * y).collect());
                self.accumulate(grads, b, || g.iter().zip(av).map(|(&gi, &x)| gi * x).collect());
            }
            &Op::Div(a, b) => {
                let (av, bv) = (self.nodes[a].value.values(), self.nodes[b].value.values());
                self.accumulate(grads, a, || g.iter().zip(bv).map(|(&gi, &y)| gi / y).collect());
                self.accumulate(grads, b, || {
                    g.iter().zip(av).zip(bv).map(|((&gi, &x), &y)| -gi * x / (y * y)).collect()
                });
            }
            &Op::Scale(x, factor) => {
                self.accumulate(grads, x, || g.iter().map(|&gi| gi * factor).collect());
            }
            &Op::AddScalar(x) => {
                self.accumulate(grads, x, || g.to_vec());
            }
            &Op::Sum(x) => {
                let n = self.nodes[x].value.len();
                self.accumulate(grads, x, || vec![g[0]; n]);
            }
            &Op::Ln(x, floor) => {
                let xv = self.nodes[x].value.values();
                self.accumulate(grads, x, || {
                    xv.iter().zip(g).map(|(&v, &gi)| if v > floor { gi / v } else { T::zero() }).collect()
                });
            }
        }
        Ok(())
    }
}

/// Logistic function, kept strictly inside (0, 1) even where it saturates.
fn sigmoid<T: Scalar>(v: T) -> T {
    let y = if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    };
    let hi = T::one() - T::epsilon() / (T::one() + T::one());
    y.max(T::min_positive_value()).min(hi)
}
