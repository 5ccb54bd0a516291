//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is rebuilt for every forward evaluation. Each recorded op
//! stores its output value; [`Tape::backward`] then walks the nodes in
//! reverse insertion order, which is a valid reverse topological order
//! because parents are always recorded before their children.

use super::tensor::{self, Tensor};
use super::NumError;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Scale(Var, f64),
    Sum(Var),
    Square(Var),
    Norm(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Relu(_) => "relu",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::Square(_) => "square",
            Op::Norm(_) => "norm",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Recording of a single forward evaluation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Adjoint of `var`, or `None` when `var` does not influence the output
    /// or was recorded as a constant.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Adjoint of `var`, with zeros of the leaf's shape when it received none.
    pub fn wrt(&self, var: Var) -> Tensor {
        match self.get(var) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    /// Moves the adjoint of `var` out (zeros when absent).
    pub fn take(&mut self, var: Var) -> Tensor {
        match self.grads.get_mut(var.0).and_then(Option::take) {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }
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

    /// Records a differentiable input (parameter or input point).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Records an input that gradients are not needed for.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, var: Var) -> Result<&Node, NumError> {
        self.nodes.get(var.0).ok_or(NumError::NotRecorded {
            index: var.0,
            len: self.nodes.len(),
        })
    }

    fn needs(&self, a: Var) -> bool {
        self.nodes[a.0].requires_grad
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> NumError {
        NumError::ShapeMismatch {
            op,
            node: Some(self.nodes.len()),
            lhs: self.nodes[a.0].value.shape().to_vec(),
            rhs: self.nodes[b.0].value.shape().to_vec(),
        }
    }

    /// `a[n,k] · b[k,m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (av, bv) = (&self.check(a)?.value, &self.check(b)?.value);
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.cols() != bv.rows() {
            return Err(self.mismatch("matmul", a, b));
        }
        let out = tensor::matmul(av, bv);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatMul(a, b), out, rg))
    }

    /// Adds the `[1,m]` row `bias` to every row of `a[n,m]`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, NumError> {
        let (av, bv) = (&self.check(a)?.value, &self.check(bias)?.value);
        if bv.rows() != 1 || av.cols() != bv.cols() {
            return Err(self.mismatch("add_row", a, bias));
        }
        let out = tensor::add_row(av, bv);
        let rg = self.needs(a) || self.needs(bias);
        Ok(self.push(Op::AddRow(a, bias), out, rg))
    }

    fn binary(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Var, NumError> {
        let (av, bv) = (&self.check(a)?.value, &self.check(b)?.value);
        if av.shape() != bv.shape() {
            return Err(self.mismatch(op.name(), a, b));
        }
        let out = av.zip_with(bv, f);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(op, out, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    fn unary(&mut self, op: Op, a: Var, out: impl FnOnce(&Tensor) -> Tensor) -> Result<Var, NumError> {
        let v = out(&self.check(a)?.value);
        let rg = self.needs(a);
        Ok(self.push(op, v, rg))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumError> {
        self.unary(Op::Relu(a), a, |v| v.map(|x| if x > 0.0 { x } else { 0.0 }))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, NumError> {
        self.unary(Op::Scale(a, s), a, |v| v.scale(s))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var, NumError> {
        self.unary(Op::Sum(a), a, |v| Tensor::scalar(v.sum()))
    }

    pub fn square(&mut self, a: Var) -> Result<Var, NumError> {
        self.unary(Op::Square(a), a, |v| v.map(|x| x * x))
    }

    /// Euclidean norm of all elements, as a `[1]` tensor.
    pub fn norm(&mut self, a: Var) -> Result<Var, NumError> {
        self.unary(Op::Norm(a), a, |v| Tensor::scalar(v.norm()))
    }

    /// Propagates `output_grad` (the adjoint of `output`) back to every node
    /// that requires a gradient.
    ///
    /// ReLU and norm use the zero subgradient at their kinks.
    pub fn backward(&self, output: Var, output_grad: &Tensor) -> Result<Gradients, NumError> {
        let out_node = self.check(output)?;
        if out_node.value.shape() != output_grad.shape() {
            return Err(NumError::ShapeMismatch {
                op: "backward",
                node: Some(output.0),
                lhs: out_node.value.shape().to_vec(),
                rhs: output_grad.shape().to_vec(),
            });
        }
        let n = output.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[output.0] = Some(output_grad.clone());

        for idx in (0..n).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.needs(a) {
                        let ga = tensor::matmul_a_bt(&g, &self.nodes[b.0].value);
                        accumulate(&mut grads, a, ga);
                    }
                    if self.needs(b) {
                        let gb = tensor::matmul_at_b(&self.nodes[a.0].value, &g);
                        accumulate(&mut grads, b, gb);
                    }
                }
                Op::AddRow(a, bias) => {
                    if self.needs(bias) {
                        accumulate(&mut grads, bias, tensor::sum_rows(&g));
                    }
                    if self.needs(a) {
                        accumulate(&mut grads, a, g);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(b) {
                        accumulate(&mut grads, b, g.clone());
                    }
                    if self.needs(a) {
                        accumulate(&mut grads, a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(b) {
                        accumulate(&mut grads, b, g.scale(-1.0));
                    }
                    if self.needs(a) {
                        accumulate(&mut grads, a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(a) {
                        let ga = g.zip_with(&self.nodes[b.0].value, |x, y| x * y);
                        accumulate(&mut grads, a, ga);
                    }
                    if self.needs(b) {
                        let gb = g.zip_with(&self.nodes[a.0].value, |x, y| x * y);
                        accumulate(&mut grads, b, gb);
                    }
                }
                Op::Relu(a) => {
                    let ga = g.zip_with(&self.nodes[a.0].value, |x, input| if input > 0.0 { x } else { 0.0 });
                    accumulate(&mut grads, a, ga);
                }
                Op::Scale(a, s) => accumulate(&mut grads, a, g.scale(s)),
                Op::Sum(a) => {
                    let seed = g.data()[0];
                    let ga = Tensor::filled(self.nodes[a.0].value.shape(), seed);
                    accumulate(&mut grads, a, ga);
                }
                Op::Square(a) => {
                    let ga = g.zip_with(&self.nodes[a.0].value, |x, input| 2.0 * input * x);
                    accumulate(&mut grads, a, ga);
                }
                Op::Norm(a) => {
                    let r = node.value.data()[0];
                    let seed = g.data()[0];
                    let av = &self.nodes[a.0].value;
                    let ga = if r > 0.0 {
                        av.scale(seed / r)
                    } else {
                        Tensor::zeros(av.shape())
                    };
                    accumulate(&mut grads, a, ga);
                }
            }
        }

        let shapes = self.nodes[..n].iter().map(|node| node.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
    match &mut grads[var.0] {
        Some(existing) => existing.axpy(1.0, &g),
        slot @ None => *slot = Some(g),
    }
}
