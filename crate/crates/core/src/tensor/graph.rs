use std::sync::Arc;

use super::contract::{contract, ContractSpec};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// `x + b` with `b` broadcast over the leading axes of `x`.
    AddSuffix(Var, Var),
    Sigmoid(Var),
    Relu(Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    L2Loss(Var, Var),
    Contract(Var, Var, Arc<ContractSpec>),
    /// Softmax over the last axis; `mask` covers the trailing two axes.
    SoftmaxMasked(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of tensor operations for one forward/backward pass.
///
/// Nodes are appended in evaluation order, so reverse insertion order is a
/// valid topological order for backpropagation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf node; gradients are collected for it when `requires_grad`.
    pub fn input(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.input(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn zero_grad(&mut self) {
        for g in self.grads.iter_mut() {
            *g = None;
        }
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x)).collect())
            .expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.zip_with(a, b, |x, y| x + y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.zip_with(a, b, |x, y| x - y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.zip_with(a, b, |x, y| x * y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.map(a, |x| x * s);
        let rg = self.needs(&[a]);
        self.push(v, Op::Scale(a, s), rg)
    }

    /// Adds `b` to every trailing block of `a`; `b`'s shape must be a suffix
    /// of `a`'s shape.
    pub fn add_suffix(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::Shape(format!(
                "add_suffix: {sb:?} is not a suffix of {sa:?}"
            )));
        }
        let ta = self.value(a);
        let tb = self.value(b).data();
        let n = tb.len().max(1);
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + tb[i % n])
            .collect();
        let v = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(v, Op::AddSuffix(a, b), rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.map(a, sigmoid);
        let rg = self.needs(&[a]);
        self.push(v, Op::Sigmoid(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.map(a, |x| x.max(0.0));
        let rg = self.needs(&[a]);
        self.push(v, Op::Relu(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        let rg = self.needs(&[a]);
        Ok(self.push(v, Op::Reshape(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel().max(1) as f64;
        let rg = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Mean of squared differences.
    pub fn l2_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape(pred, target, "l2_loss")?;
        let (p, t) = (self.value(pred), self.value(target));
        let n = p.numel().max(1) as f64;
        let s = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        let rg = self.needs(&[pred, target]);
        Ok(self.push(Tensor::scalar(s), Op::L2Loss(pred, target), rg))
    }

    pub fn contract(&mut self, spec: &str, a: Var, b: Var) -> Result<Var> {
        let spec = Arc::new(ContractSpec::parse(spec)?);
        self.contract_with(spec, a, b)
    }

    pub fn contract_with(&mut self, spec: Arc<ContractSpec>, a: Var, b: Var) -> Result<Var> {
        let v = contract(&spec, self.value(a), self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(v, Op::Contract(a, b, spec), rg))
    }

    /// Softmax over the last axis with masked-out entries forced to zero.
    ///
    /// `mask` is row-major over the trailing `(rows, cols)` axes of `scores`
    /// and is broadcast over any leading axes. A row without a single allowed
    /// entry is an error.
    pub fn softmax_masked(&mut self, scores: Var, mask: Arc<Vec<bool>>) -> Result<Var> {
        let shape = self.shape(scores).to_vec();
        if shape.len() < 2 {
            return Err(Error::Shape("softmax_masked needs rank >= 2".into()));
        }
        let cols = shape[shape.len() - 1];
        let rows = shape[shape.len() - 2];
        if mask.len() != rows * cols {
            return Err(Error::Shape(format!(
                "mask has {} entries for a {rows}x{cols} score block",
                mask.len()
            )));
        }
        for r in 0..rows {
            if !mask[r * cols..(r + 1) * cols].iter().any(|&m| m) {
                return Err(Error::FullyMaskedRow { row: r });
            }
        }
        let x = self.value(scores).data();
        let mut out = vec![0.0; x.len()];
        for (ri, (row, orow)) in x.chunks(cols).zip(out.chunks_mut(cols)).enumerate() {
            let m = &mask[(ri % rows) * cols..(ri % rows + 1) * cols];
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &ok)| ok)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for ((o, &v), &ok) in orow.iter_mut().zip(row).zip(m) {
                if ok {
                    *o = (v - max).exp();
                    z += *o;
                }
            }
            for o in orow.iter_mut() {
                *o /= z;
            }
        }
        let v = Tensor::new(shape, out)?;
        let rg = self.needs(&[scores]);
        Ok(self.push(v, Op::SoftmaxMasked(scores), rg))
    }

    /// Backpropagates from a single-element `loss`.
    ///
    /// Gradients are accumulated into the leaves that require them; calling
    /// this twice without [`Graph::zero_grad`] sums both passes.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if let Op::Leaf = self.nodes[id].op {
                match &mut self.grads[id] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(g),
                }
                continue;
            }
            for (input, contribution) in self.local_grads(id, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(contribution),
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `id` for each of its inputs.
    fn local_grads(&self, id: usize, g: &[f64]) -> Result<Vec<(Var, Vec<f64>)>> {
        let node = &self.nodes[id];
        let val = |v: Var| self.nodes[v.0].value.data();
        let out = match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|v| -v).collect())],
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                vec![
                    (*a, g.iter().zip(vb).map(|(g, y)| g * y).collect()),
                    (*b, g.iter().zip(va).map(|(g, x)| g * x).collect()),
                ]
            }
            Op::Scale(a, s) => vec![(*a, g.iter().map(|v| v * s).collect())],
            Op::AddSuffix(a, b) => {
                let n = val(*b).len().max(1);
                let mut gb = vec![0.0; val(*b).len()];
                for (i, &gv) in g.iter().enumerate() {
                    gb[i % n] += gv;
                }
                vec![(*a, g.to_vec()), (*b, gb)]
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                vec![(*a, g.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect())]
            }
            Op::Relu(a) => {
                let x = val(*a);
                vec![(
                    *a,
                    g.iter()
                        .zip(x)
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect(),
                )]
            }
            Op::Reshape(a) => vec![(*a, g.to_vec())],
            Op::Sum(a) => vec![(*a, vec![g[0]; val(*a).len()])],
            Op::Mean(a) => {
                let n = val(*a).len();
                vec![(*a, vec![g[0] / n.max(1) as f64; n])]
            }
            Op::L2Loss(p, t) => {
                let (vp, vt) = (val(*p), val(*t));
                let c = 2.0 * g[0] / vp.len().max(1) as f64;
                let gp: Vec<f64> = vp.iter().zip(vt).map(|(a, b)| c * (a - b)).collect();
                let gt = gp.iter().map(|v| -v).collect();
                vec![(*p, gp), (*t, gt)]
            }
            Op::Contract(a, b, spec) => {
                let gout = Tensor::new(node.value.shape().to_vec(), g.to_vec())?;
                let mut out = Vec::with_capacity(2);
                if self.nodes[a.0].requires_grad {
                    let ga = contract(&spec.lhs_grad(), &gout, &self.nodes[b.0].value)?;
                    out.push((*a, ga.into_data()));
                }
                if self.nodes[b.0].requires_grad {
                    let gb = contract(&spec.rhs_grad(), &self.nodes[a.0].value, &gout)?;
                    out.push((*b, gb.into_data()));
                }
                out
            }
            Op::SoftmaxMasked(a) => {
                let y = node.value.data();
                let cols = *node.value.shape().last().expect("rank >= 2");
                let mut gx = vec![0.0; y.len()];
                for ((yr, gr), out) in y.chunks(cols).zip(g.chunks(cols)).zip(gx.chunks_mut(cols)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for ((o, &yv), &gv) in out.iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - dot);
                    }
                }
                vec![(*a, gx)]
            }
        };
        Ok(out)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
