//! Reverse-mode differentiation over [`Tensor4`] values.
//!
//! A [`Tape`] owns every value produced during a forward pass. Operations
//! append a node holding the output value, the ids of its inputs and, when
//! any input requires a gradient, a backward rule. Nodes are appended in
//! evaluation order, so the tape is topologically sorted by construction and
//! [`Tape::backward`] simply walks it in reverse.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// What a backward rule sees when it runs.
pub struct BackwardCtx<'a> {
    /// Gradient of the loss with respect to this node's output.
    pub grad: &'a Tensor4,
    pub inputs: &'a [&'a Tensor4],
    pub output: &'a Tensor4,
    /// `needs[i]` is false when input `i` does not require a gradient; the
    /// rule may return `None` for it.
    pub needs: &'a [bool],
}

type BackwardFn = Box<dyn FnOnce(BackwardCtx<'_>) -> Vec<Option<Tensor4>>>;

struct Node {
    op: &'static str,
    /// Tape scope when the node was recorded, for diagnostics.
    scope: String,
    value: Tensor4,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    scope: String,
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

    /// Label attached to errors raised by subsequent ops.
    pub fn set_scope(&mut self, scope: impl Into<String>) {
        self.scope = scope.into();
    }

    pub fn scope(&self) -> &str {
        &self.scope
    }

    pub fn leaf(&mut self, value: Tensor4, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: "leaf",
            scope: self.scope.clone(),
            value,
            parents: Vec::new(),
            requires_grad,
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor4) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor4 {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op
    }

    /// Appends an op result. The backward rule is kept only when some input
    /// requires a gradient.
    pub fn record<F>(
        &mut self,
        op: &'static str,
        value: Tensor4,
        inputs: &[Var],
        backward: F,
    ) -> Result<Var>
    where
        F: FnOnce(BackwardCtx<'_>) -> Vec<Option<Tensor4>> + 'static,
    {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                op,
                scope: self.scope.clone(),
            });
        }
        let parents: Vec<usize> = inputs.iter().map(|v| v.0).collect();
        debug_assert!(parents.iter().all(|&p| p < self.nodes.len()));
        let requires_grad = parents.iter().any(|&p| self.nodes[p].requires_grad);
        self.nodes.push(Node {
            op,
            scope: self.scope.clone(),
            value,
            parents,
            requires_grad,
            backward: requires_grad.then(|| Box::new(backward) as BackwardFn),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Propagates d(loss)/d(node) back to every gradient-requiring leaf.
    /// Consumes the tape.
    pub fn backward(mut self, loss: Var) -> Result<Gradients> {
        let dims = self.nodes[loss.0].value.dims();
        if dims != [1, 1, 1, 1] {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got dims {dims:?}"
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::Graph(
                "loss does not depend on any gradient-requiring leaf".into(),
            ));
        }

        let mut grads: Vec<Option<Tensor4>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor4::scalar(1.0));
        let mut leaves = HashMap::new();

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(grad) = grads[i].take() else {
                if self.nodes[i].parents.is_empty() {
                    leaves.insert(Var(i), Tensor4::zeros(self.nodes[i].value.dims())?);
                }
                continue;
            };
            let Some(rule) = self.nodes[i].backward.take() else {
                leaves.insert(Var(i), grad);
                continue;
            };
            let node = &self.nodes[i];
            let inputs: Vec<&Tensor4> =
                node.parents.iter().map(|&p| &self.nodes[p].value).collect();
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| self.nodes[p].requires_grad)
                .collect();
            let parent_grads = rule(BackwardCtx {
                grad: &grad,
                inputs: &inputs,
                output: &node.value,
                needs: &needs,
            });
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            let parents = node.parents.clone();
            for (p, g) in parents.into_iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[p].requires_grad {
                    continue;
                }
                if !g.is_finite() {
                    return Err(Error::NonFinite {
                        op: self.nodes[i].op,
                        scope: format!("{} [backward]", self.nodes[i].scope),
                    });
                }
                debug_assert_eq!(g.dims(), self.nodes[p].value.dims(), "{}", self.nodes[i].op);
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }
        // Leaves recorded after the loss cannot influence it.
        for (i, node) in self.nodes.iter().enumerate().skip(loss.0 + 1) {
            if node.requires_grad && node.parents.is_empty() {
                leaves.insert(Var(i), Tensor4::zeros(node.value.dims())?);
            }
        }
        for (var, g) in &leaves {
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    op: "backward",
                    scope: format!("{} [backward]", self.nodes[var.0].scope),
                });
            }
        }
        Ok(Gradients { leaves })
    }

    // ---- elementwise ops -------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        x.same_dims(y, "add")?;
        let mut out = x.clone();
        out.add_assign(y);
        self.record("add", out, &[a, b], |ctx| {
            vec![
                ctx.needs[0].then(|| ctx.grad.clone()),
                ctx.needs[1].then(|| ctx.grad.clone()),
            ]
        })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        x.same_dims(y, "sub")?;
        let mut out = x.clone();
        for (o, v) in out.data_mut().iter_mut().zip(y.data()) {
            *o -= v;
        }
        self.record("sub", out, &[a, b], |ctx| {
            vec![
                ctx.needs[0].then(|| ctx.grad.clone()),
                ctx.needs[1].then(|| map(ctx.grad, |g| -g)),
            ]
        })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        x.same_dims(y, "mul")?;
        let out = zip_map(x, y, |p, q| p * q);
        self.record("mul", out, &[a, b], |ctx| {
            let (x, y) = (ctx.inputs[0], ctx.inputs[1]);
            vec![
                ctx.needs[0].then(|| zip_map(ctx.grad, y, |g, q| g * q)),
                ctx.needs[1].then(|| zip_map(ctx.grad, x, |g, p| g * p)),
            ]
        })
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = map(self.value(a), |v| v * factor);
        self.record("scale", out, &[a], move |ctx| {
            vec![Some(map(ctx.grad, |g| g * factor))]
        })
    }

    /// Sum of every entry, as a `(1,1,1,1)` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor4::scalar(self.value(a).sum());
        self.record("sum", out, &[a], |ctx| {
            let g = ctx.grad.data()[0];
            vec![Some(
                Tensor4::full(ctx.inputs[0].dims(), g).expect("dims of a live tensor"),
            )]
        })
    }

    pub fn reshape(&mut self, a: Var, dims: [usize; 4]) -> Result<Var> {
        let src = self.value(a);
        let src_dims = src.dims();
        let out = src.clone().reshape(dims)?;
        self.record("reshape", out, &[a], move |ctx| {
            vec![Some(
                ctx.grad.clone().reshape(src_dims).expect("same numel"),
            )]
        })
    }
}

/// Gradients of the gradient-requiring leaves, keyed by their [`Var`].
#[derive(Debug, Default)]
pub struct Gradients {
    leaves: HashMap<Var, Tensor4>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor4> {
        self.leaves.get(&v)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor4> {
        self.leaves.remove(&v)
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }
}

pub(crate) fn map(t: &Tensor4, f: impl Fn(f64) -> f64) -> Tensor4 {
    let data = t.data().iter().map(|&v| f(v)).collect();
    Tensor4::from_vec(t.dims(), data).expect("same dims")
}

pub(crate) fn zip_map(a: &Tensor4, b: &Tensor4, f: impl Fn(f64, f64) -> f64) -> Tensor4 {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&p, &q)| f(p, q))
        .collect();
    Tensor4::from_vec(a.dims(), data).expect("same dims")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn rand(dims: [usize; 4], seed: u64) -> Tensor4 {
        Tensor4::randn(dims, &mut Rng::new(seed), 1.0).unwrap()
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut t = Tape::new();
        let x = t.leaf(rand([2, 3, 2, 2], 1), true);
        let l = t.sum(x).unwrap();
        let g = t.backward(l).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn grad_of_half_square_is_identity() {
        let xv = rand([1, 2, 3, 3], 2);
        let mut t = Tape::new();
        let x = t.leaf(xv.clone(), true);
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq).unwrap();
        let l = t.scale(s, 0.5).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap(), &xv);
    }

    #[test]
    fn identities() {
        let xv = rand([1, 2, 2, 2], 3);
        let mut t = Tape::new();
        let x = t.constant(xv.clone());
        let z = t.constant(Tensor4::zeros(xv.dims()).unwrap());
        let a = t.add(x, z).unwrap();
        assert_eq!(t.value(a), &xv);
        let s = t.scale(x, 1.0).unwrap();
        assert_eq!(t.value(s), &xv);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut t = Tape::new();
        let a = t.constant(Tensor4::zeros([1, 1, 2, 2]).unwrap());
        let b = t.constant(Tensor4::zeros([1, 1, 2, 3]).unwrap());
        assert!(matches!(t.add(a, b), Err(Error::Shape(_))));
        assert!(matches!(t.mul(a, b), Err(Error::Shape(_))));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor4::zeros([1, 1, 1, 2]).unwrap(), true);
        let y = t.scale(x, 2.0).unwrap();
        assert!(matches!(t.backward(y), Err(Error::Shape(_))));
    }

    #[test]
    fn detached_loss_rejected() {
        let mut t = Tape::new();
        let _w = t.leaf(Tensor4::scalar(1.0), true);
        let c = t.constant(Tensor4::scalar(2.0));
        let l = t.scale(c, 3.0).unwrap();
        assert!(matches!(t.backward(l), Err(Error::Graph(_))));
    }

    #[test]
    fn non_finite_values_are_surfaced() {
        let mut t = Tape::new();
        t.set_scope("probe");
        let x = t.leaf(Tensor4::scalar(f64::MAX), true);
        match t.scale(x, 10.0) {
            Err(Error::NonFinite { op, scope }) => {
                assert_eq!(op, "scale");
                assert_eq!(scope, "probe");
            }
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn unused_leaf_gets_zero_grad() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor4::scalar(1.0), true);
        let unused = t.leaf(Tensor4::zeros([1, 2, 1, 1]).unwrap(), true);
        let l = t.scale(x, 2.0).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(unused).unwrap().data(), &[0.0, 0.0]);
        assert_eq!(g.get(x).unwrap().data(), &[2.0]);
    }
}
