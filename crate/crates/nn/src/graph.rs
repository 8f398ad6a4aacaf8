//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the tape from the loss node towards the leaves and leaves the
//! accumulated gradient on every node it reaches.

use crate::activation::{gelu, gelu_grad};
use crate::conv::{conv_backward, conv_forward};
use crate::tensor::{Scalar, Tensor};
use crate::NnError;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv { input: Var, weight: Var, bias: Var },
    Gelu(Var),
    Concat(Vec<Var>),
    Add(Var, Var),
    MseL2 { pred: Var, target: Var, weights: Vec<Var>, lambda: f64 },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
    grad: Option<Vec<T>>,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Var {
        self.nodes.push(Node { value, op, grad: None });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> Result<&Node<T>, NnError> {
        self.nodes.get(v.0).ok_or(NnError::NotRecorded(v.0))
    }

    /// Inputs, targets and parameters all enter the tape as leaves.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient left on `v` by the last [`Graph::backward`], if it was reached.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes.get(v.0)?.grad.as_deref()
    }

    pub fn conv(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var, NnError> {
        let out = conv_forward(
            &self.node(input)?.value,
            &self.node(weight)?.value,
            &self.node(bias)?.value,
        )?;
        Ok(self.push(out, Op::Conv { input, weight, bias }))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var, NnError> {
        let out = self.node(x)?.value.map(gelu);
        Ok(self.push(out, Op::Gelu(x)))
    }

    /// Concatenates along the channel (leading) axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let first = parts
            .first()
            .ok_or_else(|| NnError::Shape("concat of nothing".into()))?;
        let spatial = self.node(*first)?.value.spatial().to_vec();
        let mut channels = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = &self.node(p)?.value;
            if t.spatial() != spatial.as_slice() {
                return Err(NnError::Shape(format!(
                    "concat spatial mismatch: {:?} vs {:?}",
                    t.spatial(),
                    spatial
                )));
            }
            channels += t.channels();
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![channels];
        shape.extend(spatial);
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (ta, tb) = (&self.node(a)?.value, &self.node(b)?.value);
        if ta.shape() != tb.shape() {
            return Err(NnError::Shape(format!(
                "add shape mismatch: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// `‖pred − target‖²_F + λ Σ ‖w‖²_F` over the given weight tensors.
    pub fn mse_l2_loss(
        &mut self,
        pred: Var,
        target: Var,
        weights: &[Var],
        lambda: f64,
    ) -> Result<Var, NnError> {
        let (tp, tt) = (&self.node(pred)?.value, &self.node(target)?.value);
        if tp.shape() != tt.shape() {
            return Err(NnError::Shape(format!(
                "loss shape mismatch: prediction {:?} vs target {:?}",
                tp.shape(),
                tt.shape()
            )));
        }
        let mut data_term = 0.0f64;
        for (&p, &t) in tp.data().iter().zip(tt.data()) {
            let d = (p - t).as_f64();
            data_term += d * d;
        }
        let mut reg = 0.0f64;
        for &w in weights {
            reg += self
                .node(w)?
                .value
                .data()
                .iter()
                .map(|v| v.as_f64() * v.as_f64())
                .sum::<f64>();
        }
        let out = Tensor::scalar(T::from_f64(data_term + lambda * reg));
        Ok(self.push(
            out,
            Op::MseL2 {
                pred,
                target,
                weights: weights.to_vec(),
                lambda,
            },
        ))
    }

    /// Back-propagates from the scalar node `loss`, replacing any gradients
    /// left by a previous call.
    pub fn backward(&mut self, loss: Var) -> Result<(), NnError> {
        let numel = self.node(loss)?.value.numel();
        if numel != 1 {
            return Err(NnError::Shape(format!(
                "backward needs a scalar loss, node has {numel} elements"
            )));
        }
        self.backward_with(loss, vec![T::one()])
    }

    /// Back-propagates an explicit upstream gradient from `out`.
    pub fn backward_with(&mut self, out: Var, seed: Vec<T>) -> Result<(), NnError> {
        let numel = self.node(out)?.value.numel();
        if seed.len() != numel {
            return Err(NnError::Shape(format!(
                "seed gradient has {} elements for a node with {numel}",
                seed.len()
            )));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[out.0].grad = Some(seed);

        for i in (0..=out.0).rev() {
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::Conv { input, weight, bias } => {
                    let go = Tensor::new(self.nodes[i].value.shape().to_vec(), g.clone())?;
                    let grads = conv_backward(
                        &self.nodes[input.0].value,
                        &self.nodes[weight.0].value,
                        &go,
                    )?;
                    self.accumulate(input, grads.input.into_data());
                    self.accumulate(weight, grads.weight.into_data());
                    self.accumulate(bias, grads.bias.into_data());
                }
                Op::Gelu(x) => {
                    let gx = self.nodes[x.0]
                        .value
                        .data()
                        .iter()
                        .zip(&g)
                        .map(|(&xv, &gv)| gv * gelu_grad(xv))
                        .collect();
                    self.accumulate(x, gx);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.numel();
                        self.accumulate(p, g[offset..offset + n].to_vec());
                        offset += n;
                    }
                }
                Op::Add(a, b) => {
                    self.accumulate(a, g.clone());
                    self.accumulate(b, g.clone());
                }
                Op::MseL2 {
                    pred,
                    target,
                    weights,
                    lambda,
                } => {
                    let two_g = T::from_f64(2.0) * g[0];
                    let diff: Vec<T> = self.nodes[pred.0]
                        .value
                        .data()
                        .iter()
                        .zip(self.nodes[target.0].value.data())
                        .map(|(&p, &t)| two_g * (p - t))
                        .collect();
                    let neg = diff.iter().map(|&d| -d).collect();
                    self.accumulate(pred, diff);
                    self.accumulate(target, neg);
                    let scale = two_g * T::from_f64(lambda);
                    for w in weights {
                        let gw = self.nodes[w.0].value.data().iter().map(|&v| scale * v).collect();
                        self.accumulate(w, gw);
                    }
                }
            }
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Vec<T>) {
        match &mut self.nodes[v.0].grad {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a = *a + b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }
}
