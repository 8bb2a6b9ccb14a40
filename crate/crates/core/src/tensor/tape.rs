//! Reverse-mode gradient tape.
//!
//! Every operation appends a node holding its output value and enough
//! context to replay its backward rule. Nodes are only ever appended, so the
//! index order is an execution (topological) order and `backward` walks it
//! in reverse.

use super::kernels::{self, Conv2dSpec};
use super::{Element, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        spec: Conv2dSpec,
    },
    Elu {
        input: Var,
        alpha: f64,
    },
    Relu {
        input: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    GlobalAvgPool {
        input: Var,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor<T>,
    },
    WeightedSum {
        input: Var,
        coeffs: Tensor<T>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Elu { .. } => "elu",
            Op::Relu { .. } => "relu",
            Op::Add { .. } => "add",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::Dense { .. } => "dense",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::WeightedSum { .. } => "weighted_sum",
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Single-threaded record of executed operations.
#[derive(Debug, Default)]
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    /// `None` when the value does not influence the differentiated output.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input that gradients are not tracked for.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var, TensorError> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|&v| self.needs(v));
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        spec: Conv2dSpec,
    ) -> Result<Var, TensorError> {
        let out = kernels::conv2d(
            self.value(input),
            &spec,
            self.value(weight),
            self.value(bias),
        )?;
        self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
            },
            &[input, weight, bias],
        )
    }

    pub fn elu(&mut self, input: Var, alpha: f64) -> Result<Var, TensorError> {
        let out = kernels::elu(self.value(input), alpha)?;
        self.push(out, Op::Elu { input, alpha }, &[input])
    }

    pub fn relu(&mut self, input: Var) -> Result<Var, TensorError> {
        let out = kernels::relu(self.value(input));
        self.push(out, Op::Relu { input }, &[input])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = kernels::add(self.value(a), self.value(b))?;
        self.push(out, Op::Add { a, b }, &[a, b])
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var, TensorError> {
        let out = kernels::global_avg_pool(self.value(input))?;
        self.push(out, Op::GlobalAvgPool { input }, &[input])
    }

    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var, TensorError> {
        let out = kernels::dense(self.value(input), self.value(weight), self.value(bias))?;
        self.push(
            out,
            Op::Dense {
                input,
                weight,
                bias,
            },
            &[input, weight, bias],
        )
    }

    /// Mean cross-entropy; the result is a one-element tensor.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
    ) -> Result<Var, TensorError> {
        let (loss, probs) = kernels::softmax_cross_entropy(self.value(logits), labels)?;
        self.push(
            Tensor::scalar(T::from_f64(loss)),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    pub fn weighted_sum(&mut self, input: Var, coeffs: Tensor<T>) -> Result<Var, TensorError> {
        let s = kernels::weighted_sum(self.value(input), &coeffs)?;
        self.push(
            Tensor::scalar(T::from_f64(s)),
            Op::WeightedSum { input, coeffs },
            &[input],
        )
    }

    /// Differentiates `root` (seeded with ones) with respect to every
    /// recorded value that requires a gradient.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>, TensorError> {
        let seed = Tensor::ones(self.value(root).shape());
        self.backward_with_seed(root, seed)
    }

    /// Vector-Jacobian product: propagates `seed` (shaped like `root`) back
    /// through the tape.
    pub fn backward_with_seed(
        &self,
        root: Var,
        seed: Tensor<T>,
    ) -> Result<Gradients<T>, TensorError> {
        if seed.shape() != self.value(root).shape() {
            return Err(TensorError::InvalidArgument {
                op: "backward",
                reason: format!(
                    "seed shape {:?} != root shape {:?}",
                    seed.shape(),
                    self.value(root).shape()
                ),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(seed);

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if !g.all_finite() {
                return Err(TensorError::NonFinite { op: node.op.name() });
            }
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(
        &self,
        node: &Node<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<(), TensorError> {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
            } => {
                let want_input = self.needs(*input);
                let cg = kernels::conv2d_backward(
                    self.value(*input),
                    spec,
                    self.value(*weight),
                    g,
                    want_input,
                )?;
                if let Some(gi) = cg.input {
                    self.accumulate(grads, *input, gi);
                }
                self.accumulate(grads, *weight, cg.weight);
                self.accumulate(grads, *bias, cg.bias);
            }
            Op::Elu { input, alpha } => {
                let gi = kernels::elu_backward(self.value(*input), &node.value, g, *alpha);
                self.accumulate(grads, *input, gi);
            }
            Op::Relu { input } => {
                let gi = kernels::relu_backward(self.value(*input), g);
                self.accumulate(grads, *input, gi);
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::GlobalAvgPool { input } => {
                let gi = kernels::global_avg_pool_backward(self.value(*input).shape(), g);
                self.accumulate(grads, *input, gi);
            }
            Op::Dense {
                input,
                weight,
                bias,
            } => {
                let dg = kernels::dense_backward(self.value(*input), self.value(*weight), g);
                self.accumulate(grads, *input, dg.input);
                self.accumulate(grads, *weight, dg.weight);
                self.accumulate(grads, *bias, dg.bias);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let gl =
                    kernels::softmax_cross_entropy_backward(probs, labels, g.data()[0].to_f64());
                self.accumulate(grads, *logits, gl);
            }
            Op::WeightedSum { input, coeffs } => {
                let up = g.data()[0].to_f64();
                let gi = coeffs.map(|c| T::from_f64(c.to_f64() * up));
                self.accumulate(grads, *input, gi);
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], var: Var, g: Tensor<T>) {
        if !self.needs(var) {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_distributes_gradient() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let b = tape.param(Tensor::new(vec![2], vec![3.0, 4.0]).unwrap());
        let s = tape.add(a, b).unwrap();
        let loss = tape.weighted_sum(s, Tensor::ones(&[2])).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[1.0, 1.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn reused_value_accumulates() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(Tensor::new(vec![1], vec![3.0]).unwrap());
        let s = tape.add(a, a).unwrap();
        let loss = tape.weighted_sum(s, Tensor::ones(&[1])).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[2.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones(&[1, 2]));
        let w = tape.param(Tensor::ones(&[2, 1]));
        let b = tape.param(Tensor::zeros(&[1]));
        let y = tape.dense(x, w, b).unwrap();
        let grads = tape.backward(y).unwrap();
        assert!(grads.get(x).is_none());
        assert_eq!(grads.get(w).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn non_finite_forward_is_reported() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::new(vec![1, 2], vec![1e30, 1e30]).unwrap());
        let w = tape.param(Tensor::filled(&[2, 1], 1e30));
        let b = tape.param(Tensor::zeros(&[1]));
        assert_eq!(
            tape.dense(x, w, b).unwrap_err(),
            TensorError::NonFinite { op: "dense" }
        );
    }
}
