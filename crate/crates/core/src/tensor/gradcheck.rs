//! Central-difference gradient checking.
//!
//! Fragments are evaluated in `f64` so that the finite-difference side is
//! not dominated by single-precision rounding; the backward rules exercised
//! are the same generic kernels the `f32` training path runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::Conv2dSpec;
use super::{Element, Tape, Tensor, TensorError, Var};

/// A differentiable piece of a network reduced to a scalar loss.
pub trait Fragment {
    /// Parameter values in the order `loss` expects them.
    fn parameters(&self) -> Vec<Tensor<f64>>;

    /// Records the fragment on `tape` and returns a one-element loss.
    fn loss<T: Element>(
        &self,
        tape: &mut Tape<T>,
        input: Var,
        params: &[Var],
    ) -> Result<Var, TensorError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(parameter index, element index)` of the worst element.
    pub worst: (usize, usize),
    pub checked: usize,
}

fn evaluate<F: Fragment>(
    fragment: &F,
    input: &Tensor<f64>,
    params: &[Tensor<f64>],
) -> Result<f64, TensorError> {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(input.clone());
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = fragment.loss(&mut tape, x, &vars)?;
    Ok(tape.value(loss).data()[0])
}

/// Largest relative discrepancy between analytic and central-difference
/// gradients over every parameter element:
/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F: Fragment, T: Element>(
    fragment: &F,
    input: &Tensor<T>,
    epsilon: f64,
) -> Result<GradCheckReport, TensorError> {
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(TensorError::InvalidArgument {
            op: "grad_check",
            reason: format!("epsilon must lie in (0, 1e-2], got {epsilon}"),
        });
    }
    let input = input.cast::<f64>();
    let mut params = fragment.parameters();

    let mut tape = Tape::<f64>::new();
    let x = tape.constant(input.clone());
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = fragment.loss(&mut tape, x, &vars)?;
    let grads = tape.backward(loss)?;

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    for (pi, var) in vars.iter().enumerate() {
        let analytic = match grads.get(*var) {
            Some(g) => g.data().to_vec(),
            None => vec![0.0; params[pi].len()],
        };
        for (ei, &a) in analytic.iter().enumerate() {
            let original = params[pi].data()[ei];
            params[pi].data_mut()[ei] = original + epsilon;
            let plus = evaluate(fragment, &input, &params)?;
            params[pi].data_mut()[ei] = original - epsilon;
            let minus = evaluate(fragment, &input, &params)?;
            params[pi].data_mut()[ei] = original;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = (pi, ei);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

/// A lone dense layer probed by a fixed random weighted sum.
#[derive(Debug, Clone)]
pub struct DenseFragment {
    pub weight: Tensor<f64>,
    pub bias: Tensor<f64>,
    pub probe: Tensor<f64>,
}

impl DenseFragment {
    pub fn random(batch: usize, inputs: usize, outputs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            weight: random_tensor(&mut rng, &[inputs, outputs], 1.0),
            bias: random_tensor(&mut rng, &[outputs], 0.5),
            probe: random_tensor(&mut rng, &[batch, outputs], 1.0),
        }
    }
}

impl Fragment for DenseFragment {
    fn parameters(&self) -> Vec<Tensor<f64>> {
        vec![self.weight.clone(), self.bias.clone()]
    }

    fn loss<T: Element>(
        &self,
        tape: &mut Tape<T>,
        input: Var,
        params: &[Var],
    ) -> Result<Var, TensorError> {
        let y = tape.dense(input, params[0], params[1])?;
        tape.weighted_sum(y, self.probe.cast())
    }
}

/// One convolution followed by ReLU, probed by a fixed random weighted sum.
#[derive(Debug, Clone)]
pub struct ConvReluFragment {
    pub spec: Conv2dSpec,
    pub weight: Tensor<f64>,
    pub bias: Tensor<f64>,
    pub probe: Tensor<f64>,
}

impl ConvReluFragment {
    /// `input_shape` is `N×C×H×W`; `spec.in_channels` must equal `C`.
    pub fn random(spec: Conv2dSpec, input_shape: [usize; 4], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (oh, ow) = spec
            .output_size(input_shape[2], input_shape[3])
            .expect("fragment geometry");
        Self {
            spec,
            weight: random_tensor(&mut rng, &spec.weight_shape(), 0.5),
            bias: random_tensor(&mut rng, &[spec.out_channels], 0.2),
            probe: random_tensor(&mut rng, &[input_shape[0], spec.out_channels, oh, ow], 1.0),
        }
    }

    /// Pre-activation values of this fragment on `input`, used by callers to
    /// move inputs away from the ReLU kink.
    pub fn pre_activation(&self, input: &Tensor<f64>) -> Result<Tensor<f64>, TensorError> {
        super::kernels::conv2d(input, &self.spec, &self.weight, &self.bias)
    }
}

impl Fragment for ConvReluFragment {
    fn parameters(&self) -> Vec<Tensor<f64>> {
        vec![self.weight.clone(), self.bias.clone()]
    }

    fn loss<T: Element>(
        &self,
        tape: &mut Tape<T>,
        input: Var,
        params: &[Var],
    ) -> Result<Var, TensorError> {
        let y = tape.conv2d(input, params[0], params[1], self.spec)?;
        let r = tape.relu(y)?;
        tape.weighted_sum(r, self.probe.cast())
    }
}
