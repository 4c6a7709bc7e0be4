//! Feedforward velocity-increment network and its exact reverse-mode gradient.
//!
//! The network is a stack of `M` Leaky-ReLU layers followed by a linear output
//! layer without bias:
//!
//! ```text
//! f(z) = W_{M+1} · σ(W_M · … σ(W_1 z + b_1) … + b_M)
//! ```
//!
//! Parameters are grouped per layer (`{W_m, b_m}` for hidden layers and
//! `{W_{M+1}}` for the output layer); each group carries a frozen flag that the
//! optimizer honours.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[inline]
pub(crate) fn leaky<T: Scalar>(a: T, slope: T) -> T {
    if a >= T::zero() {
        a
    } else {
        slope * a
    }
}

/// Derivative of the Leaky ReLU; the positive branch is taken at zero.
#[inline]
pub(crate) fn leaky_grad<T: Scalar>(a: T, slope: T) -> T {
    if a >= T::zero() {
        T::one()
    } else {
        slope
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeedforwardNet<T> {
    pub(crate) layer_sizes: Vec<usize>,
    pub(crate) weights: Vec<Matrix<T>>,
    pub(crate) biases: Vec<Vec<T>>,
    pub(crate) activation_slope: T,
    pub(crate) frozen: Vec<bool>,
}

/// Gradients with the same layout as the owning network.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle<T> {
    pub d_weights: Vec<Matrix<T>>,
    pub d_biases: Vec<Vec<T>>,
    pub d_input: Vec<T>,
}

/// Per-layer intermediates of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    /// `inputs[m]` is the input of layer `m` (so `inputs[0] = z`).
    pub inputs: Vec<Vec<T>>,
    /// Pre-activations of the hidden layers.
    pub preacts: Vec<Vec<T>>,
    pub output: Vec<T>,
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 3 {
        return Err(Error::Config(format!(
            "a network needs an input, at least one hidden and an output layer; got sizes {layer_sizes:?}"
        )));
    }
    if layer_sizes.iter().any(|&n| n == 0) {
        return Err(Error::Config(format!(
            "layer sizes must be positive; got {layer_sizes:?}"
        )));
    }
    Ok(())
}

/// Uniform `±1/√fan_in` weights, zero biases, nothing frozen.
pub fn init_net<T: Scalar>(layer_sizes: &[usize], activation_slope: f64, seed: u64) -> Result<FeedforwardNet<T>> {
    validate_sizes(layer_sizes)?;
    if !(activation_slope > 0.0 && activation_slope < 1.0) {
        return Err(Error::Config(format!(
            "activation slope must lie in (0, 1); got {activation_slope}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = layer_sizes
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| T::c(rng.gen_range(-bound..bound)))
                .collect();
            Matrix::from_row_major(fan_out, fan_in, data).expect("sized above")
        })
        .collect::<Vec<_>>();
    let hidden = layer_sizes.len() - 2;
    let biases = layer_sizes[1..=hidden].iter().map(|&n| vec![T::zero(); n]).collect();
    Ok(FeedforwardNet {
        layer_sizes: layer_sizes.to_vec(),
        weights,
        biases,
        activation_slope: T::c(activation_slope),
        frozen: vec![false; hidden + 1],
    })
}

impl<T: Scalar> FeedforwardNet<T> {
    /// Assemble a network from explicit parameters, checking every shape invariant.
    pub fn from_parts(weights: Vec<Matrix<T>>, biases: Vec<Vec<T>>, activation_slope: T) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::Config("at least two weight matrices are required".into()));
        }
        check_len("bias vectors", weights.len() - 1, biases.len())?;
        let mut layer_sizes = vec![weights[0].cols()];
        for (m, w) in weights.iter().enumerate() {
            check_len("weight matrix columns", layer_sizes[m], w.cols())?;
            layer_sizes.push(w.rows());
            if let Some(b) = biases.get(m) {
                check_len("bias length", w.rows(), b.len())?;
            }
        }
        validate_sizes(&layer_sizes)?;
        if !(activation_slope > T::zero() && activation_slope < T::one()) {
            return Err(Error::Config("activation slope must lie in (0, 1)".into()));
        }
        let all_finite = weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && biases.iter().flatten().all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Numeric("non-finite network parameter".into()));
        }
        let groups = weights.len();
        Ok(Self {
            layer_sizes,
            weights,
            biases,
            activation_slope,
            frozen: vec![false; groups],
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    /// Number of hidden layers `M`.
    pub fn hidden_layers(&self) -> usize {
        self.layer_sizes.len() - 2
    }

    pub fn weights(&self) -> &[Matrix<T>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<T>] {
        &self.biases
    }

    pub fn activation_slope(&self) -> T {
        self.activation_slope
    }

    /// Frozen flag per parameter group `Θ_1..Θ_{M+1}`.
    pub fn frozen(&self) -> &[bool] {
        &self.frozen
    }

    pub(crate) fn set_frozen(&mut self, frozen: Vec<bool>) -> Result<()> {
        check_len("frozen flags", self.weights.len(), frozen.len())?;
        self.frozen = frozen;
        Ok(())
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix<T>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.biases
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.as_slice().len()).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn forward(&self, z: &[T]) -> Result<Vec<T>> {
        Ok(self.forward_trace(z)?.output)
    }

    pub fn forward_trace(&self, z: &[T]) -> Result<ForwardTrace<T>> {
        check_len("network input", self.input_dim(), z.len())?;
        let hidden = self.hidden_layers();
        let mut inputs = Vec::with_capacity(hidden + 1);
        let mut preacts = Vec::with_capacity(hidden);
        let mut h = z.to_vec();
        for (w, b) in self.weights[..hidden].iter().zip(&self.biases) {
            let mut a = w.matvec(&h);
            for (ai, &bi) in a.iter_mut().zip(b) {
                *ai += bi;
            }
            let next = a.iter().map(|&x| leaky(x, self.activation_slope)).collect();
            inputs.push(std::mem::replace(&mut h, next));
            preacts.push(a);
        }
        let output = self.weights[hidden].matvec(&h);
        inputs.push(h);
        Ok(ForwardTrace {
            inputs,
            preacts,
            output,
        })
    }

    /// Reverse-mode gradient of `upstreamᵀ f(z)` with respect to all
    /// parameters and the input.
    pub fn backward(&self, z: &[T], upstream: &[T]) -> Result<GradientBundle<T>> {
        let trace = self.forward_trace(z)?;
        self.backward_from_trace(&trace, upstream)
    }

    pub fn backward_from_trace(&self, trace: &ForwardTrace<T>, upstream: &[T]) -> Result<GradientBundle<T>> {
        check_len("upstream gradient", self.output_dim(), upstream.len())?;
        let mut grads = GradientBundle::zeros_like(self);
        self.accumulate_backward(trace, upstream, &mut grads);
        Ok(grads)
    }

    /// Adds the gradient of `upstreamᵀ f` into `grads` and overwrites `grads.d_input`.
    pub(crate) fn accumulate_backward(&self, trace: &ForwardTrace<T>, upstream: &[T], grads: &mut GradientBundle<T>) {
        let hidden = self.hidden_layers();
        grads.d_weights[hidden].add_outer(T::one(), upstream, &trace.inputs[hidden]);
        let mut delta = self.weights[hidden].matvec_t(upstream);
        for m in (0..hidden).rev() {
            for (d, &a) in delta.iter_mut().zip(&trace.preacts[m]) {
                *d *= leaky_grad(a, self.activation_slope);
            }
            grads.d_weights[m].add_outer(T::one(), &delta, &trace.inputs[m]);
            for (gb, &d) in grads.d_biases[m].iter_mut().zip(&delta) {
                *gb += d;
            }
            delta = self.weights[m].matvec_t(&delta);
        }
        grads.d_input = delta;
    }
}

impl<T: Scalar> GradientBundle<T> {
    pub fn zeros_like(net: &FeedforwardNet<T>) -> Self {
        Self {
            d_weights: net
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            d_biases: net.biases.iter().map(|b| vec![T::zero(); b.len()]).collect(),
            d_input: vec![T::zero(); net.input_dim()],
        }
    }

    /// Parameter entries (weights then biases, group by group), excluding `d_input`.
    pub fn param_values(&self) -> impl Iterator<Item = T> + '_ {
        self.d_weights
            .iter()
            .flat_map(|w| w.iter().copied())
            .chain(self.d_biases.iter().flatten().copied())
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.d_weights.iter_mut().zip(&other.d_weights) {
            for (x, &y) in a.iter_mut().zip(b.iter()) {
                *x += y;
            }
        }
        for (a, b) in self.d_biases.iter_mut().zip(&other.d_biases) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (x, &y) in self.d_input.iter_mut().zip(&other.d_input) {
            *x += y;
        }
    }

    pub fn scale(&mut self, c: T) {
        self.d_weights.iter_mut().for_each(|w| w.iter_mut().for_each(|x| *x *= c));
        self.d_biases.iter_mut().flatten().for_each(|x| *x *= c);
        self.d_input.iter_mut().for_each(|x| *x *= c);
    }

    /// Euclidean norm over the parameter gradients.
    pub fn global_norm(&self) -> T {
        self.param_values().map(|x| x * x).sum::<T>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.param_values().all(|x| x.is_finite())
    }
}
