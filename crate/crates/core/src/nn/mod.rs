//! Small dense networks with hand-written reverse-mode differentiation.
//!
//! Every generator, adversary, teacher and critic in the crate is an [`Mlp`]:
//! an [`Architecture`] plus one flat parameter vector. The flat layout is
//! layer-major; within a layer the weight matrix comes first (row-major,
//! `fan_out` rows of `fan_in` columns) followed by the bias vector. The
//! checkpoint format depends on this order, so it must not change.

mod checkpoint;
mod optim;
mod split;

pub use checkpoint::{checkpoint_load, checkpoint_save, parse_checkpoint, render_checkpoint};
pub use optim::{Optimizer, OptimizerKind};
pub use split::EncoderDecoderSplit;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    LeakyRelu(f64),
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::LeakyRelu(slope) => {
                if z >= 0.0 {
                    z
                } else {
                    slope * z
                }
            }
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::LeakyRelu(slope) => {
                if z >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn is_smooth(self) -> bool {
        matches!(self, Activation::Tanh | Activation::Identity)
    }

    fn name(self) -> String {
        match self {
            Activation::Tanh => "tanh".into(),
            Activation::LeakyRelu(s) => format!("leaky_relu({s})"),
            Activation::Identity => "identity".into(),
        }
    }

    fn parse(s: &str) -> Option<Activation> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => {
                let inner = s.strip_prefix("leaky_relu(")?.strip_suffix(')')?;
                let slope: f64 = inner.parse().ok()?;
                Some(Activation::LeakyRelu(slope))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputActivation {
    Identity,
    Tanh,
}

impl OutputActivation {
    fn as_activation(self) -> Activation {
        match self {
            OutputActivation::Identity => Activation::Identity,
            OutputActivation::Tanh => Activation::Tanh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub output_activation: OutputActivation,
}

impl Architecture {
    /// Smooth generator of the given depth (number of weight layers).
    pub fn generator(dim: usize, depth: usize, width: usize) -> Architecture {
        Architecture {
            input_dim: dim,
            hidden_widths: vec![width; depth.saturating_sub(1)],
            output_dim: dim,
            activation: Activation::Tanh,
            output_activation: OutputActivation::Identity,
        }
    }

    /// Scalar leaky-relu critic.
    pub fn critic(dim: usize, hidden_widths: Vec<usize>) -> Architecture {
        Architecture {
            input_dim: dim,
            hidden_widths,
            output_dim: 1,
            activation: Activation::LeakyRelu(0.2),
            output_activation: OutputActivation::Identity,
        }
    }

    pub fn depth(&self) -> usize {
        self.hidden_widths.len() + 1
    }

    /// `(fan_in, fan_out)` of every weight layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.depth());
        let mut fan_in = self.input_dim;
        for &w in &self.hidden_widths {
            dims.push((fan_in, w));
            fan_in = w;
        }
        dims.push((fan_in, self.output_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|&(i, o)| i * o + o).sum()
    }

    fn layer_activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.depth() {
            self.output_activation.as_activation()
        } else {
            self.activation
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::contract("architecture dimensions must be positive"));
        }
        if self.hidden_widths.iter().any(|&w| w == 0) {
            return Err(Error::contract("hidden widths must be positive"));
        }
        if let Activation::LeakyRelu(s) = self.activation {
            if !(s > 0.0 && s < 1.0) {
                return Err(Error::contract(format!("leaky_relu slope {s} outside (0,1)")));
            }
        }
        Ok(())
    }

    /// Generators must be C¹ for the smoothness assumption of the bound.
    pub fn validate_generator(&self) -> Result<()> {
        self.validate()?;
        if !self.activation.is_smooth() {
            return Err(Error::contract(format!(
                "generator activation {} is not continuously differentiable",
                self.activation.name()
            )));
        }
        Ok(())
    }

    pub fn descriptor(&self) -> String {
        let hidden: Vec<String> = self.hidden_widths.iter().map(|w| w.to_string()).collect();
        format!(
            "in={} hidden={} out={} act={} outact={}",
            self.input_dim,
            hidden.join(","),
            self.output_dim,
            self.activation.name(),
            self.output_activation.as_activation().name()
        )
    }

    pub fn parse_descriptor(line: &str) -> Option<Architecture> {
        let mut input_dim = None;
        let mut hidden = None;
        let mut output_dim = None;
        let mut act = None;
        let mut outact = None;
        for field in line.split_whitespace() {
            let (key, value) = field.split_once('=')?;
            match key {
                "in" => input_dim = Some(value.parse().ok()?),
                "hidden" => {
                    let widths: Option<Vec<usize>> = if value.is_empty() {
                        Some(Vec::new())
                    } else {
                        value.split(',').map(|w| w.parse().ok()).collect()
                    };
                    hidden = Some(widths?);
                }
                "out" => output_dim = Some(value.parse().ok()?),
                "act" => act = Some(Activation::parse(value)?),
                "outact" => {
                    outact = Some(match value {
                        "identity" => OutputActivation::Identity,
                        "tanh" => OutputActivation::Tanh,
                        _ => return None,
                    })
                }
                _ => return None,
            }
        }
        Some(Architecture {
            input_dim: input_dim?,
            hidden_widths: hidden?,
            output_dim: output_dim?,
            activation: act?,
            output_activation: outact?,
        })
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.descriptor())
    }
}

/// Per-layer pre-activations and activations of one forward pass.
///
/// `acts[0]` is the input; `acts[l + 1]` the output of layer `l`.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pre: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    arch: Architecture,
    params: Vec<f64>,
}

impl Mlp {
    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Mlp> {
        arch.validate()?;
        let expected = arch.param_count();
        if params.len() != expected {
            return Err(Error::contract(format!(
                "expected {expected} parameters for {arch}, found {}",
                params.len()
            )));
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::contract(format!("parameter {i} is not finite")));
        }
        Ok(Mlp { arch, params })
    }

    pub fn zeros(arch: Architecture) -> Result<Mlp> {
        let n = arch.param_count();
        Mlp::from_params(arch, vec![0.0; n])
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Mlp> {
        arch.validate()?;
        let mut params = Vec::with_capacity(arch.param_count());
        for (fan_in, fan_out) in arch.layer_dims() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(rng.random_range(-limit..=limit));
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Mlp { arch, params })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.arch.output_dim
    }

    /// Overwrite all parameters. Length must match.
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::contract(format!(
                "expected {} parameters, found {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Offset of the first parameter of `layer` in the flat vector.
    pub fn layer_offset(&self, layer: usize) -> usize {
        self.arch.layer_dims()[..layer].iter().map(|&(i, o)| i * o + o).sum()
    }

    /// Weight matrix of `layer` as a row-major slice plus its shape.
    pub fn layer_weights(&self, layer: usize) -> (&[f64], usize, usize) {
        let (fan_in, fan_out) = self.arch.layer_dims()[layer];
        let off = self.layer_offset(layer);
        (&self.params[off..off + fan_in * fan_out], fan_out, fan_in)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.eval(x))
    }

    /// Forward pass without the dimension check, for hot loops that have
    /// already validated their inputs.
    pub(crate) fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut off = 0;
        for (l, (fan_in, fan_out)) in self.arch.layer_dims().into_iter().enumerate() {
            let act = self.arch.layer_activation(l);
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let mut next = Vec::with_capacity(fan_out);
            for o in 0..fan_out {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let z = b[o] + dot(row, &cur);
                next.push(act.apply(z));
            }
            off += fan_in * fan_out + fan_out;
            cur = next;
        }
        cur
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_dim {
            return Err(Error::contract(format!(
                "input has length {}, network expects {}",
                x.len(),
                self.arch.input_dim
            )));
        }
        Ok(())
    }

    /// Forward pass that keeps everything the backward pass needs.
    pub fn trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        let mut trace = Trace::default();
        self.trace_into(x, &mut trace);
        Ok(trace)
    }

    pub(crate) fn trace_into(&self, x: &[f64], trace: &mut Trace) {
        let dims = self.arch.layer_dims();
        trace.pre.resize(dims.len(), Vec::new());
        trace.acts.resize(dims.len() + 1, Vec::new());
        trace.acts[0].clear();
        trace.acts[0].extend_from_slice(x);
        let mut off = 0;
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let act = self.arch.layer_activation(l);
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let (before, after) = trace.acts.split_at_mut(l + 1);
            let input = &before[l];
            let out = &mut after[0];
            let pre = &mut trace.pre[l];
            pre.clear();
            out.clear();
            for o in 0..fan_out {
                let z = b[o] + dot(&w[o * fan_in..(o + 1) * fan_in], input);
                pre.push(z);
                out.push(act.apply(z));
            }
            off += fan_in * fan_out + fan_out;
        }
    }

    /// Reverse-mode gradient of `<seed, f(x)>` with respect to the parameters
    /// and the input.
    pub fn backward(&self, seed: &[f64], x: &[f64]) -> Result<Gradients> {
        let trace = self.trace(x)?;
        let mut params = vec![0.0; self.params.len()];
        let input = self.backward_from(&trace, seed, Some(&mut params))?;
        Ok(Gradients { params, input })
    }

    /// Backward pass over a recorded trace. Parameter gradients are
    /// accumulated (added) into `grad_params` when given; the input gradient
    /// is returned.
    pub(crate) fn backward_from(
        &self,
        trace: &Trace,
        seed: &[f64],
        mut grad_params: Option<&mut [f64]>,
    ) -> Result<Vec<f64>> {
        if seed.len() != self.arch.output_dim {
            return Err(Error::contract(format!(
                "output gradient has length {}, network outputs {}",
                seed.len(),
                self.arch.output_dim
            )));
        }
        let dims = self.arch.layer_dims();
        let mut offsets = Vec::with_capacity(dims.len());
        let mut off = 0;
        for &(i, o) in &dims {
            offsets.push(off);
            off += i * o + o;
        }
        let mut delta: Vec<f64> = seed.to_vec();
        for l in (0..dims.len()).rev() {
            let (fan_in, fan_out) = dims[l];
            let act = self.arch.layer_activation(l);
            let pre = &trace.pre[l];
            let out = &trace.acts[l + 1];
            for o in 0..fan_out {
                delta[o] *= act.derivative(pre[o], out[o]);
            }
            if let Some(o) = delta.iter().position(|d| !d.is_finite()) {
                return Err(Error::Numeric {
                    layer: l,
                    context: format!("backpropagated gradient component {o} is {}", delta[o]),
                });
            }
            let input = &trace.acts[l];
            let w_off = offsets[l];
            if let Some(g) = grad_params.as_deref_mut() {
                for o in 0..fan_out {
                    let d = delta[o];
                    if d != 0.0 {
                        let row = &mut g[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                        for (gi, xi) in row.iter_mut().zip(input) {
                            *gi += d * xi;
                        }
                    }
                    g[w_off + fan_in * fan_out + o] += d;
                }
            }
            let w = &self.params[w_off..w_off + fan_in * fan_out];
            let mut prev = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                if d != 0.0 {
                    for (p, wi) in prev.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                        *p += d * wi;
                    }
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    /// Clamp every parameter into `[-c, c]`.
    pub fn clip_weights(&mut self, c: f64) -> Result<()> {
        if !(c > 0.0) {
            return Err(Error::contract(format!("clip value must be positive, got {c}")));
        }
        for p in &mut self.params {
            *p = p.clamp(-c, c);
        }
        Ok(())
    }

    /// Product of the layer spectral norms, an upper bound on the Lipschitz
    /// constant for activations of slope at most one.
    pub fn lipschitz_upper_bound(&self) -> f64 {
        (0..self.arch.depth())
            .map(|l| {
                let (w, rows, cols) = self.layer_weights(l);
                spectral_norm(w, rows, cols)
            })
            .product()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const POWER_ITERATIONS: usize = 200;
const POWER_TOLERANCE: f64 = 1e-10;

/// Largest singular value of a row-major `rows x cols` matrix by power
/// iteration on `WᵀW`.
pub fn spectral_norm(w: &[f64], rows: usize, cols: usize) -> f64 {
    debug_assert_eq!(w.len(), rows * cols);
    // Start from the row of largest norm: never in the null space unless W = 0.
    let best_row = (0..rows)
        .max_by(|&a, &b| {
            let na = dot(&w[a * cols..(a + 1) * cols], &w[a * cols..(a + 1) * cols]);
            let nb = dot(&w[b * cols..(b + 1) * cols], &w[b * cols..(b + 1) * cols]);
            na.total_cmp(&nb)
        })
        .unwrap_or(0);
    let mut v: Vec<f64> = w[best_row * cols..(best_row + 1) * cols].to_vec();
    let norm = dot(&v, &v).sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    let mut sigma = 0.0;
    let mut wv = vec![0.0; rows];
    for _ in 0..POWER_ITERATIONS {
        for (r, out) in wv.iter_mut().enumerate() {
            *out = dot(&w[r * cols..(r + 1) * cols], &v);
        }
        let mut next = vec![0.0; cols];
        for (r, &s) in wv.iter().enumerate() {
            for (n, wi) in next.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                *n += s * wi;
            }
        }
        let nn = dot(&next, &next).sqrt();
        if nn == 0.0 {
            return 0.0;
        }
        // ‖WᵀW v‖ → σ², with v unit.
        let estimate = nn.sqrt();
        next.iter_mut().for_each(|x| *x /= nn);
        v = next;
        let done = (estimate - sigma).abs() <= POWER_TOLERANCE * estimate.max(1e-300);
        sigma = estimate;
        if done {
            break;
        }
    }
    // Rayleigh quotient ‖Wv‖ is the sharper final estimate.
    for (r, out) in wv.iter_mut().enumerate() {
        *out = dot(&w[r * cols..(r + 1) * cols], &v);
    }
    dot(&wv, &wv).sqrt().max(sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear(w: Vec<f64>, b: Vec<f64>, dim: usize, act: OutputActivation) -> Mlp {
        let arch = Architecture {
            input_dim: dim,
            hidden_widths: vec![],
            output_dim: b.len(),
            activation: Activation::Identity,
            output_activation: act,
        };
        let mut params = w;
        params.extend(b);
        Mlp::from_params(arch, params).unwrap()
    }

    #[test]
    fn forward_small_cases() {
        let zero = Mlp::zeros(Architecture::generator(2, 3, 4)).unwrap();
        assert_eq!(zero.forward(&[0.3, -1.7]).unwrap(), vec![0.0, 0.0]);

        let id = linear(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 2, OutputActivation::Identity);
        assert_eq!(id.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);

        let diag = linear(vec![2.0, 0.0, 0.0, 3.0], vec![0.0, 0.0], 2, OutputActivation::Identity);
        assert_eq!(diag.forward(&[1.0, 1.0]).unwrap(), vec![2.0, 3.0]);
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let net = Mlp::zeros(Architecture::generator(2, 2, 3)).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::init(Architecture::generator(2, 3, 5), &mut rng).unwrap();
        let g = net.backward(&[0.0, 0.0], &[0.4, -0.2]).unwrap();
        assert!(g.params.iter().all(|&v| v == 0.0));

        let neuron = linear(vec![0.7, -0.3], vec![0.1], 2, OutputActivation::Identity);
        let g = neuron.backward(&[1.0], &[1.0, 2.0]).unwrap();
        assert_eq!(&g.params[..2], &[1.0, 2.0]);
        assert_eq!(g.params[2], 1.0);
        assert_eq!(g.input, vec![0.7, -0.3]);
    }

    #[test]
    fn backward_reports_non_finite_layer() {
        let net = linear(vec![1.0, 0.0], vec![0.0], 2, OutputActivation::Identity);
        let err = net.backward(&[f64::NAN], &[1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::Numeric { layer: 0, .. }));
    }

    #[test]
    fn clip_weights_clamps_and_is_idempotent() {
        let mut net = linear(vec![0.2, -0.5], vec![0.05], 2, OutputActivation::Identity);
        net.clip_weights(0.1).unwrap();
        assert_eq!(net.params(), &[0.1, -0.1, 0.05]);
        let once = net.clone();
        net.clip_weights(0.1).unwrap();
        assert_eq!(net, once);
        assert!(net.clip_weights(0.0).is_err());
    }

    #[test]
    fn lipschitz_bound_small_cases() {
        let id = linear(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 2, OutputActivation::Identity);
        assert!((id.lipschitz_upper_bound() - 1.0).abs() < 1e-12);

        let mut diag = linear(vec![2.0, 0.0, 0.0, 3.0], vec![0.0, 0.0], 2, OutputActivation::Tanh);
        assert!((diag.lipschitz_upper_bound() - 3.0).abs() < 1e-9);
        diag.set_params(&[0.0; 6]).unwrap();
        assert_eq!(diag.lipschitz_upper_bound(), 0.0);
    }

    #[test]
    fn spectral_norm_of_rank_deficient_matrix() {
        // All-ones start vector would sit in the null space here.
        let w = [1.0, -1.0, -1.0, 1.0];
        assert!((spectral_norm(&w, 2, 2) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn descriptor_round_trip() {
        let arch = Architecture::critic(3, vec![8, 4]);
        assert_eq!(arch.descriptor(), "in=3 hidden=8,4 out=1 act=leaky_relu(0.2) outact=identity");
        assert_eq!(Architecture::parse_descriptor(&arch.descriptor()), Some(arch));
        let lin = Architecture::generator(2, 1, 9);
        assert_eq!(Architecture::parse_descriptor(&lin.descriptor()), Some(lin));
    }

    #[test]
    fn generator_must_be_smooth() {
        assert!(Architecture::generator(2, 3, 4).validate_generator().is_ok());
        let mut arch = Architecture::generator(2, 3, 4);
        arch.activation = Activation::LeakyRelu(0.2);
        assert!(arch.validate_generator().is_err());
    }

    #[test]
    fn param_count_matches_layout() {
        let arch = Architecture::generator(2, 3, 5);
        assert_eq!(arch.param_count(), (2 * 5 + 5) + (5 * 5 + 5) + (5 * 2 + 2));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::init(arch.clone(), &mut rng).unwrap();
        assert_eq!(net.params().len(), arch.param_count());
        // Biases start at zero.
        let off = net.layer_offset(1);
        assert!(net.params()[off - 5..off].iter().all(|&b| b == 0.0));
    }
}
