//! A minimal fully-connected network with per-sample gradients.
//!
//! Parameters live in one flat vector, laid out layer by layer as
//! `[W (out x in, row-major), b (out)]`. That same order is used for gradients,
//! optimizer state and checkpoints, so flatten/unflatten is just a copy.
//!
//! Every backward pass is per sample: the estimators need each `∇L(x_i)`
//! individually (to divide by its probability or accumulate it into the MIS
//! system), so nothing is averaged here.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Rng;

/// Default SIREN frequency factor.
pub const SIREN_OMEGA: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Identity,
    Relu,
    Sine,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    /// `sin(omega * z)`
    Sine { omega: f64 },
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Sine { omega } => (omega * z).sin(),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sine { omega } => omega * (omega * z).cos(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Sum of squared residuals over output channels.
    Mse,
    /// Softmax cross-entropy on raw logits.
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Values(Vec<f64>),
    Class(usize),
}

/// Per-sample backward result.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrad {
    pub index: usize,
    pub loss: f64,
    /// ∇_θ L, flattened in parameter order.
    pub param_grad: Vec<f64>,
    /// m(x, θ), the raw network output (logits for cross-entropy).
    pub output: Vec<f64>,
    /// ∂L/∂m at the network output.
    pub output_grad: Vec<f64>,
}

/// Shape of a network, independent of its weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    /// Positional-encoding frequency count applied to the raw input (0 = off).
    pub pe_freqs: usize,
    pub hidden: Vec<usize>,
    pub hidden_activation: ActivationKind,
    pub output_dim: usize,
    pub omega: f64,
}

impl Architecture {
    pub fn linear(input_dim: usize, output_dim: usize) -> Self {
        Architecture {
            input_dim,
            pe_freqs: 0,
            hidden: Vec::new(),
            hidden_activation: ActivationKind::Identity,
            output_dim,
            omega: SIREN_OMEGA,
        }
    }

    pub fn mlp(input_dim: usize, hidden: &[usize], act: ActivationKind, output_dim: usize) -> Self {
        Architecture {
            input_dim,
            pe_freqs: 0,
            hidden: hidden.to_vec(),
            hidden_activation: act,
            output_dim,
            omega: SIREN_OMEGA,
        }
    }

    pub fn encoded_dim(&self) -> usize {
        self.input_dim * (1 + 2 * self.pe_freqs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerShape {
    fan_in: usize,
    fan_out: usize,
    w_off: usize,
    b_off: usize,
    act: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: Architecture,
    layers: Vec<LayerShape>,
    params: Vec<f64>,
}

/// Reusable per-thread buffers for forward/backward passes.
#[derive(Debug, Default, Clone)]
pub struct Workspace {
    /// acts[0] is the encoded input, acts[l+1] the output of layer l.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Network {
    pub fn new(arch: &Architecture, rng: &mut Rng) -> Self {
        let mut dims = vec![arch.encoded_dim()];
        dims.extend_from_slice(&arch.hidden);
        dims.push(arch.output_dim);
        let n_layers = dims.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let act = if l + 1 == n_layers {
                Activation::Identity
            } else {
                match arch.hidden_activation {
                    ActivationKind::Identity => Activation::Identity,
                    ActivationKind::Relu => Activation::Relu,
                    ActivationKind::Sine => Activation::Sine { omega: arch.omega },
                }
            };
            layers.push(LayerShape {
                fan_in,
                fan_out,
                w_off: off,
                b_off: off + fan_in * fan_out,
                act,
            });
            off += fan_in * fan_out + fan_out;
        }
        let mut params = vec![0.0; off];
        let sine = arch.hidden_activation == ActivationKind::Sine;
        for (l, shape) in layers.iter().enumerate() {
            let fan_in = shape.fan_in as f64;
            let w_bound = if sine && l == 0 {
                1.0 / fan_in
            } else if sine {
                (6.0 / fan_in).sqrt() / arch.omega
            } else {
                1.0 / fan_in.sqrt()
            };
            let b_bound = 1.0 / fan_in.sqrt();
            for w in &mut params[shape.w_off..shape.b_off] {
                *w = rng.uniform_range(-w_bound, w_bound);
            }
            for b in &mut params[shape.b_off..shape.b_off + shape.fan_out] {
                *b = rng.uniform_range(-b_bound, b_bound);
            }
        }
        Network {
            arch: arch.clone(),
            layers,
            params,
        }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.arch.output_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Flattened copy of all parameters.
    pub fn flatten(&self) -> Vec<f64> {
        self.params.clone()
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                context: "Network::unflatten",
                expected: self.params.len(),
                actual: flat.len(),
            });
        }
        self.params.copy_from_slice(flat);
        Ok(())
    }

    /// Set one layer's weights (row-major `out x in`) and biases.
    pub fn set_layer(&mut self, layer: usize, weights: &[f64], biases: &[f64]) -> Result<()> {
        let s = *self.layers.get(layer).ok_or(Error::IndexOutOfRange {
            index: layer,
            len: self.layers.len(),
        })?;
        if weights.len() != s.fan_in * s.fan_out || biases.len() != s.fan_out {
            return Err(Error::ShapeMismatch {
                context: "Network::set_layer",
                expected: s.fan_in * s.fan_out + s.fan_out,
                actual: weights.len() + biases.len(),
            });
        }
        self.params[s.w_off..s.b_off].copy_from_slice(weights);
        self.params[s.b_off..s.b_off + s.fan_out].copy_from_slice(biases);
        Ok(())
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_dim {
            return Err(Error::ShapeMismatch {
                context: "network input",
                expected: self.arch.input_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn run_forward(&self, x: &[f64], ws: &mut Workspace) {
        let n = self.layers.len();
        ws.acts.resize_with(n + 1, Vec::new);
        ws.pre.resize_with(n, Vec::new);
        encode_into(x, self.arch.pe_freqs, &mut ws.acts[0]);
        for (l, s) in self.layers.iter().enumerate() {
            let (head, tail) = ws.acts.split_at_mut(l + 1);
            let input = &head[l];
            let out = &mut tail[0];
            let pre = &mut ws.pre[l];
            out.clear();
            pre.clear();
            let w = &self.params[s.w_off..s.b_off];
            let b = &self.params[s.b_off..s.b_off + s.fan_out];
            for (row, bias) in w.chunks_exact(s.fan_in).zip(b) {
                let z = bias + row.iter().zip(input.iter()).map(|(a, c)| a * c).sum::<f64>();
                pre.push(z);
                out.push(s.act.apply(z));
            }
        }
    }

    /// Evaluate m(x, θ).
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut ws = Workspace::default();
        self.forward_with(x, &mut ws)
    }

    pub fn forward_with(&self, x: &[f64], ws: &mut Workspace) -> Result<Vec<f64>> {
        self.check_input(x)?;
        self.run_forward(x, ws);
        Ok(ws.acts[self.layers.len()].clone())
    }

    /// Loss of one sample.
    pub fn sample_loss(&self, x: &[f64], y: &Target, loss: LossKind, ws: &mut Workspace) -> Result<f64> {
        self.check_input(x)?;
        self.run_forward(x, ws);
        let out = &ws.acts[self.layers.len()];
        let mut scratch = Vec::new();
        loss_and_grad(out, y, loss, &mut scratch)
    }

    /// Full per-sample backward pass.
    pub fn per_sample_backward(&self, x: &[f64], y: &Target, loss: LossKind) -> Result<SampleGrad> {
        let mut ws = Workspace::default();
        let mut grad = vec![0.0; self.params.len()];
        let (l, og) = self.backward_into(x, y, loss, &mut ws, &mut grad)?;
        Ok(SampleGrad {
            index: 0,
            loss: l,
            param_grad: grad,
            output: self.last_output(&ws).to_vec(),
            output_grad: og,
        })
    }

    /// Per-sample backward writing ∇_θ L into `grad` (overwritten). Returns the
    /// loss and ∂L/∂m.
    pub fn backward_into(
        &self,
        x: &[f64],
        y: &Target,
        loss: LossKind,
        ws: &mut Workspace,
        grad: &mut [f64],
    ) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        if grad.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                context: "backward_into gradient buffer",
                expected: self.params.len(),
                actual: grad.len(),
            });
        }
        self.run_forward(x, ws);
        let n = self.layers.len();
        let mut output_grad = Vec::with_capacity(self.arch.output_dim);
        let l_val = loss_and_grad(&ws.acts[n], y, loss, &mut output_grad)?;

        let Workspace {
            acts,
            pre,
            delta,
            delta_prev,
        } = ws;
        delta.clear();
        delta.extend(
            output_grad
                .iter()
                .zip(&pre[n - 1])
                .map(|(g, &z)| g * self.layers[n - 1].act.derivative(z)),
        );
        for l in (0..n).rev() {
            let s = self.layers[l];
            let input = &acts[l];
            let (gw, gb) = grad[s.w_off..s.b_off + s.fan_out].split_at_mut(s.fan_in * s.fan_out);
            for ((row, gbi), &d) in gw.chunks_exact_mut(s.fan_in).zip(gb.iter_mut()).zip(delta.iter()) {
                *gbi = d;
                for (g, a) in row.iter_mut().zip(input) {
                    *g = d * a;
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[s.w_off..s.b_off];
            delta_prev.clear();
            delta_prev.resize(s.fan_in, 0.0);
            for (row, &d) in w.chunks_exact(s.fan_in).zip(delta.iter()) {
                for (dp, wv) in delta_prev.iter_mut().zip(row) {
                    *dp += wv * d;
                }
            }
            let prev_act = self.layers[l - 1].act;
            for (dp, &z) in delta_prev.iter_mut().zip(&pre[l - 1]) {
                *dp *= prev_act.derivative(z);
            }
            std::mem::swap(delta, delta_prev);
        }
        Ok((l_val, output_grad))
    }

    /// Output of the most recent pass run with `ws`.
    pub fn last_output<'a>(&self, ws: &'a Workspace) -> &'a [f64] {
        &ws.acts[self.layers.len()]
    }

    /// Mean loss and mean gradient over a dataset.
    pub fn batch_gradient(&self, inputs: &[Vec<f64>], targets: &[Target], loss: LossKind) -> Result<(f64, Vec<f64>)> {
        let p = self.params.len();
        let mut total = vec![0.0; p];
        let mut g = vec![0.0; p];
        let mut ws = Workspace::default();
        let mut loss_sum = 0.0;
        for (x, y) in inputs.iter().zip(targets) {
            let (l, _) = self.backward_into(x, y, loss, &mut ws, &mut g)?;
            loss_sum += l;
            crate::linalg::axpy(1.0, &g, &mut total);
        }
        let n = inputs.len().max(1) as f64;
        total.iter_mut().for_each(|v| *v /= n);
        Ok((loss_sum / n, total))
    }

    /// Write `MISGRAD1 <P>\n` followed by P little-endian f64 values.
    pub fn save_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "MISGRAD1 {}", self.params.len())?;
        for v in &self.params {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Load parameters written by [`Network::save_checkpoint`] into a network
    /// of matching architecture.
    pub fn load_checkpoint<R: BufRead>(&mut self, mut r: R) -> Result<()> {
        let mut header = String::new();
        r.read_line(&mut header)?;
        let count = header
            .trim_end_matches('\n')
            .strip_prefix("MISGRAD1 ")
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| Error::MalformedCheckpoint(format!("bad header {header:?}")))?;
        if count != self.params.len() {
            return Err(Error::ShapeMismatch {
                context: "checkpoint parameter count",
                expected: self.params.len(),
                actual: count,
            });
        }
        let mut buf = vec![0u8; count * 8];
        r.read_exact(&mut buf)
            .map_err(|e| Error::MalformedCheckpoint(format!("truncated payload: {e}")))?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::MalformedCheckpoint(format!("{} trailing bytes", rest.len())));
        }
        for (p, chunk) in self.params.iter_mut().zip(buf.chunks_exact(8)) {
            *p = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
        Ok(())
    }
}

/// `[x, sin(2^k π x), cos(2^k π x)]` for `k < freqs`, grouped per input coordinate.
pub fn positional_encoding(x: &[f64], freqs: usize) -> Vec<f64> {
    let mut out = Vec::new();
    encode_into(x, freqs, &mut out);
    out
}

fn encode_into(x: &[f64], freqs: usize, out: &mut Vec<f64>) {
    out.clear();
    for &c in x {
        out.push(c);
        let mut f = std::f64::consts::PI;
        for _ in 0..freqs {
            out.push((f * c).sin());
            out.push((f * c).cos());
            f *= 2.0;
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = s.iter().sum();
    s.iter_mut().for_each(|v| *v /= sum);
    s
}

/// Loss value, writing ∂L/∂m into `grad`.
pub fn loss_and_grad(out: &[f64], y: &Target, kind: LossKind, grad: &mut Vec<f64>) -> Result<f64> {
    grad.clear();
    match (kind, y) {
        (LossKind::Mse, Target::Values(t)) => {
            if t.len() != out.len() {
                return Err(Error::ShapeMismatch {
                    context: "mse target",
                    expected: out.len(),
                    actual: t.len(),
                });
            }
            let mut l = 0.0;
            for (m, t) in out.iter().zip(t) {
                let r = m - t;
                l += r * r;
                grad.push(2.0 * r);
            }
            Ok(l)
        }
        (LossKind::CrossEntropy, Target::Class(c)) => {
            let c = *c;
            if c >= out.len() {
                return Err(Error::InvalidTarget {
                    target: c,
                    classes: out.len(),
                });
            }
            let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = out.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + sum.ln();
            for (j, v) in out.iter().enumerate() {
                let s = (v - log_z).exp();
                grad.push(if j == c { s - 1.0 } else { s });
            }
            Ok(log_z - out[c])
        }
        (LossKind::Mse, Target::Class(c)) => Err(Error::InvalidTarget {
            target: *c,
            classes: 0,
        }),
        (LossKind::CrossEntropy, Target::Values(v)) => Err(Error::ShapeMismatch {
            context: "cross-entropy needs a class target",
            expected: 1,
            actual: v.len(),
        }),
    }
}

fn check_grad(grad: &[f64], p: usize) -> Result<()> {
    if grad.len() != p {
        return Err(Error::ShapeMismatch {
            context: "optimizer gradient",
            expected: p,
            actual: grad.len(),
        });
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient(i));
    }
    Ok(())
}

/// θ ← θ − lr·grad
pub fn sgd_step(net: &mut Network, grad: &[f64], lr: f64) -> Result<()> {
    check_grad(grad, net.param_count())?;
    for (p, g) in net.params.iter_mut().zip(grad) {
        *p -= lr * g;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamState {
    pub fn new(p: usize) -> Self {
        AdamState {
            m: vec![0.0; p],
            v: vec![0.0; p],
            t: 0,
        }
    }
}

/// Adam update with bias-corrected moments.
pub fn adam_step(net: &mut Network, grad: &[f64], state: &mut AdamState, h: &AdamHyper) -> Result<()> {
    check_grad(grad, net.param_count())?;
    state.t += 1;
    let c1 = 1.0 - h.beta1.powi(state.t);
    let c2 = 1.0 - h.beta2.powi(state.t);
    for (((p, g), m), v) in net.params.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        *m = h.beta1 * *m + (1.0 - h.beta1) * g;
        *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
        *p -= h.lr * (*m / c1) / ((*v / c2).sqrt() + h.eps);
    }
    Ok(())
}

/// Optimizer with its state.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam { hyper: AdamHyper, state: AdamState },
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Optimizer::Sgd { lr }
    }

    pub fn adam(lr: f64, p: usize) -> Self {
        Optimizer::Adam {
            hyper: AdamHyper::with_lr(lr),
            state: AdamState::new(p),
        }
    }

    pub fn step(&mut self, net: &mut Network, grad: &[f64]) -> Result<()> {
        match self {
            Optimizer::Sgd { lr } => sgd_step(net, grad, *lr),
            Optimizer::Adam { hyper, state } => adam_step(net, grad, state, hyper),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_net(w: &[f64], b: &[f64], inp: usize, out: usize) -> Network {
        let mut net = Network::new(&Architecture::linear(inp, out), &mut Rng::new(0));
        net.set_layer(0, w, b).unwrap();
        net
    }

    #[test]
    fn identity_layer_passes_input() {
        let net = linear_net(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], 2, 2);
        assert_eq!(net.forward(&[3.0, -4.0]).unwrap(), vec![3.0, -4.0]);
    }

    #[test]
    fn zero_weights_give_bias() {
        let net = linear_net(&[0.0; 6], &[0.5, -1.5], 3, 2);
        assert_eq!(net.forward(&[9.0, 8.0, 7.0]).unwrap(), vec![0.5, -1.5]);
    }

    #[test]
    fn wrong_input_width() {
        let net = linear_net(&[0.0; 2], &[0.0], 2, 1);
        assert!(matches!(net.forward(&[1.0]), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn two_layer_matches_straight_line_evaluation() {
        let mut rng = Rng::new(11);
        let arch = Architecture::mlp(3, &[4], ActivationKind::Relu, 2);
        let net = Network::new(&arch, &mut rng);
        let p = net.params();
        let x = [0.3, -0.7, 1.1];
        // layer 0: W0 4x3 at 0..12, b0 at 12..16; layer 1: W1 2x4 at 16..24, b1 at 24..26
        let mut h = [0.0; 4];
        for i in 0..4 {
            let mut z = p[12 + i];
            for k in 0..3 {
                z += p[i * 3 + k] * x[k];
            }
            h[i] = if z > 0.0 { z } else { 0.0 };
        }
        let mut o = [0.0; 2];
        for i in 0..2 {
            let mut z = p[24 + i];
            for k in 0..4 {
                z += p[16 + i * 4 + k] * h[k];
            }
            o[i] = z;
        }
        let got = net.forward(&x).unwrap();
        for i in 0..2 {
            assert!((got[i] - o[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_linear_mse_closed_form() {
        let (w, b, x, y) = (1.5, -0.25, 0.8, 2.0);
        let net = linear_net(&[w], &[b], 1, 1);
        let sg = net.per_sample_backward(&[x], &Target::Values(vec![y]), LossKind::Mse).unwrap();
        let r = 2.0 * (w * x + b - y);
        assert!((sg.param_grad[0] - r * x).abs() < 1e-15);
        assert!((sg.param_grad[1] - r).abs() < 1e-15);
        assert!((sg.output_grad[0] - r).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_output_grad_is_softmax_minus_onehot() {
        let mut rng = Rng::new(5);
        let net = Network::new(&Architecture::mlp(2, &[5], ActivationKind::Relu, 4), &mut rng);
        let x = [0.2, 0.9];
        let logits = net.forward(&x).unwrap();
        let s = softmax(&logits);
        let sg = net.per_sample_backward(&x, &Target::Class(2), LossKind::CrossEntropy).unwrap();
        for j in 0..4 {
            let t = if j == 2 { 1.0 } else { 0.0 };
            assert!((sg.output_grad[j] - (s[j] - t)).abs() < 1e-14);
        }
        assert!(sg.output_grad.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn invalid_class_target() {
        let net = Network::new(&Architecture::linear(2, 3), &mut Rng::new(0));
        assert!(matches!(
            net.per_sample_backward(&[0.0, 0.0], &Target::Class(3), LossKind::CrossEntropy),
            Err(Error::InvalidTarget { target: 3, classes: 3 })
        ));
    }

    #[test]
    fn sgd_arithmetic() {
        let mut net = linear_net(&[1.0], &[0.0], 1, 1);
        sgd_step(&mut net, &[2.0, 0.0], 0.1).unwrap();
        assert!((net.params()[0] - 0.8).abs() < 1e-15);
        let before = net.flatten();
        sgd_step(&mut net, &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(before, net.flatten());
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut net = Network::new(&Architecture::mlp(2, &[3], ActivationKind::Relu, 1), &mut Rng::new(1));
        let before = net.flatten();
        let mut opt = Optimizer::adam(1e-3, net.param_count());
        for _ in 0..5 {
            opt.step(&mut net, &vec![0.0; before.len()]).unwrap();
        }
        assert_eq!(before, net.flatten());
    }

    #[test]
    fn optimizer_rejects_nan() {
        let mut net = linear_net(&[1.0], &[0.0], 1, 1);
        assert!(matches!(
            sgd_step(&mut net, &[f64::NAN, 0.0], 0.1),
            Err(Error::NonFiniteGradient(0))
        ));
    }

    #[test]
    fn positional_encoding_shapes() {
        assert_eq!(positional_encoding(&[0.3, 0.4], 0), vec![0.3, 0.4]);
        assert_eq!(positional_encoding(&[0.0], 1), vec![0.0, 0.0, 1.0]);
        assert_eq!(positional_encoding(&[0.1, 0.2, 0.3], 4).len(), 3 * (1 + 2 * 4));
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = Network::new(&Architecture::mlp(2, &[3], ActivationKind::Sine, 2), &mut Rng::new(9));
        let mut buf = Vec::new();
        net.save_checkpoint(&mut buf).unwrap();
        assert!(buf.starts_with(format!("MISGRAD1 {}\n", net.param_count()).as_bytes()));
        let mut other = Network::new(net.architecture(), &mut Rng::new(10));
        other.load_checkpoint(&buf[..]).unwrap();
        assert_eq!(other.flatten(), net.flatten());

        let mut short = buf.clone();
        short.pop();
        assert!(other.load_checkpoint(&short[..]).is_err());
        let mut wrong = Network::new(&Architecture::linear(2, 1), &mut Rng::new(0));
        assert!(wrong.load_checkpoint(&buf[..]).is_err());
    }
}
