//! Dense multi-head network with exact gradients and SGD.
//!
//! A [`MultiHeadNet`] is a ReLU trunk followed by `m + 1` interchangeable
//! linear output heads of identical shape. Head 0 is the nominal classifier
//! and heads `1..=m` the experts, but nothing in this module treats any head
//! specially: every update goes through exactly one head chosen by the
//! caller, and only that head and the trunk move.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::rng::Rng;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("head {head} out of range (net has {count} heads)")]
    HeadIndex { head: usize, count: usize },
    #[error("class {class} out of range for {count} classes")]
    ClassIndex { class: usize, count: usize },
    #[error("non-finite loss {loss}")]
    NonFiniteLoss { loss: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Fully connected layer; `weights` is `out_dim × in_dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Pre-activation `x Wᵀ + b`.
    fn affine(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), self.out_dim);
        for r in 0..x.rows() {
            let xr = x.row(r);
            let or = out.row_mut(r);
            for (o, (w, b)) in or
                .iter_mut()
                .zip(self.weights.chunks_exact(self.in_dim).zip(&self.bias))
            {
                *o = b + dot(w, xr);
            }
        }
        out
    }

    fn activate(&self, mut z: Matrix) -> Matrix {
        if self.activation == Activation::Relu {
            z.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        }
        z
    }

    fn all_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient (or velocity) buffers shaped like a [`Dense`] layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBuf {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerBuf {
    fn zeros_like(layer: &Dense) -> Self {
        Self {
            weights: vec![0.0; layer.weights.len()],
            bias: vec![0.0; layer.bias.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    /// Hidden widths of the trunk, all ReLU.
    pub trunk_widths: Vec<usize>,
    pub class_count: usize,
    /// Number of expert heads `m`; the net has `m + 1` heads.
    pub experts: usize,
}

impl Architecture {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_dim == 0 || self.class_count < 2 {
            return Err(NnError::Dimension(format!(
                "input_dim {} / class_count {}",
                self.input_dim, self.class_count
            )));
        }
        if self.trunk_widths.iter().any(|&w| w == 0) {
            return Err(NnError::Dimension("zero-width trunk layer".into()));
        }
        if self.experts == 0 {
            return Err(NnError::Dimension("need at least one expert head".into()));
        }
        Ok(())
    }

    fn feature_dim(&self) -> usize {
        self.trunk_widths.last().copied().unwrap_or(self.input_dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadNet {
    input_dim: usize,
    class_count: usize,
    trunk: Vec<Dense>,
    heads: Vec<Dense>,
}

/// Trunk activations kept for backpropagation.
struct TrunkCache {
    /// `inputs[l]` is the input to trunk layer `l`; the last entry is the
    /// trunk output.
    inputs: Vec<Matrix>,
}

impl MultiHeadNet {
    pub fn new(arch: &Architecture, rng: &mut Rng) -> Result<Self, NnError> {
        Self::build(arch, |i, o, a| Dense::glorot(i, o, a, rng))
    }

    pub fn zeros(arch: &Architecture) -> Result<Self, NnError> {
        Self::build(arch, Dense::zeros)
    }

    fn build(
        arch: &Architecture,
        mut layer: impl FnMut(usize, usize, Activation) -> Dense,
    ) -> Result<Self, NnError> {
        arch.validate()?;
        let mut trunk = Vec::new();
        let mut prev = arch.input_dim;
        for &w in &arch.trunk_widths {
            trunk.push(layer(prev, w, Activation::Relu));
            prev = w;
        }
        let feat = arch.feature_dim();
        let heads = (0..=arch.experts)
            .map(|_| layer(feat, arch.class_count, Activation::Identity))
            .collect();
        Ok(Self {
            input_dim: arch.input_dim,
            class_count: arch.class_count,
            trunk,
            heads,
        })
    }

    pub fn from_layers(trunk: Vec<Dense>, heads: Vec<Dense>) -> Result<Self, NnError> {
        let first = heads
            .first()
            .ok_or_else(|| NnError::Dimension("no heads".into()))?;
        let input_dim = trunk.first().map_or(first.in_dim, |l| l.in_dim);
        let mut prev = input_dim;
        for l in &trunk {
            if l.in_dim != prev {
                return Err(NnError::Dimension(format!("trunk layer expects {} inputs, previous gives {prev}", l.in_dim)));
            }
            prev = l.out_dim;
        }
        for h in &heads {
            if h.in_dim != prev || h.out_dim != first.out_dim {
                return Err(NnError::Dimension("heads must share input and output dims".into()));
            }
        }
        if heads.len() < 2 {
            return Err(NnError::Dimension("need at least two heads".into()));
        }
        Ok(Self {
            input_dim,
            class_count: first.out_dim,
            trunk,
            heads,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// `m + 1`.
    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn experts(&self) -> usize {
        self.heads.len() - 1
    }

    pub fn trunk(&self) -> &[Dense] {
        &self.trunk
    }

    pub fn trunk_mut(&mut self) -> &mut [Dense] {
        &mut self.trunk
    }

    pub fn head(&self, h: usize) -> &Dense {
        &self.heads[h]
    }

    pub fn head_mut(&mut self, h: usize) -> &mut Dense {
        &mut self.heads[h]
    }

    pub fn trunk_param_count(&self) -> usize {
        self.trunk.iter().map(Dense::param_count).sum()
    }

    pub fn head_param_count(&self) -> usize {
        self.heads[0].param_count()
    }

    pub fn param_count(&self) -> usize {
        self.trunk_param_count() + self.heads.len() * self.head_param_count()
    }

    pub fn all_finite(&self) -> bool {
        self.trunk.iter().chain(&self.heads).all(Dense::all_finite)
    }

    fn check_input(&self, x: &Matrix) -> Result<(), NnError> {
        if x.cols() != self.input_dim {
            return Err(NnError::Dimension(format!(
                "input has {} columns, net expects {}",
                x.cols(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn check_head(&self, head: usize) -> Result<(), NnError> {
        if head >= self.heads.len() {
            return Err(NnError::HeadIndex {
                head,
                count: self.heads.len(),
            });
        }
        Ok(())
    }

    /// Shared trunk features for a batch.
    pub fn features(&self, x: &Matrix) -> Result<Matrix, NnError> {
        self.check_input(x)?;
        let mut a = x.clone();
        for layer in &self.trunk {
            a = layer.activate(layer.affine(&a));
        }
        Ok(a)
    }

    fn trunk_cached(&self, x: &Matrix) -> TrunkCache {
        let mut inputs = Vec::with_capacity(self.trunk.len() + 1);
        inputs.push(x.clone());
        for layer in &self.trunk {
            let next = layer.activate(layer.affine(inputs.last().unwrap()));
            inputs.push(next);
        }
        TrunkCache { inputs }
    }

    /// Logits of one head for precomputed trunk features.
    pub fn head_logits(&self, features: &Matrix, head: usize) -> Result<Matrix, NnError> {
        self.check_head(head)?;
        Ok(self.heads[head].affine(features))
    }

    pub fn forward(&self, x: &Matrix, head: usize) -> Result<Matrix, NnError> {
        self.check_head(head)?;
        let f = self.features(x)?;
        self.head_logits(&f, head)
    }

    /// Logits of every head from a single trunk pass.
    pub fn forward_all_heads(&self, x: &Matrix) -> Result<Vec<Matrix>, NnError> {
        let f = self.features(x)?;
        Ok(self.heads.iter().map(|h| h.affine(&f)).collect())
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln()
}

/// `-log softmax(logits)[target]`.
pub fn ce_loss(logits: &[f64], target: usize) -> Result<f64, NnError> {
    if target >= logits.len() {
        return Err(NnError::ClassIndex {
            class: target,
            count: logits.len(),
        });
    }
    // Clamp away the -0.0 / tiny negative rounding of a perfectly confident
    // row; NaN must pass through so divergence is reported.
    let loss = log_sum_exp(logits) - logits[target];
    Ok(if loss < 0.0 { 0.0 } else { loss })
}

/// Two labels and the weight of the first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixedTarget {
    pub label_a: usize,
    pub label_b: usize,
    pub gamma: f64,
}

impl MixedTarget {
    pub fn plain(label: usize) -> Self {
        Self {
            label_a: label,
            label_b: label,
            gamma: 1.0,
        }
    }
}

/// `γ·CE(label_a) + (1−γ)·CE(label_b)`.
pub fn mix_ce_loss(logits: &[f64], target: &MixedTarget) -> Result<f64, NnError> {
    let a = ce_loss(logits, target.label_a)?;
    let b = ce_loss(logits, target.label_b)?;
    Ok(target.gamma * a + (1.0 - target.gamma) * b)
}

/// Mean mixed CE of a batch under one head.
pub fn batch_loss(
    net: &MultiHeadNet,
    x: &Matrix,
    targets: &[MixedTarget],
    head: usize,
) -> Result<f64, NnError> {
    let logits = net.forward(x, head)?;
    let mut total = 0.0;
    for (r, t) in targets.iter().enumerate() {
        total += mix_ce_loss(logits.row(r), t)?;
    }
    Ok(total / targets.len() as f64)
}

/// Gradients of the batch loss w.r.t. the trunk and one head.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub head: usize,
    pub trunk: Vec<LayerBuf>,
    pub head_grad: LayerBuf,
}

/// Mean mixed-CE loss of a batch through `head` and its exact gradient.
pub fn loss_and_gradients(
    net: &MultiHeadNet,
    x: &Matrix,
    targets: &[MixedTarget],
    head: usize,
) -> Result<(f64, Gradients), NnError> {
    net.check_input(x)?;
    net.check_head(head)?;
    if targets.len() != x.rows() || x.rows() == 0 {
        return Err(NnError::Dimension(format!(
            "{} rows but {} targets",
            x.rows(),
            targets.len()
        )));
    }
    let k = net.class_count;
    let b = x.rows() as f64;
    let cache = net.trunk_cached(x);
    let feats = cache.inputs.last().unwrap();
    let head_layer = &net.heads[head];
    let logits = head_layer.affine(feats);

    let mut loss = 0.0;
    let mut d_logits = Matrix::zeros(x.rows(), k);
    for (r, t) in targets.iter().enumerate() {
        if t.label_a >= k || t.label_b >= k {
            return Err(NnError::ClassIndex {
                class: t.label_a.max(t.label_b),
                count: k,
            });
        }
        let lr = logits.row(r);
        loss += mix_ce_loss(lr, t)?;
        let p = softmax(lr);
        let dr = d_logits.row_mut(r);
        for (c, (d, pc)) in dr.iter_mut().zip(p).enumerate() {
            let mut y = 0.0;
            if c == t.label_a {
                y += t.gamma;
            }
            if c == t.label_b {
                y += 1.0 - t.gamma;
            }
            *d = (pc - y) / b;
        }
    }
    loss /= b;

    let (head_grad, mut upstream) = layer_backward(head_layer, feats, &d_logits, true);
    let mut trunk_grads = vec![None; net.trunk.len()];
    for (l, layer) in net.trunk.iter().enumerate().rev() {
        let out = &cache.inputs[l + 1];
        // ReLU derivative from the layer output: zero where the unit is off.
        if layer.activation == Activation::Relu {
            for (g, &o) in upstream.as_mut_slice().iter_mut().zip(out.as_slice()) {
                if o <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        let (g, next) = layer_backward(layer, &cache.inputs[l], &upstream, l > 0);
        trunk_grads[l] = Some(g);
        upstream = next;
    }
    Ok((
        loss,
        Gradients {
            head,
            trunk: trunk_grads.into_iter().map(Option::unwrap).collect(),
            head_grad,
        },
    ))
}

/// Backprop through an affine map given `dL/dz`; returns parameter grads and
/// `dL/dinput` (left zero unless `need_dx`).
fn layer_backward(layer: &Dense, input: &Matrix, dz: &Matrix, need_dx: bool) -> (LayerBuf, Matrix) {
    let mut g = LayerBuf::zeros_like(layer);
    for r in 0..dz.rows() {
        let dzr = dz.row(r);
        let xr = input.row(r);
        for (o, &d) in dzr.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            g.bias[o] += d;
            let wrow = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
            for (w, &xv) in wrow.iter_mut().zip(xr) {
                *w += d * xv;
            }
        }
    }
    let mut dx = Matrix::zeros(dz.rows(), layer.in_dim);
    if need_dx {
        for r in 0..dz.rows() {
            let dzr = dz.row(r);
            let dxr = dx.row_mut(r);
            for (o, &d) in dzr.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let wrow = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (dxv, &w) in dxr.iter_mut().zip(wrow) {
                    *dxv += d * w;
                }
            }
        }
    }
    (g, dx)
}

/// Piecewise-constant learning-rate multiplier: the multiplier of the last
/// `(start_epoch, multiplier)` step with `start_epoch <= epoch`, else 1.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub steps: Vec<(usize, f64)>,
}

impl LrSchedule {
    /// Divide by `factor` at each milestone.
    pub fn step_decay(milestones: &[usize], factor: f64) -> Self {
        let mut m = 1.0;
        Self {
            steps: milestones
                .iter()
                .map(|&e| {
                    m /= factor;
                    (e, m)
                })
                .collect(),
        }
    }

    pub fn multiplier(&self, epoch: usize) -> f64 {
        self.steps
            .iter()
            .filter(|(start, _)| *start <= epoch)
            .max_by_key(|(start, _)| *start)
            .map_or(1.0, |(_, m)| *m)
    }
}

/// SGD with momentum and weight decay (`v ← μv + g + λθ`, `θ ← θ − ηv`).
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: LrSchedule,
    epoch: usize,
    steps: u64,
    trunk_velocity: Vec<LayerBuf>,
    head_velocity: Vec<LayerBuf>,
}

impl OptimizerState {
    pub fn new(net: &MultiHeadNet, base_lr: f64, momentum: f64, weight_decay: f64, schedule: LrSchedule) -> Self {
        Self {
            base_lr,
            momentum,
            weight_decay,
            schedule,
            epoch: 0,
            steps: 0,
            trunk_velocity: net.trunk.iter().map(LayerBuf::zeros_like).collect(),
            head_velocity: net.heads.iter().map(LayerBuf::zeros_like).collect(),
        }
    }

    pub fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn lr(&self) -> f64 {
        self.base_lr * self.schedule.multiplier(self.epoch)
    }

    /// Optimizer steps taken so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn head_velocity(&self, h: usize) -> &LayerBuf {
        &self.head_velocity[h]
    }

    pub fn trunk_velocity(&self) -> &[LayerBuf] {
        &self.trunk_velocity
    }

    fn shapes_match(&self, net: &MultiHeadNet) -> bool {
        let same = |v: &LayerBuf, l: &Dense| v.weights.len() == l.weights.len() && v.bias.len() == l.bias.len();
        self.trunk_velocity.len() == net.trunk.len()
            && self.head_velocity.len() == net.heads.len()
            && self.trunk_velocity.iter().zip(&net.trunk).all(|(v, l)| same(v, l))
            && self.head_velocity.iter().zip(&net.heads).all(|(v, l)| same(v, l))
    }

    pub fn apply(&mut self, net: &mut MultiHeadNet, grads: &Gradients) {
        let (lr, mu, wd) = (self.lr(), self.momentum, self.weight_decay);
        let update = |layer: &mut Dense, vel: &mut LayerBuf, g: &LayerBuf| {
            for ((p, v), &gv) in layer.weights.iter_mut().zip(&mut vel.weights).zip(&g.weights) {
                *v = mu * *v + gv + wd * *p;
                *p -= lr * *v;
            }
            for ((p, v), &gv) in layer.bias.iter_mut().zip(&mut vel.bias).zip(&g.bias) {
                *v = mu * *v + gv + wd * *p;
                *p -= lr * *v;
            }
        };
        for ((layer, vel), g) in net.trunk.iter_mut().zip(&mut self.trunk_velocity).zip(&grads.trunk) {
            update(layer, vel, g);
        }
        update(
            &mut net.heads[grads.head],
            &mut self.head_velocity[grads.head],
            &grads.head_grad,
        );
        self.steps += 1;
    }
}

/// One SGD step on a batch through `head`; returns the pre-update batch loss.
pub fn backward_step(
    net: &mut MultiHeadNet,
    opt: &mut OptimizerState,
    x: &Matrix,
    targets: &[MixedTarget],
    head: usize,
) -> Result<f64, NnError> {
    let (loss, grads) = loss_and_gradients(net, x, targets, head)?;
    if !loss.is_finite() {
        return Err(NnError::NonFiniteLoss { loss });
    }
    opt.apply(net, &grads);
    Ok(loss)
}

/// Mean softmax over `heads`, one row per input.
pub fn ensemble_probabilities(
    net: &MultiHeadNet,
    x: &Matrix,
    heads: &[usize],
) -> Result<Matrix, NnError> {
    if heads.is_empty() {
        return Err(NnError::Dimension("empty head set".into()));
    }
    for &h in heads {
        net.check_head(h)?;
    }
    let f = net.features(x)?;
    let mut mean = Matrix::zeros(x.rows(), net.class_count);
    for &h in heads {
        let logits = net.heads[h].affine(&f);
        for r in 0..x.rows() {
            for (m, p) in mean.row_mut(r).iter_mut().zip(softmax(logits.row(r))) {
                *m += p;
            }
        }
    }
    let n = heads.len() as f64;
    mean.as_mut_slice().iter_mut().for_each(|v| *v /= n);
    Ok(mean)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Argmax of the head-averaged softmax over all heads.
pub fn ensemble_predict(net: &MultiHeadNet, x: &Matrix) -> Result<Vec<usize>, NnError> {
    let all: Vec<usize> = (0..net.head_count()).collect();
    ensemble_predict_heads(net, x, &all)
}

pub fn ensemble_predict_heads(
    net: &MultiHeadNet,
    x: &Matrix,
    heads: &[usize],
) -> Result<Vec<usize>, NnError> {
    let p = ensemble_probabilities(net, x, heads)?;
    Ok(p.iter_rows().map(argmax).collect())
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"ITEMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serializes a network and its optimizer.
///
/// Layout, all integers `u64` and floats `f64`, little-endian:
///
/// ```text
/// magic "ITEMCKPT" | version u32
/// trunk_len | head_count
/// per layer (trunk, then heads): in | out | activation u8 | weights | bias
/// base_lr | momentum | weight_decay | epoch | steps
/// schedule_len | (start_epoch, multiplier)*
/// per layer (same order): velocity weights | velocity bias
/// ```
pub fn encode_checkpoint(net: &MultiHeadNet, opt: &OptimizerState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let u = |out: &mut Vec<u8>, v: u64| out.extend_from_slice(&v.to_le_bytes());
    let f = |out: &mut Vec<u8>, v: f64| out.extend_from_slice(&v.to_le_bytes());
    u(&mut out, net.trunk.len() as u64);
    u(&mut out, net.heads.len() as u64);
    for l in net.trunk.iter().chain(&net.heads) {
        u(&mut out, l.in_dim as u64);
        u(&mut out, l.out_dim as u64);
        out.push(l.activation.code());
        l.weights.iter().chain(&l.bias).for_each(|&v| f(&mut out, v));
    }
    f(&mut out, opt.base_lr);
    f(&mut out, opt.momentum);
    f(&mut out, opt.weight_decay);
    u(&mut out, opt.epoch as u64);
    u(&mut out, opt.steps);
    u(&mut out, opt.schedule.steps.len() as u64);
    for &(e, m) in &opt.schedule.steps {
        u(&mut out, e as u64);
        f(&mut out, m);
    }
    for v in opt.trunk_velocity.iter().chain(&opt.head_velocity) {
        v.weights.iter().chain(&v.bias).for_each(|&x| f(&mut out, x));
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            NnError::Checkpoint(format!("truncated at byte {} (need {n} more)", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize, NnError> {
        usize::try_from(self.u64()?).map_err(|_| NnError::Checkpoint("size overflow".into()))
    }

    fn f64(&mut self) -> Result<f64, NnError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, NnError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| NnError::Checkpoint("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(MultiHeadNet, OptimizerState), NnError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!(
            "unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let trunk_len = r.usize()?;
    let head_count = r.usize()?;
    let mut layers = Vec::new();
    for _ in 0..trunk_len + head_count {
        let in_dim = r.usize()?;
        let out_dim = r.usize()?;
        let act = Activation::from_code(r.take(1)?[0])
            .ok_or_else(|| NnError::Checkpoint("unknown activation".into()))?;
        let weights = r.f64s(in_dim * out_dim)?;
        let bias = r.f64s(out_dim)?;
        layers.push(Dense {
            in_dim,
            out_dim,
            weights,
            bias,
            activation: act,
        });
    }
    let heads = layers.split_off(trunk_len);
    let net = MultiHeadNet::from_layers(layers, heads)?;
    let base_lr = r.f64()?;
    let momentum = r.f64()?;
    let weight_decay = r.f64()?;
    let epoch = r.usize()?;
    let steps = r.u64()?;
    let n_sched = r.usize()?;
    let mut sched = Vec::new();
    for _ in 0..n_sched {
        sched.push((r.usize()?, r.f64()?));
    }
    let mut opt = OptimizerState::new(&net, base_lr, momentum, weight_decay, LrSchedule { steps: sched });
    opt.epoch = epoch;
    opt.steps = steps;
    for v in opt.trunk_velocity.iter_mut().chain(&mut opt.head_velocity) {
        v.weights = r.f64s(v.weights.len())?;
        v.bias = r.f64s(v.bias.len())?;
    }
    if r.pos != bytes.len() {
        return Err(NnError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    debug_assert!(opt.shapes_match(&net));
    Ok((net, opt))
}

pub fn save_checkpoint(net: &MultiHeadNet, opt: &OptimizerState, path: &Path) -> Result<(), NnError> {
    let io = |source| NnError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(&encode_checkpoint(net, opt)).map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<(MultiHeadNet, OptimizerState), NnError> {
    let bytes = fs::read(path).map_err(|source| NnError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_checkpoint(&bytes)
}
