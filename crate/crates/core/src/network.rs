//! Layer composition, temporal unrolling, input encoding, and readout.
//!
//! A network is an ordered list of layers: exactly one encoder first,
//! exactly one readout last, with spiking (dense / conv) and structural
//! (pool / flatten) layers in between. Static inputs use direct encoding:
//! the same real-valued tensor is presented as input current at every step.
//! The readout is non-spiking; it accumulates its presynaptic drive over all
//! steps and emits the mean as logits.

use crate::error::{Error, Result};
use crate::neuron::{
    current_bounds, derivative_bounds, hdrp_step_with_activation, DerivativeBounds, LayerState,
    NeuronParams, RefractoryMode, SpikeActivation,
};
use crate::rng::Rng;
use crate::tensor::{avgpool2d, conv2d, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// One layer of a network specification. Input shapes are inferred when the
/// network is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    /// Direct constant-current encoder; fixes the input shape.
    Encoder { shape: Vec<usize> },
    /// Fully connected spiking layer.
    Dense {
        out: usize,
        neuron: NeuronParams,
        #[serde(flatten)]
        mode: RefractoryMode,
    },
    /// Convolutional spiking layer (square kernels, zero padding).
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        neuron: NeuronParams,
        #[serde(flatten)]
        mode: RefractoryMode,
    },
    /// Non-overlapping average pooling.
    AvgPool2d { window: usize },
    /// Collapse an image shape to a flat vector.
    Flatten,
    /// Non-spiking linear readout producing class logits.
    Readout { classes: usize },
}

/// Network topology plus simulation length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    pub timesteps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub(crate) struct BuiltLayer {
    pub spec: LayerSpec,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
}

impl BuiltLayer {
    pub fn neuron(&self) -> Option<(&NeuronParams, RefractoryMode)> {
        match &self.spec {
            LayerSpec::Dense { neuron, mode, .. } => Some((neuron, *mode)),
            LayerSpec::Conv2d { neuron, mode, .. } => Some((neuron, *mode)),
            _ => None,
        }
    }

    pub fn is_spiking(&self) -> bool {
        self.neuron().is_some()
    }

    pub fn neurons(&self) -> usize {
        self.out_shape.iter().product()
    }
}

/// Trainable parameters and their gradient accumulators for one synaptic
/// layer. `a_gain` mirrors the neuron kernel gain for layers that use the
/// refractory kernel; elsewhere it is fixed at its initial value.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
    pub a_gain: f64,
}

/// Per-layer parameters and matching gradient accumulators, aligned with the
/// network's layer indices (structural layers hold `None`).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub params: Vec<Option<LayerParams>>,
    pub grads: Vec<Option<LayerParams>>,
}

impl ParamStore {
    pub fn zero_grads(&mut self) {
        for g in self.grads.iter_mut().flatten() {
            g.weight.map_inplace(|_| 0.0);
            g.bias.map_inplace(|_| 0.0);
            g.a_gain = 0.0;
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params
            .iter()
            .flatten()
            .map(|p| p.weight.len() + p.bias.len() + 1)
            .sum()
    }

    /// Flat view of every trainable scalar, in layer order
    /// (weight, bias, a_gain per layer). Used by the gradient oracle.
    pub fn get_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for p in self.params.iter().flatten() {
            out.extend_from_slice(p.weight.data());
            out.extend_from_slice(p.bias.data());
            out.push(p.a_gain);
        }
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        let mut i = 0;
        for p in self.params.iter_mut().flatten() {
            for w in p.weight.data_mut() {
                *w = values[i];
                i += 1;
            }
            for b in p.bias.data_mut() {
                *b = values[i];
                i += 1;
            }
            p.a_gain = values[i];
            i += 1;
        }
        assert_eq!(i, values.len());
    }

    pub fn grads_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in self.grads.iter().flatten() {
            out.extend_from_slice(g.weight.data());
            out.extend_from_slice(g.bias.data());
            out.push(g.a_gain);
        }
        out
    }
}

/// A built network: resolved shapes plus per-layer derivative bounds kept in
/// sync with the live weights.
#[derive(Debug, Clone)]
pub struct Network {
    pub(crate) layers: Vec<BuiltLayer>,
    pub(crate) bounds: Vec<Option<DerivativeBounds>>,
    pub timesteps: usize,
}

/// Forward-pass state snapshots retained for training.
#[derive(Debug, Clone)]
pub struct SampleTrace {
    /// Per layer, per step: the layer's output activation.
    pub outputs: Vec<Vec<Tensor>>,
    /// Per spiking layer, per step: the full neuron state after the step.
    pub states: Vec<Option<Vec<LayerState>>>,
}

/// Aggregated spike counts from a forward pass (hard activation).
#[derive(Debug, Clone)]
pub struct SpikeStats {
    /// Per spiking layer: per-neuron spike totals summed over steps and
    /// samples.
    pub per_layer: Vec<Option<Vec<u64>>>,
    pub timesteps: usize,
    pub samples: usize,
}

impl SpikeStats {
    fn empty(net: &Network) -> Self {
        SpikeStats {
            per_layer: net
                .layers
                .iter()
                .map(|l| l.is_spiking().then(|| vec![0u64; l.neurons()]))
                .collect(),
            timesteps: net.timesteps,
            samples: 0,
        }
    }

    /// Merge counts from another pass over the same network.
    pub fn absorb(&mut self, other: &SpikeStats) {
        for (dst, src) in self.per_layer.iter_mut().zip(other.per_layer.iter()) {
            if let (Some(d), Some(s)) = (dst, src) {
                for (a, b) in d.iter_mut().zip(s.iter()) {
                    *a += b;
                }
            }
        }
        self.samples += other.samples;
    }

    /// Mean firing rate per spiking layer, in [0, 1].
    pub fn firing_rates(&self) -> Vec<f64> {
        self.per_layer
            .iter()
            .flatten()
            .map(|counts| {
                let total: u64 = counts.iter().sum();
                let denom = counts.len() as f64 * self.timesteps as f64 * self.samples as f64;
                if denom == 0.0 {
                    0.0
                } else {
                    total as f64 / denom
                }
            })
            .collect()
    }
}

/// Whether a forward pass retains the trace needed for backpropagation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Inference,
    Training,
}

impl Network {
    /// Validate a spec, initialize parameters, and precompute per-layer
    /// derivative bounds.
    ///
    /// Weights use fan-in-scaled uniform init, `U(-sqrt(3/fan_in),
    /// sqrt(3/fan_in))`; biases start at zero and kernel gains at the
    /// configured initial value.
    pub fn build(spec: &NetworkSpec, rng: &mut Rng) -> Result<(Network, ParamStore)> {
        if spec.timesteps < 1 {
            return Err(Error::Config("timesteps must be >= 1".into()));
        }
        if spec.layers.len() < 2 {
            return Err(Error::Config("network needs at least encoder and readout".into()));
        }
        if !matches!(spec.layers.first(), Some(LayerSpec::Encoder { .. })) {
            return Err(Error::Config("first layer must be the encoder".into()));
        }
        if !matches!(spec.layers.last(), Some(LayerSpec::Readout { .. })) {
            return Err(Error::Config("last layer must be the readout".into()));
        }
        for l in &spec.layers[1..spec.layers.len() - 1] {
            if matches!(l, LayerSpec::Encoder { .. } | LayerSpec::Readout { .. }) {
                return Err(Error::Config(
                    "encoder/readout may appear only at the ends".into(),
                ));
            }
        }

        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut params: Vec<Option<LayerParams>> = Vec::with_capacity(spec.layers.len());
        let mut shape: Vec<usize> = Vec::new();
        for layer in &spec.layers {
            let in_shape = shape.clone();
            let (out_shape, p) = match layer {
                LayerSpec::Encoder { shape: s } => {
                    if s.is_empty() || s.iter().any(|&d| d == 0) {
                        return Err(Error::Config(format!("bad encoder shape {s:?}")));
                    }
                    (s.clone(), None)
                }
                LayerSpec::Dense { out, neuron, mode } => {
                    neuron.validate()?;
                    mode.validate()?;
                    let fan_in = match in_shape[..] {
                        [d] => d,
                        _ => {
                            return Err(Error::Config(format!(
                                "dense layer needs a flat input, got {in_shape:?} (insert a flatten layer)"
                            )))
                        }
                    };
                    let limit = (3.0 / fan_in as f64).sqrt();
                    let weight = Tensor::uniform(rng, &[*out, fan_in], -limit, limit);
                    (
                        vec![*out],
                        Some(LayerParams {
                            weight,
                            bias: Tensor::zeros(&[*out]),
                            a_gain: neuron.a_gain,
                        }),
                    )
                }
                LayerSpec::Conv2d {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    neuron,
                    mode,
                } => {
                    neuron.validate()?;
                    mode.validate()?;
                    let (c, h, w) = match in_shape[..] {
                        [c, h, w] => (c, h, w),
                        _ => {
                            return Err(Error::Config(format!(
                                "conv layer needs a C x H x W input, got {in_shape:?}"
                            )))
                        }
                    };
                    if *stride == 0 {
                        return Err(Error::Config("conv stride must be >= 1".into()));
                    }
                    if h + 2 * padding < *kernel
                        || w + 2 * padding < *kernel
                        || (h + 2 * padding - kernel) % stride != 0
                        || (w + 2 * padding - kernel) % stride != 0
                    {
                        return Err(Error::Config(format!(
                            "conv geometry does not compose: input {h}x{w}, kernel {kernel}, stride {stride}, padding {padding}"
                        )));
                    }
                    let oh = (h + 2 * padding - kernel) / stride + 1;
                    let ow = (w + 2 * padding - kernel) / stride + 1;
                    let fan_in = c * kernel * kernel;
                    let limit = (3.0 / fan_in as f64).sqrt();
                    let weight =
                        Tensor::uniform(rng, &[*out_channels, c, *kernel, *kernel], -limit, limit);
                    (
                        vec![*out_channels, oh, ow],
                        Some(LayerParams {
                            weight,
                            bias: Tensor::zeros(&[*out_channels]),
                            a_gain: neuron.a_gain,
                        }),
                    )
                }
                LayerSpec::AvgPool2d { window } => {
                    let (c, h, w) = match in_shape[..] {
                        [c, h, w] => (c, h, w),
                        _ => {
                            return Err(Error::Config(format!(
                                "pool layer needs a C x H x W input, got {in_shape:?}"
                            )))
                        }
                    };
                    if *window == 0 || h % window != 0 || w % window != 0 {
                        return Err(Error::Config(format!(
                            "pool window {window} does not tile {h}x{w}"
                        )));
                    }
                    (vec![c, h / window, w / window], None)
                }
                LayerSpec::Flatten => (vec![in_shape.iter().product()], None),
                LayerSpec::Readout { classes } => {
                    if *classes == 0 {
                        return Err(Error::Config("readout needs at least one class".into()));
                    }
                    let fan_in = match in_shape[..] {
                        [d] => d,
                        _ => {
                            return Err(Error::Config(format!(
                                "readout needs a flat input, got {in_shape:?} (insert a flatten layer)"
                            )))
                        }
                    };
                    let limit = (3.0 / fan_in as f64).sqrt();
                    let weight = Tensor::uniform(rng, &[*classes, fan_in], -limit, limit);
                    (
                        vec![*classes],
                        Some(LayerParams {
                            weight,
                            bias: Tensor::zeros(&[*classes]),
                            a_gain: 1.0,
                        }),
                    )
                }
            };
            shape = out_shape.clone();
            layers.push(BuiltLayer {
                spec: layer.clone(),
                in_shape,
                out_shape,
            });
            params.push(p);
        }

        let grads = params
            .iter()
            .map(|p| {
                p.as_ref().map(|lp| LayerParams {
                    weight: Tensor::zeros(lp.weight.shape()),
                    bias: Tensor::zeros(lp.bias.shape()),
                    a_gain: 0.0,
                })
            })
            .collect();
        let store = ParamStore { params, grads };
        let mut net = Network {
            bounds: vec![None; layers.len()],
            layers,
            timesteps: spec.timesteps,
        };
        net.refresh_bounds(&store)?;
        Ok((net, store))
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.layers[0].out_shape
    }

    pub fn classes(&self) -> usize {
        self.layers.last().unwrap().out_shape[0]
    }

    pub fn layer_name(&self, idx: usize) -> String {
        let kind = match &self.layers[idx].spec {
            LayerSpec::Encoder { .. } => "encoder",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::AvgPool2d { .. } => "avgpool2d",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Readout { .. } => "readout",
        };
        format!("layer{idx}.{kind}")
    }

    pub(crate) fn layer(&self, idx: usize) -> &BuiltLayer {
        &self.layers[idx]
    }

    pub fn layer_bounds(&self, idx: usize) -> Option<&DerivativeBounds> {
        self.bounds[idx].as_ref()
    }

    /// Kernel gain actually used by a spiking layer: the trainable value
    /// when the mode has a kernel, otherwise the configured constant.
    fn effective_params(&self, idx: usize, store: &ParamStore) -> NeuronParams {
        let (np, mode) = self.layers[idx].neuron().expect("spiking layer");
        let mut p = *np;
        if mode.uses_kernel() {
            if let Some(lp) = &store.params[idx] {
                p.a_gain = lp.a_gain;
            }
        }
        p
    }

    /// Recompute per-layer derivative bounds from the live weights.
    ///
    /// For kernel-bearing modes the reachable synaptic current extends down
    /// to `i_min - u_th` because the kernel subtracts up to (but never
    /// reaching) `u_th`; the lower current bound is widened accordingly so
    /// that simulated derivatives always stay inside `[up_min, up_max]`.
    pub fn refresh_bounds(&mut self, store: &ParamStore) -> Result<()> {
        for idx in 0..self.layers.len() {
            let Some((np, mode)) = self.layers[idx].neuron().map(|(n, m)| (*n, m)) else {
                continue;
            };
            let lp = store.params[idx]
                .as_ref()
                .ok_or_else(|| Error::Contract(format!("missing params for layer {idx}")))?;
            let (mut i_min, i_max) = current_bounds(&lp.weight, &lp.bias)?;
            if mode.uses_kernel() {
                i_min = i_min.add_scalar(-np.u_th);
            }
            let mut b = derivative_bounds(&i_min, &i_max, &np)?;
            if let LayerSpec::Conv2d { .. } = self.layers[idx].spec {
                let positions: usize = self.layers[idx].out_shape[1..].iter().product();
                b = b.expand_per_channel(positions);
            }
            b.validate_nondegenerate()?;
            self.bounds[idx] = Some(b);
        }
        Ok(())
    }

    /// Direct constant-current encoding: the normalized input is the drive
    /// at every step.
    pub fn encode<'a>(&self, image: &'a Tensor, _t: usize) -> &'a Tensor {
        image
    }

    /// Run one sample for `timesteps` steps.
    pub fn forward_sample(
        &self,
        store: &ParamStore,
        input: &Tensor,
        mode: ForwardMode,
        activation: SpikeActivation,
    ) -> Result<(Tensor, Option<SampleTrace>, SpikeStats)> {
        let encoder_shape = self.input_shape();
        if input.len() != encoder_shape.iter().product::<usize>() {
            return Err(Error::shape(
                "forward",
                format!("input length {} vs encoder shape {encoder_shape:?}", input.len()),
            ));
        }
        let x = input.reshape(encoder_shape)?;
        let retain = mode == ForwardMode::Training;
        let t_steps = self.timesteps;

        let mut states: Vec<Option<LayerState>> = self
            .layers
            .iter()
            .map(|l| {
                l.neuron()
                    .map(|(np, _)| LayerState::initial(l.neurons(), np))
            })
            .collect();
        let mut trace = retain.then(|| SampleTrace {
            outputs: vec![Vec::with_capacity(t_steps); self.layers.len()],
            states: self
                .layers
                .iter()
                .map(|l| l.is_spiking().then(|| Vec::with_capacity(t_steps)))
                .collect(),
        });
        let mut stats = SpikeStats::empty(self);
        stats.samples = 1;
        let classes = self.classes();
        let mut logit_acc = Tensor::zeros(&[classes]);

        for t in 0..t_steps {
            let mut act = self.encode(&x, t).clone();
            for (idx, layer) in self.layers.iter().enumerate() {
                match &layer.spec {
                    LayerSpec::Encoder { .. } => {}
                    LayerSpec::Dense { neuron: _, mode, .. } => {
                        let lp = store.params[idx].as_ref().unwrap();
                        let flat = act.reshape(&[act.len()])?;
                        let drive = lp.weight.matvec(&flat)?.add(&lp.bias)?;
                        let np = self.effective_params(idx, store);
                        let bounds = self.bounds[idx].as_ref().ok_or_else(|| {
                            Error::Contract("bounds not initialized before simulation".into())
                        })?;
                        let prev = states[idx].as_ref().unwrap();
                        let next =
                            hdrp_step_with_activation(prev, &drive, &np, bounds, *mode, activation);
                        if let Some(counts) = stats.per_layer[idx].as_mut() {
                            for (c, &s) in counts.iter_mut().zip(next.s.data()) {
                                if s == 1.0 {
                                    *c += 1;
                                }
                            }
                        }
                        act = next.s.clone();
                        if let Some(tr) = trace.as_mut() {
                            tr.states[idx].as_mut().unwrap().push(next.clone());
                        }
                        states[idx] = Some(next);
                    }
                    LayerSpec::Conv2d {
                        kernel: _,
                        stride,
                        padding,
                        mode,
                        ..
                    } => {
                        let lp = store.params[idx].as_ref().unwrap();
                        let im = act.reshape(&layer.in_shape)?;
                        let conv = conv2d(&im, &lp.weight, *stride, *padding)?;
                        // bias broadcasts per output channel
                        let positions: usize = layer.out_shape[1..].iter().product();
                        let bias_full = {
                            let mut data = Vec::with_capacity(layer.neurons());
                            for ch in 0..layer.out_shape[0] {
                                data.extend(std::iter::repeat(lp.bias.at(ch)).take(positions));
                            }
                            Tensor::from_vec(data)
                        };
                        let drive = conv.reshape(&[layer.neurons()])?.add(&bias_full)?;
                        let np = self.effective_params(idx, store);
                        let bounds = self.bounds[idx].as_ref().ok_or_else(|| {
                            Error::Contract("bounds not initialized before simulation".into())
                        })?;
                        let prev = states[idx].as_ref().unwrap();
                        let next =
                            hdrp_step_with_activation(prev, &drive, &np, bounds, *mode, activation);
                        if let Some(counts) = stats.per_layer[idx].as_mut() {
                            for (c, &s) in counts.iter_mut().zip(next.s.data()) {
                                if s == 1.0 {
                                    *c += 1;
                                }
                            }
                        }
                        act = next.s.reshape(&layer.out_shape)?;
                        if let Some(tr) = trace.as_mut() {
                            tr.states[idx].as_mut().unwrap().push(next.clone());
                        }
                        states[idx] = Some(next);
                    }
                    LayerSpec::AvgPool2d { window } => {
                        act = avgpool2d(&act.reshape(&layer.in_shape)?, *window)?;
                    }
                    LayerSpec::Flatten => {
                        act = act.reshape(&layer.out_shape)?;
                    }
                    LayerSpec::Readout { .. } => {
                        let lp = store.params[idx].as_ref().unwrap();
                        let flat = act.reshape(&[act.len()])?;
                        let z = lp.weight.matvec(&flat)?.add(&lp.bias)?;
                        logit_acc.add_assign(&z)?;
                        act = z;
                    }
                }
                if let Some(tr) = trace.as_mut() {
                    tr.outputs[idx].push(act.clone());
                }
            }
        }

        let logits = logit_acc.scale(1.0 / t_steps as f64);
        logits.assert_finite("logits")?;
        Ok((logits, trace, stats))
    }

    /// Run a batch of flat samples; logits come back as `[n, classes]`.
    /// Samples are independent, so the batch is mapped in parallel and
    /// reassembled in index order.
    pub fn forward_batch(
        &self,
        store: &ParamStore,
        inputs: &[Tensor],
        mode: ForwardMode,
        activation: SpikeActivation,
    ) -> Result<(Tensor, Vec<Option<SampleTrace>>, SpikeStats)> {
        let results: Vec<_> = inputs
            .par_iter()
            .map(|x| self.forward_sample(store, x, mode, activation))
            .collect::<Result<Vec<_>>>()?;
        let classes = self.classes();
        let mut data = Vec::with_capacity(results.len() * classes);
        let mut traces = Vec::with_capacity(results.len());
        let mut stats = SpikeStats::empty(self);
        for (logits, trace, s) in results {
            data.extend_from_slice(logits.data());
            traces.push(trace);
            stats.absorb(&s);
        }
        Ok((Tensor::new(vec![inputs.len(), classes], data)?, traces, stats))
    }
}

/// Argmax with lowest-index tie-breaking.
pub fn predict(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Row-wise [`predict`] over a `[n, classes]` logits tensor.
pub fn predict_batch(logits: &Tensor) -> Vec<usize> {
    let [n, c] = logits.shape()[..] else {
        return Vec::new();
    };
    (0..n)
        .map(|i| predict(&logits.data()[i * c..(i + 1) * c]))
        .collect()
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"HDRPCKPT";

/// Write every synaptic layer's tensors to a checkpoint: a small name
/// manifest interleaved with the flat tensor binary format.
pub fn save_checkpoint(path: &Path, net: &Network, store: &ParamStore) -> Result<()> {
    let mut entries: Vec<(String, Tensor)> = Vec::new();
    for (idx, lp) in store.params.iter().enumerate() {
        if let Some(lp) = lp {
            let name = net.layer_name(idx);
            entries.push((format!("{name}.weight"), lp.weight.clone()));
            entries.push((format!("{name}.bias"), lp.bias.clone()));
            entries.push((format!("{name}.a_gain"), Tensor::scalar(lp.a_gain)));
        }
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, tensor) in entries {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        tensor.write_bin(&mut w)?;
    }
    Ok(())
}

/// Load a checkpoint into an existing store, validating names and shapes
/// against the network.
pub fn load_checkpoint(path: &Path, net: &Network, store: &mut ParamStore) -> Result<()> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: "not a checkpoint file".into(),
        });
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf) as usize;
    let mut entries = std::collections::BTreeMap::new();
    for _ in 0..count {
        let mut u16buf = [0u8; 2];
        r.read_exact(&mut u16buf)?;
        let len = u16::from_le_bytes(u16buf) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format {
            offset: 0,
            detail: "bad entry name".into(),
        })?;
        entries.insert(name, Tensor::read_bin(&mut r)?);
    }
    for (idx, lp) in store.params.iter_mut().enumerate() {
        let Some(lp) = lp else { continue };
        let name = net.layer_name(idx);
        for (field, dst) in [("weight", &mut lp.weight), ("bias", &mut lp.bias)] {
            let key = format!("{name}.{field}");
            let src = entries
                .get(&key)
                .ok_or_else(|| Error::Format {
                    offset: 0,
                    detail: format!("checkpoint missing {key}"),
                })?;
            if src.shape() != dst.shape() {
                return Err(Error::Format {
                    offset: 0,
                    detail: format!(
                        "checkpoint shape mismatch for {key}: {:?} vs {:?}",
                        src.shape(),
                        dst.shape()
                    ),
                });
            }
            *dst = src.clone();
        }
        let key = format!("{name}.a_gain");
        let src = entries.get(&key).ok_or_else(|| Error::Format {
            offset: 0,
            detail: format!("checkpoint missing {key}"),
        })?;
        lp.a_gain = src.at(0);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_spec(hidden: usize, classes: usize, dim: usize, t: usize, mode: RefractoryMode) -> NetworkSpec {
        NetworkSpec {
            layers: vec![
                LayerSpec::Encoder { shape: vec![dim] },
                LayerSpec::Dense {
                    out: hidden,
                    neuron: NeuronParams::default(),
                    mode,
                },
                LayerSpec::Readout { classes },
            ],
            timesteps: t,
            seed: 0,
        }
    }

    #[test]
    fn build_rejects_bad_composition() {
        let spec = NetworkSpec {
            layers: vec![
                LayerSpec::Encoder { shape: vec![2, 4, 4] },
                LayerSpec::Dense {
                    out: 3,
                    neuron: NeuronParams::default(),
                    mode: RefractoryMode::Hdrp,
                },
                LayerSpec::Readout { classes: 2 },
            ],
            timesteps: 2,
            seed: 0,
        };
        assert!(Network::build(&spec, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn build_bounds_are_nondegenerate() {
        let spec = dense_spec(8, 3, 5, 2, RefractoryMode::Hdrp);
        let (net, _) = Network::build(&spec, &mut Rng::new(1)).unwrap();
        let b = net.layer_bounds(1).unwrap();
        for i in 0..b.up_min.len() {
            assert!(b.up_min.at(i) < b.up_max.at(i));
        }
    }

    #[test]
    fn build_is_seed_deterministic() {
        let spec = dense_spec(8, 3, 5, 2, RefractoryMode::Hdrp);
        let (_, s1) = Network::build(&spec, &mut Rng::new(5)).unwrap();
        let (_, s2) = Network::build(&spec, &mut Rng::new(5)).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn zero_weight_readout_returns_bias() {
        let spec = NetworkSpec {
            layers: vec![
                LayerSpec::Encoder { shape: vec![4] },
                LayerSpec::Readout { classes: 3 },
            ],
            timesteps: 3,
            seed: 0,
        };
        let (net, mut store) = Network::build(&spec, &mut Rng::new(2)).unwrap();
        let lp = store.params[1].as_mut().unwrap();
        lp.weight.map_inplace(|_| 0.0);
        lp.bias = Tensor::from_vec(vec![0.25, -1.5, 2.0]);
        let x = Tensor::from_vec(vec![0.1, 0.9, 0.4, 0.7]);
        let (logits, _, _) = net
            .forward_sample(&store, &x, ForwardMode::Inference, SpikeActivation::Hard)
            .unwrap();
        assert_eq!(logits.data(), &[0.25, -1.5, 2.0]);
    }

    #[test]
    fn inference_and_training_logits_agree() {
        let spec = dense_spec(6, 3, 4, 4, RefractoryMode::Hdrp);
        let (net, store) = Network::build(&spec, &mut Rng::new(3)).unwrap();
        let x = Tensor::from_vec(vec![0.3, 0.8, 0.5, 0.2]);
        let (a, _, _) = net
            .forward_sample(&store, &x, ForwardMode::Inference, SpikeActivation::Hard)
            .unwrap();
        let (b, trace, _) = net
            .forward_sample(&store, &x, ForwardMode::Training, SpikeActivation::Hard)
            .unwrap();
        assert_eq!(a, b);
        assert!(trace.is_some());
    }

    #[test]
    fn interlayer_signals_are_binary() {
        let spec = NetworkSpec {
            layers: vec![
                LayerSpec::Encoder { shape: vec![5] },
                LayerSpec::Dense {
                    out: 7,
                    neuron: NeuronParams::default(),
                    mode: RefractoryMode::Hdrp,
                },
                LayerSpec::Dense {
                    out: 6,
                    neuron: NeuronParams::default(),
                    mode: RefractoryMode::Hdrp,
                },
                LayerSpec::Readout { classes: 2 },
            ],
            timesteps: 5,
            seed: 0,
        };
        let (net, store) = Network::build(&spec, &mut Rng::new(9)).unwrap();
        let x = Tensor::from_vec(vec![0.9, 0.2, 0.7, 1.0, 0.4]);
        let (_, trace, _) = net
            .forward_sample(&store, &x, ForwardMode::Training, SpikeActivation::Hard)
            .unwrap();
        let trace = trace.unwrap();
        for states in trace.states.iter().flatten() {
            for st in states {
                assert!(st.s.data().iter().all(|&s| s == 0.0 || s == 1.0));
            }
        }
    }

    #[test]
    fn predict_tie_breaks_low_index() {
        assert_eq!(predict(&[0.1, 0.9]), 1);
        assert_eq!(predict(&[0.5, 0.5]), 0);
        assert_eq!(predict(&[0.3, 0.3, 0.3]), 0);
    }

    #[test]
    fn readout_permutation_equivariance() {
        let spec = dense_spec(6, 4, 4, 3, RefractoryMode::Hdrp);
        let (net, store) = Network::build(&spec, &mut Rng::new(11)).unwrap();
        let x = Tensor::from_vec(vec![0.2, 0.9, 0.1, 0.6]);
        let (logits, _, _) = net
            .forward_sample(&store, &x, ForwardMode::Inference, SpikeActivation::Hard)
            .unwrap();

        // permute readout rows (and biases) by a fixed cycle
        let perm = [2usize, 0, 3, 1];
        let mut store2 = store.clone();
        {
            let lp = store2.params[2].as_mut().unwrap();
            let w = lp.weight.clone();
            let b = lp.bias.clone();
            let cols = w.shape()[1];
            for (dst, &src) in perm.iter().enumerate() {
                for c in 0..cols {
                    lp.weight.data_mut()[dst * cols + c] = w.data()[src * cols + c];
                }
                lp.bias.data_mut()[dst] = b.at(src);
            }
        }
        let (logits2, _, _) = net
            .forward_sample(&store2, &x, ForwardMode::Inference, SpikeActivation::Hard)
            .unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            assert_eq!(logits2.at(dst), logits.at(src));
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let spec = dense_spec(6, 3, 4, 2, RefractoryMode::Hdrp);
        let (net, store) = Network::build(&spec, &mut Rng::new(13)).unwrap();
        let dir = std::env::temp_dir().join("hdrp-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("net.ckpt");
        save_checkpoint(&path, &net, &store).unwrap();
        let (_, mut store2) = Network::build(&spec, &mut Rng::new(999)).unwrap();
        assert_ne!(store.params, store2.params);
        load_checkpoint(&path, &net, &mut store2).unwrap();
        assert_eq!(store.params, store2.params);
    }
}
