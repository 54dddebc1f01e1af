//! Spiking neural network library built around LIF neurons with a
//! historical dynamic refractory period (HDRP).
//!
//! The crate provides dense f64 tensors with deterministic seeded RNG, the
//! LIF / HDRP neuron dynamics with analytic derivative bounds, network
//! composition with temporal unrolling, hand-derived reverse-mode training
//! with a finite-difference gradient oracle, synaptic-operation energy
//! accounting, and dataset / noise utilities for robustness experiments.

pub mod data;
pub mod energy;
pub mod error;
pub mod network;
pub mod neuron;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use network::{
    load_checkpoint, predict, predict_batch, save_checkpoint, ForwardMode, LayerParams, LayerSpec,
    Network, NetworkSpec, ParamStore, SampleTrace, SpikeStats,
};
pub use neuron::{
    current_bounds, derivative_bounds, hdrp_step, lif_step, normalize_derivative,
    refractory_kernel, DerivativeBounds, LayerState, NeuronParams, RefractoryMode, SpikeActivation,
};
pub use rng::Rng;
pub use tensor::Tensor;
pub use train::{
    backward_batch, evaluate, finite_diff_oracle, loss, sgd_step, softmax_cross_entropy,
    surrogate_grad, train, BackwardConfig, EpochRecord, GradReport, LossConfig, OptimizerConfig,
    Schedule, TrainLog,
};
