//! Neuron models: the leaky integrate-and-fire step, the historical dynamic
//! refractory period (HDRP) extension with its threshold-dependent kernel,
//! analytic bounds on the membrane derivative, and the ablation variants of
//! the refractory update.
//!
//! The discrete dynamics per neuron and step are
//!
//! ```text
//! I  = drive - g(tau_ref_prev)            g(x) = u_th * tanh(a * x)
//! U' = -(U_prev - u_rest) / tau_m + I
//! H  = U_prev + U'
//! S  = step(H - u_th)                     spike at equality: step(0) = 1
//! U  = H * (1 - S) + u_rest * S           hard reset
//! tau_ref = k(U') * tau_ref_prev + S * (k(U') * tau_refl + tau_ref0)
//! ```
//!
//! where `k` is the min-max normalized membrane derivative, clamped to
//! [0, 1]. Variants replace or drop pieces of the `tau_ref` update; see
//! [`RefractoryMode`].

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Per-layer neuron constants.
///
/// `r_m` is retained for completeness of the continuous-time membrane
/// equation but is fixed to 1 and never rescales the current.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronParams {
    /// Membrane time constant in steps; must exceed 1 so the leak factor
    /// `1 - 1/tau_m` lies in (0, 1).
    pub tau_m: f64,
    /// Threshold voltage.
    pub u_th: f64,
    /// Resting potential.
    pub u_rest: f64,
    /// Minimum refractory period added on a spike.
    pub tau_ref0: f64,
    /// Adjustable refractory range added (scaled by k) on a spike.
    pub tau_refl: f64,
    /// Hard cap applied to the refractory clock after every update.
    pub tau_ref_max: f64,
    /// Learnable kernel gain; kept strictly positive.
    pub a_gain: f64,
    /// Membrane resistance, fixed to 1.
    pub r_m: f64,
}

impl Default for NeuronParams {
    fn default() -> Self {
        NeuronParams {
            tau_m: 2.0,
            u_th: 1.0,
            u_rest: 0.0,
            tau_ref0: 1.0,
            tau_refl: 5.0,
            tau_ref_max: 6.0,
            a_gain: 1.0,
            r_m: 1.0,
        }
    }
}

impl NeuronParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_m > 1.0) {
            return Err(Error::Parameter(format!(
                "tau_m must be > 1, got {}",
                self.tau_m
            )));
        }
        if !(self.u_th > self.u_rest) {
            return Err(Error::Parameter(format!(
                "u_th ({}) must exceed u_rest ({})",
                self.u_th, self.u_rest
            )));
        }
        if self.tau_ref0 < 0.0 || self.tau_refl < 0.0 {
            return Err(Error::Parameter(
                "tau_ref0 and tau_refl must be >= 0".into(),
            ));
        }
        if self.tau_ref0 + self.tau_refl > self.tau_ref_max {
            return Err(Error::Parameter(format!(
                "tau_ref0 + tau_refl = {} exceeds tau_ref_max = {}",
                self.tau_ref0 + self.tau_refl,
                self.tau_ref_max
            )));
        }
        if !(self.a_gain > 0.0) {
            return Err(Error::Parameter(format!(
                "a_gain must be > 0, got {}",
                self.a_gain
            )));
        }
        Ok(())
    }

    /// Leak coefficient `1/tau_m`.
    pub fn leak(&self) -> f64 {
        1.0 / self.tau_m
    }
}

/// Which refractory update rule a layer runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum RefractoryMode {
    /// Vanilla LIF: no kernel, refractory clock pinned to zero.
    None,
    /// Classical absolute refractoriness: spikes are suppressed for
    /// `len` steps after a spike; the clock counts down by 1 per step and
    /// the membrane keeps integrating. No kernel inhibition.
    Absolute { len: u32 },
    /// Kernel inhibition with a spike-triggered clock but no carry-over of
    /// the previous clock value.
    RelativeNoHistory,
    /// Kernel inhibition with history, but the adaptive decay `k(U')`
    /// replaced by a fixed constant in [0, 1].
    RelativeFixedDecay { decay: f64 },
    /// The full historical dynamic refractory period.
    Hdrp,
}

impl RefractoryMode {
    /// Whether this mode subtracts the refractory kernel from the drive.
    pub fn uses_kernel(&self) -> bool {
        matches!(
            self,
            RefractoryMode::RelativeNoHistory
                | RefractoryMode::RelativeFixedDecay { .. }
                | RefractoryMode::Hdrp
        )
    }

    /// Whether this mode consumes the normalized derivative `k(U')`.
    pub fn uses_normalization(&self) -> bool {
        matches!(self, RefractoryMode::RelativeNoHistory | RefractoryMode::Hdrp)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            RefractoryMode::Absolute { len } => {
                if *len == 0 {
                    return Err(Error::Config("absolute refractory length must be >= 1".into()));
                }
            }
            RefractoryMode::RelativeFixedDecay { decay } => {
                if !(0.0..=1.0).contains(decay) {
                    return Err(Error::Config(format!(
                        "fixed decay must lie in [0, 1], got {decay}"
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Per-neuron temporal state of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    /// Membrane potential after reset.
    pub u: Tensor,
    /// Membrane derivative of the step that produced this state.
    pub u_prime: Tensor,
    /// Pre-reset potential.
    pub h: Tensor,
    /// Refractory clock, always >= 0.
    pub tau_ref: Tensor,
    /// Spikes; {0, 1} under the hard activation.
    pub s: Tensor,
}

impl LayerState {
    /// State at t = 0: membrane at rest, clock and spikes zero.
    pub fn initial(neurons: usize, params: &NeuronParams) -> Self {
        LayerState {
            u: Tensor::full(&[neurons], params.u_rest),
            u_prime: Tensor::zeros(&[neurons]),
            h: Tensor::full(&[neurons], params.u_rest),
            tau_ref: Tensor::zeros(&[neurons]),
            s: Tensor::zeros(&[neurons]),
        }
    }

    pub fn neurons(&self) -> usize {
        self.u.len()
    }
}

/// Analytic per-neuron bounds on synaptic current, membrane potential, and
/// membrane derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeBounds {
    pub i_min: Tensor,
    pub i_max: Tensor,
    pub u_min: Tensor,
    pub u_max: Tensor,
    pub up_min: Tensor,
    pub up_max: Tensor,
}

impl DerivativeBounds {
    /// Build-time check that min-max normalization is well defined.
    pub fn validate_nondegenerate(&self) -> Result<()> {
        for i in 0..self.up_min.len() {
            if !(self.up_max.at(i) > self.up_min.at(i)) {
                return Err(Error::Config(format!(
                    "degenerate derivative bounds at neuron {i}: up_min {} >= up_max {}",
                    self.up_min.at(i),
                    self.up_max.at(i)
                )));
            }
        }
        Ok(())
    }

    /// Expand per-channel bounds to per-neuron bounds by repeating each
    /// channel value over its spatial positions.
    pub fn expand_per_channel(&self, positions: usize) -> DerivativeBounds {
        let expand = |t: &Tensor| {
            let mut data = Vec::with_capacity(t.len() * positions);
            for i in 0..t.len() {
                data.extend(std::iter::repeat(t.at(i)).take(positions));
            }
            Tensor::from_vec(data)
        };
        DerivativeBounds {
            i_min: expand(&self.i_min),
            i_max: expand(&self.i_max),
            u_min: expand(&self.u_min),
            u_max: expand(&self.u_max),
            up_min: expand(&self.up_min),
            up_max: expand(&self.up_max),
        }
    }
}

/// Extremal synaptic currents reachable with binary inputs.
///
/// For each output neuron the maximum current collects the positive weights
/// plus the bias, and the minimum collects the negative weights plus the
/// bias. Dense weights `[out, in]` give one bound per row; conv kernels
/// `[O, C, kH, kW]` give one bound per output channel, shared across spatial
/// positions.
pub fn current_bounds(weights: &Tensor, bias: &Tensor) -> Result<(Tensor, Tensor)> {
    let (groups, fan_in) = match weights.shape() {
        [out, fan_in] => (*out, *fan_in),
        [out, c, kh, kw] => (*out, c * kh * kw),
        other => {
            return Err(Error::shape(
                "current_bounds",
                format!("weights must be 2-d or 4-d, got {other:?}"),
            ))
        }
    };
    if bias.len() != groups {
        return Err(Error::shape(
            "current_bounds",
            format!("bias length {} vs {} output groups", bias.len(), groups),
        ));
    }
    let mut i_min = Vec::with_capacity(groups);
    let mut i_max = Vec::with_capacity(groups);
    for g in 0..groups {
        let row = &weights.data()[g * fan_in..(g + 1) * fan_in];
        let pos: f64 = row.iter().filter(|&&w| w > 0.0).sum();
        let neg: f64 = row.iter().filter(|&&w| w < 0.0).sum();
        i_max.push(pos + bias.at(g));
        i_min.push(neg + bias.at(g));
    }
    Ok((Tensor::from_vec(i_min), Tensor::from_vec(i_max)))
}

/// Closed-form membrane and derivative bounds from current bounds.
///
/// The stored `u_max` is the hard-reset supremum `u_th`. For `u_min` the
/// geometric-series bound `tau_m/(tau_m - 1) * i_min` is combined with the
/// bound `tau_m * i_min` implied by the `H = U + U'` recurrence and with the
/// resting level; the minimum of the three keeps the bound sound for every
/// `tau_m > 1` while reproducing the geometric form exactly for
/// `tau_m <= 2`. A nonzero resting potential shifts `u_min` by `u_rest`.
///
/// Derivative extremes pair minimal potential with maximal current and vice
/// versa:
///
/// ```text
/// up_max = -(u_min - u_rest) / tau_m + i_max
/// up_min = -(u_max - u_rest) / tau_m + i_min
/// ```
pub fn derivative_bounds(
    i_min: &Tensor,
    i_max: &Tensor,
    params: &NeuronParams,
) -> Result<DerivativeBounds> {
    if !(params.tau_m > 1.0) {
        return Err(Error::Parameter(format!(
            "tau_m must be > 1, got {}",
            params.tau_m
        )));
    }
    if i_min.shape() != i_max.shape() {
        return Err(Error::shape(
            "derivative_bounds",
            format!("{:?} vs {:?}", i_min.shape(), i_max.shape()),
        ));
    }
    let tau = params.tau_m;
    let geometric = tau / (tau - 1.0);
    let n = i_min.len();
    let mut u_min = Vec::with_capacity(n);
    let mut u_max = Vec::with_capacity(n);
    let mut up_min = Vec::with_capacity(n);
    let mut up_max = Vec::with_capacity(n);
    for i in 0..n {
        let imin = i_min.at(i);
        let imax = i_max.at(i);
        let umin = params.u_rest + (geometric * imin).min(tau * imin).min(0.0);
        let umax = params.u_th;
        u_min.push(umin);
        u_max.push(umax);
        up_max.push(-(umin - params.u_rest) / tau + imax);
        up_min.push(-(umax - params.u_rest) / tau + imin);
    }
    Ok(DerivativeBounds {
        i_min: i_min.clone(),
        i_max: i_max.clone(),
        u_min: Tensor::from_vec(u_min),
        u_max: Tensor::from_vec(u_max),
        up_min: Tensor::from_vec(up_min),
        up_max: Tensor::from_vec(up_max),
    })
}

/// Min-max normalization of the membrane derivative, clamped to [0, 1].
pub fn normalize_derivative(u_prime: &Tensor, bounds: &DerivativeBounds) -> Tensor {
    let n = u_prime.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let span = bounds.up_max.at(i) - bounds.up_min.at(i);
        let raw = (u_prime.at(i) - bounds.up_min.at(i)) / span;
        out.push(raw.clamp(0.0, 1.0));
    }
    Tensor::from_vec(out)
}

/// Threshold-dependent refractory kernel `g(tau_ref) = u_th * tanh(a * tau_ref)`.
///
/// Strictly increasing in `tau_ref`, zero at zero, approaching `u_th` from
/// below as the clock grows.
pub fn refractory_kernel(tau_ref: &Tensor, params: &NeuronParams) -> Tensor {
    tau_ref.map(|t| params.u_th * (params.a_gain * t).tanh())
}

/// Scalar form of the kernel.
pub fn kernel_scalar(tau_ref: f64, u_th: f64, a_gain: f64) -> f64 {
    u_th * (a_gain * tau_ref).tanh()
}

/// Spike nonlinearity applied to `H - u_th`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpikeActivation {
    /// Heaviside with spike-at-equality: `step(0) = 1`.
    Hard,
    /// C1 piecewise-quadratic ramp of half-width `gamma`, whose derivative
    /// is the triangular surrogate. Produces fractional spike values; used
    /// only by the gradient oracle, where the forward graph must be
    /// differentiable. Coincides with `Hard` whenever `|H - u_th| >= gamma`.
    Soft { gamma: f64 },
}

impl SpikeActivation {
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            SpikeActivation::Hard => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            SpikeActivation::Soft { gamma } => {
                if x <= -gamma {
                    0.0
                } else if x >= gamma {
                    1.0
                } else if x < 0.0 {
                    let y = x + gamma;
                    y * y / (2.0 * gamma * gamma)
                } else {
                    let y = gamma - x;
                    1.0 - y * y / (2.0 * gamma * gamma)
                }
            }
        }
    }
}

// Shared membrane recurrence: leak, integrate, threshold, hard reset.
fn membrane_update(
    u_prev: f64,
    current: f64,
    params: &NeuronParams,
    activation: SpikeActivation,
) -> (f64, f64, f64, f64) {
    let u_prime = -(u_prev - params.u_rest) / params.tau_m + current;
    let h = u_prev + u_prime;
    let s = activation.apply(h - params.u_th);
    let u = h * (1.0 - s) + params.u_rest * s;
    (u_prime, h, s, u)
}

/// One vanilla LIF step driven by an explicit input current.
pub fn lif_step(state: &LayerState, input_current: &Tensor, params: &NeuronParams) -> LayerState {
    let n = state.neurons();
    debug_assert_eq!(input_current.len(), n);
    let mut u_prime = Vec::with_capacity(n);
    let mut h = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut u = Vec::with_capacity(n);
    for i in 0..n {
        let (up, hh, ss, uu) =
            membrane_update(state.u.at(i), input_current.at(i), params, SpikeActivation::Hard);
        u_prime.push(up);
        h.push(hh);
        s.push(ss);
        u.push(uu);
    }
    LayerState {
        u: Tensor::from_vec(u),
        u_prime: Tensor::from_vec(u_prime),
        h: Tensor::from_vec(h),
        tau_ref: Tensor::zeros(&[n]),
        s: Tensor::from_vec(s),
    }
}

/// Factored form of the refractory update:
/// `k * tau_prev + s * (k * tau_refl + tau_ref0)`.
pub fn tau_update_factored(k: f64, s: f64, tau_prev: f64, tau_refl: f64, tau_ref0: f64) -> f64 {
    k * tau_prev + s * (k * tau_refl + tau_ref0)
}

/// Expanded form of the same update:
/// `k * (tau_prev + s * tau_refl) + s * tau_ref0`.
pub fn tau_update_expanded(k: f64, s: f64, tau_prev: f64, tau_refl: f64, tau_ref0: f64) -> f64 {
    k * (tau_prev + s * tau_refl) + s * tau_ref0
}

/// Evaluate both algebraic forms of the refractory update over random
/// tuples and return the largest absolute disagreement. The two forms are
/// equal by distributivity; anything beyond rounding noise is a bug.
pub fn refractory_update_agreement(samples: usize, rng: &mut crate::rng::Rng) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let k = rng.next_f64();
        let s = if rng.next_f64() < 0.5 { 0.0 } else { 1.0 };
        let tau_prev = rng.uniform(0.0, 6.0);
        let tau_refl = rng.uniform(0.0, 5.0);
        let tau_ref0 = rng.uniform(0.0, 2.0);
        let a = tau_update_factored(k, s, tau_prev, tau_refl, tau_ref0);
        let b = tau_update_expanded(k, s, tau_prev, tau_refl, tau_ref0);
        worst = worst.max((a - b).abs());
    }
    worst
}

/// One step of a spiking layer under the configured refractory mode.
///
/// `presyn_drive` is `W s_pre + b`, before kernel inhibition. The state
/// carries the refractory clock from the previous step: the kernel is
/// evaluated on `tau_ref_prev`, then the membrane recurrence runs, then the
/// clock is updated per mode and clamped to `[0, tau_ref_max]`.
pub fn hdrp_step(
    state: &LayerState,
    presyn_drive: &Tensor,
    params: &NeuronParams,
    bounds: &DerivativeBounds,
    mode: RefractoryMode,
) -> LayerState {
    hdrp_step_with_activation(state, presyn_drive, params, bounds, mode, SpikeActivation::Hard)
}

/// [`hdrp_step`] with an explicit spike activation (the gradient oracle runs
/// the soft variant).
pub fn hdrp_step_with_activation(
    state: &LayerState,
    presyn_drive: &Tensor,
    params: &NeuronParams,
    bounds: &DerivativeBounds,
    mode: RefractoryMode,
    activation: SpikeActivation,
) -> LayerState {
    let n = state.neurons();
    debug_assert_eq!(presyn_drive.len(), n);
    let kernel_active = mode.uses_kernel();
    let mut u_prime = Vec::with_capacity(n);
    let mut h = Vec::with_capacity(n);
    let mut s_out = Vec::with_capacity(n);
    let mut u = Vec::with_capacity(n);
    let mut tau = Vec::with_capacity(n);
    for i in 0..n {
        let tau_prev = state.tau_ref.at(i);
        let current = if kernel_active {
            presyn_drive.at(i) - kernel_scalar(tau_prev, params.u_th, params.a_gain)
        } else {
            presyn_drive.at(i)
        };
        let (up, hh, mut ss, mut uu) = membrane_update(state.u.at(i), current, params, activation);
        if let RefractoryMode::Absolute { .. } = mode {
            if tau_prev > 0.0 {
                // In-refractory: the spike is suppressed, the membrane keeps
                // integrating.
                ss = 0.0;
                uu = hh;
            }
        }
        let tau_next = match mode {
            RefractoryMode::None => 0.0,
            RefractoryMode::Absolute { len } => {
                if ss == 1.0 {
                    len as f64
                } else {
                    (tau_prev - 1.0).max(0.0)
                }
            }
            RefractoryMode::RelativeNoHistory => {
                let span = bounds.up_max.at(i) - bounds.up_min.at(i);
                let k = ((up - bounds.up_min.at(i)) / span).clamp(0.0, 1.0);
                ss * (k * params.tau_refl + params.tau_ref0)
            }
            RefractoryMode::RelativeFixedDecay { decay } => {
                tau_update_factored(decay, ss, tau_prev, params.tau_refl, params.tau_ref0)
            }
            RefractoryMode::Hdrp => {
                let span = bounds.up_max.at(i) - bounds.up_min.at(i);
                let k = ((up - bounds.up_min.at(i)) / span).clamp(0.0, 1.0);
                tau_update_factored(k, ss, tau_prev, params.tau_refl, params.tau_ref0)
            }
        };
        u_prime.push(up);
        h.push(hh);
        s_out.push(ss);
        u.push(uu);
        tau.push(tau_next.clamp(0.0, params.tau_ref_max));
    }
    LayerState {
        u: Tensor::from_vec(u),
        u_prime: Tensor::from_vec(u_prime),
        h: Tensor::from_vec(h),
        tau_ref: Tensor::from_vec(tau),
        s: Tensor::from_vec(s_out),
    }
}
