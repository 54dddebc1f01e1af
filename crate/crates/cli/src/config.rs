//! Experiment configuration: TOML with full defaults, unknown keys
//! rejected, and repeatable `--set key=value` overrides using dotted paths.

use hdrp_core::energy::{EnergyConstants, MacPolicy};
use hdrp_core::network::{LayerSpec, NetworkSpec};
use hdrp_core::neuron::{NeuronParams, RefractoryMode};
use hdrp_core::train::{LossConfig, OptimizerConfig, Schedule};
use hdrp_core::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub timesteps: usize,
    pub dataset: DatasetConfig,
    pub network: NetworkConfig,
    pub neuron: NeuronConfig,
    pub refractory: RefractoryConfig,
    pub loss: LossSection,
    pub optimizer: OptimizerSection,
    pub noise: NoiseSection,
    pub backward: BackwardSection,
    pub gradcheck: GradCheckSection,
    pub energy: EnergySection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            timesteps: 4,
            dataset: DatasetConfig::default(),
            network: NetworkConfig::default(),
            neuron: NeuronConfig::default(),
            refractory: RefractoryConfig::default(),
            loss: LossSection::default(),
            optimizer: OptimizerSection::default(),
            noise: NoiseSection::default(),
            backward: BackwardSection::default(),
            gradcheck: GradCheckSection::default(),
            energy: EnergySection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// "synthetic" or "idx".
    pub source: String,
    pub classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub margin: f64,
    pub train_images: String,
    pub train_labels: String,
    pub test_images: String,
    pub test_labels: String,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            source: "synthetic".into(),
            classes: 4,
            dim: 32,
            train_per_class: 40,
            test_per_class: 250,
            margin: 2.0,
            train_images: String::new(),
            train_labels: String::new(),
            test_images: String::new(),
            test_labels: String::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Hidden dense layer widths.
    pub hidden: Vec<usize>,
    /// Optional conv stack applied before the dense layers (image inputs).
    pub conv: Vec<ConvBlock>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden: vec![32],
            conv: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvBlock {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Average-pool window applied after the conv layer; 0 disables.
    pub pool: usize,
}

impl Default for ConvBlock {
    fn default() -> Self {
        ConvBlock {
            out_channels: 4,
            kernel: 3,
            stride: 1,
            padding: 1,
            pool: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeuronConfig {
    pub tau_m: f64,
    pub u_th: f64,
    pub u_rest: f64,
    pub tau_ref0: f64,
    pub tau_refl: f64,
    pub tau_ref_max: f64,
    pub a_init: f64,
}

impl Default for NeuronConfig {
    fn default() -> Self {
        NeuronConfig {
            tau_m: 2.0,
            u_th: 1.0,
            u_rest: 0.0,
            tau_ref0: 1.0,
            tau_refl: 5.0,
            tau_ref_max: 6.0,
            a_init: 1.0,
        }
    }
}

impl NeuronConfig {
    pub fn to_params(&self) -> NeuronParams {
        NeuronParams {
            tau_m: self.tau_m,
            u_th: self.u_th,
            u_rest: self.u_rest,
            tau_ref0: self.tau_ref0,
            tau_refl: self.tau_refl,
            tau_ref_max: self.tau_ref_max,
            a_gain: self.a_init,
            r_m: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefractoryConfig {
    /// none | absolute | relative-no-history | relative-fixed-decay | hdrp
    pub mode: String,
    pub fixed_decay: f64,
    pub absolute_len: u32,
}

impl Default for RefractoryConfig {
    fn default() -> Self {
        RefractoryConfig {
            mode: "hdrp".into(),
            fixed_decay: 0.5,
            absolute_len: 1,
        }
    }
}

impl RefractoryConfig {
    pub fn to_mode(&self) -> Result<RefractoryMode> {
        let mode = match self.mode.as_str() {
            "none" => RefractoryMode::None,
            "absolute" => RefractoryMode::Absolute {
                len: self.absolute_len,
            },
            "relative-no-history" => RefractoryMode::RelativeNoHistory,
            "relative-fixed-decay" => RefractoryMode::RelativeFixedDecay {
                decay: self.fixed_decay,
            },
            "hdrp" => RefractoryMode::Hdrp,
            other => {
                return Err(Error::Config(format!(
                    "unknown refractory mode {other:?} (expected none, absolute, relative-no-history, relative-fixed-decay, or hdrp)"
                )))
            }
        };
        mode.validate()?;
        Ok(mode)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub lambda: f64,
    pub gamma: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection {
            lambda: 1e-4,
            gamma: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub eta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// "constant" or "step-decay".
    pub schedule: String,
    pub step_every: usize,
    pub step_factor: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        OptimizerSection {
            eta: 0.1,
            epochs: 100,
            batch_size: 16,
            schedule: "step-decay".into(),
            step_every: 40,
            step_factor: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    /// Evaluation sweep grid in normalized-pixel units.
    pub sigmas: Vec<f64>,
    /// Noise applied to the test set for train/eval/ablate commands.
    pub eval_sigma: f64,
    pub seed: u64,
    pub clip: bool,
    /// Apply `eval_sigma` noise to the training set as well (exploration).
    pub train_noise: bool,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            sigmas: vec![0.0, 0.05, 0.1, 0.2, 0.3, 0.5],
            eval_sigma: 0.0,
            seed: 777,
            clip: true,
            train_noise: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct BackwardSection {
    pub detach_normalization: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckSection {
    pub h: f64,
    pub threshold: f64,
    /// Batch size for the oracle run.
    pub batch: usize,
    /// Hidden width of the dedicated tiny network.
    pub hidden: usize,
    pub input_dim: usize,
    pub classes: usize,
    pub timesteps: usize,
    /// Test hook: corrupt one analytic gradient to prove the oracle trips.
    pub corrupt: bool,
}

impl Default for GradCheckSection {
    fn default() -> Self {
        GradCheckSection {
            h: 1e-5,
            threshold: 1e-4,
            batch: 4,
            hidden: 8,
            input_dim: 5,
            classes: 3,
            timesteps: 4,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergySection {
    pub e_mac_pj: f64,
    pub e_ac_pj: f64,
    pub state_mac_per_var: u64,
    pub include_encoder_macs_in_total: bool,
}

impl Default for EnergySection {
    fn default() -> Self {
        EnergySection {
            e_mac_pj: 4.6,
            e_ac_pj: 0.9,
            state_mac_per_var: 1,
            include_encoder_macs_in_total: false,
        }
    }
}

impl EnergySection {
    pub fn constants(&self) -> EnergyConstants {
        EnergyConstants {
            e_mac_pj: self.e_mac_pj,
            e_ac_pj: self.e_ac_pj,
        }
    }

    pub fn policy(&self) -> MacPolicy {
        MacPolicy {
            state_mac_per_var: self.state_mac_per_var,
            include_encoder_macs_in_total: self.include_encoder_macs_in_total,
        }
    }
}

impl ExperimentConfig {
    /// Read a config file, then apply `--set key=value` overrides (dotted
    /// paths into the TOML tree). Unknown keys are rejected.
    pub fn load(path: Option<&Path>, sets: &[String], seed: Option<u64>) -> Result<Self> {
        let mut value: toml::Value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Error::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                text.parse().map_err(|e| Error::Config(format!("bad TOML: {e}")))?
            }
            None => toml::Value::Table(Default::default()),
        };
        for set in sets {
            apply_set(&mut value, set)?;
        }
        let mut cfg: ExperimentConfig = value
            .try_into()
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.timesteps == 0 {
            return Err(Error::Config("timesteps must be >= 1".into()));
        }
        match self.dataset.source.as_str() {
            "synthetic" | "idx" => {}
            other => {
                return Err(Error::Config(format!(
                    "unknown dataset source {other:?} (expected synthetic or idx)"
                )))
            }
        }
        self.refractory.to_mode()?;
        self.neuron.to_params().validate()?;
        self.loss_config().validate()?;
        self.optimizer_config()?.validate()?;
        if self.noise.sigmas.is_empty() || self.noise.sigmas.iter().any(|&s| s < 0.0) {
            return Err(Error::Config("noise.sigmas must be non-empty and >= 0".into()));
        }
        if self.noise.eval_sigma < 0.0 {
            return Err(Error::Config("noise.eval_sigma must be >= 0".into()));
        }
        Ok(())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda: self.loss.lambda,
            gamma: self.loss.gamma,
        }
    }

    pub fn optimizer_config(&self) -> Result<OptimizerConfig> {
        let schedule = match self.optimizer.schedule.as_str() {
            "constant" => Schedule::Constant,
            "step-decay" => Schedule::StepDecay {
                every: self.optimizer.step_every,
                factor: self.optimizer.step_factor,
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown schedule {other:?} (expected constant or step-decay)"
                )))
            }
        };
        Ok(OptimizerConfig {
            eta: self.optimizer.eta,
            epochs: self.optimizer.epochs,
            batch_size: self.optimizer.batch_size,
            schedule,
        })
    }

    /// Network specification for a given input shape and refractory mode.
    pub fn network_spec(&self, input_shape: &[usize], mode: RefractoryMode) -> Result<NetworkSpec> {
        let neuron = self.neuron.to_params();
        let mut layers = vec![LayerSpec::Encoder {
            shape: input_shape.to_vec(),
        }];
        if !self.network.conv.is_empty() && input_shape.len() != 3 {
            return Err(Error::Config(
                "conv blocks need an image-shaped input (C x H x W)".into(),
            ));
        }
        for block in &self.network.conv {
            layers.push(LayerSpec::Conv2d {
                out_channels: block.out_channels,
                kernel: block.kernel,
                stride: block.stride,
                padding: block.padding,
                neuron,
                mode,
            });
            if block.pool > 0 {
                layers.push(LayerSpec::AvgPool2d { window: block.pool });
            }
        }
        if input_shape.len() > 1 {
            layers.push(LayerSpec::Flatten);
        }
        for &width in &self.network.hidden {
            layers.push(LayerSpec::Dense {
                out: width,
                neuron,
                mode,
            });
        }
        layers.push(LayerSpec::Readout {
            classes: self.dataset.classes,
        });
        Ok(NetworkSpec {
            layers,
            timesteps: self.timesteps,
            seed: self.seed,
        })
    }

    /// Canonical TOML text of the resolved config (the echo written next to
    /// results).
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

fn apply_set(root: &mut toml::Value, set: &str) -> Result<()> {
    let (path, raw) = set.split_once('=').ok_or_else(|| {
        Error::Config(format!("--set expects key=value, got {set:?}"))
    })?;
    let parsed: toml::Value = match format!("v = {raw}").parse::<toml::Value>() {
        Ok(toml::Value::Table(t)) => t.get("v").cloned().unwrap(),
        _ => toml::Value::String(raw.to_string()),
    };
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node.as_table_mut().ok_or_else(|| {
            Error::Config(format!("--set path {path:?} crosses a non-table value"))
        })?;
        if i == parts.len() - 1 {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut value: toml::Value = "frobnicate = 3".parse().unwrap();
        apply_set(&mut value, "seed=1").unwrap();
        let r: std::result::Result<ExperimentConfig, _> = value.try_into();
        assert!(r.is_err());
    }

    #[test]
    fn dotted_set_overrides_nested_key() {
        let cfg =
            ExperimentConfig::load(None, &["refractory.mode=none".into(), "seed=7".into()], None)
                .unwrap();
        assert_eq!(cfg.refractory.mode, "none");
        assert_eq!(cfg.seed, 7);
        assert!(matches!(cfg.refractory.to_mode().unwrap(), RefractoryMode::None));
    }

    #[test]
    fn set_parses_arrays_and_floats() {
        let cfg = ExperimentConfig::load(
            None,
            &[
                "noise.sigmas=[0.0, 0.1]".into(),
                "optimizer.eta=0.05".into(),
                "network.hidden=[8, 8]".into(),
            ],
            None,
        )
        .unwrap();
        assert_eq!(cfg.noise.sigmas, vec![0.0, 0.1]);
        assert_eq!(cfg.optimizer.eta, 0.05);
        assert_eq!(cfg.network.hidden, vec![8, 8]);
    }

    #[test]
    fn bad_mode_is_config_error() {
        let r = ExperimentConfig::load(None, &["refractory.mode=sometimes".into()], None);
        assert!(r.is_err());
    }
}
