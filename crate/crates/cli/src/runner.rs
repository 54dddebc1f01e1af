//! Shared experiment machinery: dataset construction, network building,
//! training runs, and deterministic report writing. Wall-clock timing lives
//! in a separate `timing.json` so `report.json` is byte-reproducible under
//! a fixed config and seed.

use crate::config::ExperimentConfig;
use hdrp_core::data::{apply_noise, load_idx, synth_patterns, Dataset, NoiseSpec};
use hdrp_core::energy::{count_ops, OpsReport};
use hdrp_core::network::{save_checkpoint, ForwardMode, Network, ParamStore};
use hdrp_core::neuron::{RefractoryMode, SpikeActivation};
use hdrp_core::train::{evaluate, train, EpochRecord, TrainLog};
use hdrp_core::{Error, Result, Rng};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::Path;

// Fixed substream indices so every command derives the same streams from
// one seed.
const STREAM_TRAIN_DATA: u64 = 1;
const STREAM_TEST_DATA: u64 = 2;
const STREAM_INIT: u64 = 3;
const STREAM_SHUFFLE: u64 = 4;

pub fn load_datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match cfg.dataset.source.as_str() {
        "synthetic" => {
            let d = &cfg.dataset;
            let mut train_rng = Rng::substream(cfg.seed, STREAM_TRAIN_DATA);
            let mut test_rng = Rng::substream(cfg.seed, STREAM_TEST_DATA);
            let train = synth_patterns(d.classes, d.train_per_class, d.dim, d.margin, &mut train_rng)?;
            let test = synth_patterns(d.classes, d.test_per_class, d.dim, d.margin, &mut test_rng)?;
            Ok((train, test))
        }
        "idx" => {
            let d = &cfg.dataset;
            let train = load_idx(Path::new(&d.train_images), Path::new(&d.train_labels))?;
            let test = load_idx(Path::new(&d.test_images), Path::new(&d.test_labels))?;
            Ok((train, test))
        }
        other => Err(Error::Config(format!("unknown dataset source {other:?}"))),
    }
}

pub fn build_network(
    cfg: &ExperimentConfig,
    input_shape: &[usize],
    mode: RefractoryMode,
) -> Result<(Network, ParamStore)> {
    let spec = cfg.network_spec(input_shape, mode)?;
    let mut rng = Rng::substream(cfg.seed, STREAM_INIT);
    Network::build(&spec, &mut rng)
}

/// Deterministic result of one training run.
pub struct RunOutcome {
    pub net: Network,
    pub store: ParamStore,
    pub log: TrainLog,
    /// The clean test split (noise sweeps corrupt it per sigma).
    pub test_set: Dataset,
    pub final_train_acc: f64,
    pub final_test_acc: f64,
    pub ops: OpsReport,
}

/// Train per config with the given refractory mode, then evaluate and count
/// operations on the (optionally noise-corrupted) test set.
pub fn run_training(cfg: &ExperimentConfig, mode: RefractoryMode) -> Result<RunOutcome> {
    let (mut train_set, test_set) = load_datasets(cfg)?;
    if cfg.noise.train_noise && cfg.noise.eval_sigma > 0.0 {
        train_set = apply_noise(
            &train_set,
            &NoiseSpec {
                sigma: cfg.noise.eval_sigma,
                seed: cfg.noise.seed ^ 1,
                clip: cfg.noise.clip,
            },
        )?;
    }
    let eval_set = if cfg.noise.eval_sigma > 0.0 {
        apply_noise(
            &test_set,
            &NoiseSpec {
                sigma: cfg.noise.eval_sigma,
                seed: cfg.noise.seed,
                clip: cfg.noise.clip,
            },
        )?
    } else {
        test_set.clone()
    };

    let (mut net, mut store) = build_network(cfg, &train_set.input_shape, mode)?;
    let loss_cfg = cfg.loss_config();
    let opt = cfg.optimizer_config()?;
    let mut shuffle_rng = Rng::substream(cfg.seed, STREAM_SHUFFLE);
    let log = train(
        &mut net,
        &mut store,
        &train_set.inputs,
        &train_set.labels,
        &eval_set.inputs,
        &eval_set.labels,
        &loss_cfg,
        &opt,
        cfg.backward.detach_normalization,
        &mut shuffle_rng,
    )?;
    let final_train_acc = evaluate(&net, &store, &train_set.inputs, &train_set.labels)?;
    let final_test_acc = evaluate(&net, &store, &eval_set.inputs, &eval_set.labels)?;
    let (_, _, stats) = net.forward_batch(
        &store,
        &eval_set.inputs,
        ForwardMode::Inference,
        SpikeActivation::Hard,
    )?;
    let ops = count_ops(&net, &store, &stats, &cfg.energy.policy())?;
    Ok(RunOutcome {
        net,
        store,
        log,
        test_set,
        final_train_acc,
        final_test_acc,
        ops,
    })
}

#[derive(Debug, Serialize)]
pub struct BuildStamp {
    pub version: &'static str,
    pub git: Option<&'static str>,
}

pub fn build_stamp() -> BuildStamp {
    BuildStamp {
        version: env!("CARGO_PKG_VERSION"),
        git: option_env!("GIT_SHA"),
    }
}

/// The deterministic run report (no timing fields).
#[derive(Serialize)]
pub struct RunReport<'a> {
    pub build: BuildStamp,
    pub config_hash: String,
    pub seed: u64,
    pub refractory_mode: String,
    pub epochs: &'a [EpochRecord],
    pub final_train_acc: f64,
    pub final_test_acc: f64,
    pub ops: &'a OpsReport,
    pub config: &'a ExperimentConfig,
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut hasher = Sha256::new();
    hasher.update(cfg.to_toml().as_bytes());
    format!("{:x}", hasher.finalize())
}

/// Write `report.json` (deterministic), `timing.json` (wall clock),
/// `config.toml` (resolved echo), and the checkpoint.
pub fn write_run_outputs(
    dir: &Path,
    cfg: &ExperimentConfig,
    mode_name: &str,
    outcome: &RunOutcome,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let report = RunReport {
        build: build_stamp(),
        config_hash: config_hash(cfg),
        seed: cfg.seed,
        refractory_mode: mode_name.to_string(),
        epochs: &outcome.log.records,
        final_train_acc: outcome.final_train_acc,
        final_test_acc: outcome.final_test_acc,
        ops: &outcome.ops,
        config: cfg,
    };
    write_json(&dir.join("report.json"), &report)?;
    let timing = TimingInfo {
        wall_ms_per_epoch: &outcome.log.wall_ms,
        total_wall_ms: outcome.log.wall_ms.iter().sum(),
        written_unix_ms: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0),
    };
    write_json(&dir.join("timing.json"), &timing)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    save_checkpoint(&dir.join("checkpoint.ckpt"), &outcome.net, &outcome.store)?;
    Ok(())
}

#[derive(Serialize)]
struct TimingInfo<'a> {
    wall_ms_per_epoch: &'a [f64],
    total_wall_ms: f64,
    written_unix_ms: u64,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Data(format!("serialization failed: {e}")))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
