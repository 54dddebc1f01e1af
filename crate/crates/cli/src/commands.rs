//! Subcommand implementations. Every command is deterministic under a fixed
//! config and seed; wall-clock data is segregated into `timing.json`.

use crate::config::ExperimentConfig;
use crate::runner::{
    build_network, build_stamp, config_hash, load_datasets, run_training, write_json,
    write_run_outputs,
};
use hdrp_core::data::{apply_noise, NoiseSpec};
use hdrp_core::energy::{count_ops, energy_uj, format_ops_table};
use hdrp_core::network::{load_checkpoint, ForwardMode};
use hdrp_core::neuron::{RefractoryMode, SpikeActivation};
use hdrp_core::train::{evaluate, finite_diff_oracle, GradReport};
use hdrp_core::{Error, Result, Rng, Tensor};
use serde::Serialize;
use std::path::Path;

pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let mode = cfg.refractory.to_mode()?;
    let outcome = run_training(cfg, mode)?;
    write_run_outputs(out, cfg, &cfg.refractory.mode, &outcome)?;
    let last = outcome.log.records.last();
    println!(
        "trained {} epochs: train acc {:.4}, test acc {:.4} (eval sigma {}), loss {:.6}",
        outcome.log.records.len(),
        outcome.final_train_acc,
        outcome.final_test_acc,
        cfg.noise.eval_sigma,
        last.map(|r| r.loss).unwrap_or(f64::NAN),
    );
    println!("outputs written to {}", out.display());
    Ok(())
}

pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path) -> Result<()> {
    let mode = cfg.refractory.to_mode()?;
    let (_, test_set) = load_datasets(cfg)?;
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
        test_set
    };
    let (mut net, mut store) = build_network(cfg, &eval_set.input_shape, mode)?;
    load_checkpoint(checkpoint, &net, &mut store)?;
    net.refresh_bounds(&store)?;
    let accuracy = evaluate(&net, &store, &eval_set.inputs, &eval_set.labels)?;
    let (_, _, stats) = net.forward_batch(
        &store,
        &eval_set.inputs,
        ForwardMode::Inference,
        SpikeActivation::Hard,
    )?;
    let ops = count_ops(&net, &store, &stats, &cfg.energy.policy())?;
    #[derive(Serialize)]
    struct EvalReport<'a> {
        build: crate::runner::BuildStamp,
        config_hash: String,
        seed: u64,
        accuracy: f64,
        eval_sigma: f64,
        firing_rates: Vec<f64>,
        ops: &'a hdrp_core::energy::OpsReport,
        config: &'a ExperimentConfig,
    }
    std::fs::create_dir_all(out)?;
    write_json(
        &out.join("eval.json"),
        &EvalReport {
            build: build_stamp(),
            config_hash: config_hash(cfg),
            seed: cfg.seed,
            accuracy,
            eval_sigma: cfg.noise.eval_sigma,
            firing_rates: stats.firing_rates(),
            ops: &ops,
            config: cfg,
        },
    )?;
    std::fs::write(out.join("config.toml"), cfg.to_toml())?;
    println!("accuracy {accuracy:.4} at eval sigma {}", cfg.noise.eval_sigma);
    Ok(())
}

/// The eight ablation cells: model name, refractory mode, and the
/// descriptive columns of the printed table.
pub fn ablation_cells(cfg: &ExperimentConfig) -> Vec<(String, RefractoryMode, [String; 4])> {
    let cap = cfg.neuron.tau_ref_max;
    let adaptive = format!("adaptive, <= {cap}");
    vec![
        (
            "lif".into(),
            RefractoryMode::None,
            ["-".into(), "-".into(), "-".into(), "-".into()],
        ),
        (
            "absolute-1".into(),
            RefractoryMode::Absolute { len: 1 },
            ["absolute".into(), "1".into(), "linear".into(), "1".into()],
        ),
        (
            "absolute-2".into(),
            RefractoryMode::Absolute { len: 2 },
            ["absolute".into(), "2".into(), "linear".into(), "1".into()],
        ),
        (
            "relative-no-history".into(),
            RefractoryMode::RelativeNoHistory,
            [
                "relative".into(),
                adaptive.clone(),
                "exponential".into(),
                "adaptive (no history)".into(),
            ],
        ),
        (
            "fixed-decay-0.1".into(),
            RefractoryMode::RelativeFixedDecay { decay: 0.1 },
            ["relative".into(), adaptive.clone(), "exponential".into(), "0.1".into()],
        ),
        (
            "fixed-decay-0.5".into(),
            RefractoryMode::RelativeFixedDecay { decay: 0.5 },
            ["relative".into(), adaptive.clone(), "exponential".into(), "0.5".into()],
        ),
        (
            "fixed-decay-0.9".into(),
            RefractoryMode::RelativeFixedDecay { decay: 0.9 },
            ["relative".into(), adaptive.clone(), "exponential".into(), "0.9".into()],
        ),
        (
            "hdrp".into(),
            RefractoryMode::Hdrp,
            ["relative".into(), adaptive, "exponential".into(), "adaptive".into()],
        ),
    ]
}

#[derive(Serialize)]
pub struct AblationRow {
    pub model: String,
    pub refractory_type: String,
    pub refractory_length: String,
    pub decay_type: String,
    pub decay_factor: String,
    pub accuracy: f64,
    pub train_accuracy: f64,
    pub mean_firing_rate: f64,
    pub total_acs: u64,
}

pub fn cmd_ablate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let cells = ablation_cells(cfg);
    let mut rows: Vec<AblationRow> = Vec::new();
    for (name, mode, desc) in &cells {
        // identical seed and data per cell: only the mode differs
        let outcome = run_training(cfg, *mode)?;
        let cell_dir = out.join("cells").join(name);
        write_run_outputs(&cell_dir, cfg, name, &outcome)?;
        let rates = outcome
            .log
            .records
            .last()
            .map(|r| r.firing_rates.clone())
            .unwrap_or_default();
        let mean_rate = if rates.is_empty() {
            0.0
        } else {
            rates.iter().sum::<f64>() / rates.len() as f64
        };
        rows.push(AblationRow {
            model: name.clone(),
            refractory_type: desc[0].clone(),
            refractory_length: desc[1].clone(),
            decay_type: desc[2].clone(),
            decay_factor: desc[3].clone(),
            accuracy: outcome.final_test_acc,
            train_accuracy: outcome.final_train_acc,
            mean_firing_rate: mean_rate,
            total_acs: outcome.ops.total_acs,
        });
        println!("cell {name}: accuracy {:.4}", outcome.final_test_acc);
    }
    #[derive(Serialize)]
    struct AblateReport<'a> {
        build: crate::runner::BuildStamp,
        config_hash: String,
        seed: u64,
        eval_sigma: f64,
        rows: &'a [AblationRow],
        config: &'a ExperimentConfig,
    }
    write_json(
        &out.join("ablate.json"),
        &AblateReport {
            build: build_stamp(),
            config_hash: config_hash(cfg),
            seed: cfg.seed,
            eval_sigma: cfg.noise.eval_sigma,
            rows: &rows,
            config: cfg,
        },
    )?;
    let mut csv = String::from("model,refractory_type,refractory_length,decay_type,decay_factor,accuracy\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.model, r.refractory_type, r.refractory_length, r.decay_type, r.decay_factor, r.accuracy
        ));
    }
    std::fs::write(out.join("ablate.csv"), csv)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml())?;

    println!(
        "\n{:<20} {:>10} {:>18} {:>12} {:>22} {:>10}",
        "model", "type", "length", "decay", "factor", "acc(%)"
    );
    for r in &rows {
        println!(
            "{:<20} {:>10} {:>18} {:>12} {:>22} {:>10.2}",
            r.model,
            r.refractory_type,
            r.refractory_length,
            r.decay_type,
            r.decay_factor,
            r.accuracy * 100.0
        );
    }
    Ok(())
}

#[derive(Serialize)]
pub struct SweepPoint {
    pub variant: String,
    pub sigma: f64,
    pub accuracy: f64,
}

pub fn cmd_noise_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let mut points: Vec<SweepPoint> = Vec::new();
    for (variant, mode) in [
        ("lif".to_string(), RefractoryMode::None),
        ("hdrp".to_string(), RefractoryMode::Hdrp),
    ] {
        // train clean, then evaluate the same model under each sigma
        let mut clean_cfg = cfg.clone();
        clean_cfg.noise.eval_sigma = 0.0;
        let outcome = run_training(&clean_cfg, mode)?;
        write_run_outputs(&out.join("models").join(&variant), cfg, &variant, &outcome)?;
        for &sigma in &cfg.noise.sigmas {
            let noisy = apply_noise(
                &outcome.test_set,
                &NoiseSpec {
                    sigma,
                    seed: cfg.noise.seed,
                    clip: cfg.noise.clip,
                },
            )?;
            let accuracy = evaluate(&outcome.net, &outcome.store, &noisy.inputs, &noisy.labels)?;
            println!("{variant} sigma {sigma}: accuracy {accuracy:.4}");
            points.push(SweepPoint {
                variant: variant.clone(),
                sigma,
                accuracy,
            });
        }
    }
    #[derive(Serialize)]
    struct SweepReport<'a> {
        build: crate::runner::BuildStamp,
        config_hash: String,
        seed: u64,
        points: &'a [SweepPoint],
        config: &'a ExperimentConfig,
    }
    write_json(
        &out.join("noise_sweep.json"),
        &SweepReport {
            build: build_stamp(),
            config_hash: config_hash(cfg),
            seed: cfg.seed,
            points: &points,
            config: cfg,
        },
    )?;
    let mut csv = String::from("variant,sigma,accuracy\n");
    for p in &points {
        csv.push_str(&format!("{},{},{}\n", p.variant, p.sigma, p.accuracy));
    }
    std::fs::write(out.join("noise_sweep.csv"), csv)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml())?;
    Ok(())
}

pub fn cmd_energy_report(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path) -> Result<()> {
    let mode = cfg.refractory.to_mode()?;
    let (_, test_set) = load_datasets(cfg)?;
    let (mut net, mut store) = build_network(cfg, &test_set.input_shape, mode)?;
    load_checkpoint(checkpoint, &net, &mut store)?;
    net.refresh_bounds(&store)?;
    let (_, _, stats) = net.forward_batch(
        &store,
        &test_set.inputs,
        ForwardMode::Inference,
        SpikeActivation::Hard,
    )?;
    let mut ops = count_ops(&net, &store, &stats, &cfg.energy.policy())?;
    // re-price with the configured constants
    ops.energy_uj_per_inference = energy_uj(
        ops.acs_per_inference,
        ops.total_macs_per_inference as f64,
        &cfg.energy.constants(),
    );
    std::fs::create_dir_all(out)?;
    #[derive(Serialize)]
    struct EnergyReport<'a> {
        build: crate::runner::BuildStamp,
        config_hash: String,
        seed: u64,
        ops: &'a hdrp_core::energy::OpsReport,
        config: &'a ExperimentConfig,
    }
    write_json(
        &out.join("energy_report.json"),
        &EnergyReport {
            build: build_stamp(),
            config_hash: config_hash(cfg),
            seed: cfg.seed,
            ops: &ops,
            config: cfg,
        },
    )?;
    std::fs::write(out.join("config.toml"), cfg.to_toml())?;
    print!("{}", format_ops_table(&ops));
    Ok(())
}

/// Exit status carrier for grad-check: `Ok(false)` means the oracle tripped.
pub fn cmd_grad_check(cfg: &ExperimentConfig, out: &Path) -> Result<bool> {
    let g = &cfg.gradcheck;
    let neuron = cfg.neuron.to_params();
    let spec = hdrp_core::network::NetworkSpec {
        layers: vec![
            hdrp_core::network::LayerSpec::Encoder {
                shape: vec![g.input_dim],
            },
            hdrp_core::network::LayerSpec::Dense {
                out: g.hidden,
                neuron,
                mode: cfg.refractory.to_mode()?,
            },
            hdrp_core::network::LayerSpec::Readout { classes: g.classes },
        ],
        timesteps: g.timesteps,
        seed: cfg.seed,
    };
    let (net, store) = hdrp_core::network::Network::build(&spec, &mut Rng::substream(cfg.seed, 3))?;
    let mut rng = Rng::substream(cfg.seed, 5);
    let inputs: Vec<Tensor> = (0..g.batch)
        .map(|_| Tensor::uniform(&mut rng, &[g.input_dim], 0.0, 1.0))
        .collect();
    let labels: Vec<usize> = (0..g.batch).map(|i| i % g.classes).collect();
    let loss_cfg = cfg.loss_config();

    let mut full = finite_diff_oracle(&net, &store, &inputs, &labels, g.h, &loss_cfg, false)?;
    let detached = finite_diff_oracle(&net, &store, &inputs, &labels, g.h, &loss_cfg, true)?;
    if g.corrupt {
        // test hook: break one analytic gradient and re-score
        full.analytic[0] += 1.0;
        recompute_errors(&mut full);
    }
    let pass = full.max_rel_err < g.threshold;

    #[derive(Serialize)]
    struct GradCheckReport<'a> {
        build: crate::runner::BuildStamp,
        config_hash: String,
        seed: u64,
        threshold: f64,
        pass: bool,
        full: &'a GradReport,
        detached_normalization: &'a GradReport,
        config: &'a ExperimentConfig,
    }
    std::fs::create_dir_all(out)?;
    write_json(
        &out.join("grad_check.json"),
        &GradCheckReport {
            build: build_stamp(),
            config_hash: config_hash(cfg),
            seed: cfg.seed,
            threshold: g.threshold,
            pass,
            full: &full,
            detached_normalization: &detached,
            config: cfg,
        },
    )?;
    std::fs::write(out.join("config.toml"), cfg.to_toml())?;
    println!(
        "full reverse-mode: max rel err {:.3e} over {} params ({} excluded)",
        full.max_rel_err, full.included, full.excluded_count
    );
    println!(
        "detached normalization: max rel err {:.3e} over {} params ({} excluded)",
        detached.max_rel_err, detached.included, detached.excluded_count
    );
    if !pass {
        eprintln!(
            "gradient check FAILED: max rel err {:.3e} >= threshold {:.1e}",
            full.max_rel_err, g.threshold
        );
    }
    Ok(pass)
}

fn recompute_errors(report: &mut GradReport) {
    let mut max_rel = 0.0f64;
    let mut max_abs = 0.0f64;
    for j in 0..report.analytic.len() {
        if report.excluded[j] {
            continue;
        }
        let (a, n) = (report.analytic[j], report.numeric[j]);
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(hdrp_core::train::REL_ERR_FLOOR);
        max_rel = max_rel.max(rel);
        max_abs = max_abs.max((a - n).abs());
    }
    report.max_rel_err = max_rel;
    report.max_abs_err = max_abs;
}

pub fn map_exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Parameter(_) | Error::Shape { .. } => 2,
        Error::Io(_) | Error::Format { .. } | Error::Data(_) => 4,
        Error::Contract(_) | Error::NonFinite(_) => 1,
    }
}
