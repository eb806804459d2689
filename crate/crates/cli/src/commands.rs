use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use log::info;
use prunelab::data::Dataset;
use prunelab::harness::{
    correlate, emit_plot, mis_rows_for, run_sweep, write_mis_csv, DatasetSpec, ExperimentConfig, HarnessError, RowFilter,
};
use prunelab::mis::{classwise_accuracy, evaluate_units, SimilarityBackend};
use prunelab::model::{load_checkpoint, save_checkpoint, LoadedCheckpoint};
use prunelab::pruning::{prune_step, sparsity_report, MaskSet, PruningPlan};
use prunelab::train::{evaluate, fine_tune, TrainConfig};

use super::{Command, CommonArgs, Failure, TrainArgs};

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn runtime_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn harness_err(e: HarnessError) -> Failure {
    if e.is_config() {
        Failure::Config(e.into())
    } else {
        Failure::Runtime(e.into())
    }
}

fn parse_name<T: serde::de::DeserializeOwned>(what: &str, value: &str) -> Result<T, Failure> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| config_err(anyhow!("unknown {what} {value:?}")))
}

/// Config file (or defaults) with the dataset and model flags applied.
fn load_config(common: &CommonArgs) -> Result<ExperimentConfig, Failure> {
    let mut config = match &common.config {
        Some(p) => ExperimentConfig::from_file(p).map_err(config_err)?,
        None => ExperimentConfig::default(),
    };
    if let (Some(images), Some(labels)) = (&common.idx_images, &common.idx_labels) {
        config.dataset = DatasetSpec::IdxFiles {
            train_images: images.clone(),
            train_labels: labels.clone(),
            val_images: None,
            val_labels: None,
            val_fraction: common.val_fraction.unwrap_or(0.25),
            num_classes: common.classes,
        };
    } else {
        let synthetic_flags = common.classes.is_some() || common.samples.is_some() || common.data_seed.is_some();
        match &mut config.dataset {
            DatasetSpec::IdxFiles { val_fraction, .. } if !synthetic_flags => {
                if let Some(f) = common.val_fraction {
                    *val_fraction = f;
                }
            }
            dataset if synthetic_flags || common.val_fraction.is_some() => {
                let (c, n, s, f) = match dataset {
                    DatasetSpec::Synthetic { classes, samples, seed, val_fraction } => (*classes, *samples, *seed, *val_fraction),
                    DatasetSpec::IdxFiles { .. } => (10, 2000, 0, 0.25),
                };
                *dataset = DatasetSpec::Synthetic {
                    classes: common.classes.unwrap_or(c),
                    samples: common.samples.unwrap_or(n),
                    seed: common.data_seed.unwrap_or(s),
                    val_fraction: common.val_fraction.unwrap_or(f),
                };
            }
            _ => {}
        }
    }
    if let Some(arch) = &common.arch {
        config.model.arch = parse_name("architecture", arch)?;
    }
    config.validate().map_err(config_err)?;
    Ok(config)
}

fn apply_train(cfg: &mut TrainConfig, args: &TrainArgs) -> Result<(), Failure> {
    if let Some(o) = &args.optimizer {
        cfg.optimizer = parse_name("optimizer", o)?;
    }
    if args.lr.is_some() {
        cfg.lr = args.lr;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.momentum {
        cfg.momentum = v;
    }
    if let Some(v) = args.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    cfg.early_stop |= args.early_stop;
    cfg.validate().map_err(config_err)
}

fn load_data(config: &ExperimentConfig) -> Result<(Dataset, Dataset), Failure> {
    config.dataset.load(Path::new(".")).map_err(runtime_err)
}

fn load_model(path: &Path) -> Result<LoadedCheckpoint, Failure> {
    let loaded = load_checkpoint(path).with_context(|| format!("loading {}", path.display())).map_err(runtime_err)?;
    for w in &loaded.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(loaded)
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    out.with_file_name(name)
}

/// Writes the effective config next to `out`.
fn write_resolved(out: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    let path = sidecar(out, ".config.json");
    let text = serde_json::to_string_pretty(value).map_err(runtime_err)?;
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display())).map_err(runtime_err)
}

fn print_json(value: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&value).unwrap_or_default());
}

pub(crate) fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Train { common, train, out } => {
            let mut config = load_config(&common)?;
            apply_train(&mut config.train, &train)?;
            let (train_set, val) = load_data(&config)?;
            let mut model = config
                .model
                .build(train_set.channels(), train_set.num_classes(), config.train.seed)
                .map_err(harness_err)?;
            let record = fine_tune(&mut model, &MaskSet::new(), &train_set, &val, &config.train).map_err(runtime_err)?;
            save_checkpoint(&model, &MaskSet::new(), &out).map_err(runtime_err)?;
            write_resolved(&out, &config.resolved())?;
            print_json(serde_json::json!({
                "checkpoint": out.display().to_string(),
                "epochs": record.epochs.len(),
                "val_top1": record.final_accuracy(),
                "wall_time_s": record.wall_time_s,
            }));
            Ok(())
        }
        Command::Prune { common, checkpoint, method, criterion, scope, rate, prune_seed, out } => {
            let config = load_config(&common)?;
            let mut plan = PruningPlan::new(
                parse_name("method", &method)?,
                parse_name("criterion", &criterion)?,
                parse_name("scope", &scope)?,
                rate,
            );
            plan.seed = prune_seed;
            plan.validate().map_err(config_err)?;
            let LoadedCheckpoint { mut model, masks, .. } = load_model(&checkpoint)?;
            let (masks, pruned) = prune_step(&mut model, &masks, &plan).map_err(runtime_err)?;
            save_checkpoint(&model, &masks, &out).map_err(runtime_err)?;
            write_resolved(&out, &serde_json::json!({ "plan": plan, "source": checkpoint }))?;
            let report = sparsity_report(&model, &masks);
            let (_, val) = load_data(&config)?;
            print_json(serde_json::json!({
                "checkpoint": out.display().to_string(),
                "target_rate": rate,
                "achieved_rate": report.achieved_rate(),
                "units_pruned": pruned.len(),
                "val_top1": evaluate(&model, &val).map_err(runtime_err)?,
            }));
            Ok(())
        }
        Command::Finetune { common, train, checkpoint, out } => {
            let mut config = load_config(&common)?;
            apply_train(&mut config.finetune, &train)?;
            let (train_set, val) = load_data(&config)?;
            let LoadedCheckpoint { mut model, masks, .. } = load_model(&checkpoint)?;
            let record = fine_tune(&mut model, &masks, &train_set, &val, &config.finetune).map_err(runtime_err)?;
            save_checkpoint(&model, &masks, &out).map_err(runtime_err)?;
            write_resolved(&out, &config.resolved())?;
            print_json(serde_json::json!({
                "checkpoint": out.display().to_string(),
                "epochs": record.epochs.len(),
                "val_top1": record.final_accuracy(),
                "achieved_sparsity": record.achieved_sparsity,
            }));
            Ok(())
        }
        Command::Eval { common, checkpoint, classwise } => {
            let config = load_config(&common)?;
            let (_, val) = load_data(&config)?;
            let LoadedCheckpoint { model, masks, .. } = load_model(&checkpoint)?;
            let mut out = serde_json::json!({
                "checkpoint": checkpoint.display().to_string(),
                "val_top1": evaluate(&model, &val).map_err(runtime_err)?,
                "achieved_rate": sparsity_report(&model, &masks).achieved_rate(),
                "parameters": model.parameter_count(),
            });
            if classwise {
                out["classwise"] = serde_json::json!(classwise_accuracy(&model, &val).map_err(runtime_err)?);
            }
            print_json(out);
            Ok(())
        }
        Command::Mis { common, checkpoint, k, tasks, reference, out } => {
            let mut config = load_config(&common)?;
            if let Some(k) = k {
                config.mis.k = k;
            }
            if let Some(t) = tasks {
                config.mis.tasks = t;
            }
            let mis_cfg = config.mis.mis_config();
            mis_cfg.validate().map_err(config_err)?;
            let (_, val) = load_data(&config)?;
            let n = config.mis.probe_samples.unwrap_or(val.len()).min(val.len());
            let probe = val.subset(&(0..n).collect::<Vec<_>>());
            let model = load_model(&checkpoint)?.model;
            let backend = match &reference {
                Some(r) => SimilarityBackend::EmbedCosine(Arc::new(load_model(r)?.model)),
                None => SimilarityBackend::PixelCosine,
            };
            let bank = backend.bank(&probe).map_err(runtime_err)?;
            let results = evaluate_units(&model, &probe, &bank, &mis_cfg).map_err(runtime_err)?;
            let classwise = classwise_accuracy(&model, &val).map_err(runtime_err)?;
            let id = checkpoint.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let rows = mis_rows_for(&id, &results, &classwise, bank.backend(), &mis_cfg);
            write_mis_csv(&out, &rows).map_err(runtime_err)?;
            write_resolved(&out, &serde_json::json!({ "mis": mis_cfg, "backend": bank.backend(), "checkpoint": checkpoint, "reference": reference }))?;
            let mean = rows.iter().map(|r| r.mis).sum::<f64>() / rows.len().max(1) as f64;
            print_json(serde_json::json!({ "units": rows.len(), "mean_mis": mean, "csv": out.display().to_string() }));
            Ok(())
        }
        Command::Sweep { config, output_dir, seeds } => {
            let mut cfg = ExperimentConfig::from_file(&config).map_err(config_err)?;
            if let Some(d) = output_dir {
                cfg.output_dir = d;
            }
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            let report = run_sweep(&cfg).map_err(harness_err)?;
            let failures = report.failures();
            info!("{} rows written to {}", report.rows.len(), report.output_dir.display());
            if failures > 0 {
                return Err(Failure::Partial(failures));
            }
            Ok(())
        }
        Command::Plot { csv, x, y, group_by, out } => {
            let series = emit_plot(&csv, &x, &y, group_by.as_deref(), &out).map_err(harness_err)?;
            info!("{} series written to {}", series.len(), out.display());
            Ok(())
        }
        Command::Correlate { csv, x, y, filter, analysis } => {
            let filter: Option<RowFilter> = filter.map(|f| f.parse()).transpose().map_err(harness_err)?;
            let c = correlate(&csv, &x, &y, filter.as_ref(), analysis.as_deref()).map_err(harness_err)?;
            println!("r = {:.6} (n = {})", c.r, c.n);
            Ok(())
        }
    }
}
