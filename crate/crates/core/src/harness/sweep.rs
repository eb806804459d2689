use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, PlanEntry};
use super::HarnessError;
use crate::data::Dataset;
use crate::mis::{
    classwise_accuracy, evaluate_units, mean_scores, BackendKind, EmbeddingBank, MisConfig, MisResult, SimilarityBackend,
};
use crate::model::{save_checkpoint, ModelGraph, UnitKind};
use crate::pruning::{sparsity_report, MaskSet};
use crate::train::{evaluate, fine_tune, iterative, one_shot, RunRecord, ScheduleKind};

pub const SWEEP_HEADER: [&str; 14] = [
    "method",
    "criterion",
    "scope",
    "schedule",
    "target_rate",
    "achieved_rate",
    "seed",
    "retrain_epochs",
    "top1_before_ft",
    "top1_after_ft",
    "mean_mis",
    "mean_confidence",
    "status",
    "wall_time_s",
];

pub const MIS_HEADER: [&str; 11] =
    ["model_id", "layer", "unit", "granularity", "mis", "confidence", "flags", "classwise_acc", "backend", "k", "tasks"];

/// One (plan, rate, seed) result. Metric fields are empty when the row
/// failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub criterion: String,
    pub scope: String,
    pub schedule: String,
    pub target_rate: f64,
    pub achieved_rate: Option<f64>,
    pub seed: u64,
    pub retrain_epochs: u32,
    pub top1_before_ft: Option<f64>,
    pub top1_after_ft: Option<f64>,
    pub mean_mis: Option<f64>,
    pub mean_confidence: Option<f64>,
    pub status: String,
    pub wall_time_s: f64,
}

impl SweepRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    fn group_key(&self) -> (String, String, String, String, u64, u32) {
        (
            self.method.clone(),
            self.criterion.clone(),
            self.scope.clone(),
            self.schedule.clone(),
            self.target_rate.to_bits(),
            self.retrain_epochs,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MisRow {
    pub model_id: String,
    pub layer: String,
    pub unit: usize,
    pub granularity: String,
    pub mis: f64,
    pub confidence: f64,
    pub flags: String,
    pub classwise_acc: Option<f64>,
    pub backend: String,
    pub k: usize,
    pub tasks: usize,
}

/// Per-epoch fine-tuning curve of one row; `step` counts pruning rounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub model_id: String,
    pub step: usize,
    pub epoch: u32,
    pub train_loss: f64,
    pub val_top1: f64,
    pub lr: f32,
    pub optimizer: String,
    pub momentum: f32,
    pub achieved_sparsity: f64,
}

/// Mean and range over seeds of one sweep line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub criterion: String,
    pub scope: String,
    pub schedule: String,
    pub target_rate: f64,
    pub retrain_epochs: u32,
    pub n: usize,
    pub achieved_rate_mean: f64,
    pub top1_before_ft_mean: f64,
    pub top1_before_ft_min: f64,
    pub top1_before_ft_max: f64,
    pub top1_after_ft_mean: f64,
    pub top1_after_ft_min: f64,
    pub top1_after_ft_max: f64,
    pub mean_mis_mean: Option<f64>,
    pub mean_mis_min: Option<f64>,
    pub mean_mis_max: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub mis_rows: Vec<MisRow>,
    pub output_dir: PathBuf,
}

impl SweepReport {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.is_ok()).count()
    }
}

#[derive(Serialize, Deserialize)]
struct RowOutput {
    row: SweepRow,
    mis: Vec<MisRow>,
    training: Vec<TrainingRow>,
}

struct Job<'a> {
    index: usize,
    entry: &'a PlanEntry,
    rate: f64,
    seed: u64,
}

struct Context<'a> {
    config: &'a ExperimentConfig,
    train: &'a Dataset,
    val: &'a Dataset,
    probe: Option<(Dataset, EmbeddingBank)>,
    rows_dir: PathBuf,
    ckpt_dir: PathBuf,
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

fn write_csv_auto<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

/// Builds and trains the base network for one seed.
pub fn train_base(
    config: &ExperimentConfig,
    train: &Dataset,
    val: &Dataset,
    seed: u64,
) -> Result<(ModelGraph, RunRecord), HarnessError> {
    let mut model = config.model.build(train.channels(), train.num_classes(), seed)?;
    let record = fine_tune(&mut model, &MaskSet::new(), train, val, &config.train.with_seed(seed))?;
    Ok((model, record))
}

fn model_id(job: &Job) -> String {
    let e = job.entry;
    format!(
        "{}-{}-{}-{}-r{}-s{}",
        e.method,
        e.criterion,
        e.scope,
        e.schedule.label(),
        job.rate,
        job.seed
    )
}

fn run_row(ctx: &Context, base: &ModelGraph, job: &Job) -> Result<RowOutput, HarnessError> {
    let start = Instant::now();
    let config = ctx.config;
    let entry = job.entry;
    let plan = entry.plan(job.rate, job.seed);
    let ft = config.finetune.with_seed(job.seed);
    let epochs = entry.schedule.epochs(&ft);
    let outcome = match entry.schedule.kind {
        ScheduleKind::OneShot => one_shot(base, &plan, &ft, Some(epochs), ctx.train, ctx.val)?,
        ScheduleKind::Iterative => iterative(base, &plan, &entry.schedule, &ft, ctx.train, ctx.val)?,
    };
    let id = model_id(job);
    let achieved = sparsity_report(&outcome.model, &outcome.masks).achieved_rate();
    let before = outcome.top1_before_ft;
    let after = outcome.final_accuracy(before);

    let mut mis_rows = Vec::new();
    let mut means = None;
    if let Some((probe, bank)) = &ctx.probe {
        let mis_cfg = config.mis.mis_config();
        let results = evaluate_units(&outcome.model, probe, bank, &mis_cfg)?;
        let classwise = classwise_accuracy(&outcome.model, ctx.val)?;
        means = mean_scores(&results);
        mis_rows = mis_rows_for(&id, &results, &classwise, bank.backend(), &mis_cfg);
    }
    if config.save_checkpoints {
        save_checkpoint(&outcome.model, &outcome.masks, ctx.ckpt_dir.join(format!("{id}.prnk")))?;
    }
    let training = outcome
        .records
        .iter()
        .enumerate()
        .flat_map(|(step, rec)| {
            let id = id.clone();
            rec.csv_rows().into_iter().map(move |r| TrainingRow {
                model_id: id.clone(),
                step: step + 1,
                epoch: r.epoch,
                train_loss: r.train_loss,
                val_top1: r.val_top1,
                lr: r.lr,
                optimizer: r.optimizer,
                momentum: r.momentum,
                achieved_sparsity: r.achieved_sparsity,
            })
        })
        .collect();
    let row = SweepRow {
        achieved_rate: Some(achieved),
        top1_before_ft: Some(before),
        top1_after_ft: Some(after),
        mean_mis: means.map(|m| m.0),
        mean_confidence: means.map(|m| m.1),
        status: "ok".into(),
        wall_time_s: start.elapsed().as_secs_f64(),
        ..failed_row(job, epochs, String::new())
    };
    Ok(RowOutput { row, mis: mis_rows, training })
}

/// mis.csv rows for one model; `classwise` supplies the accuracy column
/// of logit units.
pub fn mis_rows_for(
    model_id: &str,
    results: &[MisResult],
    classwise: &[f64],
    backend: &str,
    config: &MisConfig,
) -> Vec<MisRow> {
    results
        .iter()
        .map(|r| MisRow {
            model_id: model_id.to_string(),
            layer: r.unit.layer.clone(),
            unit: r.unit.index,
            granularity: r.unit.kind.to_string(),
            mis: r.mis,
            confidence: r.confidence,
            flags: r.flags.to_string(),
            classwise_acc: if r.unit.kind == UnitKind::Logit { classwise.get(r.unit.index).copied() } else { None },
            backend: backend.to_string(),
            k: config.k,
            tasks: config.tasks,
        })
        .collect()
}

pub fn write_mis_csv(path: &Path, rows: &[MisRow]) -> Result<(), HarnessError> {
    write_csv(path, rows, &MIS_HEADER)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<(), HarnessError> {
    write_csv(path, rows, &SWEEP_HEADER)
}

fn failed_row(job: &Job, retrain_epochs: u32, status: String) -> SweepRow {
    let e = job.entry;
    SweepRow {
        method: e.method.to_string(),
        criterion: e.criterion.to_string(),
        scope: e.scope.to_string(),
        schedule: e.schedule.label(),
        target_rate: job.rate,
        achieved_rate: None,
        seed: job.seed,
        retrain_epochs,
        top1_before_ft: None,
        top1_after_ft: None,
        mean_mis: None,
        mean_confidence: None,
        status,
        wall_time_s: 0.0,
    }
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".into())
}

/// Runs every (plan, rate, seed) row of `config`.
///
/// The base network is trained once per seed. Rows run in parallel, each
/// writing its own file under `rows/`; the merged `sweep.csv`, `mis.csv`,
/// `training.csv` and `sweep_summary.csv` are then written in row order by
/// this thread alone. A failing row is recorded in its `status` column and
/// does not stop the others.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepReport, HarnessError> {
    config.validate()?;
    if config.plans.is_empty() {
        return Err(HarnessError::Config("no plans given".into()));
    }
    let out = &config.output_dir;
    let rows_dir = out.join("rows");
    let ckpt_dir = out.join("checkpoints");
    for d in [out, &rows_dir, &ckpt_dir] {
        fs::create_dir_all(d).map_err(|e| HarnessError::io(d, e))?;
    }
    write(&out.join("config.resolved.json"), serde_json::to_string_pretty(&config.resolved())?)?;

    let (train, val) = config.dataset.load(Path::new("."))?;
    info!("dataset: {} train, {} val, {} classes", train.len(), val.len(), train.num_classes());

    let seeds = config.run_seeds();
    let bases: Vec<Result<ModelGraph, String>> = seeds
        .iter()
        .map(|&seed| {
            let t = Instant::now();
            let result = catch_unwind(AssertUnwindSafe(|| train_base(config, &train, &val, seed)))
                .map_err(panic_message)
                .and_then(|r| r.map_err(|e| e.to_string()))
                .and_then(|(model, _)| {
                    let acc = evaluate(&model, &val).map_err(|e| e.to_string())?;
                    info!("base seed {seed}: top1 {acc:.4} in {:.1}s", t.elapsed().as_secs_f64());
                    if config.save_checkpoints {
                        save_checkpoint(&model, &MaskSet::new(), ckpt_dir.join(format!("base-s{seed}.prnk")))
                            .map_err(|e| e.to_string())?;
                    }
                    Ok(model)
                });
            if let Err(e) = &result {
                warn!("base training failed for seed {seed}: {e}");
            }
            result
        })
        .collect();

    let probe = if config.mis.enabled {
        let n = config.mis.probe_samples.unwrap_or(val.len()).min(val.len());
        let probe = val.subset(&(0..n).collect::<Vec<_>>());
        let backend = match config.mis.backend {
            BackendKind::PixelCosine => SimilarityBackend::PixelCosine,
            BackendKind::EmbedCosine => {
                let mut ref_cfg = config.clone();
                if let Some(e) = config.mis.reference_epochs {
                    ref_cfg.train.epochs = e;
                }
                let (reference, _) = train_base(&ref_cfg, &train, &val, config.seed ^ 0x5eed_5eed)?;
                SimilarityBackend::EmbedCosine(Arc::new(reference))
            }
        };
        let bank = backend.bank(&probe)?;
        Some((probe, bank))
    } else {
        None
    };

    let mut jobs = Vec::new();
    for entry in &config.plans {
        for &rate in &entry.rates {
            for (s, &seed) in seeds.iter().enumerate() {
                jobs.push((s, Job { index: jobs.len(), entry, rate, seed }));
            }
        }
    }
    let ctx = Context { config, train: &train, val: &val, probe, rows_dir, ckpt_dir };
    let outputs: Vec<RowOutput> = jobs
        .par_iter()
        .map(|(s, job)| {
            let epochs = job.entry.schedule.epochs(&config.finetune);
            let output = match &bases[*s] {
                Err(e) => Err(format!("base training failed: {e}")),
                Ok(base) => catch_unwind(AssertUnwindSafe(|| run_row(&ctx, base, job)))
                    .map_err(panic_message)
                    .and_then(|r| r.map_err(|e| e.to_string())),
            };
            let output = output.unwrap_or_else(|e| {
                warn!("row {} ({}) failed: {e}", job.index, model_id(job));
                RowOutput { row: failed_row(job, epochs, format!("error: {e}")), mis: Vec::new(), training: Vec::new() }
            });
            let path = ctx.rows_dir.join(format!("{:05}.json", job.index));
            if let Err(e) = serde_json::to_vec(&output).map_err(HarnessError::from).and_then(|b| write(&path, b)) {
                warn!("could not write {}: {e}", path.display());
            }
            info!(
                "row {} {}: before {:?} after {:?} mis {:?}",
                job.index,
                model_id(job),
                output.row.top1_before_ft,
                output.row.top1_after_ft,
                output.row.mean_mis
            );
            output
        })
        .collect();

    let rows: Vec<SweepRow> = outputs.iter().map(|o| o.row.clone()).collect();
    let mis_rows: Vec<MisRow> = outputs.iter().flat_map(|o| o.mis.iter().cloned()).collect();
    let training: Vec<TrainingRow> = outputs.iter().flat_map(|o| o.training.iter().cloned()).collect();
    write_sweep_csv(&out.join("sweep.csv"), &rows)?;
    write_mis_csv(&out.join("mis.csv"), &mis_rows)?;
    write_csv_auto(&out.join("training.csv"), &training)?;
    write_csv_auto(&out.join("sweep_summary.csv"), &summarize(&rows))?;
    Ok(SweepReport { rows, mis_rows, output_dir: out.clone() })
}

/// Mean, min and max over seeds for every sweep line with at least one
/// successful row.
pub fn summarize(rows: &[SweepRow]) -> Vec<SummaryRow> {
    let mut groups: Vec<(_, Vec<&SweepRow>)> = Vec::new();
    for r in rows.iter().filter(|r| r.is_ok()) {
        let key = r.group_key();
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|(_, members)| {
            let stats = |f: &dyn Fn(&SweepRow) -> Option<f64>| -> Option<(f64, f64, f64)> {
                let v: Vec<f64> = members.iter().filter_map(|r| f(r)).collect();
                if v.is_empty() {
                    return None;
                }
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                Some((mean, v.iter().copied().fold(f64::INFINITY, f64::min), v.iter().copied().fold(f64::NEG_INFINITY, f64::max)))
            };
            let first = members[0];
            let nan3 = (f64::NAN, f64::NAN, f64::NAN);
            let before = stats(&|r| r.top1_before_ft).unwrap_or(nan3);
            let after = stats(&|r| r.top1_after_ft).unwrap_or(nan3);
            let achieved = stats(&|r| r.achieved_rate).unwrap_or(nan3);
            let mis = stats(&|r| r.mean_mis);
            SummaryRow {
                method: first.method.clone(),
                criterion: first.criterion.clone(),
                scope: first.scope.clone(),
                schedule: first.schedule.clone(),
                target_rate: first.target_rate,
                retrain_epochs: first.retrain_epochs,
                n: members.len(),
                achieved_rate_mean: achieved.0,
                top1_before_ft_mean: before.0,
                top1_before_ft_min: before.1,
                top1_before_ft_max: before.2,
                top1_after_ft_mean: after.0,
                top1_after_ft_min: after.1,
                top1_after_ft_max: after.2,
                mean_mis_mean: mis.map(|m| m.0),
                mean_mis_min: mis.map(|m| m.1),
                mean_mis_max: mis.map(|m| m.2),
            }
        })
        .collect()
}
