//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits nonzero if any failed.
//!
//! `cargo test -p prunelab --test acceptance -- 3 7` runs only criteria 3
//! and 7.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::{away_from_zero, check_model, check_op, distinct_values, random_tensor, shapes, tiny_cnn};
use prunelab::data::Dataset;
use prunelab::harness::{emit_plot, run_sweep, ExperimentConfig, SweepReport, SweepRow};
use prunelab::mis::{
    build_tasks, mis_score, pearson_corr, probe_activations, ActivationRecord, MisConfig, MisResult,
    SimilarityBackend,
};
use prunelab::model::{
    build_mini_inception, build_mini_inception_from, build_plain_cnn, list_prunable_tensors, load_checkpoint,
    save_checkpoint, MiniInceptionSpec, ModelGraph, PlainCnnSpec, UnitKind, UnitRef,
};
use prunelab::pruning::{prune_step, Criterion, MaskSet, Method, PruningPlan, Scope};
use prunelab::train::{fine_tune, fine_tune_with_hook, one_shot, TrainConfig};
use prunelab::Rng;

type Check = fn() -> Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn plan(method: Method, criterion: Criterion, scope: Scope, rate: f64, seed: u64) -> PruningPlan {
    let p = PruningPlan::new(method, criterion, scope, rate);
    if criterion == Criterion::Random {
        p.with_seed(seed)
    } else {
        p
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ")
}

/// Smallest `c` with `c / total >= rate`, by linear scan.
fn first_reach(rate: f64, total: usize) -> usize {
    (0..=total).find(|&c| c as f64 / total as f64 >= rate).unwrap_or(total)
}

/// Plain CNN with random depth and widths, every tensor at most 10^4
/// elements.
fn random_plain_cnn(rng: &mut Rng) -> ModelGraph {
    loop {
        let in_channels = 1 + rng.below(3);
        let kernel = [1, 3, 5][rng.below(3)];
        let widths: Vec<usize> = (0..1 + rng.below(3)).map(|_| 1 + rng.below(40)).collect();
        let num_classes = 2 + rng.below(9);
        let mut sizes = Vec::new();
        let mut prev = in_channels;
        for w in &widths {
            sizes.push(w * prev * kernel * kernel);
            prev = *w;
        }
        sizes.push(prev * num_classes);
        if sizes.iter().all(|s| *s <= 10_000) {
            let spec = PlainCnnSpec { in_channels, widths, kernel, num_classes };
            return build_plain_cnn(&spec, rng.next_u32() as u64).unwrap();
        }
    }
}

/// Rounds weights onto a coarse grid so that many magnitudes tie, within
/// and across tensors, and some weights are exactly zero.
fn quantize(model: &mut ModelGraph, rng: &mut Rng) {
    let steps = [2.0f32, 4.0, 8.0, 16.0][rng.below(4)];
    for p in model.params_mut() {
        for w in p.tensor.data_mut() {
            *w = (*w * steps).round() / steps;
        }
    }
}

/// Positions (tensor, index) of the lowest-scoring unmasked weights that an
/// independent full sort picks for a global L1 rate.
fn oracle_selection(model: &ModelGraph, masks: &MaskSet, rate: f64) -> BTreeSet<(String, usize)> {
    let mut pool = Vec::new();
    let mut total = 0;
    let mut already = 0;
    for p in model.params() {
        if !list_prunable_tensors(model).iter().any(|t| t.name == p.name) {
            continue;
        }
        let mask = masks.get(&p.name);
        for (i, w) in p.tensor.data().iter().enumerate() {
            total += 1;
            if mask.is_some_and(|m| m.data()[i] == 0.0) {
                already += 1;
            } else {
                pool.push(((*w as f64).abs(), p.name.clone(), i));
            }
        }
    }
    pool.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then_with(|| a.1.cmp(&b.1)).then_with(|| a.2.cmp(&b.2)));
    let take = first_reach(rate, total).saturating_sub(already);
    pool.into_iter().take(take).map(|(_, n, i)| (n, i)).collect()
}

fn zero_positions(masks: &MaskSet) -> BTreeSet<(String, usize)> {
    masks
        .iter()
        .flat_map(|(n, m)| m.data().iter().enumerate().filter(|(_, v)| **v == 0.0).map(move |(i, _)| (n.to_string(), i)))
        .collect()
}

fn criterion_1() -> Result<String, String> {
    let start = Instant::now();
    let mut rng = Rng::new(2024);
    let mut elements = 0;
    let mut incremental = 0;
    for trial in 0..100 {
        let mut model = random_plain_cnn(&mut rng);
        quantize(&mut model, &mut rng);
        elements += list_prunable_tensors(&model).iter().map(|t| t.numel).sum::<usize>();
        let rate = rng.uniform_f64();
        let expected = oracle_selection(&model, &MaskSet::new(), rate);
        let p = PruningPlan::new(Method::Unstructured, Criterion::L1, Scope::Global, rate);
        let (masks, set) = prune_step(&mut model, &MaskSet::new(), &p).map_err(|e| e.to_string())?;
        let got: BTreeSet<_> = set.units.iter().map(|u| (u.tensor.clone(), u.index)).collect();
        ensure(got == expected, || format!("model {trial} rate {rate}: {} selected vs oracle {}", got.len(), expected.len()))?;
        ensure(zero_positions(&masks) == expected, || format!("model {trial}: mask differs from selection"))?;

        if trial % 2 == 0 {
            // A second round on top of existing masks.
            let rate2 = rate + (1.0 - rate) * rng.uniform_f64();
            let expected2 = oracle_selection(&model, &masks, rate2);
            let (_, set2) = prune_step(&mut model, &masks, &p.with_rate(rate2)).map_err(|e| e.to_string())?;
            let got2: BTreeSet<_> = set2.units.iter().map(|u| (u.tensor.clone(), u.index)).collect();
            ensure(got2 == expected2, || format!("model {trial} second round {rate2}: selection differs"))?;
            incremental += 1;
        }
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(60), || format!("took {took:?}"))?;
    Ok(format!("100 models ({elements} weights, {incremental} two-round), all selections equal the oracle"))
}

/// Elements one candidate of `method` covers in a weight of `shape`.
fn granule(shape: &[usize], method: Method) -> usize {
    let n: usize = shape.iter().product();
    match method {
        Method::Unstructured => 1,
        Method::StructuredOut => n / shape[0],
        Method::ConnectionSparsity => n / shape[1],
    }
}

fn pruned_count(masks: &MaskSet, name: &str) -> usize {
    masks.get(name).map_or(0, |m| m.data().iter().filter(|v| **v == 0.0).count())
}

fn check_accounting(base: &ModelGraph, method: Method, criterion: Criterion, scope: Scope, rate: f64) -> Result<(), String> {
    let tag = format!("{method}/{criterion}/{scope}@{rate}");
    let mut model = base.clone();
    let (masks, _) = prune_step(&mut model, &MaskSet::new(), &plan(method, criterion, scope, rate, 5)).map_err(|e| e.to_string())?;
    let tensors = list_prunable_tensors(&model);
    let shape_of = |name: &str| model.param(name).unwrap().tensor.shape().to_vec();
    // Within the bound means first_reach <= pruned <= first_reach + g - 1.
    let within = |pruned: usize, total: usize, g: usize| {
        let need = first_reach(rate, total);
        pruned >= need && pruned < need + g
    };
    match scope {
        Scope::Global => {
            let total: usize = tensors.iter().map(|t| t.numel).sum();
            let pruned: usize = tensors.iter().map(|t| pruned_count(&masks, &t.name)).sum();
            let g = tensors.iter().map(|t| granule(&shape_of(&t.name), method)).max().unwrap();
            ensure(within(pruned, total, g), || format!("{tag}: pruned {pruned} of {total}, granule {g}"))?;
        }
        Scope::Local => {
            for t in &tensors {
                let pruned = pruned_count(&masks, &t.name);
                let g = granule(&shape_of(&t.name), method);
                ensure(within(pruned, t.numel, g), || format!("{tag} {}: pruned {pruned} of {}, granule {g}", t.name, t.numel))?;
            }
        }
    }
    if rate == 0.0 {
        ensure(masks.iter().all(|(_, m)| m.data().iter().all(|v| *v == 1.0)), || format!("{tag}: mask not identity"))?;
        ensure(model.params_bit_eq(base), || format!("{tag}: weights changed"))?;
    }
    if rate == 1.0 {
        for t in &tensors {
            let w = model.param(&t.name).unwrap().tensor.data();
            ensure(w.iter().all(|v| v.to_bits() == 0), || format!("{tag}: {} not all zero", t.name))?;
        }
    }
    Ok(())
}

fn criterion_2() -> Result<String, String> {
    let models = [build_mini_inception(10, 3).unwrap(), tiny_cnn(5, vec![6, 7], 1)];
    let mut cases = 0;
    for base in &models {
        for &method in Method::ALL {
            for &criterion in Criterion::ALL {
                for &scope in Scope::ALL {
                    for rate in [0.0, 0.2, 0.5, 0.8, 0.9, 1.0] {
                        check_accounting(base, method, criterion, scope, rate)?;
                        cases += 1;
                    }
                }
            }
        }
    }
    Ok(format!("{cases} method/criterion/scope/rate cases on 2 architectures within one granule"))
}

/// Checks that every zero in every weight mask belongs to a fully zeroed
/// slice along `axis` (0 = output, 1 = input) and that weights in those
/// slices are +0.0. Returns the number of zeroed slices.
fn complete_slices(model: &ModelGraph, masks: &MaskSet, axis: usize, tag: &str) -> Result<usize, String> {
    let mut zeroed = 0;
    for t in list_prunable_tensors(model) {
        let p = model.param(&t.name).unwrap();
        let shape = p.tensor.shape();
        let (out, inp) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let mask = masks.get(&t.name).ok_or_else(|| format!("{tag}: no mask for {}", t.name))?.data();
        let w = p.tensor.data();
        let slices = if axis == 0 { out } else { inp };
        for s in 0..slices {
            let positions: Vec<usize> = if axis == 0 {
                (s * inp * inner..(s + 1) * inp * inner).collect()
            } else {
                (0..out).flat_map(|o| (o * inp + s) * inner..(o * inp + s + 1) * inner).collect()
            };
            let zeros = positions.iter().filter(|&&i| mask[i] == 0.0).count();
            ensure(zeros == 0 || zeros == positions.len(), || {
                format!("{tag} {}: slice {s} partially masked ({zeros}/{})", t.name, positions.len())
            })?;
            if zeros > 0 {
                zeroed += 1;
                ensure(positions.iter().all(|&i| w[i].to_bits() == 0), || format!("{tag} {}: slice {s} has nonzero weights", t.name))?;
            }
            if axis == 0 {
                if let Some(b) = model.bias_of(model.param_index(&t.name).unwrap()) {
                    let bias = &model.params()[b];
                    let bias_masked = masks.get(&bias.name).is_some_and(|m| m.data()[s] == 0.0);
                    ensure(bias_masked == (zeros > 0), || format!("{tag} {}: bias mask of channel {s} disagrees", t.name))?;
                    if zeros > 0 {
                        ensure(bias.tensor.data()[s].to_bits() == 0, || format!("{tag} {}: bias {s} not zeroed", t.name))?;
                    }
                }
            }
        }
    }
    Ok(zeroed)
}

fn criterion_3() -> Result<String, String> {
    let mut slices = [0usize; 2];
    let mut cases = 0;
    for seed in 0..3 {
        let base = build_mini_inception(10, seed).unwrap();
        for (method, axis) in [(Method::ConnectionSparsity, 1), (Method::StructuredOut, 0)] {
            for &criterion in Criterion::ALL {
                for &scope in Scope::ALL {
                    let mut model = base.clone();
                    let mut masks = MaskSet::new();
                    // Growing rates on one model also cover composed masks.
                    for rate in [0.1, 0.3, 0.5, 0.7, 0.9, 0.97] {
                        let tag = format!("{method}/{criterion}/{scope}@{rate}");
                        let p = plan(method, criterion, scope, rate, seed);
                        masks = prune_step(&mut model, &masks, &p).map_err(|e| e.to_string())?.0;
                        let n = complete_slices(&model, &masks, axis, &tag)?;
                        ensure(n > 0, || format!("{tag}: nothing pruned"))?;
                        slices[axis] += n;
                        cases += 1;
                    }
                }
            }
        }
    }
    Ok(format!(
        "{cases} prunings: {} zeroed input slices and {} zeroed output slices, all complete, biases zeroed",
        slices[1], slices[0]
    ))
}

fn criterion_4() -> Result<String, String> {
    let (train, val) = shapes(4, 428, 1);
    let cfg = TrainConfig { epochs: 10, batch_size: 16, lr: Some(0.05), ..TrainConfig::default() };
    let mut checked = 0usize;
    for &method in Method::ALL {
        let mut model = tiny_cnn(4, vec![6, 8], 0);
        let (masks, _) = prune_step(&mut model, &MaskSet::new(), &PruningPlan::new(method, Criterion::L1, Scope::Global, 0.6))
            .map_err(|e| e.to_string())?;
        let mut steps = 0;
        let mut violations = 0;
        fine_tune_with_hook(&mut model, &masks, &train, &val, &cfg, &mut |m, s| {
            steps = s;
            for (name, mask) in masks.iter() {
                let w = m.param(name).unwrap().tensor.data();
                for (v, k) in w.iter().zip(mask.data()) {
                    if *k == 0.0 {
                        checked += 1;
                        violations += (v.to_bits() != 0) as usize;
                    }
                }
            }
        })
        .map_err(|e| e.to_string())?;
        ensure(steps == 200, || format!("{method}: {steps} steps"))?;
        ensure(violations == 0, || format!("{method}: {violations} masked weights moved"))?;
    }
    Ok(format!("3 methods x 200 steps, {checked} masked-weight checks, all +0.0"))
}

fn criterion_5() -> Result<String, String> {
    const TOL: f64 = 1e-2;
    let start = Instant::now();
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut record = |name: &'static str, err: f64| -> Result<(), String> {
        match worst.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = slot.1.max(err),
            None => worst.push((name, err)),
        }
        ensure(err < TOL, || format!("{name}: relative error {err:.2e}"))
    };
    for trial in 0..4u64 {
        let mut rng = Rng::new(500 + trial);
        let k = [1, 3, 5][rng.below(3)];
        let stride = 1 + rng.below(2);
        let pad = rng.below(k / 2 + 1);
        let (n, c, o) = (1 + rng.below(2), 1 + rng.below(4), 1 + rng.below(5));
        let (h, w) = (k + rng.below(5), k + rng.below(5));
        let x = random_tensor(&mut rng, &[n, c, h, w], 1.0);
        let wt = random_tensor(&mut rng, &[o, c, k, k], 0.5);
        let b = random_tensor(&mut rng, &[o], 0.5);
        record("conv2d", check_op(&[x, wt, b], 1e-2, trial, |t, v| t.conv2d(v[0], v[1], v[2], stride, pad)))?;

        let (inp, out) = (1 + rng.below(8), 1 + rng.below(8));
        let x = random_tensor(&mut rng, &[n + 1, inp], 1.0);
        let wt = random_tensor(&mut rng, &[out, inp], 1.0);
        let b = random_tensor(&mut rng, &[out], 1.0);
        record("linear", check_op(&[x, wt, b], 1e-2, trial, |t, v| t.linear(v[0], v[1], v[2])))?;

        let x = away_from_zero(&mut rng, &[n, c, h, w], 0.05);
        record("relu", check_op(&[x], 1e-2, trial, |t, v| t.relu(v[0])))?;

        let (pk, ps) = [(2, 2), (3, 1), (3, 2)][rng.below(3)];
        let pp = rng.below(pk / 2 + 1);
        let (ph, pw) = (pk + 1 + rng.below(4), pk + 1 + rng.below(4));
        let x = distinct_values(&mut rng, &[n, c, ph, pw], 0.05);
        record("maxpool2d", check_op(&[x], 1e-2, trial, |t, v| t.maxpool2d(v[0], pk, ps, pp)))?;

        let a = random_tensor(&mut rng, &[n, c, h, w], 1.0);
        let c2 = 1 + rng.below(3);
        let b2 = random_tensor(&mut rng, &[n, c2, h, w], 1.0);
        record("global_avgpool", check_op(std::slice::from_ref(&a), 1e-2, trial, |t, v| t.global_avgpool(v[0])))?;
        record("concat", check_op(&[a.clone(), b2], 1e-2, trial, |t, v| t.concat(&[v[0], v[1]])))?;
        let f = rng.range(-2.0, 2.0);
        record("scale", check_op(&[a], 1e-2, trial, |t, v| t.scale(v[0], f)))?;

        let classes = 2 + rng.below(8);
        let logits = random_tensor(&mut rng, &[n + 2, classes], 2.0);
        let labels: Vec<usize> = (0..n + 2).map(|_| rng.below(classes)).collect();
        record("softmax", check_op(std::slice::from_ref(&logits), 1e-3, trial, |t, v| t.softmax(v[0])))?;
        record("cross_entropy", check_op(&[logits], 1e-3, trial, |t, v| t.cross_entropy(v[0], &labels)))?;
    }
    let mut rng = Rng::new(15);
    let x = random_tensor(&mut rng, &[2, 3, 8, 8], 1.0);
    record("plain_cnn", check_model(&tiny_cnn(4, vec![4, 6], 3), &x, &[1, 3], 1e-2, 6, 1))?;
    let inception = build_mini_inception_from(&MiniInceptionSpec::new(3, 5), 4).unwrap();
    let x = random_tensor(&mut rng, &[1, 3, 8, 8], 1.0);
    record("mini_inception", check_model(&inception, &x, &[2], 1e-2, 3, 2))?;
    let took = start.elapsed();
    ensure(took < Duration::from_secs(120), || format!("took {took:?}"))?;
    let summary = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    Ok(format!("worst relative errors: {summary}"))
}

/// Desk-scale sweep shared by criteria 6 to 8: three 15-epoch
/// MiniInception bases on 10-class synthetic shapes, run once and shared.
struct DeskRun {
    report: SweepReport,
    took: Duration,
}

fn desk_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-desk")
}

fn desk_run() -> &'static Result<DeskRun, String> {
    static RUN: OnceLock<Result<DeskRun, String>> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = desk_dir();
        let _ = fs::remove_dir_all(&dir);
        let json = format!(
            r#"{{
            "dataset": {{"kind": "synthetic", "classes": 10, "samples": 2000, "seed": 7, "val_fraction": 0.25}},
            "model": {{"arch": "mini_inception"}},
            "train": {{"epochs": 15, "lr": 0.05}},
            "finetune": {{}},
            "plans": [
                {{"method": "unstructured", "criterion": "l1", "scope": "global", "rates": [0.0, 0.2, 0.5, 0.8, 0.95],
                  "schedule": {{"kind": "one_shot", "retrain_epochs": 0}}}},
                {{"method": "unstructured", "criterion": "l1", "scope": "global", "rates": [0.5],
                  "schedule": {{"kind": "one_shot", "retrain_epochs": 6}}}},
                {{"method": "unstructured", "criterion": "l1", "scope": "global", "rates": [0.9],
                  "schedule": {{"kind": "one_shot", "retrain_epochs": 5}}}},
                {{"method": "unstructured", "criterion": "l1", "scope": "global", "rates": [0.9],
                  "schedule": {{"kind": "iterative", "steps": 3, "retrain_epochs": 5}}}}
            ],
            "mis": {{"probe_samples": 200}},
            "output_dir": {:?},
            "seeds": 3
        }}"#,
            dir.display().to_string()
        );
        let config = ExperimentConfig::from_json(&json).map_err(|e| e.to_string())?;
        let start = Instant::now();
        let report = run_sweep(&config).map_err(|e| e.to_string())?;
        let took = start.elapsed();
        if report.failures() > 0 {
            return Err(format!("{} sweep rows failed", report.failures()));
        }
        let sweep = dir.join("sweep.csv");
        emit_plot(&sweep, "target_rate", "top1_after_ft", Some("schedule"), &dir.join("accuracy_vs_rate.svg"))
            .map_err(|e| e.to_string())?;
        emit_plot(&sweep, "target_rate", "mean_mis", Some("schedule"), &dir.join("mis_vs_rate.svg")).map_err(|e| e.to_string())?;
        Ok(DeskRun { report, took })
    })
}

fn rows<'a>(run: &'a DeskRun, schedule: &str, retrain: u32, rate: f64) -> Vec<&'a SweepRow> {
    run.report
        .rows
        .iter()
        .filter(|r| r.schedule == schedule && r.retrain_epochs == retrain && r.target_rate == rate)
        .collect()
}

fn metric(rows: &[&SweepRow], f: impl Fn(&SweepRow) -> Option<f64>) -> Result<Vec<f64>, String> {
    rows.iter().map(|r| f(r).ok_or_else(|| format!("missing metric in row seed {}", r.seed))).collect()
}

/// Mean over seeds of the base accuracy (rate 0, no retraining).
fn baseline(run: &DeskRun) -> Result<Vec<f64>, String> {
    metric(&rows(run, "one_shot", 0, 0.0), |r| r.top1_before_ft)
}

fn criterion_6() -> Result<String, String> {
    let run = desk_run().as_ref().map_err(Clone::clone)?;
    let rates = [0.0, 0.2, 0.5, 0.8, 0.95];
    let mut means = Vec::new();
    for rate in rates {
        let accs = metric(&rows(run, "one_shot", 0, rate), |r| r.top1_after_ft)?;
        ensure(accs.len() == 3, || format!("rate {rate}: {} seeds", accs.len()))?;
        means.push(mean(&accs));
    }
    let curve = fmt_list(&means);
    let mut problems = Vec::new();
    for i in 1..means.len() {
        if means[i] > means[i - 1] + 0.02 {
            problems.push(format!("rise {:.3} -> {:.3} at rate {}", means[i - 1], means[i], rates[i]));
        }
    }
    let chance = 1.0 / 10.0;
    let last = *means.last().unwrap();
    if (last - chance).abs() > 0.05 {
        problems.push(format!("rate 0.95 at {last:.3}, chance {chance:.3}"));
    }
    if run.took > Duration::from_secs(30 * 60) {
        problems.push(format!("sweep took {:?}", run.took));
    }
    let detail = format!("mean accuracy over 3 seeds at rates 0/.2/.5/.8/.95: {curve}; sweep {:.0}s", run.took.as_secs_f64());
    if problems.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; {}", problems.join("; ")))
    }
}

fn criterion_7() -> Result<String, String> {
    let run = desk_run().as_ref().map_err(Clone::clone)?;
    let base = baseline(run)?;
    let half = rows(run, "one_shot", 6, 0.5);
    let before = metric(&half, |r| r.top1_before_ft)?;
    let after = metric(&half, |r| r.top1_after_ft)?;
    let detail = format!(
        "baseline {:.3} [{}], 50% pruned {:.3} -> {:.3} after 6 fine-tuning epochs [{}]",
        mean(&base),
        fmt_list(&base),
        mean(&before),
        mean(&after),
        fmt_list(&after)
    );
    ensure(mean(&after) >= mean(&base) - 0.02, || detail.clone())?;
    Ok(detail)
}

fn criterion_8() -> Result<String, String> {
    let run = desk_run().as_ref().map_err(Clone::clone)?;
    let os = metric(&rows(run, "one_shot", 5, 0.9), |r| r.top1_after_ft)?;
    let it = metric(&rows(run, "iterative(3)", 5, 0.9), |r| r.top1_after_ft)?;
    ensure(os.len() == 3 && it.len() == 3, || format!("{} one-shot and {} iterative seeds", os.len(), it.len()))?;
    let detail = format!(
        "90%: iterative {:.3} [{}] vs one-shot {:.3} [{}]",
        mean(&it),
        fmt_list(&it),
        mean(&os),
        fmt_list(&os)
    );
    ensure(mean(&it) >= mean(&os) - 0.01, || detail.clone())?;
    Ok(detail)
}

fn criterion_9() -> Result<String, String> {
    let (train, val) = shapes(4, 240, 3);
    let nets = [
        ("plain_cnn", tiny_cnn(4, vec![4, 6], 2), 3),
        ("mini_inception", build_mini_inception(4, 2).unwrap(), 1),
    ];
    let mut cases = 0;
    for (arch, base, epochs) in nets {
        let cfg = TrainConfig { epochs, batch_size: 16, seed: 4, ..TrainConfig::default() };
        let mut plain = base.clone();
        let rec = fine_tune(&mut plain, &MaskSet::new(), &train, &val, &cfg).map_err(|e| e.to_string())?;
        for &method in Method::ALL {
            for &criterion in Criterion::ALL {
                for &scope in Scope::ALL {
                    let p = plan(method, criterion, scope, 0.0, 1);
                    let out = one_shot(&base, &p, &cfg, None, &train, &val).map_err(|e| e.to_string())?;
                    ensure(out.model.params_bit_eq(&plain), || format!("{arch} {method}/{criterion}/{scope}: weights differ"))?;
                    ensure(out.records[0].accuracies() == rec.accuracies(), || format!("{arch} {method}/{criterion}/{scope}: curves differ"))?;
                    cases += 1;
                }
            }
        }
    }
    Ok(format!("{cases} rate-0 one-shot runs bit-identical to plain fine-tuning"))
}

/// Half reddish, half bluish 8x8 images; the activation tracks redness.
fn red_blue(n: usize, seed: u64) -> (Dataset, Vec<f32>) {
    let mut rng = Rng::new(seed);
    let mut images = Vec::new();
    let mut acts = Vec::new();
    for i in 0..n {
        let red = i % 2 == 0;
        let b = rng.range(0.6, 1.0);
        for c in 0..3 {
            for _ in 0..64 {
                let base = match (c, red) {
                    (0, true) | (2, false) => b,
                    _ => 0.1,
                };
                images.push((base + rng.range(-0.05, 0.05)).clamp(0.0, 1.0));
            }
        }
        acts.push(if red { 1.0 + rng.uniform() } else { rng.uniform() - 1.0 });
    }
    let labels = (0..n).map(|i| i % 2).collect();
    (Dataset::new(images, labels, [3, 8, 8], 2).unwrap(), acts)
}

fn probe_unit(i: usize) -> UnitRef {
    UnitRef { layer: "probe".into(), index: i, kind: UnitKind::Channel }
}

fn criterion_10() -> Result<String, String> {
    let mut ceilings = Vec::new();
    for seed in 0..3 {
        let (data, acts) = red_blue(120, seed);
        let bank = SimilarityBackend::PixelCosine.bank(&data).map_err(|e| e.to_string())?;
        let rec = ActivationRecord::new(probe_unit(0), acts.into_iter().enumerate().collect()).map_err(|e| e.to_string())?;
        let r = mis_score(&build_tasks(&rec, 9, 20, None).map_err(|e| e.to_string())?, &bank, 10.0).map_err(|e| e.to_string())?;
        ensure(r.mis == 1.0, || format!("separable corpus seed {seed}: mis {}", r.mis))?;
        ceilings.push(r.mis);
    }
    let (_, val) = shapes(10, 1700, 3);
    let bank = SimilarityBackend::PixelCosine.bank(&val).map_err(|e| e.to_string())?;
    let mut floors = Vec::new();
    for seed in 0..5 {
        let mut rng = Rng::new(100 + seed);
        let rec = ActivationRecord::new(probe_unit(seed as usize), (0..val.len()).map(|i| (i, rng.uniform())).collect())
            .map_err(|e| e.to_string())?;
        let set = build_tasks(&rec, 9, 200, None).map_err(|e| e.to_string())?;
        let r = mis_score(&set, &bank, 10.0).map_err(|e| e.to_string())?;
        ensure(r.task_count == 200, || format!("{} tasks", r.task_count))?;
        ensure((r.mis - 0.5).abs() <= 0.1, || format!("random unit {seed}: mis {}", r.mis))?;
        floors.push(r.mis);
    }
    Ok(format!("separable corpus mis {}; content-independent units (200 tasks) mis {}", fmt_list(&ceilings), fmt_list(&floors)))
}

fn same_bits(a: &MisResult, b: &MisResult) -> bool {
    a.unit == b.unit
        && a.mis.to_bits() == b.mis.to_bits()
        && a.confidence.to_bits() == b.confidence.to_bits()
        && a.task_count == b.task_count
        && a.flags == b.flags
}

fn strictly_increasing_on(rec: &ActivationRecord, f: &dyn Fn(f32) -> f32) -> bool {
    let mut v: Vec<f32> = rec.activations.iter().map(|(_, a)| *a).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.dedup();
    v.windows(2).all(|w| f(w[0]) < f(w[1]))
}

fn criterion_11() -> Result<String, String> {
    let transforms: Vec<(&str, Box<dyn Fn(f32) -> f32>)> = vec![
        ("4x", Box::new(|x| x * 4.0)),
        ("0.37x+2", Box::new(|x| x * 0.37 + 2.0)),
        ("exp", Box::new(|x| x.exp())),
        ("cube", Box::new(|x| x * x * x)),
    ];
    let mut records = Vec::new();
    let mut rng = Rng::new(31);
    for u in 0..20 {
        let n = 60 + rng.below(100);
        records.push(ActivationRecord::new(probe_unit(u), (0..n).map(|i| (i, rng.range(-5.0, 5.0))).collect()).unwrap());
    }
    let (_, val) = shapes(4, 800, 6);
    let model = tiny_cnn(4, vec![5, 6], 8);
    let cfg = MisConfig::default();
    records.extend(probe_activations(&model, &val, &cfg).map_err(|e| e.to_string())?);
    let bank = SimilarityBackend::PixelCosine.bank(&val).map_err(|e| e.to_string())?;
    let mut compared = 0;
    let mut skipped = 0;
    let mut per_transform = vec![0; transforms.len()];
    for rec in &records {
        let n = rec.activations.len();
        let ids: Vec<usize> = rec.activations.iter().map(|(i, _)| *i).collect();
        // Synthetic records index the first n probe images.
        ensure(ids.iter().all(|i| *i < bank.len()), || "record outside probe".into())?;
        let (k, tasks) = if n >= 2 * (9 + 20) { (9, 20) } else { (5, n / 2 - 5) };
        let base = mis_score(&build_tasks(rec, k, tasks, None).map_err(|e| e.to_string())?, &bank, cfg.beta).map_err(|e| e.to_string())?;
        for (t, (name, f)) in transforms.iter().enumerate() {
            // Floating point can merge close values; such a pair is not
            // strictly increasing on this record.
            if !strictly_increasing_on(rec, f.as_ref()) {
                skipped += 1;
                continue;
            }
            let moved = rec.map(f).map_err(|e| e.to_string())?;
            let r = mis_score(&build_tasks(&moved, k, tasks, None).map_err(|e| e.to_string())?, &bank, cfg.beta).map_err(|e| e.to_string())?;
            ensure(same_bits(&base, &r), || format!("{name} on {:?}: {:?} vs {:?}", rec.unit, r, base))?;
            compared += 1;
            per_transform[t] += 1;
        }
    }
    ensure(per_transform.iter().all(|c| *c > 0), || format!("some transform never applied: {per_transform:?}"))?;
    Ok(format!(
        "{compared} transformed records ({} units, 4 transforms) give bit-identical results; {skipped} pairs skipped where rounding merges values",
        records.len()
    ))
}

fn criterion_12() -> Result<String, String> {
    let x = [1.0, 2.0, 3.0, 4.0, 5.0];
    let up = pearson_corr(&x, &[2.0, 4.0, 6.0, 8.0, 10.0]).map_err(|e| e.to_string())?;
    let down = pearson_corr(&x, &[-3.0, -5.0, -7.0, -9.0, -11.0]).map_err(|e| e.to_string())?;
    ensure((up - 1.0).abs() < 1e-12, || format!("r = {up} for y = 2x"))?;
    ensure((down + 1.0).abs() < 1e-12, || format!("r = {down} for y = -2x - 1"))?;
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let mut rng = Rng::new(900 + seed);
        let a: Vec<f64> = (0..1000).map(|_| rng.normal() as f64).collect();
        let b: Vec<f64> = (0..1000).map(|_| rng.uniform_f64()).collect();
        let r = pearson_corr(&a, &b).map_err(|e| e.to_string())?;
        ensure(r.abs() < 0.1, || format!("independent seed {seed}: r = {r}"))?;
        worst = worst.max(r.abs());
    }
    ensure(pearson_corr(&x, &[3.0; 5]).is_err(), || "constant y accepted".into())?;
    ensure(pearson_corr(&[7.0; 5], &x).is_err(), || "constant x accepted".into())?;
    Ok(format!("r(+) = {up}, r(-) = {down}, max |r| independent N=1000 = {worst:.3}, zero variance rejected"))
}

fn blank_timing(path: &Path) -> Result<String, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    let headers = r.headers().map_err(|e| e.to_string())?.clone();
    let t = headers.iter().position(|h| h == "wall_time_s");
    let mut out = headers.iter().collect::<Vec<_>>().join(",");
    for rec in r.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let fields: Vec<&str> = rec.iter().enumerate().map(|(i, f)| if Some(i) == t { "" } else { f }).collect();
        out.push('\n');
        out.push_str(&fields.join(","));
    }
    Ok(out)
}

fn criterion_13() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in 0..2 {
        let dir = tmp.path().join(format!("run{run}"));
        let json = format!(
            r#"{{
            "dataset": {{"kind": "synthetic", "classes": 4, "samples": 240, "seed": 11}},
            "model": {{"arch": "plain_cnn", "widths": [4, 6]}},
            "train": {{"epochs": 2, "lr": 0.05, "batch_size": 16}},
            "finetune": {{"epochs": 1, "batch_size": 16}},
            "plans": [
                {{"method": "unstructured", "criterion": "l1", "scope": "global", "rates": [0.0, 0.5, 0.9]}},
                {{"method": "structured_out", "criterion": "l2", "scope": "local", "rates": [0.3]}},
                {{"method": "connection_sparsity", "criterion": "random", "scope": "global", "rates": [0.6], "seed": 3,
                  "schedule": {{"kind": "iterative", "steps": 2, "retrain_epochs": 1}}}}
            ],
            "mis": {{"k": 3, "tasks": 6, "shuffle_seed": 2}},
            "output_dir": {:?},
            "seeds": 2
        }}"#,
            dir.display().to_string()
        );
        let config = ExperimentConfig::from_json(&json).map_err(|e| e.to_string())?;
        let report = run_sweep(&config).map_err(|e| e.to_string())?;
        ensure(report.failures() == 0, || format!("{} rows failed", report.failures()))?;
        let sweep = blank_timing(&dir.join("sweep.csv"))?;
        let mis = fs::read_to_string(dir.join("mis.csv")).map_err(|e| e.to_string())?;
        outputs.push((sweep, mis, report.rows.len(), report.mis_rows.len()));
    }
    ensure(outputs[0].0 == outputs[1].0, || "sweep.csv differs between runs".into())?;
    ensure(outputs[0].1 == outputs[1].1, || "mis.csv differs between runs".into())?;
    Ok(format!("two runs, {} sweep rows and {} mis rows identical modulo wall_time_s", outputs[0].2, outputs[0].3))
}

fn criterion_14() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = Rng::new(77);
    let mut masked = 0;
    for i in 0..50 {
        let mut model = if i % 10 == 0 {
            build_mini_inception(2 + rng.below(9), i as u64).unwrap()
        } else {
            random_plain_cnn(&mut rng)
        };
        let method = Method::ALL[rng.below(3)];
        let p = plan(method, Criterion::ALL[rng.below(3)], Scope::ALL[rng.below(2)], rng.uniform_f64(), i as u64);
        let (masks, _) = prune_step(&mut model, &MaskSet::new(), &p).map_err(|e| e.to_string())?;
        masked += zero_positions(&masks).len();
        let first = tmp.path().join(format!("m{i}.prnk"));
        let second = tmp.path().join(format!("m{i}-again.prnk"));
        save_checkpoint(&model, &masks, &first).map_err(|e| e.to_string())?;
        let loaded = load_checkpoint(&first).map_err(|e| e.to_string())?;
        ensure(loaded.warnings.is_empty(), || format!("model {i}: warnings {:?}", loaded.warnings))?;
        ensure(loaded.model.params_bit_eq(&model), || format!("model {i}: weights differ after load"))?;
        ensure(zero_positions(&loaded.masks) == zero_positions(&masks), || format!("model {i}: masks differ after load"))?;
        save_checkpoint(&loaded.model, &loaded.masks, &second).map_err(|e| e.to_string())?;
        let (a, b) = (fs::read(&first).unwrap(), fs::read(&second).unwrap());
        ensure(a == b, || format!("model {i}: re-saved file differs ({} vs {} bytes)", a.len(), b.len()))?;
    }
    Ok(format!("50 models ({masked} masked positions) save -> load -> save byte-identical"))
}

const CRITERIA: [(u32, &str, Check); 14] = [
    (1, "mask oracle equivalence", criterion_1),
    (2, "sparsity accounting", criterion_2),
    (3, "structural integrity", criterion_3),
    (4, "mask persistence", criterion_4),
    (5, "gradient correctness", criterion_5),
    (6, "accuracy vs rate without fine-tuning", criterion_6),
    (7, "recovery after 50% pruning", criterion_7),
    (8, "iterative vs one-shot at 90%", criterion_8),
    (9, "control equivalence", criterion_9),
    (10, "MIS ceiling and floor", criterion_10),
    (11, "MIS rank invariance", criterion_11),
    (12, "Pearson correctness", criterion_12),
    (13, "sweep determinism", criterion_13),
    (14, "checkpoint round trip", criterion_14),
];

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    let mut ran = 0;
    for (id, name, check) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail} ({secs:.1}s)"),
            Err(detail) => {
                println!("criterion {id:>2} FAIL  {name}: {detail} ({secs:.1}s)");
                failed.push(id);
            }
        }
    }
    if desk_dir().join("sweep.csv").exists() {
        println!("desk-scale outputs: {}", desk_dir().display());
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
