//! Desk-scale pruning experiments on MiniInception / synthetic shapes:
//! accuracy vs. rate without fine-tuning, recovery after 50% pruning, and
//! one-shot vs. iterative pruning at 90%.

use std::time::Instant;

use prunelab::data::SyntheticShapes;
use prunelab::model::build_mini_inception;
use prunelab::pruning::{prune_step, Criterion, MaskSet, Method, PruningPlan, Scope};
use prunelab::train::{evaluate, fine_tune, iterative, one_shot, ScheduleSpec, TrainConfig};

fn main() {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse().unwrap()).collect();
    let seed = args.first().copied().unwrap_or(0);
    let ft_epochs = args.get(1).copied().unwrap_or(5) as u32;
    let samples = args.get(2).copied().unwrap_or(2000) as usize;
    let (train, val) = SyntheticShapes::new(10, samples, 7).generate().unwrap().split(0.25).unwrap();
    let t = Instant::now();
    let mut base = build_mini_inception(10, seed).unwrap();
    let base_cfg = TrainConfig { epochs: 15, lr: Some(0.05), seed, ..TrainConfig::default() };
    fine_tune(&mut base, &MaskSet::new(), &train, &val, &base_cfg).unwrap();
    let base_acc = evaluate(&base, &val).unwrap();
    println!("base acc {base_acc:.3} ({:.0}s)", t.elapsed().as_secs_f64());

    let plan = PruningPlan::new(Method::Unstructured, Criterion::L1, Scope::Global, 0.0);
    for rate in [0.0, 0.2, 0.5, 0.8, 0.9, 0.95] {
        let mut m = base.clone();
        prune_step(&mut m, &MaskSet::new(), &plan.with_rate(rate)).unwrap();
        println!("no-ft rate {rate}: {:.3}", evaluate(&m, &val).unwrap());
    }
    for method in [Method::StructuredOut, Method::ConnectionSparsity] {
        for rate in [0.2, 0.5, 0.8] {
            let mut m = base.clone();
            prune_step(&mut m, &MaskSet::new(), &PruningPlan::new(method, Criterion::L1, Scope::Global, rate)).unwrap();
            println!("no-ft {method} rate {rate}: {:.3}", evaluate(&m, &val).unwrap());
        }
    }

    let cfg = TrainConfig { seed, ..TrainConfig::default() };
    let t = Instant::now();
    let half = one_shot(&base, &plan.with_rate(0.5), &cfg, Some(ft_epochs), &train, &val).unwrap();
    println!("50% one-shot: before {:.3} after {:.3} ({:.0}s)", half.top1_before_ft, half.final_accuracy(0.0), t.elapsed().as_secs_f64());

    let t = Instant::now();
    let os = one_shot(&base, &plan.with_rate(0.9), &cfg, Some(ft_epochs), &train, &val).unwrap();
    println!("90% one-shot: before {:.3} after {:.3} curve {:?} ({:.0}s)", os.top1_before_ft, os.final_accuracy(0.0), os.records[0].accuracies(), t.elapsed().as_secs_f64());
    let t = Instant::now();
    let it = iterative(&base, &plan.with_rate(0.9), &ScheduleSpec::iterative(3, Some(ft_epochs)), &cfg, &train, &val).unwrap();
    println!("90% iterative: after {:.3} per-step {:?} ({:.0}s)", it.final_accuracy(0.0), it.records.iter().map(|r| r.final_accuracy().unwrap()).collect::<Vec<_>>(), t.elapsed().as_secs_f64());
}
