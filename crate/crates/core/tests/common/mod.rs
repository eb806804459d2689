//! Helpers shared by the integration tests: finite-difference gradient
//! checks, small datasets and randomized models.
#![allow(dead_code)]

use prunelab::data::{Dataset, SyntheticShapes};
use prunelab::engine::{EngineError, Tape, Var};
use prunelab::model::{build_plain_cnn, ModelGraph, PlainCnnSpec};
use prunelab::{Rng, Tensor};

pub fn random_tensor(rng: &mut Rng, shape: &[usize], scale: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.range(-scale, scale)).collect()).unwrap()
}

/// Values at least `gap` away from zero, so that a perturbation smaller
/// than `gap` never crosses a ReLU kink.
pub fn away_from_zero(rng: &mut Rng, shape: &[usize], gap: f32) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.range(gap, 1.0);
            if rng.uniform() < 0.5 {
                -v
            } else {
                v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// A random permutation of well separated values, so max-pool windows
/// have a unique winner even under small perturbations.
pub fn distinct_values(rng: &mut Rng, shape: &[usize], spacing: f32) -> Tensor {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f32> = (0..n).map(|i| (i as f32 - n as f32 / 2.0) * spacing).collect();
    rng.shuffle(&mut vals);
    Tensor::new(shape.to_vec(), vals).unwrap()
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f32], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (*x as f64 - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x.powi(2)).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

fn projected(out: &Tensor, r: &Tensor) -> f64 {
    out.data().iter().zip(r.data()).map(|(a, b)| *a as f64 * *b as f64).sum()
}

/// Compares the tape gradient of `sum(r * f(inputs))`, `r` random, with
/// central differences of step `h`. Returns the worst per-input relative
/// error.
pub fn check_op<F>(inputs: &[Tensor], h: f32, seed: u64, f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, EngineError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.tracked_input(t.clone())).collect();
    let out = f(&mut tape, &vars).unwrap();
    let mut rng = Rng::new(seed);
    let r = random_tensor(&mut rng, tape.value(out).shape(), 1.0);
    let loss = tape.dot_const(out, &r).unwrap();
    let grads = tape.backward(loss, &mut []).unwrap();

    let eval = |inputs: &[Tensor]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = inputs.iter().map(|x| t.input(x.clone())).collect();
        let o = f(&mut t, &vs).unwrap();
        projected(t.value(o), &r)
    };
    let mut worst = 0.0f64;
    // Tracked inputs are the first nodes on the tape, so input `i` is var `i`.
    for i in 0..vars.len() {
        let analytic = grads.get(i).cloned().flatten().unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        let mut numeric = vec![0.0f64; inputs[i].numel()];
        let mut work = inputs.to_vec();
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = eval(&work);
            work[i].data_mut()[j] = orig - h;
            let down = eval(&work);
            work[i].data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * h as f64);
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

/// Relative error between backprop parameter gradients of the mean
/// cross-entropy and central differences, over up to `per_tensor` sampled
/// elements of every parameter.
pub fn check_model(model: &ModelGraph, x: &Tensor, labels: &[usize], h: f32, per_tensor: usize, seed: u64) -> f64 {
    let loss_of = |m: &ModelGraph| -> f64 {
        let mut tape = Tape::new();
        let input = tape.input(x.clone());
        let fwd = m.record(&mut tape, input).unwrap();
        let (loss, _) = prunelab::engine::cross_entropy(tape.value(fwd.logits), labels).unwrap();
        loss as f64
    };
    let mut m = model.clone();
    m.zero_grad();
    let mut tape = Tape::new();
    let input = tape.input(x.clone());
    let fwd = m.record(&mut tape, input).unwrap();
    let loss = tape.cross_entropy(fwd.logits, labels).unwrap();
    tape.backward(loss, m.params_mut()).unwrap();

    let mut rng = Rng::new(seed);
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for p in 0..m.params().len() {
        let n = m.params()[p].tensor.numel();
        let picks: Vec<usize> = (0..per_tensor.min(n)).map(|_| rng.below(n)).collect();
        for j in picks {
            analytic.push(m.params()[p].tensor.grad().map_or(0.0, |g| g[j]));
            let mut probe = model.clone();
            let orig = probe.params()[p].tensor.data()[j];
            probe.params_mut()[p].tensor.data_mut()[j] = orig + h;
            let up = loss_of(&probe);
            probe.params_mut()[p].tensor.data_mut()[j] = orig - h;
            let down = loss_of(&probe);
            numeric.push((up - down) / (2.0 * h as f64));
        }
    }
    relative_error(&analytic, &numeric)
}

/// Small plain CNN on 3-channel images.
pub fn tiny_cnn(classes: usize, widths: Vec<usize>, seed: u64) -> ModelGraph {
    let spec = PlainCnnSpec { in_channels: 3, widths, kernel: 3, num_classes: classes };
    build_plain_cnn(&spec, seed).unwrap()
}

/// Synthetic shapes split into (train, val).
pub fn shapes(classes: usize, samples: usize, seed: u64) -> (Dataset, Dataset) {
    SyntheticShapes::new(classes, samples, seed).generate().unwrap().split(0.25).unwrap()
}
