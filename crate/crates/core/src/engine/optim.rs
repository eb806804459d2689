use super::{EngineError, Param};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd { momentum: f32 },
    Adam { beta1: f32, beta2: f32, eps: f32 },
}

impl OptimizerKind {
    pub fn sgd(momentum: f32) -> Self {
        Self::Sgd { momentum }
    }

    pub fn adam() -> Self {
        Self::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Sgd { .. } => "sgd",
            Self::Adam { .. } => "adam",
        }
    }

    /// SGD momentum, or Adam's first-moment decay.
    pub fn momentum(&self) -> f32 {
        match self {
            Self::Sgd { momentum } => *momentum,
            Self::Adam { beta1, .. } => *beta1,
        }
    }
}

/// Per-parameter optimizer buffers plus the step counter.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    kind: OptimizerKind,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
    step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, params: &[Param]) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect::<Vec<_>>();
        let second = match kind {
            OptimizerKind::Adam { .. } => zeros(),
            OptimizerKind::Sgd { .. } => Vec::new(),
        };
        Self {
            kind,
            first: zeros(),
            second,
            step: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update using each parameter's accumulated gradient.
    /// Parameters without a gradient buffer are left untouched. Nothing is
    /// modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut [Param], lr: f32) -> Result<(), EngineError> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(EngineError::InvalidArgument(format!("learning rate {lr}")));
        }
        if params.len() != self.first.len() {
            return Err(EngineError::InvalidArgument(format!(
                "optimizer built for {} parameters, got {}",
                self.first.len(),
                params.len()
            )));
        }
        for (p, buf) in params.iter().zip(&self.first) {
            if p.tensor.numel() != buf.len() {
                return Err(EngineError::ShapeMismatch {
                    op: "optimizer_step",
                    lhs: vec![buf.len()],
                    rhs: p.tensor.shape().to_vec(),
                });
            }
            if let Some(g) = p.tensor.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(EngineError::NonFiniteGradient(p.name.clone()));
                }
            }
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd { momentum } => {
                for (p, buf) in params.iter_mut().zip(&mut self.first) {
                    if p.tensor.grad().is_none() {
                        continue;
                    }
                    let (w, g) = p.tensor.value_and_grad_mut();
                    for ((w, g), b) in w.iter_mut().zip(g.iter()).zip(buf.iter_mut()) {
                        *b = momentum * *b + g;
                        *w -= lr * *b;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
                    if p.tensor.grad().is_none() {
                        continue;
                    }
                    let (w, g) = p.tensor.value_and_grad_mut();
                    for (((w, g), m), v) in w.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *w -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Exponential decay: `base_lr · gamma^epoch`.
pub fn lr_at_epoch(base_lr: f32, gamma: f32, epoch: u32) -> f32 {
    (base_lr as f64 * (gamma as f64).powi(epoch as i32)) as f32
}
