//! Adam and the epoch loop shared by every fine-tuning stage.

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Per-attribute Adam step sizes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub sh_dc: f64,
    pub sh_rest: f64,
    pub raw_opacity: f64,
}

impl LearningRates {
    /// Rates used when recovering from pruning and after quantization.
    pub const FINETUNE: LearningRates = LearningRates {
        sh_dc: 2.5e-3,
        sh_rest: 1.25e-4,
        raw_opacity: 5e-2,
    };

    pub fn scaled(self, factor: f64) -> Self {
        Self {
            sh_dc: self.sh_dc * factor,
            sh_rest: self.sh_rest * factor,
            raw_opacity: self.raw_opacity * factor,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
        self.t = 0;
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// State whose trainable values are exposed as flat blocks.
pub(crate) trait Trainable: Clone {
    fn blocks_mut(&mut self) -> Vec<&mut [f64]>;
    /// Re-derives dependent values after a parameter update.
    fn after_step(&mut self) {}
}

/// A per-view loss over some state.
pub(crate) trait Objective<S> {
    fn view_count(&self) -> usize;
    fn loss(&self, state: &S, view: usize) -> Result<f64>;
    /// Loss and one gradient vector per block of `S`.
    fn loss_and_grad(&self, state: &S, view: usize) -> Result<(f64, Vec<Vec<f64>>)>;

    fn mean_loss(&self, state: &S) -> Result<f64> {
        let n = self.view_count();
        let mut sum = 0.0;
        for v in 0..n {
            sum += self.loss(state, v)?;
        }
        Ok(sum / n as f64)
    }
}

/// Loss trace of a fit: mean loss over all views, before the first step
/// and after each accepted epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub losses: Vec<f64>,
    /// Number of epochs rejected because their loss went up.
    pub backoffs: u32,
    pub iterations: usize,
}

impl FitTrace {
    pub fn initial(&self) -> Option<f64> {
        self.losses.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

/// Adam over round-robin views.
///
/// An epoch is one pass over the views (the last one may be partial). After
/// each epoch the mean loss over all views is measured; an epoch that raises
/// it is rolled back, its step sizes halved and its moments cleared. The
/// recorded trace is therefore non-increasing and the returned state never
/// scores worse than the input.
pub(crate) fn fit<S: Trainable, O: Objective<S>>(
    objective: &O,
    state: &mut S,
    rates: &[f64],
    iterations: usize,
) -> Result<FitTrace> {
    let mut trace = FitTrace {
        iterations,
        ..Default::default()
    };
    let views = objective.view_count();
    if iterations == 0 || views == 0 {
        return Ok(trace);
    }
    let mut best = objective.mean_loss(state)?;
    trace.losses.push(best);
    let mut accepted = state.clone();
    let mut optimizers: Vec<Adam> = state
        .blocks_mut()
        .iter()
        .zip(rates)
        .map(|(b, &lr)| Adam::new(b.len(), lr))
        .collect();

    let mut it = 0;
    while it < iterations {
        let epoch_end = (it + views).min(iterations);
        while it < epoch_end {
            let (_, grads) = objective.loss_and_grad(state, it % views)?;
            for ((block, opt), grad) in state.blocks_mut().into_iter().zip(&mut optimizers).zip(&grads) {
                opt.step(block, grad);
            }
            state.after_step();
            it += 1;
        }
        let loss = objective.mean_loss(state)?;
        if loss <= best {
            best = loss;
            accepted = state.clone();
        } else {
            *state = accepted.clone();
            trace.backoffs += 1;
            for opt in &mut optimizers {
                opt.lr *= 0.5;
                opt.reset();
            }
        }
        trace.losses.push(best);
    }
    Ok(trace)
}
