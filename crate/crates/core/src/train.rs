//! Physics-informed training of the INR.
//!
//! Each epoch renders the training grid, pushes the image through the
//! forward operator, scores the CSI residual with the unsquared ℓ₂ norm plus
//! an ℓ₁ sparsity term, and takes one clipped Adam step on the network
//! weights. The learning rate halves when the loss plateaus and training
//! stops once it has not improved for `stop_patience` epochs.

use std::io::{Read, Write};
use std::path::Path as FsPath;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::binfmt::{self, Reader, Writer};
use crate::error::{Divergence, Error, Result};
use crate::forward::ForwardOperator;
use crate::inr::{Gradients, InrModel, MlpParams};
use crate::metrics;
use crate::scene::{ImageGrid, Scene};

pub const STATE_MAGIC: &[u8; 4] = b"RIST";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub lr: f64,
    /// Epochs without improvement before the learning rate is reduced.
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    /// Epochs without improvement before training stops.
    pub stop_patience: usize,
    /// Loss must drop below `best · (1 - improvement)` to count.
    pub improvement: f64,
    pub clip_norm: f64,
    /// Sparsity weight α.
    pub alpha: f64,
    /// Interpret `alpha` in units of `‖y - b‖₂ / (N_v σ_max)`, so the same
    /// value means the same trade-off at any power level or grid size.
    pub alpha_relative: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 5000,
            lr: 1e-3,
            plateau_patience: 50,
            plateau_factor: 0.5,
            stop_patience: 200,
            improvement: 1e-4,
            clip_norm: 2.0,
            alpha: 0.0,
            alpha_relative: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || !(self.lr > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::invalid("max_epochs, lr and clip_norm must be positive"));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::invalid("plateau_factor must lie in (0, 1)"));
        }
        if !(self.alpha >= 0.0) || !(self.improvement >= 0.0) {
            return Err(Error::invalid("alpha and improvement must be non-negative"));
        }
        Ok(())
    }

    /// The absolute α used in the loss.
    pub fn effective_alpha(&self, op: &ForwardOperator, y: ArrayView1<Complex64>, sigma_max: f64) -> f64 {
        if !self.alpha_relative || self.alpha == 0.0 {
            return self.alpha;
        }
        let scale = (&y - op.offset()).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        self.alpha * scale / (op.n_pixels() as f64 * sigma_max)
    }
}

/// Loss value and the residual it was computed from.
#[derive(Clone, Debug)]
pub struct PhysicsLoss {
    pub value: f64,
    pub data_term: f64,
    pub reg_term: f64,
    pub alpha: f64,
    pub residual: Array1<Complex64>,
}

impl PhysicsLoss {
    /// `∂L/∂σ̂ = Re(Aᴴ r) / ‖r‖ + α`. The data part is taken as zero at
    /// `r = 0`, and the ℓ₁ subgradient as `α` (σ̂ is positive).
    pub fn sigma_gradient(&self, op: &ForwardOperator) -> Array1<f64> {
        let mut g = if self.data_term > 0.0 {
            op.adjoint_real(self.residual.view()) / self.data_term
        } else {
            Array1::zeros(op.n_pixels())
        };
        g += self.alpha;
        g
    }
}

/// `L = ‖ŷ - y‖₂ + α ‖σ̂‖₁`.
pub fn physics_loss(
    y_hat: ArrayView1<Complex64>,
    y: ArrayView1<Complex64>,
    sigma_hat: ArrayView1<f64>,
    alpha: f64,
) -> Result<PhysicsLoss> {
    if y_hat.len() != y.len() {
        return Err(Error::invalid(format!("prediction has {} entries, measurements {}", y_hat.len(), y.len())));
    }
    let residual = &y_hat - &y;
    let data_term = residual.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let reg_term = alpha * sigma_hat.iter().map(|v| v.abs()).sum::<f64>();
    Ok(PhysicsLoss { value: data_term + reg_term, data_term, reg_term, alpha, residual })
}

/// Rescales `grads` so their global ℓ₂ norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_gradients(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Adam moments and step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Gradients,
    pub v: Gradients,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        Self {
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `params`.
pub fn adam_step(state: &mut AdamState, params: &mut MlpParams, grads: &Gradients, lr: f64) -> Result<()> {
    let same = |a: &Gradients| {
        a.layers.len() == params.layers.len()
            && a.layers.iter().zip(&params.layers).all(|(g, p)| g.w.dim() == p.w.dim() && g.b.len() == p.b.len())
    };
    if !same(grads) || !same(&state.m) {
        return Err(Error::invalid("gradient shapes do not match parameters"));
    }
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
    };
    for (((p, g), m), v) in params.layers.iter_mut().zip(&grads.layers).zip(&mut state.m.layers).zip(&mut state.v.layers) {
        ndarray::Zip::from(&mut p.w).and(&g.w).and(&mut m.w).and(&mut v.w).for_each(|p, &g, m, v| update(p, g, m, v));
        ndarray::Zip::from(&mut p.b).and(&g.b).and(&mut m.b).and(&mut v.b).for_each(|p, &g, m, v| update(p, g, m, v));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub data_term: f64,
    pub reg_term: f64,
    pub lr: f64,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

pub const HISTORY_HEADER: &str = "epoch,loss,data_term,reg_term,lr,psnr,ssim,wall_ms";

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// Zeroes the wall-clock column so histories compare byte for byte.
    pub fn clear_timings(&mut self) {
        for e in &mut self.epochs {
            e.wall_ms = 0.0;
        }
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// CSV with [`HISTORY_HEADER`]. Without `timing` the wall-clock column
    /// is written as 0 so that reruns are byte-identical.
    pub fn write_csv(&self, mut w: impl Write, timing: bool) -> Result<()> {
        writeln!(w, "{HISTORY_HEADER}")?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.epochs {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                e.epoch,
                e.loss,
                e.data_term,
                e.reg_term,
                e.lr,
                opt(e.psnr),
                opt(e.ssim),
                if timing { e.wall_ms } else { 0.0 }
            )?;
        }
        Ok(())
    }
}

/// Everything needed to continue an interrupted run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: InrModel,
    pub best_model: InrModel,
    pub best_loss: f64,
    pub best_epoch: usize,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    pub lr: f64,
    pub epochs_since_best: usize,
    pub epochs_since_lr_change: usize,
    pub finished: bool,
    pub history: TrainHistory,
}

impl TrainState {
    pub fn new(model: InrModel, cfg: &TrainConfig) -> Self {
        Self {
            adam: AdamState::new(&model.params),
            best_model: model.clone(),
            model,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            epoch: 0,
            lr: cfg.lr,
            epochs_since_best: 0,
            epochs_since_lr_change: 0,
            finished: false,
            history: TrainHistory::default(),
        }
    }

    pub fn save(&self, path: impl AsRef<FsPath>) -> Result<()> {
        let mut w = Writer::new(Vec::new());
        w.header(STATE_MAGIC, binfmt::FORMAT_VERSION)?;
        for v in [self.epoch, self.best_epoch, self.epochs_since_best, self.epochs_since_lr_change] {
            w.u64(v as u64)?;
        }
        w.f64(self.lr)?;
        w.f64(self.best_loss)?;
        w.u8(self.finished as u8)?;
        self.model.write_to(&mut w)?;
        self.best_model.write_to(&mut w)?;
        w.u64(self.adam.t)?;
        w.f64s(&[self.adam.beta1, self.adam.beta2, self.adam.eps])?;
        for v in self.adam.m.values().chain(self.adam.v.values()) {
            w.f64(v)?;
        }
        w.u64(self.history.epochs.len() as u64)?;
        for e in &self.history.epochs {
            w.u64(e.epoch as u64)?;
            w.f64s(&[e.loss, e.data_term, e.reg_term, e.lr, e.psnr.unwrap_or(f64::NAN), e.ssim.unwrap_or(f64::NAN), e.wall_ms])?;
        }
        binfmt::write_atomic(path.as_ref(), &w.finish()?)
    }

    pub fn load(path: impl AsRef<FsPath>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut r = Reader::new(bytes.as_slice());
        Self::read_from(&mut r)
    }

    fn read_from<R: Read>(r: &mut Reader<R>) -> Result<Self> {
        r.header(STATE_MAGIC, binfmt::FORMAT_VERSION)?;
        let epoch = r.length()?;
        let best_epoch = r.length()?;
        let epochs_since_best = r.length()?;
        let epochs_since_lr_change = r.length()?;
        let lr = r.f64()?;
        let best_loss = r.f64()?;
        let finished = r.u8()? != 0;
        let model = InrModel::read_from(r)?;
        let best_model = InrModel::read_from(r)?;
        let mut adam = AdamState::new(&model.params);
        adam.t = r.u64()?;
        adam.beta1 = r.f64()?;
        adam.beta2 = r.f64()?;
        adam.eps = r.f64()?;
        for g in [&mut adam.m, &mut adam.v] {
            for l in &mut g.layers {
                for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                    *v = r.f64()?;
                }
            }
        }
        let n = r.length()?;
        let mut epochs = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let epoch = r.length()?;
            let v = r.f64s(7)?;
            let opt = |x: f64| (!x.is_nan()).then_some(x);
            epochs.push(EpochRecord {
                epoch,
                loss: v[0],
                data_term: v[1],
                reg_term: v[2],
                lr: v[3],
                psnr: opt(v[4]),
                ssim: opt(v[5]),
                wall_ms: v[6],
            });
        }
        Ok(Self {
            model,
            best_model,
            best_loss,
            best_epoch,
            adam,
            epoch,
            lr,
            epochs_since_best,
            epochs_since_lr_change,
            finished,
            history: TrainHistory { epochs },
        })
    }
}

/// Result of a completed training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the lowest training loss.
    pub model: InrModel,
    pub history: TrainHistory,
    pub best_epoch: usize,
    pub best_loss: f64,
}

/// Inputs shared by every epoch of a run.
pub struct Problem<'a> {
    pub op: &'a ForwardOperator,
    pub y: ArrayView1<'a, Complex64>,
    pub grid: &'a ImageGrid,
    /// Ground truth for the diagnostic PSNR/SSIM columns.
    pub truth: Option<&'a Scene>,
}

impl Problem<'_> {
    fn check(&self, model: &InrModel) -> Result<()> {
        if (self.grid.rows, self.grid.cols) != (self.op.grid_rows, self.op.grid_cols) {
            return Err(Error::invalid(format!(
                "training grid {}x{} does not match operator grid {}x{}",
                self.grid.rows, self.grid.cols, self.op.grid_rows, self.op.grid_cols
            )));
        }
        if self.y.len() != self.op.n_measurements() {
            return Err(Error::invalid(format!(
                "{} measurements for an operator with {} rows",
                self.y.len(),
                self.op.n_measurements()
            )));
        }
        if let Some(t) = self.truth {
            if t.sigma.len() != self.grid.len() {
                return Err(Error::invalid("ground truth does not match training grid"));
            }
        }
        if model.encoding.width() != model.params.input_width() {
            return Err(Error::invalid("model encoding does not match network"));
        }
        Ok(())
    }
}

/// Loss and parameter gradients of the whole pipeline at the current model.
pub fn loss_and_gradients(
    model: &InrModel,
    encoded: &Array2<f64>,
    op: &ForwardOperator,
    y: ArrayView1<Complex64>,
    alpha: f64,
) -> Result<(PhysicsLoss, Array1<f64>, Gradients)> {
    let (sigma, cache) = model.params.forward(encoded);
    let y_hat = op.apply(sigma.view())?;
    let loss = physics_loss(y_hat.view(), y, sigma.view(), alpha)?;
    let dsigma = loss.sigma_gradient(op);
    let grads = model.params.backward(&cache, dsigma.view())?;
    Ok((loss, sigma, grads))
}

/// Continues `state` until early stopping triggers or `cfg.max_epochs`
/// epochs are complete, calling `on_epoch` after every epoch. A state that
/// only ran out of epochs can be continued with a larger budget.
pub fn run(
    state: &mut TrainState,
    problem: &Problem<'_>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&TrainState) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    problem.check(&state.model)?;
    let encoded = state.model.encode(&problem.grid.positions);
    let alpha = cfg.effective_alpha(problem.op, problem.y, state.model.params.output_scale);
    while !state.finished && state.epoch < cfg.max_epochs {
        let started = Instant::now();
        let (loss, sigma, mut grads) = loss_and_gradients(&state.model, &encoded, problem.op, problem.y, alpha)?;
        if !loss.value.is_finite() || grads.values().any(|g| !g.is_finite()) {
            return Err(Error::Diverged(Box::new(Divergence {
                epoch: state.epoch + 1,
                last_good: state.best_model.clone(),
            })));
        }

        let (psnr, ssim) = match problem.truth {
            Some(t) => {
                let s = sigma.as_slice().expect("contiguous");
                (
                    Some(metrics::psnr(s, &t.sigma, t.sigma_max)?),
                    Some(metrics::ssim(s, &t.sigma, t.sigma_max)?),
                )
            }
            None => (None, None),
        };

        if loss.value < state.best_loss * (1.0 - cfg.improvement) || !state.best_loss.is_finite() {
            state.best_loss = loss.value;
            state.best_model = state.model.clone();
            state.best_epoch = state.epoch + 1;
            state.epochs_since_best = 0;
            state.epochs_since_lr_change = 0;
        } else {
            state.epochs_since_best += 1;
            state.epochs_since_lr_change += 1;
        }
        let lr_used = state.lr;
        if state.epochs_since_lr_change >= cfg.plateau_patience && cfg.plateau_patience > 0 {
            state.lr *= cfg.plateau_factor;
            state.epochs_since_lr_change = 0;
        }

        clip_gradients(&mut grads, cfg.clip_norm);
        adam_step(&mut state.adam, &mut state.model.params, &grads, lr_used)?;
        state.epoch += 1;
        if state.epochs_since_best >= cfg.stop_patience {
            state.finished = true;
        }
        state.history.epochs.push(EpochRecord {
            epoch: state.epoch,
            loss: loss.value,
            data_term: loss.data_term,
            reg_term: loss.reg_term,
            lr: lr_used,
            psnr,
            ssim,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        on_epoch(state)?;
    }
    Ok(())
}

/// Trains `model` on `problem` from scratch and returns the best parameters.
pub fn train(model: InrModel, problem: &Problem<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut state = TrainState::new(model, cfg);
    run(&mut state, problem, cfg, |_| Ok(()))?;
    Ok(TrainOutcome {
        model: state.best_model,
        history: state.history,
        best_epoch: state.best_epoch,
        best_loss: state.best_loss,
    })
}

/// Evaluates the model on an arbitrary grid.
pub fn render(model: &InrModel, grid: &ImageGrid) -> Scene {
    let sigma = model.predict(&grid.positions);
    Scene { sigma: sigma.to_vec(), grid: grid.clone(), sigma_max: model.params.output_scale }
}
