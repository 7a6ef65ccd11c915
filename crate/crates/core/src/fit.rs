//! The encoder: fits a [`GaussianSet`] to a target image.
//!
//! Training starts from `budget / 2` Gaussians placed by the gradient-aware
//! initialization distribution, then minimizes the mean L1 error on pixels
//! drawn from the optimization distribution every iteration. After
//! `warmup_iters` iterations, and then every `densify_interval`, another
//! `budget / 8` Gaussians are spawned where the current reconstruction error
//! is largest, four times in total. The state just before each addition and
//! the final state form a level-of-detail stack.

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::{adam_step, AdamState, LearningRates};
use crate::error::{Error, Result};
use crate::gaussian::{Gaussian2D, GaussianSet, SCALE_MAX, SCALE_MIN};
use crate::metrics::{psnr, ssim, SSIM_WINDOW};
use crate::raster::{ImageBuffer, PixelCoord};
use crate::render::{Renderer, DEFAULT_K};
use crate::sampling::{add_distribution, init_distribution, opt_distribution, SamplingDistribution};

/// Number of densification rounds after the initial half of the budget.
pub const DENSIFY_ROUNDS: usize = 4;

/// A PSNR gain below this does not count as improvement.
pub const PLATEAU_MIN_GAIN_DB: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Target Gaussian count.
    pub budget: usize,
    pub k: usize,
    pub lambda_init: f64,
    pub lambda_opt: f64,
    pub iterations: usize,
    pub samples_per_iter: usize,
    pub lr: LearningRates,
    pub eval_interval: usize,
    pub plateau_patience: usize,
    /// Multiplier applied to every learning rate, at most once.
    pub lr_decay: f64,
    pub warmup_iters: usize,
    pub densify_interval: usize,
    pub seed: u64,
}

impl FitConfig {
    pub fn new(budget: usize) -> Self {
        Self {
            budget,
            k: DEFAULT_K,
            lambda_init: 0.3,
            lambda_opt: 0.8,
            iterations: 50_000,
            samples_per_iter: 10_000,
            lr: LearningRates::default(),
            eval_interval: 1_000,
            plateau_patience: 3,
            lr_decay: 0.1,
            warmup_iters: 10_000,
            densify_interval: 5_000,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.budget < 8 {
            return fail(format!("budget must be at least 8, got {}", self.budget));
        }
        if self.k == 0 {
            return fail("k must be at least 1".into());
        }
        for (name, v) in [("lambda_init", self.lambda_init), ("lambda_opt", self.lambda_opt)] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.samples_per_iter == 0 || self.eval_interval == 0 || self.densify_interval == 0 {
            return fail("samples_per_iter, eval_interval and densify_interval must be positive".into());
        }
        if self.plateau_patience == 0 {
            return fail("plateau_patience must be positive".into());
        }
        if !self.lr.all_positive() {
            return fail(format!("learning rates must be positive, got {:?}", self.lr));
        }
        if !(self.lr_decay.is_finite() && self.lr_decay > 0.0) {
            return fail(format!("lr_decay must be positive, got {}", self.lr_decay));
        }
        Ok(())
    }

    pub fn initial_count(&self) -> usize {
        self.budget / 2
    }

    pub fn densify_count(&self) -> usize {
        self.budget / 8
    }

    /// Count after every densification round has run.
    pub fn final_count(&self) -> usize {
        self.initial_count() + DENSIFY_ROUNDS * self.densify_count()
    }

    /// Completed-iteration counts at which Gaussians are added, limited to
    /// those that leave at least one training step afterwards.
    pub fn densify_schedule(&self) -> Vec<usize> {
        (0..DENSIFY_ROUNDS)
            .map(|m| self.warmup_iters + m * self.densify_interval)
            .filter(|&it| it < self.iterations)
            .collect()
    }
}

/// One evaluation of the full-resolution reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub iteration: usize,
    pub count: usize,
    /// Mean per-pixel L1 error (summed over RGB) of the full render.
    pub loss: f64,
    pub psnr: f64,
    /// `None` when the image is smaller than the SSIM window.
    pub ssim: Option<f64>,
    pub best_psnr: f64,
    pub lr_scale: f64,
}

impl fmt::Display for EvalRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "eval iter={} count={} loss={:.9} psnr={:.6} ssim={} best_psnr={:.6} lr_scale={}",
            self.iteration,
            self.count,
            self.loss,
            self.psnr,
            self.ssim.map_or("na".to_string(), |s| format!("{s:.6}")),
            self.best_psnr,
            self.lr_scale
        )
    }
}

/// A snapshot handed to the observer at each level of detail.
#[derive(Debug, Clone)]
pub struct Checkpoint<'a> {
    pub stage: usize,
    pub iteration: usize,
    pub set: &'a GaussianSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointInfo {
    pub stage: usize,
    pub iteration: usize,
    pub count: usize,
}

impl CheckpointInfo {
    /// Stable identifier, also used as the file stem for LoD outputs.
    pub fn id(&self) -> String {
        format!("lod{}_n{}", self.stage, self.count)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitReport {
    pub history: Vec<EvalRecord>,
    pub checkpoints: Vec<CheckpointInfo>,
    /// Iteration at which the learning rates were decayed, if they were.
    pub lr_decayed_at: Option<usize>,
}

impl FitReport {
    pub fn final_record(&self) -> Option<&EvalRecord> {
        self.history.last()
    }

    /// Line-oriented log: one `eval` record per evaluation, interleaved with
    /// `decay` and `lod` events in the order they happened.
    pub fn to_log(&self) -> String {
        let mut events: Vec<(usize, u8, String)> =
            self.history.iter().map(|r| (r.iteration, 0, r.to_string())).collect();
        if let Some(it) = self.lr_decayed_at {
            events.push((it, 1, format!("decay iter={it}")));
        }
        for c in &self.checkpoints {
            events.push((
                c.iteration,
                2,
                format!("lod id={} stage={} iter={} count={}", c.id(), c.stage, c.iteration, c.count),
            ));
        }
        events.sort_by_key(|e| (e.0, e.1));
        let mut out = String::new();
        for (_, _, line) in events {
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}

/// Hooks into the training loop.
pub trait FitObserver {
    fn on_eval(&mut self, _record: &EvalRecord) {}

    fn on_checkpoint(&mut self, _checkpoint: &Checkpoint<'_>) -> Result<()> {
        Ok(())
    }
}

impl FitObserver for () {}

/// Scale given to freshly spawned Gaussians: two pixels of the longer side.
pub fn default_scale(width: usize, height: usize) -> f64 {
    (2.0 / width.max(height) as f64).clamp(SCALE_MIN, SCALE_MAX)
}

fn spawn(img: &ImageBuffer, dist: &SamplingDistribution, count: usize, rng: &mut impl Rng) -> Result<Vec<Gaussian2D>> {
    let sampler = dist.sampler()?;
    let s = default_scale(img.width(), img.height());
    Ok((0..count)
        .map(|_| {
            let idx = sampler.sample_index(rng);
            let x = sampler.coord(idx);
            Gaussian2D::new([x.u, x.v], 0.0, [s, s], img.pixel_at(idx))
        })
        .collect())
}

/// Places `count` Gaussians at pixels drawn from the initialization
/// distribution, each carrying its pixel's color.
pub fn initialize_set(img: &ImageBuffer, count: usize, config: &FitConfig, rng: &mut impl Rng) -> Result<GaussianSet> {
    if count == 0 {
        return Err(Error::InvalidParameter("initial count must be at least 1".into()));
    }
    let dist = init_distribution(img, config.lambda_init)?;
    spawn(img, &dist, count, rng).map(GaussianSet::new)
}

/// Fits with no observer.
pub fn fit(img: &ImageBuffer, config: &FitConfig) -> Result<(GaussianSet, FitReport)> {
    fit_with(img, config, &mut ())
}

struct Trainer<'a> {
    img: &'a ImageBuffer,
    config: &'a FitConfig,
    report: FitReport,
    best_psnr: f64,
    stale: usize,
    lr_scale: f64,
}

impl Trainer<'_> {
    fn evaluate(&mut self, set: &GaussianSet, iteration: usize) -> Result<(EvalRecord, ImageBuffer)> {
        let (w, h) = (self.img.width(), self.img.height());
        let render = Renderer::new(set)?.render_image(w, h, self.config.k)?;
        let p = psnr(&render, self.img)?;
        let s = if w.min(h) >= SSIM_WINDOW { Some(ssim(&render, self.img)?) } else { None };
        let l1: f64 = render.data().iter().zip(self.img.data()).map(|(a, b)| (a - b).abs()).sum();

        if p >= self.best_psnr + PLATEAU_MIN_GAIN_DB {
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.best_psnr = self.best_psnr.max(p);
        if self.stale >= self.config.plateau_patience && self.report.lr_decayed_at.is_none() {
            self.lr_scale = self.config.lr_decay;
            self.report.lr_decayed_at = Some(iteration);
        }
        let record = EvalRecord {
            iteration,
            count: set.len(),
            loss: l1 / self.img.pixel_count() as f64,
            psnr: p,
            ssim: s,
            best_psnr: self.best_psnr,
            lr_scale: self.lr_scale,
        };
        self.report.history.push(record.clone());
        Ok((record, render))
    }
}

/// Runs the full training schedule, reporting evaluations and LoD
/// checkpoints to `observer`.
pub fn fit_with<O: FitObserver + ?Sized>(
    img: &ImageBuffer,
    config: &FitConfig,
    observer: &mut O,
) -> Result<(GaussianSet, FitReport)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let opt_sampler = opt_distribution(img, config.lambda_opt)?.sampler()?;
    let mut set = initialize_set(img, config.initial_count(), config, &mut rng)?;
    let mut state = AdamState::new(set.len());
    let schedule = config.densify_schedule();

    let mut trainer =
        Trainer { img, config, report: FitReport::default(), best_psnr: f64::NEG_INFINITY, stale: 0, lr_scale: 1.0 };
    let mut last_render: Option<(usize, ImageBuffer)> = None;
    let mut stage = 0;
    let n = config.samples_per_iter;
    let mut indices = Vec::with_capacity(n);
    let mut coords: Vec<PixelCoord> = Vec::with_capacity(n);

    for done in 0..config.iterations {
        if schedule.contains(&done) {
            let render = match last_render.take() {
                Some((it, r)) if it == done => r,
                _ => Renderer::new(&set)?.render_image(img.width(), img.height(), config.k)?,
            };
            emit(observer, &mut trainer.report, Checkpoint { stage, iteration: done, set: &set })?;
            stage += 1;
            let dist = add_distribution(&render, img)?;
            set.extend(spawn(img, &dist, config.densify_count(), &mut rng)?);
            state.grow(set.len());
        }

        opt_sampler.sample_indices(n, &mut rng, &mut indices);
        coords.clear();
        coords.extend(indices.iter().map(|&i| opt_sampler.coord(i)));
        let inv_n = 1.0 / n as f64;
        let renderer = Renderer::new(&set)?;
        let (loss_sum, grads) = renderer.forward_backward(&coords, config.k, |i, c| {
            let t = img.pixel_at(indices[i]);
            let mut l = 0.0;
            let mut up = [0.0; 3];
            for ch in 0..3 {
                let d = c[ch] - t[ch];
                l += d.abs();
                up[ch] = if d > 0.0 {
                    inv_n
                } else if d < 0.0 {
                    -inv_n
                } else {
                    0.0
                };
            }
            Ok((l, up))
        })?;
        let loss = loss_sum * inv_n;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(done + 1));
        }
        let lr = config.lr.scaled(trainer.lr_scale);
        adam_step(&mut set, &grads, &mut state, &lr)?;

        let iteration = done + 1;
        if iteration % config.eval_interval == 0 || iteration == config.iterations {
            let (record, render) = trainer.evaluate(&set, iteration)?;
            observer.on_eval(&record);
            last_render = Some((iteration, render));
        }
    }
    if config.iterations == 0 {
        let (record, _) = trainer.evaluate(&set, 0)?;
        observer.on_eval(&record);
    }
    let last = Checkpoint { stage, iteration: config.iterations, set: &set };
    emit(observer, &mut trainer.report, last)?;
    Ok((set, trainer.report))
}

fn emit<O: FitObserver + ?Sized>(observer: &mut O, report: &mut FitReport, checkpoint: Checkpoint<'_>) -> Result<()> {
    report.checkpoints.push(CheckpointInfo {
        stage: checkpoint.stage,
        iteration: checkpoint.iteration,
        count: checkpoint.set.len(),
    });
    observer.on_checkpoint(&checkpoint)
}
