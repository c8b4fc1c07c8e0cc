//! The fused sampling step and the full sampling loop.
//!
//! Each step runs the reference model on every view of the current canvas and
//! then picks the canvas that best agrees with all of the per-view results in
//! the weighted least-squares sense:
//!
//! ```text
//! loss(J) = sum_i || sqrt(W_i) * (F_i(J) - target_i) ||^2
//! ```
//!
//! For pixel-sampling views the minimizer is the per-pixel weighted average
//! of every target that covers the pixel, which is what [`fuse`] computes.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::denoiser::{phi_step, Condition, Registry};
use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::mapping::{BootstrapContext, ViewMap};
use crate::rng::{SeedStreams, Stream};
use crate::schedule::{NoiseSchedule, StepMode};

/// Largest canvas (in scalars) [`oracle_minimize`] accepts.
pub const ORACLE_MAX_ENTRIES: usize = 1 << 16;
/// Gradient norm below which [`oracle_minimize`] counts as converged.
pub const ORACLE_GRAD_TOL: f64 = 1e-6;
pub const DEFAULT_BATCH_SIZE: usize = 8;

/// How ancestral noise is supplied to overlapping views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoisePolicy {
    /// One canvas-sized draw per step; each view reads its own window of it.
    #[default]
    SharedCanvas,
    /// Independent draws for every view and step.
    PerView,
}

impl FromStr for NoisePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" | "shared_canvas" => Ok(NoisePolicy::SharedCanvas),
            "per_view" => Ok(NoisePolicy::PerView),
            other => Err(Error::Parameter(format!(
                "unknown noise policy `{other}` (expected shared_canvas|per_view)"
            ))),
        }
    }
}

impl fmt::Display for NoisePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoisePolicy::SharedCanvas => "shared_canvas",
            NoisePolicy::PerView => "per_view",
        })
    }
}

/// One view of a plan and the condition its reference-model call receives.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanView {
    pub view: ViewMap,
    pub condition: Condition,
}

impl PlanView {
    pub fn new(view: ViewMap, condition: impl Into<Condition>) -> Self {
        Self {
            view,
            condition: condition.into(),
        }
    }
}

/// Everything that defines one fused generation process.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionPlan {
    height: usize,
    width: usize,
    channels: usize,
    views: Vec<PlanView>,
    noise_policy: NoisePolicy,
    mode: StepMode,
    seed: u64,
    batch_size: usize,
}

impl FusionPlan {
    /// Validates every view against the canvas and checks that every canvas
    /// pixel receives positive total weight.
    pub fn new(height: usize, width: usize, channels: usize, views: Vec<PlanView>) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::Plan("a plan needs at least one view".into()));
        }
        LatentGrid::zeros(height, width, channels)?;
        for (i, pv) in views.iter().enumerate() {
            pv.view
                .validate(height, width)
                .map_err(|e| Error::Plan(format!("view {i}: {e}")))?;
        }
        let plan = Self {
            height,
            width,
            channels,
            views,
            noise_policy: NoisePolicy::default(),
            mode: StepMode::default(),
            seed: 0,
            batch_size: DEFAULT_BATCH_SIZE,
        };
        plan.check_coverage()?;
        Ok(plan)
    }

    pub fn with_mode(mut self, mode: StepMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_noise_policy(mut self, policy: NoisePolicy) -> Self {
        self.noise_policy = policy;
        self
    }

    /// Views whose reference-model calls are issued together; at least 1.
    pub fn with_batch_size(mut self, batch: usize) -> Self {
        self.batch_size = batch.max(1);
        self
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn views(&self) -> &[PlanView] {
        &self.views
    }

    pub fn mode(&self) -> StepMode {
        self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn noise_policy(&self) -> NoisePolicy {
        self.noise_policy
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Sum of all view weights scattered onto the canvas (one channel).
    pub fn total_weight(&self) -> LatentGrid {
        let mut den = LatentGrid::zeros(self.height, self.width, 1).expect("validated dims");
        let d = den.data_mut();
        for pv in &self.views {
            for (p, _, w) in pv.view.pixel_pairs(self.height, self.width) {
                d[p] += w;
            }
        }
        den
    }

    fn check_coverage(&self) -> Result<()> {
        let den = self.total_weight();
        match den.data().iter().position(|&w| w <= 0.0) {
            Some(p) => Err(Error::Coverage {
                row: p / self.width,
                col: p % self.width,
            }),
            None => Ok(()),
        }
    }

    /// Fails with the first token the registry cannot resolve.
    pub fn check_tokens(&self, registry: &Registry) -> Result<()> {
        for pv in &self.views {
            registry.get(&pv.condition)?;
        }
        Ok(())
    }

    fn reference_dims(&self, i: usize) -> (usize, usize, usize) {
        let (_, _, h, w) = self.views[i].view.footprint(self.height, self.width);
        (h, w, self.channels)
    }
}

/// The condition handed to the reference model for view `index`.
pub fn lambda_map(plan: &FusionPlan, index: usize) -> Result<&Condition> {
    plan.views
        .get(index)
        .map(|pv| &pv.condition)
        .ok_or_else(|| Error::range("view index", format!("{index} of {}", plan.views.len())))
}

fn check_targets(plan: &FusionPlan, targets: &[LatentGrid]) -> Result<()> {
    if targets.len() != plan.views.len() {
        return Err(Error::Shape(format!(
            "{} targets for {} views",
            targets.len(),
            plan.views.len()
        )));
    }
    for (i, t) in targets.iter().enumerate() {
        if t.dims() != plan.reference_dims(i) {
            return Err(Error::Shape(format!(
                "target {i} is {:?}, view extent is {:?}",
                t.dims(),
                plan.reference_dims(i)
            )));
        }
    }
    Ok(())
}

/// Per-view weighted residual norms `||sqrt(W_i) * (F_i(J) - target_i)||`.
pub fn residual_norms(
    plan: &FusionPlan,
    canvas: &LatentGrid,
    targets: &[LatentGrid],
) -> Result<Vec<f64>> {
    check_targets(plan, targets)?;
    if canvas.dims() != plan.dims() {
        return Err(Error::Shape(format!(
            "canvas {:?} for plan {:?}",
            canvas.dims(),
            plan.dims()
        )));
    }
    let c = plan.channels;
    Ok(plan
        .views
        .iter()
        .zip(targets)
        .map(|(pv, target)| {
            let mut sum = 0.0f64;
            for (p, q, w) in pv.view.pixel_pairs(plan.height, plan.width) {
                if w == 0.0 {
                    continue;
                }
                for k in 0..c {
                    let d = canvas.data()[p * c + k] as f64 - target.data()[q * c + k] as f64;
                    sum += w as f64 * d * d;
                }
            }
            sum.sqrt()
        })
        .collect())
}

/// The fused-step objective evaluated at `canvas`.
pub fn ftd_loss(plan: &FusionPlan, canvas: &LatentGrid, targets: &[LatentGrid]) -> Result<f64> {
    Ok(residual_norms(plan, canvas, targets)?
        .iter()
        .map(|r| r * r)
        .sum())
}

/// Closed-form minimizer of [`ftd_loss`]: the weighted per-pixel average of all targets.
///
/// Views are accumulated in ascending index order, so results are bit-reproducible.
pub fn fuse(plan: &FusionPlan, targets: &[LatentGrid]) -> Result<LatentGrid> {
    check_targets(plan, targets)?;
    let (h, w, c) = plan.dims();
    let mut num = LatentGrid::zeros(h, w, c)?;
    let mut den = LatentGrid::zeros(h, w, 1)?;
    for (pv, target) in plan.views.iter().zip(targets) {
        pv.view.scatter_accumulate(target, &mut num, &mut den)?;
    }
    for (p, &d) in den.data().iter().enumerate() {
        if d <= 0.0 {
            return Err(Error::Coverage {
                row: p / w,
                col: p % w,
            });
        }
        for v in &mut num.data_mut()[p * c..(p + 1) * c] {
            *v /= d;
        }
    }
    if !num.is_finite() {
        return Err(Error::NonFinite("fuse".into()));
    }
    Ok(num)
}

/// Minimizes [`ftd_loss`] by plain gradient descent from the zero canvas.
///
/// Meant as a brute-force check of [`fuse`] on small plans; canvases above
/// [`ORACLE_MAX_ENTRIES`] scalars are rejected.
pub fn oracle_minimize(
    plan: &FusionPlan,
    targets: &[LatentGrid],
    iters: usize,
    rate: f64,
) -> Result<LatentGrid> {
    check_targets(plan, targets)?;
    let (h, w, c) = plan.dims();
    if h * w * c > ORACLE_MAX_ENTRIES {
        return Err(Error::Parameter(format!(
            "oracle is limited to {ORACLE_MAX_ENTRIES} scalars, canvas has {}",
            h * w * c
        )));
    }
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::Parameter(format!(
            "learning rate {rate} must be > 0"
        )));
    }
    let pairs: Vec<Vec<(usize, usize, f64)>> = plan
        .views
        .iter()
        .map(|pv| {
            pv.view
                .pixel_pairs(h, w)
                .filter(|&(_, _, wt)| wt != 0.0)
                .map(|(p, q, wt)| (p, q, wt as f64))
                .collect()
        })
        .collect();
    let mut x = vec![0.0f64; h * w * c];
    let mut grad = vec![0.0f64; h * w * c];
    let gradient = |x: &[f64], grad: &mut [f64]| {
        grad.fill(0.0);
        for (view_pairs, target) in pairs.iter().zip(targets) {
            for &(p, q, wt) in view_pairs {
                for k in 0..c {
                    grad[p * c + k] += 2.0 * wt * (x[p * c + k] - target.data()[q * c + k] as f64);
                }
            }
        }
        grad.iter().map(|g| g * g).sum::<f64>().sqrt()
    };
    for _ in 0..iters {
        gradient(&x, &mut grad);
        for (xi, gi) in x.iter_mut().zip(&grad) {
            *xi -= rate * gi;
        }
    }
    let grad_norm = gradient(&x, &mut grad);
    if grad_norm.is_nan() || grad_norm > ORACLE_GRAD_TOL {
        return Err(Error::Convergence { grad_norm, iters });
    }
    LatentGrid::from_vec(h, w, c, x.into_iter().map(|v| v as f32).collect())
}

/// Diagnostics for one fused step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub t: usize,
    /// Objective value at the returned canvas.
    pub ftd_loss: f64,
    pub residuals: Vec<f64>,
}

impl StepReport {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub image: LatentGrid,
    pub reports: Vec<StepReport>,
}

/// Drives one fused generation run. Holds the resolved per-run randomness.
#[derive(Debug)]
pub struct Sampler<'a> {
    plan: &'a FusionPlan,
    schedule: &'a NoiseSchedule,
    registry: &'a Registry,
    streams: SeedStreams,
    random_color: Vec<f32>,
}

impl<'a> Sampler<'a> {
    pub fn new(
        plan: &'a FusionPlan,
        schedule: &'a NoiseSchedule,
        registry: &'a Registry,
    ) -> Result<Self> {
        plan.check_tokens(registry)?;
        let streams = SeedStreams::new(plan.seed);
        let mut rng = streams.rng(Stream::BackgroundColor);
        let random_color = (0..plan.channels).map(|_| rng.random::<f32>()).collect();
        Ok(Self {
            plan,
            schedule,
            registry,
            streams,
            random_color,
        })
    }

    /// The background colour bootstrapped views with a random source use in this run.
    pub fn random_color(&self) -> &[f32] {
        &self.random_color
    }

    /// `J_T`: i.i.d. standard normal over the whole canvas.
    pub fn initial_noise(&self) -> Result<LatentGrid> {
        let (h, w, c) = self.plan.dims();
        self.streams.normal_grid(Stream::InitNoise, h, w, c)
    }

    /// Reference-model outputs of every view at step `t`, in view order.
    pub fn view_targets(&self, canvas: &LatentGrid, t: usize) -> Result<Vec<LatentGrid>> {
        self.schedule.check_step(t)?;
        let (h, w, c) = self.plan.dims();
        if canvas.dims() != (h, w, c) {
            return Err(Error::Shape(format!(
                "canvas {:?} for plan {:?}",
                canvas.dims(),
                self.plan.dims()
            )));
        }
        let ancestral = self.plan.mode == StepMode::Ancestral && t > 1;
        let shared_noise = if ancestral && self.plan.noise_policy == NoisePolicy::SharedCanvas {
            Some(self.streams.normal_grid(Stream::StepNoise { t }, h, w, c)?)
        } else {
            None
        };
        let bootstrapping = self.plan.views.iter().any(|pv| pv.view.is_bootstrapping(t));
        let background_eps = if bootstrapping {
            Some(
                self.streams
                    .normal_grid(Stream::BackgroundNoise { t }, h, w, c)?,
            )
        } else {
            None
        };
        let ctx = background_eps.as_ref().map(|epsilon| BootstrapContext {
            schedule: self.schedule,
            random_color: &self.random_color,
            epsilon,
        });

        let target = |i: usize| -> Result<LatentGrid> {
            let pv = &self.plan.views[i];
            let input = pv.view.extract(canvas, t, ctx.as_ref())?;
            let z = match (ancestral, &shared_noise) {
                (false, _) => None,
                (true, Some(noise)) => Some(pv.view.restrict(noise)?),
                (true, None) => {
                    let (rh, rw, rc) = self.plan.reference_dims(i);
                    Some(
                        self.streams
                            .normal_grid(Stream::ViewNoise { t, view: i }, rh, rw, rc)?,
                    )
                }
            };
            phi_step(
                self.registry,
                self.schedule,
                &input,
                t,
                &pv.condition,
                self.plan.mode,
                z.as_ref(),
            )
        };

        let n = self.plan.views.len();
        let mut targets = Vec::with_capacity(n);
        for start in (0..n).step_by(self.plan.batch_size) {
            let end = (start + self.plan.batch_size).min(n);
            let batch: Vec<Result<LatentGrid>> = (start..end).into_par_iter().map(target).collect();
            for out in batch {
                targets.push(out?);
            }
        }
        Ok(targets)
    }

    /// One fused step `J_t -> J_{t-1}`.
    pub fn step(&self, canvas: &LatentGrid, t: usize) -> Result<(LatentGrid, StepReport)> {
        let targets = self.view_targets(canvas, t)?;
        let next = fuse(self.plan, &targets)?;
        let residuals = residual_norms(self.plan, &next, &targets)?;
        let ftd_loss = residuals.iter().map(|r| r * r).sum();
        Ok((
            next,
            StepReport {
                t,
                ftd_loss,
                residuals,
            },
        ))
    }

    /// Runs `t = T..=1` from the given starting canvas.
    pub fn run_from(&self, start: LatentGrid) -> Result<SampleOutput> {
        let mut canvas = start;
        let mut reports = Vec::with_capacity(self.schedule.steps());
        for t in (1..=self.schedule.steps()).rev() {
            let (next, report) = self.step(&canvas, t)?;
            canvas = next;
            reports.push(report);
        }
        Ok(SampleOutput {
            image: canvas,
            reports,
        })
    }

    pub fn run(&self) -> Result<SampleOutput> {
        self.run_from(self.initial_noise()?)
    }
}

/// Full fused sampling from seeded initial noise.
pub fn multidiffusion_sample(
    plan: &FusionPlan,
    schedule: &NoiseSchedule,
    registry: &Registry,
) -> Result<SampleOutput> {
    Sampler::new(plan, schedule, registry)?.run()
}
