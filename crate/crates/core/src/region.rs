//! Region-controlled generation: one masked view per prompt, with an optional
//! bootstrapping phase that shows each region a noised flat background early on.

use crate::denoiser::{Condition, Registry};
use crate::error::{Error, Result};
use crate::fusion::{multidiffusion_sample, FusionPlan, PlanView};
use crate::grid::Mask;
use crate::mapping::{BackgroundSource, ViewMap};
use crate::metrics::{foreground_threshold, iou};
use crate::schedule::{NoiseSchedule, StepMode};

/// Fraction of the schedule spent bootstrapping when no explicit length is given.
pub const DEFAULT_BOOTSTRAP_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub mask: Mask,
    pub token: Condition,
    /// Background regions are generated like any other but are not scored.
    pub foreground: bool,
}

impl Region {
    pub fn new(mask: Mask, token: impl Into<Condition>) -> Self {
        Self {
            mask,
            token: token.into(),
            foreground: true,
        }
    }

    pub fn background(mask: Mask, token: impl Into<Condition>) -> Self {
        Self {
            foreground: false,
            ..Self::new(mask, token)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub regions: Vec<Region>,
    pub bootstrap: bool,
    /// Number of initial steps that bootstrap; `None` means 20% of the schedule.
    pub t_init: Option<usize>,
    pub background: BackgroundSource,
}

impl RegionSpec {
    /// Empty spec with bootstrapping on and a random background colour.
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            regions: Vec::new(),
            bootstrap: true,
            t_init: None,
            background: BackgroundSource::Random,
        }
    }

    pub fn with_region(mut self, region: Region) -> Self {
        self.regions.push(region);
        self
    }

    /// Adds a background region covering every pixel no foreground region covers.
    pub fn with_background_region(mut self, token: impl Into<Condition>) -> Result<Self> {
        let covered = self.foreground_union()?;
        self.regions
            .push(Region::background(covered.complement(), token));
        Ok(self)
    }

    pub fn with_bootstrap(mut self, on: bool) -> Self {
        self.bootstrap = on;
        self
    }

    pub fn with_t_init(mut self, steps: usize) -> Self {
        self.t_init = Some(steps);
        self
    }

    pub fn with_background_source(mut self, source: BackgroundSource) -> Self {
        self.background = source;
        self
    }

    fn foreground_union(&self) -> Result<Mask> {
        let mut acc = Mask::filled(self.height, self.width, false)?;
        for r in self.regions.iter().filter(|r| r.foreground) {
            acc = acc.union(&r.mask)?;
        }
        Ok(acc)
    }

    /// Bootstrapping length for a schedule of `steps`, checked against it.
    pub fn resolved_t_init(&self, steps: usize) -> Result<usize> {
        let t_init = self
            .t_init
            .unwrap_or_else(|| (steps as f64 * DEFAULT_BOOTSTRAP_FRACTION).round() as usize);
        if t_init > steps {
            return Err(Error::range(
                "t_init",
                format!("{t_init} exceeds the schedule length {steps}"),
            ));
        }
        Ok(t_init)
    }
}

/// One masked view per region, weighted by its mask.
///
/// With bootstrapping on, each view sees a noised constant background outside
/// its mask for the first `t_init` of the `steps` sampling steps.
pub fn build_region_plan(spec: &RegionSpec, steps: usize) -> Result<FusionPlan> {
    if spec.regions.is_empty() {
        return Err(Error::Plan(
            "a region spec needs at least one region".into(),
        ));
    }
    let t_init = spec.resolved_t_init(steps)?;
    let threshold = steps - t_init;
    let mut views = Vec::with_capacity(spec.regions.len());
    for (i, r) in spec.regions.iter().enumerate() {
        if (r.mask.height(), r.mask.width()) != (spec.height, spec.width) {
            return Err(Error::Shape(format!(
                "region {i} mask is {}x{}, canvas is {}x{}",
                r.mask.height(),
                r.mask.width(),
                spec.height,
                spec.width
            )));
        }
        let view = if spec.bootstrap {
            ViewMap::bootstrapped(r.mask.clone(), threshold, spec.background.clone())
        } else {
            ViewMap::masked_identity(r.mask.clone())
        };
        views.push(PlanView::new(view, r.token.clone()));
    }
    FusionPlan::new(spec.height, spec.width, spec.channels, views)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    /// Mean foreground IoU per seed, with bootstrapping.
    pub bootstrapped: Vec<f64>,
    /// Mean foreground IoU per seed, without bootstrapping.
    pub plain: Vec<f64>,
}

impl AblationReport {
    pub fn mean_bootstrapped(&self) -> f64 {
        mean(&self.bootstrapped)
    }

    pub fn mean_plain(&self) -> f64 {
        mean(&self.plain)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Generates every seed with and without bootstrapping and scores how well each
/// foreground region's colour lands inside its mask.
pub fn run_region_ablation(
    spec: &RegionSpec,
    schedule: &NoiseSchedule,
    registry: &Registry,
    mode: StepMode,
    seeds: &[u64],
    tol: f32,
) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::Parameter("ablation needs at least one seed".into()));
    }
    let scored: Vec<(&Mask, Vec<f32>)> = spec
        .regions
        .iter()
        .filter(|r| r.foreground)
        .map(|r| Ok((&r.mask, registry.color(&r.token)?)))
        .collect::<Result<_>>()?;
    if scored.is_empty() {
        return Err(Error::Parameter(
            "ablation needs a foreground region".into(),
        ));
    }
    let on =
        build_region_plan(&spec.clone().with_bootstrap(true), schedule.steps())?.with_mode(mode);
    let off =
        build_region_plan(&spec.clone().with_bootstrap(false), schedule.steps())?.with_mode(mode);
    let score = |plan: &FusionPlan, seed: u64| -> Result<f64> {
        let image = multidiffusion_sample(&plan.clone().with_seed(seed), schedule, registry)?.image;
        let mut total = 0.0;
        for (mask, color) in &scored {
            total += iou(&foreground_threshold(&image, color, tol)?, mask)?;
        }
        Ok(total / scored.len() as f64)
    };
    let mut report = AblationReport {
        seeds: seeds.to_vec(),
        bootstrapped: Vec::with_capacity(seeds.len()),
        plain: Vec::with_capacity(seeds.len()),
    };
    for &seed in seeds {
        report.bootstrapped.push(score(&on, seed)?);
        report.plain.push(score(&off, seed)?);
    }
    Ok(report)
}
