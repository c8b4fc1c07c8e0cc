//! Run configuration and the end-to-end `run` entry point behind the binary.
//!
//! Configs are flat `key = value` files. Repeated groups use prefixes:
//!
//! ```text
//! command = region
//! steps = 50
//! token.sun.pattern = constant 1.0
//! token.sun.pull = 0.5
//! region.0.token = sun
//! region.0.disk = 16,16,8
//! region.1.token = ground
//! region.1.background = true
//! ```
//!
//! Command-line flags are turned into the same pairs and appended, so a flag
//! overrides the file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::denoiser::{Condition, GaussianDenoiser, Pattern, PatternDenoiser, Registry};
use crate::error::{Error, Result};
use crate::fusion::{
    multidiffusion_sample, FusionPlan, NoisePolicy, PlanView, SampleOutput, StepReport,
};
use crate::grid::{LatentGrid, Mask};
use crate::mapping::{BackgroundSource, ViewMap};
use crate::metrics::{foreground_threshold, iou, seam_score, Boundary};
use crate::panorama::{build_panorama_plan, PanoramaSpec, DEFAULT_STRIDE, DEFAULT_WINDOW};
use crate::pnm::{self, ImageMode};
use crate::region::{build_region_plan, run_region_ablation, Region, RegionSpec};
use crate::schedule::{NoiseSchedule, StepMode, DEFAULT_BETA_END, DEFAULT_BETA_START};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Panorama,
    Region,
    Sample,
    Ablate,
}

impl FromStr for CommandKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "panorama" => Ok(CommandKind::Panorama),
            "region" => Ok(CommandKind::Region),
            "sample" => Ok(CommandKind::Sample),
            "ablate" => Ok(CommandKind::Ablate),
            other => Err(Error::config(
                "command",
                format!("`{other}` is not one of panorama|region|sample|ablate"),
            )),
        }
    }
}

impl fmt::Display for CommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CommandKind::Panorama => "panorama",
            CommandKind::Region => "region",
            CommandKind::Sample => "sample",
            CommandKind::Ablate => "ablate",
        })
    }
}

/// How latent values are mapped to `[0, 1]` before quantization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecodeRange {
    /// Use the minimum and maximum of the decoded channels.
    Auto,
    Fixed {
        lo: f32,
        hi: f32,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TokenSpec {
    Pattern {
        pattern: Pattern,
        pull: f32,
        context: usize,
    },
    Gaussian {
        mean: Pattern,
        scale: f32,
    },
}

impl TokenSpec {
    fn register(&self, registry: &mut Registry, name: &str) -> Result<()> {
        match self {
            TokenSpec::Pattern {
                pattern,
                pull,
                context,
            } => registry.insert(
                name,
                PatternDenoiser::new(pattern.clone(), *pull)?.with_context(*context),
            ),
            TokenSpec::Gaussian { mean, scale } => {
                registry.insert(name, GaussianDenoiser::new(mean.clone(), *scale)?)
            }
        }
        Ok(())
    }
}

/// Tokens available without declaring them in a config.
pub fn builtin_tokens() -> BTreeMap<String, TokenSpec> {
    let pattern = |p: &str| TokenSpec::Pattern {
        pattern: p.parse().expect("built-in pattern"),
        pull: 0.5,
        context: 2,
    };
    BTreeMap::from([
        ("stripes".to_string(), pattern("stripes 8 rows")),
        ("columns".to_string(), pattern("stripes 8 cols")),
        ("white".to_string(), pattern("constant 1")),
        ("black".to_string(), pattern("constant 0")),
        (
            "gray".to_string(),
            TokenSpec::Gaussian {
                mean: Pattern::Constant(vec![0.5]),
                scale: 0.25,
            },
        ),
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub enum RegionShape {
    Rect {
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    },
    Disk {
        row: f32,
        col: f32,
        radius: f32,
    },
    File(PathBuf),
    /// Everything not covered by the other regions.
    Background,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionEntry {
    pub token: Condition,
    pub shape: RegionShape,
}

/// A fully validated run description.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: CommandKind,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub window: (usize, usize),
    pub stride: usize,
    pub prompt: Condition,
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub mode: StepMode,
    pub noise: NoisePolicy,
    pub seed: u64,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
    pub batch: usize,
    pub out: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub bootstrap: bool,
    pub t_init: Option<usize>,
    pub background: BackgroundSource,
    /// Number of consecutive seeds, starting at `seed`, used by `ablate`.
    pub seeds: usize,
    pub tol: f32,
    pub upscale: usize,
    pub decode: DecodeRange,
    pub tokens: BTreeMap<String, TokenSpec>,
    pub regions: Vec<RegionEntry>,
}

/// Splits config text into `(key, value)` pairs, keeping file order.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Format(format!(
                "line {}: expected `key = value`, got `{line}`",
                n + 1
            ))
        })?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

/// Parses and validates config text. Relative mask paths resolve against `base_dir`.
pub fn parse_config(text: &str, base_dir: Option<&Path>) -> Result<RunConfig> {
    RunConfig::from_pairs(&parse_pairs(text)?, base_dir)
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::config(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str, len: usize) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    let items: Vec<T> = value
        .split(',')
        .map(|s| parse_value(key, s.trim()))
        .collect::<Result<_>>()?;
    if items.len() != len {
        return Err(Error::config(
            key,
            format!("expected {len} comma-separated values, got `{value}`"),
        ));
    }
    Ok(items)
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::config(key, format!("`{value}` is not a boolean"))),
    }
}

fn positive(key: &str, value: &str) -> Result<usize> {
    match parse_value::<usize>(key, value)? {
        0 => Err(Error::Dimension(format!("`{key}` must be at least 1"))),
        n => Ok(n),
    }
}

#[derive(Default)]
struct RawToken {
    kind: Option<String>,
    pattern: Option<String>,
    pull: Option<String>,
    context: Option<String>,
    scale: Option<String>,
}

#[derive(Default)]
struct RawRegion {
    token: Option<String>,
    rect: Option<String>,
    disk: Option<String>,
    mask: Option<String>,
    background: Option<String>,
}

impl RunConfig {
    fn defaults(command: CommandKind) -> Self {
        Self {
            command,
            height: 64,
            width: if command == CommandKind::Panorama {
                576
            } else {
                64
            },
            channels: 4,
            window: (DEFAULT_WINDOW, DEFAULT_WINDOW),
            stride: DEFAULT_STRIDE,
            prompt: Condition::new("stripes"),
            steps: 50,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            mode: StepMode::Deterministic,
            noise: NoisePolicy::SharedCanvas,
            seed: 0,
            threads: 0,
            batch: crate::fusion::DEFAULT_BATCH_SIZE,
            out: None,
            report: None,
            metrics: None,
            bootstrap: true,
            t_init: None,
            background: BackgroundSource::Random,
            seeds: 10,
            tol: 0.25,
            upscale: 1,
            decode: DecodeRange::Auto,
            tokens: builtin_tokens(),
            regions: Vec::new(),
        }
    }

    /// Builds a config from ordered pairs; later pairs override earlier ones.
    pub fn from_pairs(pairs: &[(String, String)], base_dir: Option<&Path>) -> Result<Self> {
        let command = pairs
            .iter()
            .rev()
            .find(|(k, _)| k == "command")
            .ok_or_else(|| Error::config("command", "missing (panorama|region|sample|ablate)"))?
            .1
            .parse()?;
        let mut cfg = Self::defaults(command);
        let mut raw_tokens: BTreeMap<String, RawToken> = BTreeMap::new();
        let mut raw_regions: BTreeMap<usize, RawRegion> = BTreeMap::new();

        for (key, value) in pairs {
            let (k, v) = (key.as_str(), value.as_str());
            match k {
                "command" => {}
                "height" => cfg.height = positive(k, v)?,
                "width" => cfg.width = positive(k, v)?,
                "channels" => cfg.channels = positive(k, v)?,
                "window" => {
                    cfg.window = match v.split_once('x') {
                        Some((h, w)) => (positive(k, h.trim())?, positive(k, w.trim())?),
                        None => {
                            let s = positive(k, v)?;
                            (s, s)
                        }
                    }
                }
                "stride" => cfg.stride = positive(k, v)?,
                "prompt" => cfg.prompt = Condition::new(v),
                "steps" => cfg.steps = positive(k, v)?,
                "beta_start" => cfg.beta_start = parse_value(k, v)?,
                "beta_end" => cfg.beta_end = parse_value(k, v)?,
                "mode" => cfg.mode = parse_value(k, v)?,
                "noise" => cfg.noise = parse_value(k, v)?,
                "seed" => cfg.seed = parse_value(k, v)?,
                "threads" => cfg.threads = parse_value(k, v)?,
                "batch" => cfg.batch = positive(k, v)?,
                "out" => cfg.out = Some(PathBuf::from(v)),
                "report" => cfg.report = Some(PathBuf::from(v)),
                "metrics" => cfg.metrics = Some(PathBuf::from(v)),
                "bootstrap" => cfg.bootstrap = parse_bool(k, v)?,
                "t_init" => cfg.t_init = Some(parse_value(k, v)?),
                "background" => {
                    cfg.background = if v == "random" {
                        BackgroundSource::Random
                    } else {
                        BackgroundSource::Fixed(
                            v.split(',')
                                .map(|s| parse_value(k, s.trim()))
                                .collect::<Result<_>>()?,
                        )
                    }
                }
                "seeds" => cfg.seeds = positive(k, v)?,
                "tol" => cfg.tol = parse_value(k, v)?,
                "upscale" => cfg.upscale = positive(k, v)?,
                "decode" => {
                    cfg.decode = if v == "auto" {
                        DecodeRange::Auto
                    } else {
                        let r: Vec<f32> = parse_list(k, v, 2)?;
                        if r[0].partial_cmp(&r[1]) != Some(std::cmp::Ordering::Less) {
                            return Err(Error::config(k, "range must satisfy lo < hi"));
                        }
                        DecodeRange::Fixed { lo: r[0], hi: r[1] }
                    }
                }
                _ => {
                    let parts: Vec<&str> = k.splitn(3, '.').collect();
                    match parts.as_slice() {
                        ["token", name, field] if !name.is_empty() => {
                            let t = raw_tokens.entry(name.to_string()).or_default();
                            let slot = match *field {
                                "kind" => &mut t.kind,
                                "pattern" => &mut t.pattern,
                                "pull" => &mut t.pull,
                                "context" => &mut t.context,
                                "scale" => &mut t.scale,
                                _ => return Err(Error::config(k, "unknown key")),
                            };
                            *slot = Some(v.to_string());
                        }
                        ["region", index, field] => {
                            let i: usize = parse_value(k, index)?;
                            let r = raw_regions.entry(i).or_default();
                            let slot = match *field {
                                "token" => &mut r.token,
                                "rect" => &mut r.rect,
                                "disk" => &mut r.disk,
                                "mask" => &mut r.mask,
                                "background" => &mut r.background,
                                _ => return Err(Error::config(k, "unknown key")),
                            };
                            *slot = Some(v.to_string());
                        }
                        _ => return Err(Error::config(k, "unknown key")),
                    }
                }
            }
        }

        for (name, raw) in raw_tokens {
            let token = Self::resolve_token(&name, raw)?;
            cfg.tokens.insert(name, token);
        }
        for (i, raw) in raw_regions {
            cfg.regions.push(Self::resolve_region(i, raw, base_dir)?);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_token(name: &str, raw: RawToken) -> Result<TokenSpec> {
        let key = |f: &str| format!("token.{name}.{f}");
        let pattern_text = raw
            .pattern
            .ok_or_else(|| Error::config(key("pattern"), "missing"))?;
        let pattern: Pattern = parse_value(&key("pattern"), &pattern_text)?;
        let spec = match raw.kind.as_deref().unwrap_or("pattern") {
            "pattern" => {
                if raw.scale.is_some() {
                    return Err(Error::config(
                        key("scale"),
                        "only valid for gaussian tokens",
                    ));
                }
                TokenSpec::Pattern {
                    pattern,
                    pull: raw
                        .pull
                        .map_or(Ok(0.5), |v| parse_value(&key("pull"), &v))?,
                    context: raw
                        .context
                        .map_or(Ok(2), |v| parse_value(&key("context"), &v))?,
                }
            }
            "gaussian" => {
                if raw.pull.is_some() || raw.context.is_some() {
                    return Err(Error::config(
                        key("kind"),
                        "gaussian tokens take only `pattern` and `scale`",
                    ));
                }
                TokenSpec::Gaussian {
                    mean: pattern,
                    scale: raw
                        .scale
                        .map_or(Ok(1.0), |v| parse_value(&key("scale"), &v))?,
                }
            }
            other => {
                return Err(Error::config(
                    key("kind"),
                    format!("`{other}` is not pattern|gaussian"),
                ))
            }
        };
        // surface parameter errors (pull out of range, negative scale) now
        spec.register(&mut Registry::new(), name)
            .map_err(|e| Error::config(format!("token.{name}"), e.to_string()))?;
        Ok(spec)
    }

    fn resolve_region(i: usize, raw: RawRegion, base_dir: Option<&Path>) -> Result<RegionEntry> {
        let key = |f: &str| format!("region.{i}.{f}");
        let token = raw
            .token
            .ok_or_else(|| Error::config(key("token"), "missing"))?;
        let background = match raw.background {
            Some(v) => parse_bool(&key("background"), &v)?,
            None => false,
        };
        let mut shapes = Vec::new();
        if let Some(v) = raw.rect {
            let r: Vec<usize> = parse_list(&key("rect"), &v, 4)?;
            shapes.push(RegionShape::Rect {
                top: r[0],
                left: r[1],
                height: r[2],
                width: r[3],
            });
        }
        if let Some(v) = raw.disk {
            let d: Vec<f32> = parse_list(&key("disk"), &v, 3)?;
            shapes.push(RegionShape::Disk {
                row: d[0],
                col: d[1],
                radius: d[2],
            });
        }
        if let Some(v) = raw.mask {
            let p = PathBuf::from(v);
            shapes.push(RegionShape::File(match base_dir {
                Some(dir) if p.is_relative() => dir.join(p),
                _ => p,
            }));
        }
        if background {
            shapes.push(RegionShape::Background);
        }
        match shapes.len() {
            1 => Ok(RegionEntry {
                token: Condition::new(token),
                shape: shapes.pop().expect("one shape"),
            }),
            0 => Err(Error::config(
                format!("region.{i}"),
                "needs one of rect, disk, mask or background",
            )),
            _ => Err(Error::config(
                format!("region.{i}"),
                "give exactly one of rect, disk, mask or background",
            )),
        }
    }

    fn validate(&self) -> Result<()> {
        let registry = self.registry()?;
        self.schedule()?;
        let referenced: Vec<&Condition> = match self.command {
            CommandKind::Panorama | CommandKind::Sample => vec![&self.prompt],
            CommandKind::Region | CommandKind::Ablate => {
                self.regions.iter().map(|r| &r.token).collect()
            }
        };
        for token in referenced {
            registry.get(token)?;
        }
        match self.command {
            CommandKind::Panorama => {
                self.panorama_spec().validate()?;
            }
            CommandKind::Region | CommandKind::Ablate => {
                self.region_spec()?.resolved_t_init(self.steps)?;
                if self.command == CommandKind::Ablate {
                    for r in &self.regions {
                        if r.shape != RegionShape::Background {
                            registry.color(&r.token)?;
                        }
                    }
                }
            }
            CommandKind::Sample => {}
        }
        if let Some(t) = self.t_init {
            if t > self.steps {
                return Err(Error::range(
                    "t_init",
                    format!("{t} exceeds steps = {}", self.steps),
                ));
            }
        }
        if self.command != CommandKind::Ablate {
            if self.out.is_none() {
                return Err(Error::config(
                    "out",
                    format!("required for `{}`", self.command),
                ));
            }
            image_mode(self.channels)?;
        }
        Ok(())
    }

    pub fn registry(&self) -> Result<Registry> {
        let mut reg = Registry::new();
        for (name, spec) in &self.tokens {
            spec.register(&mut reg, name)?;
        }
        Ok(reg)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::respaced(self.steps, self.beta_start, self.beta_end)
    }

    pub fn panorama_spec(&self) -> PanoramaSpec {
        PanoramaSpec::new(self.height, self.width, self.channels, self.prompt.clone())
            .with_window(self.window.0, self.window.1)
            .with_stride(self.stride)
    }

    pub fn region_spec(&self) -> Result<RegionSpec> {
        if self.regions.is_empty() {
            return Err(Error::config(
                "region",
                "at least one region.N group is required",
            ));
        }
        let (h, w) = (self.height, self.width);
        let mut spec = RegionSpec::new(h, w, self.channels)
            .with_bootstrap(self.bootstrap)
            .with_background_source(self.background.clone());
        if let Some(t) = self.t_init {
            spec = spec.with_t_init(t);
        }
        let mut backgrounds = Vec::new();
        for (i, r) in self.regions.iter().enumerate() {
            let mask = match &r.shape {
                RegionShape::Rect {
                    top,
                    left,
                    height,
                    width,
                } => Mask::rect(h, w, *top, *left, *height, *width)?,
                RegionShape::Disk { row, col, radius } => Mask::disk(h, w, *row, *col, *radius)?,
                RegionShape::File(path) => {
                    let m = pnm::read_mask(path)?;
                    if (m.height(), m.width()) != (h, w) {
                        return Err(Error::Shape(format!(
                            "region {i} mask {} is {}x{}, canvas is {h}x{w}",
                            path.display(),
                            m.height(),
                            m.width()
                        )));
                    }
                    m
                }
                RegionShape::Background => {
                    backgrounds.push(r.token.clone());
                    continue;
                }
            };
            spec = spec.with_region(Region::new(mask, r.token.clone()));
        }
        for token in backgrounds {
            spec = spec.with_background_region(token)?;
        }
        Ok(spec)
    }

    /// The plan for image-producing commands.
    pub fn plan(&self) -> Result<FusionPlan> {
        let plan = match self.command {
            CommandKind::Panorama => build_panorama_plan(&self.panorama_spec())?,
            CommandKind::Sample => FusionPlan::new(
                self.height,
                self.width,
                self.channels,
                vec![PlanView::new(
                    ViewMap::crop(0, 0, self.height, self.width)?,
                    self.prompt.clone(),
                )],
            )?,
            CommandKind::Region | CommandKind::Ablate => {
                build_region_plan(&self.region_spec()?, self.steps)?
            }
        };
        Ok(plan
            .with_mode(self.mode)
            .with_noise_policy(self.noise)
            .with_seed(self.seed)
            .with_batch_size(self.batch))
    }
}

fn image_mode(channels: usize) -> Result<ImageMode> {
    match channels {
        1 => Ok(ImageMode::Gray),
        2 => Err(Error::config(
            "channels",
            "2-channel latents have no image mapping (use 1 for gray or >= 3 for RGB)",
        )),
        _ => Ok(ImageMode::Rgb),
    }
}

/// Toy decoder: first one or three channels, affine rescale to `[0, 1]`, clamp,
/// then nearest-neighbour upscaling. Returns the image and the range used.
pub fn decode_image(
    latent: &LatentGrid,
    range: DecodeRange,
    upscale: usize,
) -> Result<(LatentGrid, ImageMode, f32, f32)> {
    let mode = image_mode(latent.channels())?;
    let picked = match mode {
        ImageMode::Gray => latent.clone(),
        ImageMode::Rgb => latent.select_channels(&[0, 1, 2])?,
    };
    let (lo, hi) = match range {
        DecodeRange::Fixed { lo, hi } => (lo, hi),
        DecodeRange::Auto => {
            let lo = picked.data().iter().copied().fold(f32::INFINITY, f32::min);
            let hi = picked
                .data()
                .iter()
                .copied()
                .fold(f32::NEG_INFINITY, f32::max);
            if hi > lo {
                (lo, hi)
            } else {
                (lo, lo + 1.0)
            }
        }
    };
    let image = picked
        .map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
        .upscale_nearest(upscale)?;
    Ok((image, mode, lo, hi))
}

/// What a run produced, already written to the configured paths.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub latent: Option<LatentGrid>,
    pub reports: Vec<StepReport>,
    pub metrics: Vec<(String, String)>,
}

fn step_report_text(reports: &[StepReport]) -> String {
    reports
        .iter()
        .map(|r| format!("{} {:.9e} {:.9e}\n", r.t, r.ftd_loss, r.max_residual()))
        .collect()
}

fn metrics_text(metrics: &[(String, String)]) -> String {
    metrics.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// Executes a validated config inside a worker pool capped at `config.threads`.
pub fn run(config: &RunConfig) -> Result<RunSummary> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::Parameter(format!("thread pool: {e}")))?;
    pool.install(|| execute(config))
}

fn execute(config: &RunConfig) -> Result<RunSummary> {
    let schedule = config.schedule()?;
    let registry = config.registry()?;
    let mut metrics = vec![
        ("command".to_string(), config.command.to_string()),
        ("seed".to_string(), config.seed.to_string()),
        ("steps".to_string(), config.steps.to_string()),
        ("mode".to_string(), config.mode.to_string()),
    ];

    if config.command == CommandKind::Ablate {
        let spec = config.region_spec()?;
        let seeds: Vec<u64> = (0..config.seeds as u64)
            .map(|k| config.seed.wrapping_add(k))
            .collect();
        let report =
            run_region_ablation(&spec, &schedule, &registry, config.mode, &seeds, config.tol)?;
        metrics.push((
            "iou_bootstrapped".into(),
            format!("{:.6}", report.mean_bootstrapped()),
        ));
        metrics.push(("iou_plain".into(), format!("{:.6}", report.mean_plain())));
        for (i, seed) in report.seeds.iter().enumerate() {
            metrics.push((
                format!("seed.{seed}.bootstrapped"),
                format!("{:.6}", report.bootstrapped[i]),
            ));
            metrics.push((
                format!("seed.{seed}.plain"),
                format!("{:.6}", report.plain[i]),
            ));
        }
        if let Some(path) = &config.metrics {
            pnm::write_atomic(path, metrics_text(&metrics).as_bytes())?;
        }
        return Ok(RunSummary {
            latent: None,
            reports: Vec::new(),
            metrics,
        });
    }

    let plan = config.plan()?;
    let SampleOutput {
        image: latent,
        reports,
    } = multidiffusion_sample(&plan, &schedule, &registry)?;
    let (image, mode, lo, hi) = decode_image(&latent, config.decode, config.upscale)?;
    metrics.push(("views".into(), plan.views().len().to_string()));
    metrics.push(("decode_lo".into(), format!("{lo:.6}")));
    metrics.push(("decode_hi".into(), format!("{hi:.6}")));
    if let Some(last) = reports.last() {
        metrics.push(("final_ftd_loss".into(), format!("{:.6e}", last.ftd_loss)));
    }
    match config.command {
        CommandKind::Panorama => {
            let (wh, ww) = config.window;
            let seams: Vec<Boundary> = (1..)
                .map(|k| k * ww)
                .take_while(|&x| x < config.width)
                .map(Boundary::Column)
                .chain(
                    (1..)
                        .map(|k| k * wh)
                        .take_while(|&y| y < config.height)
                        .map(Boundary::Row),
                )
                .collect();
            if !seams.is_empty() {
                metrics.push((
                    "seam_score".into(),
                    format!("{:.6}", seam_score(&latent, &seams)?.mean),
                ));
            }
        }
        CommandKind::Region => {
            let spec = config.region_spec()?;
            for (i, r) in spec
                .regions
                .iter()
                .enumerate()
                .filter(|(_, r)| r.foreground)
            {
                if let Ok(color) = registry.color(&r.token) {
                    let pred = foreground_threshold(&latent, &color, config.tol)?;
                    metrics.push((
                        format!("region.{i}.iou"),
                        format!("{:.6}", iou(&pred, &r.mask)?),
                    ));
                }
            }
        }
        CommandKind::Sample | CommandKind::Ablate => {}
    }

    let out = config.out.as_ref().expect("validated");
    pnm::write_image(&image, out, mode)?;
    if let Some(path) = &config.report {
        pnm::write_atomic(path, step_report_text(&reports).as_bytes())?;
    }
    if let Some(path) = &config.metrics {
        pnm::write_atomic(path, metrics_text(&metrics).as_bytes())?;
    }
    Ok(RunSummary {
        latent: Some(latent),
        reports,
        metrics,
    })
}
