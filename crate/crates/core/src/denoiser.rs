//! The reference model: a noise predictor per condition token, composed with
//! one schedule step.
//!
//! Two desk-scale predictors are provided. [`GaussianDenoiser`] is the exact
//! Bayes-optimal predictor for a Gaussian data prior, which makes path and
//! distribution statements checkable in closed form. [`PatternDenoiser`] pulls
//! its clean-sample estimate toward a procedural target so generated content
//! is recognizable (stripes, disks, flat colours).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::rng::{SeedStreams, Stream};
use crate::schedule::{NoiseSchedule, StepMode};

/// Opaque conditioning token (the prompt stand-in).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Condition(String);

impl Condition {
    pub fn new(token: impl Into<String>) -> Self {
        Condition(token.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for Condition {
    fn from(s: &str) -> Self {
        Condition::new(s)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StripeAxis {
    /// Value changes from row to row (horizontal bands).
    Rows,
    /// Value changes from column to column (vertical bands).
    Cols,
}

/// A procedural image rendered in the reference space of whichever view asks for it.
#[derive(Debug, Clone, PartialEq)]
pub enum Pattern {
    /// One value per channel, or a single value broadcast to all channels.
    Constant(Vec<f32>),
    /// Two-level bands: `high` for the first half of each period, `low` for the rest.
    Stripes {
        period: usize,
        axis: StripeAxis,
        low: f32,
        high: f32,
    },
    /// `inside` within `radius` of the centre, `outside` elsewhere.
    Disk {
        center_col: f32,
        center_row: f32,
        radius: f32,
        inside: f32,
        outside: f32,
    },
    /// An explicit grid; only renders at its own size.
    Image(LatentGrid),
}

impl Pattern {
    pub fn render(&self, height: usize, width: usize, channels: usize) -> Result<LatentGrid> {
        match self {
            Pattern::Constant(values) => {
                let per_channel = match values.len() {
                    1 => vec![values[0]; channels],
                    n if n == channels => values.clone(),
                    n => {
                        return Err(Error::Shape(format!(
                            "constant pattern has {n} values for {channels} channels"
                        )))
                    }
                };
                LatentGrid::from_fn(height, width, channels, |_, _, c| per_channel[c])
            }
            Pattern::Stripes {
                period,
                axis,
                low,
                high,
            } => LatentGrid::from_fn(height, width, channels, |r, c, _| {
                let coord = match axis {
                    StripeAxis::Rows => r,
                    StripeAxis::Cols => c,
                };
                if (coord % period) * 2 < *period {
                    *high
                } else {
                    *low
                }
            }),
            Pattern::Disk {
                center_col,
                center_row,
                radius,
                inside,
                outside,
            } => LatentGrid::from_fn(height, width, channels, |r, c, _| {
                let dy = r as f32 - center_row;
                let dx = c as f32 - center_col;
                if dy * dy + dx * dx <= radius * radius {
                    *inside
                } else {
                    *outside
                }
            }),
            Pattern::Image(grid) => {
                if grid.dims() != (height, width, channels) {
                    return Err(Error::Shape(format!(
                        "image pattern is {:?}, view needs {:?}",
                        grid.dims(),
                        (height, width, channels)
                    )));
                }
                Ok(grid.clone())
            }
        }
    }

    /// The foreground colour used for thresholding, if this pattern has one.
    pub fn color(&self) -> Option<Vec<f32>> {
        match self {
            Pattern::Constant(v) => Some(v.clone()),
            Pattern::Disk { inside, .. } => Some(vec![*inside]),
            _ => None,
        }
    }
}

fn parse_f32(s: &str, what: &str) -> Result<f32> {
    s.parse::<f32>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parameter(format!("bad {what} `{s}` in pattern")))
}

impl FromStr for Pattern {
    type Err = Error;

    /// `constant 0.5` | `constant 1,0,0` | `stripes 8 [rows|cols] [low high]` |
    /// `disk cx cy r [inside outside]`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|p| !p.is_empty())
            .collect();
        let (kind, args) = parts
            .split_first()
            .ok_or_else(|| Error::Parameter("empty pattern".into()))?;
        match *kind {
            "constant" if !args.is_empty() => Ok(Pattern::Constant(
                args.iter()
                    .map(|a| parse_f32(a, "value"))
                    .collect::<Result<_>>()?,
            )),
            "stripes" if !args.is_empty() && args.len() <= 4 && args.len() != 3 => {
                let period: usize =
                    args[0].parse().ok().filter(|p| *p >= 2).ok_or_else(|| {
                        Error::Parameter(format!("bad stripe period `{}`", args[0]))
                    })?;
                let axis = match args.get(1).copied() {
                    None | Some("rows") => StripeAxis::Rows,
                    Some("cols") => StripeAxis::Cols,
                    Some(other) => {
                        return Err(Error::Parameter(format!("bad stripe axis `{other}`")))
                    }
                };
                let (low, high) = match args.get(2..4) {
                    Some([l, h]) => (parse_f32(l, "low")?, parse_f32(h, "high")?),
                    _ => (0.0, 1.0),
                };
                Ok(Pattern::Stripes {
                    period,
                    axis,
                    low,
                    high,
                })
            }
            "disk" if args.len() == 3 || args.len() == 5 => {
                let radius = parse_f32(args[2], "radius")?;
                if radius < 0.0 {
                    return Err(Error::Parameter("disk radius must be >= 0".into()));
                }
                let (inside, outside) = match args.get(3..5) {
                    Some([i, o]) => (parse_f32(i, "inside")?, parse_f32(o, "outside")?),
                    _ => (1.0, 0.0),
                };
                Ok(Pattern::Disk {
                    center_col: parse_f32(args[0], "cx")?,
                    center_row: parse_f32(args[1], "cy")?,
                    radius,
                    inside,
                    outside,
                })
            }
            _ => Err(Error::Parameter(format!("unrecognized pattern `{s}`"))),
        }
    }
}

/// Predicts the noise component of `x_t` at step `t`.
pub trait NoisePredictor: Send + Sync + fmt::Debug {
    fn predict(&self, schedule: &NoiseSchedule, x_t: &LatentGrid, t: usize) -> Result<LatentGrid>;

    /// Foreground colour of the content this predictor produces, when well defined.
    fn color(&self) -> Option<Vec<f32>> {
        None
    }
}

fn epsilon_from_x0(
    schedule: &NoiseSchedule,
    x_t: &LatentGrid,
    x0: &[f64],
    t: usize,
) -> Result<LatentGrid> {
    let ab = schedule.alpha_bar(t);
    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = x_t
        .data()
        .iter()
        .zip(x0)
        .map(|(&x, &x0)| ((x as f64 - sa * x0) / sb) as f32)
        .collect();
    let (h, w, c) = x_t.dims();
    LatentGrid::from_vec(h, w, c, data)
        .map_err(|_| Error::NonFinite(format!("noise prediction at t = {t}")))
}

/// Exact denoiser for the prior `x0 ~ N(mean, scale^2 I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDenoiser {
    mean: Pattern,
    scale: f32,
}

impl GaussianDenoiser {
    pub fn new(mean: Pattern, scale: f32) -> Result<Self> {
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::Parameter(format!(
                "gaussian scale {scale} must be >= 0"
            )));
        }
        Ok(Self { mean, scale })
    }

    pub fn mean(&self) -> &Pattern {
        &self.mean
    }

    pub fn scale(&self) -> f32 {
        self.scale
    }

    /// `E[x0 | x_t]` under the prior, in f64.
    pub fn posterior_mean(
        &self,
        schedule: &NoiseSchedule,
        x_t: &LatentGrid,
        t: usize,
    ) -> Result<Vec<f64>> {
        schedule.check_step(t)?;
        let (h, w, c) = x_t.dims();
        let m = self.mean.render(h, w, c)?;
        let ab = schedule.alpha_bar(t);
        let s2 = self.scale as f64 * self.scale as f64;
        let denom = ab * s2 + (1.0 - ab);
        let k = ab.sqrt() * s2;
        Ok(x_t
            .data()
            .iter()
            .zip(m.data())
            .map(|(&x, &m)| (k * x as f64 + (1.0 - ab) * m as f64) / denom)
            .collect())
    }
}

impl NoisePredictor for GaussianDenoiser {
    fn predict(&self, schedule: &NoiseSchedule, x_t: &LatentGrid, t: usize) -> Result<LatentGrid> {
        let x0 = self.posterior_mean(schedule, x_t, t)?;
        epsilon_from_x0(schedule, x_t, &x0, t)
    }

    fn color(&self) -> Option<Vec<f32>> {
        self.mean.color()
    }
}

/// Pulls the implied clean sample a fixed fraction of the way toward a target pattern.
///
/// The current estimate is `mean_r(x_t) / sqrt(alpha_bar)`, where `mean_r` is a
/// box mean of radius `context` clipped to the view (radius 0 is pixel-local).
/// The returned epsilon implies `x0 = (1 - pull) * current + pull * target`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternDenoiser {
    pattern: Pattern,
    pull: f32,
    context: usize,
}

impl PatternDenoiser {
    pub fn new(pattern: Pattern, pull: f32) -> Result<Self> {
        if !(pull > 0.0 && pull <= 1.0) {
            return Err(Error::Parameter(format!(
                "pull strength {pull} not in (0, 1]"
            )));
        }
        Ok(Self {
            pattern,
            pull,
            context: 0,
        })
    }

    pub fn with_context(mut self, radius: usize) -> Self {
        self.context = radius;
        self
    }

    pub fn pattern(&self) -> &Pattern {
        &self.pattern
    }

    pub fn pull(&self) -> f32 {
        self.pull
    }

    pub fn context(&self) -> usize {
        self.context
    }

    /// The clean-sample estimate this predictor implies at step `t`.
    pub fn implied_x0(
        &self,
        schedule: &NoiseSchedule,
        x_t: &LatentGrid,
        t: usize,
    ) -> Result<Vec<f64>> {
        schedule.check_step(t)?;
        let (h, w, c) = x_t.dims();
        let target = self.pattern.render(h, w, c)?;
        let inv = 1.0 / schedule.alpha_bar(t).sqrt();
        let pull = self.pull as f64;
        let current = box_mean(x_t, self.context);
        Ok(current
            .iter()
            .zip(target.data())
            .map(|(&cur, &tgt)| (1.0 - pull) * cur * inv + pull * tgt as f64)
            .collect())
    }
}

impl NoisePredictor for PatternDenoiser {
    fn predict(&self, schedule: &NoiseSchedule, x_t: &LatentGrid, t: usize) -> Result<LatentGrid> {
        let x0 = self.implied_x0(schedule, x_t, t)?;
        epsilon_from_x0(schedule, x_t, &x0, t)
    }

    fn color(&self) -> Option<Vec<f32>> {
        self.pattern.color()
    }
}

/// Per-channel mean over the `(2r+1)^2` window around each pixel, clipped at the edges.
fn box_mean(grid: &LatentGrid, radius: usize) -> Vec<f64> {
    let (h, w, c) = grid.dims();
    if radius == 0 {
        return grid.data().iter().map(|&v| v as f64).collect();
    }
    let span = |i: usize, n: usize| (i.saturating_sub(radius), (i + radius + 1).min(n));

    // horizontal window sums via prefix sums per row and channel
    let mut horiz = vec![0.0f64; h * w * c];
    let mut prefix = vec![0.0f64; w + 1];
    for r in 0..h {
        for ch in 0..c {
            for col in 0..w {
                prefix[col + 1] = prefix[col] + grid.get(r, col, ch) as f64;
            }
            for col in 0..w {
                let (lo, hi) = span(col, w);
                horiz[(r * w + col) * c + ch] = prefix[hi] - prefix[lo];
            }
        }
    }
    let mut out = vec![0.0f64; h * w * c];
    let mut prefix = vec![0.0f64; h + 1];
    for col in 0..w {
        let (clo, chi) = span(col, w);
        for ch in 0..c {
            for r in 0..h {
                prefix[r + 1] = prefix[r] + horiz[(r * w + col) * c + ch];
            }
            for r in 0..h {
                let (rlo, rhi) = span(r, h);
                let count = ((rhi - rlo) * (chi - clo)) as f64;
                out[(r * w + col) * c + ch] = (prefix[rhi] - prefix[rlo]) / count;
            }
        }
    }
    out
}

/// Token -> predictor table; the condition space of a run.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    entries: BTreeMap<Condition, Arc<dyn NoisePredictor>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        token: impl Into<Condition>,
        predictor: impl NoisePredictor + 'static,
    ) {
        self.entries.insert(token.into(), Arc::new(predictor));
    }

    pub fn with(
        mut self,
        token: impl Into<Condition>,
        predictor: impl NoisePredictor + 'static,
    ) -> Self {
        self.insert(token, predictor);
        self
    }

    pub fn contains(&self, token: &Condition) -> bool {
        self.entries.contains_key(token)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &Condition> {
        self.entries.keys()
    }

    pub fn get(&self, token: &Condition) -> Result<&dyn NoisePredictor> {
        self.entries
            .get(token)
            .map(|p| p.as_ref())
            .ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    pub fn predict(
        &self,
        schedule: &NoiseSchedule,
        x_t: &LatentGrid,
        t: usize,
        condition: &Condition,
    ) -> Result<LatentGrid> {
        let predictor = self.get(condition)?;
        schedule.check_step(t)?;
        let eps = predictor.predict(schedule, x_t, t)?;
        if !eps.same_shape(x_t) {
            return Err(Error::Shape(format!(
                "predictor for `{condition}` returned {:?} for input {:?}",
                eps.dims(),
                x_t.dims()
            )));
        }
        Ok(eps)
    }

    /// Foreground colour for `token`; an error when its pattern has none.
    pub fn color(&self, token: &Condition) -> Result<Vec<f32>> {
        self.get(token)?.color().ok_or_else(|| {
            Error::Parameter(format!(
                "token `{token}` has no constant-colour or disk pattern"
            ))
        })
    }
}

/// One application of the reference model: predict noise, then take a schedule step.
pub fn phi_step(
    registry: &Registry,
    schedule: &NoiseSchedule,
    x_t: &LatentGrid,
    t: usize,
    condition: &Condition,
    mode: StepMode,
    z: Option<&LatentGrid>,
) -> Result<LatentGrid> {
    let eps = registry.predict(schedule, x_t, t, condition)?;
    schedule.reverse_step(x_t, &eps, t, mode, z)
}

/// Runs the reference model from `x_start` at `t = T` down to a clean sample.
///
/// `noise(t)` supplies the ancestral noise for step `t`; it is only called in
/// ancestral mode for `t > 1`.
pub fn rollout(
    registry: &Registry,
    schedule: &NoiseSchedule,
    condition: &Condition,
    x_start: LatentGrid,
    mode: StepMode,
    mut noise: impl FnMut(usize) -> Result<LatentGrid>,
) -> Result<LatentGrid> {
    let mut x = x_start;
    for t in (1..=schedule.steps()).rev() {
        let z = match mode {
            StepMode::Ancestral if t > 1 => Some(noise(t)?),
            _ => None,
        };
        x = phi_step(registry, schedule, &x, t, condition, mode, z.as_ref())?;
    }
    Ok(x)
}

/// A plain reference-model sample drawn with the same seed streams the fused sampler uses.
pub fn seeded_rollout(
    registry: &Registry,
    schedule: &NoiseSchedule,
    condition: &Condition,
    dims: (usize, usize, usize),
    mode: StepMode,
    seed: u64,
) -> Result<LatentGrid> {
    let (h, w, c) = dims;
    let streams = SeedStreams::new(seed);
    let start = streams.normal_grid(Stream::InitNoise, h, w, c)?;
    rollout(registry, schedule, condition, start, mode, |t| {
        streams.normal_grid(Stream::StepNoise { t }, h, w, c)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn desk() -> NoiseSchedule {
        NoiseSchedule::desk(50).unwrap()
    }

    #[test]
    fn pattern_parsing() {
        assert_eq!(
            "constant 0.5".parse::<Pattern>().unwrap(),
            Pattern::Constant(vec![0.5])
        );
        assert_eq!(
            "constant 1,0,0".parse::<Pattern>().unwrap(),
            Pattern::Constant(vec![1.0, 0.0, 0.0])
        );
        assert_eq!(
            "stripes 8 cols 0.2 0.9".parse::<Pattern>().unwrap(),
            Pattern::Stripes {
                period: 8,
                axis: StripeAxis::Cols,
                low: 0.2,
                high: 0.9
            }
        );
        assert_eq!(
            "disk 4,5,2".parse::<Pattern>().unwrap(),
            Pattern::Disk {
                center_col: 4.0,
                center_row: 5.0,
                radius: 2.0,
                inside: 1.0,
                outside: 0.0
            }
        );
        for bad in [
            "",
            "constant",
            "stripes 1",
            "stripes 8 diag",
            "disk 1 2",
            "blob 3",
        ] {
            assert!(bad.parse::<Pattern>().is_err(), "{bad}");
        }
    }

    #[test]
    fn pattern_rendering() {
        let s = "stripes 4 rows"
            .parse::<Pattern>()
            .unwrap()
            .render(8, 2, 1)
            .unwrap();
        let col: Vec<f32> = (0..8).map(|r| s.get(r, 1, 0)).collect();
        assert_eq!(col, vec![1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let d = "disk 2 1 1"
            .parse::<Pattern>()
            .unwrap()
            .render(3, 5, 1)
            .unwrap();
        assert_eq!(d.get(1, 2, 0), 1.0);
        assert_eq!(d.get(0, 2, 0), 1.0);
        assert_eq!(d.get(0, 0, 0), 0.0);
        assert!(Pattern::Constant(vec![1.0, 2.0]).render(1, 1, 3).is_err());
    }

    #[test]
    fn degenerate_prior_returns_mean() {
        let s = desk();
        let den = GaussianDenoiser::new(Pattern::Constant(vec![0.3]), 0.0).unwrap();
        let x = LatentGrid::from_vec(1, 3, 1, vec![-4.0, 0.0, 9.0]).unwrap();
        for t in [1, 17, 50] {
            for v in den.posterior_mean(&s, &x, t).unwrap() {
                assert_eq!(v, 0.3f32 as f64);
            }
        }
    }

    #[test]
    fn noise_free_limit_returns_input() {
        let s = NoiseSchedule::linear(1, 1e-9, 1e-9).unwrap();
        let den = GaussianDenoiser::new(Pattern::Constant(vec![0.0]), 1.0).unwrap();
        let x = LatentGrid::from_vec(1, 2, 1, vec![0.7, -1.2]).unwrap();
        let x0 = den.posterior_mean(&s, &x, 1).unwrap();
        assert!((x0[0] - 0.7).abs() < 1e-6 && (x0[1] + 1.2).abs() < 1e-6);
    }

    #[test]
    fn posterior_mean_matches_monte_carlo() {
        // 1e5 prior draws weighted by the forward likelihood p(x_t | x0)
        let s = desk();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (m, sd, t, xq) in [
            (0.4f64, 0.7f64, 20usize, 0.9f64),
            (-0.2, 1.3, 45, -0.5),
            (1.0, 0.3, 5, 0.2),
        ] {
            let ab = s.alpha_bar(t);
            let draws: Vec<f64> = (0..100_000)
                .map(|_| m + sd * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let weights: Vec<f64> = draws
                .iter()
                .map(|x0| {
                    let r = xq - ab.sqrt() * x0;
                    (-0.5 * r * r / (1.0 - ab)).exp()
                })
                .collect();
            let wsum: f64 = weights.iter().sum();
            let est = draws.iter().zip(&weights).map(|(x, w)| x * w).sum::<f64>() / wsum;
            let se = (draws
                .iter()
                .zip(&weights)
                .map(|(x, w)| (w * (x - est)).powi(2))
                .sum::<f64>())
            .sqrt()
                / wsum;
            let den = GaussianDenoiser::new(Pattern::Constant(vec![m as f32]), sd as f32).unwrap();
            let x = LatentGrid::new(1, 1, 1, xq as f32).unwrap();
            let exact = den.posterior_mean(&s, &x, t).unwrap()[0];
            assert!(
                (exact - est).abs() < 3.0 * se,
                "exact {exact} mc {est} se {se}"
            );
        }
    }

    #[test]
    fn gaussian_residual_scaling() {
        // recompute the conjugate posterior independently and compare the epsilon
        let s = desk();
        let den = GaussianDenoiser::new(Pattern::Constant(vec![0.25]), 0.6).unwrap();
        let x = LatentGrid::from_vec(1, 4, 1, vec![-1.0, 0.0, 0.5, 2.0]).unwrap();
        for t in 1..=50 {
            let ab = s.alpha_bar(t);
            let eps = den.predict(&s, &x, t).unwrap();
            for (i, &xt) in x.data().iter().enumerate() {
                let xt = xt as f64;
                let prec = 1.0 / 0.36 + ab / (1.0 - ab);
                let mean = (0.25 / 0.36 + ab.sqrt() * xt / (1.0 - ab)) / prec;
                let expected = (xt - ab.sqrt() * mean) / (1.0 - ab).sqrt();
                assert!((eps.data()[i] as f64 - expected).abs() < 1e-5, "t = {t}");
            }
        }
    }

    #[test]
    fn full_pull_hits_target() {
        let s = desk();
        let pat: Pattern = "stripes 4 cols".parse().unwrap();
        let den = PatternDenoiser::new(pat.clone(), 1.0).unwrap();
        let x = LatentGrid::new(4, 8, 1, 0.37).unwrap();
        let target = pat.render(4, 8, 1).unwrap();
        for t in [1, 25, 50] {
            let x0 = den.implied_x0(&s, &x, t).unwrap();
            for (a, b) in x0.iter().zip(target.data()) {
                assert!((a - *b as f64).abs() < 1e-9);
            }
        }
        assert!(PatternDenoiser::new(pat.clone(), 0.0).is_err());
        assert!(PatternDenoiser::new(pat, 1.5).is_err());
    }

    #[test]
    fn full_pull_rollout_converges_to_target() {
        let s = desk();
        let pat: Pattern = "disk 4 3 2.5 0.8 0.1".parse().unwrap();
        let reg = Registry::new().with(
            "d",
            PatternDenoiser::new(pat.clone(), 1.0)
                .unwrap()
                .with_context(1),
        );
        let out =
            seeded_rollout(&reg, &s, &"d".into(), (8, 8, 1), StepMode::Deterministic, 4).unwrap();
        assert!(out.max_abs_diff(&pat.render(8, 8, 1).unwrap()).unwrap() < 1e-3);
    }

    #[test]
    fn zero_scale_rollout_converges_to_mean() {
        let s = desk();
        let mean = Pattern::Constant(vec![0.6, -0.3]);
        let reg = Registry::new().with("g", GaussianDenoiser::new(mean.clone(), 0.0).unwrap());
        let out =
            seeded_rollout(&reg, &s, &"g".into(), (5, 5, 2), StepMode::Deterministic, 1).unwrap();
        assert!(out.max_abs_diff(&mean.render(5, 5, 2).unwrap()).unwrap() < 1e-3);
    }

    #[test]
    fn phi_step_purity_and_conditioning() {
        let s = desk();
        let reg = Registry::new()
            .with(
                "a",
                GaussianDenoiser::new(Pattern::Constant(vec![1.0]), 0.5).unwrap(),
            )
            .with(
                "b",
                GaussianDenoiser::new(Pattern::Constant(vec![-1.0]), 0.5).unwrap(),
            );
        let x = SeedStreams::new(5)
            .normal_grid(Stream::InitNoise, 3, 3, 1)
            .unwrap();
        let mode = StepMode::Deterministic;
        let a1 = phi_step(&reg, &s, &x, 30, &"a".into(), mode, None).unwrap();
        let a2 = phi_step(&reg, &s, &x, 30, &"a".into(), mode, None).unwrap();
        let b = phi_step(&reg, &s, &x, 30, &"b".into(), mode, None).unwrap();
        assert_eq!(a1, a2);
        assert_ne!(a1, b);
        assert_eq!(a1.dims(), x.dims());
        assert!(matches!(
            phi_step(&reg, &s, &x, 30, &"zzz".into(), mode, None),
            Err(Error::UnknownToken(_))
        ));
        assert!(phi_step(&reg, &s, &x, 51, &"a".into(), mode, None).is_err());
    }

    #[test]
    fn box_mean_matches_brute_force() {
        let g = SeedStreams::new(2)
            .normal_grid(Stream::InitNoise, 5, 7, 2)
            .unwrap();
        for r in 0..4usize {
            let fast = box_mean(&g, r);
            for row in 0..5usize {
                for col in 0..7usize {
                    for ch in 0..2 {
                        let mut sum = 0.0;
                        let mut n = 0.0;
                        for rr in row.saturating_sub(r)..(row + r + 1).min(5) {
                            for cc in col.saturating_sub(r)..(col + r + 1).min(7) {
                                sum += g.get(rr, cc, ch) as f64;
                                n += 1.0;
                            }
                        }
                        let i = g.index(row, col, ch);
                        assert!((fast[i] - sum / n).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn registry_colors() {
        let reg = Registry::new()
            .with(
                "red",
                PatternDenoiser::new(Pattern::Constant(vec![1.0, 0.0, 0.0]), 0.5).unwrap(),
            )
            .with(
                "bars",
                PatternDenoiser::new("stripes 4".parse().unwrap(), 0.5).unwrap(),
            );
        assert_eq!(reg.color(&"red".into()).unwrap(), vec![1.0, 0.0, 0.0]);
        assert!(reg.color(&"bars".into()).is_err());
        assert!(matches!(
            reg.color(&"nope".into()),
            Err(Error::UnknownToken(_))
        ));
    }
}
