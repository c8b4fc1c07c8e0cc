//! Sliding-window plans for canvases larger than the reference model's window.

use rand::RngCore;

use crate::denoiser::{seeded_rollout, Condition, Registry};
use crate::error::{Error, Result};
use crate::fusion::{FusionPlan, PlanView};
use crate::grid::LatentGrid;
use crate::mapping::ViewMap;
use crate::rng::{SeedStreams, Stream};
use crate::schedule::{NoiseSchedule, StepMode};

pub const DEFAULT_WINDOW: usize = 64;
pub const DEFAULT_STRIDE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct PanoramaSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub window_height: usize,
    pub window_width: usize,
    pub stride: usize,
    pub prompt: Condition,
}

impl PanoramaSpec {
    /// Canvas of `height x width x channels` with the default 64x64 window and stride 8.
    pub fn new(height: usize, width: usize, channels: usize, prompt: impl Into<Condition>) -> Self {
        Self {
            height,
            width,
            channels,
            window_height: DEFAULT_WINDOW,
            window_width: DEFAULT_WINDOW,
            stride: DEFAULT_STRIDE,
            prompt: prompt.into(),
        }
    }

    pub fn with_window(mut self, height: usize, width: usize) -> Self {
        self.window_height = height;
        self.window_width = width;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::range("stride", "must be at least 1"));
        }
        if self.window_height == 0 || self.window_width == 0 {
            return Err(Error::Dimension("window must be non-empty".into()));
        }
        if self.window_height > self.height || self.window_width > self.width {
            return Err(Error::range(
                "window",
                format!(
                    "{}x{} does not fit a {}x{} canvas",
                    self.window_height, self.window_width, self.height, self.width
                ),
            ));
        }
        Ok(())
    }

    /// Top-left corners of every window, row-major.
    pub fn offsets(&self) -> Result<Vec<(usize, usize)>> {
        self.validate()?;
        let rows = window_offsets(self.height, self.window_height, self.stride)?;
        let cols = window_offsets(self.width, self.window_width, self.stride)?;
        Ok(rows
            .iter()
            .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
            .collect())
    }
}

/// Window starts `0, stride, 2*stride, ...` along one axis, plus one window
/// flush with the far edge when the regular positions do not reach it.
pub fn window_offsets(extent: usize, window: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(Error::range("stride", "must be at least 1"));
    }
    if window == 0 || window > extent {
        return Err(Error::range(
            "window",
            format!("{window} does not fit an extent of {extent}"),
        ));
    }
    let last = extent - window;
    let mut offsets: Vec<usize> = (0..=last).step_by(stride).collect();
    if offsets.last() != Some(&last) {
        offsets.push(last);
    }
    Ok(offsets)
}

/// One all-ones crop view per window, all sharing the spec's prompt.
pub fn build_panorama_plan(spec: &PanoramaSpec) -> Result<FusionPlan> {
    let views = spec
        .offsets()?
        .into_iter()
        .map(|(top, left)| {
            ViewMap::crop(top, left, spec.window_height, spec.window_width)
                .map(|v| PlanView::new(v, spec.prompt.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    FusionPlan::new(spec.height, spec.width, spec.channels, views)
}

/// The non-overlapping baseline: each window-sized tile is sampled on its own
/// with an independent seed and pasted into place.
#[derive(Debug, Clone)]
pub struct TiledSample {
    pub image: LatentGrid,
    /// Column indices where a tile begins, excluding 0.
    pub column_seams: Vec<usize>,
    /// Row indices where a tile begins, excluding 0.
    pub row_seams: Vec<usize>,
}

pub fn independent_tiles(
    spec: &PanoramaSpec,
    schedule: &NoiseSchedule,
    registry: &Registry,
    mode: StepMode,
    seed: u64,
) -> Result<TiledSample> {
    spec.validate()?;
    let rows = window_offsets(spec.height, spec.window_height, spec.window_height)?;
    let cols = window_offsets(spec.width, spec.window_width, spec.window_width)?;
    let streams = SeedStreams::new(seed);
    let mut image = LatentGrid::zeros(spec.height, spec.width, spec.channels)?;
    let mut index = 0;
    for &top in &rows {
        for &left in &cols {
            let tile_seed = streams.rng(Stream::TileSeed { index }).next_u64();
            let tile = seeded_rollout(
                registry,
                schedule,
                &spec.prompt,
                (spec.window_height, spec.window_width, spec.channels),
                mode,
                tile_seed,
            )?;
            image.paste(&tile, top, left)?;
            index += 1;
        }
    }
    Ok(TiledSample {
        image,
        column_seams: cols[1..].to_vec(),
        row_seams: rows[1..].to_vec(),
    })
}
