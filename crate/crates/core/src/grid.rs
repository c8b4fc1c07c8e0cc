//! Dense grids, binary masks and per-pixel weight maps.
//!
//! All grids are row-major with the channel index varying fastest, so the
//! scalar for pixel `(row, col)` and channel `c` lives at
//! `(row * width + col) * channels + c`.

use crate::error::{Error, Result};

fn checked_len(height: usize, width: usize, channels: usize) -> Result<usize> {
    if height == 0 || width == 0 || channels == 0 {
        return Err(Error::Dimension(format!(
            "{height}x{width}x{channels} has a zero dimension"
        )));
    }
    height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::Dimension(format!("{height}x{width}x{channels} overflows")))
}

/// An `H x W x C` grid of 32-bit reals: images, latents, noise and denoiser outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl LatentGrid {
    /// Grid with every entry equal to `fill`.
    pub fn new(height: usize, width: usize, channels: usize, fill: f32) -> Result<Self> {
        let len = checked_len(height, width, channels)?;
        if !fill.is_finite() {
            return Err(Error::NonFinite("grid fill".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            data: vec![fill; len],
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::new(height, width, channels, 0.0)
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        let len = checked_len(height, width, channels)?;
        if data.len() != len {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} needs {len} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("grid data".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds a grid by evaluating `f(row, col, channel)` at every entry.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let len = checked_len(height, width, channels)?;
        let mut data = Vec::with_capacity(len);
        for row in 0..height {
            for col in 0..width {
                for c in 0..channels {
                    data.push(f(row, col, c));
                }
            }
        }
        Self::from_vec(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Mutable access for in-place accumulators.
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.width + col) * self.channels + channel
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[self.index(row, col, channel)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: f32) {
        let i = self.index(row, col, channel);
        self.data[i] = value;
    }

    pub fn same_shape(&self, other: &LatentGrid) -> bool {
        self.dims() == other.dims()
    }

    pub(crate) fn ensure_same_shape(&self, other: &LatentGrid, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )))
        }
    }

    /// Copies out the `height x width` window whose top-left corner is `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<LatentGrid> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(Error::range(
                "crop window",
                format!(
                    "({top},{left}) {height}x{width} on a {}x{} grid",
                    self.height, self.width
                ),
            ));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(height * width * c);
        for row in top..top + height {
            let start = self.index(row, left, 0);
            data.extend_from_slice(&self.data[start..start + width * c]);
        }
        Ok(LatentGrid {
            height,
            width,
            channels: c,
            data,
        })
    }

    /// Writes `patch` into this grid with its top-left corner at `(top, left)`.
    pub fn paste(&mut self, patch: &LatentGrid, top: usize, left: usize) -> Result<()> {
        if patch.channels != self.channels
            || top + patch.height > self.height
            || left + patch.width > self.width
        {
            return Err(Error::Shape(format!(
                "cannot paste {:?} at ({top},{left}) into {:?}",
                patch.dims(),
                self.dims()
            )));
        }
        let row_len = patch.width * patch.channels;
        for r in 0..patch.height {
            let dst = self.index(top + r, left, 0);
            let src = r * row_len;
            self.data[dst..dst + row_len].copy_from_slice(&patch.data[src..src + row_len]);
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> LatentGrid {
        LatentGrid {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn zip_map(&self, other: &LatentGrid, f: impl Fn(f32, f32) -> f32) -> Result<LatentGrid> {
        self.ensure_same_shape(other, "zip_map")?;
        Ok(LatentGrid {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            ..*self
        })
    }

    pub fn add(&self, other: &LatentGrid) -> Result<LatentGrid> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &LatentGrid) -> Result<LatentGrid> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, k: f32) -> LatentGrid {
        self.map(|v| v * k)
    }

    pub fn max_abs_diff(&self, other: &LatentGrid) -> Result<f32> {
        self.ensure_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Nearest-neighbour upscale by an integer factor on both spatial axes.
    pub fn upscale_nearest(&self, factor: usize) -> Result<LatentGrid> {
        if factor == 0 {
            return Err(Error::Parameter("upscale factor must be >= 1".into()));
        }
        let (h, w, c) = self.dims();
        LatentGrid::from_fn(h * factor, w * factor, c, |r, col, ch| {
            self.get(r / factor, col / factor, ch)
        })
    }

    /// Keeps the listed channels, in order.
    pub fn select_channels(&self, channels: &[usize]) -> Result<LatentGrid> {
        if let Some(&bad) = channels.iter().find(|&&c| c >= self.channels) {
            return Err(Error::range(
                "channel",
                format!("{bad} of a {}-channel grid", self.channels),
            ));
        }
        LatentGrid::from_fn(self.height, self.width, channels.len(), |r, col, k| {
            self.get(r, col, channels[k])
        })
    }
}

/// A binary `H x W` region mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        let len = checked_len(height, width, 1)?;
        if data.len() != len {
            return Err(Error::Shape(format!(
                "{height}x{width} mask needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Result<Self> {
        let len = checked_len(height, width, 1)?;
        Ok(Self {
            height,
            width,
            data: vec![value; len],
        })
    }

    /// Builds a mask from real values that must be exactly 0 or 1.
    pub fn from_values(height: usize, width: usize, values: &[f32]) -> Result<Self> {
        let data = values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if v == 0.0 {
                    Ok(false)
                } else if v == 1.0 {
                    Ok(true)
                } else {
                    Err(Error::Format(format!(
                        "mask value {v} at index {i} is not 0 or 1"
                    )))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(height, width, data)
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let len = checked_len(height, width, 1)?;
        let mut data = Vec::with_capacity(len);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(height, width, data)
    }

    /// Axis-aligned rectangle of ones.
    pub fn rect(
        height: usize,
        width: usize,
        top: usize,
        left: usize,
        rect_h: usize,
        rect_w: usize,
    ) -> Result<Self> {
        if top + rect_h > height || left + rect_w > width {
            return Err(Error::range(
                "rectangle",
                format!("({top},{left}) {rect_h}x{rect_w} on a {height}x{width} mask"),
            ));
        }
        Self::from_fn(height, width, |r, c| {
            r >= top && r < top + rect_h && c >= left && c < left + rect_w
        })
    }

    /// Pixels whose centre lies within `radius` of `(center_row, center_col)`.
    pub fn disk(
        height: usize,
        width: usize,
        center_row: f32,
        center_col: f32,
        radius: f32,
    ) -> Result<Self> {
        Self::from_fn(height, width, |r, c| {
            let dy = r as f32 - center_row;
            let dx = c as f32 - center_col;
            dy * dy + dx * dx <= radius * radius
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn complement(&self) -> Mask {
        Mask {
            data: self.data.iter().map(|b| !b).collect(),
            ..self.clone()
        }
    }

    pub fn union(&self, other: &Mask) -> Result<Mask> {
        self.ensure_same_dims(other)?;
        Ok(Mask {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| *a || *b)
                .collect(),
            ..self.clone()
        })
    }

    pub(crate) fn ensure_same_dims(&self, other: &Mask) -> Result<()> {
        if (self.height, self.width) == (other.height, other.width) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "mask {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )))
        }
    }

    /// The mask as a one-channel grid of 0.0 / 1.0.
    pub fn to_grid(&self) -> LatentGrid {
        LatentGrid {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self
                .data
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect(),
        }
    }
}

/// Nonnegative per-pixel weights, broadcast across channels.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl WeightMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let len = checked_len(height, width, 1)?;
        if data.len() != len {
            return Err(Error::Shape(format!(
                "{height}x{width} weight map needs {len} values, got {}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::Parameter(format!(
                "weights must be finite and >= 0, found {bad}"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn ones(height: usize, width: usize) -> Result<Self> {
        let len = checked_len(height, width, 1)?;
        Ok(Self {
            height,
            width,
            data: vec![1.0; len],
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn scale(&self, k: f32) -> Result<WeightMap> {
        WeightMap::new(
            self.height,
            self.width,
            self.data.iter().map(|w| w * k).collect(),
        )
    }
}

impl From<&Mask> for WeightMap {
    fn from(mask: &Mask) -> Self {
        WeightMap {
            height: mask.height,
            width: mask.width,
            data: mask
                .data
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect(),
        }
    }
}

/// `out[p, c] = w[p] * grid[p, c]`.
pub fn hadamard(weights: &WeightMap, grid: &LatentGrid) -> Result<LatentGrid> {
    if (weights.height, weights.width) != (grid.height, grid.width) {
        return Err(Error::Shape(format!(
            "weights {}x{} vs grid {}x{}",
            weights.height, weights.width, grid.height, grid.width
        )));
    }
    let c = grid.channels;
    let data = grid
        .data
        .chunks_exact(c)
        .zip(&weights.data)
        .flat_map(|(px, &w)| px.iter().map(move |&v| w * v))
        .collect();
    LatentGrid::from_vec(grid.height, grid.width, c, data)
}
