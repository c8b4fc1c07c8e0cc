//! View mappings between the canvas and the reference model's image space.
//!
//! A view samples pixels of the canvas (a crop window, or the whole canvas for
//! the masked kinds) and carries per-pixel weights over its reference extent.
//! [`ViewMap::scatter_accumulate`] is the inverse direction: it adds weighted
//! values back at the canvas positions the view sampled.

use crate::error::{Error, Result};
use crate::grid::{LatentGrid, Mask, WeightMap};
use crate::schedule::NoiseSchedule;

/// Where the constant background colour of a bootstrapped view comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum BackgroundSource {
    /// One value per channel, or one value for all channels.
    Fixed(Vec<f32>),
    /// Drawn once per run from the run's seed, uniform in `[0, 1)` per channel.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViewKind {
    Crop {
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    },
    MaskedIdentity {
        mask: Mask,
    },
    /// Masked identity whose input is blended with a noised constant background
    /// while `t > threshold`.
    Bootstrapped {
        mask: Mask,
        threshold: usize,
        background: BackgroundSource,
    },
}

/// Per-step state needed to realize bootstrapped views.
#[derive(Debug, Clone, Copy)]
pub struct BootstrapContext<'a> {
    pub schedule: &'a NoiseSchedule,
    /// Colour used by [`BackgroundSource::Random`] views in this run.
    pub random_color: &'a [f32],
    /// Canvas-sized epsilon for the current step.
    pub epsilon: &'a LatentGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewMap {
    kind: ViewKind,
    weights: WeightMap,
}

impl ViewMap {
    /// Crop window with all-ones weights.
    pub fn crop(top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        Ok(Self {
            kind: ViewKind::Crop {
                top,
                left,
                height,
                width,
            },
            weights: WeightMap::ones(height, width)?,
        })
    }

    /// Whole-canvas view weighted by `mask`.
    pub fn masked_identity(mask: Mask) -> Self {
        let weights = WeightMap::from(&mask);
        Self {
            kind: ViewKind::MaskedIdentity { mask },
            weights,
        }
    }

    /// Masked identity that sees a noised constant background outside `mask`
    /// for every step `t > threshold`.
    pub fn bootstrapped(mask: Mask, threshold: usize, background: BackgroundSource) -> Self {
        let weights = WeightMap::from(&mask);
        Self {
            kind: ViewKind::Bootstrapped {
                mask,
                threshold,
                background,
            },
            weights,
        }
    }

    /// Replaces the weights; dimensions are checked by [`ViewMap::validate`].
    pub fn with_weights(mut self, weights: WeightMap) -> Self {
        self.weights = weights;
        self
    }

    pub fn kind(&self) -> &ViewKind {
        &self.kind
    }

    pub fn weights(&self) -> &WeightMap {
        &self.weights
    }

    /// `(top, left, height, width)` of the canvas area this view samples.
    pub fn footprint(
        &self,
        canvas_height: usize,
        canvas_width: usize,
    ) -> (usize, usize, usize, usize) {
        match &self.kind {
            ViewKind::Crop {
                top,
                left,
                height,
                width,
            } => (*top, *left, *height, *width),
            _ => (0, 0, canvas_height, canvas_width),
        }
    }

    pub fn validate(&self, canvas_height: usize, canvas_width: usize) -> Result<()> {
        match &self.kind {
            ViewKind::Crop {
                top,
                left,
                height,
                width,
            } => {
                if *height == 0
                    || *width == 0
                    || top + height > canvas_height
                    || left + width > canvas_width
                {
                    return Err(Error::range(
                        "crop window",
                        format!(
                            "({top},{left}) {height}x{width} on a {canvas_height}x{canvas_width} canvas"
                        ),
                    ));
                }
            }
            ViewKind::MaskedIdentity { mask } | ViewKind::Bootstrapped { mask, .. } => {
                if (mask.height(), mask.width()) != (canvas_height, canvas_width) {
                    return Err(Error::Shape(format!(
                        "mask {}x{} on a {canvas_height}x{canvas_width} canvas",
                        mask.height(),
                        mask.width()
                    )));
                }
            }
        }
        let (_, _, h, w) = self.footprint(canvas_height, canvas_width);
        if (self.weights.height(), self.weights.width()) != (h, w) {
            return Err(Error::Shape(format!(
                "weights {}x{} for a view of extent {h}x{w}",
                self.weights.height(),
                self.weights.width()
            )));
        }
        Ok(())
    }

    /// True when `extract` at step `t` blends in the background.
    pub fn is_bootstrapping(&self, t: usize) -> bool {
        matches!(&self.kind, ViewKind::Bootstrapped { threshold, .. } if t > *threshold)
    }

    /// The pure pixel-sampling part of the view (no bootstrapping).
    pub fn restrict(&self, canvas: &LatentGrid) -> Result<LatentGrid> {
        self.validate(canvas.height(), canvas.width())?;
        match &self.kind {
            ViewKind::Crop {
                top,
                left,
                height,
                width,
            } => canvas.crop(*top, *left, *height, *width),
            _ => Ok(canvas.clone()),
        }
    }

    /// The reference-space input for step `t`.
    ///
    /// Crops and masked identities ignore `t`. A bootstrapped view returns
    /// `mask * canvas + (1 - mask) * S_t` while `t > threshold`, with `S_t` the
    /// background colour noised to level `t` using `ctx.epsilon`.
    pub fn extract(
        &self,
        canvas: &LatentGrid,
        t: usize,
        ctx: Option<&BootstrapContext<'_>>,
    ) -> Result<LatentGrid> {
        let ViewKind::Bootstrapped {
            mask, background, ..
        } = &self.kind
        else {
            return self.restrict(canvas);
        };
        if !self.is_bootstrapping(t) {
            return self.restrict(canvas);
        }
        self.validate(canvas.height(), canvas.width())?;
        let ctx = ctx.ok_or_else(|| {
            Error::Parameter(format!(
                "bootstrapped view at t = {t} needs a background context"
            ))
        })?;
        ctx.schedule.check_step(t)?;
        let (h, w, c) = canvas.dims();
        let color: &[f32] = match background {
            BackgroundSource::Fixed(v) => v,
            BackgroundSource::Random => ctx.random_color,
        };
        let color = match color.len() {
            1 => vec![color[0]; c],
            n if n == c => color.to_vec(),
            n => {
                return Err(Error::Shape(format!(
                    "background colour has {n} values for {c} channels"
                )))
            }
        };
        let flat = LatentGrid::from_fn(h, w, c, |_, _, ch| color[ch])?;
        let noised = ctx.schedule.add_noise(&flat, t, ctx.epsilon)?;
        LatentGrid::from_fn(h, w, c, |r, col, ch| {
            if mask.get(r, col) {
                canvas.get(r, col, ch)
            } else {
                noised.get(r, col, ch)
            }
        })
    }

    /// `num[p] += weight * values` and `den[p] += weight` for every canvas pixel
    /// the view samples with nonzero weight. `den` has one channel.
    pub fn scatter_accumulate(
        &self,
        values: &LatentGrid,
        num: &mut LatentGrid,
        den: &mut LatentGrid,
    ) -> Result<()> {
        let (ch, cw, c) = num.dims();
        self.validate(ch, cw)?;
        let (top, left, h, w) = self.footprint(ch, cw);
        if values.dims() != (h, w, c) {
            return Err(Error::Shape(format!(
                "scatter values {:?} for a view of extent {:?}",
                values.dims(),
                (h, w, c)
            )));
        }
        if den.dims() != (ch, cw, 1) {
            return Err(Error::Shape(format!(
                "weight accumulator {:?} for a {ch}x{cw} canvas",
                den.dims()
            )));
        }
        let num_data = num.data_mut();
        let den_data = den.data_mut();
        for r in 0..h {
            for col in 0..w {
                let wgt = self.weights.get(r, col);
                if wgt == 0.0 {
                    continue;
                }
                let p = (top + r) * cw + left + col;
                den_data[p] += wgt;
                let src = (r * w + col) * c;
                for k in 0..c {
                    num_data[p * c + k] += wgt * values.data()[src + k];
                }
            }
        }
        Ok(())
    }

    /// `(canvas pixel index, view pixel index, weight)` for every sampled pixel.
    pub(crate) fn pixel_pairs(
        &self,
        canvas_height: usize,
        canvas_width: usize,
    ) -> impl Iterator<Item = (usize, usize, f32)> + '_ {
        let (top, left, h, w) = self.footprint(canvas_height, canvas_width);
        (0..h).flat_map(move |r| {
            (0..w).map(move |col| {
                (
                    (top + r) * canvas_width + left + col,
                    r * w + col,
                    self.weights.get(r, col),
                )
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SeedStreams, Stream};

    fn canvas(h: usize, w: usize, c: usize) -> LatentGrid {
        SeedStreams::new(1)
            .normal_grid(Stream::InitNoise, h, w, c)
            .unwrap()
    }

    #[test]
    fn full_crop_is_identity() {
        let g = canvas(5, 7, 2);
        let v = ViewMap::crop(0, 0, 5, 7).unwrap();
        assert_eq!(v.extract(&g, 3, None).unwrap(), g);
        assert!(ViewMap::crop(1, 0, 5, 7)
            .unwrap()
            .extract(&g, 3, None)
            .is_err());
    }

    #[test]
    fn bootstrapped_identity_cases() {
        let s = NoiseSchedule::desk(50).unwrap();
        let g = canvas(6, 6, 1);
        let eps = SeedStreams::new(2)
            .normal_grid(Stream::BackgroundNoise { t: 50 }, 6, 6, 1)
            .unwrap();
        let ctx = BootstrapContext {
            schedule: &s,
            random_color: &[0.3],
            epsilon: &eps,
        };
        let half = Mask::rect(6, 6, 0, 0, 6, 3).unwrap();
        let v = ViewMap::bootstrapped(half.clone(), 40, BackgroundSource::Random);
        // at and below the threshold the view is the identity, with or without context
        assert_eq!(v.extract(&g, 40, Some(&ctx)).unwrap(), g);
        assert_eq!(v.extract(&g, 1, None).unwrap(), g);
        // above it the outside is replaced with the noised background
        let out = v.extract(&g, 50, Some(&ctx)).unwrap();
        let ab = s.alpha_bar(50);
        for r in 0..6 {
            for c in 0..6 {
                let expected = if c < 3 {
                    g.get(r, c, 0)
                } else {
                    (ab.sqrt() * 0.3 + (1.0 - ab).sqrt() * eps.get(r, c, 0) as f64) as f32
                };
                assert!((out.get(r, c, 0) - expected).abs() < 1e-6);
            }
        }
        assert!(v.extract(&g, 50, None).is_err());
        // an all-ones mask leaves nothing to replace
        let full = ViewMap::bootstrapped(
            Mask::filled(6, 6, true).unwrap(),
            10,
            BackgroundSource::Fixed(vec![0.9]),
        );
        assert_eq!(full.extract(&g, 50, Some(&ctx)).unwrap(), g);
    }

    #[test]
    fn scatter_counts() {
        let mut num = LatentGrid::zeros(4, 6, 1).unwrap();
        let mut den = LatentGrid::zeros(4, 6, 1).unwrap();
        let a = ViewMap::crop(0, 0, 4, 4).unwrap();
        a.scatter_accumulate(&LatentGrid::new(4, 4, 1, 1.0).unwrap(), &mut num, &mut den)
            .unwrap();
        for r in 0..4 {
            for c in 0..6 {
                assert_eq!(den.get(r, c, 0), if c < 4 { 1.0 } else { 0.0 });
            }
        }
        let b = ViewMap::crop(0, 2, 4, 4).unwrap();
        b.scatter_accumulate(&LatentGrid::new(4, 4, 1, 1.0).unwrap(), &mut num, &mut den)
            .unwrap();
        assert_eq!(den.get(2, 2, 0), 2.0);
        assert_eq!(den.get(2, 3, 0), 2.0);
        assert_eq!(den.get(2, 5, 0), 1.0);
        let wrong = LatentGrid::zeros(3, 4, 1).unwrap();
        assert!(a.scatter_accumulate(&wrong, &mut num, &mut den).is_err());
    }

    #[test]
    fn masked_scatter_weights_equal_mask() {
        let m = Mask::disk(7, 9, 3.0, 4.0, 2.5).unwrap();
        let v = ViewMap::masked_identity(m.clone());
        assert_eq!(v.weights(), &WeightMap::from(&m));
        let mut num = LatentGrid::zeros(7, 9, 2).unwrap();
        let mut den = LatentGrid::zeros(7, 9, 1).unwrap();
        v.scatter_accumulate(&canvas(7, 9, 2), &mut num, &mut den)
            .unwrap();
        assert_eq!(den, m.to_grid());
    }

    #[test]
    fn crop_round_trip_through_scatter() {
        let g = canvas(5, 8, 3);
        let v = ViewMap::crop(1, 2, 3, 5).unwrap();
        let window = v.extract(&g, 1, None).unwrap();
        let mut num = LatentGrid::zeros(5, 8, 3).unwrap();
        let mut den = LatentGrid::zeros(5, 8, 1).unwrap();
        v.scatter_accumulate(&window, &mut num, &mut den).unwrap();
        for r in 1..4 {
            for c in 2..7 {
                for k in 0..3 {
                    assert_eq!(num.get(r, c, k) / den.get(r, c, 0), g.get(r, c, k));
                }
            }
        }
    }

    #[test]
    fn validation_errors() {
        assert!(ViewMap::crop(0, 0, 3, 3).unwrap().validate(2, 5).is_err());
        let m = Mask::filled(3, 3, true).unwrap();
        assert!(ViewMap::masked_identity(m.clone()).validate(3, 4).is_err());
        let v = ViewMap::masked_identity(m).with_weights(WeightMap::ones(2, 2).unwrap());
        assert!(v.validate(3, 3).is_err());
    }
}
