//! Labelled random streams derived from one root seed.
//!
//! Every consumer of randomness gets its own ChaCha stream keyed by the root
//! seed and a fixed label, so adding a view or toggling bootstrapping never
//! shifts the draws seen by anything else.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::grid::LatentGrid;

/// What a stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    /// Initial canvas `J_T`.
    InitNoise,
    /// Canvas-sized ancestral noise for step `t`.
    StepNoise { t: usize },
    /// Independent ancestral noise for one view at step `t`.
    ViewNoise { t: usize, view: usize },
    /// The per-run random background colour.
    BackgroundColor,
    /// Epsilon used to noise the background to level `t`.
    BackgroundNoise { t: usize },
    /// Seed of one tile in an independently sampled tiling.
    TileSeed { index: usize },
}

impl Stream {
    fn id(self) -> u64 {
        const T_BITS: u64 = 24;
        let t_mask = (1u64 << T_BITS) - 1;
        match self {
            Stream::InitNoise => 1 << 56,
            Stream::StepNoise { t } => (2 << 56) | (t as u64 & t_mask),
            Stream::ViewNoise { t, view } => {
                (3 << 56) | ((view as u64 & 0xff_ffff) << T_BITS) | (t as u64 & t_mask)
            }
            Stream::BackgroundColor => 4 << 56,
            Stream::BackgroundNoise { t } => (5 << 56) | (t as u64 & t_mask),
            Stream::TileSeed { index } => (6 << 56) | (index as u64 & t_mask),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStreams {
    root: u64,
}

impl SeedStreams {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn rng(&self, stream: Stream) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.root);
        rng.set_stream(stream.id());
        rng
    }

    pub fn normal_grid(
        &self,
        stream: Stream,
        height: usize,
        width: usize,
        channels: usize,
    ) -> Result<LatentGrid> {
        normal_grid(&mut self.rng(stream), height, width, channels)
    }
}

/// Grid of i.i.d. standard normal draws, filled in row-major order.
pub fn normal_grid<R: Rng + ?Sized>(
    rng: &mut R,
    height: usize,
    width: usize,
    channels: usize,
) -> Result<LatentGrid> {
    let mut g = LatentGrid::zeros(height, width, channels)?;
    for v in g.data_mut() {
        *v = rng.sample(StandardNormal);
    }
    Ok(g)
}
