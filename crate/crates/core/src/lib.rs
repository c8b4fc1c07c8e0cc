//! Training-free fusion of diffusion sampling paths.
//!
//! A pretrained reference sampler that works on fixed-size grids is run on
//! many views of a larger (or region-controlled) canvas, and every step the
//! per-view results are reconciled into a single canvas by a closed-form
//! weighted least-squares fit.

pub mod cli;
pub mod denoiser;
pub mod error;
pub mod fusion;
pub mod grid;
pub mod mapping;
pub mod metrics;
pub mod panorama;
pub mod pnm;
pub mod region;
pub mod rng;
pub mod schedule;

pub use denoiser::{
    Condition, GaussianDenoiser, NoisePredictor, Pattern, PatternDenoiser, Registry,
};
pub use error::{Error, Result};
pub use fusion::{
    ftd_loss, fuse, multidiffusion_sample, FusionPlan, NoisePolicy, PlanView, SampleOutput,
    Sampler, StepReport,
};
pub use grid::{LatentGrid, Mask, WeightMap};
pub use mapping::{BackgroundSource, ViewMap};
pub use metrics::{foreground_threshold, gaussian_stats, iou, seam_score, Boundary, SeamReport};
pub use panorama::{build_panorama_plan, PanoramaSpec};
pub use region::{build_region_plan, run_region_ablation, AblationReport, Region, RegionSpec};
pub use schedule::{NoiseSchedule, StepMode};
