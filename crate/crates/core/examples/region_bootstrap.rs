//! Region control with a disk mask, with and without the bootstrapping phase
//! that shows each region a noised flat background during the first steps.
//!
//! Usage: `cargo run --release --example region_bootstrap [out_dir]`

use std::path::PathBuf;

use multidiffusion::pnm::{self, ImageMode};
use multidiffusion::*;

fn main() -> Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| ".".into()));
    let token = |v: f32| -> Result<PatternDenoiser> {
        Ok(PatternDenoiser::new(Pattern::Constant(vec![v]), 0.5)?.with_context(2))
    };
    let registry = Registry::new()
        .with("sun", token(1.0)?)
        .with("sky", token(0.0)?);
    let schedule = NoiseSchedule::desk(50)?;

    let disk = Mask::disk(32, 32, 15.5, 15.5, 8.0)?;
    let spec = RegionSpec::new(32, 32, 1)
        .with_region(Region::new(disk.clone(), "sun"))
        .with_background_region("sky")?
        .with_t_init(10);

    for (name, bootstrap) in [("bootstrapped", true), ("plain", false)] {
        let plan = build_region_plan(&spec.clone().with_bootstrap(bootstrap), 50)?.with_seed(4);
        let image = multidiffusion_sample(&plan, &schedule, &registry)?.image;
        let found = foreground_threshold(&image, &[1.0], 0.25)?;
        println!("{name:>12}: IoU {:.3}", iou(&found, &disk)?);
        let path = dir.join(format!("region_{name}.pgm"));
        pnm::write_image(&image.map(|v| v.clamp(0.0, 1.0)), &path, ImageMode::Gray)?;
    }

    let seeds: Vec<u64> = (0..10).collect();
    let report = run_region_ablation(
        &spec,
        &schedule,
        &registry,
        StepMode::Deterministic,
        &seeds,
        0.25,
    )?;
    println!(
        "mean IoU over {} seeds: {:.3} bootstrapped, {:.3} plain",
        seeds.len(),
        report.mean_bootstrapped(),
        report.mean_plain()
    );
    Ok(())
}
