//! A 64x576 panorama (nine windows wide) from a 64x64 striped reference model,
//! compared against stitching independently sampled tiles.
//!
//! Usage: `cargo run --release --example panorama [out.ppm]`

use multidiffusion::cli::{decode_image, DecodeRange};
use multidiffusion::panorama::independent_tiles;
use multidiffusion::pnm;
use multidiffusion::*;

fn main() -> Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "panorama.ppm".into());
    let registry = Registry::new().with(
        "stripes",
        PatternDenoiser::new("stripes 8 rows 0 1".parse()?, 0.5)?.with_context(2),
    );
    let schedule = NoiseSchedule::desk(50)?;
    let spec = PanoramaSpec::new(64, 576, 4, "stripes");
    let plan = build_panorama_plan(&spec)?.with_seed(1);
    println!("{} windows of 64x64 at stride 8", plan.views().len());

    let fused = multidiffusion_sample(&plan, &schedule, &registry)?;
    let tiles = independent_tiles(&spec, &schedule, &registry, StepMode::Deterministic, 1)?;
    let seams: Vec<Boundary> = tiles
        .column_seams
        .iter()
        .map(|&x| Boundary::Column(x))
        .collect();
    println!(
        "seam score, fused:       {:.4}",
        seam_score(&fused.image, &seams)?.mean
    );
    println!(
        "seam score, independent: {:.4}",
        seam_score(&tiles.image, &seams)?.mean
    );

    let (image, mode, ..) = decode_image(&fused.image, DecodeRange::Fixed { lo: 0.0, hi: 1.0 }, 1)?;
    pnm::write_image(&image, &out, mode)?;
    println!("wrote {out}");
    Ok(())
}
