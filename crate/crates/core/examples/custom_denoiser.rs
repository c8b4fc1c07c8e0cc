//! Plugging a user-defined reference model into the registry. This one pulls
//! every sample toward a horizontal gradient, then a panorama is built from it.

use multidiffusion::*;

/// Predicts the noise that would separate `x_t` from a fixed left-to-right ramp.
#[derive(Debug)]
struct Ramp;

impl NoisePredictor for Ramp {
    fn predict(&self, schedule: &NoiseSchedule, x_t: &LatentGrid, t: usize) -> Result<LatentGrid> {
        let ab = schedule.alpha_bar(t);
        let (h, w, c) = x_t.dims();
        let x0 = LatentGrid::from_fn(h, w, c, |_, col, _| col as f32 / (w - 1).max(1) as f32)?;
        let k = (ab.sqrt() / (1.0 - ab).sqrt()) as f32;
        let s = (1.0 / (1.0 - ab).sqrt()) as f32;
        x_t.zip_map(&x0, |x, m| s * x - k * m)
    }
}

fn main() -> Result<()> {
    let registry = Registry::new().with("ramp", Ramp);
    let schedule = NoiseSchedule::desk(30)?;
    let plan = build_panorama_plan(
        &PanoramaSpec::new(16, 64, 1, "ramp")
            .with_window(16, 16)
            .with_stride(4),
    )?;
    let out = multidiffusion_sample(&plan, &schedule, &registry)?;
    let row: Vec<String> = (0..64)
        .step_by(4)
        .map(|c| format!("{:.2}", out.image.get(8, c, 0)))
        .collect();
    println!("middle row, every 4th pixel: {}", row.join(" "));
    println!(
        "every window wants its own ramp, so the fully overlapped middle settles on their average"
    );
    Ok(())
}
