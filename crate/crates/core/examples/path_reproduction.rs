//! When views tile the canvas without overlap, fusion is exact: every tile of
//! the fused sample is the sample the reference model alone would produce from
//! the same window of starting noise.

use multidiffusion::denoiser::rollout;
use multidiffusion::fusion::Sampler;
use multidiffusion::*;

fn main() -> Result<()> {
    let registry = Registry::new().with(
        "g",
        GaussianDenoiser::new(Pattern::Constant(vec![0.5]), 0.5)?,
    );
    let schedule = NoiseSchedule::desk(50)?;
    let tiles = [(0, 0), (0, 8), (8, 0), (8, 8)];
    let views = tiles
        .iter()
        .map(|&(r, c)| Ok(PlanView::new(ViewMap::crop(r, c, 8, 8)?, "g")))
        .collect::<Result<Vec<_>>>()?;
    let plan = FusionPlan::new(16, 16, 1, views)?.with_seed(12);

    let sampler = Sampler::new(&plan, &schedule, &registry)?;
    let start = sampler.initial_noise()?;
    let out = sampler.run_from(start.clone())?;
    let worst_loss = out.reports.iter().map(|r| r.ftd_loss).fold(0.0, f64::max);
    println!("largest per-step loss: {worst_loss:e}");

    for (r, c) in tiles {
        let alone = rollout(
            &registry,
            &schedule,
            &"g".into(),
            start.crop(r, c, 8, 8)?,
            StepMode::Deterministic,
            |_| unreachable!("deterministic sampling draws no step noise"),
        )?;
        let diff = out.image.crop(r, c, 8, 8)?.max_abs_diff(&alone)?;
        println!("tile at ({r:>2},{c:>2}): max difference from standalone path {diff:e}");
    }
    Ok(())
}
