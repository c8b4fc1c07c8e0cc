//! Two overlapping weighted views disagree about a shared strip; `fuse` returns
//! the per-pixel weighted average, which gradient descent on the same
//! objective also finds.

use multidiffusion::fusion::oracle_minimize;
use multidiffusion::*;

fn main() -> Result<()> {
    let left = ViewMap::crop(0, 0, 2, 4)?;
    let right = ViewMap::crop(0, 2, 2, 4)?.with_weights(WeightMap::new(2, 4, vec![3.0; 8])?);
    let plan = FusionPlan::new(
        2,
        6,
        1,
        vec![PlanView::new(left, "a"), PlanView::new(right, "a")],
    )?;

    let targets = vec![
        LatentGrid::new(2, 4, 1, 0.0)?,
        LatentGrid::new(2, 4, 1, 4.0)?,
    ];
    let fused = fuse(&plan, &targets)?;
    let descended = oracle_minimize(&plan, &targets, 5_000, 0.05)?;

    println!("fused row:      {:?}", &fused.data()[..6]);
    println!("descended row:  {:?}", &descended.data()[..6]);
    println!("loss at fused:  {:.6}", ftd_loss(&plan, &fused, &targets)?);
    println!(
        "loss at zeros:  {:.6}",
        ftd_loss(&plan, &LatentGrid::zeros(2, 6, 1)?, &targets)?
    );
    Ok(())
}
