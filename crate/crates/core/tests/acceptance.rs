//! Acceptance checks. Each criterion prints one PASS/FAIL line; the process
//! exits nonzero if any of them fails.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use multidiffusion::denoiser::{rollout, seeded_rollout};
use multidiffusion::fusion::{oracle_minimize, Sampler};
use multidiffusion::panorama::{independent_tiles, window_offsets};
use multidiffusion::rng::{SeedStreams, Stream};
use multidiffusion::*;

type Outcome = std::result::Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lib<T>(r: multidiffusion::Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

// ---------------------------------------------------------------------------
// 1. closed-form optimality

fn random_plan(rng: &mut ChaCha8Rng) -> FusionPlan {
    loop {
        let h = rng.random_range(1..=6);
        let w = rng.random_range(1..=6);
        let c = rng.random_range(1..=2);
        let n = rng.random_range(1..=4);
        let views: Vec<PlanView> = (0..n)
            .map(|_| {
                let vh = rng.random_range(1..=h);
                let vw = rng.random_range(1..=w);
                let top = rng.random_range(0..=h - vh);
                let left = rng.random_range(0..=w - vw);
                let weights: Vec<f32> = (0..vh * vw)
                    .map(|_| {
                        if rng.random_bool(0.15) {
                            0.0
                        } else {
                            rng.random_range(0.05..1.0)
                        }
                    })
                    .collect();
                let view = ViewMap::crop(top, left, vh, vw)
                    .unwrap()
                    .with_weights(WeightMap::new(vh, vw, weights).unwrap());
                PlanView::new(view, "x")
            })
            .collect();
        if let Ok(plan) = FusionPlan::new(h, w, c, views) {
            if plan.total_weight().data().iter().all(|&d| d >= 0.05) {
                return plan;
            }
        }
    }
}

/// Dense least squares over every canvas entry at once: each view pixel
/// contributes the row `sqrt(w) * e_p` with right-hand side `sqrt(w) * target`.
fn dense_lstsq(plan: &FusionPlan, targets: &[LatentGrid]) -> Vec<f64> {
    let (h, w, c) = plan.dims();
    let mut rows: Vec<(usize, f64, f64)> = Vec::new();
    for (pv, target) in plan.views().iter().zip(targets) {
        let (top, left, vh, vw) = match pv.view.kind() {
            mapping::ViewKind::Crop {
                top,
                left,
                height,
                width,
            } => (*top, *left, *height, *width),
            _ => unreachable!(),
        };
        for r in 0..vh {
            for col in 0..vw {
                let sw = (pv.view.weights().get(r, col) as f64).sqrt();
                for k in 0..c {
                    let p = ((top + r) * w + left + col) * c + k;
                    rows.push((p, sw, sw * target.get(r, col, k) as f64));
                }
            }
        }
    }
    let n = h * w * c;
    let mut a = DMatrix::<f64>::zeros(rows.len(), n);
    let mut b = DVector::<f64>::zeros(rows.len());
    for (i, &(p, coef, rhs)) in rows.iter().enumerate() {
        a[(i, p)] = coef;
        b[i] = rhs;
    }
    let x = a.svd(true, true).solve(&b, 1e-12).expect("svd solve");
    x.iter().copied().collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2023);
    let (mut worst_ls, mut worst_gd) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let plan = random_plan(&mut rng);
        let (_, _, c) = plan.dims();
        let targets: Vec<LatentGrid> = plan
            .views()
            .iter()
            .map(|pv| {
                let (_, _, vh, vw) = pv.view.footprint(plan.dims().0, plan.dims().1);
                LatentGrid::from_fn(vh, vw, c, |_, _, _| rng.random_range(-2.0..2.0)).unwrap()
            })
            .collect();
        let fused = lib(fuse(&plan, &targets))?;
        let ls = dense_lstsq(&plan, &targets);
        let gd = lib(oracle_minimize(&plan, &targets, 10_000, 0.1))?;
        for (i, &v) in fused.data().iter().enumerate() {
            worst_ls = worst_ls.max((v as f64 - ls[i]).abs());
            worst_gd = worst_gd.max((v - gd.data()[i]).abs() as f64);
        }
    }
    let elapsed = start.elapsed();
    ensure(worst_ls <= 1e-5, || {
        format!("least-squares oracle max diff {worst_ls:e}")
    })?;
    ensure(worst_gd <= 1e-5, || {
        format!("gradient-descent oracle max diff {worst_gd:e}")
    })?;
    ensure(elapsed < Duration::from_secs(10), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "100 plans, max |fuse-lstsq| {worst_ls:.1e}, max |fuse-gd| {worst_gd:.1e}, {elapsed:.2?}"
    ))
}

// ---------------------------------------------------------------------------
// 2. disjoint tiles reproduce standalone paths

fn gaussian_registry() -> Registry {
    Registry::new().with(
        "g",
        GaussianDenoiser::new(Pattern::Constant(vec![0.5, -0.25]), 0.5).unwrap(),
    )
}

fn four_tiles(c: usize) -> FusionPlan {
    let views = [(0, 0), (0, 8), (8, 0), (8, 8)]
        .iter()
        .map(|&(r, col)| PlanView::new(ViewMap::crop(r, col, 8, 8).unwrap(), "g"))
        .collect();
    FusionPlan::new(16, 16, c, views).unwrap()
}

fn criterion_2() -> Outcome {
    let schedule = lib(NoiseSchedule::desk(50))?;
    let reg = gaussian_registry();
    let plan = four_tiles(2)
        .with_seed(99)
        .with_noise_policy(NoisePolicy::SharedCanvas);
    let sampler = lib(Sampler::new(&plan, &schedule, &reg))?;
    let j_t = lib(sampler.initial_noise())?;
    let out = lib(sampler.run_from(j_t.clone()))?;
    let worst_loss = out.reports.iter().map(|r| r.ftd_loss).fold(0.0, f64::max);
    let mut worst = 0.0f32;
    for &(r, col) in &[(0, 0), (0, 8), (8, 0), (8, 8)] {
        let start = lib(j_t.crop(r, col, 8, 8))?;
        let standalone = lib(rollout(
            &reg,
            &schedule,
            &"g".into(),
            start,
            StepMode::Deterministic,
            |_| unreachable!("deterministic rollouts draw no noise"),
        ))?;
        worst = worst.max(lib(
            lib(out.image.crop(r, col, 8, 8))?.max_abs_diff(&standalone)
        )?);
    }
    ensure(out.reports.len() == 50, || {
        format!("{} step reports", out.reports.len())
    })?;
    ensure(worst <= 1e-6, || {
        format!("tile vs standalone max diff {worst:e}")
    })?;
    ensure(worst_loss <= 1e-10, || {
        format!("max step loss {worst_loss:e}")
    })?;
    Ok(format!(
        "max tile diff {worst:.1e}, max step loss {worst_loss:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// 3. distributional consistency

const MEAN: f32 = 0.5;
const SCALE: f32 = 0.5;
const RUNS: u64 = 500;

/// Largest |sample mean - MEAN| in units of its standard error, over pixels.
fn worst_z(samples: &[LatentGrid]) -> f64 {
    let n = samples.len() as f64;
    let len = samples[0].data().len();
    (0..len)
        .map(|i| {
            let vals: Vec<f64> = samples.iter().map(|s| s.data()[i] as f64).collect();
            let m = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
            (m - MEAN as f64).abs() / (var / n).sqrt()
        })
        .fold(0.0, f64::max)
}

fn criterion_3() -> Outcome {
    let schedule = lib(NoiseSchedule::desk(50))?;
    let reg = Registry::new().with(
        "g",
        GaussianDenoiser::new(Pattern::Constant(vec![MEAN]), SCALE).unwrap(),
    );
    let plain: Vec<LatentGrid> = (0..RUNS)
        .map(|seed| {
            lib(seeded_rollout(
                &reg,
                &schedule,
                &"g".into(),
                (8, 8, 1),
                StepMode::Ancestral,
                seed,
            ))
        })
        .collect::<std::result::Result<_, _>>()?;
    let z_plain = worst_z(&plain);

    let plan = four_tiles(1).with_mode(StepMode::Ancestral);
    let fused: Vec<LatentGrid> = (0..RUNS)
        .map(|seed| {
            lib(multidiffusion_sample(
                &plan.clone().with_seed(seed),
                &schedule,
                &reg,
            ))
            .map(|o| o.image)
        })
        .collect::<std::result::Result<_, _>>()?;
    let mut z_tiles = 0.0f64;
    for &(r, col) in &[(0, 0), (0, 8), (8, 0), (8, 8)] {
        let crops: Vec<LatentGrid> = fused
            .iter()
            .map(|g| g.crop(r, col, 8, 8).unwrap())
            .collect();
        z_tiles = z_tiles.max(worst_z(&crops));
    }
    ensure(z_plain < 5.0, || {
        format!("plain rollouts: worst pixel {z_plain:.2} SE from the mean")
    })?;
    ensure(z_tiles < 5.0, || {
        format!("fused tiles: worst pixel {z_tiles:.2} SE from the mean")
    })?;
    Ok(format!(
        "worst pixel {z_plain:.2} SE (plain), {z_tiles:.2} SE (fused tiles)"
    ))
}

// ---------------------------------------------------------------------------
// 4. seam reduction

fn stripes_registry() -> Registry {
    Registry::new().with(
        "stripes",
        PatternDenoiser::new("stripes 8 rows".parse().unwrap(), 0.5)
            .unwrap()
            .with_context(2),
    )
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let schedule = lib(NoiseSchedule::desk(50))?;
    let reg = stripes_registry();
    let spec = PanoramaSpec::new(64, 192, 4, "stripes");
    let plan = lib(build_panorama_plan(&spec))?;
    let (mut fused_total, mut tiles_total) = (0.0, 0.0);
    let mut detail = Vec::new();
    for seed in 0..5u64 {
        let tiles = lib(independent_tiles(
            &spec,
            &schedule,
            &reg,
            StepMode::Deterministic,
            seed,
        ))?;
        let seams: Vec<Boundary> = tiles
            .column_seams
            .iter()
            .map(|&x| Boundary::Column(x))
            .collect();
        let fused = lib(multidiffusion_sample(
            &plan.clone().with_seed(seed),
            &schedule,
            &reg,
        ))?
        .image;
        let f = lib(seam_score(&fused, &seams))?.mean;
        let t = lib(seam_score(&tiles.image, &seams))?.mean;
        fused_total += f;
        tiles_total += t;
        detail.push(format!("{:.2}", f / t));
    }
    let ratio = fused_total / tiles_total;
    let elapsed = start.elapsed();
    ensure(ratio <= 0.5, || {
        format!("fused/independent seam ratio {ratio:.3}")
    })?;
    ensure(elapsed < Duration::from_secs(30), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "fused/independent seam ratio {ratio:.3} (per seed {}), {elapsed:.2?}",
        detail.join(" ")
    ))
}

// ---------------------------------------------------------------------------
// 5. bootstrapping improves mask fidelity

fn disk_task() -> (RegionSpec, Registry) {
    let token = |v: f32| {
        PatternDenoiser::new(Pattern::Constant(vec![v]), 0.5)
            .unwrap()
            .with_context(2)
    };
    let reg = Registry::new()
        .with("disk", token(1.0))
        .with("ground", token(0.0));
    let disk = Mask::disk(32, 32, 15.5, 15.5, 8.0).unwrap();
    let spec = RegionSpec::new(32, 32, 1)
        .with_region(Region::new(disk, "disk"))
        .with_background_region("ground")
        .unwrap()
        .with_t_init(10);
    (spec, reg)
}

fn criterion_5() -> Outcome {
    let schedule = lib(NoiseSchedule::desk(50))?;
    let (spec, reg) = disk_task();
    let seeds: Vec<u64> = (0..10).collect();
    let report = lib(run_region_ablation(
        &spec,
        &schedule,
        &reg,
        StepMode::Deterministic,
        &seeds,
        0.25,
    ))?;
    let (on, off) = (report.mean_bootstrapped(), report.mean_plain());

    let zero = lib(build_region_plan(&spec.clone().with_t_init(0), 50))?;
    let plain = lib(build_region_plan(&spec.clone().with_bootstrap(false), 50))?;
    for &seed in &seeds {
        let a = lib(multidiffusion_sample(
            &zero.clone().with_seed(seed),
            &schedule,
            &reg,
        ))?
        .image;
        let b = lib(multidiffusion_sample(
            &plain.clone().with_seed(seed),
            &schedule,
            &reg,
        ))?
        .image;
        ensure(a == b, || {
            format!("t_init=0 differs from no bootstrapping at seed {seed}")
        })?;
    }
    ensure(on > off, || {
        format!("mean IoU {on:.3} with bootstrapping vs {off:.3} without")
    })?;
    ensure(on >= 0.6, || {
        format!("mean IoU with bootstrapping {on:.3} < 0.6")
    })?;
    Ok(format!(
        "mean IoU {on:.3} bootstrapped vs {off:.3} plain; t_init=0 bit-exact on 10 seeds"
    ))
}

// ---------------------------------------------------------------------------
// 6. panorama geometry

fn criterion_6() -> Outcome {
    let wide = lib(build_panorama_plan(&PanoramaSpec::new(64, 576, 4, "p")))?;
    ensure(wide.views().len() == 65, || {
        format!("{} views for 64x576", wide.views().len())
    })?;
    ensure(wide.total_weight().data().iter().all(|&d| d > 0.0), || {
        "64x576 not covered".into()
    })?;

    let clamped = lib(build_panorama_plan(&PanoramaSpec::new(64, 70, 4, "p")))?;
    let lefts: Vec<usize> = clamped
        .views()
        .iter()
        .map(|pv| pv.view.footprint(64, 70).1)
        .collect();
    ensure(lefts == vec![0, 6], || {
        format!("offsets {lefts:?} for width 70")
    })?;
    ensure(
        clamped.total_weight().data().iter().all(|&d| d > 0.0),
        || "64x70 not covered".into(),
    )?;
    ensure(lib(window_offsets(70, 64, 8))? == vec![0, 6], || {
        "window_offsets(70, 64, 8)".into()
    })?;
    Ok("64x576 -> 65 views; 64x70 -> offsets {0, 6}; both fully covered".into())
}

// ---------------------------------------------------------------------------
// 7. byte-identical outputs across thread counts

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for threads in [1, 2, 8] {
        let out = dir.path().join(format!("pano-{threads}.pgm"));
        let status = Command::new(env!("CARGO_BIN_EXE_multidiffusion"))
            .args([
                "panorama", "--height", "64", "--width", "160", "--prompt", "stripes",
            ])
            .args([
                "--steps",
                "20",
                "--seed",
                "7",
                "--threads",
                &threads.to_string(),
            ])
            .arg("--out")
            .arg(&out)
            .status()
            .map_err(|e| e.to_string())?;
        ensure(status.success(), || {
            format!("run with {threads} threads exited with {status}")
        })?;
        outputs.push(std::fs::read(&out).map_err(|e| e.to_string())?);
    }
    ensure(outputs[0] == outputs[1] && outputs[0] == outputs[2], || {
        "image bytes differ across thread counts".into()
    })?;
    Ok(format!(
        "{}-byte image identical at 1, 2 and 8 threads",
        outputs[0].len()
    ))
}

// ---------------------------------------------------------------------------
// 8. initial noise statistics per crop

fn criterion_8() -> Outcome {
    let plan = lib(build_panorama_plan(&PanoramaSpec::new(64, 576, 4, "p")))?.with_seed(11);
    let reg = Registry::new().with(
        "p",
        GaussianDenoiser::new(Pattern::Constant(vec![0.0]), 1.0).unwrap(),
    );
    let schedule = lib(NoiseSchedule::desk(50))?;
    let j_t = lib(lib(Sampler::new(&plan, &schedule, &reg))?.initial_noise())?;
    let bound = 4.0 / (16384f64).sqrt();
    let (mut worst_mean, mut worst_var) = (0.0f64, 0.0f64);
    for pv in plan.views() {
        let (m, v) = gaussian_stats(&lib(pv.view.restrict(&j_t))?);
        worst_mean = worst_mean.max(m.abs());
        worst_var = worst_var.max((v - 1.0).abs());
    }
    ensure(worst_mean < bound, || {
        format!("crop mean {worst_mean:.4} >= {bound:.4}")
    })?;
    ensure(worst_var < 0.1, || format!("crop |var-1| {worst_var:.4}"))?;
    // the streams must also be independent of the plan: same seed, same draw
    let direct = lib(SeedStreams::new(11).normal_grid(Stream::InitNoise, 64, 576, 4))?;
    ensure(direct == j_t, || {
        "initial noise does not come from the labelled stream".into()
    })?;
    Ok(format!(
        "65 crops: max |mean| {worst_mean:.4} (< {bound:.4}), max |var-1| {worst_var:.4}"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("closed-form optimality", criterion_1),
        ("disjoint tiles reproduce standalone paths", criterion_2),
        ("distributional consistency", criterion_3),
        ("seam reduction", criterion_4),
        ("bootstrapping direction", criterion_5),
        ("panorama geometry", criterion_6),
        ("reproducibility across thread counts", criterion_7),
        ("initial noise statistics", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
