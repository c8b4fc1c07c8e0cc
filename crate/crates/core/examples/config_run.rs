//! Driving a whole run from flat `key = value` text, as the binary does.

use multidiffusion::cli::{parse_config, run};

fn main() -> multidiffusion::Result<()> {
    let dir = std::env::temp_dir();
    let text = format!(
        "command = region
height = 24
width = 48
channels = 3
steps = 30
seed = 5
token.warm.pattern = constant 0.9,0.4,0.1
token.cool.pattern = stripes 6 cols 0.1 0.5
region.0.token = warm
region.0.rect = 4,6,16,16
region.1.token = cool
region.1.background = true
out = {out}
report = {report}
",
        out = dir.join("config_run.ppm").display(),
        report = dir.join("config_run_steps.txt").display(),
    );
    let config = parse_config(&text, None)?;
    let summary = run(&config)?;
    for (k, v) in &summary.metrics {
        println!("{k}={v}");
    }
    println!("image and step report written under {}", dir.display());
    Ok(())
}
