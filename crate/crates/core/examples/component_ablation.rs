//! Train every combination of the three triplet losses, with and without
//! gradient weighting, and print the mean retrieval scores.

use modalmetric::experiment::{cmd_ablate, RunConfig};

pub fn run_example() -> modalmetric::Result<()> {
    let out = std::env::temp_dir().join(format!("modalmetric-ablate-{}", std::process::id()));
    let cfg = RunConfig::parse(
        "[data]\nn_classes = 10\nsamples_per_class = 8\n[split]\nn_unseen = 3\n\
         [train]\ntotal_iters = 150\np = 4\n[run]\nn_seeds = 2\n",
        &[("run.out".into(), out.display().to_string())],
    )?;
    let table = cmd_ablate(&cfg)?;
    for row in &table.rows {
        println!(
            "{:<14} mAP@all {:.4} ± {:.4}",
            row.label,
            row.mean("map_at_all"),
            row.summary.std["map_at_all"]
        );
    }
    std::fs::remove_dir_all(&out)?;
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
