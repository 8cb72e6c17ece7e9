//! Compare baseline, MATHM and the adversarial variant on within-class
//! modality gap and between-class discrepancy.

use modalmetric::experiment::{cmd_diagnose, RunConfig};

pub fn run_example() -> modalmetric::Result<()> {
    let out = std::env::temp_dir().join(format!("modalmetric-diagnose-{}", std::process::id()));
    let cfg = RunConfig::parse(
        "[train]\ntotal_iters = 300\n[run]\nn_seeds = 2\n",
        &[("run.out".into(), out.display().to_string())],
    )?;
    let table = cmd_diagnose(&cfg)?;
    println!("{:>9} {:>8} {:>8} {:>8} {:>8}", "method", "gap", "between", "between", "mAP");
    println!("{:>9} {:>8} {:>8} {:>8} {:>8}", "", "", "same", "cross", "");
    for row in &table.rows {
        println!(
            "{:>9} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            row.label,
            row.mean("modality_gap"),
            row.mean("between_class_same_modality"),
            row.mean("between_class_cross_modality"),
            row.mean("map_at_all")
        );
    }
    println!("table written to {}", out.join("diagnose/table.csv").display());
    std::fs::remove_dir_all(&out)?;
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
