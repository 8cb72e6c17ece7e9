//! Retrieval quality as the embedding-loss weight λ varies.

use modalmetric::experiment::{cmd_sweep_lambda, RunConfig};

pub fn run_example() -> modalmetric::Result<()> {
    let out = std::env::temp_dir().join(format!("modalmetric-sweep-{}", std::process::id()));
    let cfg = RunConfig::parse(
        "[data]\nn_classes = 10\nsamples_per_class = 8\n[split]\nn_unseen = 3\n\
         [train]\ntotal_iters = 150\np = 4\n[sweep]\nlambdas = 0, 0.5, 1, 2\n[run]\nn_seeds = 2\n",
        &[("run.out".into(), out.display().to_string())],
    )?;
    print!("{}", cmd_sweep_lambda(&cfg)?.to_csv());
    std::fs::remove_dir_all(&out)?;
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
