//! Drive the command-line front end from a config file: train, evaluate,
//! then provoke the zero-shot guard.

use modalmetric::cli;

pub fn run_example() -> modalmetric::Result<()> {
    let dir = std::env::temp_dir().join(format!("modalmetric-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let config = dir.join("run.cfg");
    std::fs::write(
        &config,
        "# small desk run\n[data]\nn_classes = 8\nsamples_per_class = 8\n[split]\nn_unseen = 2\n\
         [train]\nmethod = mathm\ntotal_iters = 100\np = 4\n[run]\nn_seeds = 2\n",
    )?;
    let out = dir.join("out");
    let base = |cmd: &str| {
        vec![
            "modalmetric".to_string(),
            cmd.to_string(),
            "--config".into(),
            config.display().to_string(),
            "--out".into(),
            out.display().to_string(),
        ]
    };

    assert_eq!(cli::run(base("train")), 0);
    assert_eq!(cli::run(base("eval")), 0);
    println!("{}", std::fs::read_to_string(out.join("mathm/seed_0/metrics.json"))?);

    // A different class split puts training classes into the evaluation set.
    let mut bad = base("eval");
    bad.extend(["--split.seed".to_string(), "5".to_string()]);
    println!("eval on an overlapping split exits with {}", cli::run(bad));

    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
