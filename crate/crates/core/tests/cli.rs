use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "[data]\nn_classes = 8\nsamples_per_class = 6\nd_in = 8\n[split]\nn_unseen = 2\n\
[train]\ntotal_iters = 40\np = 4\nk = 2\nd_emb = 8\n[eval]\nk = 10\n[sweep]\nlambdas = 0, 0.5, 1, 2\n\
[run]\nn_seeds = 2\n";

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, SMALL).unwrap();
    (dir, cfg)
}

fn mm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modalmetric")).args(args).output().unwrap()
}

fn run(cmd: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    mm(&args)
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn train_then_eval_writes_layout() {
    let (dir, cfg) = setup();
    let out = dir.path().join("out");
    let o = run("train", &cfg, &out, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for seed in 0..2 {
        let d = out.join(format!("mathm/seed_{seed}"));
        assert!(d.join("checkpoint.json").is_file());
        let log = std::fs::read_to_string(d.join("training_log.csv")).unwrap();
        assert_eq!(log.lines().count(), 41);
    }
    assert_eq!(
        header(&out.join("mathm/seed_0/training_log.csv")),
        "iter,lr,l_cls,l_cross,l_in,l_hyb,g_cross,g_in,g_hyb,w_cross,w_in,w_hyb,l_total"
    );

    let o = run("eval", &cfg, &out, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&out.join("mathm/seed_1/metrics.json"));
    for key in [
        "map_at_all",
        "k",
        "prec_at_k",
        "map_at_200",
        "prec_at_200",
        "modality_gap",
        "between_class_same_modality",
        "between_class_cross_modality",
    ] {
        assert!(m.get(key).is_some(), "missing {key}");
    }
    assert_eq!(m["k"], 10);
    let s = json(&out.join("mathm/summary.json"));
    assert_eq!(s["n_seeds"], 2);
}

#[test]
fn log_columns_follow_method() {
    let (dir, cfg) = setup();
    let out = dir.path().join("out");
    assert_eq!(code(&run("train", &cfg, &out, &["--method", "cls-only", "--run.n_seeds=1"])), 0);
    assert_eq!(header(&out.join("cls-only/seed_0/training_log.csv")), "iter,lr,l_cls,l_total");
    assert_eq!(code(&run("train", &cfg, &out, &["--method", "gan", "--n_seeds", "1"])), 0);
    let h = header(&out.join("gan/seed_0/training_log.csv"));
    assert!(h.ends_with("l_adv_g,l_adv_d,l_total"), "{h}");
}

#[test]
fn explicit_checkpoint_list() {
    let (dir, cfg) = setup();
    let out = dir.path().join("out");
    assert_eq!(code(&run("train", &cfg, &out, &["--method", "baseline"])), 0);
    let ck = out.join("baseline/seed_1/checkpoint.json");
    let other = dir.path().join("elsewhere");
    let o = run("eval", &cfg, &other, &["--eval.checkpoints", ck.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("baseline/seed_1/metrics.json").is_file());
}

#[test]
fn sweep_and_ablate_tables() {
    let (dir, cfg) = setup();
    let out = dir.path().join("out");
    let o = run("sweep-lambda", &cfg, &out, &["--n_seeds", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("sweep_lambda/table.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rows, ["0", "0.5", "1", "2"]);
    assert_eq!(String::from_utf8_lossy(&o.stdout), csv);

    let o = run("ablate", &cfg, &out, &["--n_seeds", "1", "--total_iters", "10"]);
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(out.join("ablate/table.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        rows,
        ["cls-only", "baseline", "in", "hyb", "cross+in", "cross+hyb", "cross+in+hyb", "mathm"]
    );
    assert!(out.join("ablate/table_per_seed.csv").is_file());
    assert!(out.join("ablate/table.json").is_file());
}

#[test]
fn diagnose_table() {
    let (dir, cfg) = setup();
    let out = dir.path().join("out");
    let o = run("diagnose", &cfg, &out, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let t = json(&out.join("diagnose/table.json"));
    let text = t.to_string();
    for label in ["baseline", "mathm", "gan"] {
        assert!(text.contains(label));
        assert!(out.join(format!("{label}/seed_0/checkpoint.json")).is_file());
    }
    assert!(header(&out.join("diagnose/table.csv")).contains("modality_gap_mean"));
}

#[test]
fn exit_codes() {
    let (dir, cfg) = setup();
    let out = dir.path().join("out");
    // configuration problems
    assert_eq!(code(&run("train", &cfg, &out, &["--no_such_key", "1"])), 2);
    assert_eq!(code(&run("train", &cfg, &out, &["--seed_of_doom=1"])), 2);
    assert_eq!(code(&run("train", &cfg, &out, &["--method", "cross+gw+zzz"])), 2);
    assert_eq!(code(&run("train", &cfg, &out, &["--train.p", "0"])), 2);
    assert_eq!(code(&mm(&["train"])), 2);
    assert_eq!(code(&mm(&["--help"])), 0);

    // data problems
    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, "id,class,modality,f0\n0,0,sketch,not-a-number\n").unwrap();
    let o = run("train", &cfg, &out, &["--data.source", "csv", "--data.path", csv.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(code(&run("eval", &cfg, &dir.path().join("empty"), &[])), 3);

    // evaluating on classes the checkpoint trained on
    assert_eq!(code(&run("train", &cfg, &out, &["--n_seeds", "1"])), 0);
    let o = run("eval", &cfg, &out, &["--n_seeds", "1", "--split.seed", "3"]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("zero-shot"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let (dir, cfg) = setup();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        assert_eq!(code(&run("train", &cfg, out, &[])), 0);
        assert_eq!(code(&run("eval", &cfg, out, &[])), 0);
    }
    for f in ["mathm/seed_0/checkpoint.json", "mathm/seed_1/training_log.csv", "mathm/seed_1/metrics.json", "mathm/summary.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn thread_cap_does_not_change_metrics() {
    let (dir, cfg) = setup();
    let out = dir.path().join("out");
    assert_eq!(code(&run("train", &cfg, &out, &["--n_seeds", "1"])), 0);
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let o = Command::new(env!("CARGO_BIN_EXE_modalmetric"))
            .args(["eval", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--n_seeds", "1"])
            .env("MODALMETRIC_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(code(&o), 0);
        outputs.push(std::fs::read(out.join("mathm/seed_0/metrics.json")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}
