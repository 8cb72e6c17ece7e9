//! Train a MATHM embedder and evaluate zero-shot sketch-to-photo retrieval
//! on the held-out classes.

use modalmetric::data::{generate_synthetic, zero_shot_split, SyntheticConfig};
use modalmetric::eval::{evaluate, Direction};
use modalmetric::model::{train, Method, TrainConfig};

pub fn run_example() -> modalmetric::Result<()> {
    let ds = generate_synthetic(&SyntheticConfig {
        n_classes: 10,
        samples_per_class_per_modality: 12,
        ..SyntheticConfig::default()
    })?;
    let (train_set, test_set) = zero_shot_split(&ds, 3, 0)?;

    let cfg = TrainConfig {
        method: Method::MATHM,
        total_iters: 300,
        p: 4,
        base_lr: 1e-3,
        ..TrainConfig::default()
    };
    let out = train(&train_set, &cfg)?;
    for rec in out.log.iter().step_by(75) {
        let [c, i, h] = rec.triplet_values.unwrap_or_default();
        println!(
            "iter {:4}  lr {:.2e}  cls {:.3}  cross {c:.3}  in {i:.3}  hyb {h:.3}  total {:.3}",
            rec.iter, rec.lr, rec.l_cls, rec.l_total
        );
    }

    let before = modalmetric::model::Model::init(ds.d_in, cfg.d_emb, train_set.n_classes, &mut {
        use rand::SeedableRng;
        rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed)
    })?;
    for (name, model) in [("untrained", &before), ("trained", &out.checkpoint.model)] {
        let m = evaluate(&model.embed_dataset(&test_set)?, 100, Direction::SketchToPhoto)?;
        println!(
            "{name:>9}: mAP@all {:.4}  Prec@100 {:.4}  modality gap {:.4}",
            m.map_at_all, m.prec_at_k, m.modality_gap
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
