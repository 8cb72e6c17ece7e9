//! Check the hand-derived backward pass of the full training objective
//! against central finite differences.

use modalmetric::data::{generate_synthetic, SyntheticConfig};
use modalmetric::embedding::finite_diff_check;
use modalmetric::model::{generator_objective, DiscriminatorParams, Method, Model, TrainConfig};
use rand::SeedableRng;

pub fn run_example() -> modalmetric::Result<()> {
    let ds = generate_synthetic(&SyntheticConfig {
        n_classes: 3,
        samples_per_class_per_modality: 3,
        d_in: 6,
        ..SyntheticConfig::default()
    })?;
    let (x, labels, mods) = ds.gather_all();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let model = Model::init(6, 4, 3, &mut rng)?;
    let disc = DiscriminatorParams {
        weight: ndarray::Array1::from_vec(vec![0.5, -0.3, 0.2, 0.8]),
        bias: 0.1,
    };

    for method in [Method::CLS_ONLY, Method::BASELINE, Method::MATHM, Method::GAN] {
        let cfg = TrainConfig { method, ..TrainConfig::default() };
        let step = generator_objective(&model, Some(&disc), x.view(), &labels, &mods, &cfg, None)?;
        // Hold the per-step loss weights fixed while differencing.
        let weights = step.triplets.as_ref().map(|b| b.weights);
        let chk = finite_diff_check(
            |w| {
                let mut m = model.clone();
                m.embedder.weight = w.clone();
                Ok(generator_objective(&m, Some(&disc), x.view(), &labels, &mods, &cfg, weights)?.value)
            },
            &model.embedder.weight,
            &step.grads.embedder.weight,
            1e-5,
        )?;
        println!(
            "{method:>8}: objective {:.5}, max relative error {:.2e} over {} entries ({} near kinks skipped)",
            step.value, chk.max_relative_error, chk.checked, chk.excluded
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
