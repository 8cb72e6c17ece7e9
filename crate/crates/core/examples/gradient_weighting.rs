//! The three modality-aware losses on one batch, their active fractions and
//! the weights that equalize their gradient contributions.

use modalmetric::data::{generate_synthetic, PkSampler, SamplerConfig, SyntheticConfig};
use modalmetric::losses::{embedding_loss, gradient_weights, LossConfig, LossSelection};
use modalmetric::model::Model;
use modalmetric::TripletKind;
use rand::SeedableRng;

pub fn run_example() -> modalmetric::Result<()> {
    let ds = generate_synthetic(&SyntheticConfig::default())?;
    let mut sampler = PkSampler::new(&ds, SamplerConfig { p: 8, k: 4, seed: 3 })?;
    let (x, labels, mods) = ds.gather(&sampler.next_batch());

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let model = Model::init(ds.d_in, 16, ds.n_classes, &mut rng)?;
    let (f, _) = modalmetric::model::embed_forward(&model.embedder, x.view(), &mods)?;

    let cfg = LossConfig::default();
    let bundle = embedding_loss(f.view(), &labels, &mods, LossSelection::MATHM, &cfg)?;
    for (kind, w) in TripletKind::ALL.iter().zip(bundle.weights) {
        let r = bundle.report(*kind);
        println!("{kind:>6}: loss {:.4}  g {:.3}  w {:.3}  w*g {:.3}", r.value, r.active_fraction, w, w * r.active_fraction);
    }
    println!("weighted embedding loss {:.4}", bundle.combined_value);

    // The closed form on its own: zeros drop out of the active set.
    for g in [[1.0, 1.0, 1.0], [0.5, 0.25, 0.25], [0.6, 0.0, 0.2]] {
        println!("g = {g:?} -> w = {:?}", gradient_weights(&g, cfg.eps_g)?);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
