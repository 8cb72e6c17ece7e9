//! Generate a two-modality dataset, split off unseen classes, draw PK
//! batches and round-trip the data through CSV.

use modalmetric::data::{
    generate_synthetic, pk_sample, read_dataset_from, write_dataset_to, zero_shot_split, SamplerConfig,
    SyntheticConfig,
};
use modalmetric::Modality;
use rand::SeedableRng;

pub fn run_example() -> modalmetric::Result<()> {
    let cfg = SyntheticConfig {
        n_classes: 10,
        samples_per_class_per_modality: 8,
        d_in: 16,
        cluster_spread: 0.1,
        modality_offset_norm: 1.0,
        seed: 7,
    };
    let ds = generate_synthetic(&cfg)?;
    println!("{} samples, {} classes, d_in = {}", ds.len(), ds.n_classes, ds.d_in);

    // The photo cloud of each class sits ‖δ‖ away from the sketch cloud.
    let (x, labels, mods) = ds.gather_all();
    let mean = |m: Modality| {
        let rows: Vec<usize> = (0..ds.len()).filter(|&i| labels[i] == 0 && mods[i] == m).collect();
        x.select(ndarray::Axis(0), &rows).mean_axis(ndarray::Axis(0)).unwrap()
    };
    let shift = &mean(Modality::Photo) - &mean(Modality::Sketch);
    println!("class 0 photo - sketch mean shift: {:.3}", shift.dot(&shift).sqrt());

    let (train, test) = zero_shot_split(&ds, 3, 1)?;
    println!("train classes {:?}, unseen classes {:?}", train.class_ids, test.class_ids);

    let sampler = SamplerConfig { p: 4, k: 2, seed: 0 };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(sampler.seed);
    let batch = pk_sample(&train, &sampler, &mut rng)?;
    println!("PK batch of {} indices: {:?}", batch.len(), &batch[..8]);

    let mut buf = Vec::new();
    write_dataset_to(&test, &mut buf)?;
    let back = read_dataset_from(buf.as_slice())?;
    println!("CSV round trip: {} bytes, identical = {}", buf.len(), back.samples == test.samples);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
