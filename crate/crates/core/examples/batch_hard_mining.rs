//! Batch-hard mining of the three triplet kinds on a hand-built batch.

use modalmetric::embedding::{normalize_rows, self_distance, NORM_EPS};
use modalmetric::mining::{batch_hard_mine, TripletKind};
use modalmetric::Modality::{Photo, Sketch};
use ndarray::array;

pub fn run_example() -> modalmetric::Result<()> {
    // Two classes, two sketches and two photos each; photos displaced along y.
    let raw = array![
        [1.0, 0.0, 1.0],
        [0.9, 0.1, 1.0],
        [1.0, 0.6, 1.0],
        [0.9, 0.7, 1.0],
        [-1.0, 0.0, 1.0],
        [-0.9, 0.1, 1.0],
        [-1.0, 0.6, 1.0],
        [-0.9, 0.7, 1.0],
    ];
    let emb = normalize_rows(raw.view(), NORM_EPS);
    let labels = [0, 0, 0, 0, 1, 1, 1, 1];
    let mods = [Sketch, Sketch, Photo, Photo, Sketch, Sketch, Photo, Photo];
    let dist = self_distance(emb.view());

    for kind in TripletKind::ALL {
        println!("{kind}:");
        for t in batch_hard_mine(&dist, &labels, &mods, kind)? {
            println!(
                "  anchor {} ({}) -> positive {} d={:.3}, negative {} d={:.3}",
                t.anchor,
                mods[t.anchor],
                t.positive,
                dist.get(t.anchor, t.positive),
                t.negative,
                dist.get(t.anchor, t.negative)
            );
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
