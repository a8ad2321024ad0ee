//! Seeded fixtures shared by the benchmarks.

use facemorph_core::synthetic::{gaussian_bump, random_cloud};
use facemorph_core::{FrsThreshold, FtarTable, Point, PointCloud, ScoreRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Source cloud and a smoothly deformed copy of it.
pub fn bumped_pair(points: usize, seed: u64) -> (PointCloud, PointCloud) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source = random_cloud(&mut rng, points, "src");
    let moved = gaussian_bump(source.vertices(), &Point::zeros(), &Point::z(), 0.4, 0.1);
    let target = source.with_vertices(moved).expect("finite").with_id("tgt");
    (source, target)
}

/// Complete score table over `frs` systems, `morphs` morphs and `attempts`
/// attempts, with one threshold per FRS and a random FTAR table.
pub fn score_table(frs: usize, morphs: usize, attempts: u32, seed: u64) -> (Vec<ScoreRecord>, Vec<FrsThreshold>, FtarTable) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(frs * morphs * attempts as usize);
    let mut ftar = FtarTable::new();
    for l in 0..frs {
        let frs_id = format!("frs{l}");
        for m in 0..morphs {
            for a in 1..=attempts {
                let scores = vec![rng.random(), rng.random()];
                records.push(ScoreRecord::new(format!("m{m}"), "bcpd", frs_id.clone(), a, scores).expect("valid"));
            }
        }
        for a in 1..=attempts {
            ftar.insert(a, &frs_id, rng.random_range(0.0..0.2)).expect("valid rate");
        }
    }
    let thresholds = (0..frs)
        .map(|l| FrsThreshold {
            frs_id: format!("frs{l}"),
            tau: 0.3,
            fmr_target: 0.001,
            saturated: false,
        })
        .collect();
    (records, thresholds, ftar)
}
