//! Morton blocking keeps consecutive working sets similar along a smooth
//! camera path; a random permutation does not.

mod common;

use std::collections::BTreeSet;

use common::ToyScene;
use oocsplat::blocking::BlockOrder;
use oocsplat::trainer::scene::SynthSpec;
use oocsplat::param_table::{owner_block, BlockPayload};
use oocsplat::trainer::scene::ToyGeometry;
use oocsplat::visibility::{fine_filter, frustum_from_camera};

fn mean_consecutive_jaccard(scene: &ToyScene) -> f64 {
    // blocks owning at least one primitive whose extent meets the view; the
    // block bounding spheres of a random grouping span the whole scene, so
    // sphere-level sets would be trivially identical
    let blocks: Vec<BlockPayload> = (0..scene.table.k_blocks())
        .map(|k| BlockPayload::from_table(&scene.rows, k, &scene.table))
        .collect();
    let all: BTreeSet<u32> = (0..scene.table.k_blocks()).collect();
    let sets: Vec<BTreeSet<u32>> = scene
        .cams
        .iter()
        .map(|c| {
            let f = frustum_from_camera(c).unwrap();
            fine_filter(&blocks, &all, &f, &scene.table, &ToyGeometry)
                .into_iter()
                .map(|i| owner_block(i, &scene.table).unwrap())
                .collect()
        })
        .collect();
    let j: Vec<f64> = sets
        .windows(2)
        .map(|w| {
            let u = w[0].union(&w[1]).count();
            if u == 0 {
                1.0
            } else {
                w[0].intersection(&w[1]).count() as f64 / u as f64
            }
        })
        .collect();
    j.iter().sum::<f64>() / j.len() as f64
}

#[test]
fn morton_beats_random_on_consecutive_overlap() {
    let trials = 40;
    let mut wins = 0;
    for seed in 0..trials {
        let spec = SynthSpec {
            n_primitives: 4000,
            extent: 64.0,
            n_views: 120,
            view_size: 6.0,
            resolution: 4,
            seed,
            ..SynthSpec::default()
        };
        let m = mean_consecutive_jaccard(&ToyScene::build(&spec, 16, BlockOrder::Morton, 0.0));
        let r = mean_consecutive_jaccard(&ToyScene::build(&spec, 16, BlockOrder::Random { seed: seed + 100 }, 0.0));
        wins += usize::from(m > r);
    }
    assert!(wins * 100 >= 95 * trials as usize, "Morton ahead in {wins}/{trials} trials");
}
