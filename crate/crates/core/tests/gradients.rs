mod common;

use common::grad::{INSTANCES, KINDS, TOL};

#[test]
fn every_layer_kind_matches_finite_differences() {
    for (name, check) in KINDS {
        for seed in 0..INSTANCES {
            let worst = check(seed);
            assert!(worst < TOL, "{name}, instance {seed}: relative error {worst}");
        }
    }
}
