mod common;

use common::{fd_gradient, random_observation, relative_error, rng, worst_gradient_error};
use hetnet_steer::policies::Observation;
use hetnet_steer::QNetwork;
use proptest::prelude::*;
use rand::seq::SliceRandom;

#[test]
fn backprop_matches_central_differences() {
    let worst = worst_gradient_error(100, 1e-6);
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}

#[test]
fn gradient_check_on_a_perturbed_network() {
    // biases away from zero so every unit is exercised
    let mut net = QNetwork::init_weights(99);
    let flat: Vec<f64> = net
        .to_flat()
        .iter()
        .enumerate()
        .map(|(i, w)| w + 0.01 * ((i % 7) as f64 - 3.0))
        .collect();
    net.set_flat(&flat).unwrap();
    let obs = random_observation(&mut rng(5), 4);
    for cell in 0..4 {
        let (_, cache) = net.forward(&obs).unwrap();
        let analytic = net.grad_wrt_params(&cache, cell).unwrap().to_flat();
        let numeric = fd_gradient(&net, &obs, cell, 1e-6);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!(relative_error(*a, *n) < 1e-4, "cell {cell}: {a} vs {n}");
        }
    }
}

#[test]
fn snapshot_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.snap");
    let net = QNetwork::init_weights(21);
    net.save_weights(&path).unwrap();
    let back = QNetwork::load_weights(&path).unwrap();
    let obs = random_observation(&mut rng(3), 5);
    assert_eq!(net.forward(&obs).unwrap().0, back.forward(&obs).unwrap().0);
    assert_eq!(net.to_flat(), back.to_flat());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_is_permutation_equivariant(seed in 0u64..1000, cells in 1usize..8, shuffle in 0u64..1000) {
        let net = QNetwork::init_weights(seed);
        let obs = random_observation(&mut rng(seed ^ 0xabc), cells);
        let mut perm: Vec<usize> = (0..cells).collect();
        perm.shuffle(&mut rng(shuffle));
        let permuted = obs.permuted(&perm);
        let (out, _) = net.forward(&obs).unwrap();
        let (out_p, _) = net.forward(&permuted).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            prop_assert_eq!(out_p[i].to_bits(), out[p].to_bits());
        }
    }

    #[test]
    fn outputs_depend_only_on_own_column(seed in 0u64..1000, cells in 2usize..6, j in 0usize..6, v in proptest::array::uniform3(0.0f64..1.0)) {
        let j = j % cells;
        let net = QNetwork::init_weights(seed);
        let obs = random_observation(&mut rng(seed + 7), cells);
        let mut cols: Vec<[f64; 3]> = (0..cells).map(|c| [obs.rows()[0][c], obs.rows()[1][c], obs.rows()[2][c]]).collect();
        cols[j] = v;
        let changed = Observation::from_columns(&cols, vec![true; cells]);
        let (a, _) = net.forward(&obs).unwrap();
        let (b, _) = net.forward(&changed).unwrap();
        for c in (0..cells).filter(|&c| c != j) {
            prop_assert_eq!(a[c].to_bits(), b[c].to_bits());
        }
    }
}
