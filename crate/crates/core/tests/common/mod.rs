#![allow(dead_code)]

use hetnet_steer::policies::Observation;
use hetnet_steer::QNetwork;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform features in [0, 1), all cells eligible.
pub fn random_observation<R: Rng>(rng: &mut R, cells: usize) -> Observation {
    let cols: Vec<[f64; 3]> = (0..cells)
        .map(|_| [rng.random(), rng.random(), rng.random()])
        .collect();
    Observation::from_columns(&cols, vec![true; cells])
}

/// Central differences of `forward(obs)[cell]` with respect to every
/// parameter, in `to_flat` order.
pub fn fd_gradient(net: &QNetwork, obs: &Observation, cell: usize, step: f64) -> Vec<f64> {
    let flat = net.to_flat();
    let mut probe = net.clone();
    let mut eval = |values: &[f64]| {
        probe.set_flat(values).unwrap();
        probe.forward(obs).unwrap().0[cell]
    };
    (0..flat.len())
        .map(|i| {
            let mut plus = flat.clone();
            plus[i] += step;
            let mut minus = flat.clone();
            minus[i] -= step;
            (eval(&plus) - eval(&minus)) / (2.0 * step)
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|)`, zero when both are zero.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Worst per-parameter relative error between backprop and central
/// differences over `pairs` random networks and inputs.
pub fn worst_gradient_error(pairs: u64, step: f64) -> f64 {
    let mut worst = 0.0f64;
    for pair in 0..pairs {
        let mut r = rng(1000 + pair);
        let net = QNetwork::init_weights(pair);
        let cells = r.random_range(1..=5);
        let obs = random_observation(&mut r, cells);
        let cell = r.random_range(0..cells);
        let (_, cache) = net.forward(&obs).unwrap();
        let analytic = net.grad_wrt_params(&cache, cell).unwrap().to_flat();
        let numeric = fd_gradient(&net, &obs, cell, step);
        assert_eq!(analytic.len(), numeric.len());
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max(relative_error(*a, *n));
        }
    }
    worst
}
