//! Deterministic fixture networks.

use concolic_dnn::Network;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Dense net with the given widths (first entry is the input dimension),
/// uniform weights in `[-1, 1]`, biases in `[-bias, bias]`, ReLU on every
/// hidden layer.
pub fn random_dense<R: Rng>(rng: &mut R, widths: &[usize], bias: f64) -> Network {
    let mut layers = Vec::new();
    for (j, pair) in widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let w = (0..fan_in)
            .map(|_| (0..fan_out).map(|_| rng.gen_range(-1.0..=1.0)).collect())
            .collect();
        let b = (0..fan_out).map(|_| rng.gen_range(-bias..=bias)).collect();
        let hidden = j + 2 < widths.len();
        layers.push((w, b, hidden));
    }
    Network::dense(widths[0], layers).expect("fixture is well formed")
}

pub fn random_input<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect()
}

/// 4-16-16-3 coverage fixture and the hidden neurons it makes dead.
///
/// Layer 2 neurons 14 and 15 have a bias below minus the positive weight
/// mass, layer 3 neuron 15 has only non-positive incoming weights and a
/// negative bias: none of them can ever activate. Layer 2 neurons 12 and 13
/// only fire near the all-ones corner, which uniform sampling essentially
/// never reaches.
pub fn nc_fixture() -> (Network, Vec<(usize, usize)>) {
    let mut r = rng(0x5eed_0004);
    let mut w1: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..16).map(|_| r.gen_range(-1.0..=1.0)).collect())
        .collect();
    let mut b1: Vec<f64> = (0..16).map(|_| r.gen_range(-0.3..=0.3)).collect();
    for i in [12, 13] {
        for row in w1.iter_mut() {
            row[i] = 1.0;
        }
        b1[i] = -3.9;
    }
    for i in [14, 15] {
        let pos: f64 = w1.iter().map(|row| row[i].max(0.0)).sum();
        b1[i] = -pos - 0.5;
    }
    let mut w2: Vec<Vec<f64>> = (0..16)
        .map(|_| (0..16).map(|_| r.gen_range(-1.0..=1.0)).collect())
        .collect();
    let mut b2: Vec<f64> = (0..16).map(|_| r.gen_range(-0.3..=0.3)).collect();
    for row in w2.iter_mut() {
        row[15] = -row[15].abs();
    }
    b2[15] = -0.5;
    let w3 = (0..16)
        .map(|_| (0..3).map(|_| r.gen_range(-1.0..=1.0)).collect())
        .collect();
    let b3 = (0..3).map(|_| r.gen_range(-0.1..=0.1)).collect();
    let net = Network::dense(4, vec![(w1, b1, true), (w2, b2, true), (w3, b3, false)])
        .expect("fixture is well formed");
    (net, vec![(2, 14), (2, 15), (3, 15)])
}

/// Grid value the boundary fixture's seed sits on.
pub const BOUNDARY_SEED: f64 = 100.0 / 255.0;

/// Two-input net whose label flips one grid step above the seed in input 0.
///
/// Hidden neuron 0 computes `x0 - θ` with θ just above the seed value;
/// output 1 is ten times its activation, output 0 a small constant. The
/// seed `[100/255, 0.5]` is labelled 0 and `[101/255, 0.5]` is labelled 1.
pub fn boundary_fixture() -> Network {
    let theta = BOUNDARY_SEED + 1e-4;
    Network::dense(
        2,
        vec![
            (
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                vec![-theta, 0.0],
                true,
            ),
            (
                vec![vec![0.0, 10.0], vec![0.0, 0.0]],
                vec![0.001, 0.0],
                false,
            ),
        ],
    )
    .expect("fixture is well formed")
}

/// `n` inputs, identity ReLU hidden layer, identity output.
pub fn identity_net(n: usize) -> Network {
    let eye: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    Network::dense(
        n,
        vec![
            (eye.clone(), vec![0.0; n], true),
            (eye, vec![0.0; n], false),
        ],
    )
    .expect("fixture is well formed")
}

/// Net whose output ignores the input entirely.
pub fn constant_net(n: usize) -> Network {
    Network::dense(
        n,
        vec![
            (vec![vec![0.0; 3]; n], vec![0.5, -0.5, 0.1], true),
            (vec![vec![1.0, 0.0]; 3], vec![0.0, 1.0], false),
        ],
    )
    .expect("fixture is well formed")
}

/// 4-12-12-3 net used for the Lipschitz comparisons.
pub fn lipschitz_fixture() -> Network {
    let mut r = rng(0x5eed_0006);
    random_dense(&mut r, &[4, 12, 12, 3], 0.5)
}
