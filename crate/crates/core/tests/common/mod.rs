//! Networks and generators shared by the integration tests.
#![allow(dead_code)]

use maxres::network::{Layer, LayerKind, Network, Weights};
use rand::rngs::StdRng;
use rand::Rng;

pub fn dense(kind: LayerKind, rows: &[&[f64]]) -> Layer {
    let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
    Layer::dense(kind, Weights::from_rows(&rows).unwrap())
}

/// Scores `x1` and `x2` on the unit square.
pub fn linear_two_class() -> Network {
    Network::new(
        vec![(0.0, 1.0), (0.0, 1.0)],
        vec![
            dense(LayerKind::LinearOutput, &[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]),
            Layer::softmax(),
        ],
    )
    .unwrap()
}

/// Two inputs, three ReLU units, two classes.
pub fn relu_two_class() -> Network {
    Network::new(
        vec![(0.0, 1.0), (0.0, 1.0)],
        vec![
            dense(
                LayerKind::ReluDense,
                &[&[0.0, 0.0, -1.0], &[1.0, -1.0, 1.0], &[-1.0, 1.0, 1.0]],
            ),
            dense(
                LayerKind::LinearOutput,
                &[&[0.0, 0.2], &[1.0, 0.0], &[0.0, 1.0], &[0.5, 0.0]],
            ),
            Layer::softmax(),
        ],
    )
    .unwrap()
}

/// Two inputs, three ReLU units, three classes.
pub fn relu_three_class() -> Network {
    Network::new(
        vec![(0.0, 1.0), (0.0, 1.0)],
        vec![
            dense(
                LayerKind::ReluDense,
                &[&[-0.5, -0.5, 0.5], &[1.0, 0.0, -0.5], &[0.0, 1.0, -0.5]],
            ),
            dense(
                LayerKind::LinearOutput,
                &[&[0.0, 0.0, 0.1], &[2.0, 0.0, 0.0], &[0.0, 2.0, 0.0], &[0.0, 0.0, 1.0]],
            ),
            Layer::softmax(),
        ],
    )
    .unwrap()
}

/// One input on `[-1, 1]`, two ReLU units, two classes.
pub fn relu_one_input() -> Network {
    Network::new(
        vec![(-1.0, 1.0)],
        vec![
            dense(LayerKind::ReluDense, &[&[0.0, 0.0], &[1.0, -1.0]]),
            dense(LayerKind::LinearOutput, &[&[0.0, 0.1], &[1.5, 0.0], &[0.0, 1.0]]),
            Layer::softmax(),
        ],
    )
    .unwrap()
}

/// Four ReLU units pooled in pairs, two classes.
pub fn max_pool_net() -> Network {
    Network::new(
        vec![(0.0, 1.0), (0.0, 1.0)],
        vec![
            dense(
                LayerKind::ReluDense,
                &[&[0.0, -0.2, 0.0, -0.3], &[1.0, 0.5, -1.0, 0.0], &[0.0, 0.5, 1.0, 1.0]],
            ),
            Layer::max_pool(vec![vec![0, 1], vec![2, 3]]),
            dense(LayerKind::LinearOutput, &[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]),
            Layer::softmax(),
        ],
    )
    .unwrap()
}

/// A small atan network.
pub fn atan_net() -> Network {
    Network::new(
        vec![(-1.0, 1.0), (-1.0, 1.0)],
        vec![
            dense(LayerKind::AtanDense, &[&[0.0, 0.2], &[1.5, -1.0], &[0.5, 2.0]]),
            dense(LayerKind::LinearOutput, &[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]),
            Layer::softmax(),
        ],
    )
    .unwrap()
}

/// The fixture where `z = x - relu(x)` on `[-1, 1]`, computed as
/// `-1 + relu(x + 1) - relu(x)`. Plain intervals give `[-2, 1]`.
pub fn lookback_fixture() -> Network {
    Network::new(
        vec![(-1.0, 1.0)],
        vec![
            dense(LayerKind::ReluDense, &[&[1.0, 0.0], &[1.0, 1.0]]),
            dense(LayerKind::LinearOutput, &[&[-1.0], &[1.0], &[-1.0]]),
        ],
    )
    .unwrap()
}

pub struct Fixture {
    pub name: &'static str,
    pub net: Network,
    pub m: usize,
    pub alpha: f64,
    pub k: usize,
}

/// Hand-built fixtures with at most two inputs, each with a query whose
/// answer is finite.
pub fn phi_fixtures() -> Vec<Fixture> {
    vec![
        Fixture {
            name: "linear",
            net: linear_two_class(),
            m: 1,
            alpha: std::f64::consts::E,
            k: 1,
        },
        Fixture {
            name: "relu2",
            net: relu_two_class(),
            m: 1,
            alpha: 1.1,
            k: 1,
        },
        Fixture {
            name: "relu3",
            net: relu_three_class(),
            m: 3,
            alpha: 1.1,
            k: 1,
        },
        Fixture {
            name: "relu1d",
            net: relu_one_input(),
            m: 1,
            alpha: 1.1,
            k: 1,
        },
        Fixture {
            name: "maxpool",
            net: max_pool_net(),
            m: 2,
            alpha: 1.1,
            k: 1,
        },
    ]
}

fn random_weights(rng: &mut StdRng, fan_in: usize, width: usize) -> Weights {
    let rows: Vec<Vec<f64>> = (0..=fan_in)
        .map(|_| (0..width).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    Weights::from_rows(&rows).unwrap()
}

/// A random network with `d <= 5` inputs, up to three layers of at most ten
/// nodes, mixing ReLU, atan and max-pool layers, ending in a linear layer
/// and (sometimes) softmax.
pub fn random_network(rng: &mut StdRng) -> Network {
    let d = rng.gen_range(1..=5);
    let bounds: Vec<(f64, f64)> = (0..d)
        .map(|_| {
            let lo = rng.gen_range(-1.0..0.5);
            (lo, lo + rng.gen_range(0.1..1.5))
        })
        .collect();
    let hidden = rng.gen_range(1..=2);
    let mut layers = Vec::new();
    let mut width = d;
    for _ in 0..hidden {
        let roll: f64 = rng.gen();
        if roll < 0.2 && width % 2 == 0 && !layers.is_empty() {
            let mut groups = Vec::new();
            let mut i = 0;
            while i < width {
                let size = if width - i >= 4 && rng.gen_bool(0.5) { 4 } else { 2 };
                groups.push((i..i + size).collect());
                i += size;
            }
            width = groups.len();
            layers.push(Layer::max_pool(groups));
        } else {
            let kind = if roll < 0.4 { LayerKind::AtanDense } else { LayerKind::ReluDense };
            let w = rng.gen_range(2..=10);
            layers.push(Layer::dense(kind, random_weights(rng, width, w)));
            width = w;
        }
    }
    let classes = rng.gen_range(2..=4);
    layers.push(Layer::dense(LayerKind::LinearOutput, random_weights(rng, width, classes)));
    if rng.gen_bool(0.5) {
        layers.push(Layer::softmax());
    }
    Network::new(bounds, layers).unwrap()
}

pub fn random_input(rng: &mut StdRng, net: &Network) -> Vec<f64> {
    net.input_bounds()
        .iter()
        .map(|&(lo, hi)| rng.gen_range(lo..=hi))
        .collect()
}
