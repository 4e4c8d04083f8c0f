//! Analytic gradients against central finite differences.

use itemlab::matrix::Matrix;
use itemlab::nn::{self, Architecture, Dense, LayerBuf, MixedTarget, MultiHeadNet};
use itemlab::rng::seeded;
use rand::Rng;

const EPS: f64 = 1e-5;
/// Entries below this magnitude are compared on an absolute scale.
const FLOOR: f64 = 1e-6;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// Pre-activations of every trunk layer, computed independently of the crate.
fn pre_activations(net: &MultiHeadNet, x: &Matrix) -> Vec<f64> {
    let mut out = Vec::new();
    for r in 0..x.rows() {
        let mut h = x.row(r).to_vec();
        for layer in net.trunk() {
            let z: Vec<f64> = (0..layer.out_dim)
                .map(|o| {
                    layer.bias[o] + (0..layer.in_dim).map(|i| layer.weights[o * layer.in_dim + i] * h[i]).sum::<f64>()
                })
                .collect();
            out.extend_from_slice(&z);
            h = z.into_iter().map(|v| v.max(0.0)).collect();
        }
    }
    out
}

fn numeric(
    net: &mut MultiHeadNet,
    x: &Matrix,
    t: &[MixedTarget],
    head: usize,
    param: impl Fn(&mut MultiHeadNet) -> &mut f64,
) -> f64 {
    let orig = *param(net);
    *param(net) = orig + EPS;
    let up = nn::batch_loss(net, x, t, head).unwrap();
    *param(net) = orig - EPS;
    let down = nn::batch_loss(net, x, t, head).unwrap();
    *param(net) = orig;
    (up - down) / (2.0 * EPS)
}

fn check_layer(
    net: &mut MultiHeadNet,
    x: &Matrix,
    t: &[MixedTarget],
    head: usize,
    grad: &LayerBuf,
    layer: impl Fn(&mut MultiHeadNet) -> &mut Dense + Copy,
) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..grad.weights.len() {
        let n = numeric(net, x, t, head, |m| &mut layer(m).weights[i]);
        worst = worst.max(rel_err(grad.weights[i], n));
    }
    for i in 0..grad.bias.len() {
        let n = numeric(net, x, t, head, |m| &mut layer(m).bias[i]);
        worst = worst.max(rel_err(grad.bias[i], n));
    }
    worst
}

/// Largest relative error over every trunk and head parameter of one case.
fn max_relative_error(case: u64) -> f64 {
    let mut rng = seeded(1000 + case);
    let depth = rng.random_range(0..=2);
    let arch = Architecture {
        input_dim: rng.random_range(1..=6),
        trunk_widths: (0..depth).map(|_| rng.random_range(1..=6)).collect(),
        class_count: rng.random_range(2..=5),
        experts: rng.random_range(1..=3),
    };
    let mut net = MultiHeadNet::new(&arch, &mut rng).unwrap();
    let rows = rng.random_range(1..=5);
    // Resample inputs and biases until no ReLU sits within reach of its kink.
    // Dead units see only their bias, so the biases must move too.
    let x = loop {
        for layer in net.trunk_mut() {
            for b in &mut layer.bias {
                *b = rng.random_range(-0.5..0.5);
            }
        }
        let data: Vec<f64> = (0..rows * arch.input_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x = Matrix::from_vec(rows, arch.input_dim, data);
        if pre_activations(&net, &x).iter().all(|z| z.abs() > 1e-3) {
            break x;
        }
    };
    let targets: Vec<MixedTarget> = (0..rows)
        .map(|_| MixedTarget {
            label_a: rng.random_range(0..arch.class_count),
            label_b: rng.random_range(0..arch.class_count),
            gamma: rng.random_range(0.0..=1.0),
        })
        .collect();
    let head = rng.random_range(0..net.head_count());
    let (_, grads) = nn::loss_and_gradients(&net, &x, &targets, head).unwrap();
    let mut worst = check_layer(&mut net, &x, &targets, head, &grads.head_grad, move |m| m.head_mut(head));
    for l in 0..grads.trunk.len() {
        worst = worst.max(check_layer(&mut net, &x, &targets, head, &grads.trunk[l], move |m| {
            &mut m.trunk_mut()[l]
        }));
    }
    worst
}

#[test]
fn fifty_random_cases_match_finite_differences() {
    let worst = (0..50).map(max_relative_error).fold(0.0, f64::max);
    assert!(worst < 1e-4, "max relative error {worst:e}");
}

#[test]
fn eight_four_three_net() {
    let arch = Architecture {
        input_dim: 8,
        trunk_widths: vec![4],
        class_count: 3,
        experts: 1,
    };
    let mut rng = seeded(5);
    let mut net = MultiHeadNet::new(&arch, &mut rng).unwrap();
    let x = Matrix::from_vec(4, 8, (0..32).map(|_| rng.random_range(-1.0..1.0)).collect());
    let t: Vec<MixedTarget> = (0..4).map(|i| MixedTarget::plain(i % 3)).collect();
    let (_, g) = nn::loss_and_gradients(&net, &x, &t, 1).unwrap();
    let mut worst = check_layer(&mut net, &x, &t, 1, &g.head_grad, |m| m.head_mut(1));
    worst = worst.max(check_layer(&mut net, &x, &t, 1, &g.trunk[0], |m| &mut m.trunk_mut()[0]));
    assert!(worst < 1e-4, "{worst:e}");
}

#[test]
fn untouched_heads_get_no_gradient_buffer() {
    let arch = Architecture {
        input_dim: 3,
        trunk_widths: vec![4],
        class_count: 2,
        experts: 2,
    };
    let net = MultiHeadNet::new(&arch, &mut seeded(1)).unwrap();
    let x = Matrix::from_vec(1, 3, vec![0.1, 0.2, 0.3]);
    let (_, g) = nn::loss_and_gradients(&net, &x, &[MixedTarget::plain(0)], 2).unwrap();
    assert_eq!(g.head, 2);
    assert_eq!(g.head_grad.weights.len(), net.head(2).weights.len());
}
