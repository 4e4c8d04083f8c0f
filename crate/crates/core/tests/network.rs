use std::time::Instant;

use itemlab::data::LabeledDataset;
use itemlab::matrix::Matrix;
use itemlab::nn::{self, Activation, Architecture, Dense, LrSchedule, MultiHeadNet, OptimizerState};
use itemlab::rng::seeded;
use itemlab::trainer::evaluate;
use rand::Rng;

fn arch(input_dim: usize, trunk: &[usize], k: usize, m: usize) -> Architecture {
    Architecture {
        input_dim,
        trunk_widths: trunk.to_vec(),
        class_count: k,
        experts: m,
    }
}

fn dense_params(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

#[test]
fn extra_head_share_of_parameters() {
    let net = MultiHeadNet::new(&arch(16, &[64, 32], 8, 4), &mut seeded(1)).unwrap();
    let trunk = dense_params(&[16, 64, 32]);
    let head = dense_params(&[32, 8]);
    assert_eq!(net.trunk_param_count(), trunk);
    assert_eq!(net.head_param_count(), head);
    assert_eq!(net.param_count(), trunk + 5 * head);
    // The four extra heads are 1056 of 4488 parameters, about 23.5%.
    let extra = 4.0 * head as f64 / net.param_count() as f64;
    assert!((extra - 1056.0 / 4488.0).abs() < 1e-15);
    println!("extra-head share {extra:.4}, one head {:.4}", head as f64 / net.param_count() as f64);
}

fn best_of<F: FnMut()>(mut f: F) -> f64 {
    (0..15)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn all_heads_pass_reuses_the_trunk() {
    let mut rng = seeded(2);
    let net = MultiHeadNet::new(&arch(16, &[64, 64], 8, 4), &mut rng).unwrap();
    let x = Matrix::from_vec(2048, 16, (0..2048 * 16).map(|_| rng.random_range(-1.0..1.0)).collect());
    let single = best_of(|| {
        std::hint::black_box(net.forward(&x, 0).unwrap());
    });
    let all = best_of(|| {
        std::hint::black_box(net.forward_all_heads(&x).unwrap());
    });
    assert!(all < 1.5 * single, "all heads {all:e}s vs one head {single:e}s");
}

/// A linear net whose head `h` scores class `c` with `weights[c][c]`.
fn linear(k: usize, weight: f64, bias: Vec<f64>) -> MultiHeadNet {
    let mut w = vec![0.0; k * k];
    for c in 0..k {
        w[c * k + c] = weight;
    }
    let head = Dense {
        in_dim: k,
        out_dim: k,
        weights: w,
        bias,
        activation: Activation::Identity,
    };
    MultiHeadNet::from_layers(Vec::new(), vec![head.clone(), head]).unwrap()
}

fn one_hot(labels: &[usize], k: usize) -> LabeledDataset {
    let mut x = Matrix::zeros(labels.len(), k);
    for (i, &y) in labels.iter().enumerate() {
        x.set(i, y, 1.0);
    }
    LabeledDataset::new(x, labels.to_vec(), labels.to_vec(), k).unwrap()
}

#[test]
fn perfect_classifier_scores_one() {
    let test = one_hot(&(0..40).map(|i| i % 4).collect::<Vec<_>>(), 4);
    let e = evaluate(&linear(4, 1.0, vec![0.0; 4]), &test, &[0, 1]).unwrap();
    assert_eq!(e.accuracy, 1.0);
    assert_eq!(e.class_accuracy, vec![1.0; 4]);
}

#[test]
fn constant_classifier_scores_one_quarter() {
    let test = one_hot(&(0..40).map(|i| i % 4).collect::<Vec<_>>(), 4);
    let e = evaluate(&linear(4, 0.0, vec![1.0, 0.0, 0.0, 0.0]), &test, &[0, 1]).unwrap();
    assert_eq!(e.accuracy, 0.25);
    assert_eq!(e.class_accuracy, vec![1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn random_net_on_random_labels_is_near_chance() {
    let mut rng = seeded(3);
    let (n, k) = (1000, 10);
    let x = Matrix::from_vec(n, 8, (0..n * 8).map(|_| rng.random_range(-1.0..1.0)).collect());
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let test = LabeledDataset::new(x, labels.clone(), labels, k).unwrap();
    let net = MultiHeadNet::new(&arch(8, &[16], k, 2), &mut rng).unwrap();
    let e = evaluate(&net, &test, &[0, 1, 2]).unwrap();
    assert!((0.05..=0.18).contains(&e.accuracy), "{}", e.accuracy);
}

#[test]
fn checkpoint_files_round_trip_and_reject_damage() {
    let net = MultiHeadNet::new(&arch(5, &[7], 3, 2), &mut seeded(4)).unwrap();
    let opt = OptimizerState::new(&net, 0.1, 0.9, 1e-3, LrSchedule::step_decay(&[5, 8], 10.0));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.bin");
    nn::save_checkpoint(&net, &opt, &path).unwrap();
    let (net2, opt2) = nn::load_checkpoint(&path).unwrap();
    assert_eq!(net2, net);
    assert_eq!(nn::encode_checkpoint(&net2, &opt2), nn::encode_checkpoint(&net, &opt));

    let bytes = std::fs::read(&path).unwrap();
    assert!(nn::decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    let mut bumped = bytes.clone();
    bumped[8] = bumped[8].wrapping_add(1);
    assert!(nn::decode_checkpoint(&bumped).is_err());
    assert!(nn::load_checkpoint(&dir.path().join("missing.bin")).is_err());
}
