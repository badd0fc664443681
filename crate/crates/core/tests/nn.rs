use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use xaic::data::{generate_clusters, generate_multi, ClusterGeometry, Dataset};
use xaic::nn::{
    backward_grads, evaluate, forward, init_net, logits_batch, loss, sgd_train, Activation, DenseLayer, DenseNet,
    TrainConfig,
};

fn with_biases(net: DenseNet, seed: u64) -> DenseNet {
    let mut layers = net.into_layers();
    let mut k = seed;
    for layer in &mut layers {
        for b in layer.biases.iter_mut() {
            k = k.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *b = ((k >> 33) as f64 / (1u64 << 31) as f64 - 0.5) * 0.2;
        }
    }
    DenseNet::new(layers).unwrap()
}

fn numeric_grad(net: &DenseNet, x: &[f64], label: usize, l: usize, idx: Option<(usize, usize)>, j: usize) -> f64 {
    let h = 1e-5;
    let eval = |d: f64| {
        let mut layers = net.clone().into_layers();
        match idx {
            Some((r, c)) => layers[l].weights[[r, c]] += d,
            None => layers[l].biases[j] += d,
        }
        loss(&DenseNet::new(layers).unwrap(), x, label).unwrap()
    };
    (eval(h) - eval(-h)) / (2.0 * h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gradients_match_central_differences(
        seed in 0u64..10_000,
        hidden in 2usize..5,
        x in prop::collection::vec(-2.0f64..2.0, 3),
        label in 0usize..3,
    ) {
        let net = with_biases(init_net(&[3, hidden, 3], seed).unwrap(), seed);
        let g = backward_grads(&net, &x, label).unwrap();
        for (l, layer) in net.layers().iter().enumerate() {
            for r in 0..layer.fan_in() {
                for c in 0..layer.fan_out() {
                    let fd = numeric_grad(&net, &x, label, l, Some((r, c)), 0);
                    let a = g.weights[l][[r, c]];
                    prop_assert!((a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()).max(1e-3), "w[{l}][{r},{c}] {a} vs {fd}");
                }
            }
            for j in 0..layer.fan_out() {
                let fd = numeric_grad(&net, &x, label, l, None, j);
                prop_assert!((g.biases[l][j] - fd).abs() <= 1e-4 * g.biases[l][j].abs().max(fd.abs()).max(1e-3));
            }
        }
    }

    #[test]
    fn forward_matches_naive_matmul(seed in 0u64..10_000, x in prop::collection::vec(-3.0f64..3.0, 4)) {
        let net = with_biases(init_net(&[4, 6, 5, 3], seed).unwrap(), seed);
        let mut a = x.clone();
        for layer in net.layers() {
            let mut z = vec![0.0; layer.fan_out()];
            for (j, zj) in z.iter_mut().enumerate() {
                *zj = layer.biases[j] + (0..layer.fan_in()).map(|i| a[i] * layer.weights[[i, j]]).sum::<f64>();
            }
            a = z.into_iter().map(|v| layer.activation.apply(v)).collect();
        }
        let t = forward(&net, &x).unwrap();
        for (u, v) in t.logits().iter().zip(&a) {
            prop_assert!((u - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
    }
}

#[test]
fn softmax_regression_gradient_has_closed_form() {
    let w = array![[0.5, -0.25], [1.0, 0.75]];
    let b = array![0.1, -0.2];
    let net = DenseNet::new(vec![DenseLayer {
        weights: w.clone(),
        biases: b.clone(),
        activation: Activation::Identity,
    }])
    .unwrap();
    let x = [1.5, -0.5];
    let z: Vec<f64> = (0..2).map(|j| b[j] + x[0] * w[[0, j]] + x[1] * w[[1, j]]).collect();
    let p1 = 1.0 / (1.0 + (z[0] - z[1]).exp());
    let p = [1.0 - p1, p1];
    let g = backward_grads(&net, &x, 1).unwrap();
    let expected_loss = -p[1].ln();
    assert!((g.loss - expected_loss).abs() < 1e-14);
    for j in 0..2 {
        let delta = p[j] - if j == 1 { 1.0 } else { 0.0 };
        assert!((g.biases[0][j] - delta).abs() < 1e-14);
        for (i, xi) in x.iter().enumerate() {
            assert!((g.weights[0][[i, j]] - xi * delta).abs() < 1e-14);
        }
    }
}

#[test]
fn training_is_deterministic_and_seed_sensitive() {
    let data = generate_multi(400, 4, 3).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let net = init_net(&[2, 16, 16, 4], 1).unwrap();
    let a = sgd_train(net.clone(), &data, &cfg).unwrap();
    let b = sgd_train(net.clone(), &data, &cfg).unwrap();
    assert_eq!(a.net, b.net);
    assert_eq!(a.loss_history, b.loss_history);
    let c = sgd_train(net, &data, &TrainConfig { seed: 8, ..cfg }).unwrap();
    assert_ne!(a.net, c.net);
}

#[test]
fn zero_epochs_leave_the_net_untouched() {
    let data = generate_multi(40, 4, 3).unwrap();
    let net = init_net(&[2, 8, 4], 5).unwrap();
    let out = sgd_train(net.clone(), &data, &TrainConfig { epochs: 0, ..TrainConfig::default() }).unwrap();
    assert_eq!(out.net, net);
    assert!(out.loss_history.is_empty());
}

#[test]
fn separable_blobs_are_learned() {
    let geometry = ClusterGeometry {
        radius: 6.0,
        std_dev: 0.5,
        ..ClusterGeometry::default()
    };
    let data = generate_clusters(400, 2, 11, &geometry).unwrap();
    let cfg = TrainConfig {
        epochs: 50,
        ..TrainConfig::default()
    };
    let out = sgd_train(init_net(&[2, 16, 2], 2).unwrap(), &data, &cfg).unwrap();
    assert!(evaluate(&out.net, &data).unwrap() >= 0.99);
}

#[test]
fn softmax_regression_reference_on_default_clusters() {
    let train = generate_multi(2000, 4, 21).unwrap();
    let test = generate_multi(1000, 4, 22).unwrap();
    let out = sgd_train(init_net(&[2, 4], 3).unwrap(), &train, &TrainConfig::default()).unwrap();
    assert!(evaluate(&out.net, &test).unwrap() >= 0.90);
}

#[test]
fn constant_predictor_scores_its_class_share() {
    let features = Array2::from_shape_vec((8, 2), (0..16).map(|v| v as f64).collect()).unwrap();
    let labels: Vec<usize> = (0..8).map(|i| i % 4).collect();
    let data = Dataset::new(features, labels, 4, 0).unwrap();
    let constant = DenseNet::new(vec![DenseLayer {
        weights: Array2::zeros((2, 4)),
        biases: array![1.0, 0.0, 0.0, 0.0],
        activation: Activation::Identity,
    }])
    .unwrap();
    assert_eq!(evaluate(&constant, &data).unwrap(), 0.25);
    let logits = logits_batch(&constant, data.features().view());
    assert!(logits.rows().into_iter().all(|r| r == Array1::from(vec![1.0, 0.0, 0.0, 0.0])));
}

#[test]
fn malformed_nets_are_rejected() {
    let relu_last = DenseLayer {
        weights: Array2::zeros((2, 2)),
        biases: Array1::zeros(2),
        activation: Activation::Relu,
    };
    assert!(DenseNet::new(vec![relu_last]).is_err());
    let a = DenseLayer {
        weights: Array2::zeros((2, 3)),
        biases: Array1::zeros(3),
        activation: Activation::Relu,
    };
    let b = DenseLayer {
        weights: Array2::zeros((4, 2)),
        biases: Array1::zeros(2),
        activation: Activation::Identity,
    };
    assert!(DenseNet::new(vec![a, b]).is_err());
    let mut nan = init_net(&[2, 2], 0).unwrap().into_layers();
    nan[0].weights[[0, 0]] = f64::NAN;
    assert!(DenseNet::new(nan).is_err());
}
