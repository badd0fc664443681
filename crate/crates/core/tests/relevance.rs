use ndarray::{Array1, Array2};
use proptest::prelude::*;
use xaic::criteria::{magnitude_scores, taylor_scores};
use xaic::data::Dataset;
use xaic::nn::{backward_grads, forward, init_net, loss, DenseNet};
use xaic::relevance::{
    aggregate_neuron_scores, conservation_check, lrp_attribute, weight_relevance, Criterion, ImportanceScores,
};

fn dataset(rows: &[[f64; 2]], labels: &[usize], classes: usize) -> Dataset {
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Dataset::new(Array2::from_shape_vec((rows.len(), 2), flat).unwrap(), labels.to_vec(), classes, 0).unwrap()
}

fn scale_net(net: &DenseNet, c: f64) -> DenseNet {
    let mut layers = net.clone().into_layers();
    for layer in &mut layers {
        layer.weights *= c;
        layer.biases *= c;
    }
    DenseNet::new(layers).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_bias_nets_conserve_relevance(
        seed in 0u64..100_000,
        x in prop::collection::vec(0.5f64..2.0, 3),
        target in 0usize..3,
    ) {
        let net = init_net(&[3, 8, 6, 3], seed).unwrap();
        let t = forward(&net, &x).unwrap();
        prop_assume!(t.logits()[target].abs() > 1e-2);
        let r = lrp_attribute(&net, &t, target, 1e-9).unwrap();
        prop_assert!(conservation_check(&r) <= 1e-6);
    }

    #[test]
    fn relevance_is_equivariant_under_input_scaling(
        seed in 0u64..100_000,
        x in prop::collection::vec(-2.0f64..2.0, 3),
        c in 0.1f64..10.0,
    ) {
        // Zero-bias ReLU nets are positively homogeneous, so every relevance scales by c.
        let net = init_net(&[3, 5, 3], seed).unwrap();
        let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
        let a = lrp_attribute(&net, &forward(&net, &x).unwrap(), 0, 1e-300).unwrap();
        let b = lrp_attribute(&net, &forward(&net, &scaled).unwrap(), 0, 1e-300).unwrap();
        for (la, lb) in a.layers.iter().zip(&b.layers) {
            for (u, v) in la.iter().zip(lb) {
                prop_assert!((u * c - v).abs() <= 1e-9 * v.abs().max(1.0));
            }
        }
    }
}

#[test]
fn dead_neurons_score_zero() {
    let mut layers = init_net(&[2, 6, 3], 4).unwrap().into_layers();
    layers[0].weights.column_mut(2).fill(0.0);
    layers[0].biases[2] = -1.0;
    let net = DenseNet::new(layers).unwrap();
    let data = dataset(&[[1.0, 2.0], [-1.0, 0.5], [0.3, -2.0]], &[0, 1, 2], 3);
    let scores = aggregate_neuron_scores(&net, &data, 1e-9).unwrap();
    assert_eq!(scores.layers[0][2], 0.0);
    assert_eq!(scores.criterion, Criterion::Lrp);
    assert_eq!(scores.scoring_size, 3);
}

#[test]
fn aggregation_averages_per_sample_relevance() {
    let net = init_net(&[2, 5, 4, 3], 9).unwrap();
    let samples = [[0.7, -1.2], [1.5, 0.4]];
    let labels = [2, 0];
    let per_sample: Vec<Vec<Array1<f64>>> = samples
        .iter()
        .zip(labels)
        .map(|(x, y)| {
            lrp_attribute(&net, &forward(&net, x).unwrap(), y, 1e-9)
                .unwrap()
                .hidden()
                .to_vec()
        })
        .collect();

    let one = aggregate_neuron_scores(&net, &dataset(&samples[..1], &labels[..1], 3), 1e-9).unwrap();
    assert_eq!(one.layers, per_sample[0]);

    let dup = aggregate_neuron_scores(&net, &dataset(&[samples[0], samples[0]], &[2, 2], 3), 1e-9).unwrap();
    for (a, b) in dup.layers.iter().zip(&one.layers) {
        for (u, v) in a.iter().zip(b) {
            assert!((u - v).abs() <= 1e-15 * v.abs().max(1.0));
        }
    }

    let two = aggregate_neuron_scores(&net, &dataset(&samples, &labels, 3), 1e-9).unwrap();
    for l in 0..2 {
        let expected = (&per_sample[0][l] + &per_sample[1][l]) / 2.0;
        for (u, v) in two.layers[l].iter().zip(&expected) {
            assert!((u - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
    }
}

#[test]
fn weight_relevance_sums_to_neuron_relevance() {
    let mut layers = init_net(&[3, 6, 4, 3], 12).unwrap().into_layers();
    layers[0].biases.fill(0.05);
    let net = DenseNet::new(layers).unwrap();
    let x = [0.4, -1.1, 2.0];
    let t = forward(&net, &x).unwrap();
    let r = lrp_attribute(&net, &t, 1, 1e-9).unwrap();
    let w = weight_relevance(&net, &t, 1, 1e-9).unwrap();
    for (l, m) in w.iter().enumerate() {
        for (i, row) in m.rows().into_iter().enumerate() {
            assert!((row.sum() - r.layers[l][i]).abs() < 1e-12);
        }
        for (j, col) in m.columns().into_iter().enumerate() {
            assert!((col.sum() - r.layers[l + 1][j]).abs() < 1e-6 * r.layers[l + 1][j].abs().max(1e-3));
        }
    }
}

#[test]
fn taylor_single_sample_matches_backprop() {
    let net = init_net(&[2, 7, 5, 3], 3).unwrap();
    let x = [0.9, -0.3];
    let scores = taylor_scores(&net, &dataset(&[x], &[1], 3)).unwrap();
    let g = backward_grads(&net, &x, 1).unwrap();
    let t = forward(&net, &x).unwrap();
    for l in 0..2 {
        for (i, s) in scores.layers[l].iter().enumerate() {
            let expected = (t.post[l][i] * g.activations[l][i]).abs();
            assert!((s - expected).abs() <= 1e-12 * expected.max(1.0));
        }
    }
}

#[test]
fn taylor_tracks_the_loss_change_of_removing_a_neuron() {
    // Small readout weights keep the logits in softmax's near-linear regime.
    let mut checked = 0;
    for seed in 0..20u64 {
        let mut layers = init_net(&[2, 6, 6, 3], 100 + seed).unwrap().into_layers();
        layers[2].weights *= 0.1;
        let net = DenseNet::new(layers.clone()).unwrap();
        let x = [1.0, -0.5];
        let base = loss(&net, &x, 0).unwrap();
        let scores = taylor_scores(&net, &dataset(&[x], &[0], 3)).unwrap();
        for i in 0..6 {
            let mut removed = layers.clone();
            removed[2].weights.row_mut(i).fill(0.0);
            let delta = (loss(&DenseNet::new(removed).unwrap(), &x, 0).unwrap() - base).abs();
            if delta < 1e-6 {
                continue;
            }
            let s = scores.layers[1][i];
            assert!((s - delta).abs() <= 0.2 * delta, "seed {seed} neuron {i}: taylor {s} vs {delta}");
            checked += 1;
        }
    }
    assert!(checked > 20);
}

#[test]
fn magnitude_ignores_weight_signs() {
    let net = init_net(&[2, 5, 4, 3], 6).unwrap();
    let flipped = scale_net(&net, -1.0);
    let a = magnitude_scores(&net);
    let b = magnitude_scores(&flipped);
    assert_eq!(a.layers, b.layers);
    let expected: f64 = net.layers()[0].weights.column(3).iter().map(|w| w.abs()).sum();
    assert_eq!(a.layers[0][3], expected);
}

#[test]
fn score_csv_round_trip() {
    let scores = ImportanceScores {
        criterion: Criterion::Taylor,
        layers: vec![Array1::from(vec![0.5, -1e-300, 3.25]), Array1::from(vec![f64::MIN_POSITIVE])],
        scoring_size: 7,
    };
    let back = ImportanceScores::from_csv(&scores.to_csv()).unwrap();
    assert_eq!(back.layers, scores.layers);
    assert_eq!(back.criterion, Criterion::Taylor);
}
