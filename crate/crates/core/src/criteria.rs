//! Baseline importance criteria: incoming-weight magnitude and first-order
//! Taylor expansion.

use ndarray::{s, Array1, Axis};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::{Exec, CHUNK};
use crate::nn::{activation_grads_batch, forward_batch, DenseNet};
use crate::relevance::{mean_of_partials, Criterion, ImportanceScores};

/// L1 norm of each hidden neuron's incoming weights. Needs no data.
pub fn magnitude_scores(net: &DenseNet) -> ImportanceScores {
    let layers = net.layers()[..net.hidden_count()]
        .iter()
        .map(|layer| layer.weights.map(|w| w.abs()).sum_axis(Axis(0)))
        .collect();
    ImportanceScores {
        criterion: Criterion::Magnitude,
        layers,
        scoring_size: 0,
    }
}

/// `|mean_n(a_i · ∂L/∂a_i)|` per hidden neuron, where `L` is the softmax
/// cross-entropy of sample `n` at its true label.
pub fn taylor_scores(net: &DenseNet, scoring_set: &Dataset) -> Result<ImportanceScores> {
    taylor_scores_with(net, scoring_set, Exec::default())
}

pub fn taylor_scores_with(net: &DenseNet, scoring_set: &Dataset, exec: Exec) -> Result<ImportanceScores> {
    if scoring_set.is_empty() {
        return Err(Error::invalid("scoring set is empty"));
    }
    if let Some(&bad) = scoring_set.labels().iter().find(|&&y| y >= net.classes()) {
        return Err(Error::invalid(format!("label {bad} out of range")));
    }
    let partials = exec.map_chunks(scoring_set.len(), CHUNK, |r| -> Result<Vec<Array1<f64>>> {
        let x = scoring_set.features().slice(s![r.clone(), ..]);
        let trace = forward_batch(net, x)?;
        let grads = activation_grads_batch(net, &trace, &scoring_set.labels()[r]);
        Ok(grads
            .iter()
            .enumerate()
            .map(|(l, g)| (g * &trace.post[l]).sum_axis(Axis(0)))
            .collect())
    });
    let layers = mean_of_partials(partials, net, scoring_set.len())?
        .into_iter()
        .map(|m| m.mapv(f64::abs))
        .collect();
    Ok(ImportanceScores {
        criterion: Criterion::Taylor,
        layers,
        scoring_size: scoring_set.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_net, Activation, DenseLayer};
    use ndarray::array;

    #[test]
    fn magnitude_is_incoming_l1() {
        let net = DenseNet::new(vec![
            DenseLayer {
                weights: array![[0.5, 0.0], [-0.5, 0.0]],
                biases: array![0.0, 0.0],
                activation: Activation::Relu,
            },
            DenseLayer {
                weights: array![[1.0, 2.0], [3.0, 4.0]],
                biases: array![0.0, 0.0],
                activation: Activation::Identity,
            },
        ])
        .unwrap();
        let s = magnitude_scores(&net);
        assert_eq!(s.layers, vec![array![1.0, 0.0]]);
        assert_eq!(s.criterion, Criterion::Magnitude);
    }

    #[test]
    fn taylor_is_non_negative_and_needs_data() {
        let net = init_net(&[2, 6, 5, 3], 4).unwrap();
        let d = crate::data::generate_multi(30, 3, 2).unwrap();
        let s = taylor_scores(&net, &d).unwrap();
        assert!(s.layers.iter().flatten().all(|&v| v >= 0.0));
        assert!(matches!(taylor_scores(&net, &d.subset(&[])), Err(Error::InvalidArgument(_))));
    }
}
