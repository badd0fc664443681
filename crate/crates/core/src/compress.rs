//! Score-driven pruning, median-split mixed precision and symmetric linear
//! quantization, plus exact model-size accounting.
//!
//! A hidden neuron survives when its score is strictly positive. Within each
//! layer the survivors are split at the median `τ` of their scores: neurons
//! scoring strictly above `τ` get the layer's high bit-width, the rest the low
//! one. Every surviving neuron's incoming weights form one quantization group
//! with its own scale.

use std::fmt;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nn::{forward, Activation, DenseLayer, DenseNet};
use crate::relevance::ImportanceScores;

pub const MIN_BITS: u8 = 2;
pub const MAX_BITS: u8 = 16;

/// `(low, high)` bit-widths of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitPair {
    pub low: u8,
    pub high: u8,
}

impl BitPair {
    pub fn new(low: u8, high: u8) -> Result<Self> {
        let pair = Self { low, high };
        pair.validate()?;
        Ok(pair)
    }

    /// Same width for both halves (single-precision quantization).
    pub fn uniform(bits: u8) -> Result<Self> {
        Self::new(bits, bits)
    }

    pub fn validate(&self) -> Result<()> {
        if MIN_BITS <= self.low && self.low <= self.high && self.high <= MAX_BITS {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "bit pair ({}, {}) must satisfy {MIN_BITS} <= low <= high <= {MAX_BITS}",
                self.low, self.high
            )))
        }
    }

    pub fn bits(&self, p: Precision) -> u8 {
        match p {
            Precision::Low => self.low,
            Precision::High => self.high,
        }
    }
}

impl fmt::Display for BitPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.low, self.high)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    Low,
    High,
}

/// Keep-mask per hidden layer: `true` where the score is strictly positive.
pub fn prune_mask(scores: &ImportanceScores) -> Result<Vec<Vec<bool>>> {
    let masks: Vec<Vec<bool>> = scores
        .layers
        .iter()
        .map(|layer| layer.iter().map(|&s| s > 0.0).collect())
        .collect();
    check_not_degenerate(&masks)?;
    Ok(masks)
}

/// Keeps the `keep[l]` highest-scoring neurons of every hidden layer. Equal
/// scores are ranked by neuron index, lowest first.
pub fn top_k_masks(scores: &ImportanceScores, keep: &[usize]) -> Result<Vec<Vec<bool>>> {
    if keep.len() != scores.layers.len() {
        return Err(Error::invalid(format!(
            "{} keep counts for {} layers",
            keep.len(),
            scores.layers.len()
        )));
    }
    let masks: Vec<Vec<bool>> = scores
        .layers
        .iter()
        .zip(keep)
        .map(|(layer, &k)| {
            let mut order: Vec<usize> = (0..layer.len()).collect();
            order.sort_by(|&a, &b| layer[b].total_cmp(&layer[a]).then(a.cmp(&b)));
            let mut mask = vec![false; layer.len()];
            for &i in order.iter().take(k) {
                mask[i] = true;
            }
            mask
        })
        .collect();
    check_not_degenerate(&masks)?;
    Ok(masks)
}

fn check_not_degenerate(masks: &[Vec<bool>]) -> Result<()> {
    match masks.iter().position(|m| !m.iter().any(|&k| k)) {
        Some(layer) => Err(Error::DegenerateLayer { layer }),
        None => Ok(()),
    }
}

/// Removes every masked-out hidden neuron: its incoming weight column, its
/// bias and its outgoing weight row. Kept parameters are copied unchanged.
pub fn apply_prune(net: &DenseNet, masks: &[Vec<bool>]) -> Result<DenseNet> {
    if masks.len() != net.hidden_count() {
        return Err(Error::invalid(format!(
            "{} masks for {} hidden layers",
            masks.len(),
            net.hidden_count()
        )));
    }
    for (l, (mask, layer)) in masks.iter().zip(net.layers()).enumerate() {
        if mask.len() != layer.fan_out() {
            return Err(Error::invalid(format!(
                "mask {l} has {} entries for {} neurons",
                mask.len(),
                layer.fan_out()
            )));
        }
    }
    check_not_degenerate(masks)?;
    let kept: Vec<Vec<usize>> = masks
        .iter()
        .map(|m| m.iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| i).collect())
        .collect();
    let layers = net
        .layers()
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            let mut weights = layer.weights.clone();
            let mut biases = layer.biases.clone();
            if l > 0 {
                weights = weights.select(Axis(0), &kept[l - 1]);
            }
            if l < kept.len() {
                weights = weights.select(Axis(1), &kept[l]);
                biases = biases.select(Axis(0), &kept[l]);
            }
            DenseLayer {
                weights,
                biases,
                activation: layer.activation,
            }
        })
        .collect();
    DenseNet::new(layers)
}

/// Median; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    })
}

/// Pruning and precision decisions for every hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionPlan {
    pub masks: Vec<Vec<bool>>,
    /// Median of the surviving scores of each layer.
    pub taus: Vec<f64>,
    pub bit_pairs: Vec<BitPair>,
    /// One entry per surviving neuron, in neuron-index order.
    pub assignments: Vec<Vec<Precision>>,
}

impl CompressionPlan {
    /// Plan for the neurons kept by `masks`, split at the median of their
    /// scores. Survivor scores need not be positive (matched-size baselines
    /// keep the top-k of a criterion).
    pub fn build(scores: &ImportanceScores, masks: Vec<Vec<bool>>, bit_pairs: &[BitPair]) -> Result<Self> {
        if masks.len() != scores.layers.len() {
            return Err(Error::invalid("one mask per scored layer required"));
        }
        let surviving: Vec<Vec<f64>> = scores
            .layers
            .iter()
            .zip(&masks)
            .map(|(s, m)| {
                if s.len() != m.len() {
                    return Err(Error::invalid("mask and score widths differ"));
                }
                Ok(s.iter().zip(m).filter(|(_, &k)| k).map(|(&v, _)| v).collect())
            })
            .collect::<Result<_>>()?;
        let (taus, assignments) = split_at_median(&surviving, bit_pairs)?;
        Ok(Self {
            masks,
            taus,
            bit_pairs: bit_pairs.to_vec(),
            assignments,
        })
    }

    pub fn survivor_counts(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }

    /// Bit-width of every surviving neuron of hidden layer `l`.
    pub fn layer_bits(&self, l: usize) -> Vec<u8> {
        self.assignments[l]
            .iter()
            .map(|&p| self.bit_pairs[l].bits(p))
            .collect()
    }
}

fn split_at_median(surviving: &[Vec<f64>], bit_pairs: &[BitPair]) -> Result<(Vec<f64>, Vec<Vec<Precision>>)> {
    if bit_pairs.len() != surviving.len() {
        return Err(Error::invalid(format!(
            "{} bit pairs for {} hidden layers",
            bit_pairs.len(),
            surviving.len()
        )));
    }
    for pair in bit_pairs {
        pair.validate()?;
    }
    let mut taus = Vec::with_capacity(surviving.len());
    let mut assignments = Vec::with_capacity(surviving.len());
    for (layer, scores) in surviving.iter().enumerate() {
        let tau = median(scores).ok_or(Error::DegenerateLayer { layer })?;
        assignments.push(
            scores
                .iter()
                .map(|&s| if s > tau { Precision::High } else { Precision::Low })
                .collect(),
        );
        taus.push(tau);
    }
    Ok((taus, assignments))
}

/// Median split of already-pruned scores; every score must be positive.
pub fn assign_precision(surviving: &[Array1<f64>], bit_pairs: &[BitPair]) -> Result<CompressionPlan> {
    for (l, s) in surviving.iter().enumerate() {
        if let Some(&bad) = s.iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::invalid(format!("layer {l}: surviving score {bad} is not positive")));
        }
    }
    let scores: Vec<Vec<f64>> = surviving.iter().map(|s| s.to_vec()).collect();
    let (taus, assignments) = split_at_median(&scores, bit_pairs)?;
    Ok(CompressionPlan {
        masks: scores.iter().map(|s| vec![true; s.len()]).collect(),
        taus,
        bit_pairs: bit_pairs.to_vec(),
        assignments,
    })
}

/// Largest code magnitude of a symmetric `bits`-bit group.
#[inline]
pub fn code_limit(bits: u8) -> i32 {
    (1i32 << (bits - 1)) - 1
}

/// Symmetric linear quantization of one weight group.
///
/// The scale is `max|w| / (2^(b-1) - 1)` rounded toward zero to `f32` (the
/// stored precision), and codes are `round_half_away(w / scale)` clamped to
/// `±(2^(b-1) - 1)`. An all-zero group gets scale 1 and zero codes.
pub fn quantize_group(weights: &[f64], bits: u8) -> Result<(Vec<i32>, f32)> {
    if !(MIN_BITS..=MAX_BITS).contains(&bits) {
        return Err(Error::invalid(format!("bit-width {bits} outside {MIN_BITS}..={MAX_BITS}")));
    }
    if !weights.iter().all(|w| w.is_finite()) {
        return Err(Error::invalid("weight group contains non-finite values"));
    }
    let limit = code_limit(bits);
    let max_abs = weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let exact = max_abs / limit as f64;
    let mut scale = exact as f32;
    if scale as f64 > exact {
        scale = scale.next_down();
    }
    if !(scale > 0.0) {
        return Ok((vec![0; weights.len()], 1.0));
    }
    let s = scale as f64;
    let codes = weights
        .iter()
        .map(|&w| ((w / s).round() as i32).clamp(-limit, limit))
        .collect();
    Ok((codes, scale))
}

pub fn dequantize_group(codes: &[i32], scale: f32) -> Vec<f64> {
    codes.iter().map(|&c| c as f64 * scale as f64).collect()
}

/// One quantized layer: a group of `fan_in` codes per output neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub fan_in: usize,
    pub bits: Vec<u8>,
    pub scales: Vec<f32>,
    pub biases: Vec<f32>,
    /// Neuron-major: codes of neuron `j` are `codes[j*fan_in..(j+1)*fan_in]`.
    pub codes: Vec<i32>,
}

impl QuantizedLayer {
    pub fn width(&self) -> usize {
        self.bits.len()
    }

    pub fn group(&self, j: usize) -> &[i32] {
        &self.codes[j * self.fan_in..(j + 1) * self.fan_in]
    }
}

/// A pruned network with per-neuron quantized weights and `f32` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub input_dim: usize,
    pub classes: usize,
    pub layers: Vec<QuantizedLayer>,
}

impl QuantizedModel {
    /// Checks every structural and range invariant.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Malformed("model has no layers".into()));
        }
        let mut fan_in = self.input_dim;
        if fan_in == 0 {
            return Err(Error::Malformed("input_dim is zero".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let width = layer.width();
            if width == 0 {
                return Err(Error::Malformed(format!("layer {l} is empty")));
            }
            if layer.fan_in != fan_in {
                return Err(Error::Malformed(format!(
                    "layer {l} expects {} inputs, previous layer has {fan_in}",
                    layer.fan_in
                )));
            }
            if layer.scales.len() != width || layer.biases.len() != width || layer.codes.len() != width * fan_in {
                return Err(Error::Malformed(format!("layer {l} arrays disagree on width")));
            }
            for j in 0..width {
                let bits = layer.bits[j];
                if !(MIN_BITS..=MAX_BITS).contains(&bits) {
                    return Err(Error::Malformed(format!("layer {l} neuron {j}: bit-width {bits}")));
                }
                let scale = layer.scales[j];
                if !(scale.is_finite() && scale > 0.0) {
                    return Err(Error::Malformed(format!("layer {l} neuron {j}: scale {scale}")));
                }
                if !layer.biases[j].is_finite() {
                    return Err(Error::Malformed(format!("layer {l} neuron {j}: non-finite bias")));
                }
                let limit = code_limit(bits);
                if let Some(&code) = layer.group(j).iter().find(|c| c.abs() > limit) {
                    return Err(Error::CodeOutOfRange {
                        layer: l,
                        neuron: j,
                        code: code as i64,
                        bits,
                    });
                }
            }
            fan_in = width;
        }
        if fan_in != self.classes {
            return Err(Error::Malformed(format!(
                "output width {fan_in} differs from class count {}",
                self.classes
            )));
        }
        Ok(())
    }

    /// The full-precision network whose weights are `code × scale`.
    pub fn dequantize(&self) -> Result<DenseNet> {
        let last = self.layers.len() - 1;
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(l, q)| {
                let mut weights = Array2::zeros((q.fan_in, q.width()));
                for j in 0..q.width() {
                    let deq = dequantize_group(q.group(j), q.scales[j]);
                    weights.column_mut(j).assign(&Array1::from(deq));
                }
                DenseLayer {
                    weights,
                    biases: q.biases.iter().map(|&b| b as f64).collect(),
                    activation: if l == last {
                        Activation::Identity
                    } else {
                        Activation::Relu
                    },
                }
            })
            .collect();
        DenseNet::new(layers)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.codes.len() + l.biases.len()).sum()
    }
}

/// Quantizes a pruned network according to `plan`. The output layer uses the
/// high bit-width of the last hidden layer; biases are rounded to `f32`.
pub fn quantize_model(net: &DenseNet, plan: &CompressionPlan) -> Result<QuantizedModel> {
    quantize_model_with(net, plan, Exec::default())
}

pub fn quantize_model_with(net: &DenseNet, plan: &CompressionPlan, exec: Exec) -> Result<QuantizedModel> {
    if plan.assignments.len() != net.hidden_count() || plan.bit_pairs.len() != net.hidden_count() {
        return Err(Error::invalid(format!(
            "plan covers {} hidden layers, network has {}",
            plan.assignments.len(),
            net.hidden_count()
        )));
    }
    let out_bits = plan
        .bit_pairs
        .last()
        .map(|p| p.high)
        .ok_or_else(|| Error::invalid("network has no hidden layers to plan"))?;
    let mut layers = Vec::with_capacity(net.layers().len());
    for (l, layer) in net.layers().iter().enumerate() {
        let bits = if l < plan.assignments.len() {
            if plan.assignments[l].len() != layer.fan_out() {
                return Err(Error::invalid(format!(
                    "plan keeps {} neurons in layer {l}, pruned network has {}",
                    plan.assignments[l].len(),
                    layer.fan_out()
                )));
            }
            plan.layer_bits(l)
        } else {
            vec![out_bits; layer.fan_out()]
        };
        let groups = exec.map((0..layer.fan_out()).collect(), |j| {
            let column: Vec<f64> = layer.weights.column(j).to_vec();
            quantize_group(&column, bits[j])
        });
        let mut codes = Vec::with_capacity(layer.weights.len());
        let mut scales = Vec::with_capacity(layer.fan_out());
        for g in groups {
            let (c, s) = g?;
            codes.extend(c);
            scales.push(s);
        }
        layers.push(QuantizedLayer {
            fan_in: layer.fan_in(),
            bits,
            scales,
            biases: layer.biases.iter().map(|&b| b as f32).collect(),
            codes,
        });
    }
    let model = QuantizedModel {
        input_dim: net.input_dim(),
        classes: net.classes(),
        layers,
    };
    model.validate()?;
    Ok(model)
}

/// Logits of the quantized model: the forward pass of its dequantized network.
pub fn quantized_forward(model: &QuantizedModel, x: &[f64]) -> Result<Array1<f64>> {
    let net = model.dequantize()?;
    Ok(forward(&net, x)?.logits().clone())
}

/// Storage footprint split by component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SizeBreakdown {
    pub weights: u64,
    pub scales: u64,
    pub biases: u64,
    pub header: u64,
}

impl SizeBreakdown {
    pub fn total(&self) -> u64 {
        self.weights + self.scales + self.biases + self.header
    }

    /// Decimal megabytes (10^6 bytes).
    pub fn megabytes(&self) -> f64 {
        self.total() as f64 / 1e6
    }
}

/// Fixed part of the quantized file header: magic, version, input width,
/// class count, layer count.
pub const QUANT_HEADER_FIXED: u64 = 4 + 2 + 4 + 4 + 4;

/// Models whose storage size can be accounted exactly.
pub trait ModelSize {
    fn size_breakdown(&self) -> SizeBreakdown;
}

/// Full precision: 4 bytes per weight and per bias, no header.
impl ModelSize for DenseNet {
    fn size_breakdown(&self) -> SizeBreakdown {
        let weights: usize = self.layers().iter().map(|l| l.weights.len()).sum();
        let biases: usize = self.layers().iter().map(|l| l.biases.len()).sum();
        SizeBreakdown {
            weights: 4 * weights as u64,
            scales: 0,
            biases: 4 * biases as u64,
            header: 0,
        }
    }
}

/// Quantized: `ceil(fan_in·b/8)` bytes per group, 4 bytes per scale and per
/// bias, and a header of [`QUANT_HEADER_FIXED`] bytes plus, per layer, a
/// 4-byte width and one bit-width byte per neuron. This equals the length of
/// the serialized file.
impl ModelSize for QuantizedModel {
    fn size_breakdown(&self) -> SizeBreakdown {
        let mut out = SizeBreakdown {
            header: QUANT_HEADER_FIXED,
            ..Default::default()
        };
        for layer in &self.layers {
            let width = layer.width() as u64;
            out.header += 4 + width;
            out.scales += 4 * width;
            out.biases += 4 * width;
            out.weights += layer
                .bits
                .iter()
                .map(|&b| (layer.fan_in as u64 * b as u64).div_ceil(8))
                .sum::<u64>();
        }
        out
    }
}

pub fn model_size_bytes<M: ModelSize + ?Sized>(model: &M) -> SizeBreakdown {
    model.size_breakdown()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relevance::Criterion;
    use ndarray::array;

    fn scores(layers: Vec<Array1<f64>>) -> ImportanceScores {
        ImportanceScores {
            criterion: Criterion::Lrp,
            layers,
            scoring_size: 1,
        }
    }

    #[test]
    fn mask_keeps_strictly_positive() {
        let m = prune_mask(&scores(vec![array![-0.1, 0.0, 0.3]])).unwrap();
        assert_eq!(m, vec![vec![false, false, true]]);
        let m = prune_mask(&scores(vec![array![0.5, 0.2, -0.3, 0.0]])).unwrap();
        assert_eq!(m, vec![vec![true, true, false, false]]);
        let m = prune_mask(&scores(vec![array![1.0, 2.0]])).unwrap();
        assert_eq!(m, vec![vec![true, true]]);
    }

    #[test]
    fn all_pruned_layer_is_degenerate() {
        let err = prune_mask(&scores(vec![array![1.0], array![0.0, -1.0]])).unwrap_err();
        assert!(matches!(err, Error::DegenerateLayer { layer: 1 }));
    }

    #[test]
    fn median_split_examples() {
        let pairs = [BitPair::new(8, 16).unwrap()];
        let p = assign_precision(&[array![0.1, 0.2, 0.3, 0.4]], &pairs).unwrap();
        assert!((p.taus[0] - 0.25).abs() < 1e-15);
        use Precision::*;
        assert_eq!(p.assignments[0], vec![Low, Low, High, High]);

        let p = assign_precision(&[array![0.1, 0.2, 0.3]], &pairs).unwrap();
        assert_eq!(p.taus[0], 0.2);
        assert_eq!(p.assignments[0], vec![Low, Low, High]);

        let p = assign_precision(&[array![0.7, 0.7, 0.7]], &pairs).unwrap();
        assert_eq!(p.assignments[0], vec![Low, Low, Low]);

        assert!(matches!(
            assign_precision(&[array![]], &pairs),
            Err(Error::DegenerateLayer { layer: 0 })
        ));
        assert!(assign_precision(&[array![0.0, 1.0]], &pairs).is_err());
    }

    #[test]
    fn bit_pair_bounds() {
        assert!(BitPair::new(2, 16).is_ok());
        assert!(BitPair::new(1, 8).is_err());
        assert!(BitPair::new(8, 4).is_err());
        assert!(BitPair::new(8, 17).is_err());
    }

    #[test]
    fn quantize_example_group() {
        let (codes, scale) = quantize_group(&[0.5, -1.0, 0.25], 8).unwrap();
        assert_eq!(codes, vec![64, -127, 32]);
        assert!((scale as f64 - 1.0 / 127.0).abs() < 1e-9);
        let deq = dequantize_group(&codes, scale);
        assert!((deq[0] - 0.503937).abs() < 1e-6);
        assert!((deq[1] + 1.0).abs() < 1e-6);
        assert!((deq[2] - 0.251968).abs() < 1e-6);
    }

    #[test]
    fn zero_group_convention() {
        for bits in [2, 8, 16] {
            let (codes, scale) = quantize_group(&[0.0, 0.0, 0.0], bits).unwrap();
            assert_eq!(codes, vec![0, 0, 0]);
            assert_eq!(scale, 1.0);
            assert_eq!(dequantize_group(&codes, scale), vec![0.0; 3]);
        }
        assert!(quantize_group(&[1.0], 1).is_err());
        assert!(quantize_group(&[1.0], 17).is_err());
    }

    #[test]
    fn full_precision_size_of_paper_net() {
        let net = crate::nn::init_net(&[2, 1000, 1000, 1000, 4], 1).unwrap();
        let size = model_size_bytes(&net);
        assert_eq!(size.total(), 8_036_016);
        assert_eq!(size.weights, 4 * 2_006_000);
        assert_eq!(size.biases, 4 * 3004);
    }

    #[test]
    fn uniform_third_pruning_size() {
        let net = crate::nn::init_net(&[2, 667, 667, 667, 4], 1).unwrap();
        let mb = model_size_bytes(&net).megabytes();
        assert!((mb - 3.58314).abs() < 1e-5, "{mb}");
    }

    #[test]
    fn prune_nothing_is_identity() {
        let net = crate::nn::init_net(&[3, 4, 5, 2], 1).unwrap();
        let masks = vec![vec![true; 4], vec![true; 5]];
        assert_eq!(apply_prune(&net, &masks).unwrap(), net);
    }

    #[test]
    fn top_k_ties_prefer_low_index() {
        let s = scores(vec![array![1.0, 3.0, 3.0, 0.5]]);
        assert_eq!(top_k_masks(&s, &[2]).unwrap(), vec![vec![false, true, true, false]]);
        assert_eq!(top_k_masks(&s, &[1]).unwrap(), vec![vec![false, true, false, false]]);
    }
}
