//! Layer-wise relevance propagation with the ε-stabilised rule.
//!
//! Relevance enters at the output as the logit of a chosen class and flows to
//! the layer below as
//!
//! ```text
//! R_i = Σ_j a_i · w_ij · R_j / (z_j + ε·sign*(z_j)),   sign*(0) = +1
//! ```
//!
//! where by default `z_j = Σ_i a_i·w_ij` is the summed input contribution to
//! neuron `j`, without its bias, so every layer conserves the injected
//! relevance up to the stabiliser. [`BiasRule::Absorbed`] divides by the full
//! pre-activation instead; the bias then keeps its share `b_j / z_j` and that
//! relevance is lost.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::{Exec, CHUNK};
use crate::nn::{forward_batch, BatchTrace, DenseNet, ForwardTrace};

pub const DEFAULT_EPSILON: f64 = 1e-9;

/// What the redistribution denominator does with the bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasRule {
    /// Divide by `Σ_i a_i·w_ij` only; relevance is conserved.
    #[default]
    Excluded,
    /// Divide by the full pre-activation `Σ_i a_i·w_ij + b_j`; the bias share
    /// is dropped.
    Absorbed,
}

/// Parameters of the ε-rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrpRule {
    pub epsilon: f64,
    pub bias: BiasRule,
}

impl Default for LrpRule {
    fn default() -> Self {
        Self::epsilon(DEFAULT_EPSILON)
    }
}

impl LrpRule {
    pub fn epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            bias: BiasRule::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_epsilon(self.epsilon)
    }

    #[inline]
    fn denominator(&self, z: f64, b: f64) -> f64 {
        match self.bias {
            BiasRule::Excluded => z - b,
            BiasRule::Absorbed => z,
        }
    }
}

/// Importance criterion a set of scores was computed with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Lrp,
    Taylor,
    Magnitude,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::Lrp, Criterion::Taylor, Criterion::Magnitude];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Lrp => "lrp",
            Criterion::Taylor => "taylor",
            Criterion::Magnitude => "magnitude",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lrp" => Ok(Criterion::Lrp),
            "taylor" => Ok(Criterion::Taylor),
            "magnitude" => Ok(Criterion::Magnitude),
            other => Err(Error::invalid(format!("unknown criterion {other:?}"))),
        }
    }
}

/// Relevance of every neuron for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceRecord {
    /// One vector per activation layer: input features first, logits last.
    pub layers: Vec<Array1<f64>>,
    /// Relevance injected at the output (the target logit).
    pub start_relevance: f64,
    pub sample_id: usize,
}

impl RelevanceRecord {
    pub fn input(&self) -> &Array1<f64> {
        &self.layers[0]
    }

    /// Hidden-layer relevances, excluding input and output.
    pub fn hidden(&self) -> &[Array1<f64>] {
        &self.layers[1..self.layers.len() - 1]
    }
}

/// Signed per-neuron scores for every hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceScores {
    pub criterion: Criterion,
    pub layers: Vec<Array1<f64>>,
    /// Number of samples the scores were averaged over (0 when data-free).
    pub scoring_size: usize,
}

impl ImportanceScores {
    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(Array1::len).collect()
    }

    /// Multiplies every score by `c`.
    pub fn scaled(&self, c: f64) -> ImportanceScores {
        ImportanceScores {
            criterion: self.criterion,
            layers: self.layers.iter().map(|l| l * c).collect(),
            scoring_size: self.scoring_size,
        }
    }

    /// CSV with columns `layer,neuron_index,score,criterion`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,neuron_index,score,criterion\n");
        for (l, scores) in self.layers.iter().enumerate() {
            for (i, s) in scores.iter().enumerate() {
                out.push_str(&format!("{l},{i},{s:?},{}\n", self.criterion));
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<ImportanceScores> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut layers: Vec<Vec<f64>> = Vec::new();
        let mut criterion = None;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::invalid(e.to_string()))?;
            if rec.len() != 4 {
                return Err(Error::invalid("score rows need 4 columns"));
            }
            let parse_err = |e: &dyn fmt::Display| Error::invalid(format!("bad score row: {e}"));
            let l: usize = rec[0].parse().map_err(|e| parse_err(&e))?;
            let i: usize = rec[1].parse().map_err(|e| parse_err(&e))?;
            let s: f64 = rec[2].parse().map_err(|e| parse_err(&e))?;
            let c: Criterion = rec[3].parse()?;
            if *criterion.get_or_insert(c) != c {
                return Err(Error::invalid("mixed criteria in one score file"));
            }
            if l == layers.len() {
                layers.push(Vec::new());
            }
            if l + 1 != layers.len() || i != layers[l].len() {
                return Err(Error::invalid(format!("score rows out of order at layer {l}, neuron {i}")));
            }
            layers[l].push(s);
        }
        let criterion = criterion.ok_or_else(|| Error::invalid("score file has no rows"))?;
        Ok(ImportanceScores {
            criterion,
            layers: layers.into_iter().map(Array1::from).collect(),
            scoring_size: 0,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<ImportanceScores> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ImportanceScores::from_csv(&text)
    }
}

#[inline]
pub(crate) fn stabilize(z: f64, eps: f64) -> f64 {
    if z >= 0.0 {
        z + eps
    } else {
        z - eps
    }
}

fn check_epsilon(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("epsilon must be positive, got {eps}")))
    }
}

/// Runs the backward relevance pass for a batch. Row `r` is seeded with the
/// logit of `targets[r]`. Returns one matrix per activation layer, input first.
fn propagate(net: &DenseNet, trace: &BatchTrace, targets: &[usize], rule: LrpRule) -> Vec<Array2<f64>> {
    let n_layers = net.layers().len();
    let logits = trace.logits();
    let mut r = Array2::zeros(logits.raw_dim());
    for (row, &t) in targets.iter().enumerate() {
        r[[row, t]] = logits[[row, t]];
    }
    let mut out = vec![Array2::zeros((0, 0)); n_layers + 1];
    for l in (0..n_layers).rev() {
        let mut ratio = r.clone();
        let biases = &net.layers()[l].biases;
        Zip::from(ratio.rows_mut()).and(trace.pre[l].rows()).for_each(|mut q, z| {
            for ((q, &z), &b) in q.iter_mut().zip(z).zip(biases) {
                *q /= stabilize(rule.denominator(z, b), rule.epsilon);
            }
        });
        let mut below = ratio.dot(&net.layers()[l].weights.t());
        below *= trace.layer_input(l);
        out[l + 1] = r;
        r = below;
    }
    out[0] = r;
    out
}

fn check_targets(net: &DenseNet, targets: &[usize]) -> Result<()> {
    match targets.iter().find(|&&t| t >= net.classes()) {
        Some(t) => Err(Error::invalid(format!(
            "target class {t} out of range for {} classes",
            net.classes()
        ))),
        None => Ok(()),
    }
}

fn row_view(trace: &ForwardTrace) -> BatchTrace {
    let as_row = |v: &Array1<f64>| v.view().insert_axis(Axis(0)).to_owned();
    BatchTrace {
        input: as_row(&trace.input),
        pre: trace.pre.iter().map(as_row).collect(),
        post: trace.post.iter().map(as_row).collect(),
    }
}

fn check_trace(net: &DenseNet, trace: &ForwardTrace) -> Result<()> {
    let consistent = trace.pre.len() == net.layers().len()
        && trace.post.len() == net.layers().len()
        && trace.input.len() == net.input_dim()
        && net
            .layers()
            .iter()
            .zip(&trace.pre)
            .all(|(layer, z)| z.len() == layer.fan_out());
    if consistent {
        Ok(())
    } else {
        Err(Error::invalid("trace does not match network shape"))
    }
}

/// Relevance of every neuron for one sample, seeded at the logit of `target`.
pub fn lrp_attribute(net: &DenseNet, trace: &ForwardTrace, target: usize, eps: f64) -> Result<RelevanceRecord> {
    lrp_attribute_rule(net, trace, target, LrpRule::epsilon(eps))
}

pub fn lrp_attribute_rule(net: &DenseNet, trace: &ForwardTrace, target: usize, rule: LrpRule) -> Result<RelevanceRecord> {
    rule.validate()?;
    check_targets(net, &[target])?;
    check_trace(net, trace)?;
    let batch = row_view(trace);
    let layers = propagate(net, &batch, &[target], rule)
        .into_iter()
        .map(|m| m.index_axis_move(Axis(0), 0))
        .collect();
    Ok(RelevanceRecord {
        layers,
        start_relevance: trace.logits()[target],
        sample_id: 0,
    })
}

/// Relevance records for a batch of samples, each seeded at its own target.
pub fn lrp_attribute_batch(
    net: &DenseNet,
    x: ArrayView2<f64>,
    targets: &[usize],
    rule: LrpRule,
) -> Result<Vec<RelevanceRecord>> {
    rule.validate()?;
    check_targets(net, targets)?;
    if x.nrows() != targets.len() {
        return Err(Error::invalid("one target per sample required"));
    }
    let trace = forward_batch(net, x)?;
    let rel = propagate(net, &trace, targets, rule);
    Ok((0..targets.len())
        .map(|row| RelevanceRecord {
            layers: rel.iter().map(|m| m.row(row).to_owned()).collect(),
            start_relevance: trace.logits()[[row, targets[row]]],
            sample_id: row,
        })
        .collect())
}

/// Largest relative gap between any layer's total relevance and the injected
/// relevance.
pub fn conservation_check(record: &RelevanceRecord) -> f64 {
    let denom = record.start_relevance.abs().max(1e-12);
    record
        .layers
        .iter()
        .map(|r| (r.sum() - record.start_relevance).abs() / denom)
        .fold(0.0, f64::max)
}

/// Mean signed LRP relevance of every hidden neuron over `scoring_set`, each
/// sample seeded at the logit of its true class.
pub fn aggregate_neuron_scores(net: &DenseNet, scoring_set: &Dataset, eps: f64) -> Result<ImportanceScores> {
    aggregate_neuron_scores_with(net, scoring_set, LrpRule::epsilon(eps), Exec::default())
}

pub fn aggregate_neuron_scores_with(
    net: &DenseNet,
    scoring_set: &Dataset,
    rule: LrpRule,
    exec: Exec,
) -> Result<ImportanceScores> {
    rule.validate()?;
    if scoring_set.is_empty() {
        return Err(Error::invalid("scoring set is empty"));
    }
    check_targets(net, scoring_set.labels())?;
    let hidden = net.hidden_count();
    let partials = exec.map_chunks(scoring_set.len(), CHUNK, |r| -> Result<Vec<Array1<f64>>> {
        let x = scoring_set.features().slice(s![r.clone(), ..]);
        let trace = forward_batch(net, x)?;
        let rel = propagate(net, &trace, &scoring_set.labels()[r], rule);
        Ok((1..=hidden).map(|l| rel[l].sum_axis(Axis(0))).collect())
    });
    let layers = mean_of_partials(partials, net, scoring_set.len())?;
    Ok(ImportanceScores {
        criterion: Criterion::Lrp,
        layers,
        scoring_size: scoring_set.len(),
    })
}

/// Sums per-chunk partial sums in chunk order and divides by `n`.
pub(crate) fn mean_of_partials(
    partials: Vec<Result<Vec<Array1<f64>>>>,
    net: &DenseNet,
    n: usize,
) -> Result<Vec<Array1<f64>>> {
    let mut sums: Vec<Array1<f64>> = net.layers()[..net.hidden_count()]
        .iter()
        .map(|l| Array1::zeros(l.fan_out()))
        .collect();
    for part in partials {
        for (acc, p) in sums.iter_mut().zip(part?) {
            *acc += &p;
        }
    }
    for acc in &mut sums {
        *acc /= n as f64;
    }
    Ok(sums)
}

/// Per-weight relevance `a_i · w_ij · R_j / (z_j + ε·sign*(z_j))` for every
/// layer of one sample. Summing row `i` over `j` gives `R_i`.
pub fn weight_relevance(net: &DenseNet, trace: &ForwardTrace, target: usize, eps: f64) -> Result<Vec<Array2<f64>>> {
    weight_relevance_rule(net, trace, target, LrpRule::epsilon(eps))
}

pub fn weight_relevance_rule(
    net: &DenseNet,
    trace: &ForwardTrace,
    target: usize,
    rule: LrpRule,
) -> Result<Vec<Array2<f64>>> {
    let record = lrp_attribute_rule(net, trace, target, rule)?;
    Ok(net
        .layers()
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            let a = trace.layer_input(l);
            let upper = &record.layers[l + 1];
            let z = &trace.pre[l];
            let mut m = layer.weights.clone();
            for ((i, j), w) in m.indexed_iter_mut() {
                *w *= a[i] * upper[j] / stabilize(rule.denominator(z[j], layer.biases[j]), rule.epsilon);
            }
            m
        })
        .collect())
}
