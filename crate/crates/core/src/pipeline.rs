//! End-to-end experiments: data → training → scoring → pruning →
//! quantization → evaluation, and the reports built from them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::compress::{
    apply_prune, prune_mask, quantize_model, top_k_masks, BitPair, CompressionPlan,
};
use crate::criteria::{magnitude_scores, taylor_scores};
use crate::data::{generate_clusters, train_test_split, ClusterGeometry, Dataset};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::format::ModelArtifact;
use crate::nn::{evaluate, init_net, sgd_train, DenseNet, TrainConfig};
use crate::relevance::{aggregate_neuron_scores_with, Criterion, ImportanceScores, LrpRule};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub samples: usize,
    pub classes: usize,
    pub seed: u64,
    pub test_fraction: f64,
    pub split_seed: u64,
    pub geometry: ClusterGeometry,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            samples: 4000,
            classes: 4,
            seed: 1,
            test_fraction: 0.25,
            split_seed: 2,
            geometry: ClusterGeometry::default(),
        }
    }
}

/// Everything needed to reproduce one experiment. The defaults are the
/// reference configuration: three hidden layers of 1000 ReLU units on the
/// four-cluster data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataConfig,
    pub hidden: Vec<usize>,
    pub init_seed: u64,
    pub train: TrainConfig,
    /// Training samples (stratified, taken from the head of the training
    /// split) used to compute data-driven scores.
    pub scoring_samples: usize,
    pub lrp: LrpRule,
    pub criterion: Criterion,
    /// One `(low, high)` pair per hidden layer for mixed precision.
    pub bit_pairs: Vec<BitPair>,
    /// Bit-width of single-precision quantization.
    pub spq_bits: u8,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let mpq = BitPair { low: 8, high: 16 };
        Self {
            data: DataConfig::default(),
            hidden: vec![1000, 1000, 1000],
            init_seed: 7,
            train: TrainConfig::default(),
            scoring_samples: 100,
            lrp: LrpRule::default(),
            criterion: Criterion::Lrp,
            bit_pairs: vec![mpq; 3],
            spq_bits: 16,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::invalid("hidden widths must be non-empty and positive"));
        }
        if self.bit_pairs.len() != self.hidden.len() {
            return Err(Error::invalid(format!(
                "{} bit pairs for {} hidden layers",
                self.bit_pairs.len(),
                self.hidden.len()
            )));
        }
        for p in &self.bit_pairs {
            p.validate()?;
        }
        BitPair::uniform(self.spq_bits)?;
        self.train.validate()?;
        self.lrp.validate()?;
        if self.data.classes < 2 || self.data.samples < self.data.classes {
            return Err(Error::invalid("need at least two classes and one sample per class"));
        }
        if self.scoring_samples == 0 {
            return Err(Error::invalid("scoring_samples must be positive"));
        }
        Ok(())
    }

    /// Layer widths including input and output.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![2];
        dims.extend(&self.hidden);
        dims.push(self.data.classes);
        dims
    }

    /// Same configuration with every seed shifted by `offset`.
    pub fn with_seed_offset(&self, offset: u64) -> Self {
        let mut cfg = self.clone();
        cfg.data.seed = cfg.data.seed.wrapping_add(offset);
        cfg.data.split_seed = cfg.data.split_seed.wrapping_add(offset);
        cfg.init_seed = cfg.init_seed.wrapping_add(offset);
        cfg.train.seed = cfg.train.seed.wrapping_add(offset);
        cfg
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse {
            path: PathBuf::from("<config>"),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                path: path.into(),
                message,
            },
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable in TOML")
    }
}

/// The compression applied after scoring.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Method {
    Original,
    Prune,
    PruneSpq { bits: u8 },
    PruneMpq { bit_pairs: Vec<BitPair> },
}

impl Method {
    /// Parses `original`, `prune`, `prune_spq` or `prune_mpq`, taking
    /// bit-widths from `cfg`.
    pub fn from_name(name: &str, cfg: &PipelineConfig) -> Result<Self> {
        match name {
            "original" => Ok(Method::Original),
            "prune" => Ok(Method::Prune),
            "prune_spq" => Ok(Method::PruneSpq { bits: cfg.spq_bits }),
            "prune_mpq" => Ok(Method::PruneMpq {
                bit_pairs: cfg.bit_pairs.clone(),
            }),
            other => Err(Error::invalid(format!("unknown method {other:?}"))),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Method::Original => "Original".into(),
            Method::Prune => "Pruning".into(),
            Method::PruneSpq { bits } => format!("Pruning + SP Q({bits} bits)"),
            Method::PruneMpq { bit_pairs } => {
                let layers: Vec<String> = bit_pairs
                    .iter()
                    .enumerate()
                    .map(|(l, p)| format!("L{l} {p}"))
                    .collect();
                format!("Pruning + MP Q({})", layers.join("; "))
            }
        }
    }

    /// File-name friendly identifier.
    pub fn slug(&self) -> String {
        match self {
            Method::Original => "original".into(),
            Method::Prune => "prune".into(),
            Method::PruneSpq { bits } => format!("spq{bits}"),
            Method::PruneMpq { bit_pairs } => {
                let parts: Vec<String> = bit_pairs.iter().map(|p| format!("{}-{}", p.low, p.high)).collect();
                format!("mpq_{}", parts.join("_"))
            }
        }
    }

    fn quantization(&self) -> String {
        match self {
            Method::Original | Method::Prune => "-".into(),
            Method::PruneSpq { bits } => format!("SP Q({bits} bits)"),
            Method::PruneMpq { bit_pairs } => bit_pairs
                .iter()
                .enumerate()
                .map(|(l, p)| format!("Layer{l}: {p} bits"))
                .collect::<Vec<_>>()
                .join("<br>"),
        }
    }
}

/// One line of a report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: Method,
    /// `None` for the uncompressed model.
    pub criterion: Option<Criterion>,
    pub size_bytes: u64,
    pub accuracy: f64,
    pub layer_survivors: Vec<usize>,
    /// Per-layer median split thresholds (quantized methods only).
    pub tau_values: Vec<f64>,
    pub model_file: String,
    /// Not part of any emitted file, which must be reproducible.
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentReport {
    pub format_version: u32,
    pub rows: Vec<ReportRow>,
}

/// A report row plus the model it describes.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub row: ReportRow,
    pub artifact: ModelArtifact,
}

/// Data and trained network shared by every method of an experiment.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub scoring: Dataset,
    pub net: DenseNet,
    pub loss_history: Vec<f64>,
}

/// Generates and splits the data per `cfg`.
pub fn prepare_data(cfg: &PipelineConfig) -> Result<(Dataset, Dataset, Dataset)> {
    cfg.validate()?;
    let d = &cfg.data;
    let all = generate_clusters(d.samples, d.classes, d.seed, &d.geometry)?;
    let (train, test) = train_test_split(&all, d.test_fraction, d.split_seed)?;
    let scoring = train.stratified_head(cfg.scoring_samples)?;
    Ok((train, test, scoring))
}

/// Generates the data and trains a fresh network.
pub fn prepare(cfg: &PipelineConfig) -> Result<Prepared> {
    let (train, test, scoring) = prepare_data(cfg)?;
    let net = init_net(&cfg.dims(), cfg.init_seed)?;
    let outcome = sgd_train(net, &train, &cfg.train)?;
    Ok(Prepared {
        train,
        test,
        scoring,
        net: outcome.net,
        loss_history: outcome.loss_history,
    })
}

/// Generates the data and uses an already trained network.
pub fn prepare_with_net(cfg: &PipelineConfig, net: DenseNet) -> Result<Prepared> {
    let (train, test, scoring) = prepare_data(cfg)?;
    if net.input_dim() != train.dim() || net.classes() != cfg.data.classes {
        return Err(Error::invalid(format!(
            "network maps {} features to {} classes; data has {} features and {} classes",
            net.input_dim(),
            net.classes(),
            train.dim(),
            cfg.data.classes
        )));
    }
    Ok(Prepared {
        train,
        test,
        scoring,
        net,
        loss_history: Vec::new(),
    })
}

/// Scores `net` under `criterion` on `scoring`.
pub fn score(net: &DenseNet, scoring: &Dataset, criterion: Criterion, lrp: LrpRule) -> Result<ImportanceScores> {
    match criterion {
        Criterion::Lrp => aggregate_neuron_scores_with(net, scoring, lrp, Exec::default()),
        Criterion::Taylor => taylor_scores(net, scoring),
        Criterion::Magnitude => Ok(magnitude_scores(net)),
    }
}

/// A trained network with its LRP pruning decision. Every criterion prunes
/// to the per-layer survivor counts of LRP, so methods are compared at
/// matched model sizes.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub cfg: PipelineConfig,
    pub prep: Prepared,
    pub lrp_scores: ImportanceScores,
    /// Survivors per hidden layer under the non-positive pruning rule.
    pub keep: Vec<usize>,
}

impl Experiment {
    pub fn new(cfg: &PipelineConfig, prep: Prepared) -> Result<Self> {
        cfg.validate()?;
        let lrp_scores = score(&prep.net, &prep.scoring, Criterion::Lrp, cfg.lrp)?;
        let keep = prune_mask(&lrp_scores)?
            .iter()
            .map(|m| m.iter().filter(|&&k| k).count())
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            prep,
            lrp_scores,
            keep,
        })
    }

    pub fn scores(&self, criterion: Criterion) -> Result<ImportanceScores> {
        match criterion {
            Criterion::Lrp => Ok(self.lrp_scores.clone()),
            other => score(&self.prep.net, &self.prep.scoring, other, self.cfg.lrp),
        }
    }

    /// LRP keeps strictly positive scores; other criteria keep their top
    /// `keep[l]` neurons per layer.
    pub fn masks(&self, scores: &ImportanceScores) -> Result<Vec<Vec<bool>>> {
        match scores.criterion {
            Criterion::Lrp => prune_mask(scores),
            _ => top_k_masks(scores, &self.keep),
        }
    }

    pub fn run(&self, criterion: Criterion, method: &Method) -> Result<RunOutput> {
        let scores = self.scores(criterion)?;
        self.run_scored(&scores, method)
    }

    pub fn run_scored(&self, scores: &ImportanceScores, method: &Method) -> Result<RunOutput> {
        let start = Instant::now();
        let net = &self.prep.net;
        let (artifact, survivors, taus, criterion) = match method {
            Method::Original => (ModelArtifact::Full(net.clone()), hidden_widths(net), Vec::new(), None),
            _ => {
                let masks = self.masks(scores)?;
                let pruned = apply_prune(net, &masks)?;
                let bit_pairs = match method {
                    Method::PruneSpq { bits } => Some(vec![BitPair::uniform(*bits)?; net.hidden_count()]),
                    Method::PruneMpq { bit_pairs } => Some(bit_pairs.clone()),
                    _ => None,
                };
                let survivors = hidden_widths(&pruned);
                match bit_pairs {
                    None => (ModelArtifact::Full(pruned), survivors, Vec::new(), Some(scores.criterion)),
                    Some(pairs) => {
                        let plan = CompressionPlan::build(scores, masks, &pairs)?;
                        let q = quantize_model(&pruned, &plan)?;
                        (ModelArtifact::Quantized(q), survivors, plan.taus, Some(scores.criterion))
                    }
                }
            }
        };
        let accuracy = evaluate(&artifact.network()?, &self.prep.test)?;
        let size_bytes = artifact.size().total();
        let ext = match artifact {
            ModelArtifact::Full(_) => "xain",
            ModelArtifact::Quantized(_) => "xaic",
        };
        let model_file = match criterion {
            None => format!("{}.{ext}", method.slug()),
            Some(c) => format!("{c}-{}.{ext}", method.slug()),
        };
        Ok(RunOutput {
            row: ReportRow {
                method: method.clone(),
                criterion,
                size_bytes,
                accuracy,
                layer_survivors: survivors,
                tau_values: taus,
                model_file,
                wall_clock_secs: start.elapsed().as_secs_f64(),
            },
            artifact,
        })
    }
}

fn hidden_widths(net: &DenseNet) -> Vec<usize> {
    net.layers()[..net.hidden_count()].iter().map(|l| l.fan_out()).collect()
}

/// Runs one method end to end with `cfg.criterion`.
pub fn run_pipeline(cfg: &PipelineConfig, method: &Method) -> Result<RunOutput> {
    let exp = Experiment::new(cfg, prepare(cfg)?)?;
    exp.run(cfg.criterion, method)
}

/// Methods of the full reproduction suite.
pub fn suite_methods(cfg: &PipelineConfig) -> Vec<Method> {
    let last = cfg.hidden.len().saturating_sub(1);
    let mut low_last = cfg.bit_pairs.clone();
    if let Some(p) = low_last.get_mut(last) {
        *p = BitPair { low: 4, high: 8 };
    }
    let mut methods = vec![
        Method::Prune,
        Method::PruneSpq { bits: cfg.spq_bits },
    ];
    if cfg.spq_bits != 8 {
        methods.push(Method::PruneSpq { bits: 8 });
    }
    methods.push(Method::PruneMpq {
        bit_pairs: cfg.bit_pairs.clone(),
    });
    if low_last != cfg.bit_pairs {
        methods.push(Method::PruneMpq { bit_pairs: low_last });
    }
    methods
}

/// Runs every `(criterion, method)` pair on the same trained network and
/// scoring set, plus one row for the uncompressed model.
pub fn run_comparison(exp: &Experiment, criteria: &[Criterion], methods: &[Method]) -> Result<Vec<RunOutput>> {
    run_comparison_with(exp, criteria, methods, Exec::default())
}

pub fn run_comparison_with(
    exp: &Experiment,
    criteria: &[Criterion],
    methods: &[Method],
    exec: Exec,
) -> Result<Vec<RunOutput>> {
    if criteria.is_empty() {
        return Err(Error::invalid("no criteria to compare"));
    }
    let scores: Vec<ImportanceScores> = exec
        .map(criteria.to_vec(), |c| exp.scores(c))
        .into_iter()
        .collect::<Result<_>>()?;
    let mut jobs: Vec<(Option<usize>, Method)> = vec![(None, Method::Original)];
    for ci in 0..criteria.len() {
        jobs.extend(
            methods
                .iter()
                .filter(|m| **m != Method::Original)
                .map(|m| (Some(ci), m.clone())),
        );
    }
    exec.map(jobs, |(ci, m)| match ci {
        None => exp.run_scored(&scores[0], &m),
        Some(ci) => exp.run_scored(&scores[ci], &m),
    })
    .into_iter()
    .collect()
}

impl ExperimentReport {
    pub fn new(rows: Vec<ReportRow>) -> Self {
        Self {
            format_version: REPORT_VERSION,
            rows,
        }
    }

    pub fn from_runs(runs: &[RunOutput]) -> Self {
        Self::new(runs.iter().map(|r| r.row.clone()).collect())
    }

    fn original_size(&self) -> Option<u64> {
        self.rows
            .iter()
            .find(|r| r.method == Method::Original)
            .map(|r| r.size_bytes)
    }

    /// `method,criterion,size_bytes,accuracy,layer_survivors,tau_values`;
    /// list-valued fields are `;`-separated.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,criterion,size_bytes,accuracy,layer_survivors,tau_values\n");
        for r in &self.rows {
            let survivors: Vec<String> = r.layer_survivors.iter().map(usize::to_string).collect();
            let taus: Vec<String> = r.tau_values.iter().map(|t| format!("{t:e}")).collect();
            let _ = writeln!(
                out,
                "\"{}\",{},{},{},{},{}",
                r.method.label(),
                r.criterion.map_or("none", Criterion::as_str),
                r.size_bytes,
                r.accuracy,
                survivors.join(";"),
                taus.join(";"),
            );
        }
        out
    }

    /// Size/accuracy table per criterion, followed by a cross-criterion
    /// accuracy table when more than one criterion is present.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Compression report\n\n");
        let original = self.original_size();
        let pruned_size = |c: Option<Criterion>| {
            self.rows
                .iter()
                .find(|r| r.method == Method::Prune && r.criterion == c)
                .map(|r| r.size_bytes)
        };
        let mut criteria: Vec<Criterion> = Vec::new();
        for r in &self.rows {
            if let Some(c) = r.criterion {
                if !criteria.contains(&c) {
                    criteria.push(c);
                }
            }
        }
        let orig_row = self.rows.iter().find(|r| r.method == Method::Original);
        for &c in &criteria {
            let _ = writeln!(out, "## Model size and accuracy ({c} scores)\n");
            out.push_str("| Method | Pruning | Quantization | Model Size (MB) | Size vs original | Size vs pruned | Accuracy | Survivors | τ |\n");
            out.push_str("|---|---|---|---|---|---|---|---|---|\n");
            let rows = orig_row.into_iter().chain(self.rows.iter().filter(|r| r.criterion == Some(c)));
            for r in rows {
                let ratio = |base: Option<u64>| {
                    base.map_or("-".into(), |b| format!("{:.1}%", 100.0 * r.size_bytes as f64 / b as f64))
                };
                let survivors: Vec<String> = r.layer_survivors.iter().map(usize::to_string).collect();
                let taus: Vec<String> = r.tau_values.iter().map(|t| format!("{t:.3e}")).collect();
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {:.3} | {} | {} | {:.1}% | {} | {} |",
                    r.method.label(),
                    if r.method == Method::Original { "-" } else { "✓" },
                    r.method.quantization(),
                    r.size_bytes as f64 / 1e6,
                    ratio(original),
                    if r.method == Method::Original { "-".into() } else { ratio(pruned_size(Some(c))) },
                    100.0 * r.accuracy,
                    survivors.join("/"),
                    if taus.is_empty() { "-".into() } else { taus.join(", ") },
                );
            }
            out.push('\n');
        }
        if criteria.len() > 1 {
            self.comparison_markdown(&criteria, &mut out);
        }
        out
    }

    fn comparison_markdown(&self, criteria: &[Criterion], out: &mut String) {
        out.push_str("## Accuracy by importance criterion (matched model size)\n\n");
        let reference = criteria[0];
        let others = &criteria[1..];
        out.push_str("| Method | Model Size (MB) |");
        for c in criteria {
            let _ = write!(out, " {c} |");
        }
        for c in others {
            let _ = write!(out, " error reduction {reference} vs {c} |");
        }
        out.push('\n');
        out.push_str(&"|---".repeat(2 + criteria.len() + others.len()));
        out.push_str("|\n");
        let mut methods: Vec<&Method> = Vec::new();
        for r in self.rows.iter().filter(|r| r.criterion.is_some()) {
            if !methods.contains(&&r.method) {
                methods.push(&r.method);
            }
        }
        for m in methods {
            let find = |c: Criterion| self.rows.iter().find(|r| &r.method == m && r.criterion == Some(c));
            let size = find(reference).map_or("-".into(), |r| format!("{:.3}", r.size_bytes as f64 / 1e6));
            let _ = write!(out, "| {} | {size} |", m.label());
            for &c in criteria {
                let cell = find(c).map_or("-".into(), |r| format!("{:.1}%", 100.0 * r.accuracy));
                let _ = write!(out, " {cell} |");
            }
            for &c in others {
                let cell = match (find(reference), find(c)) {
                    (Some(a), Some(b)) => error_reduction(a.accuracy, b.accuracy)
                        .map_or("-".into(), |v| format!("{:.1}%", 100.0 * v)),
                    _ => "-".into(),
                };
                let _ = write!(out, " {cell} |");
            }
            out.push('\n');
        }
        out.push_str(
            "\nError reduction = (err_other − err_ref) / err_other with err = 1 − accuracy; \
             positive when the reference criterion is more accurate.\n",
        );
    }

    /// Writes `report.csv` and/or `report.md` into `dir`.
    pub fn emit(&self, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
        if self.rows.is_empty() {
            return Err(Error::invalid("report has no rows"));
        }
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        formats
            .iter()
            .map(|f| {
                let (name, body) = match f {
                    ReportFormat::Csv => ("report.csv", self.to_csv()),
                    ReportFormat::Markdown => ("report.md", self.to_markdown()),
                };
                let path = dir.join(name);
                std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
                Ok(path)
            })
            .collect()
    }
}

/// `(err_other − err_ref) / err_other`, the relative reduction of the error
/// rate achieved by the reference. `None` when the other error is zero.
pub fn error_reduction(reference_accuracy: f64, other_accuracy: f64) -> Option<f64> {
    let other_err = 1.0 - other_accuracy;
    (other_err > 0.0).then(|| (other_err - (1.0 - reference_accuracy)) / other_err)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

/// Writes every model of `runs` into `dir` under its row's file name.
pub fn write_models(runs: &[RunOutput], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for run in runs {
        let path = dir.join(&run.row.model_file);
        std::fs::write(&path, run.artifact.to_bytes()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Full reproduction: trains once, runs every criterion and method, writes
/// models and both report formats into `cfg.output_dir`.
pub fn repro(cfg: &PipelineConfig) -> Result<(ExperimentReport, Vec<RunOutput>)> {
    let exp = Experiment::new(cfg, prepare(cfg)?)?;
    let runs = run_comparison(&exp, &Criterion::ALL, &suite_methods(cfg))?;
    let report = ExperimentReport::from_runs(&runs);
    write_models(&runs, &cfg.output_dir)?;
    report.emit(&cfg.output_dir, &[ReportFormat::Csv, ReportFormat::Markdown])?;
    Ok((report, runs))
}

/// Checks that a stored model reproduces the size its report row claims.
pub fn verify_row(row: &ReportRow, dir: &Path) -> Result<bool> {
    let path = dir.join(&row.model_file);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let artifact = ModelArtifact::from_bytes(&bytes)?;
    Ok(artifact.size().total() == row.size_bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> PipelineConfig {
        PipelineConfig {
            data: DataConfig {
                samples: 400,
                ..DataConfig::default()
            },
            hidden: vec![24, 24, 24],
            train: TrainConfig {
                epochs: 5,
                ..TrainConfig::default()
            },
            scoring_samples: 40,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml_string();
        assert_eq!(PipelineConfig::from_toml_str(&text).unwrap(), cfg);
        assert_eq!(cfg.dims(), vec![2, 1000, 1000, 1000, 4]);
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let cfg = PipelineConfig::from_toml_str("scoring_samples = 12\n[train]\nepochs = 3\n").unwrap();
        assert_eq!(cfg.scoring_samples, 12);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
        assert!(PipelineConfig::from_toml_str("bogus = 1").is_err());
        assert!(PipelineConfig::from_toml_str("bit_pairs = [{low = 8, high = 16}]").is_err());
    }

    #[test]
    fn method_names() {
        let cfg = PipelineConfig::default();
        assert_eq!(Method::from_name("prune_spq", &cfg).unwrap(), Method::PruneSpq { bits: 16 });
        assert_eq!(
            Method::from_name("prune_mpq", &cfg).unwrap().label(),
            "Pruning + MP Q(L0 8,16; L1 8,16; L2 8,16)"
        );
        assert!(Method::from_name("nope", &cfg).is_err());
    }

    #[test]
    fn error_reduction_formula() {
        assert!((error_reduction(0.9, 0.8).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(error_reduction(0.9, 1.0), None);
    }

    #[test]
    fn comparison_rows_match_single_runs() {
        let cfg = small_cfg();
        let exp = Experiment::new(&cfg, prepare(&cfg).unwrap()).unwrap();
        let methods = suite_methods(&cfg);
        let runs = run_comparison(&exp, &[Criterion::Lrp, Criterion::Magnitude], &methods).unwrap();
        assert_eq!(runs.len(), 1 + 2 * methods.len());
        let single = exp.run(Criterion::Lrp, &Method::Prune).unwrap();
        let same = runs
            .iter()
            .find(|r| r.row.method == Method::Prune && r.row.criterion == Some(Criterion::Lrp))
            .unwrap();
        assert_eq!(single.row.size_bytes, same.row.size_bytes);
        assert_eq!(single.row.accuracy, same.row.accuracy);
        // Matched sizes across criteria.
        for m in &methods {
            let sizes: Vec<u64> = runs.iter().filter(|r| &r.row.method == m).map(|r| r.row.size_bytes).collect();
            assert_eq!(sizes.len(), 2);
            assert_eq!(sizes[0], sizes[1], "{m:?}");
        }
        let report = ExperimentReport::from_runs(&runs);
        assert_eq!(report.to_csv().lines().count(), runs.len() + 1);
        assert!(report.to_markdown().contains("error reduction lrp vs magnitude"));
    }
}
