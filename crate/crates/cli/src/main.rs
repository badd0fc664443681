use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use xaic::format::{serialize_net, ModelArtifact};
use xaic::nn::evaluate;
use xaic::pipeline::{
    prepare, prepare_data, prepare_with_net, repro, run_comparison, score, suite_methods, write_models,
    Experiment, ExperimentReport, Method, PipelineConfig, ReportFormat,
};
use xaic::relevance::Criterion;

#[derive(Parser)]
#[command(name = "xaic", version, about = "Relevance-driven pruning and mixed-precision quantization")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML configuration file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Added to every seed of the configuration.
    #[arg(long, global = true, default_value_t = 0)]
    seed_offset: u64,
    /// Overrides `output_dir` from the configuration.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the generated dataset and its train/test split as CSV.
    GenData,
    /// Train the network and write it as a full-precision model file.
    Train {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score hidden neurons of a trained model and dump them as CSV.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "lrp")]
        criterion: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prune (and optionally quantize) a trained model.
    Compress {
        #[arg(long)]
        model: PathBuf,
        /// original, prune, prune_spq or prune_mpq.
        #[arg(long, default_value = "prune_mpq")]
        method: String,
        /// Score CSV from `score`; computed from the configured criterion if absent.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy and size of a model file.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// CSV dataset (x0,x1,label); defaults to the configured test split.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Compare criteria on one trained network and write the report.
    Report {
        /// Trained model; a fresh one is trained if absent.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "lrp,taylor,magnitude")]
        criteria: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "csv,markdown")]
        format: Vec<String>,
    },
    /// Run the full size/accuracy/criterion suite and write models and reports.
    Repro {
        /// Print the effective configuration as TOML and exit.
        #[arg(long)]
        print_config: bool,
    },
}

fn load_config(g: &Global) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    cfg = cfg.with_seed_offset(g.seed_offset);
    if let Some(dir) = &g.out_dir {
        cfg.output_dir = dir.clone();
    }
    Ok(cfg)
}

fn read_model(path: &Path) -> Result<ModelArtifact> {
    let bytes = std::fs::read(path).map_err(|e| xaic::Error::io(path, e))?;
    ModelArtifact::from_bytes(&bytes).with_context(|| format!("decoding {}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| xaic::Error::io(parent, e))?;
    }
    Ok(std::fs::write(path, bytes).map_err(|e| xaic::Error::io(path, e))?)
}

fn full_net(path: &Path) -> Result<xaic::nn::DenseNet> {
    match read_model(path)? {
        ModelArtifact::Full(net) => Ok(net),
        ModelArtifact::Quantized(_) => Err(xaic::Error::InvalidArgument(format!(
            "{} is quantized; a full-precision model is required",
            path.display()
        ))
        .into()),
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    let out_dir = cfg.output_dir.clone();
    match cli.command {
        Command::GenData => {
            let (train, test, _) = prepare_data(&cfg)?;
            std::fs::create_dir_all(&out_dir).map_err(|e| xaic::Error::io(&out_dir, e))?;
            train.write_csv(&out_dir.join("train.csv"))?;
            test.write_csv(&out_dir.join("test.csv"))?;
            println!("wrote {} training and {} test samples to {}", train.len(), test.len(), out_dir.display());
        }
        Command::Train { out } => {
            let start = Instant::now();
            let prep = prepare(&cfg)?;
            let out = out.unwrap_or_else(|| out_dir.join("model.xain"));
            write_file(&out, &serialize_net(&prep.net))?;
            for (epoch, loss) in prep.loss_history.iter().enumerate() {
                println!("epoch {epoch:>3}  loss {loss:.6}");
            }
            println!("test accuracy {:.4}", evaluate(&prep.net, &prep.test)?);
            eprintln!("trained in {:.1}s -> {}", start.elapsed().as_secs_f64(), out.display());
        }
        Command::Score { model, criterion, out } => {
            let criterion: Criterion = criterion.parse()?;
            let net = full_net(&model)?;
            let prep = prepare_with_net(&cfg, net)?;
            let scores = score(&prep.net, &prep.scoring, criterion, cfg.lrp)?;
            let out = out.unwrap_or_else(|| out_dir.join(format!("scores-{criterion}.csv")));
            write_file(&out, scores.to_csv().as_bytes())?;
            let non_positive: Vec<usize> = scores
                .layers
                .iter()
                .map(|l| l.iter().filter(|&&s| s <= 0.0).count())
                .collect();
            println!("non-positive scores per layer: {non_positive:?} -> {}", out.display());
        }
        Command::Compress { model, method, scores, out } => {
            let method = Method::from_name(&method, &cfg)?;
            let exp = Experiment::new(&cfg, prepare_with_net(&cfg, full_net(&model)?)?)?;
            let scores = match scores {
                Some(path) => xaic::relevance::ImportanceScores::read_csv(&path)?,
                None => exp.scores(cfg.criterion)?,
            };
            let run = exp.run_scored(&scores, &method)?;
            let out = out.unwrap_or_else(|| out_dir.join(&run.row.model_file));
            write_file(&out, &run.artifact.to_bytes())?;
            println!(
                "{}: {} bytes, accuracy {:.4}, survivors {:?} -> {}",
                run.row.method.label(),
                run.row.size_bytes,
                run.row.accuracy,
                run.row.layer_survivors,
                out.display()
            );
        }
        Command::Eval { model, data } => {
            let artifact = read_model(&model)?;
            let net = artifact.network()?;
            let data = match data {
                Some(path) => xaic::data::Dataset::read_csv(&path, Some(net.classes()))?,
                None => prepare_data(&cfg)?.1,
            };
            let size = artifact.size();
            println!("accuracy {:.4} on {} samples", evaluate(&net, &data)?, data.len());
            println!(
                "size {} bytes ({:.3} MB): weights {}, scales {}, biases {}, header {}",
                size.total(),
                size.megabytes(),
                size.weights,
                size.scales,
                size.biases,
                size.header
            );
        }
        Command::Report { model, criteria, format } => {
            let criteria = criteria.iter().map(|c| c.parse()).collect::<xaic::Result<Vec<Criterion>>>()?;
            let formats = format
                .iter()
                .map(|f| match f.as_str() {
                    "csv" => Ok(ReportFormat::Csv),
                    "markdown" | "md" => Ok(ReportFormat::Markdown),
                    other => Err(xaic::Error::InvalidArgument(format!("unknown report format {other:?}"))),
                })
                .collect::<xaic::Result<Vec<_>>>()?;
            let prep = match model {
                Some(path) => prepare_with_net(&cfg, full_net(&path)?)?,
                None => prepare(&cfg)?,
            };
            let exp = Experiment::new(&cfg, prep)?;
            let runs = run_comparison(&exp, &criteria, &suite_methods(&cfg))?;
            write_models(&runs, &out_dir)?;
            let report = ExperimentReport::from_runs(&runs);
            for path in report.emit(&out_dir, &formats)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Repro { print_config } => {
            if print_config {
                print!("{}", cfg.to_toml_string());
                return Ok(());
            }
            let start = Instant::now();
            let (report, _) = repro(&cfg)?;
            print!("{}", report.to_markdown());
            for row in &report.rows {
                eprintln!("{:<45} {:>8.2}s", row.method.label(), row.wall_clock_secs);
            }
            eprintln!("total {:.1}s -> {}", start.elapsed().as_secs_f64(), out_dir.display());
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> (u8, &'static str) {
    match err.chain().find_map(|e| e.downcast_ref::<xaic::Error>()) {
        Some(e) => {
            let code = match e.category() {
                "invalid-argument" => 2,
                "numeric-error" => 3,
                "degenerate-layer" => 4,
                "parse-error" => 5,
                "io-error" => 6,
                "config-error" => 7,
                _ => 1,
            };
            (code, e.category())
        }
        None => (1, "error"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, category) = exit_code(&err);
            eprintln!("xaic: {category}: {err:#}");
            ExitCode::from(code)
        }
    }
}
