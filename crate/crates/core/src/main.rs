use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pd_lstm::eval::{self, Grid};
use pd_lstm::features::{features_from_csv, features_to_csv, FeatureTable, LabeledSequence};
use pd_lstm::kv::KvDoc;
use pd_lstm::models::persist::TrainedModel;
use pd_lstm::models::ModelKind;
use pd_lstm::pipeline::{self, LabeledResiduals, PipelineConfig};
use pd_lstm::signal_io::{self, Dataset, Format, Label};
use pd_lstm::synth::{generate_dataset, SynthSpec};

const SYNTH_PREFIX: &str = "synth.";
const CONFIG_PREFIX: &str = "config.";

#[derive(Parser)]
#[command(name = "pdlstm", version, about = "Partial-discharge detection on one-cycle waveforms")]
struct Cli {
    /// Worker threads for per-signal stages and training (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic dataset.
    Synth(SynthArgs),
    /// Signals to multi-window STL residuals.
    Decompose(StageArgs),
    /// Signals or residuals to a per-step feature CSV.
    Featurize(StageArgs),
    /// Train a classifier from signals, residuals or features.
    Train(StageArgs),
    /// Per-signal probability and label.
    Predict(PredictArgs),
    /// Confusion matrix and metrics as a JSON report.
    Evaluate(EvaluateArgs),
    /// Run a figure grid and write its summary CSV and reports.
    Experiment(ExperimentArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Decompose(_) => "decompose",
            Command::Featurize(_) => "featurize",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Evaluate(_) => "evaluate",
            Command::Experiment(_) => "experiment",
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    pd: usize,
    #[arg(long, default_value_t = 50)]
    non_pd: usize,
    #[arg(long, default_value_t = 8000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Spec overrides: `synth.*` keys of this file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output encoding (default: csv for a .csv path, binary otherwise).
    #[arg(long)]
    format: Option<Format>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    /// Key/value config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Four seasonal windows at the 800,000-sample reference length.
    #[arg(long, value_delimiter = ',', num_args = 4)]
    windows: Option<Vec<usize>>,
    /// Use the windows as given instead of scaling them to the signal length.
    #[arg(long)]
    no_scale_windows: bool,
    /// Time steps K (1, 2, 4 or 8).
    #[arg(long)]
    steps: Option<usize>,
    /// Fraction of largest-magnitude samples removed as transients.
    #[arg(long)]
    trim: Option<f64>,
    #[arg(long)]
    no_elbow: bool,
    #[arg(long)]
    no_oversample: bool,
    #[arg(long)]
    oversample_before_split: bool,
    /// lstm, rnn, fnn or mlr.
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Per-class test fraction.
    #[arg(long)]
    split: Option<f64>,
}

impl PipelineArgs {
    /// Config file values, then flags, on top of `cfg`.
    fn apply(&self, cfg: &mut PipelineConfig) -> Result<()> {
        if let Some(path) = &self.config {
            let doc = read_kv(path)?;
            cfg.apply_kv(&doc.without_prefix(SYNTH_PREFIX), true)
                .with_context(|| format!("{}", path.display()))?;
        }
        if let Some(w) = &self.windows {
            cfg.windows = w.clone();
        }
        if self.no_scale_windows {
            cfg.auto_scale_windows = false;
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.trim {
            cfg.denoise.trim_fraction = v;
        }
        if self.no_elbow {
            cfg.denoise.elbow_enabled = false;
        }
        if self.no_oversample {
            cfg.oversample = false;
        }
        if self.oversample_before_split {
            cfg.oversample_before_split = true;
        }
        if let Some(v) = self.model {
            cfg.model = v;
        }
        if let Some(v) = self.hidden {
            cfg.hidden = v;
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.train.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.split {
            cfg.split_fraction = v;
        }
        cfg.validate()?;
        Ok(())
    }
}

#[derive(Args)]
struct StageArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(short, long)]
    model: PathBuf,
    #[arg(short, long)]
    input: PathBuf,
    /// Prediction CSV (default: standard output).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(short, long)]
    model: PathBuf,
    #[arg(short, long)]
    input: PathBuf,
    /// JSON report (default: standard output).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// `test` re-derives the held-out split of the training run; `all`
    /// scores every labeled record.
    #[arg(long, default_value = "test", value_parser = ["test", "all"])]
    subset: String,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    grid: Grid,
    #[arg(short, long)]
    input: PathBuf,
    /// Directory for the figure CSV and the reports.
    #[arg(short, long, default_value = ".")]
    output: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

/// Any artifact a stage can consume.
enum Input {
    Signals(Dataset),
    Residuals(Vec<LabeledResiduals>),
    Features {
        table: FeatureTable,
        sample_count: usize,
        echo: KvDoc,
    },
}

impl Input {
    fn kind(&self) -> &'static str {
        match self {
            Input::Signals(_) => "signals",
            Input::Residuals(_) => "residuals",
            Input::Features { .. } => "features",
        }
    }
}

fn read_kv(path: &Path) -> Result<KvDoc> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    KvDoc::parse(&text).with_context(|| format!("{}", path.display()))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_input(path: &Path) -> Result<Input> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if signal_io::is_binary_dataset(&bytes) {
        return Ok(Input::Signals(signal_io::decode_binary(&bytes)?));
    }
    if pipeline::is_residual_file(&bytes) {
        return Ok(Input::Residuals(pipeline::decode_residuals(&bytes)?));
    }
    let text = String::from_utf8(bytes).with_context(|| format!("{}: not a PDS1, PDR1 or text file", path.display()))?;
    let first = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .unwrap_or("");
    if !first.starts_with("id,label,step") {
        return Ok(Input::Signals(signal_io::decode_csv(&text)?));
    }
    let table = features_from_csv(&text)?;
    let echo_text: String = table
        .comments
        .iter()
        .filter(|c| c.contains(" = "))
        .map(|c| format!("{c}\n"))
        .collect();
    let doc = KvDoc::parse(&echo_text).context("feature CSV header")?;
    let sample_count = doc.get("sample_count").context("feature CSV header")?;
    Ok(Input::Features {
        table,
        sample_count,
        echo: doc.section(CONFIG_PREFIX),
    })
}

/// Config for a stage: defaults, then settings carried by the input, then
/// the config file and flags.
fn stage_config(args: &PipelineArgs, input: &Input) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    if let Input::Features { echo, .. } = input {
        cfg.apply_kv(echo, true).context("feature CSV header")?;
    }
    args.apply(&mut cfg)?;
    Ok(cfg)
}

fn check_windows(expected: &[usize], found: &[usize]) -> Result<()> {
    if expected != found {
        bail!("input was decomposed with windows {found:?}, the config asks for {expected:?}");
    }
    Ok(())
}

/// Features in `echo` must have been built the way `cfg` would build them.
fn check_featurization(cfg: &PipelineConfig, echo: &KvDoc) -> Result<()> {
    let mut made = PipelineConfig::default();
    made.apply_kv(echo, true)?;
    if made.denoise != cfg.denoise {
        bail!(
            "features were denoised with {:?}, the config asks for {:?}",
            made.denoise,
            cfg.denoise
        );
    }
    Ok(())
}

fn residual_geometry(res: &[LabeledResiduals]) -> Result<(usize, Vec<usize>)> {
    let first = res.first().context("residual file has no records")?;
    Ok((first.set.sample_count(), first.set.windows.clone()))
}

/// Unscaled sequences, sample count and effective windows for `cfg`.
fn sequences(input: &Input, cfg: &PipelineConfig) -> Result<(Vec<LabeledSequence>, usize, Vec<usize>)> {
    match input {
        Input::Signals(ds) => {
            let (windows, seqs) = pipeline::featurize_dataset(ds, cfg)?;
            Ok((seqs, ds.sample_count(), windows))
        }
        Input::Residuals(res) => {
            let (n, windows) = residual_geometry(res)?;
            check_windows(&cfg.effective_windows(n), &windows)?;
            let seqs = pipeline::featurize(res, cfg.effective_steps(), &cfg.denoise)?;
            Ok((seqs, n, windows))
        }
        Input::Features {
            table,
            sample_count,
            echo,
        } => {
            check_windows(&cfg.effective_windows(*sample_count), &table.windows)?;
            check_featurization(cfg, echo)?;
            Ok((table.records.clone(), *sample_count, table.windows.clone()))
        }
    }
}

/// Unscaled sequences as `trained` expects them.
fn sequences_for_model(input: &Input, trained: &TrainedModel) -> Result<Vec<LabeledSequence>> {
    let sample_count = match input {
        Input::Signals(ds) => return Ok(pipeline::featurize_for_model(trained, ds)?),
        Input::Residuals(res) => residual_geometry(res)?.0,
        Input::Features { sample_count, .. } => *sample_count,
    };
    if sample_count != trained.sample_count {
        bail!(
            "model was trained on {}-sample signals, input has {sample_count}",
            trained.sample_count
        );
    }
    let (seqs, _, _) = sequences(input, &trained.config)?;
    Ok(seqs)
}

fn label_name(label: Label) -> &'static str {
    match label {
        Label::Pd => "PD",
        Label::NonPd => "NON_PD",
    }
}

fn comment_block(title: &str, cfg: &PipelineConfig) -> String {
    let mut out = format!("# {title}\n");
    for line in cfg.echo_lines() {
        let _ = writeln!(out, "# {line}");
    }
    out
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let overrides = match &args.config {
        Some(path) => read_kv(path)?.section(SYNTH_PREFIX),
        None => KvDoc::default(),
    };
    let spec = SynthSpec::desk_from_kv(args.samples, &overrides)?;
    let dataset = generate_dataset(args.pd, args.non_pd, &spec, args.seed)?;
    let format = args.format.unwrap_or_else(|| {
        match args.output.extension().and_then(|e| e.to_str()) {
            Some("csv") => Format::Csv,
            _ => Format::Binary,
        }
    });
    signal_io::save_dataset(&dataset, &args.output, format)?;
    eprintln!(
        "wrote {} signals ({} PD, {} NON_PD) of {} samples to {}",
        dataset.len(),
        args.pd,
        args.non_pd,
        args.samples,
        args.output.display()
    );
    Ok(())
}

fn cmd_decompose(args: &StageArgs) -> Result<()> {
    let input = load_input(&args.input)?;
    let Input::Signals(ds) = &input else {
        bail!("decompose needs signals, got {}", input.kind());
    };
    let cfg = stage_config(&args.pipeline, &input)?;
    let windows = cfg.effective_windows(ds.sample_count());
    let residuals = pipeline::decompose_dataset(ds, &windows)?;
    write_file(&args.output, pipeline::encode_residuals(&residuals)?)?;
    eprintln!("decomposed {} signals with windows {windows:?}", residuals.len());
    Ok(())
}

fn cmd_featurize(args: &StageArgs) -> Result<()> {
    let input = load_input(&args.input)?;
    if let Input::Features { .. } = input {
        bail!("input is already a feature CSV");
    }
    let cfg = stage_config(&args.pipeline, &input)?;
    let (seqs, n, windows) = sequences(&input, &cfg)?;
    let mut comments = vec!["pd-lstm features".to_string(), format!("sample_count = {n}")];
    comments.extend(cfg.echo_lines().into_iter().map(|l| format!("{CONFIG_PREFIX}{l}")));
    write_file(&args.output, features_to_csv(&windows, &seqs, &comments))?;
    eprintln!("featurized {} records into {} steps", seqs.len(), cfg.effective_steps());
    Ok(())
}

fn cmd_train(args: &StageArgs) -> Result<()> {
    let input = load_input(&args.input)?;
    let cfg = stage_config(&args.pipeline, &input)?;
    let (seqs, n, windows) = sequences(&input, &cfg)?;
    let fitted = pipeline::fit(&seqs, &cfg, n, &windows)?;
    fitted.trained.save(&args.output)?;
    let last = fitted.history.last().map_or(f64::NAN, |e| e.train_loss);
    eprintln!(
        "trained {} on {} records ({} epochs, final loss {last:.4}, kept epoch {})",
        cfg.model,
        fitted.train_records,
        fitted.history.len(),
        fitted.selected_epoch
    );
    let preds = pipeline::predict_sequences(&fitted.trained, &fitted.test)?;
    let report = eval::report(&cfg, Vec::new(), "test", preds)?;
    eprintln!(
        "held-out: {} records, macro F1 {:.4}",
        report.confusion.total(),
        report.metrics.macro_f1
    );
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let trained = TrainedModel::load(&args.model)?;
    let input = load_input(&args.input)?;
    let seqs = sequences_for_model(&input, &trained)?;
    let preds = pipeline::predict_sequences(&trained, &seqs)?;
    let mut out = comment_block("pd-lstm predictions", &trained.config);
    out.push_str("id,probability,label\n");
    for p in &preds {
        let _ = writeln!(out, "{},{:.6},{}", p.id, p.probability, label_name(p.predicted));
    }
    write_or_print(args.output.as_deref(), &out)
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let trained = TrainedModel::load(&args.model)?;
    let input = load_input(&args.input)?;
    let seqs = sequences_for_model(&input, &trained)?;
    let scored = if args.subset == "test" {
        pipeline::split_records(&seqs, &trained.config)?.1
    } else {
        seqs
    };
    let preds = pipeline::predict_sequences(&trained, &scored)?;
    let report = eval::report(&trained.config, Vec::new(), &args.subset, preds)?;
    let m = &report.metrics;
    eprintln!(
        "{} records: PD F1 {:.4}, NON_PD F1 {:.4}, macro F1 {:.4}",
        report.confusion.total(),
        m.pd.f1,
        m.non_pd.f1,
        m.macro_f1
    );
    write_or_print(args.output.as_deref(), &(report.to_json() + "\n"))
}

fn cmd_experiment(args: &ExperimentArgs) -> Result<()> {
    let input = load_input(&args.input)?;
    let Input::Signals(ds) = &input else {
        bail!("experiment needs signals, got {}", input.kind());
    };
    let cfg = stage_config(&args.pipeline, &input)?;
    let reports = eval::run_experiment(args.grid, ds, &cfg)?;
    fs::create_dir_all(&args.output).with_context(|| format!("creating {}", args.output.display()))?;
    let figure = args.output.join(args.grid.figure_file());
    let mut csv = comment_block("pd-lstm experiment (base config)", &cfg);
    csv.push_str(&eval::summary_csv(&reports));
    write_file(&figure, csv)?;
    let json = args.output.join(args.grid.figure_file().replace(".csv", "_reports.json"));
    write_file(&json, serde_json::to_string_pretty(&reports)? + "\n")?;
    for r in &reports {
        let axis: Vec<String> = r.axis.iter().map(|a| format!("{}={}", a.name, a.value)).collect();
        eprintln!("{}: macro F1 {:.4}", axis.join(" "), r.metrics.macro_f1);
    }
    eprintln!("wrote {} and {}", figure.display(), json.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Decompose(a) => cmd_decompose(a),
        Command::Featurize(a) => cmd_featurize(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Experiment(a) => cmd_experiment(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pdlstm {}: error: {e:#}", cli.command.name());
            ExitCode::FAILURE
        }
    }
}
