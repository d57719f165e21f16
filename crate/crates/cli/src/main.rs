use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};

mod commands;
mod config;
mod svg;

use config::Settings;

/// Quantile-LSTM anomaly detection for univariate time series.
#[derive(Debug, Parser)]
#[command(name = "qlstm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic series, optionally with injected spikes.
    Synth(SynthArgs),
    /// Train the forecasters of one detector on a series.
    Train(TrainArgs),
    /// Run trained forecasters over a series and write verdicts.
    Detect(DetectArgs),
    /// Train, detect and score against labels; or score a verdict file.
    Eval(EvalArgs),
    /// Empirical probability of labeled anomalies beyond quantile thresholds.
    Probe(ProbeArgs),
    /// Precision and recall of quantile-LSTM over a grid of percentile pairs.
    Sweep(SweepArgs),
    /// Elliot vs parameterised Elliot cell activation, same seed.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// `key = value` settings file, or any artifact written by this tool.
    /// Flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory receiving the output artifacts.
    #[arg(long, default_value = "qlstm-out")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Input CSV. Relative paths not found locally are looked up in
    /// $QLSTM_DATA_DIR. Several files may be comma-separated where supported.
    #[arg(long, value_delimiter = ',')]
    data: Vec<String>,
    #[arg(long)]
    timestamp_col: Option<String>,
    #[arg(long)]
    value_col: Option<String>,
    /// Label column; `none` ignores labels.
    #[arg(long)]
    label_col: Option<String>,
}

#[derive(Debug, Args)]
struct DetectorArgs {
    /// quantile, iqr or median.
    #[arg(long)]
    detector: Option<String>,
    #[arg(long)]
    q_low: Option<f64>,
    #[arg(long)]
    q_high: Option<f64>,
    /// Fence width in IQR units.
    #[arg(long)]
    iqr_k: Option<f64>,
    /// Median detector threshold width in standard deviations.
    #[arg(long)]
    median_w: Option<f64>,
    /// Period length t.
    #[arg(long)]
    period: Option<usize>,
    /// Sub-windows per period; must divide the period length.
    #[arg(long)]
    windows: Option<usize>,
    #[arg(long)]
    train_fraction: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainingArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    /// sigmoid, tanh, elliot or param_elliot.
    #[arg(long)]
    activation: Option<String>,
    /// Initial slope of the parameterised Elliot activation.
    #[arg(long)]
    alpha: Option<f64>,
    /// Learn a separate slope for the candidate activation.
    #[arg(long)]
    candidate_alpha: bool,
    /// Global gradient-norm clip, or `none`.
    #[arg(long)]
    clip_norm: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output CSV file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// sine, trend+noise or bimodal.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of spikes to inject after the first 40% of the series.
    #[arg(long)]
    inject: Option<usize>,
    /// Spike height in standard deviations.
    #[arg(long)]
    magnitude: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    detector: DetectorArgs,
    #[command(flatten)]
    training: TrainingArgs,
    /// Write per-epoch trace CSVs.
    #[arg(long)]
    trace: bool,
    /// Also write SVG plots of the traces.
    #[arg(long)]
    svg: bool,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    /// Directory holding the model files written by `train`.
    #[arg(long)]
    models: Option<String>,
    /// Also write an SVG plot of observations, bands and flags.
    #[arg(long)]
    svg: bool,
}

#[derive(Debug, Args)]
struct Parallel {
    /// Worker threads across datasets and sweep cells.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    detector: DetectorArgs,
    #[command(flatten)]
    training: TrainingArgs,
    #[command(flatten)]
    parallel: Parallel,
    /// Score this verdict CSV against the labels instead of training.
    #[arg(long)]
    verdicts: Option<String>,
    /// Count a flag within this many points of a labeled anomaly as a hit (0 = exact).
    #[arg(long)]
    match_window: Option<usize>,
}

#[derive(Debug, Args)]
struct ProbeArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    parallel: Parallel,
    #[arg(long)]
    tau_high: Option<f64>,
    #[arg(long)]
    tau_low: Option<f64>,
    /// Published dataset name to compare against; defaults to the file name.
    #[arg(long)]
    reference: Option<String>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    detector: DetectorArgs,
    #[command(flatten)]
    training: TrainingArgs,
    #[command(flatten)]
    parallel: Parallel,
    /// Percentile pairs, e.g. "(99.25,0.75);(99.75,0.25)".
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    match_window: Option<usize>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    detector: DetectorArgs,
    #[command(flatten)]
    training: TrainingArgs,
    #[command(flatten)]
    parallel: Parallel,
}

#[derive(Debug)]
pub enum CliError {
    /// Missing or malformed invocation; usage is printed.
    Usage(String),
    Config(String),
    /// Training diverged or produced non-finite values.
    Numeric(String),
    /// Model file missing, unreadable, corrupt or of another version.
    ModelIo(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) | Self::Config(_) => 2,
            Self::Numeric(_) => 3,
            Self::ModelIo(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Self::Usage(m) | Self::Config(m) | Self::Numeric(m) | Self::ModelIo(m) => m,
        }
    }
}

impl From<quantile_lstm::Error> for CliError {
    fn from(e: quantile_lstm::Error) -> Self {
        use quantile_lstm::Error as E;
        match e {
            E::Diverged { .. } => Self::Numeric(e.to_string()),
            E::VersionMismatch { .. } | E::ModelParse { .. } => Self::ModelIo(e.to_string()),
            other => Self::Config(other.to_string()),
        }
    }
}

impl DataArgs {
    fn apply(&self, s: &mut Settings) -> Result<(), CliError> {
        s.flag("data", (!self.data.is_empty()).then(|| self.data.join(",")))?;
        s.flag("timestamp-col", self.timestamp_col.as_ref())?;
        s.flag("value-col", self.value_col.as_ref())?;
        s.flag("label-col", self.label_col.as_ref())
    }
}

impl DetectorArgs {
    fn apply(&self, s: &mut Settings) -> Result<(), CliError> {
        s.flag("detector", self.detector.as_ref())?;
        s.flag("q-low", self.q_low)?;
        s.flag("q-high", self.q_high)?;
        s.flag("iqr-k", self.iqr_k)?;
        s.flag("median-w", self.median_w)?;
        s.flag("period", self.period)?;
        s.flag("windows", self.windows)?;
        s.flag("train-fraction", self.train_fraction)
    }
}

impl TrainingArgs {
    fn apply(&self, s: &mut Settings) -> Result<(), CliError> {
        s.flag("epochs", self.epochs)?;
        s.flag("lr", self.lr)?;
        s.flag("hidden", self.hidden)?;
        s.flag("layers", self.layers)?;
        s.flag("activation", self.activation.as_ref())?;
        s.flag("alpha", self.alpha)?;
        s.flag("candidate-alpha", self.candidate_alpha.then_some(true))?;
        s.flag("clip-norm", self.clip_norm.as_ref())?;
        s.flag("seed", self.seed)
    }
}

fn with_file(mut s: Settings, config: &Option<PathBuf>) -> Result<Settings, CliError> {
    if let Some(path) = config {
        s.merge_file(path)?;
    }
    Ok(s)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => {
            let mut s = with_file(commands::synth_settings(), &a.config)?;
            s.flag("kind", a.kind.as_ref())?;
            s.flag("length", a.length)?;
            s.flag("seed", a.seed)?;
            s.flag("inject", a.inject)?;
            s.flag("magnitude", a.magnitude)?;
            commands::synth(&s, &a.out)
        }
        Command::Train(a) => {
            let mut s = with_file(commands::train_settings(), &a.common.config)?;
            a.data.apply(&mut s)?;
            a.detector.apply(&mut s)?;
            a.training.apply(&mut s)?;
            s.flag("trace", a.trace.then_some(true))?;
            s.flag("svg", a.svg.then_some(true))?;
            commands::train(&s, &a.common.out_dir)
        }
        Command::Detect(a) => {
            let mut s = with_file(commands::detect_settings(), &a.common.config)?;
            a.data.apply(&mut s)?;
            s.flag("models", a.models.as_ref())?;
            s.flag("svg", a.svg.then_some(true))?;
            commands::detect(&s, &a.common.out_dir)
        }
        Command::Eval(a) => {
            let mut s = with_file(commands::eval_settings(), &a.common.config)?;
            a.data.apply(&mut s)?;
            a.detector.apply(&mut s)?;
            a.training.apply(&mut s)?;
            s.flag("verdicts", a.verdicts.as_ref())?;
            s.flag("match-window", a.match_window)?;
            commands::eval(&s, &a.common.out_dir, a.parallel.jobs)
        }
        Command::Probe(a) => {
            let mut s = with_file(commands::probe_settings(), &a.common.config)?;
            a.data.apply(&mut s)?;
            s.flag("tau-high", a.tau_high)?;
            s.flag("tau-low", a.tau_low)?;
            s.flag("reference", a.reference.as_ref())?;
            commands::probe(&s, &a.common.out_dir, a.parallel.jobs)
        }
        Command::Sweep(a) => {
            let mut s = with_file(commands::sweep_settings(), &a.common.config)?;
            a.data.apply(&mut s)?;
            a.detector.apply(&mut s)?;
            a.training.apply(&mut s)?;
            s.flag("grid", a.grid.as_ref())?;
            s.flag("match-window", a.match_window)?;
            commands::sweep(&s, &a.common.out_dir, a.parallel.jobs)
        }
        Command::Ablate(a) => {
            let mut s = with_file(commands::ablate_settings(), &a.common.config)?;
            a.data.apply(&mut s)?;
            a.detector.apply(&mut s)?;
            a.training.apply(&mut s)?;
            commands::ablate(&s, &a.common.out_dir, a.parallel.jobs)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = match &cli.command {
        Command::Synth(_) => "synth",
        Command::Train(_) => "train",
        Command::Detect(_) => "detect",
        Command::Eval(_) => "eval",
        Command::Probe(_) => "probe",
        Command::Sweep(_) => "sweep",
        Command::Ablate(_) => "ablate",
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            if e.exit_code() == 2 {
                let mut cmd = Cli::command();
                cmd.build();
                if let Some(sub) = cmd.find_subcommand_mut(name) {
                    eprintln!("\n{}", sub.render_usage());
                }
                eprintln!("For more information, try 'qlstm {name} --help'.");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
