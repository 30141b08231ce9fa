use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mlpform_core::gradcheck::{self, GradCheckReport};
use mlpform_core::network::{evaluate, sgd_train};
use mlpform_core::{Dataset, EpochMetrics, Evaluation, LayerKind, LossFunction, Mlp, TrainOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::config::{DataSource, TrainConfig};
use crate::error::{CliError, CliResult};
use crate::idx;

#[derive(Debug, Parser)]
#[command(name = "mlp", version, about = "Train, evaluate and gradient-check matrix-form MLPs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network with mini-batch SGD and write per-epoch metrics.
    Train(Box<TrainArgs>),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Compare every analytic gradient against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Read settings from a key=value file; flags given here override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Layer list, e.g. "ReLU(1024);ReLU(512);Linear(10)".
    #[arg(long)]
    pub layers: Option<String>,
    /// SE, MSE, CE, SCE, LCE or NLL.
    #[arg(long)]
    pub loss: Option<String>,
    /// Xavier, XavierNormalized, He or Uniform(a,b).
    #[arg(long)]
    pub init: Option<String>,
    /// "Momentum(0.9)" or per layer "0:Momentum(0.9);*:GradientDescent".
    #[arg(long)]
    pub optimizers: Option<String>,
    /// Learning-rate schedule, e.g. "Constant(0.01)".
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training data: IDX prefix or "images,labels".
    #[arg(long)]
    pub train: Option<String>,
    /// Test data: IDX prefix or "images,labels".
    #[arg(long)]
    pub test: Option<String>,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Where to save the final network.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Keep the file order of the training set.
    #[arg(long)]
    pub no_shuffle: bool,
    /// Write 0 in the seconds column.
    #[arg(long)]
    pub no_timing: bool,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// IDX prefix or "images,labels".
    #[arg(long)]
    pub data: String,
    #[arg(long, default_value = "SCE")]
    pub loss: String,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
}

fn usage<T, E: std::fmt::Display>(r: Result<T, E>) -> CliResult<T> {
    r.map_err(|e| CliError::Usage(e.to_string()))
}

impl TrainArgs {
    pub fn into_config(self) -> CliResult<TrainConfig> {
        let mut config = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                let mut text: TrainConfig = usage(text.parse::<TrainConfig>())?;
                if let Some(layers) = &self.layers {
                    text.layers = usage(LayerKind::parse_list(layers))?;
                }
                if let Some(train) = &self.train {
                    text.train = usage(train.parse::<DataSource>())?;
                }
                text
            }
            None => {
                let layers =
                    self.layers.as_deref().ok_or_else(|| CliError::Usage("--layers is required".into()))?;
                let train =
                    self.train.as_deref().ok_or_else(|| CliError::Usage("--train is required".into()))?;
                TrainConfig::new(usage(LayerKind::parse_list(layers))?, usage(train.parse())?)
            }
        };
        if let Some(v) = &self.loss {
            config.loss = usage(v.parse())?;
        }
        if let Some(v) = &self.init {
            config.init = usage(v.parse())?;
        }
        if let Some(v) = &self.optimizers {
            config.optimizers = usage(v.parse())?;
        }
        if let Some(v) = &self.lr {
            config.lr = usage(v.parse())?;
        }
        if let Some(v) = self.epochs {
            config.epochs = v;
        }
        if let Some(v) = self.batch_size {
            config.batch_size = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = &self.test {
            config.test = Some(usage(v.parse())?);
        }
        if self.metrics.is_some() {
            config.metrics = self.metrics;
        }
        if self.checkpoint.is_some() {
            config.checkpoint = self.checkpoint;
        }
        config.shuffle &= !self.no_shuffle;
        config.timing &= !self.no_timing;
        config.validate()?;
        Ok(config)
    }
}

/// Output width of the network described by `layers` on `input` features.
pub fn output_width(layers: &[LayerKind], input: usize) -> usize {
    layers.iter().fold(input, |d, k| k.output_width(d))
}

pub fn load_data(source: &DataSource, classes: usize) -> CliResult<Dataset> {
    idx::load_dataset(&source.images(), &source.labels(), classes)
}

/// The freshly initialized network of a run, plus the generator that the
/// rest of the run continues from.
pub fn initial_network(config: &TrainConfig, input: usize) -> CliResult<(Mlp, ChaCha8Rng)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut mlp = Mlp::build(input, &config.layers, config.init, &mut rng)?;
    for i in 0..mlp.len() {
        mlp.set_optimizer(i, config.optimizers.for_layer(i))?;
    }
    Ok((mlp, rng))
}

pub const CSV_HEADER: &str = "epoch,lr,train_loss,train_acc,test_loss,test_acc,seconds";

pub fn csv_row(m: &EpochMetrics, timing: bool) -> String {
    let (test_loss, test_acc) = match m.test {
        Some(t) => (t.loss.to_string(), t.accuracy.to_string()),
        None => (String::new(), String::new()),
    };
    let seconds = if timing { m.seconds } else { 0.0 };
    format!("{},{},{},{},{test_loss},{test_acc},{seconds}", m.epoch, m.lr, m.train.loss, m.train.accuracy)
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

pub struct TrainOutcome {
    pub network: Mlp,
    pub history: Vec<EpochMetrics>,
}

/// Loads the data, trains, writes the CSV (to `config.metrics` or `out`) and
/// saves the checkpoint if one was requested.
pub fn train(config: &TrainConfig, out: &mut dyn Write) -> CliResult<TrainOutcome> {
    config.validate()?;
    let images = config.train.images();
    let (x, labels) = idx::load_idx(&images, &config.train.labels())?;
    let classes = output_width(&config.layers, x.cols());
    let train = Dataset::new(x, labels, classes).map_err(|e| e.context(images.display().to_string()))?;
    let test = config.test.as_ref().map(|t| load_data(t, classes)).transpose()?;
    if let Some(t) = &test {
        if t.features() != train.features() {
            return Err(CliError::Core(mlpform_core::Error::Config(format!(
                "test images have {} features, training images {}",
                t.features(),
                train.features()
            ))));
        }
    }

    let (mut network, mut rng) = initial_network(config, train.features())?;
    let options = TrainOptions {
        epochs: config.epochs,
        batch_size: config.batch_size,
        loss: config.loss,
        scheduler: config.lr.clone(),
        shuffle: config.shuffle,
    };

    let mut file = config.metrics.as_deref().map(create).transpose()?;
    let metrics_path = config.metrics.clone().unwrap_or_else(|| PathBuf::from("<stdout>"));
    let sink: &mut dyn Write = match file.as_mut() {
        Some(f) => f,
        None => out,
    };
    let io = |e: std::io::Error| CliError::io(&metrics_path, e);
    writeln!(sink, "{CSV_HEADER}").map_err(io)?;
    let mut write_error = None;
    let history = sgd_train(&mut network, &train, test.as_ref(), &options, &mut rng, |m| {
        let line = writeln!(sink, "{}", csv_row(m, config.timing)).and_then(|_| sink.flush());
        if let Err(e) = line {
            write_error = Some(e);
            return Err(mlpform_core::Error::State("could not write metrics".into()));
        }
        Ok(())
    });
    if let Some(e) = write_error {
        return Err(io(e));
    }
    let history = history?;
    sink.flush().map_err(io)?;

    if let Some(path) = &config.checkpoint {
        checkpoint::save(&network, path)?;
    }
    Ok(TrainOutcome { network, history })
}

/// Evaluation-mode pass of a saved network over a dataset.
pub fn eval(checkpoint_path: &Path, data: &DataSource, loss: LossFunction) -> CliResult<Evaluation> {
    let mut network = checkpoint::load(checkpoint_path)?;
    let (Some(input), Some(classes)) = (network.input_width(), network.output_width()) else {
        return Err(CliError::Core(mlpform_core::Error::Config("checkpoint holds no layers".into())));
    };
    let (x, labels) = idx::load_idx(&data.images(), &data.labels())?;
    if x.cols() != input {
        return Err(CliError::Core(mlpform_core::Error::Config(format!(
            "network expects {input} features, the data has {}",
            x.cols()
        ))));
    }
    let data = Dataset::new(x, labels, classes)?;
    Ok(evaluate(&mut network, &data, loss)?)
}

/// Runs the full gradient suite, printing one line per check.
pub fn gradcheck(seed: u64, out: &mut dyn Write) -> CliResult<Vec<GradCheckReport>> {
    let reports = gradcheck::full_suite(seed)?;
    let io = |e| CliError::io("<stdout>", e);
    for r in &reports {
        writeln!(out, "{r}").map_err(io)?;
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    writeln!(out, "{} checks, {failed} failed", reports.len()).map_err(io)?;
    Ok(reports)
}

/// Executes a parsed command line and returns the process exit code.
pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult<u8> {
    match cli.command {
        Command::Train(args) => {
            let print = args.print_config;
            let config = (*args).into_config()?;
            if print {
                write!(out, "{config}").map_err(|e| CliError::io("<stdout>", e))?;
                return Ok(0);
            }
            train(&config, out)?;
            Ok(0)
        }
        Command::Eval(args) => {
            let data = usage(args.data.parse::<DataSource>())?;
            let loss = usage(args.loss.parse::<LossFunction>())?;
            let e = eval(&args.checkpoint, &data, loss)?;
            writeln!(out, "loss,accuracy\n{},{}", e.loss, e.accuracy)
                .map_err(|e| CliError::io("<stdout>", e))?;
            Ok(0)
        }
        Command::Gradcheck(args) => {
            let reports = gradcheck(args.seed, out)?;
            Ok(if reports.iter().all(|r| r.passed) { 0 } else { 1 })
        }
    }
}
