use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use reglab::domain::{RefinementDirection, Task, WeightScheme};
use reglab::metrics::ApMode;
use reglab::optim::Decay;
use reglab::trainer::LossChoice;

mod commands;
mod output;
mod settings;

use settings::Overrides;

/// Focal-loss laboratory: synthetic data, losses, gradient checks,
/// optimizers, training and detection metrics.
#[derive(Parser)]
#[command(
    name = "reglab",
    version,
    arg_required_else_help = true,
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Output path; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// JSON settings file; flags override its values.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
struct LossFlags {
    /// Focusing exponent.
    #[arg(long)]
    gamma: Option<f64>,
    /// Refinement sharpness.
    #[arg(long)]
    beta: Option<f64>,
    /// Refinement distance threshold.
    #[arg(long)]
    delta: Option<f64>,
    /// Weight of the segmentation term in the joint loss.
    #[arg(long = "lambda")]
    lambda_task: Option<f64>,
    /// Prediction variance for the uncertainty-aware loss.
    #[arg(long)]
    sigma_sq: Option<f64>,
    /// Whether nearer or farther samples get the larger refinement weight.
    #[arg(long, value_enum)]
    direction: Option<Direction>,
    /// Sum the focal term over all classes, not only the target.
    #[arg(long)]
    all_class_sum: bool,
}

impl LossFlags {
    fn apply(&self, o: &mut Overrides) {
        o.set("loss.gamma", self.gamma)
            .set("loss.beta", self.beta)
            .set("loss.delta", self.delta)
            .set("loss.lambda_task", self.lambda_task)
            .set("loss.sigma_sq", self.sigma_sq)
            .set(
                "loss.refinement_direction",
                self.direction.map(RefinementDirection::from),
            )
            .switch("loss.all_class_sum", self.all_class_sum);
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Direction {
    Closer,
    Farther,
}

impl From<Direction> for RefinementDirection {
    fn from(d: Direction) -> Self {
        match d {
            Direction::Closer => RefinementDirection::CloserIsHeavier,
            Direction::Farther => RefinementDirection::FartherIsHeavier,
        }
    }
}

/// Count-derived weight schemes.
#[derive(Clone, Copy, ValueEnum)]
enum Scheme {
    Uniform,
    InverseFrequency,
    InverseFrequencyNormalized,
}

impl From<Scheme> for WeightScheme {
    fn from(s: Scheme) -> Self {
        match s {
            Scheme::Uniform => WeightScheme::Uniform,
            Scheme::InverseFrequency => WeightScheme::InverseFrequency,
            Scheme::InverseFrequencyNormalized => WeightScheme::InverseFrequencyNormalized,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Detection,
    Segmentation,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Detection => Task::Detection,
            TaskArg::Segmentation => Task::Segmentation,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Ce,
    WeightedCe,
    Gfl,
    Reg,
    RegU,
}

impl From<LossArg> for LossChoice {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Ce => LossChoice::Ce,
            LossArg::WeightedCe => LossChoice::WeightedCe,
            LossArg::Gfl => LossChoice::Gfl,
            LossArg::Reg => LossChoice::Reg,
            LossArg::RegU => LossChoice::RegU,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DecayArg {
    Constant,
    InverseT,
}

impl From<DecayArg> for Decay {
    fn from(d: DecayArg) -> Self {
        match d {
            DecayArg::Constant => Decay::Constant,
            DecayArg::InverseT => Decay::InverseT,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ApModeArg {
    RankedPrecision,
    AllPoint,
}

impl From<ApModeArg> for ApMode {
    fn from(m: ApModeArg) -> Self {
        match m {
            ApModeArg::RankedPrecision => ApMode::RankedPrecision,
            ApModeArg::AllPoint => ApMode::AllPoint,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic detection dataset with exact per-class counts.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        /// Count table (flat name-to-count map); the built-in road-asset table when omitted.
        #[arg(long, value_name = "PATH")]
        counts: Option<PathBuf>,
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
        #[arg(long)]
        scenes: Option<usize>,
        #[arg(long)]
        miss_rate: Option<f64>,
        #[arg(long)]
        false_positive_rate: Option<f64>,
        #[arg(long)]
        confusion_rate: Option<f64>,
        #[arg(long)]
        noise_std: Option<f64>,
    },
    /// Class-balancing weights from a count table.
    Weights {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        counts: Option<PathBuf>,
        /// Defaults to inverse-frequency-normalized.
        #[arg(long, value_enum)]
        scheme: Option<Scheme>,
    },
    /// Evaluate a loss and its logit gradient on a batch file.
    LossEval {
        #[command(flatten)]
        common: Common,
        /// Batch JSON: logits or probs, labels, and optional distances, weights, mu, sigma_sq, segmentation.
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
        #[arg(long, value_enum)]
        loss: Option<LossArg>,
        /// Use the variance-aware loss; mu and sigma_sq may come from the batch file.
        #[arg(long)]
        uncertainty: bool,
        #[command(flatten)]
        loss_flags: LossFlags,
    },
    /// Compare analytic gradients with central differences on random instances.
    GradCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        /// Largest accepted relative error.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Run an optimizer on a toy problem and record its trace.
    Optimize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        algorithm: Option<commands::Algorithm>,
        #[arg(long, value_enum)]
        problem: Option<commands::Problem>,
        #[arg(long)]
        eta0: Option<f64>,
        #[arg(long, value_enum)]
        decay: Option<DecayArg>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        /// L1 strength of the lasso problem.
        #[arg(long)]
        reg: Option<f64>,
        /// Also write the trace as CSV.
        #[arg(long, value_name = "PATH")]
        csv: Option<PathBuf>,
    },
    /// Train a linear softmax classifier on a synthetic imbalanced task.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        loss: Option<LossArg>,
        #[arg(long, value_enum)]
        scheme: Option<Scheme>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Comma-separated class proportions.
        #[arg(long, value_delimiter = ',')]
        proportions: Option<Vec<f64>>,
        /// Per-epoch per-class training errors; next to --out when omitted.
        #[arg(long, value_name = "PATH")]
        csv: Option<PathBuf>,
        #[command(flatten)]
        loss_flags: LossFlags,
    },
    /// Score a dataset's predictions: precision, recall, F1, mAP50, mAP50-95.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        dataset: Option<PathBuf>,
        /// Confidence cutoff for precision, recall and F1.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, value_enum)]
        ap_mode: Option<ApModeArg>,
        /// Also write the plain-text table here.
        #[arg(long, value_name = "PATH")]
        table: Option<PathBuf>,
    },
    /// Render a metric or training report as a plain-text table.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH", required = true)]
        input: PathBuf,
    },
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("REGLAB_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| anyhow::anyhow!("REGLAB_THREADS must be a positive integer, got `{v}`"))?;
        if n == 0 {
            anyhow::bail!("REGLAB_THREADS must be a positive integer, got `{v}`");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn run(command: Command) -> anyhow::Result<()> {
    configure_threads()?;
    let mut o = Overrides::default();
    match command {
        Command::GenData {
            common,
            seed,
            counts,
            task,
            scenes,
            miss_rate,
            false_positive_rate,
            confusion_rate,
            noise_std,
        } => {
            o.set("seed", seed)
                .set("counts_file", counts)
                .set("task", task.map(Task::from))
                .set("scene_count", scenes)
                .set("detector_quality.miss_rate", miss_rate)
                .set("detector_quality.false_positive_rate", false_positive_rate)
                .set("detector_quality.confusion_rate", confusion_rate)
                .set("detector_quality.localization_noise_std", noise_std);
            commands::gen_data(&common, o)
        }
        Command::Weights {
            common,
            counts,
            scheme,
        } => {
            o.set("counts_file", counts)
                .set("scheme", scheme.map(WeightScheme::from));
            commands::weights(&common, o)
        }
        Command::LossEval {
            common,
            input,
            loss,
            uncertainty,
            loss_flags,
        } => {
            o.set("input", input)
                .set("objective", loss.map(LossChoice::from))
                .switch("uncertainty", uncertainty);
            loss_flags.apply(&mut o);
            commands::loss_eval(&common, o)
        }
        Command::GradCheck {
            common,
            seed,
            trials,
            threshold,
        } => {
            o.set("seed", seed)
                .set("trials", trials)
                .set("threshold", threshold);
            commands::grad_check(&common, o)
        }
        Command::Optimize {
            common,
            seed,
            algorithm,
            problem,
            eta0,
            decay,
            iterations,
            dim,
            reg,
            csv,
        } => {
            o.set("seed", seed)
                .set("algorithm", algorithm)
                .set("problem", problem)
                .set("eta0", eta0)
                .set("decay", decay.map(Decay::from))
                .set("iterations", iterations)
                .set("dim", dim)
                .set("reg", reg);
            commands::optimize(&common, o, csv.as_deref())
        }
        Command::Train {
            common,
            seed,
            loss,
            scheme,
            epochs,
            learning_rate,
            proportions,
            csv,
            loss_flags,
        } => {
            o.set("seed", seed)
                .set("objective", loss.map(LossChoice::from))
                .set("scheme", scheme.map(WeightScheme::from))
                .set("epochs", epochs)
                .set("learning_rate", learning_rate)
                .set("class_proportions", proportions);
            loss_flags.apply(&mut o);
            commands::train(&common, o, csv.as_deref())
        }
        Command::Evaluate {
            common,
            dataset,
            threshold,
            ap_mode,
            table,
        } => {
            o.set("dataset", dataset)
                .set("confidence_threshold", threshold)
                .set("ap_mode", ap_mode.map(ApMode::from));
            commands::evaluate(&common, o, table.as_deref())
        }
        Command::Report { common, input } => commands::report(&common, &input),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
