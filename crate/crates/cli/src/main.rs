use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "seedplan", version, about = "LDR prostate brachytherapy seed planning")]
struct Cli {
    /// RNG seed for phantoms and annealing.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Planner configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for batch commands.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Skip seed respacing during post-processing.
    #[arg(long, global = true)]
    no_uniformize: bool,
    /// Never anneal, whatever the mode.
    #[arg(long, global = true)]
    no_sa: bool,
    /// Source model JSON replacing the bundled one.
    #[arg(long, global = true)]
    source_model: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic phantoms.
    #[command(subcommand)]
    Phantom(PhantomCmd),
    /// Plan one case or every case of a manifest split.
    Plan(PlanArgs),
    /// Dose metrics of an existing plan.
    Evaluate(EvaluateArgs),
    /// Mean ± std summary of metrics files.
    Report(ReportArgs),
    /// Paired t-test between two metrics files.
    Ttest(TtestArgs),
    /// SVG of one template plane.
    Render(RenderArgs),
    /// Loss fixtures for cross-implementation parity.
    ExportGolden(GoldenArgs),
    /// Planner configuration.
    #[command(subcommand)]
    Config(ConfigCmd),
}

#[derive(Subcommand, Debug)]
enum PhantomCmd {
    /// A single case plus its heuristic needle plan.
    Case {
        #[arg(long, default_value_t = 40.0)]
        volume: f64,
        /// Output case file.
        #[arg(long)]
        out: PathBuf,
        /// Also write the generated needle plan here.
        #[arg(long)]
        needles: Option<PathBuf>,
    },
    /// Cases, reference plans and a manifest.
    Dataset {
        #[arg(long, default_value_t = 10)]
        cases: usize,
        /// Train, val and test fractions.
        #[arg(long, value_delimiter = ',', default_values_t = [0.7, 0.1, 0.2])]
        split: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Seattle,
    Needles,
    PlanFile,
}

#[derive(Args, Debug)]
struct PlanArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    #[arg(long, conflicts_with = "manifest")]
    case: Option<PathBuf>,
    /// Needle plan for `needles` mode.
    #[arg(long)]
    needles: Option<PathBuf>,
    /// Probability or seed plan for `plan-file` mode.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Anneal after post-processing in `plan-file` mode.
    #[arg(long)]
    sa: bool,
    /// Output plan file (single case) or directory (manifest).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Plan every case of this manifest's split.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    /// Directory of `<case_id>.json` inputs for `plan-file` mode with a manifest.
    #[arg(long)]
    input_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    case: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Metrics CSV files, one technique each.
    #[arg(required = true)]
    files: Vec<PathBuf>,
    /// Technique names, in file order; defaults to file stems.
    #[arg(long, value_delimiter = ',')]
    names: Vec<String>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TtestArgs {
    a: PathBuf,
    b: PathBuf,
    #[arg(long, default_value = "PTV_V100")]
    column: String,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    case: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    plane: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GoldenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    count: usize,
    /// Loss definition JSON replacing the bundled one.
    #[arg(long)]
    definition: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum ConfigCmd {
    /// Write the default planner configuration.
    Init {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
