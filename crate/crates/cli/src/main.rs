use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use morphsim::dataset::{design_stats, generate_dataset, is_held_out, SamplerConfig, StatsReport};
use morphsim::design::{hybrid_step, inverse_optimize, validate, TargetSpec, ValidationReport};
use morphsim::io::{load_checkpoint, read_dataset, read_json, read_trajectories, save_checkpoint, write_dataset, write_json, write_jsonl};
use morphsim::train::{evaluate, grid_search, train, EpochRecord, Hyperparams};
use morphsim::{simulate_oracle, GridDesign, OracleConfig, SurrogateConfig, Trajectory};
use morphsim_cli::server::{serve, AppState};
use morphsim_cli::workspace::Workspace;
use morphsim_cli::TrainingMetadata;

/// Learned surrogate simulator and design search for 4D-printed 2×2
/// morphing grids.
#[derive(Parser)]
#[command(name = "morphsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample designs, simulate them with the oracle and write a dataset.
    Gen(GenArgs),
    /// Train a surrogate on the training split of a dataset.
    Train(TrainArgs),
    /// Score a checkpoint on the held-out split of a dataset.
    Eval(EvalArgs),
    /// Train and score one model per (penalty, noise, size) combination.
    Gridsearch(GridArgs),
    /// Predict the twelve-frame trajectory of a design.
    Simulate(SimulateArgs),
    /// Inverse design: repeatedly apply the best-ranked modification, or
    /// list the top candidates with --hybrid.
    Optimize(OptimizeArgs),
    /// Check a design for errors and accuracy warnings.
    Validate(ValidateArgs),
    /// Run the HTTP service used by the design studio.
    Serve(ServeArgs),
    /// Simulate a design with the physics oracle.
    OracleSim(OracleSimArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Number of trajectories.
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path; `.jsonl` writes JSON lines, anything else the binary format.
    #[arg(long)]
    out: PathBuf,
    /// Lattice spacing between joints, mm.
    #[arg(long)]
    spacing: Option<f64>,
    /// Radius of the disc each joint is jittered within, mm.
    #[arg(long)]
    jitter: Option<f64>,
    /// Write the geometry statistics report here instead of stdout.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    /// Latent width of the first interaction network.
    #[arg(long, default_value_t = SurrogateConfig::default().latent)]
    latent: usize,
    /// Width of the first hidden layer; later layers halve.
    #[arg(long, default_value_t = SurrogateConfig::default().first_width)]
    width: usize,
    /// Number of linear layers per MLP.
    #[arg(long, default_value_t = SurrogateConfig::default().depth)]
    depth: usize,
}

#[derive(Args)]
struct TrainSettings {
    #[arg(long, default_value_t = Hyperparams::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = Hyperparams::default().seed)]
    seed: u64,
    #[arg(long = "lr", default_value_t = Hyperparams::default().learning_rate)]
    learning_rate: f64,
    /// Learning rate at the last epoch as a fraction of --lr (cosine decay).
    #[arg(long = "final-lr-fraction", default_value_t = Hyperparams::default().final_learning_rate_fraction)]
    final_learning_rate_fraction: f64,
    #[arg(long, default_value_t = Hyperparams::default().batch_size)]
    batch_size: usize,
    /// Explained-variance cutoff of the input normalizers.
    #[arg(long, default_value_t = Hyperparams::default().cutoff)]
    cutoff: f64,
    /// Differentiate through whole rollouts instead of single noisy steps.
    #[arg(long)]
    rollout_backprop: bool,
    #[command(flatten)]
    model: ModelArgs,
}

impl TrainSettings {
    fn hyperparams(&self, penalty: f64, noise: f64, dataset_size: Option<usize>) -> Hyperparams {
        Hyperparams {
            penalty,
            noise,
            learning_rate: self.learning_rate,
            final_learning_rate_fraction: self.final_learning_rate_fraction,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            cutoff: self.cutoff,
            dataset_size,
            rollout_backprop: self.rollout_backprop,
            model: SurrogateConfig {
                latent: self.model.latent,
                first_width: self.model.width,
                depth: self.model.depth,
                seed: self.seed,
            },
            ..Hyperparams::default()
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset (binary or JSON lines); held-out designs are skipped.
    #[arg(long)]
    data: PathBuf,
    /// Noise strength γ.
    #[arg(long, default_value_t = Hyperparams::default().noise)]
    gamma: f64,
    /// Weight of the dislocation term.
    #[arg(long, default_value_t = Hyperparams::default().penalty)]
    penalty: f64,
    /// Use only the first N training trajectories.
    #[arg(long)]
    size: Option<usize>,
    /// Checkpoint path; a JSON manifest and a history CSV are written beside it.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    settings: TrainSettings,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// JSON report path.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Score every trajectory instead of the held-out split only.
    #[arg(long)]
    all: bool,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated noise strengths.
    #[arg(long, value_delimiter = ',', default_value = "0,0.05,0.1,0.2")]
    gamma: Vec<f64>,
    /// Comma-separated dislocation weights.
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,2")]
    penalty: Vec<f64>,
    /// Comma-separated training set sizes.
    #[arg(long, value_delimiter = ',', default_value = "200,800,1600")]
    sizes: Vec<usize>,
    /// JSON report path.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    settings: TrainSettings,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    design: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    /// Trajectory JSON output.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    design: PathBuf,
    /// JSON list of {joint, x, y, z} target points.
    #[arg(long)]
    targets: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 22)]
    epochs: usize,
    /// Joint move distance, mm.
    #[arg(long, default_value_t = morphsim::design::DEFAULT_JOINT_STEP)]
    step: f64,
    /// Print the top-ranked modifications of one step instead of iterating.
    #[arg(long)]
    hybrid: bool,
    #[arg(long, default_value_t = morphsim::design::DEFAULT_TOP_K)]
    topk: usize,
    /// JSON output: the ranking with --hybrid, else the search result.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    design: PathBuf,
    /// Take the geometry statistics for warnings from this checkpoint.
    #[arg(long, conflicts_with = "stats")]
    ckpt: Option<PathBuf>,
    /// Take the geometry statistics from this JSON report.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long)]
    ckpt: PathBuf,
    /// Workspace root; defaults to $MORPHSIM_WORKSPACE or ./workspace.
    #[arg(long)]
    workspace: Option<PathBuf>,
}

#[derive(Args)]
struct OracleSimArgs {
    #[arg(long)]
    design: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Projection iterations per frame.
    #[arg(long)]
    iterations: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Gridsearch(a) => gridsearch(a),
        Command::Simulate(a) => simulate(a),
        Command::Optimize(a) => optimize(a),
        Command::Validate(a) => validate_cmd(a),
        Command::Serve(a) => serve_cmd(a),
        Command::OracleSim(a) => oracle_sim(a),
    }
}

fn is_jsonl(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "jsonl")
}

fn read_design(path: &Path) -> Result<GridDesign> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    GridDesign::from_json(&text).with_context(|| format!("parsing design {}", path.display()))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn gen(a: GenArgs) -> Result<()> {
    let defaults = SamplerConfig::default();
    let sampler = SamplerConfig {
        spacing: a.spacing.unwrap_or(defaults.spacing),
        jitter: a.jitter.unwrap_or(defaults.jitter),
        ..defaults
    };
    let dataset = generate_dataset(a.n, a.seed, &sampler, &OracleConfig::default())?;
    if is_jsonl(&a.out) {
        write_jsonl(&a.out, &dataset.trajectories)?;
    } else {
        write_dataset(&a.out, &dataset)?;
    }
    let stats = dataset.stats()?;
    match a.stats {
        Some(path) => write_json(&path, &stats)?,
        None => print_json(&stats)?,
    }
    let held_out = dataset.trajectories.iter().filter(|t| is_held_out(&t.design)).count();
    log::info!(
        "wrote {} trajectories ({} held out, {} resampled) to {}",
        dataset.len(),
        held_out,
        dataset.provenance.resampled,
        a.out.display()
    );
    Ok(())
}

/// Training and held-out trajectories of a dataset file.
fn load_split(path: &Path) -> Result<(Vec<Trajectory>, Vec<Trajectory>)> {
    let all = read_trajectories(path).with_context(|| format!("reading {}", path.display()))?;
    let (test, train): (Vec<_>, Vec<_>) = all.into_iter().partition(|t| is_held_out(&t.design));
    Ok((train, test))
}

fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut text = String::from(
        "epoch,train_loss,train_regression,train_dislocation,validation_loss,validation_vertex_error,validation_dislocation,seconds\n",
    );
    for r in history {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.epoch,
            r.train_loss,
            r.train_regression,
            r.train_dislocation,
            r.validation_loss,
            r.validation_vertex_error,
            r.validation_dislocation,
            r.seconds
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let (train_set, _) = load_split(&a.data)?;
    if train_set.is_empty() {
        bail!("{} has no training trajectories", a.data.display());
    }
    let hp = a.settings.hyperparams(a.penalty, a.gamma, a.size);
    let outcome = train(&train_set, &hp)?;
    let used = hp.dataset_size.unwrap_or(train_set.len()).min(train_set.len());
    let provenance = if is_jsonl(&a.data) {
        None
    } else {
        Some(read_dataset(&a.data)?.provenance)
    };
    let metadata = TrainingMetadata {
        hyperparams: hp,
        dataset_stats: design_stats(train_set[..used].iter().map(|t| &t.design))?,
        provenance,
        trajectories: used,
        best_epoch: outcome.best_epoch,
        history: outcome.history.clone(),
    };
    save_checkpoint(&a.out, &outcome.model, serde_json::to_value(&metadata)?)?;
    let mut history_path = a.out.clone().into_os_string();
    history_path.push(".history.csv");
    write_history(Path::new(&history_path), &outcome.history)?;
    let best = &outcome.history[outcome.best_epoch];
    println!(
        "best epoch {}: validation final-frame error {:.3} mm, dislocation {:.3} mm",
        outcome.best_epoch, best.validation_vertex_error, best.validation_dislocation
    );
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let (model, _) = load_checkpoint(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
    let (train_set, test_set) = load_split(&a.data)?;
    let items = if a.all { [train_set, test_set].concat() } else { test_set };
    if items.is_empty() {
        bail!("no trajectories to evaluate in {}", a.data.display());
    }
    let report = evaluate(&model, &items)?;
    println!(
        "mean final-frame error {:.3} mm ({:.2}% of grid dimension) over {} designs",
        report.vertex_error_mm,
        report.relative_error * 100.0,
        report.items
    );
    println!(
        "97th percentile {:.3} mm ({:.2}%), dislocation {:.3} mm, no-motion baseline {:.3} mm",
        report.vertex_error_p97_mm,
        report.relative_error_p97 * 100.0,
        report.dislocation_mm,
        report.baseline_error_mm
    );
    if let Some(path) = a.report {
        write_json(&path, &report)?;
    }
    Ok(())
}

fn gridsearch(a: GridArgs) -> Result<()> {
    let (train_set, test_set) = load_split(&a.data)?;
    if train_set.is_empty() || test_set.is_empty() {
        bail!("{} needs both training and held-out trajectories", a.data.display());
    }
    let base = a.settings.hyperparams(1.0, 0.1, None);
    let result = grid_search(&train_set, &test_set, &base, &a.penalty, &a.gamma, &a.sizes)?;
    for cell in &result.cells {
        match &cell.report {
            Some(r) => println!(
                "a={} γ={} n={}: error {:.3} mm, dislocation {:.3} mm",
                cell.penalty, cell.noise, cell.dataset_size, r.vertex_error_mm, r.dislocation_mm
            ),
            None => println!(
                "a={} γ={} n={}: failed: {}",
                cell.penalty,
                cell.noise,
                cell.dataset_size,
                cell.error.as_deref().unwrap_or("unknown")
            ),
        }
    }
    if let Some(best) = result.best {
        let c = &result.cells[best];
        println!("best: a={} γ={} n={}", c.penalty, c.noise, c.dataset_size);
    }
    if let Some(path) = a.report {
        write_json(&path, &result)?;
    }
    Ok(())
}

fn refuse_invalid(report: &ValidationReport) -> Result<()> {
    if report.is_valid() {
        return Ok(());
    }
    print_json(report)?;
    bail!("design has {} validation error(s)", report.errors.len())
}

fn checkpoint_stats(header: &morphsim::io::CheckpointHeader) -> Option<StatsReport> {
    serde_json::from_value::<TrainingMetadata>(header.metadata.clone())
        .ok()
        .map(|m| m.dataset_stats)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let design = read_design(&a.design)?;
    let (model, header) = load_checkpoint(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
    let report = validate(&design, checkpoint_stats(&header).as_ref());
    refuse_invalid(&report)?;
    for w in &report.warnings {
        log::warn!("{}: {}", w.code, w.message);
    }
    let trajectory = model.simulate(&design)?;
    write_json(&a.out, &trajectory)?;
    Ok(())
}

fn optimize(a: OptimizeArgs) -> Result<()> {
    let design = read_design(&a.design)?;
    let targets: TargetSpec = read_json(&a.targets).with_context(|| format!("reading {}", a.targets.display()))?;
    let (model, _) = load_checkpoint(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
    refuse_invalid(&validate(&design, None))?;
    if a.hybrid {
        let ranking = hybrid_step(&model, &design, &targets, a.topk, a.step)?;
        for (rank, c) in ranking.candidates.iter().enumerate() {
            println!("{:>2}. {:.3} mm  {}", rank + 1, c.score, c.descriptor);
        }
        for note in &ranking.excluded {
            log::warn!("excluded {note}");
        }
        if let Some(path) = a.out {
            write_json(&path, &ranking)?;
        }
    } else {
        let result = inverse_optimize(&model, &design, &targets, a.epochs, a.step, |e| {
            println!("epoch {:>2}: {:.3} mm  {} ({} candidates)", e.epoch, e.score, e.descriptor, e.candidates);
        })?;
        println!("score {:.3} mm -> {:.3} mm", result.initial_score, result.best_score);
        if let Some(path) = a.out {
            write_json(&path, &result)?;
        }
    }
    Ok(())
}

fn validate_cmd(a: ValidateArgs) -> Result<()> {
    let design = read_design(&a.design)?;
    let stats = match (a.ckpt, a.stats) {
        (Some(ckpt), _) => {
            let (_, header) = load_checkpoint(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
            checkpoint_stats(&header)
        }
        (None, Some(path)) => Some(read_json(&path)?),
        (None, None) => None,
    };
    let report = validate(&design, stats.as_ref());
    print_json(&report)?;
    if !report.is_valid() {
        bail!("design has {} validation error(s)", report.errors.len());
    }
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> Result<()> {
    let (model, header) = load_checkpoint(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
    let workspace = Workspace::open(Workspace::locate(a.workspace.as_deref()).root)?;
    let state = Arc::new(AppState::new(model, header, workspace));
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port)).await?;
        log::info!("listening on http://{}", listener.local_addr()?);
        serve(listener, state).await?;
        Ok(())
    })
}

fn oracle_sim(a: OracleSimArgs) -> Result<()> {
    let design = read_design(&a.design)?;
    refuse_invalid(&validate(&design, None))?;
    let defaults = OracleConfig::default();
    let config = OracleConfig {
        projection_iterations: a.iterations.unwrap_or(defaults.projection_iterations),
        ..defaults
    };
    let trajectory = simulate_oracle(&design, &config)?;
    write_json(&a.out, &trajectory)?;
    Ok(())
}
