use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nrx_core::complexity::network_report;
use nrx_core::receivers::{lmmse_flops, ls_flops, ReceiverKind};
use nrx_harness::checkpoint::Checkpoint;
use nrx_harness::config::{ExperimentConfig, Preset};
use nrx_harness::dataset::{generate_dataset, Dataset};
use nrx_harness::eval::evaluate;
use nrx_harness::neural::NeuralRx;
use nrx_harness::plot::{bler_svg, parse_csv};
use nrx_harness::scenario::Split;
use nrx_harness::train::{write_trace_csv, TrainState, Trainer};
use nrx_harness::{HarnessError, Result};

mod selftest;

#[derive(Parser, Debug)]
#[command(name = "nrx", version, about = "OFDM neural receiver lab")]
struct Cli {
    /// Starting configuration (desk, toy, paper).
    #[arg(long, global = true, default_value = "desk")]
    preset: String,
    /// TOML configuration file; replaces the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long, global = true)]
    dump_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parameter, FLOP, memory-access and energy report of the configured network.
    Analyze(AnalyzeArgs),
    /// Generate a dataset of randomized TTI scenarios.
    GenData(GenDataArgs),
    /// Train the neural receiver.
    Train(TrainArgs),
    /// Paired BLER/BER sweep over the configured receivers.
    Eval(EvalArgs),
    /// Render a sweep CSV as an SVG chart.
    Plot(PlotArgs),
    /// Quick internal consistency checks.
    Selftest,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ReportFormat {
    Table,
    Csv,
    Json,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Grid height (OFDM symbols); defaults to the link configuration.
    #[arg(long)]
    height: Option<usize>,
    /// Grid width (subcarriers); defaults to the link configuration.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long, value_enum, default_value = "table")]
    format: ReportFormat,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long, value_enum, default_value = "train")]
    split: SplitArg,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Checkpoint written at every validation; the best model goes to `<out>.best`.
    #[arg(long, default_value = "model.nrxc")]
    out: PathBuf,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Continue from a checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Load checkpoints whose model hash does not match.
    #[arg(long)]
    force: bool,
    /// Loss trace CSV.
    #[arg(long, default_value = "loss.csv")]
    trace: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    force: bool,
    /// Comma-separated Eb/N0 points in dB.
    #[arg(long, value_delimiter = ',')]
    ebn0: Option<Vec<f64>>,
    #[arg(long)]
    ttis: Option<usize>,
    /// Comma-separated receivers (pcsi, ls, lmmse, neural).
    #[arg(long, value_delimiter = ',')]
    receivers: Option<Vec<ReceiverKind>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,
    /// Also write an SVG chart.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PlotArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "BLER")]
    title: String,
}

fn base_config(cli: &Cli) -> Result<ExperimentConfig> {
    match &cli.config {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::preset(cli.preset.parse::<Preset>()?)),
    }
}

fn apply_overrides(cfg: &mut ExperimentConfig, command: &Command) {
    match command {
        Command::Train(a) => {
            if let Some(s) = a.steps {
                cfg.train.steps = s;
            }
            if let Some(s) = a.seed {
                cfg.train.seed = s;
            }
            if a.dataset.is_some() {
                cfg.train.dataset = a.dataset.clone();
            }
        }
        Command::Eval(a) => {
            if let Some(e) = &a.ebn0 {
                cfg.eval.ebn0_db = e.clone();
            }
            if let Some(t) = a.ttis {
                cfg.eval.ttis = t;
            }
            if let Some(r) = &a.receivers {
                cfg.eval.receivers = r.clone();
            }
            if let Some(s) = a.seed {
                cfg.eval.seed = s;
            }
            if a.checkpoint.is_some() {
                cfg.eval.checkpoint = a.checkpoint.clone();
            }
        }
        _ => {}
    }
}

fn best_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".best");
    PathBuf::from(s)
}

fn analyze(cfg: &ExperimentConfig, a: &AnalyzeArgs) -> Result<()> {
    let h = a.height.unwrap_or(cfg.link.symbols);
    let w = a.width.unwrap_or(cfg.link.subcarriers);
    let mut report = network_report(&cfg.network_config(), h, w);
    let (ant, d) = (cfg.link.rx_antennas, cfg.link.dmrs_symbols.len());
    report.add_receiver("ls", ls_flops(ant, h, w, d));
    report.add_receiver("lmmse", lmmse_flops(ant, h, w, d));
    match a.format {
        ReportFormat::Table => print!("{}", report.to_table()),
        ReportFormat::Csv => print!("{}", report.to_csv()),
        ReportFormat::Json => println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("report serializes")
        ),
    }
    Ok(())
}

fn gen_data(cfg: &ExperimentConfig, a: &GenDataArgs) -> Result<()> {
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let ds = generate_dataset(&cfg.scenario, split, a.count, a.seed)?;
    ds.save(&a.out)?;
    eprintln!("wrote {} TTIs to {}", a.count, a.out.display());
    Ok(())
}

fn train(cfg: &ExperimentConfig, a: &TrainArgs) -> Result<()> {
    let dataset = cfg
        .train
        .dataset
        .as_deref()
        .map(Dataset::load)
        .transpose()?;
    let mut state = match &a.resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            ck.check_compatible(cfg, a.force)?;
            eprintln!("resuming from step {}", ck.step);
            TrainState::from_checkpoint(cfg, ck)?
        }
        None => TrainState::new(cfg)?,
    };
    let trainer = Trainer::new(cfg, dataset.as_ref())?;
    let mut save_err = None;
    let result = trainer.run(&mut state, cfg.train.steps, |st, r| {
        if let Some(v) = r.val_loss {
            eprintln!("step {:>6}  train {:.5}  val {v:.5}", r.step, r.train_loss);
            let mut ck = Checkpoint::from_state(cfg, st);
            let saved = ck.save(&a.out).and_then(|_| {
                if st.best_val == v {
                    ck.params = st.best_params.clone().unwrap_or_else(|| ck.params.clone());
                    ck.save(&best_path(&a.out))
                } else {
                    Ok(())
                }
            });
            if let Err(e) = saved {
                save_err.get_or_insert(e);
            }
        }
    });
    write_trace_csv(&a.trace, &state.trace)?;
    if let Err(e) = result {
        if matches!(e, HarnessError::Diverged { .. }) {
            eprintln!("last good checkpoint: {}", a.out.display());
        }
        return Err(e);
    }
    if let Some(e) = save_err {
        return Err(e);
    }
    eprintln!(
        "done at step {}; best validation BCE {:.5} in {}",
        state.step,
        state.best_val,
        best_path(&a.out).display()
    );
    Ok(())
}

fn eval(cfg: &ExperimentConfig, a: &EvalArgs) -> Result<()> {
    let neural = if cfg.eval.receivers.contains(&ReceiverKind::Neural) {
        let path =
            cfg.eval.checkpoint.as_ref().ok_or_else(|| {
                HarnessError::Config("the neural receiver needs --checkpoint".into())
            })?;
        let ck = Checkpoint::load(path)?;
        ck.check_compatible(cfg, a.force)?;
        let state = TrainState::from_checkpoint(cfg, ck)?;
        Some(NeuralRx::new(state.net))
    } else {
        None
    };
    let result = evaluate(cfg, neural.as_ref())?;
    result.write_csv(&a.out)?;
    print!("{}", result.to_csv());
    if let Some(svg) = &a.svg {
        let title = format!("BLER, {} TTIs per point", cfg.eval.ttis);
        std::fs::write(svg, bler_svg(&result.rows(), &title))
            .map_err(|e| HarnessError::io(svg, e))?;
    }
    Ok(())
}

fn plot(a: &PlotArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.input).map_err(|e| HarnessError::io(&a.input, e))?;
    let rows = parse_csv(&text)
        .map_err(|e| HarnessError::Format(format!("{}: {e}", a.input.display())))?;
    std::fs::write(&a.out, bler_svg(&rows, &a.title)).map_err(|e| HarnessError::io(&a.out, e))
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("NRX_THREADS") {
        let n: usize = v.parse().map_err(|_| {
            HarnessError::Config(format!("NRX_THREADS must be a positive integer, got {v:?}"))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let mut cfg = base_config(&cli)?;
    apply_overrides(&mut cfg, &cli.command);
    cfg.validate()?;
    if cli.dump_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    match &cli.command {
        Command::Analyze(a) => analyze(&cfg, a),
        Command::GenData(a) => gen_data(&cfg, a),
        Command::Train(a) => train(&cfg, a),
        Command::Eval(a) => eval(&cfg, a),
        Command::Plot(a) => plot(a),
        Command::Selftest => selftest::run(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
    }
}
