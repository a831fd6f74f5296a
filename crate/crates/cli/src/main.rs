use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use meanfield_transfer::harness::{
    rate_svg, run_rate_sweep, run_verify, sweep_bounds, ExperimentConfig, SimilarityJob, Suite, TrainJob,
};
use meanfield_transfer::Error;
use serde_json::json;

/// Mean-field Langevin transfer learning: simulation, generalization
/// estimates and bounds.
#[derive(Parser)]
#[command(name = "mftl", version)]
struct Cli {
    /// JSON config for the command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the one in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory [default: the config's `output`, else mftl-out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads. Affects speed only, never results.
    #[arg(long, global = true, env = "THREADS")]
    threads: Option<usize>,
    /// Also write SVG charts of the rate fits.
    #[arg(long, global = true)]
    plot: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write it with its trace.
    Train,
    /// Generalization-gap rate sweep over an n_t grid.
    RateSweep,
    /// Gap-bound reports for every cell of a sweep config, without training.
    Bounds,
    /// Dictionary IPM between two data sets.
    Similarity,
    /// Run the invariant batteries.
    Verify {
        /// Reduced sample counts.
        #[arg(long)]
        fast: bool,
    },
}

const DEFAULT_OUT: &str = "mftl-out";

impl Cli {
    fn out(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| DEFAULT_OUT.into())
    }
}

enum Failure {
    Invariant(String),
    Diverged(String),
    Error(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Error(e.into())
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Diverged { .. } | Error::ReplicatesFailed { .. } => 3,
        _ => 2,
    }
}

fn read_config(path: Option<&Path>) -> Result<Option<String>, Error> {
    path.map(|p| {
        fs::read_to_string(p).map_err(|e| Error::Config {
            field: "--config".into(),
            message: format!("{}: {e}", p.display()),
        })
    })
    .transpose()
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<(), Failure> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn train(cli: &Cli) -> Result<(), Failure> {
    let text = read_config(cli.config.as_deref())?.ok_or_else(|| Error::Config {
        field: "--config".into(),
        message: "train needs a config with at least a `train` section".into(),
    })?;
    let mut job = TrainJob::from_json(&text)?;
    if let Some(s) = cli.seed {
        job.train.seed = s;
    }
    let outcome = job.run()?;
    let config = serde_json::to_string(&job).map_err(Error::from)?;
    let mut w = create(&cli.out(), "model.jsonl")?;
    outcome.model.save(&mut w)?;
    let mut w = create(&cli.out(), "trace.csv")?;
    writeln!(w, "# config: {config}")?;
    writeln!(w, "# seed: {}", job.train.seed)?;
    outcome.model.write_trace_csv(&mut w)?;
    write_json(
        &cli.out(),
        "train.json",
        &json!({ "config": job, "seed": job.train.seed, "train_risk": outcome.train_risk, "test_risk": outcome.test_risk }),
    )?;
    println!(
        "{}: train risk {:.6e}, held-out risk {:.6e}; wrote {}",
        job.train.scenario,
        outcome.train_risk,
        outcome.test_risk,
        cli.out().display()
    );
    Ok(())
}

fn sweep_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match read_config(cli.config.as_deref())? {
        Some(text) => ExperimentConfig::from_json(&text)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn rate_sweep(cli: &Cli) -> Result<(), Failure> {
    let cfg = sweep_config(cli)?;
    let out = cli.out.clone().or_else(|| cfg.output.as_ref().map(PathBuf::from)).unwrap_or_else(|| DEFAULT_OUT.into());
    let report = run_rate_sweep(&cfg)?;
    let mut w = create(&out, "sweep.csv")?;
    report.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&out, "report.json")?;
    w.write_all(report.to_json()?.as_bytes())?;
    writeln!(w)?;
    w.flush()?;
    if cli.plot {
        let mut w = create(&out, "rates.svg")?;
        w.write_all(rate_svg(&report).as_bytes())?;
        w.flush()?;
    }
    for f in &report.fits {
        match (&f.fit, &f.error) {
            (Some(r), _) => println!(
                "{:<12} slope {:+.3} (95% CI {:+.3} .. {:+.3}) vs {}",
                f.label, r.slope, r.slope_ci95.0, r.slope_ci95.1, f.axis
            ),
            (None, Some(e)) => println!("{:<12} no fit: {e}", f.label),
            (None, None) => {}
        }
    }
    for c in report.cells.iter().filter(|c| c.error.is_some()) {
        eprintln!("cell {} n_t={}: {}", c.plan.label, c.plan.n_t, c.error.as_deref().unwrap_or(""));
    }
    println!("wrote {}", out.display());
    if report.any_diverged() {
        return Err(Failure::Diverged("at least one cell was abandoned after divergence".into()));
    }
    let undominated: Vec<String> = report
        .cells
        .iter()
        .filter(|c| c.dominated == Some(false))
        .map(|c| format!("{} n_t={}", c.plan.label, c.plan.n_t))
        .collect();
    if !undominated.is_empty() {
        return Err(Failure::Invariant(format!("gap exceeds the bound at {}", undominated.join(", "))));
    }
    Ok(())
}

fn bounds(cli: &Cli) -> Result<(), Failure> {
    let cfg = sweep_config(cli)?;
    let cells = sweep_bounds(&cfg)?;
    for c in &cells {
        println!("{:<12} n_t={:<5} n_s={:<5} rhs {:.6e}", c.plan.label, c.plan.n_t, c.plan.n_s, c.report.rhs_value);
    }
    write_json(&cli.out(), "bounds.json", &json!({ "config": cfg, "seed": cfg.seed, "bounds": cells }))?;
    println!("wrote {}", cli.out().join("bounds.json").display());
    Ok(())
}

fn similarity(cli: &Cli) -> Result<(), Failure> {
    let mut job = match read_config(cli.config.as_deref())? {
        Some(text) => SimilarityJob::from_json(&text)?,
        None => SimilarityJob::from_json("{}")?,
    };
    if let Some(s) = cli.seed {
        job.seed = s;
    }
    let r = job.run()?;
    println!("ipm {:.6e} (p = {}, {} dictionary functions; {})", r.ipm, r.power, r.dictionary, r.note);
    write_json(&cli.out(), "similarity.json", &json!({ "config": job, "seed": job.seed, "result": r }))
}

fn verify(cli: &Cli, fast: bool) -> Result<(), Failure> {
    let suite = if fast { Suite::Fast } else { Suite::Full };
    let report = run_verify(suite, cli.seed.unwrap_or(0))?;
    println!("{report}");
    write_json(&cli.out(), "verify.json", &serde_json::to_value(&report).map_err(Error::from)?)?;
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Invariant(format!("{} invariant checks failed", report.failures().count())))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Train => train(&cli),
        Command::RateSweep => rate_sweep(&cli),
        Command::Bounds => bounds(&cli),
        Command::Similarity => similarity(&cli),
        Command::Verify { fast } => verify(&cli, *fast),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invariant(msg)) => {
            eprintln!("invariant failure: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Diverged(msg)) => {
            eprintln!("divergence: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
