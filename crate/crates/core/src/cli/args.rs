use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use super::bench::{opcount_report, scaling_report};
use super::files::GradCheckOptions;
use super::{check, dump, gradcheck, linreg, quadratic, spring, CliError, DemoConfig, DumpOptions, Report, SpringParams};

#[derive(Debug, Parser)]
#[command(name = "scalar-ad", about = "Differentiate, check and benchmark scalar IR programs")]
pub struct Cli {
    /// Print reports as JSON instead of `key = value` lines.
    #[arg(long, global = true)]
    pub structured: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and typecheck an IR file.
    Check { file: PathBuf },
    /// Print the forward/backward (or JVP) definitions derived from a function.
    Dump {
        file: PathBuf,
        #[arg(long = "fn")]
        func: Option<String>,
        /// Simplify before printing.
        #[arg(long)]
        opt: bool,
        /// Print the dual JVP instead.
        #[arg(long)]
        jvp: bool,
    },
    /// Compare reverse-mode gradients with central differences.
    Gradcheck {
        file: PathBuf,
        #[arg(long = "fn")]
        func: Option<String>,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        /// Check at this comma-separated point instead of random samples (repeatable).
        #[arg(long, value_delimiter = ';')]
        at: Vec<String>,
        /// Report mismatches under custom derivatives without failing.
        #[arg(long)]
        custom_jvp: bool,
    },
    /// Static size or dynamic operation-count benchmarks.
    Bench {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a demo program.
    Run {
        #[arg(value_enum)]
        demo: Demo,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        max_iters: Option<u64>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Scaling,
    Opcount,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Demo {
    Linreg,
    Quadratic,
    Spring,
}

fn read(path: &PathBuf) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn parse_point(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| CliError::Config(format!("bad coordinate `{x}` in `{s}`"))))
        .collect()
}

fn configure(mut cfg: DemoConfig, eta: Option<f64>, max_iters: Option<u64>, tol: Option<f64>, seed: Option<u64>) -> DemoConfig {
    cfg.eta = eta.unwrap_or(cfg.eta);
    cfg.max_iters = max_iters.unwrap_or(cfg.max_iters);
    cfg.tol = tol.unwrap_or(cfg.tol);
    cfg.seed = seed.unwrap_or(cfg.seed);
    cfg
}

pub fn execute(cmd: Command) -> Result<Report, CliError> {
    match cmd {
        Command::Check { file } => check(&read(&file)?),
        Command::Dump { file, func, opt, jvp } => dump(&read(&file)?, &DumpOptions { func, opt, jvp }),
        Command::Gradcheck {
            file,
            func,
            samples,
            seed,
            tol,
            at,
            custom_jvp,
        } => {
            let at = at.iter().map(|s| parse_point(s)).collect::<Result<_, _>>()?;
            let opts = GradCheckOptions {
                func,
                samples,
                seed,
                tol,
                at,
                custom_jvp,
            };
            Ok(gradcheck(&read(&file)?, &opts)?.report())
        }
        Command::Bench { suite: Suite::Scaling, .. } => scaling_report(),
        Command::Bench { suite: Suite::Opcount, seed } => opcount_report(seed),
        Command::Run {
            demo,
            eta,
            max_iters,
            tol,
            seed,
        } => match demo {
            Demo::Linreg => linreg(&configure(DemoConfig::linreg(), eta, max_iters, tol, seed)),
            Demo::Quadratic => quadratic(),
            Demo::Spring => spring(&configure(DemoConfig::spring(), eta, max_iters, tol, seed), &SpringParams::default()),
        },
    }
}

/// Parse arguments, run the command and write its report; returns the exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if e.use_stderr() {
                write!(err, "{e}")
            } else {
                write!(out, "{e}")
            };
            return code;
        }
    };
    match execute(cli.command) {
        Ok(rep) => {
            let _ = out.write_all(rep.render(cli.structured).as_bytes());
            rep.status.exit_code()
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
