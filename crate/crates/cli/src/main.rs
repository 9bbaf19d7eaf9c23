use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use prevalent_cli::{
    cmd_diagnose, cmd_estimate, cmd_estimate_age, cmd_simulate, BootstrapArgs, CliError, EmArgs, EstimateAgeArgs,
    EstimateArgs, RunReport,
};
use prevalent_core::npmle::TailPolicy;

/// Incidence rates from a prevalent cohort.
#[derive(Parser)]
#[command(name = "prevalent", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Overall incidence from records, or from a mean duration and a prevalence.
    Estimate {
        /// Records CSV (bwd,fwd_obs,event[,age_cat]).
        csv: Option<PathBuf>,
        /// Number of people screened.
        #[arg(long)]
        s: Option<u64>,
        /// Prevalence to use instead of n/s.
        #[arg(long)]
        prevalence: Option<f64>,
        /// Mean duration in years (summary mode, no CSV).
        #[arg(long)]
        mu: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Age-specific incidence.
    EstimateAge {
        csv: PathBuf,
        #[arg(long)]
        s: u64,
        /// Age distribution CSV (segment_start,segment_end,<categories>).
        #[arg(long)]
        age: PathBuf,
        /// Years from the start of the age table to recruitment.
        #[arg(long)]
        tau_star: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Simulate a prevalent cohort from a TOML config.
    Simulate {
        config: PathBuf,
        /// Output CSV; the truth is written next to it as <stem>.truth.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Backward/forward exchangeability test.
    Diagnose {
        csv: PathBuf,
        #[arg(long, default_value_t = 999)]
        permutations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = TailPolicy::Strict)]
    tail_policy: TailPolicy,
    /// Bootstrap replicates (at least 100).
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 100_000)]
    max_iter: usize,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn split(self) -> (EmArgs, BootstrapArgs, Option<PathBuf>) {
        let em = EmArgs { tail_policy: self.tail_policy, tol: self.tol, max_iter: self.max_iter };
        let boot = BootstrapArgs { replicates: self.bootstrap, level: self.level, seed: self.seed };
        (em, boot, self.out)
    }
}

fn run(cli: Cli) -> Result<(RunReport, Option<PathBuf>), CliError> {
    match cli.command {
        Command::Estimate { csv, s, prevalence, mu, common } => {
            let (em, bootstrap, out) = common.split();
            let args = EstimateArgs { csv, s, prevalence, mu, em, bootstrap };
            Ok((cmd_estimate(&args)?, out))
        }
        Command::EstimateAge { csv, s, age, tau_star, common } => {
            let (em, bootstrap, out) = common.split();
            let args = EstimateAgeArgs { csv, age_csv: age, s: Some(s), tau_star, em, bootstrap };
            Ok((cmd_estimate_age(&args)?, out))
        }
        Command::Simulate { config, out } => Ok((cmd_simulate(&config, &out)?, None)),
        Command::Diagnose { csv, permutations, seed, out } => Ok((cmd_diagnose(&csv, permutations, seed)?, out)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let fail = |e: CliError| {
        eprintln!("{}", e.to_json());
        ExitCode::from(e.exit_code() as u8)
    };
    match run(cli) {
        Ok((report, None)) => {
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(report.to_json().as_bytes());
            ExitCode::SUCCESS
        }
        Ok((report, Some(path))) => match std::fs::write(&path, report.to_json()) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => fail(CliError::Core(e.into())),
        },
        Err(e) => fail(e),
    }
}
