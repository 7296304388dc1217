use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use privlearn::harness::{criterion, run_experiment, Params};

#[derive(Parser)]
#[command(name = "privlearn", version, about = "Private learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Amplified private parity learner: success rate over trials, optional sample-size sweep.
    LearnParity(Run),
    /// Success rate against n for several d and constant multipliers.
    Sweep(Run),
    /// Exponential mechanism over the parity class, realizable and agnostic.
    ExpMech(Run),
    /// Exact privacy ratios of parity-A or the exponential mechanism.
    VerifyDp(Run),
    /// One SQ query answered through Laplace local randomizers.
    SimulateSqByLocal(Run),
    /// Local randomizers answered through SQ rejection sampling.
    SimulateLocalBySq(Run),
    /// Adaptive masked-parity learner against exact and adversarial oracles.
    MaskedParityAdaptive(Run),
    /// Nonadaptive strategies against the adversarial masked-parity oracle.
    Separation(Run),
    /// GF(2), Fourier and tail-bound identity checks.
    Identities(Run),
    /// Runs the preset for acceptance criterion 1..=9.
    Criterion {
        number: usize,
        #[command(flatten)]
        out: Output,
    },
}

#[derive(Args)]
struct Output {
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// File stem for the outputs; defaults to the experiment name.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct Run {
    /// File of key=value lines; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    out: Output,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// One value or a comma-separated list.
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    c_prime: Option<f64>,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    b: Option<f64>,
    /// parity-A or exp-mech.
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    hypotheses: Option<usize>,
    #[arg(long)]
    opt: Option<f64>,
    #[arg(long)]
    runs: Option<usize>,
    /// Comma-separated dimensions.
    #[arg(long)]
    ds: Option<String>,
    /// Any other experiment parameter, as key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Run {
    fn params(&self) -> anyhow::Result<Params> {
        let file = match &self.config {
            Some(path) => Params::load_config(path).with_context(|| format!("reading config {}", path.display()))?,
            None => Params::new(),
        };
        let mut flags = Params::new();
        macro_rules! put {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    flags.set(stringify!($field), v);
                }
            )*};
        }
        put!(seed, d, n, epsilon, alpha, beta, tau, trials, c, c_prime, t, b, target, hypotheses, opt, runs, ds);
        for kv in &self.set {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("--set expects KEY=VALUE, got {kv:?}");
            };
            flags.set(k.trim(), v.trim());
        }
        Ok(file.merged(&flags))
    }
}

fn execute(experiment: &str, params: &Params, out: &Output) -> anyhow::Result<bool> {
    let start = Instant::now();
    let report = run_experiment(experiment, params)?;
    let secs = start.elapsed().as_secs_f64();
    let name = out.name.as_deref().unwrap_or(experiment);
    let (summary, csv) = report.write(&out.out, name, params, secs)?;
    println!("{}", serde_json::to_string_pretty(&serde_json::Value::Object(report.summary.clone()))?);
    println!("{experiment}: {} in {secs:.1}s", if report.pass { "PASS" } else { "FAIL" });
    println!("wrote {} and {}", summary.display(), csv.display());
    Ok(report.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Criterion { number, out } => match criterion(*number) {
            Some((experiment, params)) => execute(experiment, &params, out),
            None => Err(anyhow::anyhow!("criterion must be in 1..=9, got {number}")),
        },
        Command::LearnParity(r) => r.params().and_then(|p| execute("learn-parity", &p, &r.out)),
        Command::Sweep(r) => r.params().and_then(|p| execute("sweep", &p, &r.out)),
        Command::ExpMech(r) => r.params().and_then(|p| execute("exp-mech", &p, &r.out)),
        Command::VerifyDp(r) => r.params().and_then(|p| execute("verify-dp", &p, &r.out)),
        Command::SimulateSqByLocal(r) => r.params().and_then(|p| execute("simulate-sq-by-local", &p, &r.out)),
        Command::SimulateLocalBySq(r) => r.params().and_then(|p| execute("simulate-local-by-sq", &p, &r.out)),
        Command::MaskedParityAdaptive(r) => r.params().and_then(|p| execute("masked-parity-adaptive", &p, &r.out)),
        Command::Separation(r) => r.params().and_then(|p| execute("separation", &p, &r.out)),
        Command::Identities(r) => r.params().and_then(|p| execute("identities", &p, &r.out)),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
