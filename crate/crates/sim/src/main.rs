use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use parcelhub_sim::Options;

#[derive(Parser)]
#[command(name = "sim", version, about = "Workload generator for a running parcelhub service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value = "http://127.0.0.1:8080")]
    base_url: String,
    /// Directory the service's file mail transport writes to.
    #[arg(long)]
    mail_dir: PathBuf,
    #[arg(long, default_value_t = 3)]
    senders: usize,
    #[arg(long, default_value_t = 2)]
    couriers: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Account namespace; defaults to one derived from the seed.
    #[arg(long)]
    tag: Option<String>,
}

impl Common {
    fn options(&self, default_tag: String) -> Options {
        let mut options = Options::new(&self.base_url, &self.mail_dir);
        options.senders = self.senders;
        options.couriers = self.couriers;
        options.seed = self.seed;
        options.tag = self.tag.clone().unwrap_or(default_tag);
        options
    }
}

#[derive(Subcommand)]
enum Command {
    /// Create accounts and deliveries derived from the seed.
    Seed {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        deliveries: usize,
    },
    /// Run the workload and compare latencies with their budgets.
    Run {
        #[command(flatten)]
        common: Common,
        /// Deliveries created per minute.
        #[arg(long, default_value_t = 6.0)]
        rate: f64,
        /// Seconds to generate load for.
        #[arg(long, default_value_t = 60)]
        duration: u64,
        /// Multiplier applied to every budget.
        #[arg(long, default_value_t = 1.0)]
        slack: f64,
        /// Location updates per trip.
        #[arg(long, default_value_t = 5)]
        steps: u32,
        /// Seconds between location updates.
        #[arg(long, default_value_t = 4.0)]
        cadence: f64,
        /// Also write the report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[tokio::main]
async fn main() -> anyhow::Result<ExitCode> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Seed { common, deliveries } => {
            let options = common.options(format!("seed{}", common.seed));
            let summary = parcelhub_sim::seed(options, deliveries).await?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Run {
            common,
            rate,
            duration,
            slack,
            steps,
            cadence,
            report,
        } => {
            let stamp = chrono::Utc::now().timestamp();
            let mut options = common.options(format!("run{}x{stamp}", common.seed));
            options.rate_per_min = rate;
            options.duration = Duration::from_secs(duration);
            options.slack = slack;
            options.steps = steps;
            options.cadence = Duration::try_from_secs_f64(cadence).context("cadence")?;
            let result = parcelhub_sim::run(options).await?;
            println!("{result}");
            if let Some(path) = report {
                std::fs::write(&path, serde_json::to_vec_pretty(&result)?)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(if result.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}
