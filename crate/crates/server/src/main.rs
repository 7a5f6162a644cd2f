use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use clap::{Parser, Subcommand};
use parcelhub_server::{config::Config, openapi, Intervals};
use rand::RngCore;

#[derive(Parser)]
#[command(name = "parcelhub", version, about = "Parcel delivery platform server")]
struct Cli {
    /// TOML configuration file; PARCELHUB_* variables override it.
    #[arg(long, short, global = true, env = "PARCELHUB_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP and websocket server.
    Serve,
    /// Write every stored entity as line-delimited JSON.
    Dump {
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Load entities written by `dump`.
    Load {
        #[arg(long, short)]
        input: PathBuf,
    },
    /// Make an existing account an administrator.
    GrantAdmin { email: String },
    /// Print the OpenAPI document.
    Openapi,
    /// Print fresh random keys in configuration syntax.
    GenKeys,
}

fn key() -> String {
    let mut bytes = [0u8; 32];
    rand::rngs::OsRng.fill_bytes(&mut bytes);
    STANDARD.encode(bytes)
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();
    let cli = Cli::parse();
    let config = || Config::load(cli.config.as_deref());

    match &cli.command {
        Command::Serve => {
            let config = config()?;
            let store = Arc::new(config.open_store()?);
            let platform = Arc::new(config.platform(store)?);
            let transport = Arc::from(config.transport()?);
            let listener = tokio::net::TcpListener::bind(config.listen).await?;
            let intervals = Intervals {
                drain: config.drain_interval(),
                sweep: config.sweep_interval(),
            };
            let running = parcelhub_server::spawn(platform, listener, Some(transport), intervals)?;
            tracing::info!(addr = %running.addr, "listening");
            tokio::signal::ctrl_c().await?;
            running.shutdown().await;
        }
        Command::Dump { out } => {
            let store = config()?.open_store()?;
            let count = match out {
                Some(path) => store.dump(&mut BufWriter::new(File::create(path)?))?,
                None => store.dump(&mut io::stdout().lock())?,
            };
            eprintln!("dumped {count} entities");
        }
        Command::Load { input } => {
            let store = config()?.open_store()?;
            let count = store.load(BufReader::new(File::open(input)?))?;
            eprintln!("loaded {count} entities");
        }
        Command::GrantAdmin { email } => {
            let config = config()?;
            let platform = config.platform(Arc::new(config.open_store()?))?;
            let id = platform.grant_admin(email)?;
            eprintln!("account {id} is now an administrator");
        }
        Command::Openapi => {
            let mut out = io::stdout().lock();
            serde_json::to_writer_pretty(&mut out, &openapi::document())?;
            writeln!(out)?;
        }
        Command::GenKeys => {
            println!("signing_key = \"{}\"\n\n[encryption]\nkey_id = \"k1\"", key());
            println!("field_key = \"{}\"\nindex_key = \"{}\"", key(), key());
        }
    }
    Ok(())
}
