//! Drives a running service through its public HTTP and websocket
//! interface with simulated senders and couriers, and reports request
//! latencies against their budgets.

pub mod client;
pub mod mail;
pub mod report;
pub mod workload;

pub use report::{Endpoint, Report, Verdict};
pub use workload::{run, seed, Options, SeedSummary};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("service unreachable: {0}")]
    Unreachable(String),
    #[error("HTTP {status} {code}: {message}")]
    Http { status: u16, code: String, message: String },
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("mail: {0}")]
    Mail(String),
    #[error("options: {0}")]
    Config(String),
}
