use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use parking_lot::Mutex;
use serde::Serialize;

/// Endpoints with an average request-time budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Registration,
    Login,
    PasswordUpdate,
    DeliveryCreation,
    Tracking,
    History,
    CourierRegistration,
    Closest,
    Accept,
    StateChange,
    Routes,
    Statistics,
}

impl Endpoint {
    pub const ALL: [Endpoint; 12] = [
        Endpoint::Registration,
        Endpoint::Login,
        Endpoint::PasswordUpdate,
        Endpoint::DeliveryCreation,
        Endpoint::Tracking,
        Endpoint::History,
        Endpoint::CourierRegistration,
        Endpoint::Closest,
        Endpoint::Accept,
        Endpoint::StateChange,
        Endpoint::Routes,
        Endpoint::Statistics,
    ];

    /// Mean request time budget in seconds.
    pub fn budget_secs(self) -> f64 {
        match self {
            Endpoint::Registration => 0.7,
            Endpoint::Login => 0.5,
            Endpoint::PasswordUpdate => 0.2,
            Endpoint::DeliveryCreation => 0.5,
            Endpoint::Tracking => 0.1,
            Endpoint::History => 0.2,
            Endpoint::CourierRegistration => 0.2,
            Endpoint::Closest => 0.6,
            Endpoint::Accept => 0.5,
            Endpoint::StateChange => 0.5,
            Endpoint::Routes => 0.7,
            Endpoint::Statistics => 0.1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Endpoint::Registration => "registration",
            Endpoint::Login => "login",
            Endpoint::PasswordUpdate => "password update",
            Endpoint::DeliveryCreation => "delivery creation",
            Endpoint::Tracking => "tracking",
            Endpoint::History => "history",
            Endpoint::CourierRegistration => "courier registration",
            Endpoint::Closest => "closest",
            Endpoint::Accept => "accept",
            Endpoint::StateChange => "state change",
            Endpoint::Routes => "routes",
            Endpoint::Statistics => "statistics",
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Latency samples, shared by every simulated actor.
#[derive(Default)]
pub struct Recorder {
    samples: Mutex<BTreeMap<Endpoint, Vec<f64>>>,
    publish: Mutex<Vec<f64>>,
    errors: Mutex<Vec<String>>,
}

impl Recorder {
    pub fn record(&self, endpoint: Endpoint, elapsed: Duration) {
        self.samples
            .lock()
            .entry(endpoint)
            .or_default()
            .push(elapsed.as_secs_f64());
    }

    pub fn record_publish(&self, elapsed: Duration) {
        self.publish.lock().push(elapsed.as_secs_f64());
    }

    pub fn error(&self, message: impl Into<String>) {
        let message = message.into();
        tracing::warn!(%message, "protocol error");
        self.errors.lock().push(message);
    }

    pub fn samples(&self, endpoint: Endpoint) -> Vec<f64> {
        self.samples.lock().get(&endpoint).cloned().unwrap_or_default()
    }

    pub fn summarize(&self, slack: f64) -> Vec<Row> {
        Endpoint::ALL
            .into_iter()
            .map(|e| Row::new(e, &self.samples(e), slack))
            .collect()
    }

    pub fn publish_stats(&self) -> Stats {
        Stats::of(&self.publish.lock())
    }

    pub fn errors(&self) -> Vec<String> {
        self.errors.lock().clone()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Stats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
}

impl Stats {
    pub fn of(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Stats::default();
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        // Nearest-rank percentiles.
        let rank = |q: f64| sorted[((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1];
        Stats {
            count: sorted.len(),
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            median: rank(0.5),
            p95: rank(0.95),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
    /// No samples were taken.
    Skip,
}

#[derive(Clone, Debug, Serialize)]
pub struct Row {
    pub endpoint: Endpoint,
    pub stats: Stats,
    pub budget: f64,
    pub verdict: Verdict,
}

impl Row {
    fn new(endpoint: Endpoint, samples: &[f64], slack: f64) -> Self {
        let stats = Stats::of(samples);
        let budget = endpoint.budget_secs() * slack;
        let verdict = match stats.count {
            0 => Verdict::Skip,
            _ if stats.mean <= budget => Verdict::Pass,
            _ => Verdict::Fail,
        };
        Row {
            endpoint,
            stats,
            budget,
            verdict,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Conservation {
    pub created: usize,
    pub ready: usize,
    pub assigned: usize,
    pub delivering: usize,
    pub delivered: usize,
    pub undeliverable: usize,
}

impl Conservation {
    pub fn accounted(&self) -> usize {
        self.ready + self.assigned + self.delivering + self.delivered + self.undeliverable
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub rows: Vec<Row>,
    pub websocket_publish: Stats,
    pub conservation: Conservation,
    pub protocol_errors: Vec<String>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.protocol_errors.is_empty()
            && self.rows.iter().all(|r| r.verdict != Verdict::Fail)
            && self.conservation.accounted() == self.conservation.created
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<22} {:>6} {:>9} {:>9} {:>9} {:>8}  verdict",
            "endpoint", "count", "mean s", "median s", "p95 s", "budget"
        )?;
        for row in &self.rows {
            writeln!(
                f,
                "{:<22} {:>6} {:>9.4} {:>9.4} {:>9.4} {:>8.2}  {:?}",
                row.endpoint.label(),
                row.stats.count,
                row.stats.mean,
                row.stats.median,
                row.stats.p95,
                row.budget,
                row.verdict
            )?;
        }
        let ws = self.websocket_publish;
        writeln!(
            f,
            "{:<22} {:>6} {:>9.4} {:>9.4} {:>9.4} {:>8}  (not budgeted)",
            "websocket publish", ws.count, ws.mean, ws.median, ws.p95, "-"
        )?;
        let c = &self.conservation;
        writeln!(
            f,
            "deliveries: created {} = ready {} + assigned {} + delivering {} + delivered {} + undeliverable {}",
            c.created, c.ready, c.assigned, c.delivering, c.delivered, c.undeliverable
        )?;
        for e in &self.protocol_errors {
            writeln!(f, "protocol error: {e}")?;
        }
        write!(f, "{}", if self.passed() { "PASS" } else { "FAIL" })
    }
}
