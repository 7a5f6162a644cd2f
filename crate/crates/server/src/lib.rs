//! HTTP and websocket gateway around [`parcelhub_core::Platform`].

pub mod api;
pub mod config;
pub mod error;
pub mod extract;
pub mod openapi;
pub mod ws;

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::Request;
use axum::middleware::Next;
use axum::response::Response;
use parcelhub_core::auth::purge_expired_nonces;
use parcelhub_core::notifier::{Drainer, Transport};
use parcelhub_core::Platform;
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;

pub use api::{router, RouteSpec, ROUTES};
pub use config::Config;

/// Emails sent per drain pass.
const DRAIN_BATCH: usize = 100;

/// One structured line per request.
pub async fn log_requests(request: Request, next: Next) -> Response {
    let method = request.method().clone();
    let path = request.uri().path().to_owned();
    let started = Instant::now();
    let response = next.run(request).await;
    tracing::info!(
        target: "parcelhub::request",
        %method,
        path,
        status = response.status().as_u16(),
        latency_ms = started.elapsed().as_secs_f64() * 1000.0,
    );
    response
}

#[derive(Clone, Copy, Debug)]
pub struct Intervals {
    pub drain: Duration,
    pub sweep: Duration,
}

impl Default for Intervals {
    fn default() -> Self {
        Self {
            drain: Duration::from_secs(5),
            sweep: Duration::from_secs(5),
        }
    }
}

/// A running server with its background workers.
pub struct Running {
    pub addr: SocketAddr,
    pub platform: Arc<Platform>,
    stop: watch::Sender<bool>,
    tasks: Vec<JoinHandle<()>>,
}

impl Running {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        for task in self.tasks {
            let _ = task.await;
        }
    }

    /// Resolves when the server stops for any reason.
    pub async fn wait(mut self) {
        if let Some(first) = self.tasks.first_mut() {
            let _ = first.await;
        }
        self.shutdown().await;
    }
}

async fn stopped(mut stop: watch::Receiver<bool>) {
    while !*stop.borrow() {
        if stop.changed().await.is_err() {
            return;
        }
    }
}

fn every(
    period: Duration,
    stop: watch::Receiver<bool>,
    platform: Arc<Platform>,
    work: impl Fn(&Platform) + Send + Sync + Clone + 'static,
) -> JoinHandle<()> {
    tokio::spawn(async move {
        let mut ticker = tokio::time::interval(period);
        ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        let stop_signal = stopped(stop);
        tokio::pin!(stop_signal);
        loop {
            tokio::select! {
                _ = &mut stop_signal => break,
                _ = ticker.tick() => {
                    let platform = Arc::clone(&platform);
                    let work = work.clone();
                    let _ = tokio::task::spawn_blocking(move || work(&platform)).await;
                }
            }
        }
    })
}

/// Serves `platform` on `listener`, drains the outbox through `transport`
/// and sweeps stale publishers.
pub fn spawn(
    platform: Arc<Platform>,
    listener: TcpListener,
    transport: Option<Arc<dyn Transport>>,
    intervals: Intervals,
) -> std::io::Result<Running> {
    let addr = listener.local_addr()?;
    let (stop, stop_rx) = watch::channel(false);
    let app = router(Arc::clone(&platform));
    let server_stop = stop_rx.clone();
    let mut tasks = vec![tokio::spawn(async move {
        let serve = axum::serve(listener, app).with_graceful_shutdown(stopped(server_stop));
        if let Err(e) = serve.await {
            tracing::error!(error = %e, "server stopped");
        }
    })];

    if let Some(transport) = transport {
        let drainer = Arc::new(Drainer::new());
        tasks.push(every(
            intervals.drain,
            stop_rx.clone(),
            Arc::clone(&platform),
            move |p| match drainer.drain(p.store(), p.cipher(), transport.as_ref(), DRAIN_BATCH, p.now()) {
                Ok(report) if report.sent + report.failed > 0 => {
                    tracing::info!(sent = report.sent, failed = report.failed, "outbox drained")
                }
                Ok(_) => {}
                Err(e) => tracing::debug!(error = %e, "outbox drain skipped"),
            },
        ));
    }
    tasks.push(every(intervals.sweep, stop_rx, Arc::clone(&platform), |p| {
        let closed = p.staleness_sweep(p.now());
        if !closed.is_empty() {
            tracing::info!(closed = closed.len(), "stale publishers closed");
        }
        if let Err(e) = purge_expired_nonces(p.store(), p.now()) {
            tracing::warn!(error = %e, "nonce purge failed");
        }
    }));

    Ok(Running {
        addr,
        platform,
        stop,
        tasks,
    })
}
