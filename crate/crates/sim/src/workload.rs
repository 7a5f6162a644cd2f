//! Simulated senders and couriers.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::{SinkExt, StreamExt};
use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

use crate::client::{Client, Session};
use crate::mail::Mailbox;
use crate::report::{Conservation, Recorder, Report};
use crate::SimError;

/// Centre of the simulated city.
const CENTRE: (f64, f64) = (44.8125, 20.4612);
/// Half-width of the square the simulated addresses fall in, in degrees.
const SPREAD: f64 = 0.04;
const PASSWORD: &str = "sim-password-1";
const NEW_PASSWORD: &str = "sim-password-2";
const CLOSEST_LIMIT: usize = 5;
const ECHO_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Clone, Debug)]
pub struct Options {
    pub base_url: String,
    /// Where the service's file mail transport writes messages.
    pub mail_dir: PathBuf,
    pub senders: usize,
    pub couriers: usize,
    /// Deliveries created per minute, across all senders.
    pub rate_per_min: f64,
    pub duration: Duration,
    pub seed: u64,
    /// Multiplier applied to every latency budget.
    pub slack: f64,
    /// Location updates per trip.
    pub steps: u32,
    /// Time between location updates.
    pub cadence: Duration,
    pub mail_timeout: Duration,
    /// Distinguishes the accounts of one run from another.
    pub tag: String,
}

impl Options {
    pub fn new(base_url: impl Into<String>, mail_dir: impl Into<PathBuf>) -> Self {
        Options {
            base_url: base_url.into(),
            mail_dir: mail_dir.into(),
            senders: 3,
            couriers: 2,
            rate_per_min: 6.0,
            duration: Duration::from_secs(60),
            seed: 1,
            slack: 1.0,
            steps: 5,
            cadence: Duration::from_secs(4),
            mail_timeout: Duration::from_secs(30),
            tag: "sim".to_owned(),
        }
    }

    pub fn sender_email(&self, i: usize) -> String {
        format!("sender{i}.{}@sim.example.org", self.tag)
    }

    pub fn courier_email(&self, i: usize) -> String {
        format!("courier{i}.{}@sim.example.org", self.tag)
    }

    fn check(&self) -> Result<(), SimError> {
        if self.senders == 0 {
            return Err(SimError::Config("at least one sender is needed".into()));
        }
        if !(self.rate_per_min.is_finite() && self.rate_per_min > 0.0) {
            return Err(SimError::Config("rate must be positive".into()));
        }
        if !(self.slack.is_finite() && self.slack > 0.0) {
            return Err(SimError::Config("slack must be positive".into()));
        }
        if self.steps == 0 {
            return Err(SimError::Config("steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Point {
    pub lat: f64,
    pub lon: f64,
}

impl Point {
    fn lerp(self, to: Point, t: f64) -> Point {
        Point {
            lat: self.lat + (to.lat - self.lat) * t,
            lon: self.lon + (to.lon - self.lon) * t,
        }
    }
}

fn random_point(rng: &mut impl Rng) -> Point {
    Point {
        lat: CENTRE.0 + rng.gen_range(-SPREAD..SPREAD),
        lon: CENTRE.1 + rng.gen_range(-SPREAD..SPREAD),
    }
}

/// Deterministic stream of delivery requests for one sender.
pub struct Planner {
    rng: ChaCha8Rng,
    sender: usize,
    senders: usize,
}

impl Planner {
    pub fn new(seed: u64, sender: usize, senders: usize) -> Self {
        Planner {
            rng: ChaCha8Rng::seed_from_u64(seed ^ (sender as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)),
            sender,
            senders,
        }
    }

    /// The next request and the index of the sender it is addressed to.
    pub fn next_request(&mut self, options: &Options) -> (Value, usize) {
        let rng = &mut self.rng;
        // Address another simulated sender when there is one, so received
        // histories fill up too.
        let receiver = if self.senders > 1 {
            (self.sender + rng.gen_range(1..self.senders)) % self.senders
        } else {
            self.sender
        };
        let source = random_point(rng);
        let destination = random_point(rng);
        let weight = ["light", "medium", "heavy"][rng.gen_range(0..3)];
        let payload = json!({
            "item": {
                "width_cm": rng.gen_range(5..80),
                "height_cm": rng.gen_range(5..80),
                "depth_cm": rng.gen_range(5..80),
                "weight_class": weight,
                "fragile": rng.gen_bool(0.2),
                "description": "simulated parcel",
            },
            "source": {
                "address_text": format!("Pickup {}", rng.gen_range(1..500)),
                "latitude": source.lat,
                "longitude": source.lon,
            },
            "destination": {
                "address_text": format!("Dropoff {}", rng.gen_range(1..500)),
                "latitude": destination.lat,
                "longitude": destination.lon,
            },
            "receiver": {
                "first_name": "Receiver",
                "last_name": format!("No{receiver}"),
                "email": options.sender_email(receiver),
            },
        });
        (payload, receiver)
    }
}

/// Register, verify by mail, log in, then change the password through the
/// emailed reset link and log in again.
async fn onboard(client: &Client, mailbox: &Mailbox, options: &Options, email: &str) -> Result<Session, SimError> {
    client.register(email, PASSWORD, "Sim", "Account").await?;
    let token = mailbox.wait_token(email, "verify_email", options.mail_timeout).await?;
    client.verify(&token).await?;
    client.login(email, PASSWORD).await?;

    client.request_reset(email).await?;
    let token = mailbox
        .wait_token(email, "reset_password", options.mail_timeout)
        .await?;
    client.confirm_reset(&token, NEW_PASSWORD).await?;
    match client.login(email, PASSWORD).await {
        Err(SimError::Http { status: 401, .. }) => {}
        Ok(_) => return Err(SimError::Protocol(format!("old password still works for {email}"))),
        Err(e) => return Err(e),
    }
    client.login(email, NEW_PASSWORD).await
}

async fn onboard_courier(
    client: &Client,
    mailbox: &Mailbox,
    options: &Options,
    email: &str,
    vehicle: &str,
) -> Result<Session, SimError> {
    let mut session = onboard(client, mailbox, options, email).await?;
    client.register_courier(&mut session, vehicle).await?;
    // The role travels in the token, so log in again.
    client.login(email, NEW_PASSWORD).await
}

struct Shared {
    client: Client,
    options: Options,
    stop_at: Instant,
    /// Every delivery the simulation created, with the state it should be in.
    expected: Mutex<HashMap<String, &'static str>>,
    created_order: Mutex<Vec<(String, usize)>>,
}

impl Shared {
    fn stopped(&self) -> bool {
        Instant::now() >= self.stop_at
    }

    fn expect(&self, code: &str, state: &'static str) {
        self.expected.lock().insert(code.to_owned(), state);
    }

    fn recorder(&self) -> &Recorder {
        self.client.recorder()
    }
}

async fn sleep_until_or_stop(shared: &Shared, at: Instant) {
    let until = at.min(shared.stop_at);
    tokio::time::sleep_until(until.into()).await;
}

async fn sender_loop(shared: Arc<Shared>, index: usize, mut session: Session) {
    let options = &shared.options;
    let client = &shared.client;
    let mut planner = Planner::new(options.seed, index, options.senders);
    let period = Duration::from_secs_f64(60.0 * options.senders as f64 / options.rate_per_min);
    let mut next = Instant::now() + Duration::from_secs_f64(60.0 * index as f64 / options.rate_per_min);
    loop {
        sleep_until_or_stop(&shared, next).await;
        if shared.stopped() {
            return;
        }
        next += period;
        let (payload, _) = planner.next_request(options);
        let code = match client.create_delivery(&mut session, &payload).await {
            Ok(view) => match view["tracking_code"].as_str() {
                Some(code) => code.to_owned(),
                None => {
                    shared
                        .recorder()
                        .error(format!("creation answered without a tracking code: {view}"));
                    continue;
                }
            },
            Err(e) => {
                shared.recorder().error(format!("create delivery: {e}"));
                continue;
            }
        };
        shared.expect(&code, "ready");
        shared.created_order.lock().push((code.clone(), index));

        if let Err(e) = sender_reads(client, &mut session, &code).await {
            shared.recorder().error(format!("sender reads for {code}: {e}"));
        }
    }
}

/// The reads a sender performs after creating a delivery.
async fn sender_reads(client: &Client, session: &mut Session, code: &str) -> Result<(), SimError> {
    let anonymous = client.track(None, code).await?;
    if anonymous.get("receiver").is_some() {
        return Err(SimError::Protocol(format!(
            "anonymous tracking of {code} shows the receiver"
        )));
    }
    client.track(Some(session), code).await?;
    let sent = client.history(session, "sent").await?;
    if sent[0]["tracking_code"] != code {
        return Err(SimError::Protocol(format!("newest sent delivery is not {code}")));
    }
    client.history(session, "received").await?;
    client.statistics(session, 12).await?;
    client.routes(None).await?;
    Ok(())
}

async fn courier_loop(shared: Arc<Shared>, index: usize, mut session: Session) {
    let mut rng = ChaCha8Rng::seed_from_u64(shared.options.seed.wrapping_add(1000 + index as u64));
    let mut position = random_point(&mut rng);
    while !shared.stopped() {
        match courier_trip(&shared, &mut session, position).await {
            Ok(Some(end)) => position = end,
            Ok(None) => sleep_until_or_stop(&shared, Instant::now() + Duration::from_millis(500)).await,
            Err(e) => {
                shared.recorder().error(format!("courier {index}: {e}"));
                sleep_until_or_stop(&shared, Instant::now() + Duration::from_secs(1)).await;
            }
        }
    }
}

fn point_of(place: &Value) -> Option<Point> {
    Some(Point {
        lat: place["location"]["latitude"].as_f64()?,
        lon: place["location"]["longitude"].as_f64()?,
    })
}

/// Finds, accepts and completes one delivery. Returns where the courier
/// ended up, or `None` when nothing could be accepted.
async fn courier_trip(shared: &Shared, session: &mut Session, at: Point) -> Result<Option<Point>, SimError> {
    let client = &shared.client;
    let offers = client.closest(session, at.lat, at.lon, CLOSEST_LIMIT).await?;
    let offers = offers
        .as_array()
        .ok_or_else(|| SimError::Protocol("closest did not return a list".into()))?;

    let mut accepted = None;
    for offer in offers {
        let code = offer["tracking_code"]
            .as_str()
            .ok_or_else(|| SimError::Protocol("offer without a tracking code".into()))?;
        match client.change_state(session, code, "assigned").await {
            Ok(_) => {
                accepted = Some(offer.clone());
                shared.expect(code, "assigned");
                break;
            }
            // Another courier was faster.
            Err(SimError::Http { status: 409, .. }) => {}
            Err(e) => return Err(e),
        }
    }
    let Some(delivery) = accepted else {
        return Ok(None);
    };
    let code = delivery["tracking_code"].as_str().unwrap_or_default().to_owned();
    let (Some(from), Some(to)) = (point_of(&delivery["source"]), point_of(&delivery["destination"])) else {
        return Err(SimError::Protocol(format!("delivery {code} lacks coordinates")));
    };

    let url = client.delivery_socket(&code, Some(session));
    let (mut socket, _) = tokio_tungstenite::connect_async(url.as_str())
        .await
        .map_err(|e| SimError::Unreachable(format!("websocket: {e}")))?;

    client.change_state(session, &code, "delivering").await?;
    shared.expect(&code, "delivering");

    let steps = shared.options.steps;
    for step in 1..=steps {
        tokio::time::sleep(shared.options.cadence).await;
        let here = from.lerp(to, f64::from(step) / f64::from(steps));
        let frame = json!({"lat": here.lat, "lon": here.lon}).to_string();
        let sent_at = Instant::now();
        socket
            .send(Message::Text(frame.into()))
            .await
            .map_err(|e| SimError::Unreachable(format!("websocket send: {e}")))?;
        let echo = tokio::time::timeout(ECHO_TIMEOUT, async {
            while let Some(message) = socket.next().await {
                match message {
                    Ok(Message::Text(text)) => {
                        let value: Value = serde_json::from_str(&text)
                            .map_err(|e| SimError::Protocol(format!("websocket frame: {e}")))?;
                        if value.get("error").is_some() {
                            return Err(SimError::Protocol(format!("publish rejected: {value}")));
                        }
                        if value["delivery_id"] == code.as_str() && value["lat"].as_f64() == Some(here.lat) {
                            return Ok(value);
                        }
                    }
                    Ok(Message::Close(_)) => break,
                    Ok(_) => {}
                    Err(e) => return Err(SimError::Unreachable(format!("websocket: {e}"))),
                }
            }
            Err(SimError::Protocol("websocket closed before the echo".into()))
        })
        .await
        .map_err(|_| SimError::Protocol(format!("no echo within {ECHO_TIMEOUT:?}")))??;
        shared.recorder().record_publish(sent_at.elapsed());
        if echo["courier_id"].is_null() {
            return Err(SimError::Protocol("location broadcast without courier_id".into()));
        }
    }

    client.change_state(session, &code, "delivered").await?;
    shared.expect(&code, "delivered");
    let _ = socket.close(None).await;
    Ok(Some(to))
}

/// Every created delivery must be findable and in the state the
/// simulation drove it to.
async fn conserve(shared: &Shared, senders: &mut [Session]) -> Conservation {
    let client = &shared.client;
    let expected = shared.expected.lock().clone();
    let mut tally = Conservation {
        created: shared.created_order.lock().len(),
        ..Conservation::default()
    };
    for (code, want) in &expected {
        match client.track(None, code).await {
            Ok(view) => {
                let state = view["state"].as_str().unwrap_or_default();
                match state {
                    "ready" => tally.ready += 1,
                    "assigned" => tally.assigned += 1,
                    "delivering" => tally.delivering += 1,
                    "delivered" => tally.delivered += 1,
                    "undeliverable" => tally.undeliverable += 1,
                    other => shared.recorder().error(format!("{code} has unknown state {other:?}")),
                }
                if state != *want {
                    shared.recorder().error(format!("{code} is {state}, expected {want}"));
                }
            }
            Err(e) => shared.recorder().error(format!("{code} lost: {e}")),
        }
    }
    let created = shared.created_order.lock().clone();
    for (index, session) in senders.iter_mut().enumerate() {
        let mine = created.iter().filter(|(_, s)| *s == index).count();
        match client.history(session, "sent").await {
            Ok(list) if list.as_array().map(Vec::len) == Some(mine) => {}
            Ok(list) => shared.recorder().error(format!(
                "sender {index} created {mine} deliveries but history lists {}",
                list.as_array().map(Vec::len).unwrap_or(0)
            )),
            Err(e) => shared.recorder().error(format!("sender {index} history: {e}")),
        }
    }
    tally
}

async fn onboard_all(
    client: &Client,
    mailbox: &Mailbox,
    options: &Options,
) -> Result<(Vec<Session>, Vec<Session>), SimError> {
    let senders = futures::future::try_join_all(
        (0..options.senders).map(|i| async move { onboard(client, mailbox, options, &options.sender_email(i)).await }),
    );
    let couriers = futures::future::try_join_all((0..options.couriers).map(|i| async move {
        let vehicle = ["small", "medium", "large"][i % 3];
        onboard_courier(client, mailbox, options, &options.courier_email(i), vehicle).await
    }));
    futures::try_join!(senders, couriers)
}

/// Runs the full workload and reports latencies against their budgets.
pub async fn run(options: Options) -> Result<Report, SimError> {
    options.check()?;
    let recorder = Arc::new(Recorder::default());
    let client = Client::new(&options.base_url, Arc::clone(&recorder))?;
    let mailbox = Mailbox::new(&options.mail_dir);

    let (senders, couriers) = onboard_all(&client, &mailbox, &options).await?;
    tracing::info!(senders = senders.len(), couriers = couriers.len(), "accounts ready");

    let shared = Arc::new(Shared {
        client,
        stop_at: Instant::now() + options.duration,
        options,
        expected: Mutex::new(HashMap::new()),
        created_order: Mutex::new(Vec::new()),
    });
    let mut tasks = Vec::new();
    for (i, session) in senders.iter().cloned().enumerate() {
        tasks.push(tokio::spawn(sender_loop(Arc::clone(&shared), i, session)));
    }
    for (i, session) in couriers.into_iter().enumerate() {
        tasks.push(tokio::spawn(courier_loop(Arc::clone(&shared), i, session)));
    }
    for task in tasks {
        if let Err(e) = task.await {
            recorder.error(format!("actor crashed: {e}"));
        }
    }

    let mut senders = senders;
    let conservation = conserve(&shared, &mut senders).await;
    Ok(Report {
        rows: recorder.summarize(shared.options.slack),
        websocket_publish: recorder.publish_stats(),
        conservation,
        protocol_errors: recorder.errors(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SeedSummary {
    pub password: &'static str,
    pub senders: Vec<String>,
    pub couriers: Vec<String>,
    pub tracking_codes: Vec<String>,
}

/// Creates accounts and `deliveries` ready deliveries, all derived from the
/// seed, so a fresh service ends up with the same fixture every time.
pub async fn seed(options: Options, deliveries: usize) -> Result<SeedSummary, SimError> {
    options.check()?;
    let recorder = Arc::new(Recorder::default());
    let client = Client::new(&options.base_url, recorder)?;
    let mailbox = Mailbox::new(&options.mail_dir);
    let (mut senders, _) = onboard_all(&client, &mailbox, &options).await?;

    let mut planners: Vec<Planner> = (0..options.senders)
        .map(|i| Planner::new(options.seed, i, options.senders))
        .collect();
    let mut tracking_codes = Vec::with_capacity(deliveries);
    for n in 0..deliveries {
        let i = n % options.senders;
        let (payload, _) = planners[i].next_request(&options);
        let view = client.create_delivery(&mut senders[i], &payload).await?;
        let code = view["tracking_code"]
            .as_str()
            .ok_or_else(|| SimError::Protocol("creation answered without a tracking code".into()))?;
        tracking_codes.push(code.to_owned());
    }
    Ok(SeedSummary {
        password: NEW_PASSWORD,
        senders: (0..options.senders).map(|i| options.sender_email(i)).collect(),
        couriers: (0..options.couriers).map(|i| options.courier_email(i)).collect(),
        tracking_codes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plans_are_reproducible() {
        let options = Options::new("http://localhost", "/tmp");
        let take = |seed| {
            let mut p = Planner::new(seed, 1, 3);
            (0..5).map(|_| p.next_request(&options)).collect::<Vec<_>>()
        };
        assert_eq!(take(7), take(7));
        assert_ne!(take(7), take(8));
    }

    #[test]
    fn receivers_are_other_senders() {
        let options = Options::new("http://localhost", "/tmp");
        let mut p = Planner::new(3, 2, 4);
        for _ in 0..50 {
            let (payload, receiver) = p.next_request(&options);
            assert_ne!(receiver, 2);
            assert!(receiver < 4);
            assert_eq!(payload["receiver"]["email"], options.sender_email(receiver));
            let lat = payload["source"]["latitude"].as_f64().unwrap();
            assert!((lat - CENTRE.0).abs() < SPREAD);
        }
        let mut alone = Planner::new(3, 0, 1);
        assert_eq!(alone.next_request(&options).1, 0);
    }

    #[test]
    fn option_checks() {
        let mut options = Options::new("http://localhost", "/tmp");
        assert!(options.check().is_ok());
        options.rate_per_min = 0.0;
        assert!(matches!(options.check(), Err(SimError::Config(_))));
    }

    #[test]
    fn interpolation() {
        let a = Point { lat: 0.0, lon: 10.0 };
        let b = Point { lat: 2.0, lon: 20.0 };
        assert_eq!(a.lerp(b, 0.5), Point { lat: 1.0, lon: 15.0 });
        assert_eq!(a.lerp(b, 1.0), b);
    }
}
