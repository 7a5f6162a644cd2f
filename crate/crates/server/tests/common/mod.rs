#![allow(dead_code)]

use std::sync::{Arc, OnceLock};
use std::time::Duration;

use parcelhub_core::auth::PasswordHasher;
use parcelhub_core::clock::Clock;
use parcelhub_core::crypto::FieldCipher;
use parcelhub_core::notifier::FileTransport;
use parcelhub_core::store::Store;
use parcelhub_core::Platform;
use parcelhub_server::{Intervals, Running};
use parcelhub_sim::client::{Client, Session};
use parcelhub_sim::mail::Mailbox;
use parcelhub_sim::report::Recorder;
use reqwest::StatusCode;
use serde_json::{json, Value};
use tempfile::TempDir;

pub const PASSWORD: &str = "correct horse battery";

pub struct Server {
    pub running: Running,
    pub mail: Mailbox,
    pub http: reqwest::Client,
    pub client: Client,
    _dirs: Vec<TempDir>,
}

pub struct ServerOptions {
    pub clock: Option<Arc<dyn Clock>>,
    pub store: Option<Arc<Store>>,
    pub hasher: PasswordHasher,
    pub drain: Duration,
}

impl Default for ServerOptions {
    fn default() -> Self {
        ServerOptions {
            clock: None,
            store: None,
            hasher: PasswordHasher::fast_insecure(),
            drain: Duration::from_millis(50),
        }
    }
}

pub async fn server() -> Server {
    server_with(ServerOptions::default()).await
}

pub async fn server_with(options: ServerOptions) -> Server {
    let mail_dir = tempfile::tempdir().unwrap();
    let store = options.store.unwrap_or_else(|| Arc::new(Store::in_memory()));
    let cipher = FieldCipher::new("k1", &[3; 32], &[5; 32]).unwrap();
    let mut builder = Platform::builder(store, cipher, b"server-test-signing-key-0123456789").hasher(options.hasher);
    if let Some(clock) = options.clock {
        builder = builder.clock(clock);
    }
    let platform = Arc::new(builder.build());
    let transport = Arc::new(FileTransport::new(mail_dir.path(), "noreply@parcelhub.test").unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let intervals = Intervals {
        drain: options.drain,
        sweep: Duration::from_secs(1),
    };
    let running = parcelhub_server::spawn(platform, listener, Some(transport), intervals).unwrap();
    let client = Client::new(&running.base_url(), Arc::new(Recorder::default())).unwrap();
    Server {
        mail: Mailbox::new(mail_dir.path()),
        http: reqwest::Client::new(),
        client,
        running,
        _dirs: vec![mail_dir],
    }
}

impl Server {
    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.running.base_url())
    }

    pub fn ws_url(&self, path: &str) -> String {
        format!("ws://{}{path}", self.running.addr)
    }

    pub fn platform(&self) -> &Platform {
        &self.running.platform
    }

    /// Registers an account, follows the emailed verification link and
    /// logs in.
    pub async fn user(&self, email: &str, first: &str, last: &str) -> Session {
        self.client.register(email, PASSWORD, first, last).await.unwrap();
        let token = self
            .mail
            .wait_token(email, "verify_email", Duration::from_secs(10))
            .await
            .unwrap();
        self.client.verify(&token).await.unwrap();
        self.client.login(email, PASSWORD).await.unwrap()
    }

    pub async fn courier(&self, email: &str) -> Session {
        let mut session = self.user(email, "Cora", "Courier").await;
        self.client.register_courier(&mut session, "medium").await.unwrap();
        self.client.login(email, PASSWORD).await.unwrap()
    }

    pub async fn send(
        &self,
        sender: &mut Session,
        source: (f64, f64),
        destination: (f64, f64),
        receiver: &str,
    ) -> String {
        let view = self
            .client
            .create_delivery(sender, &payload(source, destination, receiver))
            .await
            .unwrap();
        view["tracking_code"].as_str().unwrap().to_owned()
    }

    pub async fn get(&self, path: &str, token: Option<&str>) -> (StatusCode, Value) {
        let mut request = self.http.get(self.url(path));
        if let Some(token) = token {
            request = request.bearer_auth(token);
        }
        read(request.send().await.unwrap()).await
    }

    pub async fn post(&self, path: &str, token: Option<&str>, body: &Value) -> (StatusCode, Value) {
        let mut request = self.http.post(self.url(path)).json(body);
        if let Some(token) = token {
            request = request.bearer_auth(token);
        }
        read(request.send().await.unwrap()).await
    }
}

pub async fn read(response: reqwest::Response) -> (StatusCode, Value) {
    let status = response.status();
    let bytes = response.bytes().await.unwrap();
    let body = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|e| panic!("non-JSON body ({e}): {bytes:?}"))
    };
    (status, body)
}

pub fn payload(source: (f64, f64), destination: (f64, f64), receiver: &str) -> Value {
    json!({
        "item": {"width_cm": 20, "height_cm": 10, "depth_cm": 15, "weight_class": "light", "fragile": false},
        "source": {"address_text": "Source street 1", "latitude": source.0, "longitude": source.1},
        "destination": {"address_text": "Target street 2", "latitude": destination.0, "longitude": destination.1},
        "receiver": {"first_name": "Rita", "last_name": "Receiver", "email": receiver},
    })
}

/// Validates a body against the error-envelope schema published in the
/// interface document.
pub fn is_envelope(body: &Value) -> bool {
    static VALIDATOR: OnceLock<jsonschema::Validator> = OnceLock::new();
    VALIDATOR
        .get_or_init(|| jsonschema::validator_for(&parcelhub_server::openapi::error_envelope_schema()).unwrap())
        .is_valid(body)
}
