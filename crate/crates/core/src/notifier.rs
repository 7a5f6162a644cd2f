//! Email outbox.
//!
//! Notifications are written to the store in the same commit as the domain
//! change that triggers them, then handed to a transport by a single drainer.
//! Delivery is at-least-once: an entry is marked sent only after the
//! transport acknowledges it.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::crypto::{CryptoError, EncryptedField, FieldCipher};
use crate::store::{Lease, Store, StoreError};

pub const MAX_ATTEMPTS: u32 = 6;
pub const BACKOFF_BASE: Duration = Duration::seconds(30);
const DRAIN_LEASE: &str = "outbox-drainer";
const LEASE_TTL: Duration = Duration::seconds(60);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntryId(pub Uuid);

impl fmt::Display for EntryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutboxKind {
    VerifyEmail,
    ResetPassword,
    DeliveryCreatedSender,
    DeliveryCreatedReceiver,
    DeliveryCompleted,
}

impl OutboxKind {
    pub const ALL: [OutboxKind; 5] = [
        OutboxKind::VerifyEmail,
        OutboxKind::ResetPassword,
        OutboxKind::DeliveryCreatedSender,
        OutboxKind::DeliveryCreatedReceiver,
        OutboxKind::DeliveryCompleted,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OutboxKind::VerifyEmail => "verify_email",
            OutboxKind::ResetPassword => "reset_password",
            OutboxKind::DeliveryCreatedSender => "delivery_created_sender",
            OutboxKind::DeliveryCreatedReceiver => "delivery_created_receiver",
            OutboxKind::DeliveryCompleted => "delivery_completed",
        }
    }
}

impl FromStr for OutboxKind {
    type Err = NotifyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OutboxKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| NotifyError::UnknownKind(s.to_owned()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum NotifyError {
    #[error("unknown notification kind {0:?}")]
    UnknownKind(String),
    #[error("invalid recipient address")]
    InvalidRecipient,
    #[error("another drainer holds the outbox lease")]
    LeaseHeld,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Debug, thiserror::Error)]
#[error("transport unavailable: {0}")]
pub struct TransportError(pub String);

/// Template variables, e.g. `tracking_code`, `link`, `sender_name`.
pub type Payload = BTreeMap<String, String>;

/// A queued notification. Recipient and payload are sealed because they
/// carry personal data.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutboxEntry {
    pub entry_id: EntryId,
    pub kind: OutboxKind,
    pub recipient: EncryptedField,
    pub payload: EncryptedField,
    pub queued_at: DateTime<Utc>,
    pub sent_at: Option<DateTime<Utc>>,
    pub attempts: u32,
    pub next_attempt_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_error: Option<String>,
}

impl OutboxEntry {
    pub fn is_pending(&self) -> bool {
        self.sent_at.is_none() && self.attempts < MAX_ATTEMPTS
    }

    pub fn open(&self, cipher: &FieldCipher) -> Result<Email, NotifyError> {
        let recipient = cipher.decrypt_str(&self.recipient)?;
        let payload: Payload =
            serde_json::from_slice(&cipher.decrypt(&self.payload)?).map_err(|_| CryptoError::AuthenticationFailure)?;
        Ok(render(self.kind, recipient, &payload, self.entry_id))
    }
}

/// Builds an entry ready to be staged in the same batch as its trigger.
pub fn queue(
    cipher: &FieldCipher,
    kind: OutboxKind,
    recipient: &str,
    payload: Payload,
    now: DateTime<Utc>,
) -> Result<OutboxEntry, NotifyError> {
    if !is_plausible_email(recipient) {
        return Err(NotifyError::InvalidRecipient);
    }
    let payload = serde_json::to_vec(&payload).expect("string map serializes");
    Ok(OutboxEntry {
        entry_id: EntryId(Uuid::new_v4()),
        kind,
        recipient: cipher.encrypt_str(recipient.trim()),
        payload: cipher.encrypt(&payload),
        queued_at: now,
        sent_at: None,
        attempts: 0,
        next_attempt_at: now,
        last_error: None,
    })
}

/// Syntactic check only: one `@`, non-empty local part, dotted domain.
pub fn is_plausible_email(address: &str) -> bool {
    let address = address.trim();
    let Some((local, domain)) = address.split_once('@') else {
        return false;
    };
    !local.is_empty()
        && !domain.contains('@')
        && domain.contains('.')
        && !domain.starts_with('.')
        && !domain.ends_with('.')
        && !address.chars().any(|c| c.is_whitespace() || c.is_control())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Email {
    pub entry_id: EntryId,
    pub kind: OutboxKind,
    pub to: String,
    pub subject: String,
    pub body: String,
}

fn render(kind: OutboxKind, to: String, payload: &Payload, entry_id: EntryId) -> Email {
    let get = |key: &str| payload.get(key).map(String::as_str).unwrap_or("");
    let (subject, body) = match kind {
        OutboxKind::VerifyEmail => (
            "Confirm your email address".to_owned(),
            format!(
                "Welcome! Confirm your address to activate the account:\n\n{}\n",
                get("link")
            ),
        ),
        OutboxKind::ResetPassword => (
            "Password reset".to_owned(),
            format!(
                "Use this link to choose a new password:\n\n{}\n\nIgnore this message if you did not ask for it.\n",
                get("link")
            ),
        ),
        OutboxKind::DeliveryCreatedSender => (
            format!("Parcel {} registered", get("tracking_code")),
            format!(
                "Your parcel for {} is waiting for a courier.\nTracking code: {}\n{}\n",
                get("receiver_name"),
                get("tracking_code"),
                get("link")
            ),
        ),
        OutboxKind::DeliveryCreatedReceiver => (
            "A parcel is on its way to you".to_owned(),
            format!(
                "{} sent you a parcel.\nTracking code: {}\n{}\n",
                get("sender_name"),
                get("tracking_code"),
                get("link")
            ),
        ),
        OutboxKind::DeliveryCompleted => (
            format!("Parcel {} delivered", get("tracking_code")),
            format!("Your parcel {} was delivered.\n", get("tracking_code")),
        ),
    };
    Email {
        entry_id,
        kind,
        to,
        subject,
        body,
    }
}

pub trait Transport: Send + Sync {
    fn send(&self, email: &Email) -> Result<(), TransportError>;
}

/// Writes one RFC 5322 message per email into a directory.
#[derive(Clone, Debug)]
pub struct FileTransport {
    dir: PathBuf,
    from: String,
}

impl FileTransport {
    pub fn new(dir: impl Into<PathBuf>, from: impl Into<String>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, from: from.into() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl Transport for FileTransport {
    fn send(&self, email: &Email) -> Result<(), TransportError> {
        let message = format!(
            "From: {}\r\nTo: {}\r\nSubject: {}\r\nMessage-ID: <{}@parcelhub>\r\nX-Parcelhub-Kind: {}\r\nContent-Type: text/plain; charset=utf-8\r\n\r\n{}",
            self.from,
            email.to,
            email.subject,
            email.entry_id,
            email.kind.as_str(),
            email.body.replace('\n', "\r\n"),
        );
        // Write then rename so readers never observe a partial file.
        let tmp = self.dir.join(format!(".{}.tmp", email.entry_id));
        let path = self.dir.join(format!("{}.eml", email.entry_id));
        fs::write(&tmp, message)
            .and_then(|()| fs::rename(&tmp, &path))
            .map_err(|e| TransportError(e.to_string()))
    }
}

/// Plain SMTP relay, for a local MTA or a relay reached over a private
/// network.
pub struct SmtpTransport {
    inner: lettre::SmtpTransport,
    from: lettre::message::Mailbox,
}

impl SmtpTransport {
    pub fn new(
        host: &str,
        port: u16,
        from: &str,
        credentials: Option<(String, String)>,
    ) -> Result<Self, TransportError> {
        let from = from
            .parse()
            .map_err(|e| TransportError(format!("bad sender address: {e}")))?;
        let mut builder = lettre::SmtpTransport::builder_dangerous(host)
            .port(port)
            .timeout(Some(std::time::Duration::from_secs(10)));
        if let Some((user, pass)) = credentials {
            builder = builder.credentials(lettre::transport::smtp::authentication::Credentials::new(user, pass));
        }
        Ok(Self {
            inner: builder.build(),
            from,
        })
    }
}

impl Transport for SmtpTransport {
    fn send(&self, email: &Email) -> Result<(), TransportError> {
        use lettre::Transport as _;
        let to = email
            .to
            .parse()
            .map_err(|e| TransportError(format!("bad recipient: {e}")))?;
        let message = lettre::Message::builder()
            .from(self.from.clone())
            .to(to)
            .subject(email.subject.clone())
            .body(email.body.clone())
            .map_err(|e| TransportError(e.to_string()))?;
        self.inner
            .send(&message)
            .map(|_| ())
            .map_err(|e| TransportError(e.to_string()))
    }
}

/// Keeps sent mail in memory; tests can make it fail on demand.
#[derive(Clone, Default)]
pub struct MemoryTransport {
    sent: Arc<Mutex<Vec<Email>>>,
    failures_left: Arc<Mutex<u32>>,
}

impl MemoryTransport {
    pub fn new() -> Self {
        Self::default()
    }

    /// The next `n` sends fail.
    pub fn fail_next(&self, n: u32) {
        *self.failures_left.lock() = n;
    }

    pub fn sent(&self) -> Vec<Email> {
        self.sent.lock().clone()
    }
}

impl Transport for MemoryTransport {
    fn send(&self, email: &Email) -> Result<(), TransportError> {
        let mut failures = self.failures_left.lock();
        if *failures > 0 {
            *failures -= 1;
            return Err(TransportError("scripted failure".into()));
        }
        self.sent.lock().push(email.clone());
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DrainReport {
    pub sent: usize,
    pub failed: usize,
}

/// Delay before the attempt following `attempts` failures: 30 s, 60 s, ...
pub fn backoff(attempts: u32) -> Duration {
    BACKOFF_BASE * 2i32.pow(attempts.saturating_sub(1).min(16))
}

pub struct Drainer {
    holder: Uuid,
}

impl Default for Drainer {
    fn default() -> Self {
        Self::new()
    }
}

impl Drainer {
    pub fn new() -> Self {
        Self { holder: Uuid::new_v4() }
    }

    /// Sends up to `batch_size` due entries, oldest first.
    pub fn drain(
        &self,
        store: &Store,
        cipher: &FieldCipher,
        transport: &dyn Transport,
        batch_size: usize,
        now: DateTime<Utc>,
    ) -> Result<DrainReport, NotifyError> {
        self.acquire(store, now)?;
        let result = self.drain_locked(store, cipher, transport, batch_size, now);
        self.release(store)?;
        result
    }

    fn drain_locked(
        &self,
        store: &Store,
        cipher: &FieldCipher,
        transport: &dyn Transport,
        batch_size: usize,
        now: DateTime<Utc>,
    ) -> Result<DrainReport, NotifyError> {
        let mut due = store.list::<OutboxEntry>(|e| e.is_pending() && e.next_attempt_at <= now);
        due.sort_by_key(|e| (e.queued_at, e.entry_id));
        due.truncate(batch_size);

        let mut report = DrainReport::default();
        for entry in due {
            let outcome = entry
                .open(cipher)
                .map_err(|e| TransportError(e.to_string()))
                .and_then(|email| transport.send(&email));
            let attempts = entry.attempts + 1;
            match outcome {
                Ok(()) => {
                    report.sent += 1;
                    store.conditional_update::<OutboxEntry>(
                        &entry.entry_id,
                        |e| e.sent_at.is_none(),
                        |e| {
                            e.attempts = attempts;
                            e.sent_at = Some(now);
                            e.last_error = None;
                        },
                    )?;
                }
                Err(err) => {
                    report.failed += 1;
                    tracing::warn!(entry = %entry.entry_id, attempts, error = %err.0, "email send failed");
                    store.conditional_update::<OutboxEntry>(
                        &entry.entry_id,
                        |e| e.sent_at.is_none(),
                        |e| {
                            e.attempts = attempts;
                            e.next_attempt_at = now + backoff(attempts);
                            e.last_error = Some(err.0.clone());
                        },
                    )?;
                }
            }
        }
        Ok(report)
    }

    fn acquire(&self, store: &Store, now: DateTime<Utc>) -> Result<(), NotifyError> {
        store.transact(|tables, batch| {
            if let Some(lease) = tables.leases.get(DRAIN_LEASE) {
                if lease.holder != self.holder && lease.expires_at > now {
                    return Err(NotifyError::LeaseHeld);
                }
            }
            batch.put(Lease {
                name: DRAIN_LEASE.to_owned(),
                holder: self.holder,
                expires_at: now + LEASE_TTL,
            });
            Ok(())
        })
    }

    fn release(&self, store: &Store) -> Result<(), NotifyError> {
        store.transact(|tables, batch| {
            if tables.leases.get(DRAIN_LEASE).is_some_and(|l| l.holder == self.holder) {
                batch.delete::<Lease>(DRAIN_LEASE.to_owned());
            }
            Ok::<_, NotifyError>(())
        })
    }
}
