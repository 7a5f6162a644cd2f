//! Parcel delivery platform core: domain model, credentials, field
//! encryption, the embedded store, dispatch, live tracking and the email
//! outbox. Transport-agnostic; the HTTP server wraps [`Platform`].

pub mod accounts;
pub mod admin;
pub mod auth;
pub mod clock;
pub mod crypto;
pub mod dispatch;
pub mod domain;
pub mod error;
pub mod geo;
pub mod notifier;
pub mod platform;
pub mod realtime;
pub mod store;

pub use error::{Error, ErrorKind, Result};
pub use platform::{Caller, EtaModel, Platform, PlatformBuilder, PlatformConfig};
