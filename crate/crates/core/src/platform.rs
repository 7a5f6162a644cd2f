use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};

use crate::auth::{PasswordHasher, TokenIssuer};
use crate::clock::{Clock, SystemClock};
use crate::crypto::FieldCipher;
use crate::domain::{Account, AccountId, Courier, Person, Role};
use crate::error::{Error, Result};
use crate::geo::{DistanceProvider, Haversine};
use crate::realtime::Hub;
use crate::store::{AccountRow, Store, Tables};

/// Nominal courier speed and fixed handling time used for delivery ETAs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EtaModel {
    pub speed_mps: f64,
    pub handling: Duration,
}

impl Default for EtaModel {
    fn default() -> Self {
        // 30 km/h urban average plus a quarter hour for pickup and handover.
        Self {
            speed_mps: 8.33,
            handling: Duration::seconds(900),
        }
    }
}

impl EtaModel {
    pub fn expected_delivery_time(&self, created_at: DateTime<Utc>, distance_m: f64) -> DateTime<Utc> {
        let travel_ms = (distance_m.max(0.0) / self.speed_mps * 1000.0).round() as i64;
        created_at + Duration::milliseconds(travel_ms) + self.handling
    }
}

#[derive(Clone, Debug)]
pub struct PlatformConfig {
    /// Base URL used in emailed links.
    pub public_url: String,
    pub eta: EtaModel,
    /// Publishers silent for longer than this are disconnected.
    pub publisher_timeout: Duration,
    /// Outgoing frames buffered per websocket subscriber.
    pub subscriber_queue: usize,
    pub max_picture_bytes: usize,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        Self {
            public_url: "http://localhost:8080".to_owned(),
            eta: EtaModel::default(),
            publisher_timeout: Duration::seconds(60),
            subscriber_queue: 256,
            max_picture_bytes: 5 * 1024 * 1024,
        }
    }
}

/// Authenticated identity behind a request.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Caller {
    pub account_id: AccountId,
    pub role: Role,
}

/// The platform service. Cheap to share behind an `Arc`; every operation
/// takes `&self`.
pub struct Platform {
    pub(crate) store: Arc<Store>,
    pub(crate) cipher: FieldCipher,
    pub(crate) hasher: PasswordHasher,
    pub(crate) tokens: TokenIssuer,
    pub(crate) clock: Arc<dyn Clock>,
    pub(crate) distance: Arc<dyn DistanceProvider>,
    pub(crate) hub: Hub,
    pub(crate) config: PlatformConfig,
}

pub struct PlatformBuilder {
    store: Arc<Store>,
    cipher: FieldCipher,
    tokens: TokenIssuer,
    hasher: PasswordHasher,
    clock: Arc<dyn Clock>,
    distance: Arc<dyn DistanceProvider>,
    config: PlatformConfig,
}

impl PlatformBuilder {
    pub fn hasher(mut self, hasher: PasswordHasher) -> Self {
        self.hasher = hasher;
        self
    }

    pub fn clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn distance(mut self, distance: Arc<dyn DistanceProvider>) -> Self {
        self.distance = distance;
        self
    }

    pub fn tokens(mut self, tokens: TokenIssuer) -> Self {
        self.tokens = tokens;
        self
    }

    pub fn config(mut self, config: PlatformConfig) -> Self {
        self.config = config;
        self
    }

    pub fn build(self) -> Platform {
        Platform {
            store: self.store,
            cipher: self.cipher,
            hasher: self.hasher,
            tokens: self.tokens,
            clock: self.clock,
            distance: self.distance,
            hub: Hub::default(),
            config: self.config,
        }
    }
}

impl Platform {
    pub fn builder(store: Arc<Store>, cipher: FieldCipher, signing_key: &[u8]) -> PlatformBuilder {
        PlatformBuilder {
            store,
            cipher,
            tokens: TokenIssuer::new(signing_key),
            hasher: PasswordHasher::default(),
            clock: Arc::new(SystemClock),
            distance: Arc::new(Haversine),
            config: PlatformConfig::default(),
        }
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn cipher(&self) -> &FieldCipher {
        &self.cipher
    }

    pub fn config(&self) -> &PlatformConfig {
        &self.config
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    /// Verifies a bearer access token without touching the store.
    pub fn authenticate(&self, access_token: &str) -> Result<Caller> {
        let claims = self.tokens.verify_access(access_token, self.now())?;
        Ok(Caller {
            account_id: claims.sub,
            role: claims.role,
        })
    }

    pub(crate) fn open_account(&self, row: &AccountRow) -> Result<Account> {
        Ok(row.open(&self.cipher)?)
    }

    pub(crate) fn account(&self, id: AccountId) -> Result<Account> {
        let row = self.store.get::<AccountRow>(&id).ok_or(Error::Unauthenticated)?;
        self.open_account(&row)
    }

    /// The caller's account, which must still be active.
    pub(crate) fn active_account(&self, caller: &Caller) -> Result<Account> {
        let account = self.account(caller.account_id)?;
        if !account.is_active {
            return Err(Error::InactiveAccount);
        }
        Ok(account)
    }

    pub(crate) fn person_of(&self, tables: &Tables, account_id: AccountId) -> Result<Option<Person>> {
        tables
            .persons
            .values()
            .find(|p| p.account_id == Some(account_id))
            .map(|row| row.open(&self.cipher).map_err(Error::from))
            .transpose()
    }

    pub(crate) fn courier_of(&self, account_id: AccountId) -> Result<Courier> {
        self.store
            .find::<Courier>(|c| c.account_id == account_id)
            .ok_or(Error::NotACourier)
    }

    pub(crate) fn require_admin(&self, caller: &Caller) -> Result<Account> {
        let account = self.active_account(caller)?;
        if !account.is_admin {
            return Err(Error::AdminOnly);
        }
        Ok(account)
    }

    pub(crate) fn link(&self, path: &str, token: &str) -> String {
        format!(
            "{}{}?token={}",
            self.config.public_url.trim_end_matches('/'),
            path,
            token
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eta_formula() {
        let t = DateTime::from_timestamp(1_750_000_000, 0).unwrap();
        let eta = EtaModel::default();
        assert_eq!(eta.expected_delivery_time(t, 0.0), t + Duration::seconds(900));
        // 8330 m at 8.33 m/s is 1000 s of travel.
        assert_eq!(eta.expected_delivery_time(t, 8330.0), t + Duration::seconds(1900));
        assert!(eta.expected_delivery_time(t, -5.0) >= t);
    }
}
