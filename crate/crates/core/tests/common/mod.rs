#![allow(dead_code)]

use std::sync::Arc;

use chrono::{DateTime, Utc};
use parcelhub_core::accounts::Registration;
use parcelhub_core::auth::PasswordHasher;
use parcelhub_core::clock::ManualClock;
use parcelhub_core::crypto::FieldCipher;
use parcelhub_core::dispatch::{DeliveryView, NewDelivery, PlaceDraft, ReceiverDraft};
use parcelhub_core::domain::{ItemDraft, VehicleClass, WeightClass};
use parcelhub_core::notifier::{Email, OutboxEntry, OutboxKind};
use parcelhub_core::store::Store;
use parcelhub_core::{Caller, Platform};

pub const PASSWORD: &str = "correct horse battery";

pub fn start() -> DateTime<Utc> {
    DateTime::parse_from_rfc3339("2026-06-15T12:00:00Z")
        .unwrap()
        .with_timezone(&Utc)
}

pub struct Fixture {
    pub platform: Platform,
    pub clock: Arc<ManualClock>,
}

pub fn fixture() -> Fixture {
    fixture_on(Arc::new(Store::in_memory()))
}

pub fn fixture_on(store: Arc<Store>) -> Fixture {
    let clock = Arc::new(ManualClock::new(start()));
    let cipher = FieldCipher::new("k1", &[3; 32], &[5; 32]).unwrap();
    let platform = Platform::builder(store, cipher, b"integration-signing-key")
        .hasher(PasswordHasher::fast_insecure())
        .clock(clock.clone())
        .build();
    Fixture { platform, clock }
}

impl Fixture {
    /// Every queued email, oldest first.
    pub fn emails(&self) -> Vec<Email> {
        let mut entries = self.platform.store().list::<OutboxEntry>(|_| true);
        entries.sort_by_key(|e| e.queued_at);
        entries
            .iter()
            .map(|e| e.open(self.platform.cipher()).unwrap())
            .collect()
    }

    pub fn emails_to(&self, to: &str, kind: OutboxKind) -> Vec<Email> {
        self.emails()
            .into_iter()
            .filter(|e| e.to == to && e.kind == kind)
            .collect()
    }

    /// The token from the latest emailed link of `kind` sent to `to`.
    pub fn link_token(&self, to: &str, kind: OutboxKind) -> String {
        let email = self.emails_to(to, kind).pop().expect("email queued");
        let start = email.body.find("token=").expect("link in body") + "token=".len();
        email.body[start..].split_whitespace().next().unwrap().to_owned()
    }

    /// Registers, verifies and logs in an account.
    pub fn user(&self, email: &str, first_name: &str, last_name: &str) -> Caller {
        self.platform
            .register(Registration {
                email: email.to_owned(),
                password: PASSWORD.to_owned(),
                first_name: first_name.to_owned(),
                last_name: last_name.to_owned(),
                phone: None,
            })
            .unwrap();
        let token = self.link_token(email, OutboxKind::VerifyEmail);
        self.platform.verify_email(&token).unwrap();
        self.login(email)
    }

    pub fn login(&self, email: &str) -> Caller {
        let pair = self.platform.login(email, PASSWORD).unwrap();
        self.platform.authenticate(&pair.access_token).unwrap()
    }

    pub fn courier(&self, email: &str) -> Caller {
        let caller = self.user(email, "Cora", "Courier");
        self.platform.register_courier(&caller, VehicleClass::Small).unwrap();
        // The role changed; a fresh login carries it.
        self.login(email)
    }

    pub fn send(
        &self,
        sender: &Caller,
        source: (f64, f64),
        destination: (f64, f64),
        receiver: (&str, &str, &str),
    ) -> DeliveryView {
        self.platform
            .create_delivery(sender, new_delivery(source, destination, receiver), None)
            .unwrap()
    }
}

pub fn new_delivery(source: (f64, f64), destination: (f64, f64), receiver: (&str, &str, &str)) -> NewDelivery {
    NewDelivery {
        item: ItemDraft {
            width_cm: Some(30.0),
            height_cm: Some(20.0),
            depth_cm: Some(10.0),
            weight_class: Some(WeightClass::Light),
            fragile: false,
            description: None,
        },
        source: PlaceDraft {
            address_text: "Hlavna 1".to_owned(),
            latitude: Some(source.0),
            longitude: Some(source.1),
        },
        destination: PlaceDraft {
            address_text: "Dlha 2".to_owned(),
            latitude: Some(destination.0),
            longitude: Some(destination.1),
        },
        receiver: ReceiverDraft {
            first_name: receiver.0.to_owned(),
            last_name: receiver.1.to_owned(),
            email: receiver.2.to_owned(),
            phone: None,
        },
    }
}
