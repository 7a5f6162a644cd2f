//! Entity types, enumerations and the delivery state machine.
//!
//! Everything in here is a plain value. Storage, encryption and transport
//! live elsewhere.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Utc};
use rand::{CryptoRng, Rng, RngCore};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub Uuid);

        impl $name {
            pub fn random() -> Self {
                Self(Uuid::new_v4())
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt(f)
            }
        }

        impl FromStr for $name {
            type Err = uuid::Error;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Uuid::parse_str(s).map(Self)
            }
        }
    };
}

id_type!(AccountId);
id_type!(PersonId);
id_type!(CourierId);
id_type!(DeliveryId);
id_type!(
    /// Identifier of a stored item picture.
    PictureId
);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Courier,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::User => "user",
            Role::Courier => "courier",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Account {
    pub account_id: AccountId,
    pub email: String,
    pub password_hash: String,
    pub role: Role,
    pub is_admin: bool,
    pub is_active: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Person {
    pub person_id: PersonId,
    pub first_name: String,
    pub last_name: String,
    pub email: String,
    pub phone: Option<String>,
    pub account_id: Option<AccountId>,
}

impl Person {
    pub fn full_name(&self) -> String {
        format!("{} {}", self.first_name, self.last_name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleClass {
    Small,
    Medium,
    Large,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fix {
    pub point: GeoPoint,
    pub at: DateTime<Utc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Courier {
    pub courier_id: CourierId,
    pub account_id: AccountId,
    pub vehicle_class: VehicleClass,
    pub registered_on: NaiveDate,
    pub is_available: bool,
    pub last_location: Option<Fix>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightClass {
    Light,
    Medium,
    Heavy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub width_cm: f64,
    pub height_cm: f64,
    pub depth_cm: f64,
    pub weight_class: WeightClass,
    pub fragile: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub picture: Option<PictureId>,
}

/// Item as submitted by a client, before validation. Every field may be
/// missing or out of range.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ItemDraft {
    pub width_cm: Option<f64>,
    pub height_cm: Option<f64>,
    pub depth_cm: Option<f64>,
    pub weight_class: Option<WeightClass>,
    #[serde(default)]
    pub fragile: bool,
    #[serde(default)]
    pub description: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub latitude: f64,
    pub longitude: f64,
}

impl GeoPoint {
    pub fn new(latitude: f64, longitude: f64) -> Self {
        Self { latitude, longitude }
    }

    pub fn is_valid(&self) -> bool {
        self.latitude.is_finite()
            && self.longitude.is_finite()
            && (-90.0..=90.0).contains(&self.latitude)
            && (-180.0..=180.0).contains(&self.longitude)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Place {
    pub address_text: String,
    pub location: GeoPoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeliveryState {
    Ready,
    Assigned,
    Delivering,
    Delivered,
    Undeliverable,
}

impl DeliveryState {
    pub const ALL: [DeliveryState; 5] = [
        DeliveryState::Ready,
        DeliveryState::Assigned,
        DeliveryState::Delivering,
        DeliveryState::Delivered,
        DeliveryState::Undeliverable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DeliveryState::Ready => "ready",
            DeliveryState::Assigned => "assigned",
            DeliveryState::Delivering => "delivering",
            DeliveryState::Delivered => "delivered",
            DeliveryState::Undeliverable => "undeliverable",
        }
    }

    pub fn is_terminal(self) -> bool {
        allowed_transitions(self).is_empty()
    }
}

impl fmt::Display for DeliveryState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DeliveryState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DeliveryState::ALL
            .into_iter()
            .find(|state| state.as_str() == s)
            .ok_or_else(|| format!("unknown delivery state {s:?}"))
    }
}

/// Successor states reachable in one step.
pub fn allowed_transitions(from: DeliveryState) -> &'static [DeliveryState] {
    use DeliveryState::*;
    match from {
        Ready => &[Assigned],
        Assigned => &[Delivering, Undeliverable, Ready],
        Delivering => &[Delivered, Undeliverable],
        Delivered | Undeliverable => &[],
    }
}

pub fn validate_transition(from: DeliveryState, to: DeliveryState) -> bool {
    allowed_transitions(from).contains(&to)
}

const BASE32_ALPHABET: &[u8; 32] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ234567";

/// Public, unguessable delivery identifier: 12 base32 characters (60 bits).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TrackingCode(String);

impl TrackingCode {
    pub const LEN: usize = 12;

    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Self::from_bits(rng.gen::<u64>())
    }

    /// 12 symbols x 5 bits, taken from the low 60 bits.
    fn from_bits(bits: u64) -> Self {
        let code = (0..Self::LEN)
            .map(|i| BASE32_ALPHABET[((bits >> (5 * i)) & 0x1f) as usize] as char)
            .collect();
        TrackingCode(code)
    }

    pub fn parse(s: &str) -> Option<Self> {
        let valid = s.len() == Self::LEN && s.bytes().all(|b| BASE32_ALPHABET.contains(&b));
        valid.then(|| TrackingCode(s.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TrackingCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for TrackingCode {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        TrackingCode::parse(&value).ok_or_else(|| format!("malformed tracking code {value:?}"))
    }
}

impl From<TrackingCode> for String {
    fn from(code: TrackingCode) -> Self {
        code.0
    }
}

/// Draws a tracking code from the operating system entropy source.
pub fn generate_tracking_code() -> Result<TrackingCode, rand::Error> {
    let mut bytes = [0u8; 8];
    rand::rngs::OsRng.try_fill_bytes(&mut bytes)?;
    Ok(TrackingCode::from_bits(u64::from_le_bytes(bytes)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Delivery {
    pub delivery_id: DeliveryId,
    pub tracking_code: TrackingCode,
    pub sender: PersonId,
    pub sender_account: AccountId,
    pub receiver: PersonId,
    pub item: Item,
    pub source: Place,
    pub destination: Place,
    pub state: DeliveryState,
    pub courier_id: Option<CourierId>,
    pub route_distance_m: f64,
    pub expected_delivery_time: DateTime<Utc>,
    pub created_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Every state the delivery has entered, oldest first.
    #[serde(default)]
    pub history: Vec<StateChange>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateChange {
    pub state: DeliveryState,
    pub at: DateTime<Utc>,
}

impl Delivery {
    /// `courier_id` is present exactly when the delivery has left `ready`.
    pub fn courier_matches_state(&self) -> bool {
        (self.state == DeliveryState::Ready) == self.courier_id.is_none()
    }

    /// The recorded history starts at `ready`, follows allowed edges only
    /// and ends in the current state.
    pub fn history_is_valid(&self) -> bool {
        self.history.first().map(|c| c.state) == Some(DeliveryState::Ready)
            && self.history.last().map(|c| c.state) == Some(self.state)
            && self
                .history
                .windows(2)
                .all(|w| validate_transition(w[0].state, w[1].state) && w[0].at <= w[1].at)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub delivery_id: DeliveryId,
    pub points: Vec<Fix>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RouteError {
    NonMonotonicTimestamp,
    InvalidPoint,
}

impl Route {
    pub fn new(delivery_id: DeliveryId) -> Self {
        Self {
            delivery_id,
            points: Vec::new(),
        }
    }

    pub fn last_at(&self) -> Option<DateTime<Utc>> {
        self.points.last().map(|fix| fix.at)
    }

    /// Appends a fix; timestamps must be strictly increasing.
    pub fn append(&mut self, point: GeoPoint, at: DateTime<Utc>) -> Result<(), RouteError> {
        if !point.is_valid() {
            return Err(RouteError::InvalidPoint);
        }
        if self.last_at().is_some_and(|last| at <= last) {
            return Err(RouteError::NonMonotonicTimestamp);
        }
        self.points.push(Fix { point, at });
        Ok(())
    }

    pub fn duration_secs(&self) -> i64 {
        match (self.points.first(), self.points.last()) {
            (Some(first), Some(last)) => (last.at - first.at).num_seconds(),
            _ => 0,
        }
    }
}

/// Per-field validation messages, keyed by field name.
pub type FieldErrors = BTreeMap<String, String>;

/// Checks an item draft; every problem is reported, nothing short-circuits.
pub fn validate_item(draft: &ItemDraft) -> Result<Item, FieldErrors> {
    let mut errors = FieldErrors::new();
    let mut dimension = |name: &str, value: Option<f64>| match value {
        None => {
            errors.insert(name.to_owned(), "required".to_owned());
            0.0
        }
        Some(v) if !v.is_finite() || v <= 0.0 => {
            errors.insert(name.to_owned(), "must be a positive number".to_owned());
            0.0
        }
        Some(v) => v,
    };
    let width_cm = dimension("width_cm", draft.width_cm);
    let height_cm = dimension("height_cm", draft.height_cm);
    let depth_cm = dimension("depth_cm", draft.depth_cm);
    if draft.weight_class.is_none() {
        errors.insert("weight_class".to_owned(), "required".to_owned());
    }
    match draft.weight_class {
        Some(weight_class) if errors.is_empty() => Ok(Item {
            width_cm,
            height_cm,
            depth_cm,
            weight_class,
            fragile: draft.fragile,
            description: draft.description.clone(),
            picture: None,
        }),
        _ => Err(errors),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::collections::HashSet;

    use DeliveryState::*;

    #[test]
    fn transition_table() {
        assert_eq!(allowed_transitions(Ready), &[Assigned]);
        assert!(allowed_transitions(Delivered).is_empty());
        assert_eq!(allowed_transitions(Delivering), &[Delivered, Undeliverable]);
        assert!(validate_transition(Ready, Assigned));
        assert!(!validate_transition(Delivered, Ready));
    }

    #[test]
    fn exhaustive_pairs() {
        // Independent edge list, written out by hand.
        let edges: HashSet<(DeliveryState, DeliveryState)> = [
            (Ready, Assigned),
            (Assigned, Delivering),
            (Assigned, Undeliverable),
            (Assigned, Ready),
            (Delivering, Delivered),
            (Delivering, Undeliverable),
        ]
        .into_iter()
        .collect();
        let mut allowed = 0;
        for from in DeliveryState::ALL {
            for to in DeliveryState::ALL {
                assert_eq!(
                    validate_transition(from, to),
                    edges.contains(&(from, to)),
                    "{from}->{to}"
                );
                allowed += usize::from(validate_transition(from, to));
            }
        }
        assert_eq!(allowed, 6);
        assert!(Delivered.is_terminal() && Undeliverable.is_terminal());
    }

    #[test]
    fn state_names_round_trip() {
        for state in DeliveryState::ALL {
            assert_eq!(state.as_str().parse::<DeliveryState>().unwrap(), state);
            let json = serde_json::to_string(&state).unwrap();
            assert_eq!(json, format!("\"{}\"", state.as_str()));
        }
        assert!("lost".parse::<DeliveryState>().is_err());
    }

    #[test]
    fn tracking_code_format() {
        for _ in 0..1000 {
            let code = generate_tracking_code().unwrap();
            assert_eq!(code.as_str().len(), 12);
            assert!(code
                .as_str()
                .bytes()
                .all(|b| b.is_ascii_uppercase() || (b'2'..=b'7').contains(&b)));
            assert_eq!(TrackingCode::parse(code.as_str()), Some(code));
        }
    }

    #[test]
    fn tracking_code_seeded_is_reproducible() {
        let a = TrackingCode::generate(&mut ChaCha20Rng::seed_from_u64(7));
        let b = TrackingCode::generate(&mut ChaCha20Rng::seed_from_u64(7));
        let c = TrackingCode::generate(&mut ChaCha20Rng::seed_from_u64(8));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn tracking_code_no_duplicates_in_a_million() {
        // Birthday bound: 1e12 / 2^61 ~ 4.3e-7 expected collisions.
        let mut rng = ChaCha20Rng::seed_from_u64(2024);
        let mut seen = HashSet::with_capacity(1_000_000);
        for _ in 0..1_000_000 {
            assert!(seen.insert(TrackingCode::generate(&mut rng)));
        }
    }

    #[test]
    fn tracking_code_rejects_bad_input() {
        assert!(TrackingCode::parse("abcdefghijkl").is_none());
        assert!(TrackingCode::parse("ABCDEFGHIJK1").is_none());
        assert!(TrackingCode::parse("ABCDEFGHIJK").is_none());
        assert!(serde_json::from_str::<TrackingCode>("\"ABCDEFGHIJ01\"").is_err());
    }

    fn draft(w: Option<f64>, h: Option<f64>, d: Option<f64>, weight: Option<WeightClass>) -> ItemDraft {
        ItemDraft {
            width_cm: w,
            height_cm: h,
            depth_cm: d,
            weight_class: weight,
            fragile: false,
            description: None,
        }
    }

    #[test]
    fn item_validation() {
        let ok = validate_item(&draft(Some(30.0), Some(20.0), Some(10.0), Some(WeightClass::Medium))).unwrap();
        assert_eq!(ok.weight_class, WeightClass::Medium);
        assert!(!ok.fragile);

        let zero_width =
            validate_item(&draft(Some(0.0), Some(20.0), Some(10.0), Some(WeightClass::Light))).unwrap_err();
        assert_eq!(zero_width.keys().collect::<Vec<_>>(), ["width_cm"]);

        let two = validate_item(&draft(Some(30.0), Some(20.0), Some(-1.0), None)).unwrap_err();
        assert_eq!(two.len(), 2);
        assert!(two.contains_key("depth_cm") && two.contains_key("weight_class"));

        let missing = validate_item(&ItemDraft::default()).unwrap_err();
        assert_eq!(missing.len(), 4);
        let nan = validate_item(&draft(Some(f64::NAN), Some(1.0), Some(1.0), Some(WeightClass::Heavy))).unwrap_err();
        assert!(nan.contains_key("width_cm"));
    }

    #[test]
    fn route_append_rules() {
        let t0 = DateTime::from_timestamp(1_700_000_000, 0).unwrap();
        let mut route = Route::new(DeliveryId::random());
        route.append(GeoPoint::new(48.0, 17.0), t0).unwrap();
        assert_eq!(route.points.len(), 1);
        assert_eq!(
            route.append(GeoPoint::new(48.0, 17.0), t0 - chrono::Duration::seconds(1)),
            Err(RouteError::NonMonotonicTimestamp)
        );
        assert_eq!(
            route.append(GeoPoint::new(48.0, 17.0), t0),
            Err(RouteError::NonMonotonicTimestamp)
        );
        assert_eq!(
            route.append(GeoPoint::new(91.0, 17.0), t0 + chrono::Duration::seconds(1)),
            Err(RouteError::InvalidPoint)
        );
        assert_eq!(route.points.len(), 1);
    }

    #[test]
    fn hundred_fixes_at_four_seconds() {
        let t0 = DateTime::from_timestamp(1_700_000_000, 0).unwrap();
        let mut route = Route::new(DeliveryId::random());
        for i in 0..100 {
            route
                .append(
                    GeoPoint::new(48.0 + i as f64 * 1e-4, 17.0),
                    t0 + chrono::Duration::seconds(4 * i),
                )
                .unwrap();
        }
        assert_eq!(route.points.len(), 100);
        assert_eq!(route.duration_secs(), 396);
    }

    #[test]
    fn geopoint_ranges() {
        assert!(GeoPoint::new(90.0, -180.0).is_valid());
        assert!(!GeoPoint::new(-90.01, 0.0).is_valid());
        assert!(!GeoPoint::new(0.0, 180.5).is_valid());
        assert!(!GeoPoint::new(f64::NAN, 0.0).is_valid());
    }
}
