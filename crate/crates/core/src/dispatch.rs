//! Delivery lifecycle: creation, tracking, work discovery, acceptance,
//! state changes, history and statistics.

use chrono::{DateTime, Datelike, Utc};
use serde::{Deserialize, Serialize};

use crate::accounts::{check_email, check_name};
use crate::domain::{
    allowed_transitions, generate_tracking_code, validate_item, validate_transition, CourierId, Delivery, DeliveryId,
    DeliveryState, FieldErrors, Fix, GeoPoint, Item, ItemDraft, Person, PersonId, PictureId, Place, StateChange,
    TrackingCode,
};
use crate::error::{Error, Result};
use crate::geo::{order_by_distance, RouteFilter, RouteView};
use crate::notifier::{self, OutboxKind, Payload};
use crate::platform::{Caller, Platform};
use crate::store::{PersonRow, PictureRow, Tables};

pub const MAX_CLOSEST: usize = 100;
pub const MAX_STATISTICS_MONTHS: u32 = 60;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PlaceDraft {
    #[serde(default)]
    pub address_text: String,
    pub latitude: Option<f64>,
    pub longitude: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ReceiverDraft {
    #[serde(default)]
    pub first_name: String,
    #[serde(default)]
    pub last_name: String,
    #[serde(default)]
    pub email: String,
    #[serde(default)]
    pub phone: Option<String>,
}

/// The JSON document of a delivery creation request.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct NewDelivery {
    #[serde(default)]
    pub item: ItemDraft,
    #[serde(default)]
    pub source: PlaceDraft,
    #[serde(default)]
    pub destination: PlaceDraft,
    #[serde(default)]
    pub receiver: ReceiverDraft,
}

#[derive(Clone, Debug)]
pub struct Picture {
    pub content_type: String,
    pub bytes: Vec<u8>,
}

/// Delivery as returned to its sender, receiver or courier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeliveryView {
    pub tracking_code: TrackingCode,
    pub state: DeliveryState,
    pub item: Item,
    pub source: Place,
    pub destination: Place,
    pub courier_id: Option<CourierId>,
    pub route_distance_m: f64,
    pub expected_delivery_time: DateTime<Utc>,
    pub created_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl From<&Delivery> for DeliveryView {
    fn from(d: &Delivery) -> Self {
        Self {
            tracking_code: d.tracking_code.clone(),
            state: d.state,
            item: d.item.clone(),
            source: d.source.clone(),
            destination: d.destination.clone(),
            courier_id: d.courier_id,
            route_distance_m: d.route_distance_m,
            expected_delivery_time: d.expected_delivery_time,
            created_at: d.created_at,
            note: d.note.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemSummary {
    pub width_cm: f64,
    pub height_cm: f64,
    pub depth_cm: f64,
    pub weight_class: crate::domain::WeightClass,
    pub fragile: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceiverIdentity {
    pub first_name: String,
    pub last_name: String,
    pub email: String,
}

/// Public tracking result. `receiver` is filled only for the receiver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingView {
    pub tracking_code: TrackingCode,
    pub state: DeliveryState,
    pub source_address: String,
    pub destination_address: String,
    pub item: ItemSummary,
    pub expected_delivery_time: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub courier_position: Option<Fix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub receiver: Option<ReceiverIdentity>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Sent,
    Received,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonthBucket {
    /// `YYYY-MM`
    pub month: String,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatisticsReport {
    pub months: Vec<MonthBucket>,
    pub total: usize,
}

fn check_place(errors: &mut FieldErrors, prefix: &str, draft: &PlaceDraft) -> Option<Place> {
    if draft.address_text.trim().is_empty() {
        errors.insert(format!("{prefix}.address_text"), "required".to_owned());
    }
    match (draft.latitude, draft.longitude) {
        (Some(latitude), Some(longitude)) => {
            let location = GeoPoint::new(latitude, longitude);
            if !location.is_valid() {
                errors.insert(format!("{prefix}.location"), "coordinates out of range".to_owned());
                return None;
            }
            Some(Place {
                address_text: draft.address_text.trim().to_owned(),
                location,
            })
        }
        _ => {
            errors.insert(
                format!("{prefix}.location"),
                "latitude and longitude required".to_owned(),
            );
            None
        }
    }
}

fn check_picture(errors: &mut FieldErrors, picture: &Picture, max_bytes: usize) {
    let png = picture.bytes.starts_with(b"\x89PNG\r\n\x1a\n");
    let jpeg = picture.bytes.starts_with(&[0xff, 0xd8, 0xff]);
    let declared_ok = match picture.content_type.as_str() {
        "image/png" => png,
        "image/jpeg" | "image/jpg" => jpeg,
        _ => false,
    };
    if !declared_ok {
        errors.insert("picture".to_owned(), "must be a JPEG or PNG image".to_owned());
    } else if picture.bytes.len() > max_bytes {
        errors.insert("picture".to_owned(), format!("must be at most {max_bytes} bytes"));
    }
}

/// Calendar month index, counting from year 0.
fn month_index(at: DateTime<Utc>) -> i64 {
    i64::from(at.year()) * 12 + i64::from(at.month0())
}

fn month_label(index: i64) -> String {
    format!("{:04}-{:02}", index.div_euclid(12), index.rem_euclid(12) + 1)
}

impl Platform {
    pub fn create_delivery(
        &self,
        caller: &Caller,
        form: NewDelivery,
        picture: Option<Picture>,
    ) -> Result<DeliveryView> {
        let sender_account = self.active_account(caller)?;

        let mut errors = FieldErrors::new();
        let item = validate_item(&form.item).map_err(|e| {
            errors.extend(e.into_iter().map(|(k, v)| (format!("item.{k}"), v)));
        });
        let source = check_place(&mut errors, "source", &form.source);
        let destination = check_place(&mut errors, "destination", &form.destination);
        check_name(&mut errors, "receiver.first_name", &form.receiver.first_name);
        check_name(&mut errors, "receiver.last_name", &form.receiver.last_name);
        check_email(&mut errors, "receiver.email", &form.receiver.email);
        if let Some(picture) = &picture {
            check_picture(&mut errors, picture, self.config.max_picture_bytes);
        }
        let (Ok(mut item), Some(source), Some(destination), true) = (item, source, destination, errors.is_empty())
        else {
            return Err(Error::Validation(errors));
        };

        let now = self.now();
        let route_distance_m = self
            .distance
            .route_distance_m(source.location, destination.location)
            .max(0.0);
        let expected_delivery_time = self.config.eta.expected_delivery_time(now, route_distance_m);
        let receiver_email = form.receiver.email.trim().to_owned();
        let receiver_index = self.cipher.blind_index(&receiver_email);

        self.store.transact(|tables, batch| {
            let sender = self
                .person_of(tables, caller.account_id)?
                .ok_or(Error::NotFound("person"))?;
            let receiver = match tables.persons.values().find(|p| p.email_index == receiver_index) {
                Some(row) => row.open(&self.cipher)?,
                None => {
                    let person = Person {
                        person_id: PersonId::random(),
                        first_name: form.receiver.first_name.trim().to_owned(),
                        last_name: form.receiver.last_name.trim().to_owned(),
                        email: receiver_email.clone(),
                        phone: form.receiver.phone.clone().filter(|p| !p.trim().is_empty()),
                        account_id: None,
                    };
                    batch.put(PersonRow::seal(&person, &self.cipher));
                    person
                }
            };
            if let Some(picture) = &picture {
                let picture_id = PictureId::random();
                batch.put(PictureRow {
                    picture_id,
                    content_type: picture.content_type.clone(),
                    bytes: picture.bytes.clone(),
                });
                item.picture = Some(picture_id);
            }
            let tracking_code = unused_tracking_code(tables)?;
            let delivery = Delivery {
                delivery_id: DeliveryId::random(),
                tracking_code: tracking_code.clone(),
                sender: sender.person_id,
                sender_account: sender_account.account_id,
                receiver: receiver.person_id,
                item,
                source,
                destination,
                state: DeliveryState::Ready,
                courier_id: None,
                route_distance_m,
                expected_delivery_time,
                created_at: now,
                note: None,
                history: vec![StateChange {
                    state: DeliveryState::Ready,
                    at: now,
                }],
            };
            let link = format!(
                "{}/console/track/{}",
                self.config.public_url.trim_end_matches('/'),
                tracking_code
            );
            let common = [
                ("tracking_code".to_owned(), tracking_code.to_string()),
                ("link".to_owned(), link),
            ];
            let mut to_sender = Payload::from(common.clone());
            to_sender.insert("receiver_name".to_owned(), receiver.full_name());
            let mut to_receiver = Payload::from(common);
            to_receiver.insert("sender_name".to_owned(), sender.full_name());
            batch.put(notifier::queue(
                &self.cipher,
                OutboxKind::DeliveryCreatedSender,
                &sender.email,
                to_sender,
                now,
            )?);
            batch.put(notifier::queue(
                &self.cipher,
                OutboxKind::DeliveryCreatedReceiver,
                &receiver.email,
                to_receiver,
                now,
            )?);
            let view = DeliveryView::from(&delivery);
            batch.put(delivery);
            Ok(view)
        })
    }

    fn delivery_by_code(&self, tables: &Tables, code: &TrackingCode) -> Option<Delivery> {
        tables.deliveries.values().find(|d| &d.tracking_code == code).cloned()
    }

    pub fn find_delivery(&self, code: &TrackingCode) -> Option<Delivery> {
        self.store.read(|t| self.delivery_by_code(t, code))
    }

    /// Public tracking. The receiver's identity is included only when the
    /// caller's account email matches the receiver.
    pub fn track_delivery(&self, code: &str, caller: Option<&Caller>) -> Result<TrackingView> {
        let code = TrackingCode::parse(code).ok_or(Error::UnknownTrackingCode)?;
        self.store.read(|tables| {
            let delivery = self.delivery_by_code(tables, &code).ok_or(Error::UnknownTrackingCode)?;
            let receiver_row = tables
                .persons
                .get(&delivery.receiver)
                .ok_or(Error::NotFound("person"))?;
            let is_receiver = caller
                .and_then(|c| tables.accounts.get(&c.account_id))
                .is_some_and(|account| account.email_index == receiver_row.email_index);
            let receiver = if is_receiver {
                let person = receiver_row.open(&self.cipher)?;
                Some(ReceiverIdentity {
                    first_name: person.first_name,
                    last_name: person.last_name,
                    email: person.email,
                })
            } else {
                None
            };
            let courier_position = match delivery.state {
                DeliveryState::Assigned | DeliveryState::Delivering => tables
                    .routes
                    .get(&delivery.delivery_id)
                    .and_then(|r| r.points.last().copied()),
                _ => None,
            };
            Ok(TrackingView {
                tracking_code: delivery.tracking_code.clone(),
                state: delivery.state,
                source_address: delivery.source.address_text.clone(),
                destination_address: delivery.destination.address_text.clone(),
                item: ItemSummary {
                    width_cm: delivery.item.width_cm,
                    height_cm: delivery.item.height_cm,
                    depth_cm: delivery.item.depth_cm,
                    weight_class: delivery.item.weight_class,
                    fragile: delivery.item.fragile,
                },
                expected_delivery_time: delivery.expected_delivery_time,
                courier_position,
                receiver,
            })
        })
    }

    /// Deliveries the caller sent, or those addressed to the caller's email.
    /// Newest first.
    pub fn list_history(&self, caller: &Caller, direction: Direction) -> Result<Vec<DeliveryView>> {
        let mut deliveries = self.store.read(|tables| -> Result<Vec<Delivery>> {
            let account = tables.accounts.get(&caller.account_id).ok_or(Error::Unauthenticated)?;
            Ok(match direction {
                Direction::Sent => tables
                    .deliveries
                    .values()
                    .filter(|d| d.sender_account == caller.account_id)
                    .cloned()
                    .collect(),
                Direction::Received => tables
                    .deliveries
                    .values()
                    .filter(|d| {
                        tables
                            .persons
                            .get(&d.receiver)
                            .is_some_and(|p| p.email_index == account.email_index)
                    })
                    .cloned()
                    .collect(),
            })
        })?;
        deliveries.sort_by(|a, b| {
            b.created_at
                .cmp(&a.created_at)
                .then_with(|| b.delivery_id.cmp(&a.delivery_id))
        });
        Ok(deliveries.iter().map(DeliveryView::from).collect())
    }

    /// Ready deliveries nearest to `location`, at most `limit` of them.
    pub fn closest_deliveries(&self, caller: &Caller, location: GeoPoint, limit: usize) -> Result<Vec<DeliveryView>> {
        self.courier_of(caller.account_id)?;
        if !location.is_valid() {
            return Err(Error::InvalidCoordinates);
        }
        if limit == 0 || limit > MAX_CLOSEST {
            return Err(Error::field("limit", &format!("must be between 1 and {MAX_CLOSEST}")));
        }
        let ready = self.store.list::<Delivery>(|d| d.state == DeliveryState::Ready);
        Ok(order_by_distance(location, ready)
            .iter()
            .take(limit)
            .map(DeliveryView::from)
            .collect())
    }

    /// Claims a ready delivery. Under contention exactly one courier wins;
    /// everyone else gets `NotReady`.
    pub fn accept_delivery(&self, caller: &Caller, code: &str) -> Result<DeliveryView> {
        let courier = self.courier_of(caller.account_id)?;
        let code = TrackingCode::parse(code).ok_or(Error::UnknownDelivery)?;
        let now = self.now();
        self.store.transact(|tables, batch| {
            let mut delivery = self.delivery_by_code(tables, &code).ok_or(Error::UnknownDelivery)?;
            if delivery.state != DeliveryState::Ready {
                return Err(Error::NotReady);
            }
            delivery.state = DeliveryState::Assigned;
            delivery.courier_id = Some(courier.courier_id);
            delivery.history.push(StateChange {
                state: DeliveryState::Assigned,
                at: now,
            });
            let view = DeliveryView::from(&delivery);
            batch.put(delivery);
            Ok(view)
        })
    }

    /// Moves a delivery along the state machine on behalf of its courier.
    /// Moving a ready delivery to `assigned` is acceptance.
    pub fn change_state(
        &self,
        caller: &Caller,
        code: &str,
        to: DeliveryState,
        note: Option<String>,
    ) -> Result<DeliveryView> {
        let courier = self.courier_of(caller.account_id)?;
        let code = TrackingCode::parse(code).ok_or(Error::UnknownDelivery)?;
        if to == DeliveryState::Assigned {
            if let Some(d) = self.find_delivery(&code) {
                if d.state == DeliveryState::Ready || d.courier_id != Some(courier.courier_id) {
                    return self.accept_delivery(caller, code.as_str());
                }
            }
        }
        let now = self.now();
        self.store.transact(|tables, batch| {
            let mut delivery = self.delivery_by_code(tables, &code).ok_or(Error::UnknownDelivery)?;
            if delivery.courier_id != Some(courier.courier_id) {
                return Err(Error::NotAssignedCourier);
            }
            if !validate_transition(delivery.state, to) {
                return Err(Error::ForbiddenTransition {
                    from: delivery.state,
                    to,
                });
            }
            delivery.state = to;
            if to == DeliveryState::Ready {
                delivery.courier_id = None;
            }
            if let Some(note) = note.filter(|n| !n.trim().is_empty()) {
                delivery.note = Some(note.trim().to_owned());
            }
            delivery.history.push(StateChange { state: to, at: now });
            if to == DeliveryState::Delivered {
                let sender = tables.persons.get(&delivery.sender).ok_or(Error::NotFound("person"))?;
                let sender = sender.open(&self.cipher)?;
                let payload = Payload::from([("tracking_code".to_owned(), delivery.tracking_code.to_string())]);
                batch.put(notifier::queue(
                    &self.cipher,
                    OutboxKind::DeliveryCompleted,
                    &sender.email,
                    payload,
                    now,
                )?);
            }
            let view = DeliveryView::from(&delivery);
            batch.put(delivery);
            Ok(view)
        })
    }

    /// States a courier may move this delivery to next.
    pub fn next_states(&self, code: &TrackingCode) -> Option<&'static [DeliveryState]> {
        self.find_delivery(code).map(|d| allowed_transitions(d.state))
    }

    /// Monthly counts of the caller's sent deliveries over the trailing
    /// `months` calendar months, oldest first, current month last.
    pub fn statistics(&self, caller: &Caller, months: u32) -> Result<StatisticsReport> {
        if months == 0 || months > MAX_STATISTICS_MONTHS {
            return Err(Error::field(
                "months",
                &format!("must be between 1 and {MAX_STATISTICS_MONTHS}"),
            ));
        }
        let current = month_index(self.now());
        let first = current - i64::from(months) + 1;
        let mut counts = vec![0usize; months as usize];
        self.store.read(|tables| {
            for d in tables
                .deliveries
                .values()
                .filter(|d| d.sender_account == caller.account_id)
            {
                let m = month_index(d.created_at);
                if (first..=current).contains(&m) {
                    counts[(m - first) as usize] += 1;
                }
            }
        });
        let total = counts.iter().sum();
        Ok(StatisticsReport {
            months: counts
                .into_iter()
                .enumerate()
                .map(|(i, count)| MonthBucket {
                    month: month_label(first + i as i64),
                    count,
                })
                .collect(),
            total,
        })
    }

    pub fn picture(&self, id: PictureId) -> Option<PictureRow> {
        self.store.get::<PictureRow>(&id)
    }

    /// Public route listing; see [`crate::geo::query_routes`].
    pub fn query_routes(&self, filter: &RouteFilter) -> Result<Vec<RouteView>> {
        if !filter.is_valid() {
            return Err(Error::field("to", "must be after from"));
        }
        Ok(self.store.read(|tables| {
            crate::geo::query_routes(
                filter,
                tables
                    .deliveries
                    .values()
                    .map(|d| (d, tables.routes.get(&d.delivery_id))),
            )
        }))
    }
}

fn unused_tracking_code(tables: &Tables) -> Result<TrackingCode> {
    // A collision needs ~2^30 live codes; a few retries are plenty.
    for _ in 0..8 {
        let code = generate_tracking_code().map_err(|e| Error::Internal(format!("entropy unavailable: {e}")))?;
        if !tables.deliveries.values().any(|d| d.tracking_code == code) {
            return Ok(code);
        }
    }
    Err(Error::Internal("could not allocate a unique tracking code".into()))
}
