//! Live location hub. Couriers publish on their delivery's channel; the
//! frame fans out to that channel and to the global channel.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;

use crate::domain::{CourierId, DeliveryId, DeliveryState, Fix, GeoPoint, Route, RouteError, TrackingCode};
use crate::error::{Error, Result};
use crate::platform::Platform;
use crate::store::Tables;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Channel {
    Delivery(TrackingCode),
    Global,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Channel::Delivery(code) => write!(f, "delivery:{code}"),
            Channel::Global => f.write_str("global"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("malformed channel path")]
pub struct MalformedChannel;

impl FromStr for Channel {
    type Err = MalformedChannel;

    fn from_str(s: &str) -> Result<Self, MalformedChannel> {
        match s.split_once(':') {
            None if s == "global" => Ok(Channel::Global),
            Some(("delivery", code)) => TrackingCode::parse(code).map(Channel::Delivery).ok_or(MalformedChannel),
            _ => Err(MalformedChannel),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Publisher,
    Subscriber,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConnectionId(u64);

/// A frame as sent by a publishing courier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PublishFrame {
    pub lat: f64,
    pub lon: f64,
}

/// A broadcast location, enriched by the server.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocationMessage {
    pub lat: f64,
    pub lon: f64,
    pub courier_id: CourierId,
    /// The tracking code; internal ids never leave the server.
    pub delivery_id: TrackingCode,
    pub ts: DateTime<Utc>,
}

#[derive(Serialize)]
struct ErrorFrame<'a> {
    error: ErrorCode<'a>,
}

#[derive(Serialize)]
struct ErrorCode<'a> {
    code: &'a str,
}

pub fn error_frame(code: &str) -> String {
    serde_json::to_string(&ErrorFrame {
        error: ErrorCode { code },
    })
    .expect("error frame serializes")
}

/// The receiving half handed to the transport layer. When the hub drops a
/// connection (sweep or overflow) the queue closes and `recv` yields `None`.
pub struct Connection {
    pub id: ConnectionId,
    pub mode: Mode,
    pub channel: Channel,
    pub frames: mpsc::Receiver<Arc<str>>,
}

struct Member {
    channel: Channel,
    tx: mpsc::Sender<Arc<str>>,
    publisher: Option<PublisherState>,
}

struct PublisherState {
    delivery_id: DeliveryId,
    courier_id: CourierId,
    last_seen: DateTime<Utc>,
}

#[derive(Default)]
struct Registry {
    next_id: u64,
    members: HashMap<ConnectionId, Member>,
    by_channel: HashMap<Channel, Vec<ConnectionId>>,
}

impl Registry {
    fn insert(&mut self, member: Member) -> ConnectionId {
        self.next_id += 1;
        let id = ConnectionId(self.next_id);
        self.by_channel.entry(member.channel.clone()).or_default().push(id);
        self.members.insert(id, member);
        id
    }

    fn remove(&mut self, id: ConnectionId) -> Option<Member> {
        let member = self.members.remove(&id)?;
        if let Some(ids) = self.by_channel.get_mut(&member.channel) {
            ids.retain(|other| *other != id);
            if ids.is_empty() {
                self.by_channel.remove(&member.channel);
            }
        }
        Some(member)
    }

    /// Queues `frame` for every member of `channel`; members whose queue is
    /// full or gone are dropped.
    fn broadcast(&mut self, channel: &Channel, frame: &Arc<str>) {
        let Some(ids) = self.by_channel.get(channel) else {
            return;
        };
        let dropped: Vec<ConnectionId> = ids
            .iter()
            .filter(|id| {
                let member = &self.members[id];
                member.tx.try_send(Arc::clone(frame)).is_err()
            })
            .copied()
            .collect();
        for id in dropped {
            tracing::debug!(connection = id.0, %channel, "dropping slow subscriber");
            self.remove(id);
        }
    }
}

/// Connection registry. All mutations take one lock; publish also takes the
/// store lock inside it, never the other way round.
#[derive(Default)]
pub struct Hub {
    registry: Mutex<Registry>,
}

impl Hub {
    pub fn connection_count(&self, channel: &Channel) -> usize {
        self.registry.lock().by_channel.get(channel).map_or(0, Vec::len)
    }

    pub fn is_open(&self, id: ConnectionId) -> bool {
        self.registry.lock().members.contains_key(&id)
    }
}

fn assigned_courier(tables: &Tables, delivery_id: DeliveryId, courier_id: CourierId) -> bool {
    tables
        .deliveries
        .get(&delivery_id)
        .is_some_and(|d| d.courier_id == Some(courier_id))
}

impl Platform {
    /// Opens a connection. On a delivery channel the assigned courier gets a
    /// publisher; every other caller, including anonymous ones and callers
    /// with bad tokens, gets a subscriber.
    pub fn open_channel(&self, channel: Channel, access_token: Option<&str>) -> Result<Connection> {
        let publisher = match &channel {
            Channel::Global => None,
            Channel::Delivery(code) => {
                let delivery = self.find_delivery(code).ok_or(Error::UnknownTrackingCode)?;
                access_token
                    .and_then(|token| self.authenticate(token).ok())
                    .and_then(|caller| self.courier_of(caller.account_id).ok())
                    .filter(|courier| delivery.courier_id == Some(courier.courier_id))
                    .map(|courier| PublisherState {
                        delivery_id: delivery.delivery_id,
                        courier_id: courier.courier_id,
                        last_seen: self.now(),
                    })
            }
        };
        let mode = if publisher.is_some() {
            Mode::Publisher
        } else {
            Mode::Subscriber
        };
        let (tx, frames) = mpsc::channel(self.config.subscriber_queue.max(1));
        let id = self.hub.registry.lock().insert(Member {
            channel: channel.clone(),
            tx,
            publisher,
        });
        Ok(Connection {
            id,
            mode,
            channel,
            frames,
        })
    }

    /// Records a position from a publisher and fans it out. The point is
    /// persisted before any subscriber sees it.
    pub fn publish_location(&self, conn: ConnectionId, lat: f64, lon: f64) -> Result<LocationMessage> {
        let mut registry = self.hub.registry.lock();
        let member = registry.members.get(&conn).ok_or(Error::NotPublisher)?;
        let (Some(publisher), Channel::Delivery(code)) = (&member.publisher, &member.channel) else {
            return Err(Error::NotPublisher);
        };
        let point = GeoPoint::new(lat, lon);
        if !point.is_valid() {
            return Err(Error::InvalidCoordinates);
        }
        let (delivery_id, courier_id, code) = (publisher.delivery_id, publisher.courier_id, code.clone());
        let now = self.now();

        self.store.transact(|tables, batch| {
            let delivery = tables.deliveries.get(&delivery_id).ok_or(Error::UnknownDelivery)?;
            if !assigned_courier(tables, delivery_id, courier_id) {
                return Err(Error::NotPublisher);
            }
            if !matches!(delivery.state, DeliveryState::Assigned | DeliveryState::Delivering) {
                return Err(Error::WrongState(delivery.state));
            }
            let mut route = tables
                .routes
                .get(&delivery_id)
                .cloned()
                .unwrap_or_else(|| Route::new(delivery_id));
            route.append(point, now).map_err(|e| match e {
                RouteError::NonMonotonicTimestamp => Error::NonMonotonicTimestamp,
                RouteError::InvalidPoint => Error::InvalidCoordinates,
            })?;
            batch.put(route);
            if let Some(courier) = tables.couriers.get(&courier_id) {
                let mut courier = courier.clone();
                courier.last_location = Some(Fix { point, at: now });
                batch.put(courier);
            }
            Ok(())
        })?;

        if let Some(PublisherState { last_seen, .. }) =
            registry.members.get_mut(&conn).and_then(|m| m.publisher.as_mut())
        {
            *last_seen = now;
        }
        let message = LocationMessage {
            lat,
            lon,
            courier_id,
            delivery_id: code.clone(),
            ts: now,
        };
        let frame: Arc<str> = serde_json::to_string(&message)
            .map_err(|e| Error::Internal(e.to_string()))?
            .into();
        registry.broadcast(&Channel::Delivery(code), &frame);
        registry.broadcast(&Channel::Global, &frame);
        Ok(message)
    }

    /// Parses a text frame from a connection and publishes it.
    pub fn handle_frame(&self, conn: ConnectionId, text: &str) -> Result<LocationMessage> {
        if !self
            .hub
            .registry
            .lock()
            .members
            .get(&conn)
            .is_some_and(|m| m.publisher.is_some())
        {
            return Err(Error::NotPublisher);
        }
        let frame: PublishFrame = serde_json::from_str(text)
            .map_err(|_| Error::field("frame", "expected {\"lat\": number, \"lon\": number}"))?;
        self.publish_location(conn, frame.lat, frame.lon)
    }

    pub fn hub_is_open(&self, conn: ConnectionId) -> bool {
        self.hub.is_open(conn)
    }

    pub fn close_connection(&self, conn: ConnectionId) {
        self.hub.registry.lock().remove(conn);
    }

    /// Closes publishers silent for longer than the configured timeout and
    /// marks their couriers unavailable unless another of their publisher
    /// connections is still live.
    pub fn staleness_sweep(&self, now: DateTime<Utc>) -> Vec<ConnectionId> {
        let timeout = self.config.publisher_timeout;
        let mut registry = self.hub.registry.lock();
        let stale: Vec<ConnectionId> = registry
            .members
            .iter()
            .filter(|(_, m)| m.publisher.as_ref().is_some_and(|p| now - p.last_seen > timeout))
            .map(|(id, _)| *id)
            .collect();
        let mut couriers: Vec<CourierId> = stale
            .iter()
            .filter_map(|id| registry.remove(*id))
            .filter_map(|m| m.publisher.map(|p| p.courier_id))
            .collect();
        couriers.sort();
        couriers.dedup();
        couriers.retain(|c| {
            !registry
                .members
                .values()
                .any(|m| m.publisher.as_ref().is_some_and(|p| p.courier_id == *c))
        });
        for courier_id in couriers {
            let result = self.store.conditional_update::<crate::domain::Courier>(
                &courier_id,
                |c| c.is_available,
                |c| c.is_available = false,
            );
            if let Err(e) = result {
                tracing::debug!(%courier_id, error = %e, "courier left available");
            }
        }
        let mut closed = stale;
        closed.sort();
        closed
    }
}
