//! Great-circle distance, nearest-work ordering and route queries.

use std::cmp::Ordering;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::domain::{CourierId, Delivery, DeliveryState, Fix, GeoPoint, Route, TrackingCode};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let lat1 = a.latitude.to_radians();
    let lat2 = b.latitude.to_radians();
    let dlat = (b.latitude - a.latitude).to_radians();
    let dlon = (b.longitude - a.longitude).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Route length between two places. Road-network backends can replace the
/// default great-circle estimate.
pub trait DistanceProvider: Send + Sync {
    fn route_distance_m(&self, from: GeoPoint, to: GeoPoint) -> f64;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Haversine;

impl DistanceProvider for Haversine {
    fn route_distance_m(&self, from: GeoPoint, to: GeoPoint) -> f64 {
        haversine_m(from, to)
    }
}

/// Sorts by distance from `origin` to each pickup; ties go to the older
/// delivery, then the smaller id.
pub fn order_by_distance(origin: GeoPoint, deliveries: Vec<Delivery>) -> Vec<Delivery> {
    let mut keyed: Vec<(f64, Delivery)> = deliveries
        .into_iter()
        .map(|d| (haversine_m(origin, d.source.location), d))
        .collect();
    keyed.sort_by(|(da, a), (db, b)| {
        da.partial_cmp(db)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.created_at.cmp(&b.created_at))
            .then_with(|| a.delivery_id.cmp(&b.delivery_id))
    });
    keyed.into_iter().map(|(_, d)| d).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RouteFilter {
    pub courier_id: Option<CourierId>,
    pub delivery: Option<TrackingCode>,
    pub from: Option<DateTime<Utc>>,
    pub to: Option<DateTime<Utc>>,
}

impl RouteFilter {
    pub fn has_window(&self) -> bool {
        self.from.is_some() || self.to.is_some()
    }

    pub fn is_valid(&self) -> bool {
        match (self.from, self.to) {
            (Some(from), Some(to)) => from < to,
            _ => true,
        }
    }

    fn admits_time(&self, at: DateTime<Utc>) -> bool {
        self.from.is_none_or(|from| at >= from) && self.to.is_none_or(|to| at < to)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteView {
    pub tracking_code: TrackingCode,
    pub courier_id: Option<CourierId>,
    pub state: DeliveryState,
    pub points: Vec<Fix>,
}

/// Routes of deliveries currently on the road. Finished deliveries appear
/// only when a time window is given. With a window, points outside it are
/// dropped, as are routes left empty.
pub fn query_routes<'a>(
    filter: &RouteFilter,
    deliveries: impl IntoIterator<Item = (&'a Delivery, Option<&'a Route>)>,
) -> Vec<RouteView> {
    let mut views: Vec<RouteView> = deliveries
        .into_iter()
        .filter(|(d, _)| match d.state {
            DeliveryState::Delivering => true,
            DeliveryState::Delivered | DeliveryState::Undeliverable => filter.has_window(),
            DeliveryState::Ready | DeliveryState::Assigned => false,
        })
        .filter(|(d, _)| filter.courier_id.is_none_or(|c| d.courier_id == Some(c)))
        .filter(|(d, _)| filter.delivery.as_ref().is_none_or(|code| &d.tracking_code == code))
        .filter_map(|(d, route)| {
            let mut points = route.map(|r| r.points.clone()).unwrap_or_default();
            if filter.has_window() {
                points.retain(|fix| filter.admits_time(fix.at));
                if points.is_empty() {
                    return None;
                }
            }
            Some(RouteView {
                tracking_code: d.tracking_code.clone(),
                courier_id: d.courier_id,
                state: d.state,
                points,
            })
        })
        .collect();
    views.sort_by(|a, b| a.tracking_code.cmp(&b.tracking_code));
    views
}
