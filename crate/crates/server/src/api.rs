//! The route table and its handlers. The same table drives the router and
//! the generated interface document.

use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use parcelhub_core::accounts::{CourierPatch, ProfilePatch, Registration};
use parcelhub_core::admin::AdminEntity;
use parcelhub_core::dispatch::{Direction, NewDelivery, Picture};
use parcelhub_core::domain::{CourierId, DeliveryState, GeoPoint, TrackingCode, VehicleClass};
use parcelhub_core::geo::RouteFilter;
use parcelhub_core::Error;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::{ApiError, ApiResult};
use crate::extract::{blocking, AppState, Auth, BasicCredentials, MaybeAuth};
use crate::{openapi, ws};

/// Who may call a route.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Access {
    Public,
    /// Works anonymously; a valid token adds detail.
    Optional,
    Basic,
    Bearer,
    Admin,
}

#[derive(Clone, Copy, Debug)]
pub struct RouteSpec {
    pub method: &'static str,
    pub path: &'static str,
    pub access: Access,
    pub status: u16,
    pub summary: &'static str,
}

macro_rules! api {
    ($($method:ident $path:literal $access:ident $status:literal => $handler:path, $summary:literal;)*) => {
        pub const ROUTES: &[RouteSpec] = &[$(RouteSpec {
            method: stringify!($method),
            path: $path,
            access: Access::$access,
            status: $status,
            summary: $summary,
        }),*];

        fn table() -> Router<AppState> {
            Router::new()$(.route($path, axum::routing::$method($handler)))*
        }
    };
}

api! {
    post "/api/accounts/" Public 201 => register, "Register a new account";
    post "/api/accounts/verification_email/" Public 202 => resend_verification, "Send the verification email again";
    post "/api/accounts/verify/" Public 200 => verify_email, "Activate an account from its emailed link";
    get "/api/accounts/token/" Basic 200 => login, "Log in and obtain an access and renew token";
    post "/api/accounts/token/renew/" Public 200 => renew, "Trade a renew token for a new token pair";
    get "/api/accounts/me/" Bearer 200 => me, "Own account data";
    patch "/api/accounts/me/" Bearer 200 => update_me, "Change own account data";
    post "/api/accounts/reset_password/" Public 202 => reset_password, "Email a password reset link";
    post "/api/accounts/reset_password/confirm/" Public 200 => confirm_reset, "Set a new password from a reset link";
    post "/api/deliveries/" Bearer 201 => create_delivery, "Create a delivery (multipart: payload, picture)";
    get "/api/deliveries/" Bearer 200 => history, "Sent or received deliveries, newest first";
    get "/api/deliveries/statistics/" Bearer 200 => statistics, "Monthly counts of sent deliveries";
    get "/api/deliveries/{code}/" Optional 200 => track, "Track a delivery by its tracking code";
    post "/api/deliveries/{code}/state/" Bearer 200 => change_state, "Change the state of a delivery";
    post "/api/couriers/" Bearer 201 => register_courier, "Register the caller as a courier";
    patch "/api/couriers/me/" Bearer 200 => update_courier, "Change own courier availability or vehicle";
    get "/api/couriers/closest_delivery/" Bearer 200 => closest, "Ready deliveries closest to a location";
    get "/api/routes/" Public 200 => routes, "Routes of active deliveries";
    get "/api/admin/{entity}/" Admin 200 => admin_list, "List stored entities";
    get "/api/admin/{entity}/{id}/" Admin 200 => admin_get, "Show one stored entity";
    patch "/api/admin/{entity}/{id}/" Admin 200 => admin_patch, "Edit one stored entity";
    delete "/api/admin/{entity}/{id}/" Admin 204 => admin_delete, "Delete one stored entity";
    get "/api/openapi.json" Public 200 => openapi_document, "This interface document";
    get "/ws/deliveries/{code}/" Optional 101 => ws::delivery_channel, "Websocket: live positions of one delivery";
    get "/ws/couriers/" Public 101 => ws::global_channel, "Websocket: live positions of all active deliveries";
}

/// Multipart uploads carry a picture of up to 5 MiB plus the payload.
const BODY_LIMIT: usize = 6 * 1024 * 1024;

pub fn router(state: AppState) -> Router {
    table()
        .fallback(crate::error::not_found)
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .layer(axum::middleware::from_fn(crate::error::json_errors))
        .layer(axum::middleware::from_fn(crate::log_requests))
        .with_state(state)
}

fn created(body: impl serde::Serialize) -> Response {
    (StatusCode::CREATED, Json(body)).into_response()
}

fn accepted() -> Response {
    (StatusCode::ACCEPTED, Json(json!({"status": "queued"}))).into_response()
}

async fn register(State(state): State<AppState>, Json(form): Json<Registration>) -> ApiResult<Response> {
    Ok(created(blocking(&state, move |p| p.register(form)).await?))
}

#[derive(Deserialize)]
struct EmailBody {
    email: String,
}

async fn resend_verification(State(state): State<AppState>, Json(body): Json<EmailBody>) -> ApiResult<Response> {
    blocking(&state, move |p| p.resend_verification(&body.email)).await?;
    Ok(accepted())
}

#[derive(Deserialize)]
struct TokenBody {
    token: String,
}

async fn verify_email(State(state): State<AppState>, Json(body): Json<TokenBody>) -> ApiResult<Json<Value>> {
    let account_id = blocking(&state, move |p| p.verify_email(&body.token)).await?;
    Ok(Json(json!({"account_id": account_id, "is_active": true})))
}

async fn login(State(state): State<AppState>, credentials: BasicCredentials) -> ApiResult<Response> {
    let pair = blocking(&state, move |p| p.login(&credentials.email, &credentials.password)).await?;
    Ok(Json(pair).into_response())
}

#[derive(Deserialize)]
struct RenewBody {
    renew_token: String,
}

async fn renew(State(state): State<AppState>, Json(body): Json<RenewBody>) -> ApiResult<Response> {
    let pair = blocking(&state, move |p| p.renew(&body.renew_token)).await?;
    Ok(Json(pair).into_response())
}

async fn me(State(state): State<AppState>, Auth(caller): Auth) -> ApiResult<Response> {
    Ok(Json(blocking(&state, move |p| p.profile(&caller)).await?).into_response())
}

async fn update_me(
    State(state): State<AppState>,
    Auth(caller): Auth,
    Json(patch): Json<ProfilePatch>,
) -> ApiResult<Response> {
    Ok(Json(blocking(&state, move |p| p.update_profile(&caller, patch)).await?).into_response())
}

async fn reset_password(State(state): State<AppState>, Json(body): Json<EmailBody>) -> ApiResult<Response> {
    blocking(&state, move |p| p.request_password_reset(&body.email)).await?;
    Ok(accepted())
}

#[derive(Deserialize)]
struct ConfirmBody {
    token: String,
    password: String,
}

async fn confirm_reset(State(state): State<AppState>, Json(body): Json<ConfirmBody>) -> ApiResult<Json<Value>> {
    blocking(&state, move |p| p.confirm_password_reset(&body.token, &body.password)).await?;
    Ok(Json(json!({"status": "password_changed"})))
}

async fn create_delivery(
    State(state): State<AppState>,
    Auth(caller): Auth,
    mut multipart: Multipart,
) -> ApiResult<Response> {
    let bad = |field: &str, e: &dyn std::fmt::Display| ApiError(Error::field(field, &e.to_string()));
    let mut payload = None;
    let mut picture = None;
    while let Some(field) = multipart.next_field().await.map_err(|e| bad("body", &e))? {
        match field.name() {
            Some("payload") => {
                let bytes = field.bytes().await.map_err(|e| bad("payload", &e))?;
                payload = Some(serde_json::from_slice::<NewDelivery>(&bytes).map_err(|e| bad("payload", &e))?);
            }
            Some("picture") => {
                let content_type = field.content_type().unwrap_or_default().to_owned();
                let bytes = field.bytes().await.map_err(|e| bad("picture", &e))?;
                picture = Some(Picture {
                    content_type,
                    bytes: bytes.to_vec(),
                });
            }
            _ => {}
        }
    }
    let payload = payload.ok_or_else(|| Error::field("payload", "required"))?;
    Ok(created(
        blocking(&state, move |p| p.create_delivery(&caller, payload, picture)).await?,
    ))
}

#[derive(Deserialize)]
struct HistoryQuery {
    #[serde(default = "sent")]
    direction: Direction,
}

fn sent() -> Direction {
    Direction::Sent
}

async fn history(
    State(state): State<AppState>,
    Auth(caller): Auth,
    Query(q): Query<HistoryQuery>,
) -> ApiResult<Response> {
    Ok(Json(blocking(&state, move |p| p.list_history(&caller, q.direction)).await?).into_response())
}

#[derive(Deserialize)]
struct StatisticsQuery {
    #[serde(default = "default_months")]
    months: u32,
}

fn default_months() -> u32 {
    12
}

async fn statistics(
    State(state): State<AppState>,
    Auth(caller): Auth,
    Query(q): Query<StatisticsQuery>,
) -> ApiResult<Response> {
    Ok(Json(blocking(&state, move |p| p.statistics(&caller, q.months)).await?).into_response())
}

async fn track(
    State(state): State<AppState>,
    MaybeAuth(caller): MaybeAuth,
    Path(code): Path<String>,
) -> ApiResult<Response> {
    Ok(Json(blocking(&state, move |p| p.track_delivery(&code, caller.as_ref())).await?).into_response())
}

#[derive(Deserialize)]
struct StateBody {
    state: DeliveryState,
    #[serde(default)]
    note: Option<String>,
}

async fn change_state(
    State(state): State<AppState>,
    Auth(caller): Auth,
    Path(code): Path<String>,
    Json(body): Json<StateBody>,
) -> ApiResult<Response> {
    let view = blocking(&state, move |p| p.change_state(&caller, &code, body.state, body.note)).await?;
    Ok(Json(view).into_response())
}

#[derive(Deserialize)]
struct CourierBody {
    vehicle_class: VehicleClass,
}

async fn register_courier(
    State(state): State<AppState>,
    Auth(caller): Auth,
    Json(body): Json<CourierBody>,
) -> ApiResult<Response> {
    Ok(created(
        blocking(&state, move |p| p.register_courier(&caller, body.vehicle_class)).await?,
    ))
}

async fn update_courier(
    State(state): State<AppState>,
    Auth(caller): Auth,
    Json(patch): Json<CourierPatch>,
) -> ApiResult<Response> {
    Ok(Json(blocking(&state, move |p| p.update_courier(&caller, patch)).await?).into_response())
}

#[derive(Deserialize)]
struct ClosestQuery {
    lat: f64,
    lon: f64,
    #[serde(default = "default_limit")]
    limit: usize,
}

fn default_limit() -> usize {
    10
}

async fn closest(
    State(state): State<AppState>,
    Auth(caller): Auth,
    Query(q): Query<ClosestQuery>,
) -> ApiResult<Response> {
    let found = blocking(&state, move |p| {
        p.closest_deliveries(&caller, GeoPoint::new(q.lat, q.lon), q.limit)
    })
    .await?;
    Ok(Json(found).into_response())
}

#[derive(Deserialize)]
struct RoutesQuery {
    courier_id: Option<CourierId>,
    tracking_code: Option<String>,
    from: Option<DateTime<Utc>>,
    to: Option<DateTime<Utc>>,
}

async fn routes(State(state): State<AppState>, Query(q): Query<RoutesQuery>) -> ApiResult<Response> {
    let delivery = match q.tracking_code {
        Some(code) => Some(TrackingCode::parse(&code).ok_or_else(|| Error::field("tracking_code", "malformed"))?),
        None => None,
    };
    let filter = RouteFilter {
        courier_id: q.courier_id,
        delivery,
        from: q.from,
        to: q.to,
    };
    Ok(Json(blocking(&state, move |p| p.query_routes(&filter)).await?).into_response())
}

async fn admin_list(
    State(state): State<AppState>,
    Auth(caller): Auth,
    Path(entity): Path<String>,
) -> ApiResult<Response> {
    let entity: AdminEntity = entity.parse()?;
    Ok(Json(blocking(&state, move |p| p.admin_list(&caller, entity)).await?).into_response())
}

async fn admin_get(
    State(state): State<AppState>,
    Auth(caller): Auth,
    Path((entity, id)): Path<(String, String)>,
) -> ApiResult<Response> {
    let entity: AdminEntity = entity.parse()?;
    Ok(Json(blocking(&state, move |p| p.admin_get(&caller, entity, &id)).await?).into_response())
}

async fn admin_patch(
    State(state): State<AppState>,
    Auth(caller): Auth,
    Path((entity, id)): Path<(String, String)>,
    Json(patch): Json<Value>,
) -> ApiResult<Response> {
    let entity: AdminEntity = entity.parse()?;
    Ok(Json(blocking(&state, move |p| p.admin_patch(&caller, entity, &id, patch)).await?).into_response())
}

async fn admin_delete(
    State(state): State<AppState>,
    Auth(caller): Auth,
    Path((entity, id)): Path<(String, String)>,
) -> ApiResult<StatusCode> {
    let entity: AdminEntity = entity.parse()?;
    blocking(&state, move |p| p.admin_delete(&caller, entity, &id)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn openapi_document() -> Json<Value> {
    Json(openapi::document())
}
