//! Websocket endpoints over the realtime hub.

use axum::extract::ws::{CloseFrame, Message, Utf8Bytes, WebSocket, WebSocketUpgrade};
use axum::extract::FromRequestParts;
use axum::extract::{Path, Query, State};
use axum::http::request::Parts;
use axum::response::Response;
use parcelhub_core::domain::TrackingCode;
use parcelhub_core::realtime::{error_frame, Channel, Connection, Mode};
use parcelhub_core::Error;
use serde::Deserialize;

use crate::error::ApiResult;
use crate::extract::{bearer, AppState};

#[derive(Deserialize)]
pub struct TokenQuery {
    token: Option<String>,
}

/// Browsers cannot set headers on websocket requests, so the access token
/// may also arrive as `?token=`.
pub struct WsToken(Option<String>);

impl FromRequestParts<AppState> for WsToken {
    type Rejection = std::convert::Infallible;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        if let Some(token) = bearer(parts) {
            return Ok(WsToken(Some(token.to_owned())));
        }
        let query = Query::<TokenQuery>::from_request_parts(parts, state).await;
        Ok(WsToken(query.ok().and_then(|q| q.0.token)))
    }
}

pub async fn delivery_channel(
    State(state): State<AppState>,
    Path(code): Path<String>,
    WsToken(token): WsToken,
    upgrade: WebSocketUpgrade,
) -> ApiResult<Response> {
    let code = TrackingCode::parse(&code).ok_or(Error::UnknownTrackingCode)?;
    let conn = state.open_channel(Channel::Delivery(code), token.as_deref())?;
    Ok(upgrade.on_upgrade(move |socket| pump(state, conn, socket)))
}

pub async fn global_channel(State(state): State<AppState>, upgrade: WebSocketUpgrade) -> ApiResult<Response> {
    let conn = state.open_channel(Channel::Global, None)?;
    Ok(upgrade.on_upgrade(move |socket| pump(state, conn, socket)))
}

/// Moves frames both ways until either side goes away. Publishing takes
/// the store lock, so it runs on the blocking pool.
async fn pump(state: AppState, mut conn: Connection, mut socket: WebSocket) {
    loop {
        tokio::select! {
            outgoing = conn.frames.recv() => match outgoing {
                Some(frame) => {
                    if socket.send(Message::Text(Utf8Bytes::from(frame.as_ref()))).await.is_err() {
                        break;
                    }
                }
                None => {
                    // Dropped by the hub: stale publisher or a full queue.
                    let close = CloseFrame { code: 1008, reason: Utf8Bytes::from_static("closed by server") };
                    let _ = socket.send(Message::Close(Some(close))).await;
                    break;
                }
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Text(text))) => {
                    let reply = if conn.mode == Mode::Subscriber {
                        Some(error_frame(Error::NotPublisher.code()))
                    } else {
                        let platform = state.clone();
                        let id = conn.id;
                        let text = text.to_string();
                        match tokio::task::spawn_blocking(move || platform.handle_frame(id, &text)).await {
                            Ok(Ok(_)) => None,
                            Ok(Err(e)) => Some(error_frame(e.code())),
                            Err(_) => Some(error_frame("internal")),
                        }
                    };
                    if let Some(reply) = reply {
                        if socket.send(Message::Text(reply.into())).await.is_err() {
                            break;
                        }
                    }
                }
                Some(Ok(Message::Binary(_))) => {
                    if socket.send(Message::Text(error_frame("unsupported_frame").into())).await.is_err() {
                        break;
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
    state.close_connection(conn.id);
}
