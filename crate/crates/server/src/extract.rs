use std::sync::Arc;

use axum::extract::FromRequestParts;
use axum::http::header::AUTHORIZATION;
use axum::http::request::Parts;
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use parcelhub_core::{Caller, Error, Platform};

use crate::error::ApiError;

pub type AppState = Arc<Platform>;

fn authorization<'a>(parts: &'a Parts, scheme: &str) -> Option<&'a str> {
    let value = parts.headers.get(AUTHORIZATION)?.to_str().ok()?;
    let (given, rest) = value.split_once(' ')?;
    given.eq_ignore_ascii_case(scheme).then_some(rest.trim())
}

pub fn bearer(parts: &Parts) -> Option<&str> {
    authorization(parts, "Bearer")
}

/// A caller holding a valid access token.
pub struct Auth(pub Caller);

impl FromRequestParts<AppState> for Auth {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, ApiError> {
        let token = bearer(parts).ok_or(Error::Unauthenticated)?;
        Ok(Auth(state.authenticate(token)?))
    }
}

/// Public routes: a valid token identifies the caller, anything else is
/// treated as anonymous.
pub struct MaybeAuth(pub Option<Caller>);

impl FromRequestParts<AppState> for MaybeAuth {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, ApiError> {
        Ok(MaybeAuth(bearer(parts).and_then(|t| state.authenticate(t).ok())))
    }
}

/// Email and password from a Basic authorization header.
pub struct BasicCredentials {
    pub email: String,
    pub password: String,
}

impl<S: Send + Sync> FromRequestParts<S> for BasicCredentials {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Self, ApiError> {
        let encoded = authorization(parts, "Basic").ok_or(Error::InvalidCredentials)?;
        let decoded = STANDARD.decode(encoded).map_err(|_| Error::InvalidCredentials)?;
        let text = String::from_utf8(decoded).map_err(|_| Error::InvalidCredentials)?;
        let (email, password) = text.split_once(':').ok_or(Error::InvalidCredentials)?;
        Ok(BasicCredentials {
            email: email.to_owned(),
            password: password.to_owned(),
        })
    }
}

/// Runs a platform call on the blocking pool; password hashing and store
/// commits must not stall the reactor.
pub async fn blocking<T, F>(state: &AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Platform) -> Result<T, Error> + Send + 'static,
{
    let platform = Arc::clone(state);
    tokio::task::spawn_blocking(move || f(&platform))
        .await
        .map_err(|e| Error::Internal(e.to_string()))?
        .map_err(ApiError)
}
