//! Timed HTTP client for the public interface.

use std::sync::Arc;
use std::time::{Duration, Instant};

use reqwest::{Method, RequestBuilder, StatusCode};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::report::{Endpoint, Recorder};
use crate::SimError;

#[derive(Clone, Debug, Deserialize)]
struct TokenPair {
    access_token: String,
    renew_token: String,
}

/// A logged-in account.
#[derive(Clone, Debug)]
pub struct Session {
    pub email: String,
    pub password: String,
    access: String,
    renew: String,
}

impl Session {
    pub fn access_token(&self) -> &str {
        &self.access
    }
}

#[derive(Clone)]
pub struct Client {
    http: reqwest::Client,
    base: String,
    recorder: Arc<Recorder>,
}

impl Client {
    pub fn new(base_url: &str, recorder: Arc<Recorder>) -> Result<Self, SimError> {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| SimError::Unreachable(e.to_string()))?;
        Ok(Self {
            http,
            base: base_url.trim_end_matches('/').to_owned(),
            recorder,
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub fn recorder(&self) -> &Recorder {
        &self.recorder
    }

    fn request(&self, method: Method, path: &str) -> RequestBuilder {
        self.http.request(method, format!("{}{path}", self.base))
    }

    /// Sends a request and reads the whole body. Only successful calls
    /// contribute a latency sample.
    async fn send(&self, endpoint: Option<Endpoint>, request: RequestBuilder) -> Result<Value, SimError> {
        let started = Instant::now();
        let response = request.send().await.map_err(|e| SimError::Unreachable(e.to_string()))?;
        let status = response.status();
        let bytes = response
            .bytes()
            .await
            .map_err(|e| SimError::Unreachable(e.to_string()))?;
        let elapsed = started.elapsed();
        let body = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes)
                .map_err(|e| SimError::Protocol(format!("non-JSON body with status {status}: {e}")))?
        };
        if !status.is_success() {
            return Err(SimError::from_envelope(status, &body));
        }
        if let Some(endpoint) = endpoint {
            self.recorder.record(endpoint, elapsed);
        }
        Ok(body)
    }

    /// Sends an authenticated request, renewing the token pair once if the
    /// access token has expired.
    async fn authed(
        &self,
        session: &mut Session,
        endpoint: Option<Endpoint>,
        build: impl Fn() -> RequestBuilder,
    ) -> Result<Value, SimError> {
        match self.send(endpoint, build().bearer_auth(&session.access)).await {
            Err(SimError::Http { code, .. }) if code == "token_expired" => {
                self.renew(session).await?;
                self.send(endpoint, build().bearer_auth(&session.access)).await
            }
            other => other,
        }
    }

    pub async fn register(&self, email: &str, password: &str, first: &str, last: &str) -> Result<Value, SimError> {
        let body = json!({"email": email, "password": password, "first_name": first, "last_name": last});
        self.send(
            Some(Endpoint::Registration),
            self.request(Method::POST, "/api/accounts/").json(&body),
        )
        .await
    }

    pub async fn verify(&self, token: &str) -> Result<Value, SimError> {
        self.send(
            None,
            self.request(Method::POST, "/api/accounts/verify/")
                .json(&json!({"token": token})),
        )
        .await
    }

    pub async fn login(&self, email: &str, password: &str) -> Result<Session, SimError> {
        let body = self
            .send(
                Some(Endpoint::Login),
                self.request(Method::GET, "/api/accounts/token/")
                    .basic_auth(email, Some(password)),
            )
            .await?;
        let pair: TokenPair = decode(body)?;
        Ok(Session {
            email: email.to_owned(),
            password: password.to_owned(),
            access: pair.access_token,
            renew: pair.renew_token,
        })
    }

    pub async fn renew(&self, session: &mut Session) -> Result<(), SimError> {
        let body = self
            .send(
                None,
                self.request(Method::POST, "/api/accounts/token/renew/")
                    .json(&json!({"renew_token": session.renew})),
            )
            .await?;
        let pair: TokenPair = decode(body)?;
        session.access = pair.access_token;
        session.renew = pair.renew_token;
        Ok(())
    }

    pub async fn request_reset(&self, email: &str) -> Result<Value, SimError> {
        self.send(
            Some(Endpoint::PasswordUpdate),
            self.request(Method::POST, "/api/accounts/reset_password/")
                .json(&json!({"email": email})),
        )
        .await
    }

    pub async fn confirm_reset(&self, token: &str, password: &str) -> Result<Value, SimError> {
        self.send(
            Some(Endpoint::PasswordUpdate),
            self.request(Method::POST, "/api/accounts/reset_password/confirm/")
                .json(&json!({"token": token, "password": password})),
        )
        .await
    }

    pub async fn register_courier(&self, session: &mut Session, vehicle_class: &str) -> Result<Value, SimError> {
        let body = json!({"vehicle_class": vehicle_class});
        self.authed(session, Some(Endpoint::CourierRegistration), || {
            self.request(Method::POST, "/api/couriers/").json(&body)
        })
        .await
    }

    pub async fn create_delivery(&self, session: &mut Session, payload: &Value) -> Result<Value, SimError> {
        let payload = payload.to_string();
        self.authed(session, Some(Endpoint::DeliveryCreation), || {
            let form = reqwest::multipart::Form::new().text("payload", payload.clone());
            self.request(Method::POST, "/api/deliveries/").multipart(form)
        })
        .await
    }

    pub async fn track(&self, session: Option<&mut Session>, code: &str) -> Result<Value, SimError> {
        let path = format!("/api/deliveries/{code}/");
        match session {
            Some(session) => {
                self.authed(session, Some(Endpoint::Tracking), || self.request(Method::GET, &path))
                    .await
            }
            None => {
                self.send(Some(Endpoint::Tracking), self.request(Method::GET, &path))
                    .await
            }
        }
    }

    pub async fn history(&self, session: &mut Session, direction: &str) -> Result<Value, SimError> {
        self.authed(session, Some(Endpoint::History), || {
            self.request(Method::GET, "/api/deliveries/")
                .query(&[("direction", direction)])
        })
        .await
    }

    pub async fn statistics(&self, session: &mut Session, months: u32) -> Result<Value, SimError> {
        self.authed(session, Some(Endpoint::Statistics), || {
            self.request(Method::GET, "/api/deliveries/statistics/")
                .query(&[("months", months)])
        })
        .await
    }

    pub async fn routes(&self, tracking_code: Option<&str>) -> Result<Value, SimError> {
        let mut request = self.request(Method::GET, "/api/routes/");
        if let Some(code) = tracking_code {
            request = request.query(&[("tracking_code", code)]);
        }
        self.send(Some(Endpoint::Routes), request).await
    }

    pub async fn closest(&self, session: &mut Session, lat: f64, lon: f64, limit: usize) -> Result<Value, SimError> {
        self.authed(session, Some(Endpoint::Closest), || {
            self.request(Method::GET, "/api/couriers/closest_delivery/").query(&[
                ("lat", lat.to_string()),
                ("lon", lon.to_string()),
                ("limit", limit.to_string()),
            ])
        })
        .await
    }

    /// Moves a delivery to `state`. Accepting a ready delivery is the move
    /// to `assigned`.
    pub async fn change_state(&self, session: &mut Session, code: &str, state: &str) -> Result<Value, SimError> {
        let endpoint = if state == "assigned" {
            Endpoint::Accept
        } else {
            Endpoint::StateChange
        };
        let path = format!("/api/deliveries/{code}/state/");
        let body = json!({"state": state});
        self.authed(session, Some(endpoint), || {
            self.request(Method::POST, &path).json(&body)
        })
        .await
    }

    /// Websocket URL of a delivery channel carrying the access token.
    pub fn delivery_socket(&self, code: &str, session: Option<&Session>) -> String {
        let base = self
            .base
            .replacen("http://", "ws://", 1)
            .replacen("https://", "wss://", 1);
        match session {
            Some(s) => format!("{base}/ws/deliveries/{code}/?token={}", s.access),
            None => format!("{base}/ws/deliveries/{code}/"),
        }
    }
}

pub fn decode<T: serde::de::DeserializeOwned>(body: Value) -> Result<T, SimError> {
    serde_json::from_value(body).map_err(|e| SimError::Protocol(format!("unexpected response shape: {e}")))
}

impl SimError {
    fn from_envelope(status: StatusCode, body: &Value) -> Self {
        match body["error"]["code"].as_str() {
            Some(code) => SimError::Http {
                status: status.as_u16(),
                code: code.to_owned(),
                message: body["error"]["message"].as_str().unwrap_or_default().to_owned(),
            },
            None => SimError::Protocol(format!("status {status} without an error envelope: {body}")),
        }
    }
}
