mod common;

use std::time::Duration;

use common::{read, server};
use futures::{SinkExt, StreamExt};
use reqwest::StatusCode;
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Socket = WebSocketStream<MaybeTlsStream<tokio::net::TcpStream>>;

async fn next_json(socket: &mut Socket) -> Value {
    loop {
        let message = tokio::time::timeout(Duration::from_secs(5), socket.next())
            .await
            .expect("frame within 5 s")
            .expect("socket open")
            .expect("valid frame");
        if let Message::Text(text) = message {
            return serde_json::from_str(&text).unwrap();
        }
    }
}

async fn send(socket: &mut Socket, value: Value) {
    socket.send(Message::Text(value.to_string().into())).await.unwrap();
}

#[tokio::test]
async fn publisher_and_subscribers() {
    let s = server().await;
    let mut sender = s.user("sam@example.org", "Sam", "Sender").await;
    let mut courier = s.courier("cora@example.org").await;
    let code = s
        .send(&mut sender, (44.80, 20.45), (44.82, 20.47), "rita@example.org")
        .await;

    let (mut watcher, _) = connect_async(s.ws_url(&format!("/ws/deliveries/{code}/")))
        .await
        .unwrap();
    let (mut everyone, _) = connect_async(s.ws_url("/ws/couriers/")).await.unwrap();

    // Not assigned yet: the courier's token only grants a subscription.
    let url = s.ws_url(&format!("/ws/deliveries/{code}/?token={}", courier.access_token()));
    let (mut early, _) = connect_async(url.as_str()).await.unwrap();
    send(&mut early, json!({"lat": 44.8, "lon": 20.45})).await;
    assert_eq!(next_json(&mut early).await["error"]["code"], "not_publisher");

    s.client.change_state(&mut courier, &code, "assigned").await.unwrap();
    let (mut publisher, _) = connect_async(url.as_str()).await.unwrap();
    send(&mut publisher, json!({"lat": 44.81, "lon": 20.46})).await;
    for socket in [&mut publisher, &mut watcher, &mut everyone] {
        let frame = next_json(socket).await;
        assert_eq!(frame["delivery_id"], code.as_str());
        assert_eq!(frame["lat"], 44.81);
        assert!(frame["courier_id"].is_string());
        assert!(frame["ts"].is_string());
    }

    send(&mut watcher, json!({"lat": 1.0, "lon": 1.0})).await;
    assert_eq!(next_json(&mut watcher).await["error"]["code"], "not_publisher");
    send(&mut publisher, json!({"lat": 91.0, "lon": 0.0})).await;
    assert_eq!(next_json(&mut publisher).await["error"]["code"], "invalid_coordinates");
    send(&mut publisher, json!("garbage")).await;
    assert_eq!(next_json(&mut publisher).await["error"]["code"], "validation_error");
    publisher.send(Message::Binary(vec![1, 2, 3].into())).await.unwrap();
    assert_eq!(next_json(&mut publisher).await["error"]["code"], "unsupported_frame");

    // Routes list deliveries that are on their way.
    assert_eq!(s.client.routes(Some(&code)).await.unwrap(), json!([]));
    s.client.change_state(&mut courier, &code, "delivering").await.unwrap();
    let routes = s.client.routes(Some(&code)).await.unwrap();
    assert_eq!(routes[0]["points"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn unknown_deliveries_are_refused_before_the_upgrade() {
    let s = server().await;
    let response = s
        .http
        .get(s.url("/ws/deliveries/AAAAAAAAAAAA/"))
        .header("connection", "upgrade")
        .header("upgrade", "websocket")
        .header("sec-websocket-version", "13")
        .header("sec-websocket-key", "dGhlIHNhbXBsZSBub25jZQ==")
        .send()
        .await
        .unwrap();
    let (status, body) = read(response).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "unknown_tracking_code");
    assert!(connect_async(s.ws_url("/ws/deliveries/not-a-code/")).await.is_err());
}

#[tokio::test]
async fn finished_deliveries_stop_accepting_positions() {
    let s = server().await;
    let mut sender = s.user("sam@example.org", "Sam", "Sender").await;
    let mut courier = s.courier("cora@example.org").await;
    let code = s
        .send(&mut sender, (44.80, 20.45), (44.82, 20.47), "rita@example.org")
        .await;
    s.client.change_state(&mut courier, &code, "assigned").await.unwrap();
    s.client.change_state(&mut courier, &code, "delivering").await.unwrap();
    let url = s.ws_url(&format!("/ws/deliveries/{code}/?token={}", courier.access_token()));
    let (mut publisher, _) = connect_async(url.as_str()).await.unwrap();
    send(&mut publisher, json!({"lat": 44.81, "lon": 20.46})).await;
    assert_eq!(next_json(&mut publisher).await["lat"], 44.81);
    s.client.change_state(&mut courier, &code, "delivered").await.unwrap();
    send(&mut publisher, json!({"lat": 44.82, "lon": 20.47})).await;
    assert_eq!(next_json(&mut publisher).await["error"]["code"], "wrong_state");
}
