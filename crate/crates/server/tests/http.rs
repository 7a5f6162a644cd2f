mod common;

use common::{is_envelope, payload, read, server, PASSWORD};
use parcelhub_core::domain::TrackingCode;
use parcelhub_core::realtime::Channel;
use reqwest::multipart::{Form, Part};
use reqwest::StatusCode;
use serde_json::json;
use std::time::Duration;

#[tokio::test]
async fn account_lifecycle() {
    let s = server().await;
    let (status, body) = s
        .post(
            "/api/accounts/",
            None,
            &json!({"email": "ann@example.org", "password": PASSWORD, "first_name": "Ann", "last_name": "Lee"}),
        )
        .await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["email"], "ann@example.org");
    assert_eq!(body["is_active"], false);

    let (status, body) = s
        .post(
            "/api/accounts/",
            None,
            &json!({"email": "ANN@example.org", "password": PASSWORD, "first_name": "Ann", "last_name": "Lee"}),
        )
        .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "email_taken");

    let (status, body) = s
        .post(
            "/api/accounts/",
            None,
            &json!({"email": "nope", "password": "x", "first_name": ""}),
        )
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(is_envelope(&body));
    for field in ["email", "password", "first_name", "last_name"] {
        assert!(body["error"]["fields"][field].is_string(), "{field}: {body}");
    }

    // Not verified yet.
    let login = s
        .http
        .get(s.url("/api/accounts/token/"))
        .basic_auth("ann@example.org", Some(PASSWORD));
    let (status, body) = read(login.send().await.unwrap()).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert_eq!(body["error"]["code"], "inactive_account");

    let token = s
        .mail
        .wait_token("ann@example.org", "verify_email", Duration::from_secs(10))
        .await
        .unwrap();
    let (status, body) = s.post("/api/accounts/verify/", None, &json!({"token": token})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["is_active"], true);
    let (status, body) = s.post("/api/accounts/verify/", None, &json!({"token": token})).await;
    assert_eq!(
        (status, body["error"]["code"].as_str()),
        (StatusCode::BAD_REQUEST, Some("link_used"))
    );

    let wrong = s
        .http
        .get(s.url("/api/accounts/token/"))
        .basic_auth("ann@example.org", Some("wrong password"))
        .send()
        .await
        .unwrap();
    assert_eq!(wrong.status(), StatusCode::UNAUTHORIZED);
    assert!(wrong.headers().contains_key("www-authenticate"));
    assert_eq!(read(wrong).await.1["error"]["code"], "invalid_credentials");

    let session = s.client.login("ann@example.org", PASSWORD).await.unwrap();
    let (status, me) = s.get("/api/accounts/me/", Some(session.access_token())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(me["first_name"], "Ann");
    assert_eq!(me["role"], "user");

    let patched = s
        .http
        .patch(s.url("/api/accounts/me/"))
        .bearer_auth(session.access_token())
        .json(&json!({"first_name": "Anna", "phone": "+381 11 123"}))
        .send()
        .await
        .unwrap();
    let (status, me) = read(patched).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(me["first_name"], "Anna");
    assert_eq!(me["phone"], "+381 11 123");

    let (status, _) = s.get("/api/accounts/me/", None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, body) = s.get("/api/accounts/me/", Some("not-a-token")).await;
    assert_eq!(
        (status, body["error"]["code"].as_str()),
        (StatusCode::UNAUTHORIZED, Some("token_invalid"))
    );
}

#[tokio::test]
async fn password_reset_through_the_emailed_link() {
    let s = server().await;
    s.user("bo@example.org", "Bo", "Berg").await;
    let (status, _) = s
        .post(
            "/api/accounts/reset_password/",
            None,
            &json!({"email": "bo@example.org"}),
        )
        .await;
    assert_eq!(status, StatusCode::ACCEPTED);
    // Unknown addresses get the same answer.
    let (status, _) = s
        .post(
            "/api/accounts/reset_password/",
            None,
            &json!({"email": "ghost@example.org"}),
        )
        .await;
    assert_eq!(status, StatusCode::ACCEPTED);

    let token = s
        .mail
        .wait_token("bo@example.org", "reset_password", Duration::from_secs(10))
        .await
        .unwrap();
    let (status, body) = s
        .post(
            "/api/accounts/reset_password/confirm/",
            None,
            &json!({"token": token, "password": "short"}),
        )
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"]["fields"]["password"].is_string());

    let (status, _) = s
        .post(
            "/api/accounts/reset_password/confirm/",
            None,
            &json!({"token": token, "password": "a brand new secret"}),
        )
        .await;
    assert_eq!(status, StatusCode::OK);
    assert!(s.client.login("bo@example.org", "a brand new secret").await.is_ok());
    let old = s.client.login("bo@example.org", PASSWORD).await;
    assert!(matches!(old, Err(parcelhub_sim::SimError::Http { status: 401, .. })));
}

#[tokio::test]
async fn renew_tokens_are_single_use() {
    let s = server().await;
    let pair = {
        s.user("cy@example.org", "Cy", "Cole").await;
        let response = s
            .http
            .get(s.url("/api/accounts/token/"))
            .basic_auth("cy@example.org", Some(PASSWORD))
            .send()
            .await
            .unwrap();
        read(response).await.1
    };
    let renew = json!({"renew_token": pair["renew_token"]});
    let (status, fresh) = s.post("/api/accounts/token/renew/", None, &renew).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = s.get("/api/accounts/me/", fresh["access_token"].as_str()).await;
    assert_eq!(status, StatusCode::OK);
    let (status, body) = s.post("/api/accounts/token/renew/", None, &renew).await;
    assert_eq!(
        (status, body["error"]["code"].as_str()),
        (StatusCode::UNAUTHORIZED, Some("token_invalid"))
    );
    // An access token is not a renew token.
    let (status, _) = s
        .post(
            "/api/accounts/token/renew/",
            None,
            &json!({"renew_token": fresh["access_token"]}),
        )
        .await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn delivery_flow_over_http() {
    let s = server().await;
    let mut sender = s.user("sam@example.org", "Sam", "Sender").await;
    let mut receiver = s.user("rita@example.org", "Rita", "Receiver").await;
    let mut courier = s.courier("cora@example.org").await;
    let mut rival = s.courier("cole@example.org").await;

    let png = b"\x89PNG\r\n\x1a\nnot really an image".to_vec();
    let form = Form::new()
        .text(
            "payload",
            payload((44.80, 20.45), (44.82, 20.47), "rita@example.org").to_string(),
        )
        .part(
            "picture",
            Part::bytes(png).mime_str("image/png").unwrap().file_name("box.png"),
        );
    let response = s
        .http
        .post(s.url("/api/deliveries/"))
        .bearer_auth(sender.access_token())
        .multipart(form)
        .send()
        .await
        .unwrap();
    let (status, created) = read(response).await;
    assert_eq!(status, StatusCode::CREATED, "{created}");
    assert_eq!(created["state"], "ready");
    assert!(created["item"]["picture"].is_string());
    let code = created["tracking_code"].as_str().unwrap().to_owned();
    assert_eq!(code.len(), 12);

    let form = Form::new()
        .text(
            "payload",
            payload((44.80, 20.45), (44.82, 20.47), "rita@example.org").to_string(),
        )
        .part(
            "picture",
            Part::bytes(b"GIF89a".to_vec()).mime_str("image/png").unwrap(),
        );
    let response = s
        .http
        .post(s.url("/api/deliveries/"))
        .bearer_auth(sender.access_token())
        .multipart(form)
        .send()
        .await
        .unwrap();
    let (status, body) = read(response).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"]["fields"]["picture"].is_string());

    let response = s
        .http
        .post(s.url("/api/deliveries/"))
        .bearer_auth(sender.access_token())
        .multipart(Form::new().text("other", "x"))
        .send()
        .await
        .unwrap();
    let (status, body) = read(response).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"]["fields"]["payload"].is_string());

    let anonymous = s.client.track(None, &code).await.unwrap();
    assert!(anonymous.get("receiver").is_none());
    assert!(!anonymous.to_string().contains("Rita"));
    let known = s.client.track(Some(&mut receiver), &code).await.unwrap();
    assert_eq!(known["receiver"]["email"], "rita@example.org");
    let (status, body) = s.get("/api/deliveries/AAAAAAAAAAAA/", None).await;
    assert_eq!(
        (status, body["error"]["code"].as_str()),
        (StatusCode::NOT_FOUND, Some("unknown_tracking_code"))
    );

    let sent = s.client.history(&mut sender, "sent").await.unwrap();
    assert_eq!(sent[0]["tracking_code"], code.as_str());
    let received = s.client.history(&mut receiver, "received").await.unwrap();
    assert_eq!(received.as_array().unwrap().len(), 1);
    let stats = s.client.statistics(&mut sender, 3).await.unwrap();
    assert_eq!(stats["total"], 1);
    assert_eq!(stats["months"].as_array().unwrap().len(), 3);
    let (status, _) = s
        .get("/api/deliveries/statistics/?months=0", Some(sender.access_token()))
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let refused = s.client.closest(&mut sender, 44.8, 20.45, 5).await;
    assert!(
        matches!(refused, Err(parcelhub_sim::SimError::Http { status: 403, ref code, .. }) if code == "not_a_courier")
    );
    let offers = s.client.closest(&mut courier, 44.8, 20.45, 5).await.unwrap();
    assert_eq!(offers[0]["tracking_code"], code.as_str());
    let (status, _) = s
        .get(
            "/api/couriers/closest_delivery/?lat=95&lon=0",
            Some(courier.access_token()),
        )
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    s.client.change_state(&mut courier, &code, "assigned").await.unwrap();
    let lost = s.client.change_state(&mut rival, &code, "assigned").await;
    assert!(matches!(lost, Err(parcelhub_sim::SimError::Http { status: 409, .. })));
    let lost = s.client.change_state(&mut rival, &code, "delivering").await;
    assert!(matches!(lost, Err(parcelhub_sim::SimError::Http { status: 403, .. })));
    s.client.change_state(&mut courier, &code, "delivering").await.unwrap();

    let channel = Channel::Delivery(TrackingCode::parse(&code).unwrap());
    let conn = s
        .platform()
        .open_channel(channel, Some(courier.access_token()))
        .unwrap();
    s.platform().publish_location(conn.id, 44.81, 20.46).unwrap();
    s.platform().close_connection(conn.id);
    let routes = s.client.routes(Some(&code)).await.unwrap();
    assert_eq!(routes[0]["tracking_code"], code.as_str());
    assert_eq!(routes[0]["points"].as_array().unwrap().len(), 1);
    let tracked = s.client.track(None, &code).await.unwrap();
    assert_eq!(tracked["courier_position"]["point"]["latitude"], 44.81);

    let done = s.client.change_state(&mut courier, &code, "delivered").await.unwrap();
    assert_eq!(done["state"], "delivered");
    let (status, body) = s
        .post(
            &format!("/api/deliveries/{code}/state/"),
            Some(courier.access_token()),
            &json!({"state": "ready"}),
        )
        .await;
    assert_eq!(
        (status, body["error"]["code"].as_str()),
        (StatusCode::CONFLICT, Some("forbidden_transition"))
    );
    s.mail
        .wait_for("sam@example.org", "delivery_completed", Duration::from_secs(10))
        .await
        .unwrap();
    s.mail
        .wait_for("rita@example.org", "delivery_created_receiver", Duration::from_secs(10))
        .await
        .unwrap();
}

#[tokio::test]
async fn framework_errors_use_the_envelope() {
    let s = server().await;
    let cases = [
        (s.http.get(s.url("/nowhere")), StatusCode::NOT_FOUND),
        (s.http.delete(s.url("/api/accounts/")), StatusCode::METHOD_NOT_ALLOWED),
        (
            s.http
                .post(s.url("/api/accounts/"))
                .header("content-type", "text/plain")
                .body("hello"),
            StatusCode::UNSUPPORTED_MEDIA_TYPE,
        ),
        (
            s.http
                .post(s.url("/api/accounts/"))
                .header("content-type", "application/json")
                .body("{not json"),
            StatusCode::BAD_REQUEST,
        ),
        (
            s.http.post(s.url("/api/accounts/")).json(&json!({"email": 5})),
            StatusCode::BAD_REQUEST,
        ),
        (
            s.http
                .post(s.url("/api/accounts/verify/"))
                .header("content-type", "application/json")
                .body(vec![b' '; 7 * 1024 * 1024]),
            StatusCode::PAYLOAD_TOO_LARGE,
        ),
        (
            s.http.get(s.url("/api/couriers/closest_delivery/?lat=x")),
            StatusCode::UNAUTHORIZED,
        ),
        (
            s.http.get(s.url("/api/routes/?from=yesterday")),
            StatusCode::BAD_REQUEST,
        ),
        (s.http.get(s.url("/api/admin/accounts/")), StatusCode::UNAUTHORIZED),
    ];
    for (request, expected) in cases {
        let (status, body) = read(request.send().await.unwrap()).await;
        assert_eq!(status, expected, "{body}");
        assert!(is_envelope(&body), "{status}: {body}");
    }
}

#[tokio::test]
async fn admin_surface() {
    let s = server().await;
    let user = s.user("user@example.org", "Uma", "User").await;
    let (status, body) = s.get("/api/admin/accounts/", Some(user.access_token())).await;
    assert_eq!(
        (status, body["error"]["code"].as_str()),
        (StatusCode::FORBIDDEN, Some("admin_only"))
    );

    s.user("root@example.org", "Ada", "Admin").await;
    s.platform().grant_admin("root@example.org").unwrap();
    let admin = s.client.login("root@example.org", PASSWORD).await.unwrap();
    let token = Some(admin.access_token());

    let (status, accounts) = s.get("/api/admin/accounts/", token).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(accounts.as_array().unwrap().len(), 2);
    assert!(!accounts.to_string().contains("argon2"), "no password hashes");

    let mut sender = s.client.login("user@example.org", PASSWORD).await.unwrap();
    let code = s
        .send(&mut sender, (44.8, 20.4), (44.9, 20.5), "someone@example.org")
        .await;
    let (status, delivery) = s.get(&format!("/api/admin/deliveries/{code}/"), token).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(delivery["history"][0]["state"], "ready");

    let courier = s.courier("cora@example.org").await;
    let (_, couriers) = s.get("/api/admin/couriers/", token).await;
    let courier_id = couriers[0]["courier_id"].as_str().unwrap().to_owned();
    let response = s
        .http
        .patch(s.url(&format!("/api/admin/couriers/{courier_id}/")))
        .bearer_auth(admin.access_token())
        .json(&json!({"is_available": false}))
        .send()
        .await
        .unwrap();
    let (status, body) = read(response).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["is_available"], false);
    let (_, me) = s.get("/api/accounts/me/", Some(courier.access_token())).await;
    assert_eq!(me["courier"]["is_available"], false);

    let response = s
        .http
        .delete(s.url(&format!("/api/admin/deliveries/{code}/")))
        .bearer_auth(admin.access_token())
        .send()
        .await
        .unwrap();
    assert_eq!(response.status(), StatusCode::NO_CONTENT);
    let (status, _) = s.get(&format!("/api/deliveries/{code}/"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, body) = s.get("/api/admin/widgets/", token).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(is_envelope(&body));
}

#[tokio::test]
async fn interface_document_is_served() {
    let s = server().await;
    let (status, doc) = s.get("/api/openapi.json", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(doc, parcelhub_server::openapi::document());
    assert_eq!(doc["openapi"], "3.0.3");
}
