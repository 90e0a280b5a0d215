#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use rfo_core::sync::NodeRole;
use rfo_service::{api, Config, Node};
use serde_json::Value;
use tower::ServiceExt;

pub const BOOT: &str = "boot-operator-secret";
pub const PEER: &str = "peer-secret";

pub fn golden(name: &str) -> Vec<u8> {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

pub fn golden_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

pub fn config(dir: &Path, node_id: &str, role: NodeRole) -> Config {
    Config {
        node_id: node_id.into(),
        role,
        data_dir: dir.to_path_buf(),
        peer_token: Some(PEER.into()),
        bootstrap_operator_token: Some(BOOT.into()),
        ..Config::default()
    }
}

pub fn open(dir: &Path, node_id: &str, role: NodeRole) -> Arc<Node> {
    Arc::new(Node::open(config(dir, node_id, role)).unwrap())
}

pub struct Reply {
    pub status: StatusCode,
    pub content_type: String,
    pub text: String,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.text).unwrap_or_else(|e| panic!("not json ({e}): {}", self.text))
    }
}

pub async fn call(app: &Router, method: Method, uri: &str, token: Option<&str>, body: Option<Body>, json: bool) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    if json {
        req = req.header("content-type", "application/json");
    }
    let resp = app.clone().oneshot(req.body(body.unwrap_or_else(Body::empty)).unwrap()).await.unwrap();
    let status = resp.status();
    let content_type = resp
        .headers()
        .get("content-type")
        .map(|v| v.to_str().unwrap().to_string())
        .unwrap_or_default();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    Reply { status, content_type, text: String::from_utf8(bytes.to_vec()).unwrap() }
}

pub async fn get(app: &Router, uri: &str) -> Reply {
    call(app, Method::GET, uri, None, None, false).await
}

pub async fn post_json(app: &Router, uri: &str, token: Option<&str>, body: &Value) -> Reply {
    call(app, Method::POST, uri, token, Some(Body::from(body.to_string())), true).await
}

pub async fn post_raw(app: &Router, uri: &str, token: Option<&str>, body: Vec<u8>) -> Reply {
    call(app, Method::POST, uri, token, Some(Body::from(body)), false).await
}

/// Binds an ephemeral local port; returns the listener and its base URL.
pub async fn bind() -> (tokio::net::TcpListener, String) {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    (listener, url)
}

pub fn serve_on(listener: tokio::net::TcpListener, node: Arc<Node>) {
    tokio::spawn(async move {
        axum::serve(listener, api::router(node)).await.unwrap();
    });
}

/// Serves `node` on an ephemeral local port and returns its base URL.
pub async fn spawn_server(node: Arc<Node>) -> String {
    let (listener, url) = bind().await;
    serve_on(listener, node);
    url
}

/// Bootstraps a collector account and a campaign on `app`; returns (token, campaign_id).
pub async fn collector_with_campaign(app: &Router, name: &str) -> (String, String) {
    let acct = post_json(app, "/v1/accounts", Some(BOOT), &serde_json::json!({"display_name": name, "role": "COLLECTOR"})).await;
    assert_eq!(acct.status, StatusCode::CREATED, "{}", acct.text);
    let token = acct.json()["token"].as_str().unwrap().to_string();
    let c = post_json(app, "/v1/campaigns", Some(&token), &serde_json::json!({"name": format!("{name}-campaign")})).await;
    assert_eq!(c.status, StatusCode::CREATED, "{}", c.text);
    (token, c.json()["campaign_id"].as_str().unwrap().to_string())
}
