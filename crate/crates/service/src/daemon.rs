//! Periodic anti-entropy with configured peers over the HTTP sync endpoints.
//!
//! One exchange mirrors `apply_sync_round`: the initiator posts its digest,
//! receives the peer's digest plus the peer's offer, applies that offer, and
//! posts back its own offer computed from its state as it was before applying.

use std::sync::Arc;
use std::time::Duration;

use rfo_core::sync::{build_offer, compute_missing, make_digest, NodeRole, SyncAck};
use thiserror::Error;

use crate::api::{DigestRequest, DigestResponse};
use crate::node::{Node, NodeError};

#[derive(Debug, Error)]
pub enum DaemonError {
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("peer answered {status}: {body}")]
    Status { status: u16, body: String },
    #[error(transparent)]
    Node(#[from] NodeError),
    #[error("no peer token configured")]
    NoPeerToken,
}

/// Acknowledgements for both directions of one exchange.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Exchange {
    pub pulled: SyncAck,
    pub pushed: SyncAck,
}

async fn post<T: serde::de::DeserializeOwned>(
    client: &reqwest::Client,
    url: String,
    token: &str,
    body: &impl serde::Serialize,
) -> Result<T, DaemonError> {
    let resp = client.post(url).bearer_auth(token).json(body).send().await?;
    let status = resp.status();
    if !status.is_success() {
        let body = resp.text().await.unwrap_or_default();
        return Err(DaemonError::Status { status: status.as_u16(), body });
    }
    Ok(resp.json().await?)
}

/// One bidirectional exchange with `peer` (a base URL).
pub async fn sync_with_peer(node: &Node, client: &reqwest::Client, peer: &str) -> Result<Exchange, DaemonError> {
    let token = node.config().peer_token.clone().ok_or(DaemonError::NoPeerToken)?;
    let base = peer.trim_end_matches('/');
    let before = node.view();
    let req = DigestRequest { node_id: before.state().node_id.clone(), digest: make_digest(before.state()) };
    let resp: DigestResponse = post(client, format!("{base}/v1/sync/digest"), &token, &req).await?;
    let ours = build_offer(before.state(), &compute_missing(&resp.digest, before.state()));
    let pulled = node.apply_offer(resp.offer).await?;
    let pushed: SyncAck = post(client, format!("{base}/v1/sync/offer"), &token, &ours).await?;
    Ok(Exchange { pulled, pushed })
}

/// One daemon tick: exchange with every peer in order, then (on the central
/// node) arbitrate pending claims. Peer failures are counted and skipped.
pub async fn tick(node: &Node, client: &reqwest::Client) {
    for peer in &node.config().peers {
        match sync_with_peer(node, client, peer).await {
            Ok(x) => log::debug!("synced with {peer}: pulled {:?}, pushed {:?}", x.pulled, x.pushed),
            Err(e) => {
                node.record_sync_error();
                log::warn!("sync with {peer} failed: {e}");
            }
        }
    }
    if node.config().role == NodeRole::Central {
        if let Err(e) = node.reconcile().await {
            log::error!("claim reconciliation failed: {e}");
        }
    }
}

pub fn client() -> reqwest::Client {
    reqwest::Client::builder().timeout(Duration::from_secs(30)).build().expect("http client")
}

/// Runs `tick` every `sync_interval_ms` until the task is dropped.
pub async fn run_sync_daemon(node: Arc<Node>) {
    let client = client();
    let mut interval = tokio::time::interval(Duration::from_millis(node.config().sync_interval_ms.max(1)));
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        interval.tick().await;
        tick(&node, &client).await;
    }
}
