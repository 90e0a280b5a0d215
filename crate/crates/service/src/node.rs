//! A running repository node: one serialized writer, lock-free-ish readers.
//!
//! Every mutation takes the writer lock (FIFO), works on a copy of the current
//! state, appends the resulting entries to the log and only then publishes the
//! new state. Readers grab the published `Arc` and never wait for a writer.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use rfo_core::geo::polygons_intersect;
use rfo_core::ingest::{ingest_file, new_campaign, CalibrationProfile, IngestContext, IngestError, IngestReport};
use rfo_core::model::{Campaign, CampaignId, ChannelPlan, ClaimId, FrequencySpan, Polygon, SweepRecord};
use rfo_core::sync::{
    apply_offer, central_reconcile, claim_transition, Actor, Claim, ClaimError, ClaimEvent,
    EarliestSubmission, NodeRole, Offer, ReplicaState, StateEntry, SyncAck, SyncError, TimeWindow,
};
use thiserror::Error;
use tokio::sync::Mutex;
use uuid::Uuid;

use crate::accounts::{self, Account, Role};
use crate::config::{Config, ConfigError};
use crate::store::{Durable, LogEntry, RecoveryWarning, Store, StoreError};

#[derive(Debug, Error)]
pub enum NodeError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error(transparent)]
    Claim(#[from] ClaimError),
    #[error("claim {0} not found")]
    ClaimNotFound(ClaimId),
    #[error("a claimant cannot contest their own claim")]
    OwnClaim,
}

pub fn now_ms() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as i64)
}

/// Immutable view published after each mutation.
#[derive(Debug)]
pub struct View {
    pub durable: Durable,
    pub log_entries: u64,
}

impl View {
    pub fn state(&self) -> &ReplicaState {
        &self.durable.state
    }
}

struct Writer {
    store: Store,
    current: Arc<View>,
}

pub struct Node {
    config: Config,
    plans: Vec<ChannelPlan>,
    calibration: CalibrationProfile,
    writer: Mutex<Writer>,
    published: RwLock<Arc<View>>,
    sync_errors: AtomicU64,
    recovery_warnings: Vec<RecoveryWarning>,
}

/// Outcome of a claim submission.
#[derive(Debug, Clone)]
pub struct Submitted {
    pub claim: Claim,
    /// Existing non-denied claims it conflicts with.
    pub conflicts: Vec<ClaimId>,
}

impl Node {
    pub fn open(config: Config) -> Result<Node, NodeError> {
        config.validate()?;
        let (store, recovery) = Store::open(&config.data_dir, &config.node_id, config.role, config.snapshot_every)?;
        let view = Arc::new(View { durable: recovery.durable, log_entries: recovery.entries });
        Ok(Node {
            plans: config.all_plans(),
            calibration: config.calibration_profile()?,
            writer: Mutex::new(Writer { store, current: view.clone() }),
            published: RwLock::new(view),
            sync_errors: AtomicU64::new(0),
            recovery_warnings: recovery.warnings,
            config,
        })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn plan(&self, name: &str) -> Option<&ChannelPlan> {
        self.plans.iter().find(|p| p.name == name)
    }

    pub fn plans(&self) -> &[ChannelPlan] {
        &self.plans
    }

    pub fn recovery_warnings(&self) -> &[RecoveryWarning] {
        &self.recovery_warnings
    }

    pub fn view(&self) -> Arc<View> {
        self.published.read().expect("view lock poisoned").clone()
    }

    pub fn sync_errors(&self) -> u64 {
        self.sync_errors.load(Ordering::Relaxed)
    }

    pub fn record_sync_error(&self) {
        self.sync_errors.fetch_add(1, Ordering::Relaxed);
    }

    /// Runs `f` on a copy of the durable state; if it succeeds, its entries are
    /// logged and the copy becomes the published state.
    async fn commit<R, E>(&self, f: impl FnOnce(&mut Durable) -> Result<(R, Vec<LogEntry>), E>) -> Result<R, E>
    where
        E: From<StoreError>,
    {
        let mut w = self.writer.lock().await;
        let mut next = w.current.durable.clone();
        let (out, entries) = f(&mut next)?;
        if entries.is_empty() {
            return Ok(out);
        }
        w.store.append(&entries, &next)?;
        let view = Arc::new(View { durable: next, log_entries: w.store.entries() });
        w.current = view.clone();
        *self.published.write().expect("view lock poisoned") = view;
        Ok(out)
    }

    /// Central nodes decide pending claims right after any change that may
    /// have introduced some.
    fn reconcile_into(&self, d: &mut Durable, entries: &mut Vec<LogEntry>) {
        if self.config.role != NodeRole::Central {
            return;
        }
        let decisions = central_reconcile(&d.state, now_ms(), &EarliestSubmission).expect("role checked");
        for c in decisions {
            d.state.apply(StateEntry::Claim(c.clone())).expect("central decisions are well formed");
            entries.push(LogEntry::ClaimEvent(c));
        }
    }

    pub async fn create_account(&self, display_name: &str, role: Role) -> Result<(Account, String), NodeError> {
        let (account, token) = accounts::issue(display_name, role, now_ms());
        let entry = LogEntry::Account(account.clone());
        self.commit(|d| {
            d.apply(entry.clone())?;
            Ok::<_, NodeError>(((account, token), vec![entry]))
        })
        .await
    }

    /// Resolves a bearer token to an account.
    pub fn authenticate(&self, token: &str) -> Option<(String, Role)> {
        if let Some(boot) = &self.config.bootstrap_operator_token {
            if accounts::secret_eq(token, boot) {
                return Some(("operator".to_string(), Role::Operator));
            }
        }
        let (id, secret) = accounts::split_token(token)?;
        let view = self.view();
        let acct = view.durable.accounts.get(id)?;
        acct.verify(secret).then(|| (acct.account_id.clone(), acct.role))
    }

    pub async fn create_campaign(&self, owner: &str, name: &str, region: Option<Polygon>) -> Result<Campaign, NodeError> {
        let id = new_id();
        let mut campaign = new_campaign(id, name, owner, &self.config.node_id, now_ms());
        campaign.region = region;
        self.commit(|d| {
            let entry = StateEntry::CampaignMeta(campaign.clone());
            d.state.apply(entry.clone())?;
            Ok::<_, NodeError>((campaign, vec![entry.into()]))
        })
        .await
    }

    pub async fn upload(&self, campaign_id: CampaignId, collector: &str, content: &[u8]) -> Result<IngestReport, NodeError> {
        let ctx = IngestContext { collector, calibration: &self.calibration, now_ms: now_ms() };
        self.commit(|d| {
            let outcome = ingest_file(&mut d.state, content, campaign_id, &ctx)?;
            Ok::<_, NodeError>((outcome.report, outcome.entries.into_iter().map(LogEntry::from).collect()))
        })
        .await
    }

    pub async fn submit_claim(
        &self,
        claimant: &str,
        span: FrequencySpan,
        region: Polygon,
        window: TimeWindow,
    ) -> Result<Submitted, NodeError> {
        let id = new_id();
        let actor = Actor { node_id: &self.config.node_id, role: self.config.role };
        let claim = Claim::submit(id, claimant, span, region, window, actor, now_ms())?;
        self.commit(|d| {
            let conflicts = d
                .state
                .claims
                .values()
                .filter(|c| claim.conflicts_with(c))
                .map(|c| c.claim_id)
                .collect();
            d.state.apply(StateEntry::Claim(claim.clone()))?;
            let mut entries = vec![LogEntry::ClaimEvent(claim)];
            self.reconcile_into(d, &mut entries);
            let claim = d.state.claims[&id].clone();
            Ok::<_, NodeError>((Submitted { claim, conflicts }, entries))
        })
        .await
    }

    pub async fn contest_claim(&self, account: &str, claim_id: ClaimId) -> Result<Claim, NodeError> {
        self.commit(|d| {
            let current = d.state.claims.get(&claim_id).ok_or(NodeError::ClaimNotFound(claim_id))?;
            if current.claimant == account {
                return Err(NodeError::OwnClaim);
            }
            let actor = Actor { node_id: &self.config.node_id, role: self.config.role };
            let next = claim_transition(current, ClaimEvent::Contest, actor, now_ms()).map_err(ClaimError::from)?;
            d.state.apply(StateEntry::Claim(next.clone()))?;
            let mut entries = vec![LogEntry::ClaimEvent(next)];
            self.reconcile_into(d, &mut entries);
            Ok((d.state.claims[&claim_id].clone(), entries))
        })
        .await
    }

    /// Runs central arbitration explicitly; a no-op on regional nodes.
    pub async fn reconcile(&self) -> Result<usize, NodeError> {
        self.commit(|d| {
            let mut entries = Vec::new();
            self.reconcile_into(d, &mut entries);
            Ok::<_, NodeError>((entries.len(), entries))
        })
        .await
    }

    pub async fn apply_offer(&self, offer: Offer) -> Result<SyncAck, NodeError> {
        self.commit(|d| {
            let (ack, changed) = apply_offer(&mut d.state, offer)?;
            let mut entries: Vec<LogEntry> = changed.into_iter().map(LogEntry::from).collect();
            self.reconcile_into(d, &mut entries);
            Ok::<_, NodeError>((ack, entries))
        })
        .await
    }
}

/// Records selected for analysis: one campaign's journeys, or everything.
/// Each record counts once even if several journeys reference it.
pub fn select_records(state: &ReplicaState, campaign: Option<CampaignId>) -> Vec<&SweepRecord> {
    match campaign {
        None => state.records.values().collect(),
        Some(c) => {
            let unique: BTreeMap<_, _> = state.campaign_records(c).into_iter().map(|r| (r.id(), r)).collect();
            unique.into_values().collect()
        }
    }
}

/// Claims whose region intersects `region`, or all claims.
pub fn claims_in(state: &ReplicaState, region: Option<&Polygon>) -> Vec<Claim> {
    state
        .claims
        .values()
        .filter(|c| region.is_none_or(|r| polygons_intersect(&c.region, r)))
        .cloned()
        .collect()
}

pub fn new_id() -> Uuid {
    uuid::Builder::from_random_bytes(rand::random()).into_uuid()
}
