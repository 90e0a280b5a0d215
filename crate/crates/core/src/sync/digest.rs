//! Constant-size replica digests and the offer exchange built on them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::BitXorAssign;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use uuid::Uuid;

use super::{ClaimState, ReplicaState, StateEntry, SyncError};
use super::Claim;
use crate::model::{Campaign, CampaignId, ClaimId, Journey, JourneyId, LwwStamp, RecordId, SweepRecord};

/// 32 bytes rendered as lowercase hex on the wire.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Hash32(pub [u8; 32]);

impl BitXorAssign<&[u8; 32]> for Hash32 {
    fn bitxor_assign(&mut self, rhs: &[u8; 32]) {
        for (a, b) in self.0.iter_mut().zip(rhs) {
            *a ^= b;
        }
    }
}

impl fmt::Debug for Hash32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl Serialize for Hash32 {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(self.0))
    }
}

impl<'de> Deserialize<'de> for Hash32 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let mut out = [0u8; 32];
        hex::decode_to_slice(&s, &mut out).map_err(serde::de::Error::custom)?;
        Ok(Hash32(out))
    }
}

fn fingerprint<T: Serialize>(value: &T) -> Hash32 {
    let text = serde_json::to_vec(value).expect("state values serialize");
    Hash32(Sha256::digest(&text).into())
}

/// 256 buckets indexed by the first byte of the record id. Each bucket holds
/// the record count and the XOR of the ids; empty buckets are omitted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BucketSet(BTreeMap<u8, (u32, Hash32)>);

impl BucketSet {
    pub fn insert(&mut self, id: &RecordId) {
        let slot = self.0.entry(id.bucket()).or_default();
        slot.0 += 1;
        slot.1 ^= id.as_bytes();
    }

    /// `(count, xor)` for bucket `b`; zero for empty buckets.
    pub fn bucket(&self, b: u8) -> (u32, Hash32) {
        self.0.get(&b).copied().unwrap_or_default()
    }

    pub fn non_empty(&self) -> impl Iterator<Item = u8> + '_ {
        self.0.keys().copied()
    }
}

/// Compact summary of a replica used to compute what a peer is missing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Digest {
    /// Record buckets per campaign, over the records its journeys reference.
    /// Records outside every journey are summarized under the nil id.
    pub records: BTreeMap<CampaignId, BucketSet>,
    /// Journey entry count and XOR of member record ids.
    pub journeys: BTreeMap<JourneyId, (u64, Hash32)>,
    /// Metadata stamp and content fingerprint.
    pub campaigns: BTreeMap<CampaignId, (LwwStamp, Hash32)>,
    pub claims: BTreeMap<ClaimId, (ClaimState, LwwStamp)>,
}

fn membership(state: &ReplicaState) -> BTreeMap<CampaignId, Vec<RecordId>> {
    let mut out: BTreeMap<CampaignId, Vec<RecordId>> = BTreeMap::new();
    let mut referenced = Vec::new();
    for j in state.journeys.values() {
        let ids = out.entry(j.campaign_id).or_default();
        ids.extend(j.entries.iter().map(|(_, id)| *id));
        referenced.extend(j.entries.iter().map(|(_, id)| *id));
    }
    for ids in out.values_mut() {
        ids.sort_unstable();
        ids.dedup();
    }
    referenced.sort_unstable();
    referenced.dedup();
    let orphans: Vec<RecordId> = state.records.keys().filter(|id| referenced.binary_search(id).is_err()).copied().collect();
    if !orphans.is_empty() {
        out.entry(Uuid::nil()).or_default().extend(orphans);
    }
    out
}

fn journey_fingerprint(j: &Journey) -> (u64, Hash32) {
    let mut h = Hash32::default();
    for (_, id) in &j.entries {
        h ^= id.as_bytes();
    }
    (j.entries.len() as u64, h)
}

pub fn make_digest(state: &ReplicaState) -> Digest {
    digest_with_membership(state, &membership(state))
}

fn digest_with_membership(state: &ReplicaState, members: &BTreeMap<CampaignId, Vec<RecordId>>) -> Digest {
    let records = members
        .iter()
        .map(|(&c, ids)| {
            let mut b = BucketSet::default();
            ids.iter().for_each(|id| b.insert(id));
            (c, b)
        })
        .collect();
    Digest {
        records,
        journeys: state.journeys.iter().map(|(&id, j)| (id, journey_fingerprint(j))).collect(),
        campaigns: state
            .campaigns
            .iter()
            .map(|(&id, c)| (id, (c.meta_version.clone(), fingerprint(c))))
            .collect(),
        claims: state.claims.iter().map(|(&id, c)| (id, (c.state, c.version.clone()))).collect(),
    }
}

/// What a local replica should send to a peer whose digest is known.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Missing {
    pub record_ids: BTreeSet<RecordId>,
    pub campaigns: BTreeSet<CampaignId>,
    pub journeys: BTreeSet<JourneyId>,
    pub claims: BTreeSet<ClaimId>,
}

impl Missing {
    pub fn is_empty(&self) -> bool {
        self.record_ids.is_empty() && self.campaigns.is_empty() && self.journeys.is_empty() && self.claims.is_empty()
    }
}

/// Offers every local record in a bucket whose count or XOR differs from the
/// remote (a superset of the true difference), every journey or campaign whose
/// fingerprint differs, and every claim the remote lacks, holds older, or holds
/// in another state.
pub fn compute_missing(remote: &Digest, local: &ReplicaState) -> Missing {
    missing_with_membership(remote, local, &membership(local))
}

fn missing_with_membership(remote: &Digest, local: &ReplicaState, members: &BTreeMap<CampaignId, Vec<RecordId>>) -> Missing {
    let mut out = Missing::default();
    let empty = BucketSet::default();
    for (campaign, ids) in members {
        let theirs = remote.records.get(campaign).unwrap_or(&empty);
        let mut ours = BucketSet::default();
        ids.iter().for_each(|id| ours.insert(id));
        let mut differing = [false; 256];
        for b in ours.non_empty().filter(|&b| ours.bucket(b) != theirs.bucket(b)) {
            differing[usize::from(b)] = true;
        }
        out.record_ids.extend(ids.iter().filter(|id| differing[usize::from(id.bucket())]));
    }
    for (id, j) in &local.journeys {
        if remote.journeys.get(id) != Some(&journey_fingerprint(j)) {
            out.journeys.insert(*id);
        }
    }
    for (id, c) in &local.campaigns {
        if remote.campaigns.get(id) != Some(&(c.meta_version.clone(), fingerprint(c))) {
            out.campaigns.insert(*id);
        }
    }
    for (id, c) in &local.claims {
        let offer = match remote.claims.get(id) {
            None => true,
            Some((state, stamp)) => c.version > *stamp || c.state != *state,
        };
        if offer {
            out.claims.insert(*id);
        }
    }
    out
}

/// Items sent to a peer. Records travel as ZRF lines.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Offer {
    pub records: Vec<SweepRecord>,
    pub campaigns: Vec<Campaign>,
    pub journeys: Vec<Journey>,
    pub claims: Vec<Claim>,
}

impl Offer {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty() && self.campaigns.is_empty() && self.journeys.is_empty() && self.claims.is_empty()
    }

    /// Entries in application order: records before the journeys that reference them.
    pub fn into_entries(self) -> Vec<StateEntry> {
        let mut out = Vec::with_capacity(self.records.len() + self.campaigns.len() + self.journeys.len() + self.claims.len());
        out.extend(self.records.into_iter().map(StateEntry::Record));
        out.extend(self.journeys.into_iter().map(StateEntry::Journey));
        out.extend(self.campaigns.into_iter().map(StateEntry::CampaignMeta));
        out.extend(self.claims.into_iter().map(StateEntry::Claim));
        out
    }
}

pub fn build_offer(state: &ReplicaState, missing: &Missing) -> Offer {
    Offer {
        records: missing.record_ids.iter().filter_map(|id| state.records.get(id).cloned()).collect(),
        campaigns: missing.campaigns.iter().filter_map(|id| state.campaigns.get(id).cloned()).collect(),
        journeys: missing.journeys.iter().filter_map(|id| state.journeys.get(id).cloned()).collect(),
        claims: missing.claims.iter().filter_map(|id| state.claims.get(id).cloned()).collect(),
    }
}

/// Acknowledgement of an applied offer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncAck {
    pub accepted: usize,
    pub duplicates: usize,
    /// Metadata, journey and claim entries that changed local state.
    pub updated: usize,
}

/// Merges an offer into `state` atomically: on error the state is untouched.
/// Returns the acknowledgement and the entries that changed state.
pub fn apply_offer(state: &mut ReplicaState, offer: Offer) -> Result<(SyncAck, Vec<StateEntry>), SyncError> {
    if offer.is_empty() {
        return Ok((SyncAck::default(), Vec::new()));
    }
    let mut next = state.clone();
    let mut ack = SyncAck::default();
    let mut changed = Vec::new();
    for entry in offer.into_entries() {
        let is_record = matches!(entry, StateEntry::Record(_));
        let did_change = next.apply(entry.clone())?;
        match (is_record, did_change) {
            (true, true) => ack.accepted += 1,
            (true, false) => ack.duplicates += 1,
            (false, true) => ack.updated += 1,
            (false, false) => {}
        }
        if did_change {
            changed.push(entry);
        }
    }
    *state = next;
    Ok((ack, changed))
}

/// One bidirectional anti-entropy exchange. Both sides compute offers against
/// the other's digest before either applies anything.
pub fn apply_sync_round(
    initiator: &ReplicaState,
    responder: &ReplicaState,
) -> Result<(ReplicaState, ReplicaState), SyncError> {
    let (m_init, m_resp) = (membership(initiator), membership(responder));
    let d_init = digest_with_membership(initiator, &m_init);
    let d_resp = digest_with_membership(responder, &m_resp);
    let to_initiator = build_offer(responder, &missing_with_membership(&d_init, responder, &m_resp));
    let to_responder = build_offer(initiator, &missing_with_membership(&d_resp, initiator, &m_init));
    let mut a = initiator.clone();
    let mut b = responder.clone();
    apply_offer(&mut a, to_initiator)?;
    apply_offer(&mut b, to_responder)?;
    Ok((a, b))
}
