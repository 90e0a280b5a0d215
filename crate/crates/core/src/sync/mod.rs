//! Replica state and anti-entropy between regional repositories and the central authority.
//!
//! Measurement records form a grow-only set keyed by content hash, journeys are
//! grow-only sets of entries, campaign metadata is last-writer-wins, and claims
//! are arbitrated by the single central node. Every merge is a join, so replicas
//! converge under any schedule that eventually delivers each pairwise round.

mod claims;
mod digest;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use claims::{
    central_reconcile, claim_transition, detect_claim_conflicts, merge_claim, next_state, Actor, ArbitrationPolicy, Claim,
    ClaimError, ClaimEvent, ClaimState, EarliestSubmission, IllegalTransition, NotCentral, TimeWindow,
};
pub use digest::{
    apply_offer, apply_sync_round, build_offer, compute_missing, make_digest, BucketSet, Digest, Hash32, Missing, Offer,
    SyncAck,
};

use crate::model::{Campaign, CampaignId, ClaimId, Journey, JourneyId, RecordId, SweepRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum NodeRole {
    Regional,
    Central,
}

impl fmt::Display for NodeRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeRole::Regional => "REGIONAL",
            NodeRole::Central => "CENTRAL",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SyncError {
    #[error("record {0} exists with different content")]
    HashMismatch(RecordId),
    #[error("cannot merge metadata of different ids")]
    IdMismatch,
    #[error("claim {0} carries a decision not attributable to its decider")]
    InvalidClaim(ClaimId),
}

/// One mergeable unit of replica state. Applying entries in any order yields the same state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StateEntry {
    Record(SweepRecord),
    CampaignMeta(Campaign),
    Journey(Journey),
    Claim(Claim),
}

/// Full mergeable state of one repository node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaState {
    pub node_id: String,
    pub role: NodeRole,
    pub records: BTreeMap<RecordId, SweepRecord>,
    pub campaigns: BTreeMap<CampaignId, Campaign>,
    pub journeys: BTreeMap<JourneyId, Journey>,
    pub claims: BTreeMap<ClaimId, Claim>,
}

impl ReplicaState {
    pub fn new(node_id: impl Into<String>, role: NodeRole) -> Self {
        ReplicaState {
            node_id: node_id.into(),
            role,
            records: BTreeMap::new(),
            campaigns: BTreeMap::new(),
            journeys: BTreeMap::new(),
            claims: BTreeMap::new(),
        }
    }

    /// Equality of replicated content, ignoring node identity.
    pub fn same_content(&self, other: &ReplicaState) -> bool {
        self.records == other.records
            && self.campaigns == other.campaigns
            && self.journeys == other.journeys
            && self.claims == other.claims
    }

    /// Merges one entry. Returns whether the state changed.
    pub fn apply(&mut self, entry: StateEntry) -> Result<bool, SyncError> {
        match entry {
            StateEntry::Record(rec) => match self.records.get(&rec.id()) {
                Some(existing) if *existing == rec => Ok(false),
                Some(_) => Err(SyncError::HashMismatch(rec.id())),
                None => {
                    self.records.insert(rec.id(), rec);
                    Ok(true)
                }
            },
            StateEntry::CampaignMeta(c) => {
                let merged = match self.campaigns.get(&c.campaign_id) {
                    Some(existing) => merge_campaign_meta(existing, &c)?,
                    None => c,
                };
                Ok(replace_if_changed(&mut self.campaigns, merged.campaign_id, merged))
            }
            StateEntry::Journey(j) => match self.journeys.get_mut(&j.journey_id) {
                Some(existing) => {
                    let before = existing.entries.len();
                    existing.entries.extend(j.entries);
                    Ok(existing.entries.len() != before)
                }
                None => {
                    self.journeys.insert(j.journey_id, j);
                    Ok(true)
                }
            },
            StateEntry::Claim(c) => {
                if !c.is_well_formed() {
                    return Err(SyncError::InvalidClaim(c.claim_id));
                }
                let merged = match self.claims.get(&c.claim_id) {
                    Some(existing) => merge_claim(existing, &c),
                    None => c,
                };
                Ok(replace_if_changed(&mut self.claims, merged.claim_id, merged))
            }
        }
    }

    /// Records of the journeys belonging to `campaign_id`, in journey time order.
    pub fn campaign_records(&self, campaign_id: CampaignId) -> Vec<&SweepRecord> {
        self.journeys
            .values()
            .filter(|j| j.campaign_id == campaign_id)
            .flat_map(|j| j.record_ids())
            .filter_map(|id| self.records.get(&id))
            .collect()
    }

    /// Journey records in time order; ids missing locally are skipped.
    pub fn journey_records(&self, journey_id: JourneyId) -> Option<Vec<SweepRecord>> {
        let j = self.journeys.get(&journey_id)?;
        Some(j.record_ids().filter_map(|id| self.records.get(&id).cloned()).collect())
    }
}

fn replace_if_changed<K: Ord, V: PartialEq>(map: &mut BTreeMap<K, V>, key: K, value: V) -> bool {
    if map.get(&key) == Some(&value) {
        false
    } else {
        map.insert(key, value);
        true
    }
}

/// Set union keyed by record id. Fails if one id maps to two different contents.
pub fn merge_records(
    a: &BTreeMap<RecordId, SweepRecord>,
    b: &BTreeMap<RecordId, SweepRecord>,
) -> Result<BTreeMap<RecordId, SweepRecord>, SyncError> {
    let mut out = a.clone();
    for (id, rec) in b {
        match out.get(id) {
            Some(existing) if existing != rec => return Err(SyncError::HashMismatch(*id)),
            Some(_) => {}
            None => {
                out.insert(*id, rec.clone());
            }
        }
    }
    Ok(out)
}

/// Last-writer-wins on the metadata; journey id sets are always unioned.
pub fn merge_campaign_meta(a: &Campaign, b: &Campaign) -> Result<Campaign, SyncError> {
    if a.campaign_id != b.campaign_id {
        return Err(SyncError::IdMismatch);
    }
    let winner = match a.meta_version.cmp(&b.meta_version) {
        std::cmp::Ordering::Greater => a,
        std::cmp::Ordering::Less => b,
        std::cmp::Ordering::Equal => {
            let strip = |c: &Campaign| {
                let mut c = c.clone();
                c.journeys.clear();
                serde_json::to_string(&c).unwrap_or_default()
            };
            if strip(a) >= strip(b) { a } else { b }
        }
    };
    let mut out = winner.clone();
    out.journeys = a.journeys.union(&b.journeys).copied().collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::new_campaign;
    use crate::model::LwwStamp;
    use uuid::Uuid;

    fn camp(stamp: (i64, &str), name: &str, journeys: &[u128]) -> Campaign {
        let mut c = new_campaign(Uuid::from_u128(1), name, "owner", stamp.1, stamp.0);
        c.journeys = journeys.iter().map(|&j| Uuid::from_u128(j)).collect();
        c
    }

    #[test]
    fn lww_metadata() {
        let a = camp((5, "A"), "old", &[1]);
        let b = camp((7, "B"), "new", &[2]);
        let m = merge_campaign_meta(&a, &b).unwrap();
        assert_eq!(m.name, "new");
        assert_eq!(m.journeys.len(), 2);
        assert_eq!(merge_campaign_meta(&b, &a).unwrap(), m);

        let a = camp((5, "A"), "from-a", &[]);
        let b = camp((5, "B"), "from-b", &[]);
        assert_eq!(merge_campaign_meta(&a, &b).unwrap().name, "from-b");
        assert_eq!(merge_campaign_meta(&a, &a).unwrap(), a);

        let mut other = camp((1, "A"), "x", &[]);
        other.campaign_id = Uuid::from_u128(2);
        assert_eq!(merge_campaign_meta(&a, &other), Err(SyncError::IdMismatch));
        assert_eq!(b.meta_version, LwwStamp::new(5, "B"));
    }
}
