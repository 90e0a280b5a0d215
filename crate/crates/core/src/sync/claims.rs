//! Spectrum claims: the negotiation state machine, conflict detection and
//! central arbitration.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{NodeRole, ReplicaState};
use crate::geo::polygons_intersect;
use crate::model::{AccountId, ClaimId, FrequencySpan, LwwStamp, Polygon};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ClaimState {
    Proposed,
    Contested,
    Granted,
    Denied,
}

impl ClaimState {
    pub const ALL: [ClaimState; 4] = [ClaimState::Proposed, ClaimState::Contested, ClaimState::Granted, ClaimState::Denied];

    pub fn is_terminal(self) -> bool {
        matches!(self, ClaimState::Granted | ClaimState::Denied)
    }

    pub fn is_pending(self) -> bool {
        matches!(self, ClaimState::Proposed | ClaimState::Contested)
    }

    /// Merge precedence: terminal decisions dominate, then contests, then proposals.
    fn rank(self) -> u8 {
        match self {
            ClaimState::Proposed => 0,
            ClaimState::Contested => 1,
            ClaimState::Granted | ClaimState::Denied => 2,
        }
    }
}

impl fmt::Display for ClaimState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClaimState::Proposed => "PROPOSED",
            ClaimState::Contested => "CONTESTED",
            ClaimState::Granted => "GRANTED",
            ClaimState::Denied => "DENIED",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClaimEvent {
    Submit,
    Contest,
    CentralGrant,
    CentralDeny,
}

impl ClaimEvent {
    pub const ALL: [ClaimEvent; 4] = [ClaimEvent::Submit, ClaimEvent::Contest, ClaimEvent::CentralGrant, ClaimEvent::CentralDeny];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("illegal claim transition: {event:?} on {state:?} by {role:?}")]
pub struct IllegalTransition {
    /// `None` for a claim that does not exist yet.
    pub state: Option<ClaimState>,
    pub event: ClaimEvent,
    pub role: NodeRole,
}

/// The legal-transition table.
pub fn next_state(state: Option<ClaimState>, event: ClaimEvent, role: NodeRole) -> Result<ClaimState, IllegalTransition> {
    use ClaimEvent::*;
    use ClaimState::*;
    match (state, event, role) {
        (None, Submit, _) => Ok(Proposed),
        (Some(Proposed), Contest, _) => Ok(Contested),
        (Some(Proposed | Contested), CentralGrant, NodeRole::Central) => Ok(Granted),
        (Some(Proposed | Contested), CentralDeny, NodeRole::Central) => Ok(Denied),
        _ => Err(IllegalTransition { state, event, role }),
    }
}

/// Half-open time window `[t0_ms, t1_ms)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub t0_ms: i64,
    pub t1_ms: i64,
}

impl TimeWindow {
    pub fn overlaps(&self, other: &TimeWindow) -> bool {
        self.t0_ms < other.t1_ms && other.t0_ms < self.t1_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub claim_id: ClaimId,
    pub claimant: AccountId,
    pub span: FrequencySpan,
    pub region: Polygon,
    pub window: TimeWindow,
    pub state: ClaimState,
    pub submitted: LwwStamp,
    /// Stamp of the most recent transition.
    pub version: LwwStamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decided_by: Option<String>,
}

/// The node performing a transition.
#[derive(Debug, Clone, Copy)]
pub struct Actor<'a> {
    pub node_id: &'a str,
    pub role: NodeRole,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClaimError {
    #[error(transparent)]
    Illegal(#[from] IllegalTransition),
    #[error("time window must satisfy t0 < t1")]
    InvalidWindow,
}

impl Claim {
    /// Creates a PROPOSED claim.
    pub fn submit(
        claim_id: ClaimId,
        claimant: &str,
        span: FrequencySpan,
        region: Polygon,
        window: TimeWindow,
        actor: Actor<'_>,
        now_ms: i64,
    ) -> Result<Claim, ClaimError> {
        if window.t0_ms >= window.t1_ms {
            return Err(ClaimError::InvalidWindow);
        }
        let state = next_state(None, ClaimEvent::Submit, actor.role)?;
        let stamp = LwwStamp::new(now_ms, actor.node_id);
        Ok(Claim {
            claim_id,
            claimant: claimant.to_string(),
            span,
            region,
            window,
            state,
            submitted: stamp.clone(),
            version: stamp,
            decided_by: None,
        })
    }

    pub fn conflicts_with(&self, other: &Claim) -> bool {
        self.span.overlaps(&other.span)
            && self.window.overlaps(&other.window)
            && polygons_intersect(&self.region, &other.region)
    }

    /// Decided claims must carry the deciding node in both `decided_by` and the version stamp.
    pub fn is_well_formed(&self) -> bool {
        if self.state.is_terminal() {
            self.decided_by.as_deref() == Some(self.version.node_id.as_str())
        } else {
            self.decided_by.is_none()
        }
    }
}

/// Applies `event` to an existing claim on behalf of `actor`, issuing a fresh version stamp.
pub fn claim_transition(claim: &Claim, event: ClaimEvent, actor: Actor<'_>, now_ms: i64) -> Result<Claim, IllegalTransition> {
    let state = next_state(Some(claim.state), event, actor.role)?;
    let mut out = claim.clone();
    out.state = state;
    out.version = LwwStamp::after(&claim.version, now_ms, actor.node_id);
    if state.is_terminal() {
        out.decided_by = Some(actor.node_id.to_string());
    }
    Ok(out)
}

/// Join of two copies of one claim: higher state rank wins, then newer version.
pub fn merge_claim(a: &Claim, b: &Claim) -> Claim {
    let key = |c: &Claim| (c.state.rank(), c.version.clone());
    match key(a).cmp(&key(b)) {
        std::cmp::Ordering::Greater => a.clone(),
        std::cmp::Ordering::Less => b.clone(),
        std::cmp::Ordering::Equal => {
            // identical stamps with different content only arise from a faulty peer;
            // pick deterministically so the merge stays commutative
            let ja = serde_json::to_string(a).unwrap_or_default();
            let jb = serde_json::to_string(b).unwrap_or_default();
            if ja >= jb { a.clone() } else { b.clone() }
        }
    }
}

/// All conflicting pairs among claims that are PROPOSED, CONTESTED or GRANTED.
/// Pairs are reported as `(smaller id, larger id)` in ascending order.
pub fn detect_claim_conflicts(claims: &[Claim]) -> Vec<(ClaimId, ClaimId)> {
    let mut active: Vec<&Claim> = claims.iter().filter(|c| c.state != ClaimState::Denied).collect();
    active.sort_by_key(|c| c.claim_id);
    let mut pairs = Vec::new();
    for (i, a) in active.iter().enumerate() {
        for b in &active[i + 1..] {
            if a.claim_id != b.claim_id && a.conflicts_with(b) {
                pairs.push((a.claim_id, b.claim_id));
            }
        }
    }
    pairs
}

/// Chooses which contender of a conflict component is granted.
pub trait ArbitrationPolicy {
    fn pick_winner<'a>(&self, contenders: &[&'a Claim]) -> &'a Claim;
}

/// Earliest submission stamp wins; ties by claim id.
#[derive(Debug, Clone, Copy, Default)]
pub struct EarliestSubmission;

impl ArbitrationPolicy for EarliestSubmission {
    fn pick_winner<'a>(&self, contenders: &[&'a Claim]) -> &'a Claim {
        contenders
            .iter()
            .min_by(|a, b| (&a.submitted, a.claim_id).cmp(&(&b.submitted, b.claim_id)))
            .copied()
            .expect("non-empty component")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("central reconciliation invoked on a regional replica")]
pub struct NotCentral;

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Decides every pending claim on the central replica.
///
/// Claims are grouped into connected components of the conflict graph. A
/// component that already holds a GRANTED claim denies all its pending
/// members; otherwise the policy's winner is granted and the rest denied.
/// Isolated pending claims are granted. Returns only the claims that changed.
pub fn central_reconcile(state: &ReplicaState, now_ms: i64, policy: &dyn ArbitrationPolicy) -> Result<Vec<Claim>, NotCentral> {
    if state.role != NodeRole::Central {
        return Err(NotCentral);
    }
    let active: Vec<&Claim> = state.claims.values().filter(|c| c.state != ClaimState::Denied).collect();
    let index: BTreeMap<ClaimId, usize> = active.iter().enumerate().map(|(i, c)| (c.claim_id, i)).collect();
    let mut parent: Vec<usize> = (0..active.len()).collect();
    let owned: Vec<Claim> = active.iter().map(|c| (*c).clone()).collect();
    for (a, b) in detect_claim_conflicts(&owned) {
        let (ra, rb) = (find(&mut parent, index[&a]), find(&mut parent, index[&b]));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut components: BTreeMap<usize, Vec<&Claim>> = BTreeMap::new();
    for (i, c) in active.iter().enumerate() {
        let root = find(&mut parent, i);
        components.entry(root).or_default().push(c);
    }

    let actor = Actor { node_id: &state.node_id, role: NodeRole::Central };
    let mut changed = Vec::new();
    for members in components.values() {
        let pending: Vec<&Claim> = members.iter().copied().filter(|c| c.state.is_pending()).collect();
        if pending.is_empty() {
            continue;
        }
        let has_grant = members.iter().any(|c| c.state == ClaimState::Granted);
        let winner = if has_grant { None } else { Some(policy.pick_winner(&pending).claim_id) };
        for c in pending {
            let event = if Some(c.claim_id) == winner { ClaimEvent::CentralGrant } else { ClaimEvent::CentralDeny };
            changed.push(claim_transition(c, event, actor, now_ms).expect("pending claims accept central decisions"));
        }
    }
    changed.sort_by_key(|c| c.claim_id);
    Ok(changed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use uuid::Uuid;

    fn square(x: f64) -> Polygon {
        Polygon::rectangle(x, 0.0, x + 1.0, 1.0).unwrap()
    }

    fn claim(id: u128, low_mhz: u64, high_mhz: u64, region: Polygon, window: (i64, i64), at: i64) -> Claim {
        Claim::submit(
            Uuid::from_u128(id),
            "acct",
            FrequencySpan::new(low_mhz * 1_000_000, high_mhz * 1_000_000).unwrap(),
            region,
            TimeWindow { t0_ms: window.0, t1_ms: window.1 },
            Actor { node_id: "r1", role: NodeRole::Regional },
            at,
        )
        .unwrap()
    }

    #[test]
    fn transitions() {
        let regional = Actor { node_id: "r1", role: NodeRole::Regional };
        let central = Actor { node_id: "hq", role: NodeRole::Central };
        let c = claim(1, 470, 478, square(0.0), (0, 10), 5);
        assert_eq!(c.state, ClaimState::Proposed);
        let contested = claim_transition(&c, ClaimEvent::Contest, regional, 6).unwrap();
        assert_eq!(contested.state, ClaimState::Contested);
        assert!(contested.version > c.version);
        let err = claim_transition(&c, ClaimEvent::CentralGrant, regional, 6).unwrap_err();
        assert_eq!(err, IllegalTransition { state: Some(ClaimState::Proposed), event: ClaimEvent::CentralGrant, role: NodeRole::Regional });
        let granted = claim_transition(&contested, ClaimEvent::CentralGrant, central, 7).unwrap();
        assert_eq!(granted.decided_by.as_deref(), Some("hq"));
        assert!(granted.is_well_formed());
        assert!(claim_transition(&granted, ClaimEvent::Contest, regional, 8).is_err());
        assert!(claim_transition(&contested, ClaimEvent::Contest, regional, 8).is_err());
    }

    #[test]
    fn invalid_window() {
        let r = Claim::submit(
            Uuid::nil(),
            "a",
            FrequencySpan::new(1, 2).unwrap(),
            square(0.0),
            TimeWindow { t0_ms: 5, t1_ms: 5 },
            Actor { node_id: "r", role: NodeRole::Regional },
            0,
        );
        assert_eq!(r, Err(ClaimError::InvalidWindow));
    }

    #[test]
    fn conflict_examples() {
        let a = claim(1, 470, 478, square(0.0), (0, 10), 1);
        let b = claim(2, 470, 478, square(0.0), (0, 10), 2);
        assert_eq!(detect_claim_conflicts(&[a.clone(), b.clone()]), vec![(a.claim_id, b.claim_id)]);
        let adjacent = claim(3, 478, 486, square(0.0), (0, 10), 2);
        assert!(detect_claim_conflicts(&[a.clone(), adjacent]).is_empty());
        let later = claim(4, 470, 478, square(0.0), (10, 20), 2);
        assert!(detect_claim_conflicts(&[a.clone(), later]).is_empty());
        let far = claim(5, 470, 478, square(5.0), (0, 10), 2);
        assert!(detect_claim_conflicts(&[a.clone(), far]).is_empty());
        let mut denied = b;
        denied.state = ClaimState::Denied;
        assert!(detect_claim_conflicts(&[a, denied]).is_empty());
    }

    #[test]
    fn merge_prefers_decisions() {
        let c = claim(1, 470, 478, square(0.0), (0, 10), 1);
        let granted = claim_transition(&c, ClaimEvent::CentralGrant, Actor { node_id: "hq", role: NodeRole::Central }, 2).unwrap();
        // a late contest from a regional clock far ahead cannot undo the decision
        let contested = claim_transition(&c, ClaimEvent::Contest, Actor { node_id: "r9", role: NodeRole::Regional }, 1_000).unwrap();
        assert_eq!(merge_claim(&granted, &contested), granted);
        assert_eq!(merge_claim(&contested, &granted), granted);
        assert_eq!(merge_claim(&c, &c), c);
    }
}
