//! HTTP API under `/v1`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rfo_core::analysis::{
    edit_journey, occupancy_geojson, occupancy_grid, threshold_sweep, white_space_report, AnalysisError, JourneyEdit,
    ReportParams,
};
use rfo_core::geo::{parse_ring, BBox, Region};
use rfo_core::ingest::IngestError;
use rfo_core::model::{CampaignId, ChannelPlan, ClaimId, FrequencySpan, JourneyId, Polygon, SweepRecord};
use rfo_core::sync::{make_digest, ClaimState, Digest, NodeRole, Offer, TimeWindow};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::accounts::Role;
use crate::node::{claims_in, select_records, Node, NodeError};

pub type Shared = Arc<Node>;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "BAD_REQUEST", message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", message)
    }

    fn unauthorized() -> Self {
        ApiError::new(StatusCode::UNAUTHORIZED, "UNAUTHORIZED", "missing or invalid bearer token")
    }

    fn forbidden(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::FORBIDDEN, "FORBIDDEN", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.code, "message": self.message }))).into_response()
    }
}

impl From<NodeError> for ApiError {
    fn from(e: NodeError) -> Self {
        let msg = e.to_string();
        match e {
            NodeError::Ingest(IngestError::CampaignNotFound(_)) | NodeError::ClaimNotFound(_) => ApiError::not_found(msg),
            NodeError::Ingest(IngestError::UnknownFormat) => {
                ApiError::new(StatusCode::UNSUPPORTED_MEDIA_TYPE, "UNKNOWN_FORMAT", msg)
            }
            NodeError::Claim(_) => ApiError::new(StatusCode::CONFLICT, "ILLEGAL_TRANSITION", msg),
            NodeError::OwnClaim => ApiError::forbidden(msg),
            NodeError::Sync(_) => ApiError::new(StatusCode::CONFLICT, "SYNC_REJECTED", msg),
            NodeError::Store(_) | NodeError::Config(_) => {
                log::error!("{msg}");
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", msg)
            }
        }
    }
}

impl From<AnalysisError> for ApiError {
    fn from(e: AnalysisError) -> Self {
        ApiError::bad_request(e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers.get(header::AUTHORIZATION)?.to_str().ok()?.strip_prefix("Bearer ").map(str::trim)
}

struct Principal {
    account_id: String,
    role: Role,
}

fn authenticate(node: &Node, headers: &HeaderMap) -> ApiResult<Principal> {
    let token = bearer(headers).ok_or_else(ApiError::unauthorized)?;
    let (account_id, role) = node.authenticate(token).ok_or_else(ApiError::unauthorized)?;
    Ok(Principal { account_id, role })
}

fn require_peer(node: &Node, headers: &HeaderMap) -> ApiResult<()> {
    let expected = node.config().peer_token.as_deref().ok_or_else(|| ApiError::forbidden("sync is disabled on this node"))?;
    match bearer(headers) {
        Some(t) if crate::accounts::secret_eq(t, expected) => Ok(()),
        _ => Err(ApiError::unauthorized()),
    }
}

pub fn router(node: Shared) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/accounts", post(create_account))
        .route("/v1/campaigns", post(create_campaign).get(list_campaigns))
        .route("/v1/campaigns/{id}", get(get_campaign))
        .route("/v1/campaigns/{id}/uploads", post(upload))
        .route("/v1/campaigns/{id}/journeys", get(list_journeys))
        .route("/v1/journeys/{id}", get(get_journey))
        .route("/v1/journeys/{id}/edits", post(edit))
        .route("/v1/occupancy", get(occupancy))
        .route("/v1/whitespaces", get(whitespaces))
        .route("/v1/thresholdsweep", get(thresholdsweep))
        .route("/v1/claims", post(submit_claim).get(list_claims))
        .route("/v1/claims/{id}/contest", post(contest_claim))
        .route("/v1/sync/digest", post(sync_digest))
        .route("/v1/sync/offer", post(sync_offer))
        .with_state(node)
}

async fn health(State(node): State<Shared>) -> Json<Value> {
    let view = node.view();
    let st = view.state();
    Json(json!({
        "status": "ok",
        "node_id": st.node_id,
        "role": st.role,
        "records": st.records.len(),
        "campaigns": st.campaigns.len(),
        "journeys": st.journeys.len(),
        "claims": st.claims.len(),
        "log_entries": view.log_entries,
        "sync_errors": node.sync_errors(),
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NewAccount {
    display_name: String,
    role: Role,
}

async fn create_account(State(node): State<Shared>, headers: HeaderMap, Json(req): Json<NewAccount>) -> ApiResult<Response> {
    let who = authenticate(&node, &headers)?;
    if who.role != Role::Operator {
        return Err(ApiError::forbidden("only operators create accounts"));
    }
    if req.display_name.trim().is_empty() {
        return Err(ApiError::bad_request("display_name must not be empty"));
    }
    let (account, token) = node.create_account(req.display_name.trim(), req.role).await?;
    let body = json!({
        "account_id": account.account_id,
        "display_name": account.display_name,
        "role": account.role,
        "token": token,
    });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

/// A ring as GeoJSON-style `[[lon, lat], ...]`.
type Ring = Vec<[f64; 2]>;

fn polygon_from(ring: &Ring) -> ApiResult<Polygon> {
    let coords: Vec<(f64, f64)> = ring.iter().map(|&[lon, lat]| (lon, lat)).collect();
    Polygon::from_lon_lat(&coords).map_err(|e| ApiError::bad_request(e.to_string()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NewCampaign {
    name: String,
    #[serde(default)]
    region: Option<Ring>,
}

#[derive(Debug, Serialize)]
struct CampaignSummary {
    campaign_id: CampaignId,
    name: String,
    owner: String,
    journeys: usize,
    records: usize,
}

fn summarize(node: &Node, id: CampaignId) -> Option<CampaignSummary> {
    let view = node.view();
    let c = view.state().campaigns.get(&id)?;
    Some(CampaignSummary {
        campaign_id: id,
        name: c.name.clone(),
        owner: c.owner.clone(),
        journeys: c.journeys.len(),
        records: select_records(view.state(), Some(id)).len(),
    })
}

async fn create_campaign(State(node): State<Shared>, headers: HeaderMap, Json(req): Json<NewCampaign>) -> ApiResult<Response> {
    let who = authenticate(&node, &headers)?;
    if req.name.trim().is_empty() {
        return Err(ApiError::bad_request("name must not be empty"));
    }
    let region = req.region.as_ref().map(polygon_from).transpose()?;
    let campaign = node.create_campaign(&who.account_id, req.name.trim(), region).await?;
    Ok((StatusCode::CREATED, Json(campaign)).into_response())
}

async fn list_campaigns(State(node): State<Shared>) -> Json<Vec<CampaignSummary>> {
    let ids: Vec<CampaignId> = node.view().state().campaigns.keys().copied().collect();
    Json(ids.into_iter().filter_map(|id| summarize(&node, id)).collect())
}

fn parse_uuid(s: &str, what: &str) -> ApiResult<uuid::Uuid> {
    s.parse().map_err(|_| ApiError::bad_request(format!("{what} must be a UUID")))
}

async fn get_campaign(State(node): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let id = parse_uuid(&id, "campaign id")?;
    let view = node.view();
    let c = view.state().campaigns.get(&id).ok_or_else(|| ApiError::not_found("no such campaign"))?;
    let summary = summarize(&node, id).expect("campaign exists");
    Ok(Json(json!({ "campaign": c, "records": summary.records })))
}

async fn upload(State(node): State<Shared>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> ApiResult<Json<Value>> {
    let who = authenticate(&node, &headers)?;
    let id = parse_uuid(&id, "campaign id")?;
    let report = node.upload(id, &who.account_id, &body).await?;
    Ok(Json(json!(report)))
}

#[derive(Debug, Serialize)]
struct JourneySummary {
    journey_id: JourneyId,
    campaign_id: CampaignId,
    collector: String,
    device_serial: String,
    record_count: usize,
    first_ms: Option<i64>,
    last_ms: Option<i64>,
}

fn journey_summary(j: &rfo_core::model::Journey) -> JourneySummary {
    JourneySummary {
        journey_id: j.journey_id,
        campaign_id: j.campaign_id,
        collector: j.collector.clone(),
        device_serial: j.device_serial.clone(),
        record_count: j.entries.len(),
        first_ms: j.entries.first().map(|e| e.0),
        last_ms: j.entries.last().map(|e| e.0),
    }
}

async fn list_journeys(State(node): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<Vec<JourneySummary>>> {
    let id = parse_uuid(&id, "campaign id")?;
    let view = node.view();
    if !view.state().campaigns.contains_key(&id) {
        return Err(ApiError::not_found("no such campaign"));
    }
    Ok(Json(view.state().journeys.values().filter(|j| j.campaign_id == id).map(journey_summary).collect()))
}

async fn get_journey(State(node): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let id = parse_uuid(&id, "journey id")?;
    let view = node.view();
    let j = view.state().journeys.get(&id).ok_or_else(|| ApiError::not_found("no such journey"))?;
    let records = view.state().journey_records(id).unwrap_or_default();
    Ok(Json(json!({ "journey": journey_summary(j), "records": records })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EditRequest {
    ops: Vec<JourneyEdit>,
}

#[derive(Debug, Serialize)]
struct EditResponse {
    source: JourneyId,
    ops: Vec<JourneyEdit>,
    /// Always true: edited records are derived and never replace stored ones.
    derived: bool,
    record_count: usize,
    records: Vec<SweepRecord>,
}

async fn edit(State(node): State<Shared>, Path(id): Path<String>, headers: HeaderMap, Json(req): Json<EditRequest>) -> ApiResult<Json<EditResponse>> {
    authenticate(&node, &headers)?;
    let id = parse_uuid(&id, "journey id")?;
    let records = node.view().state().journey_records(id).ok_or_else(|| ApiError::not_found("no such journey"))?;
    let edited = edit_journey(id, &records, &req.ops)?;
    Ok(Json(EditResponse {
        source: edited.source,
        ops: edited.ops,
        derived: true,
        record_count: edited.records.len(),
        records: edited.records,
    }))
}

/// Query parameters shared by the analysis endpoints.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnalysisQuery {
    bbox: Option<String>,
    region: Option<String>,
    cell_deg: Option<f64>,
    plan: Option<String>,
    threshold_dbm: Option<f64>,
    max_duty: Option<f64>,
    min_samples: Option<u64>,
    thresholds: Option<String>,
    campaign: Option<String>,
    format: Option<String>,
}

impl AnalysisQuery {
    fn plan(&self, node: &Node) -> ApiResult<ChannelPlan> {
        let name = self.plan.as_deref().unwrap_or(&node.config().defaults.plan);
        node.plan(name).cloned().ok_or_else(|| ApiError::bad_request(format!("unknown plan {name}")))
    }

    fn campaign(&self) -> ApiResult<Option<CampaignId>> {
        self.campaign.as_deref().map(|c| parse_uuid(c, "campaign")).transpose()
    }

    fn bbox(&self) -> ApiResult<BBox> {
        let s = self.bbox.as_deref().ok_or_else(|| ApiError::bad_request("bbox is required"))?;
        BBox::parse(s).map_err(|e| ApiError::bad_request(e.to_string()))
    }

    /// `region=lon,lat;lon,lat;...` or `bbox=min_lon,min_lat,max_lon,max_lat`.
    fn region(&self) -> ApiResult<Region> {
        match (&self.region, &self.bbox) {
            (Some(r), None) => parse_ring(r).map(Region::Polygon).map_err(|e| ApiError::bad_request(e.to_string())),
            (None, Some(_)) => self.bbox().map(Region::BBox),
            _ => Err(ApiError::bad_request("exactly one of region or bbox is required")),
        }
    }

    fn threshold(&self, node: &Node) -> f64 {
        self.threshold_dbm.unwrap_or(node.config().defaults.threshold_dbm)
    }
}

async fn occupancy(State(node): State<Shared>, Query(q): Query<AnalysisQuery>) -> ApiResult<Json<Value>> {
    let bbox = q.bbox()?;
    let plan = q.plan(&node)?;
    let cell_deg = q.cell_deg.unwrap_or(node.config().defaults.cell_deg);
    let view = node.view();
    let records = select_records(view.state(), q.campaign()?);
    let cells = occupancy_grid(records, &bbox, cell_deg, &plan, q.threshold(&node))?;
    Ok(Json(occupancy_geojson(&cells, &bbox, cell_deg)))
}

async fn whitespaces(State(node): State<Shared>, Query(q): Query<AnalysisQuery>) -> ApiResult<Response> {
    let region = q.region()?;
    let plan = q.plan(&node)?;
    let d = &node.config().defaults;
    let params = ReportParams {
        threshold_dbm: q.threshold(&node),
        max_duty: q.max_duty.unwrap_or(d.max_duty),
        min_samples: q.min_samples.unwrap_or(d.min_samples),
    };
    let view = node.view();
    let report = white_space_report(select_records(view.state(), q.campaign()?), &region, &plan, &params)?;
    match q.format.as_deref() {
        None | Some("json") => Ok(Json(report).into_response()),
        Some("table") => Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], report.to_table()).into_response()),
        Some(other) => Err(ApiError::bad_request(format!("unknown format {other}"))),
    }
}

fn parse_thresholds(s: &str) -> ApiResult<Vec<f64>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<f64>().map_err(|_| ApiError::bad_request(format!("bad threshold {t}"))))
        .collect()
}

async fn thresholdsweep(State(node): State<Shared>, Query(q): Query<AnalysisQuery>) -> ApiResult<Json<Value>> {
    let region = q.region()?;
    let plan = q.plan(&node)?;
    let thresholds = parse_thresholds(q.thresholds.as_deref().ok_or_else(|| ApiError::bad_request("thresholds is required"))?)?;
    let view = node.view();
    let sweep = threshold_sweep(select_records(view.state(), q.campaign()?), &region, &plan, &thresholds)?;
    Ok(Json(json!(sweep)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NewClaim {
    low_hz: u64,
    high_hz: u64,
    region: Ring,
    t0_ms: i64,
    t1_ms: i64,
}

async fn submit_claim(State(node): State<Shared>, headers: HeaderMap, Json(req): Json<NewClaim>) -> ApiResult<Response> {
    let who = authenticate(&node, &headers)?;
    let span = FrequencySpan::new(req.low_hz, req.high_hz).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let region = polygon_from(&req.region)?;
    let window = TimeWindow { t0_ms: req.t0_ms, t1_ms: req.t1_ms };
    if window.t0_ms >= window.t1_ms {
        return Err(ApiError::bad_request("t0_ms must be before t1_ms"));
    }
    let submitted = node.submit_claim(&who.account_id, span, region, window).await?;
    let body = json!({ "claim": submitted.claim, "conflicts": submitted.conflicts });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn contest_claim(State(node): State<Shared>, Path(id): Path<String>, headers: HeaderMap) -> ApiResult<Json<Value>> {
    let who = authenticate(&node, &headers)?;
    let id: ClaimId = parse_uuid(&id, "claim id")?;
    let claim = node.contest_claim(&who.account_id, id).await?;
    Ok(Json(json!(claim)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClaimQuery {
    region: Option<String>,
    state: Option<ClaimState>,
}

async fn list_claims(State(node): State<Shared>, Query(q): Query<ClaimQuery>) -> ApiResult<Json<Value>> {
    let region = q.region.as_deref().map(parse_ring).transpose().map_err(|e| ApiError::bad_request(e.to_string()))?;
    let view = node.view();
    let claims: Vec<_> = claims_in(view.state(), region.as_ref())
        .into_iter()
        .filter(|c| q.state.is_none_or(|s| c.state == s))
        .collect();
    Ok(Json(json!(claims)))
}

/// Body of `POST /v1/sync/digest`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DigestRequest {
    pub node_id: String,
    pub digest: Digest,
}

/// Reply: the responder's digest (taken before anything is applied) and the
/// offer answering the requester's digest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DigestResponse {
    pub node_id: String,
    pub role: NodeRole,
    pub digest: Digest,
    pub offer: Offer,
}

async fn sync_digest(State(node): State<Shared>, headers: HeaderMap, Json(req): Json<DigestRequest>) -> ApiResult<Json<DigestResponse>> {
    require_peer(&node, &headers)?;
    let view = node.view();
    let offer = rfo_core::sync::build_offer(view.state(), &rfo_core::sync::compute_missing(&req.digest, view.state()));
    log::debug!("digest from {}: offering {} records", req.node_id, offer.records.len());
    Ok(Json(DigestResponse {
        node_id: view.state().node_id.clone(),
        role: view.state().role,
        digest: make_digest(view.state()),
        offer,
    }))
}

async fn sync_offer(State(node): State<Shared>, headers: HeaderMap, Json(offer): Json<Offer>) -> ApiResult<Json<Value>> {
    require_peer(&node, &headers)?;
    let ack = node.apply_offer(offer).await?;
    Ok(Json(json!(ack)))
}
