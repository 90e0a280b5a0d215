//! Device file parsing and normalization onto the canonical 100 kHz grid.

mod formats;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use formats::{A32_BIN_COUNT, A32_DEFAULT_SERIAL, RFE_DEFAULT_SERIAL};

use crate::model::{
    dbm_to_tenths, parse_zrf_line, ZrfError, Campaign, CampaignId, DeviceKind, FrequencySpan, GeoPoint, Journey, LwwStamp, ModelError,
    SweepFields, SweepRecord, CANONICAL_BIN_HZ, MAX_POWER_TENTHS, MIN_POWER_TENTHS,
};
use crate::sync::{ReplicaState, StateEntry};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IngestError {
    #[error("unrecognized upload format")]
    UnknownFormat,
    #[error("campaign {0} not found")]
    CampaignNotFound(CampaignId),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NormalizeError {
    #[error("raw span contains no canonical bin center")]
    NoOverlap,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A sweep as reported by a device, on its native frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSweep {
    pub device_kind: DeviceKind,
    pub device_serial: String,
    pub timestamp_ms: i64,
    pub location: GeoPoint,
    pub start_hz: u64,
    pub step_hz: u64,
    pub powers_dbm: Vec<f64>,
    /// 1-based source line, for error reporting.
    pub line: usize,
}

impl RawSweep {
    pub fn end_hz(&self) -> u64 {
        self.start_hz + self.step_hz * self.powers_dbm.len() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LineErrorReason {
    BadHeader,
    MissingHeader,
    MissingField,
    BinCountMismatch,
    BadTimestamp,
    BadNumber,
    BadJson,
    InvalidLocation,
    InvalidSerial,
    NonIntegralStep,
    UnknownDirective,
    PowerOutOfRange,
    NoOverlap,
    /// A ZRF line whose stored record id does not match its content.
    RecordIdMismatch,
}

impl fmt::Display for LineErrorReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned));
        f.write_str(s.as_deref().unwrap_or("?"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineError {
    pub line: usize,
    pub reason: LineErrorReason,
}

impl LineError {
    pub fn new(line: usize, reason: LineErrorReason) -> Self {
        LineError { line, reason }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedFile {
    pub sweeps: Vec<RawSweep>,
    pub errors: Vec<LineError>,
}

/// Per-device-kind additive correction in dB, held in tenths.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<DeviceKind, f64>", into = "BTreeMap<DeviceKind, f64>")]
pub struct CalibrationProfile {
    offsets_tenths: BTreeMap<DeviceKind, i32>,
}

impl CalibrationProfile {
    pub const MAX_OFFSET_DB: f64 = 30.0;

    pub fn set(&mut self, kind: DeviceKind, offset_db: f64) -> Result<(), ModelError> {
        if !offset_db.is_finite() || offset_db.abs() > Self::MAX_OFFSET_DB {
            return Err(ModelError::PowerOutOfRange(offset_db));
        }
        self.offsets_tenths.insert(kind, (offset_db * 10.0).round() as i32);
        Ok(())
    }

    pub fn with(mut self, kind: DeviceKind, offset_db: f64) -> Result<Self, ModelError> {
        self.set(kind, offset_db)?;
        Ok(self)
    }

    pub fn offset_tenths(&self, kind: DeviceKind) -> i32 {
        self.offsets_tenths.get(&kind).copied().unwrap_or(0)
    }

    pub fn offset_db(&self, kind: DeviceKind) -> f64 {
        f64::from(self.offset_tenths(kind)) / 10.0
    }
}

impl TryFrom<BTreeMap<DeviceKind, f64>> for CalibrationProfile {
    type Error = ModelError;
    fn try_from(map: BTreeMap<DeviceKind, f64>) -> Result<Self, ModelError> {
        let mut p = CalibrationProfile::default();
        for (k, v) in map {
            p.set(k, v)?;
        }
        Ok(p)
    }
}

impl From<CalibrationProfile> for BTreeMap<DeviceKind, f64> {
    fn from(p: CalibrationProfile) -> Self {
        p.offsets_tenths.iter().map(|(&k, &t)| (k, f64::from(t) / 10.0)).collect()
    }
}

/// Identifies the device format from the first bytes of an upload.
pub fn detect_format(first_bytes: &[u8]) -> Result<DeviceKind, IngestError> {
    if first_bytes.len() < 4 {
        return Err(IngestError::UnknownFormat);
    }
    if first_bytes.starts_with(b"#RFE") {
        return Ok(DeviceKind::Rfe);
    }
    let trimmed = first_bytes.trim_ascii_start();
    let first_token = trimmed.split(|b| b.is_ascii_whitespace()).next().unwrap_or_default();
    if first_token == b"A32" {
        return Ok(DeviceKind::Ascii32);
    }
    if trimmed.first() == Some(&b'{') {
        return Ok(DeviceKind::Rftrack);
    }
    Err(IngestError::UnknownFormat)
}

/// Parses every well-formed sweep in file order; malformed lines become [`LineError`]s.
pub fn parse_sweep_file(kind: DeviceKind, content: &[u8]) -> ParsedFile {
    match kind {
        DeviceKind::Rfe => formats::parse_rfe(content),
        DeviceKind::Ascii32 => formats::parse_ascii32(content),
        DeviceKind::Rftrack => formats::parse_rftrack(content),
    }
}

/// True for canonical ZRF exports, which are re-ingested verbatim: no
/// resampling and no calibration, so record ids survive the round trip.
pub fn is_zrf(content: &[u8]) -> bool {
    content.trim_ascii_start().starts_with(b"ZRF1,")
}

fn zrf_error_reason(e: &ZrfError) -> LineErrorReason {
    match e {
        ZrfError::BadPrefix => LineErrorReason::UnknownDirective,
        ZrfError::FieldCount(_) => LineErrorReason::MissingField,
        ZrfError::BadField(_) => LineErrorReason::BadNumber,
        ZrfError::Model(ModelError::RecordIdMismatch { .. }) => LineErrorReason::RecordIdMismatch,
        ZrfError::Model(m) => normalize_error_reason(&NormalizeError::Model(m.clone())),
    }
}

/// Parses a ZRF file into `(line, record)` pairs and line errors.
pub fn parse_zrf_file(content: &[u8]) -> (Vec<(usize, SweepRecord)>, Vec<LineError>) {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in content.split(|&b| b == b'\n').enumerate() {
        let line = String::from_utf8_lossy(line);
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match parse_zrf_line(line) {
            Ok(r) => records.push((i + 1, r)),
            Err(e) => errors.push(LineError::new(i + 1, zrf_error_reason(&e))),
        }
    }
    (records, errors)
}

/// Index of the raw bin whose center is nearest the canonical bin center
/// `center2 / 2`; ties go to the lower frequency. Works in doubled Hz so every
/// center is an integer.
fn nearest_raw_bin(center2: u64, start_hz: u64, step_hz: u64, n: usize) -> usize {
    let first2 = 2 * start_hz + step_hz;
    if center2 <= first2 {
        return 0;
    }
    let d = center2 - first2;
    let q = d / (2 * step_hz);
    let r = d % (2 * step_hz);
    let k = if r > step_hz { q + 1 } else { q };
    (k as usize).min(n - 1)
}

/// Resamples a raw sweep onto the canonical grid (nearest neighbour in dB) and
/// applies the device-kind calibration offset.
pub fn normalize_sweep(raw: &RawSweep, calibration: &CalibrationProfile) -> Result<SweepRecord, NormalizeError> {
    if raw.powers_dbm.is_empty() || raw.step_hz == 0 {
        return Err(NormalizeError::NoOverlap);
    }
    // every raw value is checked, not only those the resampling picks
    for &p in &raw.powers_dbm {
        dbm_to_tenths(p)?;
    }
    let b = CANONICAL_BIN_HZ;
    let (start, end) = (raw.start_hz, raw.end_hz());
    let grid_low = start / b * b;
    let grid_high = end.div_ceil(b) * b;
    let offset = calibration.offset_tenths(raw.device_kind);

    let mut low_hz = None;
    let mut power_tenths = Vec::new();
    for j in 0..(grid_high - grid_low) / b {
        let center2 = 2 * grid_low + b * (2 * j + 1);
        if center2 < 2 * start || center2 >= 2 * end {
            continue;
        }
        low_hz.get_or_insert(grid_low + j * b);
        let k = nearest_raw_bin(center2, start, raw.step_hz, raw.powers_dbm.len());
        let tenths = i32::from(dbm_to_tenths(raw.powers_dbm[k])?) + offset;
        if !(MIN_POWER_TENTHS..=MAX_POWER_TENTHS).contains(&tenths) {
            return Err(ModelError::PowerOutOfRange(f64::from(tenths) / 10.0).into());
        }
        power_tenths.push(tenths as i16);
    }
    let low_hz = low_hz.ok_or(NormalizeError::NoOverlap)?;
    let high_hz = low_hz + b * power_tenths.len() as u64;
    let fields = SweepFields {
        device_kind: raw.device_kind,
        device_serial: raw.device_serial.clone(),
        timestamp_ms: raw.timestamp_ms,
        location: raw.location,
        span: FrequencySpan::new(low_hz, high_hz)?,
        bin_width_hz: b,
        power_tenths,
    };
    Ok(fields.seal()?)
}

fn normalize_error_reason(e: &NormalizeError) -> LineErrorReason {
    match e {
        NormalizeError::NoOverlap => LineErrorReason::NoOverlap,
        NormalizeError::Model(ModelError::PowerOutOfRange(_)) => LineErrorReason::PowerOutOfRange,
        NormalizeError::Model(ModelError::InvalidLocation { .. }) => LineErrorReason::InvalidLocation,
        NormalizeError::Model(ModelError::InvalidSerial(_)) => LineErrorReason::InvalidSerial,
        NormalizeError::Model(_) => LineErrorReason::BadNumber,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub duplicates: usize,
    pub errors: Vec<LineError>,
}

/// Result of [`ingest_file`]: the report plus the state entries that were applied,
/// in application order, for the caller to persist.
#[derive(Debug, Clone, Default)]
pub struct IngestOutcome {
    pub report: IngestReport,
    pub entries: Vec<StateEntry>,
}

/// Who is uploading and how to stamp the resulting metadata changes.
#[derive(Debug, Clone)]
pub struct IngestContext<'a> {
    pub collector: &'a str,
    pub calibration: &'a CalibrationProfile,
    pub now_ms: i64,
}

/// Turns an upload (ZRF or a device format) into `(line, record)` candidates
/// plus line errors, sorted by line. No state is touched.
pub fn parse_upload(
    content: &[u8],
    calibration: &CalibrationProfile,
) -> Result<(Vec<(usize, SweepRecord)>, Vec<LineError>), IngestError> {
    if is_zrf(content) {
        return Ok(parse_zrf_file(content));
    }
    let parsed = parse_sweep_file(detect_format(content)?, content);
    let mut errors = parsed.errors;
    let mut candidates = Vec::new();
    for raw in &parsed.sweeps {
        match normalize_sweep(raw, calibration) {
            Ok(r) => candidates.push((raw.line, r)),
            Err(e) => errors.push(LineError::new(raw.line, normalize_error_reason(&e))),
        }
    }
    errors.sort_by_key(|e| e.line);
    Ok((candidates, errors))
}

/// Parses, normalizes and deduplicates an upload, then appends new records and
/// extends the per-device journeys of the campaign.
pub fn ingest_file(
    state: &mut ReplicaState,
    content: &[u8],
    campaign_id: CampaignId,
    ctx: &IngestContext<'_>,
) -> Result<IngestOutcome, IngestError> {
    let (candidates, errors) = parse_upload(content, ctx.calibration)?;
    let campaign = state
        .campaigns
        .get(&campaign_id)
        .cloned()
        .ok_or(IngestError::CampaignNotFound(campaign_id))?;

    let mut report = IngestReport { errors, ..Default::default() };
    let mut new_records = Vec::new();
    let mut seen = BTreeSet::new();
    let mut journeys: BTreeMap<String, Journey> = BTreeMap::new();

    for (_, rec) in candidates {
        let id = rec.id();
        let fresh = !state.records.contains_key(&id) && seen.insert(id);
        if fresh {
            report.accepted += 1;
        } else {
            report.duplicates += 1;
        }
        let jid = Journey::derive_id(campaign_id, ctx.collector, &rec.device_serial);
        let already = state.journeys.get(&jid).is_some_and(|j| j.entries.contains(&(rec.timestamp_ms, id)));
        if !already {
            journeys
                .entry(rec.device_serial.clone())
                .or_insert_with(|| Journey::new(campaign_id, ctx.collector, &rec.device_serial))
                .entries
                .insert((rec.timestamp_ms, id));
        }
        if fresh {
            new_records.push(rec);
        }
    }

    let mut entries: Vec<StateEntry> = new_records.into_iter().map(StateEntry::Record).collect();
    let new_journeys: Vec<_> = journeys
        .values()
        .map(|j| j.journey_id)
        .filter(|id| !campaign.journeys.contains(id))
        .collect();
    entries.extend(journeys.into_values().map(StateEntry::Journey));
    if !new_journeys.is_empty() {
        let mut meta = campaign;
        meta.journeys.extend(new_journeys);
        meta.meta_version = LwwStamp::after(&meta.meta_version, ctx.now_ms, &state.node_id);
        entries.push(StateEntry::CampaignMeta(meta));
    }
    for e in &entries {
        state.apply(e.clone()).expect("entries derived from local state merge cleanly");
    }
    Ok(IngestOutcome { report, entries })
}

/// Helper for callers building campaigns: a fresh campaign stamped by `node_id`.
pub fn new_campaign(campaign_id: CampaignId, name: &str, owner: &str, node_id: &str, now_ms: i64) -> Campaign {
    Campaign {
        campaign_id,
        name: name.to_string(),
        owner: owner.to_string(),
        region: None,
        journeys: BTreeSet::new(),
        meta_version: LwwStamp::new(now_ms, node_id),
    }
}
