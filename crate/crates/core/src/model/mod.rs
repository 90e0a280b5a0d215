//! Canonical domain types shared by every other module.

mod canonical;
mod plan;

use std::fmt;
use std::ops::Deref;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;
use uuid::Uuid;

pub use canonical::{format_dbm_tenths, format_degrees, parse_zrf_line, to_zrf_line, ZrfError};
pub use plan::{ChannelPlan, NotInPlan};

/// Width of one bin of the canonical frequency grid.
pub const CANONICAL_BIN_HZ: u64 = 100_000;
/// Lowest representable power, tenths of a dBm.
pub const MIN_POWER_TENTHS: i32 = -1500;
/// Highest representable power, tenths of a dBm.
pub const MAX_POWER_TENTHS: i32 = 300;

pub type AccountId = String;
pub type CampaignId = Uuid;
pub type JourneyId = Uuid;
pub type ClaimId = Uuid;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid frequency span [{low_hz}, {high_hz})")]
    InvalidSpan { low_hz: u64, high_hz: u64 },
    #[error("invalid location lat={lat} lon={lon}")]
    InvalidLocation { lat: f64, lon: f64 },
    #[error("bin width {0} Hz is not the canonical grid width")]
    NonCanonicalBinWidth(u64),
    #[error("span is not aligned to the canonical grid")]
    UnalignedSpan,
    #[error("expected {expected} bins, got {actual}")]
    BinCountMismatch { expected: usize, actual: usize },
    #[error("power {0} dBm outside [-150, +30]")]
    PowerOutOfRange(f64),
    #[error("device serial {0:?} is empty or contains reserved characters")]
    InvalidSerial(String),
    #[error("polygon ring must have at least 3 vertices and be closed")]
    InvalidPolygon,
    #[error("record id mismatch: stored {stored}, computed {computed}")]
    RecordIdMismatch { stored: RecordId, computed: RecordId },
}

/// Half-open frequency interval `[low_hz, high_hz)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawSpan")]
pub struct FrequencySpan {
    low_hz: u64,
    high_hz: u64,
}

#[derive(Deserialize)]
struct RawSpan {
    low_hz: u64,
    high_hz: u64,
}

impl TryFrom<RawSpan> for FrequencySpan {
    type Error = ModelError;
    fn try_from(raw: RawSpan) -> Result<Self, ModelError> {
        FrequencySpan::new(raw.low_hz, raw.high_hz)
    }
}

impl FrequencySpan {
    pub fn new(low_hz: u64, high_hz: u64) -> Result<Self, ModelError> {
        if low_hz == 0 || low_hz >= high_hz {
            return Err(ModelError::InvalidSpan { low_hz, high_hz });
        }
        Ok(Self { low_hz, high_hz })
    }

    pub fn low_hz(&self) -> u64 {
        self.low_hz
    }

    pub fn high_hz(&self) -> u64 {
        self.high_hz
    }

    pub fn width_hz(&self) -> u64 {
        self.high_hz - self.low_hz
    }

    pub fn contains(&self, freq_hz: u64) -> bool {
        self.low_hz <= freq_hz && freq_hz < self.high_hz
    }

    /// True when the half-open intersection is non-empty.
    pub fn overlaps(&self, other: &FrequencySpan) -> bool {
        self.low_hz < other.high_hz && other.low_hz < self.high_hz
    }
}

impl fmt::Display for FrequencySpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.low_hz, self.high_hz)
    }
}

/// WGS-84 style position. Latitude in `[-90, 90]`, longitude in `[-180, 180)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat_deg: f64,
    pub lon_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alt_m: Option<f64>,
}

impl GeoPoint {
    pub fn new(lat_deg: f64, lon_deg: f64) -> Result<Self, ModelError> {
        let p = GeoPoint { lat_deg, lon_deg, alt_m: None };
        p.validate()?;
        Ok(p)
    }

    pub fn with_alt(mut self, alt_m: f64) -> Self {
        self.alt_m = Some(alt_m);
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = self.lat_deg.is_finite()
            && self.lon_deg.is_finite()
            && (-90.0..=90.0).contains(&self.lat_deg)
            && (-180.0..180.0).contains(&self.lon_deg)
            && self.alt_m.map_or(true, f64::is_finite);
        if ok {
            Ok(())
        } else {
            Err(ModelError::InvalidLocation { lat: self.lat_deg, lon: self.lon_deg })
        }
    }

    /// Rounds to the precision of the canonical text form (6 dp degrees, 1 dp altitude).
    pub fn quantized(&self) -> GeoPoint {
        GeoPoint {
            lat_deg: canonical::quantize(self.lat_deg, 6),
            lon_deg: canonical::quantize(self.lon_deg, 6),
            alt_m: self.alt_m.map(|a| canonical::quantize(a, 1)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DeviceKind {
    Rfe,
    Ascii32,
    Rftrack,
}

impl DeviceKind {
    pub const ALL: [DeviceKind; 3] = [DeviceKind::Rfe, DeviceKind::Ascii32, DeviceKind::Rftrack];

    pub fn as_str(&self) -> &'static str {
        match self {
            DeviceKind::Rfe => "RFE",
            DeviceKind::Ascii32 => "ASCII32",
            DeviceKind::Rftrack => "RFTRACK",
        }
    }
}

impl fmt::Display for DeviceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DeviceKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "RFE" => Ok(DeviceKind::Rfe),
            "ASCII32" => Ok(DeviceKind::Ascii32),
            "RFTRACK" => Ok(DeviceKind::Rftrack),
            other => Err(format!("unknown device kind {other:?}")),
        }
    }
}

/// SHA-256 content hash of a sweep's canonical text.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordId(pub [u8; 32]);

impl RecordId {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// Digest bucket: the first byte of the hash.
    pub fn bucket(&self) -> u8 {
        self.0[0]
    }
}

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RecordId({})", &hex::encode(self.0)[..12])
    }
}

impl FromStr for RecordId {
    type Err = hex::FromHexError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(RecordId(out))
    }
}

impl Serialize for RecordId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RecordId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Every field of a sweep except its content hash.
///
/// Powers are held as integer tenths of a dBm, the precision of the canonical
/// text form, so that hashing and round trips are exact.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepFields {
    pub device_kind: DeviceKind,
    pub device_serial: String,
    pub timestamp_ms: i64,
    pub location: GeoPoint,
    pub span: FrequencySpan,
    pub bin_width_hz: u64,
    pub power_tenths: Vec<i16>,
}

impl SweepFields {
    pub fn validate(&self) -> Result<(), ModelError> {
        validate_serial(&self.device_serial)?;
        self.location.validate()?;
        if self.bin_width_hz != CANONICAL_BIN_HZ {
            return Err(ModelError::NonCanonicalBinWidth(self.bin_width_hz));
        }
        if self.span.low_hz % CANONICAL_BIN_HZ != 0 || self.span.high_hz % CANONICAL_BIN_HZ != 0 {
            return Err(ModelError::UnalignedSpan);
        }
        let expected = (self.span.width_hz() / self.bin_width_hz) as usize;
        if expected != self.power_tenths.len() {
            return Err(ModelError::BinCountMismatch { expected, actual: self.power_tenths.len() });
        }
        for &p in &self.power_tenths {
            let p = i32::from(p);
            if !(MIN_POWER_TENTHS..=MAX_POWER_TENTHS).contains(&p) {
                return Err(ModelError::PowerOutOfRange(f64::from(p) / 10.0));
            }
        }
        Ok(())
    }

    /// Text hashed into the record id: fields in fixed order, comma separated,
    /// powers joined by semicolons.
    pub fn canonical_text(&self) -> String {
        canonical::canonical_text(self)
    }

    /// Validates, quantizes the location and seals the fields under their content hash.
    pub fn seal(mut self) -> Result<SweepRecord, ModelError> {
        self.location = self.location.quantized();
        self.validate()?;
        let id = compute_record_id(&self);
        Ok(SweepRecord { id, fields: Arc::new(self) })
    }
}

/// SHA-256 of the canonical text of `fields`.
pub fn compute_record_id(fields: &SweepFields) -> RecordId {
    let digest = Sha256::digest(fields.canonical_text().as_bytes());
    RecordId(digest.into())
}

pub(crate) fn validate_serial(serial: &str) -> Result<(), ModelError> {
    let bad = serial.is_empty()
        || serial.chars().any(|c| c == ',' || c == ';' || c.is_whitespace() || c.is_control());
    if bad {
        Err(ModelError::InvalidSerial(serial.to_string()))
    } else {
        Ok(())
    }
}

/// One geo-tagged power spectrum on the canonical grid. Immutable once sealed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    id: RecordId,
    fields: Arc<SweepFields>,
}

impl SweepRecord {
    pub fn id(&self) -> RecordId {
        self.id
    }

    pub fn fields(&self) -> &SweepFields {
        &self.fields
    }

    pub fn into_fields(self) -> SweepFields {
        Arc::unwrap_or_clone(self.fields)
    }

    /// Reassembles a record read from storage, verifying the stored id.
    pub fn with_verified_id(stored: RecordId, fields: SweepFields) -> Result<Self, ModelError> {
        let rec = fields.seal()?;
        if rec.id != stored {
            return Err(ModelError::RecordIdMismatch { stored, computed: rec.id });
        }
        Ok(rec)
    }

    pub fn bin_count(&self) -> usize {
        self.fields.power_tenths.len()
    }

    pub fn power_dbm(&self, bin: usize) -> f64 {
        f64::from(self.fields.power_tenths[bin]) / 10.0
    }

    pub fn powers_dbm(&self) -> impl Iterator<Item = f64> + '_ {
        self.fields.power_tenths.iter().map(|&p| f64::from(p) / 10.0)
    }

    /// Center frequency of bin `i`, in Hz (always an integer on the canonical grid).
    pub fn bin_center_hz(&self, bin: usize) -> u64 {
        self.fields.span.low_hz + self.fields.bin_width_hz * bin as u64 + self.fields.bin_width_hz / 2
    }

    pub fn to_zrf_line(&self) -> String {
        to_zrf_line(self)
    }
}

impl Deref for SweepRecord {
    type Target = SweepFields;
    fn deref(&self) -> &SweepFields {
        &self.fields
    }
}

impl Serialize for SweepRecord {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_zrf_line())
    }
}

impl<'de> Deserialize<'de> for SweepRecord {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let line = String::deserialize(d)?;
        parse_zrf_line(&line).map_err(serde::de::Error::custom)
    }
}

/// Converts a dBm value to integer tenths, rounding half away from zero.
pub fn dbm_to_tenths(dbm: f64) -> Result<i16, ModelError> {
    if !dbm.is_finite() {
        return Err(ModelError::PowerOutOfRange(dbm));
    }
    let t = (dbm * 10.0).round();
    if t < f64::from(MIN_POWER_TENTHS) || t > f64::from(MAX_POWER_TENTHS) {
        return Err(ModelError::PowerOutOfRange(dbm));
    }
    Ok(t as i16)
}

/// Last-writer-wins version: ordered by `wall_ms`, ties broken by `node_id`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LwwStamp {
    pub wall_ms: i64,
    pub node_id: String,
}

impl LwwStamp {
    pub fn new(wall_ms: i64, node_id: impl Into<String>) -> Self {
        LwwStamp { wall_ms, node_id: node_id.into() }
    }

    /// A stamp issued by `node_id` at `now_ms` that is strictly newer than `prev`.
    pub fn after(prev: &LwwStamp, now_ms: i64, node_id: &str) -> LwwStamp {
        let candidate = LwwStamp::new(now_ms.max(prev.wall_ms), node_id);
        if candidate > *prev {
            candidate
        } else {
            LwwStamp::new(prev.wall_ms + 1, node_id)
        }
    }
}

impl fmt::Display for LwwStamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.wall_ms, self.node_id)
    }
}

/// Closed polygon ring (first vertex repeated at the end), at least 3 distinct corners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<GeoPoint>", into = "Vec<GeoPoint>")]
pub struct Polygon {
    ring: Vec<GeoPoint>,
}

impl Polygon {
    pub fn new(ring: Vec<GeoPoint>) -> Result<Self, ModelError> {
        if ring.len() < 4 {
            return Err(ModelError::InvalidPolygon);
        }
        let (first, last) = (ring[0], ring[ring.len() - 1]);
        if first.lat_deg != last.lat_deg || first.lon_deg != last.lon_deg {
            return Err(ModelError::InvalidPolygon);
        }
        for p in &ring {
            p.validate().map_err(|_| ModelError::InvalidPolygon)?;
        }
        Ok(Polygon { ring })
    }

    /// Builds a ring from `(lon, lat)` pairs, closing it if the caller did not.
    pub fn from_lon_lat(coords: &[(f64, f64)]) -> Result<Self, ModelError> {
        let mut ring: Vec<GeoPoint> = coords
            .iter()
            .map(|&(lon, lat)| GeoPoint { lat_deg: lat, lon_deg: lon, alt_m: None })
            .collect();
        if let (Some(first), Some(last)) = (ring.first().copied(), ring.last()) {
            if first.lat_deg != last.lat_deg || first.lon_deg != last.lon_deg {
                ring.push(first);
            }
        }
        Polygon::new(ring)
    }

    /// Axis-aligned rectangle ring.
    pub fn rectangle(min_lon: f64, min_lat: f64, max_lon: f64, max_lat: f64) -> Result<Self, ModelError> {
        Polygon::from_lon_lat(&[
            (min_lon, min_lat),
            (max_lon, min_lat),
            (max_lon, max_lat),
            (min_lon, max_lat),
        ])
    }

    pub fn ring(&self) -> &[GeoPoint] {
        &self.ring
    }

    /// Ring edges as `((lon, lat), (lon, lat))` segments.
    pub fn edges(&self) -> impl Iterator<Item = ((f64, f64), (f64, f64))> + '_ {
        self.ring
            .windows(2)
            .map(|w| ((w[0].lon_deg, w[0].lat_deg), (w[1].lon_deg, w[1].lat_deg)))
    }
}

impl TryFrom<Vec<GeoPoint>> for Polygon {
    type Error = ModelError;
    fn try_from(ring: Vec<GeoPoint>) -> Result<Self, ModelError> {
        Polygon::new(ring)
    }
}

impl From<Polygon> for Vec<GeoPoint> {
    fn from(p: Polygon) -> Self {
        p.ring
    }
}

/// A collector's time-ordered run of sweeps from one device.
///
/// Entries are kept as `(timestamp_ms, record_id)` so the time order is
/// maintained without consulting the record store, and merging two copies of
/// a journey is a set union.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Journey {
    pub journey_id: JourneyId,
    pub campaign_id: CampaignId,
    pub collector: AccountId,
    pub device_serial: String,
    pub entries: std::collections::BTreeSet<(i64, RecordId)>,
}

impl Journey {
    /// Journey ids are derived from campaign, collector and serial, so replicas
    /// ingesting the same device into the same campaign extend one journey.
    pub fn derive_id(campaign_id: CampaignId, collector: &str, device_serial: &str) -> JourneyId {
        let name = format!("{collector}/{device_serial}");
        Uuid::new_v5(&campaign_id, name.as_bytes())
    }

    pub fn new(campaign_id: CampaignId, collector: &str, device_serial: &str) -> Journey {
        Journey {
            journey_id: Journey::derive_id(campaign_id, collector, device_serial),
            campaign_id,
            collector: collector.to_string(),
            device_serial: device_serial.to_string(),
            entries: Default::default(),
        }
    }

    pub fn record_ids(&self) -> impl Iterator<Item = RecordId> + '_ {
        self.entries.iter().map(|&(_, id)| id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A named measurement campaign owning a set of journeys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    pub campaign_id: CampaignId,
    pub name: String,
    pub owner: AccountId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Polygon>,
    pub journeys: std::collections::BTreeSet<JourneyId>,
    pub meta_version: LwwStamp,
}
