//! Canonical text forms: the hashed serialization and ZRF lines.

use std::fmt::Write as _;

use thiserror::Error;

use super::{FrequencySpan, GeoPoint, ModelError, RecordId, SweepFields, SweepRecord};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ZrfError {
    #[error("line does not start with ZRF1")]
    BadPrefix,
    #[error("expected 12 comma-separated fields, got {0}")]
    FieldCount(usize),
    #[error("malformed field {0}")]
    BadField(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub(crate) fn quantize(x: f64, dp: usize) -> f64 {
    let q: f64 = format!("{x:.dp$}").parse().unwrap_or(x);
    if q == 0.0 {
        0.0
    } else {
        q
    }
}

fn fixed(x: f64, dp: usize) -> String {
    let s = format!("{x:.dp$}");
    // negative values that round to zero print as "-0.000000"
    match s.strip_prefix('-') {
        Some(rest) if rest.bytes().all(|b| b == b'0' || b == b'.') => rest.to_string(),
        _ => s,
    }
}

/// Degrees with exactly six fractional digits.
pub fn format_degrees(deg: f64) -> String {
    fixed(deg, 6)
}

/// Tenths of a dBm rendered with exactly one fractional digit.
pub fn format_dbm_tenths(tenths: i16) -> String {
    let t = i32::from(tenths);
    let sign = if t < 0 { "-" } else { "" };
    format!("{sign}{}.{}", t.abs() / 10, t.abs() % 10)
}

fn parse_dbm_tenths(s: &str) -> Option<i16> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s),
    };
    let (int, frac) = body.split_once('.')?;
    if int.is_empty() || frac.len() != 1 || !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
        return None;
    }
    let v: i32 = int.parse::<i32>().ok()? * 10 + frac.parse::<i32>().ok()?;
    i16::try_from(if neg { -v } else { v }).ok()
}

fn write_fields(out: &mut String, f: &SweepFields) {
    let alt = f.location.alt_m.map_or_else(|| "-".to_string(), |a| fixed(a, 1));
    let _ = write!(
        out,
        "{},{},{},{},{},{},{},{},{},",
        f.device_kind,
        f.device_serial,
        f.timestamp_ms,
        format_degrees(f.location.lat_deg),
        format_degrees(f.location.lon_deg),
        alt,
        f.span.low_hz(),
        f.span.high_hz(),
        f.bin_width_hz,
    );
    for (i, &p) in f.power_tenths.iter().enumerate() {
        if i > 0 {
            out.push(';');
        }
        out.push_str(&format_dbm_tenths(p));
    }
}

pub(super) fn canonical_text(f: &SweepFields) -> String {
    let mut out = String::with_capacity(64 + f.power_tenths.len() * 6);
    write_fields(&mut out, f);
    out
}

/// One ZRF line (no terminator).
pub fn to_zrf_line(rec: &SweepRecord) -> String {
    let mut out = String::with_capacity(140 + rec.power_tenths.len() * 6);
    let _ = write!(out, "ZRF1,{},", rec.id());
    write_fields(&mut out, rec.fields());
    out
}

/// Parses one ZRF line and verifies its record id.
pub fn parse_zrf_line(line: &str) -> Result<SweepRecord, ZrfError> {
    let line = line.trim_end_matches(['\r', '\n']);
    let parts: Vec<&str> = line.split(',').collect();
    if parts.first() != Some(&"ZRF1") {
        return Err(ZrfError::BadPrefix);
    }
    if parts.len() != 12 {
        return Err(ZrfError::FieldCount(parts.len()));
    }
    let id: RecordId = parts[1].parse().map_err(|_| ZrfError::BadField("record_id"))?;
    let device_kind = parts[2].parse().map_err(|_| ZrfError::BadField("device_kind"))?;
    let device_serial = parts[3].to_string();
    let timestamp_ms = parts[4].parse().map_err(|_| ZrfError::BadField("timestamp_ms"))?;
    let lat_deg = parts[5].parse().map_err(|_| ZrfError::BadField("lat"))?;
    let lon_deg = parts[6].parse().map_err(|_| ZrfError::BadField("lon"))?;
    let alt_m = match parts[7] {
        "-" => None,
        a => Some(a.parse().map_err(|_| ZrfError::BadField("alt"))?),
    };
    let low: u64 = parts[8].parse().map_err(|_| ZrfError::BadField("low_hz"))?;
    let high: u64 = parts[9].parse().map_err(|_| ZrfError::BadField("high_hz"))?;
    let bin_width_hz = parts[10].parse().map_err(|_| ZrfError::BadField("bin_width_hz"))?;
    let power_tenths = parts[11]
        .split(';')
        .map(parse_dbm_tenths)
        .collect::<Option<Vec<_>>>()
        .ok_or(ZrfError::BadField("powers"))?;
    let fields = SweepFields {
        device_kind,
        device_serial,
        timestamp_ms,
        location: GeoPoint { lat_deg, lon_deg, alt_m },
        span: FrequencySpan::new(low, high)?,
        bin_width_hz,
        power_tenths,
    };
    Ok(SweepRecord::with_verified_id(id, fields)?)
}
