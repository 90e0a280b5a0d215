//! Parsers for the three supported device file formats.

use serde::Deserialize;

use super::{LineError, LineErrorReason, ParsedFile, RawSweep};
use crate::model::{validate_serial, DeviceKind, GeoPoint};

pub const RFE_DEFAULT_SERIAL: &str = "RFE-UNKNOWN";
pub const A32_DEFAULT_SERIAL: &str = "A32-UNKNOWN";
pub const A32_BIN_COUNT: usize = 32;

fn round_tenth(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn parse_f64(s: &str) -> Result<f64, LineErrorReason> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or(LineErrorReason::BadNumber)
}

fn location(lat: f64, lon: f64) -> Result<GeoPoint, LineErrorReason> {
    GeoPoint::new(lat, lon).map_err(|_| LineErrorReason::InvalidLocation)
}

fn lines(content: &[u8]) -> impl Iterator<Item = (usize, String)> + '_ {
    content
        .split(|&b| b == b'\n')
        .enumerate()
        .map(|(i, l)| (i + 1, String::from_utf8_lossy(l).trim().to_string()))
}

struct RfeHeader {
    start_hz: u64,
    step_hz: u64,
    nbins: usize,
}

fn parse_rfe_header(line: &str) -> Option<RfeHeader> {
    let mut it = line.split(',');
    if it.next()? != "#RFE" {
        return None;
    }
    let start_hz = it.next()?.trim().parse().ok()?;
    let step_hz: u64 = it.next()?.trim().parse().ok()?;
    let nbins: usize = it.next()?.trim().parse().ok()?;
    if it.next().is_some() || step_hz == 0 || nbins == 0 || start_hz == 0 {
        return None;
    }
    Some(RfeHeader { start_hz, step_hz, nbins })
}

pub(super) fn parse_rfe(content: &[u8]) -> ParsedFile {
    let mut out = ParsedFile::default();
    let mut header: Option<RfeHeader> = None;
    let mut serial = RFE_DEFAULT_SERIAL.to_string();
    for (line_no, line) in lines(content) {
        if line.is_empty() {
            continue;
        }
        if line_no == 1 {
            match parse_rfe_header(&line) {
                Some(h) => header = Some(h),
                None => out.errors.push(LineError::new(1, LineErrorReason::BadHeader)),
            }
            continue;
        }
        if let Some(s) = line.strip_prefix("#SER,") {
            match validate_serial(s.trim()) {
                Ok(()) => serial = s.trim().to_string(),
                Err(_) => out.errors.push(LineError::new(line_no, LineErrorReason::InvalidSerial)),
            }
            continue;
        }
        if line.starts_with('#') {
            out.errors.push(LineError::new(line_no, LineErrorReason::UnknownDirective));
            continue;
        }
        let Some(h) = &header else {
            out.errors.push(LineError::new(line_no, LineErrorReason::MissingHeader));
            continue;
        };
        match parse_rfe_data(&line, h, &serial, line_no) {
            Ok(sweep) => out.sweeps.push(sweep),
            Err(reason) => out.errors.push(LineError::new(line_no, reason)),
        }
    }
    out
}

fn parse_rfe_data(line: &str, h: &RfeHeader, serial: &str, line_no: usize) -> Result<RawSweep, LineErrorReason> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() < 3 {
        return Err(LineErrorReason::MissingField);
    }
    if fields.len() - 3 != h.nbins {
        return Err(LineErrorReason::BinCountMismatch);
    }
    let ts = chrono::DateTime::parse_from_rfc3339(fields[0].trim()).map_err(|_| LineErrorReason::BadTimestamp)?;
    let loc = location(parse_f64(fields[1])?, parse_f64(fields[2])?)?;
    let powers = fields[3..].iter().map(|p| parse_f64(p).map(round_tenth)).collect::<Result<Vec<_>, _>>()?;
    Ok(RawSweep {
        device_kind: DeviceKind::Rfe,
        device_serial: serial.to_string(),
        timestamp_ms: ts.timestamp_millis(),
        location: loc,
        start_hz: h.start_hz,
        step_hz: h.step_hz,
        powers_dbm: powers,
        line: line_no,
    })
}

pub(super) fn parse_ascii32(content: &[u8]) -> ParsedFile {
    let mut out = ParsedFile::default();
    for (line_no, line) in lines(content) {
        if line.is_empty() {
            continue;
        }
        match parse_ascii32_line(&line, line_no) {
            Ok(sweep) => out.sweeps.push(sweep),
            Err(reason) => out.errors.push(LineError::new(line_no, reason)),
        }
    }
    out
}

fn parse_ascii32_line(line: &str, line_no: usize) -> Result<RawSweep, LineErrorReason> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens[0] != "A32" {
        return Err(LineErrorReason::UnknownDirective);
    }
    if tokens.len() < 6 {
        return Err(LineErrorReason::MissingField);
    }
    if tokens.len() - 6 != A32_BIN_COUNT {
        return Err(LineErrorReason::BinCountMismatch);
    }
    let timestamp_ms: i64 = tokens[1].parse().map_err(|_| LineErrorReason::BadTimestamp)?;
    let loc = location(parse_f64(tokens[2])?, parse_f64(tokens[3])?)?;
    let start_hz: u64 = tokens[4].parse().map_err(|_| LineErrorReason::BadNumber)?;
    let step_hz: u64 = tokens[5].parse().map_err(|_| LineErrorReason::BadNumber)?;
    if start_hz == 0 || step_hz == 0 {
        return Err(LineErrorReason::BadNumber);
    }
    let powers = tokens[6..]
        .iter()
        .map(|t| t.parse::<i32>().map(f64::from).map_err(|_| LineErrorReason::BadNumber))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RawSweep {
        device_kind: DeviceKind::Ascii32,
        device_serial: A32_DEFAULT_SERIAL.to_string(),
        timestamp_ms,
        location: loc,
        start_hz,
        step_hz,
        powers_dbm: powers,
        line: line_no,
    })
}

#[derive(Deserialize)]
struct RfTrackLine {
    t: i64,
    lat: f64,
    lon: f64,
    ser: String,
    f0: u64,
    bw: u64,
    bins: Vec<f64>,
}

pub(super) fn parse_rftrack(content: &[u8]) -> ParsedFile {
    let mut out = ParsedFile::default();
    for (line_no, line) in lines(content) {
        if line.is_empty() {
            continue;
        }
        match parse_rftrack_line(&line, line_no) {
            Ok(sweep) => out.sweeps.push(sweep),
            Err(reason) => out.errors.push(LineError::new(line_no, reason)),
        }
    }
    out
}

fn parse_rftrack_line(line: &str, line_no: usize) -> Result<RawSweep, LineErrorReason> {
    let obj: RfTrackLine = serde_json::from_str(line).map_err(|_| LineErrorReason::BadJson)?;
    if obj.bins.is_empty() {
        return Err(LineErrorReason::BinCountMismatch);
    }
    let n = obj.bins.len() as u64;
    if obj.bw == 0 || obj.bw % n != 0 || obj.f0 == 0 {
        return Err(LineErrorReason::NonIntegralStep);
    }
    validate_serial(&obj.ser).map_err(|_| LineErrorReason::InvalidSerial)?;
    if obj.bins.iter().any(|b| !b.is_finite()) {
        return Err(LineErrorReason::BadNumber);
    }
    Ok(RawSweep {
        device_kind: DeviceKind::Rftrack,
        device_serial: obj.ser,
        timestamp_ms: obj.t,
        location: location(obj.lat, obj.lon)?,
        start_hz: obj.f0,
        step_hz: obj.bw / n,
        powers_dbm: obj.bins.into_iter().map(round_tenth).collect(),
        line: line_no,
    })
}
