//! Occupancy statistics, white-space reports and journey editing.
//!
//! A record's per-channel value is the maximum over the bins whose centers fall
//! in the channel. A channel sample is occupied when that value is at or above
//! the detection threshold; duty cycle is the occupied fraction of samples.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::geo::{haversine_m, point_in_polygon, BBox, Region};
use crate::model::{dbm_to_tenths, ChannelPlan, GeoPoint, JourneyId, Polygon, RecordId, SweepRecord};

pub const DEFAULT_THRESHOLD_DBM: f64 = -85.0;
pub const DEFAULT_MAX_DUTY: f64 = 0.1;
pub const DEFAULT_MIN_SAMPLES: u64 = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("no samples")]
    EmptySamples,
    #[error("journey has no records")]
    EmptyJourney,
    #[error("invalid bounding box")]
    InvalidBBox,
    #[error("invalid polygon")]
    InvalidPolygon,
    #[error("cell size must be positive")]
    InvalidCellSize,
    #[error("time window must satisfy t0 < t1")]
    InvalidWindow,
    #[error("resampling step must be positive")]
    InvalidStep,
    #[error("thresholds must be strictly ascending")]
    InvalidThresholds,
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

/// Fraction of samples at or above `threshold_dbm`.
pub fn duty_cycle(samples: &[f64], threshold_dbm: f64) -> Result<f64, AnalysisError> {
    if samples.is_empty() {
        return Err(AnalysisError::EmptySamples);
    }
    let occupied = samples.iter().filter(|&&p| p >= threshold_dbm).count();
    Ok(occupied as f64 / samples.len() as f64)
}

/// Maximum dBm per channel over the bins whose centers lie in that channel.
/// Channels without a covered bin are absent.
pub fn channel_power(record: &SweepRecord, plan: &ChannelPlan) -> BTreeMap<i32, f64> {
    let mut out: BTreeMap<i32, f64> = BTreeMap::new();
    for (bin, p) in record.powers_dbm().enumerate() {
        if let Ok(ch) = plan.channel_of(record.bin_center_hz(bin)) {
            out.entry(ch).and_modify(|m| *m = m.max(p)).or_insert(p);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyCell {
    pub cell_x: i64,
    pub cell_y: i64,
    pub channel: i32,
    pub duty_cycle: f64,
    pub sample_count: u64,
    pub occupied_count: u64,
}

#[derive(Default, Clone, Copy)]
struct Tally {
    occupied: u64,
    total: u64,
}

impl Tally {
    fn add(&mut self, power: f64, threshold: f64) {
        self.total += 1;
        if power >= threshold {
            self.occupied += 1;
        }
    }

    fn duty(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.occupied as f64 / self.total as f64
        }
    }
}

/// Grid cell indices of `p` relative to the box origin.
pub fn cell_of(p: &GeoPoint, bbox: &BBox, cell_deg: f64) -> (i64, i64) {
    (
        ((p.lon_deg - bbox.min_lon) / cell_deg).floor() as i64,
        ((p.lat_deg - bbox.min_lat) / cell_deg).floor() as i64,
    )
}

/// Per (cell, channel) duty cycle over records inside `bbox`, sorted by
/// `(cell_x, cell_y, channel)`. Cells without samples are absent.
pub fn occupancy_grid<'a>(
    records: impl IntoIterator<Item = &'a SweepRecord>,
    bbox: &BBox,
    cell_deg: f64,
    plan: &ChannelPlan,
    threshold_dbm: f64,
) -> Result<Vec<OccupancyCell>, AnalysisError> {
    if !(cell_deg.is_finite() && cell_deg > 0.0) {
        return Err(AnalysisError::InvalidCellSize);
    }
    BBox::new(bbox.min_lon, bbox.min_lat, bbox.max_lon, bbox.max_lat).map_err(|_| AnalysisError::InvalidBBox)?;
    let mut tallies: BTreeMap<(i64, i64, i32), Tally> = BTreeMap::new();
    for rec in records {
        if !bbox.contains(&rec.location) {
            continue;
        }
        let (x, y) = cell_of(&rec.location, bbox, cell_deg);
        for (ch, p) in channel_power(rec, plan) {
            tallies.entry((x, y, ch)).or_default().add(p, threshold_dbm);
        }
    }
    Ok(tallies
        .into_iter()
        .map(|((cell_x, cell_y, channel), t)| OccupancyCell {
            cell_x,
            cell_y,
            channel,
            duty_cycle: t.duty(),
            sample_count: t.total,
            occupied_count: t.occupied,
        })
        .collect())
}

/// One polygon feature per cell with `channel`, `duty_cycle` and `sample_count` properties.
pub fn occupancy_geojson(cells: &[OccupancyCell], bbox: &BBox, cell_deg: f64) -> Value {
    let features: Vec<Value> = cells
        .iter()
        .map(|c| {
            let x0 = bbox.min_lon + c.cell_x as f64 * cell_deg;
            let y0 = bbox.min_lat + c.cell_y as f64 * cell_deg;
            let (x1, y1) = (x0 + cell_deg, y0 + cell_deg);
            json!({
                "type": "Feature",
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [[[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]],
                },
                "properties": {
                    "cell_x": c.cell_x,
                    "cell_y": c.cell_y,
                    "channel": c.channel,
                    "duty_cycle": c.duty_cycle,
                    "sample_count": c.sample_count,
                },
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportParams {
    pub threshold_dbm: f64,
    pub max_duty: f64,
    pub min_samples: u64,
}

impl Default for ReportParams {
    fn default() -> Self {
        ReportParams {
            threshold_dbm: DEFAULT_THRESHOLD_DBM,
            max_duty: DEFAULT_MAX_DUTY,
            min_samples: DEFAULT_MIN_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ChannelStatus {
    Free,
    Occupied,
    Unknown,
}

impl ChannelStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            ChannelStatus::Free => "FREE",
            ChannelStatus::Occupied => "OCCUPIED",
            ChannelStatus::Unknown => "UNKNOWN",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelEntry {
    pub channel: i32,
    pub low_hz: u64,
    pub high_hz: u64,
    pub duty_cycle: f64,
    pub sample_count: u64,
    pub occupied_count: u64,
    pub status: ChannelStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhiteSpaceReport {
    pub region: String,
    pub plan: String,
    pub threshold_dbm: f64,
    pub max_duty: f64,
    pub min_samples: u64,
    pub channels: Vec<ChannelEntry>,
}

impl WhiteSpaceReport {
    pub fn free_channels(&self) -> impl Iterator<Item = i32> + '_ {
        self.channels.iter().filter(|c| c.status == ChannelStatus::Free).map(|c| c.channel)
    }

    /// `channel,low_hz,high_hz,duty,samples,status` table with a header row.
    pub fn to_table(&self) -> String {
        let mut out = String::from("channel,low_hz,high_hz,duty,samples,status\n");
        for c in &self.channels {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{},{}",
                c.channel,
                c.low_hz,
                c.high_hz,
                c.duty_cycle,
                c.sample_count,
                c.status.as_str()
            );
        }
        out
    }
}

/// Classification rule: too few samples is UNKNOWN, otherwise FREE when the duty is at most `max_duty`.
pub fn classify(sample_count: u64, duty: f64, params: &ReportParams) -> ChannelStatus {
    if sample_count == 0 || sample_count < params.min_samples {
        ChannelStatus::Unknown
    } else if duty <= params.max_duty {
        ChannelStatus::Free
    } else {
        ChannelStatus::Occupied
    }
}

fn region_channel_samples<'a>(
    records: impl IntoIterator<Item = &'a SweepRecord>,
    region: &Region,
    plan: &ChannelPlan,
) -> BTreeMap<i32, Vec<f64>> {
    let mut out: BTreeMap<i32, Vec<f64>> = BTreeMap::new();
    for rec in records {
        if region.contains(&rec.location) {
            for (ch, p) in channel_power(rec, plan) {
                out.entry(ch).or_default().push(p);
            }
        }
    }
    out
}

/// Region-level per-channel classification; every channel of the plan is listed.
pub fn white_space_report<'a>(
    records: impl IntoIterator<Item = &'a SweepRecord>,
    region: &Region,
    plan: &ChannelPlan,
    params: &ReportParams,
) -> Result<WhiteSpaceReport, AnalysisError> {
    if !(0.0..=1.0).contains(&params.max_duty) {
        return Err(AnalysisError::InvalidParameter("max_duty"));
    }
    if !params.threshold_dbm.is_finite() {
        return Err(AnalysisError::InvalidParameter("threshold_dbm"));
    }
    let samples = region_channel_samples(records, region, plan);
    let channels = plan
        .indices()
        .map(|ch| {
            let mut t = Tally::default();
            for &p in samples.get(&ch).map(Vec::as_slice).unwrap_or_default() {
                t.add(p, params.threshold_dbm);
            }
            let span = plan.channel_span(ch).expect("index from plan");
            ChannelEntry {
                channel: ch,
                low_hz: span.low_hz(),
                high_hz: span.high_hz(),
                duty_cycle: t.duty(),
                sample_count: t.total,
                occupied_count: t.occupied,
                status: classify(t.total, t.duty(), params),
            }
        })
        .collect();
    Ok(WhiteSpaceReport {
        region: region.describe(),
        plan: plan.name.clone(),
        threshold_dbm: params.threshold_dbm,
        max_duty: params.max_duty,
        min_samples: params.min_samples,
        channels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DutyCurve {
    pub channel: i32,
    pub sample_count: u64,
    /// One duty value per threshold, in threshold order.
    pub duties: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweep {
    pub thresholds: Vec<f64>,
    pub curves: Vec<DutyCurve>,
}

/// Duty curves per sampled channel across strictly ascending thresholds.
pub fn threshold_sweep<'a>(
    records: impl IntoIterator<Item = &'a SweepRecord>,
    region: &Region,
    plan: &ChannelPlan,
    thresholds: &[f64],
) -> Result<ThresholdSweep, AnalysisError> {
    if thresholds.iter().any(|t| !t.is_finite()) || thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(AnalysisError::InvalidThresholds);
    }
    if thresholds.is_empty() {
        return Ok(ThresholdSweep { thresholds: vec![], curves: vec![] });
    }
    let curves = region_channel_samples(records, region, plan)
        .into_iter()
        .map(|(channel, samples)| DutyCurve {
            channel,
            sample_count: samples.len() as u64,
            duties: thresholds.iter().map(|&t| duty_cycle(&samples, t).expect("non-empty")).collect(),
        })
        .collect();
    Ok(ThresholdSweep { thresholds: thresholds.to_vec(), curves })
}

/// Records with `t0_ms <= timestamp < t1_ms`, order preserved.
pub fn trim_time(records: &[SweepRecord], t0_ms: i64, t1_ms: i64) -> Result<Vec<SweepRecord>, AnalysisError> {
    if t0_ms >= t1_ms {
        return Err(AnalysisError::InvalidWindow);
    }
    Ok(records.iter().filter(|r| (t0_ms..t1_ms).contains(&r.timestamp_ms)).cloned().collect())
}

/// Records whose location is inside the ring (boundary inclusive), order preserved.
pub fn clip_to_polygon(records: &[SweepRecord], ring: &Polygon) -> Vec<SweepRecord> {
    records.iter().filter(|r| point_in_polygon(&r.location, ring)).cloned().collect()
}

fn mean_dbm(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), p| (s + 10f64.powf(p / 10.0), n + 1));
    10.0 * (sum / n as f64).log10()
}

fn collapse_run(run: &[&SweepRecord]) -> SweepRecord {
    let first = run[0];
    if run.len() == 1 {
        return first.clone();
    }
    let n = run.len() as f64;
    let lat = run.iter().map(|r| r.location.lat_deg).sum::<f64>() / n;
    let lon = run.iter().map(|r| r.location.lon_deg).sum::<f64>() / n;
    let alt = run
        .iter()
        .map(|r| r.location.alt_m)
        .collect::<Option<Vec<f64>>>()
        .map(|alts| alts.iter().sum::<f64>() / n);
    let mut fields = first.fields().clone();
    fields.location = GeoPoint { lat_deg: lat, lon_deg: lon, alt_m: alt };
    fields.power_tenths = (0..first.bin_count())
        .map(|bin| dbm_to_tenths(mean_dbm(run.iter().map(|r| r.power_dbm(bin)))).expect("mean of in-range powers is in range"))
        .collect();
    fields.seal().expect("aggregate of valid records is valid")
}

/// Collapses each maximal run of consecutive records whose cumulative in-run
/// distance stays below `step_m` into one derived record: mean position, first
/// timestamp, per-bin mean power in milliwatts. A run also ends where the
/// frequency span changes, since bins of different spans cannot be averaged.
pub fn resample_by_distance(records: &[SweepRecord], step_m: f64) -> Result<Vec<SweepRecord>, AnalysisError> {
    if !(step_m.is_finite() && step_m > 0.0) {
        return Err(AnalysisError::InvalidStep);
    }
    if records.is_empty() {
        return Err(AnalysisError::EmptyJourney);
    }
    let mut out = Vec::new();
    let mut run: Vec<&SweepRecord> = vec![&records[0]];
    let mut run_dist = 0.0;
    for pair in records.windows(2) {
        let (prev, next) = (&pair[0], &pair[1]);
        let d = haversine_m(&prev.location, &next.location);
        if run_dist + d < step_m && next.span == run[0].span {
            run_dist += d;
            run.push(next);
        } else {
            out.push(collapse_run(&run));
            run = vec![next];
            run_dist = 0.0;
        }
    }
    out.push(collapse_run(&run));
    Ok(out)
}

/// One journey edit operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op")]
pub enum JourneyEdit {
    TrimTime { t0_ms: i64, t1_ms: i64 },
    ClipPolygon { ring: Polygon },
    ResampleDistance { step_m: f64 },
}

/// Result of applying edits to a journey. The source records are never
/// modified; every record here is derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditedJourney {
    pub source: JourneyId,
    pub ops: Vec<JourneyEdit>,
    pub records: Vec<SweepRecord>,
}

impl EditedJourney {
    pub fn record_ids(&self) -> Vec<RecordId> {
        self.records.iter().map(SweepRecord::id).collect()
    }
}

/// Applies `ops` in order. Resampling an empty selection yields an empty journey.
pub fn edit_journey(source: JourneyId, records: &[SweepRecord], ops: &[JourneyEdit]) -> Result<EditedJourney, AnalysisError> {
    let mut current = records.to_vec();
    for op in ops {
        current = match op {
            JourneyEdit::TrimTime { t0_ms, t1_ms } => trim_time(&current, *t0_ms, *t1_ms)?,
            JourneyEdit::ClipPolygon { ring } => clip_to_polygon(&current, ring),
            JourneyEdit::ResampleDistance { step_m } => {
                if current.is_empty() {
                    if !(step_m.is_finite() && *step_m > 0.0) {
                        return Err(AnalysisError::InvalidStep);
                    }
                    current
                } else {
                    resample_by_distance(&current, *step_m)?
                }
            }
        };
    }
    Ok(EditedJourney { source, ops: ops.to_vec(), records: current })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DeviceKind, FrequencySpan, SweepFields, CANONICAL_BIN_HZ};

    fn record(lat: f64, lon: f64, ts: i64, low_hz: u64, powers: &[f64]) -> SweepRecord {
        SweepFields {
            device_kind: DeviceKind::Rfe,
            device_serial: "T".into(),
            timestamp_ms: ts,
            location: GeoPoint::new(lat, lon).unwrap(),
            span: FrequencySpan::new(low_hz, low_hz + CANONICAL_BIN_HZ * powers.len() as u64).unwrap(),
            bin_width_hz: CANONICAL_BIN_HZ,
            power_tenths: powers.iter().map(|&p| dbm_to_tenths(p).unwrap()).collect(),
        }
        .seal()
        .unwrap()
    }

    fn unit_bbox() -> BBox {
        BBox::new(0.0, 0.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn duty_examples() {
        assert_eq!(duty_cycle(&[-90.0, -60.0, -95.0], -70.0).unwrap(), 1.0 / 3.0);
        assert_eq!(duty_cycle(&[-70.0], -70.0).unwrap(), 1.0);
        assert_eq!(duty_cycle(&[-90.0, -95.0], -70.0).unwrap(), 0.0);
        assert_eq!(duty_cycle(&[], -70.0), Err(AnalysisError::EmptySamples));
    }

    #[test]
    fn channel_power_examples() {
        let plan = ChannelPlan::uhf_8mhz();
        let mut powers = vec![-90.0; 80];
        powers[17] = -55.0;
        let rec = record(0.5, 0.5, 0, 470_000_000, &powers);
        assert_eq!(channel_power(&rec, &plan), BTreeMap::from([(21, -55.0)]));

        let rec = record(0.5, 0.5, 0, 470_000_000, &[-90.0; 160]);
        assert_eq!(channel_power(&rec, &plan).keys().copied().collect::<Vec<_>>(), vec![21, 22]);

        let rec = record(0.5, 0.5, 0, 868_000_000, &[-90.0; 6]);
        assert!(channel_power(&rec, &plan).is_empty());
    }

    #[test]
    fn grid_examples() {
        let plan = ChannelPlan::uhf_8mhz();
        let rec = record(0.05, 0.05, 0, 470_000_000, &[-90.0; 80]);
        let cells = occupancy_grid([&rec], &unit_bbox(), 0.1, &plan, -85.0).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!((cells[0].cell_x, cells[0].cell_y, cells[0].channel), (0, 0, 21));

        let hot = record(0.05, 0.06, 1, 470_000_000, &[-60.0; 80]);
        let cells = occupancy_grid([&rec, &hot], &unit_bbox(), 0.1, &plan, -85.0).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!((cells[0].duty_cycle, cells[0].sample_count), (0.5, 2));

        assert!(occupancy_grid(std::iter::empty(), &unit_bbox(), 0.1, &plan, -85.0).unwrap().is_empty());
        assert_eq!(occupancy_grid([&rec], &unit_bbox(), 0.0, &plan, -85.0), Err(AnalysisError::InvalidCellSize));
        let outside = record(5.0, 5.0, 0, 470_000_000, &[-60.0; 80]);
        assert!(occupancy_grid([&outside], &unit_bbox(), 0.1, &plan, -85.0).unwrap().is_empty());
    }

    #[test]
    fn geojson_shape() {
        let plan = ChannelPlan::uhf_8mhz();
        let rec = record(0.15, 0.25, 0, 470_000_000, &[-90.0; 80]);
        let cells = occupancy_grid([&rec], &unit_bbox(), 0.1, &plan, -85.0).unwrap();
        let gj = occupancy_geojson(&cells, &unit_bbox(), 0.1);
        assert_eq!(gj["type"], "FeatureCollection");
        let f = &gj["features"][0];
        assert_eq!(f["properties"]["channel"], 21);
        assert_eq!(f["properties"]["sample_count"], 1);
        let ring = f["geometry"]["coordinates"][0].as_array().unwrap();
        assert_eq!(ring.len(), 5);
        assert!((ring[0][0].as_f64().unwrap() - 0.2).abs() < 1e-12);
        assert!((ring[0][1].as_f64().unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn report_examples() {
        let plan = ChannelPlan::uhf_8mhz();
        let region = Region::BBox(unit_bbox());
        // channel 21 hot in 8 of 10 sweeps, channel 22 always quiet
        let recs: Vec<_> = (0..10)
            .map(|i| {
                let mut p = vec![-95.0; 160];
                if i < 8 {
                    p[3] = -50.0;
                }
                record(0.5, 0.5, i, 470_000_000, &p)
            })
            .collect();
        let params = ReportParams { threshold_dbm: -85.0, max_duty: 0.1, min_samples: 10 };
        let rep = white_space_report(&recs, &region, &plan, &params).unwrap();
        assert_eq!(rep.channels.len(), 40);
        assert_eq!(rep.free_channels().collect::<Vec<_>>(), vec![22]);
        assert_eq!(rep.channels[0].status, ChannelStatus::Occupied);
        assert_eq!(rep.channels[0].duty_cycle, 0.8);
        assert_eq!(rep.channels[5].status, ChannelStatus::Unknown);
        assert_eq!(rep.channels[5].sample_count, 0);

        let lenient = ReportParams { min_samples: 0, ..params };
        let rep = white_space_report(&recs, &region, &plan, &lenient).unwrap();
        assert_eq!(rep.channels[5].status, ChannelStatus::Unknown);

        let bad = ReportParams { max_duty: 1.5, ..params };
        assert!(white_space_report(&recs, &region, &plan, &bad).is_err());

        let table = white_space_report(&recs, &region, &plan, &params).unwrap().to_table();
        let mut lines = table.lines();
        assert_eq!(lines.next(), Some("channel,low_hz,high_hz,duty,samples,status"));
        assert_eq!(lines.next(), Some("21,470000000,478000000,0.800000,10,OCCUPIED"));
        assert_eq!(lines.next(), Some("22,478000000,486000000,0.000000,10,FREE"));
    }

    #[test]
    fn all_quiet_is_all_free() {
        let plan = ChannelPlan::ism_868();
        let recs: Vec<_> = (0..3).map(|i| record(0.5, 0.5, i, 868_000_000, &[-100.0; 6])).collect();
        let params = ReportParams { min_samples: 3, ..Default::default() };
        let rep = white_space_report(&recs, &Region::BBox(unit_bbox()), &plan, &params).unwrap();
        assert!(rep.channels.iter().all(|c| c.status == ChannelStatus::Free));
    }

    #[test]
    fn sweep_examples() {
        let plan = ChannelPlan::uhf_8mhz();
        let region = Region::BBox(unit_bbox());
        let recs = [record(0.5, 0.5, 0, 470_000_000, &[-90.0]), record(0.5, 0.5, 1, 470_000_000, &[-60.0])];
        let s = threshold_sweep(&recs, &region, &plan, &[-100.0, -70.0, -50.0]).unwrap();
        assert_eq!(s.curves.len(), 1);
        assert_eq!(s.curves[0].duties, vec![1.0, 0.5, 0.0]);
        assert!(threshold_sweep(&recs, &region, &plan, &[]).unwrap().curves.is_empty());
        assert_eq!(threshold_sweep(&recs, &region, &plan, &[-70.0, -70.0]), Err(AnalysisError::InvalidThresholds));
        let one = threshold_sweep(&recs, &region, &plan, &[-75.0]).unwrap();
        assert_eq!(one.curves[0].duties[0], duty_cycle(&[-90.0, -60.0], -75.0).unwrap());
    }

    #[test]
    fn trim_examples() {
        let recs: Vec<_> = (0..5).map(|i| record(0.5, 0.5, i * 10, 470_000_000, &[-90.0])).collect();
        assert_eq!(trim_time(&recs, 0, 1000).unwrap(), recs);
        assert!(trim_time(&recs, 1000, 2000).unwrap().is_empty());
        let w = trim_time(&recs, 10, 40).unwrap();
        assert_eq!(w.iter().map(|r| r.timestamp_ms).collect::<Vec<_>>(), vec![10, 20, 30]);
        assert_eq!(trim_time(&recs, 5, 5), Err(AnalysisError::InvalidWindow));
    }

    #[test]
    fn clip_examples() {
        let sq = Polygon::from_lon_lat(&[(0.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, 0.0), (0.0, 0.0)]).unwrap();
        let inside = record(0.5, 0.5, 0, 470_000_000, &[-90.0]);
        let outside = record(2.0, 2.0, 1, 470_000_000, &[-90.0]);
        let edge = record(0.5, 0.0, 2, 470_000_000, &[-90.0]);
        let kept = clip_to_polygon(&[inside.clone(), outside, edge.clone()], &sq);
        assert_eq!(kept, vec![inside, edge]);
        assert_eq!(clip_to_polygon(&kept, &sq), kept);
    }

    #[test]
    fn mw_mean_matches_direct_evaluation() {
        // oracle: 10*log10((10^-6 + 10^-7)/2) evaluated independently
        let oracle = 10.0 * ((1e-6 + 1e-7) / 2.0f64).log10();
        assert!((oracle - (-62.596)).abs() < 1e-3);
        let a = record(0.5, 0.5, 0, 470_000_000, &[-60.0]);
        let b = record(0.5, 0.5, 1, 470_000_000, &[-70.0]);
        let out = resample_by_distance(&[a, b], 10.0).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].power_dbm(0), (oracle * 10.0).round() / 10.0);
        assert_eq!(out[0].power_dbm(0), -62.6);
        assert_eq!(out[0].timestamp_ms, 0);
    }

    #[test]
    fn resample_examples() {
        let stationary: Vec<_> = (0..5).map(|i| record(0.5, 0.5, i, 470_000_000, &[-80.0])).collect();
        assert_eq!(resample_by_distance(&stationary, 50.0).unwrap().len(), 1);

        // 100 m along a meridian, in degrees of latitude
        let dlat = 100.0 / (std::f64::consts::PI * crate::geo::EARTH_RADIUS_M / 180.0);
        let moving: Vec<_> = (0..3).map(|i| record(i as f64 * dlat, 0.0, i, 470_000_000, &[-80.0])).collect();
        let d01 = haversine_m(&moving[0].location, &moving[1].location);
        let out = resample_by_distance(&moving, d01.min(haversine_m(&moving[1].location, &moving[2].location))).unwrap();
        assert_eq!(out, moving);

        assert_eq!(resample_by_distance(&[], 1.0), Err(AnalysisError::EmptyJourney));
        assert_eq!(resample_by_distance(&moving, 0.0), Err(AnalysisError::InvalidStep));
    }

    #[test]
    fn resample_breaks_on_span_change() {
        let a = record(0.5, 0.5, 0, 470_000_000, &[-80.0]);
        let b = record(0.5, 0.5, 1, 470_100_000, &[-80.0]);
        assert_eq!(resample_by_distance(&[a, b], 50.0).unwrap().len(), 2);
    }

    #[test]
    fn edits_chain() {
        let recs: Vec<_> = (0..6).map(|i| record(0.5, 0.5 + i as f64, i * 10, 470_000_000, &[-80.0])).collect();
        let ring = Polygon::rectangle(0.0, 0.0, 3.0, 1.0).unwrap();
        let ops = vec![
            JourneyEdit::TrimTime { t0_ms: 0, t1_ms: 50 },
            JourneyEdit::ClipPolygon { ring },
            JourneyEdit::ResampleDistance { step_m: 1.0 },
        ];
        let e = edit_journey(uuid::Uuid::nil(), &recs, &ops).unwrap();
        assert_eq!(e.records.len(), 3);
        let empty_ring = Polygon::rectangle(50.0, 50.0, 51.0, 51.0).unwrap();
        let e = edit_journey(
            uuid::Uuid::nil(),
            &recs,
            &[JourneyEdit::ClipPolygon { ring: empty_ring }, JourneyEdit::ResampleDistance { step_m: 1.0 }],
        )
        .unwrap();
        assert!(e.records.is_empty());
        let json = serde_json::to_string(&JourneyEdit::ResampleDistance { step_m: 50.0 }).unwrap();
        assert_eq!(json, r#"{"op":"ResampleDistance","step_m":50.0}"#);
    }
}
