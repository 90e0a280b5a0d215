//! Brute-force reference implementations and seeded instance generators.
//! Deliberately naive: nested loops, integer frequency arithmetic, no maps
//! keyed by grid cell.

use rfo_core::geo::BBox;
use rfo_core::model::{ChannelPlan, DeviceKind, FrequencySpan, GeoPoint, SweepFields, SweepRecord, CANONICAL_BIN_HZ};
use rfo_core::sim::SplitMix64;

#[derive(Debug)]
pub struct Instance {
    pub records: Vec<SweepRecord>,
    pub bbox: BBox,
    pub cell_deg: f64,
    pub plan: ChannelPlan,
    pub threshold_dbm: f64,
}

/// (cell_x, cell_y, channel, occupied, total), sorted.
pub type OracleCell = (i64, i64, i32, u64, u64);

fn pick_plan(rng: &mut SplitMix64) -> ChannelPlan {
    match rng.below(3) {
        0 => ChannelPlan::uhf_8mhz(),
        1 => ChannelPlan::ism_868(),
        _ => ChannelPlan {
            name: "RAND".into(),
            base_hz: (4_000 + rng.below(2_000)) * CANONICAL_BIN_HZ,
            channel_width_hz: (1 + rng.below(15)) * CANONICAL_BIN_HZ,
            first_index: rng.below(50) as i32 - 10,
            count: 1 + rng.below(12) as u32,
        },
    }
}

pub fn random_instance(rng: &mut SplitMix64, max_records: u64) -> Instance {
    let plan = pick_plan(rng);
    let n = rng.below(max_records + 1);
    let lo_slot = plan.base_hz / CANONICAL_BIN_HZ;
    let hi_slot = plan.end_hz() / CANONICAL_BIN_HZ;
    let records = (0..n)
        .map(|i| {
            let bins = 1 + rng.below(40);
            // spans may start before the plan and run past its end
            let start = lo_slot.saturating_sub(20) + rng.below(hi_slot - lo_slot + 40);
            let tenths = (0..bins).map(|_| -1200 + rng.below(900) as i16).collect();
            SweepFields {
                device_kind: DeviceKind::Rfe,
                device_serial: "ORACLE".into(),
                timestamp_ms: i as i64,
                location: GeoPoint { lat_deg: 50.0 + rng.next_f64() * 2.0, lon_deg: rng.next_f64() * 2.0, alt_m: None },
                span: FrequencySpan::new(start * CANONICAL_BIN_HZ, (start + bins) * CANONICAL_BIN_HZ).unwrap(),
                bin_width_hz: CANONICAL_BIN_HZ,
                power_tenths: tenths,
            }
            .seal()
            .unwrap()
        })
        .collect();
    let min_lon = rng.next_f64();
    let min_lat = 50.0 + rng.next_f64();
    let bbox = BBox::new(min_lon, min_lat, min_lon + 0.2 + rng.next_f64(), min_lat + 0.2 + rng.next_f64()).unwrap();
    let cell_deg = [0.05, 0.1, 0.25, 0.3, 1.0][rng.below(5) as usize];
    let threshold_dbm = -110.0 + rng.below(800) as f64 / 10.0;
    Instance { records, bbox, cell_deg, plan, threshold_dbm }
}

/// Max power (tenths) over the record's bins whose centers fall in `channel`.
pub fn oracle_channel_max(rec: &SweepRecord, plan: &ChannelPlan, channel: i32) -> Option<i16> {
    let lo = plan.base_hz + (channel - plan.first_index) as u64 * plan.channel_width_hz;
    let hi = lo + plan.channel_width_hz;
    let mut best: Option<i16> = None;
    for (b, &t) in rec.power_tenths.iter().enumerate() {
        let center = rec.span.low_hz() + b as u64 * rec.bin_width_hz + rec.bin_width_hz / 2;
        if center >= lo && center < hi {
            best = Some(best.map_or(t, |m| m.max(t)));
        }
    }
    best
}

fn occupied(tenths: i16, threshold_dbm: f64) -> bool {
    f64::from(tenths) / 10.0 >= threshold_dbm
}

pub fn oracle_grid(inst: &Instance) -> Vec<OracleCell> {
    let b = &inst.bbox;
    let mut out = Vec::new();
    let mut cells: Vec<(i64, i64)> = Vec::new();
    for r in &inst.records {
        let p = &r.location;
        if p.lon_deg >= b.min_lon && p.lon_deg <= b.max_lon && p.lat_deg >= b.min_lat && p.lat_deg <= b.max_lat {
            let c = (
                ((p.lon_deg - b.min_lon) / inst.cell_deg).floor() as i64,
                ((p.lat_deg - b.min_lat) / inst.cell_deg).floor() as i64,
            );
            if !cells.contains(&c) {
                cells.push(c);
            }
        }
    }
    cells.sort();
    for &(cx, cy) in &cells {
        for ch in inst.plan.first_index..inst.plan.first_index + inst.plan.count as i32 {
            let (mut occ, mut total) = (0, 0);
            for r in &inst.records {
                let p = &r.location;
                let inside = p.lon_deg >= b.min_lon && p.lon_deg <= b.max_lon && p.lat_deg >= b.min_lat && p.lat_deg <= b.max_lat;
                if !inside
                    || ((p.lon_deg - b.min_lon) / inst.cell_deg).floor() as i64 != cx
                    || ((p.lat_deg - b.min_lat) / inst.cell_deg).floor() as i64 != cy
                {
                    continue;
                }
                if let Some(m) = oracle_channel_max(r, &inst.plan, ch) {
                    total += 1;
                    if occupied(m, inst.threshold_dbm) {
                        occ += 1;
                    }
                }
            }
            if total > 0 {
                out.push((cx, cy, ch, occ, total));
            }
        }
    }
    out
}

/// (channel, occupied, total, status) for every plan channel over records in the bbox.
pub fn oracle_white_space(inst: &Instance, max_duty: f64, min_samples: u64) -> Vec<(i32, u64, u64, &'static str)> {
    let b = &inst.bbox;
    let mut out = Vec::new();
    for ch in inst.plan.first_index..inst.plan.first_index + inst.plan.count as i32 {
        let (mut occ, mut total) = (0u64, 0u64);
        for r in &inst.records {
            let p = &r.location;
            if !(p.lon_deg >= b.min_lon && p.lon_deg <= b.max_lon && p.lat_deg >= b.min_lat && p.lat_deg <= b.max_lat) {
                continue;
            }
            if let Some(m) = oracle_channel_max(r, &inst.plan, ch) {
                total += 1;
                if occupied(m, inst.threshold_dbm) {
                    occ += 1;
                }
            }
        }
        let status = if total == 0 || total < min_samples {
            "UNKNOWN"
        } else if occ as f64 / total as f64 <= max_duty {
            "FREE"
        } else {
            "OCCUPIED"
        };
        out.push((ch, occ, total, status));
    }
    out
}

/// Same segmentation rule as the resampler, written as an explicit scan over
/// index ranges; returns the `[start, end)` ranges of each run.
pub fn oracle_runs(records: &[SweepRecord], step_m: f64) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = 0;
    while start < records.len() {
        let mut end = start + 1;
        let mut dist = 0.0;
        while end < records.len() {
            let d = rfo_core::geo::haversine_m(&records[end - 1].location, &records[end].location);
            if dist + d >= step_m || records[end].span != records[start].span {
                break;
            }
            dist += d;
            end += 1;
        }
        runs.push((start, end));
        start = end;
    }
    runs
}

/// 100 sweeps parked at one point where channel 21 is busy, then 10 sweeps
/// 100 m apart over free spectrum, all with an 80-bin span covering channel 21.
pub fn speed_bias_journey() -> Vec<SweepRecord> {
    let step_deg = 100.0 / (rfo_core::geo::EARTH_RADIUS_M * std::f64::consts::PI / 180.0);
    let sweep = |ts: i64, lon: f64, tenths: i16| {
        SweepFields {
            device_kind: DeviceKind::Rftrack,
            device_serial: "CAR-1".into(),
            timestamp_ms: ts,
            location: GeoPoint { lat_deg: 0.0, lon_deg: lon, alt_m: None },
            span: FrequencySpan::new(470_000_000, 478_000_000).unwrap(),
            bin_width_hz: CANONICAL_BIN_HZ,
            power_tenths: vec![tenths; 80],
        }
        .seal()
        .unwrap()
    };
    let mut out: Vec<_> = (0..100).map(|i| sweep(i * 1000, 0.0, -500)).collect();
    out.extend((1..=10).map(|k| sweep(100_000 + k * 1000, k as f64 * step_deg, -1000)));
    out
}

/// Ten claims forming four conflict components plus isolated claims, with the
/// hand-derived earliest-wins outcome (ties broken by the smaller claim id).
pub fn ten_claim_fixture() -> (Vec<rfo_core::sync::Claim>, Vec<(u128, rfo_core::sync::ClaimState)>) {
    use rfo_core::model::Polygon;
    use rfo_core::sync::{Actor, Claim, ClaimState, NodeRole};
    let mk = |id: u128, submitted: i64, x: f64, low_mhz: u64, t0: i64| {
        Claim::submit(
            uuid::Uuid::from_u128(id),
            &format!("acct-{id}"),
            FrequencySpan::new(low_mhz * 1_000_000, (low_mhz + 8) * 1_000_000).unwrap(),
            Polygon::rectangle(x, 10.0, x + 1.0, 11.0).unwrap(),
            window(t0),
            Actor { node_id: "r1", role: NodeRole::Regional },
            submitted,
        )
        .unwrap()
    };
    let claims = vec![
        mk(1, 5, 0.0, 470, 0),
        mk(2, 5, 0.5, 470, 0),
        mk(3, 7, 5.0, 470, 0),
        mk(4, 7, 5.5, 470, 0),
        mk(5, 3, 6.2, 470, 0),
        mk(6, 1, 10.0, 470, 0),
        mk(7, 0, 10.0, 478, 0),
        mk(8, 4, 20.0, 470, 0),
        mk(9, 2, 20.0, 470, 100),
        mk(10, 9, 30.0, 470, 0),
    ];
    use ClaimState::{Denied as D, Granted as G};
    let expected = vec![(1, G), (2, D), (3, D), (4, D), (5, G), (6, G), (7, G), (8, G), (9, G), (10, G)];
    (claims, expected)
}

pub fn window(t0: i64) -> rfo_core::sync::TimeWindow {
    rfo_core::sync::TimeWindow { t0_ms: t0, t1_ms: t0 + 100 }
}
