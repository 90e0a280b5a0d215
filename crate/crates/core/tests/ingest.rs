mod common;

use proptest::prelude::*;
use rfo_core::ingest::{
    ingest_file, new_campaign, normalize_sweep, parse_sweep_file, CalibrationProfile, IngestContext, IngestError,
    LineErrorReason, RawSweep,
};
use rfo_core::model::{parse_zrf_line, DeviceKind, GeoPoint};
use rfo_core::sync::{NodeRole, ReplicaState, StateEntry};
use uuid::Uuid;

fn rfe_file(n: usize, malformed: &[usize]) -> String {
    let mut s = String::from("#RFE,470000000,100000,4\n#SER,WH-1\n");
    for i in 0..n {
        if malformed.contains(&i) {
            s.push_str("2017-01-01T00:00:00Z,52.0,0.1,-90.0\n");
        } else {
            s.push_str(&format!("2017-01-01T00:{:02}:{:02}Z,52.{i:04},0.1,-90.0,-60.5,-95.0,-71.2\n", i / 60, i % 60));
        }
    }
    s
}

fn state_with_campaign() -> (ReplicaState, Uuid) {
    let mut st = ReplicaState::new("node-a", NodeRole::Regional);
    let cid = Uuid::from_u128(42);
    st.apply(StateEntry::CampaignMeta(new_campaign(cid, "rural", "alice", "node-a", 1))).unwrap();
    (st, cid)
}

fn ctx<'a>(cal: &'a CalibrationProfile) -> IngestContext<'a> {
    IngestContext { collector: "alice", calibration: cal, now_ms: 10 }
}

#[test]
fn ingest_is_idempotent() {
    let (mut st, cid) = state_with_campaign();
    let cal = CalibrationProfile::default();
    let file = rfe_file(10, &[]);
    let first = ingest_file(&mut st, file.as_bytes(), cid, &ctx(&cal)).unwrap();
    assert_eq!((first.report.accepted, first.report.duplicates), (10, 0));
    let snapshot = st.clone();
    let second = ingest_file(&mut st, file.as_bytes(), cid, &ctx(&cal)).unwrap();
    assert_eq!((second.report.accepted, second.report.duplicates), (0, 10));
    assert!(second.entries.is_empty());
    assert_eq!(st, snapshot);

    let journey = st.journeys.values().next().unwrap();
    assert_eq!(journey.len(), 10);
    assert_eq!(journey.device_serial, "WH-1");
    assert!(st.campaigns[&cid].journeys.contains(&journey.journey_id));
}

#[test]
fn ingest_reports_malformed_lines() {
    let (mut st, cid) = state_with_campaign();
    let cal = CalibrationProfile::default();
    let mut file = rfe_file(10, &[]);
    file.push_str("2017-01-01T01:00:00Z,52.0,0.1,-90.0\nnot-a-date,52.0,0.1,-90.0,-60.5,-95.0,-71.2\n");
    let out = ingest_file(&mut st, file.as_bytes(), cid, &ctx(&cal)).unwrap();
    assert_eq!(out.report.accepted, 10);
    assert_eq!(out.report.errors.len(), 2);
    assert_eq!(out.report.errors[0].reason, LineErrorReason::BinCountMismatch);
    assert_eq!(out.report.errors[1].reason, LineErrorReason::BadTimestamp);
}

#[test]
fn ingest_errors() {
    let (mut st, _) = state_with_campaign();
    let cal = CalibrationProfile::default();
    assert_eq!(ingest_file(&mut st, b"GARBAGE", Uuid::from_u128(42), &ctx(&cal)).unwrap_err(), IngestError::UnknownFormat);
    let err = ingest_file(&mut st, rfe_file(1, &[]).as_bytes(), Uuid::from_u128(7), &ctx(&cal)).unwrap_err();
    assert_eq!(err, IngestError::CampaignNotFound(Uuid::from_u128(7)));
}

#[test]
fn same_sweep_in_two_campaigns_shares_record_id() {
    let (mut st, cid) = state_with_campaign();
    let other = Uuid::from_u128(43);
    st.apply(StateEntry::CampaignMeta(new_campaign(other, "urban", "alice", "node-a", 1))).unwrap();
    let cal = CalibrationProfile::default();
    let file = rfe_file(3, &[]);
    ingest_file(&mut st, file.as_bytes(), cid, &ctx(&cal)).unwrap();
    let again = ingest_file(&mut st, file.as_bytes(), other, &ctx(&cal)).unwrap();
    assert_eq!(again.report.duplicates, 3);
    assert_eq!(st.records.len(), 3);
    let a: Vec<_> = st.campaign_records(cid).iter().map(|r| r.id()).collect();
    let b: Vec<_> = st.campaign_records(other).iter().map(|r| r.id()).collect();
    assert_eq!(a, b);
}

#[test]
fn normalization_is_order_insensitive() {
    let file = rfe_file(20, &[]);
    let parsed = parse_sweep_file(DeviceKind::Rfe, file.as_bytes());
    let cal = CalibrationProfile::default();
    let forward: std::collections::BTreeSet<_> = parsed.sweeps.iter().map(|r| normalize_sweep(r, &cal).unwrap().id()).collect();
    let backward: std::collections::BTreeSet<_> =
        parsed.sweeps.iter().rev().map(|r| normalize_sweep(r, &cal).unwrap().id()).collect();
    assert_eq!(forward, backward);
}

fn arb_raw() -> impl Strategy<Value = RawSweep> {
    (1u64..=40, 4_700_000u64..4_710_000, prop::collection::vec(-1200i32..=-200, 1..40)).prop_map(|(step_k, start_k, p)| RawSweep {
        device_kind: DeviceKind::Rftrack,
        device_serial: "P".into(),
        timestamp_ms: 1,
        location: GeoPoint::new(1.0, 2.0).unwrap(),
        start_hz: start_k * 100,
        step_hz: step_k * 10_000,
        powers_dbm: p.into_iter().map(|t| f64::from(t) / 10.0).collect(),
        line: 1,
    })
}

proptest! {
    #[test]
    fn zrf_round_trip(rec in common::arb_record()) {
        let line = rec.to_zrf_line();
        let back = parse_zrf_line(&line).unwrap();
        prop_assert_eq!(back.id(), rec.id());
        prop_assert_eq!(&back, &rec);
        prop_assert_eq!(back.to_zrf_line(), line);
    }

    #[test]
    fn calibration_is_linear(raw in arb_raw(), a in -100i32..=100, b in -100i32..=100) {
        let pa = CalibrationProfile::default().with(DeviceKind::Rftrack, f64::from(a) / 10.0).unwrap();
        let pb = CalibrationProfile::default().with(DeviceKind::Rftrack, f64::from(b) / 10.0).unwrap();
        match (normalize_sweep(&raw, &pa), normalize_sweep(&raw, &pb)) {
            (Ok(ra), Ok(rb)) => {
                prop_assert_eq!(ra.span, rb.span);
                for (x, y) in ra.power_tenths.iter().zip(&rb.power_tenths) {
                    prop_assert_eq!(i32::from(*x) + (b - a), i32::from(*y));
                }
            }
            (Err(ea), Err(eb)) => prop_assert_eq!(ea, eb),
            (x, y) => prop_assert!(false, "{:?} vs {:?}", x, y),
        }
    }

    #[test]
    fn normalized_span_is_canonical(raw in arb_raw()) {
        if let Ok(rec) = normalize_sweep(&raw, &CalibrationProfile::default()) {
            prop_assert_eq!(rec.span.low_hz() % 100_000, 0);
            prop_assert!(rec.bin_center_hz(0) >= raw.start_hz);
            prop_assert!(rec.bin_center_hz(rec.bin_count() - 1) < raw.end_hz());
        }
    }
}

#[test]
fn zrf_export_reingests_verbatim() {
    let (mut st, cid) = state_with_campaign();
    let cal = CalibrationProfile::default().with(DeviceKind::Rfe, -2.5).unwrap();
    ingest_file(&mut st, rfe_file(12, &[3]).as_bytes(), cid, &ctx(&cal)).unwrap();
    let export: String = st.records.values().map(|r| r.to_zrf_line() + "\n").collect();

    let (mut fresh, cid2) = state_with_campaign();
    // calibration must not be applied a second time
    let out = ingest_file(&mut fresh, export.as_bytes(), cid2, &ctx(&cal)).unwrap();
    assert_eq!(out.report.accepted, 11);
    assert!(out.report.errors.is_empty());
    assert_eq!(fresh.records.keys().collect::<Vec<_>>(), st.records.keys().collect::<Vec<_>>());

    let tampered = export.replacen("-92.5", "-92.4", 1);
    let (mut other, cid3) = state_with_campaign();
    let out = ingest_file(&mut other, tampered.as_bytes(), cid3, &ctx(&cal)).unwrap();
    assert_eq!(out.report.accepted, 10);
    assert_eq!(out.report.errors[0].reason, LineErrorReason::RecordIdMismatch);
}
