#![allow(dead_code)]

pub mod oracle;

use proptest::prelude::*;
use rfo_core::model::{DeviceKind, FrequencySpan, GeoPoint, SweepFields, SweepRecord, CANONICAL_BIN_HZ};

pub fn record(lat: f64, lon: f64, ts: i64, low_hz: u64, tenths: Vec<i16>) -> SweepRecord {
    let n = tenths.len() as u64;
    SweepFields {
        device_kind: DeviceKind::Rfe,
        device_serial: "GEN".into(),
        timestamp_ms: ts,
        location: GeoPoint { lat_deg: lat, lon_deg: lon, alt_m: None },
        span: FrequencySpan::new(low_hz, low_hz + n * CANONICAL_BIN_HZ).unwrap(),
        bin_width_hz: CANONICAL_BIN_HZ,
        power_tenths: tenths,
    }
    .seal()
    .unwrap()
}

pub fn arb_kind() -> impl Strategy<Value = DeviceKind> {
    prop_oneof![Just(DeviceKind::Rfe), Just(DeviceKind::Ascii32), Just(DeviceKind::Rftrack)]
}

pub fn arb_record() -> impl Strategy<Value = SweepRecord> {
    (
        arb_kind(),
        "[A-Z0-9-]{1,10}",
        0i64..4_000_000_000_000,
        -90.0f64..=90.0,
        -180.0f64..180.0,
        proptest::option::of(-100.0f64..5000.0),
        4_700u64..7_900,
        prop::collection::vec(-1500i16..=300, 1..24),
    )
        .prop_map(|(kind, serial, ts, lat, lon, alt, slot, tenths)| {
            let low = slot * CANONICAL_BIN_HZ;
            SweepFields {
                device_kind: kind,
                device_serial: serial,
                timestamp_ms: ts,
                location: GeoPoint { lat_deg: lat, lon_deg: lon, alt_m: alt },
                span: FrequencySpan::new(low, low + tenths.len() as u64 * CANONICAL_BIN_HZ).unwrap(),
                bin_width_hz: CANONICAL_BIN_HZ,
                power_tenths: tenths,
            }
            .seal()
            .unwrap()
        })
}
