//! Client-side analysis of a single sweep file, compiled to wasm for the demo
//! page in `www/`. Nothing is uploaded: the page hands the file text to these
//! functions and renders the strings they return.
//!
//! The `ops` functions are plain Rust so they can be tested natively; the
//! `#[wasm_bindgen]` exports only convert errors.

use wasm_bindgen::prelude::*;

pub mod ops {
    use std::collections::{BTreeMap, BTreeSet};

    use rfo_core::analysis::{resample_by_distance, threshold_sweep, white_space_report, ReportParams, WhiteSpaceReport};
    use rfo_core::geo::{BBox, Region};
    use rfo_core::ingest::{parse_upload, CalibrationProfile};
    use rfo_core::model::{ChannelPlan, SweepRecord};
    use serde_json::json;

    /// Parsed file: distinct records plus rejected and repeated line counts.
    pub struct Loaded {
        pub records: Vec<SweepRecord>,
        pub rejected: usize,
        pub duplicates: usize,
    }

    pub fn load(text: &str) -> Result<Loaded, String> {
        let (candidates, errors) = parse_upload(text.as_bytes(), &CalibrationProfile::default()).map_err(|e| e.to_string())?;
        let total = candidates.len();
        let mut seen = BTreeSet::new();
        let records: Vec<_> = candidates.into_iter().map(|(_, r)| r).filter(|r| seen.insert(r.id())).collect();
        Ok(Loaded { duplicates: total - records.len(), records, rejected: errors.len() })
    }

    pub fn plan(name: &str) -> Result<ChannelPlan, String> {
        ChannelPlan::builtin().into_iter().find(|p| p.name == name).ok_or_else(|| format!("unknown plan {name}"))
    }

    /// Smallest bbox around the records, or the whole world when empty.
    pub fn extent(records: &[SweepRecord]) -> BBox {
        let mut b = [f64::MAX, f64::MAX, f64::MIN, f64::MIN];
        for r in records {
            b[0] = b[0].min(r.location.lon_deg);
            b[1] = b[1].min(r.location.lat_deg);
            b[2] = b[2].max(r.location.lon_deg);
            b[3] = b[3].max(r.location.lat_deg);
        }
        BBox::new(b[0], b[1], b[2], b[3]).unwrap_or_else(|_| BBox::new(-180.0, -90.0, 180.0, 90.0).expect("world bbox"))
    }

    fn report(records: &[SweepRecord], plan_name: &str, params: &ReportParams) -> Result<WhiteSpaceReport, String> {
        let region = Region::BBox(extent(records));
        white_space_report(records, &region, &plan(plan_name)?, params).map_err(|e| e.to_string())
    }

    /// White-space table over the file's extent.
    pub fn white_space_table(text: &str, plan_name: &str, threshold_dbm: f64, max_duty: f64, min_samples: u64) -> Result<String, String> {
        let loaded = load(text)?;
        let params = ReportParams { threshold_dbm, max_duty, min_samples };
        Ok(report(&loaded.records, plan_name, &params)?.to_table())
    }

    /// Duty curves as JSON for comma-separated ascending thresholds.
    pub fn threshold_curves(text: &str, plan_name: &str, thresholds: &str) -> Result<String, String> {
        let ts = thresholds
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| t.trim().parse::<f64>().map_err(|_| format!("bad threshold {t}")))
            .collect::<Result<Vec<_>, _>>()?;
        let loaded = load(text)?;
        let region = Region::BBox(extent(&loaded.records));
        let sweep = threshold_sweep(&loaded.records, &region, &plan(plan_name)?, &ts).map_err(|e| e.to_string())?;
        Ok(serde_json::to_string(&sweep).expect("sweep serializes"))
    }

    /// Per-channel duty before and after distance resampling, as JSON.
    /// Each device serial is resampled as its own journey, in time order.
    pub fn speed_bias(text: &str, plan_name: &str, threshold_dbm: f64, step_m: f64) -> Result<String, String> {
        let loaded = load(text)?;
        let mut by_serial: BTreeMap<&str, Vec<SweepRecord>> = BTreeMap::new();
        for r in &loaded.records {
            by_serial.entry(&r.device_serial).or_default().push(r.clone());
        }
        let mut resampled = Vec::new();
        for journey in by_serial.values_mut() {
            journey.sort_by_key(|r| r.timestamp_ms);
            resampled.extend(resample_by_distance(journey, step_m).map_err(|e| e.to_string())?);
        }
        let params = ReportParams { threshold_dbm, max_duty: 1.0, min_samples: 0 };
        let before = report(&loaded.records, plan_name, &params)?;
        let after = report(&resampled, plan_name, &params)?;
        let channels: Vec<_> = before
            .channels
            .iter()
            .zip(&after.channels)
            .filter(|(b, _)| b.sample_count > 0)
            .map(|(b, a)| {
                json!({
                    "channel": b.channel,
                    "before": { "duty": b.duty_cycle, "samples": b.sample_count },
                    "after": { "duty": a.duty_cycle, "samples": a.sample_count },
                })
            })
            .collect();
        Ok(json!({
            "records": loaded.records.len(),
            "resampled": resampled.len(),
            "rejected_lines": loaded.rejected,
            "duplicate_lines": loaded.duplicates,
            "channels": channels,
        })
        .to_string())
    }
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = whiteSpaceTable)]
pub fn white_space_table(text: &str, plan: &str, threshold_dbm: f64, max_duty: f64, min_samples: u32) -> Result<String, JsError> {
    js(ops::white_space_table(text, plan, threshold_dbm, max_duty, u64::from(min_samples)))
}

#[wasm_bindgen(js_name = thresholdCurves)]
pub fn threshold_curves(text: &str, plan: &str, thresholds: &str) -> Result<String, JsError> {
    js(ops::threshold_curves(text, plan, thresholds))
}

#[wasm_bindgen(js_name = speedBias)]
pub fn speed_bias(text: &str, plan: &str, threshold_dbm: f64, step_m: f64) -> Result<String, JsError> {
    js(ops::speed_bias(text, plan, threshold_dbm, step_m))
}
