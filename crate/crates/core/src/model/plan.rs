use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::FrequencySpan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("not in channel plan")]
pub struct NotInPlan;

/// Uniform channel raster: channel `i` covers
/// `[base + (i - first_index) * width, base + (i - first_index + 1) * width)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelPlan {
    pub name: String,
    pub base_hz: u64,
    pub channel_width_hz: u64,
    pub first_index: i32,
    pub count: u32,
}

impl ChannelPlan {
    /// 8 MHz UHF television raster, channels 21 to 60 (470 to 790 MHz).
    pub fn uhf_8mhz() -> ChannelPlan {
        ChannelPlan {
            name: "UHF-8MHz".into(),
            base_hz: 470_000_000,
            channel_width_hz: 8_000_000,
            first_index: 21,
            count: 40,
        }
    }

    /// 868.0 to 868.6 MHz SRD/ISM sub-band as six 100 kHz channels numbered from 0.
    pub fn ism_868() -> ChannelPlan {
        ChannelPlan {
            name: "ISM-868".into(),
            base_hz: 868_000_000,
            channel_width_hz: 100_000,
            first_index: 0,
            count: 6,
        }
    }

    pub fn builtin() -> Vec<ChannelPlan> {
        vec![ChannelPlan::uhf_8mhz(), ChannelPlan::ism_868()]
    }

    pub fn is_valid(&self) -> bool {
        !self.name.is_empty()
            && self.base_hz > 0
            && self.channel_width_hz > 0
            && self.count > 0
            && self
                .channel_width_hz
                .checked_mul(u64::from(self.count))
                .and_then(|w| w.checked_add(self.base_hz))
                .is_some()
    }

    pub fn end_hz(&self) -> u64 {
        self.base_hz + self.channel_width_hz * u64::from(self.count)
    }

    pub fn last_index(&self) -> i32 {
        self.first_index + self.count as i32 - 1
    }

    pub fn indices(&self) -> impl Iterator<Item = i32> {
        self.first_index..=self.last_index()
    }

    pub fn coverage(&self) -> FrequencySpan {
        FrequencySpan::new(self.base_hz, self.end_hz()).expect("valid plan")
    }

    pub fn channel_of(&self, freq_hz: u64) -> Result<i32, NotInPlan> {
        if freq_hz < self.base_hz || freq_hz >= self.end_hz() {
            return Err(NotInPlan);
        }
        let offset = (freq_hz - self.base_hz) / self.channel_width_hz;
        Ok(self.first_index + offset as i32)
    }

    pub fn channel_span(&self, index: i32) -> Result<FrequencySpan, NotInPlan> {
        if index < self.first_index || index > self.last_index() {
            return Err(NotInPlan);
        }
        let k = (index - self.first_index) as u64;
        let low = self.base_hz + k * self.channel_width_hz;
        Ok(FrequencySpan::new(low, low + self.channel_width_hz).expect("positive width"))
    }
}
