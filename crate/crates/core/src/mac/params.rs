use serde::{Deserialize, Serialize};

use crate::engine::Time;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AccessCategory {
    #[serde(rename = "VO")]
    Voice,
    #[serde(rename = "VI")]
    Video,
    #[serde(rename = "BE")]
    BestEffort,
    #[serde(rename = "BK")]
    Background,
}

impl AccessCategory {
    /// Highest priority first.
    pub const ALL: [AccessCategory; 4] =
        [AccessCategory::Voice, AccessCategory::Video, AccessCategory::BestEffort, AccessCategory::Background];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            AccessCategory::Voice => "VO",
            AccessCategory::Video => "VI",
            AccessCategory::BestEffort => "BE",
            AccessCategory::Background => "BK",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdcaParams {
    pub aifs_slots: u32,
    pub cwmin: u32,
    pub cwmax: u32,
    pub txop_limit_us: Time,
}

impl EdcaParams {
    /// Plain DCF: DIFS, 15/1023, one exchange per access.
    pub const DCF: EdcaParams = EdcaParams { aifs_slots: 2, cwmin: 15, cwmax: 1023, txop_limit_us: 0 };

    pub fn edca_default(ac: AccessCategory) -> EdcaParams {
        match ac {
            AccessCategory::Voice => EdcaParams { aifs_slots: 2, cwmin: 3, cwmax: 7, txop_limit_us: 2_000 },
            AccessCategory::Video => EdcaParams { aifs_slots: 2, cwmin: 7, cwmax: 15, txop_limit_us: 4_000 },
            AccessCategory::BestEffort => EdcaParams { aifs_slots: 3, cwmin: 15, cwmax: 1023, txop_limit_us: 8_000 },
            AccessCategory::Background => EdcaParams { aifs_slots: 7, cwmin: 15, cwmax: 1023, txop_limit_us: 8_000 },
        }
    }

    pub fn aifs_us(&self, t: &Timings) -> Time {
        t.sifs_us + self.aifs_slots as Time * t.slot_us
    }
}

/// Four per-AC parameter sets indexed by [`AccessCategory::index`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdcaTable {
    #[serde(rename = "VO")]
    pub vo: EdcaParams,
    #[serde(rename = "VI")]
    pub vi: EdcaParams,
    #[serde(rename = "BE")]
    pub be: EdcaParams,
    #[serde(rename = "BK")]
    pub bk: EdcaParams,
}

impl EdcaTable {
    pub fn edca() -> Self {
        Self {
            vo: EdcaParams::edca_default(AccessCategory::Voice),
            vi: EdcaParams::edca_default(AccessCategory::Video),
            be: EdcaParams::edca_default(AccessCategory::BestEffort),
            bk: EdcaParams::edca_default(AccessCategory::Background),
        }
    }

    pub fn dcf() -> Self {
        Self { vo: EdcaParams::DCF, vi: EdcaParams::DCF, be: EdcaParams::DCF, bk: EdcaParams::DCF }
    }

    pub fn get(&self, ac: AccessCategory) -> EdcaParams {
        match ac {
            AccessCategory::Voice => self.vo,
            AccessCategory::Video => self.vi,
            AccessCategory::BestEffort => self.be,
            AccessCategory::Background => self.bk,
        }
    }

    pub fn get_mut(&mut self, ac: AccessCategory) -> &mut EdcaParams {
        match ac {
            AccessCategory::Voice => &mut self.vo,
            AccessCategory::Video => &mut self.vi,
            AccessCategory::BestEffort => &mut self.be,
            AccessCategory::Background => &mut self.bk,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timings {
    pub slot_us: Time,
    pub sifs_us: Time,
    pub retry_limit: u32,
}

impl Default for Timings {
    fn default() -> Self {
        Self { slot_us: 9, sifs_us: 16, retry_limit: 7 }
    }
}

impl Timings {
    pub fn difs_us(&self) -> Time {
        self.sifs_us + 2 * self.slot_us
    }

    /// Response timeout measured from the end of the soliciting frame.
    pub fn response_timeout(&self, response_airtime: Time) -> Time {
        self.sifs_us + response_airtime + self.slot_us
    }
}

/// What a node does when the access interval left before a reserved period is too short.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GapPolicy {
    /// Send as many complete exchanges as fit and give up the rest of the gap.
    #[default]
    Truncate,
    /// Start only if the whole planned burst fits.
    Defer,
}
