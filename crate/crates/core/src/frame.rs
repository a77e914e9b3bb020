//! Frame model, plane classification, PHY rate table and airtime/NAV arithmetic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Time;

pub type NodeId = usize;
pub type ChannelId = usize;

/// Fixed PHY preamble, independent of rate.
pub const PREAMBLE_US: Time = 20;

pub const RTS_BYTES: u32 = 20;
pub const CTS_BYTES: u32 = 14;
pub const ACK_BYTES: u32 = 14;
pub const BLOCK_ACK_BYTES: u32 = 32;
pub const BEACON_BYTES: u32 = 100;
pub const RESERVATION_BYTES: u32 = 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("bandwidth {0} MHz is not one of 20/40/80/160")]
    BadBandwidth(u32),
    #[error("spatial stream count must be at least 1")]
    BadStreams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameType {
    #[serde(rename = "RTS")]
    Rts,
    #[serde(rename = "CTS")]
    Cts,
    #[serde(rename = "ACK")]
    Ack,
    BlockAck,
    Data,
    Beacon,
    ReservationReq,
    ReservationGrant,
}

impl FrameType {
    pub fn is_control(self) -> bool {
        !matches!(self, FrameType::Data | FrameType::Beacon)
    }

    /// Nominal on-air size; `Data` frames carry their payload size instead.
    pub fn fixed_size(self) -> Option<u32> {
        match self {
            FrameType::Rts => Some(RTS_BYTES),
            FrameType::Cts => Some(CTS_BYTES),
            FrameType::Ack => Some(ACK_BYTES),
            FrameType::BlockAck => Some(BLOCK_ACK_BYTES),
            FrameType::Beacon => Some(BEACON_BYTES),
            FrameType::ReservationReq | FrameType::ReservationGrant => Some(RESERVATION_BYTES),
            FrameType::Data => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Plane {
    #[serde(rename = "CP")]
    Control,
    #[serde(rename = "DP")]
    Data,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modulation {
    Basic,
    #[serde(rename = "QAM64")]
    Qam64,
    #[serde(rename = "QAM256")]
    Qam256,
    #[serde(rename = "QAM1024")]
    Qam1024,
    #[serde(rename = "QAM4096")]
    Qam4096,
}

impl Modulation {
    pub const QAM_LADDER: [Modulation; 4] =
        [Modulation::Qam64, Modulation::Qam256, Modulation::Qam1024, Modulation::Qam4096];

    /// Bits per constellation symbol; `None` for the basic (control) rate.
    pub fn bits_per_symbol(self) -> Option<u32> {
        match self {
            Modulation::Basic => None,
            Modulation::Qam64 => Some(6),
            Modulation::Qam256 => Some(8),
            Modulation::Qam1024 => Some(10),
            Modulation::Qam4096 => Some(12),
        }
    }

    /// Amendment that introduced the modulation.
    pub fn generation(self) -> &'static str {
        match self {
            Modulation::Basic => "legacy",
            Modulation::Qam64 => "802.11n",
            Modulation::Qam256 => "802.11ac",
            Modulation::Qam1024 => "802.11ax",
            Modulation::Qam4096 => "802.11be",
        }
    }

    /// 20 MHz single-stream rate in Mb/s: 54 for 64-QAM, linear in bits per symbol.
    pub fn base_rate_mbps(self) -> u32 {
        match self.bits_per_symbol() {
            None => 6,
            Some(bits) => 9 * bits,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Modulation::Basic => "Basic",
            Modulation::Qam64 => "QAM64",
            Modulation::Qam256 => "QAM256",
            Modulation::Qam1024 => "QAM1024",
            Modulation::Qam4096 => "QAM4096",
        }
    }

    pub fn parse(s: &str) -> Option<Modulation> {
        match s {
            "Basic" => Some(Modulation::Basic),
            "QAM64" => Some(Modulation::Qam64),
            "QAM256" => Some(Modulation::Qam256),
            "QAM1024" => Some(Modulation::Qam1024),
            "QAM4096" => Some(Modulation::Qam4096),
            _ => None,
        }
    }
}

pub const BANDWIDTHS_MHZ: [u32; 4] = [20, 40, 80, 160];

pub fn check_bandwidth(bandwidth_mhz: u32) -> Result<(), FrameError> {
    if BANDWIDTHS_MHZ.contains(&bandwidth_mhz) {
        Ok(())
    } else {
        Err(FrameError::BadBandwidth(bandwidth_mhz))
    }
}

pub fn phy_rate(mcs: Modulation, bandwidth_mhz: u32, nss: u32) -> Result<u32, FrameError> {
    check_bandwidth(bandwidth_mhz)?;
    if nss == 0 {
        return Err(FrameError::BadStreams);
    }
    Ok(mcs.base_rate_mbps() * (bandwidth_mhz / 20) * nss)
}

/// Preamble plus payload bits over the rate, rounded up to the next microsecond.
pub fn airtime(size_bytes: u32, mcs: Modulation, bandwidth_mhz: u32, nss: u32) -> Result<Time, FrameError> {
    let rate = phy_rate(mcs, bandwidth_mhz, nss)? as u64;
    let bits = size_bytes as u64 * 8;
    Ok(PREAMBLE_US + bits.div_ceil(rate))
}

/// Airtime of a fixed-size control frame at the basic rate on 20 MHz.
pub fn control_airtime(ftype: FrameType) -> Time {
    let size = ftype.fixed_size().unwrap_or(0);
    airtime(size, Modulation::Basic, 20, 1).expect("basic 20 MHz is always valid")
}

/// Duration field for a frame: every remaining frame of the exchange, each preceded by one SIFS.
pub fn nav_duration(remaining_airtimes: &[Time], sifs_us: Time) -> Time {
    remaining_airtimes.iter().map(|a| sifs_us + a).sum()
}

pub fn classify(ftype: FrameType) -> Plane {
    if ftype.is_control() {
        Plane::Control
    } else {
        Plane::Data
    }
}

/// Destination of a frame; beacons and interference bursts have none.
pub type Dest = Option<NodeId>;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub id: u64,
    pub ftype: FrameType,
    pub plane: Plane,
    pub size_bytes: u32,
    pub mcs: Modulation,
    pub bandwidth_mhz: u32,
    pub nss: u32,
    pub duration_field_us: Time,
    pub src: NodeId,
    pub dst: Dest,
    /// MSDU ids carried (Data) or covered (RTS, ReservationReq, BlockAck).
    pub msdus: Vec<u64>,
    /// Reservation the frame belongs to, or the grant it announces.
    pub reservation: Option<u64>,
    pub payload: Payload,
}

/// MAC-level content carried by reservation and block-ack frames.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Payload {
    #[default]
    None,
    Request { sizes: Vec<u32>, mcs: Modulation, nss: u32, max_width_mhz: u32 },
    /// `None` when the scheduler rejected the request.
    Grant { grant_id: Option<u64> },
    Acked(Vec<u64>),
}

impl Frame {
    /// A control frame: basic MCS, 20 MHz, one stream, plane derived from type.
    pub fn control(id: u64, ftype: FrameType, src: NodeId, dst: Dest, duration_field_us: Time) -> Self {
        Frame {
            id,
            ftype,
            plane: classify(ftype),
            size_bytes: ftype.fixed_size().unwrap_or(0),
            mcs: Modulation::Basic,
            bandwidth_mhz: 20,
            nss: 1,
            duration_field_us,
            src,
            dst,
            msdus: Vec::new(),
            reservation: None,
            payload: Payload::None,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn data(
        id: u64,
        src: NodeId,
        dst: Dest,
        size_bytes: u32,
        mcs: Modulation,
        bandwidth_mhz: u32,
        nss: u32,
        duration_field_us: Time,
    ) -> Self {
        Frame {
            id,
            ftype: FrameType::Data,
            plane: Plane::Data,
            size_bytes,
            mcs,
            bandwidth_mhz,
            nss,
            duration_field_us,
            src,
            dst,
            msdus: Vec::new(),
            reservation: None,
            payload: Payload::None,
        }
    }

    pub fn airtime(&self) -> Time {
        airtime(self.size_bytes, self.mcs, self.bandwidth_mhz, self.nss)
            .expect("frames are constructed with valid bandwidths")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_table() {
        assert_eq!(phy_rate(Modulation::Qam64, 20, 1).unwrap(), 54);
        assert_eq!(phy_rate(Modulation::Qam4096, 160, 1).unwrap(), 864);
        assert_eq!(phy_rate(Modulation::Basic, 20, 1).unwrap(), 6);
        assert_eq!(phy_rate(Modulation::Qam256, 20, 1).unwrap(), 72);
        assert_eq!(phy_rate(Modulation::Qam1024, 20, 1).unwrap(), 90);
        assert_eq!(phy_rate(Modulation::Qam64, 30, 1), Err(FrameError::BadBandwidth(30)));
        assert_eq!(phy_rate(Modulation::Qam64, 20, 0), Err(FrameError::BadStreams));
    }

    #[test]
    fn airtime_examples() {
        for m in [Modulation::Basic, Modulation::Qam64, Modulation::Qam4096] {
            assert_eq!(airtime(0, m, 80, 2).unwrap(), 20);
        }
        assert_eq!(airtime(1500, Modulation::Basic, 20, 1).unwrap(), 2020);
        assert_eq!(airtime(1500, Modulation::Qam4096, 160, 1).unwrap(), 34);
    }

    #[test]
    fn nav_examples() {
        let sifs = 16;
        let rts_nav = nav_duration(&[32, 2020, 32], sifs);
        assert_eq!(rts_nav, 2132);
        assert_eq!(nav_duration(&[], sifs), 0);
        let cts_nav = nav_duration(&[2020, 32], sifs);
        assert_eq!(cts_nav, rts_nav - sifs - 32);
    }

    #[test]
    fn plane_classification() {
        assert_eq!(classify(FrameType::Rts), Plane::Control);
        assert_eq!(classify(FrameType::Beacon), Plane::Data);
        assert_eq!(classify(FrameType::Data), Plane::Data);
        for t in [FrameType::Cts, FrameType::Ack, FrameType::BlockAck, FrameType::ReservationReq, FrameType::ReservationGrant] {
            assert_eq!(classify(t), Plane::Control);
        }
    }

    #[test]
    fn control_frames_at_basic_rate() {
        assert_eq!(control_airtime(FrameType::Rts), 47);
        assert_eq!(control_airtime(FrameType::Cts), 39);
        assert_eq!(control_airtime(FrameType::Ack), 39);
        let f = Frame::control(1, FrameType::Cts, 0, Some(1), 0);
        assert_eq!((f.mcs, f.bandwidth_mhz, f.plane), (Modulation::Basic, 20, Plane::Control));
    }
}
