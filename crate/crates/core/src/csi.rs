//! Frame-level CSI domain types shared by every stage of the pipeline.
//!
//! A [`CsiFrame`] carries the 52 L-LTF subcarrier estimates of one received
//! packet, ordered by subcarrier index -26..-1 then +1..+26 (the DC and guard
//! bins are dropped before a frame is built).

use std::fmt;

use serde::{Deserialize, Serialize};

/// Number of L-LTF subcarriers carried by every frame.
pub const SUBCARRIERS: usize = 52;

/// Nominal transmit rate of the sender.
pub const FRAME_RATE_HZ: f64 = 100.0;

/// Nominal gap between consecutive frames at [`FRAME_RATE_HZ`].
pub const FRAME_INTERVAL_US: u64 = 10_000;

/// Distances of the five activity zone centers from the receiver.
pub const ZONE_DISTANCES_M: [f64; 5] = [1.8, 5.4, 9.4, 13.0, 16.6];

/// Raw in-phase / quadrature pair of one subcarrier, in ADC units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ComplexSample {
    pub i: i8,
    pub q: i8,
}

impl ComplexSample {
    pub const fn new(i: i8, q: i8) -> Self {
        Self { i, q }
    }

    pub fn amplitude(self) -> f64 {
        let i = f64::from(self.i);
        let q = f64::from(self.q);
        (i * i + q * q).sqrt()
    }
}

/// One received CSI packet.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CsiFrame {
    pub seq: u32,
    pub timestamp_us: u64,
    pub rssi_dbm: i8,
    pub subcarriers: Vec<ComplexSample>,
}

impl CsiFrame {
    pub fn new(seq: u32, timestamp_us: u64, rssi_dbm: i8, subcarriers: Vec<ComplexSample>) -> Self {
        Self {
            seq,
            timestamp_us,
            rssi_dbm,
            subcarriers,
        }
    }

    /// A frame whose subcarriers are all `(0, 0)`.
    pub fn zeroed(seq: u32, timestamp_us: u64, rssi_dbm: i8) -> Self {
        Self::new(seq, timestamp_us, rssi_dbm, vec![ComplexSample::default(); SUBCARRIERS])
    }
}

/// Per-subcarrier amplitudes `sqrt(i² + q²)` in double precision.
pub fn amplitude_vector(frame: &CsiFrame) -> Vec<f64> {
    frame.subcarriers.iter().map(|s| s.amplitude()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FrameError {
    #[error("frame carries {found} subcarriers, expected {SUBCARRIERS}")]
    SubcarrierCountMismatch { found: usize },
    #[error("timestamp {timestamp_us}us precedes predecessor at {previous_us}us")]
    TimestampRegression { previous_us: u64, timestamp_us: u64 },
}

/// Checks the invariants a frame must satisfy on its own.
pub fn validate_frame(frame: &CsiFrame) -> Result<(), FrameError> {
    if frame.subcarriers.len() != SUBCARRIERS {
        return Err(FrameError::SubcarrierCountMismatch {
            found: frame.subcarriers.len(),
        });
    }
    Ok(())
}

/// Checks `frame` on its own and against the frame received before it in the
/// same session.
pub fn validate_successor(previous: &CsiFrame, frame: &CsiFrame) -> Result<(), FrameError> {
    validate_frame(frame)?;
    if frame.timestamp_us < previous.timestamp_us {
        return Err(FrameError::TimestampRegression {
            previous_us: previous.timestamp_us,
            timestamp_us: frame.timestamp_us,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("unknown activity label code {0}")]
pub struct UnknownLabelCode(pub i64);

/// Activity classes, with their fixed integer codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum ActivityLabel {
    NoPresence,
    Walking,
    WalkingArmWaving,
}

impl ActivityLabel {
    pub const ALL: [ActivityLabel; 3] = [
        ActivityLabel::NoPresence,
        ActivityLabel::Walking,
        ActivityLabel::WalkingArmWaving,
    ];

    pub const COUNT: usize = 3;

    pub fn from_code(code: i64) -> Result<Self, UnknownLabelCode> {
        match code {
            0 => Ok(Self::NoPresence),
            1 => Ok(Self::Walking),
            2 => Ok(Self::WalkingArmWaving),
            other => Err(UnknownLabelCode(other)),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Self::NoPresence => 0,
            Self::Walking => 1,
            Self::WalkingArmWaving => 2,
        }
    }

    pub fn index(self) -> usize {
        usize::from(self.code())
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::NoPresence => "no presence",
            Self::Walking => "walking",
            Self::WalkingArmWaving => "walking + arm-waving",
        }
    }
}

impl TryFrom<u8> for ActivityLabel {
    type Error = UnknownLabelCode;

    fn try_from(code: u8) -> Result<Self, Self::Error> {
        Self::from_code(i64::from(code))
    }
}

impl From<ActivityLabel> for u8 {
    fn from(label: ActivityLabel) -> u8 {
        label.code()
    }
}

impl fmt::Display for ActivityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Los,
    Nlos,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Los => "LOS",
            Self::Nlos => "NLOS",
        })
    }
}

/// Antenna system of a transmitter/receiver pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AntennaKind {
    Biquad,
    /// Built-in PIFA backed by a plane reflector.
    PifaPlane,
    /// Bare built-in PIFA.
    Pifa,
}

impl fmt::Display for AntennaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Biquad => "biquad",
            Self::PifaPlane => "pifa_plane",
            Self::Pifa => "pifa",
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SessionMetaError {
    #[error("zone index {0} outside 1..=5")]
    ZoneOutOfRange(u8),
    #[error("zone {zone} lies at {expected} m, got {found} m")]
    ZoneDistanceMismatch { zone: u8, expected: f64, found: f64 },
}

/// Recording context of one capture session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub scenario: Scenario,
    pub antenna: AntennaKind,
    /// Activity zone 1..=5, `None` for no-presence recordings.
    pub zone_index: Option<u8>,
    pub distance_m: f64,
    /// Session start, microseconds since the Unix epoch.
    pub start_time_us: u64,
}

impl SessionMeta {
    /// Session in activity zone `zone` (1-based), distance taken from the zone table.
    pub fn in_zone(
        scenario: Scenario,
        antenna: AntennaKind,
        zone: u8,
        start_time_us: u64,
    ) -> Result<Self, SessionMetaError> {
        let distance_m = zone_distance_m(zone)?;
        Ok(Self {
            scenario,
            antenna,
            zone_index: Some(zone),
            distance_m,
            start_time_us,
        })
    }

    pub fn without_zone(scenario: Scenario, antenna: AntennaKind, distance_m: f64, start_time_us: u64) -> Self {
        Self {
            scenario,
            antenna,
            zone_index: None,
            distance_m,
            start_time_us,
        }
    }

    pub fn validate(&self) -> Result<(), SessionMetaError> {
        if let Some(zone) = self.zone_index {
            let expected = zone_distance_m(zone)?;
            if expected != self.distance_m {
                return Err(SessionMetaError::ZoneDistanceMismatch {
                    zone,
                    expected,
                    found: self.distance_m,
                });
            }
        }
        Ok(())
    }
}

pub fn zone_distance_m(zone: u8) -> Result<f64, SessionMetaError> {
    match zone {
        1..=5 => Ok(ZONE_DISTANCES_M[usize::from(zone - 1)]),
        other => Err(SessionMetaError::ZoneOutOfRange(other)),
    }
}
