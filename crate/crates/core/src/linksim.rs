//! Link budget and CSI stream simulator.
//!
//! Received power follows a log-distance path-loss model with an additive
//! loss per wall crossed:
//!
//! ```text
//! rssi(d) = P_tx + G_tx(0) + G_rx(0) - [L_ref + 10·n·log10(d / 1 m) + L_wall·walls(d)] + X_σ
//! ```
//!
//! The calibrated presets fit `L_ref` and `L_wall` to measured 1 m / 18 m
//! anchors with `n` frozen at 2.
//!
//! # Scenario file
//!
//! Scenario configs are TOML documents:
//!
//! ```toml
//! name = "nlos-biquad"
//! scenario = "nlos"              # "los" | "nlos"
//! antenna = "biquad"             # "biquad" | "pifa_plane" | "pifa"
//! tx_power_dbm = 20.0
//! frequency_ghz = 2.4
//! path_loss_exponent = 2.0
//! reference_loss_db = 75.0       # loss at 1 m, hardware offsets included
//! shadowing_sigma_db = 1.5       # per-frame Gaussian RSSI spread
//! link_distance_m = 18.0         # transmitter-receiver spacing for synthesis
//! noise_floor_dbm = -92.0
//!
//! [tx_antenna]
//! peak_gain_dbi = 11.0
//! beamwidth_deg = 70.0           # omit for an omnidirectional antenna
//! front_back_ratio_db = 20.0
//!
//! [rx_antenna]                   # same fields as tx_antenna
//!
//! [walls]
//! wall_positions_m = [3.6, 7.4, 11.2, 14.8]   # empty for LOS
//! per_wall_loss_db = 2.47
//! ```

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::csi::{
    zone_distance_m, ActivityLabel, AntennaKind, ComplexSample, CsiFrame, Scenario, SessionMeta, SessionMetaError,
    FRAME_INTERVAL_US, FRAME_RATE_HZ, SUBCARRIERS,
};
use crate::ingest::{RssiSummary, RSSI_SURVEY_FRAMES};

/// Length of the surveyed hallway.
pub const HALLWAY_LENGTH_M: f64 = 18.0;

/// Interior walls between the five rooms, midway between zone centers.
pub const DEFAULT_WALL_POSITIONS_M: [f64; 4] = [3.6, 7.4, 11.2, 14.8];

/// Shortest distance the path-loss model accepts.
pub const MIN_DISTANCE_M: f64 = 0.1;

/// Measured NLOS RSSI at 1 m and 18 m for the three antenna systems.
pub const NLOS_BIQUAD_ANCHORS: [Anchor; 2] = [Anchor::new(1.0, -33.0), Anchor::new(18.0, -68.0)];
pub const NLOS_PIFA_PLANE_ANCHORS: [Anchor; 2] = [Anchor::new(1.0, -38.0), Anchor::new(18.0, -72.0)];
pub const NLOS_PIFA_ANCHORS: [Anchor; 2] = [Anchor::new(1.0, -55.0), Anchor::new(18.0, -84.0)];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("wall positions must be strictly increasing inside (0, {HALLWAY_LENGTH_M}) m")]
    WallPositions,
    #[error("a LOS scenario cannot contain walls")]
    WallsInLos,
    #[error("{0} must be positive and finite")]
    NonPositive(&'static str),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("cannot read scenario file: {0}")]
    Io(String),
    #[error("invalid scenario file: {0}")]
    Parse(String),
}

/// Antenna radiation pattern: omnidirectional, or `cos^m` with an exact
/// -3 dB point at half the beamwidth and a floor set by the front-back ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AntennaModel {
    pub peak_gain_dbi: f64,
    /// `None` for an omnidirectional antenna.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beamwidth_deg: Option<f64>,
    pub front_back_ratio_db: f64,
}

impl AntennaModel {
    pub const fn omni(peak_gain_dbi: f64) -> Self {
        Self {
            peak_gain_dbi,
            beamwidth_deg: None,
            front_back_ratio_db: 0.0,
        }
    }

    pub const fn directional(peak_gain_dbi: f64, beamwidth_deg: f64, front_back_ratio_db: f64) -> Self {
        Self {
            peak_gain_dbi,
            beamwidth_deg: Some(beamwidth_deg),
            front_back_ratio_db,
        }
    }

    /// Exponent `m` with `cos(beamwidth/2)^m = 1/2`; `None` when omni.
    pub fn pattern_exponent(&self) -> Option<f64> {
        self.beamwidth_deg
            .map(|bw| 0.5f64.ln() / (bw / 2.0).to_radians().cos().ln())
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if !self.peak_gain_dbi.is_finite() || !self.front_back_ratio_db.is_finite() || self.front_back_ratio_db < 0.0 {
            return Err(ConfigError::NonPositive("antenna gain figures"));
        }
        match self.beamwidth_deg {
            Some(bw) if !(bw > 0.0 && bw < 180.0) => Err(ConfigError::NonPositive("beamwidth_deg")),
            _ => Ok(()),
        }
    }
}

/// Gain toward `theta_deg` off boresight.
pub fn antenna_gain_db(antenna: &AntennaModel, theta_deg: f64) -> f64 {
    let Some(m) = antenna.pattern_exponent() else {
        return antenna.peak_gain_dbi;
    };
    let c = theta_deg.to_radians().cos();
    let relative = if c > 0.0 {
        10.0 * m * c.log10()
    } else {
        f64::NEG_INFINITY
    };
    antenna.peak_gain_dbi + relative.max(-antenna.front_back_ratio_db)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallLayout {
    /// Distances from the receiver, strictly increasing.
    pub wall_positions_m: Vec<f64>,
    pub per_wall_loss_db: f64,
}

impl WallLayout {
    pub fn none() -> Self {
        Self {
            wall_positions_m: Vec::new(),
            per_wall_loss_db: 0.0,
        }
    }

    pub fn rooms(per_wall_loss_db: f64) -> Self {
        Self {
            wall_positions_m: DEFAULT_WALL_POSITIONS_M.to_vec(),
            per_wall_loss_db,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let in_range = self.wall_positions_m.iter().all(|&p| p > 0.0 && p < HALLWAY_LENGTH_M);
        let increasing = self.wall_positions_m.windows(2).all(|w| w[0] < w[1]);
        if !in_range || !increasing {
            return Err(ConfigError::WallPositions);
        }
        Ok(())
    }
}

/// Walls strictly closer than `d`; a wall exactly at `d` is not yet crossed.
pub fn wall_count(layout: &WallLayout, d: f64) -> usize {
    layout.wall_positions_m.iter().filter(|&&p| p < d).count()
}

fn default_frequency() -> f64 {
    2.4
}

fn default_link_distance() -> f64 {
    HALLWAY_LENGTH_M
}

fn default_noise_floor() -> f64 {
    -92.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub scenario: Scenario,
    pub antenna: AntennaKind,
    pub tx_antenna: AntennaModel,
    pub rx_antenna: AntennaModel,
    pub tx_power_dbm: f64,
    #[serde(default = "default_frequency")]
    pub frequency_ghz: f64,
    pub path_loss_exponent: f64,
    pub reference_loss_db: f64,
    pub shadowing_sigma_db: f64,
    #[serde(default = "default_link_distance")]
    pub link_distance_m: f64,
    #[serde(default = "default_noise_floor")]
    pub noise_floor_dbm: f64,
    pub walls: WallLayout,
}

/// Names accepted by [`ScenarioConfig::preset`].
pub const PRESET_NAMES: [&str; 6] = [
    "nlos-biquad",
    "nlos-pifa-plane",
    "nlos-pifa",
    "los-biquad",
    "los-pifa-plane",
    "los-pifa",
];

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.walls.validate()?;
        if self.scenario == Scenario::Los && !self.walls.wall_positions_m.is_empty() {
            return Err(ConfigError::WallsInLos);
        }
        self.tx_antenna.validate()?;
        self.rx_antenna.validate()?;
        let positive = [
            (self.frequency_ghz, "frequency_ghz"),
            (self.path_loss_exponent, "path_loss_exponent"),
            (self.link_distance_m, "link_distance_m"),
        ];
        for (v, name) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::NonPositive(name));
            }
        }
        if !(self.shadowing_sigma_db.is_finite() && self.shadowing_sigma_db >= 0.0) {
            return Err(ConfigError::NonPositive("shadowing_sigma_db"));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Uncalibrated template for an antenna system; `reference_loss_db` and
    /// the wall loss are placeholders until [`calibrate`] fills them in.
    pub fn template(scenario: Scenario, antenna: AntennaKind) -> Self {
        let model = match antenna {
            AntennaKind::Biquad => AntennaModel::directional(11.0, 70.0, 20.0),
            // The plane reflector adds roughly 6 dB toward boresight.
            AntennaKind::PifaPlane => AntennaModel::directional(8.0, 120.0, 15.0),
            AntennaKind::Pifa => AntennaModel::omni(2.0),
        };
        let walls = match scenario {
            Scenario::Los => WallLayout::none(),
            Scenario::Nlos => WallLayout::rooms(0.0),
        };
        let tag = match scenario {
            Scenario::Los => "los",
            Scenario::Nlos => "nlos",
        };
        let kind = match antenna {
            AntennaKind::Biquad => "biquad",
            AntennaKind::PifaPlane => "pifa-plane",
            AntennaKind::Pifa => "pifa",
        };
        Self {
            name: format!("{tag}-{kind}"),
            scenario,
            antenna,
            tx_antenna: model,
            rx_antenna: model,
            tx_power_dbm: 20.0,
            frequency_ghz: default_frequency(),
            path_loss_exponent: 2.0,
            reference_loss_db: 40.0,
            shadowing_sigma_db: 1.5,
            link_distance_m: HALLWAY_LENGTH_M,
            noise_floor_dbm: default_noise_floor(),
            walls,
        }
    }

    /// Calibrated configuration by name (see [`PRESET_NAMES`]).
    ///
    /// NLOS presets are fitted to the measured endpoint anchors with the
    /// path-loss exponent frozen at 2; LOS presets reuse the NLOS reference
    /// loss of the same antenna with every wall removed.
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let (scenario, rest) = if let Some(rest) = name.strip_prefix("nlos-") {
            (Scenario::Nlos, rest)
        } else if let Some(rest) = name.strip_prefix("los-") {
            (Scenario::Los, rest)
        } else {
            return Err(ConfigError::UnknownPreset(name.to_owned()));
        };
        let (antenna, anchors) = match rest {
            "biquad" => (AntennaKind::Biquad, &NLOS_BIQUAD_ANCHORS),
            "pifa-plane" => (AntennaKind::PifaPlane, &NLOS_PIFA_PLANE_ANCHORS),
            "pifa" => (AntennaKind::Pifa, &NLOS_PIFA_ANCHORS),
            _ => return Err(ConfigError::UnknownPreset(name.to_owned())),
        };
        let template = Self::template(Scenario::Nlos, antenna);
        let fitted = calibrate(anchors, &template, FreeParams::WALL_AND_REFERENCE)
            .expect("two anchors determine two parameters")
            .config;
        Ok(match scenario {
            Scenario::Nlos => fitted,
            Scenario::Los => Self {
                name: name.to_owned(),
                scenario: Scenario::Los,
                walls: WallLayout::none(),
                ..fitted
            },
        })
    }

    /// Loads `spec` as a file when it exists, otherwise as a preset name.
    pub fn resolve(spec: &str) -> Result<Self, ConfigError> {
        let path = Path::new(spec);
        if path.exists() {
            Self::load(path)
        } else {
            Self::preset(spec)
        }
    }

    /// Sum of transmit power and boresight gains.
    pub fn boresight_eirp_dbm(&self) -> f64 {
        self.tx_power_dbm + antenna_gain_db(&self.tx_antenna, 0.0) + antenna_gain_db(&self.rx_antenna, 0.0)
    }
}

impl fmt::Display for ScenarioConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({} {}): n={:.3} L_ref={:.3} dB L_wall={:.3} dB x{} sigma={} dB",
            self.name,
            self.scenario,
            self.antenna,
            self.path_loss_exponent,
            self.reference_loss_db,
            self.walls.per_wall_loss_db,
            self.walls.wall_positions_m.len(),
            self.shadowing_sigma_db
        )
    }
}

/// Path loss at `d` meters (clamped to [`MIN_DISTANCE_M`]).
pub fn path_loss_db(cfg: &ScenarioConfig, d: f64) -> f64 {
    let d = d.max(MIN_DISTANCE_M);
    cfg.reference_loss_db
        + 10.0 * cfg.path_loss_exponent * d.log10()
        + cfg.walls.per_wall_loss_db * wall_count(&cfg.walls, d) as f64
}

/// Noise-free received power with boresight-aligned antennas.
pub fn link_budget_dbm(cfg: &ScenarioConfig, d: f64) -> f64 {
    cfg.boresight_eirp_dbm() - path_loss_db(cfg, d)
}

/// One received-power draw using `rng` for the shadowing term.
pub fn rssi_sample<R: Rng + ?Sized>(cfg: &ScenarioConfig, d: f64, rng: &mut R) -> f64 {
    let budget = link_budget_dbm(cfg, d);
    if cfg.shadowing_sigma_db == 0.0 {
        return budget;
    }
    let normal = Normal::new(0.0, cfg.shadowing_sigma_db).expect("validated sigma");
    budget + normal.sample(rng)
}

/// Received power at `d` with shadowing drawn from `seed`.
pub fn rssi_at(cfg: &ScenarioConfig, d: f64, seed: u64) -> f64 {
    rssi_sample(cfg, d, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Rounds to the integer dBm an RSSI field can carry.
pub fn quantize_rssi(dbm: f64) -> i8 {
    dbm.round().clamp(f64::from(i8::MIN), f64::from(i8::MAX)) as i8
}

/// A measured `(distance, RSSI)` calibration point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub distance_m: f64,
    pub rssi_dbm: f64,
}

impl Anchor {
    pub const fn new(distance_m: f64, rssi_dbm: f64) -> Self {
        Self { distance_m, rssi_dbm }
    }
}

/// Which link parameters a calibration may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreeParams {
    pub path_loss_exponent: bool,
    pub per_wall_loss: bool,
    pub reference_loss: bool,
}

impl FreeParams {
    pub const ALL: Self = Self {
        path_loss_exponent: true,
        per_wall_loss: true,
        reference_loss: true,
    };
    pub const WALL_AND_REFERENCE: Self = Self {
        path_loss_exponent: false,
        per_wall_loss: true,
        reference_loss: true,
    };

    fn count(self) -> usize {
        [self.path_loss_exponent, self.per_wall_loss, self.reference_loss]
            .iter()
            .filter(|&&b| b)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CalibrationError {
    #[error("{anchors} anchors cannot determine {free} free parameters; freeze some")]
    UnderdeterminedFit { anchors: usize, free: usize },
    #[error("anchors must sit at distinct distances of at least {MIN_DISTANCE_M} m")]
    InvalidAnchors,
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub config: ScenarioConfig,
    /// Root-mean-square anchor residual of the fitted model.
    pub residual_rms_db: f64,
}

/// Least-squares fit of the free link parameters to `anchors`.
///
/// Frozen parameters keep the template's values. The model is linear in
/// `(n, L_wall, L_ref)`, so the fit is a single linear least-squares solve.
pub fn calibrate(
    anchors: &[Anchor],
    template: &ScenarioConfig,
    free: FreeParams,
) -> Result<Calibration, CalibrationError> {
    template.validate()?;
    let n_free = free.count();
    if anchors.len() < n_free.max(1) {
        return Err(CalibrationError::UnderdeterminedFit {
            anchors: anchors.len(),
            free: n_free,
        });
    }
    let distinct = anchors
        .iter()
        .enumerate()
        .all(|(k, a)| anchors[..k].iter().all(|b| b.distance_m != a.distance_m));
    if !distinct
        || anchors
            .iter()
            .any(|a| !(a.distance_m >= MIN_DISTANCE_M) || !a.rssi_dbm.is_finite())
    {
        return Err(CalibrationError::InvalidAnchors);
    }

    // Total loss implied by each anchor, split into parameter columns.
    let eirp = template.boresight_eirp_dbm();
    let mut cfg = template.clone();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut target = DVector::from_iterator(anchors.len(), anchors.iter().map(|a| eirp - a.rssi_dbm));
    for (k, a) in anchors.iter().enumerate() {
        let log_term = 10.0 * a.distance_m.log10();
        let walls = wall_count(&template.walls, a.distance_m) as f64;
        if !free.path_loss_exponent {
            target[k] -= template.path_loss_exponent * log_term;
        }
        if !free.per_wall_loss {
            target[k] -= template.walls.per_wall_loss_db * walls;
        }
        if !free.reference_loss {
            target[k] -= template.reference_loss_db;
        }
    }
    if free.path_loss_exponent {
        columns.push(anchors.iter().map(|a| 10.0 * a.distance_m.log10()).collect());
    }
    if free.per_wall_loss {
        columns.push(
            anchors
                .iter()
                .map(|a| wall_count(&template.walls, a.distance_m) as f64)
                .collect(),
        );
    }
    if free.reference_loss {
        columns.push(vec![1.0; anchors.len()]);
    }

    if n_free > 0 {
        let design = DMatrix::from_fn(anchors.len(), n_free, |r, c| columns[c][r]);
        let svd = design.clone().svd(true, true);
        let max_sv = svd.singular_values.max();
        if svd.singular_values.iter().any(|&s| s <= 1e-9 * max_sv.max(1.0)) {
            return Err(CalibrationError::UnderdeterminedFit {
                anchors: anchors.len(),
                free: n_free,
            });
        }
        let solution = svd.solve(&target, 0.0).expect("U and V were computed");
        let mut values = solution.iter().copied();
        if free.path_loss_exponent {
            cfg.path_loss_exponent = values.next().expect("column present");
        }
        if free.per_wall_loss {
            cfg.walls.per_wall_loss_db = values.next().expect("column present");
        }
        if free.reference_loss {
            cfg.reference_loss_db = values.next().expect("column present");
        }
    }

    let sq: f64 = anchors
        .iter()
        .map(|a| (link_budget_dbm(&cfg, a.distance_m) - a.rssi_dbm).powi(2))
        .sum();
    Ok(Calibration {
        residual_rms_db: (sq / anchors.len() as f64).sqrt(),
        config: cfg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurveyPoint {
    pub distance_m: f64,
    pub rssi: RssiSummary,
}

/// RSSI survey: at every distance 1..=18 m, the summary of 1000 simulated
/// frames whose RSSI fields carry integer dBm readings.
pub fn survey(cfg: &ScenarioConfig, seed: u64) -> Vec<SurveyPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (1..=HALLWAY_LENGTH_M as u32)
        .map(|step| {
            let d = f64::from(step);
            let readings: Vec<i8> = (0..RSSI_SURVEY_FRAMES)
                .map(|_| quantize_rssi(rssi_sample(cfg, d, &mut rng)))
                .collect();
            SurveyPoint {
                distance_m: d,
                rssi: RssiSummary::from_values(&readings).expect("non-empty"),
            }
        })
        .collect()
}

/// Phenomenological description of how an activity modulates the channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivityModel {
    pub label: ActivityLabel,
    /// Range the session's gait frequency is drawn from.
    pub body_freq_hz: (f64, f64),
    /// Range the session's arm-waving frequency is drawn from.
    pub arm_freq_hz: (f64, f64),
    /// Fractional amplitude swing caused by the moving body.
    pub modulation_depth: f64,
    /// Fractional amplitude swing caused by the waving arms.
    pub arm_depth: f64,
}

impl ActivityModel {
    pub fn for_label(label: ActivityLabel) -> Self {
        let (depth, arm) = match label {
            ActivityLabel::NoPresence => (0.0, 0.0),
            ActivityLabel::Walking => (0.25, 0.0),
            ActivityLabel::WalkingArmWaving => (0.25, 0.25),
        };
        Self {
            label,
            body_freq_hz: (0.5, 2.0),
            arm_freq_hz: (2.0, 5.0),
            modulation_depth: depth,
            arm_depth: arm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("duration must be positive, got {0} s")]
    InvalidDuration(f64),
    #[error(transparent)]
    Zone(#[from] SessionMetaError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Amplitude the receiver's gain control normalizes the channel toward.
const AGC_TARGET: f64 = 28.0;

/// Random-walk step of the motion phases per frame (radians).
const PHASE_JITTER: f64 = 0.02;

/// Deterministic CSI frame generator for one session.
///
/// Each subcarrier's amplitude is a static frequency-selective profile times
/// `1 + body + arm` modulation terms, scaled by the gain-controlled signal
/// share `sqrt(snr / (1 + snr))` of the link; complex Gaussian receiver noise
/// with the complementary share is added before 8-bit quantization. A weaker
/// link therefore shows the same patterns buried deeper in noise.
#[derive(Debug, Clone)]
pub struct FrameSynthesizer {
    rng: ChaCha8Rng,
    noise: Normal<f64>,
    rssi_budget_dbm: f64,
    rssi_noise: Option<Normal<f64>>,
    signal_amplitude: f64,
    profile: Vec<f64>,
    carrier_phase: Vec<f64>,
    body_phase: Vec<f64>,
    arm_phase: Vec<f64>,
    body_step: f64,
    arm_step: f64,
    body_depth: f64,
    arm_depth: f64,
    next_index: u64,
    total: Option<u64>,
    start_us: u64,
}

impl FrameSynthesizer {
    /// Unbounded generator; see [`synthesize_frames`] for a fixed duration.
    pub fn new(cfg: &ScenarioConfig, activity: &ActivityModel, zone: Option<u8>, seed: u64) -> Result<Self, SimError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let zone_gain = match zone {
            Some(z) => {
                // People near either end of the link perturb it more.
                let d = zone_distance_m(z)?;
                let x = (d / cfg.link_distance_m).clamp(0.0, 1.0);
                0.75 + 0.25 * (2.0 * x - 1.0).abs()
            }
            None => 1.0,
        };
        let budget = link_budget_dbm(cfg, cfg.link_distance_m);
        let snr = 10f64.powf((budget - cfg.noise_floor_dbm) / 10.0);
        let signal_amplitude = AGC_TARGET * (snr / (1.0 + snr)).sqrt();
        let noise_sigma = AGC_TARGET * (1.0 / (1.0 + snr)).sqrt() / 2f64.sqrt();

        let tilt = rng.gen_range(0.5..2.0);
        let tilt_phase = rng.gen_range(0.0..2.0 * PI);
        let profile = (0..SUBCARRIERS)
            .map(|k| 1.0 + 0.35 * (2.0 * PI * tilt * k as f64 / SUBCARRIERS as f64 + tilt_phase).cos())
            .collect();
        let phases =
            |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..SUBCARRIERS).map(|_| rng.gen_range(0.0..2.0 * PI)).collect() };
        let carrier_phase = phases(&mut rng);
        let body_phase = phases(&mut rng);
        let arm_phase = phases(&mut rng);
        let body_freq = rng.gen_range(activity.body_freq_hz.0..=activity.body_freq_hz.1);
        let arm_freq = rng.gen_range(activity.arm_freq_hz.0..=activity.arm_freq_hz.1);

        Ok(Self {
            rng,
            noise: Normal::new(0.0, noise_sigma).expect("finite sigma"),
            rssi_budget_dbm: budget,
            rssi_noise: (cfg.shadowing_sigma_db > 0.0)
                .then(|| Normal::new(0.0, cfg.shadowing_sigma_db).expect("validated sigma")),
            signal_amplitude,
            profile,
            carrier_phase,
            body_phase,
            arm_phase,
            body_step: 2.0 * PI * body_freq / FRAME_RATE_HZ,
            arm_step: 2.0 * PI * arm_freq / FRAME_RATE_HZ,
            body_depth: activity.modulation_depth * zone_gain,
            arm_depth: activity.arm_depth * zone_gain,
            next_index: 0,
            total: None,
            start_us: 0,
        })
    }

    pub fn with_start_time(mut self, start_us: u64) -> Self {
        self.start_us = start_us;
        self
    }

    /// Limits the generator to `duration_s` seconds of frames.
    pub fn with_duration(mut self, duration_s: f64) -> Result<Self, SimError> {
        if !(duration_s.is_finite() && duration_s > 0.0) {
            return Err(SimError::InvalidDuration(duration_s));
        }
        self.total = Some((duration_s * FRAME_RATE_HZ).round() as u64);
        Ok(self)
    }

    /// Standard deviation of each I/Q noise component, in ADC units.
    pub fn noise_sigma(&self) -> f64 {
        self.noise.std_dev()
    }

    pub fn signal_amplitude(&self) -> f64 {
        self.signal_amplitude
    }

    fn quantize(v: f64) -> i8 {
        v.round().clamp(-128.0, 127.0) as i8
    }

    fn frame(&mut self) -> CsiFrame {
        let index = self.next_index;
        let mut subcarriers = Vec::with_capacity(SUBCARRIERS);
        for k in 0..SUBCARRIERS {
            let modulation =
                1.0 + self.body_depth * self.body_phase[k].sin() + self.arm_depth * self.arm_phase[k].sin();
            let amplitude = (self.signal_amplitude * self.profile[k] * modulation).max(0.0);
            let (sin, cos) = self.carrier_phase[k].sin_cos();
            let i = amplitude * cos + self.noise.sample(&mut self.rng);
            let q = amplitude * sin + self.noise.sample(&mut self.rng);
            subcarriers.push(ComplexSample::new(Self::quantize(i), Self::quantize(q)));
        }
        for k in 0..SUBCARRIERS {
            self.body_phase[k] += self.body_step + PHASE_JITTER * (self.rng.gen::<f64>() - 0.5);
            self.arm_phase[k] += self.arm_step + PHASE_JITTER * (self.rng.gen::<f64>() - 0.5);
        }
        let rssi = match &self.rssi_noise {
            Some(n) => self.rssi_budget_dbm + n.sample(&mut self.rng),
            None => self.rssi_budget_dbm,
        };
        self.next_index += 1;
        CsiFrame::new(
            index as u32,
            self.start_us + index * FRAME_INTERVAL_US,
            quantize_rssi(rssi),
            subcarriers,
        )
    }
}

impl Iterator for FrameSynthesizer {
    type Item = CsiFrame;

    fn next(&mut self) -> Option<CsiFrame> {
        if self.total.is_some_and(|t| self.next_index >= t) {
            return None;
        }
        Some(self.frame())
    }
}

/// `duration_s` seconds of frames at 100 Hz for one activity session.
pub fn synthesize_frames(
    cfg: &ScenarioConfig,
    activity: &ActivityModel,
    zone: Option<u8>,
    duration_s: f64,
    seed: u64,
) -> Result<Vec<CsiFrame>, SimError> {
    Ok(FrameSynthesizer::new(cfg, activity, zone, seed)?
        .with_duration(duration_s)?
        .collect())
}

/// One session of the recording protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolSession {
    pub label: ActivityLabel,
    pub meta: SessionMeta,
    pub duration_s: f64,
    pub seed: u64,
}

/// Two minutes of walking and of walking + arm-waving in each of the five
/// zones, followed by five minutes without presence. Session seeds derive
/// from `seed` and the session's position in the protocol.
pub fn recording_protocol(cfg: &ScenarioConfig, seed: u64) -> Vec<ProtocolSession> {
    let mut sessions = Vec::new();
    let mut start = 0u64;
    let mut push = |label, meta_zone: Option<u8>, duration_s: f64| {
        let index = sessions.len() as u64;
        let meta = match meta_zone {
            Some(z) => SessionMeta::in_zone(cfg.scenario, cfg.antenna, z, start).expect("zones 1..=5"),
            None => SessionMeta::without_zone(cfg.scenario, cfg.antenna, cfg.link_distance_m, start),
        };
        sessions.push(ProtocolSession {
            label,
            meta,
            duration_s,
            seed: seed.wrapping_mul(1_000).wrapping_add(index),
        });
        start += (duration_s * 1e6) as u64;
    };
    for zone in 1..=5u8 {
        push(ActivityLabel::Walking, Some(zone), 120.0);
        push(ActivityLabel::WalkingArmWaving, Some(zone), 120.0);
    }
    push(ActivityLabel::NoPresence, None, 300.0);
    sessions
}

impl ProtocolSession {
    pub fn synthesize(&self, cfg: &ScenarioConfig) -> Result<Vec<CsiFrame>, SimError> {
        let activity = ActivityModel::for_label(self.label);
        Ok(FrameSynthesizer::new(cfg, &activity, self.meta.zone_index, self.seed)?
            .with_start_time(self.meta.start_time_us)
            .with_duration(self.duration_s)?
            .collect())
    }
}
