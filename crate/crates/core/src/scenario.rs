//! Scenario configuration, unit conversion, cell geometry and seeded
//! random streams.
//!
//! Everything downstream works in linear units (mW for powers). Decibel
//! values only appear in the JSON configuration file and in reports.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("non-finite value for {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Invalid(String),

    #[error("cannot read configuration file: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed configuration JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// How a decibel figure is to be interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecibelKind {
    /// Dimensionless power ratio.
    PowerRatio,
    /// Absolute power referenced to 1 mW; the linear result is in mW.
    Dbm,
}

/// Converts a dB / dBm figure to linear units (dimensionless or mW).
pub fn from_decibels(value_db: f64, kind: DecibelKind) -> Result<f64, ConfigError> {
    if !value_db.is_finite() {
        let what = match kind {
            DecibelKind::PowerRatio => "dB value",
            DecibelKind::Dbm => "dBm value",
        };
        return Err(ConfigError::NonFinite(what.to_string()));
    }
    Ok(10f64.powf(value_db / 10.0))
}

/// `10 log10(x)`.
pub fn to_decibels(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Full description of one simulated cell plus algorithm controls.
///
/// Powers and noise variances are linear (mW). Radar gains and the SCNR
/// threshold stay in dB because they are ratios the user reasons about in dB.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_cue: usize,
    pub n_d2d: usize,
    pub n_clutter: usize,
    /// BS total power budget, mW.
    pub bs_power_budget: f64,
    /// Per-pair D2D transmit power budget, mW.
    pub d2d_power_budget: f64,
    /// Communication receiver noise variance, mW.
    pub comm_noise: f64,
    /// Radar receiver noise variance, mW.
    pub radar_noise: f64,
    /// Target direction, radians.
    pub target_angle: f64,
    /// Clutter directions, radians.
    pub clutter_angles: Vec<f64>,
    /// `|alpha_0|^2 / N_s` in dB.
    pub target_gain_over_noise: f64,
    /// `|alpha_i|^2 / N_s` in dB, one per clutter.
    pub clutter_gain_over_noise: Vec<f64>,
    /// Radar SCNR threshold, dB.
    pub scnr_threshold: f64,
    pub pathloss_exponent: f64,
    /// BS to CUE (and BS to D2D transmitter) distance, m.
    pub bs_ue_distance: f64,
    /// D2D transmitter to receiver distance, m.
    pub d2d_pair_distance: f64,
    pub max_iterations: usize,
    pub convergence_tol: f64,
    pub rng_seed: u64,
    /// Fraction of the D2D budget used by the fixed-power baseline.
    pub fixed_d2d_power_fraction: f64,
}

/// On-disk form of [`SystemConfig`]: identical field names, powers in dBm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_cue: usize,
    pub n_d2d: usize,
    pub n_clutter: usize,
    pub bs_power_budget: f64,
    pub d2d_power_budget: f64,
    pub comm_noise: f64,
    pub radar_noise: f64,
    pub target_angle: f64,
    pub clutter_angles: Vec<f64>,
    pub target_gain_over_noise: f64,
    pub clutter_gain_over_noise: Vec<f64>,
    pub scnr_threshold: f64,
    pub pathloss_exponent: f64,
    pub bs_ue_distance: f64,
    pub d2d_pair_distance: f64,
    pub max_iterations: usize,
    pub convergence_tol: f64,
    pub rng_seed: u64,
    #[serde(default = "default_fixed_fraction")]
    pub fixed_d2d_power_fraction: f64,
}

fn default_fixed_fraction() -> f64 {
    1.0
}

/// The reference cell: 8x8 arrays, 3 CUEs, 2 D2D pairs, 2 clutters.
pub fn default_config() -> SystemConfig {
    let dbm = |v: f64| 10f64.powf(v / 10.0);
    SystemConfig {
        n_tx: 8,
        n_rx: 8,
        n_cue: 3,
        n_d2d: 2,
        n_clutter: 2,
        bs_power_budget: dbm(30.0),
        d2d_power_budget: dbm(10.0),
        comm_noise: dbm(-70.0),
        radar_noise: dbm(-70.0),
        target_angle: 0.0,
        clutter_angles: vec![-PI / 6.0, PI / 6.0],
        target_gain_over_noise: 20.0,
        clutter_gain_over_noise: vec![80.0, 80.0],
        scnr_threshold: 30.0,
        pathloss_exponent: 2.0,
        bs_ue_distance: 100.0,
        d2d_pair_distance: 10.0,
        max_iterations: 8,
        convergence_tol: 1e-4,
        rng_seed: 1,
        fixed_d2d_power_fraction: 1.0,
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: &str| Err(ConfigError::Invalid(msg.to_string()));
        if self.n_tx == 0 || self.n_rx == 0 {
            return invalid("antenna counts must be at least 1");
        }
        if self.n_cue == 0 {
            return invalid("at least one CUE is required");
        }
        let positive = [
            ("bs_power_budget", self.bs_power_budget),
            ("d2d_power_budget", self.d2d_power_budget),
            ("comm_noise", self.comm_noise),
            ("radar_noise", self.radar_noise),
            ("bs_ue_distance", self.bs_ue_distance),
            ("d2d_pair_distance", self.d2d_pair_distance),
        ];
        for (name, v) in positive {
            if !v.is_finite() {
                return Err(ConfigError::NonFinite(name.to_string()));
            }
            if v <= 0.0 {
                return Err(ConfigError::Invalid(format!("{name} must be strictly positive")));
            }
        }
        if self.clutter_angles.len() != self.n_clutter || self.clutter_gain_over_noise.len() != self.n_clutter {
            return invalid("clutter_angles and clutter_gain_over_noise must have n_clutter entries");
        }
        let finite = [
            ("target_angle", self.target_angle),
            ("target_gain_over_noise", self.target_gain_over_noise),
            ("scnr_threshold", self.scnr_threshold),
            ("pathloss_exponent", self.pathloss_exponent),
            ("convergence_tol", self.convergence_tol),
            ("fixed_d2d_power_fraction", self.fixed_d2d_power_fraction),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(ConfigError::NonFinite(name.to_string()));
            }
        }
        if self.clutter_angles.iter().chain(&self.clutter_gain_over_noise).any(|v| !v.is_finite()) {
            return Err(ConfigError::NonFinite("clutter parameters".to_string()));
        }
        if self.max_iterations == 0 {
            return invalid("max_iterations must be at least 1");
        }
        if self.convergence_tol <= 0.0 {
            return invalid("convergence_tol must be positive");
        }
        if !(0.0..=1.0).contains(&self.fixed_d2d_power_fraction) {
            return invalid("fixed_d2d_power_fraction must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn from_file(file: ConfigFile) -> Result<Self, ConfigError> {
        let dbm = |v: f64| from_decibels(v, DecibelKind::Dbm);
        let cfg = SystemConfig {
            n_tx: file.n_tx,
            n_rx: file.n_rx,
            n_cue: file.n_cue,
            n_d2d: file.n_d2d,
            n_clutter: file.n_clutter,
            bs_power_budget: dbm(file.bs_power_budget)?,
            d2d_power_budget: dbm(file.d2d_power_budget)?,
            comm_noise: dbm(file.comm_noise)?,
            radar_noise: dbm(file.radar_noise)?,
            target_angle: file.target_angle,
            clutter_angles: file.clutter_angles,
            target_gain_over_noise: file.target_gain_over_noise,
            clutter_gain_over_noise: file.clutter_gain_over_noise,
            scnr_threshold: file.scnr_threshold,
            pathloss_exponent: file.pathloss_exponent,
            bs_ue_distance: file.bs_ue_distance,
            d2d_pair_distance: file.d2d_pair_distance,
            max_iterations: file.max_iterations,
            convergence_tol: file.convergence_tol,
            rng_seed: file.rng_seed,
            fixed_d2d_power_fraction: file.fixed_d2d_power_fraction,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_file(&self) -> ConfigFile {
        ConfigFile {
            n_tx: self.n_tx,
            n_rx: self.n_rx,
            n_cue: self.n_cue,
            n_d2d: self.n_d2d,
            n_clutter: self.n_clutter,
            bs_power_budget: to_decibels(self.bs_power_budget),
            d2d_power_budget: to_decibels(self.d2d_power_budget),
            comm_noise: to_decibels(self.comm_noise),
            radar_noise: to_decibels(self.radar_noise),
            target_angle: self.target_angle,
            clutter_angles: self.clutter_angles.clone(),
            target_gain_over_noise: self.target_gain_over_noise,
            clutter_gain_over_noise: self.clutter_gain_over_noise.clone(),
            scnr_threshold: self.scnr_threshold,
            pathloss_exponent: self.pathloss_exponent,
            bs_ue_distance: self.bs_ue_distance,
            d2d_pair_distance: self.d2d_pair_distance,
            max_iterations: self.max_iterations,
            convergence_tol: self.convergence_tol,
            rng_seed: self.rng_seed,
            fixed_d2d_power_fraction: self.fixed_d2d_power_fraction,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let file: ConfigFile = serde_json::from_str(text)?;
        Self::from_file(file)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("config serializes")
    }

    /// Linear SCNR threshold.
    pub fn scnr_threshold_linear(&self) -> f64 {
        10f64.powf(self.scnr_threshold / 10.0)
    }

    /// Copy of this configuration with a different SCNR threshold.
    pub fn with_scnr_threshold(&self, eta_db: f64) -> Self {
        SystemConfig { scnr_threshold: eta_db, ..self.clone() }
    }
}

/// Planar node positions in metres, BS at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub bs_position: [f64; 2],
    pub cue_positions: Vec<[f64; 2]>,
    pub d2d_tx_positions: Vec<[f64; 2]>,
    pub d2d_rx_positions: Vec<[f64; 2]>,
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Deterministic random stream keyed by `(seed, label)`.
///
/// Each consumer (geometry, fading, randomization, ...) draws from its own
/// label so that adding draws in one place never shifts another's sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub stream_label: String,
}

impl RngStream {
    pub fn new(seed: u64, label: impl Into<String>) -> Self {
        RngStream { seed, stream_label: label.into() }
    }

    /// Child stream with label `parent/child`.
    pub fn substream(&self, child: &str) -> Self {
        RngStream::new(self.seed, format!("{}/{}", self.stream_label, child))
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&fnv1a(self.stream_label.as_bytes(), 0xcbf2_9ce4_8422_2325).to_le_bytes());
        key[16..24].copy_from_slice(&fnv1a(self.stream_label.as_bytes(), 0x8422_2325_cbf2_9ce4).to_le_bytes());
        key[24..32].copy_from_slice(&(self.stream_label.len() as u64).to_le_bytes());
        ChaCha20Rng::from_seed(key)
    }
}

fn fnv1a(bytes: &[u8], basis: u64) -> u64 {
    bytes.iter().fold(basis, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Places CUEs and D2D transmitters on the circle of radius
/// `bs_ue_distance` at uniform angles, and each D2D receiver at
/// `d2d_pair_distance` from its transmitter at a uniform angle.
pub fn sample_geometry(cfg: &SystemConfig, rng: &RngStream) -> Geometry {
    let mut r = rng.rng();
    let mut on_circle = |center: [f64; 2], radius: f64| {
        let phi: f64 = r.random_range(0.0..2.0 * PI);
        [center[0] + radius * phi.cos(), center[1] + radius * phi.sin()]
    };
    let bs = [0.0, 0.0];
    let cue_positions: Vec<_> = (0..cfg.n_cue).map(|_| on_circle(bs, cfg.bs_ue_distance)).collect();
    let d2d_tx_positions: Vec<_> = (0..cfg.n_d2d).map(|_| on_circle(bs, cfg.bs_ue_distance)).collect();
    let d2d_rx_positions: Vec<_> = d2d_tx_positions
        .iter()
        .map(|&tx| on_circle(tx, cfg.d2d_pair_distance))
        .collect();
    Geometry { bs_position: bs, cue_positions, d2d_tx_positions, d2d_rx_positions }
}
