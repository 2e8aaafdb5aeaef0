//! Channel synthesis for one fading realization and the radar array
//! quantities of the scenario.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::scenario::{distance, Geometry, RngStream, SystemConfig};
use crate::{CMatrix, CVector, C64};

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("steering vector needs at least one antenna")]
    NoAntennas,

    #[error("zero distance on link {0}")]
    ZeroDistance(String),

    #[error("geometry does not match configuration: {0}")]
    GeometryMismatch(String),

    #[error("channel dump failed: {0}")]
    Io(#[from] std::io::Error),
}

/// Half-wavelength ULA response, entry `m` equal to `exp(-j pi m sin(theta))`.
pub fn steering_vector(theta: f64, n: usize) -> Result<CVector, ChannelError> {
    if n == 0 {
        return Err(ChannelError::NoAntennas);
    }
    let phase = -std::f64::consts::PI * theta.sin();
    Ok(CVector::from_fn(n, |m, _| C64::from_polar(1.0, phase * m as f64)))
}

/// All communication channel coefficients of one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// `h_k`, BS to CUE `k`, length `n_tx`.
    pub bs_to_cue: Vec<CVector>,
    /// `g_{d,k}` at `(d, k)`: D2D transmitter `d` to CUE `k`.
    pub d2d_to_cue: CMatrix,
    /// `rho_{d',d}` at `(d', d)`: D2D transmitter `d'` to D2D receiver `d`.
    pub d2d_to_d2d: CMatrix,
    /// `f_d`, BS to D2D receiver `d`, length `n_tx`.
    pub bs_to_d2drx: Vec<CVector>,
}

impl ChannelSet {
    pub fn n_cue(&self) -> usize {
        self.bs_to_cue.len()
    }

    pub fn n_d2d(&self) -> usize {
        self.bs_to_d2drx.len()
    }

    pub fn n_tx(&self) -> usize {
        self.bs_to_cue.first().map_or(0, |h| h.len())
    }

    /// Writes every coefficient as one CSV row `link,tx,rx,element,re,im`.
    pub fn write_dump<W: Write>(&self, out: W) -> Result<(), ChannelError> {
        let mut w = csv::Writer::from_writer(out);
        let to_io = |e: csv::Error| std::io::Error::other(e.to_string());
        w.write_record(["link", "tx", "rx", "element", "re", "im"]).map_err(to_io)?;
        let mut row = |link: &str, a: usize, b: usize, e: usize, z: C64| {
            w.write_record([
                link.to_string(),
                a.to_string(),
                b.to_string(),
                e.to_string(),
                format!("{:e}", z.re),
                format!("{:e}", z.im),
            ])
        };
        for (k, h) in self.bs_to_cue.iter().enumerate() {
            for (m, z) in h.iter().enumerate() {
                row("bs_to_cue", 0, k, m, *z).map_err(to_io)?;
            }
        }
        for d in 0..self.d2d_to_cue.nrows() {
            for k in 0..self.d2d_to_cue.ncols() {
                row("d2d_to_cue", d, k, 0, self.d2d_to_cue[(d, k)]).map_err(to_io)?;
            }
        }
        for dp in 0..self.d2d_to_d2d.nrows() {
            for d in 0..self.d2d_to_d2d.ncols() {
                row("d2d_to_d2d", dp, d, 0, self.d2d_to_d2d[(dp, d)]).map_err(to_io)?;
            }
        }
        for (d, f) in self.bs_to_d2drx.iter().enumerate() {
            for (m, z) in f.iter().enumerate() {
                row("bs_to_d2drx", 0, d, m, *z).map_err(to_io)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// One `CN(0, 1)` draw.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Amplitude attenuation `c^{-q}` applied to the complex fading draw.
pub fn pathloss_amplitude(distance_m: f64, exponent: f64) -> f64 {
    distance_m.powf(-exponent)
}

fn link_scale(label: String, c: f64, q: f64) -> Result<f64, ChannelError> {
    if !(c > 0.0) {
        return Err(ChannelError::ZeroDistance(label));
    }
    Ok(pathloss_amplitude(c, q))
}

/// Draws every coefficient as `c^{-q} h_0` with independent `h_0 ~ CN(0, 1)`.
pub fn sample_channels(cfg: &SystemConfig, geo: &Geometry, rng: &RngStream) -> Result<ChannelSet, ChannelError> {
    if geo.cue_positions.len() != cfg.n_cue
        || geo.d2d_tx_positions.len() != cfg.n_d2d
        || geo.d2d_rx_positions.len() != cfg.n_d2d
    {
        return Err(ChannelError::GeometryMismatch("node counts differ".to_string()));
    }
    let q = cfg.pathloss_exponent;
    let mut r = rng.rng();
    let bs = geo.bs_position;

    let mut bs_to_cue = Vec::with_capacity(cfg.n_cue);
    for (k, &cue) in geo.cue_positions.iter().enumerate() {
        let s = link_scale(format!("bs->cue{k}"), distance(bs, cue), q)?;
        bs_to_cue.push(CVector::from_fn(cfg.n_tx, |_, _| complex_gaussian(&mut r) * s));
    }
    let mut d2d_to_cue = CMatrix::zeros(cfg.n_d2d, cfg.n_cue);
    for (d, &tx) in geo.d2d_tx_positions.iter().enumerate() {
        for (k, &cue) in geo.cue_positions.iter().enumerate() {
            let s = link_scale(format!("d2dtx{d}->cue{k}"), distance(tx, cue), q)?;
            d2d_to_cue[(d, k)] = complex_gaussian(&mut r) * s;
        }
    }
    let mut d2d_to_d2d = CMatrix::zeros(cfg.n_d2d, cfg.n_d2d);
    for (dp, &tx) in geo.d2d_tx_positions.iter().enumerate() {
        for (d, &rx) in geo.d2d_rx_positions.iter().enumerate() {
            let s = link_scale(format!("d2dtx{dp}->d2drx{d}"), distance(tx, rx), q)?;
            d2d_to_d2d[(dp, d)] = complex_gaussian(&mut r) * s;
        }
    }
    let mut bs_to_d2drx = Vec::with_capacity(cfg.n_d2d);
    for (d, &rx) in geo.d2d_rx_positions.iter().enumerate() {
        let s = link_scale(format!("bs->d2drx{d}"), distance(bs, rx), q)?;
        bs_to_d2drx.push(CVector::from_fn(cfg.n_tx, |_, _| complex_gaussian(&mut r) * s));
    }
    Ok(ChannelSet { bs_to_cue, d2d_to_cue, d2d_to_d2d, bs_to_d2drx })
}

/// Radar-side array quantities. Deterministic given the configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarEnvironment {
    pub target_steering_tx: CVector,
    pub target_steering_rx: CVector,
    /// `a_r(theta_0) a_t(theta_0)^T`.
    pub target_matrix: CMatrix,
    /// `|alpha_0|^2`, mW scale.
    pub target_gain_sq: f64,
    pub clutter_gains_sq: Vec<f64>,
    pub clutter_angles: Vec<f64>,
    /// `sum_i alpha_i a_r(theta_i) a_t(theta_i)^T` with real nonnegative `alpha_i`.
    pub clutter_matrix: CMatrix,
    pub radar_noise: f64,
}

impl RadarEnvironment {
    pub fn n_tx(&self) -> usize {
        self.target_steering_tx.len()
    }

    pub fn n_rx(&self) -> usize {
        self.target_steering_rx.len()
    }

    /// Rebuilds the clutter matrix from `clutter_angles` / `clutter_gains_sq`.
    pub fn rebuild_clutter(&mut self) {
        let (n_t, n_r) = (self.n_tx(), self.n_rx());
        let mut acc = CMatrix::zeros(n_r, n_t);
        for (&theta, &g2) in self.clutter_angles.iter().zip(&self.clutter_gains_sq) {
            let at = steering_vector(theta, n_t).expect("n_tx >= 1");
            let ar = steering_vector(theta, n_r).expect("n_rx >= 1");
            acc += (&ar * at.transpose()).scale(g2.sqrt());
        }
        self.clutter_matrix = acc;
    }
}

/// Builds steering vectors, gains (`|alpha_i|^2 = N_s 10^{dB/10}`) and the
/// combined clutter matrix.
pub fn build_radar_environment(cfg: &SystemConfig) -> RadarEnvironment {
    let at = steering_vector(cfg.target_angle, cfg.n_tx).expect("validated n_tx");
    let ar = steering_vector(cfg.target_angle, cfg.n_rx).expect("validated n_rx");
    let target_matrix = &ar * at.transpose();
    let gain = |db: f64| cfg.radar_noise * 10f64.powf(db / 10.0);
    let mut env = RadarEnvironment {
        target_steering_tx: at,
        target_steering_rx: ar,
        target_matrix,
        target_gain_sq: gain(cfg.target_gain_over_noise),
        clutter_gains_sq: cfg.clutter_gain_over_noise.iter().map(|&db| gain(db)).collect(),
        clutter_angles: cfg.clutter_angles.clone(),
        clutter_matrix: CMatrix::zeros(cfg.n_rx, cfg.n_tx),
        radar_noise: cfg.radar_noise,
    };
    env.rebuild_clutter();
    env
}
