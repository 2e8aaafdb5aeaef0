//! Radar-side mathematics: transmit covariance, MVDR receive combining,
//! SCNR (ratio and trace forms), the linearized sensing coefficient and
//! beampatterns.
//!
//! Convention for the clutter-plus-noise matrix `M = C W C^H + N_s I`:
//! inside the optimizer `M` is frozen at the previous iterate's total
//! covariance; when evaluating a final solution it uses that solution's own
//! covariance. Every function here takes the covariance it should use
//! explicitly.

use std::io::Write;

use nalgebra::Cholesky;
use thiserror::Error;

use crate::channel::{steering_vector, RadarEnvironment};
use crate::linalg::{hermitian_part, quad_form, trace_re};
use crate::{CMatrix, CVector};

#[derive(Debug, Error)]
pub enum SensingError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("receive combiner must be nonzero")]
    ZeroCombiner,

    #[error("clutter-plus-noise matrix is not positive definite")]
    Singular,

    #[error("beampattern grid is empty")]
    EmptyGrid,

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum CovarianceError {
    #[error("block {block} is not Hermitian (residual {residual:e})")]
    NotHermitian { block: String, residual: f64 },

    #[error("block {block} is not PSD (min eigenvalue {min_eig:e})")]
    NotPsd { block: String, min_eig: f64 },

    #[error("total power {total:e} exceeds budget {budget:e}")]
    Budget { total: f64, budget: f64 },
}

/// Per-CUE covariances `W_k`, the radar covariance `W_0` and their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmitCovariance {
    pub per_cue: Vec<CMatrix>,
    pub radar: CMatrix,
    pub total: CMatrix,
}

impl TransmitCovariance {
    pub fn new(per_cue: Vec<CMatrix>, radar: CMatrix) -> Self {
        let mut total = radar.clone();
        for w in &per_cue {
            total += w;
        }
        TransmitCovariance { per_cue, radar, total }
    }

    pub fn zeros(n_tx: usize, n_cue: usize) -> Self {
        Self::new(vec![CMatrix::zeros(n_tx, n_tx); n_cue], CMatrix::zeros(n_tx, n_tx))
    }

    pub fn n_tx(&self) -> usize {
        self.radar.nrows()
    }

    pub fn n_cue(&self) -> usize {
        self.per_cue.len()
    }

    /// Block `0` is the radar covariance, blocks `1..=K` the CUE covariances.
    pub fn block(&self, j: usize) -> &CMatrix {
        if j == 0 {
            &self.radar
        } else {
            &self.per_cue[j - 1]
        }
    }

    pub fn blocks(&self) -> impl Iterator<Item = &CMatrix> {
        std::iter::once(&self.radar).chain(self.per_cue.iter())
    }

    /// Builds from blocks ordered `[W_0, W_1, .., W_K]`.
    pub fn from_blocks(mut blocks: Vec<CMatrix>) -> Self {
        let radar = blocks.remove(0);
        Self::new(blocks, radar)
    }

    pub fn total_power(&self) -> f64 {
        trace_re(&self.total)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(self.per_cue.iter().map(|w| w.scale(factor)).collect(), self.radar.scale(factor))
    }

    /// Hermitian to 1e-10 (relative to the block scale), PSD to
    /// `-1e-8 trace`, total trace within `budget (1 + 1e-6)`.
    pub fn validate(&self, budget: f64) -> Result<(), CovarianceError> {
        for (j, w) in self.blocks().enumerate() {
            let name = if j == 0 { "W_0".to_string() } else { format!("W_{j}") };
            let scale = trace_re(w).abs().max(1e-300);
            let residual = crate::linalg::hermitian_residual(w);
            if residual > 1e-10 * scale.max(1.0) {
                return Err(CovarianceError::NotHermitian { block: name, residual });
            }
            let min_eig = crate::linalg::min_eigenvalue(w);
            if min_eig < -1e-8 * scale {
                return Err(CovarianceError::NotPsd { block: name, min_eig });
            }
        }
        let total = self.total_power();
        if total > budget * (1.0 + 1e-6) {
            return Err(CovarianceError::Budget { total, budget });
        }
        Ok(())
    }
}

/// MVDR combiner together with the matrix it was computed from.
#[derive(Debug, Clone)]
pub struct ReceiveBeamformer {
    pub weights: CVector,
    pub interference_matrix: CMatrix,
}

/// `Q = |alpha_0|^2 A^H M^{-1} A`, rank one along `conj(a_t)`.
#[derive(Debug, Clone)]
pub struct SensingConstraintCoeff {
    pub q_matrix: CMatrix,
    /// `conj(a_t(theta_0))`.
    pub direction: CVector,
    /// `|alpha_0|^2 a_r^H M^{-1} a_r`, so `Q = scale * direction direction^H`.
    pub scale: f64,
}

impl SensingConstraintCoeff {
    /// `tr(Q W)`.
    pub fn apply(&self, w: &CMatrix) -> f64 {
        self.scale * quad_form(&self.direction, w)
    }
}

/// `M = C W C^H + N_s I`.
pub fn interference_matrix(env: &RadarEnvironment, total: &CMatrix) -> CMatrix {
    let c = &env.clutter_matrix;
    let mut m = hermitian_part(&(c * total * c.adjoint()));
    for i in 0..m.nrows() {
        m[(i, i)] += env.radar_noise;
    }
    m
}

fn check_dims(env: &RadarEnvironment, cov: &TransmitCovariance) -> Result<(), SensingError> {
    if cov.n_tx() != env.n_tx() {
        return Err(SensingError::Dimension(format!(
            "covariance is {}x{}, array has {} transmit antennas",
            cov.n_tx(),
            cov.n_tx(),
            env.n_tx()
        )));
    }
    Ok(())
}

/// Solves against `M = C W C^H + N_s I` by splitting the receive space into
/// the clutter subspace and its orthogonal complement, on which `M` acts as
/// `N_s I` exactly.
struct InterferenceSolve {
    basis: CMatrix,
    restricted: Option<Cholesky<crate::C64, nalgebra::Dyn>>,
    noise: f64,
}

impl InterferenceSolve {
    fn new(env: &RadarEnvironment, m: &CMatrix) -> Result<Self, SensingError> {
        let n_r = env.n_rx();
        let active: Vec<CVector> = env
            .clutter_angles
            .iter()
            .zip(&env.clutter_gains_sq)
            .filter(|(_, &g2)| g2 > 0.0)
            .map(|(&theta, _)| steering_vector(theta, n_r).expect("n_rx >= 1"))
            .collect();
        if !(env.radar_noise > 0.0) {
            return Err(SensingError::Singular);
        }
        if active.is_empty() {
            return Ok(Self { basis: CMatrix::zeros(n_r, 0), restricted: None, noise: env.radar_noise });
        }
        let b = CMatrix::from_columns(&active);
        let (q, r) = b.qr().unpack();
        let rank = (0..r.nrows().min(r.ncols())).filter(|&i| r[(i, i)].norm() > 1e-10 * r[(0, 0)].norm()).count();
        let basis = q.columns(0, rank.max(1)).into_owned();
        let k = hermitian_part(&(basis.adjoint() * m * &basis));
        let restricted = crate::linalg::cholesky(&k).ok_or(SensingError::Singular)?;
        Ok(Self { basis, restricted: Some(restricted), noise: env.radar_noise })
    }

    fn solve_matrix(&self, x: &CMatrix) -> CMatrix {
        match &self.restricted {
            None => x.unscale(self.noise),
            Some(chol) => {
                let y = self.basis.adjoint() * x;
                let perp = x - &self.basis * &y;
                perp.unscale(self.noise) + &self.basis * chol.solve(&y)
            }
        }
    }

    fn solve(&self, x: &CVector) -> CVector {
        let m = CMatrix::from_column_slice(x.len(), 1, x.as_slice());
        self.solve_matrix(&m).column(0).into_owned()
    }
}

/// `t = M^{-1} a_r(theta_0)` with `M` built from `cov.total`.
///
/// Only the direction matters: the SCNR quotient is invariant to any
/// nonzero complex scaling of `t`.
pub fn mvdr_weights(env: &RadarEnvironment, cov: &TransmitCovariance) -> Result<ReceiveBeamformer, SensingError> {
    check_dims(env, cov)?;
    let m = interference_matrix(env, &cov.total);
    let weights = InterferenceSolve::new(env, &m)?.solve(&env.target_steering_rx);
    Ok(ReceiveBeamformer { weights, interference_matrix: m })
}

/// Radar SCNR as a linear ratio.
///
/// With `t` supplied this is the Rayleigh quotient
/// `|alpha_0|^2 t^H A W A^H t / t^H M t`; without it, the trace form
/// `tr(|alpha_0|^2 A^H M^{-1} A W)`, which is the quotient at the MVDR
/// combiner.
pub fn scnr(env: &RadarEnvironment, cov: &TransmitCovariance, t: Option<&CVector>) -> Result<f64, SensingError> {
    check_dims(env, cov)?;
    match t {
        Some(t) => {
            if t.len() != env.n_rx() {
                return Err(SensingError::Dimension(format!("combiner has length {}", t.len())));
            }
            if t.iter().all(|z| z.norm() == 0.0) {
                return Err(SensingError::ZeroCombiner);
            }
            let projected = env.target_matrix.adjoint() * t;
            let num = env.target_gain_sq * quad_form(&projected, &cov.total);
            let clutter_return = env.clutter_matrix.adjoint() * t;
            let den = env.radar_noise * t.norm_squared() + quad_form(&clutter_return, &cov.total);
            Ok(num / den)
        }
        None => {
            let m = interference_matrix(env, &cov.total);
            let m_inv_a = InterferenceSolve::new(env, &m)?.solve_matrix(&env.target_matrix);
            let q = (env.target_matrix.adjoint() * m_inv_a).scale(env.target_gain_sq);
            Ok(crate::linalg::inner_re(&q, &cov.total))
        }
    }
}

/// Builds `Q` from the previous iterate's covariance (frozen `M`).
pub fn sensing_constraint_coeff(
    env: &RadarEnvironment,
    prev_cov: &TransmitCovariance,
) -> Result<SensingConstraintCoeff, SensingError> {
    check_dims(env, prev_cov)?;
    let m = interference_matrix(env, &prev_cov.total);
    let ar = &env.target_steering_rx;
    let m_inv_ar = InterferenceSolve::new(env, &m)?.solve(ar);
    let scale = env.target_gain_sq * ar.dotc(&m_inv_ar).re;
    let direction = env.target_steering_tx.conjugate();
    let q_matrix = (&direction * direction.adjoint()).scale(scale);
    Ok(SensingConstraintCoeff { q_matrix, direction, scale })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeampatternPoint {
    pub theta: f64,
    pub power_db: f64,
}

/// Floor applied to normalized beampattern values before taking dB.
pub const BEAMPATTERN_FLOOR_DB: f64 = -300.0;

/// Linear (unnormalized) expected beampattern
/// `|t^H a_r(theta)|^2 * a_t(theta)^T W conj(a_t(theta))` with `t` the MVDR
/// direction for `cov`.
pub fn beampattern_linear(
    env: &RadarEnvironment,
    cov: &TransmitCovariance,
    thetas: &[f64],
) -> Result<Vec<f64>, SensingError> {
    if thetas.is_empty() {
        return Err(SensingError::EmptyGrid);
    }
    let t = mvdr_weights(env, cov)?.weights;
    let (n_t, n_r) = (env.n_tx(), env.n_rx());
    Ok(thetas
        .iter()
        .map(|&theta| {
            let ar = steering_vector(theta, n_r).expect("n_rx >= 1");
            let at = steering_vector(theta, n_t).expect("n_tx >= 1");
            let rx_gain = t.dotc(&ar).norm_sqr();
            let tx_power = quad_form(&at.conjugate(), &cov.total).max(0.0);
            rx_gain * tx_power
        })
        .collect())
}

/// Beampattern in dB, normalized so the grid maximum is 0 dB.
pub fn beampattern(
    env: &RadarEnvironment,
    cov: &TransmitCovariance,
    thetas: &[f64],
) -> Result<Vec<BeampatternPoint>, SensingError> {
    let lin = beampattern_linear(env, cov, thetas)?;
    let peak = lin.iter().copied().fold(0.0, f64::max);
    let floor = 10f64.powf(BEAMPATTERN_FLOOR_DB / 10.0);
    Ok(thetas
        .iter()
        .zip(&lin)
        .map(|(&theta, &p)| {
            let rel = if peak > 0.0 { (p / peak).max(floor) } else { floor };
            BeampatternPoint { theta, power_db: 10.0 * rel.log10() }
        })
        .collect())
}

/// `n` uniformly spaced angles over `[-pi/2, pi/2]`.
pub fn theta_grid(n: usize) -> Vec<f64> {
    use std::f64::consts::FRAC_PI_2;
    match n {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..n).map(|i| -FRAC_PI_2 + std::f64::consts::PI * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Default 721-point grid (quarter-degree spacing).
pub fn default_theta_grid() -> Vec<f64> {
    theta_grid(721)
}

/// Writes `theta_rad,power_db` rows.
pub fn write_beampattern_csv<W: Write>(points: &[BeampatternPoint], out: W) -> Result<(), SensingError> {
    let mut w = csv::Writer::from_writer(out);
    let to_io = |e: csv::Error| std::io::Error::other(e.to_string());
    w.write_record(["theta_rad", "power_db"]).map_err(to_io)?;
    for p in points {
        w.write_record([format!("{}", p.theta), format!("{}", p.power_db)]).map_err(to_io)?;
    }
    w.flush()?;
    Ok(())
}
