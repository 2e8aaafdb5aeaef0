//! Outer successive convex approximation loop and the scheme dispatcher.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::channel::{complex_gaussian, ChannelSet, RadarEnvironment};
use crate::linalg::{hermitian_eigen, hermitian_residual, leading_eigenpair, min_eigenvalue, outer, trace_re};
use crate::rates::{sum_rate, PowerAllocation};
use crate::scenario::{to_decibels, RngStream, SystemConfig};
use crate::sensing::{scnr, sensing_constraint_coeff, SensingConstraintCoeff, SensingError, TransmitCovariance};
use crate::subproblem::{
    build_surrogate, solve_surrogate, zf_nullspace_basis, ExpansionPoint, SubproblemError, SubproblemStatus,
};
use crate::{CMatrix, CVector, C64};

/// Eigenvalue ratio `lambda_2 / lambda_1` at or below which a block counts as rank one.
pub const RANK_ONE_RATIO: f64 = 1e-3;
/// Gaussian randomization draws per extraction.
pub const RANDOMIZATION_SAMPLES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchemeId {
    Proposed,
    ZeroForcing,
    FixedD2d,
    CommunicationOnly,
    SensingOnly,
}

impl SchemeId {
    pub const ALL: [SchemeId; 5] = [
        SchemeId::Proposed,
        SchemeId::ZeroForcing,
        SchemeId::FixedD2d,
        SchemeId::CommunicationOnly,
        SchemeId::SensingOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeId::Proposed => "proposed",
            SchemeId::ZeroForcing => "zero-forcing",
            SchemeId::FixedD2d => "fixed-d2d",
            SchemeId::CommunicationOnly => "communication-only",
            SchemeId::SensingOnly => "sensing-only",
        }
    }

    /// Whether the radar SCNR threshold constrains this scheme.
    pub fn enforces_sensing(self) -> bool {
        !matches!(self, SchemeId::CommunicationOnly | SchemeId::SensingOnly)
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown scheme '{0}' (expected proposed, zero-forcing, fixed-d2d, communication-only or sensing-only)")]
pub struct UnknownScheme(pub String);

impl FromStr for SchemeId {
    type Err = UnknownScheme;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "proposed" => Ok(SchemeId::Proposed),
            "zero-forcing" | "zf" => Ok(SchemeId::ZeroForcing),
            "fixed-d2d" | "fixed" => Ok(SchemeId::FixedD2d),
            "communication-only" | "comm-only" => Ok(SchemeId::CommunicationOnly),
            "sensing-only" => Ok(SchemeId::SensingOnly),
            other => Err(UnknownScheme(other.to_string())),
        }
    }
}

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("SCNR threshold {threshold_db:.3} dB unreachable (at most {max_scnr_db:.3} dB)")]
    Infeasible { threshold_db: f64, max_scnr_db: f64 },
    #[error("scheme {0} is not solved by the SCA loop")]
    NotSca(SchemeId),
    #[error(transparent)]
    Subproblem(#[from] SubproblemError),
    #[error(transparent)]
    Sensing(#[from] SensingError),
}

#[derive(Debug, Clone)]
pub struct BeamformingSolution {
    pub scheme: SchemeId,
    pub cov: TransmitCovariance,
    pub powers: PowerAllocation,
    /// One vector per CUE.
    pub extracted_beamformers: Vec<CVector>,
    /// Per CUE: true when the relaxed block is numerically rank one.
    pub rank_flags: Vec<bool>,
    pub relaxed_sum_rate: f64,
    pub extracted_sum_rate: f64,
    /// MVDR SCNR of `cov`, dB.
    pub achieved_scnr: f64,
    /// True objective after each iteration.
    pub iteration_trace: Vec<f64>,
    /// True objective at the starting point.
    pub initial_objective: f64,
    pub converged: bool,
    pub iterations_used: usize,
    /// Linearized sensing coefficient the final iterate was constrained by.
    pub sensing_coeff: Option<SensingConstraintCoeff>,
}

fn zf_projector(basis: &CMatrix) -> CMatrix {
    basis * basis.adjoint()
}

/// Largest linearized SCNR reachable with the full budget, optionally restricted
/// to the span of `basis`.
fn max_linear_scnr(q: &SensingConstraintCoeff, cfg: &SystemConfig, basis: Option<&CMatrix>) -> f64 {
    let q_eff = match basis {
        Some(v) => v.adjoint() * &q.q_matrix * v,
        None => q.q_matrix.clone(),
    };
    cfg.bs_power_budget * crate::linalg::max_eigenvalue(&q_eff)
}

/// Top direction of `Q`, projected onto the span of `basis` when given.
fn sensing_direction(q: &SensingConstraintCoeff, basis: Option<&CMatrix>) -> CVector {
    match basis {
        Some(v) => {
            let (_, y) = leading_eigenpair(&(v.adjoint() * &q.q_matrix * v));
            v * y
        }
        None => leading_eigenpair(&q.q_matrix).1,
    }
}

/// Matched-direction starting point, confined to `basis` when given.
fn matched_start(ch: &ChannelSet, cfg: &SystemConfig, basis: Option<&CMatrix>, radar_fraction: f64) -> TransmitCovariance {
    let p = cfg.bs_power_budget;
    let k_n = ch.n_cue() as f64;
    let proj = basis.map(zf_projector);
    let per_cue = ch
        .bs_to_cue
        .iter()
        .map(|h| {
            let h = match &proj {
                Some(pr) => pr * h,
                None => h.clone(),
            };
            let norm = h.norm_squared();
            if norm > 0.0 {
                outer(&h).scale((1.0 - radar_fraction) * p / (k_n * norm))
            } else {
                CMatrix::zeros(cfg.n_tx, cfg.n_tx)
            }
        })
        .collect();
    let radar = match &proj {
        Some(pr) => pr.scale(radar_fraction * p / trace_re(pr)),
        None => CMatrix::identity(cfg.n_tx, cfg.n_tx).scale(radar_fraction * p / cfg.n_tx as f64),
    };
    TransmitCovariance::new(per_cue, radar)
}

fn start_powers(cfg: &SystemConfig, scheme: SchemeId) -> PowerAllocation {
    let level = match scheme {
        SchemeId::FixedD2d => cfg.fixed_d2d_power_fraction * cfg.d2d_power_budget,
        SchemeId::SensingOnly => 0.0,
        _ => 0.5 * cfg.d2d_power_budget,
    };
    PowerAllocation::uniform(cfg.n_d2d, level)
}

/// Starting point of the proposed scheme.
pub fn initialize(ch: &ChannelSet, env: &RadarEnvironment, cfg: &SystemConfig) -> Result<ExpansionPoint, OptimizerError> {
    initialize_for(ch, env, cfg, SchemeId::Proposed)
}

/// Scheme-aware starting point: the ZF variant starts inside the null space,
/// the fixed-power baseline starts at its fixed D2D level.
pub fn initialize_for(
    ch: &ChannelSet,
    env: &RadarEnvironment,
    cfg: &SystemConfig,
    scheme: SchemeId,
) -> Result<ExpansionPoint, OptimizerError> {
    let basis = match scheme {
        SchemeId::ZeroForcing => Some(zf_nullspace_basis(ch, cfg)?),
        _ => None,
    };
    let powers_prev = start_powers(cfg, scheme);
    let cov = matched_start(ch, cfg, basis.as_ref(), 0.5);
    if !scheme.enforces_sensing() {
        return Ok(ExpansionPoint { cov_prev: cov, powers_prev });
    }
    let eta = cfg.scnr_threshold_linear();
    let q = sensing_constraint_coeff(env, &cov)?;
    if q.apply(&cov.total) >= eta {
        return Ok(ExpansionPoint { cov_prev: cov, powers_prev });
    }
    let u = sensing_direction(&q, basis.as_ref());
    for step in 0..=5 {
        let f = 0.5 + 0.1 * step as f64;
        let mut cand = matched_start(ch, cfg, basis.as_ref(), 0.0).scaled(1.0 - f);
        cand.radar = outer(&u).scale(f * cfg.bs_power_budget);
        let cand = TransmitCovariance::new(cand.per_cue, cand.radar);
        let q = sensing_constraint_coeff(env, &cand)?;
        if q.apply(&cand.total) >= eta {
            return Ok(ExpansionPoint { cov_prev: cand, powers_prev });
        }
    }
    let mut full = TransmitCovariance::zeros(cfg.n_tx, cfg.n_cue);
    full.radar = outer(&u).scale(cfg.bs_power_budget);
    let full = TransmitCovariance::new(full.per_cue, full.radar);
    let q = sensing_constraint_coeff(env, &full)?;
    Err(OptimizerError::Infeasible {
        threshold_db: cfg.scnr_threshold,
        max_scnr_db: to_decibels(max_linear_scnr(&q, cfg, basis.as_ref())),
    })
}

/// Successive convex approximation for the proposed, zero-forcing,
/// fixed-D2D and communication-only schemes.
pub fn run_sca(
    ch: &ChannelSet,
    env: &RadarEnvironment,
    cfg: &SystemConfig,
    scheme: SchemeId,
) -> Result<BeamformingSolution, OptimizerError> {
    if scheme == SchemeId::SensingOnly {
        return Err(OptimizerError::NotSca(scheme));
    }
    let basis = match scheme {
        SchemeId::ZeroForcing => Some(zf_nullspace_basis(ch, cfg)?),
        _ => None,
    };
    let mut exp = initialize_for(ch, env, cfg, scheme)?;
    let initial_objective = sum_rate(ch, &exp.cov_prev, &exp.powers_prev, cfg.comm_noise).sum_rate;
    let mut prev = initial_objective;
    let mut trace = Vec::with_capacity(cfg.max_iterations);
    let mut converged = false;
    let mut last_coeff = None;
    for iteration in 1..=cfg.max_iterations {
        let q = sensing_constraint_coeff(env, &exp.cov_prev)?;
        let sensing = scheme.enforces_sensing().then_some(&q);
        let mut model = build_surrogate(ch, sensing, &exp, cfg, basis.as_ref())?;
        if scheme == SchemeId::FixedD2d {
            model = model.with_fixed_powers(exp.powers_prev.d2d_powers.clone());
        }
        let sol = solve_surrogate(&model, cfg)?;
        if sol.status == SubproblemStatus::Infeasible {
            if iteration == 1 {
                return Err(OptimizerError::Infeasible {
                    threshold_db: cfg.scnr_threshold,
                    max_scnr_db: to_decibels(sol.max_sensing.unwrap_or(0.0)),
                });
            }
            converged = false;
            break;
        }
        let objective = sum_rate(ch, &sol.cov, &sol.powers, cfg.comm_noise).sum_rate;
        trace.push(objective);
        last_coeff = sensing.cloned();
        exp = ExpansionPoint { cov_prev: sol.cov, powers_prev: sol.powers };
        let change = (objective - prev).abs() / prev.abs().max(1e-12);
        prev = objective;
        if change < cfg.convergence_tol {
            converged = true;
            break;
        }
    }
    let iterations_used = trace.len();
    let mut sol = finish(ch, env, cfg, scheme, exp.cov_prev, exp.powers_prev, last_coeff)?;
    sol.iteration_trace = trace;
    sol.initial_objective = initial_objective;
    sol.converged = converged;
    sol.iterations_used = iterations_used;
    Ok(sol)
}

fn finish(
    ch: &ChannelSet,
    env: &RadarEnvironment,
    cfg: &SystemConfig,
    scheme: SchemeId,
    cov: TransmitCovariance,
    powers: PowerAllocation,
    sensing_coeff: Option<SensingConstraintCoeff>,
) -> Result<BeamformingSolution, OptimizerError> {
    let relaxed = sum_rate(ch, &cov, &powers, cfg.comm_noise).sum_rate;
    let (mut beams, flags) = extract_beamformers(&cov);
    if flags.iter().any(|f| !f) {
        let requirement = sensing_coeff.as_ref().map(|q| (q, cfg.scnr_threshold_linear()));
        let mut rng = RngStream::new(cfg.rng_seed, "solver").substream(scheme.name()).rng();
        beams = randomize_beamformers(ch, cfg, &cov, &powers, &beams, &flags, requirement, &mut rng);
    }
    let extracted_cov = rank_one_covariance(&cov, &beams);
    let extracted = sum_rate(ch, &extracted_cov, &powers, cfg.comm_noise).sum_rate;
    let achieved = to_decibels(scnr(env, &cov, None)?);
    Ok(BeamformingSolution {
        scheme,
        initial_objective: relaxed,
        iteration_trace: vec![relaxed],
        converged: true,
        iterations_used: 0,
        cov,
        powers,
        extracted_beamformers: beams,
        rank_flags: flags,
        relaxed_sum_rate: relaxed,
        extracted_sum_rate: extracted,
        achieved_scnr: achieved,
        sensing_coeff,
    })
}

/// `w_k = sqrt(lambda_1) u_1` per CUE block, plus near-rank-one flags.
pub fn extract_beamformers(cov: &TransmitCovariance) -> (Vec<CVector>, Vec<bool>) {
    cov.per_cue
        .iter()
        .map(|w| {
            let (vals, vecs) = hermitian_eigen(w);
            let l1 = vals[0].max(0.0);
            let beam = vecs.column(0).into_owned() * C64::new(l1.sqrt(), 0.0);
            let flag = vals.len() < 2 || (l1 > 0.0 && vals[1].max(0.0) <= RANK_ONE_RATIO * l1);
            (beam, flag)
        })
        .unzip()
}

fn rank_one_covariance(cov: &TransmitCovariance, beams: &[CVector]) -> TransmitCovariance {
    TransmitCovariance::new(beams.iter().map(outer).collect(), cov.radar.clone())
}

/// Hermitian square root of a PSD matrix (negative eigenvalues clipped).
fn psd_sqrt(w: &CMatrix) -> CMatrix {
    let (vals, vecs) = hermitian_eigen(w);
    let mut scaled = vecs.clone();
    for (j, v) in vals.iter().enumerate() {
        scaled.column_mut(j).scale_mut(v.max(0.0).sqrt());
    }
    scaled * vecs.adjoint()
}

/// Gaussian randomization over the blocks that are not rank one.
///
/// Each draw `xi ~ CN(0, W_k)` is rescaled to `tr(W_k)`, so the per-block and
/// total power never exceed the relaxed solution's. Draws that break the
/// linearized sensing requirement are discarded. The principal-eigenvector
/// extraction stays in the candidate set.
#[allow(clippy::too_many_arguments)]
pub fn randomize_beamformers<R: Rng + ?Sized>(
    ch: &ChannelSet,
    cfg: &SystemConfig,
    cov: &TransmitCovariance,
    powers: &PowerAllocation,
    eigen_beams: &[CVector],
    flags: &[bool],
    requirement: Option<(&SensingConstraintCoeff, f64)>,
    rng: &mut R,
) -> Vec<CVector> {
    let score = |beams: &[CVector]| -> Option<f64> {
        let cand = rank_one_covariance(cov, beams);
        if let Some((q, eta)) = requirement {
            if q.apply(&cand.total) < eta {
                return None;
            }
        }
        Some(sum_rate(ch, &cand, powers, cfg.comm_noise).sum_rate)
    };
    let roots: Vec<Option<CMatrix>> =
        cov.per_cue.iter().zip(flags).map(|(w, &f)| (!f).then(|| psd_sqrt(w))).collect();
    let mut best = eigen_beams.to_vec();
    let mut best_score = score(&best).unwrap_or(f64::NEG_INFINITY);
    for _ in 0..RANDOMIZATION_SAMPLES {
        let cand: Vec<CVector> = roots
            .iter()
            .zip(&cov.per_cue)
            .zip(eigen_beams)
            .map(|((root, w), eig)| match root {
                None => eig.clone(),
                Some(r) => {
                    let z = CVector::from_fn(w.nrows(), |_, _| complex_gaussian(rng));
                    let xi = r * z;
                    let norm = xi.norm_squared();
                    if norm > 0.0 {
                        xi * C64::new((trace_re(w).max(0.0) / norm).sqrt(), 0.0)
                    } else {
                        eig.clone()
                    }
                }
            })
            .collect();
        if let Some(s) = score(&cand) {
            if s > best_score {
                best_score = s;
                best = cand;
            }
        }
    }
    best
}

/// Radar-optimal baseline: all power on the top direction of `Q`, with the
/// MVDR fixed point iterated until the SCNR settles. D2D pairs are silent.
pub fn sensing_only_solution(
    ch: &ChannelSet,
    env: &RadarEnvironment,
    cfg: &SystemConfig,
) -> Result<BeamformingSolution, OptimizerError> {
    let p = cfg.bs_power_budget;
    let mut cov = TransmitCovariance::new(
        vec![CMatrix::zeros(cfg.n_tx, cfg.n_tx); cfg.n_cue],
        CMatrix::identity(cfg.n_tx, cfg.n_tx).scale(p / cfg.n_tx as f64),
    );
    let mut prev = scnr(env, &cov, None)?;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut coeff = None;
    for _ in 0..cfg.max_iterations.max(1) {
        let q = sensing_constraint_coeff(env, &cov)?;
        let u = sensing_direction(&q, None);
        cov = TransmitCovariance::new(cov.per_cue.clone(), outer(&u).scale(p));
        let s = scnr(env, &cov, None)?;
        trace.push(s);
        coeff = Some(q);
        let change = (s - prev).abs() / prev.abs().max(1e-300);
        prev = s;
        if change < cfg.convergence_tol {
            converged = true;
            break;
        }
    }
    let powers = PowerAllocation::uniform(cfg.n_d2d, 0.0);
    let iterations_used = trace.len();
    let mut sol = finish(ch, env, cfg, SchemeId::SensingOnly, cov, powers, coeff)?;
    sol.iteration_trace = vec![sol.relaxed_sum_rate; iterations_used];
    sol.converged = converged;
    sol.iterations_used = iterations_used;
    Ok(sol)
}

/// Runs any scheme.
pub fn run_scheme(
    ch: &ChannelSet,
    env: &RadarEnvironment,
    cfg: &SystemConfig,
    scheme: SchemeId,
) -> Result<BeamformingSolution, OptimizerError> {
    match scheme {
        SchemeId::SensingOnly => sensing_only_solution(ch, env, cfg),
        _ => run_sca(ch, env, cfg, scheme),
    }
}

/// One violated requirement found by [`audit_solution`].
#[derive(Debug, Clone, PartialEq)]
pub struct AuditFailure {
    pub check: &'static str,
    pub detail: String,
}

/// Tolerances used by [`audit_solution`].
pub const AUDIT_TOL: f64 = 1e-10;

/// Independent feasibility check of an emitted solution: BS power budget,
/// D2D boxes, Hermitian PSD blocks, the linearized SCNR requirement the
/// solution was produced under, and for zero-forcing the leakage
/// `||f_d^H W_j|| / (||f_d|| ||W_j||)`.
pub fn audit_solution(ch: &ChannelSet, cfg: &SystemConfig, sol: &BeamformingSolution) -> Vec<AuditFailure> {
    let mut out = Vec::new();
    let mut fail = |check: &'static str, detail: String| out.push(AuditFailure { check, detail });
    let budget = cfg.bs_power_budget;
    let total = sol.cov.total_power();
    if !(total <= budget * (1.0 + AUDIT_TOL)) {
        fail("power", format!("total {total:e} > budget {budget:e}"));
    }
    for (d, &p) in sol.powers.d2d_powers.iter().enumerate() {
        let pd = cfg.d2d_power_budget;
        if !(p >= -AUDIT_TOL * pd && p <= pd * (1.0 + AUDIT_TOL)) {
            fail("box", format!("p_{d} = {p:e} outside [0, {pd:e}]"));
        }
    }
    for (j, w) in sol.cov.blocks().enumerate() {
        let res = hermitian_residual(w);
        if res > AUDIT_TOL * budget {
            fail("hermitian", format!("W_{j} residual {res:e}"));
        }
        let min = min_eigenvalue(w);
        if min < -AUDIT_TOL * budget {
            fail("psd", format!("W_{j} min eigenvalue {min:e}"));
        }
    }
    if sol.scheme.enforces_sensing() {
        match &sol.sensing_coeff {
            Some(q) => {
                let eta = cfg.scnr_threshold_linear();
                let got = q.apply(&sol.cov.total);
                if got < eta * (1.0 - 1e-9) {
                    fail("sensing", format!("linearized SCNR {got:e} < {eta:e}"));
                }
            }
            None => fail("sensing", "no sensing coefficient recorded".into()),
        }
    }
    if sol.scheme == SchemeId::ZeroForcing {
        for (d, f) in ch.bs_to_d2drx.iter().enumerate() {
            for (j, w) in sol.cov.blocks().enumerate() {
                let wn = w.norm();
                if wn == 0.0 {
                    continue;
                }
                let leak = (f.adjoint() * w).norm() / (f.norm() * wn);
                if leak > AUDIT_TOL {
                    fail("zero-forcing", format!("f_{d} leakage into W_{j}: {leak:e}"));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_radar_environment, sample_channels};
    use crate::scenario::{default_config, sample_geometry};

    fn instance(seed: u64, cfg: &SystemConfig) -> (ChannelSet, RadarEnvironment) {
        let geo = sample_geometry(cfg, &RngStream::new(seed, "geometry"));
        let ch = sample_channels(cfg, &geo, &RngStream::new(seed, "fading")).unwrap();
        (ch, build_radar_environment(cfg))
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in SchemeId::ALL {
            assert_eq!(s.name().parse::<SchemeId>().unwrap(), s);
        }
        assert_eq!("zf".parse::<SchemeId>().unwrap(), SchemeId::ZeroForcing);
        assert!("nope".parse::<SchemeId>().is_err());
    }

    #[test]
    fn initial_point_uses_full_budget() {
        let cfg = default_config();
        let (ch, env) = instance(1, &cfg);
        let exp = initialize(&ch, &env, &cfg).unwrap();
        assert!((exp.cov_prev.total_power() / cfg.bs_power_budget - 1.0).abs() < 1e-12);
        assert!(exp.powers_prev.d2d_powers.iter().all(|&p| p == 0.5 * cfg.d2d_power_budget));
    }

    #[test]
    fn vacuous_threshold_keeps_matched_start() {
        let cfg = default_config().with_scnr_threshold(0.0);
        let (ch, env) = instance(2, &cfg);
        let exp = initialize(&ch, &env, &cfg).unwrap();
        let expected = matched_start(&ch, &cfg, None, 0.5);
        assert!((&exp.cov_prev.radar - &expected.radar).norm() == 0.0);
    }

    #[test]
    fn high_threshold_moves_power_to_radar() {
        let cfg = default_config().with_scnr_threshold(66.0);
        let (ch, env) = instance(3, &cfg);
        let exp = initialize(&ch, &env, &cfg).unwrap();
        let q = sensing_constraint_coeff(&env, &exp.cov_prev).unwrap();
        assert!(q.apply(&exp.cov_prev.total) >= cfg.scnr_threshold_linear());
        assert!(trace_re(&exp.cov_prev.radar) >= 0.5 * cfg.bs_power_budget);
    }

    #[test]
    fn unreachable_threshold_is_an_error() {
        let cfg = default_config().with_scnr_threshold(70.0);
        let (ch, env) = instance(4, &cfg);
        match initialize(&ch, &env, &cfg) {
            Err(OptimizerError::Infeasible { max_scnr_db, .. }) => assert!((max_scnr_db - 68.0618).abs() < 1e-3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(run_sca(&ch, &env, &cfg, SchemeId::Proposed), Err(OptimizerError::Infeasible { .. })));
    }

    #[test]
    fn proposed_ascends_and_converges() {
        let cfg = default_config();
        let (ch, env) = instance(5, &cfg);
        let sol = run_sca(&ch, &env, &cfg, SchemeId::Proposed).unwrap();
        assert!(!sol.iteration_trace.is_empty() && sol.iteration_trace.len() <= cfg.max_iterations);
        let mut prev = sol.initial_objective;
        for &v in &sol.iteration_trace {
            assert!(v >= prev - 1e-6, "{:?}", sol.iteration_trace);
            prev = v;
        }
        assert!(sol.achieved_scnr >= cfg.scnr_threshold - 1e-6);
        assert!(sol.extracted_sum_rate <= sol.relaxed_sum_rate + 1e-6);
        assert!(audit_solution(&ch, &cfg, &sol).is_empty());
    }

    #[test]
    fn communication_only_dominates_proposed() {
        let cfg = default_config();
        let (ch, env) = instance(6, &cfg);
        let p = run_sca(&ch, &env, &cfg, SchemeId::Proposed).unwrap();
        let c = run_sca(&ch, &env, &cfg, SchemeId::CommunicationOnly).unwrap();
        assert!(c.relaxed_sum_rate >= p.relaxed_sum_rate * (1.0 - 1e-3));
    }

    #[test]
    fn zero_forcing_stays_in_null_space() {
        let cfg = default_config();
        let (ch, env) = instance(7, &cfg);
        let sol = run_sca(&ch, &env, &cfg, SchemeId::ZeroForcing).unwrap();
        assert!(audit_solution(&ch, &cfg, &sol).is_empty());
    }

    #[test]
    fn fixed_d2d_keeps_power_level() {
        let cfg = default_config();
        let (ch, env) = instance(8, &cfg);
        let sol = run_sca(&ch, &env, &cfg, SchemeId::FixedD2d).unwrap();
        assert!(sol.powers.d2d_powers.iter().all(|&p| p == cfg.d2d_power_budget));
    }

    #[test]
    fn scalar_instance_recovers_full_power() {
        let mut cfg = default_config();
        cfg.n_tx = 1;
        cfg.n_rx = 1;
        cfg.n_cue = 1;
        cfg.n_d2d = 0;
        cfg.n_clutter = 0;
        cfg.clutter_angles.clear();
        cfg.clutter_gain_over_noise.clear();
        let (ch, env) = instance(9, &cfg);
        let sol = run_sca(&ch, &env, &cfg, SchemeId::CommunicationOnly).unwrap();
        let w = sol.cov.per_cue[0][(0, 0)].re;
        assert!((w / cfg.bs_power_budget - 1.0).abs() < 1e-4, "{w}");
    }

    #[test]
    fn rank_one_extraction_recovers_vector() {
        let v = CVector::from_vec(vec![C64::new(1.0, 2.0), C64::new(-0.5, 0.3), C64::new(0.0, -1.0)]);
        let cov = TransmitCovariance::new(vec![outer(&v)], CMatrix::zeros(3, 3));
        let (beams, flags) = extract_beamformers(&cov);
        assert!(flags[0]);
        let phase = beams[0].dotc(&v);
        let aligned = &beams[0] * (phase / phase.norm());
        assert!((aligned - &v).norm() < 1e-10 * v.norm());

        let cov = TransmitCovariance::new(vec![CMatrix::identity(3, 3)], CMatrix::zeros(3, 3));
        assert!(!extract_beamformers(&cov).1[0]);
    }

    #[test]
    fn randomization_respects_budget() {
        let cfg = default_config();
        let (ch, _) = instance(10, &cfg);
        let per_cue = (0..3).map(|_| CMatrix::identity(8, 8).scale(cfg.bs_power_budget / 32.0)).collect();
        let cov = TransmitCovariance::new(per_cue, CMatrix::identity(8, 8).scale(cfg.bs_power_budget / 32.0));
        let (beams, flags) = extract_beamformers(&cov);
        let pa = PowerAllocation::uniform(2, 5.0);
        let mut rng = RngStream::new(1, "randomization-test").rng();
        let out = randomize_beamformers(&ch, &cfg, &cov, &pa, &beams, &flags, None, &mut rng);
        let total: f64 = out.iter().map(|w| w.norm_squared()).sum::<f64>() + trace_re(&cov.radar);
        assert!(total <= cfg.bs_power_budget * (1.0 + 1e-12));
    }

    #[test]
    fn sensing_only_matches_closed_form() {
        let cfg = default_config();
        let (ch, env) = instance(11, &cfg);
        let sol = sensing_only_solution(&ch, &env, &cfg).unwrap();
        let expected = to_decibels(
            env.target_gain_sq * cfg.bs_power_budget * (cfg.n_tx * cfg.n_rx) as f64 / cfg.radar_noise,
        );
        assert!((sol.achieved_scnr - expected).abs() < 1e-6);
        assert!((expected - 68.0618).abs() < 1e-3);
        let u = sol.cov.radar.column(0);
        assert!(u.iter().all(|z| (z - u[0]).norm() < 1e-9 * u[0].norm()));
        assert!(sol.powers.d2d_powers.iter().all(|&p| p == 0.0));
    }
}
