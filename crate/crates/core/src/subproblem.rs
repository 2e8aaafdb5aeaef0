//! The per-iteration convex surrogate: concave log terms of the sum rate
//! kept exactly, subtracted log terms replaced by their first-order
//! expansion at the previous iterate, rank constraints dropped.
//!
//! Covariances are indexed as blocks `0..=K` with block 0 the radar
//! covariance `W_0`.

use std::fmt::Write as _;
use std::io::Write;

use thiserror::Error;

use crate::channel::ChannelSet;
use crate::linalg::{hermitian_eigen, hermitian_part, inner_re, leading_eigenpair, outer};
use crate::rates::PowerAllocation;
use crate::scenario::SystemConfig;
use crate::sensing::{SensingConstraintCoeff, TransmitCovariance};
use crate::solver::{self, ConvexProgram, Element, LinearConstraint, LogTerm, SolverSettings, SolverStatus};
use crate::CMatrix;

const LN2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Error)]
pub enum SubproblemError {
    #[error("expansion point violates a constraint: {0}")]
    Precondition(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("BS-to-D2D channels are nearly dependent (singular value ratio {ratio:e})")]
    Conditioning { ratio: f64 },

    #[error(transparent)]
    Solver(#[from] solver::SolverError),
}

/// Previous iterate around which the surrogate is built.
#[derive(Debug, Clone)]
pub struct ExpansionPoint {
    pub cov_prev: TransmitCovariance,
    pub powers_prev: PowerAllocation,
}

impl ExpansionPoint {
    /// Power budget and D2D boxes within 1e-6 relative slack.
    pub fn validate(&self, cfg: &SystemConfig) -> Result<(), SubproblemError> {
        let total = self.cov_prev.total_power();
        if total > cfg.bs_power_budget * (1.0 + 1e-6) {
            return Err(SubproblemError::Precondition(format!(
                "BS power {total:e} exceeds budget {:e}",
                cfg.bs_power_budget
            )));
        }
        if self.powers_prev.len() != cfg.n_d2d {
            return Err(SubproblemError::Precondition("wrong number of D2D powers".into()));
        }
        let slack = 1e-6 * cfg.d2d_power_budget;
        for (d, &p) in self.powers_prev.d2d_powers.iter().enumerate() {
            if p < -slack || p > cfg.d2d_power_budget + slack {
                return Err(SubproblemError::Precondition(format!("D2D power {d} = {p:e} outside box")));
            }
        }
        Ok(())
    }
}

/// `sum_{j in mask} Re tr(G W_j) + sum_d c_d p_d + constant`.
#[derive(Debug, Clone)]
pub struct AffineForm {
    pub matrix: CMatrix,
    pub block_mask: Vec<bool>,
    pub power_coeffs: Vec<f64>,
    pub constant: f64,
}

impl AffineForm {
    pub fn eval(&self, cov: &TransmitCovariance, pa: &PowerAllocation) -> f64 {
        let mut acc = self.constant;
        for (j, w) in cov.blocks().enumerate() {
            if self.block_mask[j] {
                acc += inner_re(&self.matrix, w);
            }
        }
        acc + self.power_coeffs.iter().zip(&pa.d2d_powers).map(|(c, p)| c * p).sum::<f64>()
    }
}

/// Linearized sensing constraint `tr(Q sum_j W_j) >= threshold`.
#[derive(Debug, Clone)]
pub struct SensingRequirement {
    pub coeff: SensingConstraintCoeff,
    /// Linear SCNR threshold.
    pub threshold: f64,
}

#[derive(Debug, Clone)]
pub struct SurrogateModel {
    pub n_tx: usize,
    pub n_cue: usize,
    pub n_d2d: usize,
    /// Arguments of the kept concave logs: CUEs first, then D2D receivers.
    pub total_terms: Vec<AffineForm>,
    /// Arguments of the linearized logs, same order.
    pub interference_terms: Vec<AffineForm>,
    /// Interference-plus-noise at the expansion point, same order.
    pub expansion_values: Vec<f64>,
    /// `beta_k` (CUEs) then `delta_d` (D2D); reciprocals of `expansion_values`.
    pub taylor_coeffs: Vec<f64>,
    pub sensing: Option<SensingRequirement>,
    pub power_budget: f64,
    pub d2d_budget: f64,
    pub comm_noise: f64,
    /// D2D powers held constant instead of optimized.
    pub fixed_powers: Option<Vec<f64>>,
    /// Orthonormal basis of the common null space of the `f_d`.
    pub zf_basis: Option<CMatrix>,
    pub expansion: ExpansionPoint,
}

impl SurrogateModel {
    pub fn beta(&self) -> &[f64] {
        &self.taylor_coeffs[..self.n_cue]
    }

    pub fn delta(&self) -> &[f64] {
        &self.taylor_coeffs[self.n_cue..]
    }

    /// First-order upper bound of `log2(interference_i)` at the expansion.
    pub fn linearized_log(&self, i: usize, cov: &TransmitCovariance, pa: &PowerAllocation) -> f64 {
        let i0 = self.expansion_values[i];
        let now = self.interference_terms[i].eval(cov, pa);
        i0.log2() + self.taylor_coeffs[i] * (now - i0) / LN2
    }

    /// Surrogate objective (bits/s/Hz).
    pub fn objective(&self, cov: &TransmitCovariance, pa: &PowerAllocation) -> f64 {
        (0..self.total_terms.len())
            .map(|i| self.total_terms[i].eval(cov, pa).log2() - self.linearized_log(i, cov, pa))
            .sum()
    }

    /// The unrelaxed four-logarithm objective at `(cov, pa)`.
    pub fn true_objective(&self, cov: &TransmitCovariance, pa: &PowerAllocation) -> f64 {
        self.total_terms
            .iter()
            .zip(&self.interference_terms)
            .map(|(s, i)| s.eval(cov, pa).log2() - i.eval(cov, pa).log2())
            .sum()
    }

    pub fn with_fixed_powers(mut self, powers: Vec<f64>) -> Self {
        self.fixed_powers = Some(powers);
        self
    }

    /// Human-readable listing of dimensions, budgets, `Q` and the expansion point.
    pub fn write_dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "surrogate: n_tx={} n_cue={} n_d2d={}", self.n_tx, self.n_cue, self.n_d2d);
        let _ = writeln!(s, "power_budget_mw={:e} d2d_budget_mw={:e} noise_mw={:e}", self.power_budget, self.d2d_budget, self.comm_noise);
        let _ = writeln!(s, "beta={:?}", self.beta());
        let _ = writeln!(s, "delta={:?}", self.delta());
        let _ = writeln!(s, "fixed_powers={:?}", self.fixed_powers);
        let _ = writeln!(s, "zf_dim={:?}", self.zf_basis.as_ref().map(|v| v.ncols()));
        match &self.sensing {
            Some(req) => {
                let _ = writeln!(s, "sensing_threshold={:e} q_scale={:e}", req.threshold, req.coeff.scale);
                for i in 0..req.coeff.q_matrix.nrows() {
                    let row: Vec<String> = req.coeff.q_matrix.row(i).iter().map(|z| format!("{:+.6e}{:+.6e}i", z.re, z.im)).collect();
                    let _ = writeln!(s, "Q[{i}]= {}", row.join(" "));
                }
            }
            None => {
                let _ = writeln!(s, "sensing=none");
            }
        }
        for (j, w) in self.expansion.cov_prev.blocks().enumerate() {
            let _ = writeln!(s, "W{j}_prev trace={:e}", crate::linalg::trace_re(w));
        }
        let _ = writeln!(s, "p_prev={:?}", self.expansion.powers_prev.d2d_powers);
        out.write_all(s.as_bytes())
    }
}

/// Assembles the surrogate around `exp`. `sensing = None` drops the radar
/// constraint; `zf_basis` confines every covariance block to its span.
pub fn build_surrogate(
    ch: &ChannelSet,
    sensing: Option<&SensingConstraintCoeff>,
    exp: &ExpansionPoint,
    cfg: &SystemConfig,
    zf_basis: Option<&CMatrix>,
) -> Result<SurrogateModel, SubproblemError> {
    exp.validate(cfg)?;
    let (k_n, d_n) = (ch.n_cue(), ch.n_d2d());
    if k_n != cfg.n_cue || d_n != cfg.n_d2d || ch.n_tx() != cfg.n_tx {
        return Err(SubproblemError::Dimension("channels do not match configuration".into()));
    }
    let n_blocks = k_n + 1;
    let mut total_terms = Vec::with_capacity(k_n + d_n);
    let mut interference_terms = Vec::with_capacity(k_n + d_n);
    for k in 0..k_n {
        let g = outer(&ch.bs_to_cue[k]);
        let coeffs: Vec<f64> = (0..d_n).map(|d| ch.d2d_to_cue[(d, k)].norm_sqr()).collect();
        total_terms.push(AffineForm {
            matrix: g.clone(),
            block_mask: vec![true; n_blocks],
            power_coeffs: coeffs.clone(),
            constant: cfg.comm_noise,
        });
        let mut mask = vec![true; n_blocks];
        mask[k + 1] = false;
        interference_terms.push(AffineForm { matrix: g, block_mask: mask, power_coeffs: coeffs, constant: cfg.comm_noise });
    }
    for d in 0..d_n {
        let g = outer(&ch.bs_to_d2drx[d]);
        let all: Vec<f64> = (0..d_n).map(|dp| ch.d2d_to_d2d[(dp, d)].norm_sqr()).collect();
        let mut others = all.clone();
        others[d] = 0.0;
        total_terms.push(AffineForm {
            matrix: g.clone(),
            block_mask: vec![true; n_blocks],
            power_coeffs: all,
            constant: cfg.comm_noise,
        });
        interference_terms.push(AffineForm {
            matrix: g,
            block_mask: vec![true; n_blocks],
            power_coeffs: others,
            constant: cfg.comm_noise,
        });
    }
    let expansion_values: Vec<f64> = interference_terms
        .iter()
        .map(|f| f.eval(&exp.cov_prev, &exp.powers_prev))
        .collect();
    let taylor_coeffs = expansion_values.iter().map(|v| 1.0 / v).collect();
    Ok(SurrogateModel {
        n_tx: cfg.n_tx,
        n_cue: k_n,
        n_d2d: d_n,
        total_terms,
        interference_terms,
        expansion_values,
        taylor_coeffs,
        sensing: sensing.map(|c| SensingRequirement { coeff: c.clone(), threshold: cfg.scnr_threshold_linear() }),
        power_budget: cfg.bs_power_budget,
        d2d_budget: cfg.d2d_power_budget,
        comm_noise: cfg.comm_noise,
        fixed_powers: None,
        zf_basis: zf_basis.cloned(),
        expansion: exp.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubproblemStatus {
    Optimal,
    MaxIterations,
    Stalled,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub cov: TransmitCovariance,
    pub powers: PowerAllocation,
    pub objective: f64,
    pub status: SubproblemStatus,
    /// Largest achievable `tr(Q sum W)` under the power budget; set when infeasible.
    pub max_sensing: Option<f64>,
    pub gap: f64,
    pub newton_steps: usize,
}

/// Orthonormal basis of `{v : f_d^H v = 0 for all d}`.
pub fn zf_nullspace_basis(ch: &ChannelSet, cfg: &SystemConfig) -> Result<CMatrix, SubproblemError> {
    let (n, d_n) = (cfg.n_tx, ch.n_d2d());
    if n <= d_n {
        return Err(SubproblemError::Dimension(format!("zero-forcing needs n_tx > n_d2d ({n} <= {d_n})")));
    }
    if d_n == 0 {
        return Ok(CMatrix::identity(n, n));
    }
    let f = CMatrix::from_columns(&ch.bs_to_d2drx);
    let sv = f.singular_values();
    let ratio = sv.min() / sv.max();
    let gram = &f * f.adjoint();
    let (_, vecs) = hermitian_eigen(&gram);
    if !(ratio >= 1e-8) {
        return Err(SubproblemError::Conditioning { ratio });
    }
    // Range of F spans the top D eigenvectors; clean the complement against it.
    let range = vecs.columns(0, d_n).into_owned();
    let mut basis = vecs.columns(d_n, n - d_n).into_owned();
    for _ in 0..2 {
        basis -= &range * (range.adjoint() * &basis);
        let qr = basis.clone().qr();
        basis = qr.q();
    }
    Ok(basis)
}

fn block_dims(model: &SurrogateModel) -> Vec<usize> {
    let r = model.zf_basis.as_ref().map_or(model.n_tx, |v| v.ncols());
    vec![r; model.n_cue + 1]
}

/// Reduces a full-space Hermitian coefficient to the ZF coordinates.
fn reduce(model: &SurrogateModel, g: &CMatrix) -> CMatrix {
    match &model.zf_basis {
        Some(v) => hermitian_part(&(v.adjoint() * g * v)),
        None => g.clone(),
    }
}

fn lift(model: &SurrogateModel, x: &CMatrix) -> CMatrix {
    match &model.zf_basis {
        Some(v) => hermitian_part(&(v * x * v.adjoint())),
        None => hermitian_part(x),
    }
}

/// Internal scaling: blocks hold `W_j / P_BS`, scalars hold `p_d / P_d`,
/// log arguments are divided by the noise power.
struct Scaled<'a> {
    model: &'a SurrogateModel,
    dims: Vec<usize>,
    n_scalars: usize,
}

impl<'a> Scaled<'a> {
    fn new(model: &'a SurrogateModel) -> Self {
        let n_scalars = if model.fixed_powers.is_some() { 0 } else { model.n_d2d };
        Scaled { model, dims: block_dims(model), n_scalars }
    }

    /// Maps an affine form to `(offset, map)` in scaled coordinates, both divided by `N_c`.
    fn map_form(&self, form: &AffineForm) -> (f64, Element) {
        let m = self.model;
        let n_c = m.comm_noise;
        let reduced = reduce(m, &form.matrix).scale(m.power_budget / n_c);
        let mut el = Element::zeros(&self.dims, self.n_scalars);
        for (j, on) in form.block_mask.iter().enumerate() {
            if *on {
                el.blocks[j] = reduced.clone();
            }
        }
        let mut offset = form.constant / n_c;
        match &m.fixed_powers {
            Some(p) => offset += form.power_coeffs.iter().zip(p).map(|(c, p)| c * p).sum::<f64>() / n_c,
            None => {
                for (d, c) in form.power_coeffs.iter().enumerate() {
                    el.scalars[d] = c * m.d2d_budget / n_c;
                }
            }
        }
        (offset, el)
    }

    fn sensing_direction(&self) -> Option<CMatrix> {
        self.model.sensing.as_ref().map(|req| reduce(self.model, &req.coeff.q_matrix))
    }

    fn program(&self) -> ConvexProgram {
        let m = self.model;
        let n_c = m.comm_noise;
        let mut log_terms = Vec::new();
        let mut linear = Element::zeros(&self.dims, self.n_scalars);
        let mut constant = 0.0;
        for i in 0..m.total_terms.len() {
            let (offset, map) = self.map_form(&m.total_terms[i]);
            log_terms.push(LogTerm { weight: 1.0, offset, map });
            constant += n_c.log2();
            // - [log2 I0 + beta (I(x) - I0) / ln2] with I(x) = N_c (offset' + <map', x>).
            let (i_off, i_map) = self.map_form(&m.interference_terms[i]);
            let beta = m.taylor_coeffs[i];
            let i0 = m.expansion_values[i];
            linear.axpy(-beta * n_c / LN2, &i_map);
            constant -= i0.log2() + beta * (n_c * i_off - i0) / LN2;
        }
        let mut constraints = vec![LinearConstraint {
            map: Element {
                blocks: self.dims.iter().map(|&r| CMatrix::identity(r, r)).collect(),
                scalars: vec![0.0; self.n_scalars],
            },
            bound: 1.0,
        }];
        if let (Some(req), Some(q)) = (&m.sensing, self.sensing_direction()) {
            if req.threshold > 0.0 {
                let g = q.scale(-m.power_budget / req.threshold);
                constraints.push(LinearConstraint {
                    map: Element { blocks: vec![g; self.dims.len()], scalars: vec![0.0; self.n_scalars] },
                    bound: -1.0,
                });
            }
        }
        ConvexProgram {
            block_dims: self.dims.clone(),
            scalar_bounds: vec![(0.0, 1.0); self.n_scalars],
            log_terms,
            linear,
            linear_constant: constant,
            constraints,
        }
    }

    /// Largest achievable `tr(Q sum W)`: all power on the top eigenvector of `Q`.
    fn max_sensing(&self) -> Option<f64> {
        self.sensing_direction().map(|q| self.model.power_budget * crate::linalg::max_eigenvalue(&q))
    }

    fn to_scaled(&self, cov: &TransmitCovariance, pa: &PowerAllocation) -> Element {
        let m = self.model;
        let blocks = cov.blocks().map(|w| reduce(m, w).scale(1.0 / m.power_budget)).collect();
        let scalars = if self.n_scalars == 0 {
            vec![]
        } else {
            pa.d2d_powers.iter().map(|p| (p / m.d2d_budget).clamp(0.0, 1.0)).collect()
        };
        Element { blocks, scalars }
    }

    fn from_scaled(&self, x: &Element) -> (TransmitCovariance, PowerAllocation) {
        let m = self.model;
        let blocks: Vec<CMatrix> = x.blocks.iter().map(|b| lift(m, b).scale(m.power_budget)).collect();
        let powers = match &m.fixed_powers {
            Some(p) => p.clone(),
            None => x.scalars.iter().map(|y| y * m.d2d_budget).collect(),
        };
        (TransmitCovariance::from_blocks(blocks), PowerAllocation::new(powers))
    }

    /// Strictly interior point: a little isotropic power in every block and,
    /// when sensing is required, most of the budget on the top direction of `Q`.
    fn interior_point(&self) -> Element {
        let m = self.model;
        let n_blocks = self.dims.len() as f64;
        let r = self.dims[0];
        let mut x = Element::zeros(&self.dims, self.n_scalars);
        for y in &mut x.scalars {
            *y = 0.5;
        }
        match (self.sensing_direction(), self.max_sensing(), &m.sensing) {
            (Some(q), Some(max), Some(req)) if req.threshold > 0.0 => {
                let tau = (0.25 * (1.0 - req.threshold / max)).clamp(1e-9, 0.05);
                for b in &mut x.blocks {
                    *b = CMatrix::identity(r, r).scale(tau / (n_blocks * r as f64));
                }
                let (_, v) = leading_eigenpair(&q);
                x.blocks[0] += outer(&v).scale(1.0 - 2.0 * tau);
            }
            _ => {
                for b in &mut x.blocks {
                    *b = CMatrix::identity(r, r).scale(0.5 / (n_blocks * r as f64));
                }
            }
        }
        x
    }

    fn start_point(&self, program: &ConvexProgram) -> Element {
        let m = self.model;
        let interior = self.interior_point();
        let expansion = self.to_scaled(&m.expansion.cov_prev, &m.expansion.powers_prev);
        for lambda in [0.02, 0.05, 0.1, 0.2, 0.5] {
            let mut x = expansion.scaled(1.0 - lambda);
            x.axpy(lambda, &interior);
            if solver::is_strictly_feasible(program, &x) {
                return x;
            }
        }
        interior
    }
}

fn settings_for(_cfg: &SystemConfig) -> SolverSettings {
    SolverSettings::default()
}

/// Solves the surrogate to within the barrier gap tolerance.
pub fn solve_surrogate(model: &SurrogateModel, cfg: &SystemConfig) -> Result<SubproblemSolution, SubproblemError> {
    let scaled = Scaled::new(model);
    if let (Some(max), Some(req)) = (scaled.max_sensing(), &model.sensing) {
        if req.threshold >= max * (1.0 - 1e-9) {
            return Ok(infeasible(model, max));
        }
    }
    let program = scaled.program();
    let start = scaled.start_point(&program);
    let outcome = solver::maximize(&program, start, &settings_for(cfg))?;
    let (cov, powers) = scaled.from_scaled(&outcome.point);
    let status = match outcome.status {
        SolverStatus::Optimal => SubproblemStatus::Optimal,
        SolverStatus::MaxIterations => SubproblemStatus::MaxIterations,
        SolverStatus::Stalled => SubproblemStatus::Stalled,
    };
    Ok(SubproblemSolution {
        objective: model.objective(&cov, &powers),
        cov,
        powers,
        status,
        max_sensing: None,
        gap: outcome.gap,
        newton_steps: outcome.newton_steps,
    })
}

fn infeasible(model: &SurrogateModel, max: f64) -> SubproblemSolution {
    SubproblemSolution {
        cov: model.expansion.cov_prev.clone(),
        powers: model.expansion.powers_prev.clone(),
        objective: f64::NAN,
        status: SubproblemStatus::Infeasible,
        max_sensing: Some(max),
        gap: f64::INFINITY,
        newton_steps: 0,
    }
}

/// Zero-forcing enforced as explicit constraints `f_d^H W_j f_d <= leak N_c`
/// on full-dimension blocks instead of through the null-space basis. Kept as
/// an independent route for cross-checking the basis parameterization.
pub fn solve_surrogate_zf_by_constraints(
    model: &SurrogateModel,
    ch: &ChannelSet,
    cfg: &SystemConfig,
    leak: f64,
) -> Result<SubproblemSolution, SubproblemError> {
    let basis = zf_nullspace_basis(ch, cfg)?;
    let mut full = model.clone();
    full.zf_basis = None;
    let scaled = Scaled::new(&full);
    if let (Some(max_zf), Some(req)) = (
        Scaled::new(&SurrogateModel { zf_basis: Some(basis.clone()), ..full.clone() }).max_sensing(),
        &full.sensing,
    ) {
        if req.threshold >= max_zf * (1.0 - 1e-9) {
            return Ok(infeasible(model, max_zf));
        }
    }
    let mut program = scaled.program();
    let n_blocks = scaled.dims.len();
    for f in &ch.bs_to_d2drx {
        let g = outer(f).scale(full.power_budget / full.comm_noise);
        for j in 0..n_blocks {
            let mut map = Element::zeros(&scaled.dims, scaled.n_scalars);
            map.blocks[j] = g.clone();
            program.constraints.push(LinearConstraint { map, bound: leak });
        }
    }
    // Start inside the null space, plus a sliver of isotropic power that
    // keeps every block definite without breaching the leak bound.
    let restricted = SurrogateModel { zf_basis: Some(basis.clone()), ..full.clone() };
    let rs = Scaled::new(&restricted);
    let rprog = rs.program();
    let inner = rs.start_point(&rprog);
    let f_max = ch.bs_to_d2drx.iter().map(|f| f.norm_squared()).fold(0.0, f64::max);
    let sliver = 0.1 * leak * full.comm_noise / (full.power_budget * f_max);
    let start = Element {
        blocks: inner
            .blocks
            .iter()
            .map(|x| lift(&restricted, x) + CMatrix::identity(cfg.n_tx, cfg.n_tx).scale(sliver))
            .collect(),
        scalars: inner.scalars.clone(),
    };
    let outcome = solver::maximize(&program, start, &settings_for(cfg))?;
    let (cov, powers) = scaled.from_scaled(&outcome.point);
    let status = match outcome.status {
        SolverStatus::Optimal => SubproblemStatus::Optimal,
        SolverStatus::MaxIterations => SubproblemStatus::MaxIterations,
        SolverStatus::Stalled => SubproblemStatus::Stalled,
    };
    Ok(SubproblemSolution {
        objective: model.objective(&cov, &powers),
        cov,
        powers,
        status,
        max_sensing: None,
        gap: outcome.gap,
        newton_steps: outcome.newton_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_radar_environment, sample_channels};
    use crate::rates::{cue_interference_plus_noise, d2d_interference_plus_noise, sum_rate};
    use crate::scenario::{default_config, sample_geometry, RngStream};
    use crate::sensing::sensing_constraint_coeff;
    use crate::{CVector, C64};

    fn real(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    fn setup(seed: u64) -> (SystemConfig, ChannelSet, ExpansionPoint) {
        let cfg = default_config();
        let geo = sample_geometry(&cfg, &RngStream::new(seed, "geometry"));
        let ch = sample_channels(&cfg, &geo, &RngStream::new(seed, "fading")).unwrap();
        let p = cfg.bs_power_budget;
        let per_cue = ch.bs_to_cue.iter().map(|h| outer(h).scale(p / (6.0 * h.norm_squared()))).collect();
        let radar = CMatrix::identity(8, 8).scale(p / 16.0);
        let exp = ExpansionPoint {
            cov_prev: TransmitCovariance::new(per_cue, radar),
            powers_prev: PowerAllocation::uniform(2, 5.0),
        };
        (cfg, ch, exp)
    }

    #[test]
    fn taylor_coefficients_are_reciprocal_interference() {
        let (cfg, ch, exp) = setup(1);
        let model = build_surrogate(&ch, None, &exp, &cfg, None).unwrap();
        for k in 0..3 {
            let den = cue_interference_plus_noise(k, &ch, &exp.cov_prev, &exp.powers_prev, cfg.comm_noise);
            assert!((model.beta()[k] * den - 1.0).abs() < 1e-12);
        }
        for d in 0..2 {
            let den = d2d_interference_plus_noise(d, &ch, &exp.cov_prev, &exp.powers_prev, cfg.comm_noise);
            assert!((model.delta()[d] * den - 1.0).abs() < 1e-12);
        }
        assert!(model.taylor_coeffs.iter().all(|&b| b > 0.0));
    }

    #[test]
    fn surrogate_tight_at_expansion() {
        let (cfg, ch, exp) = setup(2);
        let model = build_surrogate(&ch, None, &exp, &cfg, None).unwrap();
        let s = model.objective(&exp.cov_prev, &exp.powers_prev);
        let t = model.true_objective(&exp.cov_prev, &exp.powers_prev);
        let r = sum_rate(&ch, &exp.cov_prev, &exp.powers_prev, cfg.comm_noise).sum_rate;
        assert!((s - t).abs() <= 1e-9 * t.abs());
        assert!((t - r).abs() <= 1e-9 * r.abs());
    }

    #[test]
    fn expansion_outside_budget_rejected() {
        let (cfg, ch, mut exp) = setup(3);
        exp.cov_prev = exp.cov_prev.scaled(2.0);
        assert!(matches!(build_surrogate(&ch, None, &exp, &cfg, None), Err(SubproblemError::Precondition(_))));
        let (cfg, ch, mut exp) = setup(3);
        exp.powers_prev = PowerAllocation::uniform(2, 11.0);
        assert!(matches!(build_surrogate(&ch, None, &exp, &cfg, None), Err(SubproblemError::Precondition(_))));
    }

    #[test]
    fn nullspace_basis_examples() {
        let mut cfg = default_config();
        cfg.n_tx = 2;
        cfg.n_d2d = 1;
        let ch = ChannelSet {
            bs_to_cue: vec![CVector::from_vec(vec![real(1.0), real(1.0)])],
            d2d_to_cue: CMatrix::zeros(1, 1),
            d2d_to_d2d: CMatrix::from_element(1, 1, real(1.0)),
            bs_to_d2drx: vec![CVector::from_vec(vec![real(1.0), real(0.0)])],
        };
        let v = zf_nullspace_basis(&ch, &cfg).unwrap();
        assert_eq!(v.shape(), (2, 1));
        assert!(v[(0, 0)].norm() < 1e-12);
        assert!((v[(1, 0)].norm() - 1.0).abs() < 1e-12);

        cfg.n_tx = 1;
        assert!(matches!(zf_nullspace_basis(&ch, &cfg), Err(SubproblemError::Dimension(_))));
    }

    #[test]
    fn nullspace_basis_is_orthonormal_and_orthogonal() {
        for seed in 0..10 {
            let (cfg, ch, _) = setup(seed);
            let v = zf_nullspace_basis(&ch, &cfg).unwrap();
            assert_eq!(v.shape(), (8, 6));
            let gram = v.adjoint() * &v;
            assert!((gram - CMatrix::identity(6, 6)).iter().all(|z| z.norm() < 1e-12));
            for f in &ch.bs_to_d2drx {
                assert!((f.adjoint() * &v).norm() <= 1e-10 * f.norm());
            }
        }
    }

    #[test]
    fn dependent_channels_rejected() {
        let (cfg, mut ch, _) = setup(4);
        ch.bs_to_d2drx[1] = ch.bs_to_d2drx[0].scale(2.0);
        assert!(matches!(zf_nullspace_basis(&ch, &cfg), Err(SubproblemError::Conditioning { .. })));
    }

    #[test]
    fn solver_improves_surrogate_and_respects_constraints() {
        let (cfg, ch, exp) = setup(5);
        let env = build_radar_environment(&cfg);
        let q = sensing_constraint_coeff(&env, &exp.cov_prev).unwrap();
        let model = build_surrogate(&ch, Some(&q), &exp, &cfg, None).unwrap();
        let sol = solve_surrogate(&model, &cfg).unwrap();
        assert_eq!(sol.status, SubproblemStatus::Optimal);
        assert!(sol.objective >= model.objective(&exp.cov_prev, &exp.powers_prev) - 1e-9);
        assert!(sol.cov.total_power() <= cfg.bs_power_budget * (1.0 + 1e-9));
        assert!(q.apply(&sol.cov.total) >= cfg.scnr_threshold_linear() * (1.0 - 1e-9));
        sol.cov.validate(cfg.bs_power_budget).unwrap();
        sol.powers.validate(cfg.d2d_power_budget).unwrap();
    }

    #[test]
    fn unreachable_threshold_reports_infeasible() {
        let (mut cfg, ch, exp) = setup(6);
        let env = build_radar_environment(&cfg);
        let q = sensing_constraint_coeff(&env, &exp.cov_prev).unwrap();
        let bound = cfg.bs_power_budget * crate::linalg::max_eigenvalue(&q.q_matrix);
        cfg.scnr_threshold = crate::scenario::to_decibels(bound) + 0.5;
        let model = build_surrogate(&ch, Some(&q), &exp, &cfg, None).unwrap();
        let sol = solve_surrogate(&model, &cfg).unwrap();
        assert_eq!(sol.status, SubproblemStatus::Infeasible);
        assert!((sol.max_sensing.unwrap() / bound - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dump_lists_dimensions() {
        let (cfg, ch, exp) = setup(7);
        let env = build_radar_environment(&cfg);
        let q = sensing_constraint_coeff(&env, &exp.cov_prev).unwrap();
        let model = build_surrogate(&ch, Some(&q), &exp, &cfg, None).unwrap();
        let mut buf = Vec::new();
        model.write_dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("n_tx=8 n_cue=3 n_d2d=2"));
        assert!(text.contains("Q[7]="));
    }
}
