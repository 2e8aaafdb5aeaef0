//! Barrier interior-point method for maximizing
//!
//! ```text
//!   f(x) = sum_i w_i log2(c_i + <a_i, x>) + <l, x> + l_0
//! ```
//!
//! over `x = (X_1, .., X_B, y)` with Hermitian PSD blocks `X_b`, box-bounded
//! reals `y`, and linear inequalities `<g_j, x> <= b_j`. The inner product is
//! `sum_b Re tr(A_b X_b) + sum_i a_i y_i`.
//!
//! Newton systems are solved without forming the Hessian: the block barrier
//! Hessian `X^{-1} (.) X^{-1}` inverts in closed form as `X (.) X`, and the
//! log terms and linear constraints contribute rank-one updates, so each
//! step reduces to a small Woodbury capacitance system.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{inner_re, trace_re};
use crate::{CMatrix, CVector, C64};

const LN2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("starting point is not strictly feasible: {0}")]
    InfeasibleStart(String),

    #[error("malformed program: {0}")]
    Malformed(String),
}

/// An element of the product space: Hermitian blocks plus reals. Used for
/// points, directions, gradients and linear functionals alike.
#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub blocks: Vec<CMatrix>,
    pub scalars: Vec<f64>,
}

impl Element {
    pub fn zeros(block_dims: &[usize], n_scalars: usize) -> Self {
        Element {
            blocks: block_dims.iter().map(|&n| CMatrix::zeros(n, n)).collect(),
            scalars: vec![0.0; n_scalars],
        }
    }

    pub fn inner(&self, other: &Element) -> f64 {
        let b: f64 = self.blocks.iter().zip(&other.blocks).map(|(a, x)| inner_re(a, x)).sum();
        let s: f64 = self.scalars.iter().zip(&other.scalars).map(|(a, x)| a * x).sum();
        b + s
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Element) {
        let a = C64::new(alpha, 0.0);
        for (x, y) in self.blocks.iter_mut().zip(&other.blocks) {
            x.zip_apply(y, |p, q| *p += a * q);
        }
        for (x, y) in self.scalars.iter_mut().zip(&other.scalars) {
            *x += alpha * y;
        }
    }

    pub fn scaled(&self, alpha: f64) -> Element {
        Element {
            blocks: self.blocks.iter().map(|b| b.scale(alpha)).collect(),
            scalars: self.scalars.iter().map(|s| s * alpha).collect(),
        }
    }

    fn shape_matches(&self, dims: &[usize], n_scalars: usize) -> bool {
        self.blocks.len() == dims.len()
            && self.blocks.iter().zip(dims).all(|(b, &n)| b.nrows() == n && b.ncols() == n)
            && self.scalars.len() == n_scalars
    }
}

/// `weight * log2(offset + <map, x>)`.
#[derive(Debug, Clone)]
pub struct LogTerm {
    pub weight: f64,
    pub offset: f64,
    pub map: Element,
}

/// `<map, x> <= bound`.
#[derive(Debug, Clone)]
pub struct LinearConstraint {
    pub map: Element,
    pub bound: f64,
}

#[derive(Debug, Clone)]
pub struct ConvexProgram {
    pub block_dims: Vec<usize>,
    /// Strict lower/upper bounds for each scalar variable.
    pub scalar_bounds: Vec<(f64, f64)>,
    pub log_terms: Vec<LogTerm>,
    pub linear: Element,
    pub linear_constant: f64,
    pub constraints: Vec<LinearConstraint>,
}

impl ConvexProgram {
    pub fn n_scalars(&self) -> usize {
        self.scalar_bounds.len()
    }

    /// Barrier parameter count; the duality gap at the central point for
    /// barrier weight `t` is `barrier_degree / t`.
    pub fn barrier_degree(&self) -> f64 {
        let blocks: usize = self.block_dims.iter().sum();
        (blocks + 2 * self.n_scalars() + self.constraints.len()) as f64
    }

    pub fn objective(&self, x: &Element) -> f64 {
        let mut f = self.linear.inner(x) + self.linear_constant;
        for term in &self.log_terms {
            f += term.weight * (term.offset + term.map.inner(x)).log2();
        }
        f
    }

    fn check(&self) -> Result<(), SolverError> {
        let dims = &self.block_dims;
        let ns = self.n_scalars();
        if !self.linear.shape_matches(dims, ns) {
            return Err(SolverError::Malformed("linear objective shape".into()));
        }
        for t in &self.log_terms {
            if !t.map.shape_matches(dims, ns) || t.weight < 0.0 {
                return Err(SolverError::Malformed("log term shape or negative weight".into()));
            }
        }
        for c in &self.constraints {
            if !c.map.shape_matches(dims, ns) {
                return Err(SolverError::Malformed("constraint shape".into()));
            }
        }
        for &(lo, hi) in &self.scalar_bounds {
            if !(lo < hi) {
                return Err(SolverError::Malformed("empty scalar interval".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverSettings {
    /// Stop once `barrier_degree / t` falls below this.
    pub gap_tol: f64,
    pub initial_t: f64,
    pub t_growth: f64,
    pub centering_tol: f64,
    pub max_newton_steps: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { gap_tol: 1e-8, initial_t: 1.0, t_growth: 20.0, centering_tol: 1e-10, max_newton_steps: 800 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverStatus {
    Optimal,
    MaxIterations,
    /// The line search could not improve a point that is not yet central.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct SolverOutcome {
    pub point: Element,
    pub objective: f64,
    /// Upper bound on `optimum - objective`.
    pub gap: f64,
    pub status: SolverStatus,
    pub newton_steps: usize,
}

/// Quantities of the barrier function at one strictly feasible point.
struct Local {
    inverses: Vec<CMatrix>,
    log_det: f64,
    lower_slack: Vec<f64>,
    upper_slack: Vec<f64>,
    cons_slack: Vec<f64>,
    log_args: Vec<f64>,
}

impl Local {
    fn at(p: &ConvexProgram, x: &Element) -> Option<Local> {
        let mut inverses = Vec::with_capacity(x.blocks.len());
        let mut log_det = 0.0;
        for b in &x.blocks {
            let chol = crate::linalg::cholesky(b)?;
            log_det += chol.l_dirty().diagonal().iter().map(|z| 2.0 * z.re.ln()).sum::<f64>();
            inverses.push(chol.inverse());
        }
        let mut lower_slack = Vec::with_capacity(x.scalars.len());
        let mut upper_slack = Vec::with_capacity(x.scalars.len());
        for (&y, &(lo, hi)) in x.scalars.iter().zip(&p.scalar_bounds) {
            let (a, b) = (y - lo, hi - y);
            if !(a > 0.0 && b > 0.0) {
                return None;
            }
            lower_slack.push(a);
            upper_slack.push(b);
        }
        let mut cons_slack = Vec::with_capacity(p.constraints.len());
        for c in &p.constraints {
            let s = c.bound - c.map.inner(x);
            if !(s > 0.0) {
                return None;
            }
            cons_slack.push(s);
        }
        let mut log_args = Vec::with_capacity(p.log_terms.len());
        for t in &p.log_terms {
            let a = t.offset + t.map.inner(x);
            if !(a > 0.0) {
                return None;
            }
            log_args.push(a);
        }
        if !log_det.is_finite() {
            return None;
        }
        Some(Local { inverses, log_det, lower_slack, upper_slack, cons_slack, log_args })
    }

    /// Barrier-augmented objective to minimize: `-t f(x) - log barriers`.
    fn value(&self, p: &ConvexProgram, x: &Element, t: f64) -> f64 {
        let mut f = p.linear.inner(x) + p.linear_constant;
        for (term, a) in p.log_terms.iter().zip(&self.log_args) {
            f += term.weight * a.log2();
        }
        let barrier = -self.log_det
            - self.lower_slack.iter().map(|s| s.ln()).sum::<f64>()
            - self.upper_slack.iter().map(|s| s.ln()).sum::<f64>()
            - self.cons_slack.iter().map(|s| s.ln()).sum::<f64>();
        -t * f + barrier
    }

    fn gradient(&self, p: &ConvexProgram, t: f64) -> Element {
        let mut g = p.linear.scaled(-t);
        for (term, a) in p.log_terms.iter().zip(&self.log_args) {
            g.axpy(-t * term.weight / (LN2 * a), &term.map);
        }
        for (gb, s) in g.blocks.iter_mut().zip(&self.inverses) {
            *gb -= s;
        }
        for (i, gs) in g.scalars.iter_mut().enumerate() {
            *gs += -1.0 / self.lower_slack[i] + 1.0 / self.upper_slack[i];
        }
        for (c, s) in p.constraints.iter().zip(&self.cons_slack) {
            g.axpy(1.0 / s, &c.map);
        }
        g
    }

    /// Rank-one Hessian contributions `v v^T` as `(map index, scale)` with
    /// `v = scale * map`; log terms first, then constraints.
    fn low_rank(&self, p: &ConvexProgram, t: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::with_capacity(p.log_terms.len() + p.constraints.len());
        for (i, (term, a)) in p.log_terms.iter().zip(&self.log_args).enumerate() {
            let c = t * term.weight / (LN2 * a * a);
            if c > 0.0 {
                out.push((i, c.sqrt()));
            }
        }
        for (j, s) in self.cons_slack.iter().enumerate() {
            out.push((p.log_terms.len() + j, 1.0 / s));
        }
        out
    }

    fn scalar_diag(&self) -> Vec<f64> {
        self.lower_slack
            .iter()
            .zip(&self.upper_slack)
            .map(|(a, b)| 1.0 / (a * a) + 1.0 / (b * b))
            .collect()
    }
}

/// Block-diagonal part `D` of the Hessian and its closed-form inverse.
struct DiagPart<'a> {
    x: &'a Element,
    inverses: &'a [CMatrix],
    scalar_diag: Vec<f64>,
}

impl DiagPart<'_> {
    fn apply(&self, v: &Element) -> Element {
        Element {
            blocks: v.blocks.iter().zip(self.inverses).map(|(d, s)| herm(&(s * d * s))).collect(),
            scalars: v.scalars.iter().zip(&self.scalar_diag).map(|(a, d)| a * d).collect(),
        }
    }

    fn solve(&self, v: &Element) -> Element {
        Element {
            blocks: v.blocks.iter().zip(&self.x.blocks).map(|(d, x)| herm(&(x * d * x))).collect(),
            scalars: v.scalars.iter().zip(&self.scalar_diag).map(|(a, d)| a / d).collect(),
        }
    }
}

/// One block of a map, factored once per solve so `X B X` costs
/// matrix-vector products when `B` has low rank.
#[derive(Debug, Clone)]
enum BlockForm {
    Zero,
    /// `sum_k w_k f_k f_k^H`.
    Factored(Vec<(f64, CVector)>),
    Dense,
}

const MAX_FACTORED_RANK: usize = 2;

fn analyze_block(b: &CMatrix) -> BlockForm {
    let scale = b.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return BlockForm::Zero;
    }
    let (vals, vecs) = crate::linalg::hermitian_eigen(b);
    let top = vals.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let kept: Vec<usize> = (0..vals.len()).filter(|&k| vals[k].abs() > 1e-13 * top).collect();
    if kept.len() > MAX_FACTORED_RANK || 2 * kept.len() > b.nrows() {
        return BlockForm::Dense;
    }
    let factors: Vec<(f64, CVector)> = kept.iter().map(|&k| (vals[k], vecs.column(k).into_owned())).collect();
    let mut residual = b.clone();
    for (w, f) in &factors {
        residual -= (f * f.adjoint()).scale(*w);
    }
    if residual.iter().any(|z| z.norm() > 1e-12 * scale) {
        return BlockForm::Dense;
    }
    BlockForm::Factored(factors)
}

fn analyze(el: &Element) -> Vec<BlockForm> {
    let mut out: Vec<BlockForm> = Vec::with_capacity(el.blocks.len());
    for (j, b) in el.blocks.iter().enumerate() {
        if j > 0 && *b == el.blocks[j - 1] {
            let prev = out[j - 1].clone();
            out.push(prev);
        } else {
            out.push(analyze_block(b));
        }
    }
    out
}

impl DiagPart<'_> {
    /// `D^{-1} (scale * map)` using the factored blocks of `map`.
    fn solve_structured(&self, map: &Element, forms: &[BlockForm], scale: f64) -> Element {
        let blocks = map
            .blocks
            .iter()
            .zip(forms)
            .zip(&self.x.blocks)
            .map(|((b, form), x)| match form {
                BlockForm::Zero => CMatrix::zeros(b.nrows(), b.ncols()),
                BlockForm::Factored(list) => {
                    let mut acc = CMatrix::zeros(b.nrows(), b.ncols());
                    for (w, f) in list {
                        let xf = x * f;
                        acc += (&xf * xf.adjoint()).scale(w * scale);
                    }
                    acc
                }
                BlockForm::Dense => herm(&(x * b * x)).scale(scale),
            })
            .collect();
        Element {
            blocks,
            scalars: map.scalars.iter().zip(&self.scalar_diag).map(|(a, d)| scale * a / d).collect(),
        }
    }
}

fn herm(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()).scale(0.5)
}

/// Solves `(D + sum v_i v_i^T) dx = rhs` by Woodbury with one refinement pass.
fn newton_solve(
    diag: &DiagPart<'_>,
    maps: &[&Element],
    forms: &[Vec<BlockForm>],
    low_rank_spec: &[(usize, f64)],
    rhs: &Element,
) -> Element {
    let m = low_rank_spec.len();
    let low_rank: Vec<Element> = low_rank_spec.iter().map(|&(i, s)| maps[i].scaled(s)).collect();
    let dinv_v: Vec<Element> =
        low_rank_spec.iter().map(|&(i, s)| diag.solve_structured(maps[i], &forms[i], s)).collect();
    let mut cap = DMatrix::<f64>::identity(m, m);
    for i in 0..m {
        for j in i..m {
            let g = low_rank[i].inner(&dinv_v[j]);
            cap[(i, j)] += g;
            if i != j {
                cap[(j, i)] += g;
            }
        }
    }
    let cap_chol = Cholesky::new(cap.clone());
    let cap_lu = cap.lu();
    let solve_small = |b: DVector<f64>| -> DVector<f64> {
        match &cap_chol {
            Some(c) => c.solve(&b),
            None => cap_lu.solve(&b).unwrap_or_else(|| DVector::zeros(b.len())),
        }
    };
    let apply_inverse = |r: &Element| -> Element {
        let z = diag.solve(r);
        if m == 0 {
            return z;
        }
        let proj = DVector::from_iterator(m, low_rank.iter().map(|v| v.inner(&z)));
        let alpha = solve_small(proj);
        let mut out = z;
        for (a, y) in alpha.iter().zip(&dinv_v) {
            out.axpy(-a, y);
        }
        out
    };
    let mut dx = apply_inverse(rhs);
    // One step of iterative refinement against the exact operator.
    let mut hx = diag.apply(&dx);
    for v in &low_rank {
        hx.axpy(v.inner(&dx), v);
    }
    let mut resid = rhs.clone();
    resid.axpy(-1.0, &hx);
    let corr = apply_inverse(&resid);
    dx.axpy(1.0, &corr);
    dx
}

/// Largest step in `(0, 1]` keeping the linear slacks positive (scaled by 0.99).
fn linear_step_limit(p: &ConvexProgram, x: &Element, dx: &Element) -> f64 {
    let mut limit: f64 = 1.0;
    for ((&y, &d), &(lo, hi)) in x.scalars.iter().zip(&dx.scalars).zip(&p.scalar_bounds) {
        if d < 0.0 {
            limit = limit.min(0.99 * (y - lo) / -d);
        } else if d > 0.0 {
            limit = limit.min(0.99 * (hi - y) / d);
        }
    }
    for c in &p.constraints {
        let rate = c.map.inner(dx);
        if rate > 0.0 {
            limit = limit.min(0.99 * (c.bound - c.map.inner(x)) / rate);
        }
    }
    limit
}

pub fn is_strictly_feasible(program: &ConvexProgram, x: &Element) -> bool {
    Local::at(program, x).is_some()
}

/// Maximizes `program` starting from the strictly feasible `start`.
/// Relative resolution below which a predicted barrier decrease is noise.
const ROUNDING_FLOOR: f64 = 64.0 * f64::EPSILON;
/// Squared Newton decrement up to which a point that admits no further
/// descent still counts as central.
const STALL_DECREMENT: f64 = 1e-6;

pub fn maximize(program: &ConvexProgram, start: Element, settings: &SolverSettings) -> Result<SolverOutcome, SolverError> {
    program.check()?;
    if !start.shape_matches(&program.block_dims, program.n_scalars()) {
        return Err(SolverError::Malformed("start point shape".into()));
    }
    let mut x = start;
    for b in &mut x.blocks {
        *b = herm(b);
    }
    if Local::at(program, &x).is_none() {
        return Err(SolverError::InfeasibleStart(describe_violation(program, &x)));
    }

    let maps: Vec<&Element> =
        program.log_terms.iter().map(|t| &t.map).chain(program.constraints.iter().map(|c| &c.map)).collect();
    let forms: Vec<Vec<BlockForm>> = maps.iter().map(|m| analyze(m)).collect();

    let degree = program.barrier_degree();
    let mut t = settings.initial_t;
    let mut steps = 0usize;
    let mut status = SolverStatus::Optimal;

    let mut local = Local::at(program, &x).expect("start checked above");
    'outer: loop {
        // Centering.
        loop {
            let grad = local.gradient(program, t);
            let low_rank = local.low_rank(program, t);
            let diag = DiagPart { x: &x, inverses: &local.inverses, scalar_diag: local.scalar_diag() };
            let dx = newton_solve(&diag, &maps, &forms, &low_rank, &grad.scaled(-1.0));
            let slope = grad.inner(&dx);
            let decrement_sq = -slope;
            if !(decrement_sq > 2.0 * settings.centering_tol) {
                break;
            }
            let f0 = local.value(program, &x, t);
            if 0.5 * decrement_sq <= ROUNDING_FLOOR * f0.abs() {
                // Further progress is below the resolution of the barrier value.
                break;
            }
            steps += 1;
            if steps > settings.max_newton_steps {
                status = SolverStatus::MaxIterations;
                break 'outer;
            }
            let mut alpha = linear_step_limit(program, &x, &dx);
            let mut accepted = false;
            for _ in 0..60 {
                let mut trial = x.clone();
                trial.axpy(alpha, &dx);
                if let Some(l) = Local::at(program, &trial) {
                    let f1 = l.value(program, &trial, t);
                    if f1 < f0 && f1 <= f0 + 0.25 * alpha * slope {
                        x = trial;
                        local = l;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                if decrement_sq > STALL_DECREMENT {
                    status = SolverStatus::Stalled;
                    break 'outer;
                }
                break;
            }
        }
        if degree / t <= settings.gap_tol {
            break;
        }
        t *= settings.t_growth;
    }

    let objective = program.objective(&x);
    Ok(SolverOutcome { point: x, objective, gap: degree / t, status, newton_steps: steps })
}

fn describe_violation(p: &ConvexProgram, x: &Element) -> String {
    for (i, b) in x.blocks.iter().enumerate() {
        if crate::linalg::cholesky(b).is_none() {
            return format!("block {i} not positive definite (trace {:e})", trace_re(b));
        }
    }
    for (i, (&y, &(lo, hi))) in x.scalars.iter().zip(&p.scalar_bounds).enumerate() {
        if !(y > lo && y < hi) {
            return format!("scalar {i} = {y} outside ({lo}, {hi})");
        }
    }
    for (j, c) in p.constraints.iter().enumerate() {
        let v = c.map.inner(x);
        if !(v < c.bound) {
            return format!("constraint {j}: {v:e} >= {:e}", c.bound);
        }
    }
    "log argument nonpositive".to_string()
}
