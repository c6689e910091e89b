//! Primal log-barrier method for small dense semidefinite programs
//!
//! ```text
//! minimize    cᵀx − Σ_k w_k log det G_k(x)
//! subject to  F_j(x) ⪰ 0,  a_lᵀx + b_l ≥ 0
//! ```
//!
//! with every `F_j`, `G_k` affine in `x`. A Phase-I problem finds a strictly
//! feasible start when none is supplied.

use nalgebra::Cholesky;

use super::{symmetric_eigen, Matrix, NumericsError, SymMatrix};

pub const MAX_SDP_VARIABLES: usize = 200;
pub const MAX_LMI_DIM: usize = 60;

/// `F(x) = F_0 + Σ x_i F_i`, with only the nonzero `F_i` listed.
#[derive(Debug, Clone)]
pub struct AffineMatrix {
    pub constant: SymMatrix,
    pub terms: Vec<(usize, SymMatrix)>,
}

impl AffineMatrix {
    pub fn new(constant: SymMatrix) -> Self {
        AffineMatrix { constant, terms: Vec::new() }
    }

    pub fn with_term(mut self, var: usize, coeff: SymMatrix) -> Self {
        self.terms.push((var, coeff));
        self
    }

    pub fn add_term(&mut self, var: usize, coeff: SymMatrix) {
        self.terms.push((var, coeff));
    }

    pub fn dim(&self) -> usize {
        self.constant.dim()
    }

    pub fn eval(&self, x: &[f64]) -> Matrix {
        let mut m = self.constant.as_matrix().clone();
        for (i, fi) in &self.terms {
            m += fi.as_matrix() * x[*i];
        }
        m
    }
}

/// `b + Σ a_i x_i ≥ 0`.
#[derive(Debug, Clone)]
pub struct LinearInequality {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl LinearInequality {
    pub fn new(constant: f64, terms: Vec<(usize, f64)>) -> Self {
        LinearInequality { constant, terms }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(i, a)| a * x[*i]).sum::<f64>()
    }
}

#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub lmis: Vec<AffineMatrix>,
    pub linear: Vec<LinearInequality>,
    /// `(w, G)` adds `−w·log det G(x)` to the objective; `G ≻ 0` is implied.
    pub log_det_terms: Vec<(f64, AffineMatrix)>,
}

impl SdpProblem {
    pub fn new(num_vars: usize) -> Self {
        SdpProblem {
            num_vars,
            objective: vec![0.0; num_vars],
            lmis: Vec::new(),
            linear: Vec::new(),
            log_det_terms: Vec::new(),
        }
    }

    fn validate(&self) -> Result<(), NumericsError> {
        if self.num_vars == 0 {
            return Err(NumericsError::InvalidArgument("no decision variables".into()));
        }
        if self.num_vars > MAX_SDP_VARIABLES {
            return Err(NumericsError::ProblemTooLarge(format!(
                "{} variables (cap {MAX_SDP_VARIABLES})",
                self.num_vars
            )));
        }
        if self.objective.len() != self.num_vars {
            return Err(NumericsError::DimensionMismatch(format!(
                "objective length {} for {} variables",
                self.objective.len(),
                self.num_vars
            )));
        }
        let mats = self.lmis.iter().chain(self.log_det_terms.iter().map(|(_, g)| g));
        for f in mats {
            if f.dim() > MAX_LMI_DIM {
                return Err(NumericsError::ProblemTooLarge(format!(
                    "LMI block of dimension {} (cap {MAX_LMI_DIM})",
                    f.dim()
                )));
            }
            for (i, fi) in &f.terms {
                if *i >= self.num_vars || fi.dim() != f.dim() {
                    return Err(NumericsError::DimensionMismatch("LMI coefficient".into()));
                }
            }
        }
        for l in &self.linear {
            if l.terms.iter().any(|(i, _)| *i >= self.num_vars) {
                return Err(NumericsError::DimensionMismatch("linear constraint index".into()));
            }
        }
        if self.log_det_terms.iter().any(|(w, _)| !(*w > 0.0)) {
            return Err(NumericsError::InvalidArgument("log-det weights must be positive".into()));
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> Option<f64> {
        let mut v: f64 = self.objective.iter().zip(x).map(|(c, xi)| c * xi).sum();
        for (w, g) in &self.log_det_terms {
            v -= w * Cholesky::new(g.eval(x))?.ln_determinant();
        }
        Some(v)
    }

    /// Smallest eigenvalue over all matrix blocks and smallest linear slack.
    pub fn min_slack(&self, x: &[f64]) -> f64 {
        let mut m = f64::INFINITY;
        let mats = self.lmis.iter().chain(self.log_det_terms.iter().map(|(_, g)| g));
        for f in mats {
            let e = symmetric_eigen(&SymMatrix::from_symmetric_part(f.eval(x)));
            m = m.min(e.min());
        }
        for l in &self.linear {
            m = m.min(l.eval(x));
        }
        m
    }
}

#[derive(Debug, Clone)]
pub struct SdpOptions {
    /// Optional starting point; Phase I runs when it is missing or not
    /// strictly feasible.
    pub initial_point: Option<Vec<f64>>,
    /// Target bound on the duality gap relative to `max(1, |objective|)`.
    pub rel_tol: f64,
    pub max_outer_iterations: usize,
    pub max_newton_iterations: usize,
    pub barrier_growth: f64,
}

impl Default for SdpOptions {
    fn default() -> Self {
        SdpOptions {
            initial_point: None,
            rel_tol: 1e-8,
            max_outer_iterations: 200,
            max_newton_iterations: 20_000,
            barrier_growth: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    /// Duality-gap bound below tolerance.
    Optimal,
    /// Objective stopped moving (relative change < 1e-9 over 5 outer steps).
    Stalled,
    /// Iteration budget exhausted; the point is feasible but not certified.
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: SdpStatus,
    /// Upper bound on `objective − optimum` at the last centering.
    pub gap_bound: f64,
    /// Result of the independent eigenvalue re-check.
    pub min_eigenvalue: f64,
    pub newton_iterations: usize,
}

/// The barrier `t·(cᵀx − Σ w log det G) − Σ log det F − Σ log s` and friends.
struct Barrier<'a> {
    c: &'a [f64],
    blocks: Vec<(&'a AffineMatrix, BlockKind)>,
    linear: &'a [LinearInequality],
    n: usize,
}

#[derive(Clone, Copy)]
enum BlockKind {
    Constraint,
    Objective(f64),
}

impl<'a> Barrier<'a> {
    fn new(p: &'a SdpProblem) -> Self {
        let mut blocks: Vec<(&AffineMatrix, BlockKind)> =
            p.lmis.iter().map(|f| (f, BlockKind::Constraint)).collect();
        blocks.extend(p.log_det_terms.iter().map(|(w, g)| (g, BlockKind::Objective(*w))));
        Barrier { c: &p.objective, blocks, linear: &p.linear, n: p.num_vars }
    }

    fn weight(kind: BlockKind, t: f64) -> f64 {
        match kind {
            BlockKind::Constraint => 1.0,
            BlockKind::Objective(w) => t * w,
        }
    }

    fn value(&self, x: &[f64], t: f64) -> Option<f64> {
        let mut v = t * self.c.iter().zip(x).map(|(c, xi)| c * xi).sum::<f64>();
        for (f, kind) in &self.blocks {
            let ch = Cholesky::new(f.eval(x))?;
            v -= Self::weight(*kind, t) * ch.ln_determinant();
        }
        for l in self.linear {
            let s = l.eval(x);
            if !(s > 0.0) {
                return None;
            }
            v -= s.ln();
        }
        v.is_finite().then_some(v)
    }

    fn grad_hess(&self, x: &[f64], t: f64) -> Option<(Vec<f64>, Matrix)> {
        let n = self.n;
        let mut g: Vec<f64> = self.c.iter().map(|c| t * c).collect();
        let mut h = Matrix::zeros(n, n);
        for (f, kind) in &self.blocks {
            let w = Self::weight(*kind, t);
            let ch = Cholesky::new(f.eval(x))?;
            let l = ch.l();
            // M_i = L⁻¹ F_i L⁻ᵀ, so tr(F⁻¹F_i) = tr M_i and
            // tr(F⁻¹F_iF⁻¹F_j) = ⟨M_i, M_j⟩.
            let ms: Vec<(usize, Matrix)> = f
                .terms
                .iter()
                .map(|(i, fi)| {
                    let y = l.solve_lower_triangular(fi.as_matrix()).expect("triangular solve");
                    let m = l.solve_lower_triangular(&y.transpose()).expect("triangular solve");
                    (*i, m)
                })
                .collect();
            for (a, (i, mi)) in ms.iter().enumerate() {
                g[*i] -= w * mi.trace();
                for (b, (j, mj)) in ms.iter().enumerate().skip(a) {
                    let v = w * mi.dot(mj);
                    h[(*i, *j)] += v;
                    if a != b {
                        h[(*j, *i)] += v;
                    }
                }
            }
        }
        for l in self.linear {
            let s = l.eval(x);
            if !(s > 0.0) {
                return None;
            }
            for (i, ai) in &l.terms {
                g[*i] -= ai / s;
                for (j, aj) in &l.terms {
                    h[(*i, *j)] += ai * aj / (s * s);
                }
            }
        }
        Some((g, h))
    }

    fn barrier_order(&self) -> f64 {
        let m: usize = self
            .blocks
            .iter()
            .filter(|(_, k)| matches!(k, BlockKind::Constraint))
            .map(|(f, _)| f.dim())
            .sum();
        (m + self.linear.len()) as f64
    }
}

fn newton_direction(g: &[f64], h: &Matrix) -> Option<Vec<f64>> {
    let n = g.len();
    let scale = (0..n).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let rhs = Matrix::from_iterator(n, 1, g.iter().map(|v| -v));
    let mut shift = 0.0;
    for _ in 0..12 {
        let mut hs = h.clone();
        for i in 0..n {
            hs[(i, i)] += shift;
        }
        if let Some(ch) = Cholesky::new(hs) {
            let d = ch.solve(&rhs);
            if d.iter().all(|v| v.is_finite()) {
                return Some(d.iter().copied().collect());
            }
        }
        shift = if shift == 0.0 { 1e-14 * scale } else { shift * 100.0 };
    }
    None
}

const MAX_CENTERING_STEPS: usize = 500;

enum Centering {
    Done,
    Budget,
    Escaped,
}

/// Damped Newton on the barrier at fixed `t`. `stop` is polled after every
/// step and may end the centering early (used by Phase I).
fn center(
    bar: &Barrier,
    x: &mut Vec<f64>,
    t: f64,
    budget: &mut usize,
    stop: &dyn Fn(&[f64]) -> bool,
) -> Centering {
    // Near the centre the decrement sinks below the rounding noise of the
    // barrier value, so both the tolerance and the step count are capped.
    for _ in 0..MAX_CENTERING_STEPS {
        if *budget == 0 {
            return Centering::Budget;
        }
        *budget -= 1;
        let Some((g, h)) = bar.grad_hess(x, t) else { return Centering::Done };
        let Some(dx) = newton_direction(&g, &h) else { return Centering::Done };
        let dec: f64 = -g.iter().zip(&dx).map(|(a, b)| a * b).sum::<f64>();
        if dec / 2.0 <= 1e-9 {
            return Centering::Done;
        }
        let Some(f0) = bar.value(x, t) else { return Centering::Done };
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha > 1e-14 {
            let xn: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + alpha * d).collect();
            if let Some(fv) = bar.value(&xn, t) {
                if fv <= f0 - 0.25 * alpha * dec {
                    *x = xn;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Centering::Done;
        }
        if x.iter().any(|v| !v.is_finite() || v.abs() > 1e14) {
            return Centering::Escaped;
        }
        if stop(x) {
            return Centering::Done;
        }
    }
    Centering::Done
}

fn strictly_feasible(p: &SdpProblem, x: &[f64]) -> bool {
    let mats = p.lmis.iter().chain(p.log_det_terms.iter().map(|(_, g)| g));
    for f in mats {
        if Cholesky::new(f.eval(x)).is_none() {
            return false;
        }
    }
    p.linear.iter().all(|l| l.eval(x) > 0.0)
}

/// Phase I: minimize `s` subject to `F_j(x) + sI ≻ 0`, `G_k(x) + sI ≻ 0`,
/// `a_lᵀx + b_l + s > 0`, `s ≥ −1`, stopping once a strictly feasible `x`
/// for the original problem appears.
fn phase_one(p: &SdpProblem, x0: Vec<f64>, budget: &mut usize) -> Result<Vec<f64>, NumericsError> {
    let n = p.num_vars;
    let s_idx = n;
    let mut aux = SdpProblem::new(n + 1);
    aux.objective[s_idx] = 1.0;
    let mats = p.lmis.iter().chain(p.log_det_terms.iter().map(|(_, g)| g));
    for f in mats {
        aux.lmis.push(f.clone().with_term(s_idx, SymMatrix::identity(f.dim())));
    }
    for l in &p.linear {
        let mut terms = l.terms.clone();
        terms.push((s_idx, 1.0));
        aux.linear.push(LinearInequality::new(l.constant, terms));
    }
    aux.linear.push(LinearInequality::new(1.0, vec![(s_idx, 1.0)]));

    let viol = -p.min_slack(&x0);
    let mut x = x0;
    x.push(viol.max(0.0) + 1.0);

    let bar = Barrier::new(&aux);
    let order = bar.barrier_order();
    let stop = |z: &[f64]| z[s_idx] < 0.0 && strictly_feasible(p, &z[..n]);
    let mut t = 1.0;
    for _ in 0..200 {
        match center(&bar, &mut x, t, budget, &stop) {
            Centering::Budget => break,
            Centering::Escaped => break,
            Centering::Done => {}
        }
        if stop(&x) {
            x.truncate(n);
            return Ok(x);
        }
        if order / t < 1e-10 {
            break;
        }
        t *= 10.0;
    }
    if stop(&x) {
        x.truncate(n);
        return Ok(x);
    }
    Err(NumericsError::Infeasible(format!(
        "phase I ended with constraint violation {:.3e}",
        x[s_idx].max(0.0)
    )))
}

pub fn solve_small_sdp(p: &SdpProblem, opts: &SdpOptions) -> Result<SdpSolution, NumericsError> {
    p.validate()?;
    let n = p.num_vars;
    let mut budget = opts.max_newton_iterations;
    let x0 = match &opts.initial_point {
        Some(v) if v.len() == n => v.clone(),
        Some(v) => {
            return Err(NumericsError::DimensionMismatch(format!(
                "initial point of length {} for {n} variables",
                v.len()
            )))
        }
        None => vec![0.0; n],
    };
    let mut x = if strictly_feasible(p, &x0) { x0 } else { phase_one(p, x0, &mut budget)? };

    let bar = Barrier::new(p);
    let order = bar.barrier_order().max(1.0);
    let never = |_: &[f64]| false;
    let mut t = {
        let obj = p.objective_value(&x).unwrap_or(0.0).abs();
        (order / obj.max(1.0)).max(1e-3)
    };
    let mut history: Vec<f64> = Vec::new();
    let mut status = SdpStatus::MaxIterations;
    for _ in 0..opts.max_outer_iterations {
        match center(&bar, &mut x, t, &mut budget, &never) {
            Centering::Escaped => return Err(NumericsError::Unbounded),
            Centering::Budget => break,
            Centering::Done => {}
        }
        let obj = p.objective_value(&x).ok_or_else(|| {
            NumericsError::Infeasible("iterate left the log-det domain".into())
        })?;
        if order / t <= opts.rel_tol * obj.abs().max(1.0) {
            status = SdpStatus::Optimal;
            break;
        }
        history.push(obj);
        if history.len() > 5 {
            let prev = history[history.len() - 6];
            if (obj - prev).abs() <= 1e-9 * obj.abs().max(1e-300) {
                status = SdpStatus::Stalled;
                break;
            }
        }
        t *= opts.barrier_growth;
    }

    let min_eigenvalue = p.min_slack(&x);
    if min_eigenvalue < -1e-8 {
        return Err(NumericsError::Infeasible(format!(
            "returned point fails eigenvalue re-check ({min_eigenvalue:.3e})"
        )));
    }
    let objective = p
        .objective_value(&x)
        .ok_or_else(|| NumericsError::Infeasible("log-det term not positive definite".into()))?;
    Ok(SdpSolution {
        x,
        objective,
        status,
        gap_bound: order / t,
        min_eigenvalue,
        newton_iterations: opts.max_newton_iterations - budget,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn largest_eigenvalue_as_sdp() {
        let mut p = SdpProblem::new(1);
        p.objective[0] = 1.0;
        p.lmis.push(
            AffineMatrix::new(SymMatrix::from_diagonal(&[-1.0, -2.0])).with_term(0, SymMatrix::identity(2)),
        );
        let s = solve_small_sdp(&p, &SdpOptions::default()).unwrap();
        assert!((s.x[0] - 2.0).abs() < 1e-6, "{:?}", s);
        assert!(s.min_eigenvalue >= -1e-8);
    }

    #[test]
    fn nonnegative_scalar() {
        let mut p = SdpProblem::new(1);
        p.objective[0] = 1.0;
        p.linear.push(LinearInequality::new(0.0, vec![(0, 1.0)]));
        let s = solve_small_sdp(&p, &SdpOptions::default()).unwrap();
        assert!(s.x[0].abs() < 1e-6);
        assert_eq!(s.status, SdpStatus::Optimal);
    }

    #[test]
    fn max_log_det_in_a_box() {
        // maximize log det diag(x0, x1) with x0 ≤ 2, x1 ≤ 3.
        let mut p = SdpProblem::new(2);
        let g = AffineMatrix::new(SymMatrix::zeros(2))
            .with_term(0, SymMatrix::from_diagonal(&[1.0, 0.0]))
            .with_term(1, SymMatrix::from_diagonal(&[0.0, 1.0]));
        p.log_det_terms.push((1.0, g));
        p.linear.push(LinearInequality::new(2.0, vec![(0, -1.0)]));
        p.linear.push(LinearInequality::new(3.0, vec![(1, -1.0)]));
        let s = solve_small_sdp(&p, &SdpOptions::default()).unwrap();
        assert!((s.x[0] - 2.0).abs() < 1e-6 && (s.x[1] - 3.0).abs() < 1e-6, "{:?}", s.x);
    }

    #[test]
    fn infeasible_problem() {
        let mut p = SdpProblem::new(1);
        p.linear.push(LinearInequality::new(-1.0, vec![(0, 1.0)]));
        p.linear.push(LinearInequality::new(0.0, vec![(0, -1.0)]));
        assert!(matches!(
            solve_small_sdp(&p, &SdpOptions::default()),
            Err(NumericsError::Infeasible(_))
        ));
    }

    #[test]
    fn unbounded_problem() {
        let mut p = SdpProblem::new(1);
        p.objective[0] = -1.0;
        p.linear.push(LinearInequality::new(0.0, vec![(0, 1.0)]));
        assert!(matches!(solve_small_sdp(&p, &SdpOptions::default()), Err(NumericsError::Unbounded)));
    }

    #[test]
    fn size_caps() {
        let p = SdpProblem::new(MAX_SDP_VARIABLES + 1);
        assert!(matches!(
            solve_small_sdp(&p, &SdpOptions::default()),
            Err(NumericsError::ProblemTooLarge(_))
        ));
    }

    #[test]
    fn coupled_lmi_matches_eigenvalue() {
        // min t s.t. tI − M ⪰ 0 for a full symmetric M.
        let m = Matrix::from_row_slice(3, 3, &[2.0, 1.0, 0.5, 1.0, 3.0, -0.2, 0.5, -0.2, 1.0]);
        let lam = symmetric_eigen(&SymMatrix::new(m.clone()).unwrap()).max();
        let mut p = SdpProblem::new(1);
        p.objective[0] = 1.0;
        p.lmis.push(
            AffineMatrix::new(SymMatrix::new(-m).unwrap()).with_term(0, SymMatrix::identity(3)),
        );
        let s = solve_small_sdp(&p, &SdpOptions::default()).unwrap();
        assert!((s.x[0] - lam).abs() < 1e-6 * lam);
    }
}
