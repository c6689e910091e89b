use nalgebra::Cholesky;

use super::DetectorError;
use crate::numerics::{log_multivariate_gamma, Matrix, SymMatrix, Vector};

/// Statistic of one step and whether it reached the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub statistic: f64,
    pub alarm: bool,
}

impl StepOutcome {
    pub fn new(statistic: f64, threshold: f64) -> Self {
        StepOutcome { statistic, alarm: statistic >= threshold }
    }
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub fn chi2_step(r_bar: &[f64], tau: f64) -> StepOutcome {
    StepOutcome::new(sq_norm(r_bar), tau)
}

/// `S ← max(S + r̄ᵀr̄ − γ, 0)`; with `reset_on_alarm` the carried value
/// returns to zero after an alarm.
pub fn cusum_step(s: &mut f64, r_bar: &[f64], gamma: f64, tau: f64, reset_on_alarm: bool) -> StepOutcome {
    let stat = (*s + sq_norm(r_bar) - gamma).max(0.0);
    let out = StepOutcome::new(stat, tau);
    *s = if out.alarm && reset_on_alarm { 0.0 } else { stat };
    out
}

/// `G ← βr̄ + (1−β)G`, statistic `(2−β)/β · GᵀG`.
pub fn mewma_step(g: &mut [f64], r_bar: &[f64], beta: f64, tau: f64) -> StepOutcome {
    for (gi, ri) in g.iter_mut().zip(r_bar) {
        *gi = beta * ri + (1.0 - beta) * *gi;
    }
    StepOutcome::new((2.0 - beta) / beta * sq_norm(g), tau)
}

/// `log(2^{dℓ/2} Γ_d(ℓ/2))`.
pub fn wishart_constant(d: usize, ell: usize) -> Result<f64, DetectorError> {
    Ok((d * ell) as f64 / 2.0 * std::f64::consts::LN_2 + log_multivariate_gamma(d, ell as f64 / 2.0)?)
}

/// Negative log-likelihood of a Wishart(I_d, ℓ) sample `X`:
/// `(d+1−ℓ)/2 · log|X| + tr(X)/2 + log(2^{dℓ/2} Γ_d(ℓ/2))`.
pub fn wishart_nll(x: &SymMatrix, ell: usize) -> Result<f64, DetectorError> {
    let d = x.dim();
    if ell <= d + 1 {
        return Err(DetectorError::WindowTooShort { ell, min: d + 2 });
    }
    let c = wishart_constant(d, ell)?;
    wishart_nll_with_constant(x.as_matrix(), ell, c).ok_or(DetectorError::NotPd)
}

pub(crate) fn wishart_nll_with_constant(x: &Matrix, ell: usize, constant: f64) -> Option<f64> {
    let d = x.nrows();
    let logdet = Cholesky::new(x.clone())?.ln_determinant();
    Some((d as f64 + 1.0 - ell as f64) / 2.0 * logdet + x.trace() / 2.0 + constant)
}

/// Sliding window of normalized joint vectors `ψ` and their outer-product sum.
#[derive(Debug, Clone)]
pub struct DynWatWindow {
    ell: usize,
    buf: Vec<Vector>,
    head: usize,
    d: Matrix,
    since_recompute: usize,
}

pub const DYNWAT_RECOMPUTE_EVERY: usize = 1024;

impl DynWatWindow {
    pub fn new(dim: usize, ell: usize) -> Self {
        DynWatWindow { ell, buf: Vec::with_capacity(ell), head: 0, d: Matrix::zeros(dim, dim), since_recompute: 0 }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn sum(&self) -> &Matrix {
        &self.d
    }

    pub fn push(&mut self, psi: Vector) {
        self.d += &psi * psi.transpose();
        if self.buf.len() < self.ell {
            self.buf.push(psi);
        } else {
            let old = std::mem::replace(&mut self.buf[self.head], psi);
            self.d -= &old * old.transpose();
            self.head = (self.head + 1) % self.ell;
        }
        self.since_recompute += 1;
        if self.since_recompute >= DYNWAT_RECOMPUTE_EVERY {
            self.recompute();
        }
    }

    /// The sum `push(psi)` would leave, without changing the window.
    pub fn preview(&self, psi: &Vector) -> Matrix {
        let full = self.buf.len() == self.ell;
        if self.since_recompute + 1 >= DYNWAT_RECOMPUTE_EVERY {
            // Same summation order as `recompute` after the push.
            let dim = self.d.nrows();
            let mut d = Matrix::zeros(dim, dim);
            for (k, v) in self.buf.iter().enumerate() {
                d += if full && k == self.head { psi * psi.transpose() } else { v * v.transpose() };
            }
            if !full {
                d += psi * psi.transpose();
            }
            return d;
        }
        let mut d = &self.d + psi * psi.transpose();
        if full {
            let old = &self.buf[self.head];
            d -= old * old.transpose();
        }
        d
    }

    /// Rebuilds the window sum from the buffer.
    pub fn recompute(&mut self) {
        let dim = self.d.nrows();
        let mut d = Matrix::zeros(dim, dim);
        for v in &self.buf {
            d += v * v.transpose();
        }
        self.d = d;
        self.since_recompute = 0;
    }

    pub fn exact_sum(&self) -> Matrix {
        let dim = self.d.nrows();
        self.buf.iter().fold(Matrix::zeros(dim, dim), |acc, v| acc + v * v.transpose())
    }
}

/// Outcome of [`dynwat_step`] without applying it.
pub fn dynwat_preview(window: &DynWatWindow, psi: &Vector, ell: usize, constant: f64, tau: f64, active: bool) -> StepOutcome {
    if !active {
        return StepOutcome::new(0.0, tau);
    }
    let stat = wishart_nll_with_constant(&window.preview(psi), ell, constant).unwrap_or(f64::INFINITY);
    StepOutcome::new(stat, tau)
}

/// One DynWat update. `psi` is the already normalized joint vector
/// `Σ_ψ^{−1/2}[r_n; e_{n−k}]`; the statistic is 0 until `active`.
pub fn dynwat_step(
    window: &mut DynWatWindow,
    psi: Vector,
    ell: usize,
    constant: f64,
    tau: f64,
    active: bool,
) -> StepOutcome {
    window.push(psi);
    if !active {
        return StepOutcome::new(0.0, tau);
    }
    let stat = wishart_nll_with_constant(window.sum(), ell, constant).unwrap_or(f64::INFINITY);
    StepOutcome::new(stat, tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{symmetric_eigen, SignalRng, StreamId};
    use proptest::prelude::*;
    use std::f64::consts::{LN_2, PI};

    #[test]
    fn chi2_examples() {
        assert_eq!(chi2_step(&[0.0, 0.0], 1e-9).statistic, 0.0);
        assert!(!chi2_step(&[0.0, 0.0], 1e-9).alarm);
        assert_eq!(chi2_step(&[3.0, 4.0], 30.0).statistic, 25.0);
        assert!(chi2_step(&[3.0, 4.0], 25.0).alarm);
    }

    #[test]
    fn chi2_mean_of_iid_normals() {
        let mut rng = SignalRng::new(13, StreamId::Test);
        let n = 100_000;
        let mean: f64 =
            (0..n).map(|_| chi2_step(&[rng.standard_normal(), rng.standard_normal()], 1.0).statistic).sum::<f64>()
                / n as f64;
        assert!((mean - 2.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn cusum_recursion() {
        let mut s = 0.0;
        let r = [3f64.sqrt(), 0.0];
        let stats: Vec<f64> = (0..3).map(|_| cusum_step(&mut s, &r, 2.5, 100.0, true).statistic).collect();
        for (got, want) in stats.iter().zip([0.5, 1.0, 1.5]) {
            assert!((got - want).abs() < 1e-12);
        }
        let mut z = 0.0;
        for _ in 0..10 {
            assert_eq!(cusum_step(&mut z, &[0.0, 0.0], 3.0, 1.0, true).statistic, 0.0);
        }
    }

    #[test]
    fn cusum_reset_on_alarm() {
        let mut s = 0.0;
        let r = [2.0, 0.0];
        assert!(!cusum_step(&mut s, &r, 3.0, 1.5, true).alarm);
        let o = cusum_step(&mut s, &r, 3.0, 1.5, true);
        assert!(o.alarm);
        assert_eq!(o.statistic, 2.0);
        assert_eq!(s, 0.0);
        let mut t = 2.0;
        cusum_step(&mut t, &r, 3.0, 1.5, false);
        assert_eq!(t, 3.0);
    }

    #[test]
    fn cusum_is_stable_for_gamma_above_q() {
        let mut rng = SignalRng::new(99, StreamId::Test);
        let mut s = 0.0;
        let mut stats: Vec<f64> = (0..1_000_000)
            .map(|_| cusum_step(&mut s, &[rng.standard_normal(), rng.standard_normal()], 3.0, f64::INFINITY, true).statistic)
            .collect();
        stats.sort_by(f64::total_cmp);
        let p999 = stats[999_000];
        eprintln!("CUSUM gamma=3 99.9th percentile: {p999:.4}");
        assert!(p999.is_finite() && p999 < 50.0);
    }

    #[test]
    fn mewma_examples() {
        let mut g = [0.0, 0.0];
        let o = mewma_step(&mut g, &[2.0, 0.0], 0.5, 10.0);
        assert_eq!(g, [1.0, 0.0]);
        assert_eq!(o.statistic, 3.0);
        let mut g0 = [0.0, 0.0];
        for _ in 0..5 {
            assert_eq!(mewma_step(&mut g0, &[0.0, 0.0], 0.3, 1.0).statistic, 0.0);
        }
    }

    #[test]
    fn wishart_scalar_example() {
        let x = SymMatrix::from_diagonal(&[2.0]);
        let expected = -0.5 * LN_2 + 1.0 + 1.5 * LN_2 + (PI.sqrt() / 2.0).ln();
        assert!((wishart_nll(&x, 3).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn wishart_rejects_short_window_and_singular_input() {
        assert!(matches!(
            wishart_nll(&SymMatrix::identity(3), 4),
            Err(DetectorError::WindowTooShort { .. })
        ));
        assert!(matches!(
            wishart_nll(&SymMatrix::from_diagonal(&[1.0, 0.0]), 10),
            Err(DetectorError::NotPd)
        ));
    }

    fn random_pd(rng: &mut SignalRng, d: usize, scale: f64) -> SymMatrix {
        let a = Matrix::from_fn(d, d, |_, _| rng.standard_normal());
        SymMatrix::from_symmetric_part((&a * a.transpose()) * scale + Matrix::identity(d, d) * 0.05)
    }

    #[test]
    fn wishart_minimum_at_scaled_identity() {
        let (d, ell) = (4, 20);
        let xmin = SymMatrix::identity(d).scale((ell - 1 - d) as f64);
        let fmin = wishart_nll(&xmin, ell).unwrap();
        let mut rng = SignalRng::new(17, StreamId::Test);
        for k in 0..1000 {
            let x = random_pd(&mut rng, d, 0.5 + (k % 10) as f64);
            assert!(wishart_nll(&x, ell).unwrap() >= fmin);
        }
    }

    #[test]
    fn wishart_matches_eigenvalue_form() {
        let (d, ell) = (4, 20);
        let mut rng = SignalRng::new(23, StreamId::Test);
        for _ in 0..20 {
            let x = random_pd(&mut rng, d, 3.0);
            let lam = symmetric_eigen(&x).values;
            let constant = (d * ell) as f64 / 2.0 * LN_2 + log_multivariate_gamma(d, ell as f64 / 2.0).unwrap();
            let oracle: f64 = lam
                .iter()
                .map(|l| (d as f64 + 1.0 - ell as f64) / 2.0 * l.ln() + l / 2.0)
                .sum::<f64>()
                + constant;
            assert!((wishart_nll(&x, ell).unwrap() - oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn window_sum_tracks_buffer() {
        let mut rng = SignalRng::new(31, StreamId::Test);
        let mut w = DynWatWindow::new(3, 7);
        for k in 0..3000 {
            w.push(rng.standard_normal_vector(3));
            assert!(w.len() <= 7);
            if k % 97 == 0 {
                assert!((w.sum() - w.exact_sum()).amax() < 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn mewma_beta_one_equals_chi2(stream in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..60)) {
            let mut g = [0.0, 0.0];
            for (a, b) in stream {
                let m = mewma_step(&mut g, &[a, b], 1.0, 3.0);
                let c = chi2_step(&[a, b], 3.0);
                prop_assert_eq!(m.statistic, c.statistic);
                prop_assert_eq!(m.alarm, c.alarm);
            }
        }

        #[test]
        fn cusum_monotone_in_gamma(
            stream in prop::collection::vec((-4.0f64..4.0, -4.0f64..4.0), 1..80),
            gamma in 2.01f64..6.0,
            extra in 0.0f64..3.0,
        ) {
            let (mut s1, mut s2) = (0.0, 0.0);
            for (a, b) in stream {
                let lo = cusum_step(&mut s1, &[a, b], gamma, f64::INFINITY, false).statistic;
                let hi = cusum_step(&mut s2, &[a, b], gamma + extra, f64::INFINITY, false).statistic;
                prop_assert!(hi <= lo + 1e-12);
                prop_assert!(lo >= 0.0 && hi >= 0.0);
            }
        }

        #[test]
        fn window_order_does_not_matter(seed in 0u64..1000) {
            let mut rng = SignalRng::new(seed, StreamId::Test);
            let vs: Vec<Vector> = (0..8).map(|_| rng.standard_normal_vector(3)).collect();
            let mut a = DynWatWindow::new(3, 8);
            let mut b = DynWatWindow::new(3, 8);
            for v in &vs { a.push(v.clone()); }
            for v in vs.iter().rev() { b.push(v.clone()); }
            let c = wishart_constant(3, 8).unwrap();
            let fa = wishart_nll_with_constant(a.sum(), 8, c).unwrap();
            let fb = wishart_nll_with_constant(b.sum(), 8, c).unwrap();
            prop_assert!((fa - fb).abs() < 1e-9 * (1.0 + fa.abs()));
        }

        #[test]
        fn scaling_threshold_and_statistics_keeps_alarms(
            stats in prop::collection::vec(0.0f64..20.0, 1..50),
            tau in 0.1f64..20.0,
            k in 0.01f64..100.0,
        ) {
            for s in stats {
                prop_assert_eq!(StepOutcome::new(s, tau).alarm, StepOutcome::new(s * k, tau * k).alarm);
            }
        }
    }
}
