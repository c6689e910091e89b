use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::numerics::{serde_rows, spectral_radius, symmetric_eigen, Matrix, SymMatrix};

/// Discrete-time plant, controller, observer and noise description.
///
/// ```text
/// x_{n+1} = A x_n + B u_n + w_n          y_n = C x_n + z_n + v_n
/// x̂_{n+1} = (A+LC) x̂_n + B u_n − L y_n   u_n = K x̂_n + e_n
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    #[serde(rename = "A", with = "serde_rows")]
    pub a: Matrix,
    #[serde(rename = "B", with = "serde_rows")]
    pub b: Matrix,
    #[serde(rename = "C", with = "serde_rows")]
    pub c: Matrix,
    #[serde(rename = "K", with = "serde_rows")]
    pub k: Matrix,
    #[serde(rename = "L", with = "serde_rows")]
    pub l: Matrix,
    #[serde(rename = "Sigma_w", with = "serde_rows")]
    pub sigma_w: Matrix,
    #[serde(rename = "Sigma_z", with = "serde_rows")]
    pub sigma_z: Matrix,
    #[serde(rename = "Sigma_e", with = "serde_rows")]
    pub sigma_e: Matrix,
}

impl SystemSpec {
    /// State dimension `p`.
    pub fn p(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension `m`.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// Output dimension `q`.
    pub fn q(&self) -> usize {
        self.c.nrows()
    }

    pub fn closed_loop_controller(&self) -> Matrix {
        &self.a + &self.b * &self.k
    }

    pub fn closed_loop_observer(&self) -> Matrix {
        &self.a + &self.l * &self.c
    }

    /// SHA-256 over the dimensions and the IEEE-754 bits of every entry.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for m in [&self.a, &self.b, &self.c, &self.k, &self.l, &self.sigma_w, &self.sigma_z, &self.sigma_e] {
            h.update((m.nrows() as u64).to_le_bytes());
            h.update((m.ncols() as u64).to_le_bytes());
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    h.update(m[(i, j)].to_bits().to_le_bytes());
                }
            }
        }
        h.finalize().into()
    }

    pub fn fingerprint_u64(&self) -> u64 {
        let f = self.fingerprint();
        u64::from_le_bytes(f[..8].try_into().expect("8 bytes"))
    }

    /// Whether `Σ_e` is positive definite, as the watermark test requires.
    pub fn watermark_full_rank(&self) -> bool {
        if !self.sigma_e.is_square() || self.sigma_e.nrows() != self.m() {
            return false;
        }
        match SymMatrix::new(self.sigma_e.clone()) {
            Ok(s) => {
                let e = symmetric_eigen(&s);
                e.min() > 1e-12 * e.max().abs().max(1e-300)
            }
            Err(_) => false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.issues.iter().any(|s| s.contains(needle))
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.issues.is_empty() {
            return write!(f, "ok");
        }
        write!(f, "{}", self.issues.join("; "))
    }
}

fn check_shape(report: &mut ValidationReport, name: &str, m: &Matrix, rows: usize, cols: usize) -> bool {
    if m.nrows() != rows || m.ncols() != cols {
        report.issues.push(format!(
            "{name} has shape {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        ));
        return false;
    }
    true
}

fn check_psd(report: &mut ValidationReport, name: &str, m: &Matrix) {
    match SymMatrix::new(m.clone()) {
        Err(_) => report.issues.push(format!("{name} not symmetric")),
        Ok(s) => {
            let e = symmetric_eigen(&s);
            let scale = e.values.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
            if e.min() < -1e-12 * scale {
                report.issues.push(format!("{name} not PSD (smallest eigenvalue {:.3e})", e.min()));
            }
        }
    }
}

/// Lists every violated structural assumption; an empty report means the
/// spec is usable.
pub fn validate_spec(spec: &SystemSpec) -> ValidationReport {
    let mut r = ValidationReport::default();
    let (p, m, q) = (spec.a.nrows(), spec.b.ncols(), spec.c.nrows());
    let mut shapes_ok = check_shape(&mut r, "A", &spec.a, p, p);
    shapes_ok &= check_shape(&mut r, "B", &spec.b, p, m);
    shapes_ok &= check_shape(&mut r, "C", &spec.c, q, p);
    shapes_ok &= check_shape(&mut r, "K", &spec.k, m, p);
    shapes_ok &= check_shape(&mut r, "L", &spec.l, p, q);
    if check_shape(&mut r, "Sigma_w", &spec.sigma_w, p, p) {
        check_psd(&mut r, "Sigma_w", &spec.sigma_w);
    }
    if check_shape(&mut r, "Sigma_z", &spec.sigma_z, q, q) {
        check_psd(&mut r, "Sigma_z", &spec.sigma_z);
    }
    if check_shape(&mut r, "Sigma_e", &spec.sigma_e, m, m) {
        check_psd(&mut r, "Sigma_e", &spec.sigma_e);
    }
    if shapes_ok {
        let rho_c = spectral_radius(&spec.closed_loop_controller());
        if !(rho_c < 1.0) {
            r.issues.push(format!("A+BK not Schur stable (spectral radius {rho_c:.6})"));
        }
        let rho_o = spectral_radius(&spec.closed_loop_observer());
        if !(rho_o < 1.0) {
            r.issues.push(format!("A+LC not Schur stable (spectral radius {rho_o:.6})"));
        }
    }
    r
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// The two-state example system used throughout the tests.
    pub fn murguia2d() -> SystemSpec {
        let m = |r: usize, c: usize, v: &[f64]| Matrix::from_row_slice(r, c, v);
        SystemSpec {
            a: m(2, 2, &[0.84, 0.23, -0.47, 0.12]),
            b: m(2, 2, &[0.07, -0.32, 0.23, 0.58]),
            c: m(2, 2, &[1.0, 0.0, 2.0, 1.0]),
            k: m(2, 2, &[1.404, -1.042, 1.842, 1.008]),
            l: m(2, 2, &[0.0276, 0.0448, -0.01998, -0.0290]),
            sigma_w: m(2, 2, &[0.035, -0.011, -0.011, 0.02]),
            sigma_z: m(2, 2, &[2.0, 0.0, 0.0, 2.0]),
            sigma_e: m(2, 2, &[0.01, 0.0, 0.0, 0.01]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::murguia2d;
    use super::*;

    #[test]
    fn example_system_is_valid() {
        let r = validate_spec(&murguia2d());
        assert!(r.is_ok(), "{r}");
    }

    #[test]
    fn unstable_observer_is_reported() {
        let mut s = murguia2d();
        s.a = Matrix::identity(2, 2) * 2.0;
        s.l = Matrix::zeros(2, 2);
        assert!(validate_spec(&s).contains("A+LC not Schur stable"));
    }

    #[test]
    fn indefinite_noise_is_reported() {
        let mut s = murguia2d();
        s.sigma_z = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(validate_spec(&s).contains("Sigma_z not PSD"));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut s = murguia2d();
        s.k = Matrix::zeros(3, 2);
        assert!(validate_spec(&s).contains("K has shape 3x2"));
    }

    #[test]
    fn fingerprint_changes_with_entries() {
        let a = murguia2d();
        let mut b = a.clone();
        b.l[(0, 0)] += 1e-12;
        assert_eq!(a.fingerprint(), murguia2d().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
