use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use super::special::standard_normal_quantile;
use super::{Matrix, Vector};

/// Named sub-streams of one seed. Each signal of a simulation draws from its
/// own stream so that, e.g., zeroing the process noise leaves the measurement
/// noise draws untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamId {
    ProcessNoise,
    MeasurementNoise,
    Watermark,
    AttackMeasurement,
    AttackProcess,
    IidResidual,
    MonteCarlo,
    Test,
    Custom(u64),
}

impl StreamId {
    fn index(self) -> u64 {
        match self {
            StreamId::ProcessNoise => 1,
            StreamId::MeasurementNoise => 2,
            StreamId::Watermark => 3,
            StreamId::AttackMeasurement => 4,
            StreamId::AttackProcess => 5,
            StreamId::IidResidual => 6,
            StreamId::MonteCarlo => 7,
            StreamId::Test => 8,
            StreamId::Custom(k) => 1024 + k,
        }
    }
}

/// Counter-based generator (ChaCha8 keyed by the seed, one stream per
/// signal). Gaussian draws go through the inverse normal CDF, one uniform per
/// normal, so the n-th draw of a stream is fixed by `(seed, stream, n)` alone.
#[derive(Debug, Clone)]
pub struct SignalRng {
    inner: ChaCha8Rng,
}

impl SignalRng {
    pub fn new(seed: u64, stream: StreamId) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream.index());
        SignalRng { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        standard_normal_quantile(self.uniform())
    }

    pub fn standard_normal_vector(&mut self, dim: usize) -> Vector {
        Vector::from_fn(dim, |_, _| self.standard_normal())
    }

    /// Draws `factor · ξ` with `ξ ~ N(0, I)`; with `factor = Σ^{1/2}` the
    /// result is `N(0, Σ)`.
    pub fn gaussian(&mut self, factor: &Matrix) -> Vector {
        let xi = self.standard_normal_vector(factor.ncols());
        factor * xi
    }
}
