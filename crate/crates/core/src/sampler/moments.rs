//! Recursive mean and covariance of a vector stream.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Welford accumulator: after `n` updates `mean` and `cov()` equal the batch
/// sample mean and the unbiased (`n - 1`) sample covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningMoments {
    pub n: usize,
    pub mean: DVector<f64>,
    m2: DMatrix<f64>,
}

impl RunningMoments {
    pub fn new(dim: usize) -> Self {
        Self { n: 0, mean: DVector::zeros(dim), m2: DMatrix::zeros(dim, dim) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::LengthMismatch { expected: self.dim(), got: x.len() });
        }
        self.n += 1;
        let delta = x - &self.mean;
        self.mean += &delta / self.n as f64;
        let delta2 = x - &self.mean;
        self.m2.ger(1.0, &delta, &delta2, 1.0);
        // keep exact symmetry
        let sym = (&self.m2 + self.m2.transpose()) * 0.5;
        self.m2 = sym;
        Ok(())
    }

    /// Unbiased sample covariance; zero before two samples.
    pub fn cov(&self) -> DMatrix<f64> {
        if self.n < 2 {
            return DMatrix::zeros(self.dim(), self.dim());
        }
        &self.m2 / (self.n - 1) as f64
    }
}

pub fn running_moments_update(rm: &mut RunningMoments, x: &DVector<f64>) -> Result<()> {
    rm.update(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn batch(xs: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
        let n = xs.len() as f64;
        let d = xs[0].len();
        let mean = xs.iter().fold(DVector::zeros(d), |a, x| a + x) / n;
        let cov = xs.iter().fold(DMatrix::zeros(d, d), |a, x| a + (x - &mean) * (x - &mean).transpose()) / (n - 1.0);
        (mean, cov)
    }

    #[test]
    fn constant_stream() {
        let mut rm = RunningMoments::new(1);
        for _ in 0..3 {
            rm.update(&DVector::from_vec(vec![1.0])).unwrap();
        }
        assert_eq!(rm.mean[0], 1.0);
        assert_eq!(rm.cov()[(0, 0)], 0.0);
    }

    #[test]
    fn basis_vectors_match_batch() {
        let xs = vec![DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.0, 1.0])];
        let mut rm = RunningMoments::new(2);
        for x in &xs {
            rm.update(x).unwrap();
        }
        let (m, c) = batch(&xs);
        assert!((&rm.mean - m).amax() < 1e-15);
        assert!((rm.cov() - c).amax() < 1e-15);
    }

    #[test]
    fn large_stream_matches_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<DVector<f64>> =
            (0..10_000).map(|_| DVector::from_fn(20, |k, _| k as f64 + rng.random::<f64>() * 3.0)).collect();
        let mut rm = RunningMoments::new(20);
        for x in &xs {
            rm.update(x).unwrap();
        }
        let (m, c) = batch(&xs);
        assert!((&rm.mean - m).amax() <= 1e-10);
        assert!((rm.cov() - c).amax() <= 1e-10);
    }

    #[test]
    fn dimension_mismatch() {
        let mut rm = RunningMoments::new(2);
        assert!(rm.update(&DVector::zeros(3)).is_err());
    }

    proptest! {
        #[test]
        fn diminishing_adaptation(seed in 0u64..1000) {
            // each update moves the covariance by O(1/n) for a bounded stream
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rm = RunningMoments::new(3);
            let mut prev = rm.cov();
            for n in 1..=500usize {
                rm.update(&DVector::from_fn(3, |_, _| rng.random::<f64>() * 2.0 - 1.0)).unwrap();
                let c = rm.cov();
                if n > 2 {
                    prop_assert!((&c - &prev).amax() <= 8.0 / n as f64);
                }
                prev = c;
            }
        }

        #[test]
        fn covariance_becomes_spd(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rm = RunningMoments::new(4);
            for _ in 0..5 {
                rm.update(&DVector::from_fn(4, |_, _| rng.random::<f64>())).unwrap();
            }
            let c = rm.cov() + DMatrix::identity(4, 4) * 1e-10;
            prop_assert!((&c - c.transpose()).amax() == 0.0);
            prop_assert!(c.cholesky().is_some());
        }
    }
}
