//! Synthetic triangles from the generative side of Models I to IV.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::copula::mixture_sample;
use crate::error::{Error, Result};
use crate::linalg::SpdMatrix;
use crate::model::augmented::{row_means, U_CLAMP};
use crate::model::{derived_scales, DependenceSpec, DevelopmentFactors};
use crate::reserving::full_ratio_cov;
use crate::triangle::ClaimsTriangle;

/// A simulated triangle together with the complete (square) log levels.
#[derive(Clone, Debug)]
pub struct SimulatedTriangle {
    pub tri: ClaimsTriangle,
    /// `log_p[i][j]` for all `0 <= j <= J`.
    pub log_p: Vec<Vec<f64>>,
    /// `log_i[i][j]` for all `0 <= j <= J`; `log_i[i][J] == log_p[i][J]`.
    pub log_i: Vec<Vec<f64>>,
}

impl SimulatedTriangle {
    /// True reserve `P(i,J) - P(i,J-i)` per accident year.
    pub fn true_reserves(&self) -> Vec<f64> {
        let n = self.log_p.len() - 1;
        (0..=n).map(|i| self.log_p[i][n].exp() - self.log_p[i][n - i].exp()).collect()
    }
}

fn std_normal(rng: &mut (impl Rng + ?Sized), n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Log levels from a full ratio vector: forward payment recursion, backward
/// incurred recursion from the pinned ultimate.
fn levels_from_ratios(xi_zeta: &DVector<f64>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lp = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    for j in 0..=n {
        acc += xi_zeta[j];
        lp.push(acc);
    }
    let mut li = vec![0.0; n + 1];
    li[n] = lp[n];
    for j in (0..n).rev() {
        li[j] = li[j + 1] + xi_zeta[n + 1 + j];
    }
    (lp, li)
}

/// Draws one triangle from the generative process of `dep`.
pub fn simulate_triangle<R: Rng + ?Sized>(
    theta: &DevelopmentFactors,
    dep: &DependenceSpec,
    rng: &mut R,
) -> Result<SimulatedTriangle> {
    let n = theta.dev_max();
    dep.validate(n)?;
    let mut log_p = Vec::with_capacity(n + 1);
    let mut log_i = Vec::with_capacity(n + 1);
    match dep {
        DependenceSpec::ModelIV { mix_p, mix_i, sigma_diag } => {
            let means = row_means(&derived_scales(theta)?);
            let normal = Normal::standard();
            let z = |u: f64| normal.inverse_cdf(u.clamp(U_CLAMP, 1.0 - U_CLAMP));
            for _ in 0..=n {
                let up = &mixture_sample(mix_p, 1, rng)[0];
                let ui = &mixture_sample(mix_i, 1, rng)[0];
                let row: Vec<f64> = up
                    .iter()
                    .chain(ui)
                    .enumerate()
                    .map(|(k, &u)| means[k] + sigma_diag[k].sqrt() * z(u))
                    .collect();
                let mut li = row[n + 1..].to_vec();
                li.push(row[n]);
                log_p.push(row[..=n].to_vec());
                log_i.push(li);
            }
        }
        _ => {
            let mean = theta.ratio_mean();
            let nf = 2 * n + 1;
            let cols: Vec<DVector<f64>> = match dep {
                DependenceSpec::ModelII { sigma, omega: Some(omega), .. } => {
                    let z = DMatrix::from_fn(nf, n + 1, |_, _| rng.sample(StandardNormal));
                    let x = sigma.cholesky_factor() * z * omega.cholesky_factor().transpose();
                    (0..=n).map(|i| &mean + x.column(i)).collect()
                }
                DependenceSpec::ModelI => {
                    let sd = DVector::from_iterator(nf, theta.sigma.iter().chain(&theta.tau).copied());
                    (0..=n).map(|_| &mean + sd.component_mul(&std_normal(rng, nf))).collect()
                }
                _ => (0..=n)
                    .map(|i| {
                        let c = SpdMatrix::new(full_ratio_cov(theta, dep, i)?)?;
                        Ok(&mean + c.cholesky_factor() * std_normal(rng, nf))
                    })
                    .collect::<Result<_>>()?,
            };
            for x in &cols {
                let (lp, li) = levels_from_ratios(x, n);
                log_p.push(lp);
                log_i.push(li);
            }
        }
    }
    let obs = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
        rows.iter().enumerate().map(|(i, r)| r[..=n - i].iter().map(|x| x.exp()).collect()).collect()
    };
    let tri = ClaimsTriangle::from_rows(&obs(&log_p), &obs(&log_i))?;
    if log_p.iter().flatten().chain(log_i.iter().flatten()).any(|x| !x.is_finite()) {
        return Err(Error::ParamOutOfDomain("simulated log level is not finite".into()));
    }
    Ok(SimulatedTriangle { tri, log_p, log_i })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::{ArchimedeanParam, Family, MixtureCopula};
    use crate::linalg::TelescopingBlockDiag;
    use crate::model::augmented::std_normal_cdf;
    use crate::model::default_sigma_diag;
    use crate::model::tests::theta_j;
    use crate::triangle::validate_triangle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn noiseless_generation_is_deterministic_recursion() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t0 = theta_j(3, &mut rng);
        let t = DevelopmentFactors::new(t0.phi.clone(), t0.psi.clone(), vec![1e-300; 4], vec![1e-300; 3]).unwrap();
        let s = simulate_triangle(&t, &DependenceSpec::ModelI, &mut rng).unwrap();
        let (lp, li) = levels_from_ratios(&t.ratio_mean(), 3);
        for i in 0..=3 {
            for j in 0..=3 - i {
                assert_eq!(s.tri.payment(i, j).unwrap(), lp[j].exp());
                assert_eq!(s.tri.incurred(i, j).unwrap(), li[j].exp());
            }
        }
        assert_eq!(s.tri.payment(0, 3), s.tri.incurred(0, 3));
    }

    #[test]
    fn every_model_generates_valid_triangles() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = theta_j(4, &mut rng);
        let deps = [
            DependenceSpec::ModelI,
            DependenceSpec::model_ii_matching(&t).unwrap(),
            DependenceSpec::ModelII {
                sigma: SpdMatrix::from_diagonal(&t.ratio_variances()).unwrap(),
                omega: Some(SpdMatrix::new(DMatrix::from_fn(5, 5, |a, b| 0.5f64.powi((a as i32 - b as i32).abs()))).unwrap()),
                per_year: None,
            },
            DependenceSpec::ModelIII { tele: TelescopingBlockDiag::identity(4) },
            DependenceSpec::ModelIV {
                mix_p: MixtureCopula::single(ArchimedeanParam::new(Family::Clayton, 2.0).unwrap(), 5).unwrap(),
                mix_i: MixtureCopula::independence(4),
                sigma_diag: default_sigma_diag(&t).unwrap(),
            },
        ];
        for dep in &deps {
            let s = simulate_triangle(&t, dep, &mut rng).unwrap();
            assert_eq!(validate_triangle(&s.tri.cells()).unwrap(), s.tri);
            for i in 0..=4 {
                assert_eq!(s.log_p[i][4], s.log_i[i][4]);
            }
            assert_eq!(s.true_reserves()[0], 0.0);
        }
    }

    #[test]
    fn model_i_ratio_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = theta_j(2, &mut rng);
        let m = 20_000;
        let mut xs = Vec::with_capacity(m);
        let mut zs = Vec::with_capacity(m);
        for _ in 0..m {
            let s = simulate_triangle(&t, &DependenceSpec::ModelI, &mut rng).unwrap();
            xs.push(s.log_p[2][1] - s.log_p[2][0]);
            zs.push(s.log_i[1][0] - s.log_i[1][1]);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean(&xs) - t.phi[1]).abs() < 4.0 * t.sigma[1] / (m as f64).sqrt());
        assert!((mean(&zs) + t.psi[0]).abs() < 4.0 * t.tau[0] / (m as f64).sqrt());
    }

    #[test]
    fn clayton_lower_tail_exceeds_gaussian_baseline() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = theta_j(1, &mut rng);
        let sd = default_sigma_diag(&t).unwrap();
        let means = row_means(&derived_scales(&t).unwrap());
        let dep = DependenceSpec::ModelIV {
            mix_p: MixtureCopula::single(ArchimedeanParam::new(Family::Clayton, 5.0).unwrap(), 2).unwrap(),
            mix_i: MixtureCopula::independence(1),
            sigma_diag: sd.clone(),
        };
        let q = 0.02;
        let m = 20_000;
        let mut joint = 0usize;
        let mut first = 0usize;
        for _ in 0..m {
            let s = simulate_triangle(&t, &dep, &mut rng).unwrap();
            let u0 = std_normal_cdf((s.log_p[0][0] - means[0]) / sd[0].sqrt());
            let u1 = std_normal_cdf((s.log_p[0][1] - means[1]) / sd[1].sqrt());
            if u0 < q {
                first += 1;
                joint += usize::from(u1 < q);
            }
        }
        // Gaussian copula with the same Kendall tau, tau = 5/7
        let r = (std::f64::consts::PI * (5.0 / 7.0) / 2.0).sin();
        let (mut gj, mut gf) = (0usize, 0usize);
        for _ in 0..200_000 {
            let a: f64 = rng.sample(StandardNormal);
            let b = r * a + (1.0 - r * r).sqrt() * rng.sample::<f64, _>(StandardNormal);
            if std_normal_cdf(a) < q {
                gf += 1;
                gj += usize::from(std_normal_cdf(b) < q);
            }
        }
        let clayton = joint as f64 / first as f64;
        let gauss = gj as f64 / gf as f64;
        assert!(clayton > gauss + 0.1, "{clayton} vs {gauss}");
    }
}
