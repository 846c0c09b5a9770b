//! Archimedean copulas (Clayton, Gumbel, Frank) and their finite mixtures.
//!
//! Densities use the generator factorisation
//! `c(u) = |psi^(d)(sum phi(u_k))| * prod |phi'(u_k)|` with the inverse
//! generator `psi = phi^{-1}` and family-specific d-th derivatives, all
//! evaluated in the log domain:
//!
//! * Clayton: closed-form rising product `prod_{k<d} (1 + k theta)`.
//! * Gumbel: `psi = exp(g)`, `g = -t^(1/theta)`; the Bell-polynomial
//!   recurrence for `(-1)^d psi^(d) / psi` has only positive terms.
//! * Frank: `(-1)^d psi^(d)(t) = Li_{1-d}(z) / theta` with
//!   `z = (1 - e^-theta) e^-t`, expanded as a positive polynomial in
//!   `w = z / (1 - z)`.
//!
//! Frank uses the usual sign convention: `theta > 0` is positive dependence.
//! Negative `theta` is a valid copula only for `d = 2`.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest dimension accepted by the density evaluators.
pub const MAX_DIM: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Clayton,
    Gumbel,
    Frank,
}

impl Family {
    /// Parameter value giving the independence copula.
    pub fn independence(self) -> f64 {
        match self {
            Family::Clayton | Family::Frank => 0.0,
            Family::Gumbel => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchimedeanParam {
    pub family: Family,
    pub rho: f64,
}

impl ArchimedeanParam {
    pub fn new(family: Family, rho: f64) -> Result<Self> {
        let ok = rho.is_finite()
            && match family {
                Family::Clayton => rho >= 0.0,
                Family::Gumbel => rho >= 1.0,
                Family::Frank => true,
            };
        if !ok {
            return Err(Error::ParamOutOfDomain(format!("{family:?} rho={rho}")));
        }
        Ok(Self { family, rho })
    }

    pub fn is_independence(&self) -> bool {
        self.rho == self.family.independence()
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if self.family == Family::Frank && self.rho < 0.0 && d > 2 {
            return Err(Error::ParamOutOfDomain(format!(
                "Frank rho={} is a copula only in dimension 2",
                self.rho
            )));
        }
        Ok(())
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn copula_cdf(u: &[f64], p: &ArchimedeanParam) -> Result<f64> {
    if u.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::BoundaryInput(*u.iter().find(|x| !(0.0..=1.0).contains(*x)).unwrap()));
    }
    p.check_dim(u.len())?;
    if u.contains(&0.0) {
        return Ok(0.0);
    }
    if p.is_independence() {
        return Ok(u.iter().product());
    }
    let theta = p.rho;
    let d = u.len() as f64;
    let c = match p.family {
        Family::Clayton => {
            // (sum u^-theta - d + 1)^(-1/theta), accumulated as 1 + sum expm1
            let s = 1.0 + u.iter().map(|x| (-theta * x.ln()).exp_m1()).sum::<f64>();
            (-s.ln() / theta).exp()
        }
        Family::Gumbel => {
            let s: f64 = u.iter().map(|x| (-x.ln()).powf(theta)).sum();
            (-s.powf(1.0 / theta)).exp()
        }
        Family::Frank => {
            // -(1/theta) ln(1 + prod(e^{-theta u}-1) / (e^{-theta}-1)^{d-1})
            let den = (-theta).exp_m1();
            let mut log_abs = -(d - 1.0) * den.abs().ln();
            let mut sign = if den < 0.0 && (u.len() - 1) % 2 == 1 { -1.0 } else { 1.0 };
            for x in u {
                let e = (-theta * x).exp_m1();
                log_abs += e.abs().ln();
                if e < 0.0 {
                    sign = -sign;
                }
            }
            -(sign * log_abs.exp()).ln_1p() / theta
        }
    };
    Ok(c.clamp(0.0, 1.0))
}

/// Generator value `phi(u)`.
fn generator(u: f64, p: &ArchimedeanParam) -> f64 {
    let theta = p.rho;
    match p.family {
        Family::Clayton => (-theta * u.ln()).exp_m1() / theta,
        Family::Gumbel => (-u.ln()).powf(theta),
        Family::Frank => -((-theta * u).exp_m1() / (-theta).exp_m1()).ln(),
    }
}

/// `ln |phi'(u)|`.
fn log_abs_generator_deriv(u: f64, p: &ArchimedeanParam) -> f64 {
    let theta = p.rho;
    match p.family {
        Family::Clayton => -(theta + 1.0) * u.ln(),
        Family::Gumbel => theta.ln() + (theta - 1.0) * (-u.ln()).ln() - u.ln(),
        Family::Frank => theta.ln() - (theta * u).exp_m1().ln(),
    }
}

/// `ln |psi^(d)(t)|` for the inverse generator.
fn log_abs_inv_generator_deriv(t: f64, d: usize, p: &ArchimedeanParam) -> f64 {
    let theta = p.rho;
    match p.family {
        Family::Clayton => {
            let rising: f64 = (0..d).map(|k| (1.0 + k as f64 * theta).ln()).sum();
            rising - (1.0 / theta + d as f64) * (theta * t).ln_1p()
        }
        Family::Gumbel => {
            let alpha = 1.0 / theta;
            let lt = t.ln();
            // ln gamma_m = ln |alpha (alpha-1) ... (alpha-m+1)| + (alpha - m) ln t
            let mut log_fall = Vec::with_capacity(d + 1);
            let mut acc = 0.0;
            log_fall.push(0.0);
            for m in 1..=d {
                acc += (alpha - (m - 1) as f64).abs().ln();
                log_fall.push(acc + (alpha - m as f64) * lt);
            }
            // h_{n+1} = sum_k C(n,k) gamma_{k+1} h_{n-k},  h_0 = 1
            let mut log_h = vec![0.0f64; d + 1];
            let mut log_binom = vec![0.0f64; d + 1];
            let mut terms = Vec::with_capacity(d);
            for n in 0..d {
                // log C(n, k) for k = 0..=n
                if n > 0 {
                    for k in (1..n).rev() {
                        log_binom[k] = log_sum_exp(&[log_binom[k], log_binom[k - 1]]);
                    }
                    log_binom[n] = 0.0;
                }
                terms.clear();
                terms.extend((0..=n).map(|k| log_binom[k] + log_fall[k + 1] + log_h[n - k]));
                log_h[n + 1] = log_sum_exp(&terms);
            }
            -t.powf(alpha) + log_h[d]
        }
        Family::Frank => {
            let log_z = (-(-theta).exp_m1()).ln() - t;
            let log_w = log_z - (-log_z.exp()).ln_1p();
            let coeffs = frank_poly(d);
            let terms: Vec<f64> = coeffs
                .iter()
                .enumerate()
                .filter(|(_, c)| **c > 0.0)
                .map(|(k, c)| c.ln() + k as f64 * log_w)
                .collect();
            log_sum_exp(&terms) - theta.ln()
        }
    }
}

/// Coefficients of `Q_d(w)` with `Q_1 = w` and `Q_{n+1} = w (1 + w) Q_n'`,
/// so that `Li_{1-d}(z) = Q_d(z / (1 - z))`.
fn frank_poly(d: usize) -> Vec<f64> {
    let mut q = vec![0.0, 1.0];
    for _ in 1..d {
        let deriv: Vec<f64> = (1..q.len()).map(|k| k as f64 * q[k]).collect();
        let mut next = vec![0.0; q.len() + 1];
        for (k, c) in deriv.iter().enumerate() {
            next[k + 1] += c;
            next[k + 2] += c;
        }
        q = next;
    }
    q
}

/// Bivariate Frank density valid for either sign of `theta`.
fn frank2_log_density(u: f64, v: f64, theta: f64) -> f64 {
    let a = (-theta).exp_m1();
    let num = (-theta * a).ln() - theta * (u + v);
    let den = a + (-theta * u).exp_m1() * (-theta * v).exp_m1();
    num - 2.0 * den.abs().ln()
}

pub fn copula_logdensity(u: &[f64], p: &ArchimedeanParam) -> Result<f64> {
    let d = u.len();
    if d > MAX_DIM {
        return Err(Error::DimensionTooLarge { dim: d, max: MAX_DIM });
    }
    if let Some(&x) = u.iter().find(|x| !(**x > 0.0 && **x < 1.0)) {
        return Err(Error::BoundaryInput(x));
    }
    p.check_dim(d)?;
    if d <= 1 || p.is_independence() {
        return Ok(0.0);
    }
    if p.family == Family::Frank && p.rho < 0.0 {
        return Ok(frank2_log_density(u[0], u[1], p.rho));
    }
    if p.family == Family::Clayton {
        let theta = p.rho;
        let s = 1.0 + u.iter().map(|x| (-theta * x.ln()).exp_m1()).sum::<f64>();
        let rising: f64 = (0..d).map(|k| (1.0 + k as f64 * theta).ln()).sum();
        let marg: f64 = u.iter().map(|x| -(theta + 1.0) * x.ln()).sum();
        return Ok(rising + marg - (1.0 / theta + d as f64) * s.ln());
    }
    let t: f64 = u.iter().map(|&x| generator(x, p)).sum();
    let marg: f64 = u.iter().map(|&x| log_abs_generator_deriv(x, p)).sum();
    Ok(log_abs_inv_generator_deriv(t, d, p) + marg)
}

/// Generic generator-route density, exposed so the closed-form Clayton
/// density can be checked against it.
pub fn copula_logdensity_generic(u: &[f64], p: &ArchimedeanParam) -> Result<f64> {
    if let Some(&x) = u.iter().find(|x| !(**x > 0.0 && **x < 1.0)) {
        return Err(Error::BoundaryInput(x));
    }
    p.check_dim(u.len())?;
    if u.len() <= 1 || p.is_independence() {
        return Ok(0.0);
    }
    let t: f64 = u.iter().map(|&x| generator(x, p)).sum();
    let marg: f64 = u.iter().map(|&x| log_abs_generator_deriv(x, p)).sum();
    Ok(log_abs_inv_generator_deriv(t, u.len(), p) + marg)
}

/// Finite mixture of Archimedean copulas with normalised weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureCopula {
    components: Vec<(f64, ArchimedeanParam)>,
    dim: usize,
}

impl MixtureCopula {
    /// Weights may be unnormalised; they are rescaled to sum to one.
    pub fn new(components: Vec<(f64, ArchimedeanParam)>, dim: usize) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::EmptyList);
        }
        if dim == 0 {
            return Err(Error::ParamOutOfDomain("mixture dimension 0".into()));
        }
        let total: f64 = components.iter().map(|c| c.0).sum();
        if components.iter().any(|c| !(c.0 >= 0.0) || !c.0.is_finite()) || !(total > 0.0) {
            return Err(Error::ParamOutOfDomain("mixture weights must be non-negative".into()));
        }
        for (_, p) in &components {
            p.check_dim(dim)?;
        }
        let components = components.into_iter().map(|(w, p)| (w / total, p)).collect();
        Ok(Self { components, dim })
    }

    pub fn single(p: ArchimedeanParam, dim: usize) -> Result<Self> {
        Self::new(vec![(1.0, p)], dim)
    }

    pub fn independence(dim: usize) -> Self {
        Self {
            components: vec![(1.0, ArchimedeanParam { family: Family::Clayton, rho: 0.0 })],
            dim,
        }
    }

    pub fn components(&self) -> &[(f64, ArchimedeanParam)] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_independence(&self) -> bool {
        self.dim <= 1 || self.components.iter().all(|(w, p)| *w == 0.0 || p.is_independence())
    }

    /// Same weights and families with new dependence parameters.
    pub fn with_rhos(&self, rhos: &[f64]) -> Result<Self> {
        if rhos.len() != self.components.len() {
            return Err(Error::LengthMismatch { expected: self.components.len(), got: rhos.len() });
        }
        let components = self
            .components
            .iter()
            .zip(rhos)
            .map(|((w, p), &r)| Ok((*w, ArchimedeanParam::new(p.family, r)?)))
            .collect::<Result<Vec<_>>>()?;
        for (_, p) in &components {
            p.check_dim(self.dim)?;
        }
        Ok(Self { components, dim: self.dim })
    }

    pub fn rhos(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.1.rho).collect()
    }

    /// Same families and parameters in a different dimension.
    pub fn with_dim(&self, dim: usize) -> Result<Self> {
        Self::new(self.components.clone(), dim)
    }
}

pub fn mixture_cdf(u: &[f64], mix: &MixtureCopula) -> Result<f64> {
    let mut acc = 0.0;
    for (w, p) in &mix.components {
        acc += w * copula_cdf(u, p)?;
    }
    Ok(acc)
}

pub fn mixture_logdensity(u: &[f64], mix: &MixtureCopula) -> Result<f64> {
    if u.len() != mix.dim {
        return Err(Error::LengthMismatch { expected: mix.dim, got: u.len() });
    }
    let mut terms = Vec::with_capacity(mix.components.len());
    for (w, p) in &mix.components {
        if *w > 0.0 {
            terms.push(w.ln() + copula_logdensity(u, p)?);
        }
    }
    Ok(log_sum_exp(&terms))
}

/// `(lambda_L, lambda_U)`.
pub fn tail_dependence(p: &ArchimedeanParam) -> (f64, f64) {
    match p.family {
        Family::Clayton if p.rho > 0.0 => (2f64.powf(-1.0 / p.rho), 0.0),
        Family::Gumbel => (0.0, 2.0 - 2f64.powf(1.0 / p.rho)),
        _ => (0.0, 0.0),
    }
}

/// Positive stable variate with Laplace transform `exp(-s^alpha)`
/// (Kanter / Chambers-Mallows-Stuck representation).
fn positive_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    if alpha >= 1.0 {
        return 1.0;
    }
    let theta = std::f64::consts::PI * rng.random::<f64>();
    let w: f64 = rng.sample(Exp1);
    let a = (alpha * theta).sin() / theta.sin().powf(1.0 / alpha);
    let b = ((1.0 - alpha) * theta).sin() / w;
    a * b.powf((1.0 - alpha) / alpha)
}

/// Logarithmic series variate with `P(V = k) ∝ p^k / k`, `p = 1 - e^{-theta}`
/// (Kemp's algorithm; `ln(1-p) = -theta` is used directly).
fn logarithmic<R: Rng + ?Sized>(theta: f64, rng: &mut R) -> f64 {
    let p = -(-theta).exp_m1();
    let v: f64 = rng.random();
    if v >= p {
        return 1.0;
    }
    let u: f64 = rng.random();
    let q = -(-theta * u).exp_m1();
    if v <= q * q {
        let k = (1.0 + v.ln() / q.ln()).floor();
        return if k.is_finite() && k >= 1.0 { k } else { 1.0 };
    }
    if v <= q {
        2.0
    } else {
        1.0
    }
}

fn open_unit(x: f64) -> f64 {
    x.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

fn sample_archimedean<R: Rng + ?Sized>(p: &ArchimedeanParam, d: usize, rng: &mut R) -> Vec<f64> {
    let theta = p.rho;
    if p.is_independence() {
        return (0..d).map(|_| open_unit(rng.random())).collect();
    }
    if p.family == Family::Frank && theta < 0.0 {
        // d = 2: conditional inversion of C(v | u)
        let u: f64 = open_unit(rng.random());
        let w: f64 = open_unit(rng.random());
        let eu = (-theta * u).exp();
        let a = w * (-theta).exp_m1() / (eu - w * (eu - 1.0));
        return vec![u, open_unit(-a.ln_1p() / theta)];
    }
    let v = match p.family {
        Family::Clayton => Gamma::new(1.0 / theta, 1.0).expect("positive shape").sample(rng),
        Family::Gumbel => positive_stable(1.0 / theta, rng),
        Family::Frank => logarithmic(theta, rng),
    };
    (0..d)
        .map(|_| {
            let e: f64 = rng.sample(Exp1);
            let t = e / v;
            let u = match p.family {
                Family::Clayton => (-t.ln_1p() / theta).exp(),
                Family::Gumbel => (-t.powf(1.0 / theta)).exp(),
                Family::Frank => -(-(-(-theta).exp_m1()) * (-t).exp()).ln_1p() / theta,
            };
            open_unit(u)
        })
        .collect()
}

/// `n` draws in dimension `d` from a single copula (Marshall-Olkin frailty).
pub fn copula_sample<R: Rng + ?Sized>(
    p: &ArchimedeanParam,
    d: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    p.check_dim(d)?;
    Ok((0..n).map(|_| sample_archimedean(p, d, rng)).collect())
}

/// Mixture draws: pick a component by weight, then sample it.
pub fn mixture_sample<R: Rng + ?Sized>(
    mix: &MixtureCopula,
    n: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let mut r: f64 = rng.random();
            let mut pick = &mix.components[mix.components.len() - 1].1;
            for (w, p) in &mix.components {
                if r < *w {
                    pick = p;
                    break;
                }
                r -= w;
            }
            sample_archimedean(pick, mix.dim, rng)
        })
        .collect()
}

/// Sample Kendall's tau of two columns (O(n^2); meant for test-sized inputs).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let a = (x[i] - x[j]) * (y[i] - y[j]);
            s += if a > 0.0 {
                1
            } else if a < 0.0 {
                -1
            } else {
                0
            };
        }
    }
    s as f64 / (n * (n - 1) / 2) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn par(f: Family, r: f64) -> ArchimedeanParam {
        ArchimedeanParam::new(f, r).unwrap()
    }

    /// d-fold mixed central difference of the CDF.
    fn fd_density(u: &[f64], p: &ArchimedeanParam, h: f64) -> f64 {
        let d = u.len();
        let mut acc = 0.0;
        for mask in 0..(1usize << d) {
            let mut x = u.to_vec();
            let mut sign = 1.0;
            for (k, xk) in x.iter_mut().enumerate() {
                if mask >> k & 1 == 1 {
                    *xk += h;
                } else {
                    *xk -= h;
                    sign = -sign;
                }
            }
            acc += sign * copula_cdf(&x, p).unwrap();
        }
        acc / (2.0 * h).powi(d as i32)
    }

    #[test]
    fn domains() {
        assert!(ArchimedeanParam::new(Family::Clayton, -0.1).is_err());
        assert!(ArchimedeanParam::new(Family::Gumbel, 0.9).is_err());
        assert!(ArchimedeanParam::new(Family::Frank, -3.0).is_ok());
        let f = par(Family::Frank, -3.0);
        assert!(copula_logdensity(&[0.2, 0.3, 0.4], &f).is_err());
        assert!(copula_logdensity(&[0.2, 0.3], &f).is_ok());
        assert!(matches!(copula_logdensity(&[0.0, 0.5], &par(Family::Clayton, 1.0)), Err(Error::BoundaryInput(_))));
        assert!(matches!(
            copula_logdensity(&vec![0.5; MAX_DIM + 1], &par(Family::Clayton, 1.0)),
            Err(Error::DimensionTooLarge { .. })
        ));
    }

    #[test]
    fn grounded_and_margins() {
        for p in [par(Family::Clayton, 2.0), par(Family::Gumbel, 1.7), par(Family::Frank, 4.0)] {
            assert_eq!(copula_cdf(&[0.3, 0.0, 0.8], &p).unwrap(), 0.0);
            assert!((copula_cdf(&[1.0, 1.0, 1.0], &p).unwrap() - 1.0).abs() < 1e-12);
            for &x in &[0.01, 0.37, 0.99] {
                assert!((copula_cdf(&[1.0, x, 1.0], &p).unwrap() - x).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn clayton_independence_limit() {
        let c = copula_cdf(&[0.3, 0.7], &par(Family::Clayton, 1e-6)).unwrap();
        assert!((c - 0.21).abs() < 1e-4);
    }

    #[test]
    fn density_matches_finite_differences() {
        let c = par(Family::Clayton, 2.0);
        let exact = copula_logdensity(&[0.5, 0.5], &c).unwrap().exp();
        let fd = fd_density(&[0.5, 0.5], &c, 1e-4);
        assert!((exact - fd).abs() / exact < 1e-5);

        let grid = [
            par(Family::Clayton, 0.5),
            par(Family::Clayton, 4.0),
            par(Family::Gumbel, 1.3),
            par(Family::Gumbel, 3.0),
            par(Family::Frank, 2.0),
            par(Family::Frank, 8.0),
            par(Family::Frank, -4.0),
        ];
        for p in grid {
            for u in [[0.3, 0.6], [0.8, 0.25], [0.5, 0.5]] {
                let exact = copula_logdensity(&u, &p).unwrap().exp();
                let fd = fd_density(&u, &p, 1e-4);
                assert!((exact - fd).abs() / exact < 1e-4, "{p:?} {u:?}: {exact} vs {fd}");
            }
            if p.rho > 0.0 {
                for u in [[0.3, 0.6, 0.45], [0.7, 0.2, 0.55]] {
                    let exact = copula_logdensity(&u, &p).unwrap().exp();
                    let fd = fd_density(&u, &p, 5e-4);
                    assert!((exact - fd).abs() / exact < 1e-4, "{p:?} {u:?}: {exact} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn clayton_closed_form_matches_generator_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for d in [2, 3, 5, 10, 20] {
            for theta in [0.3, 1.0, 7.5] {
                let p = par(Family::Clayton, theta);
                let u: Vec<f64> = (0..d).map(|_| rng.random_range(0.05..0.95)).collect();
                let a = copula_logdensity(&u, &p).unwrap();
                let b = copula_logdensity_generic(&u, &p).unwrap();
                assert!((a - b).abs() < 1e-8 * a.abs().max(1.0), "d={d} theta={theta}");
            }
        }
    }

    #[test]
    fn frank_near_zero_is_independent() {
        let v = copula_logdensity(&[0.4, 0.9], &par(Family::Frank, 1e-8)).unwrap();
        assert!(v.abs() < 1e-6);
        let v = copula_logdensity(&[0.4, 0.9], &par(Family::Frank, 0.0)).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn high_dimension_is_finite() {
        let u: Vec<f64> = (0..MAX_DIM).map(|k| 0.02 + 0.96 * k as f64 / MAX_DIM as f64).collect();
        for p in [par(Family::Clayton, 3.0), par(Family::Gumbel, 2.5), par(Family::Frank, 6.0)] {
            assert!(copula_logdensity(&u, &p).unwrap().is_finite(), "{p:?}");
        }
    }

    #[test]
    fn mixture_identities() {
        let c = par(Family::Clayton, 3.0);
        let u = [0.2, 0.7];
        let single = MixtureCopula::single(c, 2).unwrap();
        assert!((mixture_logdensity(&u, &single).unwrap() - copula_logdensity(&u, &c).unwrap()).abs() < 1e-14);
        let twin = MixtureCopula::new(vec![(0.3, c), (0.7, c)], 2).unwrap();
        assert!((mixture_logdensity(&u, &twin).unwrap() - copula_logdensity(&u, &c).unwrap()).abs() < 1e-12);
        let a = MixtureCopula::new(vec![(1.0, c), (3.0, par(Family::Gumbel, 2.0))], 2).unwrap();
        let b = MixtureCopula::new(vec![(2.0, c), (6.0, par(Family::Gumbel, 2.0))], 2).unwrap();
        assert_eq!(mixture_logdensity(&u, &a).unwrap(), mixture_logdensity(&u, &b).unwrap());
        assert!(MixtureCopula::new(vec![(-1.0, c)], 2).is_err());
    }

    #[test]
    fn tail_coefficients() {
        assert_eq!(tail_dependence(&par(Family::Clayton, 1.0)), (0.5, 0.0));
        assert_eq!(tail_dependence(&par(Family::Gumbel, 1.0)), (0.0, 0.0));
        assert_eq!(tail_dependence(&par(Family::Frank, 5.0)), (0.0, 0.0));
    }

    #[test]
    fn kendall_tau_of_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 4000;
        for (p, tau) in [
            (par(Family::Clayton, 1e-6), 0.0),
            (par(Family::Clayton, 2.0), 0.5),
            (par(Family::Gumbel, 2.0), 0.5),
        ] {
            let s = copula_sample(&p, 2, n, &mut rng).unwrap();
            let x: Vec<f64> = s.iter().map(|r| r[0]).collect();
            let y: Vec<f64> = s.iter().map(|r| r[1]).collect();
            let t = kendall_tau(&x, &y);
            assert!((t - tau).abs() < 0.02 + 2.0 / (n as f64).sqrt(), "{p:?}: {t}");
        }
    }

    #[test]
    fn frank_tau_matches_debye_integral() {
        // tau = 1 - 4/theta + 4 D_1(theta)/theta, D_1 = (1/theta) int_0^theta t/(e^t-1) dt
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for theta in [5.0, -5.0] {
            let a = f64::abs(theta);
            let m = 100_000;
            let h = a / m as f64;
            let d1: f64 = (0..m)
                .map(|k| {
                    let t = (k as f64 + 0.5) * h;
                    t / t.exp_m1()
                })
                .sum::<f64>()
                * h
                / a;
            let tau_pos = 1.0 - 4.0 / a + 4.0 * d1 / a;
            let expect = tau_pos * theta.signum();
            let s = copula_sample(&par(Family::Frank, theta), 2, 4000, &mut rng).unwrap();
            let x: Vec<f64> = s.iter().map(|r| r[0]).collect();
            let y: Vec<f64> = s.iter().map(|r| r[1]).collect();
            let t = kendall_tau(&x, &y);
            assert!((t - expect).abs() < 0.04, "theta={theta}: {t} vs {expect}");
        }
    }

    #[test]
    fn marginals_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let crit = 1.628 / (n as f64).sqrt();
        let mix = MixtureCopula::new(
            vec![(0.3, par(Family::Clayton, 3.0)), (0.3, par(Family::Gumbel, 2.0)), (0.4, par(Family::Frank, 5.0))],
            3,
        )
        .unwrap();
        let draws = [
            copula_sample(&par(Family::Clayton, 2.0), 3, n, &mut rng).unwrap(),
            copula_sample(&par(Family::Gumbel, 2.5), 3, n, &mut rng).unwrap(),
            copula_sample(&par(Family::Frank, 6.0), 3, n, &mut rng).unwrap(),
            copula_sample(&par(Family::Frank, -6.0), 2, n, &mut rng).unwrap(),
            mixture_sample(&mix, n, &mut rng),
        ];
        for (which, s) in draws.iter().enumerate() {
            for k in 0..s[0].len() {
                let mut col: Vec<f64> = s.iter().map(|r| r[k]).collect();
                col.sort_by(f64::total_cmp);
                let ks = col
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| ((i + 1) as f64 / n as f64 - x).max(x - i as f64 / n as f64))
                    .fold(0.0, f64::max);
                assert!(ks < crit, "sample {which} column {k}: KS {ks} >= {crit}");
            }
        }
    }

    fn family_strategy() -> impl Strategy<Value = ArchimedeanParam> {
        prop_oneof![
            (0.05f64..10.0).prop_map(|r| par(Family::Clayton, r)),
            (1.0f64..8.0).prop_map(|r| par(Family::Gumbel, r)),
            (0.05f64..15.0).prop_map(|r| par(Family::Frank, r)),
        ]
    }

    proptest! {
        #[test]
        fn density_is_symmetric(p in family_strategy(), u in prop::collection::vec(0.01f64..0.99, 2..6)) {
            let a = copula_logdensity(&u, &p).unwrap();
            let mut r = u.clone();
            r.reverse();
            r.rotate_left(1);
            let b = copula_logdensity(&r, &p).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn mixture_box_volumes_nonnegative(
            r1 in 0.05f64..10.0, r2 in 1.0f64..8.0, r3 in -10.0f64..10.0, w in 0.0f64..1.0,
            a in (0.0f64..1.0, 0.0f64..1.0), b in (0.0f64..1.0, 0.0f64..1.0)
        ) {
            let mix = MixtureCopula::new(vec![
                (w, par(Family::Clayton, r1)),
                (1.0 - w, par(Family::Gumbel, r2)),
                (0.5, par(Family::Frank, r3)),
            ], 2).unwrap();
            let (x0, x1) = (a.0.min(b.0), a.0.max(b.0));
            let (y0, y1) = (a.1.min(b.1), a.1.max(b.1));
            let c = |x: f64, y: f64| mixture_cdf(&[x, y], &mix).unwrap();
            let vol = c(x1, y1) - c(x0, y1) - c(x1, y0) + c(x0, y0);
            prop_assert!(vol >= -1e-12);
        }

        #[test]
        fn mixture_margins(r1 in 0.05f64..10.0, r2 in 1.0f64..8.0, x in 0.0f64..=1.0) {
            let mix = MixtureCopula::new(vec![(0.4, par(Family::Clayton, r1)), (0.6, par(Family::Gumbel, r2))], 3).unwrap();
            prop_assert!((mixture_cdf(&[1.0, x, 1.0], &mix).unwrap() - x).abs() < 1e-10);
            prop_assert_eq!(mixture_cdf(&[x, 0.0, 0.5], &mix).unwrap(), 0.0);
        }

        #[test]
        fn clayton_density_continuous_at_independence(u in prop::collection::vec(0.05f64..0.95, 2..5)) {
            let small = copula_logdensity(&u, &par(Family::Clayton, 1e-9)).unwrap();
            prop_assert!(small.abs() < 1e-6);
        }
    }
}
