//! Gaussian likelihood of the observed log ratios (Models I to III).
//!
//! Accident year `i` observes `y_i = (xi_0..xi_{J-i}, zeta_0..zeta_{J-i-1}, d_i)`
//! where `d_i = log I(i,J-i) - log P(i,J-i)` is present for `i >= 1`. Each
//! entry is a linear function `y_i = A_i Xi_i` of the full ratio vector
//! `Xi_i = (xi_0..xi_J, zeta_0..zeta_{J-1})`, so `E[y_i] = G_i theta` with
//! `G_i = A_i diag(1, .., 1, -1, .., -1)`. The map from observed log levels to
//! the stacked `y` is unit triangular, so densities agree on both scales.

use nalgebra::{DMatrix, DVector};

use super::{derived_scales, DependenceSpec, DevelopmentFactors};
use crate::error::{Error, Result};
use crate::linalg::{block_diag, mvn_logpdf, SpdMatrix};
use crate::triangle::{Cell, LogDevelopmentRatios, PermutationPlan, Source};

/// Observation design of one accident year.
#[derive(Clone, Debug)]
pub struct YearDesign {
    pub year: usize,
    /// `n_i x (2J+1)` selection / summation map on the full ratio vector.
    pub a: DMatrix<f64>,
    /// Observed log-level cell carried by each row. The diagonal ratio is
    /// labelled by `I(i, J-i)`.
    pub labels: Vec<Cell>,
}

impl YearDesign {
    pub fn new(dev_max: usize, i: usize) -> Self {
        let n = dev_max;
        let k = n - i;
        let nf = 2 * n + 1;
        let rows = (k + 1) + k + usize::from(i >= 1);
        let mut a = DMatrix::zeros(rows, nf);
        let mut labels = Vec::with_capacity(rows);
        for j in 0..=k {
            a[(j, j)] = 1.0;
            labels.push(Cell::new(i, j, Source::P));
        }
        for j in 0..k {
            a[(k + 1 + j, n + 1 + j)] = 1.0;
            labels.push(Cell::new(i, j, Source::I));
        }
        if i >= 1 {
            let r = rows - 1;
            for m in k + 1..=n {
                a[(r, m)] = 1.0;
            }
            for l in k..n {
                a[(r, n + 1 + l)] = 1.0;
            }
            labels.push(Cell::new(i, k, Source::I));
        }
        Self { year: i, a, labels }
    }

    pub fn len(&self) -> usize {
        self.a.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.a.nrows() == 0
    }

    /// `G_i`, the map from `theta = (Phi, Psi)` to `E[y_i]`.
    pub fn g(&self) -> DMatrix<f64> {
        let n_phi = self.a.ncols().div_ceil(2);
        let mut g = self.a.clone();
        for c in n_phi..g.ncols() {
            g.column_mut(c).neg_mut();
        }
        g
    }

    pub fn observation(&self, r: &LogDevelopmentRatios) -> DVector<f64> {
        let i = self.year;
        let mut y: Vec<f64> = r.xi[i].iter().chain(&r.zeta[i]).copied().collect();
        if i >= 1 {
            y.push(r.diagonal_ratio(i));
        }
        DVector::from_vec(y)
    }
}

pub fn year_designs(dev_max: usize) -> Vec<YearDesign> {
    (0..=dev_max).map(|i| YearDesign::new(dev_max, i)).collect()
}

/// Labels of the stacked observation vector in canonical (year-major) order.
pub fn stacked_labels(dev_max: usize) -> Vec<Cell> {
    year_designs(dev_max).into_iter().flat_map(|d| d.labels).collect()
}

pub fn stacked_observation(r: &LogDevelopmentRatios) -> DVector<f64> {
    let ys: Vec<DVector<f64>> = year_designs(r.dev_max).iter().map(|d| d.observation(r)).collect();
    stack(&ys)
}

fn stack(parts: &[DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(parts.iter().map(|p| p.len()).sum(), parts.iter().flat_map(|p| p.iter().copied()))
}

fn vstack(parts: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = parts.iter().map(|p| p.nrows()).sum();
    let cols = parts[0].ncols();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r0 = 0;
    for p in parts {
        out.rows_mut(r0, p.nrows()).copy_from(p);
        r0 += p.nrows();
    }
    out
}

/// Independent Gaussian block of the observations: `y ~ N(G theta, K)`.
#[derive(Clone, Debug)]
pub struct GaussianGroup {
    pub years: Vec<usize>,
    pub y: DVector<f64>,
    pub g: DMatrix<f64>,
    pub k: SpdMatrix,
}

impl GaussianGroup {
    pub fn loglik(&self, theta: &DevelopmentFactors) -> Result<f64> {
        mvn_logpdf(&self.y, &(&self.g * theta.theta_vector()), &self.k)
    }
}

fn year_covariance(
    d: &YearDesign,
    theta: &DevelopmentFactors,
    dep: &DependenceSpec,
) -> Result<DMatrix<f64>> {
    let n = theta.dev_max();
    let i = d.year;
    let k = n - i;
    Ok(match dep {
        DependenceSpec::ModelI => {
            let full = DMatrix::from_diagonal(&DVector::from_vec(theta.ratio_variances()));
            &d.a * full * d.a.transpose()
        }
        DependenceSpec::ModelII { sigma, per_year, .. } => {
            let s = per_year.as_ref().map_or(sigma, |py| &py[i]);
            &d.a * s.matrix() * d.a.transpose()
        }
        DependenceSpec::ModelIII { tele } => {
            let p = tele.payment_blocks[i].matrix();
            let empty = DMatrix::zeros(0, 0);
            let inc = if i < n { tele.incurred_blocks[i].matrix() } else { &empty };
            let v = if i >= 1 {
                DMatrix::from_element(1, 1, derived_scales(theta)?.diag_var(k))
            } else {
                DMatrix::zeros(0, 0)
            };
            block_diag(&[p, inc, &v])
        }
        DependenceSpec::ModelIV { .. } => {
            return Err(Error::config("dependence", "Model IV has no Gaussian ratio form"))
        }
    })
}

/// Independent observation groups: one per accident year, or a single joint
/// group when Model II carries a cross-year `Omega`.
pub fn covariance_groups(theta: &DevelopmentFactors, dep: &DependenceSpec) -> Result<Vec<(Vec<usize>, DMatrix<f64>)>> {
    let n = theta.dev_max();
    dep.validate(n)?;
    let designs = year_designs(n);
    if let DependenceSpec::ModelII { sigma, omega: Some(omega), .. } = dep {
        let sizes: Vec<usize> = designs.iter().map(|d| d.len()).collect();
        let total: usize = sizes.iter().sum();
        let mut k = DMatrix::zeros(total, total);
        let mut r0 = 0;
        for (a, da) in designs.iter().enumerate() {
            let mut c0 = 0;
            for (b, db) in designs.iter().enumerate() {
                let blk = &da.a * sigma.matrix() * db.a.transpose() * omega.matrix()[(a, b)];
                k.view_mut((r0, c0), (sizes[a], sizes[b])).copy_from(&blk);
                c0 += sizes[b];
            }
            r0 += sizes[a];
        }
        return Ok(vec![((0..=n).collect(), k)]);
    }
    designs
        .iter()
        .map(|d| Ok((vec![d.year], year_covariance(d, theta, dep)?)))
        .collect()
}

pub fn gaussian_groups(
    r: &LogDevelopmentRatios,
    theta: &DevelopmentFactors,
    dep: &DependenceSpec,
) -> Result<Vec<GaussianGroup>> {
    if r.dev_max != theta.dev_max() {
        return Err(Error::LengthMismatch { expected: r.dev_max, got: theta.dev_max() });
    }
    let designs = year_designs(r.dev_max);
    covariance_groups(theta, dep)?
        .into_iter()
        .map(|(years, k)| {
            let ys: Vec<DVector<f64>> = years.iter().map(|&i| designs[i].observation(r)).collect();
            let gs: Vec<DMatrix<f64>> = years.iter().map(|&i| designs[i].g()).collect();
            Ok(GaussianGroup {
                y: stack(&ys),
                g: vstack(&gs),
                k: SpdMatrix::new(k)?,
                years,
            })
        })
        .collect()
}

/// Log density of the observed log ratios (equivalently of the observed log
/// levels) under a Gaussian dependence structure.
pub fn loglik_gaussian(
    r: &LogDevelopmentRatios,
    theta: &DevelopmentFactors,
    dep: &DependenceSpec,
) -> Result<f64> {
    gaussian_groups(r, theta, dep)?.iter().map(|g| g.loglik(theta)).sum()
}

/// Log density of a permuted stacked observation vector.
///
/// `x_obs[k]` is entry `plan.order()[k]` of the canonical stacked vector
/// (see [`stacked_labels`]); the mean and covariance are permuted the same
/// way, so any consistent reordering leaves the value unchanged.
pub fn loglik_gaussian_copula(
    x_obs: &DVector<f64>,
    theta: &DevelopmentFactors,
    dep: &DependenceSpec,
    plan: &PermutationPlan,
) -> Result<f64> {
    let n = theta.dev_max();
    let designs = year_designs(n);
    let total: usize = designs.iter().map(|d| d.len()).sum();
    if x_obs.len() != total {
        return Err(Error::LengthMismatch { expected: total, got: x_obs.len() });
    }
    let th = theta.theta_vector();
    let means: Vec<DVector<f64>> = designs.iter().map(|d| d.g() * &th).collect();
    let mean = stack(&means);
    let groups = covariance_groups(theta, dep)?;
    let blocks: Vec<&DMatrix<f64>> = groups.iter().map(|(_, k)| k).collect();
    let cov = block_diag(&blocks);
    let pm = plan.apply_vector(&mean)?;
    let pc = SpdMatrix::new(plan.apply_symmetric(&cov)?)?;
    mvn_logpdf(x_obs, &pm, &pc)
}
