//! Predictive ultimates, reserve distributions and covariance eigen summaries.
//!
//! For the Gaussian models the only unobserved quantity needed per accident
//! year `i >= 1` is `S_i = xi_{J-i+1} + .. + xi_J`, the log growth from the
//! latest payment to the ultimate. It is drawn from its Gaussian conditional
//! given the observed ratios of the same dependence group.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{block_diag, gaussian_condition, SpdMatrix};
use crate::model::gaussian::year_designs;
use crate::model::{DependenceSpec, DevelopmentFactors};
use crate::sampler::{cov_blocks, ChainState};
use crate::triangle::{log_ratios, ClaimsTriangle, LogLevels};

/// `samples[s][i]`: predictive ultimate `P(i,J)` of accident year `i` in draw `s`.
#[derive(Clone, Debug, PartialEq)]
pub struct UltimateSamples {
    pub samples: Vec<Vec<f64>>,
}

/// Covariance of the full ratio vector `(xi_0..xi_J, zeta_0..zeta_{J-1})` of year `i`.
pub(crate) fn full_ratio_cov(theta: &DevelopmentFactors, dep: &DependenceSpec, i: usize) -> Result<DMatrix<f64>> {
    let n = theta.dev_max();
    let k = n - i;
    let s2 = theta.sigma2();
    let t2 = theta.tau2();
    Ok(match dep {
        DependenceSpec::ModelI => DMatrix::from_diagonal(&DVector::from_vec(theta.ratio_variances())),
        DependenceSpec::ModelII { sigma, per_year, .. } => {
            per_year.as_ref().map_or(sigma, |py| &py[i]).matrix().clone()
        }
        DependenceSpec::ModelIII { tele } => {
            let fut_p = DMatrix::from_diagonal(&DVector::from_vec(s2[k + 1..].to_vec()));
            let empty = DMatrix::zeros(0, 0);
            let inc = if i < n { tele.incurred_blocks[i].matrix() } else { &empty };
            let fut_i = DMatrix::from_diagonal(&DVector::from_vec(t2[k..].to_vec()));
            block_diag(&[tele.payment_blocks[i].matrix(), &fut_p, inc, &fut_i])
        }
        DependenceSpec::ModelIV { .. } => {
            return Err(Error::config("dependence", "Model IV ultimates come from the augmented state"))
        }
    })
}

/// `[s_i; A_i]`: the future-growth row (years `i >= 1`) stacked on the
/// observation design.
fn extended_design(n: usize, i: usize, a: &DMatrix<f64>) -> DMatrix<f64> {
    if i == 0 {
        return a.clone();
    }
    let mut b = DMatrix::zeros(a.nrows() + 1, a.ncols());
    for m in n - i + 1..=n {
        b[(0, m)] = 1.0;
    }
    b.rows_mut(1, a.nrows()).copy_from(a);
    b
}

fn gaussian_ultimates<R: Rng + ?Sized>(
    state: &ChainState,
    levels: &LogLevels,
    y_obs: &[DVector<f64>],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let theta = &state.theta;
    let n = theta.dev_max();
    let designs = year_designs(n);
    let mean_full = theta.ratio_mean();
    let groups: Vec<Vec<usize>> = match &state.dep {
        DependenceSpec::ModelII { omega: Some(_), .. } => vec![(0..=n).collect()],
        _ => (0..=n).map(|i| vec![i]).collect(),
    };
    let omega = |a: usize, b: usize| match &state.dep {
        DependenceSpec::ModelII { omega: Some(o), .. } => o.matrix()[(a, b)],
        _ => f64::from(u8::from(a == b)),
    };
    let mut ult = vec![0.0; n + 1];
    ult[0] = levels.log_p[0][n].exp();
    for years in groups {
        let bs: Vec<DMatrix<f64>> = years.iter().map(|&i| extended_design(n, i, &designs[i].a)).collect();
        let covs: Vec<DMatrix<f64>> = years.iter().map(|&i| full_ratio_cov(theta, &state.dep, i)).collect::<Result<_>>()?;
        let sizes: Vec<usize> = bs.iter().map(|b| b.nrows()).collect();
        let total: usize = sizes.iter().sum();
        let mut cov = DMatrix::zeros(total, total);
        let mut mean = DVector::zeros(total);
        let mut vals = DVector::zeros(total);
        let mut obs_idx = Vec::new();
        let mut r0 = 0;
        for (a, &ya) in years.iter().enumerate() {
            mean.rows_mut(r0, sizes[a]).copy_from(&(&bs[a] * &mean_full));
            let off = usize::from(ya >= 1);
            vals.rows_mut(r0 + off, sizes[a] - off).copy_from(&y_obs[ya]);
            obs_idx.extend(r0 + off..r0 + sizes[a]);
            let mut c0 = 0;
            for (b, &yb) in years.iter().enumerate() {
                let w = omega(ya, yb);
                if w != 0.0 {
                    let blk = &bs[a] * &covs[a] * bs[b].transpose() * w;
                    cov.view_mut((r0, c0), (sizes[a], sizes[b])).copy_from(&blk);
                }
                c0 += sizes[b];
            }
            r0 += sizes[a];
        }
        if years.iter().all(|&i| i == 0) {
            continue;
        }
        let obs_vals = DVector::from_iterator(obs_idx.len(), obs_idx.iter().map(|&r| vals[r]));
        let cond = gaussian_condition(&mean, &SpdMatrix::new(cov)?, &obs_idx, &obs_vals)?;
        let draw = cond.sample(rng);
        for (u, &row) in cond.unobserved.iter().enumerate() {
            let mut r0 = 0;
            for (a, &ya) in years.iter().enumerate() {
                if row == r0 {
                    ult[ya] = (levels.log_p[ya][n - ya] + draw[u]).exp();
                }
                r0 += sizes[a];
            }
        }
    }
    Ok(ult)
}

/// One predictive ultimate per accident year for every retained posterior draw.
///
/// Models I to III sample the future log growth from its Gaussian
/// conditional; Model IV reads `P(i,J)` off the augmented cells.
pub fn predictive_ultimate<R: Rng + ?Sized>(
    draws: &[ChainState],
    tri: &ClaimsTriangle,
    rng: &mut R,
) -> Result<UltimateSamples> {
    let n = tri.dev_max();
    let levels = tri.log_levels();
    let ratios = log_ratios(tri);
    let y_obs: Vec<DVector<f64>> = year_designs(n).iter().map(|d| d.observation(&ratios)).collect();
    let samples = draws
        .iter()
        .map(|s| match (&s.dep, &s.aux) {
            (DependenceSpec::ModelIV { .. }, Some(aux)) => {
                Ok((0..=n).map(|i| aux.year_row(&levels, i)[n].exp()).collect())
            }
            (DependenceSpec::ModelIV { .. }, None) => Err(Error::config("aux", "Model IV draw without augmented state")),
            _ => gaussian_ultimates(s, &levels, &y_obs, rng),
        })
        .collect::<Result<_>>()?;
    Ok(UltimateSamples { samples })
}

/// Mean, standard deviation and type-7 quantiles at 5, 25, 50, 75 and 95%.
#[derive(Clone, Debug, PartialEq)]
pub struct ReserveStats {
    pub mean: f64,
    pub sd: f64,
    pub q: [f64; 5],
}

pub const RESERVE_PROBS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

/// Linear-interpolation quantile of sorted data (R type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl ReserveStats {
    pub fn from_samples(x: &[f64]) -> Self {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let sd = if x.len() > 1 {
            (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut s = x.to_vec();
        s.sort_by(f64::total_cmp);
        Self { mean, sd, q: RESERVE_PROBS.map(|p| quantile_sorted(&s, p)) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReserveSummary {
    pub per_accident: Vec<ReserveStats>,
    pub total: ReserveStats,
    /// `samples[i]`: reserve draws of accident year `i`.
    pub samples: Vec<Vec<f64>>,
    pub total_samples: Vec<f64>,
}

/// `R_i = P(i,J) - P(i,J-i)` per draw, with totals summed per draw.
pub fn reserve_distribution(ult: &UltimateSamples, tri: &ClaimsTriangle) -> Result<ReserveSummary> {
    let n = tri.dev_max();
    if ult.samples.is_empty() {
        return Err(Error::TooShort { need: 1, got: 0 });
    }
    let latest: Vec<f64> = (0..=n)
        .map(|i| tri.payment(i, n - i).ok_or_else(|| Error::config("triangle", format!("missing P({i},{})", n - i))))
        .collect::<Result<_>>()?;
    let mut samples = vec![Vec::with_capacity(ult.samples.len()); n + 1];
    let mut total_samples = Vec::with_capacity(ult.samples.len());
    for row in &ult.samples {
        if row.len() != n + 1 {
            return Err(Error::LengthMismatch { expected: n + 1, got: row.len() });
        }
        let mut tot = 0.0;
        for i in 0..=n {
            let r = if i == 0 { 0.0 } else { row[i] - latest[i] };
            samples[i].push(r);
            tot += r;
        }
        total_samples.push(tot);
    }
    Ok(ReserveSummary {
        per_accident: samples.iter().map(|s| ReserveStats::from_samples(s)).collect(),
        total: ReserveStats::from_samples(&total_samples),
        samples,
        total_samples,
    })
}

/// Equal-width histogram `(bin_left, bin_right, count)`.
pub fn histogram(x: &[f64], n_bins: usize) -> Vec<(f64, f64, usize)> {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if x.is_empty() || n_bins == 0 {
        return Vec::new();
    }
    let width = if hi > lo { (hi - lo) / n_bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; n_bins];
    for &v in x {
        let b = (((v - lo) / width).floor() as usize).min(n_bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(b, c)| (lo + b as f64 * width, lo + (b + 1) as f64 * width, c))
        .collect()
}

/// Eigen summary of one covariance block over draws.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenBlockSummary {
    pub label: String,
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q95: f64,
    /// Average of the sign-normalised principal eigenvectors, re-normalised.
    pub vector: DVector<f64>,
}

/// Largest eigenvalue and its unit eigenvector, first nonzero entry positive.
pub fn principal_eigen(s: &SpdMatrix) -> (f64, DVector<f64>) {
    let eig = SymmetricEigen::new(s.matrix().clone());
    let k = eig.eigenvalues.imax();
    let mut v = eig.eigenvectors.column(k).normalize();
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            v.neg_mut();
        }
    }
    (eig.eigenvalues[k], v)
}

pub fn posterior_cov_eigen_summary(blocks: &[(String, Vec<SpdMatrix>)]) -> Result<Vec<EigenBlockSummary>> {
    blocks
        .iter()
        .map(|(label, draws)| {
            let first = draws.first().ok_or(Error::TooShort { need: 1, got: 0 })?;
            let mut acc = DVector::zeros(first.dim());
            let lams: Vec<f64> = draws
                .iter()
                .map(|d| {
                    let (l, v) = principal_eigen(d);
                    acc += v;
                    l
                })
                .collect();
            let st = ReserveStats::from_samples(&lams);
            let norm = acc.norm();
            Ok(EigenBlockSummary {
                label: label.clone(),
                mean: st.mean,
                sd: st.sd,
                q05: st.q[0],
                q95: st.q[4],
                vector: if norm > 0.0 { acc / norm } else { acc },
            })
        })
        .collect()
}

/// Covariance blocks of every draw, keyed by trace label. Models without
/// sampled covariance blocks report their diagonal ratio (Model I) or
/// log-level (Model IV) variances as one block.
pub fn collect_cov_blocks(draws: &[ChainState]) -> Result<Vec<(String, Vec<SpdMatrix>)>> {
    let mut out: Vec<(String, Vec<SpdMatrix>)> = Vec::new();
    for s in draws {
        let mut blocks: Vec<(String, SpdMatrix)> =
            cov_blocks(&s.dep).into_iter().map(|(l, m)| (l, m.clone())).collect();
        if blocks.is_empty() {
            let diag = match &s.dep {
                DependenceSpec::ModelIV { sigma_diag, .. } => sigma_diag.clone(),
                _ => s.theta.ratio_variances(),
            };
            blocks.push(("diag".into(), SpdMatrix::from_diagonal(&diag)?));
        }
        if out.is_empty() {
            out = blocks.iter().map(|(l, _)| (l.clone(), Vec::with_capacity(draws.len()))).collect();
        }
        for ((_, dst), (_, m)) in out.iter_mut().zip(blocks) {
            dst.push(m);
        }
    }
    Ok(out)
}
