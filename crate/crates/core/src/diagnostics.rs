//! Convergence diagnostics over chain traces.

use crate::error::{Error, Result};

/// Per-chain, per-sweep values of named scalars.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceMatrix {
    names: Vec<String>,
    /// `chains[c][t][k]`: chain `c`, sweep `t`, name `k`.
    chains: Vec<Vec<Vec<f64>>>,
}

impl TraceMatrix {
    pub fn new(names: Vec<String>, chains: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let n = chains.first().map_or(0, Vec::len);
        for c in &chains {
            if c.len() != n {
                return Err(Error::LengthMismatch { expected: n, got: c.len() });
            }
            if let Some(row) = c.iter().find(|r| r.len() != names.len()) {
                return Err(Error::LengthMismatch { expected: names.len(), got: row.len() });
            }
        }
        Ok(Self { names, chains })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn n_sweeps(&self) -> usize {
        self.chains.first().map_or(0, Vec::len)
    }

    pub fn chain_rows(&self, c: usize) -> &[Vec<f64>] {
        &self.chains[c]
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownName(name.to_string()))
    }

    /// Trace of `name` in each chain.
    pub fn columns(&self, name: &str) -> Result<Vec<Vec<f64>>> {
        let k = self.index_of(name)?;
        Ok(self.chains.iter().map(|c| c.iter().map(|r| r[k]).collect()).collect())
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

/// Classic potential scale reduction factor from equal-length chains.
pub fn rhat(chains: &[Vec<f64>]) -> Result<f64> {
    let m = chains.len();
    if m < 2 {
        return Err(Error::InsufficientChains(m));
    }
    let n = chains[0].len();
    if n < 10 {
        return Err(Error::TooShort { need: 10, got: n });
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = chains.iter().map(|c| var(c)).sum::<f64>() / m as f64;
    let b = n as f64 * var(&means);
    if w == 0.0 {
        return Ok(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    let nf = n as f64;
    let v = (nf - 1.0) / nf * w + b / nf;
    Ok((v / w).sqrt())
}

pub fn gelman_rubin(traces: &TraceMatrix, name: &str) -> Result<f64> {
    rhat(&traces.columns(name)?)
}

/// R-hat on the first and second halves of every chain (middle sweep
/// dropped for odd lengths).
pub fn gelman_rubin_split(traces: &TraceMatrix, name: &str) -> Result<f64> {
    let cols = traces.columns(name)?;
    if cols.len() < 2 {
        return Err(Error::InsufficientChains(cols.len()));
    }
    let half = traces.n_sweeps() / 2;
    let n = traces.n_sweeps();
    let split: Vec<Vec<f64>> = cols
        .iter()
        .flat_map(|c| [c[..half].to_vec(), c[n - half..].to_vec()])
        .collect();
    rhat(&split)
}

/// Autocorrelations at lags `0..=max_lag` with the biased `1/n` estimator.
/// A constant trace gives `[1, 0, 0, ...]`.
pub fn acf(trace: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = trace.len();
    if n <= max_lag {
        return Err(Error::TooShort { need: max_lag + 1, got: n });
    }
    let m = mean(trace);
    let d: Vec<f64> = trace.iter().map(|x| x - m).collect();
    let c0 = d.iter().map(|x| x * x).sum::<f64>() / n as f64;
    let mut out = vec![0.0; max_lag + 1];
    out[0] = 1.0;
    if c0 == 0.0 {
        return Ok(out);
    }
    for (k, o) in out.iter_mut().enumerate().skip(1) {
        let ck = d[..n - k].iter().zip(&d[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        *o = ck / c0;
    }
    Ok(out)
}

/// Effective sample size over chains from the chain-averaged autocorrelation,
/// truncated by Geyer's initial positive sequence.
pub fn ess(chains: &[Vec<f64>]) -> Result<f64> {
    let m = chains.len();
    if m == 0 {
        return Err(Error::InsufficientChains(0));
    }
    let n = chains[0].len();
    if n < 4 {
        return Err(Error::TooShort { need: 4, got: n });
    }
    let max_lag = (n - 1).min(1000);
    let per: Vec<Vec<f64>> = chains.iter().map(|c| acf(c, max_lag)).collect::<Result<_>>()?;
    let rho: Vec<f64> = (0..=max_lag).map(|k| per.iter().map(|a| a[k]).sum::<f64>() / m as f64).collect();
    let mut tau = -1.0;
    let mut k = 0;
    while k < max_lag {
        let g = rho[k] + rho[k + 1];
        if g <= 0.0 {
            break;
        }
        tau += 2.0 * g;
        k += 2;
    }
    Ok((m * n) as f64 / tau.max(1.0 / (m * n) as f64))
}

/// Drops the leading `floor(fraction * n_sweeps)` sweeps of every chain.
pub fn burnin_discard(traces: &TraceMatrix, fraction: f64) -> Result<TraceMatrix> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::config("sampler.burnin_fraction", "must lie in [0, 1)"));
    }
    let drop = (fraction * traces.n_sweeps() as f64).floor() as usize;
    Ok(TraceMatrix {
        names: traces.names.clone(),
        chains: traces.chains.iter().map(|c| c[drop..].to_vec()).collect(),
    })
}

/// Standard error of the mean by non-overlapping batch means.
pub fn batch_means_se(x: &[f64], n_batches: usize) -> f64 {
    let b = x.len() / n_batches;
    let means: Vec<f64> = (0..n_batches).map(|k| mean(&x[k * b..(k + 1) * b])).collect();
    (var(&means) / n_batches as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    pub rhat: f64,
    pub acf: f64,
    pub lag: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { rhat: 1.5, acf: 0.10, lag: 20 }
    }
}

pub const DEFAULT_MONITORED: &[&str] = &["phi_", "psi_", "s2_", "t2_", "sigma_", "tau_", "rho"];

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticsRow {
    pub name: String,
    pub rhat: f64,
    /// Largest absolute lag autocorrelation over chains, with its sign.
    pub acf_lag: f64,
    pub ess: f64,
    pub pass: bool,
}

/// Traces too short for a statistic report NaN, which never passes.
fn nan_if_short(r: Result<f64>) -> Result<f64> {
    match r {
        Err(Error::TooShort { .. }) => Ok(f64::NAN),
        other => other,
    }
}

/// Diagnostics of every traced name starting with one of `prefixes`.
pub fn diagnose(
    traces: &TraceMatrix,
    prefixes: &[&str],
    th: &Thresholds,
    split: bool,
) -> Result<Vec<DiagnosticsRow>> {
    if traces.n_chains() < 2 {
        return Err(Error::InsufficientChains(traces.n_chains()));
    }
    let mut rows = Vec::new();
    for name in traces.names().iter().filter(|n| prefixes.iter().any(|p| n.starts_with(p))) {
        let cols = traces.columns(name)?;
        let r = nan_if_short(if split { gelman_rubin_split(traces, name) } else { rhat(&cols) })?;
        let mut worst: f64 = 0.0;
        for c in &cols {
            let a = nan_if_short(acf(c, th.lag).map(|v| v[th.lag]))?;
            if a.is_nan() || a.abs() > worst.abs() {
                worst = a;
            }
            if worst.is_nan() {
                break;
            }
        }
        let e = nan_if_short(ess(&cols))?;
        rows.push(DiagnosticsRow {
            name: name.clone(),
            rhat: r,
            acf_lag: worst,
            ess: e,
            pass: r < th.rhat && worst.abs() < th.acf,
        });
    }
    Ok(rows)
}
