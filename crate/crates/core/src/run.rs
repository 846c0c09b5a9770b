//! Run orchestration: chains in parallel, then diagnostics, reserves and
//! artifacts written by the calling thread in a fixed order.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::{DiagnosticsSection, RunConfig, SimulateConfig};
use crate::diagnostics::{burnin_discard, diagnose, DiagnosticsRow, Thresholds, TraceMatrix};
use crate::error::{Error, Result};
use crate::io;
use crate::reserving::{
    collect_cov_blocks, histogram, posterior_cov_eigen_summary, predictive_ultimate, reserve_distribution,
    ReserveSummary,
};
use crate::sampler::{chain_rng, run_chain, ChainOutput, ChainState, ModelContext};
use crate::simulate::simulate_triangle;
use crate::triangle::ClaimsTriangle;

/// Stream index of the predictive generator, disjoint from chain streams.
const PREDICTIVE_STREAM: usize = 1 << 32;

pub const MANIFEST: &str = "manifest.json";
pub const DIAGNOSTICS_CSV: &str = "diagnostics.csv";
pub const RESERVES_CSV: &str = "reserves.csv";
pub const HISTOGRAM_CSV: &str = "reserve_histogram.csv";
pub const EIGEN_CSV: &str = "eigen_summary.csv";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub config: RunConfig,
    pub seed: u64,
    pub versions: Versions,
    pub artifacts: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Versions {
    pub pic_core: String,
}

impl Versions {
    pub fn current() -> Self {
        Self { pic_core: env!("CARGO_PKG_VERSION").to_string() }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub chains: Vec<ChainOutput>,
    pub diagnostics: Option<Vec<DiagnosticsRow>>,
    pub reserves: Option<ReserveSummary>,
}

impl RunOutcome {
    pub fn diagnostics_pass(&self) -> bool {
        self.diagnostics.as_ref().map_or(true, |rows| rows.iter().all(|r| r.pass))
    }
}

/// Starting state of chain `c`: the configured values with `Phi`, `Psi`
/// moved by `jitter` standard deviations.
fn chain_start<R: Rng + ?Sized>(ctx: &ModelContext, cfg: &RunConfig, rng: &mut R) -> Result<ChainState> {
    let setup = cfg.setup(&ctx.tri)?;
    let mut theta = setup.theta;
    let j = cfg.init.jitter;
    if j > 0.0 {
        for (p, s) in theta.phi.iter_mut().zip(&theta.sigma) {
            *p += j * s * rng.sample::<f64, _>(StandardNormal);
        }
        for (p, s) in theta.psi.iter_mut().zip(&theta.tau) {
            *p += j * s * rng.sample::<f64, _>(StandardNormal);
        }
    }
    ctx.initial_state(theta, setup.dep)
}

/// Runs all chains of `cfg` on `tri`; one worker thread per chain.
pub fn run_chains(cfg: &RunConfig, tri: &ClaimsTriangle) -> Result<(ModelContext, Vec<ChainOutput>)> {
    let setup = cfg.setup(tri)?;
    let ctx = ModelContext::new(tri.clone(), setup.priors)?;
    let s = &cfg.sampler;
    let outputs = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..s.n_chains)
            .map(|c| {
                let ctx = &ctx;
                let scfg = &setup.sampler;
                scope.spawn(move || -> Result<ChainOutput> {
                    let mut rng = chain_rng(s.seed, c);
                    let init = chain_start(ctx, cfg, &mut rng)?;
                    run_chain(ctx, scfg, init, s.n_sweeps, s.keep_every, &mut rng)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::config("sampler", "chain worker panicked"))))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok((ctx, outputs))
}

pub fn trace_matrix(chains: &[ChainOutput]) -> Result<TraceMatrix> {
    let names = chains.first().map(|c| c.names.clone()).unwrap_or_default();
    TraceMatrix::new(names, chains.iter().map(|c| c.rows.clone()).collect())
}

/// Diagnostics after discarding the configured burn-in.
pub fn diagnostics_for(traces: &TraceMatrix, d: &DiagnosticsSection, burnin_fraction: f64) -> Result<Vec<DiagnosticsRow>> {
    let kept = burnin_discard(traces, burnin_fraction)?;
    let prefixes: Vec<String> = d
        .prefixes
        .clone()
        .unwrap_or_else(|| crate::diagnostics::DEFAULT_MONITORED.iter().map(|s| s.to_string()).collect());
    let refs: Vec<&str> = prefixes.iter().map(String::as_str).collect();
    diagnose(&kept, &refs, &Thresholds { rhat: d.rhat, acf: d.acf, lag: d.lag }, d.split)
}

/// Executes a validated configuration and writes every artifact to
/// `cfg.data.output`.
pub fn execute_run(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let tri = io::read_triangle_csv(&cfg.data.input)?;
    let (ctx, chains) = run_chains(cfg, &tri)?;
    let out = cfg.data.output.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut artifacts = Vec::new();
    let mut emit = |name: &str, text: &str| -> Result<()> {
        io::write_file(&out.join(name), text)?;
        artifacts.push(name.to_string());
        Ok(())
    };
    for (c, ch) in chains.iter().enumerate() {
        emit(&io::trace_file_name(c), &io::trace_csv(&ch.names, &ch.rows))?;
    }
    let diagnostics = if cfg.diagnostics.enabled {
        let rows = diagnostics_for(&trace_matrix(&chains)?, &cfg.diagnostics, cfg.sampler.burnin_fraction)?;
        emit(DIAGNOSTICS_CSV, &io::diagnostics_csv(&rows, cfg.diagnostics.lag))?;
        Some(rows)
    } else {
        None
    };
    let draws: Vec<ChainState> = chains.iter().flat_map(|c| c.draws.iter().cloned()).collect();
    let reserves = if cfg.reserve.enabled && !draws.is_empty() {
        let mut rng = chain_rng(cfg.sampler.seed, PREDICTIVE_STREAM);
        let ult = predictive_ultimate(&draws, &ctx.tri, &mut rng)?;
        let r = reserve_distribution(&ult, &ctx.tri)?;
        emit(RESERVES_CSV, &io::reserves_csv(&r))?;
        emit(HISTOGRAM_CSV, &io::histogram_csv(&histogram(&r.total_samples, cfg.reserve.histogram_bins)))?;
        Some(r)
    } else {
        None
    };
    if !draws.is_empty() {
        let eig = posterior_cov_eigen_summary(&collect_cov_blocks(&draws)?)?;
        emit(EIGEN_CSV, &io::eigen_csv(&eig))?;
    }
    let manifest = Manifest { config: cfg.clone(), seed: cfg.sampler.seed, versions: Versions::current(), artifacts };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::config("manifest", e.to_string()))?;
    io::write_file(&out.join(MANIFEST), &(text + "\n"))?;
    Ok(RunOutcome { out_dir: out, chains, diagnostics, reserves })
}

/// Recomputes diagnostics from the traces in `dir`, using the diagnostics
/// settings and burn-in recorded in its manifest when present.
pub fn diagnose_dir(dir: &Path) -> Result<(Vec<DiagnosticsRow>, String)> {
    let traces = io::read_trace_dir(dir)?;
    if traces.n_chains() < 2 {
        return Err(Error::InsufficientChains(traces.n_chains()));
    }
    let mpath = dir.join(MANIFEST);
    let (section, fraction) = if mpath.exists() {
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: mpath.display().to_string(),
            line: e.line() as u64,
            msg: e.to_string(),
        })?;
        (m.config.diagnostics, m.config.sampler.burnin_fraction)
    } else {
        (DiagnosticsSection::default(), 0.2)
    };
    let rows = diagnostics_for(&traces, &section, fraction)?;
    let csv = io::diagnostics_csv(&rows, section.lag);
    Ok((rows, csv))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TruthFile {
    pub model: String,
    pub seed: u64,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub sigma: Vec<f64>,
    pub tau: Vec<f64>,
    pub ultimates: Vec<f64>,
    pub reserves: Vec<f64>,
}

/// Simulates a triangle and writes `triangle.csv` and `truth.json`.
pub fn execute_simulate(cfg: &SimulateConfig) -> Result<PathBuf> {
    let (theta, dep) = cfg.truth()?;
    let mut rng = chain_rng(cfg.seed, 0);
    let sim = simulate_triangle(&theta, &dep, &mut rng)?;
    let out = cfg.output.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    io::write_file(&out.join("triangle.csv"), &io::triangle_csv(&sim.tri))?;
    let n = theta.dev_max();
    let truth = TruthFile {
        model: dep.model_name().to_string(),
        seed: cfg.seed,
        ultimates: sim.log_p.iter().map(|r| r[n].exp()).collect(),
        reserves: sim.true_reserves(),
        phi: theta.phi,
        psi: theta.psi,
        sigma: theta.sigma,
        tau: theta.tau,
    };
    let text = serde_json::to_string_pretty(&truth).map_err(|e| Error::config("truth", e.to_string()))?;
    io::write_file(&out.join("truth.json"), &(text + "\n"))?;
    Ok(out)
}
