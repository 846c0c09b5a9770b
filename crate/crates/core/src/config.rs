//! TOML run and simulation configuration.
//!
//! Any key can be overridden from the environment as
//! `PIC_<SECTION>__<KEY>=value` (top-level keys: `PIC_<KEY>`); the value is
//! parsed as a TOML value, falling back to a plain string.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::copula::{ArchimedeanParam, Family, MixtureCopula};
use crate::error::{Error, Result};
use crate::linalg::{InverseWishartParams, SpdMatrix, TelescopingBlockDiag};
use crate::model::{
    default_sigma_diag, CopulaPrior, CovariancePrior, DependenceSpec, DevelopmentFactors, HyperPriors, InvGamma,
};
use crate::sampler::{AmConfig, CovUpdate, SamplerConfig};
use crate::triangle::{log_ratios, ClaimsTriangle};

pub const ENV_PREFIX: &str = "PIC_";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    I,
    II,
    III,
    IV,
}

/// A scalar broadcast to every index, or one value per index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    pub fn expand(&self, len: usize, field: &str) -> Result<Vec<f64>> {
        match self {
            OneOrMany::One(x) => Ok(vec![*x; len]),
            OneOrMany::Many(v) if v.len() == len => Ok(v.clone()),
            OneOrMany::Many(v) => Err(Error::config(field, format!("expected {len} values, got {}", v.len()))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Triangle CSV, relative to the configuration file.
    pub input: PathBuf,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("pic_out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub n_chains: usize,
    pub n_sweeps: usize,
    /// Leading fraction of sweeps used for adaptation and discarded.
    pub burnin_fraction: f64,
    pub seed: u64,
    /// Keep every k-th post-burn-in state for prediction.
    pub keep_every: usize,
    pub w1: f64,
    pub fixed_scale: f64,
    pub adapt_scale: f64,
    pub warmup: Option<usize>,
    pub iw_dof: Option<f64>,
    pub continue_adapting: bool,
    pub cov_update: CovUpdate,
    pub sample_copula: bool,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let am = AmConfig::default();
        Self {
            n_chains: 4,
            n_sweeps: 5000,
            burnin_fraction: 0.2,
            seed: 1,
            keep_every: 1,
            w1: am.w1,
            fixed_scale: am.fixed_scale,
            adapt_scale: am.adapt_scale,
            warmup: am.warmup,
            iw_dof: am.iw_dof,
            continue_adapting: false,
            cov_update: CovUpdate::Manifold,
            sample_copula: true,
        }
    }
}

impl SamplerSection {
    pub fn burnin(&self) -> usize {
        (self.burnin_fraction * self.n_sweeps as f64).floor() as usize
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            am: AmConfig {
                w1: self.w1,
                fixed_scale: self.fixed_scale,
                adapt_scale: self.adapt_scale,
                warmup: self.warmup,
                iw_dof: self.iw_dof,
            },
            burnin: self.burnin(),
            continue_adapting: self.continue_adapting,
            cov_update: self.cov_update,
            sample_copula: self.sample_copula,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IgSpec {
    pub shape: f64,
    pub scale: f64,
}

impl IgSpec {
    fn build(&self, len: usize) -> Result<Vec<InvGamma>> {
        Ok(vec![InvGamma::new(self.shape, self.scale)?; len])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CopulaPriorSpec {
    pub upper: f64,
    /// Truncated Gaussian prior when both are set, uniform otherwise.
    pub mean: Option<f64>,
    pub sd: Option<f64>,
}

impl Default for CopulaPriorSpec {
    fn default() -> Self {
        Self { upper: 50.0, mean: None, sd: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    /// Prior means of `Phi` and `Psi`; empirical ratio means when absent.
    pub phi_mean: Option<Vec<f64>>,
    pub psi_mean: Option<Vec<f64>>,
    /// Prior variances of `Phi` and `Psi` (default 100).
    pub s2: Option<OneOrMany>,
    pub t2: Option<OneOrMany>,
    pub s2_prior: Option<IgSpec>,
    pub t2_prior: Option<IgSpec>,
    /// Setting both samples the observation scales (Models I and III).
    pub sigma2_prior: Option<IgSpec>,
    pub tau2_prior: Option<IgSpec>,
    /// Model IV marginal variances.
    pub sigma_diag_prior: Option<IgSpec>,
    /// Inverse-Wishart degrees of freedom; enables covariance sampling in
    /// Models II and III with prior mean equal to the initial covariance.
    pub cov_dof: Option<f64>,
    pub copula: CopulaPriorSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSection {
    pub phi: Option<Vec<f64>>,
    pub psi: Option<Vec<f64>>,
    pub sigma: Option<OneOrMany>,
    pub tau: Option<OneOrMany>,
    /// Per-chain dispersion of the `Phi`, `Psi` starting values in units of
    /// `sigma`, `tau`.
    pub jitter: f64,
}

impl Default for InitSection {
    fn default() -> Self {
        Self { phi: None, psi: None, sigma: None, tau: None, jitter: 0.5 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelIiSection {
    /// `(2J+1)^2` ratio covariance; `diag(sigma^2, tau^2)` when absent.
    pub sigma: Option<Vec<Vec<f64>>>,
    /// `(J+1)^2` cross-year correlation.
    pub omega: Option<Vec<Vec<f64>>>,
    pub per_year: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelIiiSection {
    /// Identity blocks instead of `diag(sigma^2)`, `diag(tau^2)` blocks.
    pub identity: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub family: Family,
    #[serde(default = "one")]
    pub weight: f64,
    pub rho: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CopulaSection {
    /// Mixture over the payment log levels; independence when empty.
    pub payment: Vec<ComponentSpec>,
    pub incurred: Vec<ComponentSpec>,
    /// Marginal variances of `(P_0..P_J, I_0..I_{J-1})`.
    pub sigma_diag: Option<Vec<f64>>,
}

fn mixture(spec: &[ComponentSpec], dim: usize, field: &str) -> Result<MixtureCopula> {
    if spec.is_empty() || dim < 2 {
        return Ok(MixtureCopula::independence(dim));
    }
    let comps = spec
        .iter()
        .map(|c| Ok((c.weight, ArchimedeanParam::new(c.family, c.rho)?)))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::config(field, e.to_string()))?;
    MixtureCopula::new(comps, dim).map_err(|e| Error::config(field, e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSection {
    pub enabled: bool,
    pub split: bool,
    /// Exit with status 2 when a monitored parameter fails; warn otherwise.
    pub fail_on_threshold: bool,
    pub rhat: f64,
    pub acf: f64,
    pub lag: usize,
    pub prefixes: Option<Vec<String>>,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self { enabled: true, split: false, fail_on_threshold: true, rhat: 1.5, acf: 0.10, lag: 20, prefixes: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReserveSection {
    pub enabled: bool,
    pub histogram_bins: usize,
}

impl Default for ReserveSection {
    fn default() -> Self {
        Self { enabled: true, histogram_bins: 40 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    pub data: DataSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub prior: PriorSection,
    #[serde(default)]
    pub init: InitSection,
    #[serde(default)]
    pub model_ii: ModelIiSection,
    #[serde(default)]
    pub model_iii: ModelIiiSection,
    #[serde(default)]
    pub copula: CopulaSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub reserve: ReserveSection,
}

/// Everything needed to start chains on one triangle.
#[derive(Clone, Debug)]
pub struct ModelSetup {
    pub priors: HyperPriors,
    pub theta: DevelopmentFactors,
    pub dep: DependenceSpec,
    pub sampler: SamplerConfig,
}

fn matrix(rows: &[Vec<f64>], n: usize, field: &str) -> Result<SpdMatrix> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::config(field, format!("expected a {n}x{n} matrix")));
    }
    SpdMatrix::new(DMatrix::from_fn(n, n, |r, c| rows[r][c])).map_err(|e| Error::config(field, e.to_string()))
}

/// Ratio means and standard deviations estimated column by column; columns
/// with a single observation borrow the previous column's deviation.
pub fn empirical_factors(tri: &ClaimsTriangle) -> DevelopmentFactors {
    let r = log_ratios(tri);
    let n = tri.dev_max();
    let column = |rows: &[Vec<f64>], j: usize| -> Vec<f64> { rows.iter().filter_map(|row| row.get(j).copied()).collect() };
    let moments = |x: &[f64]| -> (f64, Option<f64>) {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        if x.len() < 2 {
            return (m, None);
        }
        let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
        (m, Some(v.sqrt()).filter(|s| *s > 1e-3))
    };
    let fill = |sds: Vec<Option<f64>>| -> Vec<f64> {
        let mut last = 0.1;
        sds.into_iter()
            .map(|s| {
                last = s.unwrap_or(last);
                last
            })
            .collect()
    };
    let (phi, s_sd): (Vec<f64>, Vec<Option<f64>>) = (0..=n).map(|j| moments(&column(&r.xi, j))).unzip();
    let (zm, t_sd): (Vec<f64>, Vec<Option<f64>>) = (0..n).map(|j| moments(&column(&r.zeta, j))).unzip();
    let psi = zm.into_iter().map(|m| -m).collect();
    DevelopmentFactors { phi, psi, sigma: fill(s_sd), tau: fill(t_sd) }
}

impl RunConfig {
    /// Checks that do not need the triangle.
    pub fn validate(&self) -> Result<()> {
        let s = &self.sampler;
        if self.diagnostics.enabled && s.n_chains < 2 {
            return Err(Error::config("sampler.n_chains", "diagnostics need at least 2 chains"));
        }
        if s.n_chains == 0 {
            return Err(Error::config("sampler.n_chains", "must be positive"));
        }
        if s.n_sweeps == 0 {
            return Err(Error::config("sampler.n_sweeps", "must be positive"));
        }
        if !(0.0..1.0).contains(&s.burnin_fraction) {
            return Err(Error::config("sampler.burnin_fraction", "must lie in [0, 1)"));
        }
        if s.keep_every == 0 {
            return Err(Error::config("sampler.keep_every", "must be positive"));
        }
        if self.reserve.enabled && self.reserve.histogram_bins == 0 {
            return Err(Error::config("reserve.histogram_bins", "must be positive"));
        }
        if !self.data.input.exists() {
            return Err(Error::config("data.input", format!("file not found: {}", self.data.input.display())));
        }
        self.sampler_config().am.validate()
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        self.sampler.sampler_config()
    }

    pub fn monitored_prefixes(&self) -> Vec<String> {
        self.diagnostics
            .prefixes
            .clone()
            .unwrap_or_else(|| crate::diagnostics::DEFAULT_MONITORED.iter().map(|s| s.to_string()).collect())
    }

    /// Priors, starting values and dependence structure for `tri`.
    pub fn setup(&self, tri: &ClaimsTriangle) -> Result<ModelSetup> {
        let n = tri.dev_max();
        let emp = empirical_factors(tri);
        let (n1, nf) = (n + 1, 2 * n + 1);
        let vec_or = |v: &Option<Vec<f64>>, d: &[f64], field: &str| -> Result<Vec<f64>> {
            match v {
                Some(v) if v.len() != d.len() => {
                    Err(Error::config(field, format!("expected {} values, got {}", d.len(), v.len())))
                }
                Some(v) => Ok(v.clone()),
                None => Ok(d.to_vec()),
            }
        };
        let init = &self.init;
        let sigma = match &init.sigma {
            Some(s) => s.expand(n1, "init.sigma")?,
            None => emp.sigma.clone(),
        };
        let tau = match &init.tau {
            Some(s) => s.expand(n, "init.tau")?,
            None => emp.tau.clone(),
        };
        let theta = DevelopmentFactors::new(
            vec_or(&init.phi, &emp.phi, "init.phi")?,
            vec_or(&init.psi, &emp.psi, "init.psi")?,
            sigma,
            tau,
        )
        .map_err(|e| Error::config("init", e.to_string()))?;

        let p = &self.prior;
        let mut priors = HyperPriors::vague(n, 100.0, 100.0);
        priors.phi_mean = vec_or(&p.phi_mean, &emp.phi, "prior.phi_mean")?;
        priors.psi_mean = vec_or(&p.psi_mean, &emp.psi, "prior.psi_mean")?;
        if let Some(s) = &p.s2 {
            priors.s2 = s.expand(n1, "prior.s2")?;
        }
        if let Some(s) = &p.t2 {
            priors.t2 = s.expand(n, "prior.t2")?;
        }
        priors.s2_prior = p.s2_prior.map(|g| g.build(n1)).transpose()?;
        priors.t2_prior = p.t2_prior.map(|g| g.build(n)).transpose()?;
        priors.sigma2_prior = p.sigma2_prior.map(|g| g.build(n1)).transpose()?;
        priors.tau2_prior = p.tau2_prior.map(|g| g.build(n)).transpose()?;
        priors.copula_prior = match (p.copula.mean, p.copula.sd) {
            (Some(mean), Some(sd)) => CopulaPrior::Gaussian { mean, sd, upper: p.copula.upper },
            _ => CopulaPrior::Uniform { upper: p.copula.upper },
        };
        let iw = |s: &SpdMatrix, k: f64| -> Result<InverseWishartParams> {
            let lam = SpdMatrix::new(s.matrix() * (k - s.dim() as f64 - 1.0))
                .map_err(|_| Error::config("prior.cov_dof", "must exceed dimension + 1"))?;
            InverseWishartParams::new(lam, k)
        };

        let dep = match self.model {
            ModelKind::I => DependenceSpec::ModelI,
            ModelKind::II => {
                let sigma = match &self.model_ii.sigma {
                    Some(m) => matrix(m, nf, "model_ii.sigma")?,
                    None => SpdMatrix::from_diagonal(&theta.ratio_variances())?,
                };
                let omega = self.model_ii.omega.as_ref().map(|m| matrix(m, n1, "model_ii.omega")).transpose()?;
                if let Some(k) = p.cov_dof {
                    priors.cov_prior = Some(CovariancePrior::Shared(iw(&sigma, k)?));
                }
                let per_year = self.model_ii.per_year.then(|| vec![sigma.clone(); n1]);
                DependenceSpec::ModelII { sigma, omega, per_year }
            }
            ModelKind::III => {
                let tele = if self.model_iii.identity {
                    TelescopingBlockDiag::identity(n)
                } else {
                    let (s2, t2) = (theta.sigma2(), theta.tau2());
                    TelescopingBlockDiag::new(
                        (0..=n).map(|i| SpdMatrix::from_diagonal(&s2[..=n - i])).collect::<Result<_>>()?,
                        (0..n).map(|i| SpdMatrix::from_diagonal(&t2[..n - i])).collect::<Result<_>>()?,
                    )?
                };
                if let Some(k) = p.cov_dof {
                    priors.cov_prior = Some(CovariancePrior::Blocks {
                        payment: tele.payment_blocks.iter().map(|b| iw(b, k)).collect::<Result<_>>()?,
                        incurred: tele.incurred_blocks.iter().map(|b| iw(b, k)).collect::<Result<_>>()?,
                    });
                }
                DependenceSpec::ModelIII { tele }
            }
            ModelKind::IV => {
                let sigma_diag = match &self.copula.sigma_diag {
                    Some(v) if v.len() != nf => {
                        return Err(Error::config("copula.sigma_diag", format!("expected {nf} values")))
                    }
                    Some(v) => v.clone(),
                    None => default_sigma_diag(&theta)?,
                };
                priors.sigma_diag_prior = p.sigma_diag_prior.map(|g| g.build(nf)).transpose()?;
                DependenceSpec::ModelIV {
                    mix_p: mixture(&self.copula.payment, n1, "copula.payment")?,
                    mix_i: mixture(&self.copula.incurred, n, "copula.incurred")?,
                    sigma_diag,
                }
            }
        };
        Ok(ModelSetup { priors, theta, dep, sampler: self.sampler_config() })
    }
}

/// Generating parameters for `simulate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSection {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub sigma: OneOrMany,
    pub tau: OneOrMany,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub model: ModelKind,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Directory receiving `triangle.csv` and `truth.json`.
    #[serde(default = "default_sim_output")]
    pub output: PathBuf,
    pub truth: TruthSection,
    #[serde(default)]
    pub model_ii: ModelIiSection,
    #[serde(default)]
    pub model_iii: ModelIiiSection,
    #[serde(default)]
    pub copula: CopulaSection,
}

fn default_seed() -> u64 {
    1
}

fn default_sim_output() -> PathBuf {
    PathBuf::from("pic_sim")
}

impl SimulateConfig {
    pub fn truth(&self) -> Result<(DevelopmentFactors, DependenceSpec)> {
        let t = &self.truth;
        if t.phi.is_empty() {
            return Err(Error::config("truth.phi", "needs at least one value"));
        }
        let n = t.phi.len() - 1;
        let theta = DevelopmentFactors::new(
            t.phi.clone(),
            t.psi.clone(),
            t.sigma.expand(n + 1, "truth.sigma")?,
            t.tau.expand(n, "truth.tau")?,
        )
        .map_err(|e| Error::config("truth", e.to_string()))?;
        let stand_in = RunConfig {
            model: self.model,
            data: DataSection { input: PathBuf::new(), output: PathBuf::new() },
            sampler: SamplerSection::default(),
            prior: PriorSection::default(),
            init: InitSection {
                phi: Some(theta.phi.clone()),
                psi: Some(theta.psi.clone()),
                sigma: Some(OneOrMany::Many(theta.sigma.clone())),
                tau: Some(OneOrMany::Many(theta.tau.clone())),
                jitter: 0.0,
            },
            model_ii: self.model_ii.clone(),
            model_iii: self.model_iii.clone(),
            copula: self.copula.clone(),
            diagnostics: DiagnosticsSection::default(),
            reserve: ReserveSection::default(),
        };
        let dummy = ClaimsTriangle::from_rows(
            &(0..=n).map(|i| vec![1.0; n + 1 - i]).collect::<Vec<_>>(),
            &(0..=n).map(|i| vec![1.0; n + 1 - i]).collect::<Vec<_>>(),
        )?;
        let setup = stand_in.setup(&dummy)?;
        Ok((setup.theta, setup.dep))
    }
}

fn line_of(text: &str, offset: usize) -> u64 {
    text[..offset.min(text.len())].matches('\n').count() as u64 + 1
}

fn toml_error(path: &Path, text: &str, e: toml::de::Error) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line: e.span().map_or(0, |s| line_of(text, s.start)),
        msg: e.message().to_string(),
    }
}

impl std::str::FromStr for RunConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| toml_error(Path::new("<inline>"), text, e))
    }
}

impl std::str::FromStr for SimulateConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| toml_error(Path::new("<inline>"), text, e))
    }
}

/// Applies `PIC_SECTION__KEY=value` pairs to a parsed table.
pub fn apply_env_overrides(
    table: &mut toml::Table,
    vars: impl IntoIterator<Item = (String, String)>,
) -> Result<usize> {
    let mut count = 0;
    for (key, value) in vars {
        let Some(rest) = key.strip_prefix(ENV_PREFIX) else { continue };
        let path: Vec<String> = rest.split("__").map(str::to_lowercase).collect();
        if path.iter().any(String::is_empty) {
            return Err(Error::config(key.clone(), "empty key segment"));
        }
        let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or(toml::Value::String(value));
        let mut node = &mut *table;
        for seg in &path[..path.len() - 1] {
            let entry = node.entry(seg.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            node = entry.as_table_mut().ok_or_else(|| Error::config(key.clone(), format!("`{seg}` is not a section")))?;
        }
        node.insert(path[path.len() - 1].clone(), parsed);
        count += 1;
    }
    Ok(count)
}

/// Reads a TOML file with environment overrides applied.
pub fn load_toml<T: serde::de::DeserializeOwned>(
    path: &Path,
    env: impl IntoIterator<Item = (String, String)>,
) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut table: toml::Table = toml::from_str(&text).map_err(|e| toml_error(path, &text, e))?;
    if apply_env_overrides(&mut table, env)? == 0 {
        return toml::from_str(&text).map_err(|e| toml_error(path, &text, e));
    }
    toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        msg: format!("after environment overrides: {}", e.message()),
    })
}

/// Loads a run configuration; a relative `data.input` is resolved against
/// the configuration file's directory.
pub fn load_run_config(path: &Path, env: impl IntoIterator<Item = (String, String)>) -> Result<RunConfig> {
    let mut cfg: RunConfig = load_toml(path, env)?;
    if cfg.data.input.is_relative() {
        if let Some(dir) = path.parent() {
            cfg.data.input = dir.join(&cfg.data.input);
        }
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "model = \"I\"\n[data]\ninput = \"tri.csv\"\n";

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn defaults_and_path_resolution() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.toml", MINIMAL);
        let cfg = load_run_config(&p, Vec::new()).unwrap();
        assert_eq!(cfg.model, ModelKind::I);
        assert_eq!(cfg.data.input, dir.path().join("tri.csv"));
        assert_eq!(cfg.sampler.n_chains, 4);
        assert_eq!(cfg.diagnostics.rhat, 1.5);
    }

    #[test]
    fn env_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.toml", MINIMAL);
        let env = vec![
            ("PIC_SAMPLER__N_SWEEPS".to_string(), "123".to_string()),
            ("PIC_MODEL".to_string(), "II".to_string()),
            ("PIC_COPULA__SIGMA_DIAG".to_string(), "[1.0, 2.0]".to_string()),
            ("HOME".to_string(), "/x".to_string()),
        ];
        let cfg = load_run_config(&p, env).unwrap();
        assert_eq!(cfg.sampler.n_sweeps, 123);
        assert_eq!(cfg.model, ModelKind::II);
        assert_eq!(cfg.copula.sigma_diag, Some(vec![1.0, 2.0]));
    }

    #[test]
    fn parse_errors_carry_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.toml", "model = \"I\"\n[data]\ninput = \"t.csv\"\n[sampler]\nn_chains = \"x\"\n");
        match load_run_config(&p, Vec::new()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
        let p = write(dir.path(), "d.toml", "model = \"I\"\n[data]\ninput = \"t.csv\"\nbogus = 1\n");
        assert!(matches!(load_run_config(&p, Vec::new()), Err(Error::Parse { line: 4, .. })));
    }

    #[test]
    fn single_chain_with_diagnostics_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "tri.csv", "");
        let p = write(dir.path(), "c.toml", &format!("{MINIMAL}[sampler]\nn_chains = 1\n"));
        let cfg = load_run_config(&p, Vec::new()).unwrap();
        match cfg.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "sampler.n_chains"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_input_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.toml", MINIMAL);
        let cfg = load_run_config(&p, Vec::new()).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "data.input"));
    }

    #[test]
    fn empirical_factors_recover_noiseless_ratios() {
        let t = DevelopmentFactors::new(vec![7.0, 0.5, 0.1], vec![0.3, 0.05], vec![1e-300; 3], vec![1e-300; 2]).unwrap();
        let mut rng: rand_chacha::ChaCha8Rng = rand::SeedableRng::seed_from_u64(0);
        let s = crate::simulate::simulate_triangle(&t, &DependenceSpec::ModelI, &mut rng).unwrap();
        let e = empirical_factors(&s.tri);
        for (a, b) in e.phi.iter().zip(&t.phi).chain(e.psi.iter().zip(&t.psi)) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(e.sigma.iter().all(|s| *s == 0.1));
    }

    #[test]
    fn every_model_sets_up() {
        let dir = tempfile::tempdir().unwrap();
        let t = DevelopmentFactors::new(vec![7.0, 0.5, 0.1], vec![0.3, 0.05], vec![0.1; 3], vec![0.1; 2]).unwrap();
        let mut rng: rand_chacha::ChaCha8Rng = rand::SeedableRng::seed_from_u64(3);
        let tri = crate::simulate::simulate_triangle(&t, &DependenceSpec::ModelI, &mut rng).unwrap().tri;
        let extra = [
            "model = \"I\"",
            "model = \"II\"\n[prior]\ncov_dof = 12.0\n[model_ii]\nomega = [[1.0, 0.2, 0.0], [0.2, 1.0, 0.2], [0.0, 0.2, 1.0]]",
            "model = \"III\"\n[prior]\ncov_dof = 8.0",
            "model = \"IV\"\n[copula]\npayment = [{ family = \"clayton\", rho = 1.5, weight = 0.5 }, { family = \"gumbel\", rho = 1.2, weight = 0.5 }]",
        ];
        for (k, head) in extra.iter().enumerate() {
            let (first, rest) = head.split_once('\n').unwrap_or((head, ""));
            let text = format!("{first}\n[data]\ninput = \"t.csv\"\n{rest}\n");
            let p = write(dir.path(), &format!("c{k}.toml"), &text);
            let cfg = load_run_config(&p, Vec::new()).unwrap();
            let s = cfg.setup(&tri).unwrap();
            assert_eq!(s.dep.model_name(), ["I", "II", "III", "IV"][k]);
            s.dep.validate(2).unwrap();
        }
    }

    #[test]
    fn simulate_truth_builds_every_model() {
        for m in ["I", "II", "III", "IV"] {
            let text = format!(
                "model = \"{m}\"\n[truth]\nphi = [7.0, 0.5, 0.1]\npsi = [0.3, 0.05]\nsigma = 0.1\ntau = [0.1, 0.05]\n[copula]\npayment = [{{ family = \"frank\", rho = 3.0 }}]\n"
            );
            let cfg: SimulateConfig = toml::from_str(&text).unwrap();
            let (theta, dep) = cfg.truth().unwrap();
            assert_eq!(theta.tau, vec![0.1, 0.05]);
            assert_eq!(dep.model_name(), m);
        }
    }
}
