//! Fixtures shared by the pic-core benchmarks.

use nalgebra::DMatrix;
use pic_core::config::{RunConfig, SimulateConfig};
use pic_core::sampler::{chain_rng, ChainState, ModelContext, SamplerConfig};
use pic_core::simulate::simulate_triangle;
use pic_core::SpdMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A context, sampler settings and a starting state ready for sweeping.
pub struct SweepFixture {
    pub ctx: ModelContext,
    pub cfg: SamplerConfig,
    pub init: ChainState,
    pub rng: ChaCha8Rng,
}

fn truth_toml(j: usize) -> String {
    let phi: Vec<String> = (0..=j).map(|k| if k == 0 { "8.0".into() } else { format!("{}", 0.5 / k as f64) }).collect();
    let psi: Vec<String> = (0..j).map(|k| format!("{}", 0.2 / (k + 1) as f64)).collect();
    format!("[truth]\nphi = [{}]\npsi = [{}]\nsigma = 0.1\ntau = 0.05\n", phi.join(","), psi.join(","))
}

fn copula_toml(model: &str) -> &'static str {
    if model == "IV" {
        "[copula]\npayment = [{ family = \"clayton\", rho = 1.5 }]\nincurred = [{ family = \"gumbel\", rho = 1.3 }]\n"
    } else {
        ""
    }
}

/// Simulates a `J = j` triangle from `model` and prepares a sampler on it.
pub fn sweep_fixture(model: &str, j: usize, seed: u64) -> SweepFixture {
    let sim: SimulateConfig = format!("model = \"{model}\"\n{}{}", truth_toml(j), copula_toml(model)).parse().unwrap();
    let (theta, dep) = sim.truth().unwrap();
    let mut rng = chain_rng(seed, 0);
    let tri = simulate_triangle(&theta, &dep, &mut rng).unwrap().tri;
    let run: RunConfig =
        format!("model = \"{model}\"\n[data]\ninput = \"unused.csv\"\n{}", copula_toml(model)).parse().unwrap();
    let setup = run.setup(&tri).unwrap();
    let ctx = ModelContext::new(tri, setup.priors).unwrap();
    let init = ctx.initial_state(setup.theta, setup.dep).unwrap();
    SweepFixture { ctx, cfg: setup.sampler, init, rng }
}

/// A well-conditioned random SPD matrix of size `p`.
pub fn random_spd(p: usize, rng: &mut impl Rng) -> SpdMatrix {
    let a = DMatrix::from_fn(p, p, |_, _| rng.random::<f64>() - 0.5);
    SpdMatrix::new(&a * a.transpose() + DMatrix::identity(p, p) * p as f64).unwrap()
}

/// Points strictly inside the unit cube.
pub fn unit_points(n: usize, dim: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(0.01..0.99)).collect()).collect()
}
