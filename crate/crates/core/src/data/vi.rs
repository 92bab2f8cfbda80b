//! Posterior-inference tasks: a prior program over latents, an observation
//! model and one set of observed values.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::sde::{self, BrownianParams, LorenzParams, VdpParams, LORENZ_BETA, LORENZ_PHI, LORENZ_RHO};
use crate::error::{Error, Result};
use crate::numerics::special::{self, HALF_LN_2PI};
use crate::numerics::{concat_cols, Tape, Var};
use crate::probprog::{self, link, BoundParams, Distribution, LinkExpr, NodeSpec, ProgramGraph};

/// A posterior-inference task. `joint` holds the latent nodes (identical to
/// `prior`) followed by one node per observed value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VIProblem {
    pub name: String,
    pub prior: ProgramGraph,
    pub joint: ProgramGraph,
    pub observed: Vec<f64>,
    /// The latent values the observations were generated from, if known.
    pub true_latents: Option<Vec<f64>>,
}

impl VIProblem {
    pub fn new(name: String, prior: ProgramGraph, joint: ProgramGraph, observed: Vec<f64>, truth: Option<Vec<f64>>) -> Result<Self> {
        prior.check()?;
        joint.check()?;
        if joint.total_dim() != prior.total_dim() + observed.len() {
            return Err(Error::Shape(format!(
                "joint dim {} != latent dim {} + {} observations",
                joint.total_dim(),
                prior.total_dim(),
                observed.len()
            )));
        }
        Ok(Self { name, prior, joint, observed, true_latents: truth })
    }

    pub fn latent_dim(&self) -> usize {
        self.prior.total_dim()
    }

    /// `log p(z, x_obs)` per row of `z` (`B×latent_dim`), differentiable in `z`.
    pub fn log_joint_var(&self, tape: &Tape, z: &Var) -> Result<Var> {
        if z.cols() != self.latent_dim() {
            return Err(Error::Shape(format!("latent dim {} != {}", z.cols(), self.latent_dim())));
        }
        let full = if self.observed.is_empty() {
            z.clone()
        } else {
            let obs = Array2::from_shape_fn((z.rows(), self.observed.len()), |(_, j)| self.observed[j]);
            concat_cols(&[z.clone(), tape.constant(obs)])
        };
        let values = probprog::split_nodes(&self.joint, &full)?;
        let params = BoundParams::constants(&self.joint, tape);
        probprog::joint_log_prob(tape, &self.joint, &values, &params)
    }

    pub fn log_joint(&self, z: &[f64]) -> Result<f64> {
        let tape = Tape::no_grad();
        let row = Array2::from_shape_vec((1, z.len()), z.to_vec()).map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.log_joint_var(&tape, &tape.constant(row))?.item())
    }
}

/// Latent dynamics of the time-series tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum System {
    Brownian,
    Lorenz,
    VanDerPol,
}

impl System {
    pub fn channels(self) -> usize {
        match self {
            System::Brownian => 1,
            System::Lorenz => 3,
            System::VanDerPol => 2,
        }
    }

    pub fn steps(self) -> usize {
        match self {
            System::VanDerPol => 120,
            _ => 30,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            System::Brownian => "br",
            System::Lorenz => "lz",
            System::VanDerPol => "vdp",
        }
    }

    /// Emission noise of the regression tasks.
    pub fn emission_std(self) -> f64 {
        match self {
            System::Brownian => 0.15,
            System::Lorenz => 1.0,
            System::VanDerPol => 0.5,
        }
    }

    /// Gain of the classification tasks.
    pub fn gain(self) -> f64 {
        match self {
            System::Brownian => 5.0,
            System::Lorenz => 2.0,
            System::VanDerPol => 1.0,
        }
    }

    /// Observed steps at each end in the bridge setting.
    pub fn bridge_edge(self) -> usize {
        match self {
            System::VanDerPol => 40,
            _ => 10,
        }
    }

    /// Prior program over the latent path.
    pub fn prior(self) -> ProgramGraph {
        match self {
            System::Brownian => brownian_prior(&BrownianParams::default()),
            System::Lorenz => lorenz_prior(&LorenzParams::default()),
            System::VanDerPol => vdp_prior(&VdpParams::default()),
        }
    }

    fn simulate(self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let path = match self {
            System::Brownian => sde::brownian(1, &BrownianParams::default(), rng),
            System::Lorenz => sde::lorenz(1, &LorenzParams::default(), rng),
            System::VanDerPol => sde::van_der_pol(1, &VdpParams::default(), rng),
        };
        path.into_iter().collect()
    }
}

/// Observation model for one latent coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Emission {
    /// `e ~ N(x, σ_e²)`.
    Gaussian { sigma_e: f64 },
    /// `e ~ Bernoulli(sigmoid(k·x))`.
    Bernoulli { k: f64 },
}

impl Emission {
    fn dist(self) -> Distribution {
        match self {
            Emission::Gaussian { sigma_e } => Distribution::normal(link("p0"), LinkExpr::constant(sigma_e)),
            Emission::Bernoulli { k } => Distribution::Bernoulli { logit: link(&format!("{k:?} * p0")) },
        }
    }

    fn sample<R: Rng + ?Sized>(self, x: f64, rng: &mut R) -> f64 {
        match self {
            Emission::Gaussian { sigma_e } => x + sigma_e * rng.sample::<f64, _>(rand_distr::StandardNormal),
            Emission::Bernoulli { k } => {
                if rng.random::<f64>() < special::sigmoid(k * x) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Which time steps are observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Window {
    Smoothing,
    /// The first and last `edge` steps.
    Bridge { edge: usize },
}

/// Per-coordinate observation mask over an interleaved path of `t` steps
/// and `channels` channels; only channel 0 is ever observed.
pub fn observation_mask(t: usize, channels: usize, window: Window) -> Vec<bool> {
    (0..t * channels)
        .map(|i| {
            let (step, ch) = (i / channels, i % channels);
            ch == 0
                && match window {
                    Window::Smoothing => true,
                    Window::Bridge { edge } => step < edge || step + edge >= t,
                }
        })
        .collect()
}

/// Emissions for the masked coordinates of `latents` (in coordinate order),
/// with the mask.
pub fn gen_emissions<R: Rng + ?Sized>(
    latents: &[f64],
    channels: usize,
    emission: Emission,
    window: Window,
    rng: &mut R,
) -> (Vec<f64>, Vec<bool>) {
    let mask = observation_mask(latents.len() / channels, channels, window);
    let values = latents.iter().zip(&mask).filter(|(_, &m)| m).map(|(&x, _)| emission.sample(x, rng)).collect();
    (values, mask)
}

fn with_emissions(prior: &ProgramGraph, mask: &[bool], emission: Emission) -> ProgramGraph {
    let mut g = prior.clone();
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        g.push(NodeSpec::new(format!("e{i}"), vec![i], emission.dist()));
    }
    g
}

fn c(v: f64) -> String {
    format!("{v:?}")
}

pub fn brownian_prior(p: &BrownianParams) -> ProgramGraph {
    let mut g = ProgramGraph::new("brownian-prior");
    let sd = LinkExpr::constant(p.sigma);
    g.push(NodeSpec::new("x0", vec![], Distribution::normal(LinkExpr::constant(p.mu), sd.clone())));
    for t in 1..p.t {
        g.push(NodeSpec::new(format!("x{t}"), vec![t - 1], Distribution::normal(link("p0"), sd.clone())));
    }
    g
}

pub fn lorenz_prior(p: &LorenzParams) -> ProgramGraph {
    let mut g = ProgramGraph::new("lorenz-prior");
    let sd = LinkExpr::constant(p.s.sqrt() * p.sigma);
    let s = c(p.s);
    let means = [
        link(&format!("p0 + {s} * ({} * (p1 - p0))", c(LORENZ_PHI))),
        link(&format!("p1 + {s} * (p0 * ({} - p2) - p1)", c(LORENZ_RHO))),
        link(&format!("p2 + {s} * (p0 * p1 - {} * p2)", c(LORENZ_BETA))),
    ];
    for t in 0..p.t {
        for (ch, name) in ["x", "y", "z"].iter().enumerate() {
            let node = if t == 0 {
                NodeSpec::new(format!("{name}0"), vec![], Distribution::normal(link("0"), link("1")))
            } else {
                let prev = 3 * (t - 1);
                // the x update does not depend on z
                let parents = if ch == 0 { vec![prev, prev + 1] } else { vec![prev, prev + 1, prev + 2] };
                NodeSpec::new(format!("{name}{t}"), parents, Distribution::normal(means[ch].clone(), sd.clone()))
            };
            g.push(node);
        }
    }
    g
}

pub fn vdp_prior(p: &VdpParams) -> ProgramGraph {
    let mut g = ProgramGraph::new("vdp-prior");
    let sd = LinkExpr::constant(p.s.sqrt() * p.sigma);
    let s = c(p.s);
    let means = [
        link(&format!("p0 + p1 * {s}")),
        link(&format!("p1 + {s} * {} * (1 - p0 * p0) * p1", c(p.mu))),
    ];
    for t in 0..p.t {
        for (ch, name) in ["x", "y"].iter().enumerate() {
            let node = if t == 0 {
                NodeSpec::new(format!("{name}0"), vec![], Distribution::normal(link("0"), link("1")))
            } else {
                let prev = 2 * (t - 1);
                NodeSpec::new(format!("{name}{t}"), vec![prev, prev + 1], Distribution::normal(means[ch].clone(), sd.clone()))
            };
            g.push(node);
        }
    }
    g
}

/// Time-series task with the default emission parameters of `system`.
pub fn time_series(system: System, classification: bool, bridge: bool, seed: u64) -> Result<VIProblem> {
    let emission = if classification {
        Emission::Bernoulli { k: system.gain() }
    } else {
        Emission::Gaussian { sigma_e: system.emission_std() }
    };
    let window = if bridge { Window::Bridge { edge: system.bridge_edge() } } else { Window::Smoothing };
    time_series_with(system, emission, window, seed)
}

pub fn time_series_with(system: System, emission: Emission, window: Window, seed: u64) -> Result<VIProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = system.simulate(&mut rng);
    let (obs, mask) = gen_emissions(&truth, system.channels(), emission, window, &mut rng);
    let prior = system.prior();
    let joint = with_emissions(&prior, &mask, emission);
    let name = format!(
        "{}{}-{}",
        system.tag(),
        if matches!(window, Window::Smoothing) { "s" } else { "b" },
        if matches!(emission, Emission::Bernoulli { .. }) { "c" } else { "r" }
    );
    VIProblem::new(name, prior, joint, obs, Some(truth))
}

/// Test scores and standard errors of the eight coaching programs.
pub const EIGHT_SCHOOLS_Y: [f64; 8] = [28.0, 8.0, -3.0, 7.0, -1.0, 1.0, 18.0, 12.0];
pub const EIGHT_SCHOOLS_SIGMA: [f64; 8] = [15.0, 10.0, 16.0, 11.0, 9.0, 11.0, 10.0, 18.0];

/// `μ ~ N(0, mu_std²)`, `log τ ~ N(5, 1)`, `θ_i ~ N(μ, τ²)`,
/// `y_i ~ N(θ_i, σ_i²)`. Latents are `(μ, log τ, θ_1..θ_8)`.
pub fn eight_schools(mu_std: f64, y: &[f64], sigma: &[f64]) -> Result<VIProblem> {
    if y.len() != sigma.len() || y.is_empty() {
        return Err(Error::Config("eight schools needs one standard error per score".into()));
    }
    let mut prior = ProgramGraph::new("eight-schools");
    prior.push(NodeSpec::new("mu", vec![], Distribution::normal(link("0"), LinkExpr::constant(mu_std))));
    prior.push(NodeSpec::new("log_tau", vec![], Distribution::normal(link("5"), link("1"))));
    for i in 0..y.len() {
        prior.push(NodeSpec::new(format!("theta{i}"), vec![0, 1], Distribution::normal(link("p0"), link("exp(p1)"))));
    }
    let mut joint = prior.clone();
    for (i, &s) in sigma.iter().enumerate() {
        joint.push(NodeSpec::new(format!("y{i}"), vec![2 + i], Distribution::normal(link("p0"), LinkExpr::constant(s))));
    }
    VIProblem::new("es".into(), prior, joint, y.to_vec(), None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeLink {
    Linear,
    Tanh,
}

/// Reverse binary tree: `2^(D−1)` standard-normal roots, each later layer
/// halving in width with `x ~ N(link(left, right), σ²)`; the single final
/// node is observed.
pub fn binary_tree_graph(depth: usize, tree_link: TreeLink, sigma: f64) -> Result<ProgramGraph> {
    if depth < 2 {
        return Err(Error::Config(format!("binary tree needs depth >= 2, got {depth}")));
    }
    let mean = match tree_link {
        TreeLink::Linear => link("p0 - p1"),
        TreeLink::Tanh => link("tanh(p0) - tanh(p1)"),
    };
    let sd = LinkExpr::constant(sigma);
    let mut g = ProgramGraph::new(format!("tree-{depth}"));
    let mut prev: Vec<usize> = (0..1usize << (depth - 1))
        .map(|j| g.push(NodeSpec::new(format!("x0_{j}"), vec![], Distribution::normal(link("0"), sd.clone()))))
        .collect();
    for d in 1..depth {
        prev = prev
            .chunks(2)
            .enumerate()
            .map(|(j, pair)| {
                g.push(NodeSpec::new(format!("x{d}_{j}"), pair.to_vec(), Distribution::normal(mean.clone(), sd.clone())))
            })
            .collect();
    }
    Ok(g)
}

pub fn binary_tree(depth: usize, tree_link: TreeLink, seed: u64) -> Result<VIProblem> {
    let joint = binary_tree_graph(depth, tree_link, 1.0)?;
    let n = joint.nodes.len();
    let prior = joint.subgraph(&(0..n - 1).collect::<Vec<_>>())?;
    let sample = probprog::ancestral_sample(&joint, &mut ChaCha8Rng::seed_from_u64(seed), 1)?;
    let sample: Vec<f64> = sample.into_iter().collect();
    let name = format!("tree-{}{depth}", if tree_link == TreeLink::Linear { "lin" } else { "tanh" });
    VIProblem::new(name, prior, joint, vec![sample[n - 1]], Some(sample[..n - 1].to_vec()))
}

/// One-dimensional Gaussian model with a closed-form posterior:
/// `z ~ N(m0, s0²)`, `x ~ N(z, s²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConjugateGaussian {
    pub m0: f64,
    pub s0: f64,
    pub s: f64,
    pub x: f64,
}

impl Default for ConjugateGaussian {
    fn default() -> Self {
        Self { m0: 0.0, s0: 1.0, s: 0.5, x: 1.2 }
    }
}

impl ConjugateGaussian {
    pub fn problem(&self) -> Result<VIProblem> {
        let mut prior = ProgramGraph::new("conjugate");
        prior.push(NodeSpec::new("z", vec![], Distribution::normal(LinkExpr::constant(self.m0), LinkExpr::constant(self.s0))));
        let mut joint = prior.clone();
        joint.push(NodeSpec::new("x", vec![0], Distribution::normal(link("p0"), LinkExpr::constant(self.s))));
        VIProblem::new("conjugate".into(), prior, joint, vec![self.x], None)
    }

    /// Posterior `(mean, std)`.
    pub fn posterior(&self) -> (f64, f64) {
        let prec = 1.0 / (self.s0 * self.s0) + 1.0 / (self.s * self.s);
        let mean = (self.m0 / (self.s0 * self.s0) + self.x / (self.s * self.s)) / prec;
        (mean, prec.recip().sqrt())
    }

    /// `log p(x) = log N(x; m0, s0² + s²)`.
    pub fn log_evidence(&self) -> f64 {
        let var = self.s0 * self.s0 + self.s * self.s;
        -0.5 * (self.x - self.m0).powi(2) / var - 0.5 * var.ln() - HALF_LN_2PI
    }
}

/// Serializable task description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemSpec {
    TimeSeries {
        system: System,
        #[serde(default)]
        classification: bool,
        #[serde(default)]
        bridge: bool,
    },
    EightSchools {
        #[serde(default = "default_mu_std")]
        mu_std: f64,
    },
    BinaryTree {
        depth: usize,
        link: TreeLink,
    },
    Conjugate(ConjugateGaussian),
}

fn default_mu_std() -> f64 {
    10.0
}

impl ProblemSpec {
    /// Builds the task; `seed` drives the simulated observations.
    pub fn build(&self, seed: u64) -> Result<VIProblem> {
        match self {
            ProblemSpec::TimeSeries { system, classification, bridge } => time_series(*system, *classification, *bridge, seed),
            ProblemSpec::EightSchools { mu_std } => eight_schools(*mu_std, &EIGHT_SCHOOLS_Y, &EIGHT_SCHOOLS_SIGMA),
            ProblemSpec::BinaryTree { depth, link } => binary_tree(*depth, *link, seed),
            ProblemSpec::Conjugate(c) => c.problem(),
        }
    }
}
