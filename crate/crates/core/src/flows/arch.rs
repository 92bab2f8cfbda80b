use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bijectors::{
    Activation, Affine, Bijector, Invert, LowerTriangular, MadeConditioner, MaskedAutoregressive,
    ParamStore, Permutation,
};
use crate::error::{Error, Result};
use crate::probprog::ProgramGraph;
use crate::structured::{self, GateConfig, StructuredLayer};

/// Named architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArchName {
    #[serde(rename = "maf")]
    Maf,
    #[serde(rename = "maf-l")]
    MafL,
    #[serde(rename = "iaf")]
    Iaf,
    #[serde(rename = "b-maf")]
    BMaf,
    #[serde(rename = "emf-t")]
    EmfT,
    #[serde(rename = "emf-m")]
    EmfM,
    #[serde(rename = "gemf-t")]
    GemfT,
    #[serde(rename = "gemf-m")]
    GemfM,
    #[serde(rename = "mf")]
    Mf,
    #[serde(rename = "mvn")]
    Mvn,
    #[serde(rename = "mf-emf-t")]
    MfEmfT,
    #[serde(rename = "mf-gemf-t")]
    MfGemfT,
    #[serde(rename = "mvn-emf-t")]
    MvnEmfT,
    #[serde(rename = "mvn-gemf-t")]
    MvnGemfT,
}

impl ArchName {
    pub const ALL: [ArchName; 14] = [
        ArchName::Maf,
        ArchName::MafL,
        ArchName::Iaf,
        ArchName::BMaf,
        ArchName::EmfT,
        ArchName::EmfM,
        ArchName::GemfT,
        ArchName::GemfM,
        ArchName::Mf,
        ArchName::Mvn,
        ArchName::MfEmfT,
        ArchName::MfGemfT,
        ArchName::MvnEmfT,
        ArchName::MvnGemfT,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchName::Maf => "maf",
            ArchName::MafL => "maf-l",
            ArchName::Iaf => "iaf",
            ArchName::BMaf => "b-maf",
            ArchName::EmfT => "emf-t",
            ArchName::EmfM => "emf-m",
            ArchName::GemfT => "gemf-t",
            ArchName::GemfM => "gemf-m",
            ArchName::Mf => "mf",
            ArchName::Mvn => "mvn",
            ArchName::MfEmfT => "mf-emf-t",
            ArchName::MfGemfT => "mf-gemf-t",
            ArchName::MvnEmfT => "mvn-emf-t",
            ArchName::MvnGemfT => "mvn-gemf-t",
        }
    }

    /// Whether the stack contains a structured layer.
    pub fn uses_structure(self) -> bool {
        !matches!(self, ArchName::Maf | ArchName::MafL | ArchName::Iaf | ArchName::Mf | ArchName::Mvn)
    }

    pub fn is_gated(self) -> bool {
        matches!(self, ArchName::GemfT | ArchName::GemfM | ArchName::MfGemfT | ArchName::MvnGemfT)
    }
}

impl fmt::Display for ArchName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        ArchName::ALL
            .into_iter()
            .find(|a| a.as_str() == lower)
            .ok_or_else(|| Error::Config(format!("unknown architecture '{s}'")))
    }
}

/// Which program the structured layer embeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum StructureSpec {
    #[default]
    None,
    /// Per-channel random walk over `dim / channels` time steps.
    Continuity {
        #[serde(default = "one")]
        channels: usize,
        #[serde(default = "one_f")]
        sigma_init: f64,
    },
    /// Per-channel second-order chain.
    Smoothness {
        #[serde(default = "one")]
        channels: usize,
        #[serde(default = "one_f")]
        sigma_init: f64,
    },
    Hierarchical { m: usize, n: usize, sigma: f64, nu: f64 },
    /// Independent mixtures, one per coordinate.
    Mixture { components: usize, lo: f64, hi: f64, std: f64 },
    /// An explicit program (custom structures and variational priors).
    Program { graph: ProgramGraph },
}

fn one() -> usize {
    1
}

fn one_f() -> f64 {
    1.0
}

impl StructureSpec {
    /// Mixture placed on top of the stack: 100 components on `[−4, 4]`.
    pub fn mixture_top() -> Self {
        StructureSpec::Mixture { components: 100, lo: -4.0, hi: 4.0, std: 1.0 }
    }

    /// Mixture placed between the autoregressive layers: 100 components on
    /// `[−10, 10]`.
    pub fn mixture_middle() -> Self {
        StructureSpec::Mixture { components: 100, lo: -10.0, hi: 10.0, std: 3.0 }
    }

    pub fn build(&self, dim: usize) -> Result<Option<ProgramGraph>> {
        let per_channel = |c: usize| -> Result<usize> {
            if c == 0 || dim % c != 0 {
                return Err(Error::Config(format!("{c} channels do not divide event dim {dim}")));
            }
            Ok(dim / c)
        };
        let g = match self {
            StructureSpec::None => return Ok(None),
            StructureSpec::Continuity { channels, sigma_init } => {
                structured::continuity_channels(per_channel(*channels)?, *channels, *sigma_init)?
            }
            StructureSpec::Smoothness { channels, sigma_init } => {
                structured::smoothness_channels(per_channel(*channels)?, *channels, *sigma_init)?
            }
            StructureSpec::Hierarchical { m, n, sigma, nu } => structured::hierarchical(*m, *n, *sigma, *nu)?,
            StructureSpec::Mixture { components, lo, hi, std } => structured::mixture(dim, *components, *lo, *hi, *std)?,
            StructureSpec::Program { graph } => graph.clone(),
        };
        if g.total_dim() != dim {
            return Err(Error::Config(format!(
                "structure '{}' has dim {}, event dim is {dim}",
                g.name,
                g.total_dim()
            )));
        }
        Ok(Some(g))
    }
}

/// Fixed permutation between autoregressive layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PermutationSpec {
    #[default]
    Reverse,
    Random { seed: u64 },
}

impl PermutationSpec {
    fn build(self, dim: usize) -> Permutation {
        match self {
            PermutationSpec::Reverse => Permutation::reverse(dim),
            PermutationSpec::Random { seed } => Permutation::random(dim, seed),
        }
    }
}

/// Whether the model is used for density estimation (fast, differentiable
/// `log_prob`) or as a variational posterior (fast, differentiable
/// sampling with the density of its own samples).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    #[default]
    Density,
    Variational,
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

/// Everything needed to rebuild a model up to its parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    pub name: ArchName,
    #[serde(default)]
    pub structure: StructureSpec,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    /// Defaults to tanh for plain autoregressive stacks and relu when a
    /// structured layer is present.
    #[serde(default)]
    pub activation: Option<Activation>,
    #[serde(default)]
    pub permutation: PermutationSpec,
    /// Overrides the orientation's default gate initialisation.
    #[serde(default)]
    pub gate: Option<GateConfig>,
    #[serde(default)]
    pub orientation: Orientation,
    /// Seeds weight initialisation.
    #[serde(default)]
    pub seed: u64,
}

impl ArchitectureSpec {
    pub fn new(name: ArchName) -> Self {
        Self {
            name,
            structure: StructureSpec::None,
            hidden: default_hidden(),
            activation: None,
            permutation: PermutationSpec::default(),
            gate: None,
            orientation: Orientation::Density,
            seed: 0,
        }
    }

    pub fn with_structure(mut self, s: StructureSpec) -> Self {
        self.structure = s;
        self
    }

    pub fn with_hidden(mut self, h: Vec<usize>) -> Self {
        self.hidden = h;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn variational(mut self) -> Self {
        self.orientation = Orientation::Variational;
        self
    }

    pub fn activation(&self) -> Activation {
        self.activation.unwrap_or(if self.name.uses_structure() { Activation::Relu } else { Activation::Tanh })
    }

    pub fn gate_config(&self) -> GateConfig {
        self.gate.unwrap_or(match self.orientation {
            Orientation::Density => GateConfig::balanced(),
            Orientation::Variational => GateConfig::near_program(),
        })
    }
}

/// Builds the layer stack, ordered from the base distribution towards the
/// data (or posterior sample) space.
pub(crate) fn build_layers(spec: &ArchitectureSpec, dim: usize, store: &mut ParamStore) -> Result<Vec<Box<dyn Bijector>>> {
    if dim == 0 {
        return Err(Error::Config("event dim must be positive".into()));
    }
    let graph = spec.structure.build(dim)?;
    if spec.name.uses_structure() && graph.is_none() {
        return Err(Error::Config(format!("architecture '{}' needs a structure", spec.name)));
    }
    if !spec.name.uses_structure() && graph.is_some() {
        return Err(Error::Config(format!("architecture '{}' takes no structure", spec.name)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let act = spec.activation();
    let mut n_made = 0;
    let mut made = |store: &mut ParamStore| {
        let m = MadeConditioner::new(store, &format!("made{n_made}"), dim, &spec.hidden, act, &mut rng);
        n_made += 1;
        MaskedAutoregressive::new(m)
    };
    let structured_layer = |store: &mut ParamStore, gated: bool| -> Result<Box<dyn Bijector>> {
        let gate = gated.then(|| spec.gate_config());
        Ok(Box::new(StructuredLayer::new(store, "structured", graph.clone().unwrap(), gate)?))
    };
    let perm = || Box::new(spec.permutation.build(dim)) as Box<dyn Bijector>;

    use ArchName::*;
    let layers: Vec<Box<dyn Bijector>> = match spec.name {
        Maf => vec![Box::new(made(store)), perm(), Box::new(made(store))],
        MafL => vec![Box::new(made(store)), perm(), Box::new(made(store)), perm(), Box::new(made(store))],
        BMaf => vec![structured_layer(store, false)?, Box::new(made(store)), Box::new(made(store))],
        EmfT | GemfT => {
            let gated = spec.name == GemfT;
            if spec.orientation == Orientation::Variational {
                let a = Invert(Box::new(made(store)));
                let b = Invert(Box::new(made(store)));
                vec![Box::new(a), perm(), Box::new(b), structured_layer(store, gated)?]
            } else {
                vec![Box::new(made(store)), perm(), Box::new(made(store)), structured_layer(store, gated)?]
            }
        }
        EmfM | GemfM => {
            let gated = spec.name == GemfM;
            let a = made(store);
            let s = structured_layer(store, gated)?;
            vec![Box::new(a), perm(), s, Box::new(made(store))]
        }
        Iaf => {
            let a = Invert(Box::new(made(store)));
            let b = Invert(Box::new(made(store)));
            vec![Box::new(a), perm(), Box::new(b)]
        }
        Mf => vec![Box::new(Affine::identity(store, "mf", dim))],
        Mvn => vec![Box::new(LowerTriangular::identity(store, "mvn", dim))],
        MfEmfT | MfGemfT => {
            let a = Affine::identity(store, "mf", dim);
            vec![Box::new(a), structured_layer(store, spec.name == MfGemfT)?]
        }
        MvnEmfT | MvnGemfT => {
            let a = LowerTriangular::identity(store, "mvn", dim);
            vec![Box::new(a), structured_layer(store, spec.name == MvnGemfT)?]
        }
    };
    Ok(layers)
}
