//! Synthetic datasets, posterior-inference tasks and the on-disk cache.

pub mod cache;
pub mod sde;
pub mod toy;
pub mod vi;

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use sde::{BrownianParams, LorenzParams, OuParams, VdpParams};
pub use vi::{ConjugateGaussian, Emission, ProblemSpec, System, TreeLink, VIProblem, Window};

/// A generated sample matrix with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// `count × event_dim`.
    pub samples: Array2<f64>,
    /// Interleaved channels per time step (1 for non-sequential data).
    pub channels: usize,
    /// Generator parameters, seed and count.
    pub meta: BTreeMap<String, String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }
}

/// Named generator with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    EightGaussians,
    Checkerboard,
    Brownian(BrownianParams),
    Ou(OuParams),
    Lorenz(LorenzParams),
    Vdp(VdpParams),
}

impl DatasetSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetSpec::EightGaussians => "eight-gaussians",
            DatasetSpec::Checkerboard => "checkerboard",
            DatasetSpec::Brownian(p) if p.geometric => "geometric-brownian",
            DatasetSpec::Brownian(_) => "brownian",
            DatasetSpec::Ou(_) => "ou",
            DatasetSpec::Lorenz(_) => "lorenz",
            DatasetSpec::Vdp(_) => "vdp",
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            DatasetSpec::Lorenz(_) => 3,
            DatasetSpec::Vdp(_) => 2,
            _ => 1,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DatasetSpec::EightGaussians | DatasetSpec::Checkerboard => 2,
            DatasetSpec::Brownian(p) => p.t,
            DatasetSpec::Ou(p) => p.t,
            DatasetSpec::Lorenz(p) => 3 * p.t,
            DatasetSpec::Vdp(p) => 2 * p.t,
        }
    }

    fn steps(&self) -> usize {
        match self {
            DatasetSpec::EightGaussians | DatasetSpec::Checkerboard => 1,
            DatasetSpec::Brownian(p) => p.t,
            DatasetSpec::Ou(p) => p.t,
            DatasetSpec::Lorenz(p) => p.t,
            DatasetSpec::Vdp(p) => p.t,
        }
    }

    /// Every parameter as text, for the cache sidecar.
    pub fn describe(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("dataset".into(), self.name().into());
        if let Ok(serde_json::Value::Object(fields)) = serde_json::to_value(self) {
            for (k, v) in fields {
                if k != "kind" {
                    m.insert(k, v.to_string());
                }
            }
        }
        m
    }

    /// `n` samples drawn from a generator seeded with `seed`.
    pub fn generate(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::Config("dataset size must be positive".into()));
        }
        if self.steps() == 0 {
            return Err(Error::Config("time series need T >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = match self {
            DatasetSpec::EightGaussians => toy::eight_gaussians(n, &mut rng),
            DatasetSpec::Checkerboard => toy::checkerboard(n, &mut rng),
            DatasetSpec::Brownian(p) => sde::brownian(n, p, &mut rng),
            DatasetSpec::Ou(p) => sde::ornstein_uhlenbeck(n, p, &mut rng),
            DatasetSpec::Lorenz(p) => sde::lorenz(n, p, &mut rng),
            DatasetSpec::Vdp(p) => sde::van_der_pol(n, p, &mut rng),
        };
        let mut meta = self.describe();
        meta.insert("seed".into(), seed.to_string());
        meta.insert("n".into(), n.to_string());
        Ok(Dataset { name: self.name().into(), samples, channels: self.channels(), meta })
    }
}

/// Seed for held-out data, disjoint from the training seed stream.
pub fn test_seed(seed: u64) -> u64 {
    seed ^ 0x7e57_0000_0000_0001
}

/// Per-column affine standardisation fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Statistics pooled over the time steps of each channel.
    pub fn fit(d: &Dataset) -> Result<Self> {
        let c = d.channels.max(1);
        if d.dim() % c != 0 || d.len() < 2 {
            return Err(Error::Config("cannot standardise this dataset".into()));
        }
        let mut mean = vec![0.0; c];
        let mut sq = vec![0.0; c];
        let mut count = vec![0usize; c];
        for row in d.samples.rows() {
            for (j, &v) in row.iter().enumerate() {
                mean[j % c] += v;
                sq[j % c] += v * v;
                count[j % c] += 1;
            }
        }
        let mut std = vec![0.0; c];
        for k in 0..c {
            let n = count[k] as f64;
            mean[k] /= n;
            std[k] = ((sq[k] / n - mean[k] * mean[k]) * n / (n - 1.0)).max(0.0).sqrt();
            if std[k] == 0.0 {
                return Err(Error::Config(format!("channel {k} is constant")));
            }
        }
        let dim = d.dim();
        Ok(Self {
            mean: (0..dim).map(|j| mean[j % c]).collect(),
            std: (0..dim).map(|j| std[j % c]).collect(),
        })
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let m = Array1::from(self.mean.clone());
        let s = Array1::from(self.std.clone());
        (x - &m.insert_axis(Axis(0))) / &s.insert_axis(Axis(0))
    }

    /// Add to a log-density of standardised data to get the log-density
    /// in the original units.
    pub fn log_det(&self) -> f64 {
        -self.std.iter().map(|s| s.ln()).sum::<f64>()
    }

    pub fn record(&self, meta: &mut BTreeMap<String, String>) {
        meta.insert("standardize_mean".into(), format!("{:?}", self.mean));
        meta.insert("standardize_std".into(), format!("{:?}", self.std));
    }
}
