use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bijectors::{Bijector, ParamId, ParamVars};
use crate::error::{Error, Result};
use crate::numerics::Var;

/// Fixed feature permutation: `y_i = x_{perm(i)}`. Volume preserving.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    perm: Vec<usize>,
    inv: Vec<usize>,
}

impl Permutation {
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let n = perm.len();
        let mut inv = vec![usize::MAX; n];
        for (i, &p) in perm.iter().enumerate() {
            if p >= n || inv[p] != usize::MAX {
                return Err(Error::Perm(format!("{perm:?} is not a permutation of 0..{n}")));
            }
            inv[p] = i;
        }
        Ok(Self { perm, inv })
    }

    pub fn identity(dim: usize) -> Self {
        Self::new((0..dim).collect()).unwrap()
    }

    pub fn reverse(dim: usize) -> Self {
        Self::new((0..dim).rev().collect()).unwrap()
    }

    /// Uniformly random permutation from a seed.
    pub fn random(dim: usize, seed: u64) -> Self {
        let mut p: Vec<usize> = (0..dim).collect();
        p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Self::new(p).unwrap()
    }

    pub fn indices(&self) -> &[usize] {
        &self.perm
    }

    pub fn inverse_perm(&self) -> Permutation {
        Self { perm: self.inv.clone(), inv: self.perm.clone() }
    }

    fn check(&self, v: &Var) -> Result<()> {
        if v.cols() != self.perm.len() {
            return Err(Error::Shape(format!(
                "permutation of {} features applied to {} columns",
                self.perm.len(),
                v.cols()
            )));
        }
        Ok(())
    }
}

impl Bijector for Permutation {
    fn name(&self) -> String {
        "permutation".into()
    }
    fn dim(&self) -> usize {
        self.perm.len()
    }
    fn param_ids(&self) -> Vec<ParamId> {
        Vec::new()
    }
    fn forward(&self, x: &Var, _: &ParamVars) -> Result<(Var, Var)> {
        self.check(x)?;
        Ok((x.gather_cols(&self.perm), x.tape().scalar(0.0)))
    }
    fn inverse(&self, y: &Var, _: &ParamVars) -> Result<(Var, Var)> {
        self.check(y)?;
        Ok((y.gather_cols(&self.inv), y.tape().scalar(0.0)))
    }
}
