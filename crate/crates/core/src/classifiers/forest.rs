use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::params::Reader;
use super::tree::{grow, TreeModel, TreeParams};
use super::{check_training_set, vote, FitError};
use crate::data::{BinaryLabel, Dataset};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features tried per split; `None` means `ceil(sqrt(d))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
    pub tree: TreeParams,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_features: None,
            bootstrap: true,
            seed: 0,
            tree: TreeParams::default(),
        }
    }
}

impl ForestParams {
    pub const NAMES: &'static [&'static str] = &[
        "n_trees",
        "max_features",
        "bootstrap",
        "seed",
        "max_depth",
        "min_samples_leaf",
    ];

    pub(crate) fn read(r: &Reader) -> Result<Self, FitError> {
        Ok(ForestParams {
            n_trees: r.count("n_trees", 100, 1)?,
            max_features: r.opt_count("max_features")?,
            bootstrap: r.flag("bootstrap", true)?,
            seed: r.seed("seed")?,
            tree: TreeParams::read(r)?,
        })
    }
}

/// Bagged entropy trees with per-split feature subsampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct ForestModel<F> {
    pub trees: Vec<TreeModel<F>>,
    pub tree_seeds: Vec<u64>,
    pub max_features: usize,
    pub n_features: usize,
}

/// SplitMix64 finalizer, used to derive independent per-tree seeds.
pub(crate) fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fit_forest<F: Real>(data: &Dataset<F>, params: &ForestParams) -> Result<ForestModel<F>, FitError> {
    check_training_set(data)?;
    let d = data.n_features();
    let max_features = params
        .max_features
        .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
        .clamp(1, d);
    let n = data.len();
    let tree_seeds: Vec<u64> = (0..params.n_trees as u64)
        .map(|t| mix_seed(params.seed, t))
        .collect();
    let trees = tree_seeds
        .par_iter()
        .map(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let rows: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grow(data, rows, &params.tree, Some((max_features, &mut rng)))
        })
        .collect();
    Ok(ForestModel {
        trees,
        tree_seeds,
        max_features,
        n_features: d,
    })
}

impl<F: Real> ForestModel<F> {
    pub fn votes(&self, x: &[F]) -> usize {
        self.trees.iter().filter(|t| t.predict(x).is_positive()).count()
    }

    /// Majority vote; ties go to abnormal.
    pub fn predict(&self, x: &[F]) -> BinaryLabel {
        let a = self.votes(x);
        vote(a, self.trees.len() - a)
    }

    /// Fraction of trees voting abnormal.
    pub fn predict_proba(&self, x: &[F]) -> F {
        F::from_usize_lossy(self.votes(x)) / F::from_usize_lossy(self.trees.len())
    }
}
