//! Distances between path distributions and summary statistics.

pub mod adapted;
pub mod bruteforce;
pub mod ot;
pub mod signature;
pub mod stylized;
pub mod weak;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use adapted::{adapted_empirical, aw1_nested, default_clusters, kmeans, sliced_aw1, AdaptedTree, SlicedAwConfig};
pub use bruteforce::{
    coupling_lp, cw1_aw1_bruteforce, kl_divergence, lemma_chain_check, path_cost, path_norm, total_variation, ChainReport,
    CouplingMode, DiscreteMeasure,
};
pub use ot::{discrete_ot, Transport};
pub use signature::{signature, signature_mmd, signature_tensor, TruncatedTensor};
pub use stylized::{acf, hill_estimator, stylized_stats, StylizedReport};
pub use weak::{gaussian_mmd, sliced_w1, w1_1d, Bandwidth};

/// Named results of an evaluation run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scalars: BTreeMap<String, f64>,
    pub per_seed: BTreeMap<String, Vec<f64>>,
    pub config: BTreeMap<String, String>,
}

impl MetricReport {
    pub fn scalar(&mut self, name: &str, v: f64) {
        self.scalars.insert(name.to_string(), v);
    }

    pub fn push_seed(&mut self, name: &str, v: f64) {
        self.per_seed.entry(name.to_string()).or_default().push(v);
    }

    pub fn echo(&mut self, key: &str, v: impl ToString) {
        self.config.insert(key.to_string(), v.to_string());
    }

    /// True when every reported number is finite.
    pub fn all_finite(&self) -> bool {
        self.scalars.values().chain(self.per_seed.values().flatten()).all(|v| v.is_finite())
    }
}
