//! Planted-signal graph datasets: node features carry a class-dependent
//! mean plus Gaussian noise, so the graph label is recoverable from
//! pooled features by construction.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{GraphDataset, InputGraph};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedConfig {
    pub num_graphs: usize,
    pub num_classes: usize,
    /// Graph `i` has class `i % num_classes` unless `class_counts` is set.
    pub class_counts: Option<[usize; 2]>,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub edge_prob: f64,
    pub feature_dim: usize,
    /// Length of the class mean vector.
    pub signal: f64,
    /// Per-entry noise standard deviation.
    pub noise: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            num_graphs: 200,
            num_classes: 2,
            class_counts: None,
            min_nodes: 6,
            max_nodes: 30,
            edge_prob: 0.2,
            feature_dim: 8,
            signal: 1.0,
            noise: 0.0,
            seed: 0,
        }
    }
}

/// Class `c` puts `signal` on coordinate `c` of a `feature_dim` vector.
fn class_mean(c: usize, dim: usize, signal: f64) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    m[c % dim] = signal;
    m
}

pub fn planted_dataset(cfg: &PlantedConfig) -> Result<GraphDataset> {
    if cfg.num_classes == 0 || cfg.feature_dim < cfg.num_classes {
        return Err(Error::Config("planted dataset needs feature_dim >= num_classes >= 1".into()));
    }
    if cfg.min_nodes == 0 || cfg.min_nodes > cfg.max_nodes {
        return Err(Error::Config("planted dataset needs 1 <= min_nodes <= max_nodes".into()));
    }
    if !(0.0..=1.0).contains(&cfg.edge_prob) || !(cfg.noise >= 0.0) {
        return Err(Error::Config("planted dataset edge_prob/noise out of range".into()));
    }
    let labels: Vec<usize> = match cfg.class_counts {
        Some([a, b]) => {
            if a + b != cfg.num_graphs || cfg.num_classes != 2 {
                return Err(Error::Config("class_counts must be binary and sum to num_graphs".into()));
            }
            (0..cfg.num_graphs).map(|i| usize::from(i >= a)).collect()
        }
        None => (0..cfg.num_graphs).map(|i| i % cfg.num_classes).collect(),
    };
    let normal = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).expect("finite sd");
    let mut graphs = Vec::with_capacity(cfg.num_graphs);
    for (i, &y) in labels.iter().enumerate() {
        let mut rng = stream_rng(cfg.seed, &[0x5e7, i as u64]);
        let n = rng.gen_range(cfg.min_nodes..=cfg.max_nodes);
        let mut edges = Vec::new();
        // a path keeps the graph connected, extra edges are Erdős–Rényi
        for u in 1..n {
            edges.push((u - 1, u));
        }
        for u in 0..n {
            for v in u + 2..n {
                if rng.gen_bool(cfg.edge_prob) {
                    edges.push((u, v));
                }
            }
        }
        let mean = class_mean(y, cfg.feature_dim, cfg.signal);
        let x = Array2::from_shape_fn((n, cfg.feature_dim), |(_, k)| {
            mean[k] + if cfg.noise > 0.0 { normal.sample(&mut rng) } else { 0.0 }
        });
        graphs.push(InputGraph::new(i, n, edges, Some(y))?.with_features(x)?);
    }
    GraphDataset::new(graphs, cfg.num_classes)
}
