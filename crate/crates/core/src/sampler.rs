//! Graph-of-Graphs sampling: node `i` draws `k_i` out-neighbors with
//! probability proportional to `S[i, ·]`.
//!
//! Every node owns an RNG stream keyed by `(seed, stream_id, node)`, so a
//! GoG is bit-identical regardless of how rayon schedules the rows.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alloc::DegreeAllocation;
use crate::error::{Error, Result};
use crate::rng::{mix, stream_rng};
use crate::similarity::SimilarityMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerMode {
    WithReplacement,
    #[default]
    WithoutReplacement,
}

impl SamplerMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplerMode::WithReplacement => "with-replacement",
            SamplerMode::WithoutReplacement => "without-replacement",
        }
    }
}

impl FromStr for SamplerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "with-replacement" => Ok(SamplerMode::WithReplacement),
            "without-replacement" => Ok(SamplerMode::WithoutReplacement),
            other => Err(Error::Config(format!("unknown sampler mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub mode: SamplerMode,
    pub seed: u64,
    pub samples_per_epoch: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            mode: SamplerMode::WithoutReplacement,
            seed: 0,
            samples_per_epoch: 1,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_epoch == 0 {
            return Err(Error::Config("sampler.samples_per_epoch must be >= 1".into()));
        }
        Ok(())
    }
}

/// Stream id for sample `sample` of epoch `epoch`.
#[inline]
pub fn stream_id(epoch: u64, sample: u64) -> u64 {
    mix(epoch, sample)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoGEdge {
    pub src: usize,
    pub dst: usize,
    pub mult: u32,
}

/// Directed sampled GoG. Edges are sorted by `(src, dst)` and unique.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoGGraph {
    pub num_nodes: usize,
    pub mode: SamplerMode,
    pub seed: u64,
    pub edges: Vec<GoGEdge>,
}

impl GoGGraph {
    pub fn out_degrees(&self) -> Vec<u64> {
        let mut d = vec![0u64; self.num_nodes];
        for e in &self.edges {
            d[e.src] += u64::from(e.mult);
        }
        d
    }

    pub fn total_multiplicity(&self) -> u64 {
        self.edges.iter().map(|e| u64::from(e.mult)).sum()
    }

    /// Dense `N x N` multiplicity matrix.
    pub fn to_dense(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.num_nodes, self.num_nodes));
        for e in &self.edges {
            a[[e.src, e.dst]] += f64::from(e.mult);
        }
        a
    }
}

/// Positive off-diagonal support of row `i` as `(column, weight)`.
fn row_support(sim: &SimilarityMatrix, i: usize) -> Vec<(usize, f64)> {
    sim.row(i)
        .iter()
        .enumerate()
        .filter(|&(j, &w)| j != i && w > 0.0)
        .map(|(j, &w)| (j, w))
        .collect()
}

fn sample_row_with_replacement(support: &[(usize, f64)], k: u32, rng: &mut impl Rng) -> Vec<(usize, u32)> {
    let dist = WeightedIndex::new(support.iter().map(|&(_, w)| w)).expect("support has positive mass");
    let mut counts = vec![0u32; support.len()];
    for _ in 0..k {
        counts[dist.sample(rng)] += 1;
    }
    support
        .iter()
        .zip(counts)
        .filter(|&(_, c)| c > 0)
        .map(|(&(j, _), c)| (j, c))
        .collect()
}

/// Weighted sampling without replacement: keep the `k` largest `ln(u) / w`.
fn sample_row_without_replacement(support: &[(usize, f64)], k: usize, rng: &mut impl Rng) -> Vec<(usize, u32)> {
    let mut keyed: Vec<(f64, usize)> = support
        .iter()
        .map(|&(j, w)| {
            // 1 - [0, 1) keeps u away from zero
            let u: f64 = 1.0 - rng.gen::<f64>();
            (u.ln() / w, j)
        })
        .collect();
    if k < keyed.len() {
        keyed.select_nth_unstable_by(k, |a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        keyed.truncate(k);
    }
    let mut picked: Vec<(usize, u32)> = keyed.into_iter().map(|(_, j)| (j, 1)).collect();
    picked.sort_unstable();
    picked
}

/// Draws one GoG. Deterministic in `(config.seed, stream_id)`.
pub fn sample_gog(
    sim: &SimilarityMatrix,
    allocation: &DegreeAllocation,
    config: &SamplerConfig,
    stream_id: u64,
) -> Result<GoGGraph> {
    let n = sim.len();
    if allocation.len() != n {
        return Err(Error::Shape(format!(
            "allocation covers {} nodes, similarity {n}",
            allocation.len()
        )));
    }
    let rows: Vec<Result<Vec<(usize, u32)>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let k = allocation.k[i];
            if k == 0 {
                return Ok(Vec::new());
            }
            let support = row_support(sim, i);
            if support.is_empty() {
                return Err(Error::DegenerateRow { node: i });
            }
            let mut rng = stream_rng(config.seed, &[stream_id, i as u64]);
            Ok(match config.mode {
                SamplerMode::WithReplacement => sample_row_with_replacement(&support, k, &mut rng),
                SamplerMode::WithoutReplacement => {
                    let k = k as usize;
                    if k > support.len() {
                        log::warn!(
                            "node {i}: k = {k} exceeds support {}, sampling the whole support",
                            support.len()
                        );
                    }
                    sample_row_without_replacement(&support, k.min(support.len()), &mut rng)
                }
            })
        })
        .collect();

    let mut edges = Vec::new();
    for (src, row) in rows.into_iter().enumerate() {
        edges.extend(row?.into_iter().map(|(dst, mult)| GoGEdge { src, dst, mult }));
    }
    Ok(GoGGraph {
        num_nodes: n,
        mode: config.mode,
        seed: config.seed,
        edges,
    })
}

/// Multiplicity-weighted fraction of edges joining same-label endpoints.
pub fn edge_homophily(gog: &GoGGraph, true_labels: &[usize]) -> Result<f64> {
    if true_labels.len() != gog.num_nodes {
        return Err(Error::Shape(format!(
            "{} labels for a GoG of {} nodes",
            true_labels.len(),
            gog.num_nodes
        )));
    }
    let mut same = 0u64;
    let mut total = 0u64;
    for e in &gog.edges {
        let m = u64::from(e.mult);
        total += m;
        if true_labels[e.src] == true_labels[e.dst] {
            same += m;
        }
    }
    if total == 0 {
        return Err(Error::EmptyEdgeSet);
    }
    Ok(same as f64 / total as f64)
}

/// Closed-form expected edge count `k_i S[i, j] / Σ_{m≠i} S[i, m]`.
pub fn inclusion_probability(sim: &SimilarityMatrix, allocation: &DegreeAllocation) -> Result<Array2<f64>> {
    let n = sim.len();
    let mut p = Array2::zeros((n, n));
    for i in 0..n {
        let k = f64::from(allocation.k[i]);
        if k == 0.0 {
            continue;
        }
        let support = row_support(sim, i);
        let total: f64 = support.iter().map(|&(_, w)| w).sum();
        if support.is_empty() {
            return Err(Error::DegenerateRow { node: i });
        }
        for (j, w) in support {
            p[[i, j]] = k * w / total;
        }
    }
    Ok(p)
}

/// Mean edge-count matrix over `num_trials` with-replacement GoGs; trial `t`
/// uses stream id `t`.
pub fn empirical_inclusion_matrix(
    sim: &SimilarityMatrix,
    allocation: &DegreeAllocation,
    config: &SamplerConfig,
    num_trials: usize,
) -> Result<Array2<f64>> {
    if config.mode != SamplerMode::WithReplacement {
        return Err(Error::Config("inclusion estimates need with-replacement sampling".into()));
    }
    if num_trials == 0 {
        return Err(Error::EmptyInput("num_trials is zero".into()));
    }
    let n = sim.len();
    // integer counts make the reduction order irrelevant
    let counts = (0..num_trials as u64)
        .into_par_iter()
        .map(|t| sample_gog(sim, allocation, config, t))
        .try_fold(
            || vec![0u64; n * n],
            |mut acc, gog| {
                for e in gog?.edges {
                    acc[e.src * n + e.dst] += u64::from(e.mult);
                }
                Ok::<_, Error>(acc)
            },
        )
        .try_reduce(
            || vec![0u64; n * n],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;
    let trials = num_trials as f64;
    Ok(Array2::from_shape_vec((n, n), counts.into_iter().map(|c| c as f64 / trials).collect())
        .expect("n * n counts"))
}

/// Text dump: `N mode seed` header, then one `src dst mult` line per edge.
pub fn format_gog(gog: &GoGGraph) -> String {
    let mut out = format!("{} {} {}\n", gog.num_nodes, gog.mode.as_str(), gog.seed);
    for e in &gog.edges {
        let _ = writeln!(out, "{} {} {}", e.src, e.dst, e.mult);
    }
    out
}

pub fn write_gog(gog: &GoGGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_gog(gog)).map_err(|e| Error::io(path, e))
}
