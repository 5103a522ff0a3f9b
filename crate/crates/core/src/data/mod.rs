//! Graph-classification datasets: the in-memory model, node feature
//! construction, imbalance ratios and the head/tail size partition.

mod split;
mod tudataset;

pub use split::{make_class_imbalanced_split, read_split, write_split, SplitSpec};
pub use tudataset::{parse_tudataset, write_tudataset};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Degree one-hot vectors are capped at this many buckets unless configured.
pub const DEFAULT_DEGREE_CAP: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureScheme {
    NodeLabelOneHot,
    DegreeOneHot,
}

impl std::str::FromStr for FeatureScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "node-label-onehot" | "node-label" => Ok(FeatureScheme::NodeLabelOneHot),
            "degree-onehot" | "degree" => Ok(FeatureScheme::DegreeOneHot),
            other => Err(Error::Config(format!("unknown feature scheme '{other}'"))),
        }
    }
}

/// One classification instance.
///
/// Edges are undirected, stored once as `(min, max)` and sorted.
/// Self-loops are dropped on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGraph {
    pub id: usize,
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    pub node_labels: Option<Vec<usize>>,
    pub features: Array2<f64>,
    pub label: Option<usize>,
}

impl InputGraph {
    pub fn new(
        id: usize,
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        label: Option<usize>,
    ) -> Result<Self> {
        let mut canon = Vec::new();
        for (u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::Shape(format!(
                    "graph {id}: edge ({u}, {v}) outside {num_nodes} nodes"
                )));
            }
            if u != v {
                canon.push((u.min(v), u.max(v)));
            }
        }
        canon.sort_unstable();
        canon.dedup();
        Ok(Self {
            id,
            num_nodes,
            edges: canon,
            node_labels: None,
            features: Array2::zeros((num_nodes, 0)),
            label,
        })
    }

    pub fn with_node_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.num_nodes {
            return Err(Error::Shape(format!(
                "graph {}: {} node labels for {} nodes",
                self.id,
                labels.len(),
                self.num_nodes
            )));
        }
        self.node_labels = Some(labels);
        Ok(self)
    }

    pub fn with_features(mut self, features: Array2<f64>) -> Result<Self> {
        if features.nrows() != self.num_nodes {
            return Err(Error::Shape(format!(
                "graph {}: feature matrix has {} rows for {} nodes",
                self.id,
                features.nrows(),
                self.num_nodes
            )));
        }
        self.features = features;
        Ok(self)
    }

    /// Node count s_i.
    #[inline]
    pub fn size(&self) -> usize {
        self.num_nodes
    }

    #[inline]
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Returns a copy with nodes relabelled so that old node `i` becomes
    /// `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.num_nodes {
            return Err(Error::Shape("permutation length".into()));
        }
        let edges = self.edges.iter().map(|&(u, v)| (perm[u], perm[v]));
        let mut g = InputGraph::new(self.id, self.num_nodes, edges, self.label)?;
        let mut features = Array2::zeros(self.features.raw_dim());
        for (old, &new) in perm.iter().enumerate() {
            features.row_mut(new).assign(&self.features.row(old));
        }
        g.features = features;
        if let Some(labels) = &self.node_labels {
            let mut out = vec![0; labels.len()];
            for (old, &new) in perm.iter().enumerate() {
                out[new] = labels[old];
            }
            g.node_labels = Some(out);
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphDataset {
    pub graphs: Vec<InputGraph>,
    pub num_classes: usize,
    pub feature_scheme: Option<FeatureScheme>,
    pub feature_dim: usize,
    /// Number of distinct node labels, when node labels were parsed.
    pub num_node_labels: Option<usize>,
    /// Original graph-label values, indexed by contiguous class id.
    pub class_values: Vec<i64>,
    /// Original node-label values, indexed by contiguous node-label id.
    pub node_label_values: Vec<i64>,
}

impl GraphDataset {
    /// Builds a dataset from already-contiguous labels.
    pub fn new(graphs: Vec<InputGraph>, num_classes: usize) -> Result<Self> {
        for g in &graphs {
            if let Some(y) = g.label {
                if y >= num_classes {
                    return Err(Error::Shape(format!(
                        "graph {} label {y} outside {num_classes} classes",
                        g.id
                    )));
                }
            }
        }
        let num_node_labels = if !graphs.is_empty() && graphs.iter().all(|g| g.node_labels.is_some())
        {
            let max = graphs
                .iter()
                .flat_map(|g| g.node_labels.as_deref().unwrap_or_default())
                .copied()
                .max();
            Some(max.map_or(0, |m| m + 1))
        } else {
            None
        };
        let feature_dim = graphs.first().map_or(0, |g| g.features.ncols());
        if graphs.iter().any(|g| g.features.ncols() != feature_dim) {
            return Err(Error::Shape("graphs disagree on feature_dim".into()));
        }
        Ok(Self {
            graphs,
            num_classes,
            feature_scheme: None,
            feature_dim,
            num_node_labels,
            class_values: (0..num_classes as i64).collect(),
            node_label_values: (0..num_node_labels.unwrap_or(0) as i64).collect(),
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.graphs.iter().map(InputGraph::size).collect()
    }

    pub fn labels(&self) -> Vec<Option<usize>> {
        self.graphs.iter().map(|g| g.label).collect()
    }

    /// All labels, failing if any graph is unlabeled.
    pub fn true_labels(&self) -> Result<Vec<usize>> {
        self.graphs
            .iter()
            .map(|g| {
                g.label
                    .ok_or_else(|| Error::EmptyInput(format!("graph {} has no label", g.id)))
            })
            .collect()
    }

    pub fn class_counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &i in idx {
            if let Some(y) = self.graphs[i].label {
                counts[y] += 1;
            }
        }
        counts
    }

    pub fn stats(&self) -> DatasetStats {
        let n = self.len().max(1) as f64;
        DatasetStats {
            num_graphs: self.len(),
            num_classes: self.num_classes,
            avg_nodes: self.graphs.iter().map(|g| g.size() as f64).sum::<f64>() / n,
            avg_edges: self.graphs.iter().map(|g| g.edges().len() as f64).sum::<f64>() / n,
            num_node_labels: self.num_node_labels,
            class_counts: self.class_counts(&(0..self.len()).collect::<Vec<_>>()),
            max_degree: self
                .graphs
                .iter()
                .flat_map(|g| g.degrees())
                .max()
                .unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub num_graphs: usize,
    pub num_classes: usize,
    pub avg_nodes: f64,
    pub avg_edges: f64,
    pub num_node_labels: Option<usize>,
    pub class_counts: Vec<usize>,
    pub max_degree: usize,
}

pub fn build_features(dataset: &GraphDataset, scheme: FeatureScheme) -> Result<GraphDataset> {
    build_features_with_cap(dataset, scheme, DEFAULT_DEGREE_CAP)
}

/// Rebuilds every feature matrix under `scheme`. Degrees at or above
/// `degree_cap - 1` share the last bucket.
pub fn build_features_with_cap(
    dataset: &GraphDataset,
    scheme: FeatureScheme,
    degree_cap: usize,
) -> Result<GraphDataset> {
    let mut out = dataset.clone();
    match scheme {
        FeatureScheme::NodeLabelOneHot => {
            let dim = dataset.num_node_labels.ok_or_else(|| {
                Error::Config("node-label-onehot requested but dataset has no node labels".into())
            })?;
            for g in &mut out.graphs {
                let labels = g.node_labels.as_ref().ok_or_else(|| {
                    Error::Config(format!("graph {} is missing node labels", g.id))
                })?;
                let mut x = Array2::zeros((g.size(), dim));
                for (v, &l) in labels.iter().enumerate() {
                    x[[v, l]] = 1.0;
                }
                g.features = x;
            }
            out.feature_dim = dim;
        }
        FeatureScheme::DegreeOneHot => {
            if degree_cap == 0 {
                return Err(Error::Config("degree cap must be positive".into()));
            }
            let max_degree = dataset
                .graphs
                .iter()
                .flat_map(|g| g.degrees())
                .max()
                .unwrap_or(0);
            let dim = (max_degree + 1).min(degree_cap);
            for g in &mut out.graphs {
                let mut x = Array2::zeros((g.size(), dim));
                for (v, d) in g.degrees().into_iter().enumerate() {
                    x[[v, d.min(dim - 1)]] = 1.0;
                }
                g.features = x;
            }
            out.feature_dim = dim;
        }
    }
    out.feature_scheme = Some(scheme);
    Ok(out)
}

/// Max over min per-class count among `train_idx`.
pub fn compute_class_imbalance_ratio(dataset: &GraphDataset, train_idx: &[usize]) -> Result<f64> {
    let mut counts = vec![0usize; dataset.num_classes];
    for &i in train_idx {
        let g = dataset
            .graphs
            .get(i)
            .ok_or_else(|| Error::Shape(format!("train index {i} out of bounds")))?;
        let y = g
            .label
            .ok_or_else(|| Error::UndefinedRatio(format!("train graph {i} is unlabeled")))?;
        counts[y] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::UndefinedRatio(format!(
            "class {c} has no training instance"
        )));
    }
    let max = *counts.iter().max().unwrap_or(&0);
    let min = *counts.iter().min().unwrap_or(&0);
    if min == 0 {
        return Err(Error::UndefinedRatio("no classes".into()));
    }
    Ok(max as f64 / min as f64)
}

/// Splits indices into the largest `ceil(0.2 N)` graphs (head) and the rest
/// (tail). Among equal sizes the higher id ranks as larger. Both lists are
/// returned in ascending id order.
pub fn head_tail_partition_sizes(sizes: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = sizes.len();
    if n < 5 {
        return Err(Error::DegeneratePartition(n));
    }
    // ceil(0.2 n) in integer arithmetic
    let head_len = n.div_ceil(5);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (sizes[i], i));
    let mut tail = order[..n - head_len].to_vec();
    let mut head = order[n - head_len..].to_vec();
    head.sort_unstable();
    tail.sort_unstable();
    Ok((head, tail))
}

pub fn head_tail_partition(dataset: &GraphDataset) -> Result<(Vec<usize>, Vec<usize>)> {
    head_tail_partition_sizes(&dataset.sizes())
}

pub fn size_imbalance_ratio_of(sizes: &[usize]) -> Result<f64> {
    let (head, tail) = head_tail_partition_sizes(sizes)?;
    let mean = |idx: &[usize]| idx.iter().map(|&i| sizes[i] as f64).sum::<f64>() / idx.len() as f64;
    let tail_mean = mean(&tail);
    if tail_mean == 0.0 {
        return Err(Error::UndefinedRatio("tail graphs have zero nodes".into()));
    }
    Ok(mean(&head) / tail_mean)
}

/// Mean head size over mean tail size.
pub fn compute_size_imbalance_ratio(dataset: &GraphDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("dataset".into()));
    }
    size_imbalance_ratio_of(&dataset.sizes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_graph(id: usize, n: usize, label: usize) -> InputGraph {
        InputGraph::new(id, n, (1..n).map(|v| (v - 1, v)), Some(label)).unwrap()
    }

    fn sized(sizes: &[usize]) -> GraphDataset {
        let graphs = sizes
            .iter()
            .enumerate()
            .map(|(i, &s)| path_graph(i, s, i % 2))
            .collect();
        GraphDataset::new(graphs, 2).unwrap()
    }

    #[test]
    fn canonical_edges_dedup_and_drop_loops() {
        let g = InputGraph::new(0, 3, [(1, 0), (0, 1), (2, 2), (2, 1)], None).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert!(InputGraph::new(0, 2, [(0, 2)], None).is_err());
    }

    #[test]
    fn degree_onehot_path() {
        let ds = GraphDataset::new(vec![path_graph(0, 3, 0)], 1).unwrap();
        let ds = build_features(&ds, FeatureScheme::DegreeOneHot).unwrap();
        assert_eq!(ds.feature_dim, 3);
        let x = &ds.graphs[0].features;
        let hot: Vec<usize> = x
            .rows()
            .into_iter()
            .map(|r| r.iter().position(|&v| v == 1.0).unwrap())
            .collect();
        assert_eq!(hot, vec![1, 2, 1]);
        for r in x.rows() {
            assert_eq!(r.sum(), 1.0);
        }
    }

    #[test]
    fn degree_onehot_cap_clamps() {
        let star = InputGraph::new(0, 6, (1..6).map(|v| (0, v)), Some(0)).unwrap();
        let ds = GraphDataset::new(vec![star], 1).unwrap();
        let ds = build_features_with_cap(&ds, FeatureScheme::DegreeOneHot, 3).unwrap();
        assert_eq!(ds.feature_dim, 3);
        assert_eq!(ds.graphs[0].features[[0, 2]], 1.0);
        assert_eq!(ds.graphs[0].features[[1, 1]], 1.0);
    }

    #[test]
    fn node_label_scheme_without_labels_is_config_error() {
        let ds = GraphDataset::new(vec![path_graph(0, 3, 0)], 1).unwrap();
        assert!(matches!(
            build_features(&ds, FeatureScheme::NodeLabelOneHot),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn node_label_onehot_dim() {
        let g = path_graph(0, 3, 0).with_node_labels(vec![0, 4, 2]).unwrap();
        let ds = GraphDataset::new(vec![g], 1).unwrap();
        let ds = build_features(&ds, FeatureScheme::NodeLabelOneHot).unwrap();
        assert_eq!(ds.feature_dim, 5);
        assert_eq!(ds.graphs[0].features[[1, 4]], 1.0);
    }

    #[test]
    fn class_ratio_examples() {
        let mk = |a: usize, b: usize| {
            let graphs = (0..a + b)
                .map(|i| path_graph(i, 2, usize::from(i >= a)))
                .collect();
            GraphDataset::new(graphs, 2).unwrap()
        };
        let ds = mk(90, 10);
        let all: Vec<usize> = (0..100).collect();
        assert_eq!(compute_class_imbalance_ratio(&ds, &all).unwrap(), 9.0);
        let ds = mk(50, 50);
        assert_eq!(compute_class_imbalance_ratio(&ds, &all).unwrap(), 1.0);
        let ds = mk(70, 30);
        assert!((compute_class_imbalance_ratio(&ds, &all).unwrap() - 7.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            compute_class_imbalance_ratio(&ds, &all[..70]),
            Err(Error::UndefinedRatio(_))
        ));
    }

    #[test]
    fn size_ratio_examples() {
        assert_eq!(compute_size_imbalance_ratio(&sized(&[10, 10, 10, 10, 50])).unwrap(), 5.0);
        assert_eq!(compute_size_imbalance_ratio(&sized(&[7; 12])).unwrap(), 1.0);
        let sizes: Vec<usize> = (1..=100).collect();
        let r = size_imbalance_ratio_of(&sizes).unwrap();
        assert!((r - 90.5 / 40.5).abs() < 1e-12);
        assert!(matches!(
            compute_size_imbalance_ratio(&sized(&[1, 2, 3, 4])),
            Err(Error::DegeneratePartition(4))
        ));
    }

    #[test]
    fn head_tail_examples() {
        let (head, tail) = head_tail_partition(&sized(&[2, 3, 4, 5, 6, 7, 8, 9, 10, 11])).unwrap();
        assert_eq!(head, vec![8, 9]);
        assert_eq!(tail.len(), 8);
        let (head, _) = head_tail_partition(&sized(&[5; 10])).unwrap();
        assert_eq!(head, vec![8, 9]);
        // ceil(0.2 * 11) = 3
        let (head, _) = head_tail_partition_sizes(&[1; 11]).unwrap();
        assert_eq!(head.len(), 3);
    }

    #[test]
    fn permutation_keeps_structure() {
        let g = path_graph(0, 4, 1).with_node_labels(vec![0, 1, 2, 3]).unwrap();
        let p = g.permuted(&[3, 2, 1, 0]).unwrap();
        assert_eq!(p.edges(), &[(0, 1), (1, 2), (2, 3)]);
        assert_eq!(p.node_labels.unwrap(), vec![3, 2, 1, 0]);
    }
}
