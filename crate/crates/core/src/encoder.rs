//! Per-graph GNN encoder: GCN or GIN message passing, mean/sum readout,
//! and a Linear-ReLU-Linear head producing class logits.
//!
//! Gradients are written out by hand for this fixed architecture and
//! checked against central differences in the tests.

use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{GraphDataset, InputGraph};
use crate::error::{Error, Result};
use crate::nn::{cross_entropy, dropout_mask, relu_backward, relu_inplace, ParamLayout, Params, TensorKind};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    #[default]
    Gcn,
    Gin,
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(Arch::Gcn),
            "gin" => Ok(Arch::Gin),
            other => Err(Error::Config(format!("unknown encoder arch '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Readout {
    #[default]
    Mean,
    Sum,
}

impl FromStr for Readout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Readout::Mean),
            "sum" => Ok(Readout::Sum),
            other => Err(Error::Config(format!("unknown readout '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub arch: Arch,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub epsilon_gin: f64,
    pub readout: Readout,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Gcn,
            num_layers: 2,
            hidden_dim: 32,
            dropout: 0.0,
            epsilon_gin: 0.0,
            readout: Readout::Mean,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::Config("encoder.num_layers must be >= 1".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config("encoder.hidden_dim must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("encoder.dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if !self.epsilon_gin.is_finite() {
            return Err(Error::Config("encoder.epsilon_gin must be finite".into()));
        }
        Ok(())
    }
}

/// Sparse weighted operator as `(row, col, weight)`, sorted by row then col.
pub type SparseOp = Vec<(usize, usize, f64)>;

/// `Y[i] += w X[j]` for every entry.
pub fn propagate(op: &[(usize, usize, f64)], x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut y = Array2::zeros(x.dim());
    for &(i, j, w) in op {
        y.row_mut(i).scaled_add(w, &x.row(j));
    }
    y
}

/// Adjoint of [`propagate`]: `dX[j] += w dY[i]`.
pub fn propagate_transpose(op: &[(usize, usize, f64)], dy: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut dx = Array2::zeros(dy.dim());
    for &(i, j, w) in op {
        dx.row_mut(j).scaled_add(w, &dy.row(i));
    }
    dx
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` for an undirected edge list.
pub fn gcn_normalized(num_nodes: usize, edges: &[(usize, usize)]) -> SparseOp {
    let mut deg = vec![1.0f64; num_nodes];
    for &(u, v) in edges {
        deg[u] += 1.0;
        deg[v] += 1.0;
    }
    let mut op: SparseOp = Vec::with_capacity(num_nodes + 2 * edges.len());
    for (i, &d) in deg.iter().enumerate() {
        op.push((i, i, 1.0 / d));
    }
    for &(u, v) in edges {
        let w = 1.0 / (deg[u] * deg[v]).sqrt();
        op.push((u, v, w));
        op.push((v, u, w));
    }
    op.sort_by_key(|a| (a.0, a.1));
    op
}

/// Plain neighbor sum (both directions), used by GIN.
pub fn neighbor_sum(edges: &[(usize, usize)]) -> SparseOp {
    let mut op: SparseOp = edges.iter().flat_map(|&(u, v)| [(u, v, 1.0), (v, u, 1.0)]).collect();
    op.sort_by_key(|a| (a.0, a.1));
    op
}

/// Graph with its propagation operators precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedGraph {
    pub x: Array2<f64>,
    pub gcn: SparseOp,
    pub nbr: SparseOp,
}

impl PreparedGraph {
    pub fn new(g: &InputGraph) -> Self {
        Self {
            x: g.features.clone(),
            gcn: gcn_normalized(g.size(), g.edges()),
            nbr: neighbor_sum(g.edges()),
        }
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.x.nrows()
    }
}

pub fn prepare_dataset(dataset: &GraphDataset) -> Vec<PreparedGraph> {
    dataset.graphs.par_iter().map(PreparedGraph::new).collect()
}

#[derive(Debug, Clone, Copy)]
enum LayerIdx {
    Gcn { w: usize },
    Gin { w1: usize, b1: usize, w2: usize, b2: usize },
}

#[derive(Debug, Clone, Copy)]
struct HeadIdx {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub in_dim: usize,
    pub num_classes: usize,
    layout: ParamLayout,
    layers: Vec<LayerIdx>,
    head: HeadIdx,
}

#[derive(Debug, Clone)]
enum LayerCache {
    Gcn {
        x: Array2<f64>,
        z: Array2<f64>,
        mask: Option<Array2<f64>>,
    },
    Gin {
        g: Array2<f64>,
        p1: Array2<f64>,
        r1: Array2<f64>,
        p2: Array2<f64>,
        mask: Option<Array2<f64>>,
    },
}

/// Forward activations of one graph, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GraphForward {
    pub embedding: Array1<f64>,
    pub logits: Array1<f64>,
    layers: Vec<LayerCache>,
    num_nodes: usize,
    q1: Array2<f64>,
    head_mask: Option<Array2<f64>>,
    r_drop: Array2<f64>,
}

fn apply_mask(a: &mut Array2<f64>, p: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Array2<f64>> {
    let rng = rng.filter(|_| p > 0.0)?;
    let m = dropout_mask(a.nrows(), a.ncols(), p, rng);
    *a *= &m;
    Some(m)
}

fn add_bias(a: &mut Array2<f64>, b: ndarray::ArrayView1<'_, f64>) {
    for mut row in a.rows_mut() {
        row += &b;
    }
}

impl Encoder {
    pub fn new(config: EncoderConfig, in_dim: usize, num_classes: usize) -> Result<Self> {
        config.validate()?;
        if in_dim == 0 {
            return Err(Error::Shape("encoder input dimension is zero".into()));
        }
        if num_classes == 0 {
            return Err(Error::Shape("encoder needs at least one class".into()));
        }
        let h = config.hidden_dim;
        let mut layout = ParamLayout::new();
        let mut layers = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let d = if l == 0 { in_dim } else { h };
            layers.push(match config.arch {
                Arch::Gcn => LayerIdx::Gcn {
                    w: layout.push(format!("encoder.gcn{l}.w"), d, h, TensorKind::Weight),
                },
                Arch::Gin => LayerIdx::Gin {
                    w1: layout.push(format!("encoder.gin{l}.w1"), d, h, TensorKind::Weight),
                    b1: layout.push(format!("encoder.gin{l}.b1"), 1, h, TensorKind::Bias),
                    w2: layout.push(format!("encoder.gin{l}.w2"), h, h, TensorKind::Weight),
                    b2: layout.push(format!("encoder.gin{l}.b2"), 1, h, TensorKind::Bias),
                },
            });
        }
        let head = HeadIdx {
            w1: layout.push("encoder.head.w1", h, h, TensorKind::Weight),
            b1: layout.push("encoder.head.b1", 1, h, TensorKind::Bias),
            w2: layout.push("encoder.head.w2", h, num_classes, TensorKind::Weight),
            b2: layout.push("encoder.head.b2", 1, num_classes, TensorKind::Bias),
        };
        Ok(Self {
            config,
            in_dim,
            num_classes,
            layout,
            layers,
            head,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.len()
    }

    pub fn init_params(&self, seed: u64) -> Params {
        Params {
            data: self.layout.glorot_init(seed),
            layout: self.layout.clone(),
        }
    }

    /// Forward pass for one graph. Dropout is active iff `rng` is given.
    pub fn forward(&self, params: &[f64], graph: &PreparedGraph, mut rng: Option<&mut ChaCha8Rng>) -> Result<GraphForward> {
        if graph.x.ncols() != self.in_dim {
            return Err(Error::Shape(format!(
                "graph features have {} columns, encoder expects {}",
                graph.x.ncols(),
                self.in_dim
            )));
        }
        let p = self.config.dropout;
        let l = &self.layout;
        let n = graph.num_nodes();
        let mut x = graph.x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            match *layer {
                LayerIdx::Gcn { w } => {
                    let z = propagate(&graph.gcn, x.dot(&l.view(params, w)).view());
                    let mut a = z.clone();
                    relu_inplace(&mut a);
                    let mask = apply_mask(&mut a, p, rng.as_deref_mut());
                    caches.push(LayerCache::Gcn { x, z, mask });
                    x = a;
                }
                LayerIdx::Gin { w1, b1, w2, b2 } => {
                    let mut g = propagate(&graph.nbr, x.view());
                    g.scaled_add(1.0 + self.config.epsilon_gin, &x);
                    let mut p1 = g.dot(&l.view(params, w1));
                    add_bias(&mut p1, l.row(params, b1));
                    let mut r1 = p1.clone();
                    relu_inplace(&mut r1);
                    let mut p2 = r1.dot(&l.view(params, w2));
                    add_bias(&mut p2, l.row(params, b2));
                    let mut a = p2.clone();
                    relu_inplace(&mut a);
                    let mask = apply_mask(&mut a, p, rng.as_deref_mut());
                    caches.push(LayerCache::Gin { g, p1, r1, p2, mask });
                    x = a;
                }
            }
        }
        let mut embedding = x.sum_axis(Axis(0));
        if self.config.readout == Readout::Mean && n > 0 {
            embedding /= n as f64;
        }
        let h = embedding.view().insert_axis(Axis(0));
        let mut q1 = h.dot(&l.view(params, self.head.w1));
        add_bias(&mut q1, l.row(params, self.head.b1));
        let mut r = q1.clone();
        relu_inplace(&mut r);
        let head_mask = apply_mask(&mut r, p, rng);
        let mut logits = r.dot(&l.view(params, self.head.w2));
        add_bias(&mut logits, l.row(params, self.head.b2));
        Ok(GraphForward {
            embedding,
            logits: logits.row(0).to_owned(),
            layers: caches,
            num_nodes: n,
            q1,
            head_mask,
            r_drop: r,
        })
    }

    /// Accumulates into `grad` the gradient of a scalar whose derivatives
    /// with respect to this graph's logits and embedding are given.
    pub fn backward(
        &self,
        params: &[f64],
        graph: &PreparedGraph,
        fwd: &GraphForward,
        dlogits: &Array1<f64>,
        dembedding: Option<&Array1<f64>>,
        grad: &mut [f64],
    ) {
        let l = &self.layout;
        let hd = self.head;
        let dlog = dlogits.view().insert_axis(Axis(0));
        l.view_mut(grad, hd.w2).scaled_add(1.0, &fwd.r_drop.t().dot(&dlog));
        l.view_mut(grad, hd.b2).scaled_add(1.0, &dlog);
        let mut dr = dlog.dot(&l.view(params, hd.w2).t());
        if let Some(m) = &fwd.head_mask {
            dr *= m;
        }
        let dq1 = relu_backward(&dr, &fwd.q1);
        let h = fwd.embedding.view().insert_axis(Axis(0));
        l.view_mut(grad, hd.w1).scaled_add(1.0, &h.t().dot(&dq1));
        l.view_mut(grad, hd.b1).scaled_add(1.0, &dq1);
        let mut dh = dq1.dot(&l.view(params, hd.w1).t()).row(0).to_owned();
        if let Some(extra) = dembedding {
            dh += extra;
        }
        if self.config.readout == Readout::Mean && fwd.num_nodes > 0 {
            dh /= fwd.num_nodes as f64;
        }
        let mut da = Array2::from_shape_fn((fwd.num_nodes, dh.len()), |(_, c)| dh[c]);

        for (layer, cache) in self.layers.iter().zip(&fwd.layers).rev() {
            da = match (*layer, cache) {
                (LayerIdx::Gcn { w }, LayerCache::Gcn { x, z, mask }) => {
                    if let Some(m) = mask {
                        da *= m;
                    }
                    let dz = relu_backward(&da, z);
                    let du = propagate_transpose(&graph.gcn, dz.view());
                    l.view_mut(grad, w).scaled_add(1.0, &x.t().dot(&du));
                    du.dot(&l.view(params, w).t())
                }
                (LayerIdx::Gin { w1, b1, w2, b2 }, LayerCache::Gin { g, p1, r1, p2, mask }) => {
                    if let Some(m) = mask {
                        da *= m;
                    }
                    let dp2 = relu_backward(&da, p2);
                    l.view_mut(grad, w2).scaled_add(1.0, &r1.t().dot(&dp2));
                    l.view_mut(grad, b2).row_mut(0).scaled_add(1.0, &dp2.sum_axis(Axis(0)));
                    let dr1 = dp2.dot(&l.view(params, w2).t());
                    let dp1 = relu_backward(&dr1, p1);
                    l.view_mut(grad, w1).scaled_add(1.0, &g.t().dot(&dp1));
                    l.view_mut(grad, b1).row_mut(0).scaled_add(1.0, &dp1.sum_axis(Axis(0)));
                    let dg = dp1.dot(&l.view(params, w1).t());
                    let mut dx = propagate_transpose(&graph.nbr, dg.view());
                    dx.scaled_add(1.0 + self.config.epsilon_gin, &dg);
                    dx
                }
                _ => unreachable!("layer kind mismatch"),
            };
        }
    }
}

/// Encoder outputs for a whole dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    /// `N x hidden_dim` graph embeddings.
    pub embeddings: Array2<f64>,
    /// `N x |C|` class logits.
    pub logits: Array2<f64>,
}

/// Graphs per fixed reduction chunk; the sum order never depends on the
/// thread count.
const REDUCE_CHUNK: usize = 16;

fn stack(rows: impl ExactSizeIterator<Item = Array1<f64>>, cols: usize) -> Array2<f64> {
    let n = rows.len();
    let flat: Vec<f64> = rows.flat_map(|r| r.into_iter()).collect();
    Array2::from_shape_vec((n, cols), flat).expect("row widths agree")
}

/// Eval-mode encoding of every graph (no dropout).
pub fn encode_dataset(encoder: &Encoder, params: &[f64], graphs: &[PreparedGraph]) -> Result<Encoded> {
    let outs: Vec<GraphForward> = graphs
        .par_iter()
        .map(|g| encoder.forward(params, g, None))
        .collect::<Result<_>>()?;
    let h = encoder.config.hidden_dim;
    let c = encoder.num_classes;
    let embeddings = stack(outs.iter().map(|o| o.embedding.clone()), h);
    let logits = stack(outs.into_iter().map(|o| o.logits), c);
    if embeddings.iter().chain(logits.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            epoch: 0,
            what: "encoder output",
            value: f64::NAN,
        });
    }
    Ok(Encoded { embeddings, logits })
}

/// Mean cross-entropy of the encoder head over `targets = (graph, class)`
/// and its gradient. With `dropout_seed`, graph `g` draws its masks from
/// stream `(dropout_seed, g)`.
pub fn supervised_loss_and_grad(
    encoder: &Encoder,
    params: &[f64],
    graphs: &[PreparedGraph],
    targets: &[(usize, usize)],
    dropout_seed: Option<u64>,
) -> Result<(f64, Vec<f64>)> {
    if targets.is_empty() {
        return Err(Error::EmptyInput("no labeled graphs for the encoder loss".into()));
    }
    let scale = 1.0 / targets.len() as f64;
    let partials: Vec<(f64, Vec<f64>)> = targets
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| -> Result<(f64, Vec<f64>)> {
            let mut loss = 0.0;
            let mut grad = vec![0.0; encoder.num_params()];
            for &(gi, y) in chunk {
                let graph = graphs.get(gi).ok_or_else(|| Error::Shape(format!("graph index {gi}")))?;
                let mut rng = dropout_seed.map(|s| stream_rng(s, &[gi as u64]));
                let fwd = encoder.forward(params, graph, rng.as_mut())?;
                let logits = fwd.logits.view().insert_axis(Axis(0)).to_owned();
                let (l, dl) = cross_entropy(&logits, &[(0, y)])?;
                loss += l * scale;
                encoder.backward(params, graph, &fwd, &(dl.row(0).to_owned() * scale), None, &mut grad);
            }
            Ok((loss, grad))
        })
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; encoder.num_params()];
    for (l, g) in partials {
        loss += l;
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradient_check;
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    fn graph(n: usize, edges: &[(usize, usize)], x: Array2<f64>) -> PreparedGraph {
        let g = InputGraph::new(0, n, edges.iter().copied(), None).unwrap().with_features(x).unwrap();
        PreparedGraph::new(&g)
    }

    fn random_graph(n: usize, d: usize, seed: u64) -> PreparedGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.gen_bool(0.4) {
                    edges.push((u, v));
                }
            }
        }
        let x = Array2::from_shape_simple_fn((n, d), || rng.gen_range(-1.0..1.0));
        graph(n, &edges, x)
    }

    fn dense(op: &[(usize, usize, f64)], n: usize) -> Array2<f64> {
        let mut a = Array2::zeros((n, n));
        for &(i, j, w) in op {
            a[[i, j]] += w;
        }
        a
    }

    // Dense oracle: Â = D̃^{-1/2}(A+I)D̃^{-1/2} built from an adjacency matrix.
    fn dense_gcn_oracle(adj: &Array2<f64>) -> Array2<f64> {
        let n = adj.nrows();
        let at = adj + &Array2::<f64>::eye(n);
        let d: Vec<f64> = at.rows().into_iter().map(|r| r.sum()).collect();
        Array2::from_shape_fn((n, n), |(i, j)| at[[i, j]] / (d[i] * d[j]).sqrt())
    }

    fn cfg(arch: Arch, layers: usize, hidden: usize, readout: Readout) -> EncoderConfig {
        EncoderConfig {
            arch,
            num_layers: layers,
            hidden_dim: hidden,
            dropout: 0.0,
            epsilon_gin: 0.3,
            readout,
        }
    }

    #[test]
    fn two_node_normalization_by_hand() {
        // degrees with self-loops are 2 and 2, every entry is 1/2
        let op = gcn_normalized(2, &[(0, 1)]);
        assert_eq!(dense(&op, 2), array![[0.5, 0.5], [0.5, 0.5]]);
        let y = propagate(&op, array![[1.0], [1.0]].view());
        assert_eq!(y, array![[1.0], [1.0]]);
        assert_eq!(dense(&gcn_normalized(1, &[]), 1), array![[1.0]]);
    }

    #[test]
    fn gcn_operator_matches_dense_oracle() {
        let g = random_graph(5, 1, 11);
        let mut adj = Array2::zeros((5, 5));
        for &(i, j, _) in &g.nbr {
            adj[[i, j]] = 1.0;
        }
        let oracle = dense_gcn_oracle(&adj);
        let ours = dense(&g.gcn, 5);
        for (a, b) in ours.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    // single GCN layer output equals ReLU(Â X W) from dense matrices
    #[test]
    fn gcn_layer_matches_dense_reference() {
        let g = random_graph(5, 3, 2);
        let enc = Encoder::new(cfg(Arch::Gcn, 1, 4, Readout::Sum), 3, 2).unwrap();
        let p = enc.init_params(5);
        let fwd = enc.forward(&p.data, &g, None).unwrap();
        let a_hat = dense(&g.gcn, 5);
        let w = enc.layout().view(&p.data, 0);
        let mut z = a_hat.dot(&g.x).dot(&w);
        relu_inplace(&mut z);
        let expect = z.sum_axis(Axis(0));
        for (a, b) in fwd.embedding.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn isolated_node_gcn_is_relu_of_xw() {
        let g = graph(1, &[], array![[0.5, -2.0]]);
        let enc = Encoder::new(cfg(Arch::Gcn, 1, 2, Readout::Sum), 2, 2).unwrap();
        let mut p = enc.init_params(0);
        // identity weights
        p.layout.view_mut(&mut p.data, 0).assign(&Array2::eye(2));
        let fwd = enc.forward(&p.data, &g, None).unwrap();
        assert_eq!(fwd.embedding, array![0.5, 0.0]);
    }

    fn gin_mlp(enc: &Encoder, p: &[f64], g: &Array2<f64>) -> Array2<f64> {
        let l = enc.layout();
        let mut a = g.dot(&l.view(p, 0)) + l.view(p, 1);
        relu_inplace(&mut a);
        let mut b = a.dot(&l.view(p, 2)) + l.view(p, 3);
        relu_inplace(&mut b);
        b
    }

    #[test]
    fn gin_star_center() {
        // center 0 with three identical leaves
        let x = array![[1.0, 2.0], [0.5, -1.0], [0.5, -1.0], [0.5, -1.0]];
        let g = graph(4, &[(0, 1), (0, 2), (0, 3)], x.clone());
        let enc = Encoder::new(cfg(Arch::Gin, 1, 3, Readout::Sum), 2, 2).unwrap();
        let p = enc.init_params(9);
        let fwd = enc.forward(&p.data, &g, None).unwrap();
        let LayerCache::Gin { p2, .. } = &fwd.layers[0] else { panic!() };
        let center = x.row(0).to_owned() * 1.3 + x.row(1).to_owned() * 3.0;
        let expect = gin_mlp(&enc, &p.data, &center.insert_axis(Axis(0)));
        let mut got = p2.row(0).to_owned();
        got.mapv_inplace(|v| v.max(0.0));
        for (a, b) in got.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn gin_layer_matches_dense_reference() {
        let g = random_graph(6, 3, 4);
        let enc = Encoder::new(cfg(Arch::Gin, 1, 4, Readout::Sum), 3, 2).unwrap();
        let p = enc.init_params(1);
        let fwd = enc.forward(&p.data, &g, None).unwrap();
        let adj = dense(&g.nbr, 6);
        let agg = adj.dot(&g.x) + &(&g.x * 1.3);
        let expect = gin_mlp(&enc, &p.data, &agg).sum_axis(Axis(0));
        for (a, b) in fwd.embedding.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_graphs_identical_rows_and_zero_head_uniform() {
        let g = random_graph(4, 2, 8);
        let graphs = vec![g.clone(), g.clone(), g];
        let enc = Encoder::new(cfg(Arch::Gcn, 2, 3, Readout::Mean), 2, 2).unwrap();
        let mut p = enc.init_params(2);
        let out = encode_dataset(&enc, &p.data, &graphs).unwrap();
        assert_eq!(out.embeddings.row(0), out.embeddings.row(2));
        assert_eq!(out.logits.row(0), out.logits.row(1));
        let w2 = enc.head.w2;
        p.layout.view_mut(&mut p.data, w2).fill(0.0);
        let out = encode_dataset(&enc, &p.data, &graphs).unwrap();
        assert!(out.logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn readout_is_permutation_invariant() {
        let n = 6;
        let base = random_graph(n, 3, 21);
        let edges: Vec<(usize, usize)> = base.nbr.iter().filter(|e| e.0 < e.1).map(|e| (e.0, e.1)).collect();
        let g = InputGraph::new(0, n, edges, None).unwrap().with_features(base.x.clone()).unwrap();
        let perm = [3, 0, 5, 1, 4, 2];
        let pg = PreparedGraph::new(&g.permuted(&perm).unwrap());
        for arch in [Arch::Gcn, Arch::Gin] {
            let enc = Encoder::new(cfg(arch, 2, 4, Readout::Mean), 3, 2).unwrap();
            let p = enc.init_params(3);
            let a = enc.forward(&p.data, &base, None).unwrap();
            let b = enc.forward(&p.data, &pg, None).unwrap();
            for (x, y) in a.logits.iter().zip(b.logits.iter()) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    fn check_arch(arch: Arch, readout: Readout, dropout: f64) -> f64 {
        let graphs: Vec<PreparedGraph> = (0..4).map(|s| random_graph(4 + s as usize, 3, 50 + s)).collect();
        let mut c = cfg(arch, 2, 4, readout);
        c.dropout = dropout;
        let enc = Encoder::new(c, 3, 3).unwrap();
        assert!(enc.num_params() <= 200, "{}", enc.num_params());
        // small positive shift keeps pre-activations away from the ReLU kink
        let mut p = enc.init_params(77);
        p.data.iter_mut().for_each(|v| *v += 0.05);
        let targets = [(0, 0), (1, 2), (3, 1)];
        let seed = Some(5).filter(|_| dropout > 0.0);
        let (_, grad) = supervised_loss_and_grad(&enc, &p.data, &graphs, &targets, seed).unwrap();
        gradient_check(&p.data, &grad, 1e-5, 1e-6, |q| {
            supervised_loss_and_grad(&enc, q, &graphs, &targets, seed).unwrap().0
        })
    }

    #[test]
    fn gradient_check_gcn() {
        assert!(check_arch(Arch::Gcn, Readout::Mean, 0.0) < 1e-4);
        assert!(check_arch(Arch::Gcn, Readout::Sum, 0.0) < 1e-4);
    }

    #[test]
    fn gradient_check_gin() {
        assert!(check_arch(Arch::Gin, Readout::Mean, 0.0) < 1e-4);
        assert!(check_arch(Arch::Gin, Readout::Sum, 0.0) < 1e-4);
    }

    #[test]
    fn gradient_check_with_fixed_dropout_masks() {
        assert!(check_arch(Arch::Gcn, Readout::Mean, 0.3) < 1e-4);
        assert!(check_arch(Arch::Gin, Readout::Mean, 0.3) < 1e-4);
    }

    #[test]
    fn thread_count_does_not_change_gradient() {
        let graphs: Vec<PreparedGraph> = (0..40).map(|s| random_graph(5, 3, s)).collect();
        let targets: Vec<(usize, usize)> = (0..40).map(|i| (i, i % 2)).collect();
        let enc = Encoder::new(cfg(Arch::Gin, 2, 4, Readout::Mean), 3, 2).unwrap();
        let p = enc.init_params(1);
        let a = supervised_loss_and_grad(&enc, &p.data, &graphs, &targets, Some(3)).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| supervised_loss_and_grad(&enc, &p.data, &graphs, &targets, Some(3)).unwrap());
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert!(a.1.iter().zip(&b.1).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn rejects_bad_shapes_and_empty_targets() {
        let enc = Encoder::new(cfg(Arch::Gcn, 1, 2, Readout::Mean), 3, 2).unwrap();
        let p = enc.init_params(0);
        let g = random_graph(3, 2, 0);
        assert!(matches!(enc.forward(&p.data, &g, None), Err(Error::Shape(_))));
        assert!(supervised_loss_and_grad(&enc, &p.data, &[], &[], None).is_err());
        assert!(Encoder::new(cfg(Arch::Gcn, 0, 2, Readout::Mean), 3, 2).is_err());
    }
}
