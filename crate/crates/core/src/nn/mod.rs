//! Small dense building blocks shared by the encoder and the GoG classifier:
//! a flat parameter vector split into named tensors, initialisation,
//! softmax cross-entropy, dropout masks, checkpoints and gradient checks.

mod checkpoint;
mod optim;

pub use checkpoint::{read_checkpoint, read_checkpoint_from, write_checkpoint, write_checkpoint_to, CHECKPOINT_VERSION};
pub use optim::{LrSchedule, Optimizer, OptimizerConfig, OptimizerKind};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Weight,
    Bias,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    pub kind: TensorKind,
}

impl TensorSpec {
    #[inline]
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Partition of a flat parameter vector into row-major named tensors.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParamLayout {
    specs: Vec<TensorSpec>,
    len: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor and returns its index.
    pub fn push(&mut self, name: impl Into<String>, rows: usize, cols: usize, kind: TensorKind) -> usize {
        self.specs.push(TensorSpec {
            name: name.into(),
            rows,
            cols,
            offset: self.len,
            kind,
        });
        self.len += rows * cols;
        self.specs.len() - 1
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn view<'a>(&self, data: &'a [f64], idx: usize) -> ArrayView2<'a, f64> {
        let s = &self.specs[idx];
        ArrayView2::from_shape((s.rows, s.cols), &data[s.range()]).expect("layout shape")
    }

    pub fn view_mut<'a>(&self, data: &'a mut [f64], idx: usize) -> ArrayViewMut2<'a, f64> {
        let s = &self.specs[idx];
        ArrayViewMut2::from_shape((s.rows, s.cols), &mut data[s.range()]).expect("layout shape")
    }

    /// Row vector view of a `1 x c` tensor.
    pub fn row<'a>(&self, data: &'a [f64], idx: usize) -> ArrayView1<'a, f64> {
        let s = &self.specs[idx];
        debug_assert_eq!(s.rows, 1);
        ArrayView1::from(&data[s.range()])
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn glorot_init(&self, seed: u64) -> Vec<f64> {
        let mut data = vec![0.0; self.len];
        for (t, s) in self.specs.iter().enumerate() {
            if s.kind == TensorKind::Bias {
                continue;
            }
            let a = (6.0 / (s.rows + s.cols) as f64).sqrt();
            let mut rng = stream_rng(seed, &[0x1417, t as u64]);
            for v in &mut data[s.range()] {
                *v = rng.gen_range(-a..a);
            }
        }
        data
    }
}

/// Parameters plus their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub layout: ParamLayout,
    pub data: Vec<f64>,
}

impl Params {
    pub fn named_tensors(&self) -> Vec<(String, Array2<f64>)> {
        (0..self.layout.specs().len())
            .map(|i| (self.layout.specs()[i].name.clone(), self.layout.view(&self.data, i).to_owned()))
            .collect()
    }

    /// Loads tensors by name; every tensor of the layout must be present
    /// with the same shape.
    pub fn load_named(&mut self, tensors: &[(String, Array2<f64>)]) -> Result<()> {
        for (i, spec) in self.layout.specs().to_vec().iter().enumerate() {
            let (_, t) = tensors
                .iter()
                .find(|(n, _)| *n == spec.name)
                .ok_or_else(|| Error::Checkpoint(format!("tensor '{}' missing", spec.name)))?;
            if t.dim() != (spec.rows, spec.cols) {
                return Err(Error::Checkpoint(format!(
                    "tensor '{}' has shape {:?}, expected ({}, {})",
                    spec.name,
                    t.dim(),
                    spec.rows,
                    spec.cols
                )));
            }
            self.layout.view_mut(&mut self.data, i).assign(t);
        }
        Ok(())
    }
}

#[inline]
pub fn relu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v.max(0.0));
}

/// `grad * 1(pre > 0)`.
pub fn relu_backward(grad: &Array2<f64>, pre: &Array2<f64>) -> Array2<f64> {
    let mut out = grad.clone();
    out.zip_mut_with(pre, |g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
    out
}

/// Inverted-dropout mask: entries are 0 or `1 / (1 - p)`.
pub fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut impl Rng) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_simple_fn((rows, cols), || if rng.gen::<f64>() < p { 0.0 } else { keep })
}

pub fn log_softmax(row: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    row.mapv(|z| z - lse)
}

/// Mean cross-entropy over `(row, class)` targets and its gradient with
/// respect to every logit (zero rows for unlisted nodes).
pub fn cross_entropy(logits: &Array2<f64>, targets: &[(usize, usize)]) -> Result<(f64, Array2<f64>)> {
    if targets.is_empty() {
        return Err(Error::EmptyInput("no labeled rows for the loss".into()));
    }
    let c = logits.ncols();
    let scale = 1.0 / targets.len() as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(logits.dim());
    for &(i, y) in targets {
        if i >= logits.nrows() || y >= c {
            return Err(Error::Shape(format!("target ({i}, {y}) outside logits {:?}", logits.dim())));
        }
        let ls = log_softmax(logits.row(i));
        loss -= ls[y] * scale;
        let mut g = grad.row_mut(i);
        for k in 0..c {
            g[k] += (ls[k].exp() - f64::from(u8::from(k == y))) * scale;
        }
    }
    Ok((loss, grad))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Worst relative error between `analytic` and central differences of `f`.
///
/// Entries where both magnitudes fall below `floor` count as agreeing up to
/// their absolute difference over `floor`.
pub fn gradient_check(params: &[f64], analytic: &[f64], step: f64, floor: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + step;
        let up = f(&p);
        p[i] = orig - step;
        let down = f(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let denom = analytic[i].abs().max(numeric.abs()).max(floor);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}
