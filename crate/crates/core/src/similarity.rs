//! Class-probability rows and the pairwise similarity `S = P Pᵀ`.
//!
//! Labeled rows are the one-hot of the known class; unlabeled rows are the
//! softmax of the encoder logits. `S[i, j]` is then the probability that
//! graphs `i` and `j` share a class under independent predictions.
//!
//! `S` is left unnormalised here. The sampler owns row normalisation.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;

use crate::alloc::DegreeAllocation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    pub p: Array2<f64>,
    pub labeled_mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub s: Array2<f64>,
    pub diagonal_zeroed: bool,
}

impl SimilarityMatrix {
    #[inline]
    pub fn len(&self) -> usize {
        self.s.nrows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.s.nrows() == 0
    }

    #[inline]
    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.s.row(i)
    }
}

/// Numerically stable softmax of one row.
pub fn softmax(row: ArrayView1<'_, f64>) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = row.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Builds P: one-hot where `labeled_mask` is set, softmax elsewhere.
pub fn build_prob_matrix(logits: &Array2<f64>, labels: &[Option<usize>], labeled_mask: &[bool]) -> Result<ProbMatrix> {
    let (n, c) = logits.dim();
    if labels.len() != n || labeled_mask.len() != n {
        return Err(Error::Shape(format!(
            "logits have {n} rows, labels {}, mask {}",
            labels.len(),
            labeled_mask.len()
        )));
    }
    let mut p = Array2::zeros((n, c));
    for (i, mut row) in p.axis_iter_mut(Axis(0)).enumerate() {
        if labeled_mask[i] {
            let y = labels[i].ok_or_else(|| Error::Shape(format!("labeled row {i} has no label")))?;
            if y >= c {
                return Err(Error::Shape(format!("label {y} outside {c} classes")));
            }
            row[y] = 1.0;
        } else {
            for (dst, v) in row.iter_mut().zip(softmax(logits.row(i))) {
                *dst = v;
            }
        }
    }
    Ok(ProbMatrix {
        p,
        labeled_mask: labeled_mask.to_vec(),
    })
}

/// `S = P Pᵀ`, made exactly symmetric and clipped into `[0, 1]`.
pub fn similarity_matrix(prob: &ProbMatrix, zero_diagonal: bool) -> SimilarityMatrix {
    let p = &prob.p;
    let n = p.nrows();
    // upper triangle by row, in parallel; each entry is one fixed-order dot product
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let pi = p.row(i);
            (i..n).map(|j| pi.dot(&p.row(j)).clamp(0.0, 1.0)).collect()
        })
        .collect();
    let mut s = Array2::zeros((n, n));
    for (i, row) in upper.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            s[[i, i + off]] = v;
            s[[i + off, i]] = v;
        }
    }
    if zero_diagonal {
        s.diag_mut().fill(0.0);
    }
    SimilarityMatrix {
        s,
        diagonal_zeroed: zero_diagonal,
    }
}

/// `Σ_j 1(y_j = y_i) S[i, j] / Σ_k S[i, k]`.
pub fn homophily_prob(sim: &SimilarityMatrix, true_labels: &[usize], i: usize) -> Result<f64> {
    let row = sim.row(i);
    let total: f64 = row.sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateRow { node: i });
    }
    let same: f64 = row
        .iter()
        .zip(true_labels)
        .filter(|(_, &y)| y == true_labels[i])
        .map(|(&s, _)| s)
        .sum();
    Ok((same / total).clamp(0.0, 1.0))
}

pub fn homophily_probs(sim: &SimilarityMatrix, true_labels: &[usize]) -> Result<Vec<f64>> {
    if true_labels.len() != sim.len() {
        return Err(Error::Shape("labels vs similarity size".into()));
    }
    (0..sim.len()).map(|i| homophily_prob(sim, true_labels, i)).collect()
}

/// Expected edge homophily `Σ k_i prob_i / Σ k_i` for an allocation.
pub fn expected_homophily(sim: &SimilarityMatrix, true_labels: &[usize], allocation: &DegreeAllocation) -> Result<f64> {
    if allocation.len() != sim.len() {
        return Err(Error::Shape("allocation vs similarity size".into()));
    }
    if allocation.total == 0 {
        return Err(Error::EmptyEdgeSet);
    }
    let probs = homophily_probs(sim, true_labels)?;
    Ok(allocation.objective(&probs) / allocation.total as f64)
}

/// Row-major text dump, 17 significant digits, space separated.
pub fn format_similarity(sim: &SimilarityMatrix) -> String {
    let mut out = String::new();
    for row in sim.s.rows() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v:.16e}");
        }
        out.push('\n');
    }
    out
}

pub fn write_similarity(sim: &SimilarityMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_similarity(sim)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn prob(rows: Vec<Vec<f64>>) -> ProbMatrix {
        let n = rows.len();
        let c = rows[0].len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        ProbMatrix {
            p: Array2::from_shape_vec((n, c), flat).unwrap(),
            labeled_mask: vec![false; n],
        }
    }

    #[test]
    fn prob_matrix_rows() {
        let logits = array![[5.0, -1.0], [0.0, 0.0], [3f64.ln(), 0.0]];
        let p = build_prob_matrix(&logits, &[Some(1), None, None], &[true, false, false]).unwrap();
        assert_eq!(p.p.row(0).to_vec(), vec![0.0, 1.0]);
        assert_eq!(p.p.row(1).to_vec(), vec![0.5, 0.5]);
        assert!((p.p[[2, 0]] - 0.75).abs() < 1e-15);
        assert!((p.p[[2, 1]] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn softmax_survives_large_logits() {
        let s = softmax(array![1000.0, 1000.0, -1000.0].view());
        assert!((s[0] - 0.5).abs() < 1e-15);
        assert_eq!(s[2], 0.0);
    }

    #[test]
    fn similarity_examples() {
        let s = similarity_matrix(&prob(vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]), true);
        assert_eq!(s.s[[0, 1]], 1.0);
        assert_eq!(s.s[[0, 2]], 0.0);
        assert_eq!(s.s[[0, 0]], 0.0);
        let s = similarity_matrix(&prob(vec![vec![0.75, 0.25], vec![0.5, 0.5]]), false);
        assert_eq!(s.s[[0, 1]], 0.5);
        assert_eq!(s.s[[0, 0]], 0.625);
    }

    #[test]
    fn homophily_prob_examples() {
        let sim = SimilarityMatrix {
            s: array![
                [0.0, 0.5, 0.25, 0.25],
                [0.5, 0.0, 0.1, 0.1],
                [0.25, 0.1, 0.0, 0.3],
                [0.25, 0.1, 0.3, 0.0]
            ],
            diagonal_zeroed: true,
        };
        assert!((homophily_prob(&sim, &[0, 0, 1, 0], 0).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(homophily_prob(&sim, &[0, 0, 0, 0], 2).unwrap(), 1.0);
        let lone = SimilarityMatrix {
            s: array![[0.0, 0.7, 0.0], [0.7, 0.0, 0.0], [0.0, 0.0, 0.0]],
            diagonal_zeroed: true,
        };
        assert_eq!(homophily_prob(&lone, &[0, 1, 1], 0).unwrap(), 0.0);
        assert!(matches!(homophily_prob(&lone, &[0, 1, 1], 2), Err(Error::DegenerateRow { node: 2 })));
    }

    #[test]
    fn expected_homophily_examples() {
        // prob = (1, 0) with k = (3, 1) -> 0.75
        let sim = SimilarityMatrix {
            s: array![[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]],
            diagonal_zeroed: true,
        };
        // node 0 only sees node 1 (same label), node 1 only sees node 2 (other label)
        let alloc = DegreeAllocation::new(vec![3, 1, 0]);
        let e = expected_homophily(&sim, &[0, 0, 1], &alloc).unwrap();
        assert!((e - 0.75).abs() < 1e-15);
    }

    #[test]
    fn dump_format() {
        let sim = SimilarityMatrix {
            s: array![[0.0, 0.5], [0.5, 0.0]],
            diagonal_zeroed: true,
        };
        assert_eq!(
            format_similarity(&sim),
            "0.0000000000000000e0 5.0000000000000000e-1\n5.0000000000000000e-1 0.0000000000000000e0\n"
        );
    }

    fn prob_rows(n: usize, c: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, c), n).prop_map(|rows| {
            rows.into_iter()
                .map(|r| {
                    let s: f64 = r.iter().sum();
                    r.into_iter().map(|v| v / s).collect()
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn similarity_symmetric_bounded(rows in prob_rows(7, 3)) {
            let s = similarity_matrix(&prob(rows), false);
            for i in 0..7 {
                for j in 0..7 {
                    prop_assert_eq!(s.s[[i, j]], s.s[[j, i]]);
                    prop_assert!((0.0..=1.0).contains(&s.s[[i, j]]));
                }
            }
        }

        // xᵀ S x = |Pᵀ x|² ≥ 0 for any x
        #[test]
        fn similarity_psd(rows in prob_rows(6, 3), x in proptest::collection::vec(-1.0f64..1.0, 6)) {
            let s = similarity_matrix(&prob(rows), false);
            let x = ndarray::Array1::from(x);
            prop_assert!(x.dot(&s.s.dot(&x)) >= -1e-9);
        }

        #[test]
        fn homophily_prob_in_unit_interval(rows in prob_rows(8, 2), labels in proptest::collection::vec(0usize..2, 8)) {
            let s = similarity_matrix(&prob(rows), true);
            for p in homophily_probs(&s, &labels).unwrap() {
                prop_assert!((0.0..=1.0).contains(&p));
            }
        }

        #[test]
        fn uniform_prob_gives_constant_expectation(k in proptest::collection::vec(1u32..9, 4)) {
            // every off-diagonal entry equal, labels 0,0,1,1 -> prob_i = 1/3 for all i
            let mut s = Array2::from_elem((4, 4), 0.4);
            s.diag_mut().fill(0.0);
            let sim = SimilarityMatrix { s, diagonal_zeroed: true };
            let e = expected_homophily(&sim, &[0, 0, 1, 1], &DegreeAllocation::new(k)).unwrap();
            prop_assert!((e - 1.0 / 3.0).abs() < 1e-12);
        }
    }
}
