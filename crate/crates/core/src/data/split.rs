//! Train/val/test splits with a controlled class-imbalance ratio, and the
//! three-line split file format.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{size_imbalance_ratio_of, GraphDataset};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub rho_class: Option<f64>,
    pub rho_size: Option<f64>,
    pub seed: u64,
}

impl SplitSpec {
    /// Checks disjointness, bounds, and that every train graph is labeled.
    pub fn validate(&self, dataset: &GraphDataset) -> Result<()> {
        let n = dataset.len();
        let mut seen = vec![false; n];
        for &i in self.train_idx.iter().chain(&self.val_idx).chain(&self.test_idx) {
            if i >= n {
                return Err(Error::Shape(format!("split index {i} outside {n} graphs")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Shape(format!("split index {i} appears twice")));
            }
        }
        if let Some(&i) = self.train_idx.iter().find(|&&i| dataset.graphs[i].label.is_none()) {
            return Err(Error::Shape(format!("train graph {i} is unlabeled")));
        }
        Ok(())
    }

    pub fn labeled_mask(&self, n: usize) -> Vec<bool> {
        let mut mask = vec![false; n];
        for &i in &self.train_idx {
            mask[i] = true;
        }
        mask
    }

    /// Labels of the train graphs only; every other entry is `None`.
    pub fn train_label_view(&self, dataset: &GraphDataset) -> Vec<Option<usize>> {
        let mut view = vec![None; dataset.len()];
        for &i in &self.train_idx {
            view[i] = dataset.graphs[i].label;
        }
        view
    }
}

fn check_fraction(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) || !v.is_finite() {
        return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
    }
    Ok(())
}

/// Draws a binary train set whose majority:minority count ratio is
/// `rho_class`, with `round(train_fraction * N)` graphs in total. The rest
/// are shuffled into validation (`round(val_fraction * N)`) and test.
pub fn make_class_imbalanced_split(
    dataset: &GraphDataset,
    rho_class: f64,
    train_fraction: f64,
    val_fraction: f64,
    seed: u64,
) -> Result<SplitSpec> {
    if dataset.num_classes != 2 {
        return Err(Error::Config(format!(
            "class-imbalanced splits need a binary dataset, found {} classes",
            dataset.num_classes
        )));
    }
    if !(rho_class >= 1.0) || !rho_class.is_finite() {
        return Err(Error::Config(format!("rho_class must be >= 1, got {rho_class}")));
    }
    check_fraction("train_fraction", train_fraction)?;
    check_fraction("val_fraction", val_fraction)?;
    if train_fraction + val_fraction > 1.0 {
        return Err(Error::Config("train_fraction + val_fraction exceeds 1".into()));
    }

    let n = dataset.len();
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, g) in dataset.graphs.iter().enumerate() {
        if let Some(y) = g.label {
            by_class[y].push(i);
        }
    }
    let (major, minor) = if by_class[1].len() > by_class[0].len() { (1, 0) } else { (0, 1) };
    let avail_major = by_class[major].len();
    let avail_minor = by_class[minor].len();

    let total = (train_fraction * n as f64).round() as usize;
    let n_minor = ((total as f64 / (1.0 + rho_class)).round() as usize).max(1);
    let n_major = total.saturating_sub(n_minor);

    if total < 2 || n_major > avail_major || n_minor > avail_minor || n_major == 0 {
        let best_major = avail_major.min(total.saturating_sub(1));
        let best_minor = total.saturating_sub(best_major);
        let max_achievable = if best_minor == 0 || best_minor > avail_minor || best_major == 0 {
            0.0
        } else {
            best_major as f64 / best_minor as f64
        };
        return Err(Error::InfeasibleSplit {
            requested: rho_class,
            max_achievable,
        });
    }

    let mut train = Vec::with_capacity(total);
    for (class, take) in [(major, n_major), (minor, n_minor)] {
        let mut pool = by_class[class].clone();
        pool.shuffle(&mut stream_rng(seed, &[0x5911, class as u64]));
        train.extend_from_slice(&pool[..take]);
    }
    train.sort_unstable();

    let mut in_train = vec![false; n];
    for &i in &train {
        in_train[i] = true;
    }
    let mut rest: Vec<usize> = (0..n).filter(|&i| !in_train[i]).collect();
    rest.shuffle(&mut stream_rng(seed, &[0x5911, 2]));
    let n_val = ((val_fraction * n as f64).round() as usize).min(rest.len());
    let mut val = rest[..n_val].to_vec();
    let mut test = rest[n_val..].to_vec();
    val.sort_unstable();
    test.sort_unstable();

    Ok(SplitSpec {
        train_idx: train,
        val_idx: val,
        test_idx: test,
        rho_class: Some(rho_class),
        rho_size: size_imbalance_ratio_of(&dataset.sizes()).ok(),
        seed,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x}"))
}

fn join(idx: &[usize]) -> String {
    let mut s = String::new();
    for (k, i) in idx.iter().enumerate() {
        if k > 0 {
            s.push(',');
        }
        let _ = write!(s, "{i}");
    }
    s
}

/// Renders a split as a header comment plus train/val/test lines.
pub fn format_split(split: &SplitSpec) -> String {
    format!(
        "# rho_class={} rho_size={} seed={}\n{}\n{}\n{}\n",
        fmt_opt(split.rho_class),
        fmt_opt(split.rho_size),
        split.seed,
        join(&split.train_idx),
        join(&split.val_idx),
        join(&split.test_idx)
    )
}

pub fn write_split(split: &SplitSpec, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_split(split)).map_err(|e| Error::io(path, e))
}

pub fn parse_split(text: &str, file: &str) -> Result<SplitSpec> {
    let perr = |line: usize, message: String| Error::Parse {
        file: file.to_string(),
        line,
        message,
    };
    let lines: Vec<&str> = text.lines().map(str::trim_end).collect();
    let header = lines
        .first()
        .and_then(|l| l.strip_prefix('#'))
        .ok_or_else(|| perr(1, "missing '#' header".into()))?;
    let mut rho_class = None;
    let mut rho_size = None;
    let mut seed = None;
    for field in header.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| perr(1, format!("malformed header field '{field}'")))?;
        let real = |v: &str| -> Result<Option<f64>> {
            if v == "-" {
                Ok(None)
            } else {
                v.parse().map(Some).map_err(|_| perr(1, format!("bad number '{v}'")))
            }
        };
        match key {
            "rho_class" => rho_class = real(value)?,
            "rho_size" => rho_size = real(value)?,
            "seed" => seed = Some(value.parse().map_err(|_| perr(1, format!("bad seed '{value}'")))?),
            _ => return Err(perr(1, format!("unknown header key '{key}'"))),
        }
    }
    let list = |k: usize| -> Result<Vec<usize>> {
        let line = lines.get(k).copied().unwrap_or("");
        if line.trim().is_empty() {
            return Ok(Vec::new());
        }
        line.split(',')
            .map(|t| t.trim().parse().map_err(|_| perr(k + 1, format!("bad index '{t}'"))))
            .collect()
    };
    if lines.len() < 2 {
        return Err(perr(2, "missing train line".into()));
    }
    Ok(SplitSpec {
        train_idx: list(1)?,
        val_idx: list(2)?,
        test_idx: list(3)?,
        rho_class,
        rho_size,
        seed: seed.ok_or_else(|| perr(1, "header lacks seed".into()))?,
    })
}

pub fn read_split(path: impl AsRef<Path>) -> Result<SplitSpec> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_split(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{compute_class_imbalance_ratio, InputGraph};

    fn binary(a: usize, b: usize) -> GraphDataset {
        let graphs = (0..a + b)
            .map(|i| InputGraph::new(i, 3, [(0, 1), (1, 2)], Some(usize::from(i >= a))).unwrap())
            .collect();
        GraphDataset::new(graphs, 2).unwrap()
    }

    #[test]
    fn ratio_nine_forces_counts() {
        let ds = binary(100, 100);
        let s = make_class_imbalanced_split(&ds, 9.0, 0.5, 0.25, 3).unwrap();
        s.validate(&ds).unwrap();
        let mut counts = ds.class_counts(&s.train_idx);
        counts.sort_unstable();
        assert_eq!(counts, vec![10, 90]);
        assert_eq!(s.val_idx.len(), 50);
        assert_eq!(s.test_idx.len(), 50);
        assert_eq!(compute_class_imbalance_ratio(&ds, &s.train_idx).unwrap(), 9.0);
    }

    #[test]
    fn ratio_one_is_balanced() {
        let ds = binary(60, 80);
        let s = make_class_imbalanced_split(&ds, 1.0, 0.5, 0.2, 9).unwrap();
        assert_eq!(ds.class_counts(&s.train_idx), vec![35, 35]);
    }

    #[test]
    fn deterministic_under_seed() {
        let ds = binary(50, 70);
        let a = make_class_imbalanced_split(&ds, 3.0, 0.4, 0.3, 77).unwrap();
        let b = make_class_imbalanced_split(&ds, 3.0, 0.4, 0.3, 77).unwrap();
        assert_eq!(a, b);
        let c = make_class_imbalanced_split(&ds, 3.0, 0.4, 0.3, 78).unwrap();
        assert_ne!(a.train_idx, c.train_idx);
    }

    #[test]
    fn infeasible_reports_max_ratio() {
        let ds = binary(50, 50);
        // 80 train graphs with ratio 9 would need 72 majority graphs
        match make_class_imbalanced_split(&ds, 9.0, 0.8, 0.1, 1).unwrap_err() {
            Error::InfeasibleSplit { max_achievable, .. } => {
                assert!((max_achievable - 50.0 / 30.0).abs() < 1e-12)
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn split_file_round_trip() {
        let ds = binary(30, 30);
        let s = make_class_imbalanced_split(&ds, 2.0, 0.5, 0.2, 5).unwrap();
        let text = format_split(&s);
        assert!(text.starts_with("# rho_class=2 "));
        assert_eq!(parse_split(&text, "mem").unwrap(), s);
    }

    #[test]
    fn split_file_with_empty_val() {
        let text = "# rho_class=- rho_size=- seed=4\n0,1\n\n2\n";
        let s = parse_split(text, "mem").unwrap();
        assert_eq!(s.train_idx, vec![0, 1]);
        assert!(s.val_idx.is_empty());
        assert_eq!(s.test_idx, vec![2]);
        assert_eq!(s.rho_class, None);
    }
}
