//! GoG node degree pre-allocation.
//!
//! Every node starts at `k_min`; the remaining `round(N * d_bar) - N * k_min`
//! degrees are handed out in three stages:
//!
//! 1. labeled vs unlabeled, so that per-node extras differ by `rho1`;
//! 2. within the labeled set, majority vs minority classes at `rho2`;
//! 3. within the unlabeled set, proportional to how many training graphs
//!    fall inside each node's size window `[s_i - r, s_i + r]`.
//!
//! Reals become integers through largest-remainder apportionment with ties
//! to the lower index. Degrees above `k_max` are clamped and the excess goes
//! to the unclamped node holding the largest real-valued share, repeatedly,
//! until nothing is left.
//!
//! The module also carries the exhaustive and greedy solvers for the
//! degree-ordering optimum, used to check the greedy rule on small inputs.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{GraphDataset, SplitSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Rule2Mode {
    /// `Δ_major / Δ_minor = ρ2` on group totals.
    #[default]
    GroupTotal,
    /// `(Δ_major / N_major) / (Δ_minor / N_minor) = ρ2`.
    PerCapita,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocConfig {
    pub d_bar: f64,
    pub k_min: u32,
    pub k_max: u32,
    pub rho1: f64,
    pub rho2: f64,
    pub window_r: u32,
    pub rule2_mode: Rule2Mode,
}

impl Default for AllocConfig {
    fn default() -> Self {
        Self {
            d_bar: 5.0,
            k_min: 3,
            k_max: 100,
            rho1: 5.0,
            rho2: 3.0,
            window_r: 20,
            rule2_mode: Rule2Mode::GroupTotal,
        }
    }
}

impl AllocConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.d_bar.is_finite() {
            return Err(Error::Config("alloc.d_bar must be finite".into()));
        }
        if self.k_min > self.k_max {
            return Err(Error::Config(format!(
                "alloc.k_min ({}) exceeds alloc.k_max ({})",
                self.k_min, self.k_max
            )));
        }
        if self.d_bar < f64::from(self.k_min) || self.d_bar > f64::from(self.k_max) {
            return Err(Error::Config(format!(
                "alloc.d_bar ({}) outside [k_min, k_max] = [{}, {}]",
                self.d_bar, self.k_min, self.k_max
            )));
        }
        for (name, v) in [("alloc.rho1", self.rho1), ("alloc.rho2", self.rho2)] {
            if !(v >= 1.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be >= 1, got {v}")));
            }
        }
        Ok(())
    }

    /// `round(n * d_bar)`, the exact degree budget.
    pub fn total_degree(&self, n: usize) -> u64 {
        (n as f64 * self.d_bar).round() as u64
    }

    fn check_budget(&self, n: usize) -> Result<u64> {
        let total = self.total_degree(n);
        let lo = n as u64 * u64::from(self.k_min);
        let hi = n as u64 * u64::from(self.k_max);
        if total < lo || total > hi {
            return Err(Error::InfeasibleAllocation(format!(
                "round(N*d_bar) = {total} outside [N*k_min, N*k_max] = [{lo}, {hi}]"
            )));
        }
        Ok(total)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreeAllocation {
    pub k: Vec<u32>,
    pub total: u64,
}

impl DegreeAllocation {
    pub fn new(k: Vec<u32>) -> Self {
        let total = k.iter().map(|&x| u64::from(x)).sum();
        Self { k, total }
    }

    pub fn len(&self) -> usize {
        self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }

    /// Checks both bounds and the exact budget under `config`.
    pub fn validate(&self, config: &AllocConfig) -> Result<()> {
        if let Some((i, &k)) = self
            .k
            .iter()
            .enumerate()
            .find(|(_, &k)| k < config.k_min || k > config.k_max)
        {
            return Err(Error::InfeasibleAllocation(format!(
                "node {i} has degree {k} outside [{}, {}]",
                config.k_min, config.k_max
            )));
        }
        let want = config.total_degree(self.k.len());
        if self.total != want {
            return Err(Error::InfeasibleAllocation(format!(
                "degrees sum to {} but the budget is {want}",
                self.total
            )));
        }
        Ok(())
    }

    /// `Σ k_i · prob_i`.
    pub fn objective(&self, prob: &[f64]) -> f64 {
        self.k.iter().zip(prob).map(|(&k, &p)| f64::from(k) * p).sum()
    }
}

/// Splits `total` units across `weights` by the largest-remainder method.
/// All-zero (or empty-sum) weights are treated as uniform.
pub fn largest_remainder(total: u64, weights: &[f64]) -> Vec<u64> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    let sum: f64 = weights.iter().sum();
    let uniform;
    let (w, sum) = if sum > 0.0 && sum.is_finite() {
        (weights, sum)
    } else {
        uniform = vec![1.0; n];
        (&uniform[..], n as f64)
    };
    let shares: Vec<f64> = w.iter().map(|&x| total as f64 * x / sum).collect();
    let mut out: Vec<u64> = shares.iter().map(|s| s.floor().max(0.0) as u64).collect();
    let frac: Vec<f64> = shares.iter().zip(&out).map(|(s, &f)| s - f as f64).collect();

    let mut assigned: u64 = out.iter().sum();
    // rounding noise in the shares can overshoot; take back from the smallest remainders
    if assigned > total {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| frac[a].total_cmp(&frac[b]).then(b.cmp(&a)));
        for &i in order.iter().cycle() {
            if assigned == total {
                break;
            }
            if out[i] > 0 {
                out[i] -= 1;
                assigned -= 1;
            }
        }
        return out;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| frac[b].total_cmp(&frac[a]).then(a.cmp(&b)));
    let mut left = total - assigned;
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

/// Rule 1: `(Δ_L / N_L) / (Δ_U / N_U) = ρ1`.
pub fn rule1_split(delta: u64, n_labeled: usize, n_unlabeled: usize, rho1: f64) -> (u64, u64) {
    match (n_labeled, n_unlabeled) {
        (0, 0) => (0, 0),
        (0, _) => (0, delta),
        (_, 0) => (delta, 0),
        _ => {
            let parts = largest_remainder(delta, &[rho1 * n_labeled as f64, n_unlabeled as f64]);
            (parts[0], parts[1])
        }
    }
}

/// Outcome of Rule 2 on the labeled subset.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule2Split {
    /// Classes counted as majority (count strictly above the median).
    pub majority: Vec<bool>,
    pub major_total: u64,
    pub minor_total: u64,
    /// Per-class totals when each group total is spread evenly over the
    /// group's nodes, taken in class order.
    pub per_class: Vec<u64>,
    major_weight: f64,
    minor_weight: f64,
}

fn median(sorted: &[usize]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    }
}

fn spread_evenly(total: u64, n: usize) -> impl Fn(usize) -> u64 {
    let (base, rem) = if n == 0 {
        (0, 0)
    } else {
        (total / n as u64, total % n as u64)
    };
    move |pos| base + u64::from((pos as u64) < rem)
}

/// Rule 2: splits `delta_l` between majority and minority classes.
///
/// Classes without labeled nodes take no part. If every participating class
/// lands in one group (e.g. a tie), that group receives everything, which
/// is the same as `ρ2 = 1` with equal per-node shares.
pub fn rule2_split(delta_l: u64, class_counts: &[usize], rho2: f64, mode: Rule2Mode) -> Rule2Split {
    let mut present: Vec<usize> = class_counts.iter().copied().filter(|&c| c > 0).collect();
    present.sort_unstable();
    let med = if present.is_empty() { 0.0 } else { median(&present) };
    let majority: Vec<bool> = class_counts.iter().map(|&c| c > 0 && c as f64 > med).collect();
    let n_major: usize = class_counts.iter().zip(&majority).filter(|(_, &m)| m).map(|(&c, _)| c).sum();
    let n_minor: usize = class_counts.iter().zip(&majority).filter(|(_, &m)| !m).map(|(&c, _)| c).sum();

    let (major_weight, minor_weight) = match (n_major, n_minor) {
        (0, _) => (0.0, 1.0),
        (_, 0) => (1.0, 0.0),
        _ => match mode {
            Rule2Mode::GroupTotal => (rho2, 1.0),
            Rule2Mode::PerCapita => (rho2 * n_major as f64, n_minor as f64),
        },
    };
    let parts = largest_remainder(delta_l, &[major_weight, minor_weight]);
    let (major_total, minor_total) = (parts[0], parts[1]);

    let major_of = spread_evenly(major_total, n_major);
    let minor_of = spread_evenly(minor_total, n_minor);
    let (mut pos_major, mut pos_minor) = (0, 0);
    let per_class = class_counts
        .iter()
        .zip(&majority)
        .map(|(&c, &is_major)| {
            (0..c)
                .map(|_| {
                    if is_major {
                        pos_major += 1;
                        major_of(pos_major - 1)
                    } else {
                        pos_minor += 1;
                        minor_of(pos_minor - 1)
                    }
                })
                .sum()
        })
        .collect();

    Rule2Split {
        majority,
        major_total,
        minor_total,
        per_class,
        major_weight,
        minor_weight,
    }
}

/// Rule 3 weights: number of training sizes inside `[s_i - r, s_i + r]`.
/// Falls back to all-ones if every window is empty.
pub fn rule3_weights(unlabeled_sizes: &[usize], train_sizes: &[usize], r: u32) -> Vec<f64> {
    let mut sorted = train_sizes.to_vec();
    sorted.sort_unstable();
    let r = r as usize;
    let w: Vec<f64> = unlabeled_sizes
        .iter()
        .map(|&s| {
            let lo = sorted.partition_point(|&t| t < s.saturating_sub(r));
            let hi = sorted.partition_point(|&t| t <= s + r);
            (hi - lo) as f64
        })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        vec![1.0; w.len()]
    } else {
        w
    }
}

/// Runs Rules 1–3 for the split's labeled/unlabeled partition.
pub fn allocate_degrees(split: &SplitSpec, dataset: &GraphDataset, config: &AllocConfig) -> Result<DegreeAllocation> {
    split.validate(dataset)?;
    let train: Vec<(usize, usize)> = split
        .train_idx
        .iter()
        .map(|&i| (i, dataset.graphs[i].label.expect("validated split")))
        .collect();
    allocate_from_parts(&dataset.sizes(), &train, dataset.num_classes, config)
}

/// Allocation over `sizes.len()` GoG nodes; `train` lists `(node, class)`
/// for labeled nodes, everything else is unlabeled.
pub fn allocate_from_parts(
    sizes: &[usize],
    train: &[(usize, usize)],
    num_classes: usize,
    config: &AllocConfig,
) -> Result<DegreeAllocation> {
    config.validate()?;
    let n = sizes.len();
    if n < 2 {
        return Err(Error::InfeasibleAllocation(format!("need at least 2 nodes, got {n}")));
    }
    let total = config.check_budget(n)?;
    let delta = total - n as u64 * u64::from(config.k_min);

    let mut label_of = vec![None; n];
    for &(i, y) in train {
        if i >= n || y >= num_classes {
            return Err(Error::Shape(format!("labeled node ({i}, class {y}) out of range")));
        }
        label_of[i] = Some(y);
    }
    let labeled: Vec<usize> = (0..n).filter(|&i| label_of[i].is_some()).collect();
    let unlabeled: Vec<usize> = (0..n).filter(|&i| label_of[i].is_none()).collect();

    let (delta_l, delta_u) = rule1_split(delta, labeled.len(), unlabeled.len(), config.rho1);

    let mut extra = vec![0u64; n];
    let mut share = vec![0.0f64; n];

    // Rule 2
    let mut counts = vec![0usize; num_classes];
    for &i in &labeled {
        counts[label_of[i].unwrap()] += 1;
    }
    let r2 = rule2_split(delta_l, &counts, config.rho2, config.rule2_mode);
    let weight_sum = r2.major_weight + r2.minor_weight;
    for (is_major, group_total, weight) in [
        (true, r2.major_total, r2.major_weight),
        (false, r2.minor_total, r2.minor_weight),
    ] {
        let nodes: Vec<usize> = labeled
            .iter()
            .copied()
            .filter(|&i| r2.majority[label_of[i].unwrap()] == is_major)
            .collect();
        if nodes.is_empty() {
            continue;
        }
        let of = spread_evenly(group_total, nodes.len());
        let real = delta_l as f64 * weight / weight_sum / nodes.len() as f64;
        for (pos, &i) in nodes.iter().enumerate() {
            extra[i] = of(pos);
            share[i] = real;
        }
    }

    // Rule 3
    if !unlabeled.is_empty() {
        let train_sizes: Vec<usize> = labeled.iter().map(|&i| sizes[i]).collect();
        let u_sizes: Vec<usize> = unlabeled.iter().map(|&i| sizes[i]).collect();
        let w = rule3_weights(&u_sizes, &train_sizes, config.window_r);
        let wsum: f64 = w.iter().sum();
        let parts = largest_remainder(delta_u, &w);
        for ((&i, &p), &wi) in unlabeled.iter().zip(&parts).zip(&w) {
            extra[i] = p;
            share[i] = delta_u as f64 * wi / wsum;
        }
    }

    let k_max = u64::from(config.k_max);
    let mut k: Vec<u64> = extra.iter().map(|&e| u64::from(config.k_min) + e).collect();
    let mut excess = 0u64;
    for ki in &mut k {
        if *ki > k_max {
            excess += *ki - k_max;
            *ki = k_max;
        }
    }
    while excess > 0 {
        // budget <= N * k_max guarantees an open slot exists
        let target = (0..n)
            .filter(|&i| k[i] < k_max)
            .fold(None::<usize>, |best, i| match best {
                Some(b) if share[b] >= share[i] => Some(b),
                _ => Some(i),
            })
            .expect("budget within N * k_max");
        let give = excess.min(k_max - k[target]);
        k[target] += give;
        excess -= give;
    }

    let alloc = DegreeAllocation::new(k.into_iter().map(|x| x as u32).collect());
    debug_assert_eq!(alloc.total, total);
    Ok(alloc)
}

/// Orders nodes by `prob` descending (stable), fills each to `k_max` in
/// turn on top of a `k_min` floor.
pub fn greedy_allocation(prob: &[f64], config: &AllocConfig) -> Result<DegreeAllocation> {
    let n = prob.len();
    let total = config.check_budget(n)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| prob[b].total_cmp(&prob[a]));
    let mut k = vec![config.k_min; n];
    let mut left = total - n as u64 * u64::from(config.k_min);
    let room = u64::from(config.k_max - config.k_min);
    for i in order {
        let add = left.min(room);
        k[i] += add as u32;
        left -= add;
    }
    Ok(DegreeAllocation::new(k))
}

/// Exhaustive maximiser of `Σ k_i prob_i` under the degree constraints.
pub fn brute_force_allocation(prob: &[f64], config: &AllocConfig) -> Result<(DegreeAllocation, f64)> {
    let n = prob.len();
    if n > MAX_ORACLE_NODES {
        return Err(Error::Config(format!(
            "exhaustive allocation limited to {MAX_ORACLE_NODES} nodes, got {n}"
        )));
    }
    let total = config.check_budget(n)?;
    let (lo, hi) = (u64::from(config.k_min), u64::from(config.k_max));
    let mut best: Option<(Vec<u32>, f64)> = None;
    let mut cur = vec![0u32; n];
    for_each_feasible(&mut cur, 0, total, lo, hi, &mut |k| {
        let obj: f64 = k.iter().zip(prob).map(|(&x, &p)| f64::from(x) * p).sum();
        if best.as_ref().is_none_or(|(_, b)| obj > *b) {
            best = Some((k.to_vec(), obj));
        }
    });
    let (k, obj) = best.ok_or_else(|| Error::InfeasibleAllocation("no feasible vector".into()))?;
    Ok((DegreeAllocation::new(k), obj))
}

pub const MAX_ORACLE_NODES: usize = 12;

/// Calls `f` on every integer vector with entries in `[lo, hi]` summing to
/// `left` (over positions `idx..`).
pub fn for_each_feasible(cur: &mut [u32], idx: usize, left: u64, lo: u64, hi: u64, f: &mut impl FnMut(&[u32])) {
    let n = cur.len();
    if idx == n {
        if left == 0 {
            f(cur);
        }
        return;
    }
    let rest = (n - idx - 1) as u64;
    let from = lo.max(left.saturating_sub(rest * hi));
    let to = hi.min(left.saturating_sub(rest * lo));
    if left < rest * lo + from {
        return;
    }
    for v in from..=to {
        cur[idx] = v as u32;
        for_each_feasible(cur, idx + 1, left - v, lo, hi, f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleAllocation {
    pub optimal: DegreeAllocation,
    pub optimal_objective: f64,
    pub greedy: DegreeAllocation,
    pub greedy_objective: f64,
}

pub fn oracle_optimal_allocation(prob: &[f64], config: &AllocConfig) -> Result<OracleAllocation> {
    if prob.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Config("prob entries must lie in [0, 1]".into()));
    }
    let (optimal, optimal_objective) = brute_force_allocation(prob, config)?;
    let greedy = greedy_allocation(prob, config)?;
    let greedy_objective = greedy.objective(prob);
    Ok(OracleAllocation {
        optimal,
        optimal_objective,
        greedy,
        greedy_objective,
    })
}

/// Two-column `node k` listing with a `total` trailer.
pub fn format_allocation(alloc: &DegreeAllocation) -> String {
    let mut s = String::new();
    for (i, k) in alloc.k.iter().enumerate() {
        let _ = writeln!(s, "{i} {k}");
    }
    let _ = writeln!(s, "total {}", alloc.total);
    s
}
