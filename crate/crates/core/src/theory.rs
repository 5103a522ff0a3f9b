//! Executable checks of the allocation optimum, sampler unbiasedness,
//! variance decay in the number of sampled GoGs, and the monotone
//! homophily-probability argument behind the allocation rules.
//!
//! Every check is deterministic in its seed and returns a serialisable
//! report; failures are counted, not raised.

use std::fmt;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alloc::{brute_force_allocation, greedy_allocation, AllocConfig, DegreeAllocation, Rule2Mode};
use crate::downstream::{downstream_loss_and_grad, normalize_gog, normalize_weighted, GoGClassifier, GoGClassifierConfig};
use crate::error::{Error, Result};
use crate::nn::{LrSchedule, Optimizer, OptimizerConfig, OptimizerKind};
use crate::rng::{derive_seed, stream_rng};
use crate::sampler::{empirical_inclusion_matrix, inclusion_probability, sample_gog, stream_id, SamplerConfig, SamplerMode};
use crate::similarity::{build_prob_matrix, homophily_prob, similarity_matrix, ProbMatrix, SimilarityMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Inconclusive => "INCONCLUSIVE",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    /// Trials actually evaluated.
    pub trials: usize,
    /// Draws rejected by a precondition filter.
    pub skipped: usize,
    pub failures: usize,
    /// Largest discrepancy seen, in the check's own unit.
    pub worst: f64,
    pub detail: String,
}

impl CheckReport {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            trials: 0,
            skipped: 0,
            failures: 0,
            worst: 0.0,
            detail: String::new(),
        }
    }

    fn fail(&mut self, detail: String) {
        if self.failures == 0 {
            self.detail = detail;
        }
        self.failures += 1;
    }

    pub fn verdict(&self) -> Verdict {
        match (self.trials, self.failures) {
            (0, _) => Verdict::Inconclusive,
            (_, 0) => Verdict::Pass,
            _ => Verdict::Fail,
        }
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} (trials {}, failures {}, skipped {}, worst {:.3e})",
            self.name,
            self.verdict(),
            self.trials,
            self.failures,
            self.skipped,
            self.worst
        )?;
        if !self.detail.is_empty() {
            write!(f, " first failure: {}", self.detail)?;
        }
        Ok(())
    }
}

pub const LEMMA1_MAX_NODES: usize = 8;

/// Random feasible allocation problem with `n` nodes: bounds, then a
/// budget drawn uniformly from the feasible totals.
fn random_problem(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, AllocConfig) {
    let coarse = rng.gen_bool(0.5);
    let prob: Vec<f64> = (0..n)
        .map(|_| {
            let p: f64 = rng.gen();
            // coarse values force ties
            if coarse {
                (p * 4.0).round() / 4.0
            } else {
                p
            }
        })
        .collect();
    let k_min = rng.gen_range(0..=3u32);
    let k_max = k_min + rng.gen_range(0..=4u32);
    let total = rng.gen_range(n as u64 * u64::from(k_min)..=n as u64 * u64::from(k_max));
    let config = AllocConfig {
        d_bar: total as f64 / n as f64,
        k_min,
        k_max,
        rho1: 1.0,
        rho2: 1.0,
        window_r: 0,
        rule2_mode: Rule2Mode::GroupTotal,
    };
    (prob, config)
}

/// Random vector in `[k_min, k_max]^n` with the budget's sum.
fn random_feasible(rng: &mut ChaCha8Rng, n: usize, config: &AllocConfig) -> Vec<u32> {
    let mut k = vec![config.k_min; n];
    let mut left = config.total_degree(n) - n as u64 * u64::from(config.k_min);
    while left > 0 {
        let i = rng.gen_range(0..n);
        if k[i] < config.k_max {
            k[i] += 1;
            left -= 1;
        }
    }
    k
}

/// Greedy allocation against the exhaustive optimum on random instances of
/// up to `n_max` nodes, plus the pairwise exchange property: moving degree
/// towards the node with higher `prob` never lowers `Σ k_i prob_i`.
pub fn check_lemma1(num_trials: usize, n_max: usize, seed: u64) -> Result<CheckReport> {
    if n_max == 0 || n_max > LEMMA1_MAX_NODES {
        return Err(Error::Config(format!("n_max must lie in [1, {LEMMA1_MAX_NODES}], got {n_max}")));
    }
    let mut report = CheckReport::new("lemma1-greedy-optimal");
    for trial in 0..num_trials {
        let mut rng = stream_rng(seed, &[0x11, trial as u64]);
        let n = rng.gen_range(1..=n_max);
        let (prob, config) = random_problem(&mut rng, n);
        let greedy = greedy_allocation(&prob, &config)?;
        let (_, best) = brute_force_allocation(&prob, &config)?;
        let gap = best - greedy.objective(&prob);
        report.trials += 1;
        report.worst = report.worst.max(gap.abs());
        if gap.abs() > 1e-9 * best.abs().max(1.0) {
            report.fail(format!("trial {trial}: greedy {} vs optimum {best}", greedy.objective(&prob)));
            continue;
        }
        let mut k = random_feasible(&mut rng, n, &config);
        for i in 0..n {
            for j in 0..n {
                if prob[i] > prob[j] && k[i] < k[j] {
                    let before = DegreeAllocation::new(k.clone()).objective(&prob);
                    k.swap(i, j);
                    let after = DegreeAllocation::new(k.clone()).objective(&prob);
                    if after < before - 1e-12 {
                        report.fail(format!("trial {trial}: swapping {i},{j} lowered {before} to {after}"));
                    }
                }
            }
        }
    }
    Ok(report)
}

/// Per-entry comparison of the with-replacement empirical edge counts
/// against `k_i S[i,j] / Σ_m S[i,m]`. The tolerance is `z_max` binomial
/// standard errors `sqrt(k_i q (1 - q) / trials)`; entries with zero
/// standard error must match exactly. `worst` is the largest z-score.
pub fn check_inclusion(
    sim: &SimilarityMatrix,
    allocation: &DegreeAllocation,
    num_trials: usize,
    z_max: f64,
    seed: u64,
) -> Result<CheckReport> {
    let config = SamplerConfig {
        mode: SamplerMode::WithReplacement,
        seed,
        samples_per_epoch: 1,
    };
    let expected = inclusion_probability(sim, allocation)?;
    let empirical = empirical_inclusion_matrix(sim, allocation, &config, num_trials)?;
    let mut report = CheckReport::new("theorem1-inclusion");
    for ((i, j), &p) in expected.indexed_iter() {
        report.trials += 1;
        let k = f64::from(allocation.k[i]);
        let q = if k > 0.0 { p / k } else { 0.0 };
        let se = (k * q * (1.0 - q) / num_trials as f64).sqrt();
        let diff = (empirical[[i, j]] - p).abs();
        let z = if se > 0.0 {
            diff / se
        } else if diff <= 1e-12 {
            0.0
        } else {
            f64::INFINITY
        };
        report.worst = report.worst.max(z);
        if z > z_max {
            report.fail(format!("entry ({i},{j}): empirical {} vs {p}, z = {z:.2}", empirical[[i, j]]));
        }
    }
    Ok(report)
}

/// Random 3-class similarity over `n` nodes: about a third of the rows
/// one-hot, the rest softmax of Gaussian logits.
pub fn random_similarity(n: usize, rng: &mut ChaCha8Rng) -> Result<SimilarityMatrix> {
    let normal = Normal::new(0.0, 2.0).expect("finite sd");
    let logits = Array2::from_shape_fn((n, 3), |_| normal.sample(rng));
    let mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
    let labels: Vec<Option<usize>> = (0..n).map(|_| Some(rng.gen_range(0..3))).collect();
    Ok(similarity_matrix(&build_prob_matrix(&logits, &labels, &mask)?, true))
}

/// Inclusion check on a random `matrix_size`-node similarity with degrees
/// drawn from `1..=5`, at four standard errors.
pub fn check_theorem1_unbiasedness(num_trials: usize, matrix_size: usize, seed: u64) -> Result<CheckReport> {
    if matrix_size < 2 {
        return Err(Error::Config("matrix_size must be >= 2".into()));
    }
    let mut rng = stream_rng(seed, &[0x71]);
    let sim = random_similarity(matrix_size, &mut rng)?;
    let allocation = DegreeAllocation::new((0..matrix_size).map(|_| rng.gen_range(1..=5)).collect());
    check_inclusion(&sim, &allocation, num_trials, 4.0, derive_seed(seed, &[0x72]))
}

/// Least-squares fit of `ln v` against `ln t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceSweepResult {
    pub t_values: Vec<usize>,
    pub variance_estimates: Vec<f64>,
    pub fitted_slope: f64,
    pub r_squared: f64,
}

/// `None` unless there are two or more strictly increasing `t` values and
/// every variance is positive and finite.
pub fn fit_log_log(t_values: &[usize], variances: &[f64]) -> Option<VarianceSweepResult> {
    if t_values.len() < 2
        || t_values.len() != variances.len()
        || t_values.windows(2).any(|w| w[0] >= w[1])
        || t_values[0] == 0
        || variances.iter().any(|v| !(*v > 0.0) || !v.is_finite())
    {
        return None;
    }
    let x: Vec<f64> = t_values.iter().map(|&t| (t as f64).ln()).collect();
    let y: Vec<f64> = variances.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Some(VarianceSweepResult {
        t_values: t_values.to_vec(),
        variance_estimates: variances.to_vec(),
        fitted_slope: slope,
        r_squared,
    })
}

/// Fixed synthetic task for the variance sweep. Replicates share the data,
/// the similarity, the allocation and the downstream initialisation; only
/// the sampler seed differs, unless `shared_sampler_seed` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceSweepConfig {
    pub t_values: Vec<usize>,
    pub replicates: usize,
    pub epochs: usize,
    /// `η_0` of the `η_0 / s` SGD schedule.
    pub lr0: f64,
    pub num_nodes: usize,
    pub degree: u32,
    pub seed: u64,
    pub shared_sampler_seed: bool,
}

impl Default for VarianceSweepConfig {
    fn default() -> Self {
        Self {
            t_values: vec![1, 2, 4, 8, 16, 32],
            replicates: 30,
            epochs: 40,
            lr0: 0.5,
            num_nodes: 24,
            degree: 3,
            seed: 0,
            shared_sampler_seed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Report {
    pub t_values: Vec<usize>,
    pub variance_estimates: Vec<f64>,
    pub sweep: Option<VarianceSweepResult>,
    pub slope_band: (f64, f64),
    pub min_r_squared: f64,
    pub verdict: Verdict,
}

impl fmt::Display for Theorem2Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "theorem2-variance: {}", self.verdict)?;
        match &self.sweep {
            Some(s) => write!(
                f,
                " (slope {:.3} in [{}, {}]?, R^2 {:.3} >= {}?)",
                s.fitted_slope, self.slope_band.0, self.slope_band.1, s.r_squared, self.min_r_squared
            ),
            None => write!(f, " (degenerate variance {:?})", self.variance_estimates),
        }
    }
}

struct SweepTask {
    classifier: GoGClassifier,
    init: Vec<f64>,
    features: Array2<f64>,
    targets: Vec<(usize, usize)>,
    sim: SimilarityMatrix,
    allocation: DegreeAllocation,
    /// Normalised operator of the expected graph `p_ij`.
    expected_op: Vec<(usize, usize, f64)>,
}

fn sweep_task(cfg: &VarianceSweepConfig) -> Result<SweepTask> {
    let n = cfg.num_nodes;
    let mut rng = stream_rng(cfg.seed, &[0x72a5]);
    let normal = Normal::new(0.0, 1.0).expect("unit sd");
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    // class-shifted features, two thirds of the nodes labeled
    let features = Array2::from_shape_fn((n, 4), |(i, c)| normal.sample(&mut rng) + if c == labels[i] { 1.0 } else { 0.0 });
    let mask: Vec<bool> = (0..n).map(|i| i % 3 != 2).collect();
    let logits = Array2::from_shape_fn((n, 2), |_| normal.sample(&mut rng));
    let known: Vec<Option<usize>> = labels.iter().map(|&y| Some(y)).collect();
    let sim = similarity_matrix(&build_prob_matrix(&logits, &known, &mask)?, true);
    let allocation = DegreeAllocation::new(vec![cfg.degree; n]);
    let classifier = GoGClassifier::new(
        GoGClassifierConfig {
            num_layers: 2,
            hidden_dim: 8,
            dropout: 0.0,
            symmetrize: true,
        },
        4,
        2,
    )?;
    let init = classifier.init_params(derive_seed(cfg.seed, &[0x72a6])).data;
    let p = inclusion_probability(&sim, &allocation)?;
    let edges: Vec<(usize, usize, f64)> = p.indexed_iter().filter(|(_, &w)| w > 0.0).map(|((i, j), &w)| (i, j, w)).collect();
    let expected_op = normalize_weighted(n, &edges, true)?;
    let targets = (0..n).filter(|&i| mask[i]).map(|i| (i, labels[i])).collect();
    Ok(SweepTask {
        classifier,
        init,
        features,
        targets,
        sim,
        allocation,
        expected_op,
    })
}

/// Trains one replicate with `t` GoGs per step and returns the final
/// downstream output on the expected graph.
fn sweep_replicate(task: &SweepTask, cfg: &VarianceSweepConfig, t: usize, sampler_seed: u64) -> Result<Array2<f64>> {
    let sampler = SamplerConfig {
        mode: SamplerMode::WithReplacement,
        seed: sampler_seed,
        samples_per_epoch: t,
    };
    let mut opt = Optimizer::new(
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr: cfg.lr0,
            schedule: LrSchedule::InverseTime,
            weight_decay: 0.0,
        },
        task.init.len(),
    );
    let mut params = task.init.clone();
    for epoch in 0..cfg.epochs as u64 {
        let ops = (0..t as u64)
            .map(|s| normalize_gog(&sample_gog(&task.sim, &task.allocation, &sampler, stream_id(epoch, s))?, true))
            .collect::<Result<Vec<_>>>()?;
        let (_, grad) = downstream_loss_and_grad(&task.classifier, &params, &ops, &task.features, &task.targets, None)?;
        opt.step(&mut params, &grad)?;
    }
    Ok(task.classifier.forward(&params, &task.expected_op, &task.features, None)?.logits)
}

/// Runs the sweep and reports the per-`t` variances with their log-log fit.
/// The variance at each `t` is the across-replicate sample variance of
/// every output coordinate, averaged over coordinates.
pub fn variance_sweep(cfg: &VarianceSweepConfig) -> Result<Theorem2Report> {
    if cfg.replicates < 2 {
        return Err(Error::Config("variance sweep needs >= 2 replicates".into()));
    }
    if cfg.t_values.is_empty() || cfg.t_values[0] == 0 || cfg.t_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("t_values must be positive and strictly increasing".into()));
    }
    if cfg.epochs == 0 || cfg.num_nodes < 4 || !(cfg.lr0 > 0.0) || cfg.degree == 0 {
        return Err(Error::Config("variance sweep needs epochs, lr0, degree > 0 and >= 4 nodes".into()));
    }
    let task = sweep_task(cfg)?;
    let jobs: Vec<(usize, usize)> = cfg
        .t_values
        .iter()
        .flat_map(|&t| (0..cfg.replicates).map(move |r| (t, r)))
        .collect();
    let outputs = jobs
        .par_iter()
        .map(|&(t, r)| {
            let rep = if cfg.shared_sampler_seed { 0 } else { r as u64 };
            sweep_replicate(&task, cfg, t, derive_seed(cfg.seed, &[0x72a7, rep]))
        })
        .collect::<Result<Vec<_>>>()?;
    let variances: Vec<f64> = outputs.chunks(cfg.replicates).map(coordinate_variance).collect();
    let sweep = fit_log_log(&cfg.t_values, &variances);
    let band = (-1.3, -0.7);
    let min_r2 = 0.8;
    let verdict = match &sweep {
        None => Verdict::Inconclusive,
        Some(s) if s.fitted_slope >= band.0 && s.fitted_slope <= band.1 && s.r_squared >= min_r2 => Verdict::Pass,
        Some(_) => Verdict::Fail,
    };
    Ok(Theorem2Report {
        t_values: cfg.t_values.clone(),
        variance_estimates: variances,
        sweep,
        slope_band: band,
        min_r_squared: min_r2,
        verdict,
    })
}

/// Mean over coordinates of the sample variance across `outputs`, computed
/// on deviations from the first output so identical replicates give 0.
fn coordinate_variance(outputs: &[Array2<f64>]) -> f64 {
    let r = outputs.len() as f64;
    let shifted: Vec<Array2<f64>> = outputs.iter().map(|o| o - &outputs[0]).collect();
    let mut mean = Array2::<f64>::zeros(outputs[0].raw_dim());
    for d in &shifted {
        mean += d;
    }
    mean /= r;
    let mut ss = Array2::<f64>::zeros(mean.raw_dim());
    for d in &shifted {
        let e = d - &mean;
        ss += &(&e * &e);
    }
    ss.mean().unwrap_or(f64::NAN) / (r - 1.0)
}

/// Variance sweep over `t_values` with the default synthetic task.
/// Requires at least 30 replicates and `t` spanning a factor of ten.
pub fn check_theorem2_variance(t_values: &[usize], replicates: usize, seed: u64) -> Result<Theorem2Report> {
    if replicates < 30 {
        return Err(Error::Config(format!("need >= 30 replicates, got {replicates}")));
    }
    match (t_values.first(), t_values.last()) {
        (Some(&lo), Some(&hi)) if lo > 0 && hi >= 10 * lo => {}
        _ => return Err(Error::Config("t_values must span at least a factor of ten".into())),
    }
    variance_sweep(&VarianceSweepConfig {
        t_values: t_values.to_vec(),
        replicates,
        seed,
        ..Default::default()
    })
}

/// Class-aggregated soft counts `γ[c][c'] = Σ_{k: y_k = c} P(ŷ_k = c')`
/// for a binary problem.
pub fn gamma(prob: &ProbMatrix, labels: &[usize]) -> [[f64; 2]; 2] {
    let mut g = [[0.0; 2]; 2];
    for (row, &y) in prob.p.rows().into_iter().zip(labels) {
        g[y][0] += row[0];
        g[y][1] += row[1];
    }
    g
}

/// `0 < γ01 < γ00` and `0 < γ10 < γ11`.
pub fn gamma_valid(g: &[[f64; 2]; 2]) -> bool {
    0.0 < g[0][1] && g[0][1] < g[0][0] && 0.0 < g[1][0] && g[1][0] < g[1][1]
}

/// Expected same-class probability of a class-`c` node whose own
/// predicted probability for `c` is `x`.
pub fn f_class(g: &[[f64; 2]; 2], c: usize, x: f64) -> f64 {
    let o = 1 - c;
    (g[c][c] * x + g[c][o] * (1.0 - x)) / ((g[c][c] + g[o][c]) * x + (g[c][o] + g[o][o]) * (1.0 - x))
}

/// For each trial, a random binary reference set of soft predictions. Draws
/// whose `γ` breaks the ordering constraints are skipped. On valid draws,
/// `f_0` and `f_1` must be strictly increasing on a 100-point grid over
/// `[0, 1]`, and a probe node's `prob` must equal the closed form and be
/// strictly larger when the probe is labeled than when it is an unlabeled
/// node of the same class. Stops after `num_trials` valid draws.
pub fn check_rule_monotonicity(num_trials: usize, seed: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("rule-monotonicity");
    let max_draws = 100 * num_trials.max(1);
    let mut draw = 0usize;
    while report.trials < num_trials && draw < max_draws {
        let mut rng = stream_rng(seed, &[0xc2, draw as u64]);
        draw += 1;
        let n0 = rng.gen_range(1..=8);
        let n1 = rng.gen_range(1..=8);
        let mut labels: Vec<usize> = (0..n0 + n1).map(|i| usize::from(i >= n0)).collect();
        let n = labels.len();
        // reference rows lean towards the true class
        let mut p = Array2::zeros((n + 1, 2));
        for (i, &y) in labels.iter().enumerate() {
            let own: f64 = rng.gen_range(0.2..1.0);
            p[[i, y]] = own;
            p[[i, 1 - y]] = 1.0 - own;
        }
        let reference = ProbMatrix {
            p: p.slice(ndarray::s![..n, ..]).to_owned(),
            labeled_mask: vec![false; n],
        };
        let g = gamma(&reference, &labels);
        if !gamma_valid(&g) {
            report.skipped += 1;
            continue;
        }
        report.trials += 1;
        let grid: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        for c in 0..2 {
            if let Some(w) = grid.windows(2).find(|w| f_class(&g, c, w[1]) <= f_class(&g, c, w[0])) {
                report.fail(format!("draw {}: f_{c} not increasing at x = {}", draw - 1, w[0]));
            }
        }
        // probe node n, once labeled (x = 1) and once unlabeled (x < 1)
        labels.push(0);
        for c in 0..2 {
            labels[n] = c;
            let x_unlabeled: f64 = rng.gen();
            let mut probe = |x: f64| -> Result<f64> {
                p[[n, c]] = x;
                p[[n, 1 - c]] = 1.0 - x;
                let pm = ProbMatrix {
                    p: p.clone(),
                    labeled_mask: vec![false; n + 1],
                };
                let v = homophily_prob(&similarity_matrix(&pm, true), &labels, n)?;
                let err = (v - f_class(&g, c, x)).abs();
                report.worst = report.worst.max(err);
                if err > 1e-12 {
                    report.fail(format!("draw {}: prob {v} vs closed form {}", draw - 1, f_class(&g, c, x)));
                }
                Ok(v)
            };
            let labeled = probe(1.0)?;
            let unlabeled = probe(x_unlabeled)?;
            if !(labeled > unlabeled) {
                report.fail(format!(
                    "draw {}: labeled prob {labeled} <= unlabeled {unlabeled} (x = {x_unlabeled})",
                    draw - 1
                ));
            }
        }
    }
    Ok(report)
}
