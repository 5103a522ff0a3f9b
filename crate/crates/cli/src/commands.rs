use std::fs;
use std::path::Path;

use rayon::prelude::*;
use samgog::alloc::{allocate_degrees, format_allocation};
use samgog::data::{
    build_features_with_cap, compute_class_imbalance_ratio, compute_size_imbalance_ratio, head_tail_partition,
    make_class_imbalanced_split, parse_tudataset, read_split, write_split, FeatureScheme, GraphDataset, SplitSpec,
};
use samgog::metrics::mean_std;
use samgog::nn::write_checkpoint;
use samgog::pipeline::{pipeline_similarity, train_encoder_baseline, train_full_pipeline, PipelineConfig, PipelineOutput};
use samgog::rng::{derive_seed, mix};
use samgog::sampler::{edge_homophily, sample_gog, stream_id, write_gog, SamplerConfig};
use samgog::similarity::expected_homophily;
use samgog::synthetic::planted_dataset;
use samgog::theory::{
    check_lemma1, check_rule_monotonicity, check_theorem1_unbiasedness, check_theorem2_variance, Verdict,
};
use serde_json::json;

use crate::config::{DatasetSource, ExperimentConfig};
use crate::report::{curve_csv, metrics_csv, metrics_json, summary, sweep_csv, RunRecord, SweepRow};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn create_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| CliError::Io(out.to_path_buf(), e))
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<GraphDataset> {
    let ds = match &cfg.dataset {
        None => return Err(CliError::Config("missing required key 'dataset.name' (or dataset.source = \"planted\")".into())),
        Some(DatasetSource::Planted(p)) => {
            let ds = planted_dataset(p)?;
            match cfg.feature_scheme {
                Some(scheme) => build_features_with_cap(&ds, scheme, cfg.degree_cap)?,
                None => ds,
            }
        }
        Some(DatasetSource::TuDataset { root, name }) => {
            let ds = parse_tudataset(root, name)?;
            let scheme = cfg.feature_scheme.unwrap_or(if ds.num_node_labels.is_some() {
                FeatureScheme::NodeLabelOneHot
            } else {
                FeatureScheme::DegreeOneHot
            });
            build_features_with_cap(&ds, scheme, cfg.degree_cap)?
        }
    };
    Ok(ds)
}

fn split_for(cfg: &ExperimentConfig, ds: &GraphDataset, seed: u64) -> Result<SplitSpec> {
    match &cfg.split.file {
        Some(path) => {
            let split = read_split(path)?;
            split.validate(ds)?;
            Ok(split)
        }
        None => Ok(make_class_imbalanced_split(
            ds,
            cfg.split.rho_class,
            cfg.split.train_fraction,
            cfg.split.val_fraction,
            seed,
        )?),
    }
}

struct RunOutcome {
    output: PipelineOutput,
    baseline: Option<samgog::metrics::MetricsReport>,
    seed: u64,
}

fn run_once(cfg: &ExperimentConfig, ds: &GraphDataset, base: &PipelineConfig, r: usize) -> Result<RunOutcome> {
    let seed = mix(cfg.seed, r as u64);
    let split = split_for(cfg, ds, seed)?;
    let pc = PipelineConfig { seed, ..*base };
    let output = train_full_pipeline(ds, &split, &pc)?;
    let baseline = if cfg.output.baseline {
        Some(train_encoder_baseline(ds, &split, &pc)?.0)
    } else {
        None
    };
    log::info!("run {r}: balanced accuracy {:.4}", output.metrics.balanced_accuracy);
    Ok(RunOutcome { output, baseline, seed })
}

pub fn train(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let base = cfg.pipeline()?;
    create_out(out)?;
    let results: Vec<Result<RunOutcome>> = if cfg.parallel {
        (0..cfg.runs).into_par_iter().map(|r| run_once(cfg, &ds, &base, r)).collect()
    } else {
        (0..cfg.runs).map(|r| run_once(cfg, &ds, &base, r)).collect()
    };
    let mut failed = Vec::new();
    let mut runs = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(o) => runs.push((r, o)),
            Err(e) => {
                eprintln!("run {r} failed: {e}");
                failed.push(r);
            }
        }
    }
    if !failed.is_empty() {
        return Err(CliError::Failed(format!("{} of {} runs failed: {failed:?}", failed.len(), cfg.runs)));
    }

    let mut rows = Vec::with_capacity(runs.len());
    let mut baseline_rows = Vec::new();
    for (r, o) in &runs {
        rows.push(RunRecord {
            run: *r,
            seed: o.seed,
            best_epoch: Some(o.output.best_epoch),
            metrics: o.output.metrics.clone(),
        });
        if let Some(b) = &o.baseline {
            baseline_rows.push(RunRecord {
                run: *r,
                seed: o.seed,
                best_epoch: None,
                metrics: b.clone(),
            });
        }
        if cfg.output.curve {
            write(&out.join(format!("curve_run{r}.csv")), curve_csv(&o.output.curve))?;
        }
        if cfg.output.dump_gog {
            if let Some(g) = o.output.eval_gogs.first() {
                write_gog(g, out.join(format!("gog_run{r}.txt")))?;
            }
        }
        if cfg.output.dump_allocation {
            write(&out.join(format!("allocation_run{r}.txt")), format_allocation(&o.output.allocation))?;
        }
        if cfg.output.checkpoint {
            write_checkpoint(out.join(format!("state_run{r}.ckpt")), &o.output.state.named_tensors())?;
        }
    }
    write(&out.join("metrics.csv"), metrics_csv(&rows))?;
    write(&out.join("metrics.json"), serde_json::to_string_pretty(&metrics_json(&rows))? + "\n")?;
    if !baseline_rows.is_empty() {
        write(&out.join("baseline_metrics.csv"), metrics_csv(&baseline_rows))?;
        write(
            &out.join("baseline_metrics.json"),
            serde_json::to_string_pretty(&metrics_json(&baseline_rows))? + "\n",
        )?;
    }
    let (mean, std) = summary(&rows);
    println!(
        "{} run(s): accuracy {:.4} ± {:.4}, balanced accuracy {:.4} ± {:.4}",
        rows.len(),
        mean[0],
        std[0],
        mean[1],
        std[1]
    );
    Ok(())
}

/// Sampled-GoG edge homophily per average degree, beside the closed-form
/// expectation. Degrees below `k_min` lower the floor to `floor(d_bar)`,
/// degrees above `k_max` raise the ceiling.
pub fn homophily_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let ds = load_dataset(cfg)?;
    let mut pc = cfg.pipeline()?;
    let seed = mix(cfg.seed, 0);
    pc.seed = seed;
    let split = split_for(cfg, &ds, seed)?;
    let state = if cfg.sweep.train {
        Some(train_full_pipeline(&ds, &split, &pc)?.state)
    } else {
        None
    };
    let sim = pipeline_similarity(&ds, &split, &pc, state.as_ref())?;
    let labels = ds.true_labels()?;
    let sampler = SamplerConfig {
        seed: derive_seed(seed, &[0x5eed, pc.sampler.seed]),
        ..pc.sampler
    };
    let mut rows = Vec::with_capacity(cfg.sweep.degrees.len());
    for (di, &d_bar) in cfg.sweep.degrees.iter().enumerate() {
        if !(d_bar >= 0.0) || !d_bar.is_finite() {
            return Err(CliError::Config(format!("sweep degree {d_bar} must be finite and >= 0")));
        }
        let mut alloc_cfg = pc.alloc;
        alloc_cfg.d_bar = d_bar;
        alloc_cfg.k_min = alloc_cfg.k_min.min(d_bar.floor() as u32);
        alloc_cfg.k_max = alloc_cfg.k_max.max(d_bar.ceil() as u32);
        let alloc = allocate_degrees(&split, &ds, &alloc_cfg)?;
        let homs = (0..cfg.sweep.samples as u64)
            .map(|s| Ok(edge_homophily(&sample_gog(&sim, &alloc, &sampler, stream_id(di as u64, s))?, &labels)?))
            .collect::<Result<Vec<f64>>>()?;
        let (mean, std) = mean_std(&homs);
        rows.push(SweepRow {
            d_bar,
            mean,
            std,
            expected: expected_homophily(&sim, &labels, &alloc)?,
        });
    }
    Ok(rows)
}

pub fn sweep_homophily(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let rows = homophily_sweep(cfg)?;
    create_out(out)?;
    let csv = sweep_csv(&rows);
    write(&out.join("homophily_sweep.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn theory(cfg: &ExperimentConfig, out: &Path, with_variance: bool, to_stdout: bool) -> Result<()> {
    let t = &cfg.theory;
    let seed = cfg.seed;
    let lemma1 = check_lemma1(t.lemma1_trials, t.lemma1_n_max, seed)?;
    let theorem1 = check_theorem1_unbiasedness(t.theorem1_trials, t.theorem1_size, seed)?;
    let monotonicity = check_rule_monotonicity(t.monotonicity_trials, seed)?;
    let theorem2 = if with_variance {
        Some(check_theorem2_variance(&t.t_values, t.replicates, seed)?)
    } else {
        None
    };
    let mut verdicts = vec![lemma1.verdict(), theorem1.verdict(), monotonicity.verdict()];
    verdicts.extend(theorem2.as_ref().map(|r| r.verdict));
    let all_passed = verdicts.iter().all(|&v| v == Verdict::Pass);
    let report = json!({
        "seed": seed,
        "lemma1": lemma1,
        "theorem1": theorem1,
        "theorem2": theorem2,
        "monotonicity": monotonicity,
        "all_passed": all_passed,
    });
    let text = serde_json::to_string_pretty(&report)? + "\n";
    let human = |line: String| {
        if to_stdout {
            eprintln!("{line}");
        } else {
            println!("{line}");
        }
    };
    human(lemma1.to_string());
    human(theorem1.to_string());
    human(monotonicity.to_string());
    if let Some(r) = &theorem2 {
        human(r.to_string());
    }
    if to_stdout {
        print!("{text}");
    } else {
        create_out(out)?;
        write(&out.join("theory_report.json"), text)?;
    }
    if verdicts.contains(&Verdict::Fail) {
        return Err(CliError::Failed("one or more theory checks failed".into()));
    }
    Ok(())
}

pub fn make_split(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let split = make_class_imbalanced_split(
        &ds,
        cfg.split.rho_class,
        cfg.split.train_fraction,
        cfg.split.val_fraction,
        cfg.seed,
    )?;
    create_out(out)?;
    write_split(&split, out.join("split.txt"))?;
    println!(
        "train {} / val {} / test {}; train rho_class {}",
        split.train_idx.len(),
        split.val_idx.len(),
        split.test_idx.len(),
        compute_class_imbalance_ratio(&ds, &split.train_idx)?
    );
    Ok(())
}

pub fn inspect_dataset(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let (head, tail) = head_tail_partition(&ds)?;
    let report = json!({
        "stats": ds.stats(),
        "feature_dim": ds.feature_dim,
        "rho_size": compute_size_imbalance_ratio(&ds).ok(),
        "head_graphs": head.len(),
        "tail_graphs": tail.len(),
    });
    let text = serde_json::to_string_pretty(&report)? + "\n";
    create_out(out)?;
    write(&out.join("dataset_stats.json"), &text)?;
    print!("{text}");
    Ok(())
}
