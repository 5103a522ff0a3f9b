//! End-to-end training loop: encode, build `S`, sample GoGs, train the GoG
//! classifier and the encoder on their own losses, select on validation.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::alloc::{allocate_degrees, AllocConfig, DegreeAllocation};
use crate::data::{head_tail_partition, GraphDataset, SplitSpec};
use crate::downstream::{downstream_loss_and_grad, normalize_gog, GoGClassifier, GoGClassifierConfig};
use crate::encoder::{encode_dataset, prepare_dataset, supervised_loss_and_grad, Encoded, Encoder, EncoderConfig, PreparedGraph};
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, mean_std, MetricsReport};
use crate::nn::{argmax, cross_entropy, Optimizer, OptimizerConfig, Params};
use crate::rng::{derive_seed, mix};
use crate::sampler::{edge_homophily, sample_gog, GoGGraph, SamplerConfig};
use crate::similarity::{build_prob_matrix, similarity_matrix, SimilarityMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub alloc: AllocConfig,
    pub encoder: EncoderConfig,
    pub encoder_opt: OptimizerConfig,
    pub sampler: SamplerConfig,
    pub downstream: GoGClassifierConfig,
    pub downstream_opt: OptimizerConfig,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            alloc: AllocConfig::default(),
            encoder: EncoderConfig::default(),
            encoder_opt: OptimizerConfig::default(),
            sampler: SamplerConfig::default(),
            downstream: GoGClassifierConfig::default(),
            downstream_opt: OptimizerConfig::default(),
            epochs: 100,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.alloc.validate()?;
        self.encoder.validate()?;
        self.encoder_opt.validate("encoder_opt")?;
        self.sampler.validate()?;
        self.downstream.validate()?;
        self.downstream_opt.validate("downstream_opt")
    }
}

/// Parameters and optimizer state of both models.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub encoder_params: Params,
    pub downstream_params: Params,
    pub encoder_opt: Optimizer,
    pub downstream_opt: Optimizer,
    pub epoch: usize,
    pub seed: u64,
    pub samples_per_epoch: usize,
}

impl TrainState {
    pub fn named_tensors(&self) -> Vec<(String, Array2<f64>)> {
        let mut t = self.encoder_params.named_tensors();
        t.extend(self.downstream_params.named_tensors());
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub encoder_loss: f64,
    pub downstream_loss: f64,
    pub val_balanced_accuracy: f64,
    /// Over edges whose endpoints both carry a train or validation label.
    pub mean_edge_homophily: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub state: TrainState,
    pub metrics: MetricsReport,
    pub curve: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub allocation: DegreeAllocation,
    /// Predicted class per test graph, aligned with `split.test_idx`.
    pub test_predictions: Vec<usize>,
    /// GoGs used for the final test predictions.
    pub eval_gogs: Vec<GoGGraph>,
}

const TAG_ENCODER_INIT: u64 = 1;
const TAG_DOWNSTREAM_INIT: u64 = 2;
const TAG_SAMPLER: u64 = 3;
const TAG_ENCODER_DROPOUT: u64 = 4;
const TAG_DOWNSTREAM_DROPOUT: u64 = 5;
const STREAM_TRAIN: u64 = 0x7a;
const STREAM_VAL: u64 = 0x7b;
const STREAM_TEST: u64 = 0x7c;

fn gog_stream(tag: u64, epoch: usize, sample: usize) -> u64 {
    mix(mix(tag, epoch as u64), sample as u64)
}

/// Everything the training loop may read. Labels outside train/val are
/// absent by construction.
struct TrainingView<'a> {
    graphs: Vec<PreparedGraph>,
    train_labels: Vec<Option<usize>>,
    labeled_mask: Vec<bool>,
    train_targets: Vec<(usize, usize)>,
    val_targets: Vec<(usize, usize)>,
    /// Train and validation labels, used only for the curve diagnostic.
    visible_labels: Vec<Option<usize>>,
    num_classes: usize,
    split: &'a SplitSpec,
}

impl<'a> TrainingView<'a> {
    fn new(dataset: &GraphDataset, split: &'a SplitSpec) -> Result<Self> {
        split.validate(dataset)?;
        let train_labels = split.train_label_view(dataset);
        let train_targets: Vec<(usize, usize)> = split
            .train_idx
            .iter()
            .map(|&i| (i, train_labels[i].expect("validated")))
            .collect();
        if train_targets.is_empty() {
            return Err(Error::EmptyInput("training split is empty".into()));
        }
        let val_targets: Vec<(usize, usize)> = split
            .val_idx
            .iter()
            .filter_map(|&i| dataset.graphs[i].label.map(|y| (i, y)))
            .collect();
        let mut visible_labels = train_labels.clone();
        for &(i, y) in &val_targets {
            visible_labels[i] = Some(y);
        }
        Ok(Self {
            graphs: prepare_dataset(dataset),
            labeled_mask: split.labeled_mask(dataset.len()),
            train_labels,
            train_targets,
            val_targets,
            visible_labels,
            num_classes: dataset.num_classes,
            split,
        })
    }

    fn similarity(&self, enc: &Encoded) -> Result<SimilarityMatrix> {
        let p = build_prob_matrix(&enc.logits, &self.train_labels, &self.labeled_mask)?;
        Ok(similarity_matrix(&p, true))
    }
}

fn visible_homophily(gogs: &[GoGGraph], labels: &[Option<usize>]) -> f64 {
    let mut same = 0u64;
    let mut total = 0u64;
    for g in gogs {
        for e in &g.edges {
            if let (Some(a), Some(b)) = (labels[e.src], labels[e.dst]) {
                total += u64::from(e.mult);
                if a == b {
                    same += u64::from(e.mult);
                }
            }
        }
    }
    if total == 0 {
        f64::NAN
    } else {
        same as f64 / total as f64
    }
}

/// Validation score: balanced accuracy, then lower cross-entropy on ties.
#[derive(Debug, Clone, Copy, PartialEq)]
struct ValScore {
    balanced_accuracy: f64,
    loss: f64,
}

impl ValScore {
    const WORST: ValScore = ValScore {
        balanced_accuracy: f64::NEG_INFINITY,
        loss: f64::INFINITY,
    };

    fn beats(&self, other: &ValScore) -> bool {
        self.balanced_accuracy > other.balanced_accuracy
            || (self.balanced_accuracy == other.balanced_accuracy && self.loss < other.loss)
    }
}

fn val_score(logits: &Array2<f64>, targets: &[(usize, usize)], num_classes: usize) -> Result<ValScore> {
    if targets.is_empty() {
        return Ok(ValScore {
            balanced_accuracy: f64::NAN,
            loss: f64::NAN,
        });
    }
    let pred: Vec<usize> = targets.iter().map(|&(i, _)| argmax(logits.row(i))).collect();
    let truth: Vec<usize> = targets.iter().map(|&(_, y)| y).collect();
    Ok(ValScore {
        balanced_accuracy: compute_metrics(&pred, &truth, num_classes, &[], &[])?.balanced_accuracy,
        loss: cross_entropy(logits, targets)?.0,
    })
}

/// Draws `count` GoGs from `S` and averages the eval-mode downstream logits.
#[allow(clippy::too_many_arguments)]
fn mean_gog_logits(
    classifier: &GoGClassifier,
    params: &[f64],
    sim: &SimilarityMatrix,
    alloc: &DegreeAllocation,
    sampler: &SamplerConfig,
    embeddings: &Array2<f64>,
    tag: u64,
    epoch: usize,
) -> Result<(Array2<f64>, Vec<GoGGraph>)> {
    let count = sampler.samples_per_epoch;
    let mut sum = Array2::zeros((embeddings.nrows(), classifier.num_classes));
    let mut gogs = Vec::with_capacity(count);
    for s in 0..count {
        let gog = sample_gog(sim, alloc, sampler, gog_stream(tag, epoch, s))?;
        let op = normalize_gog(&gog, classifier.config.symmetrize)?;
        sum += &classifier.forward(params, &op, embeddings, None)?.logits;
        gogs.push(gog);
    }
    Ok((sum / count as f64, gogs))
}

fn check_finite(epoch: usize, what: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { epoch, what, value })
    }
}

/// Runs the full pipeline and scores the best-validation model on the test
/// graphs. Selection maximises validation balanced accuracy, breaking ties
/// by lower validation cross-entropy; with no validation graphs the last
/// epoch is kept.
pub fn train_full_pipeline(dataset: &GraphDataset, split: &SplitSpec, config: &PipelineConfig) -> Result<PipelineOutput> {
    config.validate()?;
    let view = TrainingView::new(dataset, split)?;
    let allocation = allocate_degrees(split, dataset, &config.alloc)?;
    let encoder = Encoder::new(config.encoder, dataset.feature_dim, dataset.num_classes)?;
    let classifier = GoGClassifier::new(config.downstream, config.encoder.hidden_dim, dataset.num_classes)?;
    let seed = config.seed;
    let sampler = SamplerConfig {
        seed: derive_seed(seed, &[TAG_SAMPLER, config.sampler.seed]),
        ..config.sampler
    };

    let mut state = TrainState {
        encoder_params: encoder.init_params(derive_seed(seed, &[TAG_ENCODER_INIT])),
        downstream_params: classifier.init_params(derive_seed(seed, &[TAG_DOWNSTREAM_INIT])),
        encoder_opt: Optimizer::new(config.encoder_opt, encoder.num_params()),
        downstream_opt: Optimizer::new(config.downstream_opt, classifier.num_params()),
        epoch: 0,
        seed,
        samples_per_epoch: sampler.samples_per_epoch,
    };
    let mut best = state.clone();
    let mut best_val = ValScore::WORST;
    let mut best_epoch = 0;
    let mut curve = Vec::with_capacity(config.epochs);
    let mut encoded = encode_dataset(&encoder, &state.encoder_params.data, &view.graphs)?;

    for epoch in 1..=config.epochs {
        let sim = view.similarity(&encoded)?;
        let gogs: Vec<GoGGraph> = (0..sampler.samples_per_epoch)
            .map(|s| sample_gog(&sim, &allocation, &sampler, gog_stream(STREAM_TRAIN, epoch, s)))
            .collect::<Result<_>>()?;
        let ops = gogs
            .iter()
            .map(|g| normalize_gog(g, config.downstream.symmetrize))
            .collect::<Result<Vec<_>>>()?;

        let (down_loss, down_grad) = downstream_loss_and_grad(
            &classifier,
            &state.downstream_params.data,
            &ops,
            &encoded.embeddings,
            &view.train_targets,
            Some(derive_seed(seed, &[TAG_DOWNSTREAM_DROPOUT, epoch as u64])),
        )?;
        check_finite(epoch, "downstream loss", down_loss)?;
        state.downstream_opt.step(&mut state.downstream_params.data, &down_grad).map_err(|e| match e {
            Error::NonFiniteGradient { .. } => Error::Divergence {
                epoch,
                what: "downstream gradient",
                value: f64::NAN,
            },
            other => other,
        })?;

        let (enc_loss, enc_grad) = supervised_loss_and_grad(
            &encoder,
            &state.encoder_params.data,
            &view.graphs,
            &view.train_targets,
            Some(derive_seed(seed, &[TAG_ENCODER_DROPOUT, epoch as u64])),
        )?;
        check_finite(epoch, "encoder loss", enc_loss)?;
        state.encoder_opt.step(&mut state.encoder_params.data, &enc_grad).map_err(|e| match e {
            Error::NonFiniteGradient { .. } => Error::Divergence {
                epoch,
                what: "encoder gradient",
                value: f64::NAN,
            },
            other => other,
        })?;
        state.epoch = epoch;

        // the encoding used for validation seeds the next epoch
        encoded = encode_dataset(&encoder, &state.encoder_params.data, &view.graphs).map_err(|e| match e {
            Error::Divergence { what, value, .. } => Error::Divergence { epoch, what, value },
            other => other,
        })?;
        let val_sim = view.similarity(&encoded)?;
        let (val_logits, _) = mean_gog_logits(
            &classifier,
            &state.downstream_params.data,
            &val_sim,
            &allocation,
            &sampler,
            &encoded.embeddings,
            STREAM_VAL,
            epoch,
        )?;
        let val = val_score(&val_logits, &view.val_targets, view.num_classes)?;
        curve.push(EpochRecord {
            epoch,
            encoder_loss: enc_loss,
            downstream_loss: down_loss,
            val_balanced_accuracy: val.balanced_accuracy,
            mean_edge_homophily: visible_homophily(&gogs, &view.visible_labels),
        });
        if view.val_targets.is_empty() || val.beats(&best_val) {
            best_val = val;
            best_epoch = epoch;
            best = state.clone();
        }
    }

    let encoded = encode_dataset(&encoder, &best.encoder_params.data, &view.graphs)?;
    let sim = view.similarity(&encoded)?;
    let (logits, eval_gogs) = mean_gog_logits(
        &classifier,
        &best.downstream_params.data,
        &sim,
        &allocation,
        &sampler,
        &encoded.embeddings,
        STREAM_TEST,
        0,
    )?;
    let test_predictions: Vec<usize> = view.split.test_idx.iter().map(|&i| argmax(logits.row(i))).collect();
    let metrics = evaluate(dataset, view.split, &test_predictions, &eval_gogs)?;
    Ok(PipelineOutput {
        state: best,
        metrics,
        curve,
        best_epoch,
        allocation,
        test_predictions,
        eval_gogs,
    })
}

/// The similarity matrix the pipeline samples from, under `state`'s encoder
/// or, with `None`, the encoder as initialised for `config.seed`.
pub fn pipeline_similarity(
    dataset: &GraphDataset,
    split: &SplitSpec,
    config: &PipelineConfig,
    state: Option<&TrainState>,
) -> Result<SimilarityMatrix> {
    config.validate()?;
    let view = TrainingView::new(dataset, split)?;
    let encoder = Encoder::new(config.encoder, dataset.feature_dim, dataset.num_classes)?;
    let fresh;
    let params = match state {
        Some(s) => &s.encoder_params,
        None => {
            fresh = encoder.init_params(derive_seed(config.seed, &[TAG_ENCODER_INIT]));
            &fresh
        }
    };
    view.similarity(&encode_dataset(&encoder, &params.data, &view.graphs)?)
}

/// Scores test predictions; the only place the pipeline reads test labels.
pub fn evaluate(dataset: &GraphDataset, split: &SplitSpec, test_predictions: &[usize], gogs: &[GoGGraph]) -> Result<MetricsReport> {
    let truth_all = dataset.true_labels()?;
    let truth: Vec<usize> = split.test_idx.iter().map(|&i| truth_all[i]).collect();
    let (head_pos, tail_pos) = match head_tail_partition(dataset) {
        Ok((head, _)) => {
            let mut is_head = vec![false; dataset.len()];
            head.iter().for_each(|&i| is_head[i] = true);
            (0..split.test_idx.len()).partition(|&p| is_head[split.test_idx[p]])
        }
        Err(_) => (Vec::new(), Vec::new()),
    };
    let mut m = compute_metrics(test_predictions, &truth, dataset.num_classes, &head_pos, &tail_pos)?;
    let homs = gogs
        .iter()
        .map(|g| edge_homophily(g, &truth_all))
        .filter_map(|h| h.ok())
        .collect::<Vec<_>>();
    if !homs.is_empty() {
        let (mean, std) = mean_std(&homs);
        m.edge_homophily_mean = Some(mean);
        m.edge_homophily_std = Some(std);
    }
    Ok(m)
}

/// Encoder-only reference: the same encoder, optimizer and seeds, predicting
/// from its own head, with the same validation selection rule.
pub fn train_encoder_baseline(dataset: &GraphDataset, split: &SplitSpec, config: &PipelineConfig) -> Result<(MetricsReport, Vec<usize>)> {
    config.validate()?;
    let view = TrainingView::new(dataset, split)?;
    let encoder = Encoder::new(config.encoder, dataset.feature_dim, dataset.num_classes)?;
    let seed = config.seed;
    let mut params = encoder.init_params(derive_seed(seed, &[TAG_ENCODER_INIT]));
    let mut opt = Optimizer::new(config.encoder_opt, encoder.num_params());
    let mut best = params.data.clone();
    let mut best_val = ValScore::WORST;
    for epoch in 1..=config.epochs {
        let (loss, grad) = supervised_loss_and_grad(
            &encoder,
            &params.data,
            &view.graphs,
            &view.train_targets,
            Some(derive_seed(seed, &[TAG_ENCODER_DROPOUT, epoch as u64])),
        )?;
        check_finite(epoch, "encoder loss", loss)?;
        opt.step(&mut params.data, &grad)?;
        let enc = encode_dataset(&encoder, &params.data, &view.graphs)?;
        let val = val_score(&enc.logits, &view.val_targets, view.num_classes)?;
        if view.val_targets.is_empty() || val.beats(&best_val) {
            best_val = val;
            best = params.data.clone();
        }
    }
    let enc = encode_dataset(&encoder, &best, &view.graphs)?;
    let preds: Vec<usize> = split.test_idx.iter().map(|&i| argmax(enc.logits.row(i))).collect();
    Ok((evaluate(dataset, split, &preds, &[])?, preds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_class_imbalanced_split;
    use crate::synthetic::{planted_dataset, PlantedConfig};

    fn small_config(epochs: usize) -> PipelineConfig {
        PipelineConfig {
            alloc: AllocConfig {
                d_bar: 5.0,
                k_min: 3,
                k_max: 20,
                rho1: 2.0,
                rho2: 1.0,
                window_r: 3,
                ..Default::default()
            },
            encoder: EncoderConfig {
                hidden_dim: 8,
                ..Default::default()
            },
            downstream: GoGClassifierConfig {
                hidden_dim: 8,
                ..Default::default()
            },
            epochs,
            seed: 11,
            ..Default::default()
        }
    }

    fn separable() -> (GraphDataset, SplitSpec) {
        let ds = planted_dataset(&PlantedConfig {
            num_graphs: 60,
            min_nodes: 4,
            max_nodes: 12,
            ..Default::default()
        })
        .unwrap();
        let split = make_class_imbalanced_split(&ds, 1.0, 0.5, 0.2, 3).unwrap();
        (ds, split)
    }

    #[test]
    fn separable_classes_reach_full_accuracy() {
        let (ds, split) = separable();
        let out = train_full_pipeline(&ds, &split, &small_config(50)).unwrap();
        assert_eq!(out.metrics.accuracy, 1.0);
        assert_eq!(out.curve.len(), 50);
        assert!(out.curve[49].downstream_loss < out.curve[0].downstream_loss);
        assert!(out.curve[49].encoder_loss < out.curve[0].encoder_loss);
        assert_eq!(out.test_predictions.len(), split.test_idx.len());
    }

    #[test]
    fn zero_epochs_scores_untrained_model() {
        let (ds, split) = separable();
        let out = train_full_pipeline(&ds, &split, &small_config(0)).unwrap();
        assert!(out.curve.is_empty());
        assert_eq!(out.best_epoch, 0);
        assert!((0.0..=1.0).contains(&out.metrics.accuracy));
    }

    #[test]
    fn same_seed_same_report() {
        let (ds, split) = separable();
        let cfg = small_config(5);
        let a = train_full_pipeline(&ds, &split, &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| train_full_pipeline(&ds, &split, &cfg).unwrap());
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.state, b.state);
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let (ds, split) = separable();
        let mut cfg = small_config(3);
        cfg.encoder_opt.lr = 1e300;
        cfg.encoder_opt.kind = crate::nn::OptimizerKind::Sgd;
        match train_full_pipeline(&ds, &split, &cfg) {
            Err(Error::Divergence { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn baseline_runs() {
        let (ds, split) = separable();
        let (m, preds) = train_encoder_baseline(&ds, &split, &small_config(30)).unwrap();
        assert_eq!(preds.len(), split.test_idx.len());
        assert_eq!(m.accuracy, 1.0);
    }
}
