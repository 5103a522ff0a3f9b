//! Experiment configuration: a TOML file read as flat dotted keys
//! (`alloc.d_bar`, `encoder.arch`, ...). Every key is optional except where
//! a subcommand needs it; unknown keys are rejected.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use samgog::alloc::AllocConfig;
use samgog::data::{FeatureScheme, DEFAULT_DEGREE_CAP};
use samgog::downstream::GoGClassifierConfig;
use samgog::encoder::EncoderConfig;
use samgog::nn::OptimizerConfig;
use samgog::pipeline::PipelineConfig;
use samgog::sampler::SamplerConfig;
use samgog::synthetic::PlantedConfig;
use serde::de::DeserializeOwned;

use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// Remaining `section.key` entries; each read removes its key.
struct Keys(BTreeMap<String, toml::Value>);

impl Keys {
    fn parse(text: &str, origin: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Config(format!("{origin}: {e}")))?;
        let mut map = BTreeMap::new();
        flatten("", toml::Value::Table(table), &mut map);
        Ok(Keys(map))
    }

    fn opt<T: DeserializeOwned>(&mut self, key: &str) -> Result<Option<T>> {
        match self.0.remove(key) {
            None => Ok(None),
            Some(v) => v
                .try_into()
                .map(Some)
                .map_err(|e| CliError::Config(format!("invalid value for '{key}': {e}"))),
        }
    }

    fn get<T: DeserializeOwned>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.opt(key)?.unwrap_or(default))
    }

    fn finish(self) -> Result<()> {
        match self.0.keys().next() {
            None => Ok(()),
            Some(k) => Err(CliError::Config(format!("unknown config key '{k}'"))),
        }
    }
}

fn flatten(prefix: &str, value: toml::Value, out: &mut BTreeMap<String, toml::Value>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    TuDataset { root: PathBuf, name: String },
    Planted(PlantedConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitConfig {
    /// Fixed split file; otherwise a class-imbalanced split per run.
    pub file: Option<PathBuf>,
    pub rho_class: f64,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub curve: bool,
    pub dump_gog: bool,
    pub dump_allocation: bool,
    pub checkpoint: bool,
    pub baseline: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub degrees: Vec<f64>,
    pub samples: usize,
    /// Train the pipeline first and sweep under its best encoder.
    pub train: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryConfig {
    pub lemma1_trials: usize,
    pub lemma1_n_max: usize,
    pub theorem1_trials: usize,
    pub theorem1_size: usize,
    pub t_values: Vec<usize>,
    pub replicates: usize,
    pub monotonicity_trials: usize,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            lemma1_trials: 500,
            lemma1_n_max: 6,
            theorem1_trials: 10_000,
            theorem1_size: 10,
            t_values: vec![1, 2, 4, 8, 16, 32],
            replicates: 30,
            monotonicity_trials: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: Option<DatasetSource>,
    pub feature_scheme: Option<FeatureScheme>,
    pub degree_cap: usize,
    pub split: SplitConfig,
    /// `alloc.d_bar` is kept apart so that commands without allocation can
    /// run without it.
    pub d_bar: Option<f64>,
    pub pipeline: PipelineConfig,
    pub runs: usize,
    pub seed: u64,
    pub parallel: bool,
    pub output: OutputConfig,
    pub sweep: SweepConfig,
    pub theory: TheoryConfig,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Self::parse("", "<defaults>"),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Io(p.to_path_buf(), e))?;
                Self::parse(&text, &p.display().to_string())
            }
        }
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut k = Keys::parse(text, origin)?;
        let seed: u64 = k.get("train.seed", 0)?;

        let source: String = k.get("dataset.source", "tudataset".to_string())?;
        let dataset = match source.as_str() {
            "tudataset" => match (k.opt::<PathBuf>("dataset.root")?, k.opt::<String>("dataset.name")?) {
                (Some(root), Some(name)) => Some(DatasetSource::TuDataset { root, name }),
                (None, None) => None,
                (None, Some(_)) => return Err(missing("dataset.root")),
                (Some(_), None) => return Err(missing("dataset.name")),
            },
            "planted" => {
                let d = PlantedConfig::default();
                Some(DatasetSource::Planted(PlantedConfig {
                    num_graphs: k.get("planted.num_graphs", d.num_graphs)?,
                    num_classes: k.get("planted.num_classes", d.num_classes)?,
                    class_counts: k.opt("planted.class_counts")?,
                    min_nodes: k.get("planted.min_nodes", d.min_nodes)?,
                    max_nodes: k.get("planted.max_nodes", d.max_nodes)?,
                    edge_prob: k.get("planted.edge_prob", d.edge_prob)?,
                    feature_dim: k.get("planted.feature_dim", d.feature_dim)?,
                    signal: k.get("planted.signal", d.signal)?,
                    noise: k.get("planted.noise", d.noise)?,
                    seed: k.get("planted.seed", seed)?,
                }))
            }
            other => {
                return Err(CliError::Config(format!(
                    "dataset.source must be 'tudataset' or 'planted', got '{other}'"
                )))
            }
        };
        let feature_scheme = match k.opt::<String>("dataset.feature_scheme")? {
            None => None,
            Some(s) => Some(s.parse().map_err(|e| CliError::Config(format!("dataset.feature_scheme: {e}")))?),
        };
        let degree_cap = k.get("dataset.degree_cap", DEFAULT_DEGREE_CAP)?;

        let split = SplitConfig {
            file: k.opt("split.file")?,
            rho_class: k.get("split.rho_class", 1.0)?,
            train_fraction: k.get("split.train_fraction", 0.5)?,
            val_fraction: k.get("split.val_fraction", 0.2)?,
        };

        let a = AllocConfig::default();
        let d_bar = k.opt("alloc.d_bar")?;
        let alloc = AllocConfig {
            d_bar: d_bar.unwrap_or(a.d_bar),
            k_min: k.get("alloc.k_min", a.k_min)?,
            k_max: k.get("alloc.k_max", a.k_max)?,
            rho1: k.get("alloc.rho1", a.rho1)?,
            rho2: k.get("alloc.rho2", a.rho2)?,
            window_r: k.get("alloc.window_r", a.window_r)?,
            rule2_mode: k.get("alloc.rule2_mode", a.rule2_mode)?,
        };
        let e = EncoderConfig::default();
        let encoder = EncoderConfig {
            arch: k.get("encoder.arch", e.arch)?,
            num_layers: k.get("encoder.num_layers", e.num_layers)?,
            hidden_dim: k.get("encoder.hidden_dim", e.hidden_dim)?,
            dropout: k.get("encoder.dropout", e.dropout)?,
            epsilon_gin: k.get("encoder.epsilon_gin", e.epsilon_gin)?,
            readout: k.get("encoder.readout", e.readout)?,
        };
        let s = SamplerConfig::default();
        let sampler = SamplerConfig {
            mode: k.get("sampler.mode", s.mode)?,
            seed: k.get("sampler.seed", s.seed)?,
            samples_per_epoch: k.get("sampler.samples_per_epoch", s.samples_per_epoch)?,
        };
        let g = GoGClassifierConfig::default();
        let downstream = GoGClassifierConfig {
            num_layers: k.get("downstream.num_layers", g.num_layers)?,
            hidden_dim: k.get("downstream.hidden_dim", g.hidden_dim)?,
            dropout: k.get("downstream.dropout", g.dropout)?,
            symmetrize: k.get("downstream.symmetrize", g.symmetrize)?,
        };
        let pipeline = PipelineConfig {
            alloc,
            encoder,
            encoder_opt: optimizer(&mut k, "encoder_opt")?,
            sampler,
            downstream,
            downstream_opt: optimizer(&mut k, "downstream_opt")?,
            epochs: k.get("train.epochs", PipelineConfig::default().epochs)?,
            seed,
        };
        let runs = k.get("train.runs", 1usize)?;
        let parallel = k.get("train.parallel", false)?;

        let output = OutputConfig {
            curve: k.get("output.curve", true)?,
            dump_gog: k.get("output.dump_gog", false)?,
            dump_allocation: k.get("output.dump_allocation", false)?,
            checkpoint: k.get("output.checkpoint", false)?,
            baseline: k.get("output.baseline", false)?,
        };
        let sweep = SweepConfig {
            degrees: k.get("sweep.degrees", (1..=10).map(f64::from).collect())?,
            samples: k.get("sweep.samples", 10usize)?,
            train: k.get("sweep.train", false)?,
        };
        let t = TheoryConfig::default();
        let theory = TheoryConfig {
            lemma1_trials: k.get("theory.lemma1_trials", t.lemma1_trials)?,
            lemma1_n_max: k.get("theory.lemma1_n_max", t.lemma1_n_max)?,
            theorem1_trials: k.get("theory.theorem1_trials", t.theorem1_trials)?,
            theorem1_size: k.get("theory.theorem1_size", t.theorem1_size)?,
            t_values: k.get("theory.t_values", t.t_values)?,
            replicates: k.get("theory.replicates", t.replicates)?,
            monotonicity_trials: k.get("theory.monotonicity_trials", t.monotonicity_trials)?,
        };
        k.finish()?;

        if runs == 0 {
            return Err(CliError::Config("train.runs must be >= 1".into()));
        }
        if sweep.samples == 0 {
            return Err(CliError::Config("sweep.samples must be >= 1".into()));
        }
        Ok(Self {
            dataset,
            feature_scheme,
            degree_cap,
            split,
            d_bar,
            pipeline,
            runs,
            seed,
            parallel,
            output,
            sweep,
            theory,
        })
    }

    /// The pipeline settings; requires `alloc.d_bar` and validates the rest.
    pub fn pipeline(&self) -> Result<PipelineConfig> {
        if self.d_bar.is_none() {
            return Err(missing("alloc.d_bar"));
        }
        self.pipeline.validate()?;
        Ok(self.pipeline)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.pipeline.seed = seed;
        if let Some(DatasetSource::Planted(p)) = &mut self.dataset {
            p.seed = seed;
        }
        self
    }
}

fn optimizer(k: &mut Keys, section: &str) -> Result<OptimizerConfig> {
    let d = OptimizerConfig::default();
    Ok(OptimizerConfig {
        kind: k.get(&format!("{section}.kind"), d.kind)?,
        lr: k.get(&format!("{section}.lr"), d.lr)?,
        schedule: k.get(&format!("{section}.schedule"), d.schedule)?,
        weight_decay: k.get(&format!("{section}.weight_decay"), d.weight_decay)?,
    })
}

fn missing(key: &str) -> CliError {
    CliError::Config(format!("missing required key '{key}'"))
}
