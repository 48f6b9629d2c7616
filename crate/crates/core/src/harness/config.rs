use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::{Precision, Real};
use crate::data::{self, BlobSpec, ChannelStats, Dataset, Split};
use crate::error::{Error, Result};
use crate::model::ArchId;
use crate::prune::Strategy;
use crate::seed::splitmix64;
use crate::train::OptimizerCfg;

/// Where the examples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetCfg {
    /// Directory holding the four standard IDX files.
    Mnist {
        path: PathBuf,
        #[serde(default = "default_val_fraction")]
        val_fraction: f64,
    },
    /// Directory holding `data_batch_{1..5}.bin` and `test_batch.bin`.
    Cifar10 {
        path: PathBuf,
        #[serde(default = "default_val_fraction")]
        val_fraction: f64,
    },
    /// Gaussian blobs reshaped to the architecture's input shape. `seed`
    /// fixes the data independently of the run seeds.
    SynthBlobs {
        class_count: usize,
        train_per_class: usize,
        eval_per_class: usize,
        #[serde(default = "default_noise")]
        noise_std: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_val_fraction() -> f64 {
    1.0 / 12.0
}

fn default_noise() -> f64 {
    0.1
}

impl DatasetCfg {
    pub fn id(&self) -> &'static str {
        match self {
            DatasetCfg::Mnist { .. } => "mnist",
            DatasetCfg::Cifar10 { .. } => "cifar10",
            DatasetCfg::SynthBlobs { .. } => "synth_blobs",
        }
    }
}

/// Everything that determines the outcome of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetCfg,
    pub arch: ArchId,
    /// Checkpoint directory of the trained model to prune. When absent the
    /// model is trained from scratch with `initial_training`.
    #[serde(default)]
    pub initial_checkpoint: Option<PathBuf>,
    #[serde(default = "OptimizerCfg::adam_recipe")]
    pub initial_training: OptimizerCfg,
    pub strategies: Vec<Strategy>,
    #[serde(default = "default_compressions")]
    pub compressions: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_true")]
    pub exclude_classifier: bool,
    #[serde(default = "default_score_batch")]
    pub score_batch_size: usize,
    #[serde(default = "OptimizerCfg::adam_recipe")]
    pub finetune: OptimizerCfg,
    #[serde(default)]
    pub normalize: bool,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_true")]
    pub save_checkpoints: bool,
}

fn default_compressions() -> Vec<f64> {
    vec![2.0, 4.0, 8.0, 16.0, 32.0]
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_iterations() -> usize {
    1
}

fn default_true() -> bool {
    true
}

fn default_score_batch() -> usize {
    64
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

impl Default for ExperimentConfig {
    /// Every strategy at the default operating points on synthetic blobs, so
    /// the default experiment needs no downloaded data.
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetCfg::SynthBlobs {
                class_count: 10,
                train_per_class: 24,
                eval_per_class: 12,
                noise_std: 0.5,
                seed: 0,
            },
            arch: ArchId::Mlp300_100,
            initial_checkpoint: None,
            initial_training: OptimizerCfg { max_epochs: 10, early_stop_patience: 3, ..OptimizerCfg::adam_recipe() },
            strategies: Strategy::ALL.to_vec(),
            compressions: default_compressions(),
            seeds: default_seeds(),
            iterations: 1,
            exclude_classifier: true,
            score_batch_size: default_score_batch(),
            finetune: OptimizerCfg { max_epochs: 4, early_stop_patience: 2, ..OptimizerCfg::adam_recipe() },
            normalize: false,
            precision: Precision::Bits32,
            master_seed: 0,
            output_dir: default_output(),
            save_checkpoints: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Config(format!("{}: {j}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.strategies.is_empty() {
            return bad("strategies must not be empty".into());
        }
        if self.strategies.iter().collect::<HashSet<_>>().len() != self.strategies.len() {
            return bad("strategies must be distinct".into());
        }
        if self.compressions.is_empty() {
            return bad("compressions must not be empty".into());
        }
        if let Some(c) = self.compressions.iter().find(|c| !(c.is_finite() && **c > 1.0)) {
            return bad(format!("compression {c} must be > 1"));
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.iterations == 0 || self.score_batch_size == 0 {
            return bad("iterations and score_batch_size must be >= 1".into());
        }
        self.initial_training.validate()?;
        self.finetune.validate()?;
        match &self.dataset {
            DatasetCfg::Mnist { val_fraction, .. } | DatasetCfg::Cifar10 { val_fraction, .. }
                if !(*val_fraction > 0.0 && *val_fraction < 1.0) =>
            {
                bad(format!("val_fraction {val_fraction} not in (0,1)"))
            }
            DatasetCfg::SynthBlobs { class_count, train_per_class, eval_per_class, noise_std, .. }
                if *class_count < 2 || *train_per_class == 0 || *eval_per_class < 2 || !(*noise_std >= 0.0) =>
            {
                bad("synth_blobs needs class_count >= 2, train_per_class >= 1, eval_per_class >= 2".into())
            }
            _ => Ok(()),
        }
    }

    /// Hex SHA-256 over the resolved config (minus the output location),
    /// the crate version, the initial checkpoint id and the fixed training
    /// choices that are not configurable.
    pub fn fingerprint(&self, initial_checkpoint_id: Option<&str>) -> Result<String> {
        let mut resolved = serde_json::to_value(self)?;
        if let Some(obj) = resolved.as_object_mut() {
            obj.remove("output_dir");
        }
        let envelope = serde_json::json!({
            "config": resolved,
            "crate_version": env!("CARGO_PKG_VERSION"),
            "initial_checkpoint_id": initial_checkpoint_id,
            "augmentation": "off",
            "lr_schedule": "constant",
            "init": "glorot_uniform",
        });
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(&envelope)?)))
    }
}

/// Train / validation / test splits ready for a model of `arch`.
#[derive(Debug, Clone)]
pub struct LoadedData<T> {
    pub train: Dataset<T>,
    pub val: Dataset<T>,
    pub test: Dataset<T>,
}

impl<T: Real> LoadedData<T> {
    pub fn class_count(&self) -> usize {
        self.train.class_count
    }
}

fn mnist_files(dir: &Path) -> [PathBuf; 4] {
    ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"]
        .map(|f| dir.join(f))
}

pub fn load_data<T: Real>(cfg: &DatasetCfg, arch: ArchId, normalize: bool) -> Result<LoadedData<T>> {
    let shape = arch.input_shape();
    let (train, val, test) = match cfg {
        DatasetCfg::Mnist { path, val_fraction } => {
            let [tri, trl, tei, tel] = mnist_files(path);
            let full = data::load_idx::<T>(&tri, &trl)?;
            let mut test = data::load_idx::<T>(&tei, &tel)?;
            test.split = Split::Test;
            let (train, val) = full.split_validation(*val_fraction)?;
            (train, val, test)
        }
        DatasetCfg::Cifar10 { path, val_fraction } => {
            let batches: Vec<PathBuf> = (1..=5).map(|i| path.join(format!("data_batch_{i}.bin"))).collect();
            let refs: Vec<&Path> = batches.iter().map(PathBuf::as_path).collect();
            let full = data::load_cifar10::<T>(&refs)?;
            let mut test = data::load_cifar10::<T>(&[&path.join("test_batch.bin")])?;
            test.split = Split::Test;
            let (train, val) = full.split_validation(*val_fraction)?;
            (train, val, test)
        }
        DatasetCfg::SynthBlobs { class_count, train_per_class, eval_per_class, noise_std, seed } => {
            let dim: usize = shape.iter().product();
            let blobs = |n: usize, k: u64, split: Split| -> Result<Dataset<T>> {
                let spec = BlobSpec { class_count: *class_count, n_per_class: n, dim, noise_std: *noise_std };
                let mut ds = data::synth_blobs_with::<T>(&spec, splitmix64(seed ^ k))?;
                ds.split = split;
                Ok(ds)
            };
            (
                blobs(*train_per_class, 1, Split::Train)?,
                blobs(eval_per_class.div_ceil(2), 2, Split::Val)?,
                blobs(*eval_per_class, 3, Split::Test)?,
            )
        }
    };
    let mut out = LoadedData {
        train: train.reshape_examples(&shape)?,
        val: val.reshape_examples(&shape)?,
        test: test.reshape_examples(&shape)?,
    };
    if normalize {
        let stats = ChannelStats::fit(&out.train);
        for ds in [&mut out.train, &mut out.val, &mut out.test] {
            stats.apply(ds);
        }
    }
    Ok(out)
}
