use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    load_cifar10_split, synth_blobs, Dataset, Normalization, Split, CIFAR_TEST_FILE,
};
use crate::error::{Error, Result};
use crate::net::NetworkConfig;
use crate::rng::Rng;

fn version_one() -> u32 {
    1
}

/// Either a named preset or a full network description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NetworkSpec {
    Preset { preset: String },
    Config(NetworkConfig),
}

impl NetworkSpec {
    pub fn resolve(&self) -> Result<NetworkConfig> {
        let cfg = match self {
            NetworkSpec::Preset { preset } => NetworkConfig::preset(preset)?,
            NetworkSpec::Config(cfg) => cfg.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// `classes * per_class` training images plus `classes * eval_per_class`
    /// held-out images from the same class templates.
    SynthBlobs {
        classes: usize,
        per_class: usize,
        #[serde(default)]
        eval_per_class: usize,
        image_size: usize,
    },
    /// A CIFAR-10 binary directory (train + test split) or a single batch
    /// file (evaluated on itself).
    Cifar10 {
        path: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSpec {
    pub pad: usize,
    pub flip_prob: f64,
}

/// Everything a training run depends on. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "version_one")]
    pub version: u32,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Decay batch-norm parameters and biases as well as weights.
    #[serde(default)]
    pub decay_bn_and_bias: bool,
    #[serde(default)]
    pub label_smoothing: f64,
    /// Beta(alpha, alpha) mixup; 0 disables it.
    #[serde(default)]
    pub mixup_alpha: f64,
    #[serde(default)]
    pub augment: Option<AugmentSpec>,
    pub normalization: Normalization,
    pub dataset: DatasetSpec,
    pub network: NetworkSpec,
}

impl TrainConfig {
    /// Desk-scale CIFAR-10 defaults: batch 128, 30 epochs, lr 0.1, momentum
    /// 0.9, decay 1e-4, pad-4 crops and flips.
    pub fn cifar10(path: impl Into<PathBuf>, network: NetworkSpec) -> Self {
        TrainConfig {
            version: 1,
            seed: 0,
            epochs: 30,
            batch_size: 128,
            base_lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            decay_bn_and_bias: false,
            label_smoothing: 0.0,
            mixup_alpha: 0.0,
            augment: Some(AugmentSpec {
                pad: 4,
                flip_prob: 0.5,
            }),
            normalization: Normalization::CIFAR10,
            dataset: DatasetSpec::Cifar10 {
                path: path.into(),
                limit: None,
                test_limit: None,
            },
            network,
        }
    }

    /// The large-scale recipe (batch 256, 200 epochs, label smoothing 0.1,
    /// mixup 0.2), kept for reference rather than for running on a CPU.
    pub fn imagenet_reference(path: impl Into<PathBuf>) -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 256,
            label_smoothing: 0.1,
            mixup_alpha: 0.2,
            ..Self::cifar10(
                path,
                NetworkSpec::Preset {
                    preset: "hs-28w-6s".into(),
                },
            )
        }
    }

    /// The toy run: tiny HS network on ten synthetic classes.
    pub fn toy(seed: u64) -> Self {
        TrainConfig {
            version: 1,
            seed,
            epochs: 30,
            batch_size: 32,
            base_lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            decay_bn_and_bias: false,
            label_smoothing: 0.0,
            mixup_alpha: 0.0,
            augment: None,
            normalization: Normalization {
                mean: [0.5; 3],
                std: [0.25; 3],
            },
            dataset: DatasetSpec::SynthBlobs {
                classes: 10,
                per_class: 50,
                eval_per_class: 20,
                image_size: 32,
            },
            network: NetworkSpec::Preset {
                preset: "tiny-hs".into(),
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.version != 1 {
            return bad(format!("unsupported train config version {}", self.version));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} not in [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {} must be >= 0", self.weight_decay));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr {} must be > 0", self.base_lr));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad(format!(
                "label_smoothing {} not in [0, 1)",
                self.label_smoothing
            ));
        }
        if !(self.mixup_alpha >= 0.0 && self.mixup_alpha.is_finite()) {
            return bad(format!("mixup_alpha {} must be >= 0", self.mixup_alpha));
        }
        if let Some(a) = self.augment {
            if !(0.0..=1.0).contains(&a.flip_prob) {
                return bad(format!("flip_prob {} not in [0, 1]", a.flip_prob));
            }
        }
        self.normalization.validate()?;
        let net = self.network.resolve()?;
        match &self.dataset {
            DatasetSpec::SynthBlobs {
                classes,
                per_class,
                image_size,
                ..
            } => {
                if *classes != net.num_classes || *image_size != net.image_size {
                    return bad(format!(
                        "dataset ({classes} classes, {image_size}px) does not fit network ({} classes, {}px)",
                        net.num_classes, net.image_size
                    ));
                }
                if *per_class == 0 {
                    return bad("per_class must be positive".into());
                }
            }
            DatasetSpec::Cifar10 { .. } => {
                if net.num_classes != 10 || net.image_size != 32 {
                    return bad("CIFAR-10 needs a 10-class, 32px network".into());
                }
            }
        }
        Ok(())
    }

    /// Training and evaluation sets. Synthetic data comes from the run's
    /// data stream, so it is fixed by the seed.
    pub fn datasets(&self, data_rng: &Rng) -> Result<(Dataset, Dataset)> {
        match &self.dataset {
            DatasetSpec::SynthBlobs {
                classes,
                per_class,
                eval_per_class,
                image_size,
            } => {
                let all = synth_blobs(*classes, per_class + eval_per_class, *image_size, data_rng)?;
                // Labels cycle through the classes, so both parts stay balanced.
                let n_train = classes * per_class;
                let train = all.take(n_train)?;
                let eval = if *eval_per_class == 0 {
                    train.clone()
                } else {
                    all.subset(&(n_train..all.len()).collect::<Vec<_>>())?
                };
                Ok((train, eval))
            }
            DatasetSpec::Cifar10 {
                path,
                limit,
                test_limit,
            } => {
                if path.is_dir() {
                    let train = load_cifar10_split(path, Split::Train, *limit)?;
                    let eval = if path.join(CIFAR_TEST_FILE).exists() {
                        load_cifar10_split(path, Split::Test, *test_limit)?
                    } else {
                        train.clone()
                    };
                    Ok((train, eval))
                } else {
                    let train = crate::data::load_cifar10_file(path, *limit)?;
                    Ok((train.clone(), train))
                }
            }
        }
    }
}
