//! SGD training with a cosine schedule, evaluation and checkpoints.

pub mod checkpoint;
mod config;
mod optim;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{AugmentSpec, DatasetSpec, NetworkSpec, TrainConfig};
pub use optim::{cosine_lr, sgd_step, Sgd};

use crate::autograd::Tape;
use crate::data::{
    augment, epoch_batches, export_cifar10, mixup, smooth_labels, Batch, Dataset, Normalization,
};
use crate::error::{Error, Result};
use crate::net::Network;
use crate::nn::Mode;
use crate::rng::Rng;

/// One line of `log.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    /// Zero-based; the learning rate is `cosine_lr(epoch, epochs, base_lr)`.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub eval_acc: f64,
    pub eval_top5: f64,
    pub eval_loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EvalResult {
    pub examples: usize,
    pub top1: f64,
    pub top5: f64,
    pub loss: f64,
}

/// Whether `label` is among the `k` largest logits of `row`. Ties go to
/// the lower class index, matching argmax.
fn in_top_k(row: &[f64], label: usize, k: usize) -> bool {
    let target = row[label];
    let ahead = row
        .iter()
        .enumerate()
        .filter(|&(c, &v)| v > target || (v == target && c < label))
        .count();
    ahead < k
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = c;
        }
    }
    best
}

/// Eval-mode top-1, top-5 and mean cross-entropy of `net` on `data`.
pub fn evaluate(
    net: &mut Network,
    data: &Dataset,
    norm: &Normalization,
    batch_size: usize,
) -> Result<EvalResult> {
    if data.is_empty() {
        return Err(Error::Argument(
            "cannot evaluate on an empty dataset".into(),
        ));
    }
    if data.num_classes != net.cfg.num_classes {
        return Err(Error::Incompatible(format!(
            "dataset has {} classes, network {}",
            data.num_classes, net.cfg.num_classes
        )));
    }
    let k = data.num_classes;
    let (mut top1, mut top5, mut loss_sum) = (0usize, 0usize, 0.0);
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let x = norm.apply(&data.gather(chunk)?)?;
        let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let fwd = net.forward(&mut tape, xv, Mode::Eval, false)?;
        let (_, out) = tape.softmax_cross_entropy(fwd.logits, &smooth_labels(&labels, k, 0.0)?)?;
        loss_sum += out.value * chunk.len() as f64;
        for (row, &label) in tape.value(fwd.logits).data().chunks(k).zip(&labels) {
            top1 += usize::from(argmax(row) == label);
            top5 += usize::from(in_top_k(row, label, 5));
        }
    }
    let n = data.len() as f64;
    Ok(EvalResult {
        examples: data.len(),
        top1: top1 as f64 / n,
        top5: top5 as f64 / n,
        loss: loss_sum / n,
    })
}

/// Result of [`train`]: the per-epoch log and the final network.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub rows: Vec<EpochRow>,
    pub best_epoch: usize,
    pub best_eval_acc: f64,
    pub network: Network,
}

/// Files written by a run with an output directory.
pub struct RunFiles;

impl RunFiles {
    pub const CONFIG: &'static str = "config.json";
    pub const LOG: &'static str = "log.jsonl";
    pub const LAST: &'static str = "last.ckpt";
    pub const BEST: &'static str = "best.ckpt";
    /// Held-out synthetic images in CIFAR-10 binary layout, so `eval` can
    /// read them back.
    pub const EVAL_DATA: &'static str = "eval.bin";
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Trains `cfg` from scratch. With `out_dir`, writes `config.json`, one
/// `log.jsonl` line per epoch, `last.ckpt` every epoch and `best.ckpt`
/// whenever eval accuracy strictly improves.
///
/// Evaluation runs on a copy rounded to f32, the precision checkpoints
/// store, so evaluating `best.ckpt` later reproduces the logged accuracy
/// exactly. Batches of a single example are skipped: train-mode
/// batch-norm cannot estimate statistics from them.
pub fn train(
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let net_cfg = cfg.network.resolve()?;
    let root = Rng::new(cfg.seed);
    let mut net = Network::build(&net_cfg, &root.split(0))?;
    let (train_set, eval_set) = cfg.datasets(&root.split(1))?;
    let k = net_cfg.num_classes;

    let mut log = None;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(
            &dir.join(RunFiles::CONFIG),
            (cfg.to_json() + "\n").as_bytes(),
        )?;
        if matches!(cfg.dataset, DatasetSpec::SynthBlobs { .. }) && net_cfg.image_size == 32 {
            let path = dir.join(RunFiles::EVAL_DATA);
            export_cifar10(&eval_set, &path)?;
        }
        let path = dir.join(RunFiles::LOG);
        log = Some((
            fs::File::create(&path).map_err(|e| Error::io(&path, e))?,
            path,
        ));
    }

    let mut sgd = Sgd::new(
        &net.store,
        cfg.momentum,
        cfg.weight_decay,
        cfg.decay_bn_and_bias,
    )?;
    let mut rows = Vec::with_capacity(cfg.epochs);
    let (mut best_epoch, mut best_eval_acc) = (0, f64::NEG_INFINITY);
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.base_lr)?;
        let epoch_rng = root.split(2).split(epoch as u64);
        let mut shuffle = epoch_rng.split(0);
        let mut aug_rng = epoch_rng.split(1);
        let mut mix_rng = epoch_rng.split(2);

        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for idx in epoch_batches(train_set.len(), cfg.batch_size, &mut shuffle)? {
            if idx.len() < 2 {
                continue;
            }
            let labels: Vec<usize> = idx.iter().map(|&i| train_set.labels[i]).collect();
            let mut images = train_set.gather(&idx)?;
            if let Some(a) = cfg.augment {
                images = augment(&images, &mut aug_rng, a.pad, a.flip_prob)?;
            }
            let mut batch = Batch {
                images: cfg.normalization.apply(&images)?,
                targets: smooth_labels(&labels, k, cfg.label_smoothing)?,
            };
            if cfg.mixup_alpha > 0.0 {
                batch = mixup(&batch, cfg.mixup_alpha, &mut mix_rng)?;
            }

            let mut tape = Tape::new();
            let xv = tape.constant(batch.images);
            let fwd = net.forward(&mut tape, xv, Mode::Train, true)?;
            for (row, &label) in tape.value(fwd.logits).data().chunks(k).zip(&labels) {
                correct += usize::from(argmax(row) == label);
            }
            tape.set_scope("loss");
            let (loss, out) = tape.softmax_cross_entropy(fwd.logits, &batch.targets)?;
            loss_sum += out.value * idx.len() as f64;
            seen += idx.len();
            let grads = tape.backward(loss)?;
            sgd.step(&mut net.store, &grads, &fwd.params, lr)?;
        }
        if seen == 0 {
            return Err(Error::Config(format!(
                "no trainable batch: {} examples with batch size {}",
                train_set.len(),
                cfg.batch_size
            )));
        }

        let mut snapshot = net.clone();
        checkpoint::quantize(&mut snapshot);
        let ev = evaluate(&mut snapshot, &eval_set, &cfg.normalization, cfg.batch_size)?;
        let row = EpochRow {
            epoch,
            lr,
            train_loss: loss_sum / seen as f64,
            train_acc: correct as f64 / seen as f64,
            eval_acc: ev.top1,
            eval_top5: ev.top5,
            eval_loss: ev.loss,
        };
        let improved = row.eval_acc > best_eval_acc;
        if improved {
            best_eval_acc = row.eval_acc;
            best_epoch = epoch;
        }
        if let (Some(dir), Some((file, path))) = (out_dir, log.as_mut()) {
            let line = serde_json::to_string(&row).expect("row serializes");
            writeln!(file, "{line}")
                .and_then(|_| file.flush())
                .map_err(|e| Error::io(&*path, e))?;
            checkpoint::save(&snapshot, dir.join(RunFiles::LAST))?;
            if improved {
                checkpoint::save(&snapshot, dir.join(RunFiles::BEST))?;
            }
        }
        on_epoch(&row);
        rows.push(row);
    }
    Ok(TrainOutcome {
        rows,
        best_epoch,
        best_eval_acc,
        network: net,
    })
}

/// Reads a `log.jsonl` file.
pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<EpochRow>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format {
                path: PathBuf::from(path),
                msg: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

/// Builds the network described by `cfg` and loads `ckpt` into it.
pub fn load_network(cfg: &crate::net::NetworkConfig, ckpt: impl AsRef<Path>) -> Result<Network> {
    let mut net = Network::build(cfg, &Rng::new(0))?;
    checkpoint::load(&mut net, ckpt)?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_k_ties_follow_argmax() {
        let row = [1.0, 3.0, 3.0, 0.0, 2.0, 2.0, 2.0];
        assert_eq!(argmax(&row), 1);
        assert!(in_top_k(&row, 1, 1));
        assert!(!in_top_k(&row, 2, 1));
        assert!(in_top_k(&row, 5, 5));
        assert!(in_top_k(&row, 6, 5));
        assert!(!in_top_k(&row, 6, 4));
        assert!(!in_top_k(&row, 0, 5));
    }

    #[test]
    fn top5_covers_everything_with_few_classes() {
        assert!(in_top_k(&[0.0, 9.0, 1.0], 0, 5));
    }
}
