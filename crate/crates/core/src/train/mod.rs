//! Training and evaluation drivers: the multi-task CTC loss, Adam with a
//! multistep schedule, checkpointing, metric logging, and the ablation grid.

mod ablate;
mod adam;
mod checkpoint;
mod log;

pub use ablate::{ablate, AblationCell, ABLATION_HEADER};
pub use adam::{adam_update, AdamHyper, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, strip_shortcut, CheckpointMeta, CHECKPOINT_VERSION};
pub use log::{MetricLog, MetricRow, METRICS_HEADER};

use crate::ctc::{greedy_decode, min_frames};
use crate::dataset::{load_manifest, read_image, Alphabet, DatasetIndex, Split, DEFAULT_ALPHABET};
use crate::error::{Error, Result};
use crate::metrics::{corpus_scores, EvalReport};
use crate::network::{FlattenMode, Network, NetworkConfig};
use crate::preprocess::{augment, make_batch, pad_transcript, AugmentParams, PadMode, RawImage};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Var};
use crate::Mode;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Canvas/architecture preset selecting between the full line and word
/// configurations and the desk-scale tiny one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Line,
    Word,
    Tiny,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "line" => Ok(Preset::Line),
            "word" => Ok(Preset::Word),
            "tiny" => Ok(Preset::Tiny),
            other => Err(Error::config(format!("unknown preset '{other}' (line|word|tiny)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub total_epochs: usize,
    /// Epochs at which the learning rate decays by `lr_decay`.
    pub milestones: Vec<usize>,
    pub lr_decay: f64,
    pub batch_size: usize,
    /// Weight of the shortcut branch's CTC loss; 0 removes the branch from
    /// the loss entirely.
    pub shortcut_weight: f64,
    pub seed: u64,
    pub augment: AugmentParams,
    pub preset: Preset,
    /// Overrides the preset's flattening when set.
    pub flatten: Option<FlattenMode>,
    pub pad_mode: PadMode,
    pub alphabet: String,
    /// Optional global-norm gradient clipping; off by default.
    pub grad_clip: Option<f64>,
    pub train_manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
    /// When false the wall_seconds column logs 0, making metrics.csv a pure
    /// function of the run (used by the determinism check).
    pub log_wall_clock: bool,
    /// Decode the training split each epoch for its CER/WER columns.
    pub eval_train_metrics: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.001,
            total_epochs: 240,
            milestones: vec![120, 180],
            lr_decay: 0.1,
            batch_size: 16,
            shortcut_weight: 0.1,
            seed: 0,
            augment: AugmentParams::default(),
            preset: Preset::Line,
            flatten: None,
            pad_mode: PadMode::Pad,
            alphabet: DEFAULT_ALPHABET.to_string(),
            grad_clip: None,
            train_manifest: None,
            val_manifest: None,
            log_wall_clock: true,
            eval_train_metrics: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_epochs == 0 {
            return Err(Error::config("total_epochs must be positive"));
        }
        if !self.milestones.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::config("milestones must be strictly increasing"));
        }
        if self.milestones.last().is_some_and(|&m| m >= self.total_epochs) {
            return Err(Error::config("milestones must lie before total_epochs"));
        }
        if self.shortcut_weight < 0.0 {
            return Err(Error::config("shortcut weight must be nonnegative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(self.lr_decay > 0.0) || self.base_lr <= 0.0 {
            return Err(Error::config("learning rate and decay must be positive"));
        }
        self.augment.validate()?;
        Ok(())
    }

    pub fn alphabet(&self) -> Result<Alphabet> {
        Alphabet::new(self.alphabet.chars())
    }

    /// A desk-sized schedule keeping the original milestone fractions
    /// (milestones sit at 50% and 75% of the total).
    pub fn scale_schedule(&mut self, total_epochs: usize) {
        let old_total = self.total_epochs as f64;
        self.milestones = self
            .milestones
            .iter()
            .map(|&m| ((m as f64 / old_total) * total_epochs as f64).round() as usize)
            .collect();
        self.total_epochs = total_epochs;
    }
}

/// The JSON config document: train settings plus an optional explicit
/// network section overriding the preset.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub network: Option<NetworkConfig>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&body)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    /// Resolves the preset and overrides into a concrete network config.
    pub fn resolve(&self) -> Result<(TrainConfig, NetworkConfig)> {
        self.train.validate()?;
        let n_classes = self.train.alphabet()?.n_classes();
        let mut net = match &self.network {
            Some(explicit) => {
                if explicit.n_classes != n_classes {
                    return Err(Error::config(format!(
                        "network n_classes {} disagrees with the alphabet ({} classes)",
                        explicit.n_classes, n_classes
                    )));
                }
                explicit.clone()
            }
            None => preset_network(self.train.preset, n_classes),
        };
        if let Some(f) = self.train.flatten {
            net.flatten = f;
        }
        net.validate()?;
        Ok((self.train.clone(), net))
    }
}

pub fn preset_network(preset: Preset, n_classes: usize) -> NetworkConfig {
    match preset {
        Preset::Line => NetworkConfig::line(n_classes),
        Preset::Word => NetworkConfig::word(n_classes),
        Preset::Tiny => NetworkConfig::tiny(n_classes),
    }
}

/// Piecewise-constant multistep schedule: `base_lr` decayed by `lr_decay`
/// after each milestone passed.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let passed = cfg.milestones.iter().filter(|&&m| epoch >= m).count();
    cfg.base_lr * cfg.lr_decay.powi(passed as i32)
}

/// Combined loss `L_main + weight · L_shortcut`; with the shortcut absent
/// (or weight 0) the total is exactly the main loss.
pub fn multitask_loss<T: Scalar>(
    g: &mut Graph<T>,
    main: Var,
    shortcut: Option<Var>,
    weight: f64,
) -> Result<Var> {
    if weight < 0.0 {
        return Err(Error::config("shortcut weight must be nonnegative"));
    }
    match shortcut {
        Some(s) if weight > 0.0 => {
            let scaled = g.scale(s, T::from_f64_c(weight));
            g.add(main, scaled)
        }
        _ => Ok(main),
    }
}

/// Everything a finished run leaves behind.
pub struct TrainOutcome {
    pub metrics: MetricLog,
    pub metrics_path: PathBuf,
    pub last_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    /// Samples whose space-padded transcript cannot align with the `W/8`
    /// decode steps; they are skipped with a warning.
    pub skipped_samples: usize,
    pub best_cer: Option<f64>,
}

pub fn train(cfg: &TrainConfig, net_cfg: &NetworkConfig, out_dir: &Path) -> Result<TrainOutcome> {
    train_resume(cfg, net_cfg, out_dir, None)
}

pub fn train_resume(
    cfg: &TrainConfig,
    net_cfg: &NetworkConfig,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    net_cfg.validate()?;
    let alphabet = cfg.alphabet()?;
    if net_cfg.n_classes != alphabet.n_classes() {
        return Err(Error::config(format!(
            "network expects {} classes, alphabet has {}",
            net_cfg.n_classes,
            alphabet.n_classes()
        )));
    }
    let train_path = cfg
        .train_manifest
        .as_ref()
        .ok_or_else(|| Error::config("no training manifest configured"))?;
    let train_idx = load_manifest(train_path, &alphabet, Split::Train)?;
    if train_idx.is_empty() {
        return Err(Error::data(format!("{}: empty manifest", train_path.display())));
    }
    let val_idx = cfg
        .val_manifest
        .as_ref()
        .map(|p| load_manifest(p, &alphabet, Split::Val))
        .transpose()?;

    // Every sample must fit the decode lattice: padded length plus adjacent
    // repeats within W/8 steps.
    let frames = net_cfg.seq_len();
    let mut usable = Vec::with_capacity(train_idx.len());
    let mut skipped = 0usize;
    for (i, entry) in train_idx.entries.iter().enumerate() {
        let ids = alphabet.encode(&pad_transcript(&entry.text, Mode::Train))?;
        let need = min_frames(&ids);
        if need > frames {
            eprintln!(
                "warning: skipping sample {i} ({:?}): needs {need} frames, lattice has {frames}",
                entry.text
            );
            skipped += 1;
        } else {
            usable.push(i);
        }
    }
    if usable.is_empty() {
        return Err(Error::data("no trainable samples after the frame check"));
    }

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let metrics_path = out_dir.join("metrics.csv");
    let last_path = out_dir.join("last.ckpt");
    let best_path = out_dir.join("best.ckpt");

    let (mut net, mut adam, start_epoch) = match resume {
        Some(path) => {
            let (net, adam, meta) = load_checkpoint(path)?;
            if net.config() != net_cfg {
                return Err(Error::config(format!(
                    "{}: checkpoint network config differs from the requested one",
                    path.display()
                )));
            }
            let adam = adam.unwrap_or_else(|| AdamState::for_network(&net));
            (net, adam, meta.epoch)
        }
        None => {
            let net = Network::<f32>::build(net_cfg.clone(), cfg.seed)?;
            let adam = AdamState::for_network(&net);
            (net, adam, 0)
        }
    };

    let mut metric_log = MetricLog::new();
    let mut best_cer: Option<f64> = None;
    let started = Instant::now();

    for epoch in start_epoch..cfg.total_epochs {
        let lr = lr_schedule(epoch, cfg);
        let mut order = usable.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64, 0x5u64)));
        let mut drop_rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64, 0xdu64));

        let mut loss_main_sum = 0.0f64;
        let mut loss_short_sum = 0.0f64;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut samples: Vec<(RawImage, String)> = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let entry = &train_idx.entries[i];
                let mut img = read_image(&entry.image)?;
                if cfg.augment.enabled {
                    img = augment(&img, &cfg.augment, mix(cfg.seed, epoch as u64, i as u64));
                }
                samples.push((img, entry.text.clone()));
            }
            let batch =
                make_batch::<f32>(&samples, net_cfg.canvas, &alphabet, Mode::Train, cfg.pad_mode)?;
            let mut graph = Graph::new();
            let fwd = net.forward_train(&mut graph, batch.images, &mut drop_rng)?;
            let loss_main = graph.ctc_loss(fwd.main_logits, &batch.labels)?;
            let loss_short = match fwd.shortcut_logits {
                Some(sl) if cfg.shortcut_weight > 0.0 => {
                    Some(graph.ctc_loss(sl, &batch.labels)?)
                }
                _ => None,
            };
            let total = multitask_loss(&mut graph, loss_main, loss_short, cfg.shortcut_weight)?;

            let lm = graph.value(loss_main).data[0] as f64;
            if !lm.is_finite() {
                return Err(Error::numeric(format!("non-finite loss at epoch {epoch}")));
            }
            loss_main_sum += lm * chunk.len() as f64;
            if let Some(ls) = loss_short {
                loss_short_sum += graph.value(ls).data[0] as f64 * chunk.len() as f64;
            }
            seen += chunk.len();

            graph.backward(total)?;
            let mut grads: Vec<Option<Vec<f32>>> = Vec::new();
            net.visit_params(&mut |name, _| {
                grads.push(
                    fwd.params.var(name).and_then(|v| graph.grad(v)).map(|g| g.to_vec()),
                );
            });
            if let Some(clip) = cfg.grad_clip {
                clip_global_norm(&mut grads, clip);
            }
            adam.step(&mut net, &grads, lr)?;
        }

        let wall = |at: &Instant| {
            if cfg.log_wall_clock { at.elapsed().as_secs_f64() } else { 0.0 }
        };
        let shortcut_active = net.config().shortcut_enabled && cfg.shortcut_weight > 0.0;
        let train_loss = loss_main_sum / seen.max(1) as f64;
        let train_short = shortcut_active.then(|| loss_short_sum / seen.max(1) as f64);

        let (train_cer, train_wer) = if cfg.eval_train_metrics {
            let report = evaluate(&net, &train_idx, &alphabet, cfg.batch_size, cfg.pad_mode)?.0;
            (report.cer, report.wer)
        } else {
            (f64::NAN, f64::NAN)
        };
        metric_log.push(MetricRow {
            epoch,
            split: Split::Train,
            loss_main: train_loss,
            loss_shortcut: train_short,
            cer: train_cer,
            wer: train_wer,
            lr,
            wall_seconds: wall(&started),
        })?;

        let mut epoch_key_cer = if train_cer.is_nan() { None } else { Some(train_cer) };
        if let Some(vi) = &val_idx {
            let (report, val_loss) =
                evaluate_with_loss(&net, vi, &alphabet, cfg.batch_size, cfg.pad_mode)?;
            metric_log.push(MetricRow {
                epoch,
                split: Split::Val,
                loss_main: val_loss,
                loss_shortcut: None,
                cer: report.cer,
                wer: report.wer,
                lr,
                wall_seconds: wall(&started),
            })?;
            epoch_key_cer = Some(report.cer);
        }

        if let Some(key) = epoch_key_cer {
            if best_cer.is_none_or(|b| key < b) {
                best_cer = Some(key);
                let meta = CheckpointMeta {
                    network: net_cfg.clone(),
                    train: cfg.clone(),
                    epoch: epoch + 1,
                    adam_step: adam.step,
                    best_val_cer: best_cer,
                    metrics_digest: metric_log.digest(),
                };
                save_checkpoint(&best_path, &net, Some(&adam), &meta)?;
            }
        }
        metric_log.write_csv(&metrics_path)?;
    }

    let meta = CheckpointMeta {
        network: net_cfg.clone(),
        train: cfg.clone(),
        epoch: cfg.total_epochs,
        adam_step: adam.step,
        best_val_cer: best_cer,
        metrics_digest: metric_log.digest(),
    };
    save_checkpoint(&last_path, &net, Some(&adam), &meta)?;
    if !best_path.exists() {
        save_checkpoint(&best_path, &net, Some(&adam), &meta)?;
    }
    metric_log.write_csv(&metrics_path)?;

    Ok(TrainOutcome {
        metrics: metric_log,
        metrics_path,
        last_checkpoint: last_path,
        best_checkpoint: best_path,
        skipped_samples: skipped,
        best_cer,
    })
}

fn clip_global_norm(grads: &mut [Option<Vec<f32>>], clip: f64) {
    let mut sq = 0.0f64;
    for g in grads.iter().flatten() {
        for &v in g {
            sq += (v as f64) * (v as f64);
        }
    }
    let norm = sq.sqrt();
    if norm > clip && norm > 0.0 {
        let scale = (clip / norm) as f32;
        for g in grads.iter_mut().flatten() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Greedy-decodes a split and scores it: eval-mode forward (no
/// augmentation, no dropout, no shortcut), margin spaces stripped from the
/// hypotheses. Returns the report and the decoded strings.
pub fn evaluate(
    net: &Network<f32>,
    idx: &DatasetIndex,
    alphabet: &Alphabet,
    batch_size: usize,
    pad_mode: PadMode,
) -> Result<(EvalReport, Vec<String>)> {
    let (report, hyps, _) = eval_pass(net, idx, alphabet, batch_size, pad_mode, false)?;
    Ok((report, hyps))
}

/// Like [`evaluate`] but also reports the mean eval-mode CTC loss, computed
/// with margin-space-padded targets.
pub fn evaluate_with_loss(
    net: &Network<f32>,
    idx: &DatasetIndex,
    alphabet: &Alphabet,
    batch_size: usize,
    pad_mode: PadMode,
) -> Result<(EvalReport, f64)> {
    let (report, _, loss) = eval_pass(net, idx, alphabet, batch_size, pad_mode, true)?;
    Ok((report, loss))
}

fn eval_pass(
    net: &Network<f32>,
    idx: &DatasetIndex,
    alphabet: &Alphabet,
    batch_size: usize,
    pad_mode: PadMode,
    with_loss: bool,
) -> Result<(EvalReport, Vec<String>, f64)> {
    if idx.is_empty() {
        return Err(Error::data("empty evaluation manifest"));
    }
    let canvas = net.config().canvas;
    let frames = net.config().seq_len();
    let n_classes = net.config().n_classes;
    let mut hyps = Vec::with_capacity(idx.len());
    let mut refs = Vec::with_capacity(idx.len());
    let mut loss_sum = 0.0f64;
    let mut loss_count = 0usize;
    for chunk in idx.entries.chunks(batch_size.max(1)) {
        let mut samples = Vec::with_capacity(chunk.len());
        for entry in chunk {
            samples.push((read_image(&entry.image)?, entry.text.clone()));
        }
        let batch = make_batch::<f32>(&samples, canvas, alphabet, Mode::Eval, pad_mode)?;
        let mut graph = Graph::new();
        let logits = net.forward_eval(&mut graph, batch.images)?;
        let data = &graph.value(logits).data;
        for (bi, entry) in chunk.iter().enumerate() {
            let row = &data[bi * frames * n_classes..(bi + 1) * frames * n_classes];
            let raw = greedy_decode(row, alphabet)?;
            hyps.push(raw.trim_matches(' ').to_string());
            refs.push(entry.text.clone());
            if with_loss {
                // margin spaces included, matching the train-time targets
                let padded = alphabet.encode(&pad_transcript(&entry.text, Mode::Train))?;
                if min_frames(&padded) <= frames {
                    let row64: Vec<f64> = row.iter().map(|&v| v as f64).collect();
                    loss_sum += crate::ctc::ctc_loss(&row64, n_classes, &padded)?;
                    loss_count += 1;
                }
            }
        }
    }
    let report = corpus_scores(&refs, &hyps)?;
    let loss = if loss_count > 0 { loss_sum / loss_count as f64 } else { f64::NAN };
    Ok((report, hyps, loss))
}

/// Loads a checkpoint and scores a manifest with it.
pub fn evaluate_checkpoint(ckpt: &Path, manifest: &Path) -> Result<(EvalReport, Vec<String>)> {
    let (net, _, meta) = load_checkpoint(ckpt)?;
    let alphabet = meta.train.alphabet()?;
    let idx = load_manifest(manifest, &alphabet, Split::Test)?;
    evaluate(&net, &idx, &alphabet, meta.train.batch_size, meta.train.pad_mode)
}

/// Loads a checkpoint and decodes a single image to text.
pub fn decode_image(ckpt: &Path, image: &Path) -> Result<String> {
    let (net, _, meta) = load_checkpoint(ckpt)?;
    let alphabet = meta.train.alphabet()?;
    let img = read_image(image)?;
    let sample = vec![(img, "x".to_string())]; // placeholder transcript, unused
    let batch = make_batch::<f32>(
        &sample,
        net.config().canvas,
        &alphabet,
        Mode::Eval,
        meta.train.pad_mode,
    )?;
    let mut graph = Graph::new();
    let logits = net.forward_eval(&mut graph, batch.images)?;
    let text = greedy_decode(&graph.value(logits).data, &alphabet)?;
    Ok(text.trim_matches(' ').to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn close(a: f64, b: f64) -> bool {
        (a / b - 1.0).abs() < 1e-12
    }

    #[test]
    fn schedule_follows_the_milestones() {
        let cfg = TrainConfig::default();
        assert!(close(lr_schedule(0, &cfg), 1e-3));
        assert!(close(lr_schedule(119, &cfg), 1e-3));
        assert!(close(lr_schedule(120, &cfg), 1e-4));
        assert!(close(lr_schedule(150, &cfg), 1e-4));
        assert!(close(lr_schedule(180, &cfg), 1e-5));
        assert!(close(lr_schedule(200, &cfg), 1e-5));
        assert!(close(lr_schedule(239, &cfg), 1e-5));
    }

    #[test]
    fn schedule_scaling_keeps_fractions() {
        let mut cfg = TrainConfig::default();
        cfg.scale_schedule(60);
        assert_eq!(cfg.total_epochs, 60);
        assert_eq!(cfg.milestones, vec![30, 45]);
    }

    #[test]
    fn multitask_arithmetic() {
        let mut g = Graph::<f64>::new();
        let main = g.leaf(Tensor::scalar(2.0));
        let short = g.leaf(Tensor::scalar(5.0));
        let total = multitask_loss(&mut g, main, Some(short), 0.1).unwrap();
        assert_eq!(g.value(total).data[0], 2.5);
        let same = multitask_loss(&mut g, main, Some(short), 0.0).unwrap();
        assert_eq!(same, main);
        let alone = multitask_loss(&mut g, main, None, 0.3).unwrap();
        assert_eq!(alone, main);
    }

    #[test]
    fn multitask_loss_is_affine_in_the_weight() {
        let losses = |w: f64| {
            let mut g = Graph::<f64>::new();
            let main = g.leaf(Tensor::scalar(1.25));
            let short = g.leaf(Tensor::scalar(3.5));
            let total = multitask_loss(&mut g, main, Some(short), w).unwrap();
            g.value(total).data[0]
        };
        let (a, b, c) = (losses(0.1), losses(0.2), losses(0.3));
        assert!((2.0 * b - a - c).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_disconnects_the_shortcut_gradient() {
        let mut g = Graph::<f64>::new();
        let wmain = g.leaf(Tensor::scalar(2.0).with_grad());
        let wshort = g.leaf(Tensor::scalar(5.0).with_grad());
        // scale-by-zero keeps the node in the graph but kills the gradient
        let scaled = g.scale(wshort, 0.0);
        let total = g.add(wmain, scaled).unwrap();
        g.backward(total).unwrap();
        assert_eq!(g.grad(wmain).unwrap(), &[1.0]);
        assert_eq!(g.grad(wshort).unwrap(), &[0.0]);
    }

    #[test]
    fn config_validation_catches_bad_milestones() {
        let bad = TrainConfig { milestones: vec![180, 120], ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let late = TrainConfig { milestones: vec![120, 240], ..TrainConfig::default() };
        assert!(late.validate().is_err());
        let negative = TrainConfig { shortcut_weight: -0.1, ..TrainConfig::default() };
        assert!(negative.validate().is_err());
    }

    #[test]
    fn run_config_resolves_presets_and_flatten_override() {
        let rc = RunConfig {
            train: TrainConfig {
                preset: Preset::Tiny,
                flatten: Some(FlattenMode::Concat),
                ..TrainConfig::default()
            },
            network: None,
        };
        let (_, net) = rc.resolve().unwrap();
        assert_eq!(net.flatten, FlattenMode::Concat);
        assert_eq!(net.n_classes, 28);
        assert_eq!(net.canvas.width, 256);
    }
}
