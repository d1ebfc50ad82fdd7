//! The recognizer: a ResNet-style convolutional backbone, a column-wise
//! flattening step (max-pool or concatenation), a stacked BiLSTM head with a
//! linear projection to class logits, and a train-only 1-D convolutional
//! shortcut branch that decodes the flattened backbone features directly.
//!
//! Backbone layout: a 7×7 stem convolution (stride 1), then three cascades
//! of 3×3 residual blocks with a 2×2/2 max-pool in front of each cascade —
//! total downscale 8 in both axes, so a `H×W` canvas leaves as an
//! `(H/8)×(W/8)` map and the decoded sequence has `W/8` steps.

use crate::error::{Error, Result};
use crate::preprocess::CanvasSpec;
use crate::scalar::Scalar;
use crate::tensor::{BatchStats, Graph, LstmParamVars, Tensor, Var, BN_MOMENTUM};
use crate::Mode;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// How the backbone map becomes a sequence of feature vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlattenMode {
    /// Column-wise max over rows: `d` features per step, invariant to the
    /// vertical position of strokes.
    Maxpool,
    /// Column-wise concatenation of all rows: `h·d` features per step.
    Concat,
}

impl std::fmt::Display for FlattenMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FlattenMode::Maxpool => write!(f, "max-pooling"),
            FlattenMode::Concat => write!(f, "concatenation"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub canvas: CanvasSpec,
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub block_counts: [usize; 3],
    pub block_channels: [usize; 3],
    pub dropout_p: f64,
    pub flatten: FlattenMode,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    pub shortcut_enabled: bool,
    /// Which flattening feeds the shortcut branch. Defaults to max-pooled
    /// features even when the main head concatenates; overridable for the
    /// ablation grid.
    pub shortcut_flatten: FlattenMode,
    pub n_classes: usize,
}

pub const DOWNSCALE: usize = 8;

impl NetworkConfig {
    /// Full-size configuration for 128×1024 line images.
    pub fn line(n_classes: usize) -> Self {
        NetworkConfig {
            canvas: CanvasSpec::line(),
            stem_channels: 32,
            stem_kernel: 7,
            block_counts: [2, 4, 4],
            block_channels: [64, 128, 256],
            dropout_p: 0.1,
            flatten: FlattenMode::Maxpool,
            lstm_layers: 3,
            lstm_hidden: 256,
            shortcut_enabled: true,
            shortcut_flatten: FlattenMode::Maxpool,
            n_classes,
        }
    }

    /// Full-size configuration for 64×256 word images.
    pub fn word(n_classes: usize) -> Self {
        NetworkConfig { canvas: CanvasSpec::word(), ..Self::line(n_classes) }
    }

    /// Desk-scale configuration: 32×256 canvas, one block per cascade,
    /// one BiLSTM layer of hidden size 64, no dropout (overfitting a tiny
    /// corpus is the point of this preset).
    pub fn tiny(n_classes: usize) -> Self {
        NetworkConfig {
            canvas: CanvasSpec::tiny(),
            stem_channels: 16,
            block_counts: [1, 1, 1],
            block_channels: [16, 32, 64],
            lstm_hidden: 64,
            lstm_layers: 1,
            dropout_p: 0.0,
            ..Self::line(n_classes)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.canvas.height % DOWNSCALE != 0 || self.canvas.width % DOWNSCALE != 0 {
            return Err(Error::config(format!(
                "canvas {}×{} is not divisible by the backbone downscale {DOWNSCALE}",
                self.canvas.height, self.canvas.width
            )));
        }
        if self.stem_kernel % 2 == 0 {
            return Err(Error::config("stem kernel must be odd"));
        }
        if self.n_classes < 2 {
            return Err(Error::config("need at least one real class besides the blank"));
        }
        if self.lstm_layers == 0 || self.lstm_hidden == 0 {
            return Err(Error::config("recurrent head needs at least one layer"));
        }
        if self.block_counts.iter().any(|&c| c == 0) {
            return Err(Error::config("every cascade needs at least one block"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout_p)));
        }
        Ok(())
    }

    /// Decoded sequence length for this canvas.
    pub fn seq_len(&self) -> usize {
        self.canvas.width / DOWNSCALE
    }

    /// Backbone output height.
    pub fn map_height(&self) -> usize {
        self.canvas.height / DOWNSCALE
    }

    /// Feature size a flattening mode produces per sequence step.
    pub fn flatten_dim(&self, mode: FlattenMode) -> usize {
        match mode {
            FlattenMode::Maxpool => self.block_channels[2],
            FlattenMode::Concat => self.map_height() * self.block_channels[2],
        }
    }
}

struct Conv2dLayer<T> {
    weight: Tensor<T>, // K×C×kh×kw
    bias: Tensor<T>,   // K
    padding: usize,
}

struct BnLayer<T> {
    gamma: Tensor<T>,
    beta: Tensor<T>,
    running_mean: Vec<T>,
    running_var: Vec<T>,
}

struct ResBlock<T> {
    conv1: Conv2dLayer<T>,
    bn1: BnLayer<T>,
    conv2: Conv2dLayer<T>,
    bn2: BnLayer<T>,
    /// 1×1 projection when the channel count changes at a cascade boundary.
    proj: Option<Conv2dLayer<T>>,
}

struct LstmDir<T> {
    w_ih: Tensor<T>,
    w_hh: Tensor<T>,
    bias: Tensor<T>,
}

struct BiLstmLayer<T> {
    fwd: LstmDir<T>,
    bwd: LstmDir<T>,
}

struct Conv1dLayer<T> {
    weight: Tensor<T>, // K×C×3
    bias: Tensor<T>,
}

struct LinearLayer<T> {
    weight: Tensor<T>, // K×D
    bias: Tensor<T>,
}

/// The model: configuration plus parameters and batch-norm running stats.
pub struct Network<T: Scalar> {
    cfg: NetworkConfig,
    stem: Conv2dLayer<T>,
    stem_bn: BnLayer<T>,
    cascades: Vec<Vec<ResBlock<T>>>,
    lstms: Vec<BiLstmLayer<T>>,
    proj: LinearLayer<T>,
    shortcut: Option<Conv1dLayer<T>>,
}

/// Graph handles produced by one forward pass.
pub struct ForwardOutput {
    /// Raw logits of the recurrent head, `B×(W/8)×n_classes`.
    pub main_logits: Var,
    /// Raw logits of the shortcut branch (train mode with the branch
    /// enabled), same shape.
    pub shortcut_logits: Option<Var>,
    /// Backbone feature map, `B×d×(H/8)×(W/8)`.
    pub fmap: Var,
    /// Flattened main sequence, `B×(W/8)×D`.
    pub seq: Var,
    pub params: ParamBinding,
}

/// Name-addressed graph leaves of the parameters bound by a forward pass.
pub struct ParamBinding {
    pairs: Vec<(String, Var)>,
}

impl ParamBinding {
    pub fn var(&self, name: &str) -> Option<Var> {
        self.pairs.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }

    pub fn pairs(&self) -> &[(String, Var)] {
        &self.pairs
    }
}

fn he_uniform<T: Scalar>(shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}

fn conv2d_init<T: Scalar>(
    k: usize,
    c: usize,
    kernel: usize,
    padding: usize,
    rng: &mut ChaCha8Rng,
) -> Conv2dLayer<T> {
    Conv2dLayer {
        weight: he_uniform(vec![k, c, kernel, kernel], c * kernel * kernel, rng),
        bias: Tensor::zeros(vec![k]),
        padding,
    }
}

fn bn_init<T: Scalar>(c: usize) -> BnLayer<T> {
    BnLayer {
        gamma: Tensor::full(vec![c], T::one()),
        beta: Tensor::zeros(vec![c]),
        running_mean: vec![T::zero(); c],
        running_var: vec![T::one(); c],
    }
}

fn lstm_dir_init<T: Scalar>(d: usize, hidden: usize, rng: &mut ChaCha8Rng) -> LstmDir<T> {
    let bound = 1.0 / (hidden as f64).sqrt();
    let w_ih = Tensor::uniform(vec![4 * hidden, d], -bound, bound, rng);
    let w_hh = Tensor::uniform(vec![4 * hidden, hidden], -bound, bound, rng);
    // forget-gate bias starts at 1 so early cells remember by default
    let mut bias = Tensor::zeros(vec![4 * hidden]);
    for j in hidden..2 * hidden {
        bias.data[j] = T::one();
    }
    LstmDir { w_ih, w_hh, bias }
}

impl<T: Scalar> Network<T> {
    /// Builds a freshly initialized model. The parameter count depends only
    /// on the configuration; the seed fixes the initial values.
    pub fn build(cfg: NetworkConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stem = conv2d_init(cfg.stem_channels, 1, cfg.stem_kernel, cfg.stem_kernel / 2, &mut rng);
        let stem_bn = bn_init(cfg.stem_channels);

        let mut cascades = Vec::with_capacity(3);
        let mut prev = cfg.stem_channels;
        for ci in 0..3 {
            let out = cfg.block_channels[ci];
            let mut blocks = Vec::with_capacity(cfg.block_counts[ci]);
            for _ in 0..cfg.block_counts[ci] {
                let conv1 = conv2d_init(out, prev, 3, 1, &mut rng);
                let bn1 = bn_init(out);
                let conv2 = conv2d_init(out, out, 3, 1, &mut rng);
                let bn2 = bn_init(out);
                let proj = (prev != out).then(|| conv2d_init(out, prev, 1, 0, &mut rng));
                blocks.push(ResBlock { conv1, bn1, conv2, bn2, proj });
                prev = out;
            }
            cascades.push(blocks);
        }

        let mut lstms = Vec::with_capacity(cfg.lstm_layers);
        let mut d = cfg.flatten_dim(cfg.flatten);
        for _ in 0..cfg.lstm_layers {
            lstms.push(BiLstmLayer {
                fwd: lstm_dir_init(d, cfg.lstm_hidden, &mut rng),
                bwd: lstm_dir_init(d, cfg.lstm_hidden, &mut rng),
            });
            d = 2 * cfg.lstm_hidden;
        }
        let bound = 1.0 / (d as f64).sqrt();
        let proj = LinearLayer {
            weight: Tensor::uniform(vec![cfg.n_classes, d], -bound, bound, &mut rng),
            bias: Tensor::zeros(vec![cfg.n_classes]),
        };

        let shortcut = cfg.shortcut_enabled.then(|| {
            let c = cfg.flatten_dim(cfg.shortcut_flatten);
            Conv1dLayer {
                weight: he_uniform(vec![cfg.n_classes, c, 3], c * 3, &mut rng),
                bias: Tensor::zeros(vec![cfg.n_classes]),
            }
        });

        Ok(Network { cfg, stem, stem_bn, cascades, lstms, proj, shortcut })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    /// Drops the shortcut branch and clears its config flag. Evaluation
    /// outputs are unchanged: the branch never runs outside training.
    pub fn without_shortcut(mut self) -> Self {
        self.shortcut = None;
        self.cfg.shortcut_enabled = false;
        self
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, t| n += t.numel());
        n
    }

    /// Parameter count of the shortcut branch alone.
    pub fn shortcut_param_count(&self) -> usize {
        self.shortcut.as_ref().map_or(0, |s| s.weight.numel() + s.bias.numel())
    }

    /// Visits every trainable parameter in a fixed order (the checkpoint
    /// block order).
    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f("stem.weight", &self.stem.weight);
        f("stem.bias", &self.stem.bias);
        f("stem_bn.gamma", &self.stem_bn.gamma);
        f("stem_bn.beta", &self.stem_bn.beta);
        let mut i = 0;
        for cascade in &self.cascades {
            for b in cascade {
                f(&format!("block{i}.conv1.weight"), &b.conv1.weight);
                f(&format!("block{i}.conv1.bias"), &b.conv1.bias);
                f(&format!("block{i}.bn1.gamma"), &b.bn1.gamma);
                f(&format!("block{i}.bn1.beta"), &b.bn1.beta);
                f(&format!("block{i}.conv2.weight"), &b.conv2.weight);
                f(&format!("block{i}.conv2.bias"), &b.conv2.bias);
                f(&format!("block{i}.bn2.gamma"), &b.bn2.gamma);
                f(&format!("block{i}.bn2.beta"), &b.bn2.beta);
                if let Some(p) = &b.proj {
                    f(&format!("block{i}.proj.weight"), &p.weight);
                    f(&format!("block{i}.proj.bias"), &p.bias);
                }
                i += 1;
            }
        }
        for (li, l) in self.lstms.iter().enumerate() {
            for (tag, dir) in [("fwd", &l.fwd), ("bwd", &l.bwd)] {
                f(&format!("lstm{li}.{tag}.w_ih"), &dir.w_ih);
                f(&format!("lstm{li}.{tag}.w_hh"), &dir.w_hh);
                f(&format!("lstm{li}.{tag}.bias"), &dir.bias);
            }
        }
        f("proj.weight", &self.proj.weight);
        f("proj.bias", &self.proj.bias);
        if let Some(s) = &self.shortcut {
            f("shortcut.weight", &s.weight);
            f("shortcut.bias", &s.bias);
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f("stem.weight", &mut self.stem.weight);
        f("stem.bias", &mut self.stem.bias);
        f("stem_bn.gamma", &mut self.stem_bn.gamma);
        f("stem_bn.beta", &mut self.stem_bn.beta);
        let mut i = 0;
        for cascade in &mut self.cascades {
            for b in cascade {
                f(&format!("block{i}.conv1.weight"), &mut b.conv1.weight);
                f(&format!("block{i}.conv1.bias"), &mut b.conv1.bias);
                f(&format!("block{i}.bn1.gamma"), &mut b.bn1.gamma);
                f(&format!("block{i}.bn1.beta"), &mut b.bn1.beta);
                f(&format!("block{i}.conv2.weight"), &mut b.conv2.weight);
                f(&format!("block{i}.conv2.bias"), &mut b.conv2.bias);
                f(&format!("block{i}.bn2.gamma"), &mut b.bn2.gamma);
                f(&format!("block{i}.bn2.beta"), &mut b.bn2.beta);
                if let Some(p) = &mut b.proj {
                    f(&format!("block{i}.proj.weight"), &mut p.weight);
                    f(&format!("block{i}.proj.bias"), &mut p.bias);
                }
                i += 1;
            }
        }
        for (li, l) in self.lstms.iter_mut().enumerate() {
            for (tag, dir) in [("fwd", &mut l.fwd), ("bwd", &mut l.bwd)] {
                f(&format!("lstm{li}.{tag}.w_ih"), &mut dir.w_ih);
                f(&format!("lstm{li}.{tag}.w_hh"), &mut dir.w_hh);
                f(&format!("lstm{li}.{tag}.bias"), &mut dir.bias);
            }
        }
        f("proj.weight", &mut self.proj.weight);
        f("proj.bias", &mut self.proj.bias);
        if let Some(s) = &mut self.shortcut {
            f("shortcut.weight", &mut s.weight);
            f("shortcut.bias", &mut s.bias);
        }
    }

    /// Visits the batch-norm running statistics in a fixed order.
    pub fn visit_buffers(&self, f: &mut dyn FnMut(&str, &[T])) {
        for (name, bn) in self.bn_layers_named() {
            f(&format!("{name}.running_mean"), &bn.running_mean);
            f(&format!("{name}.running_var"), &bn.running_var);
        }
    }

    pub fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Vec<T>)) {
        let names: Vec<String> = self.bn_layers_named().iter().map(|(n, _)| n.clone()).collect();
        for (name, bn) in names.into_iter().zip(self.bn_layers_mut()) {
            f(&format!("{name}.running_mean"), &mut bn.running_mean);
            f(&format!("{name}.running_var"), &mut bn.running_var);
        }
    }

    fn bn_layers_named(&self) -> Vec<(String, &BnLayer<T>)> {
        let mut v: Vec<(String, &BnLayer<T>)> = vec![("stem_bn".into(), &self.stem_bn)];
        let mut i = 0;
        for cascade in &self.cascades {
            for b in cascade {
                v.push((format!("block{i}.bn1"), &b.bn1));
                v.push((format!("block{i}.bn2"), &b.bn2));
                i += 1;
            }
        }
        v
    }

    fn bn_layers_mut(&mut self) -> Vec<&mut BnLayer<T>> {
        let mut v: Vec<&mut BnLayer<T>> = vec![&mut self.stem_bn];
        for cascade in &mut self.cascades {
            for b in cascade {
                v.push(&mut b.bn1);
                v.push(&mut b.bn2);
            }
        }
        v
    }

    /// Training forward pass: dropout active, batch-norm running statistics
    /// updated, the shortcut branch computed when enabled. Parameters are
    /// bound as trainable leaves so `backward` fills their gradients.
    pub fn forward_train(
        &mut self,
        g: &mut Graph<T>,
        images: Tensor<T>,
        rng: &mut ChaCha8Rng,
    ) -> Result<ForwardOutput> {
        let (out, stats) = self.run_forward(g, images, Mode::Train, true, rng)?;
        let m = T::from_f64_c(BN_MOMENTUM);
        let km = T::one() - m;
        for (bn, st) in self.bn_layers_mut().into_iter().zip(stats) {
            for (r, &b) in bn.running_mean.iter_mut().zip(&st.mean) {
                *r = km * *r + m * b;
            }
            for (r, &b) in bn.running_var.iter_mut().zip(&st.var) {
                *r = km * *r + m * b;
            }
        }
        Ok(out)
    }

    /// Deterministic inference pass: no dropout, running statistics, the
    /// shortcut branch never runs. Returns the main logits.
    pub fn forward_eval(&self, g: &mut Graph<T>, images: Tensor<T>) -> Result<Var> {
        Ok(self.forward_eval_full(g, images)?.main_logits)
    }

    /// [`Network::forward_eval`] with all intermediate handles (feature
    /// map, flattened sequence) exposed.
    pub fn forward_eval_full(&self, g: &mut Graph<T>, images: Tensor<T>) -> Result<ForwardOutput> {
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        let (out, _) = self.run_forward(g, images, Mode::Eval, false, &mut unused)?;
        Ok(out)
    }

    /// The shortcut branch on a flattened sequence. Train-time only:
    /// calling it on an evaluation path is a contract violation.
    pub fn shortcut_forward(&self, g: &mut Graph<T>, seq: Var, mode: Mode) -> Result<Var> {
        if mode == Mode::Eval {
            return Err(Error::config(
                "the shortcut branch is train-only and must not run at evaluation",
            ));
        }
        let sc = self
            .shortcut
            .as_ref()
            .ok_or_else(|| Error::config("shortcut branch is disabled in this config"))?;
        let w = g.leaf(sc.weight.clone().with_grad());
        let b = g.leaf(sc.bias.clone().with_grad());
        g.conv1d(seq, w, b)
    }

    fn run_forward(
        &self,
        g: &mut Graph<T>,
        images: Tensor<T>,
        mode: Mode,
        trainable: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<(ForwardOutput, Vec<BatchStats<T>>)> {
        if images.shape.len() != 4
            || images.shape[1] != 1
            || images.shape[2] != self.cfg.canvas.height
            || images.shape[3] != self.cfg.canvas.width
        {
            return Err(Error::shape(format!(
                "expected B×1×{}×{} images, got {:?}",
                self.cfg.canvas.height, self.cfg.canvas.width, images.shape
            )));
        }
        let mut binding = ParamBinding { pairs: Vec::new() };
        let mut stats = Vec::new();
        let p = self.cfg.dropout_p;

        let mut bind = |g: &mut Graph<T>, name: String, t: &Tensor<T>| -> Var {
            let mut leaf = t.clone();
            leaf.grad = None;
            leaf.requires_grad = trainable;
            let v = g.leaf(leaf);
            binding.pairs.push((name, v));
            v
        };

        let x = g.leaf(images);

        // stem: conv -> bn -> relu -> dropout -> pool
        let w = bind(g, "stem.weight".into(), &self.stem.weight);
        let b = bind(g, "stem.bias".into(), &self.stem.bias);
        let mut x = g.conv2d(x, w, b, 1, self.stem.padding)?;
        x = self.bn_forward(g, "stem_bn", &self.stem_bn, x, mode, &mut bind, &mut stats)?;
        x = g.relu(x);
        x = g.dropout(x, p, mode, rng)?;
        x = g.maxpool2d(x)?;

        let mut i = 0;
        for (ci, cascade) in self.cascades.iter().enumerate() {
            if ci > 0 {
                x = g.maxpool2d(x)?;
            }
            for blk in cascade {
                x = self.block_forward(g, i, blk, x, mode, rng, &mut bind, &mut stats)?;
                i += 1;
            }
        }
        let fmap = x;

        let seq = match self.cfg.flatten {
            FlattenMode::Maxpool => g.flatten_maxpool(fmap)?,
            FlattenMode::Concat => g.flatten_concat(fmap)?,
        };

        let mut s = seq;
        for (li, l) in self.lstms.iter().enumerate() {
            let fwd = LstmParamVars {
                w_ih: bind(g, format!("lstm{li}.fwd.w_ih"), &l.fwd.w_ih),
                w_hh: bind(g, format!("lstm{li}.fwd.w_hh"), &l.fwd.w_hh),
                bias: bind(g, format!("lstm{li}.fwd.bias"), &l.fwd.bias),
            };
            let bwd = LstmParamVars {
                w_ih: bind(g, format!("lstm{li}.bwd.w_ih"), &l.bwd.w_ih),
                w_hh: bind(g, format!("lstm{li}.bwd.w_hh"), &l.bwd.w_hh),
                bias: bind(g, format!("lstm{li}.bwd.bias"), &l.bwd.bias),
            };
            s = g.bilstm(s, fwd, bwd)?;
        }
        let pw = bind(g, "proj.weight".into(), &self.proj.weight);
        let pb = bind(g, "proj.bias".into(), &self.proj.bias);
        let main_logits = g.linear(s, pw, pb)?;

        let shortcut_logits = match (&self.shortcut, mode) {
            (Some(sc), Mode::Train) => {
                let in_seq = if self.cfg.shortcut_flatten == self.cfg.flatten {
                    seq
                } else {
                    match self.cfg.shortcut_flatten {
                        FlattenMode::Maxpool => g.flatten_maxpool(fmap)?,
                        FlattenMode::Concat => g.flatten_concat(fmap)?,
                    }
                };
                let w = bind(g, "shortcut.weight".into(), &sc.weight);
                let b = bind(g, "shortcut.bias".into(), &sc.bias);
                Some(g.conv1d(in_seq, w, b)?)
            }
            _ => None,
        };

        Ok((
            ForwardOutput { main_logits, shortcut_logits, fmap, seq, params: binding },
            stats,
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn block_forward(
        &self,
        g: &mut Graph<T>,
        i: usize,
        blk: &ResBlock<T>,
        x: Var,
        mode: Mode,
        rng: &mut ChaCha8Rng,
        bind: &mut impl FnMut(&mut Graph<T>, String, &Tensor<T>) -> Var,
        stats: &mut Vec<BatchStats<T>>,
    ) -> Result<Var> {
        let w1 = bind(g, format!("block{i}.conv1.weight"), &blk.conv1.weight);
        let b1 = bind(g, format!("block{i}.conv1.bias"), &blk.conv1.bias);
        let mut y = g.conv2d(x, w1, b1, 1, blk.conv1.padding)?;
        y = self.bn_forward(g, &format!("block{i}.bn1"), &blk.bn1, y, mode, bind, stats)?;
        y = g.relu(y);
        let w2 = bind(g, format!("block{i}.conv2.weight"), &blk.conv2.weight);
        let b2 = bind(g, format!("block{i}.conv2.bias"), &blk.conv2.bias);
        y = g.conv2d(y, w2, b2, 1, blk.conv2.padding)?;
        y = self.bn_forward(g, &format!("block{i}.bn2"), &blk.bn2, y, mode, bind, stats)?;
        let sc = match &blk.proj {
            Some(p) => {
                let pw = bind(g, format!("block{i}.proj.weight"), &p.weight);
                let pb = bind(g, format!("block{i}.proj.bias"), &p.bias);
                g.conv2d(x, pw, pb, 1, 0)?
            }
            None => x,
        };
        y = g.add(y, sc)?;
        y = g.relu(y);
        g.dropout(y, self.cfg.dropout_p, mode, rng)
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_forward(
        &self,
        g: &mut Graph<T>,
        name: &str,
        bn: &BnLayer<T>,
        x: Var,
        mode: Mode,
        bind: &mut impl FnMut(&mut Graph<T>, String, &Tensor<T>) -> Var,
        stats: &mut Vec<BatchStats<T>>,
    ) -> Result<Var> {
        let ga = bind(g, format!("{name}.gamma"), &bn.gamma);
        let be = bind(g, format!("{name}.beta"), &bn.beta);
        match mode {
            Mode::Train => {
                let (v, st) = g.batchnorm_train(x, ga, be)?;
                stats.push(st);
                Ok(v)
            }
            Mode::Eval => g.batchnorm_eval(x, ga, be, &bn.running_mean, &bn.running_var),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const N_CLASSES: usize = 28;

    #[test]
    fn parameter_count_is_seed_free() {
        let a = Network::<f32>::build(NetworkConfig::tiny(N_CLASSES), 1).unwrap();
        let b = Network::<f32>::build(NetworkConfig::tiny(N_CLASSES), 2).unwrap();
        assert_eq!(a.param_count(), b.param_count());
        assert!(a.param_count() > 0);
    }

    #[test]
    fn tiny_preset_decodes_32_steps() {
        let cfg = NetworkConfig::tiny(N_CLASSES);
        assert_eq!(cfg.seq_len(), 32);
        let net = Network::<f32>::build(cfg, 7).unwrap();
        let mut g = Graph::new();
        let images = Tensor::zeros(vec![2, 1, 32, 256]);
        let logits = net.forward_eval(&mut g, images).unwrap();
        assert_eq!(g.value(logits).shape, vec![2, 32, N_CLASSES]);
        assert!(g.value(logits).data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let net = Network::<f32>::build(NetworkConfig::tiny(N_CLASSES), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let images = Tensor::<f32>::uniform(vec![1, 1, 32, 256], 0.0, 1.0, &mut rng);
        let mut g1 = Graph::new();
        let y1 = net.forward_eval(&mut g1, images.clone()).unwrap();
        let mut g2 = Graph::new();
        let y2 = net.forward_eval(&mut g2, images).unwrap();
        assert_eq!(g1.value(y1).data, g2.value(y2).data);
    }

    #[test]
    fn zero_parameter_head_outputs_the_bias() {
        let mut net = Network::<f32>::build(NetworkConfig::tiny(N_CLASSES), 0).unwrap();
        net.visit_params_mut(&mut |name, t| {
            if name.starts_with("lstm") || name.starts_with("proj") {
                t.data.iter_mut().for_each(|v| *v = 0.0);
            }
        });
        net.visit_params_mut(&mut |name, t| {
            if name == "proj.bias" {
                for (k, v) in t.data.iter_mut().enumerate() {
                    *v = k as f32 * 0.5;
                }
            }
        });
        let mut g = Graph::new();
        let images = Tensor::full(vec![1, 1, 32, 256], 0.3);
        let logits = net.forward_eval(&mut g, images).unwrap();
        for step in g.value(logits).data.chunks(N_CLASSES) {
            for (k, &v) in step.iter().enumerate() {
                assert_eq!(v, k as f32 * 0.5);
            }
        }
    }

    #[test]
    fn shortcut_parameter_count_follows_conv_arithmetic() {
        let cfg = NetworkConfig::tiny(N_CLASSES);
        let d = cfg.flatten_dim(cfg.shortcut_flatten);
        let net = Network::<f32>::build(cfg, 0).unwrap();
        assert_eq!(net.shortcut_param_count(), 3 * d * N_CLASSES + N_CLASSES);
    }

    #[test]
    fn eval_forward_ignores_shortcut_parameters() {
        let cfg_on = NetworkConfig::tiny(N_CLASSES);
        let cfg_off = NetworkConfig { shortcut_enabled: false, ..cfg_on.clone() };
        let a = Network::<f32>::build(cfg_on, 9).unwrap();
        let b = Network::<f32>::build(cfg_off, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let images = Tensor::<f32>::uniform(vec![1, 1, 32, 256], 0.0, 1.0, &mut rng);
        let mut g1 = Graph::new();
        let y1 = a.forward_eval(&mut g1, images.clone()).unwrap();
        let mut g2 = Graph::new();
        let y2 = b.forward_eval(&mut g2, images).unwrap();
        assert_eq!(g1.value(y1).data, g2.value(y2).data);
    }

    #[test]
    fn shortcut_forward_rejects_eval_mode() {
        let net = Network::<f32>::build(NetworkConfig::tiny(N_CLASSES), 0).unwrap();
        let mut g = Graph::new();
        let seq = g.leaf(Tensor::zeros(vec![1, 32, 64]));
        assert!(net.shortcut_forward(&mut g, seq, Mode::Eval).is_err());
        let y = net.shortcut_forward(&mut g, seq, Mode::Train).unwrap();
        assert_eq!(g.value(y).shape, vec![1, 32, N_CLASSES]);
    }

    #[test]
    fn shortcut_gradients_reach_backbone_but_not_head() {
        let mut net = Network::<f32>::build(NetworkConfig::tiny(N_CLASSES), 2).unwrap();
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let images = Tensor::<f32>::uniform(vec![1, 1, 32, 256], 0.0, 1.0, &mut rng);
        let out = net.forward_train(&mut g, images, &mut rng).unwrap();
        let short = out.shortcut_logits.expect("shortcut enabled");
        let loss = g.ctc_loss(short, &[vec![2, 3]]).unwrap();
        g.backward(loss).unwrap();
        let grad_norm = |name: &str| -> f32 {
            out.params
                .var(name)
                .and_then(|v| g.grad(v))
                .map(|gr| gr.iter().map(|x| x * x).sum())
                .unwrap_or(0.0)
        };
        assert!(grad_norm("stem.weight") > 0.0, "backbone got no shortcut gradient");
        assert!(grad_norm("shortcut.weight") > 0.0);
        assert_eq!(grad_norm("lstm0.fwd.w_ih"), 0.0);
        assert_eq!(grad_norm("proj.weight"), 0.0);
    }

    #[test]
    fn concat_flatten_feeds_wider_head() {
        let cfg = NetworkConfig { flatten: FlattenMode::Concat, ..NetworkConfig::tiny(N_CLASSES) };
        assert_eq!(cfg.flatten_dim(FlattenMode::Concat), 4 * 64);
        let net = Network::<f32>::build(cfg, 0).unwrap();
        let mut g = Graph::new();
        let images = Tensor::zeros(vec![1, 1, 32, 256]);
        let logits = net.forward_eval(&mut g, images).unwrap();
        assert_eq!(g.value(logits).shape, vec![1, 32, N_CLASSES]);
    }

    #[test]
    fn invalid_canvas_is_rejected() {
        let mut cfg = NetworkConfig::tiny(N_CLASSES);
        cfg.canvas = CanvasSpec { height: 30, width: 250 };
        assert!(Network::<f32>::build(cfg, 0).is_err());
    }
}
