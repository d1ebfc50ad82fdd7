//! Central finite-difference checks of every differentiable operator, in
//! double precision. Backs the `gradcheck` CLI subcommand and the
//! acceptance suite.
//!
//! Each check rebuilds its little graph per probe, compares the analytic
//! gradient against `(f(x+h) - f(x-h)) / 2h` with `h = 1e-5`, and reports
//! the worst relative error seen across seeds (relative error with a unit
//! floor: `|a-n| / max(1, |a|, |n|)`).

use crate::ctc;
use crate::error::Result;
use crate::tensor::{Graph, LstmParamVars, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOLERANCE: f64 = 1e-4;
pub const DEFAULT_SEEDS: usize = 20;
const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub op: &'static str,
    pub seeds: usize,
    pub max_rel_err: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err < TOLERANCE
    }
}

/// Runs every operator check; the suite passes when every report does.
pub fn run_all(seeds: usize) -> Vec<CheckReport> {
    vec![
        check_conv2d(seeds),
        check_conv1d(seeds),
        check_maxpool2d(seeds),
        check_batchnorm(seeds),
        check_linear(seeds),
        check_bilstm(seeds),
        check_stacked_bilstm(seeds),
        check_log_softmax(seeds),
        check_ctc_loss(seeds),
        check_composite(seeds),
    ]
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1.0f64.max(a.abs()).max(n.abs())
}

/// Shared probe loop: `build` turns the current input values into a scalar
/// loss on a fresh graph.
fn fd_max_err(
    inputs: &[(Vec<usize>, Vec<f64>)],
    build: &mut dyn FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
) -> f64 {
    let eval = |values: &[Vec<f64>], build: &mut dyn FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs
            .iter()
            .zip(values)
            .map(|((shape, _), data)| {
                g.leaf(Tensor::new(shape.clone(), data.clone()).expect("probe shape"))
            })
            .collect();
        let loss = build(&mut g, &vars).expect("probe graph");
        g.value(loss).data[0]
    };

    // analytic pass
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|(shape, data)| {
            g.leaf(Tensor::new(shape.clone(), data.clone()).expect("probe shape").with_grad())
        })
        .collect();
    let loss = build(&mut g, &vars).expect("probe graph");
    g.backward(loss).expect("probe backward");
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, (_, data))| g.grad(v).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; data.len()]))
        .collect();

    let mut values: Vec<Vec<f64>> = inputs.iter().map(|(_, d)| d.clone()).collect();
    let mut worst = 0.0f64;
    for i in 0..values.len() {
        for j in 0..values[i].len() {
            let orig = values[i][j];
            values[i][j] = orig + FD_STEP;
            let up = eval(&values, build);
            values[i][j] = orig - FD_STEP;
            let down = eval(&values, build);
            values[i][j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[i][j], numeric));
        }
    }
    worst
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<f64>) {
    let n: usize = shape.iter().product();
    (shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect())
}

/// Random values with guaranteed pairwise separation, so max-style ops keep
/// their argmax under the probe step.
fn separated(shape: &[usize], rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<f64>) {
    let n: usize = shape.iter().product();
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    let data = perm
        .iter()
        .map(|&p| p as f64 / n as f64 + rng.random_range(-1.0..1.0) * 1e-3)
        .collect();
    (shape.to_vec(), data)
}

/// Loss head shared by the checks: a fixed random projection of the output
/// to a scalar, so every output element influences the result.
fn weighted_sum(g: &mut Graph<f64>, y: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
    let shape = g.value(y).shape.clone();
    let w = Tensor::uniform(shape, -1.0, 1.0, rng);
    let wv = g.leaf(w);
    let p = g.mul(y, wv)?;
    Ok(g.sum(p))
}

pub fn check_conv2d(seeds: usize) -> CheckReport {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
        let inputs = vec![
            uniform(&[1, 2, 4, 5], -1.0, 1.0, &mut rng),
            uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut rng),
            uniform(&[3], -0.5, 0.5, &mut rng),
        ];
        let head_rng = ChaCha8Rng::seed_from_u64(seed as u64 ^ 0xAAAA);
        worst = worst.max(fd_max_err(&inputs, &mut |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], 1, 1)?;
            weighted_sum(g, y, &mut head_rng.clone())
        }));
    }
    CheckReport { op: "conv2d", seeds, max_rel_err: worst }
}

pub fn check_conv1d(seeds: usize) -> CheckReport {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed as u64);
        let inputs = vec![
            uniform(&[1, 5, 3], -1.0, 1.0, &mut rng),
            uniform(&[4, 3, 3], -1.0, 1.0, &mut rng),
            uniform(&[4], -0.5, 0.5, &mut rng),
        ];
        let head_rng = ChaCha8Rng::seed_from_u64(seed as u64 ^ 0xBBBB);
        worst = worst.max(fd_max_err(&inputs, &mut |g, v| {
            let y = g.conv1d(v[0], v[1], v[2])?;
            weighted_sum(g, y, &mut head_rng.clone())
        }));
    }
    CheckReport { op: "conv1d", seeds, max_rel_err: worst }
}

pub fn check_maxpool2d(seeds: usize) -> CheckReport {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed as u64);
        let inputs = vec![separated(&[1, 2, 4, 6], &mut rng)];
        let head_rng = ChaCha8Rng::seed_from_u64(seed as u64 ^ 0xCCCC);
        worst = worst.max(fd_max_err(&inputs, &mut |g, v| {
            let y = g.maxpool2d(v[0])?;
            weighted_sum(g, y, &mut head_rng.clone())
        }));
    }
    CheckReport { op: "maxpool2d", seeds, max_rel_err: worst }
}

pub fn check_batchnorm(seeds: usize) -> CheckReport {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed as u64);
        let inputs = vec![
            uniform(&[2, 3, 2, 2], -1.0, 1.0, &mut rng),
            uniform(&[3], 0.5, 1.5, &mut rng),
            uniform(&[3], -0.5, 0.5, &mut rng),
        ];
        let head_rng = ChaCha8Rng::seed_from_u64(seed as u64 ^ 0xDDDD);
        worst = worst.max(fd_max_err(&inputs, &mut |g, v| {
            let (y, _) = g.batchnorm_train(v[0], v[1], v[2])?;
            weighted_sum(g, y, &mut head_rng.clone())
        }));
    }
    CheckReport { op: "batchnorm", seeds, max_rel_err: worst }
}

pub fn check_linear(seeds: usize) -> CheckReport {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed as u64);
        let inputs = vec![
            uniform(&[3, 4], -1.0, 1.0, &mut rng),
            uniform(&[5, 4], -1.0, 1.0, &mut rng),
            uniform(&[5], -0.5, 0.5, &mut rng),
        ];
        let head_rng = ChaCha8Rng::seed_from_u64(seed as u64 ^ 0xEEEE);
        worst = worst.max(fd_max_err(&inputs, &mut |g, v| {
            let y = g.linear(v[0], v[1], v[2])?;
            weighted_sum(g, y, &mut head_rng.clone())
        }));
    }
    CheckReport { op: "linear", seeds, max_rel_err: worst }
}

pub fn check_bilstm(seeds: usize) -> CheckReport {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed as u64);
        let hidden = 2;
        let inputs = vec![
            uniform(&[1, 3, 2], -1.0, 1.0, &mut rng),
            uniform(&[4 * hidden, 2], -0.7, 0.7, &mut rng),
            uniform(&[4 * hidden, hidden], -0.7, 0.7, &mut rng),
            uniform(&[4 * hidden], -0.5, 0.5, &mut rng),
            uniform(&[4 * hidden, 2], -0.7, 0.7, &mut rng),
            uniform(&[4 * hidden, hidden], -0.7, 0.7, &mut rng),
            uniform(&[4 * hidden], -0.5, 0.5, &mut rng),
        ];
        let head_rng = ChaCha8Rng::seed_from_u64(seed as u64 ^ 0xFFFF);
        worst = worst.max(fd_max_err(&inputs, &mut |g, v| {
            let fwd = LstmParamVars { w_ih: v[1], w_hh: v[2], bias: v[3] };
            let bwd = LstmParamVars { w_ih: v[4], w_hh: v[5], bias: v[6] };
            let y = g.bilstm(v[0], fwd, bwd)?;
            weighted_sum(g, y, &mut head_rng.clone())
        }));
    }
    CheckReport { op: "bilstm_layer", seeds, max_rel_err: worst }
}

/// Three stacked bidirectional layers on tiny dims, gradients taken
/// through the whole chain.
pub fn check_stacked_bilstm(seeds: usize) -> CheckReport {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(550 + seed as u64);
        let hidden = 2;
        let h4 = 4 * hidden;
        // input, then (w_ih, w_hh, bias) per direction per layer
        let mut inputs = vec![uniform(&[1, 3, 2], -1.0, 1.0, &mut rng)];
        let mut d = 2;
        for _layer in 0..3 {
            for _dir in 0..2 {
                inputs.push(uniform(&[h4, d], -0.7, 0.7, &mut rng));
                inputs.push(uniform(&[h4, hidden], -0.7, 0.7, &mut rng));
                inputs.push(uniform(&[h4], -0.5, 0.5, &mut rng));
            }
            d = 2 * hidden;
        }
        let head_rng = ChaCha8Rng::seed_from_u64(seed as u64 ^ 0x3333);
        worst = worst.max(fd_max_err(&inputs, &mut |g, v| {
            let mut s = v[0];
            for layer in 0..3 {
                let base = 1 + layer * 6;
                let fwd = LstmParamVars { w_ih: v[base], w_hh: v[base + 1], bias: v[base + 2] };
                let bwd =
                    LstmParamVars { w_ih: v[base + 3], w_hh: v[base + 4], bias: v[base + 5] };
                s = g.bilstm(s, fwd, bwd)?;
            }
            weighted_sum(g, s, &mut head_rng.clone())
        }));
    }
    CheckReport { op: "stacked_bilstm", seeds, max_rel_err: worst }
}

pub fn check_log_softmax(seeds: usize) -> CheckReport {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed as u64);
        let inputs = vec![uniform(&[3, 5], -2.0, 2.0, &mut rng)];
        let head_rng = ChaCha8Rng::seed_from_u64(seed as u64 ^ 0x1111);
        worst = worst.max(fd_max_err(&inputs, &mut |g, v| {
            let y = g.log_softmax(v[0]);
            weighted_sum(g, y, &mut head_rng.clone())
        }));
    }
    CheckReport { op: "log_softmax", seeds, max_rel_err: worst }
}

pub fn check_ctc_loss(seeds: usize) -> CheckReport {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed as u64);
        let classes = 4;
        let frames = 5;
        let u = rng.random_range(1..=3usize);
        let labels: Vec<usize> = (0..u).map(|_| rng.random_range(1..classes)).collect();
        if ctc::min_frames(&labels) > frames {
            continue;
        }
        let inputs = vec![uniform(&[1, frames, classes], -2.0, 2.0, &mut rng)];
        let targets = vec![labels.clone()];
        worst = worst.max(fd_max_err(&inputs, &mut |g, v| g.ctc_loss(v[0], &targets)));
    }
    CheckReport { op: "ctc_loss", seeds, max_rel_err: worst }
}

/// A chained slice of the real model: convolution, concat flatten, linear
/// projection, log-softmax.
pub fn check_composite(seeds: usize) -> CheckReport {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + seed as u64);
        let inputs = vec![
            uniform(&[1, 2, 4, 4], -1.0, 1.0, &mut rng),
            uniform(&[2, 2, 3, 3], -0.7, 0.7, &mut rng),
            uniform(&[2], -0.3, 0.3, &mut rng),
            uniform(&[3, 8], -0.7, 0.7, &mut rng),
            uniform(&[3], -0.3, 0.3, &mut rng),
        ];
        let head_rng = ChaCha8Rng::seed_from_u64(seed as u64 ^ 0x2222);
        worst = worst.max(fd_max_err(&inputs, &mut |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], 1, 1)?;
            let s = g.flatten_concat(y)?;
            let l = g.linear(s, v[3], v[4])?;
            let p = g.log_softmax(l);
            weighted_sum(g, p, &mut head_rng.clone())
        }));
    }
    CheckReport { op: "composite_chain", seeds, max_rel_err: worst }
}
