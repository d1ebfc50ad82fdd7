//! Connectionist temporal classification: loss, enumeration oracle, and
//! greedy decoding.
//!
//! The loss is the negative log-probability of a label sequence under all
//! monotonic alignments of the output lattice, computed by the standard
//! forward/backward dynamic program over the blank-extended target. All
//! recursions run in the log domain with log-sum-exp; `-inf` marks an
//! unreachable lattice state. The gradient with respect to the raw logits is
//! analytic, from the alpha/beta occupancies, and is installed in the
//! recording graph as a custom backward rule.

use crate::dataset::Alphabet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Op, Tensor, Var};

/// Reserved blank class index.
pub const BLANK: usize = 0;

/// Label sequence with blanks interleaved and appended at both ends:
/// `a b` becomes `- a - b -` (length `2U+1`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExtendedTarget {
    labels: Vec<usize>,
    extended: Vec<usize>,
}

impl ExtendedTarget {
    pub fn new(labels: &[usize]) -> Result<Self> {
        if labels.contains(&BLANK) {
            return Err(Error::data("target contains the blank id"));
        }
        let mut extended = Vec::with_capacity(2 * labels.len() + 1);
        extended.push(BLANK);
        for &l in labels {
            extended.push(l);
            extended.push(BLANK);
        }
        Ok(ExtendedTarget { labels: labels.to_vec(), extended })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// The interleaved sequence, `extended[even] = blank`,
    /// `extended[odd] = labels`.
    pub fn extended(&self) -> &[usize] {
        &self.extended
    }

    pub fn extended_len(&self) -> usize {
        self.extended.len()
    }

    /// Fewest lattice frames that can emit this target: one per label plus
    /// one separating blank per adjacent repeat.
    pub fn min_frames(&self) -> usize {
        let repeats = self.labels.windows(2).filter(|w| w[0] == w[1]).count();
        self.labels.len() + repeats
    }
}

/// Minimum frame count for a raw label sequence; see
/// [`ExtendedTarget::min_frames`].
pub fn min_frames(labels: &[usize]) -> usize {
    let repeats = labels.windows(2).filter(|w| w[0] == w[1]).count();
    labels.len() + repeats
}

const LOG_ZERO: f64 = f64::NEG_INFINITY;

fn log_sum_exp2(a: f64, b: f64) -> f64 {
    if a == LOG_ZERO {
        return b;
    }
    if b == LOG_ZERO {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Log-domain lattice of one CTC evaluation: per-frame log class
/// distributions plus the alpha/beta tables over the extended target.
pub struct CtcLattice {
    pub frames: usize,
    pub n_classes: usize,
    pub target: ExtendedTarget,
    /// `frames × n_classes` log-softmax of the logits.
    pub log_probs: Vec<f64>,
    /// `frames × (2U+1)`; prefix path mass, emission at the frame included.
    pub alpha: Vec<f64>,
    /// `frames × (2U+1)`; suffix path mass, emission at the frame included.
    pub beta: Vec<f64>,
    /// `log p(target | lattice)`
    pub log_likelihood: f64,
}

/// Runs the forward/backward recursions over `logits: frames × n_classes`.
pub fn ctc_lattice(logits: &[f64], n_classes: usize, labels: &[usize]) -> Result<CtcLattice> {
    if n_classes < 2 {
        return Err(Error::config(format!("ctc needs at least 2 classes, got {n_classes}")));
    }
    if logits.len() % n_classes != 0 {
        return Err(Error::shape(format!(
            "logit count {} is not a multiple of n_classes {n_classes}",
            logits.len()
        )));
    }
    let frames = logits.len() / n_classes;
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::data(format!("label id {bad} outside the {n_classes}-class lattice")));
    }
    let target = ExtendedTarget::new(labels)?;
    let required = target.min_frames();
    if frames < required {
        return Err(Error::CtcUnsatisfiable { required, available: frames });
    }

    // stabilized log-softmax per frame
    let mut log_probs = vec![0.0; logits.len()];
    for (orow, xrow) in log_probs.chunks_mut(n_classes).zip(logits.chunks(n_classes)) {
        let m = xrow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + xrow.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        for (o, &v) in orow.iter_mut().zip(xrow) {
            *o = v - lse;
        }
    }

    let ext = target.extended();
    let s_len = ext.len();
    let lp = |t: usize, k: usize| log_probs[t * n_classes + k];

    let mut alpha = vec![LOG_ZERO; frames * s_len];
    alpha[0] = lp(0, BLANK);
    if s_len > 1 {
        alpha[1] = lp(0, ext[1]);
    }
    for t in 1..frames {
        for s in 0..s_len {
            let mut acc = alpha[(t - 1) * s_len + s];
            if s >= 1 {
                acc = log_sum_exp2(acc, alpha[(t - 1) * s_len + s - 1]);
            }
            if s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2] {
                acc = log_sum_exp2(acc, alpha[(t - 1) * s_len + s - 2]);
            }
            alpha[t * s_len + s] = if acc == LOG_ZERO { LOG_ZERO } else { acc + lp(t, ext[s]) };
        }
    }

    let mut beta = vec![LOG_ZERO; frames * s_len];
    beta[(frames - 1) * s_len + s_len - 1] = lp(frames - 1, BLANK);
    if s_len > 1 {
        beta[(frames - 1) * s_len + s_len - 2] = lp(frames - 1, ext[s_len - 2]);
    }
    for t in (0..frames - 1).rev() {
        for s in 0..s_len {
            let mut acc = beta[(t + 1) * s_len + s];
            if s + 1 < s_len {
                acc = log_sum_exp2(acc, beta[(t + 1) * s_len + s + 1]);
            }
            if s + 2 < s_len && ext[s] != BLANK && ext[s] != ext[s + 2] {
                acc = log_sum_exp2(acc, beta[(t + 1) * s_len + s + 2]);
            }
            beta[t * s_len + s] = if acc == LOG_ZERO { LOG_ZERO } else { acc + lp(t, ext[s]) };
        }
    }

    let mut ll = alpha[(frames - 1) * s_len + s_len - 1];
    if s_len > 1 {
        ll = log_sum_exp2(ll, alpha[(frames - 1) * s_len + s_len - 2]);
    }
    if ll == LOG_ZERO {
        return Err(Error::CtcUnsatisfiable { required, available: frames });
    }

    Ok(CtcLattice {
        frames,
        n_classes,
        target,
        log_probs,
        alpha,
        beta,
        log_likelihood: ll,
    })
}

/// CTC loss of one sample and its analytic gradient with respect to the raw
/// logits (`frames × n_classes`, both row-major).
pub fn ctc_loss_grad(logits: &[f64], n_classes: usize, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    let lat = ctc_lattice(logits, n_classes, labels)?;
    let s_len = lat.target.extended_len();
    let ext = lat.target.extended();
    let mut grad = vec![0.0; logits.len()];
    for t in 0..lat.frames {
        // log sum of alpha*beta per class at this frame
        let mut class_occ = vec![LOG_ZERO; n_classes];
        for s in 0..s_len {
            let ab = lat.alpha[t * s_len + s] + lat.beta[t * s_len + s];
            if ab != LOG_ZERO {
                class_occ[ext[s]] = log_sum_exp2(class_occ[ext[s]], ab);
            }
        }
        for k in 0..n_classes {
            let lp = lat.log_probs[t * n_classes + k];
            let y = lp.exp();
            let occ = if class_occ[k] == LOG_ZERO {
                0.0
            } else {
                // alpha and beta both include the emission at t, so divide
                // once by p(k at t) and once by the total likelihood
                (class_occ[k] - lat.log_likelihood - lp).exp()
            };
            grad[t * n_classes + k] = y - occ;
        }
    }
    Ok((-lat.log_likelihood, grad))
}

/// CTC loss of one sample, forward pass only.
pub fn ctc_loss(logits: &[f64], n_classes: usize, labels: &[usize]) -> Result<f64> {
    Ok(-ctc_lattice(logits, n_classes, labels)?.log_likelihood)
}

/// Exhaustive CTC oracle: enumerates every alignment path of a linear-domain
/// probability lattice (`frames × n_classes`) and sums those collapsing to
/// the target. Guarded to `n_classes^frames <= 1e6`.
pub fn ctc_brute_force(probs: &[f64], n_classes: usize, labels: &[usize]) -> Result<f64> {
    if n_classes == 0 || probs.len() % n_classes != 0 {
        return Err(Error::shape("probability lattice shape mismatch"));
    }
    let frames = probs.len() / n_classes;
    let total_paths = (n_classes as f64).powi(frames as i32);
    if total_paths > 1e6 {
        return Err(Error::config(format!(
            "brute-force enumeration capped at 1e6 paths, this lattice has {total_paths:.0}"
        )));
    }
    let target = ExtendedTarget::new(labels)?;
    let mut path = vec![0usize; frames];
    let mut mass = 0.0f64;
    loop {
        if collapse_path(&path) == target.labels() {
            let mut p = 1.0;
            for (t, &k) in path.iter().enumerate() {
                p *= probs[t * n_classes + k];
            }
            mass += p;
        }
        // odometer increment in base n_classes
        let mut pos = frames;
        loop {
            if pos == 0 {
                break;
            }
            pos -= 1;
            path[pos] += 1;
            if path[pos] < n_classes {
                break;
            }
            path[pos] = 0;
        }
        if pos == 0 && path[0] == 0 {
            break;
        }
    }
    if mass <= 0.0 {
        return Err(Error::CtcUnsatisfiable {
            required: target.min_frames(),
            available: frames,
        });
    }
    Ok(-mass.ln())
}

/// Collapses an alignment path: merge adjacent repeats, then drop blanks.
pub fn collapse_path(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = usize::MAX;
    for &k in path {
        if k != prev && k != BLANK {
            out.push(k);
        }
        prev = k;
    }
    out
}

/// Greedy decoding of `logits: frames × n_classes`: per-frame argmax (ties
/// toward the lowest class index), collapse repeats, delete blanks, map to
/// characters.
pub fn greedy_decode<T: Scalar>(logits: &[T], alphabet: &Alphabet) -> Result<String> {
    let n_classes = alphabet.n_classes();
    if logits.is_empty() || logits.len() % n_classes != 0 {
        return Err(Error::shape(format!(
            "logit count {} is not a multiple of n_classes {n_classes}",
            logits.len()
        )));
    }
    let mut path = Vec::with_capacity(logits.len() / n_classes);
    for row in logits.chunks(n_classes) {
        let mut best = 0usize;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        path.push(best);
    }
    alphabet.decode(&collapse_path(&path))
}

impl<T: Scalar> Graph<T> {
    /// Mean CTC loss over a batch of logit sequences (`B×T×C`), recorded
    /// with the analytic logit gradient as its backward rule. All targets
    /// must be satisfiable; the trainer filters unsatisfiable samples first.
    pub fn ctc_loss(&mut self, logits: Var, targets: &[Vec<usize>]) -> Result<Var> {
        let shape = self.value(logits).shape.clone();
        let (bs, frames, classes) = match shape.as_slice() {
            &[b, t, c] => (b, t, c),
            s => {
                return Err(Error::shape(format!(
                    "ctc_loss wants B×T×C logits, got shape {s:?}"
                )))
            }
        };
        if targets.len() != bs {
            return Err(Error::shape(format!(
                "batch has {bs} samples but {} targets",
                targets.len()
            )));
        }
        let sample = frames * classes;
        let needs = self.needs(logits);
        let mut loss = 0.0f64;
        let mut grad = if needs { vec![T::zero(); bs * sample] } else { Vec::new() };
        {
            let data = &self.value(logits).data;
            let inv_b = 1.0 / bs as f64;
            for (bi, target) in targets.iter().enumerate() {
                let row: Vec<f64> = data[bi * sample..(bi + 1) * sample]
                    .iter()
                    .map(|v| v.to_f64_c())
                    .collect();
                if needs {
                    let (l, g) = ctc_loss_grad(&row, classes, target)?;
                    loss += l * inv_b;
                    for (o, gv) in grad[bi * sample..(bi + 1) * sample].iter_mut().zip(g) {
                        *o = T::from_f64_c(gv * inv_b);
                    }
                } else {
                    loss += ctc_loss(&row, classes, target)? * inv_b;
                }
            }
        }
        let mut t = Tensor::scalar(T::from_f64_c(loss));
        t.requires_grad = needs;
        Ok(self.push(t, Op::CtcLoss { logits, grad }))
    }
}
