//! Deterministic synthetic line generator for desk-scale experiments.
//!
//! Characters come from a built-in 5×7 dot-matrix atlas, upscaled ×3 and
//! composed left to right with random inter-glyph spacing (1–4 px), baseline
//! jitter (±2 px), and a small per-glyph affine jitter. The corpus is a pure
//! function of its [`SynthConfig`]: same config, byte-identical files.

use super::{write_manifest, write_pgm, ManifestEntry};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Characters the generator may draw (must be a subset of the built-in
    /// atlas: space and `a-z`).
    pub alphabet: String,
    /// Inclusive range of words per line.
    pub words_per_line: (usize, usize),
    /// Per-glyph affine jitter magnitude in `[0, 1]`: rotation up to
    /// `±3°·jitter`, shear up to `±0.1·jitter`.
    pub glyph_jitter: f64,
    pub corpus_size: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            alphabet: super::DEFAULT_ALPHABET.to_string(),
            words_per_line: (1, 2),
            glyph_jitter: 0.5,
            corpus_size: 32,
            seed: 0,
        }
    }
}

const SCALE: usize = 3;
const GLYPH_W: usize = 5 * SCALE;
const GLYPH_H: usize = 7 * SCALE;
/// Rendering box per glyph, with a margin for rotation spill.
const BOX_PAD: usize = 2;
const WORD_LEN: (usize, usize) = (2, 5);

/// 5×7 bitmap of an atlas character, one byte per row (low 5 bits used).
pub fn glyph_bitmap(c: char) -> Option<[u8; 7]> {
    let rows = match c {
        ' ' => [0, 0, 0, 0, 0, 0, 0],
        'a' => [0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001],
        'b' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110],
        'c' => [0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110],
        'd' => [0b11100, 0b10010, 0b10001, 0b10001, 0b10001, 0b10010, 0b11100],
        'e' => [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111],
        'f' => [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000],
        'g' => [0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01111],
        'h' => [0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001],
        'i' => [0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
        'j' => [0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100],
        'k' => [0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001],
        'l' => [0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111],
        'm' => [0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001],
        'n' => [0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001, 0b10001],
        'o' => [0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
        'p' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000],
        'q' => [0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101],
        'r' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001],
        's' => [0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110],
        't' => [0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100],
        'u' => [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
        'v' => [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100],
        'w' => [0b10001, 0b10001, 0b10001, 0b10101, 0b10101, 0b10101, 0b01010],
        'x' => [0b10001, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001, 0b10001],
        'y' => [0b10001, 0b10001, 0b01010, 0b00100, 0b00100, 0b00100, 0b00100],
        'z' => [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111],
        _ => return None,
    };
    Some(rows)
}

/// Generates `images/NNNNNN.pgm`, `manifest.jsonl`, and a `synthconfig.json`
/// echo under `out_dir`; returns the manifest path.
pub fn synth_generate(cfg: &SynthConfig, out_dir: &Path) -> Result<PathBuf> {
    if cfg.corpus_size == 0 {
        return Err(Error::config("synthetic corpus size must be positive"));
    }
    if cfg.words_per_line.0 == 0 || cfg.words_per_line.0 > cfg.words_per_line.1 {
        return Err(Error::config(format!(
            "invalid words-per-line range {:?}",
            cfg.words_per_line
        )));
    }
    let letters: Vec<char> = cfg.alphabet.chars().filter(|&c| c != ' ').collect();
    if letters.is_empty() {
        return Err(Error::config("synthetic alphabet has no drawable characters"));
    }
    for &c in &letters {
        if glyph_bitmap(c).is_none() {
            return Err(Error::config(format!("no atlas glyph for {c:?}")));
        }
    }

    let images_dir = out_dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;

    let mut entries = Vec::with_capacity(cfg.corpus_size);
    for i in 0..cfg.corpus_size {
        let mut rng = sample_rng(cfg.seed, i as u64);
        let text = sample_text(cfg, &letters, &mut rng);
        let (w, h, pixels) = render_line(&text, cfg.glyph_jitter, &mut rng);
        let name = format!("{i:06}.pgm");
        write_pgm(&images_dir.join(&name), w, h, &pixels)?;
        entries.push(ManifestEntry { image: PathBuf::from("images").join(name), text });
    }

    let manifest = out_dir.join("manifest.jsonl");
    write_manifest(&manifest, &entries)?;
    let echo = out_dir.join("synthconfig.json");
    let body = serde_json::to_string_pretty(cfg)
        .map_err(|e| Error::data(format!("synth config echo: {e}")))?;
    std::fs::write(&echo, body).map_err(|e| Error::io(&echo, e))?;
    Ok(manifest)
}

fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn sample_text(cfg: &SynthConfig, letters: &[char], rng: &mut ChaCha8Rng) -> String {
    let n_words = rng.random_range(cfg.words_per_line.0..=cfg.words_per_line.1);
    let mut words = Vec::with_capacity(n_words);
    for _ in 0..n_words {
        let len = rng.random_range(WORD_LEN.0..=WORD_LEN.1);
        words.push((0..len).map(|_| letters[rng.random_range(0..letters.len())]).collect::<String>());
    }
    words.join(" ")
}

/// Rasterizes one line as dark ink on a light background (PGM polarity).
fn render_line(text: &str, jitter: f64, rng: &mut ChaCha8Rng) -> (usize, usize, Vec<u8>) {
    let box_w = GLYPH_W + 2 * BOX_PAD;
    let box_h = GLYPH_H + 2 * BOX_PAD;
    let margin = 3usize;
    let baseline_jitter = 2i32;

    // worst-case canvas, cropped to content afterwards
    let est_w = margin * 2 + text.chars().count() * (box_w + 4);
    let canv_h = box_h + 2 * (baseline_jitter as usize) + 2 * margin;
    let mut ink = vec![0.0f32; est_w * canv_h];

    let mut x = margin as i32;
    let top = (margin + baseline_jitter as usize) as i32;
    let mut max_x = x;
    for c in text.chars() {
        let gap = rng.random_range(1..=4);
        let dy = rng.random_range(-baseline_jitter..=baseline_jitter);
        if c == ' ' {
            x += GLYPH_W as i32 + gap;
            continue;
        }
        let rows = glyph_bitmap(c).expect("alphabet checked at generation start");
        let rot = (rng.random_range(-1.0..1.0) * 3.0 * jitter).to_radians();
        let shear = rng.random_range(-1.0..1.0) * 0.1 * jitter;
        stamp_glyph(&mut ink, est_w, canv_h, &rows, x - BOX_PAD as i32, top - BOX_PAD as i32 + dy, rot, shear);
        x += GLYPH_W as i32 + gap;
        max_x = x;
    }

    let content_w = (max_x as usize + margin).min(est_w).max(2 * margin + GLYPH_W);
    let mut pixels = Vec::with_capacity(content_w * canv_h);
    for y in 0..canv_h {
        for xx in 0..content_w {
            let v = ink[y * est_w + xx].clamp(0.0, 1.0);
            pixels.push(255 - (v * 255.0).round() as u8);
        }
    }
    (content_w, canv_h, pixels)
}

/// Draws one jittered glyph into the ink buffer (ink = 1, background = 0) by
/// inverse-mapping each destination pixel through the affine and sampling
/// the upscaled bitmap bilinearly.
#[allow(clippy::too_many_arguments)]
fn stamp_glyph(
    ink: &mut [f32],
    canv_w: usize,
    canv_h: usize,
    rows: &[u8; 7],
    x0: i32,
    y0: i32,
    rot: f64,
    shear: f64,
) {
    let box_w = GLYPH_W + 2 * BOX_PAD;
    let box_h = GLYPH_H + 2 * BOX_PAD;
    let cx = (box_w as f64 - 1.0) / 2.0;
    let cy = (box_h as f64 - 1.0) / 2.0;
    let gx = (GLYPH_W as f64 - 1.0) / 2.0;
    let gy = (GLYPH_H as f64 - 1.0) / 2.0;
    // forward map: rotate(shear(p)); sample with its inverse
    let (sin, cos) = rot.sin_cos();

    let sample = |sx: f64, sy: f64| -> f64 {
        if sx < -0.5 || sy < -0.5 || sx > GLYPH_W as f64 - 0.5 || sy > GLYPH_H as f64 - 0.5 {
            return 0.0;
        }
        let px = |ix: i64, iy: i64| -> f64 {
            if ix < 0 || iy < 0 || ix >= GLYPH_W as i64 || iy >= GLYPH_H as i64 {
                return 0.0;
            }
            let (bx, by) = (ix as usize / SCALE, iy as usize / SCALE);
            if (rows[by] >> (4 - bx)) & 1 == 1 {
                1.0
            } else {
                0.0
            }
        };
        let (fx, fy) = (sx.floor(), sy.floor());
        let (tx, ty) = (sx - fx, sy - fy);
        let (ix, iy) = (fx as i64, fy as i64);
        px(ix, iy) * (1.0 - tx) * (1.0 - ty)
            + px(ix + 1, iy) * tx * (1.0 - ty)
            + px(ix, iy + 1) * (1.0 - tx) * ty
            + px(ix + 1, iy + 1) * tx * ty
    };

    for by in 0..box_h {
        let dy = y0 + by as i32;
        if dy < 0 || dy >= canv_h as i32 {
            continue;
        }
        for bx in 0..box_w {
            let dx = x0 + bx as i32;
            if dx < 0 || dx >= canv_w as i32 {
                continue;
            }
            // inverse rotation, then inverse shear, about the box center
            let rx = bx as f64 - cx;
            let ry = by as f64 - cy;
            let ux = cos * rx + sin * ry;
            let uy = -sin * rx + cos * ry;
            let sx = ux - shear * uy + gx;
            let sy = uy + gy;
            let v = sample(sx, sy) as f32;
            if v > 0.0 {
                let slot = &mut ink[dy as usize * canv_w + dx as usize];
                *slot = slot.max(v);
            }
        }
    }
}
