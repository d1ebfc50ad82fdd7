//! Image and transcript preparation: fixed-canvas placement with median
//! padding, affine + Gaussian-noise augmentation, transcript space-padding,
//! and batch assembly.
//!
//! An image that fits the canvas is copied unmodified to the center and the
//! surround is filled with the image's median intensity, preserving the
//! aspect ratio exactly; only images larger than the canvas are rescaled
//! (bilinear, by `min(H/h, W/w)`).

use crate::dataset::Alphabet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::Mode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Grayscale image with intensities in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RawImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl RawImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape(format!("degenerate image {height}×{width}")));
        }
        if pixels.len() != height * width {
            return Err(Error::shape(format!(
                "image {height}×{width} wants {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        if pixels.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::data("pixel intensity outside [0, 1]"));
        }
        Ok(RawImage { height, width, pixels })
    }

    pub fn constant(height: usize, width: usize, v: f32) -> Self {
        RawImage { height, width, pixels: vec![v; height * width] }
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// Median intensity: for an even pixel count, the mean of the two middle
    /// order statistics.
    pub fn median(&self) -> f32 {
        let mut sorted = self.pixels.clone();
        sorted.sort_by(f32::total_cmp);
        let n = sorted.len();
        if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        }
    }
}

/// Fixed canvas the whole corpus is normalized to. Extents must be divisible
/// by the backbone's total downscale of 8.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanvasSpec {
    pub height: usize,
    pub width: usize,
}

impl CanvasSpec {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height < 8 || width < 8 || height % 8 != 0 || width % 8 != 0 {
            return Err(Error::config(format!(
                "canvas {height}×{width} must be at least 8×8 and divisible by 8"
            )));
        }
        Ok(CanvasSpec { height, width })
    }

    /// Line-image preset.
    pub fn line() -> Self {
        CanvasSpec { height: 128, width: 1024 }
    }

    /// Word-image preset.
    pub fn word() -> Self {
        CanvasSpec { height: 64, width: 256 }
    }

    /// Desk-scale preset for fast experiments.
    pub fn tiny() -> Self {
        CanvasSpec { height: 32, width: 256 }
    }
}

/// Train-time augmentation: one global affine map (rotation and horizontal
/// shear of small magnitude about the image center), then i.i.d. Gaussian
/// noise, then a clamp to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub max_rotation_deg: f32,
    pub max_shear: f32,
    pub noise_sigma: f32,
    pub enabled: bool,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams { max_rotation_deg: 1.5, max_shear: 0.1, noise_sigma: 0.1, enabled: true }
    }
}

impl AugmentParams {
    pub fn disabled() -> Self {
        AugmentParams { max_rotation_deg: 0.0, max_shear: 0.0, noise_sigma: 0.0, enabled: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_rotation_deg < 0.0 || self.max_shear < 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::config("augmentation parameters must be nonnegative"));
        }
        Ok(())
    }
}

/// Where the original content sits on the canvas.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Placement {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Places an image on the canvas: copied unmodified and centered when it
/// fits, rescaled by `min(H/h, W/w)` first when it does not; all pixels
/// outside the placement carry the median of the original image.
pub fn fit_to_canvas(img: &RawImage, spec: CanvasSpec) -> (RawImage, Placement) {
    let median = img.median();
    let scaled;
    let content = if img.height <= spec.height && img.width <= spec.width {
        img
    } else {
        let s = (spec.height as f64 / img.height as f64)
            .min(spec.width as f64 / img.width as f64);
        let new_h = ((img.height as f64 * s).round() as usize).clamp(1, spec.height);
        let new_w = ((img.width as f64 * s).round() as usize).clamp(1, spec.width);
        scaled = resize_bilinear(img, new_h, new_w);
        &scaled
    };
    let top = (spec.height - content.height) / 2;
    let left = (spec.width - content.width) / 2;
    let mut pixels = vec![median; spec.height * spec.width];
    for y in 0..content.height {
        let dst = (top + y) * spec.width + left;
        pixels[dst..dst + content.width]
            .copy_from_slice(&content.pixels[y * content.width..(y + 1) * content.width]);
    }
    (
        RawImage { height: spec.height, width: spec.width, pixels },
        Placement { top, left, height: content.height, width: content.width },
    )
}

/// The aspect-ratio-ignoring alternative: stretches the image to the full
/// canvas (the "resized" arm of the ablation grid).
pub fn stretch_to_canvas(img: &RawImage, spec: CanvasSpec) -> RawImage {
    if img.height == spec.height && img.width == spec.width {
        return img.clone();
    }
    resize_bilinear(img, spec.height, spec.width)
}

/// Bilinear resize with half-pixel centers.
pub fn resize_bilinear(img: &RawImage, new_h: usize, new_w: usize) -> RawImage {
    let mut pixels = vec![0.0f32; new_h * new_w];
    let sy = img.height as f64 / new_h as f64;
    let sx = img.width as f64 / new_w as f64;
    for y in 0..new_h {
        let src_y = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, img.height as f64 - 1.0);
        let y0 = src_y.floor() as usize;
        let y1 = (y0 + 1).min(img.height - 1);
        let ty = (src_y - y0 as f64) as f32;
        for x in 0..new_w {
            let src_x = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, img.width as f64 - 1.0);
            let x0 = src_x.floor() as usize;
            let x1 = (x0 + 1).min(img.width - 1);
            let tx = (src_x - x0 as f64) as f32;
            let v = img.get(y0, x0) * (1.0 - ty) * (1.0 - tx)
                + img.get(y0, x1) * (1.0 - ty) * tx
                + img.get(y1, x0) * ty * (1.0 - tx)
                + img.get(y1, x1) * ty * tx;
            pixels[y * new_w + x] = v;
        }
    }
    RawImage { height: new_h, width: new_w, pixels }
}

/// Seeded augmentation: rotation uniform in `±max_rotation_deg` composed
/// with horizontal shear uniform in `±max_shear` about the image center
/// (median fill for exposed pixels), then Gaussian noise with
/// `noise_sigma`, clamped to `[0, 1]`. A zero-parameter or disabled call
/// returns the input bit-exactly.
pub fn augment(img: &RawImage, params: &AugmentParams, seed: u64) -> RawImage {
    if !params.enabled {
        return img.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = if params.max_rotation_deg == 0.0 && params.max_shear == 0.0 {
        img.clone()
    } else {
        let rot = (rng.random_range(-1.0..=1.0) * params.max_rotation_deg as f64).to_radians();
        let shear = rng.random_range(-1.0..=1.0) * params.max_shear as f64;
        affine_sample(img, rot, shear)
    };
    if params.noise_sigma > 0.0 {
        let normal = Normal::new(0.0f64, params.noise_sigma as f64).expect("sigma checked");
        for p in out.pixels.iter_mut() {
            *p = (*p + normal.sample(&mut rng) as f32).clamp(0.0, 1.0);
        }
    }
    out
}

/// Rotation∘shear about the center, inverse-mapped with bilinear sampling;
/// pixels pulled from outside the source get the source median.
fn affine_sample(img: &RawImage, rot: f64, shear: f64) -> RawImage {
    let median = img.median();
    let (sin, cos) = rot.sin_cos();
    let cx = (img.width as f64 - 1.0) / 2.0;
    let cy = (img.height as f64 - 1.0) / 2.0;
    let mut pixels = vec![median; img.pixels.len()];
    for y in 0..img.height {
        for x in 0..img.width {
            // inverse of rotate(shear(p)): shear^-1(rotate^-1(p))
            let rx = x as f64 - cx;
            let ry = y as f64 - cy;
            let ux = cos * rx + sin * ry;
            let uy = -sin * rx + cos * ry;
            let sx = ux - shear * uy + cx;
            let sy = uy + cy;
            if sx < 0.0 || sy < 0.0 || sx > img.width as f64 - 1.0 || sy > img.height as f64 - 1.0
            {
                continue;
            }
            let x0 = sx.floor() as usize;
            let y0 = sy.floor() as usize;
            let x1 = (x0 + 1).min(img.width - 1);
            let y1 = (y0 + 1).min(img.height - 1);
            let tx = (sx - x0 as f64) as f32;
            let ty = (sy - y0 as f64) as f32;
            pixels[y * img.width + x] = img.get(y0, x0) * (1.0 - ty) * (1.0 - tx)
                + img.get(y0, x1) * (1.0 - ty) * tx
                + img.get(y1, x0) * ty * (1.0 - tx)
                + img.get(y1, x1) * ty * tx;
        }
    }
    RawImage { height: img.height, width: img.width, pixels }
}

/// Train mode wraps the transcript in single margin spaces; eval mode
/// passes it through (predictions are compared after stripping).
pub fn pad_transcript(text: &str, mode: Mode) -> String {
    match mode {
        Mode::Train => format!(" {text} "),
        Mode::Eval => text.to_string(),
    }
}

/// Collated batch: stacked canvases plus encoded label sequences.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    /// `B×1×H×W`
    pub images: Tensor<T>,
    /// Per-sample label ids of the (mode-dependent) transcripts.
    pub labels: Vec<Vec<usize>>,
    /// The transcripts after `pad_transcript`, in sample order.
    pub transcripts: Vec<String>,
}

impl<T> Batch<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// How images reach the canvas: aspect-preserving padded placement, or the
/// anisotropic stretch used by the ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PadMode {
    Pad,
    Stretch,
}

/// Stacks samples into a `B×1×H×W` tensor and encodes their transcripts.
/// Sample order is preserved; a character outside the alphabet names both
/// the sample and the character.
pub fn make_batch<T: Scalar>(
    samples: &[(RawImage, String)],
    spec: CanvasSpec,
    alphabet: &Alphabet,
    mode: Mode,
    pad_mode: PadMode,
) -> Result<Batch<T>> {
    if samples.is_empty() {
        return Err(Error::data("empty batch"));
    }
    let (h, w) = (spec.height, spec.width);
    let mut data = Vec::with_capacity(samples.len() * h * w);
    let mut labels = Vec::with_capacity(samples.len());
    let mut transcripts = Vec::with_capacity(samples.len());
    for (i, (img, text)) in samples.iter().enumerate() {
        let canvas = match pad_mode {
            PadMode::Pad => fit_to_canvas(img, spec).0,
            PadMode::Stretch => stretch_to_canvas(img, spec),
        };
        data.extend(canvas.pixels.iter().map(|&p| T::from_f64_c(p as f64)));
        let padded = pad_transcript(text, mode);
        let ids = alphabet
            .encode(&padded)
            .map_err(|e| Error::data(format!("sample {i}: {e}")))?;
        labels.push(ids);
        transcripts.push(padded);
    }
    let images = Tensor::new(vec![samples.len(), 1, h, w], data)?;
    Ok(Batch { images, labels, transcripts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn ramp(h: usize, w: usize) -> RawImage {
        let pixels = (0..h * w).map(|i| (i % 97) as f32 / 97.0).collect();
        RawImage::new(h, w, pixels).unwrap()
    }

    #[test]
    fn centering_offsets_match_floor_arithmetic() {
        let img = ramp(32, 100);
        let (canvas, place) = fit_to_canvas(&img, CanvasSpec::word());
        assert_eq!(canvas.height, 64);
        assert_eq!(canvas.width, 256);
        assert_eq!((place.top, place.left), (16, 78));
        assert_eq!((place.height, place.width), (32, 100));
    }

    #[test]
    fn oversized_image_scales_to_exact_fit() {
        let img = ramp(128, 512);
        let (_, place) = fit_to_canvas(&img, CanvasSpec::word());
        assert_eq!((place.height, place.width), (64, 256));
        assert_eq!((place.top, place.left), (0, 0));
    }

    #[test]
    fn padding_uses_the_median_of_a_constant_image() {
        let img = RawImage::constant(10, 20, 0.3);
        let (canvas, place) = fit_to_canvas(&img, CanvasSpec::word());
        for y in 0..canvas.height {
            for x in 0..canvas.width {
                let inside = y >= place.top
                    && y < place.top + place.height
                    && x >= place.left
                    && x < place.left + place.width;
                assert_eq!(canvas.get(y, x), 0.3, "at ({y},{x}) inside={inside}");
            }
        }
    }

    #[test]
    fn pixels_inside_placement_are_preserved_exactly() {
        let img = ramp(17, 53);
        let (canvas, place) = fit_to_canvas(&img, CanvasSpec::tiny());
        for y in 0..img.height {
            for x in 0..img.width {
                assert_eq!(canvas.get(place.top + y, place.left + x), img.get(y, x));
            }
        }
    }

    #[test]
    fn one_pixel_image_passes_through_the_pad_path() {
        let img = RawImage::new(1, 1, vec![0.8]).unwrap();
        let (canvas, place) = fit_to_canvas(&img, CanvasSpec::tiny());
        assert_eq!((place.height, place.width), (1, 1));
        assert_eq!(canvas.get(place.top, place.left), 0.8);
        assert_eq!(canvas.get(0, 0), 0.8); // median of a single pixel
    }

    #[test]
    fn zero_parameters_are_an_exact_identity() {
        let img = ramp(20, 30);
        let params =
            AugmentParams { max_rotation_deg: 0.0, max_shear: 0.0, noise_sigma: 0.0, enabled: true };
        assert_eq!(augment(&img, &params, 123), img);
        assert_eq!(augment(&img, &AugmentParams::disabled(), 5), img);
    }

    #[test]
    fn noise_preserves_the_mean_of_a_constant_image() {
        let img = RawImage::constant(64, 256, 0.5);
        let params =
            AugmentParams { max_rotation_deg: 0.0, max_shear: 0.0, noise_sigma: 0.1, enabled: true };
        let out = augment(&img, &params, 42);
        let mean: f32 = out.pixels.iter().sum::<f32>() / out.pixels.len() as f32;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn same_seed_gives_bit_identical_augmentation() {
        let img = ramp(24, 40);
        let params = AugmentParams::default();
        let a = augment(&img, &params, 99);
        let b = augment(&img, &params, 99);
        assert_eq!(a, b);
        let c = augment(&img, &params, 100);
        assert_ne!(a, c);
    }

    #[test]
    fn transcript_padding_rules() {
        assert_eq!(pad_transcript("He rose from", Mode::Train), " He rose from ");
        assert_eq!(pad_transcript("abc", Mode::Eval), "abc");
        let s = "hello world";
        assert_eq!(pad_transcript(s, Mode::Train).len(), s.len() + 2);
    }

    #[test]
    fn batch_stacks_and_encodes_in_order() {
        let ab = Alphabet::new(" ab".chars()).unwrap();
        let samples = vec![
            (RawImage::constant(8, 16, 0.2), "ab".to_string()),
            (RawImage::constant(8, 16, 0.9), "ba".to_string()),
        ];
        let batch: Batch<f32> =
            make_batch(&samples, CanvasSpec::tiny(), &ab, Mode::Train, PadMode::Pad).unwrap();
        assert_eq!(batch.images.shape, vec![2, 1, 32, 256]);
        assert_eq!(batch.labels[0], vec![1, 2, 3, 1]);
        assert_eq!(batch.labels[1], vec![1, 3, 2, 1]);
        assert_eq!(batch.transcripts[0], " ab ");
    }

    #[test]
    fn line_preset_batch_stacks_to_full_canvas() {
        let ab = Alphabet::new(" ab".chars()).unwrap();
        let samples: Vec<(RawImage, String)> = (0..4)
            .map(|i| (RawImage::constant(40, 300, 0.1 * i as f32), "ab".to_string()))
            .collect();
        let batch: Batch<f32> =
            make_batch(&samples, CanvasSpec::line(), &ab, Mode::Eval, PadMode::Pad).unwrap();
        assert_eq!(batch.images.shape, vec![4, 1, 128, 1024]);
    }

    #[test]
    fn batch_rejects_unknown_character_naming_the_sample() {
        let ab = Alphabet::new(" ab".chars()).unwrap();
        let samples = vec![(RawImage::constant(8, 8, 0.0), "ax".to_string())];
        let err = make_batch::<f32>(&samples, CanvasSpec::tiny(), &ab, Mode::Eval, PadMode::Pad)
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("sample 0") && msg.contains('x'), "{msg}");
    }

    #[test]
    fn aspect_ratio_within_rounding_slack_on_random_sizes() {
        // Rounding both extents by at most half a pixel bounds the ratio
        // error by 0.5·(1 + w/h)/h'. The looser 2/min(h',w') form only
        // covers aspect ratios up to ~3, so the general bound is asserted
        // everywhere and the simple one where it applies.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let spec = CanvasSpec::tiny();
        for _ in 0..300 {
            let h = rng.random_range(2..200);
            let w = rng.random_range(2..900);
            let img = RawImage::constant(h, w, 0.4);
            let (_, place) = fit_to_canvas(&img, spec);
            if h <= spec.height && w <= spec.width {
                assert_eq!((place.height, place.width), (h, w));
                continue;
            }
            let got = place.width as f64 / place.height as f64;
            let want = w as f64 / h as f64;
            let err = (got - want).abs();
            let general = 0.5 * (1.0 + want) / place.height as f64;
            assert!(
                err <= general + 1e-12,
                "{h}x{w} -> {}x{}: ratio {got} vs {want} (bound {general})",
                place.height,
                place.width
            );
            if want <= 3.0 {
                let simple = 2.0 / place.height.min(place.width) as f64;
                assert!(err < simple, "simple slack violated at ratio {want}");
            }
        }
    }

    #[test]
    fn rescale_uses_min_axis_scale_on_any_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let spec = CanvasSpec::tiny();
        for _ in 0..200 {
            let h = rng.random_range(1..300);
            let w = rng.random_range(1..900);
            let img = RawImage::constant(h, w, 0.6);
            let (canvas, place) = fit_to_canvas(&img, spec);
            assert_eq!((canvas.height, canvas.width), (spec.height, spec.width));
            if h <= spec.height && w <= spec.width {
                assert_eq!((place.height, place.width), (h, w));
            } else {
                let s = (spec.height as f64 / h as f64).min(spec.width as f64 / w as f64);
                let want_h = ((h as f64 * s).round() as usize).clamp(1, spec.height);
                let want_w = ((w as f64 * s).round() as usize).clamp(1, spec.width);
                assert_eq!((place.height, place.width), (want_h, want_w));
            }
            assert_eq!(place.top, (spec.height - place.height) / 2);
            assert_eq!(place.left, (spec.width - place.width) / 2);
        }
    }

    #[test]
    fn stretch_fills_the_whole_canvas() {
        let img = ramp(10, 10);
        let out = stretch_to_canvas(&img, CanvasSpec::tiny());
        assert_eq!((out.height, out.width), (32, 256));
    }
}
