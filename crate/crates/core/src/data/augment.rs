//! View generation.
//!
//! Image pipeline on `[C, H, W]` payloads, applied in this order:
//!
//! 1. random resized crop: area fraction ~ U(scale), log aspect ratio ~
//!    U(log ratio), up to 10 attempts, then a center crop clamped to the ratio
//!    range; bilinear resize (half-pixel centers) to the output size;
//! 2. horizontal flip with `hflip_prob`;
//! 3. with `jitter_prob`, color jitter with brightness/contrast/saturation
//!    factors ~ U(max(0, 1−s), 1+s) and hue shift ~ U(−s, s) turns of the hue
//!    circle, the four applied in a random order;
//! 4. grayscale with `grayscale_prob`, luma `0.299 R + 0.587 G + 0.114 B`.
//!
//! There is no blur. Vector payloads get additive `N(0, noise_std²)` noise
//! followed by zeroing each coordinate with `dropout_prob`; this is a
//! stand-in for image augmentation on synthetic data, not part of any
//! published recipe.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

use super::rng::RngPath;
use super::{DataError, Sample};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JitterStrengths {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    pub crop: bool,
    pub crop_scale: [f64; 2],
    pub crop_ratio: [f64; 2],
    /// `(height, width)` after cropping; `None` keeps the input size.
    pub output_size: Option<[usize; 2]>,
    pub flip: bool,
    pub hflip_prob: f64,
    pub color_jitter: bool,
    pub jitter_prob: f64,
    pub jitter: JitterStrengths,
    pub grayscale: bool,
    pub grayscale_prob: f64,
    pub noise: bool,
    pub noise_std: f64,
    pub dropout: bool,
    pub dropout_prob: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self::simsiam()
    }
}

impl AugmentationConfig {
    /// Image recipe plus the vector-data stand-in, all enabled.
    pub fn simsiam() -> Self {
        Self {
            crop: true,
            crop_scale: [0.2, 1.0],
            crop_ratio: [3.0 / 4.0, 4.0 / 3.0],
            output_size: None,
            flip: true,
            hflip_prob: 0.5,
            color_jitter: true,
            jitter_prob: 0.8,
            jitter: JitterStrengths { brightness: 0.4, contrast: 0.4, saturation: 0.4, hue: 0.1 },
            grayscale: true,
            grayscale_prob: 0.2,
            noise: true,
            noise_std: 1.0,
            dropout: true,
            dropout_prob: 0.2,
        }
    }

    /// Every transform disabled.
    pub fn identity() -> Self {
        Self { crop: false, flip: false, color_jitter: false, grayscale: false, noise: false, dropout: false, ..Self::simsiam() }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let [lo, hi] = self.crop_scale;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(DataError::InvalidConfig(format!("crop_scale must satisfy 0 < lo <= hi <= 1, got {:?}", self.crop_scale)));
        }
        let [rlo, rhi] = self.crop_ratio;
        if !(rlo > 0.0 && rlo <= rhi) {
            return Err(DataError::InvalidConfig(format!("crop_ratio must satisfy 0 < lo <= hi, got {:?}", self.crop_ratio)));
        }
        for (name, p) in [
            ("hflip_prob", self.hflip_prob),
            ("jitter_prob", self.jitter_prob),
            ("grayscale_prob", self.grayscale_prob),
            ("dropout_prob", self.dropout_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(DataError::InvalidConfig(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        let j = self.jitter;
        if [j.brightness, j.contrast, j.saturation].iter().any(|s| !(*s >= 0.0)) || !(0.0..=0.5).contains(&j.hue) {
            return Err(DataError::InvalidConfig(format!("invalid jitter strengths {j:?}")));
        }
        if !(self.noise_std >= 0.0) {
            return Err(DataError::InvalidConfig("noise_std must be non-negative".into()));
        }
        if self.output_size.is_some_and(|[h, w]| h == 0 || w == 0) {
            return Err(DataError::InvalidConfig("output_size must be positive".into()));
        }
        Ok(())
    }
}

/// Produces one augmented view of `sample`, deterministic in `path`.
pub fn augment(sample: &Sample, cfg: &AugmentationConfig, path: RngPath) -> Result<Tensor, DataError> {
    let mut rng = path.rng();
    match sample.payload.rank() {
        1 => Ok(augment_vector(&sample.payload, cfg, &mut rng)),
        3 => augment_image(&sample.payload, cfg, &mut rng),
        _ => Err(DataError::UnsupportedPayload(sample.payload.shape().to_vec())),
    }
}

fn augment_vector(x: &Tensor, cfg: &AugmentationConfig, rng: &mut ChaCha8Rng) -> Tensor {
    let mut out = x.clone();
    if cfg.noise && cfg.noise_std > 0.0 {
        let n = Normal::new(0.0, cfg.noise_std).expect("validated std");
        out.data_mut().iter_mut().for_each(|v| *v += n.sample(rng));
    }
    if cfg.dropout {
        for v in out.data_mut() {
            if rng.random::<f64>() < cfg.dropout_prob {
                *v = 0.0;
            }
        }
    }
    out
}

/// `[C, H, W]` image with helpers for per-pixel access.
struct Image {
    c: usize,
    h: usize,
    w: usize,
    px: Vec<f64>,
}

impl Image {
    fn at(&self, ch: usize, y: usize, x: usize) -> f64 {
        self.px[(ch * self.h + y) * self.w + x]
    }

    fn plane_len(&self) -> usize {
        self.h * self.w
    }

    fn gray(&self, i: usize) -> f64 {
        let n = self.plane_len();
        0.299 * self.px[i] + 0.587 * self.px[n + i] + 0.114 * self.px[2 * n + i]
    }
}

fn augment_image(x: &Tensor, cfg: &AugmentationConfig, rng: &mut ChaCha8Rng) -> Result<Tensor, DataError> {
    let s = x.shape();
    let mut img = Image { c: s[0], h: s[1], w: s[2], px: x.data().to_vec() };
    let [oh, ow] = cfg.output_size.unwrap_or([img.h, img.w]);
    if cfg.crop {
        let (top, left, ch, cw) = crop_box(img.h, img.w, cfg, rng);
        img = resize_bilinear(&img, top, left, ch, cw, oh, ow);
    } else if (oh, ow) != (img.h, img.w) {
        let (h, w) = (img.h, img.w);
        img = resize_bilinear(&img, 0, 0, h, w, oh, ow);
    }
    if cfg.flip && rng.random::<f64>() < cfg.hflip_prob {
        let mut px = img.px.clone();
        for ch in 0..img.c {
            for y in 0..img.h {
                for xx in 0..img.w {
                    px[(ch * img.h + y) * img.w + xx] = img.at(ch, y, img.w - 1 - xx);
                }
            }
        }
        img.px = px;
    }
    let rgb = img.c == 3;
    if cfg.color_jitter && rng.random::<f64>() < cfg.jitter_prob {
        let j = cfg.jitter;
        let factor = |rng: &mut ChaCha8Rng, s: f64| if s > 0.0 { rng.random_range((1.0 - s).max(0.0)..=1.0 + s) } else { 1.0 };
        let b = factor(rng, j.brightness);
        let c = factor(rng, j.contrast);
        let sat = factor(rng, j.saturation);
        let hue = if j.hue > 0.0 { rng.random_range(-j.hue..=j.hue) } else { 0.0 };
        let mut order = [0usize, 1, 2, 3];
        order.shuffle(rng);
        for op in order {
            match op {
                0 => adjust_brightness(&mut img, b),
                1 => adjust_contrast(&mut img, c, rgb),
                2 if rgb => adjust_saturation(&mut img, sat),
                3 if rgb => adjust_hue(&mut img, hue),
                _ => {}
            }
        }
    }
    if cfg.grayscale && rgb && rng.random::<f64>() < cfg.grayscale_prob {
        let n = img.plane_len();
        for i in 0..n {
            let g = img.gray(i);
            for ch in 0..3 {
                img.px[ch * n + i] = g;
            }
        }
    }
    Ok(Tensor::new(vec![img.c, img.h, img.w], img.px).expect("consistent image size"))
}

fn crop_box(h: usize, w: usize, cfg: &AugmentationConfig, rng: &mut ChaCha8Rng) -> (usize, usize, usize, usize) {
    let area = (h * w) as f64;
    let [lo, hi] = cfg.crop_scale;
    let (rlo, rhi) = (cfg.crop_ratio[0].ln(), cfg.crop_ratio[1].ln());
    for _ in 0..10 {
        let target = area * rng.random_range(lo..=hi);
        let ratio = rng.random_range(rlo..=rhi).exp();
        let cw = (target * ratio).sqrt().round() as usize;
        let ch = (target / ratio).sqrt().round() as usize;
        if cw > 0 && ch > 0 && cw <= w && ch <= h {
            let top = rng.random_range(0..=h - ch);
            let left = rng.random_range(0..=w - cw);
            return (top, left, ch, cw);
        }
    }
    // center crop, aspect ratio clamped into range
    let in_ratio = w as f64 / h as f64;
    let (ch, cw) = if in_ratio < cfg.crop_ratio[0] {
        let cw = w;
        (((cw as f64) / cfg.crop_ratio[0]).round() as usize, cw)
    } else if in_ratio > cfg.crop_ratio[1] {
        let ch = h;
        (ch, ((ch as f64) * cfg.crop_ratio[1]).round() as usize)
    } else {
        (h, w)
    };
    let (ch, cw) = (ch.clamp(1, h), cw.clamp(1, w));
    ((h - ch) / 2, (w - cw) / 2, ch, cw)
}

fn resize_bilinear(img: &Image, top: usize, left: usize, ch: usize, cw: usize, oh: usize, ow: usize) -> Image {
    let sy = ch as f64 / oh as f64;
    let sx = cw as f64 / ow as f64;
    let mut px = Vec::with_capacity(img.c * oh * ow);
    for c in 0..img.c {
        for y in 0..oh {
            let fy = ((y as f64 + 0.5) * sy - 0.5).max(0.0);
            let y0 = (fy.floor() as usize).min(ch - 1);
            let y1 = (y0 + 1).min(ch - 1);
            let ly = fy - y0 as f64;
            for x in 0..ow {
                let fx = ((x as f64 + 0.5) * sx - 0.5).max(0.0);
                let x0 = (fx.floor() as usize).min(cw - 1);
                let x1 = (x0 + 1).min(cw - 1);
                let lx = fx - x0 as f64;
                let p = |yy: usize, xx: usize| img.at(c, top + yy, left + xx);
                let v = (1.0 - ly) * ((1.0 - lx) * p(y0, x0) + lx * p(y0, x1)) + ly * ((1.0 - lx) * p(y1, x0) + lx * p(y1, x1));
                px.push(v.clamp(0.0, 1.0));
            }
        }
    }
    Image { c: img.c, h: oh, w: ow, px }
}

fn adjust_brightness(img: &mut Image, f: f64) {
    img.px.iter_mut().for_each(|v| *v = (*v * f).clamp(0.0, 1.0));
}

fn adjust_contrast(img: &mut Image, f: f64, rgb: bool) {
    let n = img.plane_len();
    let mean = if rgb {
        (0..n).map(|i| img.gray(i)).sum::<f64>() / n as f64
    } else {
        img.px.iter().sum::<f64>() / img.px.len() as f64
    };
    img.px.iter_mut().for_each(|v| *v = (f * *v + (1.0 - f) * mean).clamp(0.0, 1.0));
}

fn adjust_saturation(img: &mut Image, f: f64) {
    let n = img.plane_len();
    for i in 0..n {
        let g = img.gray(i);
        for ch in 0..3 {
            let v = &mut img.px[ch * n + i];
            *v = (f * *v + (1.0 - f) * g).clamp(0.0, 1.0);
        }
    }
}

fn adjust_hue(img: &mut Image, shift: f64) {
    if shift == 0.0 {
        return;
    }
    let n = img.plane_len();
    for i in 0..n {
        let (r, g, b) = (img.px[i], img.px[n + i], img.px[2 * n + i]);
        let (h, s, v) = rgb_to_hsv(r, g, b);
        let (r, g, b) = hsv_to_rgb((h + shift).rem_euclid(1.0), s, v);
        img.px[i] = r.clamp(0.0, 1.0);
        img.px[n + i] = g.clamp(0.0, 1.0);
        img.px[2 * n + i] = b.clamp(0.0, 1.0);
    }
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match (i as i64).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}
