//! Synthetic small-target and crack images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Sample, Split};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Targets are masked where the blob exceeds this fraction of its peak.
pub const MASK_PEAK_FRACTION: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    Targets,
    Cracks,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub kind: SyntheticKind,
    pub size: usize,
    pub count: usize,
    pub seed: u64,
    /// Mean background level.
    pub background_level: f64,
    /// Standard deviation of the background noise.
    pub noise_std: f64,
    /// Gaussian filter width applied to the white noise, in pixels.
    pub correlation_length: f64,
    /// Peak-to-peak amplitude of a linear intensity ramp.
    pub gradient_amplitude: f64,
    /// Large bright blobs that are not targets.
    pub clutter_count: [usize; 2],
    pub clutter_amplitude: [f64; 2],
    pub targets_per_image: [usize; 2],
    pub target_amplitude: [f64; 2],
    pub psf_sigma: [f64; 2],
    pub cracks_per_image: [usize; 2],
    pub crack_width: [usize; 2],
    pub crack_contrast: [f64; 2],
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            kind: SyntheticKind::Targets,
            size: 64,
            count: 200,
            seed: 0,
            background_level: 0.3,
            noise_std: 0.04,
            correlation_length: 1.5,
            gradient_amplitude: 0.1,
            clutter_count: [0, 2],
            clutter_amplitude: [0.1, 0.25],
            targets_per_image: [1, 2],
            target_amplitude: [0.2, 0.5],
            psf_sigma: [0.5, 1.5],
            cracks_per_image: [1, 3],
            crack_width: [1, 3],
            crack_contrast: [0.15, 0.35],
        }
    }
}

fn check_range<T: PartialOrd + std::fmt::Debug>(name: &str, r: &[T; 2]) -> Result<()> {
    if r[0] > r[1] {
        return Err(Error::param(format!("{name} range {:?} is empty", r)));
    }
    Ok(())
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 8 {
            return Err(Error::param(format!("image size must be at least 8, got {}", self.size)));
        }
        if self.count == 0 {
            return Err(Error::param("count must be at least 1"));
        }
        check_range("clutter_count", &self.clutter_count)?;
        check_range("clutter_amplitude", &self.clutter_amplitude)?;
        check_range("targets_per_image", &self.targets_per_image)?;
        check_range("target_amplitude", &self.target_amplitude)?;
        check_range("psf_sigma", &self.psf_sigma)?;
        check_range("cracks_per_image", &self.cracks_per_image)?;
        check_range("crack_width", &self.crack_width)?;
        check_range("crack_contrast", &self.crack_contrast)?;
        if self.psf_sigma[0] <= 0.0 {
            return Err(Error::param("psf_sigma must be positive"));
        }
        if self.crack_width[0] == 0 {
            return Err(Error::param("crack width must be at least 1"));
        }
        if !(self.noise_std >= 0.0) || !(self.correlation_length >= 0.0) {
            return Err(Error::param("noise parameters must be non-negative"));
        }
        Ok(())
    }

    /// Split of the `index`-th image (60:20:20 by index).
    pub fn split_of(&self, index: usize) -> Split {
        let n_train = (self.count as f64 * 0.6).round() as usize;
        let n_val = (self.count as f64 * 0.2).round() as usize;
        if index < n_train {
            Split::Train
        } else if index < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        }
    }
}

fn uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn uniform_count(rng: &mut impl Rng, r: [usize; 2]) -> usize {
    rng.random_range(r[0]..=r[1])
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with reflected borders.
fn blur(img: &mut [f64], n: usize, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let reflect = |i: isize| -> usize {
        let n = n as isize;
        let mut i = i;
        while i < 0 || i >= n {
            i = if i < 0 { -i - 1 } else { 2 * n - i - 1 };
        }
        i as usize
    };
    let mut tmp = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            tmp[y * n + x] = k
                .iter()
                .enumerate()
                .map(|(t, kv)| kv * img[y * n + reflect(x as isize + t as isize - r)])
                .sum();
        }
    }
    for y in 0..n {
        for x in 0..n {
            img[y * n + x] = k
                .iter()
                .enumerate()
                .map(|(t, kv)| kv * tmp[reflect(y as isize + t as isize - r) * n + x])
                .sum();
        }
    }
}

/// Zero-mean correlated noise with standard deviation `std`.
fn background_noise(rng: &mut impl Rng, n: usize, std: f64, corr: f64) -> Vec<f64> {
    let mut img: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(rng)).collect();
    blur(&mut img, n, corr);
    let mean = img.iter().sum::<f64>() / img.len() as f64;
    let sd = (img.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / img.len() as f64).sqrt();
    let scale = if sd > 0.0 { std / sd } else { 0.0 };
    img.iter_mut().for_each(|v| *v = (*v - mean) * scale);
    img
}

fn add_ramp(rng: &mut impl Rng, img: &mut [f64], n: usize, amplitude: f64) {
    if amplitude == 0.0 {
        return;
    }
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let (c, s) = (theta.cos(), theta.sin());
    let half = (n as f64 - 1.0) / 2.0;
    let norm = half * (c.abs() + s.abs());
    for y in 0..n {
        for x in 0..n {
            let t = ((x as f64 - half) * c + (y as f64 - half) * s) / norm.max(1e-12);
            img[y * n + x] += 0.5 * amplitude * t;
        }
    }
}

fn blob_value(amplitude: f64, sigma: f64, cy: f64, cx: f64, y: usize, x: usize) -> f64 {
    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
    amplitude * (-d2 / (2.0 * sigma * sigma)).exp()
}

fn quantize16(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 65535.0).round() / 65535.0
}

/// A Gaussian target: `(row, col, sigma, amplitude)`.
pub type Target = (f64, f64, f64, f64);

/// Pixels of a target above the mask fraction of its peak.
pub fn target_mask(t: Target, n: usize) -> Vec<usize> {
    let (cy, cx, sigma, amp) = t;
    if amp <= 0.0 {
        return Vec::new();
    }
    let reach = (3.0 * sigma).ceil() as isize + 1;
    let mut out = Vec::new();
    for y in (cy as isize - reach).max(0)..=(cy as isize + reach).min(n as isize - 1) {
        for x in (cx as isize - reach).max(0)..=(cx as isize + reach).min(n as isize - 1) {
            let v = blob_value(amp, sigma, cy, cx, y as usize, x as usize);
            if v > MASK_PEAK_FRACTION * amp {
                out.push(y as usize * n + x as usize);
            }
        }
    }
    out
}

fn synth_targets(cfg: &SyntheticConfig, rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    let n = cfg.size;
    let mut img = background_noise(rng, n, cfg.noise_std, cfg.correlation_length);
    add_ramp(rng, &mut img, n, cfg.gradient_amplitude);
    for _ in 0..uniform_count(rng, cfg.clutter_count) {
        let sigma = rng.random_range(2.5..4.0);
        let (cy, cx) = (rng.random_range(0.0..n as f64), rng.random_range(0.0..n as f64));
        let amp = uniform(rng, cfg.clutter_amplitude);
        for y in 0..n {
            for x in 0..n {
                img[y * n + x] += blob_value(amp, sigma, cy, cx, y, x);
            }
        }
    }
    let mut mask = vec![0.0; n * n];
    let mut placed: Vec<(f64, f64)> = Vec::new();
    let margin = 3.0;
    let min_dist = 8.0;
    for _ in 0..uniform_count(rng, cfg.targets_per_image) {
        let sigma = uniform(rng, cfg.psf_sigma);
        let amp = uniform(rng, cfg.target_amplitude);
        let mut spot = None;
        for _ in 0..100 {
            let cy = rng.random_range(margin..n as f64 - 1.0 - margin);
            let cx = rng.random_range(margin..n as f64 - 1.0 - margin);
            if placed
                .iter()
                .all(|&(py, px)| ((py - cy).powi(2) + (px - cx).powi(2)).sqrt() >= min_dist)
            {
                spot = Some((cy, cx));
                break;
            }
        }
        let Some((cy, cx)) = spot else { continue };
        placed.push((cy, cx));
        for y in 0..n {
            for x in 0..n {
                img[y * n + x] += blob_value(amp, sigma, cy, cx, y, x);
            }
        }
        for i in target_mask((cy, cx, sigma, amp), n) {
            mask[i] = 1.0;
        }
    }
    for v in &mut img {
        *v = quantize16(*v + cfg.background_level);
    }
    (img, mask)
}

fn distance_to_segment(py: f64, px: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dy, dx) = (b.0 - a.0, b.1 - a.1);
    let len2 = dy * dy + dx * dx;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((py - a.0) * dy + (px - a.1) * dx) / len2).clamp(0.0, 1.0)
    };
    ((py - a.0 - t * dy).powi(2) + (px - a.1 - t * dx).powi(2)).sqrt()
}

fn synth_cracks(cfg: &SyntheticConfig, rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    let n = cfg.size;
    let nf = n as f64;
    let mut img = background_noise(rng, n, cfg.noise_std, cfg.correlation_length);
    add_ramp(rng, &mut img, n, cfg.gradient_amplitude);
    let mut mask = vec![0.0; n * n];
    for _ in 0..uniform_count(rng, cfg.cracks_per_image) {
        let width = uniform_count(rng, cfg.crack_width) as f64;
        let contrast = uniform(rng, cfg.crack_contrast);
        let mut p = (rng.random_range(0.0..nf), rng.random_range(0.0..nf));
        let mut heading = rng.random_range(0.0..std::f64::consts::TAU);
        let mut points = vec![p];
        for _ in 0..rng.random_range(4..10) {
            heading += rng.random_range(-0.6..0.6);
            let step = rng.random_range(3.0..8.0);
            p = (p.0 + step * heading.sin(), p.1 + step * heading.cos());
            points.push(p);
        }
        for y in 0..n {
            for x in 0..n {
                let (py, px) = (y as f64, x as f64);
                let d = points
                    .windows(2)
                    .map(|s| distance_to_segment(py, px, s[0], s[1]))
                    .fold(f64::INFINITY, f64::min);
                if d <= width / 2.0 {
                    let i = y * n + x;
                    if mask[i] == 0.0 {
                        img[i] -= contrast;
                    }
                    mask[i] = 1.0;
                }
            }
        }
    }
    for v in &mut img {
        *v = quantize16(*v + cfg.background_level);
    }
    (img, mask)
}

/// Deterministic per-image generator keyed by `(seed, index)`.
pub fn synthesize_one(cfg: &SyntheticConfig, index: usize) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let (img, mask) = match cfg.kind {
        SyntheticKind::Targets => synth_targets(cfg, &mut rng),
        SyntheticKind::Cracks => synth_cracks(cfg, &mut rng),
    };
    let n = cfg.size;
    Ok(Sample {
        name: format!("img_{index:05}"),
        image: Tensor::new([1, 1, n, n], img)?,
        mask: Tensor::new([1, 1, n, n], mask)?,
        split: cfg.split_of(index),
    })
}

/// The whole dataset in memory.
pub fn synthesize(cfg: &SyntheticConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    (0..cfg.count).map(|i| synthesize_one(cfg, i)).collect()
}
